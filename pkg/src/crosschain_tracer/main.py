import asyncio
import json
import logging
import pkgutil
from collections.abc import AsyncGenerator, Callable
from contextlib import asynccontextmanager, suppress
from decimal import Decimal
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Annotated, Any

import uvicorn
from fastapi import Depends, FastAPI, HTTPException, Query, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.routing import APIRoute
from pydantic import BaseModel, Field

import crosschain_tracer
from crosschain_tracer.constants import API_TITLE, API_VERSION_HEADER
from crosschain_tracer.dataset_io import Dataset
from crosschain_tracer.fastapi_rfc7807 import middleware
from crosschain_tracer.fastapi_rfc7807.schema import PROBLEM_RESPONSES
from crosschain_tracer.group_trace import GroupQuery, trace_group
from crosschain_tracer.limit_middleware.middleware import TimeoutMiddleware
from crosschain_tracer.models import LandingPage, Link, TransferRef
from crosschain_tracer.orchestrator import InvestigationEnv, heuristic_policy, step_loop
from crosschain_tracer.price_oracle import range_over, rate_at
from crosschain_tracer.settings import app_settings
from crosschain_tracer.single_trace import TraceConfig, trace_single

try:
    API_VERSION = version("crosschain_tracer")
except PackageNotFoundError:
    API_VERSION = "0.0.0"

logger: logging.Logger = logging.getLogger(__name__)


class TraceRequest(BaseModel):
    target: str = Field(description="transfer reference as <chain>:<txId>", examples=["ETH:0xabc"])
    config: dict[str, Any] = Field(default_factory=dict, description="trace configuration overrides")


@asynccontextmanager
async def lifespan(app_: FastAPI) -> AsyncGenerator:
    logger.info(f"settings: {app_settings}")
    if app_settings.dataset_dir is not None:
        app_.state.dataset = Dataset(Path(app_settings.dataset_dir))
    else:
        logger.warning("DATASET_DIR is not set, data endpoints will answer 503")
    with suppress(asyncio.CancelledError):  # required for cancellation see runner method
        yield


@asynccontextmanager
async def lifespan_probes(_app: FastAPI) -> AsyncGenerator:
    with suppress(asyncio.CancelledError):  # required for cancellation see runner method
        yield


app_probes: FastAPI = FastAPI(docs_url=None, lifespan=lifespan_probes)

app: FastAPI = FastAPI(title=API_TITLE, version=API_VERSION, lifespan=lifespan, debug=app_settings.debug)
# note: order of adding middleware is required for it to work
middleware.register(app)
app.add_middleware(TimeoutMiddleware, timeout_seconds=app_settings.request_timeout)

if app_settings.cors_allow_origins:
    allow_origins: list[str]
    if app_settings.cors_allow_origins == "*":
        allow_origins = [app_settings.cors_allow_origins]
    else:
        allow_origins = [str(x).rstrip("/") for x in app_settings.cors_allow_origins]
    app.add_middleware(
        CORSMiddleware,
        allow_origins=allow_origins,
        allow_methods=["*"],
        allow_headers=["*"],
    )


@app.middleware("http")
async def add_api_version(request: Request, call_next: Callable) -> Response:
    response_body = {
        "type": "about:blank",
        "title": "Not Found",
        "status": 404,
        "detail": "Not Found",
    }
    response = Response(
        content=json.dumps(response_body),
        status_code=404,
        media_type="application/problem+json",
    )

    if request.url.path != "/" and request.url.path.endswith("/"):
        # overwrite response in case route is a know route with trailing slash
        for route in app.routes:
            if isinstance(route, APIRoute) and request.url.path == f"{route.path}/":
                response_body["detail"] = f"not found, path contains trailing slash try {route.path}"
                response = Response(
                    content=json.dumps(response_body),
                    status_code=404,
                    media_type="application/problem+json",
                )
    else:
        response = await call_next(request)
    response.headers[API_VERSION_HEADER] = API_VERSION
    return response


def get_dataset(request: Request) -> Dataset:
    dataset = getattr(request.app.state, "dataset", None)
    if dataset is None:
        raise HTTPException(status_code=503, detail="no dataset loaded, set DATASET_DIR")
    return dataset


DatasetDep = Annotated[Dataset, Depends(get_dataset)]


@app_probes.get("/liveness")
async def liveness() -> dict:
    return {"status": "ok"}


@app_probes.get("/readiness")
async def readiness() -> dict:
    if getattr(app.state, "dataset", None) is None and app_settings.dataset_dir is not None:
        raise HTTPException(status_code=503, detail="dataset not loaded yet")
    return {"status": "ok"}


@app.get("/", response_model=LandingPage)
async def landingpage() -> LandingPage:
    base = app_settings.base_url.rstrip("/")
    return LandingPage(
        title=API_TITLE,
        description="Forensic tracing tools over a recorded multi-chain dataset",
        links=[
            Link(title="API Landing Page", rel="self", href=f"{base}/", type="application/json"),
            Link(title="Open API Specification", rel="service-desc", href=f"{base}/openapi.json", type="application/openapi+json"),
            Link(title="Chain registry", rel="data", href=f"{base}/chains", type="application/json"),
        ],
    )


@app.get("/chains")
async def chains(dataset: DatasetDep) -> dict:
    return dataset.registry.model_dump(mode="json", by_alias=True)


@app.get("/transfers/{chain}/{tx_id}", responses=PROBLEM_RESPONSES)
def get_transfer(chain: str, tx_id: str, dataset: DatasetDep) -> dict:
    return dataset.store.get_transfer_by_id(chain, tx_id).model_dump(mode="json")


@app.get("/transfers/{chain}/{asset}/search", responses=PROBLEM_RESPONSES)
def search_transfers(  # noqa: PLR0913
    chain: str,
    asset: str,
    dataset: DatasetDep,
    time_lo: Annotated[int, Query(alias="time-lo", ge=0)],
    time_hi: Annotated[int, Query(alias="time-hi", ge=0)],
    amt_lo: Annotated[Decimal, Query(alias="amt-lo", ge=0)] = Decimal(0),
    amt_hi: Annotated[Decimal | None, Query(alias="amt-hi", ge=0)] = None,
) -> list[dict]:
    hi = amt_hi if amt_hi is not None else Decimal("Infinity")
    found = dataset.store.search_transfers(chain, asset, time_lo, time_hi, amt_lo, hi)
    return [t.model_dump(mode="json") for t in found]


@app.get("/prices/{base}/{quote}", responses=PROBLEM_RESPONSES)
def price_at(base: str, quote: str, ts: Annotated[int, Query(ge=0)], dataset: DatasetDep) -> dict:
    return {"base": base, "quote": quote, "ts": ts, "rate": str(rate_at(dataset.oracle.series(base, quote), ts))}


@app.get("/prices/{base}/{quote}/range", responses=PROBLEM_RESPONSES)
def price_range(
    base: str,
    quote: str,
    lo: Annotated[int, Query(ge=0)],
    hi: Annotated[int, Query(ge=0)],
    dataset: DatasetDep,
) -> dict:
    r = range_over(dataset.oracle.series(base, quote), lo, hi)
    return {"base": base, "quote": quote, "lo": lo, "hi": hi, "min": str(r.p_min), "max": str(r.p_max)}


@app.post("/trace/single", responses=PROBLEM_RESPONSES)
def post_trace_single(body: TraceRequest, dataset: DatasetDep) -> dict:
    ref = TransferRef.parse(body.target)
    target = dataset.store.get_transfer_by_id(ref.chain, ref.tx_id)
    result = trace_single(dataset.store, dataset.oracle, target, TraceConfig.from_overrides(body.config))
    return result.to_report()


@app.post("/trace/single/investigation", responses=PROBLEM_RESPONSES)
def post_trace_investigation(body: TraceRequest, dataset: DatasetDep) -> dict:
    env = InvestigationEnv(
        store=dataset.store,
        oracle=dataset.oracle,
        target=TransferRef.parse(body.target),
        config=TraceConfig.from_overrides(body.config),
    )
    return step_loop(heuristic_policy(), env).to_report()


@app.post("/trace/group", responses=PROBLEM_RESPONSES)
def post_trace_group(body: GroupQuery, dataset: DatasetDep) -> dict:
    if "ancestry" not in body.model_fields_set:
        body = body.model_copy(update={"ancestry": dataset.ancestry_options()})
    return trace_group(dataset.store, dataset.oracle, body, max_workers=app_settings.trace_workers).to_report()


def get_logging_config() -> Any:  # noqa: ANN401
    logging_config = uvicorn.config.LOGGING_CONFIG
    logging_config["loggers"]["uvicorn"]["level"] = app_settings.log_level
    logging_config["loggers"]["uvicorn.error"]["level"] = app_settings.log_level
    logging_config["loggers"]["uvicorn.access"]["level"] = app_settings.log_level
    package = crosschain_tracer
    for _importer, modname, _ispkg in pkgutil.walk_packages(
        path=package.__path__, prefix=f"{package.__name__}.", onerror=lambda _: None
    ):
        logging_config["loggers"][modname] = {
            "handlers": ["default"],
            "level": app_settings.log_level,
            "propagate": False,
        }
    return logging_config


async def create_webserver(app_name: str, port: int) -> None:
    server_config = uvicorn.Config(
        app_name,
        port=port,
        host="0.0.0.0",  # noqa: S104
        workers=1,
        log_level=app_settings.log_level.lower(),
        log_config=get_logging_config(),
        access_log=app_settings.access_log,
        loop="uvloop",
        server_header=False,
        date_header=False,
    )
    server = uvicorn.Server(server_config)
    await server.serve()


async def runner() -> None:
    app_name = f"{__name__}:app"
    app_probes_name = f"{__name__}:app_probes"
    _, pending = await asyncio.wait(
        [
            asyncio.create_task(
                create_webserver(app_probes_name, 8001),
                name=app_probes_name,
            ),
            asyncio.create_task(create_webserver(app_name, 8000), name=app_name),
        ],
        return_when=asyncio.FIRST_COMPLETED,
    )
    for pending_task in pending:
        pending_task.cancel()


def main() -> None:
    asyncio.run(runner())


if __name__ == "__main__":
    main()
