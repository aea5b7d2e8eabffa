import asyncio
import logging
import typing

from fastapi import Request, Response
from starlette.middleware.base import BaseHTTPMiddleware
from starlette.types import ASGIApp

from crosschain_tracer.fastapi_rfc7807.middleware import ProblemError, ProblemResponse

RequestResponseEndpoint = typing.Callable[[Request], typing.Awaitable[Response]]
DispatchFunction = typing.Callable[[Request, RequestResponseEndpoint], typing.Awaitable[Response]]

logger = logging.getLogger(__name__)


class TimeoutMiddleware(BaseHTTPMiddleware):
    #  based on https://github.com/encode/starlette/issues/890#issuecomment-926062125
    def __init__(
        self: "TimeoutMiddleware",
        app: ASGIApp,
        dispatch: DispatchFunction | None = None,
        timeout_seconds: float | None = None,
    ) -> None:
        BaseHTTPMiddleware.__init__(self, app, dispatch=dispatch)
        self.timeout_seconds = timeout_seconds

    async def dispatch(self: "TimeoutMiddleware", request: Request, call_next: RequestResponseEndpoint) -> Response:
        try:
            return await asyncio.wait_for(call_next(request), timeout=self.timeout_seconds)
        except TimeoutError:
            logger.warning(f"{request.method} {request.url.path} exceeded {self.timeout_seconds}s")
            # built here since the rfc7807 middleware sits inside this one
            return ProblemResponse(
                ProblemError(
                    status=504,
                    detail=f"processing the request took longer than {self.timeout_seconds} seconds",
                )
            )
