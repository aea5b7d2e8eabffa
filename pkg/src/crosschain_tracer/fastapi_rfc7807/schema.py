"""Pydantic model of the problem document, used to document error responses in the OpenAPI schema."""

from typing import Any

from pydantic import BaseModel, ConfigDict


class Problem(BaseModel):
    model_config = ConfigDict(extra="allow")

    type: str
    title: str
    status: int | None = None
    detail: str | None = None
    instance: str | None = None


PROBLEM_RESPONSES: dict[int | str, dict[str, Any]] = {
    status: {"model": Problem, "content": {"application/problem+json": {}}, "description": description}
    for status, description in ((400, "Invalid input"), (404, "Unknown transfer or price pair"), (504, "Timeout"))
}
