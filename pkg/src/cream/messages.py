"""Simulated HTTP messages exchanged between the pipeline and servers."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from http import HTTPStatus
from typing import Iterable, Optional, Tuple
from urllib.parse import urlsplit
from wsgiref.headers import Headers

__all__ = ["HEADER_KEY", "HEADER_REPORT", "Headers", "HttpMessage", "MessageKind", "copy_headers"]

HEADER_KEY = "CREAM-Key"
HEADER_REPORT = "CREAM-Report"


class MessageKind(enum.Enum):
    REQUEST = "request"
    RESPONSE = "response"


def copy_headers(headers: Headers) -> Headers:
    return Headers(list(headers.items()))


@dataclass
class HttpMessage:
    kind: MessageKind
    url: str
    method: str = "GET"
    status: int = 200
    headers: Headers = field(default_factory=lambda: Headers([]))
    body: bytes = b""

    @classmethod
    def request(
        cls, url: str, headers: Optional[Iterable[Tuple[str, str]]] = None, method: str = "GET"
    ) -> "HttpMessage":
        return cls(MessageKind.REQUEST, url, method=method, headers=Headers(list(headers or [])))

    @classmethod
    def response(
        cls, url: str, status: int = 200, headers: Optional[Iterable[Tuple[str, str]]] = None
    ) -> "HttpMessage":
        return cls(MessageKind.RESPONSE, url, status=status, headers=Headers(list(headers or [])))

    @property
    def is_secure(self) -> bool:
        return urlsplit(self.url).scheme.lower() == "https"

    def copy(self) -> "HttpMessage":
        return HttpMessage(
            self.kind, self.url, self.method, self.status, copy_headers(self.headers), self.body
        )

    def to_wire(self) -> str:
        """HTTP/1.1 text rendering, CRLF line endings."""
        parts = urlsplit(self.url)
        if self.kind is MessageKind.REQUEST:
            target = parts.path or "/"
            if parts.query:
                target += "?" + parts.query
            lines = [f"{self.method} {target} HTTP/1.1", f"Host: {parts.netloc}"]
        else:
            lines = [f"HTTP/1.1 {self.status} {HTTPStatus(self.status).phrase}"]
        lines.extend(f"{name}: {value}" for name, value in self.headers.items())
        head = "\r\n".join(lines) + "\r\n\r\n"
        return head + self.body.decode("latin-1")
