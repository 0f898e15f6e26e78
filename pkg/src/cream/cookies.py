"""Cookie types and the extended ``Set-Cookie`` / ``Cookie`` header grammar.

Besides the RFC 6265 attributes, two extra attributes are understood:

* ``BrowserOnly`` -- a valueless flag; the cookie is visible only to the
  browser's network layer.
* ``Monitored=<base64url>`` -- an opaque, server-encrypted message.  The
  browser keeps a changelog for such cookies and reports it to the server.
"""

from __future__ import annotations

import base64
import binascii
import enum
import re
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from email.utils import format_datetime
from http.cookiejar import http2time
from typing import Iterable, Optional, Sequence, Tuple, Union

__all__ = [
    "AccessContext",
    "Actor",
    "AttributeTooLarge",
    "ChangelogEntry",
    "Cookie",
    "CookieError",
    "MalformedHeader",
    "MAX_ATTRIBUTE_BYTES",
    "Priority",
    "SameSite",
    "b64url_decode",
    "b64url_encode",
    "build_cookie_header",
    "decode_fields",
    "encode_fields",
    "from_millis",
    "parse_cookie_header",
    "parse_set_cookie",
    "serialize_set_cookie",
    "to_millis",
]

MAX_ATTRIBUTE_BYTES = 1024
EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)

_CTL = re.compile(r"[\x00-\x08\x0a-\x1f\x7f]")
_BAD_NAME = re.compile(r"[=;\x00-\x1f\x7f]")
_BAD_VALUE = re.compile(r"[;\x00-\x1f\x7f]")
_B64URL = re.compile(r"^[A-Za-z0-9_-]*$")
_MAX_AGE = re.compile(r"^-?[0-9]+$")


class CookieError(ValueError):
    pass


class MalformedHeader(CookieError):
    pass


class AttributeTooLarge(CookieError):
    pass


class SameSite(enum.IntEnum):
    NONE = 0
    LAX = 1
    STRICT = 2


class Priority(enum.IntEnum):
    LOW = 0
    MEDIUM = 1
    HIGH = 2


class Actor(enum.Enum):
    BROWSER_NETWORK = "browser-network"
    SCRIPT = "script"
    EXTENSION = "extension"


def to_millis(when: datetime) -> int:
    delta = when - EPOCH
    return (delta.days * 86400 + delta.seconds) * 1000 + delta.microseconds // 1000


def from_millis(ms: int) -> datetime:
    return EPOCH + timedelta(milliseconds=ms)


def b64url_encode(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).rstrip(b"=").decode("ascii")


def b64url_decode(text: str) -> bytes:
    """Strict unpadded base64url decoding.

    Non-canonical encodings (stray padding, unused trailing bits set) are
    rejected so that every accepted string maps to exactly one byte string.
    """
    if not _B64URL.match(text) or len(text) % 4 == 1:
        raise ValueError("not unpadded base64url")
    try:
        data = base64.urlsafe_b64decode(text + "=" * (-len(text) % 4))
    except binascii.Error as exc:
        raise ValueError(str(exc)) from None
    if b64url_encode(data) != text:
        raise ValueError("non-canonical base64url")
    return data


def encode_fields(pairs: Iterable[Tuple[str, str]]) -> str:
    """Render ``code:value`` pairs joined by ``;``."""
    return ";".join(f"{code}:{value}" for code, value in pairs)


def decode_fields(text: str) -> dict:
    """Inverse of :func:`encode_fields`; raises ValueError on junk."""
    if not text:
        raise ValueError("empty field string")
    out = {}
    for part in text.split(";"):
        code, sep, value = part.partition(":")
        if not sep or not code:
            raise ValueError(f"bad field {part!r}")
        out[code] = value
    return out


@dataclass(frozen=True)
class ChangelogEntry:
    changed_fields: str
    at: datetime

    def __post_init__(self):
        decode_fields(self.changed_fields)

    def fields(self) -> dict:
        return decode_fields(self.changed_fields)


@dataclass
class Cookie:
    name: str
    value: str
    domain: str = ""
    path: str = "/"
    expires: Optional[datetime] = None
    secure: bool = False
    http_only: bool = False
    same_site: SameSite = SameSite.NONE
    partition_key: Optional[str] = None
    priority: Priority = Priority.MEDIUM
    browser_only: bool = False
    monitored_msg: Optional[bytes] = None
    changelog: list = field(default_factory=list)
    invalid: bool = False

    @property
    def key(self) -> Tuple[str, str, str]:
        return (self.domain, self.path, self.name)

    @property
    def monitored(self) -> bool:
        return self.monitored_msg is not None

    def is_expired(self, now: datetime) -> bool:
        return self.expires is not None and self.expires <= now

    def validate(self) -> None:
        if not self.name or _BAD_NAME.search(self.name) or self.name != self.name.strip():
            raise MalformedHeader(f"illegal cookie name {self.name!r}")
        if _BAD_VALUE.search(self.value) or self.value != self.value.strip():
            raise MalformedHeader(f"illegal cookie value {self.value!r}")
        if self.domain != self.domain.lower() or _BAD_VALUE.search(self.domain):
            raise MalformedHeader(f"illegal domain {self.domain!r}")
        if not self.path.startswith("/") or _BAD_VALUE.search(self.path):
            raise MalformedHeader(f"illegal path {self.path!r}")
        if self.expires is not None and (
            self.expires.tzinfo is None or self.expires.microsecond
        ):
            raise MalformedHeader("expires must be whole-second UTC")
        if self.changelog and self.monitored_msg is None:
            raise MalformedHeader("changelog on a cookie without Monitored")

    def redacted(self) -> "Cookie":
        """Copy safe to hand to scripts and extensions."""
        return replace(self, monitored_msg=None, changelog=[])


# Fields compared by the Set-Cookie round trip.
WIRE_FIELDS = (
    "name",
    "value",
    "domain",
    "path",
    "expires",
    "secure",
    "http_only",
    "same_site",
    "browser_only",
    "monitored_msg",
)


def wire_view(cookie: Cookie) -> tuple:
    return tuple(getattr(cookie, f) for f in WIRE_FIELDS)


@dataclass(frozen=True)
class AccessContext:
    actor: Actor
    include_http_only: bool = False
    include_browser_only: bool = False
    secure_channel: bool = True

    def __post_init__(self):
        if self.actor is not Actor.BROWSER_NETWORK and self.include_browser_only:
            raise ValueError(f"{self.actor.value} may not include BrowserOnly cookies")
        if self.actor is Actor.SCRIPT and self.include_http_only:
            raise ValueError("scripts may not include HttpOnly cookies")

    @classmethod
    def network(cls, secure_channel: bool = True) -> "AccessContext":
        return cls(Actor.BROWSER_NETWORK, True, True, secure_channel)

    @classmethod
    def script(cls, secure_channel: bool = True) -> "AccessContext":
        return cls(Actor.SCRIPT, False, False, secure_channel)

    @classmethod
    def extension(cls, secure_channel: bool = True) -> "AccessContext":
        return cls(Actor.EXTENSION, True, False, secure_channel)


def _parse_expires(text: str) -> Optional[datetime]:
    secs = http2time(text)
    if secs is None:
        return None
    try:
        return EPOCH + timedelta(seconds=int(secs))
    except OverflowError:
        return None


def parse_set_cookie(header_value: str, now: Optional[datetime] = None) -> Cookie:
    """Parse one ``Set-Cookie`` value into a :class:`Cookie`.

    ``now`` anchors ``Max-Age``; it defaults to the current time.
    Unknown attributes are ignored.
    """
    if _CTL.search(header_value):
        raise MalformedHeader("control character in Set-Cookie")
    pair, *attrs = header_value.split(";")
    name, sep, value = pair.partition("=")
    name, value = name.strip(" \t"), value.strip(" \t")
    if not sep or not name:
        raise MalformedHeader("empty cookie name")
    cookie = Cookie(name=name, value=value)
    max_age = None

    for attr in attrs:
        key, _, val = attr.partition("=")
        key, val = key.strip(" \t").lower(), val.strip(" \t")
        if len(val.encode("utf-8")) > MAX_ATTRIBUTE_BYTES:
            raise AttributeTooLarge(f"{key} attribute exceeds {MAX_ATTRIBUTE_BYTES} bytes")
        if key == "domain":
            if val.lstrip("."):
                cookie.domain = val.lstrip(".").lower()
        elif key == "path":
            if val.startswith("/"):
                cookie.path = val
        elif key == "expires":
            parsed = _parse_expires(val)
            if parsed is not None:
                cookie.expires = parsed
        elif key == "max-age":
            if _MAX_AGE.match(val):
                max_age = int(val)
        elif key == "secure":
            cookie.secure = True
        elif key == "httponly":
            cookie.http_only = True
        elif key == "samesite":
            mode = val.lower()
            if mode in ("none", "lax", "strict"):
                cookie.same_site = SameSite[mode.upper()]
        elif key == "priority":
            level = val.lower()
            if level in ("low", "medium", "high"):
                cookie.priority = Priority[level.upper()]
        elif key == "browseronly":
            cookie.browser_only = True
        elif key == "monitored":
            try:
                msg = b64url_decode(val)
            except ValueError as exc:
                raise MalformedHeader(f"undecodable Monitored attribute: {exc}") from None
            if not msg:
                raise MalformedHeader("empty Monitored attribute")
            cookie.monitored_msg = msg

    if max_age is not None:
        if now is None:
            now = datetime.now(timezone.utc)
        now = now.replace(microsecond=0)
        cookie.expires = EPOCH if max_age <= 0 else now + timedelta(seconds=max_age)

    cookie.validate()
    return cookie


def serialize_set_cookie(cookie: Cookie) -> str:
    parts = [f"{cookie.name}={cookie.value}"]
    if cookie.domain:
        parts.append(f"Domain={cookie.domain}")
    parts.append(f"Path={cookie.path}")
    if cookie.expires is not None:
        parts.append(f"Expires={format_datetime(cookie.expires, usegmt=True)}")
    if cookie.secure:
        parts.append("Secure")
    if cookie.http_only:
        parts.append("HttpOnly")
    if cookie.same_site is not SameSite.NONE:
        parts.append(f"SameSite={cookie.same_site.name.capitalize()}")
    if cookie.browser_only:
        parts.append("BrowserOnly")
    if cookie.monitored_msg is not None:
        parts.append(f"Monitored={b64url_encode(cookie.monitored_msg)}")
    return "; ".join(parts)


Pair = Union[Cookie, Tuple[str, str]]


def _pair(item: Pair) -> Tuple[str, str]:
    if isinstance(item, Cookie):
        return item.name, item.value
    return item


def build_cookie_header(ordinary: Sequence[Pair], browser_only: Sequence[Pair]) -> str:
    """Join cookies into a ``Cookie`` header, BrowserOnly pairs first.

    Servers take the first occurrence of a duplicated name, so putting the
    browser's own BrowserOnly pairs in front defeats shadowing by pairs an
    extension injected into the header.
    """
    pairs = [_pair(c) for c in browser_only] + [_pair(c) for c in ordinary]
    return "; ".join(f"{n}={v}" for n, v in pairs)


def parse_cookie_header(header_value: str) -> list:
    pairs = []
    for chunk in header_value.split(";"):
        chunk = chunk.strip(" \t")
        if not chunk:
            continue
        name, sep, value = chunk.partition("=")
        name = name.strip(" \t")
        if not sep or not name:
            raise MalformedHeader(f"cookie pair without a name: {chunk!r}")
        pairs.append((name, value.strip(" \t")))
    return pairs
