"""Server side: minting Monitored cookies and verifying Monitored requests."""

from __future__ import annotations

import enum
import logging
import random
import secrets
import struct
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Callable, Dict, List, Optional, Sequence, Tuple
from urllib.parse import urlsplit

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .cookies import (
    ChangelogEntry,
    Cookie,
    MalformedHeader,
    b64url_decode,
    decode_fields,
    parse_cookie_header,
    serialize_set_cookie,
)
from .messages import HEADER_KEY, HEADER_REPORT, HttpMessage
from .monitor import (
    KEY_BYTES,
    MalformedReport,
    MonitoredReport,
    SubReport,
    encode_settings,
)
from .sites import host_of

__all__ = [
    "CookieSpec",
    "DecryptionError",
    "FlaggedChange",
    "MissingBrowserKey",
    "MonitoredMessage",
    "NONCE_BYTES",
    "Policy",
    "ServerSecret",
    "SiteServer",
    "Verdict",
    "VerdictStatus",
    "browser_key_from_request",
    "create_monitored_cookie",
    "expected_settings",
    "is_fresh",
    "open_message",
    "seal_message",
    "verify_monitored_request",
]

logger = logging.getLogger(__name__)

NONCE_BYTES = 12
MESSAGE_VERSION = 1
_AAD = b"cream monitored message v1"
_U16 = struct.Struct(">H")


class MissingBrowserKey(ValueError):
    pass


class DecryptionError(ValueError):
    pass


class ServerSecret:
    """The server's AEAD key; deliberately has no serialized form."""

    def __init__(self, key: bytes, rng: Optional[random.Random] = None):
        if len(key) != 32:
            raise ValueError("server secret must be 32 bytes")
        self._aead = AESGCM(key)
        self._rng = rng

    @classmethod
    def generate(cls, rng: Optional[random.Random] = None) -> "ServerSecret":
        key = rng.randbytes(32) if rng is not None else AESGCM.generate_key(bit_length=256)
        return cls(key, rng)

    def nonce(self) -> bytes:
        if self._rng is None:
            return secrets.token_bytes(NONCE_BYTES)
        return self._rng.randbytes(NONCE_BYTES)

    def __repr__(self) -> str:
        return "ServerSecret(<redacted>)"

    def __reduce__(self):
        raise TypeError("ServerSecret is not serializable")


@dataclass(frozen=True)
class MonitoredMessage:
    name: str
    value: str
    browser_key: bytes
    extra: bytes = b""

    def to_bytes(self) -> bytes:
        name, value = self.name.encode("utf-8"), self.value.encode("utf-8")
        return b"".join((
            bytes([MESSAGE_VERSION]),
            _U16.pack(len(name)), name,
            _U16.pack(len(value)), value,
            self.browser_key,
            _U16.pack(len(self.extra)), self.extra,
        ))

    @classmethod
    def from_bytes(cls, data: bytes) -> "MonitoredMessage":
        try:
            if data[0] != MESSAGE_VERSION:
                raise ValueError("version")
            pos = 1
            fields = []
            for width in (None, None, KEY_BYTES, None):
                if width is None:
                    (width,) = _U16.unpack_from(data, pos)
                    pos += 2
                fields.append(data[pos:pos + width])
                if len(fields[-1]) != width:
                    raise ValueError("truncated")
                pos += width
            if pos != len(data):
                raise ValueError("trailing bytes")
            name, value, key, extra = fields
            return cls(name.decode("utf-8"), value.decode("utf-8"), key, extra)
        except (IndexError, struct.error, ValueError) as exc:
            raise DecryptionError(f"bad message plaintext: {exc}") from None


def seal_message(message: MonitoredMessage, secret: ServerSecret) -> bytes:
    """nonce || AES-256-GCM(ciphertext || tag)."""
    nonce = secret.nonce()
    return nonce + secret._aead.encrypt(nonce, message.to_bytes(), _AAD)


def open_message(envelope: bytes, secret: ServerSecret) -> MonitoredMessage:
    if len(envelope) < NONCE_BYTES + 16:
        raise DecryptionError("envelope too short")
    try:
        plain = secret._aead.decrypt(envelope[:NONCE_BYTES], envelope[NONCE_BYTES:], _AAD)
    except InvalidTag:
        raise DecryptionError("authentication failed") from None
    return MonitoredMessage.from_bytes(plain)


def browser_key_from_request(request: HttpMessage) -> bytes:
    value = request.headers.get(HEADER_KEY)
    if value is None:
        raise MissingBrowserKey("request carries no browser key")
    try:
        key = b64url_decode(value.strip())
    except ValueError:
        raise MissingBrowserKey("browser key header is not base64url") from None
    if len(key) != KEY_BYTES:
        raise MissingBrowserKey(f"browser key must be {KEY_BYTES} bytes")
    return key


def expected_settings(name: str, value: str, **attrs) -> bytes:
    """Settings string the browser will report for a cookie minted with ``attrs``.

    ``domain`` must be the effective domain the browser stores, i.e. the
    request host when the cookie has no Domain attribute.
    """
    return encode_settings(Cookie(name, value, **attrs)).encode("utf-8")


def create_monitored_cookie(
    name: str,
    value: str,
    browser_key: Optional[bytes],
    extra: bytes,
    secret: ServerSecret,
    **attrs,
) -> str:
    """Full ``Set-Cookie`` value carrying an encrypted Monitored message.

    ``attrs`` are :class:`Cookie` fields (domain, path, expires, secure, ...).
    """
    if not browser_key:
        raise MissingBrowserKey("cannot mint a Monitored cookie without a browser key")
    if len(browser_key) != KEY_BYTES:
        raise MissingBrowserKey(f"browser key must be {KEY_BYTES} bytes")
    envelope = seal_message(MonitoredMessage(name, value, browser_key, extra), secret)
    cookie = Cookie(name, value, monitored_msg=envelope, **attrs)
    cookie.validate()
    return serialize_set_cookie(cookie)


class VerdictStatus(enum.Enum):
    VALID = "Valid"
    NO_REPORT = "NoReport"
    DECRYPT_FAILED = "DecryptFailed"
    NAME_VALUE_MISMATCH = "NameValueMismatch"
    BAD_HMAC = "BadHmac"
    STALE_TIMESTAMP = "StaleTimestamp"
    POLICY_VIOLATION = "PolicyViolation"


@dataclass(frozen=True)
class FlaggedChange:
    source: str  # "changelog" or "settings"
    fields: Dict[str, str]
    at: Optional[datetime] = None


@dataclass(frozen=True)
class Verdict:
    status: VerdictStatus
    details: str = ""
    flagged_changes: Tuple[FlaggedChange, ...] = ()

    @property
    def valid(self) -> bool:
        return self.status is VerdictStatus.VALID

    def __str__(self) -> str:
        return f"{self.status.value}: {self.details}" if self.details else self.status.value


PolicyCheck = Callable[[SubReport, MonitoredMessage], List[FlaggedChange]]


@dataclass(frozen=True)
class Policy:
    """What the server accepts once a report has authenticated.

    The default check wants an empty changelog and, when the message's
    ``extra`` is non-empty, reported settings equal to it.  With
    ``allow_logged_changes`` the logged changes are applied to the expected
    settings instead of being flagged.  ``check`` replaces the default.
    """

    monitored_names: frozenset = frozenset()
    freshness_window: timedelta = timedelta(seconds=120)
    allow_logged_changes: bool = False
    check: Optional[PolicyCheck] = None

    def evaluate(self, sub: SubReport, message: MonitoredMessage) -> List[FlaggedChange]:
        if self.check is not None:
            return list(self.check(sub, message))
        flagged = []
        if sub.changelog and not self.allow_logged_changes:
            flagged.extend(FlaggedChange("changelog", e.fields(), e.at) for e in sub.changelog)
        if message.extra:
            expected = _fields_or_empty(message.extra)
            if self.allow_logged_changes:
                for entry in sub.changelog:
                    expected.update(entry.fields())
            reported = _fields_or_empty(sub.settings.encode("utf-8"))
            differing = {
                code: reported.get(code, "")
                for code in expected.keys() | reported.keys()
                if expected.get(code) != reported.get(code)
            }
            if differing:
                flagged.append(FlaggedChange("settings", dict(sorted(differing.items()))))
        return flagged


def _fields_or_empty(raw: bytes) -> dict:
    try:
        return decode_fields(raw.decode("utf-8"))
    except (UnicodeDecodeError, ValueError):
        return {}


def _presented_pairs(header: Optional[str]) -> Dict[str, str]:
    """First occurrence of each name; junk pairs are skipped."""
    first: Dict[str, str] = {}
    for chunk in (header or "").split(";"):
        try:
            pairs = parse_cookie_header(chunk)
        except MalformedHeader:
            continue
        for name, value in pairs:
            first.setdefault(name, value)
    return first


def _expected_value(message: MonitoredMessage, changelog: Sequence[ChangelogEntry]) -> str:
    value = message.value
    for entry in changelog:
        value = entry.fields().get("V", value)
    return value


def is_fresh(issued_at: datetime, now: datetime, window: timedelta) -> bool:
    """Reports may be at most ``window`` old, or early by as much (clock skew)."""
    return abs(now - issued_at) <= window


def _verify_one(
    name: str,
    presented: Dict[str, str],
    report: Optional[MonitoredReport],
    report_problem: str,
    secret: ServerSecret,
    policy: Policy,
    now: datetime,
) -> Verdict:
    sub = report.find(name) if report is not None else None
    if sub is None:
        return Verdict(VerdictStatus.NO_REPORT, report_problem or f"no sub-report for {name}")
    try:
        message = open_message(sub.monitored_msg, secret)
    except DecryptionError as exc:
        return Verdict(VerdictStatus.DECRYPT_FAILED, str(exc))
    if message.name != name:
        return Verdict(
            VerdictStatus.NAME_VALUE_MISMATCH, f"message belongs to cookie {message.name!r}"
        )
    if name not in presented:
        return Verdict(VerdictStatus.NAME_VALUE_MISMATCH, "cookie missing from Cookie header")
    if presented[name] != _expected_value(message, sub.changelog):
        return Verdict(VerdictStatus.NAME_VALUE_MISMATCH, "cookie value does not match message")
    if not report.verify(message.browser_key):
        return Verdict(VerdictStatus.BAD_HMAC, "report HMAC does not verify under browser key")
    if not is_fresh(report.issued_at, now, policy.freshness_window):
        age = abs(now - report.issued_at).total_seconds()
        return Verdict(VerdictStatus.STALE_TIMESTAMP, f"report is {age:.0f}s old")
    flagged = policy.evaluate(sub, message)
    if flagged:
        return Verdict(
            VerdictStatus.POLICY_VIOLATION,
            f"{len(flagged)} flagged change(s)",
            tuple(flagged),
        )
    return Verdict(VerdictStatus.VALID)


def verify_monitored_request(
    request: HttpMessage, secret: ServerSecret, policy: Policy, now: datetime
) -> Dict[str, Verdict]:
    """One verdict per Monitored cookie the policy expects or the report names.

    Checks run in a fixed order and the first failure wins: report present,
    message decrypts, name/value match, HMAC, freshness, then policy.
    """
    presented = _presented_pairs(request.headers.get("Cookie"))
    report, problem = None, ""
    header = request.headers.get(HEADER_REPORT)
    if header is None:
        problem = "request carries no report"
    else:
        try:
            report = MonitoredReport.from_header(header)
        except MalformedReport as exc:
            problem = f"unreadable report: {exc}"

    names = sorted(policy.monitored_names)
    if report is not None:
        names += [s.cookie_name for s in report.sub_reports if s.cookie_name not in names]
    verdicts = {}
    for name in names:
        if name not in verdicts:
            verdicts[name] = _verify_one(name, presented, report, problem, secret, policy, now)
    return verdicts


@dataclass
class CookieSpec:
    """A cookie a :class:`SiteServer` hands out at login."""

    name: str
    value: str
    monitored: bool = True
    attrs: dict = field(default_factory=dict)


class SiteServer:
    """Minimal origin server driving the mint and verify halves of the protocol.

    ``POST``/``GET`` to ``login_path`` mints ``login_cookies`` using the
    request's browser key; every other request is verified and answered
    with 200 or 403.  Plain (non-Monitored) cookies are checked by value.
    """

    def __init__(
        self,
        secret: ServerSecret,
        clock: Callable[[], datetime],
        login_cookies: Sequence[CookieSpec] = (),
        policy: Optional[Policy] = None,
        login_path: str = "/login",
    ):
        self.secret = secret
        self.clock = clock
        self.login_cookies = list(login_cookies)
        self.login_path = login_path
        self.policy = policy or Policy(
            frozenset(c.name for c in self.login_cookies if c.monitored)
        )
        self.issued: Dict[str, str] = {}
        self.last_verdicts: Dict[str, Verdict] = {}

    def mint(self, request: HttpMessage, spec: CookieSpec) -> str:
        attrs = dict(spec.attrs)
        stored_domain = attrs.get("domain") or host_of(request.url)
        if not spec.monitored:
            cookie = Cookie(spec.name, spec.value, **attrs)
            return serialize_set_cookie(cookie)
        extra = expected_settings(spec.name, spec.value, **{**attrs, "domain": stored_domain})
        return create_monitored_cookie(
            spec.name, spec.value, browser_key_from_request(request), extra, self.secret, **attrs
        )

    def verify(self, request: HttpMessage) -> Dict[str, Verdict]:
        self.last_verdicts = verify_monitored_request(
            request, self.secret, self.policy, self.clock()
        )
        return self.last_verdicts

    def plain_cookie_ok(self, request: HttpMessage, name: str) -> bool:
        presented = _presented_pairs(request.headers.get("Cookie"))
        return name in self.issued and presented.get(name) == self.issued[name]

    def handle(self, request: HttpMessage) -> HttpMessage:
        if urlsplit(request.url).path == self.login_path:
            response = HttpMessage.response(request.url)
            for spec in self.login_cookies:
                response.headers.add_header("Set-Cookie", self.mint(request, spec))
                self.issued[spec.name] = spec.value
            return response
        verdicts = self.verify(request)
        plain_ok = all(
            self.plain_cookie_ok(request, spec.name)
            for spec in self.login_cookies
            if not spec.monitored
        )
        ok = plain_ok and all(v.valid for v in verdicts.values())
        return HttpMessage.response(request.url, 200 if ok else 403)
