"""Per-site browser keys, settings/changelog encoding and Monitored reports.

Report wire layout (all integers big-endian, every ``field`` is a u16
length followed by that many bytes)::

    u8  version            (= 1)
    u16 sub-report count
    per sub-report:
        field cookie name
        field settings
        u16   changelog entry count
        per entry: field changed-fields, field 13-digit millis
        field Monitored message
    field timestamp        (13-digit decimal Unix millis, so 15 bytes framed)
    32 bytes HMAC-SHA-256 over everything above
"""

from __future__ import annotations

import hashlib
import hmac
import logging
import random
import secrets
import struct
import threading
from dataclasses import dataclass, field
from datetime import datetime
from typing import Iterable, Optional, Sequence, Tuple

from .cookies import (
    ChangelogEntry,
    Cookie,
    b64url_decode,
    b64url_encode,
    decode_fields,
    encode_fields,
    from_millis,
    to_millis,
)

__all__ = [
    "KEY_BYTES",
    "KeyMap",
    "MalformedReport",
    "MissingMonitoredMessage",
    "MonitoredReport",
    "REPORT_VERSION",
    "SETTINGS_CODES",
    "SiteKey",
    "SubReport",
    "apply_fields",
    "decode_changelog",
    "diff_cookies",
    "encode_changelog",
    "encode_settings",
    "generate_report",
    "render_report",
]

logger = logging.getLogger(__name__)

KEY_BYTES = 32
TAG_BYTES = 32
REPORT_VERSION = 1
SETTINGS_CODES = ("N", "V", "D", "P", "E", "S", "HO", "SS", "BO")

_U16 = struct.Struct(">H")
_HEAD = struct.Struct(">BH")
_MILLIS_FIELD = _U16.pack(13)


class MissingMonitoredMessage(ValueError):
    pass


class MalformedReport(ValueError):
    pass


@dataclass(frozen=True)
class SiteKey:
    site: str
    key: bytes
    _mac: object = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.key) != KEY_BYTES:
            raise ValueError(f"site key must be {KEY_BYTES} bytes, got {len(self.key)}")
        # Keyed state computed once; signing copies it.
        object.__setattr__(self, "_mac", hmac.new(self.key, digestmod=hashlib.sha256))

    def sign(self, data: bytes) -> bytes:
        mac = self._mac.copy()
        mac.update(data)
        return mac.digest()

    def header_value(self) -> str:
        return b64url_encode(self.key)


class KeyMap:
    """Site -> key map owned by the network layer.

    Pass a seeded ``random.Random`` for reproducible keys; without one keys
    come from the OS CSPRNG.
    """

    def __init__(self, rng: Optional[random.Random] = None):
        self._rng = rng
        self._keys: dict = {}
        self._lock = threading.Lock()

    def _generate(self) -> bytes:
        if self._rng is None:
            return secrets.token_bytes(KEY_BYTES)
        return self._rng.randbytes(KEY_BYTES)

    def key_for_site(self, site: str) -> SiteKey:
        found = self._keys.get(site)
        if found is not None:
            return found
        with self._lock:
            found = self._keys.get(site)
            if found is None:
                found = self._keys[site] = SiteKey(site, self._generate())
            return found

    def get(self, site: str) -> Optional[SiteKey]:
        return self._keys.get(site)

    def site_keys(self) -> Tuple[SiteKey, ...]:
        return tuple(self._keys.values())

    def __len__(self) -> int:
        return len(self._keys)

    def __contains__(self, site: str) -> bool:
        return site in self._keys


def _settings_pairs(cookie: Cookie) -> list:
    expires = "-" if cookie.expires is None else str(to_millis(cookie.expires))
    return [
        ("N", cookie.name),
        ("V", cookie.value),
        ("D", cookie.domain),
        ("P", cookie.path),
        ("E", expires),
        ("S", "1" if cookie.secure else "0"),
        ("HO", "1" if cookie.http_only else "0"),
        ("SS", str(int(cookie.same_site))),
        ("BO", "1" if cookie.browser_only else "0"),
    ]


def encode_settings(cookie: Cookie) -> str:
    return encode_fields(_settings_pairs(cookie))


def diff_cookies(old: Cookie, new: Cookie) -> Optional[str]:
    """Encoded new values of every settings field that differs, or None."""
    changed = [
        (code, after)
        for (code, before), (_, after) in zip(_settings_pairs(old), _settings_pairs(new))
        if before != after
    ]
    return encode_fields(changed) if changed else None


def apply_fields(settings: str, changes: str) -> str:
    merged = decode_fields(settings)
    merged.update(decode_fields(changes))
    return encode_fields((code, merged[code]) for code in SETTINGS_CODES if code in merged)


def _field(data: bytes) -> bytes:
    if len(data) > 0xFFFF:
        raise ValueError("field longer than 65535 bytes")
    return _U16.pack(len(data)) + data


def _millis_text(ms: int) -> bytes:
    if not 0 <= ms < 10**13:
        raise ValueError(f"timestamp {ms} does not fit 13 digits")
    return b"%013d" % ms


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise MalformedReport("truncated report")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u16(self) -> int:
        return _U16.unpack(self.take(2))[0]

    def field(self) -> bytes:
        return self.take(self.u16())

    def text(self) -> str:
        try:
            return self.field().decode("utf-8")
        except UnicodeDecodeError:
            raise MalformedReport("field is not UTF-8") from None

    def millis(self) -> int:
        raw = self.field()
        if len(raw) != 13 or not raw.isdigit():
            raise MalformedReport(f"bad timestamp {raw!r}")
        return int(raw)


def _write_changelog(entries: Sequence[ChangelogEntry]) -> bytes:
    out = [_U16.pack(len(entries))]
    for entry in entries:
        out.append(_field(entry.changed_fields.encode("utf-8")))
        out.append(_MILLIS_FIELD + _millis_text(to_millis(entry.at)))
    return b"".join(out)


def _read_changelog(reader: _Reader) -> Tuple[ChangelogEntry, ...]:
    entries = []
    for _ in range(reader.u16()):
        changed = reader.text()
        at = reader.millis()
        try:
            entries.append(ChangelogEntry(changed, from_millis(at)))
        except ValueError as exc:
            raise MalformedReport(f"bad changelog entry: {exc}") from None
    return tuple(entries)


def encode_changelog(entries: Sequence[ChangelogEntry]) -> bytes:
    return _write_changelog(entries)


def decode_changelog(data: bytes) -> Tuple[ChangelogEntry, ...]:
    reader = _Reader(data)
    entries = _read_changelog(reader)
    if reader.pos != len(data):
        raise MalformedReport("trailing bytes after changelog")
    return entries


@dataclass(frozen=True)
class SubReport:
    cookie_name: str
    settings: str
    changelog: Tuple[ChangelogEntry, ...]
    monitored_msg: bytes

    def to_bytes(self) -> bytes:
        return b"".join((
            _field(self.cookie_name.encode("utf-8")),
            _field(self.settings.encode("utf-8")),
            _write_changelog(self.changelog),
            _field(self.monitored_msg),
        ))


@dataclass(frozen=True)
class MonitoredReport:
    sub_reports: Tuple[SubReport, ...]
    timestamp: int
    hmac_tag: bytes
    # Signed bytes kept by generate_report; never consulted by verify().
    _signed: Optional[bytes] = field(default=None, init=False, repr=False, compare=False)

    @staticmethod
    def signed_body(sub_reports: Iterable[SubReport], timestamp: int) -> bytes:
        parts = [sub.to_bytes() for sub in sub_reports]
        return b"".join((
            _HEAD.pack(REPORT_VERSION, len(parts)),
            *parts,
            _MILLIS_FIELD,
            _millis_text(timestamp),
        ))

    def body(self) -> bytes:
        return self.signed_body(self.sub_reports, self.timestamp)

    def to_bytes(self) -> bytes:
        return (self._signed or self.body()) + self.hmac_tag

    def header_value(self) -> str:
        return b64url_encode(self.to_bytes())

    def verify(self, key: bytes) -> bool:
        expected = hmac.new(key, self.body(), hashlib.sha256).digest()
        return hmac.compare_digest(expected, self.hmac_tag)

    def find(self, cookie_name: str) -> Optional[SubReport]:
        for sub in self.sub_reports:
            if sub.cookie_name == cookie_name:
                return sub
        return None

    @property
    def issued_at(self) -> datetime:
        return from_millis(self.timestamp)

    @classmethod
    def from_bytes(cls, data: bytes) -> "MonitoredReport":
        reader = _Reader(data)
        version = reader.take(1)[0]
        if version != REPORT_VERSION:
            raise MalformedReport(f"unsupported report version {version}")
        subs = []
        for _ in range(reader.u16()):
            name = reader.text()
            settings = reader.text()
            changelog = _read_changelog(reader)
            msg = reader.field()
            subs.append(SubReport(name, settings, changelog, msg))
        timestamp = reader.millis()
        tag = reader.take(TAG_BYTES)
        if reader.pos != len(data):
            raise MalformedReport("trailing bytes after HMAC")
        return cls(tuple(subs), timestamp, tag)

    @classmethod
    def from_header(cls, value: str) -> "MonitoredReport":
        try:
            raw = b64url_decode(value.strip())
        except ValueError as exc:
            raise MalformedReport(f"report header is not base64url: {exc}") from None
        return cls.from_bytes(raw)


def generate_report(
    cookies: Sequence[Cookie], key: SiteKey, now: datetime
) -> Optional[MonitoredReport]:
    """Build one report covering every Monitored cookie of a request.

    The whole report carries a single HMAC; all cookies of a site share the
    site key so per-cookie tags would add nothing.
    """
    if not cookies:
        return None
    subs = []
    for cookie in cookies:
        if cookie.monitored_msg is None:
            raise MissingMonitoredMessage(f"cookie {cookie.name!r} is not Monitored")
        subs.append(SubReport(
            cookie.name, encode_settings(cookie), tuple(cookie.changelog), cookie.monitored_msg
        ))
    timestamp = to_millis(now)
    body = MonitoredReport.signed_body(subs, timestamp)
    report = MonitoredReport(tuple(subs), timestamp, key.sign(body))
    object.__setattr__(report, "_signed", body)
    return report


def render_report(report: MonitoredReport) -> str:
    lines = [
        f"report v{REPORT_VERSION} ts={report.timestamp} "
        f"({report.issued_at.isoformat()}) hmac={report.hmac_tag.hex()}"
    ]
    for sub in report.sub_reports:
        lines.append(f"  cookie {sub.cookie_name}")
        lines.append(f"    settings  {sub.settings}")
        lines.append(f"    message   {len(sub.monitored_msg)} bytes")
        for entry in sub.changelog:
            lines.append(f"    change    {to_millis(entry.at)} {entry.changed_fields}")
    return "\n".join(lines)
