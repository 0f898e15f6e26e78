"""In-memory cookie store with BrowserOnly filtering and Monitored changelogs."""

from __future__ import annotations

import enum
import logging
import threading
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from typing import Callable, List, Optional, Tuple, Union
from urllib.parse import urlsplit

from .cookies import (
    AccessContext,
    Actor,
    ChangelogEntry,
    Cookie,
    CookieError,
    Priority,
    b64url_decode,
    b64url_encode,
    parse_set_cookie,
    serialize_set_cookie,
)
from .monitor import decode_changelog, diff_cookies, encode_changelog
from .sites import host_of, registrable_domain

__all__ = [
    "CookieStore",
    "CookiesApi",
    "DocumentCookie",
    "RejectReason",
    "SNAPSHOT_FORMAT",
    "SetResult",
    "SetStatus",
    "domain_match",
    "path_match",
]

logger = logging.getLogger(__name__)

SNAPSHOT_FORMAT = 1

Key = Tuple[str, str, str]
Clock = Callable[[], datetime]


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


class SetStatus(enum.Enum):
    INSERTED = "Inserted"
    REPLACED = "Replaced"
    REPLACED_WITH_LOG = "ReplacedWithLog"
    REJECTED = "Rejected"


class RejectReason(enum.Enum):
    HTTP_ONLY = "RejectedHttpOnly"
    BROWSER_ONLY = "RejectedBrowserOnly"
    MONITORED_CREATION = "RejectedMonitoredCreation"


@dataclass(frozen=True)
class SetResult:
    status: SetStatus
    reason: Optional[RejectReason] = None
    evicted: Tuple[Cookie, ...] = ()

    @property
    def ok(self) -> bool:
        return self.status is not SetStatus.REJECTED

    @classmethod
    def rejected(cls, reason: RejectReason) -> "SetResult":
        return cls(SetStatus.REJECTED, reason)

    def __str__(self) -> str:
        if self.reason is not None:
            return f"Rejected({self.reason.value})"
        return self.status.value


def domain_match(host: str, domain: str) -> bool:
    return host == domain or (host.endswith("." + domain) and bool(domain))


def path_match(request_path: str, cookie_path: str) -> bool:
    if request_path == cookie_path:
        return True
    if request_path.startswith(cookie_path):
        return cookie_path.endswith("/") or request_path[len(cookie_path)] == "/"
    return False


def _full_copy(cookie: Cookie) -> Cookie:
    return replace(cookie, changelog=list(cookie.changelog))


class CookieStore:
    """Cookie store keyed on (domain, path, name).

    Every public method takes the store lock, so operations are serializable.
    ``clock`` supplies "now" whenever a caller does not pass one.
    """

    def __init__(
        self,
        per_domain_limit: int = 180,
        changelog_cap: int = 64,
        clock: Optional[Clock] = None,
    ):
        if per_domain_limit <= 0 or changelog_cap <= 0:
            raise ValueError("limits must be positive")
        self.per_domain_limit = per_domain_limit
        self.changelog_cap = changelog_cap
        self.clock = clock or _utcnow
        self._cookies: dict = {}
        self._created: dict = {}
        self._groups: dict = {}
        self._seq = 0
        self._lock = threading.RLock()

    def __len__(self) -> int:
        return len(self._cookies)

    def keys(self) -> List[Key]:
        with self._lock:
            return list(self._cookies)

    # -- internal bookkeeping -------------------------------------------

    @staticmethod
    def _group(domain: str) -> str:
        return registrable_domain(domain) if domain else ""

    def _insert(self, cookie: Cookie, created: Optional[int] = None) -> None:
        key = cookie.key
        if created is None:
            self._seq += 1
            created = self._seq
        self._cookies[key] = cookie
        self._created[key] = created
        self._groups.setdefault(self._group(cookie.domain), {})[key] = None

    def _remove(self, key: Key) -> Cookie:
        cookie = self._cookies.pop(key)
        del self._created[key]
        group = self._groups[self._group(cookie.domain)]
        del group[key]
        return cookie

    def _evictable(self, cookie: Cookie) -> bool:
        return not cookie.browser_only

    # -- operations --------------------------------------------------------

    def set_cookie(
        self, new_cookie: Cookie, ctx: AccessContext, now: Optional[datetime] = None
    ) -> SetResult:
        now = now or self.clock()
        actor = ctx.actor
        untrusted = actor is not Actor.BROWSER_NETWORK
        if actor is Actor.SCRIPT and new_cookie.http_only:
            return SetResult.rejected(RejectReason.HTTP_ONLY)
        if untrusted and new_cookie.browser_only:
            return SetResult.rejected(RejectReason.BROWSER_ONLY)
        if untrusted and new_cookie.monitored_msg is not None:
            return SetResult.rejected(RejectReason.MONITORED_CREATION)

        with self._lock:
            key = new_cookie.key
            match = self._cookies.get(key)
            if match is not None and match.is_expired(now):
                self._remove(key)
                match = None
            if match is not None:
                if untrusted and match.browser_only:
                    return SetResult.rejected(RejectReason.BROWSER_ONLY)
                if actor is Actor.SCRIPT and match.http_only:
                    return SetResult.rejected(RejectReason.HTTP_ONLY)

            stored = replace(new_cookie, changelog=[], invalid=False)
            if match is None:
                self._insert(stored)
                evicted = self.evict_if_needed(stored.domain, now)
                return SetResult(SetStatus.INSERTED, evicted=tuple(evicted))

            status = SetStatus.REPLACED
            if match.monitored and stored.monitored_msg is None:
                # Carry the message and log over; the old cookie is discarded,
                # so its list is moved rather than copied.
                stored.monitored_msg = match.monitored_msg
                stored.changelog = match.changelog
                stored.invalid = match.invalid
                change = diff_cookies(match, stored)
                if change is not None:
                    status = SetStatus.REPLACED_WITH_LOG
                    if not stored.invalid:
                        stored.changelog.append(ChangelogEntry(change, now))
                    if len(stored.changelog) >= self.changelog_cap:
                        stored.invalid = True
            self._cookies[key] = stored
            return SetResult(status)

    def _visible(self, host: str, path: str, ctx: AccessContext, now: datetime):
        for key, cookie in self._cookies.items():
            if not domain_match(host, cookie.domain) or not path_match(path, cookie.path):
                continue
            if cookie.is_expired(now):
                continue
            if cookie.http_only and not ctx.include_http_only:
                continue
            if cookie.browser_only and not ctx.include_browser_only:
                continue
            if cookie.secure and not ctx.secure_channel:
                continue
            yield key, cookie

    def get_list(
        self, url: str, ctx: AccessContext, now: Optional[datetime] = None
    ) -> List[Cookie]:
        """Cookies that would be sent to ``url``, filtered for ``ctx``.

        Ordered longest path first, then by creation.  Copies handed to
        scripts and extensions carry no Monitored message or changelog.
        """
        now = now or self.clock()
        host = host_of(url)
        path = urlsplit(url).path or "/"
        with self._lock:
            found = sorted(
                self._visible(host, path, ctx, now),
                key=lambda kv: (-len(kv[1].path), self._created[kv[0]]),
            )
            if ctx.actor is Actor.BROWSER_NETWORK:
                return [_full_copy(c) for _, c in found]
            return [c.redacted() for _, c in found]

    def get(self, key: Key, now: Optional[datetime] = None) -> Optional[Cookie]:
        """Network-internal lookup of one cookie by match key."""
        now = now or self.clock()
        with self._lock:
            cookie = self._cookies.get(key)
            if cookie is None or cookie.is_expired(now):
                return None
            return _full_copy(cookie)

    def get_all(self, now: Optional[datetime] = None) -> List[Cookie]:
        now = now or self.clock()
        with self._lock:
            return [_full_copy(c) for c in self._cookies.values() if not c.is_expired(now)]

    def entries(self) -> List[Cookie]:
        """Every stored cookie in creation order, expired ones included."""
        with self._lock:
            ordered = sorted(self._cookies, key=self._created.__getitem__)
            return [_full_copy(self._cookies[k]) for k in ordered]

    def get_all_ext(self, now: Optional[datetime] = None) -> List[Cookie]:
        """Like :meth:`get_all` minus BrowserOnly cookies and Monitored data."""
        now = now or self.clock()
        with self._lock:
            return [
                c.redacted()
                for c in self._cookies.values()
                if not c.browser_only and not c.is_expired(now)
            ]

    def evict_if_needed(self, domain: str, now: Optional[datetime] = None) -> List[Cookie]:
        """Trim ``domain``'s group back to the limit, never touching BrowserOnly."""
        now = now or self.clock()
        with self._lock:
            group = self._groups.get(self._group(domain), {})
            evicted = []
            if len(group) <= self.per_domain_limit:
                return evicted
            for key in [k for k in group if self._cookies[k].is_expired(now)]:
                self._remove(key)
            while len(group) > self.per_domain_limit:
                candidates = [k for k in group if self._evictable(self._cookies[k])]
                if not candidates:
                    break
                victim = min(
                    candidates,
                    key=lambda k: (self._cookies[k].priority, self._created[k]),
                )
                evicted.append(self._remove(victim))
            if evicted:
                logger.debug("evicted %d cookies for %s", len(evicted), domain)
            return evicted

    def delete_cookie(self, key: Key, ctx: AccessContext) -> bool:
        with self._lock:
            cookie = self._cookies.get(key)
            if cookie is None:
                return False
            if cookie.browser_only and ctx.actor is not Actor.BROWSER_NETWORK:
                return False
            if cookie.http_only and not ctx.include_http_only:
                return False
            self._remove(key)
            return True

    # -- persistence -------------------------------------------------------

    def to_snapshot(self) -> dict:
        with self._lock:
            ordered = sorted(self._cookies, key=self._created.__getitem__)
            entries = []
            for key in ordered:
                cookie = self._cookies[key]
                entries.append({
                    "set_cookie": serialize_set_cookie(cookie),
                    "changelog": b64url_encode(encode_changelog(cookie.changelog)),
                    "invalid": cookie.invalid,
                    "priority": cookie.priority.name,
                    "partition_key": cookie.partition_key,
                })
            return {
                "format": SNAPSHOT_FORMAT,
                "per_domain_limit": self.per_domain_limit,
                "changelog_cap": self.changelog_cap,
                "cookies": entries,
            }

    @classmethod
    def from_snapshot(cls, data: dict, clock: Optional[Clock] = None) -> "CookieStore":
        if data.get("format") != SNAPSHOT_FORMAT:
            raise ValueError(f"unsupported snapshot format {data.get('format')!r}")
        store = cls(data.get("per_domain_limit", 180), data.get("changelog_cap", 64), clock)
        for entry in data["cookies"]:
            cookie = parse_set_cookie(entry["set_cookie"])
            cookie.changelog = list(decode_changelog(b64url_decode(entry["changelog"])))
            cookie.invalid = bool(entry.get("invalid", False))
            cookie.priority = Priority[entry.get("priority", "MEDIUM")]
            cookie.partition_key = entry.get("partition_key")
            cookie.validate()
            store._insert(cookie)
        return store


def _is_secure_url(url: str) -> bool:
    return urlsplit(url).scheme.lower() == "https"


class CookiesApi:
    """The extension-facing cookies API; every call runs as an Extension."""

    def __init__(self, store: CookieStore):
        self.store = store

    def get_all(self) -> List[Cookie]:
        return self.store.get_all_ext()

    def get_list(self, url: str) -> List[Cookie]:
        return self.store.get_list(url, AccessContext.extension(_is_secure_url(url)))

    def set(self, url: str, cookie: Union[Cookie, str]) -> Optional[SetResult]:
        """Set a cookie for ``url``; returns None when the header does not parse."""
        if isinstance(cookie, str):
            try:
                cookie = parse_set_cookie(cookie, self.store.clock())
            except CookieError as exc:
                logger.info("cookies api: unparsable cookie: %s", exc)
                return None
        if not cookie.domain:
            cookie = replace(cookie, domain=host_of(url))
        return self.store.set_cookie(cookie, AccessContext.extension(_is_secure_url(url)))

    def remove(self, domain: str, path: str, name: str) -> bool:
        return self.store.delete_cookie((domain, path, name), AccessContext.extension())


class DocumentCookie:
    """``document.cookie`` for one page, as seen by page and content scripts."""

    def __init__(self, store: CookieStore, page_url: str):
        self.store = store
        self.page_url = page_url
        self._ctx = AccessContext.script(_is_secure_url(page_url))

    def get(self) -> str:
        cookies = self.store.get_list(self.page_url, self._ctx)
        return "; ".join(f"{c.name}={c.value}" for c in cookies)

    def set(self, header_value: str) -> Optional[SetResult]:
        try:
            cookie = parse_set_cookie(header_value, self.store.clock())
        except CookieError:
            return None
        if not cookie.domain:
            cookie = replace(cookie, domain=host_of(self.page_url))
        return self.store.set_cookie(cookie, self._ctx)
