"""Request building and response parsing with extension hook points.

Outbound, extensions see the ``Cookie`` header before the BrowserOnly pairs,
the site key and the Monitored report are added.  Inbound, BrowserOnly
``Set-Cookie`` headers are held back while extensions run and put back
afterwards, replacing anything an extension injected for the same cookie.
"""

from __future__ import annotations

import enum
import logging
from collections import Counter
from dataclasses import dataclass, replace
from datetime import datetime
from functools import lru_cache
from typing import Callable, List, Optional, Sequence, Tuple

from .cookies import (
    AccessContext,
    Cookie,
    CookieError,
    build_cookie_header,
    parse_cookie_header,
    parse_set_cookie,
)
from .messages import HEADER_KEY, HEADER_REPORT, Headers, HttpMessage, copy_headers
from .monitor import KeyMap, generate_report
from .sites import host_of, is_public_suffix, registrable_domain, site_of
from .store import CookiesApi, CookieStore, SetResult, domain_match

__all__ = [
    "BrowserPipeline",
    "DnrHook",
    "ExtensionHook",
    "FunctionHook",
    "HeaderRule",
    "HookMode",
    "HookObservation",
    "MAX_HOOK_PASSES",
    "report_site",
]

logger = logging.getLogger(__name__)

MAX_HOOK_PASSES = 3


class HookMode(enum.Enum):
    WEBREQUEST = "webRequest"  # observe only
    BLOCKING = "webRequestBlocking"  # observe and rewrite
    DNR = "declarativeNetRequest"  # rewrite by rule, never observe


class ExtensionHook:
    """Base class for simulated extensions.

    Subclasses override the ``on_*_headers`` methods.  They receive a private
    copy of the headers and may return a replacement or mutate the copy in
    place; only BLOCKING hooks have their edits kept.  ``cookies`` is bound
    to the extension cookies API when the hook is installed.
    """

    mode = HookMode.BLOCKING

    def __init__(self, id: str):
        self.id = id
        self.cookies: Optional[CookiesApi] = None

    def on_request_headers(self, headers: Headers, url: str) -> Optional[Headers]:
        return None

    def on_response_headers(self, headers: Headers, url: str) -> Optional[Headers]:
        return None


HeaderFn = Callable[[Headers, str], Optional[Headers]]


class FunctionHook(ExtensionHook):
    def __init__(
        self,
        id: str,
        on_request: Optional[HeaderFn] = None,
        on_response: Optional[HeaderFn] = None,
        mode: HookMode = HookMode.BLOCKING,
    ):
        super().__init__(id)
        self.mode = mode
        self._on_request = on_request
        self._on_response = on_response

    def on_request_headers(self, headers, url):
        return self._on_request(headers, url) if self._on_request else None

    def on_response_headers(self, headers, url):
        return self._on_response(headers, url) if self._on_response else None


@dataclass(frozen=True)
class HeaderRule:
    operation: str  # "set" | "append" | "remove"
    header: str
    value: str = ""

    def apply(self, headers: Headers) -> None:
        if self.operation == "set":
            headers[self.header] = self.value
        elif self.operation == "append":
            headers.add_header(self.header, self.value)
        elif self.operation == "remove":
            del headers[self.header]
        else:
            raise ValueError(f"unknown header rule operation {self.operation!r}")


class DnrHook(ExtensionHook):
    """Rule-based header rewriting; the extension never sees the headers."""

    mode = HookMode.DNR

    def __init__(
        self,
        id: str,
        request_rules: Sequence[HeaderRule] = (),
        response_rules: Sequence[HeaderRule] = (),
    ):
        super().__init__(id)
        self.request_rules = tuple(request_rules)
        self.response_rules = tuple(response_rules)


@dataclass(frozen=True)
class HookObservation:
    hook_id: str
    stage: str
    pass_no: int
    url: str
    headers: Tuple[Tuple[str, str], ...]


@lru_cache(maxsize=1024)
def report_site(url: str) -> str:
    """Site whose key signs reports for ``url``.

    Keys only ever travel over HTTPS, so the key a server embedded in a
    Monitored message is always the https site's key, even when the cookie
    is later sent over plain HTTP.
    """
    return f"https://{registrable_domain(host_of(url))}"


class BrowserPipeline:
    """One browser's network layer: a store, a key map and extensions."""

    def __init__(
        self,
        store: CookieStore,
        keymap: KeyMap,
        hooks: Sequence[ExtensionHook] = (),
        passes: int = 1,
    ):
        if not 1 <= passes <= MAX_HOOK_PASSES:
            raise ValueError(f"passes must be in 1..{MAX_HOOK_PASSES}")
        self.store = store
        self.keymap = keymap
        self.passes = passes
        self.hooks: List[ExtensionHook] = []
        self.transcript: List[HookObservation] = []
        self.stage_log: List[str] = []
        for hook in hooks:
            self.install(hook)

    def install(self, hook: ExtensionHook) -> ExtensionHook:
        hook.cookies = CookiesApi(self.store)
        self.hooks.append(hook)
        return hook

    def _now(self, now: Optional[datetime]) -> datetime:
        return now or self.store.clock()

    def _run_hooks(self, stage: str, headers: Headers, url: str, passes: int) -> Headers:
        for pass_no in range(1, passes + 1):
            for hook in self.hooks:
                self.transcript.append(
                    HookObservation(hook.id, stage, pass_no, url, tuple(headers.items()))
                )
                view = copy_headers(headers)
                try:
                    if hook.mode is HookMode.DNR:
                        rules = hook.request_rules if stage == "request" else hook.response_rules
                        for rule in rules:
                            rule.apply(view)
                        headers = view
                        continue
                    handler = (
                        hook.on_request_headers if stage == "request" else hook.on_response_headers
                    )
                    result = handler(view, url)
                except Exception:
                    logger.exception("extension %s failed during %s stage", hook.id, stage)
                    continue
                if hook.mode is HookMode.BLOCKING:
                    headers = result if result is not None else view
        return headers

    def build_request(
        self, url: str, now: Optional[datetime] = None, method: str = "GET"
    ) -> HttpMessage:
        now = self._now(now)
        secure = url.lower().startswith("https:")
        stages = self.stage_log = []

        stages.append("fetch")
        cookies = self.store.get_list(url, AccessContext.network(secure), now)

        stages.append("build")
        ordinary = [c for c in cookies if not c.browser_only]
        browser_only = [c for c in cookies if c.browser_only]
        monitored = [c.key for c in browser_only + ordinary if c.monitored]
        headers = Headers([])
        if ordinary:
            headers["Cookie"] = build_cookie_header(ordinary, [])

        for _ in range(self.passes):
            stages.append("hooks")
        headers = self._run_hooks("request", headers, url, self.passes)

        stages.append("prepend")
        self._prepend_browser_only(headers, browser_only)

        stages.append("key")
        del headers[HEADER_KEY]
        if secure:
            headers[HEADER_KEY] = self.keymap.key_for_site(site_of(url)).header_value()

        stages.append("report")
        del headers[HEADER_REPORT]
        report = self.report_header(monitored, url, now)
        if report is not None:
            headers[HEADER_REPORT] = report

        request = HttpMessage.request(url, method=method)
        request.headers = headers
        return request

    def report_header(self, monitored: Sequence[tuple], url: str, now: datetime) -> Optional[str]:
        """Fetch the current state of each Monitored cookie and sign a report."""
        current = []
        for key in monitored:
            cookie = self.store.get(key, now)
            if cookie is None or not cookie.monitored:
                logger.info("monitored cookie %s vanished before report", key)
            elif cookie.invalid:
                logger.info("monitored cookie %s hit its changelog cap", key)
            else:
                current.append(cookie)
        report = generate_report(current, self.keymap.key_for_site(report_site(url)), now)
        return None if report is None else report.header_value()

    @staticmethod
    def _prepend_browser_only(headers: Headers, browser_only: List[Cookie]) -> None:
        existing = "; ".join(headers.get_all("Cookie"))
        if not browser_only:
            return
        try:
            header = build_cookie_header(parse_cookie_header(existing), browser_only)
        except CookieError:
            # Keep whatever junk an extension wrote, behind our pairs.
            header = build_cookie_header([], browser_only) + "; " + existing
        del headers["Cookie"]
        headers["Cookie"] = header

    def _parse_for_commit(
        self, value: str, host: str, now: datetime
    ) -> Optional[Cookie]:
        try:
            cookie = parse_set_cookie(value, now)
        except CookieError as exc:
            logger.warning("skipping malformed Set-Cookie %r: %s", value[:80], exc)
            return None
        if not cookie.domain:
            return replace(cookie, domain=host)
        if cookie.domain != host and (
            not domain_match(host, cookie.domain) or is_public_suffix(cookie.domain)
        ):
            logger.warning("skipping Set-Cookie for foreign domain %s", cookie.domain)
            return None
        return cookie

    def _targets_browser_only(self, cookie: Cookie, now: datetime) -> bool:
        if cookie.browser_only:
            return True
        existing = self.store.get(cookie.key, now)
        return existing is not None and existing.browser_only

    def _hold_browser_only(
        self, headers: Headers, host: str, now: datetime
    ) -> Tuple[Headers, List[Tuple[str, Cookie]]]:
        held = []
        visible = Headers([])
        for name, value in headers.items():
            if name.lower() == "set-cookie":
                parsed = self._parse_for_commit(value, host, now)
                if parsed is not None and parsed.browser_only:
                    held.append((value, parsed))
                    continue
            visible.add_header(name, value)
        return visible, held

    def process_response(
        self, response: HttpMessage, now: Optional[datetime] = None
    ) -> List[SetResult]:
        now = self._now(now)
        url = response.url
        host = host_of(url)
        secure = response.is_secure

        visible, held = self._hold_browser_only(response.headers, host, now)
        after = self._run_hooks("response", visible, url, self.passes)

        # Anything an extension added that touches a BrowserOnly cookie is
        # dropped; held headers are reattached below and win.
        held_keys = {cookie.key for _, cookie in held}
        original = Counter(visible.get_all("Set-Cookie"))
        final = Headers([])
        for name, value in after.items():
            if name.lower() == "set-cookie":
                injected = original[value] <= 0
                original[value] -= 1
                parsed = self._parse_for_commit(value, host, now)
                if parsed is not None and (
                    parsed.key in held_keys
                    or injected and self._targets_browser_only(parsed, now)
                ):
                    logger.warning("dropping extension-injected Set-Cookie for %s", parsed.name)
                    continue
            final.add_header(name, value)
        for value, _ in held:
            final.add_header("Set-Cookie", value)
        response.headers = final

        results = []
        ctx = AccessContext.network(secure)
        for value in final.get_all("Set-Cookie"):
            cookie = self._parse_for_commit(value, host, now)
            if cookie is None:
                continue
            if cookie.secure and not secure:
                logger.warning("ignoring Secure cookie %s set over http", cookie.name)
                continue
            results.append(self.store.set_cookie(cookie, ctx, now))
        return results
