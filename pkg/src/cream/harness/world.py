"""Deterministic test world: a simulated clock, one origin server, browsers."""

from __future__ import annotations

import random
from datetime import datetime, timedelta, timezone
from typing import Dict, List, Optional, Sequence

from ..cookies import SameSite
from ..messages import HttpMessage
from ..monitor import KeyMap
from ..pipeline import BrowserPipeline, ExtensionHook
from ..server import CookieSpec, Policy, ServerSecret, SiteServer, Verdict
from ..store import CookieStore

ORIGIN = "https://app.example.io"
PLAIN_ORIGIN = "http://app.example.io"
HOST = "app.example.io"
START = datetime(2026, 3, 1, 12, 0, 0, tzinfo=timezone.utc)


class SimClock:
    def __init__(self, start: datetime = START):
        self.now = start

    def __call__(self) -> datetime:
        return self.now

    def advance(self, seconds: float) -> datetime:
        self.now += timedelta(seconds=seconds)
        return self.now


def default_login_cookies(rng: random.Random) -> List[CookieSpec]:
    """Monitored session cookie, a non-Secure Monitored preference cookie
    and a BrowserOnly session cookie."""
    expires = (START + timedelta(days=30)).replace(microsecond=0)
    return [
        CookieSpec(
            "sid",
            rng.randbytes(16).hex(),
            attrs=dict(secure=True, http_only=True, same_site=SameSite.LAX, expires=expires),
        ),
        CookieSpec("pref", "theme-" + rng.randbytes(4).hex(), attrs=dict(same_site=SameSite.LAX)),
        CookieSpec(
            "bo_sid",
            rng.randbytes(16).hex(),
            monitored=False,
            attrs=dict(secure=True, http_only=True, browser_only=True),
        ),
    ]


class World:
    """Everything one scenario run needs, all randomness drawn from ``seed``."""

    def __init__(
        self,
        seed: int = 0,
        login_cookies: Optional[Sequence[CookieSpec]] = None,
        policy: Optional[Policy] = None,
        per_domain_limit: int = 180,
    ):
        self.seed = seed
        self.rng = random.Random(seed)
        self.clock = SimClock()
        self.per_domain_limit = per_domain_limit
        self.secret = ServerSecret.generate(self._child_rng())
        cookies = list(login_cookies) if login_cookies is not None else default_login_cookies(self.rng)
        self.server = SiteServer(self.secret, self.clock, cookies, policy)
        self.notes: List[str] = []
        self.browsers: List[BrowserPipeline] = []

    def _child_rng(self) -> random.Random:
        return random.Random(self.rng.getrandbits(64))

    def note(self, text: str) -> None:
        self.notes.append(text)

    def browser(self, hooks: Sequence[ExtensionHook] = (), passes: int = 1) -> BrowserPipeline:
        store = CookieStore(per_domain_limit=self.per_domain_limit, clock=self.clock)
        browser = BrowserPipeline(store, KeyMap(self._child_rng()), hooks, passes)
        self.browsers.append(browser)
        return browser

    def login(self, browser: BrowserPipeline, origin: str = ORIGIN) -> HttpMessage:
        request = browser.build_request(origin + self.server.login_path)
        response = self.server.handle(request)
        results = browser.process_response(response)
        self.note(f"login {origin}: " + ", ".join(str(r) for r in results))
        return response

    def visit(self, browser: BrowserPipeline, url: str = ORIGIN + "/account") -> HttpMessage:
        self.clock.advance(1)
        return browser.build_request(url)

    def verify(self, request: HttpMessage) -> Dict[str, Verdict]:
        verdicts = self.server.verify(request)
        self.note(
            "verdicts: " + ", ".join(f"{n}={v.status.value}" for n, v in sorted(verdicts.items()))
        )
        return verdicts

    def respond_with(self, browser: BrowserPipeline, url: str, set_cookies: Sequence[str]):
        """Deliver a crafted response, e.g. from an attacker-controlled origin."""
        response = HttpMessage.response(url, headers=[("Set-Cookie", v) for v in set_cookies])
        return browser.process_response(response)
