from __future__ import annotations

import random
import urllib.request
from datetime import datetime, timedelta, timezone
from http.cookiejar import Cookie as JarCookie
from http.cookiejar import CookieJar, DefaultCookiePolicy

import pytest

from cream.cookies import AccessContext, ChangelogEntry, Cookie, Priority, SameSite
from cream.harness.world import SimClock
from cream.store import (
    CookieStore,
    CookiesApi,
    DocumentCookie,
    RejectReason,
    SetStatus,
    domain_match,
    path_match,
)

NOW = datetime(2026, 3, 1, 12, 0, tzinfo=timezone.utc)
NET = AccessContext.network()
EXT = AccessContext.extension()
SCRIPT = AccessContext.script()
MSG = b"\x01" * 40


def monitored(**kw) -> Cookie:
    base = dict(name="sid", value="v0", domain="app.example.io", monitored_msg=MSG)
    base.update(kw)
    return Cookie(**base)


def store_with(*cookies, **kw) -> CookieStore:
    store = CookieStore(clock=SimClock(NOW), **kw)
    for c in cookies:
        assert store.set_cookie(c, NET).ok
    return store


# -- access control ----------------------------------------------------------


def test_script_cannot_create_http_only():
    r = store_with().set_cookie(Cookie("a", "1", "x.io", http_only=True), SCRIPT)
    assert r.status is SetStatus.REJECTED and r.reason is RejectReason.HTTP_ONLY
    assert str(r) == "Rejected(RejectedHttpOnly)"


@pytest.mark.parametrize("ctx", [EXT, SCRIPT])
def test_untrusted_cannot_create_browser_only(ctx):
    store = store_with()
    r = store.set_cookie(Cookie("a", "1", "x.io", browser_only=True), ctx)
    assert r.reason is RejectReason.BROWSER_ONLY and len(store) == 0


@pytest.mark.parametrize("ctx", [EXT, SCRIPT])
def test_untrusted_cannot_create_monitored(ctx):
    r = store_with().set_cookie(monitored(), ctx)
    assert r.reason is RejectReason.MONITORED_CREATION


@pytest.mark.parametrize("ctx", [EXT, SCRIPT])
def test_untrusted_cannot_overwrite_browser_only(ctx):
    bo = Cookie("a", "secret", "x.io", browser_only=True)
    store = store_with(bo)
    r = store.set_cookie(Cookie("a", "evil", "x.io"), ctx)
    assert r.reason is RejectReason.BROWSER_ONLY
    assert store.get(bo.key).value == "secret"


def test_script_cannot_overwrite_http_only():
    store = store_with(Cookie("a", "1", "x.io", http_only=True))
    assert store.set_cookie(Cookie("a", "2", "x.io"), SCRIPT).reason is RejectReason.HTTP_ONLY
    assert store.set_cookie(Cookie("a", "2", "x.io"), EXT).status is SetStatus.REPLACED


# -- changelog ---------------------------------------------------------------


def test_insert_then_replace_plain():
    store = store_with()
    assert store.set_cookie(Cookie("a", "1", "x.io"), NET).status is SetStatus.INSERTED
    assert store.set_cookie(Cookie("a", "2", "x.io"), EXT).status is SetStatus.REPLACED


def _oracle_diff(old: Cookie, new: Cookie) -> dict:
    # Independent statement of which settings a change log records.
    def view(c):
        return {
            "N": c.name, "V": c.value, "D": c.domain, "P": c.path,
            "E": "-" if c.expires is None else str(int(c.expires.timestamp() * 1000)),
            "S": str(int(c.secure)), "HO": str(int(c.http_only)),
            "SS": str(c.same_site.value), "BO": str(int(c.browser_only)),
        }
    a, b = view(old), view(new)
    return {k: b[k] for k in a if a[k] != b[k]}


def test_extension_edit_logs_change():
    store = store_with(monitored())
    edit = Cookie("sid", "attacker", "app.example.io", secure=True)
    clock_now = NOW + timedelta(seconds=5)
    r = store.set_cookie(edit, EXT, clock_now)
    assert r.status is SetStatus.REPLACED_WITH_LOG
    stored = store.get(edit.key)
    assert stored.monitored_msg == MSG
    assert [e.at for e in stored.changelog] == [clock_now]
    assert stored.changelog[0].fields() == {"V": "attacker", "S": "1"}
    assert stored.changelog[0].fields() == _oracle_diff(monitored(), edit)


def test_random_edits_match_diff_oracle():
    rng = random.Random(3)
    for _ in range(300):
        old = monitored(secure=rng.random() < 0.5, same_site=rng.choice(list(SameSite)))
        expires = rng.choice([None, NOW + timedelta(days=rng.randint(1, 99))])
        new = Cookie(
            "sid", rng.choice(["v0", "v1", "zz"]), "app.example.io",
            expires=expires, secure=rng.random() < 0.5, http_only=rng.random() < 0.5,
            same_site=rng.choice(list(SameSite)),
        )
        store = store_with(old)
        r = store.set_cookie(new, EXT)
        expected = _oracle_diff(old, new)
        log = store.get(new.key).changelog
        if expected:
            assert r.status is SetStatus.REPLACED_WITH_LOG and log[-1].fields() == expected
        else:
            assert r.status is SetStatus.REPLACED and log == []


def test_identical_rewrite_logs_nothing():
    store = store_with(monitored())
    assert store.set_cookie(Cookie("sid", "v0", "app.example.io"), EXT).status is SetStatus.REPLACED
    assert store.get(monitored().key).changelog == []


def test_server_refresh_clears_changelog():
    store = store_with(monitored())
    store.set_cookie(Cookie("sid", "x", "app.example.io"), EXT)
    assert store.set_cookie(monitored(value="fresh"), NET).status is SetStatus.REPLACED
    assert store.get(monitored().key).changelog == []


def test_changelog_cap_marks_invalid():
    store = store_with(monitored(), changelog_cap=4)
    for i in range(3):
        store.set_cookie(Cookie("sid", f"e{i}", "app.example.io"), EXT)
    assert not store.get(monitored().key).invalid
    store.set_cookie(Cookie("sid", "e3", "app.example.io"), EXT)
    stored = store.get(monitored().key)
    assert stored.invalid and len(stored.changelog) == 4
    store.set_cookie(Cookie("sid", "e4", "app.example.io"), EXT)
    assert len(store.get(monitored().key).changelog) == 4


def test_extensions_never_see_monitored_data():
    store = store_with(monitored())
    store.set_cookie(Cookie("sid", "x", "app.example.io"), EXT)
    for c in CookiesApi(store).get_all() + CookiesApi(store).get_list("https://app.example.io/"):
        assert c.monitored_msg is None and c.changelog == []


# -- lookup ------------------------------------------------------------------


def _jar_cookie(c: Cookie) -> JarCookie:
    return JarCookie(
        0, c.name, c.value, None, False, c.domain, True, c.domain.startswith("."),
        c.path, True, c.secure, None, False, None, None, {},
    )


LOOKUP_COOKIES = [
    Cookie("root", "1", "example.io"),
    Cookie("app", "2", "app.example.io"),
    Cookie("deep", "3", "x.app.example.io"),
    Cookie("acct", "4", "app.example.io", path="/account"),
    Cookie("acctx", "5", "app.example.io", path="/account/x"),
    Cookie("slash", "6", "app.example.io", path="/api/"),
    Cookie("sec", "7", "app.example.io", secure=True),
    Cookie("other", "8", "other.io"),
]

LOOKUP_URLS = [
    "https://app.example.io/",
    "http://app.example.io/",
    "https://app.example.io/account",
    "https://app.example.io/account/x/y",
    "https://app.example.io/accounts",
    "https://app.example.io/api/v1",
    "https://app.example.io/api",
    "https://x.app.example.io/account",
    "https://example.io/",
    "https://notexample.io/",
]


@pytest.mark.parametrize("url", LOOKUP_URLS)
def test_get_list_matches_cookiejar(url):
    store = store_with(*LOOKUP_COOKIES)
    jar = CookieJar(DefaultCookiePolicy())
    for c in LOOKUP_COOKIES:
        jar.set_cookie(_jar_cookie(c))
    request = urllib.request.Request(url)
    jar.add_cookie_header(request)
    header = request.get_header("Cookie") or ""
    expected = [pair.split("=")[0] for pair in header.split("; ") if pair]
    secure = url.startswith("https")
    got = [c.name for c in store.get_list(url, AccessContext.network(secure))]
    # Both order by longest path; ties keep insertion order in ours.
    assert sorted(got) == sorted(expected)
    assert [len(c.path) for c in store.get_list(url, AccessContext.network(secure))] == sorted(
        (len(c.path) for c in LOOKUP_COOKIES if c.name in got), reverse=True
    )


def test_domain_and_path_match():
    assert domain_match("a.example.io", "example.io")
    assert not domain_match("aexample.io", "example.io")
    assert not domain_match("example.io", "")
    assert path_match("/a/b", "/a") and path_match("/a/b", "/a/")
    assert not path_match("/ab", "/a") and not path_match("/", "/a")


def test_get_list_filters_by_context():
    cookies = [
        Cookie("plain", "1", "x.io"),
        Cookie("ho", "2", "x.io", http_only=True),
        Cookie("bo", "3", "x.io", browser_only=True),
    ]
    store = store_with(*cookies)
    names = lambda ctx: {c.name for c in store.get_list("https://x.io/", ctx)}  # noqa: E731
    assert names(NET) == {"plain", "ho", "bo"}
    assert names(EXT) == {"plain", "ho"}
    assert names(SCRIPT) == {"plain"}
    assert DocumentCookie(store, "https://x.io/").get() == "plain=1"


def test_expiry_with_sim_clock():
    clock = SimClock(NOW)
    store = CookieStore(clock=clock)
    store.set_cookie(Cookie("t", "1", "x.io", expires=NOW + timedelta(seconds=10)), NET)
    store.set_cookie(Cookie("p", "1", "x.io"), NET)
    assert {c.name for c in store.get_all()} == {"t", "p"}
    clock.advance(10)
    assert {c.name for c in store.get_all()} == {"p"}
    assert store.get(("x.io", "/", "t")) is None
    assert {c.name for c in store.entries()} == {"t", "p"}


def _random_store(rng: random.Random) -> CookieStore:
    store = CookieStore(clock=SimClock(NOW))
    for i in range(rng.randint(0, 12)):
        store.set_cookie(Cookie(
            f"c{i}", "v", rng.choice(["a.io", "b.a.io", "c.io"]),
            expires=rng.choice([None, NOW - timedelta(seconds=1), NOW + timedelta(days=1)]),
            http_only=rng.random() < 0.3, browser_only=rng.random() < 0.3,
            monitored_msg=MSG if rng.random() < 0.3 else None,
        ), NET, NOW - timedelta(seconds=5))
    return store


def test_get_all_ext_is_filtered_get_all():
    rng = random.Random(11)
    for _ in range(1000):
        store = _random_store(rng)
        expected = [c.redacted() for c in store.get_all() if not c.browser_only]
        assert store.get_all_ext() == expected


# -- eviction ----------------------------------------------------------------


def test_eviction_removes_exactly_one():
    store = store_with(*[Cookie(f"c{i}", "v", "example.io") for i in range(180)])
    r = store.set_cookie(Cookie("c180", "v", "example.io"), NET)
    assert [c.name for c in r.evicted] == ["c0"] and len(store) == 180


def test_eviction_order_uses_priority():
    store = CookieStore(per_domain_limit=3, clock=SimClock(NOW))
    store.set_cookie(Cookie("hi", "v", "x.io", priority=Priority.HIGH), NET)
    store.set_cookie(Cookie("mid", "v", "x.io"), NET)
    store.set_cookie(Cookie("lo", "v", "x.io", priority=Priority.LOW), NET)
    r = store.set_cookie(Cookie("new", "v", "x.io"), NET)
    assert [c.name for c in r.evicted] == ["lo"]


def test_browser_only_survives_eviction_flood():
    store = store_with(*[Cookie(f"c{i}", "v", "example.io") for i in range(179)])
    bo = Cookie("bo", "s", "app.example.io", browser_only=True)
    store.set_cookie(bo, NET)
    for i in range(100):
        store.set_cookie(Cookie(f"flood{i}", "v", "example.io"), EXT)
    assert store.get(bo.key) is not None and len(store) == 180


def test_eviction_groups_by_registrable_domain():
    store = CookieStore(per_domain_limit=2, clock=SimClock(NOW))
    for host in ("a.x.io", "b.x.io", "c.x.io", "y.io"):
        store.set_cookie(Cookie("n", "v", host), NET)
    assert sorted(d for d, _, _ in store.keys()) == ["b.x.io", "c.x.io", "y.io"]


# -- deletion ----------------------------------------------------------------


def test_delete_cookie():
    store = store_with(
        Cookie("p", "1", "x.io"), Cookie("ho", "1", "x.io", http_only=True),
        Cookie("bo", "1", "x.io", browser_only=True),
    )
    assert not store.delete_cookie(("x.io", "/", "ho"), SCRIPT)
    assert not CookiesApi(store).remove("x.io", "/", "bo")
    assert CookiesApi(store).remove("x.io", "/", "ho")
    assert store.delete_cookie(("x.io", "/", "p"), SCRIPT)
    assert not store.delete_cookie(("x.io", "/", "missing"), NET)
    assert store.delete_cookie(("x.io", "/", "bo"), NET)
    assert len(store) == 0


# -- api wrappers ------------------------------------------------------------


def test_cookies_api_string_and_default_domain():
    store = store_with()
    api = CookiesApi(store)
    assert api.set("https://x.io/", "a=1").status is SetStatus.INSERTED
    assert store.get(("x.io", "/", "a")).value == "1"
    assert api.set("https://x.io/", "=broken") is None
    assert api.set("https://x.io/", "b=1; BrowserOnly").reason is RejectReason.BROWSER_ONLY


def test_document_cookie_set():
    store = store_with()
    doc = DocumentCookie(store, "https://x.io/")
    assert doc.set("a=1").ok
    assert doc.set("b=1; HttpOnly").reason is RejectReason.HTTP_ONLY
    assert doc.set("junk") is None
    assert doc.get() == "a=1"


# -- persistence -------------------------------------------------------------


def test_snapshot_round_trip():
    store = store_with(
        monitored(expires=NOW + timedelta(days=1)),
        Cookie("bo", "1", "x.io", browser_only=True, priority=Priority.HIGH),
        Cookie("p", "1", "x.io", same_site=SameSite.STRICT),
    )
    store.set_cookie(Cookie("sid", "edited", "app.example.io"), EXT, NOW + timedelta(seconds=3))
    restored = CookieStore.from_snapshot(store.to_snapshot(), clock=store.clock)
    assert restored.entries() == store.entries()
    assert restored.to_snapshot() == store.to_snapshot()


def test_snapshot_rejects_unknown_format():
    with pytest.raises(ValueError):
        CookieStore.from_snapshot({"format": 99, "cookies": []})


def test_store_grows_by_at_most_one():
    rng = random.Random(5)
    store = CookieStore(per_domain_limit=20, clock=SimClock(NOW))
    for _ in range(2000):
        before = len(store)
        ctx = rng.choice([NET, EXT, SCRIPT])
        cookie = Cookie(
            f"n{rng.randint(0, 40)}", "v", rng.choice(["a.io", "b.a.io"]),
            browser_only=ctx is NET and rng.random() < 0.1,
        )
        store.set_cookie(cookie, ctx)
        assert len(store) - before <= 1


def test_invalid_limits():
    with pytest.raises(ValueError):
        CookieStore(per_domain_limit=0)
    with pytest.raises(ValueError):
        ChangelogEntry("no-separator", NOW)
