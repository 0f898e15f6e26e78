from __future__ import annotations

import base64
import itertools
import random
import string
from datetime import datetime, timedelta, timezone
from http.cookies import SimpleCookie

import pytest
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from hypothesis import given, settings
from hypothesis import strategies as st

from cream.cookies import (
    AccessContext,
    Actor,
    AttributeTooLarge,
    Cookie,
    MalformedHeader,
    Priority,
    SameSite,
    b64url_decode,
    b64url_encode,
    build_cookie_header,
    parse_cookie_header,
    parse_set_cookie,
    serialize_set_cookie,
    wire_view,
)
from cream.server import MonitoredMessage, ServerSecret, seal_message

NOW = datetime(2026, 3, 1, 12, 0, tzinfo=timezone.utc)


def test_parse_browser_only_secure():
    c = parse_set_cookie("sid=abc; Secure; BrowserOnly")
    assert (c.name, c.value, c.secure, c.browser_only) == ("sid", "abc", True, True)
    assert not c.http_only and c.monitored_msg is None


def test_parse_defaults():
    c = parse_set_cookie("a=1")
    assert (c.name, c.value, c.path) == ("a", "1", "/")
    assert not (c.secure or c.http_only or c.browser_only or c.monitored)
    assert c.same_site is SameSite.NONE and c.expires is None and c.changelog == []


def test_attribute_names_are_case_insensitive():
    c = parse_set_cookie("a=1; browseronly; SECURE; httponly; samesite=strict; PRIORITY=high")
    assert c.browser_only and c.secure and c.http_only
    assert c.same_site is SameSite.STRICT and c.priority is Priority.HIGH


def test_unknown_attributes_ignored():
    c = parse_set_cookie("a=1; Partitioned; Foo=bar; SameSite=Sideways")
    assert c.same_site is SameSite.NONE and c.value == "1"


def test_monitored_message_of_reference_pair():
    # 37-character name-value pair with a 32-byte key, encrypted with AES-GCM.
    name, value = "session_id", "f3a9c2e8b7d14a6f9e0c2b5d8a1"
    assert len(name + value) == 37
    rng = random.Random(7)
    server_key = rng.randbytes(32)
    secret = ServerSecret(server_key, rng)
    key = bytes(range(32))
    envelope = seal_message(MonitoredMessage(name, value, key, b""), secret)
    c = parse_set_cookie(f"{name}={value}; Monitored={b64url_encode(envelope)}")
    assert c.monitored_msg == envelope

    # Oracle: the reference AEAD over our plaintext layout gives the same size.
    plaintext_len = 1 + 2 + len(name) + 2 + len(value) + 32 + 2
    nonce, body = envelope[:12], envelope[12:]
    plain = AESGCM(server_key).decrypt(nonce, body, b"cream monitored message v1")
    assert len(plain) == plaintext_len
    assert len(envelope) == 12 + plaintext_len + 16 == 104
    # The reference figure is 131 bytes for a CBC construction; we stay within 2x.
    assert 131 / 2 <= len(envelope) <= 131 * 2


@pytest.mark.parametrize(
    "header",
    ["=v", "novalue", "  =x", "a=1; Monitored=!!!", "a=1; Monitored=", "a\x01=b", "a=b\nc"],
)
def test_malformed(header):
    with pytest.raises(MalformedHeader):
        parse_set_cookie(header)


def test_monitored_rejects_non_canonical_base64():
    # "AB" and "AA" differ only in unused trailing bits.
    assert b64url_decode("AA") == b"\x00"
    with pytest.raises(MalformedHeader):
        parse_set_cookie("a=1; Monitored=AB")
    with pytest.raises(MalformedHeader):
        parse_set_cookie("a=1; Monitored=AA==")


def test_attribute_too_large():
    parse_set_cookie("a=1; Path=/" + "p" * 1023)
    with pytest.raises(AttributeTooLarge):
        parse_set_cookie("a=1; Path=/" + "p" * 1024)


def test_max_age_and_expires():
    c = parse_set_cookie("a=1; Max-Age=60", now=NOW)
    assert c.expires == NOW + timedelta(seconds=60)
    c = parse_set_cookie("a=1; Expires=Tue, 31 Mar 2026 12:00:00 GMT")
    assert c.expires == datetime(2026, 3, 31, 12, tzinfo=timezone.utc)
    c = parse_set_cookie("a=1; Max-Age=0", now=NOW)
    assert c.is_expired(NOW)


def test_serialize_browser_only_token():
    text = serialize_set_cookie(Cookie("a", "1", browser_only=True))
    assert text == "a=1; Path=/; BrowserOnly"
    assert len("BrowserOnly") == 11


def test_serialize_attribute_order():
    c = Cookie(
        "a", "1", domain="example.io", path="/x", secure=True, http_only=True,
        expires=datetime(2026, 3, 31, 12, tzinfo=timezone.utc), same_site=SameSite.LAX,
        browser_only=True, monitored_msg=b"\x00\x01",
    )
    assert serialize_set_cookie(c) == (
        "a=1; Domain=example.io; Path=/x; Expires=Tue, 31 Mar 2026 12:00:00 GMT; Secure; "
        "HttpOnly; SameSite=Lax; BrowserOnly; Monitored=AAE"
    )


def test_monitored_attribute_growth_matches_base64_oracle():
    envelope = bytes(range(104))
    plain = serialize_set_cookie(Cookie("a", "1"))
    monitored = serialize_set_cookie(Cookie("a", "1", monitored_msg=envelope))
    encoded = base64.urlsafe_b64encode(envelope).decode().rstrip("=")
    assert len(monitored) - len(plain) == len("; Monitored=") + len(encoded)
    assert len(encoded) == -(-len(envelope) * 4 // 3)


NAME_CHARS = string.ascii_letters + string.digits + "!#$%&'*+-.^_`|~"
VALUE_CHARS = "".join(c for c in string.printable[:94] if c not in ';"\\, ')

cookies = st.builds(
    Cookie,
    name=st.text(NAME_CHARS, min_size=1, max_size=20),
    value=st.text(VALUE_CHARS, max_size=40),
    domain=st.sampled_from(["", "example.io", "app.example.io", "a.b.co.uk"]),
    path=st.sampled_from(["/", "/a", "/a/b", "/x=y"]),
    expires=st.none() | st.integers(0, 4_000_000_000).map(
        lambda s: datetime(1970, 1, 1, tzinfo=timezone.utc) + timedelta(seconds=s)
    ),
    secure=st.booleans(),
    http_only=st.booleans(),
    same_site=st.sampled_from(list(SameSite)),
    browser_only=st.booleans(),
    monitored_msg=st.none() | st.binary(min_size=1, max_size=200),
)


@given(cookies)
@settings(max_examples=500)
def test_round_trip(cookie):
    parsed = parse_set_cookie(serialize_set_cookie(cookie))
    assert wire_view(parsed) == wire_view(cookie)
    assert parsed.changelog == []


def test_build_cookie_header_examples():
    assert build_cookie_header([("a", "1")], [("sid", "s")]) == "sid=s; a=1"
    assert build_cookie_header([], []) == ""
    assert build_cookie_header([("x", "1"), ("y", "2")], [("b", "0")]) == "b=0; x=1; y=2"


def test_front_placement_is_the_only_valid_interleaving():
    ordinary, browser_only = [("x", "1"), ("y", "2")], [("b", "0")]
    labelled = [(p, False) for p in ordinary] + [(p, True) for p in browser_only]
    valid = []
    for perm in itertools.permutations(labelled):
        bo_idx = [i for i, (_, bo) in enumerate(perm) if bo]
        ord_idx = [i for i, (_, bo) in enumerate(perm) if not bo]
        order_kept = [p for p, bo in perm if not bo] == ordinary
        if max(bo_idx) < min(ord_idx) and order_kept:
            valid.append("; ".join(f"{n}={v}" for (n, v), _ in perm))
    assert valid == [build_cookie_header(ordinary, browser_only)]


pairs = st.lists(st.tuples(st.text(NAME_CHARS, min_size=1, max_size=8), st.text(VALUE_CHARS, max_size=8)), max_size=6)


@given(pairs, pairs)
def test_front_placement_property(ordinary, browser_only):
    header = build_cookie_header(ordinary, browser_only)
    parsed = parse_cookie_header(header)
    assert parsed == browser_only + ordinary


def test_parse_cookie_header_examples():
    assert parse_cookie_header("sid=s; a=1") == [("sid", "s"), ("a", "1")]
    assert parse_cookie_header("") == []
    assert parse_cookie_header("a=x=y") == [("a", "x=y")]
    # Oracle: the stdlib cookie parser agrees on the first '=' split.
    assert SimpleCookie("a=x=y")["a"].value == "x=y"
    assert parse_cookie_header("a=1; a=2") == [("a", "1"), ("a", "2")]


def test_parse_cookie_header_rejects_empty_name():
    with pytest.raises(MalformedHeader):
        parse_cookie_header("=x; a=1")


def test_access_context_invariants():
    with pytest.raises(ValueError):
        AccessContext(Actor.EXTENSION, include_browser_only=True)
    with pytest.raises(ValueError):
        AccessContext(Actor.SCRIPT, include_http_only=True)
    assert AccessContext.network().include_browser_only
    assert not AccessContext.extension().include_browser_only


def test_changelog_requires_monitored():
    from cream.cookies import ChangelogEntry

    c = Cookie("a", "1", changelog=[ChangelogEntry("V:2", NOW)])
    with pytest.raises(MalformedHeader):
        c.validate()


@given(st.binary(max_size=64))
def test_b64url_round_trip(data):
    assert b64url_decode(b64url_encode(data)) == data
