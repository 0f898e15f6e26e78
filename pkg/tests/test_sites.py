from __future__ import annotations

import pytest

from cream.sites import UnresolvableHost, host_of, is_public_suffix, registrable_domain, site_of


@pytest.mark.parametrize(
    "url, site",
    [
        ("https://accounts.example.com/login", "https://example.com"),
        ("https://example.com", "https://example.com"),
        ("http://a.b.co.uk/x", "http://b.co.uk"),
        ("HTTPS://App.Example.IO:8443/", "https://example.io"),
        ("https://192.0.2.7/", "https://192.0.2.7"),
        ("https://[2001:db8::1]/", "https://2001:db8::1"),
    ],
)
def test_site_of(url, site):
    assert site_of(url) == site


@pytest.mark.parametrize("url", ["app.example.io/x", "https:///nohost"])
def test_unresolvable(url):
    with pytest.raises(UnresolvableHost):
        site_of(url)


def test_host_of_lowercases():
    assert host_of("https://App.Example.IO/a") == "app.example.io"


def test_registrable_domain():
    assert registrable_domain("deep.app.example.io") == "example.io"
    assert registrable_domain("localhost") == "localhost"


@pytest.mark.parametrize(
    "domain, public",
    [("com", True), ("co.uk", True), ("example.com", False), ("b.co.uk", False), ("", False),
     ("192.0.2.7", False)],
)
def test_is_public_suffix(domain, public):
    assert is_public_suffix(domain) is public
