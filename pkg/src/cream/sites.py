"""Site computation: scheme plus registrable domain (eTLD+1)."""

from __future__ import annotations

import ipaddress
from functools import lru_cache
from urllib.parse import urlsplit

from publicsuffixlist import PublicSuffixList

__all__ = ["UnresolvableHost", "host_of", "is_public_suffix", "registrable_domain", "site_of"]

_psl = PublicSuffixList()


class UnresolvableHost(ValueError):
    pass


def host_of(url: str) -> str:
    host = urlsplit(url).hostname
    if not host:
        raise UnresolvableHost(f"no host in {url!r}")
    return host.rstrip(".").lower()


def _is_ip(host: str) -> bool:
    try:
        ipaddress.ip_address(host.strip("[]"))
    except ValueError:
        return False
    return True


@lru_cache(maxsize=4096)
def registrable_domain(host: str) -> str:
    """eTLD+1 of ``host``; IP literals and bare suffixes come back unchanged."""
    host = host.rstrip(".").lower()
    if not host:
        raise UnresolvableHost("empty host")
    if _is_ip(host):
        return host
    return _psl.privatesuffix(host) or host


def is_public_suffix(domain: str) -> bool:
    return bool(domain) and not _is_ip(domain) and _psl.is_public(domain)


def site_of(url: str) -> str:
    parts = urlsplit(url)
    if not parts.scheme:
        raise UnresolvableHost(f"no scheme in {url!r}")
    return f"{parts.scheme.lower()}://{registrable_domain(host_of(url))}"
