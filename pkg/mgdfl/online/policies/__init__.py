"""Policy registry."""

from __future__ import annotations

from mgdfl.errors import ConfigError
from mgdfl.online.policies.fro import FroPolicy
from mgdfl.online.policies.rtro import RtroPolicy
from mgdfl.online.policies.static import StaticPolicy
from mgdfl.online.policy import DispatchPolicy
from mgdfl.online.simulator import RtroConfig

POLICIES = {
    "fro": FroPolicy,
    "rtro": RtroPolicy,
    "static": StaticPolicy,
}


def create_policy(name: str, rtro: RtroConfig | None = None) -> DispatchPolicy:
    """Instantiate a policy by name; only RTRO takes the trigger config."""
    try:
        cls = POLICIES[name]
    except KeyError:
        raise ConfigError(f"unknown policy {name!r}; expected one of {sorted(POLICIES)}") from None
    return cls(rtro) if cls is RtroPolicy else cls()
