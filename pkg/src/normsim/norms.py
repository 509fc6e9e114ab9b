"""Protocol primitives: threshold strategies, the social rule and the reputation scheme.

A community protocol is a pair (social rule, reputation scheme) parameterized
by a social threshold ``h`` that splits reputations into "bad" (below ``h``)
and "good" (at or above ``h``).  Everything in this module is an immutable
value object or a pure function and can be shared freely across workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    """Raised for invalid protocol parameters or malformed config documents."""


@dataclass(frozen=True)
class CommunityParams:
    """Exogenous community characteristics.

    N       population size (>= 2)
    L       highest reputation (>= 1); reputations live in {0, ..., L}
    b       per-service benefit to the client (> c)
    c       per-service cost to the server (> 0)
    delta   discount factor in [0, 1)
    epsilon probability that a client's report is flipped, in [0, 0.5)
    gamma   per-period probability that a user recomputes its best response
    """

    N: int
    L: int
    b: float
    c: float
    delta: float
    epsilon: float = 0.0
    gamma: float = 1.0

    def __post_init__(self):
        if self.N < 2:
            raise ConfigError(f"N must be >= 2, got {self.N}")
        if self.L < 1:
            raise ConfigError(f"L must be >= 1, got {self.L}")
        if not self.c > 0:
            raise ConfigError(f"c must be > 0, got {self.c}")
        if not self.b > self.c:
            raise ConfigError(f"b must exceed c, got b={self.b}, c={self.c}")
        if not 0.0 <= self.delta < 1.0:
            raise ConfigError(f"delta must be in [0, 1), got {self.delta}")
        if not 0.0 <= self.epsilon < 0.5:
            raise ConfigError(f"epsilon must be in [0, 0.5), got {self.epsilon}")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"gamma must be in (0, 1], got {self.gamma}")


@dataclass(frozen=True)
class SocialNorm:
    """A social rule plus reputation scheme with social threshold ``h``.

    h = 0 and h = L + 1 are rejected: a rule that treats every reputation
    identically cannot provide differential service and is unenforceable
    among self-interested users.
    """

    params: CommunityParams
    h: int

    def __post_init__(self):
        if not 1 <= self.h <= self.params.L:
            raise ConfigError(
                f"h must be in [1, L={self.params.L}], got {self.h}"
            )

    @property
    def L(self) -> int:
        return self.params.L

    @property
    def defect_threshold(self) -> int:
        """The fully non-cooperative service threshold (serve no one)."""
        return self.params.L + 1

    def compliant_threshold(self, rep: int) -> int:
        """Service threshold the social rule prescribes for a user of ``rep``."""
        self._check_rep(rep)
        return 0 if rep < self.h else self.h

    def _check_rep(self, rep: int) -> None:
        if not 0 <= rep <= self.params.L:
            raise ValueError(
                f"reputation {rep} outside {{0, ..., {self.params.L}}}"
            )


@dataclass(frozen=True)
class ThresholdStrategy:
    """Serve exactly the clients whose reputation is >= ``threshold``.

    threshold = 0 serves everyone; threshold = L + 1 serves no one.
    """

    threshold: int

    def __post_init__(self):
        if self.threshold < 0:
            raise ValueError(f"threshold must be >= 0, got {self.threshold}")


def strategy_serves(strategy: ThresholdStrategy, client_rep: int, L: int) -> int:
    """Contribution level (0 or 1) of ``strategy`` toward a client of ``client_rep``."""
    if not 0 <= client_rep <= L:
        raise ValueError(f"client reputation {client_rep} outside {{0, ..., {L}}}")
    if strategy.threshold > L + 1:
        raise ValueError(
            f"threshold {strategy.threshold} outside {{0, ..., {L + 1}}}"
        )
    return 1 if client_rep >= strategy.threshold else 0


def social_rule(norm: SocialNorm, server_rep: int, client_rep: int) -> int:
    """Contribution level the social rule prescribes for (server, client).

    Bad servers (below h) must serve everyone; good servers must serve
    exactly the good clients.
    """
    norm._check_rep(server_rep)
    norm._check_rep(client_rep)
    if server_rep < norm.h:
        return 1
    return 1 if client_rep >= norm.h else 0


def reputation_update(
    norm: SocialNorm, server_rep: int, client_rep: int, reported_z: int
) -> int:
    """Next reputation of the server given the (possibly flipped) report.

    A report matching the prescribed contribution promotes the server by one
    step (capped at L); any mismatch, in either direction, resets it to 0.
    """
    if reported_z not in (0, 1):
        raise ValueError(f"reported contribution must be 0 or 1, got {reported_z}")
    if reported_z == social_rule(norm, server_rep, client_rep):
        return min(norm.params.L, server_rep + 1)
    return 0


_CONFIG_KEYS = ("N", "L", "b", "c", "delta", "epsilon", "gamma", "h")


def norm_from_dict(doc: dict) -> SocialNorm:
    """Build a SocialNorm from a plain config mapping; unknown keys are an error."""
    unknown = set(doc) - set(_CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    missing = {"N", "L", "b", "c", "delta", "h"} - set(doc)
    if missing:
        raise ConfigError(f"missing config keys: {sorted(missing)}")
    params = CommunityParams(
        N=int(doc["N"]),
        L=int(doc["L"]),
        b=float(doc["b"]),
        c=float(doc["c"]),
        delta=float(doc["delta"]),
        epsilon=float(doc.get("epsilon", 0.0)),
        gamma=float(doc.get("gamma", 1.0)),
    )
    return SocialNorm(params=params, h=int(doc["h"]))


def load_norm(path: str | Path) -> SocialNorm:
    """Load a SocialNorm from a JSON document on disk."""
    with open(path) as f:
        doc = json.load(f)
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    return norm_from_dict(doc)
