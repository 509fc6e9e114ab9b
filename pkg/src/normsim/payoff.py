"""Expected one-period utilities and reputation-transition probabilities.

All quantities here are computed for a single user against a fixed census of
opponents.  Under the baseline belief model, an opponent of positive
reputation complies with the social rule with probability 1 - epsilon and
serves no one otherwise, while an opponent of reputation 0 serves no one
with probability 1 - epsilon and complies otherwise.

The profile helpers return vectors/matrices indexed by the user's own
reputation (0..L) and its candidate service threshold (0..L+1); they are the
building blocks of the best-response solver.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .beliefs import BeliefMatrix
from .norms import SocialNorm, ThresholdStrategy


@dataclass(frozen=True)
class Configuration:
    """Community census: counts[rep] users currently hold each reputation."""

    counts: tuple[int, ...]

    def __post_init__(self):
        if any(n < 0 for n in self.counts):
            raise ValueError(f"counts must be nonnegative, got {self.counts}")
        object.__setattr__(self, "counts", tuple(int(n) for n in self.counts))

    @property
    def N(self) -> int:
        return sum(self.counts)

    @property
    def L(self) -> int:
        return len(self.counts) - 1


@dataclass(frozen=True)
class OpponentConfig:
    """Census of everybody except the user under consideration."""

    counts: tuple[int, ...]

    def __post_init__(self):
        if any(n < 0 for n in self.counts):
            raise ValueError(f"counts must be nonnegative, got {self.counts}")
        object.__setattr__(self, "counts", tuple(int(n) for n in self.counts))

    @property
    def total(self) -> int:
        return sum(self.counts)


def opponent_of(mu: Configuration, own_rep: int) -> OpponentConfig:
    """Remove the user itself from the census (a user is never self-matched)."""
    if not 0 <= own_rep <= mu.L:
        raise ValueError(f"reputation {own_rep} outside {{0, ..., {mu.L}}}")
    if mu.counts[own_rep] < 1:
        raise ValueError(
            f"no user of reputation {own_rep} in configuration {mu.counts}"
        )
    counts = list(mu.counts)
    counts[own_rep] -= 1
    return OpponentConfig(counts=tuple(counts))


@lru_cache(maxsize=None)
def _phi_matrix(L: int, h: int) -> np.ndarray:
    """Prescribed contribution phi[server_rep, client_rep]."""
    phi = np.zeros((L + 1, L + 1), dtype=np.int8)
    phi[:h, :] = 1
    phi[h:, h:] = 1
    return phi


@lru_cache(maxsize=None)
def _serve_matrix(L: int) -> np.ndarray:
    """serve[a, client_rep] for threshold actions a = 0..L+1."""
    a = np.arange(L + 2)[:, None]
    rep = np.arange(L + 1)[None, :]
    return (rep >= a).astype(np.int8)


def _counts(norm: SocialNorm, eta: OpponentConfig) -> np.ndarray:
    m = np.asarray(eta.counts, dtype=float)
    if m.shape != (norm.params.L + 1,):
        raise ValueError(
            f"opponent census has {m.shape[0]} buckets, expected {norm.params.L + 1}"
        )
    if eta.total != norm.params.N - 1:
        raise ValueError(
            f"opponent census sums to {eta.total}, expected N-1={norm.params.N - 1}"
        )
    return m


def benefit_profile(
    norm: SocialNorm,
    eta: OpponentConfig,
    *,
    b: float | None = None,
    epsilon: float | None = None,
    beliefs: BeliefMatrix | None = None,
) -> np.ndarray:
    """Expected per-period benefit for each own reputation 0..L.

    With ``beliefs`` given, the probability of being served by an opponent of
    reputation r is the belief-mixture sum of O[r, l] over thresholds l at or
    below the user's own reputation; otherwise the baseline belief applies.
    """
    p = norm.params
    m = _counts(norm, eta)
    b = p.b if b is None else b
    eps = p.epsilon if epsilon is None else epsilon
    if beliefs is not None:
        # serve_prob[r, theta] = P(server of rep r serves a client of rep theta)
        serve_prob = beliefs.rows @ _serve_matrix(p.L).astype(float)
    else:
        phi = _phi_matrix(p.L, norm.h).astype(float)
        comply = np.full(p.L + 1, 1.0 - eps)
        comply[0] = eps  # reputation-0 opponents rarely comply
        serve_prob = comply[:, None] * phi
    return (b / (p.N - 1)) * (m @ serve_prob)


def cost_profile(norm: SocialNorm, eta: OpponentConfig) -> np.ndarray:
    """Expected per-period cost for each own service threshold 0..L+1."""
    p = norm.params
    m = _counts(norm, eta)
    return (p.c / (p.N - 1)) * (_serve_matrix(p.L) @ m)


def reset_profile(
    norm: SocialNorm, eta: OpponentConfig, *, epsilon: float | None = None
) -> np.ndarray:
    """Probability of a reputation reset, indexed [own_rep, action_threshold].

    A randomly matched client's report punishes the server whenever the
    realized contribution disagrees with the social rule and the report is
    correct, or agrees and the report is flipped.
    """
    p = norm.params
    m = _counts(norm, eta)
    eps = p.epsilon if epsilon is None else epsilon
    phi = _phi_matrix(p.L, norm.h)
    serve = _serve_matrix(p.L)
    # mismatch[theta, a] = expected fraction of clients on which action a
    # deviates from the rule prescribed for a server of reputation theta
    mism = (serve[None, :, :] != phi[:, None, :]).astype(float)
    frac = m / (p.N - 1)
    mismatch = mism @ frac
    return eps + (1.0 - 2.0 * eps) * mismatch


def expected_one_period_utility(
    norm: SocialNorm,
    sigma: ThresholdStrategy,
    own_rep: int,
    eta: OpponentConfig,
    *,
    beliefs: BeliefMatrix | None = None,
) -> float:
    """Expected one-period utility: benefit from the matched server minus the
    cost of serving the matched client under strategy ``sigma``."""
    L = norm.params.L
    if not 0 <= own_rep <= L:
        raise ValueError(f"reputation {own_rep} outside {{0, ..., {L}}}")
    if not 0 <= sigma.threshold <= L + 1:
        raise ValueError(f"threshold {sigma.threshold} outside {{0, ..., {L + 1}}}")
    benefit = benefit_profile(norm, eta, beliefs=beliefs)[own_rep]
    cost = cost_profile(norm, eta)[sigma.threshold]
    return float(benefit - cost)


def prob_reset(
    norm: SocialNorm, own_rep: int, eta: OpponentConfig, action: ThresholdStrategy
) -> float:
    """Probability that playing ``action`` resets the user's reputation to 0."""
    L = norm.params.L
    if not 0 <= own_rep <= L:
        raise ValueError(f"reputation {own_rep} outside {{0, ..., {L}}}")
    if not 0 <= action.threshold <= L + 1:
        raise ValueError(f"threshold {action.threshold} outside {{0, ..., {L + 1}}}")
    return float(reset_profile(norm, eta)[own_rep, action.threshold])


def prob_reset_under_belief(
    norm: SocialNorm,
    own_rep: int,
    eta: OpponentConfig,
    action: ThresholdStrategy,
    beliefs: BeliefMatrix,
) -> float:
    """Reset probability when the user holds an explicit belief matrix.

    Beliefs only reshape the benefit expectation; the reset probability
    depends on the user's own action versus the social rule, so it is the
    same as under the baseline belief.  The belief matrix is still validated
    here so malformed beliefs fail fast.
    """
    if not isinstance(beliefs, BeliefMatrix):
        beliefs = BeliefMatrix(rows=np.asarray(beliefs))
    if beliefs.rows.shape != (norm.params.L + 1, norm.params.L + 2):
        raise ValueError(
            f"belief matrix shape {beliefs.rows.shape} does not match L={norm.params.L}"
        )
    return prob_reset(norm, own_rep, eta, action)
