"""Exact Markov-chain analysis of the community reputation census.

For small communities the census (how many users hold each reputation)
evolves as a finite Markov chain: every period each user plays its best
response against the current census and its reputation either advances or
resets.  This module enumerates the census space, builds the transition
matrix under best-response play, computes stationary and limiting
distributions along a ladder of shrinking error rates, and classifies the
absorbing configurations both analytically and numerically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .bestresponse import solve_policy_batch, solve_value_iteration
from .norms import SocialNorm
from .payoff import Configuration, opponent_of, reset_profile

DEFAULT_SPACE_CAP = 10**5
DEFAULT_EPS_LADDER = (1e-2, 1e-3, 1e-4, 1e-5)
ROW_SUM_TOL = 1e-12


@dataclass(frozen=True)
class ConfigSpace:
    """All reputation censuses of a community, in lexicographic order."""

    N: int
    L: int
    configs: tuple[Configuration, ...]
    index: dict[tuple[int, ...], int] = field(compare=False, repr=False)

    def __len__(self) -> int:
        return len(self.configs)

    def index_of(self, counts) -> int:
        return self.index[tuple(int(n) for n in counts)]

    @property
    def mu0(self) -> int:
        """Index of the all-at-reputation-0 census."""
        return self.index_of((self.N,) + (0,) * self.L)

    @property
    def muN(self) -> int:
        """Index of the all-at-top-reputation census."""
        return self.index_of((0,) * self.L + (self.N,))


@dataclass(frozen=True)
class TransitionMatrix:
    """Row-stochastic one-period transition kernel over a ConfigSpace."""

    epsilon: float
    entries: np.ndarray
    policies: np.ndarray = field(compare=False, repr=False, default=None)  # type: ignore[assignment]

    def __post_init__(self):
        P = np.asarray(self.entries, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ValueError(f"transition matrix must be square, got {P.shape}")
        gap = np.abs(P.sum(axis=1) - 1.0).max()
        if gap > ROW_SUM_TOL:
            raise ValueError(f"rows must sum to 1 within {ROW_SUM_TOL}, off by {gap:.3e}")
        if P.min() < 0:
            raise ValueError("transition probabilities must be nonnegative")
        object.__setattr__(self, "entries", P)


@dataclass(frozen=True)
class StationaryDist:
    """Probability vector over a ConfigSpace fixed by the transition kernel."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.min() < -1e-12:
            raise ValueError("stationary weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"stationary weights must sum to 1, got {w.sum()}")
        object.__setattr__(self, "weights", np.clip(w, 0.0, None) / w.sum())


def _compositions(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def enumerate_configs(N: int, L: int, cap: int = DEFAULT_SPACE_CAP) -> ConfigSpace:
    """Enumerate every census of N users over reputations 0..L.

    The space has binomial(N+L, L) members; sizes beyond ``cap`` are refused
    because downstream matrices are dense in the space size.
    """
    size = math.comb(N + L, L)
    if size > cap:
        raise ValueError(
            f"census space has {size} members for N={N}, L={L}, above the cap "
            f"{cap}; reduce N (or L) for exact chain analysis"
        )
    configs = tuple(Configuration(counts=c) for c in _compositions(N, L + 1))
    index = {cfg.counts: i for i, cfg in enumerate(configs)}
    return ConfigSpace(N=N, L=L, configs=configs, index=index)


_STRATEGY_CACHE: dict = {}


def strategy_configuration(
    norm: SocialNorm, mu: Configuration, *, epsilon: float | None = None
) -> np.ndarray:
    """Best-response service threshold for each reputation under census ``mu``.

    Occupied reputations are solved exactly against the census with the user
    itself removed; unoccupied reputations get the socially prescribed
    threshold (they never matter for transitions).
    """
    p = norm.params
    eps = p.epsilon if epsilon is None else epsilon
    key = (p, norm.h, eps, mu.counts)
    hit = _STRATEGY_CACHE.get(key)
    if hit is not None:
        return hit.copy()
    policy = np.empty(p.L + 1, dtype=np.int64)
    for rep in range(p.L + 1):
        if mu.counts[rep] > 0:
            sol = solve_value_iteration(norm, opponent_of(mu, rep), epsilon=eps)
            policy[rep] = sol.policy[rep]
        else:
            policy[rep] = norm.compliant_threshold(rep)
    _STRATEGY_CACHE[key] = policy
    return policy.copy()


def _batch_policies(
    norm: SocialNorm, space: ConfigSpace, eps: float
) -> np.ndarray:
    """Best-response thresholds for every (census, occupied reputation) pair.

    Returns an array of shape (|space|, L+1); unoccupied entries hold the
    socially prescribed threshold.  All pairs are solved in one batched
    policy-iteration call, which matches the scalar solver exactly.
    """
    p = norm.params
    L = p.L
    pairs = []  # (config index, reputation)
    etas = []
    for i, mu in enumerate(space.configs):
        for rep in range(L + 1):
            if mu.counts[rep] > 0:
                pairs.append((i, rep))
                eta = list(mu.counts)
                eta[rep] -= 1
                etas.append(eta)
    out = np.array(
        [[norm.compliant_threshold(rep) for rep in range(L + 1)]] * len(space),
        dtype=np.int64,
    )
    if pairs:
        policies, _ = solve_policy_batch(
            norm,
            np.asarray(etas, dtype=float),
            np.full(len(pairs), p.delta),
            epsilon=eps,
        )
        for row, (i, rep) in enumerate(pairs):
            out[i, rep] = policies[row, rep]
    return out


def build_transition_matrix(
    norm: SocialNorm, space: ConfigSpace, *, epsilon: float | None = None
) -> TransitionMatrix:
    """One-period census kernel under best-response play.

    Given the census, each user independently resets to reputation 0 with its
    action's punishment probability and otherwise climbs one step (capped at
    the top); the row distribution is the convolution of the per-bucket
    binomial reset counts.
    """
    p = norm.params
    if space.N != p.N or space.L != p.L:
        raise ValueError(
            f"space built for N={space.N}, L={space.L}; norm has N={p.N}, L={p.L}"
        )
    eps = p.epsilon if epsilon is None else epsilon
    L = p.L
    size = len(space)
    policies = _batch_policies(norm, space, eps)
    P = np.zeros((size, size))
    zero = (0,) * (L + 1)
    for i, mu in enumerate(space.configs):
        dist = {zero: 1.0}
        for rep in range(L + 1):
            n = mu.counts[rep]
            if n == 0:
                continue
            eta = opponent_of(mu, rep)
            q = float(reset_profile(norm, eta, epsilon=eps)[rep, policies[i, rep]])
            dest = min(L, rep + 1)
            pmf = [math.comb(n, k) * q**k * (1.0 - q) ** (n - k) for k in range(n + 1)]
            nxt: dict[tuple[int, ...], float] = {}
            for counts, prob in dist.items():
                base = list(counts)
                for k, pk in enumerate(pmf):
                    if pk == 0.0:
                        continue
                    step = base.copy()
                    step[0] += k
                    step[dest] += n - k
                    key = tuple(step)
                    nxt[key] = nxt.get(key, 0.0) + prob * pk
            dist = nxt
        for counts, prob in dist.items():
            P[i, space.index[counts]] = prob
    return TransitionMatrix(epsilon=eps, entries=P, policies=policies)


def stationary_distribution(
    P: TransitionMatrix,
    *,
    tol: float = 1e-13,
    max_squarings: int = 400,
    check_starts: int = 3,
    seed: int = 0,
) -> StationaryDist:
    """Unique stationary distribution of an irreducible kernel.

    Implements power iteration from the uniform start, accelerated by
    repeated squaring of the kernel (each squaring doubles the number of
    plain power steps), so it converges even at the near-reducible error
    rates where plain iteration would need ~1/epsilon^m steps.  Convergence
    from ``check_starts`` random starts to the same vector is verified.
    """
    if P.epsilon <= 0:
        raise ValueError(
            "stationary distribution requires epsilon > 0 (irreducible kernel)"
        )
    M = P.entries.copy()
    for _ in range(max_squarings):
        if (M.max(axis=0) - M.min(axis=0)).max() < tol:
            break
        M = M @ M
        if not np.isfinite(M).all():
            raise FloatingPointError(
                "kernel powers lost finiteness; epsilon too small for doubles"
            )
        M /= M.sum(axis=1, keepdims=True)
    else:
        raise RuntimeError(
            "power iteration did not converge; the kernel looks reducible "
            "(was it built with epsilon=0?)"
        )
    w = M.mean(axis=0)
    w /= w.sum()
    residual = np.abs(w @ P.entries - w).max()
    if residual > 1e-10:
        raise RuntimeError(f"fixed-point residual {residual:.3e} exceeds 1e-10")
    rng = np.random.default_rng(seed)
    for _ in range(check_starts):
        x = rng.random(len(w))
        x /= x.sum()
        if np.abs(x @ M - w).max() > 1e-8:
            raise RuntimeError("random starts disagree; kernel is not ergodic")
    return StationaryDist(weights=w)


def stationary_linear(P: TransitionMatrix) -> StationaryDist:
    """Dense linear-solve cross-check of the stationary distribution."""
    n = P.entries.shape[0]
    if n > 2000:
        raise ValueError("linear solve cross-check is limited to 2000 states")
    A = P.entries.T - np.eye(n)
    A[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    w = np.linalg.solve(A, rhs)
    return StationaryDist(weights=w)


def sample_trajectory(
    P: TransitionMatrix, periods: int, *, seed: int = 0, start: int = 0
) -> np.ndarray:
    """Simulate the chain and return per-state occupation counts."""
    cum = np.cumsum(P.entries, axis=1)
    rng = np.random.default_rng(seed)
    draws = rng.random(periods)
    counts = np.zeros(P.entries.shape[0], dtype=np.int64)
    state = start
    for t in range(periods):
        state = int(np.searchsorted(cum[state], draws[t]))
        counts[state] += 1
    return counts


@dataclass(frozen=True)
class LimitingResult:
    """Stationary distributions along an error ladder plus the stable support."""

    eps_ladder: tuple[float, ...]
    table: dict[float, StationaryDist]
    support: tuple[int, ...]  # config indices stable across the last two rungs
    limit: StationaryDist  # distribution at the smallest rung


def limiting_distribution(
    norm: SocialNorm,
    space: ConfigSpace,
    eps_ladder=DEFAULT_EPS_LADDER,
) -> LimitingResult:
    """Stationary distributions down an error ladder and the stable support.

    A census belongs to the long-run support if its weight exceeds
    max(100 * eps, 1e-3) at each of the two smallest ladder rungs; those are
    the censuses that retain occupancy as errors vanish.
    """
    ladder = tuple(float(e) for e in eps_ladder)
    if not ladder or any(e <= 0 for e in ladder):
        raise ValueError("error ladder must be positive")
    if any(a <= b for a, b in zip(ladder, ladder[1:])):
        raise ValueError("error ladder must be strictly decreasing")
    table = {}
    for eps in ladder:
        P = build_transition_matrix(norm, space, epsilon=eps)
        omega = stationary_distribution(P)
        if not np.isfinite(omega.weights).all():
            raise FloatingPointError(f"stationary weights underflowed at eps={eps}")
        table[eps] = omega

    def support_at(eps):
        cut = max(100.0 * eps, 1e-3)
        return {int(i) for i in np.flatnonzero(table[eps].weights > cut)}

    stable = support_at(ladder[-1])
    if len(ladder) >= 2:
        stable &= support_at(ladder[-2])
    return LimitingResult(
        eps_ladder=ladder,
        table=table,
        support=tuple(sorted(stable)),
        limit=table[ladder[-1]],
    )


@dataclass(frozen=True)
class AbsorbingClassification:
    absorbing: tuple[Configuration, ...]
    absorbing_indices: tuple[int, ...]
    classes: tuple[tuple[int, ...], ...]  # closed communicating classes at eps=0


def _analytic_absorbing_indices(norm: SocialNorm, space: ConfigSpace) -> set[int]:
    """Censuses that are absorbing under vanishing errors, by incentive analysis.

    Only censuses supported on the extreme reputations can be absorbing.  The
    all-0 census always is; the all-top census is iff delta*b > c.  A mixed
    census holds iff (a) its bottom group prefers full defection to climbing
    and (b) its top group either prefers compliance or consists of a single
    user, whose defection goes unpunished because no good client exists.
    """
    p = norm.params
    N, L, h = p.N, p.L, norm.h
    d, b, c = p.delta, p.b, p.c
    comply_floor = (1.0 - d) * c / (d * (b - c)) if d > 0 else math.inf
    defect_floor = 1.0 - (1.0 - d**h) * c / (d**h * (b - c)) if d > 0 else -math.inf
    out = set()
    for i, mu in enumerate(space.configs):
        counts = mu.counts
        if any(counts[t] for t in range(1, L)):
            continue
        nL = counts[L]
        if nL == 0:
            out.add(i)  # full defection sustains itself unconditionally
            continue
        if nL == N:
            if d * b > c:
                out.add(i)
            continue
        top_stays = nL == 1 or (nL - 1) / (N - 1) > comply_floor
        # ties go to defection, so the bottom holds at exact indifference
        bottom_holds = (N - nL - 1) / (N - 1) >= defect_floor
        if top_stays and bottom_holds:
            out.add(i)
    return out


def classify_absorbing(
    norm: SocialNorm, space: ConfigSpace
) -> AbsorbingClassification:
    """Absorbing censuses, verified analytically and against the zero-error kernel.

    The analytic incentive classification and the numeric self-transition
    test must agree; a mismatch raises with the offending censuses.  Also
    returns the closed communicating classes of the zero-error kernel.
    """
    analytic = _analytic_absorbing_indices(norm, space)
    P0 = build_transition_matrix(norm, space, epsilon=0.0)
    numeric = {int(i) for i in np.flatnonzero(np.diag(P0.entries) >= 1.0 - 1e-12)}
    if analytic != numeric:
        only_a = sorted(space.configs[i].counts for i in analytic - numeric)
        only_n = sorted(space.configs[i].counts for i in numeric - analytic)
        raise RuntimeError(
            "absorbing classification mismatch: "
            f"incentive-only {only_a}, kernel-only {only_n}"
        )
    adj = csr_matrix(P0.entries > 1e-15)
    n_comp, labels = connected_components(adj, directed=True, connection="strong")
    classes = []
    for comp in range(n_comp):
        members = np.flatnonzero(labels == comp)
        outside = np.ones(len(space), dtype=bool)
        outside[members] = False
        if P0.entries[np.ix_(members, outside)].max(initial=0.0) <= 1e-15:
            classes.append(tuple(int(m) for m in members))
    idx = tuple(sorted(numeric))
    return AbsorbingClassification(
        absorbing=tuple(space.configs[i] for i in idx),
        absorbing_indices=idx,
        classes=tuple(sorted(classes)),
    )
