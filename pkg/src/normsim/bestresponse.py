"""Best-response solvers for the single-user strategy-adaptation problem.

A user adapting its strategy solves a small dynamic program: its state is
its own reputation, the opponent census is held fixed, and each period its
reputation either advances by one step (capped at L) or resets to 0 with the
action-dependent punishment probability.  ``solve_value_iteration`` solves
this program directly; ``closed_form_bimodal`` provides the analytic
solution for censuses concentrated on reputations 0 and L, which serves as
an independent oracle; ``solve_policy_batch`` is an exact accelerated solver
for many users at once, used by the Monte Carlo engine.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .beliefs import BeliefMatrix
from .norms import SocialNorm
from .payoff import (
    OpponentConfig,
    _counts,
    _phi_matrix,
    _serve_matrix,
    benefit_profile,
    cost_profile,
)

DEFAULT_TOLERANCE = 1e-10
MAX_ITERATIONS = 10**6
# Q-values closer than this are treated as exact ties when extracting the
# greedy policy; knife-edge indifference then resolves deterministically
# instead of following floating-point noise.
POLICY_TIE_ATOL = 1e-9


@dataclass(frozen=True)
class BestResponseSolution:
    """Optimal threshold policy and value function over own reputations."""

    policy: np.ndarray  # service threshold per reputation, in {0, ..., L+1}
    values: np.ndarray  # long-term utility per reputation
    iterations: int
    residual: float


@dataclass(frozen=True)
class ClosedFormSolution:
    """Analytic best response against a two-point (0/L) opponent census.

    k            highest reputation at which the user defects (-1: none)
    good_action  threshold played at reputations >= h (h or L+1)
    values       long-term utility per reputation
    """

    k: int
    good_action: int
    values: np.ndarray


def _model_arrays(
    norm: SocialNorm,
    eta: OpponentConfig,
    serve: np.ndarray,
    *,
    b: float | None = None,
    epsilon: float | None = None,
    beliefs: BeliefMatrix | None = None,
):
    """Reward matrix R[rep, action] and reset matrix P0[rep, action]."""
    p = norm.params
    eps = p.epsilon if epsilon is None else epsilon
    m = _counts(norm, eta)
    frac = m / (p.N - 1)
    benefit = benefit_profile(norm, eta, b=b, epsilon=eps, beliefs=beliefs)
    cost = (p.c / (p.N - 1)) * (serve.astype(float) @ m)
    phi = _phi_matrix(p.L, norm.h)
    mismatch = (serve[None, :, :] != phi[:, None, :]).astype(float) @ frac
    reset = eps + (1.0 - 2.0 * eps) * mismatch
    reward = benefit[:, None] - cost[None, :]
    return reward, reset


def _tie_break_argmax(
    q: np.ndarray, prefer: np.ndarray, rng=None, atol: float = POLICY_TIE_ATOL
) -> np.ndarray:
    """Row-wise argmax; ties (within ``atol``) go to the action latest in
    ``prefer`` order, or to a fair coin among tied actions when ``rng`` is
    given."""
    qp = q[:, prefer]
    mask = qp >= qp.max(axis=1, keepdims=True) - atol
    if rng is None:
        idx = qp.shape[1] - 1 - np.argmax(mask[:, ::-1], axis=1)
    else:
        idx = np.empty(q.shape[0], dtype=np.int64)
        for i in range(q.shape[0]):
            tied = np.flatnonzero(mask[i])
            idx[i] = tied[rng.integers(len(tied))] if len(tied) > 1 else tied[0]
    return prefer[idx]


def _resolve_actions(norm: SocialNorm, action_space) -> tuple[np.ndarray, np.ndarray]:
    """Serve matrix and tie-break preference order for an action space.

    "threshold" gives the L+2 threshold actions; "subset" enumerates all
    2^(L+1) service sets.  An explicit iterable of serve indicator vectors is
    also accepted.  Ties prefer the action serving the fewest clients.
    """
    L = norm.params.L
    if isinstance(action_space, str):
        if action_space == "threshold":
            serve = _serve_matrix(L).copy()
        elif action_space == "subset":
            serve = np.array(list(product((0, 1), repeat=L + 1)), dtype=np.int8)
        else:
            raise ValueError(f"unknown action space {action_space!r}")
    else:
        serve = np.asarray(list(action_space), dtype=np.int8)
        if serve.ndim != 2 or serve.shape[1] != L + 1:
            raise ValueError("explicit actions must be serve vectors of length L+1")
    # stable order: more services first, so the last tied entry serves fewest
    order = np.argsort(-serve.sum(axis=1), kind="stable")
    return serve, order


def solve_value_iteration(
    norm: SocialNorm,
    eta: OpponentConfig,
    *,
    action_space="threshold",
    tolerance: float = DEFAULT_TOLERANCE,
    b: float | None = None,
    delta: float | None = None,
    epsilon: float | None = None,
    beliefs: BeliefMatrix | None = None,
    coin_rng=None,
    max_iterations: int = MAX_ITERATIONS,
) -> BestResponseSolution:
    """Solve the adaptation problem by value iteration against a fixed census.

    Stops when the sweep-to-sweep sup-norm change drops below
    tolerance * (1 - delta) / delta, which bounds the optimality gap of the
    returned values by ``tolerance``.  Ties in the greedy policy go to the
    action serving fewer clients (``coin_rng`` switches this to a fair coin).
    """
    if tolerance <= 0:
        raise ValueError(f"tolerance must be positive, got {tolerance}")
    p = norm.params
    dlt = p.delta if delta is None else delta
    serve, prefer = _resolve_actions(norm, action_space)
    reward, reset = _model_arrays(
        norm, eta, serve, b=b, epsilon=epsilon, beliefs=beliefs
    )
    up = np.minimum(np.arange(p.L + 1) + 1, p.L)
    stop = tolerance * (1.0 - dlt) / dlt if dlt > 0 else 0.0

    values = np.zeros(p.L + 1)
    residual = np.inf
    iterations = 0
    while iterations < max_iterations:
        cont = reset * values[0] + (1.0 - reset) * values[up][:, None]
        q = reward + dlt * cont
        new_values = q.max(axis=1)
        residual = float(np.abs(new_values - values).max())
        values = new_values
        iterations += 1
        if residual <= stop:
            break
    else:
        raise RuntimeError(
            f"value iteration failed to converge within {max_iterations} sweeps "
            f"(residual {residual:.3e}); this indicates a bug for delta < 1"
        )

    action_idx = _tie_break_argmax(q, prefer, rng=coin_rng)
    if isinstance(action_space, str) and action_space == "threshold":
        policy = action_idx  # threshold actions are indexed by their threshold
    else:
        policy = action_idx  # indices into the serve matrix
    sol = BestResponseSolution(
        policy=policy, values=values, iterations=iterations, residual=residual
    )
    object.__setattr__(sol, "serve", serve)
    object.__setattr__(sol, "q", q)
    return sol


def bimodal_opponent(norm: SocialNorm, n0: int, nL: int, own_rep: int) -> OpponentConfig:
    """Opponent census seen by a user of ``own_rep`` in a 0/L two-point community."""
    p = norm.params
    if n0 + nL != p.N:
        raise ValueError(f"n0 + nL must equal N={p.N}, got {n0 + nL}")
    if own_rep not in (0, p.L):
        raise ValueError(f"own reputation must be 0 or L={p.L}, got {own_rep}")
    counts = [0] * (p.L + 1)
    counts[0], counts[p.L] = n0, nL
    if counts[own_rep] < 1:
        raise ValueError(f"no user of reputation {own_rep} in ({n0}, ..., {nL})")
    counts[own_rep] -= 1
    return OpponentConfig(counts=tuple(counts))


def closed_form_bimodal(
    norm: SocialNorm, n0: int, nL: int, own_rep: int
) -> ClosedFormSolution:
    """Analytic best response in a two-point community, error rate taken to 0.

    Good reputations either comply (threshold h) or serve no one depending on
    how many opponents sit at reputation 0; bad reputations defect up to a
    cutoff k and climb (serve everyone) above it.
    """
    p = norm.params
    L, h, b, c, dlt = p.L, norm.h, p.b, p.c, p.delta
    eta = bimodal_opponent(norm, n0, nL, own_rep)  # validates the census
    if any(eta.counts[r] for r in range(1, L)):
        raise ValueError("closed form requires a census supported on {0, L}")
    p0 = eta.counts[0] / (p.N - 1)
    pL = 1.0 - p0

    comply_cut = (dlt * b - c) / (dlt * (b - c)) if dlt > 0 else -np.inf
    if p0 < comply_cut:
        good_action = h
        v_good = pL * (b - c) / (1.0 - dlt)
    else:
        good_action = L + 1
        v_good = pL * b / (1.0 - dlt * p0)

    values = np.zeros(L + 1)
    values[h:] = v_good
    k = -1
    for rep in range(h):
        climb = dlt ** (h - rep) * v_good - (1.0 - dlt ** (h - rep)) / (1.0 - dlt) * c
        if climb <= 0.0:
            k = max(k, rep)
        else:
            values[rep] = climb
    return ClosedFormSolution(k=k, good_action=good_action, values=values)


def closed_form_policy(norm: SocialNorm, sol: ClosedFormSolution) -> np.ndarray:
    """Expand a closed-form solution into a per-reputation threshold vector."""
    p = norm.params
    policy = np.zeros(p.L + 1, dtype=np.int64)
    policy[: sol.k + 1] = p.L + 1
    policy[norm.h :] = sol.good_action
    return policy


def verify_threshold_structure(
    norm: SocialNorm,
    eta: OpponentConfig,
    tolerance: float = 1e-8,
    **solver_kwargs,
) -> tuple[bool, dict | None]:
    """Check that unrestricted service sets buy nothing over thresholds.

    Solves the adaptation problem over all 2^(L+1) service subsets and over
    threshold actions, then verifies that (a) the optimal values agree within
    ``tolerance`` and (b) at every reputation some optimal subset is
    upward-closed in client reputation.  Returns (ok, counterexample).
    """
    sub = solve_value_iteration(
        norm, eta, action_space="subset", tolerance=min(tolerance, 1e-10),
        **solver_kwargs,
    )
    thr = solve_value_iteration(
        norm, eta, tolerance=min(tolerance, 1e-10), **solver_kwargs
    )
    gap = np.abs(sub.values - thr.values)
    if gap.max() >= tolerance:
        rep = int(gap.argmax())
        return False, {
            "reason": "value gap between subset and threshold actions",
            "reputation": rep,
            "subset_value": float(sub.values[rep]),
            "threshold_value": float(thr.values[rep]),
        }
    q = sub.q
    serve = sub.serve
    for rep in range(norm.params.L + 1):
        tied = np.flatnonzero(q[rep] >= q[rep].max() - tolerance)
        if not any(np.all(np.diff(serve[a]) >= 0) for a in tied):
            return False, {
                "reason": "no optimal action is upward-closed",
                "reputation": rep,
                "optimal_sets": [tuple(serve[a]) for a in tied],
            }
    return True, None


def solve_policy_batch(
    norm: SocialNorm,
    etas: np.ndarray,
    deltas: np.ndarray,
    *,
    benefits: np.ndarray | None = None,
    bs: np.ndarray | None = None,
    epsilon: float | None = None,
    max_rounds: int = 200,
) -> tuple[np.ndarray, np.ndarray]:
    """Exact best responses for a batch of users sharing the threshold MDP shape.

    etas      (K, L+1) opponent censuses (rows sum to N-1)
    deltas    (K,) personal discount factors
    benefits  optional (K, L+1) precomputed expected-benefit rows (overrides
              the baseline belief; used for adaptive-belief users)
    bs        optional (K,) per-user benefit values for the baseline belief

    Returns (policies, values), each (K, L+1).  Uses policy iteration with
    exact evaluation; the fixed point and tie-breaking match
    ``solve_value_iteration`` on threshold actions.
    """
    p = norm.params
    L, h = p.L, norm.h
    eps = p.epsilon if epsilon is None else epsilon
    etas = np.asarray(etas, dtype=float)
    K = etas.shape[0]
    deltas = np.broadcast_to(np.asarray(deltas, dtype=float), (K,))
    frac = etas / (p.N - 1)

    serve = _serve_matrix(L).astype(float)
    phi = _phi_matrix(L, h).astype(float)
    cost = (p.c / (p.N - 1)) * (etas @ serve.T)  # (K, L+2)
    if benefits is None:
        comply = np.full(L + 1, 1.0 - eps)
        comply[0] = eps
        serve_prob = comply[:, None] * phi  # (opp rep, own rep)
        benefits = frac @ serve_prob  # (K, L+1), per unit of b
        b_vec = np.full(K, p.b) if bs is None else np.asarray(bs, dtype=float)
        benefits = benefits * b_vec[:, None]
    else:
        benefits = np.asarray(benefits, dtype=float)

    mism = (serve[None, :, :] != phi[:, None, :]).astype(float)  # (own, a, opp)
    reset = eps + (1.0 - 2.0 * eps) * np.einsum("tac,kc->kta", mism, frac)
    reward = benefits[:, :, None] - cost[:, None, :]  # (K, own, a)
    up = np.minimum(np.arange(L + 1) + 1, L)

    S = L + 1
    policies = np.full((K, S), L + 1, dtype=np.int64)
    values = np.zeros((K, S))
    prev_values = None
    rows = np.arange(S)
    for _ in range(max_rounds):
        # exact evaluation of the current policies
        p0 = np.take_along_axis(reset, policies[:, :, None], axis=2)[:, :, 0]
        r_pi = np.take_along_axis(reward, policies[:, :, None], axis=2)[:, :, 0]
        trans = np.zeros((K, S, S))
        trans[:, rows, 0] += p0
        trans[:, rows, up] += 1.0 - p0
        A = np.eye(S)[None, :, :] - deltas[:, None, None] * trans
        values = np.linalg.solve(A, r_pi[:, :, None])[:, :, 0]
        # greedy improvement, ties to the larger threshold
        cont = reset * values[:, 0, None, None] + (1.0 - reset) * values[:, up][
            :, :, None
        ]
        q = reward + deltas[:, None, None] * cont
        tied = q >= q.max(axis=2, keepdims=True) - POLICY_TIE_ATOL
        new_policies = (L + 1) - np.argmax(tied[:, :, ::-1], axis=2)
        if np.array_equal(new_policies, policies):
            break
        # guard against two-cycles between exactly tied policies
        if prev_values is not None and np.abs(values - prev_values).max() < 1e-13:
            policies = new_policies
            break
        prev_values = values
        policies = new_policies
    return policies, values
