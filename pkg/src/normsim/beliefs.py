"""Belief matrices over opponents' service thresholds.

A belief matrix O has one row per opponent reputation (L+1 rows) and one
column per candidate service threshold (L+2 columns, thresholds 0..L+1).
O[rep, l] is the believed probability that an opponent of that reputation
plays service threshold l.  Rows are probability distributions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .norms import SocialNorm

ROW_SUM_TOL = 1e-9


def _check_rows(rows: np.ndarray) -> np.ndarray:
    rows = np.asarray(rows, dtype=float)
    if rows.ndim != 2 or rows.shape[1] != rows.shape[0] + 1:
        raise ValueError(
            f"belief matrix must have shape (L+1, L+2), got {rows.shape}"
        )
    if np.any(rows < -ROW_SUM_TOL):
        raise ValueError("belief matrix entries must be nonnegative")
    sums = rows.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > ROW_SUM_TOL):
        raise ValueError(f"belief matrix rows must sum to 1, got sums {sums}")
    return rows


@dataclass
class BeliefMatrix:
    """Row-stochastic beliefs plus per-row observation counters.

    The counter for a row counts how many transactions with servers of that
    reputation have been observed; it drives the running-average update.
    """

    rows: np.ndarray
    counts: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.rows = _check_rows(self.rows)
        if self.counts is None:
            self.counts = np.zeros(self.rows.shape[0], dtype=np.int64)
        else:
            self.counts = np.asarray(self.counts, dtype=np.int64)

    @classmethod
    def compliant(cls, norm: SocialNorm) -> "BeliefMatrix":
        """Initial belief: every opponent complies with the social rule."""
        L, h = norm.params.L, norm.h
        rows = np.zeros((L + 1, L + 2))
        for rep in range(L + 1):
            rows[rep, 0 if rep < h else h] = 1.0
        return cls(rows=rows)

    @classmethod
    def uniform(cls, L: int) -> "BeliefMatrix":
        rows = np.full((L + 1, L + 2), 1.0 / (L + 2))
        return cls(rows=rows)

    def copy(self) -> "BeliefMatrix":
        return BeliefMatrix(rows=self.rows.copy(), counts=self.counts.copy())

    def observe(self, server_rep: int, own_rep: int, observed_z: int) -> None:
        """Fold one client-side observation into the row for ``server_rep``."""
        t = int(self.counts[server_rep]) + 1
        self.rows[server_rep] = updated_row(
            self.rows[server_rep], own_rep, observed_z, t
        )
        self.counts[server_rep] = t


def updated_row(
    row: np.ndarray, own_rep: int, observed_z: int, t: int
) -> np.ndarray:
    """Running-average update of one belief row after the t-th observation.

    Being served spreads weight z/(own_rep+1) over thresholds 0..own_rep
    (the server's threshold is at most the client's reputation); being
    refused spreads weight (1-z)/(L+1-own_rep) over thresholds above it.
    The increments total exactly 1, so the row stays stochastic.
    """
    if t < 1:
        raise ValueError(f"transaction index must be >= 1, got {t}")
    if observed_z not in (0, 1):
        raise ValueError(f"observed contribution must be 0 or 1, got {observed_z}")
    row = np.asarray(row, dtype=float)
    L = row.shape[0] - 2
    if not 0 <= own_rep <= L:
        raise ValueError(f"own reputation {own_rep} outside {{0, ..., {L}}}")
    inc = np.empty_like(row)
    inc[: own_rep + 1] = observed_z / (own_rep + 1)
    inc[own_rep + 1 :] = (1 - observed_z) / (L + 1 - own_rep)
    return (row * (t - 1) + inc) / t


def belief_update(
    beliefs: BeliefMatrix, server_rep: int, own_rep: int, observed_z: int, t: int
) -> BeliefMatrix:
    """Pure-functional variant of :meth:`BeliefMatrix.observe`.

    Returns a new matrix with the row for ``server_rep`` updated as if this
    were the t-th transaction observed for that row.
    """
    rows = beliefs.rows.copy()
    rows[server_rep] = updated_row(rows[server_rep], own_rep, observed_z, t)
    counts = beliefs.counts.copy()
    counts[server_rep] = t
    return BeliefMatrix(rows=rows, counts=counts)
