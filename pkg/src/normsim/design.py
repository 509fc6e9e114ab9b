"""The protocol designer's problem: choosing a social threshold.

Full cooperation is the unique long-run outcome exactly when users are
patient enough relative to the cost/benefit ratio (delta > c/b) and the
social threshold stays below a critical real value H.  This module provides
the feasibility test, the H solver, the absorbing-census bounds used in the
basin-of-attraction comparison, and the (delta, c/b) feasibility grid.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

from .norms import CommunityParams, SocialNorm


def worker_count() -> int:
    """Worker parallelism cap, from NORMSIM_THREADS (default 1)."""
    value = os.environ.get("NORMSIM_THREADS", "1")
    try:
        n = int(value)
    except ValueError as exc:
        raise ValueError(f"NORMSIM_THREADS must be an integer, got {value!r}") from exc
    return max(1, n)


@dataclass(frozen=True)
class AbsorbingBounds:
    """Census bounds between which a two-point configuration is self-sustaining.

    b_lower   cooperator count above which reputation-L users keep complying
    b_upper   cooperator count below which reputation-0 users keep defecting
    """

    b_lower: float
    b_upper: float


@dataclass(frozen=True)
class DesignVerdict:
    delta_ok: bool
    H: float | None
    max_feasible_h: int | None
    unique_ssc_is_muN: bool


def absorbing_bounds(norm: SocialNorm) -> AbsorbingBounds:
    """Lower/upper cooperator-count bounds for self-sustaining 0/L censuses.

    Meaningful when delta * b > c; otherwise the all-cooperator census is not
    self-sustaining and the caller must interpret the bounds accordingly.
    """
    p = norm.params
    if p.delta <= 0:
        return AbsorbingBounds(b_lower=math.inf, b_upper=math.inf)
    lo = (1.0 - p.delta) * p.c / (p.delta * (p.b - p.c)) * (p.N - 1) + 1.0
    hi = (1.0 - p.delta**norm.h) * p.c / (p.delta**norm.h * (p.b - p.c)) * (p.N - 1)
    return AbsorbingBounds(b_lower=lo, b_upper=hi)


def _gap(delta: float, b: float, c: float, h: float) -> float:
    """Incentive surplus of threshold h; positive iff h is strictly feasible."""
    return delta**h * b - delta ** (h - 1) * c - (1.0 - delta**h) * c * h


def feasibility_test(
    params: CommunityParams, h: int, *, lenient: bool = False
) -> bool:
    """Whether threshold ``h`` makes full cooperation the unique long-run outcome.

    Requires both delta > c/b and a positive incentive surplus at h.  The
    default comparison is strict; ``lenient`` accepts the boundary case where
    the surplus is exactly zero.
    """
    if not 1 <= h <= params.L:
        raise ValueError(f"h must be in [1, L={params.L}], got {h}")
    if not params.delta > params.c / params.b:
        return False
    g = _gap(params.delta, params.b, params.c, h)
    return g >= 0.0 if lenient else g > 0.0


def solve_H(params: CommunityParams, *, tol: float = 1e-9) -> float | None:
    """Largest real threshold below which a social threshold is feasible.

    Solves for the root of the incentive surplus by bisection, using that the
    reward side decreases and the punishment side increases in h.  Returns
    None when delta <= c/b (no threshold can work).
    """
    d, b, c = params.delta, params.b, params.c
    if not d > c / b:
        return None
    lo = 0.0
    hi = 1.0
    while _gap(d, b, c, hi) > 0:
        hi *= 2.0
        if hi > 1e9:  # unreachable for delta < 1, defensive cap
            return hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _gap(d, b, c, mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def evaluate_design(
    params: CommunityParams, h: int, *, lenient: bool = False
) -> DesignVerdict:
    """Full designer verdict for a candidate threshold ``h``."""
    delta_ok = params.delta > params.c / params.b
    H = solve_H(params)
    feasible_hs = [
        hh for hh in range(1, params.L + 1) if feasibility_test(params, hh, lenient=lenient)
    ]
    return DesignVerdict(
        delta_ok=delta_ok,
        H=H,
        max_feasible_h=max(feasible_hs) if feasible_hs else None,
        unique_ssc_is_muN=feasibility_test(params, h, lenient=lenient),
    )


def _grid_cell(args):
    delta, cb, L = args
    params = CommunityParams(N=2, L=L, b=1.0, c=cb, delta=delta)
    H = solve_H(params)
    feasible = [
        h for h in range(1, L + 1) if feasibility_test(params, h)
    ]
    return delta, cb, H, (max(feasible) if feasible else None)


def feasible_region_grid(
    delta_grid, cb_grid, L: int
) -> list[tuple[float, float, float | None, int | None]]:
    """Tabulate H and the largest feasible threshold over a parameter grid.

    Returns rows (delta, c_over_b, H, max_feasible_h); H and max_feasible_h
    are None where no threshold can enforce full cooperation.
    """
    cells = [(float(d), float(cb), L) for d in delta_grid for cb in cb_grid]
    if not cells:
        raise ValueError("grids must be nonempty")
    for d, cb, _ in cells:
        if not 0 <= d < 1:
            raise ValueError(f"delta {d} outside [0, 1)")
        if not 0 < cb < 1:
            raise ValueError(f"c/b {cb} outside (0, 1)")
    workers = worker_count()
    if workers > 1 and len(cells) > 64:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_grid_cell, cells, chunksize=32))
    return [_grid_cell(cell) for cell in cells]


def write_region_csv(rows, target) -> None:
    """Emit the feasibility grid as CSV (to a path or an open text stream)."""
    if hasattr(target, "write"):
        _write_region_rows(target, rows)
        return
    with open(target, "w", newline="") as f:
        _write_region_rows(f, rows)


def _write_region_rows(stream, rows) -> None:
    writer = csv.writer(stream)
    writer.writerow(["delta", "c_over_b", "H", "max_feasible_h"])
    for delta, cb, H, max_h in rows:
        writer.writerow(
            [
                f"{delta:.17g}",
                f"{cb:.17g}",
                "" if H is None else f"{H:.17g}",
                "" if max_h is None else str(max_h),
            ]
        )
