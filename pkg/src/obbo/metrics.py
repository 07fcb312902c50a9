"""Regret and regularity instrumentation over completed runs.

These functions consume the exact-solution oracles that solvers are not
allowed to touch: true hypergradients at the trace's historical iterates for
the local-regret series and estimator-error tracking, and the inner-solution
map for path/function variation of the stream. Suprema over the decision set
are approximated on a deterministic low-discrepancy grid (plus box corners
and any visited iterates the caller appends).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from .geometry import DistanceGenerator, FeasibleSet, Regularizer, generalized_projection
from .hypergrad import exact_hypergradient as _solve_exact_hypergradient
from .optimizers import RunTrace
from .problems.base import ProblemInstant, Stream

__all__ = [
    "RegretSeries",
    "VariationReport",
    "exact_grad",
    "blr_term",
    "compute_regret_series",
    "path_variation",
    "path_variation_terms",
    "function_variation",
    "function_variation_terms",
    "variation_report",
    "hypergradient_error",
    "build_grid",
]


def exact_grad(instant: ProblemInstant, lam) -> np.ndarray:
    """True hypergradient at lam, via the instant's closed form if it has one."""
    if instant.exact_hypergradient is not None:
        return instant.exact_hypergradient(np.asarray(lam, dtype=float))
    if instant.inner_opt is not None:
        return _solve_exact_hypergradient(instant, lam)
    raise ValueError(
        f"instant t={instant.t} exposes no exact-solution oracle; "
        "regret metrics need inner_opt or exact_hypergradient"
    )


@dataclass
class RegretSeries:
    """Per-round local-regret terms and running sums.

    ``terms`` uses the generalized projection under the run's own geometry;
    ``euclidean_terms`` is the companion squared norm of the smoothed true
    hypergradient. Under the Euclidean / unregularized / unconstrained
    reduction the two series coincide term by term.
    """

    terms: np.ndarray
    cumulative: np.ndarray
    euclidean_terms: np.ndarray
    euclidean_cumulative: np.ndarray


def blr_term(
    window: list[tuple[ProblemInstant, np.ndarray]],
    alpha: float,
    phi: DistanceGenerator,
    h: Regularizer,
    X: FeasibleSet,
    w: int,
) -> float:
    """Single local-regret term for a window of (instant, iterate) pairs.

    ``window`` is ordered newest first and may be shorter than w; missing
    history contributes zero to the smoothed gradient (divisor stays w).
    """
    if not window:
        raise ValueError("window must contain at least the current round")
    newest_lam = window[0][1]
    total = np.zeros_like(np.asarray(newest_lam, dtype=float))
    for instant, lam in window[:w]:
        total = total + exact_grad(instant, lam)
    smoothed = total / w
    g = generalized_projection(newest_lam, smoothed, alpha, phi, h, X)
    return float(g @ g)


def _phi_for_row(trace: RunTrace, t: int) -> DistanceGenerator:
    if trace.config.phi_mode == "euclidean":
        return DistanceGenerator.euclidean()
    return DistanceGenerator.diagonal(trace.phi_diags[t])


def compute_regret_series(stream: Stream, trace: RunTrace) -> RegretSeries:
    """Local-regret series of a completed run against the exact oracles.

    The smoothed true hypergradient at round t averages exact gradients of
    the w most recent objectives at their historical iterates (zero-padded
    before the start), and each term is the squared generalized projection of
    that average under the round's distance generator, step size, regularizer
    and feasible set.
    """
    T = trace.T
    if len(stream) < T:
        raise ValueError("stream shorter than trace")
    w, alpha = trace.w, trace.alpha
    h, X = trace.config.regularizer, trace.config.feasible
    grads = [exact_grad(stream[t], trace.lambdas[t]) for t in range(T)]
    terms = np.empty(T)
    eucl = np.empty(T)
    for t in range(T):
        lo = max(0, t - w + 1)
        smoothed = np.sum(grads[lo : t + 1], axis=0) / w
        eucl[t] = float(smoothed @ smoothed)
        g = generalized_projection(
            trace.lambdas[t], smoothed, alpha, _phi_for_row(trace, t), h, X
        )
        terms[t] = float(g @ g)
    return RegretSeries(
        terms=terms,
        cumulative=np.cumsum(terms),
        euclidean_terms=eucl,
        euclidean_cumulative=np.cumsum(eucl),
    )


def hypergradient_error(trace: RunTrace, stream: Stream) -> np.ndarray:
    """Squared error of the stored per-round estimates against exact gradients."""
    T = trace.T
    if len(stream) < T:
        raise ValueError("stream shorter than trace")
    out = np.empty(T)
    for t in range(T):
        diff = trace.estimates[t] - exact_grad(stream[t], trace.lambdas[t])
        out[t] = float(diff @ diff)
    return out


def _inner_opt_on_grid(instant: ProblemInstant, grid: np.ndarray) -> np.ndarray:
    if instant.inner_opt is None:
        raise ValueError(f"instant t={instant.t} provides no inner_opt oracle")
    return np.asarray([instant.inner_opt(lam) for lam in grid])


def path_variation_terms(stream: Stream, p: int, grid: np.ndarray) -> np.ndarray:
    """Per-transition sup (over the grid) of the inner-optimum displacement^p."""
    if p not in (1, 2):
        raise ValueError("path variation order p must be 1 or 2")
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    prev = _inner_opt_on_grid(stream[0], grid)
    terms = np.empty(len(stream) - 1)
    for i in range(1, len(stream)):
        cur = _inner_opt_on_grid(stream[i], grid)
        dist = np.linalg.norm(prev - cur, axis=1)
        terms[i - 1] = float(np.max(dist) ** p)
        prev = cur
    return terms


def path_variation(stream: Stream, p: int, grid: np.ndarray) -> float:
    return float(np.sum(path_variation_terms(stream, p, grid))) if len(stream) > 1 else 0.0


def _objective_on_grid(instant: ProblemInstant, grid: np.ndarray) -> np.ndarray:
    if instant.inner_opt is None:
        raise ValueError(f"instant t={instant.t} provides no inner_opt oracle")
    return np.asarray(
        [instant.f_value(lam, instant.inner_opt(lam)) for lam in grid]
    )


def function_variation_terms(stream: Stream, grid: np.ndarray) -> np.ndarray:
    """Per-transition sup (over the grid) of the induced-objective change.

    The sum runs over the T-1 transitions realized inside the stream.
    """
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    prev = _objective_on_grid(stream[0], grid)
    terms = np.empty(len(stream) - 1)
    for i in range(1, len(stream)):
        cur = _objective_on_grid(stream[i], grid)
        terms[i - 1] = float(np.max(np.abs(cur - prev)))
        prev = cur
    return terms


def function_variation(stream: Stream, grid: np.ndarray) -> float:
    return (
        float(np.sum(function_variation_terms(stream, grid)))
        if len(stream) > 1
        else 0.0
    )


@dataclass
class VariationReport:
    """Path variations of orders 1 and 2 plus the objective variation,
    with the grid the suprema were taken over."""

    h1: float
    h2: float
    v1: float
    grid: np.ndarray


def variation_report(stream: Stream, grid: np.ndarray) -> VariationReport:
    return VariationReport(
        h1=path_variation(stream, 1, grid),
        h2=path_variation(stream, 2, grid),
        v1=function_variation(stream, grid),
        grid=np.atleast_2d(np.asarray(grid, dtype=float)),
    )


def build_grid(
    lower,
    upper,
    n: int = 64,
    include_corners: bool = True,
    extra: np.ndarray | None = None,
) -> np.ndarray:
    """Deterministic evaluation grid inside a box.

    The first n points follow the unscrambled Sobol sequence (nested, so a
    larger grid contains every smaller one); box corners are appended for
    d <= 4 so affine objectives attain their sup exactly, and any extra rows
    (e.g. a trace's visited iterates, clipped to the box) come last.
    """
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    d = lower.size
    if upper.size != d or np.any(lower >= upper):
        raise ValueError("grid bounds must satisfy lower < upper")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        points = qmc.Sobol(d, scramble=False).random(n)
    grid = lower + points * (upper - lower)
    parts = [grid]
    if include_corners and d <= 4:
        corners = np.array(
            np.meshgrid(*[(lo, hi) for lo, hi in zip(lower, upper)], indexing="ij")
        ).reshape(d, -1).T
        parts.append(corners)
    if extra is not None:
        extra = np.atleast_2d(np.asarray(extra, dtype=float))
        parts.append(np.clip(extra, lower, upper))
    return np.vstack(parts)
