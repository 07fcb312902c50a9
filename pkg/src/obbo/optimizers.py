"""Outer-loop optimizers over problem streams.

``run_obbo`` / ``run_sobbo`` are the Bregman bilevel optimizers: warm-started
inner descent, a windowed average of stored hypergradient estimates, optional
clipping, and a proximal step under a per-round distance generator.
``run_oagd`` re-evaluates the window's objectives at the current iterate pair
every round (the expensive baseline), ``run_sobow`` is the Euclidean
unconstrained reduction, and ``run_single_level`` drives Adam or SGDM with
the same windowed estimates.
"""

from __future__ import annotations

import math
import time
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .geometry import (
    AdaptiveDiagState,
    DistanceGenerator,
    FeasibleSet,
    Regularizer,
    adaptive_update,
    prox_step,
)
from .hypergrad import (
    DivergenceError,
    InnerSolveResult,
    NeumannParams,
    WindowBuffer,
    implicit_hypergradient,
    inner_gd,
    inner_sgd,
    itd_hypergradient,
    stochastic_hypergradient,
    window_average,
)
from .problems.base import (
    ProblemInstant,
    StochasticInstant,
    Stream,
    outer_grad_lipschitz,
)

__all__ = [
    "ObboConfig",
    "SobboConfig",
    "RunTrace",
    "run_obbo",
    "run_sobbo",
    "run_oagd",
    "run_sobow",
    "run_single_level",
    "default_neumann_bound",
]

Estimator = Callable[[ProblemInstant, np.ndarray, InnerSolveResult | None], np.ndarray]


@dataclass
class ObboConfig:
    """Outer/inner step sizes, window, geometry mode, and initial iterates.

    ``alpha`` and ``eta`` may be left unset to derive conservative defaults
    from the stream's declared smoothness constants. ``estimator`` selects how
    per-round hypergradients are formed: ``itd`` (default) backpropagates the
    inner trajectory, ``implicit`` solves the inner Hessian system at the
    current pair, and ``exact`` uses the inner-solution oracle directly
    (closed-form mode, skips the inner loop).
    """

    alpha: float | None = None
    eta: float | None = None
    K: int | None = None
    w: int = 1
    phi_mode: str = "euclidean"
    adapt_beta: float = 0.9
    adapt_epsilon: float = 1e-8
    regularizer: Regularizer = field(default_factory=Regularizer.zero)
    feasible: FeasibleSet = field(default_factory=FeasibleSet.full_space)
    clip_threshold: float | None = None
    lambda0: np.ndarray | None = None
    beta0: np.ndarray | None = None
    estimator: str = "itd"

    def __post_init__(self):
        if self.w < 1:
            raise ValueError("window size must be at least 1")
        if self.K is not None and self.K < 1:
            raise ValueError("inner iteration count must be at least 1")
        if self.alpha is not None and self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.eta is not None and self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.phi_mode not in ("euclidean", "adaptive"):
            raise ValueError(f"unknown phi mode {self.phi_mode!r}")
        if self.clip_threshold is not None and self.clip_threshold <= 0:
            raise ValueError("clip threshold must be positive")
        if self.estimator not in ("itd", "implicit", "exact"):
            raise ValueError(f"unknown estimator {self.estimator!r}")


@dataclass
class SobboConfig(ObboConfig):
    """Stochastic variant: inner batch size s and Neumann bound m.

    Defaults follow the analysis-guided choices s = w and
    m = ceil(log(w) / log(1 / (1 - mu_g / l_g1))) + 1.
    """

    s: int | None = None
    m: int | None = None

    def __post_init__(self):
        super().__post_init__()
        if self.s is not None and self.s < 1:
            raise ValueError("batch size s must be at least 1")
        if self.m is not None and self.m < 1:
            raise ValueError("Neumann bound m must be at least 1")


@dataclass
class RunTrace:
    """Per-round record of a run plus the terminal iterates.

    ``lambdas[t]`` is the iterate the round-t estimate was formed at;
    ``betas[t]`` is the final inner iterate handed to round t+1. ``smoothed``
    stores the window average after clipping, ``phi_diags`` the diagonal of
    the distance generator used for the round's step.
    """

    lambdas: np.ndarray
    betas: np.ndarray
    estimates: np.ndarray
    smoothed: np.ndarray
    gen_proj_norm_sq: np.ndarray
    phi_diags: np.ndarray
    outer_loss: np.ndarray
    inner_residual: np.ndarray
    step_ms: np.ndarray
    lambda_final: np.ndarray
    beta_final: np.ndarray
    alpha: float
    eta: float
    w: int
    config: ObboConfig

    @property
    def T(self) -> int:
        return self.lambdas.shape[0]


class _TraceBuilder:
    def __init__(self):
        self.rows = {
            "lambdas": [],
            "betas": [],
            "estimates": [],
            "smoothed": [],
            "gen_proj_norm_sq": [],
            "phi_diags": [],
            "outer_loss": [],
            "inner_residual": [],
            "step_ms": [],
        }

    def add(self, **kwargs):
        for key, value in kwargs.items():
            self.rows[key].append(value)

    def build(self, lam, beta, alpha, eta, w, config) -> RunTrace:
        return RunTrace(
            lambdas=np.asarray(self.rows["lambdas"]),
            betas=np.asarray(self.rows["betas"]),
            estimates=np.asarray(self.rows["estimates"]),
            smoothed=np.asarray(self.rows["smoothed"]),
            gen_proj_norm_sq=np.asarray(self.rows["gen_proj_norm_sq"]),
            phi_diags=np.asarray(self.rows["phi_diags"]),
            outer_loss=np.asarray(self.rows["outer_loss"]),
            inner_residual=np.asarray(self.rows["inner_residual"]),
            step_ms=np.asarray(self.rows["step_ms"]),
            lambda_final=lam,
            beta_final=beta,
            alpha=alpha,
            eta=eta,
            w=w,
            config=config,
        )


def default_neumann_bound(w: int, mu_g: float, l_g1: float) -> int:
    """Truncation bound matching the window size to the series contraction."""
    ratio = 1.0 - mu_g / l_g1
    if w <= 1 or ratio <= 0.0:
        return 1
    return int(math.ceil(math.log(w) / math.log(1.0 / ratio))) + 1


def _resolve_steps(
    instant: ProblemInstant, config: ObboConfig, algorithm: str
) -> tuple[float, float, int]:
    eta = config.eta
    if eta is None:
        if algorithm == "oagd":
            eta = 2.0 / (instant.l_g1 + instant.mu_g)
        else:
            eta = 1.0 / (2.0 * instant.l_g1)
    alpha = config.alpha
    if alpha is None:
        if instant.l_f1 is None:
            raise ValueError(
                "stream declares no outer smoothness constants; set alpha explicitly"
            )
        l_F1 = outer_grad_lipschitz(
            instant.mu_g, instant.l_g1, instant.l_f1, instant.l_f0, instant.l_g2
        )
        alpha = 3.0 / (8.0 * l_F1)
    K = config.K
    if K is None:
        K = 1 if algorithm == "oagd" else 10
    return alpha, eta, K


def _initial_iterates(
    stream: Stream, config: ObboConfig
) -> tuple[np.ndarray, np.ndarray]:
    d1, d2 = stream[0].d1, stream[0].d2
    if config.lambda0 is None:
        center = config.feasible.center()
        lam = np.zeros(d1) if center is None else center.copy()
    else:
        lam = np.asarray(config.lambda0, dtype=float).copy()
    if lam.shape != (d1,):
        raise ValueError(f"lambda0 must have shape ({d1},)")
    if not config.feasible.contains(lam):
        raise ValueError("lambda0 lies outside the feasible set")
    if config.beta0 is None:
        beta = np.zeros(d2)
    else:
        beta = np.asarray(config.beta0, dtype=float).copy()
    if beta.shape != (d2,):
        raise ValueError(f"beta0 must have shape ({d2},)")
    return lam, beta


def _clip(q: np.ndarray, threshold: float | None) -> np.ndarray:
    if threshold is None:
        return q
    norm_sq = float(q @ q)
    if norm_sq > threshold:
        return q * math.sqrt(threshold / norm_sq)
    return q


def _check_finite(name: str, x: np.ndarray, t: int) -> None:
    if not np.all(np.isfinite(np.atleast_1d(x))):
        raise DivergenceError(f"{name} became non-finite at t={t}; aborting run")


class _PhiSchedule:
    """Per-round distance generator; adaptive state updates before each step."""

    def __init__(self, config: ObboConfig, d1: int):
        self.mode = config.phi_mode
        self.d1 = d1
        if self.mode == "adaptive":
            self.state = AdaptiveDiagState.fresh(
                d1, beta=config.adapt_beta, epsilon=config.adapt_epsilon
            )

    def step_generator(self, q: np.ndarray) -> tuple[DistanceGenerator, np.ndarray]:
        if self.mode == "euclidean":
            return DistanceGenerator.euclidean(), np.ones(self.d1)
        self.state = adaptive_update(self.state, q)
        diag = self.state.diag()
        return DistanceGenerator.diagonal(diag), diag


def _resolve_estimator(
    config: ObboConfig, estimator: Estimator | None
) -> tuple[str, Estimator | None]:
    if estimator is not None:
        return "custom", estimator
    if config.estimator == "itd":
        return "itd", lambda inst, lam, solve: itd_hypergradient(inst, lam, solve)
    if config.estimator == "implicit":
        return "implicit", lambda inst, lam, solve: implicit_hypergradient(
            inst, lam, solve.final
        )
    return "exact", None


def run_obbo(
    stream: Stream, config: ObboConfig, estimator: Estimator | None = None
) -> RunTrace:
    """Deterministic online Bregman bilevel optimizer.

    Per round: warm-started inner gradient descent, a hypergradient estimate
    stored into the window buffer, the zero-padded window average (optionally
    clipped on its squared norm), and a proximal step under the round's
    distance generator. In ``exact`` estimator mode the inner loop is replaced
    by the closed-form inner solve.
    """
    if len(stream) == 0:
        raise ValueError("empty stream")
    mode, est_fn = _resolve_estimator(config, estimator)
    alpha, eta, K = _resolve_steps(stream[0], config, "obbo")
    lam, beta = _initial_iterates(stream, config)
    phi_sched = _PhiSchedule(config, stream[0].d1)
    buffer = WindowBuffer(config.w)
    builder = _TraceBuilder()

    for instant in stream:
        t0 = time.perf_counter()
        if mode == "exact":
            if instant.inner_opt is None:
                raise ValueError("exact estimator requires the inner_opt oracle")
            beta_next = instant.inner_opt(lam)
            est = implicit_hypergradient(instant, lam, beta_next)
        else:
            solve = inner_gd(instant, lam, beta, eta, K)
            beta_next = solve.final
            est = est_fn(instant, lam, solve)
        _check_finite("hypergradient estimate", est, instant.t)
        buffer.push(est)
        q = _clip(window_average(buffer), config.clip_threshold)
        phi, diag = phi_sched.step_generator(q)
        lam_next = prox_step(q, lam, alpha, phi, config.regularizer, config.feasible)
        _check_finite("outer iterate", lam_next, instant.t)
        builder.add(
            lambdas=lam.copy(),
            betas=beta_next.copy(),
            estimates=est.copy(),
            smoothed=q.copy(),
            gen_proj_norm_sq=float(np.sum(((lam - lam_next) / alpha) ** 2)),
            phi_diags=diag.copy(),
            outer_loss=instant.f_value(lam, beta_next),
            inner_residual=float(
                np.linalg.norm(instant.grad_g_beta(lam, beta_next))
            ),
            step_ms=(time.perf_counter() - t0) * 1e3,
        )
        lam, beta = lam_next, beta_next
    return builder.build(lam, beta, alpha, eta, config.w, config)


def run_sobbo(
    stream: Stream, config: SobboConfig, rng: np.random.Generator
) -> RunTrace:
    """Stochastic online Bregman bilevel optimizer.

    Same skeleton as the deterministic loop with a batched stochastic inner
    solver and the randomized Neumann estimator evaluated at (lam_t, beta_{t+1}).
    """
    if len(stream) == 0:
        raise ValueError("empty stream")
    first = stream[0]
    if not isinstance(first, StochasticInstant):
        raise ValueError("stochastic optimizer requires a stochastic stream")
    alpha, eta, K = _resolve_steps(first, config, "sobbo")
    s = config.s if config.s is not None else config.w
    m = (
        config.m
        if config.m is not None
        else default_neumann_bound(config.w, first.mu_g, first.l_g1)
    )
    lam, beta = _initial_iterates(stream, config)
    phi_sched = _PhiSchedule(config, first.d1)
    buffer = WindowBuffer(config.w)
    builder = _TraceBuilder()

    for instant in stream:
        t0 = time.perf_counter()
        solve = inner_sgd(instant, lam, beta, eta, K, s, rng)
        beta_next = solve.final
        params = NeumannParams(m=m, l_g1=instant.l_g1)
        est = stochastic_hypergradient(instant, lam, beta_next, params, rng)
        _check_finite("hypergradient estimate", est, instant.t)
        buffer.push(est)
        q = _clip(window_average(buffer), config.clip_threshold)
        phi, diag = phi_sched.step_generator(q)
        lam_next = prox_step(q, lam, alpha, phi, config.regularizer, config.feasible)
        _check_finite("outer iterate", lam_next, instant.t)
        builder.add(
            lambdas=lam.copy(),
            betas=beta_next.copy(),
            estimates=est.copy(),
            smoothed=q.copy(),
            gen_proj_norm_sq=float(np.sum(((lam - lam_next) / alpha) ** 2)),
            phi_diags=diag.copy(),
            outer_loss=instant.f_value(lam, beta_next),
            inner_residual=float(
                np.linalg.norm(instant.grad_g_beta(lam, beta_next))
            ),
            step_ms=(time.perf_counter() - t0) * 1e3,
        )
        lam, beta = lam_next, beta_next
    return builder.build(lam, beta, alpha, eta, config.w, config)


def run_oagd(stream: Stream, config: ObboConfig) -> RunTrace:
    """Alternating gradient descent baseline with window re-evaluation.

    Keeps handles to the last w instants and re-evaluates their implicit
    hypergradient estimates at the current iterate pair every round (w oracle
    evaluations per step), then takes a Euclidean proximal step. Defaults to a
    single inner step with eta = 2 / (l_g1 + mu_g).
    """
    if len(stream) == 0:
        raise ValueError("empty stream")
    alpha, eta, K = _resolve_steps(stream[0], config, "oagd")
    lam, beta = _initial_iterates(stream, config)
    window: deque[ProblemInstant] = deque(maxlen=config.w)
    builder = _TraceBuilder()
    euclid = DistanceGenerator.euclidean()
    ones = np.ones(stream[0].d1)

    for instant in stream:
        t0 = time.perf_counter()
        solve = inner_gd(instant, lam, beta, eta, K)
        beta_next = solve.final
        window.append(instant)
        total = np.zeros(instant.d1)
        for past in window:
            total = total + implicit_hypergradient(past, lam, beta_next)
        q = _clip(total / config.w, config.clip_threshold)
        _check_finite("hypergradient estimate", q, instant.t)
        lam_next = prox_step(q, lam, alpha, euclid, config.regularizer, config.feasible)
        _check_finite("outer iterate", lam_next, instant.t)
        builder.add(
            lambdas=lam.copy(),
            betas=beta_next.copy(),
            estimates=implicit_hypergradient(instant, lam, beta_next),
            smoothed=q.copy(),
            gen_proj_norm_sq=float(np.sum(((lam - lam_next) / alpha) ** 2)),
            phi_diags=ones.copy(),
            outer_loss=instant.f_value(lam, beta_next),
            inner_residual=float(
                np.linalg.norm(instant.grad_g_beta(lam, beta_next))
            ),
            step_ms=(time.perf_counter() - t0) * 1e3,
        )
        lam, beta = lam_next, beta_next
    return builder.build(lam, beta, alpha, eta, config.w, config)


def run_sobow(stream: Stream, config: ObboConfig) -> RunTrace:
    """Window-averaging baseline: the Euclidean unconstrained reduction.

    Identical to ``run_obbo`` with the Euclidean generator, no regularizer,
    and the full space; the config is normalized to that restriction.
    """
    restricted = replace(
        config,
        phi_mode="euclidean",
        regularizer=Regularizer.zero(),
        feasible=FeasibleSet.full_space(),
    )
    return run_obbo(stream, restricted)


def run_single_level(
    stream: Stream, method: str, config: ObboConfig, momentum: float = 0.9
) -> RunTrace:
    """Adam or SGDM applied to the windowed hypergradient estimates.

    Uses the same inner solve / estimate / window pipeline as the bilevel
    loops, then takes the named first-order step and projects back onto the
    feasible set. Adam uses (0.9, 0.999, eps 1e-8); SGDM defaults to momentum
    0.9 (momentum 0 is plain gradient descent).
    """
    if method not in ("adam", "sgdm"):
        raise ValueError(f"unknown single-level method {method!r}")
    if len(stream) == 0:
        raise ValueError("empty stream")
    mode, est_fn = _resolve_estimator(config, None)
    alpha, eta, K = _resolve_steps(stream[0], config, "single")
    lam, beta = _initial_iterates(stream, config)
    buffer = WindowBuffer(config.w)
    builder = _TraceBuilder()
    d1 = stream[0].d1
    ones = np.ones(d1)

    beta1, beta2, eps_adam = 0.9, 0.999, 1e-8
    m_state = np.zeros(d1)
    v_state = np.zeros(d1)
    step_idx = 0

    for instant in stream:
        t0 = time.perf_counter()
        if mode == "exact":
            if instant.inner_opt is None:
                raise ValueError("exact estimator requires the inner_opt oracle")
            beta_next = instant.inner_opt(lam)
            est = implicit_hypergradient(instant, lam, beta_next)
        else:
            solve = inner_gd(instant, lam, beta, eta, K)
            beta_next = solve.final
            est = est_fn(instant, lam, solve)
        _check_finite("hypergradient estimate", est, instant.t)
        buffer.push(est)
        q = _clip(window_average(buffer), config.clip_threshold)
        step_idx += 1
        if method == "adam":
            m_state = beta1 * m_state + (1.0 - beta1) * q
            v_state = beta2 * v_state + (1.0 - beta2) * q**2
            m_hat = m_state / (1.0 - beta1**step_idx)
            v_hat = v_state / (1.0 - beta2**step_idx)
            delta = m_hat / (np.sqrt(v_hat) + eps_adam)
        else:
            m_state = momentum * m_state + q
            delta = m_state
        lam_next = config.feasible.project(lam - alpha * delta)
        _check_finite("outer iterate", lam_next, instant.t)
        builder.add(
            lambdas=lam.copy(),
            betas=beta_next.copy(),
            estimates=est.copy(),
            smoothed=q.copy(),
            gen_proj_norm_sq=float(np.sum(((lam - lam_next) / alpha) ** 2)),
            phi_diags=ones.copy(),
            outer_loss=instant.f_value(lam, beta_next),
            inner_residual=float(
                np.linalg.norm(instant.grad_g_beta(lam, beta_next))
            ),
            step_ms=(time.perf_counter() - t0) * 1e3,
        )
        lam, beta = lam_next, beta_next
    return builder.build(lam, beta, alpha, eta, config.w, config)
