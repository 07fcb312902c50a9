"""Synthetic time-varying quadratic bilevel stream with closed-form oracles.

Round t couples a strongly convex quadratic inner objective

    g_t(lam, beta) = (beta - A lam - b_t)' Q (beta - A lam - b_t) / 2

with an outer objective

    f_t(lam, beta) = ||beta - c_t||^2 / 2 + amp * sum_i cos(lam_i + phase_i).

The inner minimizer is beta_hat_t(lam) = A lam + b_t, so the induced outer
objective and its gradient are available in closed form, and drift in b_t and
c_t moves the comparator sequence at a configurable rate. Every quantity is a
deterministic function of the seed.
"""

from __future__ import annotations

import numpy as np

from .base import ProblemInstant, StochasticInstant, StreamConfig

__all__ = ["quadratic_instant", "quadratic_stream"]


def quadratic_instant(
    t: int,
    A,
    b,
    Q,
    c,
    amp: float = 0.0,
    phases=None,
    noise: tuple[float, float] = (0.0, 0.0),
    stochastic: bool = False,
) -> ProblemInstant:
    """Build a single quadratic bilevel instant from explicit data.

    A is (d2, d1), Q a symmetric positive definite (d2, d2) matrix, b and c
    are d2-vectors, and phases (optional) a d1-vector for the cosine term.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    c = np.atleast_1d(np.asarray(c, dtype=float))
    d2, d1 = A.shape
    if Q.shape != (d2, d2) or b.shape != (d2,) or c.shape != (d2,):
        raise ValueError("inconsistent quadratic instant dimensions")
    if not np.allclose(Q, Q.T):
        raise ValueError("Q must be symmetric")
    phases = np.zeros(d1) if phases is None else np.asarray(phases, dtype=float)
    if phases.shape != (d1,):
        raise ValueError("phases must have length d1")
    evals = np.linalg.eigvalsh(Q)
    mu_g, l_g1 = float(evals[0]), float(evals[-1])
    if mu_g <= 0:
        raise ValueError("Q must be positive definite")

    def residual(lam, beta):
        return beta - A @ lam - b

    def f_value(lam, beta):
        return 0.5 * float(np.sum((beta - c) ** 2)) + amp * float(
            np.sum(np.cos(lam + phases))
        )

    def grad_f_lambda(lam, beta):
        return -amp * np.sin(lam + phases)

    def grad_f_beta(lam, beta):
        return beta - c

    def g_value(lam, beta):
        r = residual(lam, beta)
        return 0.5 * float(r @ (Q @ r))

    def grad_g_beta(lam, beta):
        return Q @ residual(lam, beta)

    def hvp_g_lambdabeta(lam, beta, v):
        return -A.T @ (Q @ v)

    def hvp_g_betabeta(lam, beta, v):
        return Q @ v

    def inner_opt(lam):
        return A @ lam + b

    def exact_hypergradient(lam):
        return -amp * np.sin(lam + phases) + A.T @ (A @ lam + b - c)

    common = dict(
        t=t,
        d1=d1,
        d2=d2,
        f_value=f_value,
        grad_f_lambda=grad_f_lambda,
        grad_f_beta=grad_f_beta,
        g_value=g_value,
        grad_g_beta=grad_g_beta,
        hvp_g_lambdabeta=hvp_g_lambdabeta,
        hvp_g_betabeta=hvp_g_betabeta,
        mu_g=mu_g,
        l_g1=l_g1,
        inner_opt=inner_opt,
        exact_hypergradient=exact_hypergradient,
        l_f0=None,
        l_f1=max(1.0, amp),
        l_g2=0.0,
    )

    sigma_g, sigma_f = float(noise[0]), float(noise[1])
    if not stochastic and sigma_g == 0.0 and sigma_f == 0.0:
        return ProblemInstant(**common)

    # Additive Gaussian gradient noise with E||xi||^2 = sigma^2 per unit batch.
    # Zero-noise oracles skip drawing entirely so they reproduce the
    # deterministic path bit-for-bit.
    if sigma_g > 0:

        def grad_g_beta_sampled(lam, beta, s, rng):
            xi = rng.standard_normal(d2) * (sigma_g / np.sqrt(d2 * s))
            return grad_g_beta(lam, beta) + xi

    else:

        def grad_g_beta_sampled(lam, beta, s, rng):
            return grad_g_beta(lam, beta)

    if sigma_f > 0:

        def grad_f_lambda_sampled(lam, beta, rng):
            return grad_f_lambda(lam, beta) + rng.standard_normal(d1) * (
                sigma_f / np.sqrt(d1)
            )

        def grad_f_beta_sampled(lam, beta, rng):
            return grad_f_beta(lam, beta) + rng.standard_normal(d2) * (
                sigma_f / np.sqrt(d2)
            )

    else:

        def grad_f_lambda_sampled(lam, beta, rng):
            return grad_f_lambda(lam, beta)

        def grad_f_beta_sampled(lam, beta, rng):
            return grad_f_beta(lam, beta)

    def hvp_g_lambdabeta_sampled(lam, beta, v, rng):
        return hvp_g_lambdabeta(lam, beta, v)

    def hvp_g_betabeta_sampled(lam, beta, v, rng):
        return hvp_g_betabeta(lam, beta, v)

    return StochasticInstant(
        **common,
        grad_g_beta_sampled=grad_g_beta_sampled,
        grad_f_lambda_sampled=grad_f_lambda_sampled,
        grad_f_beta_sampled=grad_f_beta_sampled,
        hvp_g_lambdabeta_sampled=hvp_g_lambdabeta_sampled,
        hvp_g_betabeta_sampled=hvp_g_betabeta_sampled,
        sigma_g_beta=sigma_g,
        sigma_f=sigma_f,
    )


def _orthonormal_columns(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((rows, max(rows, cols))))
    return q[:, :cols]


def quadratic_stream(
    config: StreamConfig, stochastic: bool | None = None
) -> list[ProblemInstant]:
    """Generate the full sequence of quadratic instants for a config.

    The inner Hessian Q has spectrum geomspace(1, kappa_target, d2). The
    coupling A = V diag(s) uses orthonormal columns V and singular values
    s = sqrt(geomspace(1, kappa_target, r)), which makes the induced outer
    curvature A'A axis-aligned with the same spread; this is what lets the
    inner conditioning knob shape the outer geometry. Returns stochastic
    instants when any noise scale is positive (or when forced).
    """
    rng = np.random.default_rng(config.seed)
    d1, d2, T = config.d1, config.d2, config.T

    evals = np.geomspace(1.0, config.kappa_target, d2)
    R = _orthonormal_columns(rng, d2, d2)
    Q = R @ np.diag(evals) @ R.T
    Q = 0.5 * (Q + Q.T)

    r = min(d1, d2)
    V = _orthonormal_columns(rng, d2, r)
    s = np.sqrt(np.geomspace(1.0, config.kappa_target, r))
    A = np.zeros((d2, d1))
    A[:, :r] = V * s

    b = rng.standard_normal(d2)
    c = rng.standard_normal(d2)
    phases = rng.uniform(0.0, 2.0 * np.pi, d1)

    if stochastic is None:
        stochastic = max(config.noise) > 0

    instants: list[ProblemInstant] = []
    for t in range(1, T + 1):
        instants.append(
            quadratic_instant(
                t=t,
                A=A,
                b=b.copy(),
                Q=Q,
                c=c.copy(),
                amp=config.cos_amplitude,
                phases=phases,
                noise=config.noise,
                stochastic=stochastic,
            )
        )
        if t < T:
            step = config.drift.step_size(t)
            if step > 0:
                u = rng.standard_normal(d2)
                b = b + step * (u / np.linalg.norm(u))
                v = rng.standard_normal(d2)
                c = c + step * (v / np.linalg.norm(v))
    return instants
