"""Inner-problem solvers and hypergradient estimators.

Three estimators are provided: the exact implicit gradient through the inner
optimum (requires the inner-solution oracle), backpropagation through the
unrolled inner gradient-descent trajectory, and a randomized truncated
Neumann-series estimate for stochastic oracles. All second-order information
enters through Hessian-vector products; no Hessian is materialized except in
the desk-scale direct solves of the implicit form.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .problems.base import ProblemInstant, StochasticInstant

__all__ = [
    "DivergenceError",
    "InnerSolveResult",
    "NeumannParams",
    "WindowBuffer",
    "inner_gd",
    "inner_sgd",
    "implicit_hypergradient",
    "exact_hypergradient",
    "itd_hypergradient",
    "stochastic_hypergradient",
    "window_average",
]


class DivergenceError(RuntimeError):
    """Raised when iterates stop being finite (step size condition violated)."""


@dataclass
class InnerSolveResult:
    """Full inner trajectory omega^0 .. omega^K plus the step size used."""

    trajectory: np.ndarray
    eta: float
    K: int

    @property
    def final(self) -> np.ndarray:
        return self.trajectory[-1]


def inner_gd(
    instant: ProblemInstant, lam, beta0, eta: float, K: int
) -> InnerSolveResult:
    """K gradient-descent steps on g_t(lam, .) from the warm start beta0."""
    lam = np.asarray(lam, dtype=float)
    beta0 = np.asarray(beta0, dtype=float)
    if eta <= 0:
        raise ValueError("inner step size must be positive")
    if K < 1:
        raise ValueError("inner iteration count must be at least 1")
    traj = np.empty((K + 1, beta0.size))
    traj[0] = beta0
    omega = beta0
    for k in range(1, K + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            omega = omega - eta * instant.grad_g_beta(lam, omega)
        if not np.all(np.isfinite(omega)):
            raise DivergenceError(
                f"inner iterate diverged at k={k} (t={instant.t}); "
                f"eta={eta} likely violates the step size condition"
            )
        traj[k] = omega
    return InnerSolveResult(trajectory=traj, eta=eta, K=K)


def inner_sgd(
    instant: StochasticInstant,
    lam,
    beta0,
    eta: float,
    K: int,
    s: int,
    rng: np.random.Generator,
) -> InnerSolveResult:
    """K stochastic gradient steps with batch size s per step."""
    lam = np.asarray(lam, dtype=float)
    beta0 = np.asarray(beta0, dtype=float)
    if eta <= 0:
        raise ValueError("inner step size must be positive")
    if K < 1 or s < 1:
        raise ValueError("K and s must be at least 1")
    traj = np.empty((K + 1, beta0.size))
    traj[0] = beta0
    omega = beta0
    for k in range(1, K + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            omega = omega - eta * instant.grad_g_beta_sampled(lam, omega, s, rng)
        if not np.all(np.isfinite(omega)):
            raise DivergenceError(
                f"inner iterate diverged at k={k} (t={instant.t}); "
                f"eta={eta} likely violates the step size condition"
            )
        traj[k] = omega
    return InnerSolveResult(trajectory=traj, eta=eta, K=K)


def _materialize_inner_hessian(instant: ProblemInstant, lam, beta) -> np.ndarray:
    d2 = instant.d2
    H = np.empty((d2, d2))
    e = np.zeros(d2)
    for j in range(d2):
        e[j] = 1.0
        H[:, j] = instant.hvp_g_betabeta(lam, beta, e)
        e[j] = 0.0
    return H


def implicit_hypergradient(instant: ProblemInstant, lam, beta) -> np.ndarray:
    """Implicit-form estimate at an arbitrary pair (lam, beta).

    Solves the inner Hessian system directly (desk-scale dimensions) and
    applies the mixed HVP; equals the true hypergradient when beta is the
    inner optimum.
    """
    lam = np.asarray(lam, dtype=float)
    beta = np.asarray(beta, dtype=float)
    H = _materialize_inner_hessian(instant, lam, beta)
    v = np.linalg.solve(H, instant.grad_f_beta(lam, beta))
    return instant.grad_f_lambda(lam, beta) - instant.hvp_g_lambdabeta(lam, beta, v)


def exact_hypergradient(instant: ProblemInstant, lam) -> np.ndarray:
    """True gradient of the induced outer objective at lam.

    Requires the inner-solution oracle; the Hessian solve is guaranteed
    nonsingular by the strong convexity of g.
    """
    if instant.inner_opt is None:
        raise ValueError("instant provides no inner_opt oracle")
    lam = np.asarray(lam, dtype=float)
    beta_hat = instant.inner_opt(lam)
    return implicit_hypergradient(instant, lam, beta_hat)


def itd_hypergradient(
    instant: ProblemInstant, lam, solve: InnerSolveResult
) -> np.ndarray:
    """Differentiate lam -> f(lam, omega^K(lam)) through the unrolled loop.

    Runs the reverse pass with HVPs on a single propagated vector; for each k
    the cross HVP at omega^k is accumulated, then the vector is multiplied by
    (I - eta * H_betabeta(lam, omega^k)). Algebraically identical to the
    matrix-product form of the unrolled derivative.
    """
    lam = np.asarray(lam, dtype=float)
    traj = solve.trajectory
    if traj.shape[0] != solve.K + 1:
        raise ValueError("trajectory length does not match K")
    eta, K = solve.eta, solve.K
    omega_K = traj[K]
    v = instant.grad_f_beta(lam, omega_K)
    acc = np.zeros(instant.d1)
    for k in range(K - 1, -1, -1):
        omega_k = traj[k]
        acc += instant.hvp_g_lambdabeta(lam, omega_k, v)
        if k > 0:
            v = v - eta * instant.hvp_g_betabeta(lam, omega_k, v)
    return instant.grad_f_lambda(lam, omega_K) - eta * acc


@dataclass(frozen=True)
class NeumannParams:
    """Truncation bound m and the curvature scale used by the Neumann series."""

    m: int
    l_g1: float

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("Neumann sample bound m must be at least 1")
        if self.l_g1 <= 0:
            raise ValueError("l_g1 must be positive")


def stochastic_hypergradient(
    instant: StochasticInstant,
    lam,
    beta,
    params: NeumannParams,
    rng: np.random.Generator,
) -> np.ndarray:
    """Randomized truncated Neumann-series estimate at (lam, beta).

    Draws a truncation level uniformly from {0, ..., m-1}, propagates the
    sampled outer gradient through that many (I - H/l_g1) factors, scales by
    m / l_g1, and applies the sampled mixed HVP. The empty product (level 0)
    is the identity.
    """
    lam = np.asarray(lam, dtype=float)
    beta = np.asarray(beta, dtype=float)
    m, ell = params.m, params.l_g1
    m_trunc = int(rng.integers(m))
    v = instant.grad_f_beta_sampled(lam, beta, rng)
    inv_ell = 1.0 / ell
    for _ in range(m_trunc):
        v = v - inv_ell * instant.hvp_g_betabeta_sampled(lam, beta, v, rng)
    v = (m * inv_ell) * v
    correction = instant.hvp_g_lambdabeta_sampled(lam, beta, v, rng)
    return instant.grad_f_lambda_sampled(lam, beta, rng) - correction


class WindowBuffer:
    """Ring buffer of the w most recent hypergradient estimates.

    The average always divides by the capacity w: early rounds with fewer than
    w entries are implicitly zero-padded, matching the convention that
    objectives before the start of the stream are zero.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("window capacity must be at least 1")
        self.capacity = capacity
        self._entries: deque[np.ndarray] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._entries)

    def push(self, estimate) -> None:
        estimate = np.asarray(estimate, dtype=float)
        self._entries.append(estimate)

    def average(self) -> np.ndarray:
        if not self._entries:
            raise ValueError("window buffer is empty")
        total = np.zeros_like(self._entries[0])
        for e in self._entries:
            total = total + e
        return total / self.capacity


def window_average(buffer: WindowBuffer) -> np.ndarray:
    """Zero-padded window mean of the stored estimates."""
    return buffer.average()
