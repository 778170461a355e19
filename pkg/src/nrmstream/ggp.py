"""Generalized gamma process (GGP) prior mathematics.

The prior over unnormalized cluster masses is a generalized gamma process
with Levy density

    a / Gamma(1 - sigma) * s^(-sigma - 1) * exp(-tau * s),   s > 0,

normalized to a random probability measure.  sigma = 0 recovers the
Dirichlet process, sigma = 0.5 the normalized inverse-Gaussian process.
Inference never touches the atom masses directly; everything is expressed
through the Laplace exponent, the log moments of the exponentially tilted
Levy measure, and a variational density over an auxiliary tilt variable
whose mode feeds the cluster predictive weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError

__all__ = [
    "NggpParams",
    "AuxiliaryMode",
    "log_tilted_moment",
    "laplace_exponent",
    "log_aux_density",
    "aux_mode",
    "predictive_weights",
    "expected_clusters_update",
]


@dataclass(frozen=True)
class NggpParams:
    """Hyperparameters of the normalized generalized gamma process.

    a is the overall mass parameter, sigma the stability index in [0, 1),
    tau the exponential tilt.  The gamma-process case sigma = 0 requires
    tau > 0 so the Laplace exponent stays finite.
    """

    a: float
    sigma: float = 0.0
    tau: float = 1.0

    def __post_init__(self):
        if not (self.a > 0 and math.isfinite(self.a)):
            raise ValueError(f"mass parameter a must be positive, got {self.a}")
        if not (0.0 <= self.sigma < 1.0):
            raise ValueError(f"stability index sigma must lie in [0, 1), got {self.sigma}")
        if self.tau < 0 or not math.isfinite(self.tau):
            raise ValueError(f"tilt parameter tau must be non-negative, got {self.tau}")
        if self.sigma == 0.0 and self.tau <= 0.0:
            raise ValueError("sigma = 0 requires tau > 0")

    @property
    def is_dp(self) -> bool:
        return self.sigma == 0.0


@dataclass(frozen=True)
class AuxiliaryMode:
    """Mode of the variational density over the auxiliary tilt variable.

    n_obs is the number of observations the density conditioned on and
    expected_k the expected cluster count used in its exponent.
    """

    u_hat: float
    n_obs: int
    expected_k: float


def log_tilted_moment(m: float, u: float, params: NggpParams) -> float:
    """Log of the m-th moment of the exponentially tilted Levy measure.

    The moment integral(s^m * exp(-u s) * levy(ds)) has the closed form
    a * Gamma(m - sigma) / Gamma(1 - sigma) / (u + tau)^(m - sigma), which
    requires m > sigma and u + tau > 0.  Returned in log space because the
    gamma factor overflows for large m.
    """
    if m <= params.sigma:
        raise ValueError(f"moment order m={m} must exceed sigma={params.sigma}")
    shifted = u + params.tau
    if shifted <= 0:
        raise ValueError(f"u + tau must be positive, got {shifted}")
    return (
        math.log(params.a)
        + math.lgamma(m - params.sigma)
        - math.lgamma(1.0 - params.sigma)
        - (m - params.sigma) * math.log(shifted)
    )


def laplace_exponent(u: float, params: NggpParams) -> float:
    """Laplace exponent integral((1 - exp(-u s)) levy(ds)) of the GGP.

    Closed forms: (a / sigma) * ((u + tau)^sigma - tau^sigma) for
    sigma > 0 and a * log(1 + u / tau) for the gamma process.  Zero at
    u = 0, strictly increasing and concave.
    """
    if u < 0:
        raise ValueError(f"u must be non-negative, got {u}")
    if params.sigma == 0.0:
        return params.a * math.log1p(u / params.tau)
    return (params.a / params.sigma) * (
        (u + params.tau) ** params.sigma - params.tau ** params.sigma
    )


def log_aux_density(u: float, n_obs: int, expected_k: float, params: NggpParams) -> float:
    """Unnormalized log density of the variational auxiliary distribution.

    For n_obs past observations with expected cluster count E[K]:

        log q(u) = n_obs * log u - (n_obs - a * E[K]) * log(u + tau)
                   - laplace_exponent(u)

    The density is unimodal in log u.  For sigma = 0 the tilt term is the
    gamma-process Laplace exponent; the streaming DP path never consumes
    the auxiliary variable, so that branch only serves diagnostics.
    """
    if u <= 0:
        raise ValueError(f"u must be positive, got {u}")
    if n_obs < 1:
        raise ValueError(f"n_obs must be at least 1, got {n_obs}")
    return (
        n_obs * math.log(u)
        - (n_obs - params.a * expected_k) * math.log(u + params.tau)
        - laplace_exponent(u, params)
    )


def _aux_grad_v(v: float, n_obs: float, expected_k: float, params: NggpParams):
    """First and second derivative of log_aux_density in v = log u.

    Computed through log-space intermediates so brackets as wide as
    v in [-30, 1500] stay finite: with L = log(u + tau) and w = u/(u+tau),

        g'(v)  = n - (n - a E[K]) w - a exp(v + (sigma - 1) L)
        g''(v) = -(n - a E[K]) w (1 - w)
                 - a exp(v + (sigma - 2) L) (tau + sigma u)
    """
    a, sigma, tau = params.a, params.sigma, params.tau
    if tau > 0:
        log_shift = np.logaddexp(v, math.log(tau))
    else:
        log_shift = v
    w = math.exp(v - log_shift)
    tilt = a * math.exp(v + (sigma - 1.0) * log_shift)
    grad = n_obs - (n_obs - a * expected_k) * w - tilt
    # tau + sigma*u in log space: u itself may overflow a float
    log_tail = math.log(sigma) + v if sigma > 0 else -math.inf
    if tau > 0:
        log_tau_sig_u = np.logaddexp(math.log(tau), log_tail)
    else:
        log_tau_sig_u = log_tail
    curv = -(n_obs - a * expected_k) * w * (1.0 - w) - a * math.exp(
        v + (sigma - 2.0) * log_shift + log_tau_sig_u
    )
    return grad, curv


_BRACKET_LO = -30.0
_BRACKET_HI = 30.0
_BRACKET_MAX = 1500.0


def aux_mode(
    n_obs: int,
    expected_k: float,
    params: NggpParams,
    *,
    grad_tol: float = 1e-8,
    max_iter: int = 200,
) -> AuxiliaryMode:
    """Maximize the auxiliary variational density over u.

    Works in v = log u with safeguarded Newton steps: the bracket
    [lo, hi] always satisfies g'(lo) > 0 > g'(hi) and a bisection step
    replaces any Newton step that leaves it.  The initial bracket
    [-30, 30] is widened to the right when the mode lies beyond it
    (small sigma pushes the mode to u ~ (n/a)^(1/sigma)).

    Raises ConvergenceError carrying the last iterate if the gradient
    has not dropped below grad_tol after max_iter iterations.
    """
    if n_obs < 1:
        raise ValueError(f"n_obs must be at least 1, got {n_obs}")
    if expected_k < 0:
        raise ValueError(f"expected_k must be non-negative, got {expected_k}")
    if params.sigma <= 0.0:
        raise ValueError("auxiliary mode is only defined for sigma > 0")

    lo, hi = _BRACKET_LO, _BRACKET_HI
    glo, _ = _aux_grad_v(lo, n_obs, expected_k, params)
    if glo <= 0.0:
        # mode below exp(-30): only reachable through pathological inputs
        raise ConvergenceError(
            f"auxiliary density increasing nowhere above u=exp({lo})",
            last_iterate=math.exp(lo),
        )
    ghi, _ = _aux_grad_v(hi, n_obs, expected_k, params)
    while ghi > 0.0:
        hi += 30.0
        if hi > _BRACKET_MAX:
            raise ConvergenceError(
                "failed to bracket the auxiliary mode",
                last_iterate=math.exp(_BRACKET_MAX),
            )
        ghi, _ = _aux_grad_v(hi, n_obs, expected_k, params)

    v = 0.5 * (lo + hi)
    for _ in range(max_iter):
        grad, curv = _aux_grad_v(v, n_obs, expected_k, params)
        if abs(grad) < grad_tol:
            return AuxiliaryMode(u_hat=math.exp(v), n_obs=n_obs, expected_k=expected_k)
        if grad > 0.0:
            lo = v
        else:
            hi = v
        step_ok = math.isfinite(grad) and math.isfinite(curv) and curv < 0.0
        if step_ok:
            v_new = v - grad / curv
            if not (lo < v_new < hi):
                step_ok = False
        if not step_ok:
            v_new = 0.5 * (lo + hi)
        if v_new == v:
            # bracket collapsed to machine resolution
            break
        v = v_new

    raise ConvergenceError(
        f"auxiliary mode search did not reach |grad| < {grad_tol}",
        last_iterate=math.exp(v),
    )


def predictive_weights(masses, aux: AuxiliaryMode | None, params: NggpParams) -> np.ndarray:
    """Predictive probability over K instantiated clusters plus a novel one.

    Instantiated cluster k gets weight max(S_k - sigma, 0) where S_k is
    its accumulated soft-assignment mass; the novel slot gets
    a * (u_hat + tau)^sigma.  With sigma = 0 this is exactly the Chinese
    restaurant rule (S_k for old, a for new) and the auxiliary mode is
    not needed.  Returns the normalized length-(K+1) vector; entries for
    clusters with S_k <= sigma are exactly zero, and the novel entry is
    always strictly positive (so the all-clipped case yields mass 1 on
    the novel slot rather than an error).
    """
    s = np.asarray(masses, dtype=float)
    if s.ndim != 1:
        raise ValueError("masses must be a 1-d sequence")
    if np.any(s < 0):
        raise ValueError("cluster masses must be non-negative")
    old = np.maximum(s - params.sigma, 0.0)
    if aux is not None:
        novel = params.a * (aux.u_hat + params.tau) ** params.sigma
    elif params.sigma == 0.0:
        novel = params.a
    else:
        raise ValueError("auxiliary mode required when sigma > 0")
    weights = np.append(old, novel)
    return weights / weights.sum()


def expected_clusters_update(unseen_products, assignment):
    """Fold one soft assignment into the never-assigned products.

    unseen_products[j] tracks prod_i (1 - q_i(j)) over all observations i
    seen so far; the expected number of instantiated clusters is then
    K - sum_j product_j, recoverable without storing past assignments.
    Returns (updated products, expected cluster count).
    """
    p = np.asarray(unseen_products, dtype=float)
    q = np.asarray(assignment, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch: {p.shape} products vs {q.shape} assignment")
    updated = p * (1.0 - q)
    return updated, float(len(updated) - updated.sum())
