"""Failure-probability estimators.

Everything funnels through the same smoothed, importance-weighted qMC sum:
the surrogate-based estimate of the expected failure probability (and its
negative log), the Thompson-path variant, and the hard-indicator ground-truth
evaluator used for scoring recommendations. All accumulation happens in
log-space so that probabilities far below 1e-8 neither underflow nor lose
their gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammainc, logsumexp

from .numerics import (
    SobolStream,
    gaussian_qmc,
    std_normal_log_cdf,
    std_normal_log_pdf,
)
from .surrogate import NUGGET, RFFPath, SurrogateState

_LOG_2PI = np.log(2.0 * np.pi)
_SQRT_PI = np.sqrt(np.pi)


@dataclass(frozen=True)
class PerturbationModel:
    """Additive diagonal-Gaussian perturbation: y = x + u, u ~ N(0, diag(sigmas^2))."""

    sigmas: np.ndarray  # (d,), design units

    def __post_init__(self):
        object.__setattr__(self, "sigmas", np.atleast_1d(np.asarray(self.sigmas, float)))
        if np.any(self.sigmas <= 0):
            raise ValueError("perturbation scales must be positive")

    @property
    def dim(self) -> int:
        return len(self.sigmas)

    def log_density(self, u) -> np.ndarray:
        u = np.atleast_2d(np.asarray(u, float))
        z = u / self.sigmas
        return -0.5 * np.sum(z**2, axis=1) - np.sum(np.log(self.sigmas)) - 0.5 * self.dim * _LOG_2PI

    def density(self, u) -> np.ndarray:
        return np.exp(self.log_density(u))

    def combine(self, x, u):
        """g(x, u) = x + u (fixed additive for all shipped problems)."""
        return np.asarray(x, float) + np.asarray(u, float)


@dataclass(frozen=True)
class ISSample:
    """qMC perturbation draws from N(0, tau^2 Sigma_u) with log p/q weights."""

    points: np.ndarray  # (N, d)
    log_weights: np.ndarray  # (N,)
    tau: float

    def __len__(self) -> int:
        return len(self.points)


def draw_is_sample(
    perturb: PerturbationModel, tau: float, n_u: int, stream: SobolStream
) -> ISSample:
    """Draw an importance sample of size ``n_u`` (a power of two for qMC
    balance) from the inflated distribution N(0, tau^2 Sigma_u)."""
    if tau < 1:
        raise ValueError("tau must be >= 1")
    if n_u & (n_u - 1):
        raise ValueError("n_u must be a power of two")
    u = gaussian_qmc(stream, n_u, np.zeros(perturb.dim), tau * perturb.sigmas)
    z = u / perturb.sigmas
    # log p(u) - log q(u) for the diagonal Gaussian pair
    log_w = perturb.dim * np.log(tau) + 0.5 * np.sum(z**2, axis=1) * (1.0 / tau**2 - 1.0)
    return ISSample(u, log_w, tau)


@dataclass(frozen=True)
class SmoothingConfig:
    """Bounds-smoothing width (design units) and the Thompson threshold width."""

    delta: float
    rho: float = 0.01

    def __post_init__(self):
        if self.delta < 0 or self.rho <= 0:
            raise ValueError("delta must be >= 0 and rho > 0")

    @classmethod
    def for_box(cls, bounds, rho: float = 0.01, delta: float | None = None):
        bounds = np.asarray(bounds, float)
        if delta is None:
            lmin = float(np.min(bounds[:, 1] - bounds[:, 0]))
            delta = min(0.05 * lmin, 0.1)
        return cls(delta, rho)


# -- bounds smoothing ------------------------------------------------------


def _ramp(z):
    """G(z) = P(1/2, z/(1-z)) on (0,1), clamped to {0,1} outside."""
    z = np.asarray(z, float)
    out = np.empty_like(z)
    out[z <= 0] = 0.0
    out[z >= 1] = 1.0
    mid = (z > 0) & (z < 1)
    zm = z[mid]
    out[mid] = gammainc(0.5, zm / (1.0 - zm))
    return out


def _ramp_grad(z):
    """dG/dz; zero outside (0,1), one-sided limits at the kinks."""
    z = np.asarray(z, float)
    out = np.zeros_like(z)
    mid = (z > 0) & (z < 1)
    zm = z[mid]
    w = zm / (1.0 - zm)
    # Gamma(1/2, 1) density at w, times dw/dz = (1-z)^-2
    out[mid] = np.exp(-w) / (np.sqrt(w) * _SQRT_PI) / (1.0 - zm) ** 2
    return out


def smooth_feasibility(points, bounds, delta: float) -> np.ndarray:
    """Smoothed box-membership indicator in [0, 1].

    Exactly zero on and outside the box boundary for any delta; delta = 0
    gives the hard indicator of the box interior.
    """
    return _feasibility_parts(points, bounds, delta, want_grad=False)[0]


def smooth_feasibility_with_grad(points, bounds, delta: float):
    """(iota, diota/dpoint) with shapes (m,), (m, d)."""
    return _feasibility_parts(points, bounds, delta, want_grad=True)


def _feasibility_parts(points, bounds, delta, want_grad):
    P = np.atleast_2d(np.asarray(points, float))
    bounds = np.asarray(bounds, float)
    a, b = bounds[:, 0], bounds[:, 1]
    if np.any(a >= b):
        raise ValueError("degenerate bounds")
    m, d = P.shape
    if delta == 0.0:
        inside = np.all((P > a) & (P < b), axis=1)
        iota = inside.astype(float)
        return (iota, np.zeros((m, d))) if want_grad else (iota, None)
    za = (P - a) / delta
    zb = (b - P) / delta
    Ga, Gb = _ramp(za), _ramp(zb)
    factors = Ga * Gb  # (m, d)
    iota = np.prod(factors, axis=1)
    if not want_grad:
        return iota, None
    grad = np.zeros((m, d))
    pos = iota > 0.0
    if np.any(pos):
        # d iota / d p_j = iota * (Ga'/Ga - Gb'/Gb) / delta, valid where all
        # factors are positive; gradient is defined as zero elsewhere.
        dGa, dGb = _ramp_grad(za[pos]), _ramp_grad(zb[pos])
        grad[pos] = iota[pos, None] * (dGa / Ga[pos] - dGb / Gb[pos]) / delta
    return iota, grad


# -- posterior failure probability at a single perturbed point -------------


def phi_n(state: SurrogateState, x, u, c: float, perturb: PerturbationModel):
    """Posterior probability that the perturbed design fails the threshold.

    Returns (phi, log_phi, log_one_minus_phi, degenerate). At the variance
    floor the value degenerates to the hard indicator of mean >= c.
    """
    y = perturb.combine(x, u)
    mean, var = state.posterior(np.atleast_2d(y))
    log_phi, log_cphi, _, deg = _phi_terms(state, mean, var, c)
    phi = np.exp(log_phi)
    if np.ndim(x) == 1 and np.ndim(u) == 1:
        return float(phi[0]), float(log_phi[0]), float(log_cphi[0]), bool(deg[0])
    return phi, log_phi, log_cphi, deg


def _phi_terms(state, mean, var, c):
    """(log Phi, log(1-Phi), h, degenerate-mask) with the floor fallback."""
    floor = NUGGET * state.transforms.output_std**2
    deg = var <= floor * (1.0 + 1e-6)
    sigma = np.sqrt(np.maximum(var, floor))
    h = (mean - c) / sigma
    log_phi = std_normal_log_cdf(h)
    log_cphi = std_normal_log_cdf(-h)
    if np.any(deg):
        hard = (mean >= c).astype(float)
        log_phi = np.where(deg, np.where(hard > 0, 0.0, -np.inf), log_phi)
        log_cphi = np.where(deg, np.where(hard > 0, -np.inf, 0.0), log_cphi)
    return log_phi, log_cphi, h, deg


# -- the smoothed, importance-weighted estimators --------------------------


@dataclass(frozen=True)
class PnEstimate:
    p: float
    log_p: float  # -inf when every term underflows
    r: float  # -log p; +inf sentinel when p == 0
    grad_log_p: np.ndarray | None  # d log p / d x

    @property
    def grad_r(self):
        return None if self.grad_log_p is None else -self.grad_log_p

    @property
    def grad_p(self):
        if self.grad_log_p is None:
            return None
        return np.exp(self.log_p) * self.grad_log_p


def _assemble(log_w, log_j, dlog_j, want_grad):
    n = len(log_w)
    terms = log_w + log_j
    log_p = float(logsumexp(terms) - np.log(n))
    if not np.isfinite(log_p):
        log_p = -np.inf
        grad = np.zeros(dlog_j.shape[1]) if want_grad else None
        return PnEstimate(0.0, -np.inf, np.inf, grad)
    grad = None
    if want_grad:
        soft = np.exp(terms - logsumexp(terms))
        grad = soft @ dlog_j
    return PnEstimate(float(np.exp(log_p)), log_p, -log_p, grad)


def _smoothed_log_terms(log_phi, h, iota, want_grad, pdf_log=None, degenerate=None):
    """log J for J = Phi(h)*iota + (1-iota), plus the two gradient ratios.

    Returns (log_j, ratio_h, ratio_iota): d log J = ratio_h * dh + ratio_iota
    * diota, with both ratios computed stably in the deep tail.
    """
    with np.errstate(divide="ignore"):
        log_iota = np.where(iota > 0.0, np.log(np.maximum(iota, 1e-300)), -np.inf)
        log_ciota = np.where(iota < 1.0, np.log1p(-np.minimum(iota, 1.0 - 1e-17)), -np.inf)
    log_j = np.logaddexp(log_phi + log_iota, log_ciota)
    if not want_grad:
        return log_j, None, None
    if pdf_log is None:
        pdf_log = std_normal_log_pdf(h)
    with np.errstate(invalid="ignore"):
        ratio_h = np.where(
            np.isfinite(log_phi + log_iota),
            np.exp(np.where(np.isfinite(log_iota), log_iota, 0.0) + pdf_log - log_j),
            0.0,
        )
    ratio_h = np.nan_to_num(ratio_h, nan=0.0)
    if degenerate is not None:
        ratio_h = np.where(degenerate, 0.0, ratio_h)
    j_safe = np.exp(np.maximum(log_j, -700.0))
    phi = np.exp(log_phi)
    ratio_iota = np.where(iota < 1.0, (phi - 1.0) / j_safe, 0.0)
    return log_j, ratio_h, ratio_iota


def estimate_pn(
    state: SurrogateState,
    x,
    is_sample: ISSample,
    bounds,
    smoothing: SmoothingConfig,
    c: float,
    want_grad: bool = True,
) -> PnEstimate:
    """Smoothed, importance-weighted qMC estimate of the expected failure
    probability at nominal design ``x``, with the exact gradient of its log.
    """
    x = np.asarray(x, float)
    y_pts = x + is_sample.points
    if want_grad:
        mean, var, dmean, dvar = state.posterior_with_grad(y_pts)
    else:
        mean, var = state.posterior(y_pts)
        dmean = dvar = None
    log_phi, _, h, deg = _phi_terms(state, mean, var, c)
    iota, diota = _feasibility_parts(y_pts, bounds, smoothing.delta, want_grad)
    log_j, ratio_h, ratio_iota = _smoothed_log_terms(
        log_phi, h, iota, want_grad, degenerate=deg
    )
    if not want_grad:
        return _assemble(is_sample.log_weights, log_j, None, False)
    sigma = np.sqrt(np.maximum(var, NUGGET * state.transforms.output_std**2))
    dsigma = dvar / (2.0 * sigma[:, None])
    with np.errstate(invalid="ignore"):
        dh = np.nan_to_num(
            (dmean - h[:, None] * dsigma) / sigma[:, None], nan=0.0
        )
    dlog_j = ratio_h[:, None] * dh + ratio_iota[:, None] * diota
    return _assemble(is_sample.log_weights, log_j, dlog_j, True)


def estimate_ptilde(
    path: RFFPath,
    x,
    is_sample: ISSample,
    bounds,
    smoothing: SmoothingConfig,
    c: float,
    want_grad: bool = True,
) -> PnEstimate:
    """Failure probability of a posterior sample path, with the threshold
    indicator smoothed by Phi((path - c) / rho)."""
    x = np.asarray(x, float)
    y_pts = x + is_sample.points
    if want_grad:
        vals, dvals = path.evaluate_with_grad(y_pts)
    else:
        vals, dvals = path.evaluate(y_pts), None
    h = (vals - c) / smoothing.rho
    log_phi = std_normal_log_cdf(h)
    iota, diota = _feasibility_parts(y_pts, bounds, smoothing.delta, want_grad)
    log_j, ratio_h, ratio_iota = _smoothed_log_terms(log_phi, h, iota, want_grad)
    if not want_grad:
        return _assemble(is_sample.log_weights, log_j, None, False)
    dh = dvals / smoothing.rho
    dlog_j = ratio_h[:, None] * dh + ratio_iota[:, None] * diota
    return _assemble(is_sample.log_weights, log_j, dlog_j, True)


def estimate_pn_batch(
    state: SurrogateState,
    xs: np.ndarray,
    is_sample: ISSample,
    bounds,
    smoothing: SmoothingConfig,
    c: float,
) -> np.ndarray:
    """log P_hat at each of a batch of nominal designs (no gradients).

    Vectorized across candidates; equal to looping :func:`estimate_pn`.
    """
    xs = np.atleast_2d(np.asarray(xs, float))
    m, d = xs.shape
    n_u = len(is_sample)
    pts = (xs[:, None, :] + is_sample.points[None, :, :]).reshape(m * n_u, d)
    mean, var = state.posterior(pts)
    log_phi, _, _, _ = _phi_terms(state, mean, var, c)
    iota, _ = _feasibility_parts(pts, bounds, smoothing.delta, False)
    log_j, _, _ = _smoothed_log_terms(log_phi, None, iota, False)
    terms = (is_sample.log_weights[None, :] + log_j.reshape(m, n_u))
    return logsumexp(terms, axis=1) - np.log(n_u)


def evaluate_true_failure(
    problem,
    x,
    n_u: int = 2**20,
    tau: float | None = None,
    stream: SobolStream | None = None,
    seed: int = 20_20,
) -> float:
    """Ground-truth scoring estimator: importance-weighted qMC with hard
    indicators on the true function. ``problem`` provides evaluate_unchecked,
    bounds, threshold and perturbation model."""
    perturb = problem.perturb
    if tau is None:
        tau = problem.default_tau
    if stream is None:
        stream = SobolStream(2 * ((perturb.dim + 1) // 2), scramble_seed=seed)
    sample = draw_is_sample(perturb, tau, n_u, stream)
    x = np.asarray(x, float)
    y_pts = x + sample.points
    bounds = np.asarray(problem.bounds, float)
    inside = np.all((y_pts >= bounds[:, 0]) & (y_pts <= bounds[:, 1]), axis=1)
    fail = ~inside
    if problem.c == -np.inf:
        fail = np.ones_like(fail)
    elif np.any(inside) and np.isfinite(problem.c):
        fv = problem.evaluate_unchecked(y_pts[inside])
        fail[inside] = fv >= problem.c
    w = np.exp(sample.log_weights)
    return float(np.mean(w * fail))
