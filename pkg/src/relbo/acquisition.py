"""Point-selection strategies for the reliability-maximization loop.

Seven strategies are provided: Thompson sampling over nominal designs plus a
maximal-variance perturbation (ts_mr), the knowledge gradient on the negative
log failure probability in discrete and one-shot forms (kg_mr_discrete,
kg_mr_oneshot), a four-rule limit-state cascade (hc), expected-feasibility
maximization (egra), expected improvement (ei) and Sobol' space filling
(sobol). Each maps a fitted surrogate plus problem context to the next query
point inside the feasible box.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .numerics import (
    SobolStream,
    gaussian_qmc,
    std_normal_cdf,
    std_normal_log_cdf,
    std_normal_log_pdf,
    std_normal_pdf,
)
from .optimizers import (
    BoundedObjective,
    RestartPlan,
    boltzmann_restarts,
    direct_maximize,
    multistart_qn,
)
from .reliability import (
    ISSample,
    SmoothingConfig,
    _feasibility_parts,
    _phi_terms,
    _smoothed_log_terms,
    draw_is_sample,
    estimate_pn,
    estimate_pn_batch,
    estimate_ptilde,
)
from scipy.linalg import cho_solve

from .surrogate import NUGGET, SurrogateState, matern52

log = logging.getLogger(__name__)

KINDS = ("ts_mr", "kg_mr_discrete", "kg_mr_oneshot", "hc", "egra", "ei", "sobol")

# Boundary for clamping standardized deviations so log CDFs stay finite.
_H_CLAMP = 37.0


@dataclass
class AcquisitionSpec:
    """Strategy choice plus the shared sample-size and smoothing knobs."""

    kind: str
    n_u: int = 64  # qMC importance-sample size
    n_v: int = 64  # fantasy count for the knowledge gradient
    n_x: int = 512  # discretization size
    tau: float = 3.0  # IS scale (1 in the non-extreme regime)
    rho: float = 0.01  # Thompson threshold-smoothing width
    kappa: float = 2.0  # expected-feasibility band width
    eps_s: float | None = None  # cascade minimum sample separation
    delta_band: float | None = None  # cascade limit-state band half-width
    use_log: bool = True  # value function -log P (False: raw P)
    n_raw: int | None = None  # candidate scan size (None: 512 if d<=2 else 1024)
    n_restarts: int = 10
    direct_budget_per_dim: int = 200

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown acquisition kind {self.kind!r}")
        if min(self.n_u, self.n_v, self.n_x, self.n_restarts) < 1:
            raise ValueError("sample sizes must be positive")
        if self.tau < 1:
            raise ValueError("tau must be >= 1")

    def raw_count(self, dim: int) -> int:
        if self.n_raw is not None:
            return self.n_raw
        return 512 if dim <= 2 else 1024


@dataclass
class IterationStreams:
    """Per-iteration randomness: independent qMC streams and scalar seeds.

    All derived deterministically from one integer, so a BO iteration is
    reproducible from (seed, dimension) alone.
    """

    u_stream: SobolStream
    z_stream: SobolStream
    x_stream: SobolStream
    path_seed: int
    restart_seed: int

    @classmethod
    def from_seed(cls, seed: int, dim: int) -> "IterationStreams":
        children = np.random.SeedSequence(seed).spawn(5)
        s = [int(c.generate_state(1)[0]) for c in children]
        u_dim = 2 * ((dim + 1) // 2)
        return cls(
            u_stream=SobolStream(u_dim, scramble_seed=s[0]),
            z_stream=SobolStream(2, scramble_seed=s[1]),
            x_stream=SobolStream(dim, scramble_seed=s[2]),
            path_seed=s[3],
            restart_seed=s[4],
        )


@dataclass
class AcqDiagnostics:
    value: float = np.nan  # acquisition value at the selected point
    rule: str = ""  # cascade rule or strategy label
    nominal: np.ndarray | None = None  # x_{n+1} for the Thompson strategy
    perturbation: np.ndarray | None = None  # u_{n+1} for the Thompson strategy


def _scale_to_box(unit_pts: np.ndarray, bounds: np.ndarray) -> np.ndarray:
    bounds = np.asarray(bounds, float)
    return bounds[:, 0] + unit_pts * (bounds[:, 1] - bounds[:, 0])


def _phi_ratio(log_pdf, log_cdf):
    """phi(h)/Phi(h) (or the complement) computed stably via log values."""
    out = np.asarray(log_pdf - log_cdf, float)
    return np.exp(np.clip(out, None, 700.0))


# -- Thompson sampling -----------------------------------------------------


def _ptilde_log_batch(path, xs, is_sample, bounds, smoothing, c):
    """log of the path failure probability at a batch of nominal designs."""
    xs = np.atleast_2d(np.asarray(xs, float))
    m, d = xs.shape
    n_u = len(is_sample)
    pts = (xs[:, None, :] + is_sample.points[None, :, :]).reshape(m * n_u, d)
    h = (path.evaluate(pts) - c) / smoothing.rho
    log_phi = std_normal_log_cdf(h)
    iota, _ = _feasibility_parts(pts, bounds, smoothing.delta, False)
    log_j, _, _ = _smoothed_log_terms(log_phi, h, iota, False)
    terms = is_sample.log_weights[None, :] + log_j.reshape(m, n_u)
    return logsumexp(terms, axis=1) - np.log(n_u)


def ts_mr_next(state, problem, spec, streams):
    """Thompson step: optimize a posterior sample for the most reliable
    nominal design, then probe it with the most informative perturbation."""
    bounds = np.asarray(problem.bounds, float)
    d = bounds.shape[0]
    smoothing = SmoothingConfig.for_box(bounds, rho=spec.rho)
    path = state.draw_rff_path(1024, seed=streams.path_seed)
    is_sample = draw_is_sample(problem.perturb, spec.tau, spec.n_u, streams.u_stream)

    # Stage 1: nominal design minimizing the path's log failure probability.
    cands = _scale_to_box(streams.x_stream.take(spec.raw_count(d)), bounds)
    cand_vals = -_ptilde_log_batch(path, cands, is_sample, bounds, smoothing, problem.c)
    plan = RestartPlan(len(cands), spec.n_restarts)
    starts = boltzmann_restarts(cands, cand_vals, plan, streams.restart_seed)

    def x_objective(x):
        est = estimate_ptilde(path, x, is_sample, bounds, smoothing, problem.c)
        return est.log_p, est.grad_log_p

    x_next, _, _ = multistart_qn(
        BoundedObjective(d, bounds, x_objective, sense="min"), starts
    )

    # Stage 2: perturbation maximizing density times indicator variance,
    # constrained so the perturbed design stays in the box.
    u_bounds = np.column_stack([bounds[:, 0] - x_next, bounds[:, 1] - x_next])
    sigmas = problem.perturb.sigmas

    def u_objective(u):
        y = x_next + u
        mean, var, dmean, dvar = state.posterior_with_grad(y[None, :])
        floor = NUGGET * state.transforms.output_std**2
        sd = np.sqrt(max(var[0], floor))
        h = np.clip((mean[0] - problem.c) / sd, -_H_CLAMP, _H_CLAMP)
        dh = (dmean[0] - h * dvar[0] / (2.0 * sd**2) * sd) / sd
        lp = std_normal_log_pdf(h)
        lphi = std_normal_log_cdf(h)
        lcphi = std_normal_log_cdf(-h)
        val = problem.perturb.log_density(u[None, :])[0] + lphi + lcphi
        grad = -u / sigmas**2 + (_phi_ratio(lp, lphi) - _phi_ratio(lp, lcphi)) * dh
        return float(val), grad

    u_cands = [np.zeros(d)]
    u_cands.append(
        np.clip(
            gaussian_qmc(streams.u_stream, 64, np.zeros(d), sigmas)[:, :d],
            u_bounds[:, 0],
            u_bounds[:, 1],
        )
    )
    u_cands.append(_scale_to_box(streams.x_stream.take(64), u_bounds))
    u_cands = np.vstack([np.atleast_2d(c) for c in u_cands])
    u_vals = np.array([u_objective(u)[0] for u in u_cands])
    u_starts = boltzmann_restarts(
        u_cands, u_vals, RestartPlan(len(u_cands), spec.n_restarts), streams.restart_seed + 1
    )
    u_next, u_val, _ = multistart_qn(
        BoundedObjective(d, u_bounds, u_objective, sense="max"), u_starts
    )

    y = problem.perturb.combine(x_next, u_next)
    y = np.clip(y, bounds[:, 0], bounds[:, 1])
    return y, AcqDiagnostics(
        value=float(u_val), rule="ts_mr", nominal=x_next, perturbation=u_next
    )


# -- knowledge gradient ----------------------------------------------------


def _value_from_log_p(log_p, use_log):
    """The value function R from log P: -log P, or -P when the logarithm is
    dropped in the non-extreme regime."""
    if use_log:
        return -log_p
    return -np.exp(log_p)


def kg_discrete_value(
    state, y, spec, x_disc, z_sample, is_sample, bounds, c, baseline=None
):
    """One-step expected gain in the best achievable value over a finite
    design grid, from a hypothetical observation at ``y``.

    Reference route: conditions the surrogate on each fantasy observation and
    re-estimates the failure probability over the grid. The bounds smoothing
    is zero here (the grid is fixed, no gradients needed).
    """
    smoothing = SmoothingConfig(0.0, spec.rho)
    if baseline is None:
        base_log = estimate_pn_batch(state, x_disc, is_sample, bounds, smoothing, c)
        baseline = float(np.max(_value_from_log_p(base_log, spec.use_log)))
    total = 0.0
    for z in z_sample:
        fant = state.fantasize(y, float(z))
        log_p = estimate_pn_batch(fant, x_disc, is_sample, bounds, smoothing, c)
        best = np.max(_value_from_log_p(log_p, spec.use_log))
        if best == np.inf:
            return np.inf
        total += best
    return total / len(z_sample) - baseline


class _FantasyScan:
    """Shared per-iteration workspace for evaluating the discrete knowledge
    gradient at many candidate observation sites.

    The perturbed design grid (every grid design plus every perturbation) is
    candidate-independent, so its base posterior is computed once; each
    candidate then only needs a cross-covariance vector and the closed-form
    rank-one fantasy update of the mean and variance.
    """

    def __init__(self, state, x_disc, z_sample, is_sample, bounds, c, spec):
        self.state = state
        self.z = np.asarray(z_sample, float)
        self.is_sample = is_sample
        self.bounds = np.asarray(bounds, float)
        self.c = c
        self.spec = spec
        self.x_disc = np.atleast_2d(np.asarray(x_disc, float))
        self.n_x = len(self.x_disc)
        self.n_u = len(is_sample)
        pts = (
            self.x_disc[:, None, :] + is_sample.points[None, :, :]
        ).reshape(self.n_x * self.n_u, -1)
        self.pts = pts
        self.mean, self.var = state.posterior(pts)
        self.floor = NUGGET * state.transforms.output_std**2
        # Candidate-independent pieces of the posterior cross-covariance
        # k_n(t, y): the train-against-grid kernel block is fixed.
        self._pts_n = state.transforms.x_to_unit(pts)
        self._kt = (
            matern52(self._pts_n, state.Xn, state.hyperparams)
            if state.n
            else np.zeros((len(pts), 0))
        )
        # delta = 0: hard interior indicator; outside points contribute J = 1.
        iota, _ = _feasibility_parts(pts, self.bounds, 0.0, False)
        self.inside = iota > 0.0
        smoothing = SmoothingConfig(0.0, spec.rho)
        base_log = estimate_pn_batch(state, self.x_disc, is_sample, bounds, smoothing, c)
        self.baseline = float(np.max(_value_from_log_p(base_log, spec.use_log)))

    def _cross_cov(self, y):
        """Posterior covariance k_n(t_i, y) for the whole grid, no gradients."""
        st = self.state
        tr, hp = st.transforms, st.hyperparams
        yn = tr.x_to_unit(np.asarray(y, float)).reshape(1, -1)
        kty = matern52(self._pts_n, yn, hp)[:, 0]
        if st.n:
            ky = matern52(st.Xn, yn, hp)[:, 0]
            kty = kty - self._kt @ cho_solve((st.chol, True), ky)
        return kty * tr.output_std**2

    def value_at(self, y):
        """Discrete knowledge gradient at one candidate ``y``."""
        st = self.state
        y = np.asarray(y, float)
        kty = self._cross_cov(y)
        _, vy = st.posterior(y[None, :])
        vy = max(float(vy[0]), self.floor)
        denom = vy + st.hyperparams.noise_variance * st.transforms.output_std**2
        coef = kty * np.sqrt(vy) / denom  # (Nt,)
        fvar = np.maximum(self.var - kty**2 / denom, self.floor)
        deg = fvar <= self.floor * (1.0 + 1e-6)
        fsd = np.sqrt(fvar)
        # Fantasy means for all z at once: (Nv, Nt)
        fmean = self.mean[None, :] + np.outer(self.z, coef)
        h = (fmean - self.c) / fsd[None, :]
        log_phi = std_normal_log_cdf(h)
        if np.any(deg):
            hard = np.where(fmean[:, deg] >= self.c, 0.0, -np.inf)
            log_phi[:, deg] = hard
        log_j = np.where(self.inside[None, :], log_phi, 0.0)
        terms = self.is_sample.log_weights[None, None, :] + log_j.reshape(
            len(self.z), self.n_x, self.n_u
        )
        log_p = logsumexp(terms, axis=2) - np.log(self.n_u)  # (Nv, Nx)
        best = np.max(_value_from_log_p(log_p, self.spec.use_log), axis=1)
        if np.any(best == np.inf):
            return np.inf, None
        argbest = np.argmin(log_p, axis=1) if self.spec.use_log else np.argmin(
            log_p, axis=1
        )
        return float(np.mean(best) - self.baseline), argbest

    def scan(self, ys):
        vals = np.empty(len(ys))
        args = []
        for i, y in enumerate(ys):
            vals[i], a = self.value_at(y)
            args.append(a)
        return vals, args


def _fantasy_pn_with_grads(state, y, z, xs, is_sample, bounds, smoothing, c):
    """Per-fantasy log failure probability at nominal designs ``xs`` (one per
    fantasy), with gradients w.r.t. each x and w.r.t. the shared y.

    Uses the closed-form conditioning of the posterior on the hypothetical
    observation at ``y`` rather than materializing fantasy states, so that
    gradients w.r.t. y are available analytically.

    Returns (log_p (Nv,), grad_x (Nv, d), grad_y (Nv, d)).
    """
    z = np.asarray(z, float)
    n_v = len(z)
    xs = np.atleast_2d(np.asarray(xs, float))
    n_u = len(is_sample)
    d = xs.shape[1]
    pts = (xs[:, None, :] + is_sample.points[None, :, :]).reshape(n_v * n_u, d)

    mean, var, dmean, dvar = state.posterior_with_grad(pts)
    kty, dk_dt, dk_dy = state.cross_cov_with_grad(pts, y)
    ymean, yvar, _, dyvar = state.posterior_with_grad(np.asarray(y, float)[None, :])
    floor = NUGGET * state.transforms.output_std**2
    vy = max(float(yvar[0]), floor)
    dvy = dyvar[0] if yvar[0] > floor else np.zeros(d)
    noise = state.hyperparams.noise_variance * state.transforms.output_std**2
    denom = vy + noise
    sq = np.sqrt(vy)

    zz = np.repeat(z, n_u)  # (Nv*Nu,)
    a = sq / denom  # scalar
    da_dy = dvy * (noise - vy) / (2.0 * sq * denom**2)  # (d,)
    fmean = mean + kty * zz * a
    dfmean_dt = dmean + dk_dt * (zz * a)[:, None]
    dfmean_dy = dk_dy * (zz * a)[:, None] + np.outer(kty * zz, da_dy)

    fvar = var - kty**2 / denom
    deg = fvar <= floor * (1.0 + 1e-6)
    fvar = np.maximum(fvar, floor)
    dfvar_dt = dvar - 2.0 * kty[:, None] * dk_dt / denom
    dfvar_dy = -2.0 * kty[:, None] * dk_dy / denom + np.outer(kty**2 / denom**2, dvy)
    dfvar_dt[deg] = 0.0
    dfvar_dy[deg] = 0.0

    fsd = np.sqrt(fvar)
    h = (fmean - c) / fsd
    log_phi = std_normal_log_cdf(h)
    if np.any(deg):
        log_phi = np.where(deg, np.where(fmean >= c, 0.0, -np.inf), log_phi)
    iota, diota = _feasibility_parts(pts, bounds, smoothing.delta, True)
    log_j, ratio_h, ratio_iota = _smoothed_log_terms(
        log_phi, h, iota, True, degenerate=deg
    )
    dh_dt = (dfmean_dt - (h / (2.0 * fsd))[:, None] * dfvar_dt) / fsd[:, None]
    dh_dy = (dfmean_dy - (h / (2.0 * fsd))[:, None] * dfvar_dy) / fsd[:, None]
    dlog_j_dt = ratio_h[:, None] * dh_dt + ratio_iota[:, None] * diota
    dlog_j_dy = ratio_h[:, None] * dh_dy

    terms = (is_sample.log_weights[None, :] + log_j.reshape(n_v, n_u))
    log_p = logsumexp(terms, axis=1) - np.log(n_u)
    grad_x = np.zeros((n_v, d))
    grad_y = np.zeros((n_v, d))
    finite = np.isfinite(log_p)
    if np.any(finite):
        soft = np.exp(terms - logsumexp(terms, axis=1, keepdims=True))
        soft = np.where(finite[:, None], soft, 0.0)
        grad_x = np.einsum(
            "vu,vud->vd", soft, dlog_j_dt.reshape(n_v, n_u, d)
        )
        grad_y = np.einsum(
            "vu,vud->vd", soft, dlog_j_dy.reshape(n_v, n_u, d)
        )
    return log_p, grad_x, grad_y


def oneshot_objective(state, joint, z_sample, is_sample, bounds, smoothing, c, use_log):
    """The joint one-shot objective: the fantasy-averaged best-achievable
    value as a function of (y, x_1..x_Nv) flattened, with its gradient.

    The current-state baseline term is constant in the decision variables and
    excluded here.
    """
    bounds = np.asarray(bounds, float)
    d = bounds.shape[0]
    n_v = len(z_sample)
    joint = np.asarray(joint, float)
    y, xs = joint[:d], joint[d:].reshape(n_v, d)
    log_p, grad_x, grad_y = _fantasy_pn_with_grads(
        state, y, z_sample, xs, is_sample, bounds, smoothing, c
    )
    if use_log:
        if np.any(np.isinf(log_p)):
            return np.inf, np.zeros_like(joint)
        value = float(np.mean(-log_p))
        gx = -grad_x / n_v
        gy = -np.sum(grad_y, axis=0) / n_v
    else:
        p = np.exp(log_p)
        value = float(np.mean(-p))
        gx = -p[:, None] * grad_x / n_v
        gy = -np.sum(p[:, None] * grad_y, axis=0) / n_v
    return value, np.concatenate([gy, gx.reshape(-1)])


def kg_discrete_next(state, problem, spec, streams):
    """Select the next query by maximizing the discrete knowledge gradient
    over candidate sites, polished with the envelope gradient."""
    bounds = np.asarray(problem.bounds, float)
    d = bounds.shape[0]
    is_sample = draw_is_sample(problem.perturb, spec.tau, spec.n_u, streams.u_stream)
    z_sample = gaussian_qmc(streams.z_stream, spec.n_v, np.zeros(1), np.ones(1))[:, 0]
    x_disc = _scale_to_box(streams.x_stream.take(spec.n_x), bounds)
    scan = _FantasyScan(state, x_disc, z_sample, is_sample, bounds, problem.c, spec)

    cands = _scale_to_box(streams.x_stream.take(spec.raw_count(d)), bounds)
    vals, args = scan.scan(cands)
    if np.any(np.isinf(vals)):
        i = int(np.argmax(np.isinf(vals)))
        return cands[i], AcqDiagnostics(value=np.inf, rule="kg_mr_discrete")
    starts = boltzmann_restarts(
        cands, vals, RestartPlan(len(cands), spec.n_restarts), streams.restart_seed
    )
    smoothing = SmoothingConfig(0.0, spec.rho)

    def objective(y):
        # Envelope gradient: differentiate through the per-fantasy argmax
        # designs, holding the argmax indices fixed.
        value, argbest = scan.value_at(y)
        if not np.isfinite(value):
            return value, np.zeros(d)
        xs = scan.x_disc[argbest]
        log_p, _, grad_y = _fantasy_pn_with_grads(
            state, y, scan.z, xs, is_sample, bounds, smoothing, problem.c
        )
        if spec.use_log:
            grad = -np.sum(grad_y, axis=0) / len(scan.z)
        else:
            grad = -np.sum(np.exp(log_p)[:, None] * grad_y, axis=0) / len(scan.z)
        return value, grad

    y_next, y_val, _ = multistart_qn(
        BoundedObjective(d, bounds, objective, sense="max"), starts, max_iters=50
    )
    return y_next, AcqDiagnostics(value=float(y_val), rule="kg_mr_discrete")


def kg_oneshot_next(state, problem, spec, streams):
    """Select the next query by jointly optimizing the observation site and
    one future best-design guess per fantasy."""
    bounds = np.asarray(problem.bounds, float)
    d = bounds.shape[0]
    is_sample = draw_is_sample(problem.perturb, spec.tau, spec.n_u, streams.u_stream)
    z_sample = gaussian_qmc(streams.z_stream, spec.n_v, np.zeros(1), np.ones(1))[:, 0]
    x_disc = _scale_to_box(streams.x_stream.take(spec.n_x), bounds)
    scan = _FantasyScan(state, x_disc, z_sample, is_sample, bounds, problem.c, spec)

    cands = _scale_to_box(streams.x_stream.take(spec.raw_count(d)), bounds)
    vals, args = scan.scan(cands)
    if np.any(np.isinf(vals)):
        i = int(np.argmax(np.isinf(vals)))
        return cands[i], AcqDiagnostics(value=np.inf, rule="kg_mr_oneshot")
    plan = RestartPlan(len(cands), spec.n_restarts)
    chosen = boltzmann_restarts(cands, vals, plan, streams.restart_seed)
    # Recover the per-fantasy argmax seeds for each chosen candidate.
    idx_of = {tuple(c): a for c, a in zip(map(tuple, cands), args)}
    starts = []
    for y0 in chosen:
        argbest = idx_of[tuple(y0)]
        starts.append(np.concatenate([y0, scan.x_disc[argbest].reshape(-1)]))

    smoothing = SmoothingConfig.for_box(bounds, rho=spec.rho)
    joint_bounds = np.vstack([bounds] * (1 + spec.n_v))

    def objective(joint):
        return oneshot_objective(
            state, joint, z_sample, is_sample, bounds, smoothing, problem.c, spec.use_log
        )

    joint_best, best_val, _ = multistart_qn(
        BoundedObjective(len(joint_bounds), joint_bounds, objective, sense="max"),
        starts,
        max_iters=100,
    )
    y_next = joint_best[:d]
    alpha = float(best_val - scan.baseline)
    return y_next, AcqDiagnostics(value=alpha, rule="kg_mr_oneshot")


# -- limit-state cascade ---------------------------------------------------


def _posterior_sd_with_grad(state, y):
    mean, var, dmean, dvar = state.posterior_with_grad(np.atleast_2d(y))
    floor = NUGGET * state.transforms.output_std**2
    sd = np.sqrt(np.maximum(var, floor))
    dsd = np.where((var > floor)[:, None], dvar / (2.0 * sd[:, None]), 0.0)
    return mean, sd, dmean, dsd


def _multistart_from_scan(objective, bounds, batch_value, spec, streams, sense="max"):
    d = len(bounds)
    cands = _scale_to_box(streams.x_stream.take(spec.raw_count(d)), bounds)
    vals = batch_value(cands)
    vals = vals if sense == "max" else -vals
    starts = boltzmann_restarts(
        cands, vals, RestartPlan(len(cands), spec.n_restarts), streams.restart_seed
    )
    return multistart_qn(BoundedObjective(d, bounds, objective, sense=sense), starts)


def hc_next(state, history, spec, bounds, c, streams):
    """Four-rule cascade: feasibility probability when nothing feasible has
    been seen yet, otherwise limit-state spread, tunneling, then maximal
    variance -- accepting the first proposal far enough from every sample."""
    bounds = np.asarray(bounds, float)
    d = bounds.shape[0]
    Y, v = np.atleast_2d(history[0]), np.asarray(history[1], float)
    diag_len = float(np.linalg.norm(bounds[:, 1] - bounds[:, 0]))
    eps_s = spec.eps_s if spec.eps_s is not None else 0.01 * diag_len
    delta_band = spec.delta_band if spec.delta_band is not None else 10.0
    feasible = v <= c

    def log_alpha_f(y):
        mean, sd, dmean, dsd = _posterior_sd_with_grad(state, y)
        h = np.clip((c - mean[0]) / sd[0], -_H_CLAMP, _H_CLAMP)
        dh = (-dmean[0] - h * dsd[0]) / sd[0]
        lphi = std_normal_log_cdf(h)
        return float(lphi), _phi_ratio(std_normal_log_pdf(h), lphi) * dh

    def batch_log_alpha_f(ys):
        mean, var = state.posterior(ys)
        sd = np.sqrt(np.maximum(var, NUGGET * state.transforms.output_std**2))
        return std_normal_log_cdf(np.clip((c - mean) / sd, -_H_CLAMP, _H_CLAMP))

    if not np.any(feasible):
        y_next, val, _ = _multistart_from_scan(
            log_alpha_f, bounds, batch_log_alpha_f, spec, streams
        )
        return y_next, AcqDiagnostics(value=float(np.exp(val)), rule="F")

    def min_dist(y, pts):
        return float(np.min(np.linalg.norm(pts - y, axis=1)))

    def separated(y):
        return min_dist(y, Y) >= eps_s

    # Rule LS: stay within the predicted limit-state band, spread out.
    def alpha_ls(y):
        mean, _ = state.posterior(y[None, :])
        if abs(mean[0] - c) > delta_band:
            return 0.0
        return min_dist(y, Y) / diag_len

    y_ls, val_ls = direct_maximize(
        alpha_ls, bounds, spec.direct_budget_per_dim * d
    )
    if val_ls > 0.0 and separated(y_ls):
        return y_ls, AcqDiagnostics(value=float(val_ls), rule="LS")

    # Rule TN: feasibility probability times distance to feasible samples.
    Yf = Y[feasible]

    def alpha_tn(y):
        lf, dlf = log_alpha_f(y)
        dists = np.linalg.norm(Yf - y, axis=1)
        i = int(np.argmin(dists))
        dist = max(dists[i], 1e-12)
        grad = np.exp(lf) * ((y - Yf[i]) / dist / diag_len) + np.exp(lf) * dlf * (
            dist / diag_len
        )
        return float(np.exp(lf) * dist / diag_len), grad

    def batch_alpha_tn(ys):
        lf = batch_log_alpha_f(ys)
        dmin = np.min(
            np.linalg.norm(ys[:, None, :] - Yf[None, :, :], axis=2), axis=1
        )
        return np.exp(lf) * dmin / diag_len

    y_tn, val_tn, _ = _multistart_from_scan(
        alpha_tn, bounds, batch_alpha_tn, spec, streams
    )
    if separated(y_tn):
        return y_tn, AcqDiagnostics(value=float(val_tn), rule="TN")

    # Rule MV: maximal posterior standard deviation.
    def alpha_mv(y):
        _, sd, _, dsd = _posterior_sd_with_grad(state, y)
        return float(sd[0]), dsd[0]

    def batch_alpha_mv(ys):
        _, var = state.posterior(ys)
        return np.sqrt(np.maximum(var, 0.0))

    y_mv, val_mv, _ = _multistart_from_scan(
        alpha_mv, bounds, batch_alpha_mv, spec, streams
    )
    if not separated(y_mv):
        log.warning(
            "cascade: all rules proposed points within eps_s of existing "
            "samples; returning the maximal-variance point anyway"
        )
    return y_mv, AcqDiagnostics(value=float(val_mv), rule="MV")


# -- expected feasibility --------------------------------------------------


def expected_feasibility(mean, sd, c, kappa):
    """E[max(eps - |c - f|, 0)] for f ~ N(mean, sd^2), eps = kappa*sd.

    Writing t = (c - mean)/sd, the band integral reduces to sd * B(t) with
    B(t) = -t*[2*Phi(t) - Phi(t-k) - Phi(t+k)]
           - [2*phi(t) - phi(t-k) - phi(t+k)] + k*[Phi(t+k) - Phi(t-k)].
    """
    mean, sd = np.asarray(mean, float), np.asarray(sd, float)
    t = (c - mean) / sd
    B = _ef_band(t, kappa)
    return sd * B


def _ef_band(t, kappa):
    tm, tp = t - kappa, t + kappa
    Phi, phi = std_normal_cdf, std_normal_pdf
    return (
        -t * (2.0 * Phi(t) - Phi(tm) - Phi(tp))
        - (2.0 * phi(t) - phi(tm) - phi(tp))
        + kappa * (Phi(tp) - Phi(tm))
    )


def _ef_band_grad(t, kappa):
    # d/dt of the band integral: the phi terms cancel exactly.
    Phi = std_normal_cdf
    return -(2.0 * Phi(t) - Phi(t - kappa) - Phi(t + kappa))


def egra_next(state, spec, bounds, c, streams):
    """Maximize the expected feasibility of the limit-state band."""
    bounds = np.asarray(bounds, float)
    d = bounds.shape[0]
    kappa = spec.kappa

    def objective(y):
        mean, sd, dmean, dsd = _posterior_sd_with_grad(state, y)
        t = (c - mean[0]) / sd[0]
        dt = (-dmean[0] - t * dsd[0]) / sd[0]
        B = float(_ef_band(np.array([t]), kappa)[0])
        dB = float(_ef_band_grad(np.array([t]), kappa)[0])
        return float(sd[0] * B), dsd[0] * B + sd[0] * dB * dt

    def batch(ys):
        mean, var = state.posterior(ys)
        sd = np.sqrt(np.maximum(var, NUGGET * state.transforms.output_std**2))
        return expected_feasibility(mean, sd, c, kappa)

    y_next, val, _ = _multistart_from_scan(objective, bounds, batch, spec, streams)
    return y_next, AcqDiagnostics(value=float(val), rule="egra")


# -- simple baselines ------------------------------------------------------


def expected_improvement(mean, sd, incumbent):
    """Closed-form expected improvement below the incumbent (minimization)."""
    mean, sd = np.asarray(mean, float), np.asarray(sd, float)
    u = (incumbent - mean) / sd
    return (incumbent - mean) * std_normal_cdf(u) + sd * std_normal_pdf(u)


def ei_next(state, history, spec, bounds, streams):
    bounds = np.asarray(bounds, float)
    incumbent = float(np.min(np.asarray(history[1], float)))

    def objective(y):
        mean, sd, dmean, dsd = _posterior_sd_with_grad(state, y)
        u = (incumbent - mean[0]) / sd[0]
        val = (incumbent - mean[0]) * std_normal_cdf(u) + sd[0] * std_normal_pdf(u)
        grad = -std_normal_cdf(u) * dmean[0] + std_normal_pdf(u) * dsd[0]
        return float(val), grad

    def batch(ys):
        mean, var = state.posterior(ys)
        sd = np.sqrt(np.maximum(var, NUGGET * state.transforms.output_std**2))
        return expected_improvement(mean, sd, incumbent)

    y_next, val, _ = _multistart_from_scan(objective, bounds, batch, spec, streams)
    return y_next, AcqDiagnostics(value=float(val), rule="ei")


def sobol_next(stream: SobolStream, bounds):
    """Space-filling baseline: the next point of a per-run scrambled stream."""
    bounds = np.asarray(bounds, float)
    y = _scale_to_box(stream.take(1)[0], bounds)
    return y, AcqDiagnostics(rule="sobol")
