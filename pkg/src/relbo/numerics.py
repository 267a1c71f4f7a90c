"""Deterministic low-level numerics: scrambled Sobol' streams, Gaussian qMC
draws via Box-Muller, and the special functions used by the probability and
smoothing formulas.

All functions here are pure; :class:`SobolStream` is the only stateful object
(a mutable cursor into a fixed low-discrepancy sequence).
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy import special
from scipy.stats import qmc

MAX_SOBOL_DIM = 64
_MAX_CURSOR = 2**31

TWO_PI = 2.0 * np.pi


class SobolStream:
    """A cursor into a (optionally Owen-scrambled) Sobol' sequence.

    Uses the Joe-Kuo direction numbers (via scipy). With the same
    ``(dimension, scramble_seed)`` the emitted sequence is identical across
    runs, regardless of how requests are batched.

    Single-writer: callers that want to consume points in parallel should
    ``clone()`` and advance the clones independently.
    """

    def __init__(self, dimension: int, scramble_seed: int | None = None):
        if dimension < 1 or dimension > MAX_SOBOL_DIM:
            raise ValueError(
                f"Sobol dimension must be in [1, {MAX_SOBOL_DIM}], got {dimension}"
            )
        self.dimension = dimension
        self.scramble_seed = scramble_seed
        self.cursor = 0
        if scramble_seed is None:
            self._engine = qmc.Sobol(dimension, scramble=False)
        else:
            self._engine = qmc.Sobol(
                dimension, scramble=True, rng=np.random.default_rng(scramble_seed)
            )

    def clone(self) -> "SobolStream":
        """An independent stream positioned at the same cursor."""
        other = SobolStream(self.dimension, self.scramble_seed)
        if self.cursor:
            other._engine.fast_forward(self.cursor)
            other.cursor = self.cursor
        return other

    def take(self, count: int) -> np.ndarray:
        """The next ``count`` points, shape (count, dimension), in [0, 1)."""
        if count < 1:
            raise ValueError("count must be >= 1")
        if self.cursor + count > _MAX_CURSOR:
            raise ValueError("Sobol stream exhausted")
        with warnings.catch_warnings():
            # scipy warns when count is not a power of two; balance is the
            # caller's concern here.
            warnings.simplefilter("ignore", UserWarning)
            pts = self._engine.random(count)
        self.cursor += count
        return pts


def sobol_points(stream: SobolStream, count: int) -> np.ndarray:
    """Advance ``stream`` and return the next ``count`` points."""
    return stream.take(count)


def box_muller(uniforms: np.ndarray) -> np.ndarray:
    """Trigonometric Box-Muller on consecutive coordinate pairs.

    ``uniforms`` has shape (n, 2m); the result has shape (n, 2m) with columns
    (2k, 2k+1) mapped to r*cos(theta), r*sin(theta) where r = sqrt(-2 ln u_2k)
    and theta = 2 pi u_{2k+1}. The trigonometric form preserves the qMC point
    count exactly (no rejection).
    """
    u = np.asarray(uniforms, dtype=float)
    if u.ndim != 2 or u.shape[1] % 2 != 0:
        raise ValueError("box_muller expects an (n, 2m) array")
    u1 = np.clip(u[:, 0::2], 1e-300, None)  # u=0 occurs at Sobol index 0
    u2 = u[:, 1::2]
    r = np.sqrt(-2.0 * np.log(u1))
    theta = TWO_PI * u2
    z = np.empty_like(u)
    z[:, 0::2] = r * np.cos(theta)
    z[:, 1::2] = r * np.sin(theta)
    return z


def gaussian_qmc(
    stream: SobolStream,
    count: int,
    mean: np.ndarray,
    scale_diag: np.ndarray,
) -> np.ndarray:
    """``count`` qMC Gaussian draws with diagonal scale, shape (count, d).

    Consumes Sobol' coordinates pairwise through Box-Muller; the stream must
    have dimension >= 2*ceil(d/2).
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    scale_diag = np.atleast_1d(np.asarray(scale_diag, dtype=float))
    d = mean.shape[0]
    if scale_diag.shape[0] != d:
        raise ValueError("mean and scale_diag must have the same length")
    if np.any(scale_diag <= 0):
        raise ValueError("scale_diag must be strictly positive")
    needed = 2 * ((d + 1) // 2)
    if stream.dimension < needed:
        raise ValueError(
            f"stream dimension {stream.dimension} < {needed} required for d={d}"
        )
    u = stream.take(count)[:, :needed]
    z = box_muller(u)[:, :d]
    return mean + scale_diag * z


def _check_finite(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if np.any(np.isnan(x)):
        raise ValueError("NaN input to normal cdf/pdf")
    return x


def std_normal_cdf(x):
    """Standard normal CDF."""
    return special.ndtr(_check_finite(x))


def std_normal_log_cdf(x):
    """log of the standard normal CDF, accurate far into the lower tail."""
    return special.log_ndtr(_check_finite(x))


def std_normal_pdf(x):
    """Standard normal density."""
    x = _check_finite(x)
    return np.exp(-0.5 * x * x) / np.sqrt(TWO_PI)


def std_normal_log_pdf(x):
    x = _check_finite(x)
    return -0.5 * x * x - 0.5 * np.log(TWO_PI)


def regularized_lower_gamma(shape: float, x):
    """P(shape, x), the regularized lower incomplete gamma function."""
    if shape <= 0:
        raise ValueError("shape must be positive")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("x must be non-negative")
    return special.gammainc(shape, x)
