"""Samplers for the circle-average regularized free field.

Two complementary representations are implemented.

* Planar: the field averaged over circles of radius eps around arbitrary
  points, as a dense joint Gaussian draw.  The covariance of two circle
  averages reduces to closed forms except when the circles overlap:
  averaging ln|u - v| over a circle of radius e around v gives
  ln max(|u - v|, e) exactly, and the angular average of ln ghat over a
  circle has an elementary closed form, so only overlapping pairs need an
  angular quadrature.

* Radial/lateral around the origin: the log-radius process
  x_s = (circle average at radius e^{-s}) is modelled as x_0 + Brownian
  motion with x_0 ~ N(0, ln 2 - 1/2), independent of a lateral field Y
  whose covariance on the cylinder (s, theta) is the stationary kernel

      K(ds, dtheta) = -ln|1 - e^{-|ds| + i dtheta}|.

  Y is sampled band by band in s, each band conditioned on the previous
  one (dense factorizations of two-band blocks, precomputed once).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import log_metric_density
from .mc import SeedPlan

UNIT_CIRCLE_VARIANCE = math.log(2.0) - 0.5  # variance of the unit-circle average at 0

JITTERS = (0.0, 1e-12, 1e-11, 1e-10)

__all__ = [
    "UNIT_CIRCLE_VARIANCE",
    "FieldSample",
    "RadialLateralSample",
    "FactorizationError",
    "cov_circle_avg",
    "circle_average_cov_matrix",
    "cholesky_with_jitter",
    "sample_field_eps",
    "lateral_covariance",
    "lateral_kernel",
    "LateralBandSampler",
    "get_band_sampler",
    "sample_radial_lateral",
]


class FactorizationError(RuntimeError):
    def __init__(self, minor: int):
        self.minor = minor
        super().__init__(
            f"covariance factorization failed after maximal jitter; "
            f"leading minor of order {minor} is not positive definite"
        )


@dataclass(eq=False)
class FieldSample:
    """One joint draw of eps-circle averages at a finite point set."""

    points: np.ndarray
    eps: np.ndarray | float
    values: np.ndarray
    seed: int


@dataclass(eq=False)
class RadialLateralSample:
    """Radial path x on [0, S] plus lateral field y on the (s, theta) grid.

    x lives on the edge grid s_j = j*ds; y holds one value per grid cell
    (cell-centred), with ``var_y`` the grid-scale variance used by the
    chaos normalization.
    """

    ds: float
    n_theta: int
    horizon: float
    s_edges: np.ndarray
    x: np.ndarray
    s_centers: np.ndarray
    theta_centers: np.ndarray
    y: np.ndarray
    var_y: float
    seed: int


def _avg_log_ghat(center, eps):
    """Angular average of ln ghat over the circle of radius eps at center.

    (1/2pi) Int ln(A + B cos t) dt = ln((A + sqrt(A^2 - B^2))/2) gives the
    exact value; no quadrature is needed.
    """
    c2 = np.abs(np.asarray(center, dtype=complex)) ** 2
    eps = np.asarray(eps, dtype=float)
    a = 1.0 + c2 + eps**2
    b = 2.0 * eps * np.sqrt(c2)
    return math.log(4.0) - 2.0 * np.log(0.5 * (a + np.sqrt(a * a - b * b)))


def _angular_average(func, tol: float = 1e-8, n0: int = 64, n_max: int = 16384):
    """Midpoint angular average, doubled until successive values agree."""
    prev = None
    n = n0
    while True:
        theta = (np.arange(n) + 0.5) * (2.0 * math.pi / n)
        val = float(np.mean(func(theta)))
        if prev is not None and abs(val - prev) < tol:
            return val
        if n >= n_max:
            return val
        prev, n = val, 2 * n


def _cov_log_part(z, w, eps_z: float, eps_w: float) -> float:
    chord = abs(z - w)
    if chord >= eps_z + eps_w:
        return -math.log(chord)
    if chord == 0.0:
        return -math.log(max(eps_z, eps_w))
    d = z - w
    return -_angular_average(
        lambda t: np.log(np.maximum(np.abs(d + eps_z * np.exp(1j * t)), eps_w))
    )


def cov_circle_avg(z, w, eps: float, eps_w: float | None = None) -> float:
    """Covariance of eps-circle averages of the field at z and w.

    For separated circles this equals the Green function up to O(eps^2);
    on the diagonal it is finite (the averaging removes the singularity).
    """
    if eps <= 0 or (eps_w is not None and eps_w <= 0):
        raise ValueError("regularization radius must be positive")
    ew = eps if eps_w is None else eps_w
    z = complex(z)
    w = complex(w)
    smooth = -0.25 * (_avg_log_ghat(z, eps) + _avg_log_ghat(w, ew))
    return _cov_log_part(z, w, eps, ew) + smooth + math.log(2.0) - 0.5


def circle_average_cov_matrix(points, eps) -> np.ndarray:
    """Dense covariance matrix of circle averages; eps scalar or per-point."""
    pts = np.asarray(points, dtype=complex).ravel()
    m = pts.size
    e = np.broadcast_to(np.asarray(eps, dtype=float), (m,)).astype(float)
    if np.any(e <= 0):
        raise ValueError("regularization radii must be positive")
    g_avg = _avg_log_ghat(pts, e)
    chord = np.abs(pts[:, None] - pts[None, :])
    cov = np.where(chord > 0, -np.log(np.where(chord > 0, chord, 1.0)), 0.0)
    cov += -0.25 * (g_avg[:, None] + g_avg[None, :]) + math.log(2.0) - 0.5
    np.fill_diagonal(cov, -np.log(e) - 0.5 * g_avg + math.log(2.0) - 0.5)
    close = np.transpose(np.nonzero(chord < e[:, None] + e[None, :]))
    for i, j in close:
        if i >= j:
            continue
        lp = _cov_log_part(pts[i], pts[j], e[i], e[j])
        val = lp - 0.25 * (g_avg[i] + g_avg[j]) + math.log(2.0) - 0.5
        cov[i, j] = cov[j, i] = val
    return cov


def _failing_minor(mat: np.ndarray) -> int:
    lo, hi = 1, mat.shape[0]
    while lo < hi:
        mid = (lo + hi) // 2
        try:
            np.linalg.cholesky(mat[:mid, :mid])
            lo = mid + 1
        except np.linalg.LinAlgError:
            hi = mid
    return lo


def cholesky_with_jitter(cov: np.ndarray, jitters=JITTERS) -> np.ndarray:
    """Lower Cholesky factor, escalating diagonal jitter on failure."""
    for jit in jitters:
        try:
            return np.linalg.cholesky(cov + jit * np.eye(cov.shape[0]))
        except np.linalg.LinAlgError:
            continue
    raise FactorizationError(_failing_minor(cov + jitters[-1] * np.eye(cov.shape[0])))


def sample_field_eps(points, eps, seed: int, n_draws: int = 1) -> FieldSample:
    """Joint centred Gaussian draw(s) of circle averages at ``points``.

    With n_draws > 1 the values array has shape (n_draws, n_points); each
    draw uses the derived stream (seed, draw index).
    """
    pts = np.asarray(points, dtype=complex).ravel()
    if np.unique(pts).size != pts.size:
        raise ValueError("points must be pairwise distinct")
    cov = circle_average_cov_matrix(pts, eps)
    chol = cholesky_with_jitter(cov)
    plan = SeedPlan(seed)
    normals = np.empty((pts.size, n_draws))
    for k in range(n_draws):
        normals[:, k] = plan.generator("field-eps", k).standard_normal(pts.size)
    values = (chol @ normals).T
    if n_draws == 1:
        values = values[0]
    return FieldSample(points=pts, eps=eps, values=values, seed=seed)


# ---------------------------------------------------------------------------
# lateral field on the (s, theta) cylinder


def lateral_kernel(ds_abs, dtheta):
    """Stationary cylinder covariance -ln|1 - e^{-|ds| + i dtheta}|."""
    d = np.abs(np.asarray(ds_abs, dtype=float))
    a = np.asarray(dtheta, dtype=float)
    q = np.exp(-d)
    # |1 - q e^{ia}|^2 = (1-q)^2 + 4 q sin^2(a/2), stable for small d, a
    mod2 = np.expm1(-d) ** 2 + 4.0 * q * np.sin(0.5 * a) ** 2
    return -0.5 * np.log(mod2)


def lateral_covariance(s: float, theta: float, s2: float, theta2: float) -> float:
    """Covariance ln((r v r') / |r e^{it} - r' e^{it'}|) with r = e^{-s}."""
    if s == s2 and (theta - theta2) % (2.0 * math.pi) == 0.0:
        raise ValueError("lateral covariance is singular at coincident points")
    return float(lateral_kernel(s - s2, theta - theta2))


def _lateral_cov_table(n_s: int, n_theta: int, ds: float, k_max: int = 200_000) -> np.ndarray:
    """Cell-average kernel table over offsets: (2*n_s) x (n_theta//2 + 1).

    The discrete lateral field is the cell average of the continuum field
    (node evaluation is not positive definite on this anisotropic grid).
    The kernel expands as sum_k e^{-k|ds|} cos(k dtheta)/k, and averaging
    against the tent weight factorizes per dimension:

        theta:  sinc^2(k dt/2)
        s, offset 0:    (2/t^2)(t - 1 + e^{-t}),  t = k h
        s, offset j>=1: e^{-k j h} (sinh(t/2)/(t/2))^2

    so the table is an exact (to truncation ~1e-13) cell-average
    covariance, positive definite by construction.  Entries for separated
    cells agree with the pointwise kernel to O(h^2).
    """
    dt = 2.0 * math.pi / n_theta
    half = n_theta // 2
    offs_j = np.arange(2 * n_s)
    offs_k = np.arange(half + 1)
    table = np.zeros((2 * n_s, half + 1))
    chunk = 20_000
    for k0 in range(1, k_max + 1, chunk):
        k = np.arange(k0, min(k0 + chunk, k_max + 1), dtype=float)
        t = k * ds
        half_t = 0.5 * t
        w_theta = (np.sin(0.5 * k * dt) / (0.5 * k * dt)) ** 2
        w_s0 = 2.0 / t**2 * (t - 1.0 + np.exp(-t))
        # sinh(t/2)^2 e^{-k j h} = ((1 - e^{-t})/t)^2 e^{-(j-1) t}, stable form
        ratio = (-np.expm1(-t) / t) ** 2
        log_decay = -np.outer(offs_j[1:] - 1, t)
        s_factors = np.vstack([w_s0, ratio * np.exp(np.maximum(log_decay, -745.0))])
        contrib = (s_factors * (w_theta / k)) @ np.cos(np.outer(k, offs_k * dt))
        table += contrib
    return table


class LateralBandSampler:
    """Band-by-band sampler of the lateral field on the cylinder grid.

    One band spans ``band_len`` units of s (so n_s = band_len/ds rows of
    n_theta cells).  Band k+1 is drawn conditionally on band k, with the
    two-band covariance exact; dependence beyond one band is truncated,
    which the covariance tests validate.  All draws reuse three
    precomputed dense factors.
    """

    def __init__(self, ds: float = 1.0 / 32, n_theta: int = 32, band_len: float = 1.0):
        n_s = round(band_len / ds)
        if abs(n_s * ds - band_len) > 1e-12 or n_s < 1:
            raise ValueError("band_len must be a multiple of ds")
        if n_theta < 4:
            raise ValueError("need at least 4 angular cells")
        self.ds = ds
        self.n_theta = n_theta
        self.n_s = n_s
        self.band_dim = n_s * n_theta
        table = _lateral_cov_table(n_s, n_theta, ds)
        idx_s = np.arange(2 * n_s)
        idx_t = np.arange(n_theta)
        oj = np.abs(idx_s[:, None] - idx_s[None, :])
        ot = np.abs(idx_t[:, None] - idx_t[None, :])
        ot = np.minimum(ot, n_theta - ot)
        big = table[oj[:, None, :, None], ot[None, :, None, :]]
        big = big.reshape(2 * self.band_dim, 2 * self.band_dim)
        m = self.band_dim
        c11 = big[:m, :m]
        c12 = big[:m, m:]
        self.var0 = float(table[0, 0])
        self.chol_first = cholesky_with_jitter(c11)
        m_solve = np.linalg.solve(c11, c12)
        self.cond_mat = m_solve.T
        schur = c11 - self.cond_mat @ c12
        schur = 0.5 * (schur + schur.T)
        self.chol_cond = cholesky_with_jitter(schur)

    def first_band(self, normals: np.ndarray) -> np.ndarray:
        """Draw band 0 from (band_dim, n_draws) standard normals."""
        return self.chol_first @ normals

    def next_band(self, prev: np.ndarray, normals: np.ndarray) -> np.ndarray:
        return self.cond_mat @ prev + self.chol_cond @ normals

    def two_band_cov(self) -> np.ndarray:
        """Exact covariance of two consecutive bands (for tests)."""
        m = self.band_dim
        c11 = self.chol_first @ self.chol_first.T
        c12 = (self.cond_mat @ c11).T
        out = np.empty((2 * m, 2 * m))
        out[:m, :m] = c11
        out[:m, m:] = c12
        out[m:, :m] = c12.T
        out[m:, m:] = c11
        return out


_BAND_CACHE: dict[tuple, LateralBandSampler] = {}


def get_band_sampler(ds: float = 1.0 / 32, n_theta: int = 32) -> LateralBandSampler:
    key = (round(1.0 / ds), n_theta)
    if key not in _BAND_CACHE:
        _BAND_CACHE[key] = LateralBandSampler(ds=ds, n_theta=n_theta)
    return _BAND_CACHE[key]


def sample_radial_path(S: float, ds: float, rng: np.random.Generator) -> np.ndarray:
    """x on the edge grid: x_0 ~ N(0, ln2 - 1/2) plus Brownian increments."""
    n = round(S / ds)
    x0 = rng.standard_normal() * math.sqrt(UNIT_CIRCLE_VARIANCE)
    inc = rng.standard_normal(n) * math.sqrt(ds)
    out = np.empty(n + 1)
    out[0] = x0
    np.cumsum(inc, out=out[1:])
    out[1:] += x0
    return out


def sample_radial_lateral(
    S: float, ds: float = 1.0 / 32, n_theta: int = 32, seed: int = 0
) -> RadialLateralSample:
    """Joint draw of the radial path and the lateral field up to horizon S.

    The radial path and the lateral field come from separate substreams of
    the same counter-based key, hence are independent by construction.
    S must be a whole number of unit s-bands.
    """
    n_bands = round(S)
    if abs(n_bands - S) > 1e-9 or n_bands < 1:
        raise ValueError("horizon S must be a positive integer (whole bands)")
    if round(1.0 / ds) * ds != 1.0:
        raise ValueError("1/ds must be an integer")
    plan = SeedPlan(seed)
    x = sample_radial_path(float(n_bands), ds, plan.generator("radial-lateral", 0, jump=0))
    sampler = get_band_sampler(ds, n_theta)
    bands = []
    prev = None
    for b in range(n_bands):
        rng = plan.generator("radial-lateral", 0, jump=1 + b)
        normals = rng.standard_normal((sampler.band_dim, 1))
        prev = sampler.first_band(normals) if prev is None else sampler.next_band(prev, normals)
        bands.append(prev.reshape(sampler.n_s, n_theta))
    y = np.concatenate(bands, axis=0)
    n_cells = round(S / ds)
    s_edges = np.arange(n_cells + 1) * ds
    s_centers = (np.arange(n_cells) + 0.5) * ds
    theta_centers = (np.arange(n_theta) + 0.5) * (2.0 * math.pi / n_theta)
    return RadialLateralSample(
        ds=ds,
        n_theta=n_theta,
        horizon=float(n_bands),
        s_edges=s_edges,
        x=x,
        s_centers=s_centers,
        theta_centers=theta_centers,
        y=y,
        var_y=sampler.var0,
        seed=seed,
    )
