"""Round-sphere geometry in stereographic plane coordinates.

The sphere is identified with the plane through stereographic projection.
The round metric has density ghat(z) = 4 / (1 + |z|^2)^2 with respect to
Lebesgue measure, total volume 4*pi, and an explicit Green function for the
Laplacian with zero mean against the round volume measure:

    G(z, w) = ln(1/|z - w|) - (ln ghat(z) + ln ghat(w)) / 4 + ln 2 - 1/2.

Plane points are plain Python/numpy complex numbers throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TOTAL_VOLUME = 4.0 * math.pi

__all__ = [
    "TOTAL_VOLUME",
    "metric_density",
    "log_metric_density",
    "green_round",
    "PolarGrid",
    "build_polar_grid",
    "integrate_round",
]


def metric_density(z):
    """Round metric density ghat(z) = 4 / (1 + |z|^2)^2."""
    z = np.asarray(z, dtype=complex)
    d = 4.0 / (1.0 + z.real**2 + z.imag**2) ** 2
    return float(d) if d.ndim == 0 else d


def log_metric_density(z):
    z = np.asarray(z, dtype=complex)
    v = math.log(4.0) - 2.0 * np.log1p(z.real**2 + z.imag**2)
    return float(v) if v.ndim == 0 else v


def green_round(z, w):
    """Green function of the round-sphere Laplacian (zero ghat-mean).

    Symmetric in its arguments and logarithmically singular on the
    diagonal; coincident points raise ValueError.
    """
    z = np.asarray(z, dtype=complex)
    w = np.asarray(w, dtype=complex)
    sep = np.abs(z - w)
    if np.any(sep == 0.0):
        raise ValueError("green_round is singular at coincident points")
    g = (
        -np.log(sep)
        - 0.25 * (log_metric_density(z) + log_metric_density(w))
        + math.log(2.0)
        - 0.5
    )
    return float(g) if g.ndim == 0 else g


def green_round_infinity(w):
    """Limit of green_round(z, w) as z tends to infinity (the north pole)."""
    g = 0.5 * math.log(2.0) - 0.25 * np.asarray(log_metric_density(w)) - 0.5
    return float(g) if g.ndim == 0 else g


@dataclass(eq=False)
class PolarGrid:
    """Tensor polar quadrature grid: geometric radii, uniform angles.

    Cells are rectangles in (u, theta) with u = ln r.  Nodes sit at cell
    centers and weights are midpoint weights for the round volume measure,
    ghat(e^u) * e^{2u} * du * dtheta.  The mass of the plane beyond the
    radial cutoff is 4*pi/(1 + R^2) exactly and is stored as ``tail_mass``;
    the hole below r_min carries 4*pi*r_min^2/(1+r_min^2), negligible for
    the default r_min and therefore not corrected for.
    """

    u_edges: np.ndarray
    theta_edges: np.ndarray
    cutoff: float
    tail_mass: float
    nodes: np.ndarray = field(init=False)
    weights: np.ndarray = field(init=False)

    def __post_init__(self):
        uc = 0.5 * (self.u_edges[:-1] + self.u_edges[1:])
        tc = 0.5 * (self.theta_edges[:-1] + self.theta_edges[1:])
        du = np.diff(self.u_edges)
        dt = np.diff(self.theta_edges)
        U, T = np.meshgrid(uc, tc, indexing="ij")
        DU, DT = np.meshgrid(du, dt, indexing="ij")
        r = np.exp(U)
        self.nodes = (r * np.exp(1j * T)).ravel()
        w = 4.0 / (1.0 + r**2) ** 2 * np.exp(2.0 * U) * DU * DT
        self.weights = w.ravel()

    @property
    def n_radial(self) -> int:
        return len(self.u_edges) - 1

    @property
    def n_angular(self) -> int:
        return len(self.theta_edges) - 1


def build_polar_grid(
    n_radial: int = 256,
    n_angular: int = 128,
    r_min: float = 1e-6,
    r_max: float = 1e3,
) -> PolarGrid:
    u_edges = np.linspace(math.log(r_min), math.log(r_max), n_radial + 1)
    theta_edges = np.linspace(0.0, 2.0 * math.pi, n_angular + 1)
    tail = TOTAL_VOLUME / (1.0 + r_max**2)
    return PolarGrid(u_edges, theta_edges, cutoff=r_max, tail_mass=tail)


def _refine_block(f, u0, u1, t0, t1, up, tp, max_depth):
    """Adaptively subdivide one (u, theta) cell around a singular point.

    Returns the quadrature contribution of the cell.  Subcells are split
    while the singular point is within two cell widths; at max depth the
    subcell containing the point is evaluated at its midpoint if finite
    there, else dropped (its measure is ~4^-max_depth of a cell).
    """
    stack = [(u0, u1, t0, t1, 0)]
    us, ts, dus, dts = [], [], [], []
    while stack:
        a0, a1, b0, b1, depth = stack.pop()
        h = max(a1 - a0, b1 - b0)
        du_p = max(0.0, a0 - up, up - a1)
        dt_raw = max(0.0, b0 - tp, tp - b1)
        dt_p = min(dt_raw, 2.0 * math.pi - dt_raw)
        dist = math.hypot(du_p, dt_p)
        if depth < max_depth and dist < 2.0 * h:
            am, bm = 0.5 * (a0 + a1), 0.5 * (b0 + b1)
            stack += [
                (a0, am, b0, bm, depth + 1),
                (am, a1, b0, bm, depth + 1),
                (a0, am, bm, b1, depth + 1),
                (am, a1, bm, b1, depth + 1),
            ]
        else:
            us.append(0.5 * (a0 + a1))
            ts.append(0.5 * (b0 + b1))
            dus.append(a1 - a0)
            dts.append(b1 - b0)
    u = np.array(us)
    r = np.exp(u)
    z = r * np.exp(1j * np.array(ts))
    w = 4.0 / (1.0 + r**2) ** 2 * np.exp(2.0 * u) * np.array(dus) * np.array(dts)
    vals = np.asarray(f(z), dtype=float)
    bad = ~np.isfinite(vals)
    if bad.any():
        # only the max-depth subcell containing the singularity may be bad
        vals = np.where(bad, 0.0, vals)
        w = np.where(bad, 0.0, w)
    return float(np.dot(vals, w))


def _midpoint_sum(f, u_edges, theta_edges, skip_mask):
    uc = 0.5 * (u_edges[:-1] + u_edges[1:])
    tc = 0.5 * (theta_edges[:-1] + theta_edges[1:])
    du = u_edges[1] - u_edges[0]
    dt = theta_edges[1] - theta_edges[0]
    U, T = np.meshgrid(uc, tc, indexing="ij")
    keep = ~skip_mask
    u, t = U[keep], T[keep]
    r = np.exp(u)
    z = r * np.exp(1j * t)
    w = 4.0 / (1.0 + r**2) ** 2 * np.exp(2.0 * u) * du * dt
    vals = np.asarray(f(z), dtype=float)
    if not np.isfinite(vals).all():
        bad = int(np.nonzero(~np.isfinite(vals))[0][0])
        raise ValueError(
            f"integrand is not finite at z = {z[bad]:.6g}; "
            "declare the point via singular_points"
        )
    return float(np.dot(vals, w))


def integrate_round(
    f,
    grid: PolarGrid,
    tail_value: float = 0.0,
    singular_points=(),
    max_depth: int = 12,
) -> float:
    """Quadrature of f against the round volume measure.

    ``f`` must accept a complex ndarray and return values of the same
    shape.  ``tail_value`` is the limit of f at infinity (the north pole);
    the exact tail mass of the grid multiplies it.  Cells near any point
    in ``singular_points`` are subdivided adaptively so that integrable
    (logarithmic or power-law) singularities are resolved; the remaining
    cells are then integrated at step h and h/2 and Richardson
    extrapolated, which cancels the h^2 boundary mismatch the excluded
    block would otherwise leave.  Without singular points this is the
    plain midpoint rule.  Non-finite values at regular nodes raise
    ValueError.
    """
    if not len(singular_points):
        base = _midpoint_sum(
            f, grid.u_edges, grid.theta_edges, np.zeros((grid.n_radial, grid.n_angular), bool)
        )
        return base + tail_value * grid.tail_mass

    n_t = grid.n_angular
    du = grid.u_edges[1] - grid.u_edges[0]
    dt = grid.theta_edges[1] - grid.theta_edges[0]
    skip = np.zeros((grid.n_radial, n_t), dtype=bool)
    refined = 0.0
    for p in np.asarray(singular_points, dtype=complex).ravel():
        up = math.log(abs(p))
        tp = math.atan2(p.imag, p.real) % (2.0 * math.pi)
        iu = int(np.clip((up - grid.u_edges[0]) // du, 0, grid.n_radial - 1))
        it = int((tp - grid.theta_edges[0]) // dt) % n_t
        for ju in range(max(0, iu - 1), min(grid.n_radial, iu + 2)):
            for k in range(-1, 2):
                jt = (it + k) % n_t
                if skip[ju, jt]:
                    continue
                skip[ju, jt] = True
                refined += _refine_block(
                    f,
                    grid.u_edges[ju],
                    grid.u_edges[ju + 1],
                    grid.theta_edges[jt],
                    grid.theta_edges[jt + 1],
                    up,
                    tp,
                    max_depth,
                )
    coarse = _midpoint_sum(f, grid.u_edges, grid.theta_edges, skip)
    u_fine = np.linspace(grid.u_edges[0], grid.u_edges[-1], 2 * grid.n_radial + 1)
    t_fine = np.linspace(grid.theta_edges[0], grid.theta_edges[-1], 2 * n_t + 1)
    skip_fine = np.repeat(np.repeat(skip, 2, axis=0), 2, axis=1)
    fine = _midpoint_sum(f, u_fine, t_fine, skip_fine)
    outside = (4.0 * fine - coarse) / 3.0
    return outside + refined + tail_value * grid.tail_mass
