"""Independent oracles used by the test suite.

Everything here recomputes expected values by brute force (numerical
quadrature, dense rasterization, all-pairs search) without touching the
closed-form paths under test.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import roots_jacobi

# ---------------------------------------------------------------------------
# exact single-step posterior by 2-D numerical quadrature

def quad_posterior(mu, sigma, a, b, d_obs, tau, rho, band,
                   nodes_per_seg=60, n_pi=24):
    """Moments of the exact single-step posterior over (D, pi).

    The posterior density is

        q(D, pi) ∝ [ rho/ab_mean * pi * N(d; D, tau^2)
                   + (1-rho)/(1-ab_mean) * (1-pi) * U(d; -band, band) ]
                   * Beta(pi; a, b) * N(D; mu, sigma^2)

    with ab_mean = a/(a+b); the per-component reweighting makes the evidence
    weights integrate to rho and 1-rho, which is the geometric-estimate
    substitution under test (rho = ab_mean recovers the plain mixture
    likelihood).

    D is integrated by piecewise Gauss-Legendre over a domain covering every
    component's support (the Gaussians extend beyond the band; the uniform is
    a density in the observation, constant in D). pi is integrated by
    Gauss-Jacobi with the Beta kernel as weight, so the remaining polynomial
    factors are integrated exactly. The tensor sum is evaluated in factored
    form, which is algebraically identical to the full double sum.

    Returns dict with mean_d, var_d, mean_pi, second_pi.
    """
    mu, sigma, a, b = float(mu), float(sigma), float(a), float(b)
    d_obs, tau, rho, band = float(d_obs), float(tau), float(rho), float(band)
    ab_mean = a / (a + b)
    uniform = 1.0 / (2.0 * band)

    # breakpoints resolve each factor's scale; m/s only guide node placement
    prec = 1.0 / sigma ** 2 + 1.0 / tau ** 2
    s_loc = math.sqrt(1.0 / prec)
    m_loc = (mu / sigma ** 2 + d_obs / tau ** 2) / prec
    pts = []
    for c, w in ((mu, sigma), (d_obs, tau), (m_loc, s_loc)):
        for k in (0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 14.0):
            pts.extend((c - k * w, c + k * w))
    lo = min(mu - 14 * sigma, d_obs - 14 * tau, m_loc - 14 * s_loc)
    hi = max(mu + 14 * sigma, d_obs + 14 * tau, m_loc + 14 * s_loc)
    pts = sorted({p for p in pts if lo <= p <= hi} | {lo, hi})

    gl_x, gl_w = np.polynomial.legendre.leggauss(nodes_per_seg)
    d_nodes, d_weights = [], []
    for p0, p1 in zip(pts[:-1], pts[1:]):
        if p1 - p0 <= 0:
            continue
        half = 0.5 * (p1 - p0)
        d_nodes.append(half * gl_x + 0.5 * (p0 + p1))
        d_weights.append(half * gl_w)
    D = np.concatenate(d_nodes)
    W = np.concatenate(d_weights)

    def npdf(x, loc, scale):
        return np.exp(-0.5 * ((x - loc) / scale) ** 2) / \
            (scale * math.sqrt(2.0 * math.pi))

    prior_d = npdf(D, mu, sigma)
    f1 = (rho / ab_mean) * npdf(d_obs, D, tau) * prior_d
    f2 = ((1.0 - rho) / (1.0 - ab_mean)) * uniform * prior_d
    t1 = np.array([np.sum(W * D ** p * f1) for p in range(3)])
    t2 = np.array([np.sum(W * D ** p * f2) for p in range(3)])

    # Gauss-Jacobi on [-1,1] with weight (1-x)^(b-1) (1+x)^(a-1): the Beta
    # kernel. The remaining pi-polynomials are integrated exactly.
    xj, wj = roots_jacobi(n_pi, b - 1.0, a - 1.0)
    pi_k = 0.5 * (xj + 1.0)
    A = np.array([np.sum(wj * pi_k ** j * pi_k) for j in range(3)])
    B = np.array([np.sum(wj * pi_k ** j * (1.0 - pi_k)) for j in range(3)])

    z = A[0] * t1[0] + B[0] * t2[0]
    mean_d = (A[0] * t1[1] + B[0] * t2[1]) / z
    second_d = (A[0] * t1[2] + B[0] * t2[2]) / z
    mean_pi = (A[1] * t1[0] + B[1] * t2[0]) / z
    second_pi = (A[2] * t1[0] + B[2] * t2[0]) / z
    return {
        "mean_d": float(mean_d),
        "var_d": float(second_d - mean_d ** 2),
        "mean_pi": float(mean_pi),
        "second_pi": float(second_pi),
    }


def quad_filter_step(mu, sigma, a, b, d_obs, tau, rho, band, **kw):
    """One oracle filter step: quadrature moments projected back onto the
    Beta x Gaussian family by matching means and second moments."""
    mom = quad_posterior(mu, sigma, a, b, d_obs, tau, rho, band, **kw)
    e1, e2 = mom["mean_pi"], mom["second_pi"]
    a_n = e1 * (e1 - e2) / (e2 - e1 * e1)
    b_n = a_n * (1.0 - e1) / e1
    return mom["mean_d"], math.sqrt(mom["var_d"]), a_n, b_n


# ---------------------------------------------------------------------------
# geometry oracles

def rasterize_segment_cells(p0, p1, cell, samples_per_cell=50):
    """Cells touched by densely sampling the segment p0 -> p1 (a lower bound
    on the exact crossed-cell set for validating traversal code)."""
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    length = float(np.linalg.norm(p1 - p0))
    n = max(int(length / cell * samples_per_cell), 2)
    ts = np.linspace(0.0, 1.0, n)
    pts = p0 + ts[:, None] * (p1 - p0)
    cells = np.floor(pts / cell + 1e-7).astype(np.int64)
    return {tuple(c) for c in cells}


def brute_collect_voxels(grid, p0, p1):
    """All allocated voxels whose cell the segment passes through, found by
    scanning every allocated voxel's cell against a dense rasterization."""
    touched = rasterize_segment_cells(p0, p1, grid.voxel_size)
    out = []
    for coord, blk in grid.blocks.items():
        for idx in range(512):
            lx, ly, lz = idx % 8, (idx // 8) % 8, idx // 64
            g = (8 * coord[0] + lx, 8 * coord[1] + ly, 8 * coord[2] + lz)
            if g in touched:
                out.append((coord, idx))
    return out
