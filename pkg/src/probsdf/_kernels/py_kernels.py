"""Pure-numpy kernel backend.

Same signatures and semantics as the compiled core in ``_core.pyx``;
vectorized over voxels / pixels / cells instead of looped. Output ordering is
canonical and matches the compiled backend element for element.
"""

from __future__ import annotations

import numpy as np

# must match volume_grid.GRID_EPS and the constants in _core.pyx
GRID_EPS = 1e-7
_KEY_OFF = 1 << 20
_EXP_ARG_MAX = 500.0

_SQRT_2PI = 2.5066282746310002


def _pack(cur):
    """Pack (N,3) int coords into int64 keys."""
    return (((cur[:, 2] + _KEY_OFF) << 42)
            | ((cur[:, 1] + _KEY_OFF) << 21)
            | (cur[:, 0] + _KEY_OFF))


def _dda_keys(p0, p1, cell):
    """Packed keys of all cells crossed by each segment p0[i] -> p1[i]."""
    n = p0.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.int64)
    cur = np.floor(p0 / cell + GRID_EPS).astype(np.int64)
    end = np.floor(p1 / cell + GRID_EPS).astype(np.int64)
    d = p1 - p0
    step = np.where(d > 0, 1, -1).astype(np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_delta = np.where(d != 0, cell / np.abs(d), np.inf)
        nxt = np.where(d > 0, (cur + 1) * cell, cur * cell)
        t_max = np.where(d != 0, (nxt - p0) / d, np.inf)
    parts = [_pack(cur)]
    active = np.any(cur != end, axis=1)
    if not active.any():
        return parts[0]
    max_steps = int(np.abs(end - cur).sum(axis=1).max()) + 6
    for _ in range(max_steps):
        rows = np.nonzero(active)[0]
        if rows.size == 0:
            break
        tm = t_max[rows]
        ax = np.argmin(tm, axis=1)
        r = np.arange(rows.size)
        # fp shortfall/overstep: hop straight toward the end cell
        stall = tm[r, ax] > 1.0
        if stall.any():
            gap = np.abs(end[rows] - cur[rows])
            ax = np.where(stall, np.argmax(gap, axis=1), ax)
            sgn = np.sign(end[rows, ax] - cur[rows, ax]).astype(np.int64)
            move = np.where(stall, sgn, step[rows, ax])
        else:
            move = step[rows, ax]
        cur[rows, ax] += move
        t_max[rows, ax] += np.where(stall, 0.0, t_delta[rows, ax])
        parts.append(_pack(cur[rows]))
        active[rows] = np.any(cur[rows] != end[rows], axis=1)
    return np.concatenate(parts)


def _pixel_rays(depth, noise, R, cam, fx, fy, cx, cy, h, trunc_scale):
    """Per valid pixel: unit world direction, ray length to the observed
    point, and the band half-width in ray-length units."""
    hgt, wid = depth.shape
    py, px = np.nonzero(depth > 0)
    z = depth[py, px]
    tau = noise[py, px]
    dirs_cam = np.stack([(px - cx) / fx, (py - cy) / fy, np.ones_like(z)],
                        axis=1)
    scale = np.linalg.norm(dirs_cam, axis=1)  # ray length per unit depth
    dir_w = (dirs_cam @ R.T) / scale[:, None]
    t_obs = z * scale
    band_t = trunc_scale * (h + tau) * scale
    return px, py, z, tau, dir_w, t_obs, band_t


def alloc_blocks(depth, noise, R, cam, fx, fy, cx, cy, h, trunc_scale):
    """Packed block keys (with duplicates) touched by the per-pixel ray
    segments within the observation band around each observed point."""
    _, _, _, _, dir_w, t_obs, band_t = _pixel_rays(
        depth, noise, R, cam, fx, fy, cx, cy, h, trunc_scale)
    t0 = np.maximum(t_obs - band_t, 1e-6)
    t1 = t_obs + band_t
    p0 = cam + t0[:, None] * dir_w
    p1 = cam + t1[:, None] * dir_w
    return _dda_keys(p0, p1, 8.0 * h)


def rho_map(depth, noise, R, cam, fx, fy, cx, cy, h, trunc_scale,
            skeys, spos, snrm, srad,
            theta, gamma, cos_amax, w_floor, rho_pr, out):
    """Per-pixel inlier ratio against the key-sorted surfel snapshot.

    Walks each valid pixel's ray segment voxel by voxel, scores every surfel
    stored in visited voxels, and keeps the best product of the distance,
    radius, and angle factors, floored by the occupancy prior. Invalid pixels
    get 0.
    """
    out.fill(0.0)
    px, py, z, tau, dir_w, t_obs, band_t = _pixel_rays(
        depth, noise, R, cam, fx, fy, cx, cy, h, trunc_scale)
    n = px.size
    if n == 0:
        return
    best = np.full(n, rho_pr)
    m = skeys.shape[0]
    if m == 0:
        out[py, px] = best
        return

    point = cam + t_obs[:, None] * dir_w
    t0 = np.maximum(t_obs - band_t, 1e-6)
    p0 = cam + t0[:, None] * dir_w
    p1 = cam + (t_obs + band_t)[:, None] * dir_w

    cur = np.floor(p0 / h + GRID_EPS).astype(np.int64)
    end = np.floor(p1 / h + GRID_EPS).astype(np.int64)
    d = p1 - p0
    step = np.where(d > 0, 1, -1).astype(np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_delta = np.where(d != 0, h / np.abs(d), np.inf)
        nxt = np.where(d > 0, (cur + 1) * h, cur * h)
        t_max = np.where(d != 0, (nxt - p0) / d, np.inf)

    def score(rays, keys):
        lo = np.searchsorted(skeys, keys)
        for j in range(3):  # at most 3 surfels per voxel
            idx = lo + j
            okr = idx < m
            okr[okr] &= skeys[idx[okr]] == keys[okr]
            if not okr.any():
                break
            rr = rays[okr]
            ii = idx[okr]
            pos = spos[ii]
            nrm = snrm[ii]
            rad = srad[ii]
            delta = point[rr] - pos
            along = np.einsum("ij,ij->i", nrm, delta)
            w_dist = np.exp(-np.minimum(0.5 * (along / theta) ** 2,
                                        _EXP_ARG_MAX))
            dd = np.sqrt(np.maximum(
                np.einsum("ij,ij->i", delta, delta) - along * along, 0.0))
            x = np.minimum(dd / np.maximum(rad, 1e-12), _EXP_ARG_MAX)
            w_rad = gamma + 2.0 * (1.0 - gamma) / (1.0 + np.exp(x))
            ca = np.abs(np.einsum("ij,ij->i", nrm, dir_w[rr]))
            w_ang = np.where(ca > cos_amax,
                             (ca - cos_amax) / (1.0 - cos_amax), w_floor)
            np.maximum.at(best, rr, w_dist * w_rad * w_ang)

    rays_all = np.arange(n)
    score(rays_all, _pack(cur))
    active = np.any(cur != end, axis=1)
    max_steps = int(np.abs(end - cur).sum(axis=1).max()) + 6 if active.any() else 0
    for _ in range(max_steps):
        rows = np.nonzero(active)[0]
        if rows.size == 0:
            break
        tm = t_max[rows]
        ax = np.argmin(tm, axis=1)
        r = np.arange(rows.size)
        stall = tm[r, ax] > 1.0
        if stall.any():
            gap = np.abs(end[rows] - cur[rows])
            ax = np.where(stall, np.argmax(gap, axis=1), ax)
            sgn = np.sign(end[rows, ax] - cur[rows, ax]).astype(np.int64)
            move = np.where(stall, sgn, step[rows, ax])
        else:
            move = step[rows, ax]
        cur[rows, ax] += move
        t_max[rows, ax] += np.where(stall, 0.0, t_delta[rows, ax])
        score(rows, _pack(cur[rows]))
        active[rows] = np.any(cur[rows] != end[rows], axis=1)
    out[py, px] = best


_LOCAL = None


def _local_coords():
    global _LOCAL
    if _LOCAL is None:
        ax = np.arange(8)
        zz, yy, xx = np.meshgrid(ax, ax, ax, indexing="ij")
        _LOCAL = np.stack([xx.ravel(), yy.ravel(), zz.ravel()], axis=1).astype(np.float64)
    return _LOCAL


def fuse_block(mu, sigma, a, b, tv, tw, bx, by, bz, h,
               Rcw, tcw, fx, fy, cx, cy, depth, noise, rho,
               trunc_scale, sigma_floor, ab_lo, ab_hi):
    """Fuse one frame into one block's 512 voxels, in place.

    Projects each voxel corner into the frame, reads the associated depth,
    noise, and inlier ratio, and applies the moment-matched posterior update
    plus the weighted-average baseline to every voxel whose observation lies
    within its band. Returns (updated count, sum of rho over updates).
    """
    hgt, wid = depth.shape
    corners = h * (_local_coords() + 8.0 * np.array([bx, by, bz]))
    cam = corners @ Rcw.T + tcw
    z_c = cam[:, 2]
    ok = z_c > 0
    if not ok.any():
        return 0, 0.0
    u = fx * cam[:, 0] / np.where(ok, z_c, 1.0) + cx
    v = fy * cam[:, 1] / np.where(ok, z_c, 1.0) + cy
    px = np.floor(u + 0.5).astype(np.int64)
    py = np.floor(v + 0.5).astype(np.int64)
    ok &= (px >= 0) & (px < wid) & (py >= 0) & (py < hgt)
    if not ok.any():
        return 0, 0.0
    pxo = px[ok]
    pyo = py[ok]
    z_i = depth[pyo, pxo]
    tau = noise[pyo, pxo]
    rho_v = rho[pyo, pxo]
    d = z_i - z_c[ok]
    band = trunc_scale * (h + tau)
    good = (z_i > 0) & (np.abs(d) <= band)
    if not good.any():
        return 0, 0.0
    idx = np.nonzero(ok)[0][good]
    d = d[good]
    tau = tau[good]
    band = band[good]
    rho_v = rho_v[good]

    # posterior update (mirrors psdf_fusion.psdf_update)
    sig = np.maximum(sigma[idx], sigma_floor)
    mu0 = mu[idx]
    a0 = a[idx]
    b0 = b[idx]
    tau2 = tau * tau
    sig2 = sig * sig
    s2 = 1.0 / (1.0 / sig2 + 1.0 / tau2)
    mm = s2 * (mu0 / sig2 + d / tau2)
    var = sig2 + tau2
    c1 = rho_v * np.exp(-0.5 * (d - mu0) ** 2 / var) / np.sqrt(2.0 * np.pi * var)
    c2 = (1.0 - rho_v) / (2.0 * band)
    w = c1 + c2
    safe = w > 0.0
    c1p = np.where(safe, c1 / np.where(safe, w, 1.0), 1.0)
    c2p = np.where(safe, c2 / np.where(safe, w, 1.0), 0.0)
    mu_n = c1p * mm + c2p * mu0
    second = c1p * (s2 + mm * mm) + c2p * (sig2 + mu0 * mu0)
    var_n = np.maximum(second - mu_n * mu_n, sigma_floor * sigma_floor)
    e1 = (c1p * (a0 + 1.0) + c2p * a0) / (a0 + b0 + 1.0)
    e2 = (c1p * (a0 + 1.0) * (a0 + 2.0) + c2p * a0 * (a0 + 1.0)) / \
        ((a0 + b0 + 1.0) * (a0 + b0 + 2.0))
    dv = e2 - e1 * e1
    ok_dv = dv > 0.0
    a_n = np.where(ok_dv, e1 * (e1 - e2) / np.where(ok_dv, dv, 1.0), ab_hi * e1)
    b_n = np.where(ok_dv, a_n * (1.0 - e1) / e1, ab_hi * (1.0 - e1))
    mu[idx] = mu_n
    sigma[idx] = np.maximum(np.sqrt(var_n), sigma_floor)
    a[idx] = np.clip(a_n, ab_lo, ab_hi)
    b[idx] = np.clip(b_n, ab_lo, ab_hi)

    # baseline
    w_t = tw[idx]
    tv[idx] = (w_t * tv[idx] + d) / (w_t + 1.0)
    tw[idx] = np.minimum(w_t + 1.0, 255.0)
    return int(idx.size), float(rho_v.sum())


def surfel_pass(field, spread, gate, conf, gate_thr, gx0, gy0, gz0, h,
                grad_eps, out_index, out_voxel, out_axis, out_pos, out_nrm,
                out_rad, out_cnf):
    """Recompute the 512x3 surfel slots of one block from padded fields.

    Padded arrays are (11,11,11) [z,y,x] covering local voxels -1..9 (NaN
    where unallocated). Emits surfels in canonical (voxel index, axis) order
    into the out buffers, writes slot rows into out_index, returns the count.
    """
    # gradients on local voxels 0..8 (padded 1..9), NaN-aware one-sided
    g = np.full((3, 9, 9, 9), np.nan)
    c = field[1:10, 1:10, 1:10]
    for axis in range(3):
        shift = [slice(1, 10)] * 3
        shift_hi = list(shift)
        shift_lo = list(shift)
        zyx = 2 - axis  # array dim for x/y/z axis
        shift_hi[zyx] = slice(2, 11)
        shift_lo[zyx] = slice(0, 9)
        right = field[tuple(shift_hi)]
        left = field[tuple(shift_lo)]
        have_r = np.isfinite(right)
        have_l = np.isfinite(left)
        central = (right - left) / (2.0 * h)
        one_r = (right - c) / h
        one_l = (c - left) / h
        gax = np.where(have_r & have_l, central,
                       np.where(have_r, one_r, np.where(have_l, one_l, np.nan)))
        g[axis] = gax

    f0 = field[1:9, 1:9, 1:9]      # local voxels 0..7
    gt0 = gate[1:9, 1:9, 1:9]
    cf0 = conf[1:9, 1:9, 1:9]
    sp0 = spread[1:9, 1:9, 1:9]

    emit = np.zeros((8, 8, 8, 3), dtype=bool)
    pos = np.empty((8, 8, 8, 3, 3))
    nrm = np.empty((8, 8, 8, 3, 3))
    rad = np.empty((8, 8, 8, 3))
    cnf = np.empty((8, 8, 8, 3))

    ax_grid = np.arange(8)
    zz, yy, xx = np.meshgrid(ax_grid, ax_grid, ax_grid, indexing="ij")
    base = np.stack([xx, yy, zz], axis=-1).astype(np.float64)
    origin = np.array([gx0, gy0, gz0], dtype=np.float64)

    for axis in range(3):
        zyx = 2 - axis
        sh = [slice(1, 9)] * 3
        sh[zyx] = slice(2, 10)
        f1 = field[tuple(sh)]
        gt1 = gate[tuple(sh)]
        cf1 = conf[tuple(sh)]
        sp1 = spread[tuple(sh)]
        with np.errstate(invalid="ignore"):
            cross = (f0 * f1 < 0.0) & (gt0 > gate_thr) & (gt1 > gate_thr)
        a0 = np.abs(f0)
        a1 = np.abs(f1)
        w1 = a1 / (a0 + a1)
        w2 = 1.0 - w1
        # corner gradients: g at local 0..7 and at +1 along axis
        g1 = g[:, :8, :8, :8]
        shg = [slice(0, 8)] * 3
        shg[zyx] = slice(1, 9)
        g2 = g[(slice(None),) + tuple(shg)]
        gi = w1[None] * g1 + w2[None] * g2
        norm = np.sqrt(np.einsum("kzyx,kzyx->zyx", gi, gi))
        with np.errstate(invalid="ignore"):
            cross &= np.isfinite(norm) & (norm >= grad_eps)
        emit[..., axis] = cross
        p1 = (origin + base) * h
        p2 = p1.copy()
        p2[..., axis] += h
        pos[..., axis, :] = w1[..., None] * p1 + w2[..., None] * p2
        with np.errstate(invalid="ignore"):
            nrm[..., axis, :] = np.moveaxis(gi, 0, -1) / norm[..., None]
        rad[..., axis] = np.maximum(w1 * sp0 + w2 * sp1, 1e-12)
        cnf[..., axis] = np.minimum(cf0, cf1)

    flat = emit.reshape(-1)
    rows = np.nonzero(flat)[0]
    n = rows.size
    out_index.fill(-1)
    out_index.reshape(-1)[rows] = np.arange(n, dtype=np.int32)
    out_voxel[:n] = (rows // 3).astype(np.int32)
    out_axis[:n] = (rows % 3).astype(np.int8)
    out_pos[:n] = pos.reshape(-1, 3)[rows]
    out_nrm[:n] = nrm.reshape(-1, 3)[rows]
    out_rad[:n] = rad.reshape(-1)[rows]
    out_cnf[:n] = cnf.reshape(-1)[rows]
    return n


def cell_pass(field9, spread9, idx_pad, sigma_thr, tri_table, edge_owner,
              out_tris):
    """Marching-cubes triangles of one block from padded (9,9,9) fields.

    A cell is skipped when any of its 8 corners is NaN; a triangle is dropped
    when any of its edges lacks a surfel or has a corner voxel with spread
    above sigma_thr. Emits global vertex-id triples in canonical (cell,
    table-slot) order; winding is flipped from table order so facet normals
    agree with the field gradient (pointing from negative to positive field).
    Returns the triangle count.
    """
    f = field9
    inside = f < 0.0
    finite = np.isfinite(f)
    case = np.zeros((8, 8, 8), dtype=np.int32)
    complete = np.ones((8, 8, 8), dtype=bool)
    corners = ((0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
               (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1))
    for bit, (dx, dy, dz) in enumerate(corners):
        sub = (slice(dz, dz + 8), slice(dy, dy + 8), slice(dx, dx + 8))
        case |= inside[sub].astype(np.int32) << bit
        complete &= finite[sub]
    case = np.where(complete, case, 0)
    cells = np.nonzero(((case != 0) & (case != 255)).reshape(-1))[0]
    if cells.size == 0:
        return 0
    cz = cells // 64
    cy = (cells // 8) % 8
    cx = cells % 8
    rows = tri_table[case.reshape(-1)[cells]]         # (Nc, 16)
    edges = rows[:, :15].reshape(-1, 5, 3)            # (Nc, 5, 3)
    valid = edges[:, :, 0] >= 0                       # (Nc, 5)
    e = np.maximum(edges, 0)
    own = edge_owner[e]                               # (Nc, 5, 3, 4)
    oz = cz[:, None, None] + own[..., 2]
    oy = cy[:, None, None] + own[..., 1]
    ox = cx[:, None, None] + own[..., 0]
    axis = own[..., 3]
    ids = idx_pad[oz, oy, ox, axis]                   # (Nc, 5, 3)
    s_own = spread9[oz, oy, ox]
    pz = oz + (axis == 2)
    py = oy + (axis == 1)
    px = ox + (axis == 0)
    s_par = spread9[pz, py, px]
    with np.errstate(invalid="ignore"):
        edge_ok = (ids >= 0) & ~(s_own > sigma_thr) & ~(s_par > sigma_thr)
    tri_ok = valid & np.all(edge_ok, axis=2)          # (Nc, 5)
    keep = tri_ok.reshape(-1)
    n = int(keep.sum())
    flat_ids = ids.reshape(-1, 3)[keep]
    out_tris[:n, 0] = flat_ids[:, 0]
    out_tris[:n, 1] = flat_ids[:, 2]  # winding flip: normals face field > 0
    out_tris[:n, 2] = flat_ids[:, 1]
    return n
