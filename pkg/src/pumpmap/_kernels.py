"""Numba kernels for ray/CSG geometry and photon transport.

Scene geometry is two flat float tables (see ``Scene._build_arrays``):

    sol[s]  = has_cyl, cx, cy, cz, ax, ay, az, radius, plane_start, plane_count,
              aabb_lo(3), aabb_hi(3), material, region
    pl[j]   = nx, ny, nz, offset        (half-space n.x <= offset)

Every solid is convex: an optional infinite cylinder intersected with its
half-spaces.  Surface ids are ``64 * solid + k`` with k = 0 for the cylinder
wall and k = 1 + j for the solid's j-th plane.
"""

import math

import numpy as np
from numba import njit

INF = np.inf
SURF_STRIDE = 64

# sol columns
HAS_CYL, CX, AX, RAD, P_START, P_COUNT, BLO, BHI, MAT, REGION = 0, 1, 4, 7, 8, 9, 10, 13, 16, 17
SOL_COLS = 18

# tallies layout
ABSORBED, ESCAPED, RETRO, DETECTOR, TERMINATED, NONCONVERGED = range(6)
N_TALLIES = 6

REGION_DETECTOR = 4

EDGE_TOL = 1e-9
NUDGE = 1e-7
AABB_PAD = 1e-6


@njit(cache=True, nogil=True)
def _aabb_hit(sol, s, o, d, tmin, tmax):
    """Slab test: does o + t d meet the padded box of solid s for t in (tmin, tmax)?"""
    lo_t = tmin
    hi_t = tmax
    for ax in range(3):
        lo = sol[s, BLO + ax] - AABB_PAD
        hi = sol[s, BHI + ax] + AABB_PAD
        if d[ax] == 0.0:
            if o[ax] < lo or o[ax] > hi:
                return False
        else:
            inv = 1.0 / d[ax]
            ta = (lo - o[ax]) * inv
            tb = (hi - o[ax]) * inv
            if ta > tb:
                ta, tb = tb, ta
            if ta > lo_t:
                lo_t = ta
            if tb < hi_t:
                hi_t = tb
            if lo_t > hi_t:
                return False
    return True


@njit(cache=True, nogil=True)
def solid_interval(sol, pl, s, o, d):
    """Parameter interval [t0, t1] of the line o + t d inside solid s.

    Returns (t0, id0, t1, id1, ok) where id0/id1 are the surfaces bounding it.
    """
    t0 = -INF
    t1 = INF
    id0 = -1
    id1 = -1
    if sol[s, HAS_CYL] > 0.5:
        ox = o[0] - sol[s, CX]
        oy = o[1] - sol[s, CX + 1]
        oz = o[2] - sol[s, CX + 2]
        ax = sol[s, AX]
        ay = sol[s, AX + 1]
        az = sol[s, AX + 2]
        od = ox * ax + oy * ay + oz * az
        dd = d[0] * ax + d[1] * ay + d[2] * az
        px = ox - od * ax
        py = oy - od * ay
        pz = oz - od * az
        qx = d[0] - dd * ax
        qy = d[1] - dd * ay
        qz = d[2] - dd * az
        a = qx * qx + qy * qy + qz * qz
        b = 2.0 * (px * qx + py * qy + pz * qz)
        r = sol[s, RAD]
        c = px * px + py * py + pz * pz - r * r
        if a < 1e-300:
            if c > 0.0:
                return t0, -1, t1, -1, False
        else:
            disc = b * b - 4.0 * a * c
            if disc <= 0.0:
                return t0, -1, t1, -1, False
            sq = math.sqrt(disc)
            qq = -0.5 * (b + math.copysign(sq, b))
            ra = qq / a
            rb = c / qq if qq != 0.0 else -ra
            t0 = min(ra, rb)
            t1 = max(ra, rb)
            id0 = SURF_STRIDE * s
            id1 = SURF_STRIDE * s
    start = int(sol[s, P_START])
    for k in range(int(sol[s, P_COUNT])):
        j = start + k
        dn = pl[j, 0] * d[0] + pl[j, 1] * d[1] + pl[j, 2] * d[2]
        num = pl[j, 3] - (pl[j, 0] * o[0] + pl[j, 1] * o[1] + pl[j, 2] * o[2])
        if abs(dn) < 1e-300:
            if num < 0.0:
                return t0, -1, t1, -1, False
            continue
        t = num / dn
        if dn > 0.0:
            if t < t1:
                t1 = t
                id1 = SURF_STRIDE * s + 1 + k
        else:
            if t > t0:
                t0 = t
                id0 = SURF_STRIDE * s + 1 + k
    return t0, id0, t1, id1, t0 < t1


@njit(cache=True, nogil=True)
def nearest_crossing(sol, pl, o, d, tmin, tmax):
    """Nearest and runner-up boundary crossings in (tmin, tmax).

    Returns (t, sid, t2, sid2); t = inf and sid = -1 when nothing is hit.
    """
    best = INF
    bid = -1
    second = INF
    sid2 = -1
    for s in range(sol.shape[0]):
        if not _aabb_hit(sol, s, o, d, tmin, tmax):
            continue
        t0, id0, t1, id1, ok = solid_interval(sol, pl, s, o, d)
        if not ok:
            continue
        for m in range(2):
            if m == 0:
                t = t0
                sid = id0
            else:
                t = t1
                sid = id1
            if sid < 0 or not (t > tmin) or t >= tmax:
                continue
            if t < best:
                second = best
                sid2 = bid
                best = t
                bid = sid
            elif t < second:
                second = t
                sid2 = sid
    return best, bid, second, sid2


@njit(cache=True, nogil=True)
def inside_solid(sol, pl, s, p):
    for ax in range(3):
        if p[ax] < sol[s, BLO + ax] - AABB_PAD or p[ax] > sol[s, BHI + ax] + AABB_PAD:
            return False
    if sol[s, HAS_CYL] > 0.5:
        ox = p[0] - sol[s, CX]
        oy = p[1] - sol[s, CX + 1]
        oz = p[2] - sol[s, CX + 2]
        od = ox * sol[s, AX] + oy * sol[s, AX + 1] + oz * sol[s, AX + 2]
        px = ox - od * sol[s, AX]
        py = oy - od * sol[s, AX + 1]
        pz = oz - od * sol[s, AX + 2]
        if px * px + py * py + pz * pz > sol[s, RAD] * sol[s, RAD]:
            return False
    start = int(sol[s, P_START])
    for k in range(int(sol[s, P_COUNT])):
        j = start + k
        if pl[j, 0] * p[0] + pl[j, 1] * p[1] + pl[j, 2] * p[2] > pl[j, 3]:
            return False
    return True


@njit(cache=True, nogil=True)
def locate(sol, pl, p):
    """Index of the highest-precedence (last) solid containing p, or -1."""
    for s in range(sol.shape[0] - 1, -1, -1):
        if inside_solid(sol, pl, s, p):
            return s
    return -1


@njit(cache=True, nogil=True)
def locate_many(sol, pl, pts):
    out = np.empty(pts.shape[0], dtype=np.int64)
    for i in range(pts.shape[0]):
        out[i] = locate(sol, pl, pts[i])
    return out


@njit(cache=True, nogil=True)
def _material(sol, s):
    return 0 if s < 0 else int(sol[s, MAT])


@njit(cache=True, nogil=True)
def surface_normal(sol, pl, sid, p):
    """Outward unit normal (nx, ny, nz) of surface sid at p."""
    s = sid // SURF_STRIDE
    k = sid % SURF_STRIDE
    if k == 0:
        ox = p[0] - sol[s, CX]
        oy = p[1] - sol[s, CX + 1]
        oz = p[2] - sol[s, CX + 2]
        od = ox * sol[s, AX] + oy * sol[s, AX + 1] + oz * sol[s, AX + 2]
        nx = ox - od * sol[s, AX]
        ny = oy - od * sol[s, AX + 1]
        nz = oz - od * sol[s, AX + 2]
        nn = math.sqrt(nx * nx + ny * ny + nz * nz)
        return nx / nn, ny / nn, nz / nn
    j = int(sol[s, P_START]) + k - 1
    return pl[j, 0], pl[j, 1], pl[j, 2]


@njit(cache=True, nogil=True)
def bbox_exit(lo, hi, o, d):
    """Distance to leave the box from inside, and the face index (2*axis + side)."""
    t = INF
    face = -1
    for ax in range(3):
        if d[ax] > 0.0:
            ta = (hi[ax] - o[ax]) / d[ax]
            if ta < t:
                t = ta
                face = 2 * ax + 1
        elif d[ax] < 0.0:
            ta = (lo[ax] - o[ax]) / d[ax]
            if ta < t:
                t = ta
                face = 2 * ax
    return max(t, 0.0), face


@njit(cache=True, nogil=True)
def fresnel_unpolarized(n1, n2, cos_i):
    """(R, cos_t); R = 1 and cos_t = 0 on total internal reflection."""
    if n1 == n2:
        return 0.0, cos_i
    eta = n1 / n2
    sin2t = eta * eta * (1.0 - cos_i * cos_i)
    if sin2t >= 1.0:
        return 1.0, 0.0
    cos_t = math.sqrt(1.0 - sin2t)
    rs = (n1 * cos_i - n2 * cos_t) / (n1 * cos_i + n2 * cos_t)
    rp = (n2 * cos_i - n1 * cos_t) / (n2 * cos_i + n1 * cos_t)
    return 0.5 * (rs * rs + rp * rp), cos_t


@njit(cache=True, nogil=True)
def _clamp(i, n):
    if i < 0:
        return 0
    if i >= n:
        return n - 1
    return i


@njit(cache=True, nogil=True)
def _dda_axis(o, d, origin, pitch, n):
    g = (o - origin) / pitch
    i = _clamp(int(math.floor(g)), n)
    if d > 0.0:
        return i, 1, ((i + 1) - g) * pitch / d, pitch / d
    if d < 0.0:
        return i, -1, (g - i) * pitch / (-d), pitch / (-d)
    return i, 0, INF, INF


@njit(cache=True, nogil=True)
def deposit_segment(o, d, length, w, alpha, origin, pitch, values):
    """Deposit w(1 - exp(-alpha*length)) along a segment, voxel by voxel.

    Each traversed voxel receives w * (exp(-alpha*t_in) - exp(-alpha*t_out))
    for its own sub-segment [t_in, t_out].  Returns (deposited, exp(-alpha*L)).
    """
    nx, ny, nz = values.shape
    ix, sx, tx, dx = _dda_axis(o[0], d[0], origin[0], pitch, nx)
    iy, sy, ty, dy = _dda_axis(o[1], d[1], origin[1], pitch, ny)
    iz, sz, tz, dz = _dda_axis(o[2], d[2], origin[2], pitch, nz)
    e_prev = 1.0
    total = 0.0
    while True:
        if tx <= ty and tx <= tz:
            tn = tx
            ax = 0
        elif ty <= tz:
            tn = ty
            ax = 1
        else:
            tn = tz
            ax = 2
        tend = min(tn, length)
        e_end = math.exp(-alpha * tend)
        dep = w * (e_prev - e_end)
        values[ix, iy, iz] += dep
        total += dep
        e_prev = e_end
        if tend >= length:
            break
        if ax == 0:
            ix = _clamp(ix + sx, nx)
            tx += dx
        elif ax == 1:
            iy = _clamp(iy + sy, ny)
            ty += dy
        else:
            iz = _clamp(iz + sz, nz)
            tz += dz
    return total, e_prev


@njit(cache=True, nogil=True)
def trace_batch(sol, pl, lo, hi, mat_n, mat_alpha, grid_origin, pitch, values,
                pos, dirs, w0, seed, cutoff_frac, bounce_limit, retro_center, retro_radius,
                tallies, moment):
    """Transport a batch of rays, accumulating into values/tallies/moment.

    values holds absorbed power (W) per voxel.  Material 0 is the surrounding
    air.  The medium is tracked across interfaces: it changes on transmission
    and is kept on reflection.
    """
    np.random.seed(seed)
    n_rays = pos.shape[0]
    cutoff = cutoff_frac * w0
    o = np.empty(3)
    d = np.empty(3)
    p = np.empty(3)
    q = np.empty(3)
    for i in range(n_rays):
        for ax in range(3):
            o[ax] = pos[i, ax]
            d[ax] = dirs[i, ax]
            q[ax] = o[ax] + NUDGE * d[ax]
        s_cur = locate(sol, pl, q)
        m_cur = _material(sol, s_cur)
        w = w0
        bounces = 0
        while True:
            if bounces >= bounce_limit:
                tallies[TERMINATED] += w
                tallies[NONCONVERGED] += w
                break
            bounces += 1
            tb, face = bbox_exit(lo, hi, o, d)
            t, sid, t2, sid2 = nearest_crossing(sol, pl, o, d, EDGE_TOL, tb)
            leaving = sid < 0
            seg = tb if leaving else t
            alpha = mat_alpha[m_cur]
            if alpha > 0.0 and seg > 0.0:
                dep, trans = deposit_segment(o, d, seg, w, alpha, grid_origin, pitch, values)
                tallies[ABSORBED] += dep
                lin = (1.0 - trans * (1.0 + alpha * seg)) / alpha
                for ax in range(3):
                    moment[ax] += w * ((1.0 - trans) * o[ax] + d[ax] * lin)
                w = w * trans
            if leaving:
                for ax in range(3):
                    p[ax] = o[ax] + tb * d[ax]
                dx = p[0] - retro_center[0]
                dy = p[1] - retro_center[1]
                if face == 4 and dx * dx + dy * dy <= retro_radius * retro_radius:
                    tallies[RETRO] += w
                else:
                    tallies[ESCAPED] += w
                break
            if w < cutoff:
                if np.random.random() < 0.5:
                    tallies[TERMINATED] -= w
                    w = 2.0 * w
                else:
                    tallies[TERMINATED] += w
                    break
            for ax in range(3):
                p[ax] = o[ax] + t * d[ax]
            if sid2 >= 0 and t2 - t < EDGE_TOL:
                ax_, ay_, az_ = surface_normal(sol, pl, sid, p)
                bx_, by_, bz_ = surface_normal(sol, pl, sid2, p)
                if abs(ax_ * bx_ + ay_ * by_ + az_ * bz_) < 1.0 - 1e-12:
                    # edge or apex contact: step straight past it
                    for ax in range(3):
                        o[ax] = p[ax] + EDGE_TOL * d[ax]
                        q[ax] = o[ax] + NUDGE * d[ax]
                    s_cur = locate(sol, pl, q)
                    m_cur = _material(sol, s_cur)
                    continue
            for ax in range(3):
                q[ax] = p[ax] + NUDGE * d[ax]
            s_next = locate(sol, pl, q)
            if s_next >= 0 and int(sol[s_next, REGION]) == REGION_DETECTOR:
                tallies[DETECTOR] += w
                break
            m_next = _material(sol, s_next)
            if mat_alpha[m_next] == INF:
                nx, ny, nz = values.shape
                ix = _clamp(int(math.floor((q[0] - grid_origin[0]) / pitch)), nx)
                iy = _clamp(int(math.floor((q[1] - grid_origin[1]) / pitch)), ny)
                iz = _clamp(int(math.floor((q[2] - grid_origin[2]) / pitch)), nz)
                values[ix, iy, iz] += w
                tallies[ABSORBED] += w
                for ax in range(3):
                    moment[ax] += w * p[ax]
                break
            for ax in range(3):
                o[ax] = p[ax]
            if m_next == m_cur:
                s_cur = s_next
                continue
            mx, my, mz = surface_normal(sol, pl, sid, p)
            cos_i = -(mx * d[0] + my * d[1] + mz * d[2])
            if cos_i < 0.0:
                mx = -mx
                my = -my
                mz = -mz
                cos_i = -cos_i
            n1 = mat_n[m_cur]
            n2 = mat_n[m_next]
            refl, cos_t = fresnel_unpolarized(n1, n2, cos_i)
            reflect = refl >= 1.0
            if not reflect and refl > 0.0:
                reflect = np.random.random() < refl
            if reflect:
                d[0] += 2.0 * cos_i * mx
                d[1] += 2.0 * cos_i * my
                d[2] += 2.0 * cos_i * mz
            else:
                eta = n1 / n2
                k = eta * cos_i - cos_t
                d[0] = eta * d[0] + k * mx
                d[1] = eta * d[1] + k * my
                d[2] = eta * d[2] + k * mz
                s_cur = s_next
                m_cur = m_next
            nd = math.sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
            for ax in range(3):
                d[ax] /= nd


@njit(cache=True, nogil=True)
def first_hits(sol, pl, lo, hi, origins, dirs, tmin):
    """Vectorised nearest material-changing crossing for many rays.

    Returns (t, sid, material_before, material_after); t = inf when the ray
    leaves the bounding box first.
    """
    n = origins.shape[0]
    t_out = np.full(n, INF)
    sid_out = np.full(n, -1, dtype=np.int64)
    mb = np.zeros(n, dtype=np.int64)
    ma = np.zeros(n, dtype=np.int64)
    o = np.empty(3)
    q = np.empty(3)
    for i in range(n):
        d = dirs[i]
        for ax in range(3):
            o[ax] = origins[i, ax]
        travelled = 0.0
        for _guard in range(1000):
            tb, _ = bbox_exit(lo, hi, o, d)
            t, sid, _t2, _s2 = nearest_crossing(sol, pl, o, d, tmin, tb)
            if sid < 0:
                break
            for ax in range(3):
                q[ax] = o[ax] + 0.5 * t * d[ax]
            m_cur = _material(sol, locate(sol, pl, q))
            for ax in range(3):
                q[ax] = o[ax] + (t + NUDGE) * d[ax]
            m_next = _material(sol, locate(sol, pl, q))
            if m_next != m_cur:
                t_out[i] = travelled + t
                sid_out[i] = sid
                mb[i] = m_cur
                ma[i] = m_next
                break
            travelled += t
            for ax in range(3):
                o[ax] = o[ax] + t * d[ax]
    return t_out, sid_out, mb, ma
