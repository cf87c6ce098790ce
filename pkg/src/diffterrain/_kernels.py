"""Compiled step kernels: forward Euler step and its vector-Jacobian product.

Flat layouts (all float64):

* state ``s`` (18,): x, v, R (row major), omega
* terrain row (T_WIDTH,): see the ``T_*`` offsets
* point row (P_WIDTH,): see the ``P_*`` offsets
* control/global row (G_WIDTH,): see the ``G_*`` offsets
* ``ctrl`` (5,): k_v, k_theta, k_phi, v_max, omega_max
* ``grid`` (3,): origin x, origin y, resolution

Contact kinds: 0 vertical, 1 normal.
"""

import math

import numpy as np
from numba import njit

VERTICAL, NORMAL = 0, 1
SPEED_FREE, SPEED_AT_GOAL, SPEED_SATURATED = 0, 1, 2
OK, BAD_POSITION, BAD_DERIVATIVE = 0, 1, 2

# terrain row
T_I0, T_J0, T_FU, T_FV, T_CX, T_CY, T_ACTIVE = 0, 1, 2, 3, 4, 5, 6
T_H, T_E, T_D, T_HX, T_HY, T_EX, T_EY, T_DX, T_DY, T_HXY = 7, 8, 9, 10, 11, 12, 13, 14, 15, 16
T_WIDTH = 17

# point row
P_R, P_POS, P_PV, P_N = 0, 3, 6, 9
P_CONTACT, P_MAG, P_CLAMPED, P_F = 12, 13, 14, 15
P_WIDTH = 18

# control / global row
G_PHI, G_DDX, G_DDY, G_DIST, G_SPEED, G_SPEED_STATE = 0, 1, 2, 3, 4, 5
G_DTHETA, G_DPHI, G_WZ_RAW, G_WZ, G_WZ_SAT = 6, 7, 8, 9, 10
G_VT, G_F, G_TAU, G_ACC, G_ALPHA, G_W = 11, 14, 17, 20, 23, 26
G_WIDTH = 29

TWO_PI = 2.0 * math.pi


@njit(cache=True)
def wrap(a):
    if -math.pi < a <= math.pi:
        return a
    r = np.fmod(a + math.pi, TWO_PI)
    if r <= 0.0:
        r += TWO_PI
    return r - math.pi


SNAP = 1e-10   # grid units; centres computed as origin + i * res land exactly


@njit(cache=True)
def _snap(g):
    r = math.floor(g + 0.5)
    return r if abs(g - r) <= SNAP else g


@njit(cache=True)
def bilinear(channels, ox, oy, res, px, py, out):
    """Sample h, e, d and their spatial gradients at (px, py) into ``out``."""
    nx = channels.shape[1]
    ny = channels.shape[2]
    gx = _snap((px - ox) / res)
    gy = _snap((py - oy) / res)
    active = gx >= -0.5 and gx <= nx - 0.5 and gy >= -0.5 and gy <= ny - 0.5
    gxc = min(max(gx, 0.0), nx - 1.0)
    gyc = min(max(gy, 0.0), ny - 1.0)
    cx = gxc != gx
    cy = gyc != gy
    i0 = min(math.floor(gxc), nx - 2.0)
    j0 = min(math.floor(gyc), ny - 2.0)
    fu = gxc - i0
    fv = gyc - j0
    i = int(i0)
    j = int(j0)
    gu = 1.0 - fu
    gv = 1.0 - fv
    w00 = gu * gv
    w10 = fu * gv
    w01 = gu * fv
    w11 = fu * fv
    kx = 0.0 if cx else 1.0 / res
    ky = 0.0 if cy else 1.0 / res
    out[T_I0] = i0
    out[T_J0] = j0
    out[T_FU] = fu
    out[T_FV] = fv
    out[T_CX] = 1.0 if cx else 0.0
    out[T_CY] = 1.0 if cy else 0.0
    out[T_ACTIVE] = 1.0 if active else 0.0
    for c in range(3):
        a00 = channels[c, i, j]
        a10 = channels[c, i + 1, j]
        a01 = channels[c, i, j + 1]
        a11 = channels[c, i + 1, j + 1]
        out[T_H + c] = a00 * w00 + a10 * w10 + a01 * w01 + a11 * w11
        out[T_HX + 2 * c] = (gv * (a10 - a00) + fv * (a11 - a01)) * kx
        out[T_HX + 2 * c + 1] = (gu * (a01 - a00) + fu * (a11 - a10)) * ky
        if c == 0:
            out[T_HXY] = (a11 - a01 - a10 + a00) * kx * ky


@njit(cache=True)
def bilinear_many(channels, ox, oy, res, xs, ys, out):
    for k in range(xs.shape[0]):
        bilinear(channels, ox, oy, res, xs[k], ys[k], out[k])


@njit(cache=True)
def surface_normal(hx, hy):
    inv = 1.0 / math.sqrt(hx * hx + hy * hy + 1.0)
    return -hx * inv, -hy * inv, inv


@njit(cache=True)
def point_force(kind, pz, pv0, pv1, pv2, m, g, h, e, d, n0, n1, n2, active, clamp):
    """Gravity plus spring-damper terrain force on one mass point.

    Returns (fx, fy, fz, in_contact, contact_magnitude, clamped).
    """
    contact = active and pz <= h
    if kind == VERTICAL:
        mag = e * (h - pz) - d * pv2
    else:
        mag = e * ((h - pz) * n2) - d * (pv0 * n0 + pv1 * n1 + pv2 * n2)
    clamped = False
    if clamp and mag < 0.0:
        mag = 0.0
        clamped = True
    cmag = mag if contact else 0.0
    if kind == VERTICAL:
        return 0.0, 0.0, -m * g + cmag, contact, mag, clamped
    return 0.0 + cmag * n0, 0.0 + cmag * n1, -m * g + cmag * n2, contact, mag, clamped


@njit(cache=True)
def controller(x0, x1, R00, R10, goal, ctrl, out):
    phi = math.atan2(R10, R00)
    ddx = goal[0] - x0
    ddy = goal[1] - x1
    dist = math.hypot(ddx, ddy)
    raw = ctrl[0] * dist
    if dist == 0.0:
        speed = 0.0
        state = SPEED_AT_GOAL
    elif raw > ctrl[3]:
        speed = ctrl[3]
        state = SPEED_SATURATED
    else:
        speed = raw
        state = SPEED_FREE
    dtheta = wrap(math.atan2(ddy, ddx) - phi) if dist > 0.0 else 0.0
    dphi = wrap(goal[2] - phi)
    wz_raw = ctrl[1] * dtheta + ctrl[2] * dphi
    wz = min(max(wz_raw, -ctrl[4]), ctrl[4])
    out[G_PHI] = phi
    out[G_DDX] = ddx
    out[G_DDY] = ddy
    out[G_DIST] = dist
    out[G_SPEED] = speed
    out[G_SPEED_STATE] = state
    out[G_DTHETA] = dtheta
    out[G_DPHI] = dphi
    out[G_WZ_RAW] = wz_raw
    out[G_WZ] = wz
    out[G_WZ_SAT] = 1.0 if wz != wz_raw else 0.0
    out[G_VT] = speed * math.cos(phi)
    out[G_VT + 1] = speed * math.sin(phi)
    out[G_VT + 2] = 0.0


@njit(cache=True)
def evaluate(s, goal, pts, masses, J, J_inv, ctrl, g, channels, grid, kind, gyro, clamp,
             T, P, G):
    """Right-hand side of the combined ODE; fills the T, P, G rows. Returns a status."""
    R = s[6:15].reshape((3, 3))
    controller(s[0], s[1], R[0, 0], R[1, 0], goal, ctrl, G)
    w0, w1, w2 = s[15], s[16], s[17]
    F0 = F1 = F2 = 0.0
    t0 = t1 = t2 = 0.0
    M = 0.0
    for i in range(pts.shape[0]):
        M += masses[i]
    for i in range(pts.shape[0]):
        p0, p1, p2 = pts[i, 0], pts[i, 1], pts[i, 2]
        r0 = R[0, 0] * p0 + R[0, 1] * p1 + R[0, 2] * p2
        r1 = R[1, 0] * p0 + R[1, 1] * p1 + R[1, 2] * p2
        r2 = R[2, 0] * p0 + R[2, 1] * p1 + R[2, 2] * p2
        q0 = s[0] + r0
        q1 = s[1] + r1
        q2 = s[2] + r2
        if not (math.isfinite(q0) and math.isfinite(q1) and math.isfinite(q2)):
            return BAD_POSITION
        v0 = s[3] + (w1 * r2 - w2 * r1)
        v1 = s[4] + (w2 * r0 - w0 * r2)
        v2 = s[5] + (w0 * r1 - w1 * r0)
        Ti = T[i]
        bilinear(channels, grid[0], grid[1], grid[2], q0, q1, Ti)
        if kind == VERTICAL:
            n0, n1, n2 = 0.0, 0.0, 1.0
        else:
            n0, n1, n2 = surface_normal(Ti[T_HX], Ti[T_HY])
        f0, f1, f2, contact, mag, clamped = point_force(
            kind, q2, v0, v1, v2, masses[i], g, Ti[T_H], Ti[T_E], Ti[T_D], n0, n1, n2,
            Ti[T_ACTIVE] > 0.5, clamp)
        Pi = P[i]
        Pi[P_R], Pi[P_R + 1], Pi[P_R + 2] = r0, r1, r2
        Pi[P_POS], Pi[P_POS + 1], Pi[P_POS + 2] = q0, q1, q2
        Pi[P_PV], Pi[P_PV + 1], Pi[P_PV + 2] = v0, v1, v2
        Pi[P_N], Pi[P_N + 1], Pi[P_N + 2] = n0, n1, n2
        Pi[P_CONTACT] = 1.0 if contact else 0.0
        Pi[P_MAG] = mag
        Pi[P_CLAMPED] = 1.0 if clamped else 0.0
        Pi[P_F], Pi[P_F + 1], Pi[P_F + 2] = f0, f1, f2
        F0 += f0
        F1 += f1
        F2 += f2
        t0 += r1 * f2 - r2 * f1
        t1 += r2 * f0 - r0 * f2
        t2 += r0 * f1 - r1 * f0
    G[G_F], G[G_F + 1], G[G_F + 2] = F0, F1, F2
    G[G_TAU], G[G_TAU + 1], G[G_TAU + 2] = t0, t1, t2
    e0, e1, e2 = t0, t1, t2
    if gyro:
        y0 = J[0, 0] * w0 + J[0, 1] * w1 + J[0, 2] * w2
        y1 = J[1, 0] * w0 + J[1, 1] * w1 + J[1, 2] * w2
        y2 = J[2, 0] * w0 + J[2, 1] * w1 + J[2, 2] * w2
        e0 -= w1 * y2 - w2 * y1
        e1 -= w2 * y0 - w0 * y2
        e2 -= w0 * y1 - w1 * y0
    G[G_ACC], G[G_ACC + 1], G[G_ACC + 2] = F0 / M, F1 / M, F2 / M
    for r in range(3):
        G[G_ALPHA + r] = J_inv[r, 0] * e0 + J_inv[r, 1] * e1 + J_inv[r, 2] * e2
    G[G_W] = w0
    G[G_W + 1] = w1
    G[G_W + 2] = w2 + G[G_WZ]
    for r in range(6):
        if not math.isfinite(G[G_ACC + r]):
            return BAD_DERIVATIVE
    return OK


@njit(cache=True)
def polar(A):
    U, _, Vt = np.linalg.svd(A)
    Q = U @ Vt
    if np.linalg.det(Q) < 0.0:
        U[:, 2] = -U[:, 2]
        Q = U @ Vt
    return Q


@njit(cache=True)
def advance(s, G, dt, s_next, A):
    """Explicit Euler update; A receives R + dt skew(W) R before projection."""
    R = s[6:15].reshape((3, 3))
    W0, W1, W2 = G[G_W], G[G_W + 1], G[G_W + 2]
    for c in range(3):
        a0, a1, a2 = R[0, c], R[1, c], R[2, c]
        A[0, c] = a0 + dt * (W1 * a2 - W2 * a1)
        A[1, c] = a1 + dt * (W2 * a0 - W0 * a2)
        A[2, c] = a2 + dt * (W0 * a1 - W1 * a0)
    for r in range(3):
        s_next[r] = s[r] + dt * (s[3 + r] + G[G_VT + r])
        s_next[3 + r] = s[3 + r] + dt * G[G_ACC + r]
        s_next[15 + r] = s[15 + r] + dt * G[G_ALPHA + r]
    Q = polar(A)
    for r in range(3):
        for c in range(3):
            s_next[6 + 3 * r + c] = Q[r, c]


@njit(cache=True)
def rollout(s0, goal, pts, masses, J, J_inv, ctrl, g, channels, grid, kind, gyro, clamp, dt,
            n_steps, S, A, T, P, G):
    """Integrate ``n_steps`` steps. ``S`` is (n+1, 18); ``A`` (n or 1, 3, 3);
    ``T``, ``P``, ``G`` hold per-step intermediates with a leading dimension
    of n (tape) or 1 (scratch). Returns (status, failing step)."""
    S[0, :] = s0
    for k in range(n_steps):
        slot = k % T.shape[0]
        status = evaluate(S[k], goal, pts, masses, J, J_inv, ctrl, g, channels, grid, kind,
                          gyro, clamp, T[slot], P[slot], G[slot])
        if status != OK:
            return status, k
        advance(S[k], G[slot], dt, S[k + 1], A[k % A.shape[0]])
        for r in range(18):
            if not math.isfinite(S[k + 1, r]):
                return BAD_DERIVATIVE, k
    return OK, -1


# --------------------------------------------------------------------------
# reverse sweep

@njit(cache=True)
def polar_vjp(A, GQ):
    """Pull dL/dQ back through Q = polar(A)."""
    U, sv, Vt = np.linalg.svd(A)
    Q = U @ Vt
    V = Vt.T.copy()
    X = Q.T @ GQ
    K = V.T @ (X - X.T) @ V
    for i in range(3):
        for j in range(3):
            K[i, j] /= sv[i] + sv[j]
    return Q @ V @ K @ Vt


@njit(cache=True)
def backward(S, A, T, P, G, upstream, stride, dt, pts, masses, J, J_inv, ctrl, g, res, kind,
             gyro, H_bar, E_bar, D_bar, m_bar, J_bar, P_bar, u_bar, s_bar):
    n_steps = A.shape[0]
    npts = pts.shape[0]
    M = 0.0
    for i in range(npts):
        M += masses[i]
    a = np.zeros(18)
    b = np.zeros(18)
    aR = np.zeros((3, 3))
    for k in range(n_steps - 1, -1, -1):
        if (k + 1) % stride == 0:
            row = (k + 1) // stride
            for r in range(18):
                a[r] += upstream[row, r]
        s = S[k]
        R = s[6:15].reshape((3, 3))
        w0, w1, w2 = s[15], s[16], s[17]
        Gk = G[k]
        for r in range(3):
            for c in range(3):
                aR[r, c] = a[6 + 3 * r + c]
        for r in range(18):
            b[r] = 0.0
        # x' = x + dt (v + v_t); v' = v + dt acc; w' = w + dt alpha
        avt0, avt1 = dt * a[0], dt * a[1]
        for r in range(3):
            b[r] = a[r]
            b[3 + r] = a[3 + r] + dt * a[r]
            b[15 + r] = a[15 + r]
        aA = polar_vjp(A[k], aR)
        # A = R + dt skew(W) R
        W0, W1, W2 = Gk[G_W], Gk[G_W + 1], Gk[G_W + 2]
        for c in range(3):
            g0, g1, g2 = aA[0, c], aA[1, c], aA[2, c]
            # skew(W)^T g = -W x g
            b[6 + c] += g0 - dt * (W1 * g2 - W2 * g1)
            b[9 + c] += g1 - dt * (W2 * g0 - W0 * g2)
            b[12 + c] += g2 - dt * (W0 * g1 - W1 * g0)
        Sb = dt * (aA @ R.T)
        aW0 = Sb[2, 1] - Sb[1, 2]
        aW1 = Sb[0, 2] - Sb[2, 0]
        aW2 = Sb[1, 0] - Sb[0, 1]
        b[15] += aW0
        b[16] += aW1
        b[17] += aW2
        a_wz = aW2

        # alpha = J^-1 (tau - [w x J w])
        aal0, aal1, aal2 = dt * a[15], dt * a[16], dt * a[17]
        te0 = J_inv[0, 0] * aal0 + J_inv[1, 0] * aal1 + J_inv[2, 0] * aal2
        te1 = J_inv[0, 1] * aal0 + J_inv[1, 1] * aal1 + J_inv[2, 1] * aal2
        te2 = J_inv[0, 2] * aal0 + J_inv[1, 2] * aal1 + J_inv[2, 2] * aal2
        al0, al1, al2 = Gk[G_ALPHA], Gk[G_ALPHA + 1], Gk[G_ALPHA + 2]
        J_bar[0, 0] -= te0 * al0
        J_bar[0, 1] -= te0 * al1
        J_bar[0, 2] -= te0 * al2
        J_bar[1, 0] -= te1 * al0
        J_bar[1, 1] -= te1 * al1
        J_bar[1, 2] -= te1 * al2
        J_bar[2, 0] -= te2 * al0
        J_bar[2, 1] -= te2 * al1
        J_bar[2, 2] -= te2 * al2
        if gyro:
            ag0, ag1, ag2 = -te0, -te1, -te2
            y0 = J[0, 0] * w0 + J[0, 1] * w1 + J[0, 2] * w2
            y1 = J[1, 0] * w0 + J[1, 1] * w1 + J[1, 2] * w2
            y2 = J[2, 0] * w0 + J[2, 1] * w1 + J[2, 2] * w2
            # (Jw) x ag
            b[15] += y1 * ag2 - y2 * ag1
            b[16] += y2 * ag0 - y0 * ag2
            b[17] += y0 * ag1 - y1 * ag0
            c0 = ag1 * w2 - ag2 * w1
            c1 = ag2 * w0 - ag0 * w2
            c2 = ag0 * w1 - ag1 * w0
            for r in range(3):
                b[15 + r] += J[0, r] * c0 + J[1, r] * c1 + J[2, r] * c2
            J_bar[0, 0] += c0 * w0
            J_bar[0, 1] += c0 * w1
            J_bar[0, 2] += c0 * w2
            J_bar[1, 0] += c1 * w0
            J_bar[1, 1] += c1 * w1
            J_bar[1, 2] += c1 * w2
            J_bar[2, 0] += c2 * w0
            J_bar[2, 1] += c2 * w1
            J_bar[2, 2] += c2 * w2

        # acc = F / M
        ac0, ac1, ac2 = dt * a[3], dt * a[4], dt * a[5]
        aF0, aF1, aF2 = ac0 / M, ac1 / M, ac2 / M
        aM = -(ac0 * Gk[G_F] + ac1 * Gk[G_F + 1] + ac2 * Gk[G_F + 2]) / (M * M)
        for i in range(npts):
            m_bar[i] += aM

        Tk = T[k]
        Pk = P[k]
        for i in range(npts):
            Pi = Pk[i]
            Ti = Tk[i]
            r0, r1, r2 = Pi[P_R], Pi[P_R + 1], Pi[P_R + 2]
            f0, f1, f2 = Pi[P_F], Pi[P_F + 1], Pi[P_F + 2]
            # tau = sum r x f; F = sum f
            af0 = aF0 + (te1 * r2 - te2 * r1)
            af1 = aF1 + (te2 * r0 - te0 * r2)
            af2 = aF2 + (te0 * r1 - te1 * r0)
            ar0 = f1 * te2 - f2 * te1
            ar1 = f2 * te0 - f0 * te2
            ar2 = f0 * te1 - f1 * te0
            m_bar[i] += -g * af2
            apos0 = apos1 = apos2 = 0.0
            apv0 = apv1 = apv2 = 0.0
            if Pi[P_CONTACT] > 0.5 and Pi[P_CLAMPED] < 0.5:
                h, e, d = Ti[T_H], Ti[T_E], Ti[T_D]
                pz = Pi[P_POS + 2]
                pen = h - pz
                a_hx = 0.0
                a_hy = 0.0
                if kind == VERTICAL:
                    amag = af2
                    a_e = amag * pen
                    a_h = amag * e
                    a_d = -amag * Pi[P_PV + 2]
                    apos2 -= amag * e
                    apv2 -= amag * d
                else:
                    n0, n1, n2 = Pi[P_N], Pi[P_N + 1], Pi[P_N + 2]
                    pv0, pv1, pv2 = Pi[P_PV], Pi[P_PV + 1], Pi[P_PV + 2]
                    mag = Pi[P_MAG]
                    pvn = pv0 * n0 + pv1 * n1 + pv2 * n2
                    amag = af0 * n0 + af1 * n1 + af2 * n2
                    an0, an1, an2 = mag * af0, mag * af1, mag * af2
                    dh = pen * n2
                    a_e = amag * dh
                    a_dh = amag * e
                    a_d = -amag * pvn
                    ad = amag * d
                    apv0 -= ad * n0
                    apv1 -= ad * n1
                    apv2 -= ad * n2
                    an0 -= ad * pv0
                    an1 -= ad * pv1
                    an2 -= ad * pv2
                    a_h = a_dh * n2
                    apos2 -= a_dh * n2
                    an2 += a_dh * pen
                    sdot = n0 * an0 + n1 * an1 + n2 * an2
                    a_hx = -(an0 - n0 * sdot) * n2
                    a_hy = -(an1 - n1 * sdot) * n2
                i0 = int(Ti[T_I0])
                j0 = int(Ti[T_J0])
                fu, fv = Ti[T_FU], Ti[T_FV]
                gu, gv = 1.0 - fu, 1.0 - fv
                w00, w10, w01, w11 = gu * gv, fu * gv, gu * fv, fu * fv
                H_bar[i0, j0] += a_h * w00
                H_bar[i0 + 1, j0] += a_h * w10
                H_bar[i0, j0 + 1] += a_h * w01
                H_bar[i0 + 1, j0 + 1] += a_h * w11
                E_bar[i0, j0] += a_e * w00
                E_bar[i0 + 1, j0] += a_e * w10
                E_bar[i0, j0 + 1] += a_e * w01
                E_bar[i0 + 1, j0 + 1] += a_e * w11
                D_bar[i0, j0] += a_d * w00
                D_bar[i0 + 1, j0] += a_d * w10
                D_bar[i0, j0 + 1] += a_d * w01
                D_bar[i0 + 1, j0 + 1] += a_d * w11
                apos0 += a_h * Ti[T_HX] + a_e * Ti[T_EX] + a_d * Ti[T_DX]
                apos1 += a_h * Ti[T_HY] + a_e * Ti[T_EY] + a_d * Ti[T_DY]
                if kind == NORMAL:
                    kx = 0.0 if Ti[T_CX] > 0.5 else 1.0 / res
                    ky = 0.0 if Ti[T_CY] > 0.5 else 1.0 / res
                    bx = a_hx * kx
                    by = a_hy * ky
                    H_bar[i0, j0] += -bx * gv - by * gu
                    H_bar[i0 + 1, j0] += bx * gv - by * fu
                    H_bar[i0, j0 + 1] += -bx * fv + by * gu
                    H_bar[i0 + 1, j0 + 1] += bx * fv + by * fu
                    apos0 += a_hy * Ti[T_HXY]
                    apos1 += a_hx * Ti[T_HXY]
            # pos = x + r; pv = v + w x r; r = R p
            b[0] += apos0
            b[1] += apos1
            b[2] += apos2
            ar0 += apos0
            ar1 += apos1
            ar2 += apos2
            b[3] += apv0
            b[4] += apv1
            b[5] += apv2
            b[15] += r1 * apv2 - r2 * apv1
            b[16] += r2 * apv0 - r0 * apv2
            b[17] += r0 * apv1 - r1 * apv0
            ar0 += apv1 * w2 - apv2 * w1
            ar1 += apv2 * w0 - apv0 * w2
            ar2 += apv0 * w1 - apv1 * w0
            p0, p1, p2 = pts[i, 0], pts[i, 1], pts[i, 2]
            b[6] += ar0 * p0
            b[7] += ar0 * p1
            b[8] += ar0 * p2
            b[9] += ar1 * p0
            b[10] += ar1 * p1
            b[11] += ar1 * p2
            b[12] += ar2 * p0
            b[13] += ar2 * p1
            b[14] += ar2 * p2
            for c in range(3):
                P_bar[i, c] += R[0, c] * ar0 + R[1, c] * ar1 + R[2, c] * ar2

        # controller
        a_raw = 0.0 if Gk[G_WZ_SAT] > 0.5 else a_wz
        a_dtheta = ctrl[1] * a_raw
        a_dphi = ctrl[2] * a_raw
        u_bar[2] += a_dphi
        a_phi = -a_dphi
        a_ddx = 0.0
        a_ddy = 0.0
        dist = Gk[G_DIST]
        ddx, ddy = Gk[G_DDX], Gk[G_DDY]
        if dist > 0.0:
            d2 = dist * dist
            a_phi -= a_dtheta
            a_ddx += -a_dtheta * ddy / d2
            a_ddy += a_dtheta * ddx / d2
        phi = Gk[G_PHI]
        cph, sph = math.cos(phi), math.sin(phi)
        a_speed = avt0 * cph + avt1 * sph
        a_phi += Gk[G_SPEED] * (-avt0 * sph + avt1 * cph)
        if Gk[G_SPEED_STATE] == SPEED_FREE:
            a_dist = ctrl[0] * a_speed
            a_ddx += a_dist * ddx / dist
            a_ddy += a_dist * ddy / dist
        u_bar[0] += a_ddx
        u_bar[1] += a_ddy
        b[0] -= a_ddx
        b[1] -= a_ddy
        den = R[0, 0] * R[0, 0] + R[1, 0] * R[1, 0]
        b[9] += a_phi * R[0, 0] / den
        b[6] -= a_phi * R[1, 0] / den
        for r in range(18):
            a[r] = b[r]
    for r in range(18):
        s_bar[r] = a[r] + upstream[0, r]
