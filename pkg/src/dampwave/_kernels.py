"""Time-stepping kernels for the linear mode system.

The system is y1' = y2, y2' = -q(t) y1 - p(t) y2 with (q, p) chosen by an
equation code:

    0  the mode equation       q = xi^2,                      p = b + g xi^2
    1  the v-equation          q = xi^2 (1 - bg/2 - g^2 xi^2/4 - g'/2), p = b
    2  the w-equation          q = (v-equation q) - b^2/4 - b'/2,      p = 0

Steps use a five-stage L-stable SDIRK method of order 4 with an embedded
order-3 solution. Because the system is linear, each stage is one exact
2x2 solve, and every step produces its 2x2 propagator. The solution is the
product of propagators applied to the data, and log|det| is accumulated from
the propagators.

The step math below is plain arithmetic so the same source runs on floats
(compiled by numba, one mode at a time) and on arrays (numpy, all modes in
lockstep).
"""
import math

import numpy as np

from ._backend import BACKEND, NUMBA_AVAILABLE, jit, jit_with
from .coeffcalc import family_value

GAMMA = 0.25
C2, C3, C4 = 0.75, 11.0 / 20.0, 0.5
A21 = 0.5
A31, A32 = 17.0 / 50.0, -1.0 / 25.0
A41, A42, A43 = 371.0 / 1360.0, -137.0 / 2720.0, 15.0 / 544.0
A51, A52, A53, A54 = 25.0 / 24.0, -49.0 / 48.0, 125.0 / 16.0, -85.0 / 12.0
E1, E2, E3, E4 = 59.0 / 48.0, -17.0 / 96.0, 225.0 / 32.0, -85.0 / 12.0

STATUS_OK = 0
STATUS_NONFINITE = 1
STATUS_MAX_STEPS = 2
MAX_STEPS = 10_000_000
STATUS_STEP_FLOOR = 3

SAFETY = 0.9
GROW_MAX = 4.0
SHRINK_MIN = 0.2
FLOOR_REL = 1e-14
GL4_X = np.array([-0.8611363115940526, -0.3399810435848563, 0.3399810435848563, 0.8611363115940526])
GL4_W = np.array([0.3478548451374538, 0.6521451548625461, 0.6521451548625461, 0.3478548451374538])
GL8_X, GL8_W = np.polynomial.legendre.leggauss(8)


def eq_coeffs(eq, xi, bc, bk, ba, gc, gk, ga, t):
    """(q, p) of the first-order system at time t."""
    b = family_value(bk, bc, ba, t, 0)
    g = family_value(gk, gc, ga, t, 0)
    x2 = xi * xi
    if eq == 0:
        return x2 + 0.0 * t, b + g * x2
    g1 = family_value(gk, gc, ga, t, 1)
    qv = x2 * (1.0 - 0.5 * b * g - 0.25 * g * g * x2 - 0.5 * g1)
    if eq == 1:
        return qv, b
    b1 = family_value(bk, bc, ba, t, 1)
    return qv - 0.25 * b * b - 0.5 * b1, 0.0 * t


def _stage(h, q, p, r11, r12, r21, r22):
    """Solve (I - h*gamma*A) Z = R for the 2x2 matrix Z, A = [[0,1],[-q,-p]]."""
    hg = h * GAMMA
    m11 = 1.0
    m12 = -hg
    m21 = hg * q
    m22 = 1.0 + hg * p
    det = m11 * m22 - m12 * m21
    z11 = (m22 * r11 - m12 * r21) / det
    z12 = (m22 * r12 - m12 * r22) / det
    z21 = (m11 * r21 - m21 * r11) / det
    z22 = (m11 * r22 - m21 * r12) / det
    return z11, z12, z21, z22, det


def step_propagators(h, q1, p1, q2, p2, q3, p3, q4, p4, q5, p5):
    """Propagator P, filtered error matrix and min stage determinant for one step.

    Returns (P11, P12, P21, P22, F11, F12, F21, F22, detmin). F is the
    difference between the order-4 and order-3 propagators, premultiplied by
    (I - h*gamma*A(t+h))^-1, which damps the estimate on stiff components.
    """
    # stage 1
    z11, z12, z21, z22, d1 = _stage(h, q1, p1, 1.0, 0.0, 0.0, 1.0)
    f1_11, f1_12 = z21, z22
    f1_21, f1_22 = -q1 * z11 - p1 * z21, -q1 * z12 - p1 * z22
    # stage 2
    r11 = 1.0 + h * A21 * f1_11
    r12 = h * A21 * f1_12
    r21 = h * A21 * f1_21
    r22 = 1.0 + h * A21 * f1_22
    z11, z12, z21, z22, d2 = _stage(h, q2, p2, r11, r12, r21, r22)
    f2_11, f2_12 = z21, z22
    f2_21, f2_22 = -q2 * z11 - p2 * z21, -q2 * z12 - p2 * z22
    # stage 3
    r11 = 1.0 + h * (A31 * f1_11 + A32 * f2_11)
    r12 = h * (A31 * f1_12 + A32 * f2_12)
    r21 = h * (A31 * f1_21 + A32 * f2_21)
    r22 = 1.0 + h * (A31 * f1_22 + A32 * f2_22)
    z11, z12, z21, z22, d3 = _stage(h, q3, p3, r11, r12, r21, r22)
    f3_11, f3_12 = z21, z22
    f3_21, f3_22 = -q3 * z11 - p3 * z21, -q3 * z12 - p3 * z22
    # stage 4
    r11 = 1.0 + h * (A41 * f1_11 + A42 * f2_11 + A43 * f3_11)
    r12 = h * (A41 * f1_12 + A42 * f2_12 + A43 * f3_12)
    r21 = h * (A41 * f1_21 + A42 * f2_21 + A43 * f3_21)
    r22 = 1.0 + h * (A41 * f1_22 + A42 * f2_22 + A43 * f3_22)
    z11, z12, z21, z22, d4 = _stage(h, q4, p4, r11, r12, r21, r22)
    f4_11, f4_12 = z21, z22
    f4_21, f4_22 = -q4 * z11 - p4 * z21, -q4 * z12 - p4 * z22
    # stage 5; the method is stiffly accurate so P is the last stage value
    r11 = 1.0 + h * (A51 * f1_11 + A52 * f2_11 + A53 * f3_11 + A54 * f4_11)
    r12 = h * (A51 * f1_12 + A52 * f2_12 + A53 * f3_12 + A54 * f4_12)
    r21 = h * (A51 * f1_21 + A52 * f2_21 + A53 * f3_21 + A54 * f4_21)
    r22 = 1.0 + h * (A51 * f1_22 + A52 * f2_22 + A53 * f3_22 + A54 * f4_22)
    P11, P12, P21, P22, d5 = _stage(h, q5, p5, r11, r12, r21, r22)
    f5_11, f5_12 = P21, P22
    f5_21, f5_22 = -q5 * P11 - p5 * P21, -q5 * P12 - p5 * P22
    # P - Phat = h * sum (b_i - bhat_i) f_i, with b = last row of A
    w1, w2, w3, w4, w5 = A51 - E1, A52 - E2, A53 - E3, A54 - E4, GAMMA
    e11 = h * (w1 * f1_11 + w2 * f2_11 + w3 * f3_11 + w4 * f4_11 + w5 * f5_11)
    e12 = h * (w1 * f1_12 + w2 * f2_12 + w3 * f3_12 + w4 * f4_12 + w5 * f5_12)
    e21 = h * (w1 * f1_21 + w2 * f2_21 + w3 * f3_21 + w4 * f4_21 + w5 * f5_21)
    e22 = h * (w1 * f1_22 + w2 * f2_22 + w3 * f3_22 + w4 * f4_22 + w5 * f5_22)
    F11, F12, F21, F22, _ = _stage(h, q5, p5, e11, e12, e21, e22)
    detmin = np.minimum(np.minimum(np.minimum(d1, d2), np.minimum(d3, d4)), d5)
    return P11, P12, P21, P22, F11, F12, F21, F22, detmin


def velocity_row(eq, xi, bc, bk, ba, gc, gk, ga, t, hs):
    """Second row of the one-step propagator from t to t + hs.

    Used for the dissipation integral on stiff steps: the Hermite slopes
    -q u - p u_t amplify any offset from the slow manifold by p, while a
    sub-step of the L-stable method stays on it.
    """
    q1, p1 = eq_coeffs(eq, xi, bc, bk, ba, gc, gk, ga, t + GAMMA * hs)
    q2, p2 = eq_coeffs(eq, xi, bc, bk, ba, gc, gk, ga, t + C2 * hs)
    q3, p3 = eq_coeffs(eq, xi, bc, bk, ba, gc, gk, ga, t + C3 * hs)
    q4, p4 = eq_coeffs(eq, xi, bc, bk, ba, gc, gk, ga, t + C4 * hs)
    q5, p5 = eq_coeffs(eq, xi, bc, bk, ba, gc, gk, ga, t + hs)
    P11, P12, P21, P22, F11, F12, F21, F22, detmin = step_propagators(
        hs, q1, p1, q2, p2, q3, p3, q4, p4, q5, p5)
    return P21, P22


# ---------------------------------------------------------------------------
# numba driver: one mode at a time
# ---------------------------------------------------------------------------

def _one_mode(eq, xi, bpar, gpar, y0, t_out, rtol, atol, theta, track_energy,
                  allow_reduced, max_steps, Y, logdet, reduced, stats):
    bc, bk, ba = bpar[0], int(bpar[1]), bpar[2]
    gc, gk, ga = gpar[0], int(gpar[1]), gpar[2]
    K = y0.shape[1]
    w = max(xi, 1.0)
    x2 = xi * xi
    y = np.empty((2, K))
    for j in range(K):
        y[0, j] = y0[0, j]
        y[1, j] = y0[1, j]
    ld = 0.0
    t = t_out[0]
    n_out = t_out.shape[0]
    for j in range(K):
        Y[0, 0, j] = y[0, j]
        Y[0, 1, j] = y[1, j]
    logdet[0] = 0.0
    reduced[0] = False
    steps = 0
    rejected = 0
    hmax = 0.0
    floor_hits = 0
    e_resid = 0.0
    e_incr = -np.inf
    status = 0
    span = t_out[n_out - 1] - t_out[0]
    q0, p0 = eq_coeffs(eq, xi, bc, bk, ba, gc, gk, ga, t)
    rate = abs(p0) + math.sqrt(abs(q0)) + 1e-300
    h = min(span / 100.0, 0.05 / rate) if span > 0 else 0.0
    in_reduced = False
    k = 1
    while k < n_out:
        t_next = t_out[k]
        if in_reduced:
            # slaved first-order regime: u' = -xi^2 u / p
            half = 0.5 * (t_next - t)
            mid = 0.5 * (t_next + t)
            acc = 0.0
            for i in range(GL8_X.shape[0]):
                qq, pp = eq_coeffs(eq, xi, bc, bk, ba, gc, gk, ga, mid + half * GL8_X[i])
                acc += GL8_W[i] / pp
            fac = math.exp(-x2 * half * acc)
            qe, pe = eq_coeffs(eq, xi, bc, bk, ba, gc, gk, ga, t_next)
            for j in range(K):
                y[0, j] = y[0, j] * fac
                y[1, j] = -x2 * y[0, j] / pe
            t = t_next
            ld = np.nan
            for j in range(K):
                Y[k, 0, j] = y[0, j]
                Y[k, 1, j] = y[1, j]
            logdet[k] = ld
            reduced[k] = True
            k += 1
            continue
        if steps >= max_steps:
            status = 2
            break
        hit = False
        h_try = h
        if t + h_try >= t_next - 1e-14 * max(1.0, abs(t_next)):
            h_try = t_next - t
            hit = True
        if theta > 0.0:
            qa, pa = eq_coeffs(eq, xi, bc, bk, ba, gc, gk, ga, t)
            qb, pb = eq_coeffs(eq, xi, bc, bk, ba, gc, gk, ga, t + h_try)
            dmax = max(abs(pa), abs(pb))
            if dmax * h_try > theta:
                h_try = theta / dmax
                hit = False
        q1, p1 = eq_coeffs(eq, xi, bc, bk, ba, gc, gk, ga, t + GAMMA * h_try)
        q2, p2 = eq_coeffs(eq, xi, bc, bk, ba, gc, gk, ga, t + C2 * h_try)
        q3, p3 = eq_coeffs(eq, xi, bc, bk, ba, gc, gk, ga, t + C3 * h_try)
        q4, p4 = eq_coeffs(eq, xi, bc, bk, ba, gc, gk, ga, t + C4 * h_try)
        q5, p5 = eq_coeffs(eq, xi, bc, bk, ba, gc, gk, ga, t + h_try)
        P11, P12, P21, P22, F11, F12, F21, F22, detmin = step_propagators(
            h_try, q1, p1, q2, p2, q3, p3, q4, p4, q5, p5)
        if not (math.isfinite(P11) and math.isfinite(P12) and math.isfinite(P21)
                and math.isfinite(P22) and math.isfinite(F11) and math.isfinite(F22)):
            if math.isfinite(q5) and math.isfinite(p5):
                err = np.inf
            else:
                status = 1
                break
        elif detmin < 1e-3:
            err = np.inf
        else:
            err = 0.0
            for j in range(K):
                u, v = y[0, j], y[1, j]
                nu = P11 * u + P12 * v
                nv = P21 * u + P22 * v
                eu = F11 * u + F12 * v
                ev = F21 * u + F22 * v
                enorm = math.hypot(w * eu, ev)
                sc = atol[j] + rtol * max(math.hypot(w * u, v), math.hypot(w * nu, nv))
                if sc > 0.0:
                    err = max(err, enorm / sc)
                elif enorm > 0.0:
                    err = np.inf
        if err <= 1.0:
            steps += 1
            hmax = max(hmax, h_try)
            for j in range(K):
                u, v = y[0, j], y[1, j]
                nu = P11 * u + P12 * v
                nv = P21 * u + P22 * v
                if track_energy:
                    e_old = 0.5 * (v * v + x2 * u * u)
                    e_new = 0.5 * (nv * nv + x2 * nu * nu)
                    # Hermite cubic for u_t on the step, 4-point Gauss for
                    # the dissipation integral of p * u_t^2
                    qa, pa = eq_coeffs(eq, xi, bc, bk, ba, gc, gk, ga, t)
                    da = -qa * u - pa * v
                    db = -q5 * nu - p5 * nv
                    stiff = h_try * max(abs(pa), abs(p5)) > 1.0
                    diss = 0.0
                    for i in range(4):
                        s = 0.5 * (GL4_X[i] + 1.0)
                        if stiff:
                            R21, R22 = velocity_row(eq, xi, bc, bk, ba, gc, gk, ga, t, s * h_try)
                            vs = R21 * u + R22 * v
                        else:
                            h00 = (1.0 + 2.0 * s) * (1.0 - s) ** 2
                            h10 = s * (1.0 - s) ** 2
                            h01 = s * s * (3.0 - 2.0 * s)
                            h11 = s * s * (s - 1.0)
                            vs = h00 * v + h10 * h_try * da + h01 * nv + h11 * h_try * db
                        qs, ps = eq_coeffs(eq, xi, bc, bk, ba, gc, gk, ga, t + s * h_try)
                        diss += 0.5 * GL4_W[i] * ps * vs * vs
                    diss *= h_try
                    if e_old > 0.0:
                        # energy scale of the step tolerance: rtol*E + atol*|y|
                        e_scale = e_old + atol[j] * math.hypot(w * u, v) / rtol
                        e_resid = max(e_resid, abs(e_new - e_old + diss) / e_scale)
                        e_incr = max(e_incr, (e_new - e_old) / e_scale)
                y[0, j] = nu
                y[1, j] = nv
            det = P11 * P22 - P12 * P21
            ld = ld + math.log(abs(det)) if det != 0.0 else -np.inf
            t = t + h_try
            if hit:
                t = t_next
                for j in range(K):
                    Y[k, 0, j] = y[0, j]
                    Y[k, 1, j] = y[1, j]
                logdet[k] = ld
                reduced[k] = False
                k += 1
            fac = GROW_MAX if err == 0.0 else min(GROW_MAX, max(SHRINK_MIN, SAFETY * err ** -0.25))
            if not hit or h_try >= h:
                h = h_try * fac
        else:
            rejected += 1
            if math.isfinite(err):
                fac = max(SHRINK_MIN, SAFETY * err ** -0.25)
            else:
                fac = SHRINK_MIN
            h = h_try * fac
            if h < FLOOR_REL * max(1.0, abs(t)):
                floor_hits += 1
                if allow_reduced and eq == 0:
                    in_reduced = True
                else:
                    status = 3
                    break
    stats[0] = steps
    stats[1] = rejected
    stats[2] = hmax
    stats[3] = floor_hits
    stats[4] = e_resid
    stats[5] = e_incr
    stats[6] = k
    return status



def _many_modes(eq, xis, bpar, gpar, y0, t_out, rtol, atol, theta, track_energy,
                   allow_reduced, max_steps, Y, logdet, reduced, stats, status):
    for m in range(xis.shape[0]):
        status[m] = _one_mode(eq, xis[m], bpar, gpar, y0[m], t_out, rtol, atol[m], theta,
                                    track_energy, allow_reduced, max_steps, Y[m], logdet[m],
                                    reduced[m], stats[m])



def _make_numba_driver():
    stage = jit(_stage)
    family = jit(family_value)
    eqc = jit_with(eq_coeffs, family_value=family)
    stepc = jit_with(step_propagators, _stage=stage)
    vrow = jit_with(velocity_row, eq_coeffs=eqc, step_propagators=stepc)
    one = jit_with(_one_mode, eq_coeffs=eqc, step_propagators=stepc, velocity_row=vrow)
    return jit_with(_many_modes, _one_mode=one)


_numba_driver = None


def numba_driver():
    global _numba_driver
    if _numba_driver is None:
        if not NUMBA_AVAILABLE:
            raise RuntimeError("numba is not available")
        _numba_driver = _make_numba_driver()
    return _numba_driver


# ---------------------------------------------------------------------------
# numpy driver: all modes advance in lockstep, each with its own step size
# ---------------------------------------------------------------------------

def numpy_driver(eq, xis, bpar, gpar, y0, t_out, rtol, atol, theta, track_energy,
                 allow_reduced, max_steps, Y, logdet, reduced, stats, status):
    M = xis.shape[0]
    K = y0.shape[2]
    bc, bk, ba = bpar[0], int(bpar[1]), bpar[2]
    gc, gk, ga = gpar[0], int(gpar[1]), gpar[2]

    def coeffs(xi, tt):
        return eq_coeffs(eq, xi, bc, bk, ba, gc, gk, ga, tt)

    n_out = t_out.shape[0]
    w = np.maximum(xis, 1.0)
    x2 = xis * xis
    y = y0.astype(float).copy()  # (M, 2, K)
    ld = np.zeros(M)
    t = np.full(M, t_out[0])
    Y[:, 0] = y
    logdet[:, 0] = 0.0
    reduced[:, 0] = False
    steps = np.zeros(M, dtype=np.int64)
    rejected = np.zeros(M, dtype=np.int64)
    hmax = np.zeros(M)
    floor_hits = np.zeros(M, dtype=np.int64)
    e_resid = np.zeros(M)
    e_incr = np.full(M, -np.inf)
    status[:] = 0
    span = t_out[-1] - t_out[0]
    q0, p0 = coeffs(xis, t)
    rate = np.abs(p0) + np.sqrt(np.abs(q0)) + 1e-300
    h = np.minimum(span / 100.0, 0.05 / rate) if span > 0 else np.zeros(M)
    k = np.ones(M, dtype=np.int64)
    in_reduced = np.zeros(M, dtype=bool)
    active = k < n_out

    while np.any(active):
        # reduced-regime modes jump output to output
        red = active & in_reduced
        if np.any(red):
            idx = np.nonzero(red)[0]
            tn = t_out[k[idx]]
            half = 0.5 * (tn - t[idx])
            mid = 0.5 * (tn + t[idx])
            acc = np.zeros(idx.size)
            for xg, wg in zip(GL8_X, GL8_W):
                _, pp = coeffs(xis[idx], mid + half * xg)
                acc += wg / pp
            fac = np.exp(-x2[idx] * half * acc)
            _, pe = coeffs(xis[idx], tn)
            y[idx, 0, :] *= fac[:, None]
            y[idx, 1, :] = -x2[idx, None] * y[idx, 0, :] / pe[:, None]
            t[idx] = tn
            ld[idx] = np.nan
            Y[idx, k[idx]] = y[idx]
            logdet[idx, k[idx]] = np.nan
            reduced[idx, k[idx]] = True
            k[idx] += 1
            active = (k < n_out) & (status == 0)
            continue_mask = active & ~in_reduced
        else:
            continue_mask = active
        over = continue_mask & (steps >= max_steps)
        status[over] = 2
        continue_mask &= ~over
        idx = np.nonzero(continue_mask)[0]
        if idx.size == 0:
            active = (k < n_out) & (status == 0)
            continue
        ti, hi, xi = t[idx], h[idx].copy(), xis[idx]
        tn = t_out[k[idx]]
        hit = ti + hi >= tn - 1e-14 * np.maximum(1.0, np.abs(tn))
        hi = np.where(hit, tn - ti, hi)
        if theta > 0.0:
            _, pa = coeffs(xi, ti)
            _, pb = coeffs(xi, ti + hi)
            dmax = np.maximum(np.abs(pa), np.abs(pb))
            cap = dmax * hi > theta
            hi = np.where(cap, theta / np.where(dmax > 0, dmax, 1.0), hi)
            hit &= ~cap
        q1, p1 = coeffs(xi, ti + GAMMA * hi)
        q2, p2 = coeffs(xi, ti + C2 * hi)
        q3, p3 = coeffs(xi, ti + C3 * hi)
        q4, p4 = coeffs(xi, ti + C4 * hi)
        q5, p5 = coeffs(xi, ti + hi)
        with np.errstate(all="ignore"):
            P11, P12, P21, P22, F11, F12, F21, F22, detmin = step_propagators(
                hi, q1, p1, q2, p2, q3, p3, q4, p4, q5, p5)
            finite = np.isfinite(P11) & np.isfinite(P12) & np.isfinite(P21) & np.isfinite(P22) \
                & np.isfinite(F11) & np.isfinite(F22)
            bad_coef = ~finite & ~(np.isfinite(q5) & np.isfinite(p5))
            u = y[idx, 0, :]
            v = y[idx, 1, :]
            nu = P11[:, None] * u + P12[:, None] * v
            nv = P21[:, None] * u + P22[:, None] * v
            eu = F11[:, None] * u + F12[:, None] * v
            ev = F21[:, None] * u + F22[:, None] * v
            wi = w[idx, None]
            enorm = np.hypot(wi * eu, ev)
            sc = atol[idx] + rtol * np.maximum(np.hypot(wi * u, v), np.hypot(wi * nu, nv))
            ratio = np.where(sc > 0, enorm / np.where(sc > 0, sc, 1.0), np.where(enorm > 0, np.inf, 0.0))
            err = np.max(ratio, axis=1)
        err = np.where(finite & (detmin >= 1e-3), err, np.inf)
        status[idx[bad_coef]] = 1
        acc = (err <= 1.0) & ~bad_coef
        rej = ~acc & ~bad_coef

        if np.any(acc):
            a = idx[acc]
            ha = hi[acc]
            ua, va, nua, nva = u[acc], v[acc], nu[acc], nv[acc]
            if track_energy:
                xa2 = x2[a, None]
                e_old = 0.5 * (va**2 + xa2 * ua**2)
                e_new = 0.5 * (nva**2 + xa2 * nua**2)
                qa, pa = coeffs(xis[a], t[a])
                da = -qa[:, None] * ua - pa[:, None] * va
                db = -q5[acc, None] * nua - p5[acc, None] * nva
                stiff = (ha * np.maximum(np.abs(pa), np.abs(p5[acc])) > 1.0)[:, None]
                diss = np.zeros_like(e_old)
                for xg, wg in zip(GL4_X, GL4_W):
                    s = 0.5 * (xg + 1.0)
                    h00 = (1.0 + 2.0 * s) * (1.0 - s) ** 2
                    h10 = s * (1.0 - s) ** 2
                    h01 = s * s * (3.0 - 2.0 * s)
                    h11 = s * s * (s - 1.0)
                    vs = h00 * va + h10 * ha[:, None] * da + h01 * nva + h11 * ha[:, None] * db
                    if np.any(stiff):
                        with np.errstate(all="ignore"):
                            R21, R22 = velocity_row(eq, xis[a], bc, bk, ba, gc, gk, ga, t[a], s * ha)
                        vs = np.where(stiff, R21[:, None] * ua + R22[:, None] * va, vs)
                    _, ps = coeffs(xis[a], t[a] + s * ha)
                    diss += 0.5 * wg * ps[:, None] * vs * vs
                diss *= ha[:, None]
                pos = e_old > 0
                e_scale = e_old + atol[a] * np.hypot(w[a, None] * ua, va) / rtol
                with np.errstate(all="ignore"):
                    r = np.where(pos, np.abs(e_new - e_old + diss) / np.where(pos, e_scale, 1.0), 0.0)
                    inc = np.where(pos, (e_new - e_old) / np.where(pos, e_scale, 1.0), -np.inf)
                e_resid[a] = np.maximum(e_resid[a], r.max(axis=1))
                e_incr[a] = np.maximum(e_incr[a], inc.max(axis=1))
            y[a, 0, :] = nua
            y[a, 1, :] = nva
            det = P11[acc] * P22[acc] - P12[acc] * P21[acc]
            with np.errstate(divide="ignore"):
                ld[a] = ld[a] + np.log(np.abs(det))
            steps[a] += 1
            hmax[a] = np.maximum(hmax[a], ha)
            t[a] = t[a] + ha
            hit_a = hit[acc]
            hh = a[hit_a]
            t[hh] = t_out[k[hh]]
            Y[hh, k[hh]] = y[hh]
            logdet[hh, k[hh]] = ld[hh]
            reduced[hh, k[hh]] = False
            k[hh] += 1
            ea = err[acc]
            with np.errstate(divide="ignore"):
                fac = np.where(ea == 0.0, GROW_MAX,
                               np.minimum(GROW_MAX, np.maximum(SHRINK_MIN, SAFETY * ea ** -0.25)))
            upd = ~hit_a | (ha >= h[a])
            h[a[upd]] = ha[upd] * fac[upd]

        if np.any(rej):
            r_idx = idx[rej]
            er = err[rej]
            with np.errstate(divide="ignore", invalid="ignore"):
                fac = np.where(np.isfinite(er), np.maximum(SHRINK_MIN, SAFETY * er ** -0.25), SHRINK_MIN)
            h[r_idx] = hi[rej] * fac
            rejected[r_idx] += 1
            floor = h[r_idx] < FLOOR_REL * np.maximum(1.0, np.abs(t[r_idx]))
            if np.any(floor):
                f_idx = r_idx[floor]
                floor_hits[f_idx] += 1
                if allow_reduced and eq == 0:
                    in_reduced[f_idx] = True
                else:
                    status[f_idx] = 3
        active = (k < n_out) & (status == 0)

    stats[:, 0] = steps
    stats[:, 1] = rejected
    stats[:, 2] = hmax
    stats[:, 3] = floor_hits
    stats[:, 4] = e_resid
    stats[:, 5] = e_incr
    stats[:, 6] = k


def integrate_modes(eq, xis, bpar, gpar, y0, t_out, rtol, atol, theta=0.0, track_energy=False,
                    allow_reduced=True, max_steps=MAX_STEPS, backend=None):
    """Integrate M modes on a shared output grid.

    y0 has shape (M, 2, K); returns (Y (M, T, 2, K), logdet (M, T),
    reduced (M, T), stats (M, 7), status (M,)). stats columns: steps,
    rejected steps, max step, step-floor hits, max energy residual, max
    relative energy increase, number of output samples filled.
    """
    backend = backend or BACKEND
    xis = np.ascontiguousarray(xis, dtype=np.float64)
    y0 = np.ascontiguousarray(y0, dtype=np.float64)
    t_out = np.ascontiguousarray(t_out, dtype=np.float64)
    atol = np.ascontiguousarray(atol, dtype=np.float64)
    bpar = np.ascontiguousarray(bpar, dtype=np.float64)
    gpar = np.ascontiguousarray(gpar, dtype=np.float64)
    M, T, K = xis.shape[0], t_out.shape[0], y0.shape[2]
    Y = np.zeros((M, T, 2, K))
    logdet = np.zeros((M, T))
    reduced = np.zeros((M, T), dtype=np.bool_)
    stats = np.zeros((M, 7))
    status = np.zeros(M, dtype=np.int64)
    if backend == "numba":
        numba_driver()(int(eq), xis, bpar, gpar, y0, t_out, float(rtol), atol, float(theta),
                       bool(track_energy), bool(allow_reduced), int(max_steps), Y, logdet, reduced,
                       stats, status)
    elif backend == "numpy":
        numpy_driver(int(eq), xis, bpar, gpar, y0, t_out, float(rtol), atol, float(theta),
                     bool(track_energy), bool(allow_reduced), int(max_steps), Y, logdet, reduced,
                     stats, status)
    else:
        raise ValueError(f"unknown backend {backend!r}")
    return Y, logdet, reduced, stats, status
