"""Compiled Dormand-Prince 5(4) integrator for the packed master equation.

The state is a real array ``Y`` of shape ``(ncols, nstate)``.  Column 0 is
the primal state; columns ``1..m`` are tangents with respect to ``m`` seeded
parameter directions, i.e. ``Y`` is a vector of dual numbers stored column
wise and every operation below applies the dual product rule explicitly.
Step-size control looks at column 0 only, so the accepted step sequence is
a function of the primal trajectory alone.

Packed layout of a Hermitian N x N matrix: the N real diagonal entries,
then ``Re rho_ij, Im rho_ij`` for i < j in row-major order.  Quadrature
states follow at offset N*N.
"""

import numpy as np
from numba import njit

# Dormand-Prince 5(4) tableau
C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
A = np.zeros((7, 7))
A[1, 0] = 1 / 5
A[2, :2] = [3 / 40, 9 / 40]
A[3, :3] = [44 / 45, -56 / 15, 32 / 9]
A[4, :4] = [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]
A[5, :5] = [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]
A[6, :6] = [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]
B = A[6].copy()
# b - b_hat: fifth minus embedded fourth order weights
E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
# Shampine's continuous extension: y(t + th h) = y + h * sum_j K_j * (P[j] . [th, th^2, th^3, th^4])
P = np.array(
    [
        [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
        [0.0, 0.0, 0.0, 0.0],
        [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
        [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
        [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
        [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
        [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
    ]
)

STATUS_OK = 0
STATUS_MAX_STEPS = 1
STATUS_UNDERFLOW = 2
STATUS_NONFINITE = 3

GATE_SMOOTH = 0
GATE_CONSTANT = 1


@njit(cache=True)
def _unpack(y, n, out):
    for i in range(n):
        out[i, i] = y[i]
    p = n
    for i in range(n):
        for j in range(i + 1, n):
            z = complex(y[p], y[p + 1])
            out[i, j] = z
            out[j, i] = z.conjugate()
            p += 2


@njit(cache=True)
def _pack(m, n, out):
    for i in range(n):
        out[i] = m[i, i].real
    p = n
    for i in range(n):
        for j in range(i + 1, n):
            out[p] = m[i, j].real
            out[p + 1] = m[i, j].imag
            p += 2


@njit(cache=True)
def _commutator(c, r, n, out):
    """out = -i [H, r] for the tridiagonal H with upper couplings c."""
    for a in range(n):
        for b in range(n):
            hr = 0j
            if a > 0:
                hr += c[a - 1].conjugate() * r[a - 1, b]
            if a < n - 1:
                hr += c[a] * r[a + 1, b]
            rh = 0j
            if b > 0:
                rh += r[a, b - 1] * c[b - 1]
            if b < n - 1:
                rh += r[a, b + 1] * c[b].conjugate()
            out[a, b] = -1j * (hr - rh)


@njit(cache=True)
def _dissipate(r, jt, jf, jr, out):
    for k in range(jt.size):
        a = jt[k]
        b = jf[k]
        g = jr[k]
        out[a, a] += g * r[b, b]
        n = r.shape[0]
        for y in range(n):
            out[b, y] -= 0.5 * g * r[b, y]
            out[y, b] -= 0.5 * g * r[y, b]


@njit(cache=True)
def _couplings(t, x, signs, seeds, c, dc):
    """Channel couplings and their tangents along the seeded directions."""
    nch = signs.size
    m = seeds.shape[1]
    for j in range(nch):
        t0 = x[4 * j]
        sg = x[4 * j + 1]
        om = x[4 * j + 2]
        de = x[4 * j + 3]
        u = t - t0
        g = np.exp(-(u * u) / (sg * sg))
        ph = -signs[j] * de * t
        rot = complex(np.cos(ph), np.sin(ph))
        cj = om * g * rot
        c[j] = cj
        if m == 0:
            continue
        d_t0 = cj * (2.0 * u / (sg * sg))
        d_sg = cj * (2.0 * u * u / (sg * sg * sg))
        d_om = g * rot
        d_de = cj * complex(0.0, -signs[j] * t)
        for k in range(m):
            dc[j, k] = (
                d_t0 * seeds[4 * j, k]
                + d_sg * seeds[4 * j + 1, k]
                + d_om * seeds[4 * j + 2, k]
                + d_de * seeds[4 * j + 3, k]
            )


@njit(cache=True)
def rhs(t, Y, x, signs, seeds, jt, jf, jr, n, gate_mode, gate_a, gate_b, out):
    """Dual right-hand side; gate is sigmoid(gate_a*(t-gate_b)) or constant gate_a."""
    ncols = Y.shape[0]
    nch = n - 1
    m = ncols - 1
    c = np.empty(nch, dtype=np.complex128)
    dc = np.empty((nch, max(m, 1)), dtype=np.complex128)
    _couplings(t, x, signs, seeds[:, :m], c, dc)
    if gate_mode == GATE_SMOOTH:
        z = gate_a * (t - gate_b)
        if z >= 0:
            gate = 1.0 / (1.0 + np.exp(-z))
        else:
            ez = np.exp(z)
            gate = ez / (1.0 + ez)
    else:
        gate = gate_a
    r0 = np.empty((n, n), dtype=np.complex128)
    rk = np.empty((n, n), dtype=np.complex128)
    d = np.empty((n, n), dtype=np.complex128)
    dd = np.empty((n, n), dtype=np.complex128)
    ck = np.empty(nch, dtype=np.complex128)
    nn = n * n
    _unpack(Y[0], n, r0)
    for col in range(ncols):
        if col == 0:
            rr = r0
        else:
            _unpack(Y[col], n, rk)
            rr = rk
        _commutator(c, rr, n, d)
        _dissipate(rr, jt, jf, jr, d)
        if col > 0:
            # product rule: tangent of H acting on the primal state
            for j in range(nch):
                ck[j] = dc[j, col - 1]
            _commutator(ck, r0, n, dd)
            for a in range(n):
                for b in range(n):
                    d[a, b] += dd[a, b]
        _pack(d, n, out[col])
        out[col, nn] = gate * Y[col, 0]
        for i in range(1, n - 1):
            out[col, nn + i] = Y[col, i]


@njit(cache=True)
def _err_norm(y0, y1, err, rtol, atol):
    s = 0.0
    for i in range(y0.size):
        sc = atol + rtol * max(abs(y0[i]), abs(y1[i]))
        e = err[i] / sc
        s += e * e
    return np.sqrt(s / y0.size)


@njit(cache=True)
def step(t, Y, h, K, x, signs, seeds, jt, jf, jr, n, gate_mode, gate_a, gate_b, Ynew, errv):
    """One Dormand-Prince step from (t, Y) with size h; K[0] must hold f(t, Y).

    Fills K[1..6] (K[6] is f at the new point, reused FSAL), Ynew and the
    primal local error vector ``errv``.
    """
    ncols, ns = Y.shape
    tmp = np.empty((ncols, ns))
    for s in range(1, 7):
        for col in range(ncols):
            for i in range(ns):
                acc = Y[col, i]
                for j in range(s):
                    a = A[s, j]
                    if a != 0.0:
                        acc += h * a * K[j, col, i]
                tmp[col, i] = acc
        rhs(t + C[s] * h, tmp, x, signs, seeds, jt, jf, jr, n, gate_mode, gate_a, gate_b, K[s])
    # stage 7 is evaluated at the fifth-order solution (FSAL)
    for col in range(ncols):
        for i in range(ns):
            Ynew[col, i] = tmp[col, i]
    for i in range(ns):
        acc = 0.0
        for j in range(7):
            acc += E[j] * K[j, 0, i]
        errv[i] = h * acc


@njit(cache=True)
def integrate(
    Y0, t_start, t_end, h0, rtol, atol, max_steps,
    x, signs, seeds, jt, jf, jr, n, gate_mode, gate_a, gate_b,
    ts, samples,
):
    """Adaptive integration from t_start to t_end.

    Sample times ``ts`` inside [t_start, t_end] get the primal state written
    to the matching row of ``samples`` via the dense-output interpolant.
    Returns (Y_end, status, t_reached, h_next, n_accepted, n_rejected).
    """
    ncols, ns = Y0.shape
    Y = Y0.copy()
    Ynew = np.empty_like(Y)
    K = np.zeros((7, ncols, ns))
    errv = np.empty(ns)
    rhs(t_start, Y, x, signs, seeds, jt, jf, jr, n, gate_mode, gate_a, gate_b, K[0])
    t = t_start
    span = t_end - t_start

    # sample rows at the starting time
    si = 0
    while si < ts.size and ts[si] < t_start:
        si += 1
    while si < ts.size and ts[si] == t_start:
        for i in range(ns):
            samples[si, i] = Y[0, i]
        si += 1

    for i in range(ns):
        if not np.isfinite(K[0, 0, i]):
            return Y, STATUS_NONFINITE, t, 0.0, 0, 0

    h = h0
    if h <= 0.0:
        # Hairer's starting-step heuristic on the primal column
        d0 = 0.0
        d1 = 0.0
        for i in range(ns):
            sc = atol + rtol * abs(Y[0, i])
            d0 += (Y[0, i] / sc) ** 2
            d1 += (K[0, 0, i] / sc) ** 2
        d0 = np.sqrt(d0 / ns)
        d1 = np.sqrt(d1 / ns)
        if d0 < 1e-5 or d1 < 1e-5:
            h = 1e-6
        else:
            h = 0.01 * d0 / d1
        h = min(h, span)
        Yt = np.empty_like(Y)
        for col in range(ncols):
            for i in range(ns):
                Yt[col, i] = Y[col, i] + h * K[0, col, i]
        f1 = np.empty_like(Y)
        rhs(t + h, Yt, x, signs, seeds, jt, jf, jr, n, gate_mode, gate_a, gate_b, f1)
        d2 = 0.0
        for i in range(ns):
            sc = atol + rtol * abs(Y[0, i])
            d2 += ((f1[0, i] - K[0, 0, i]) / sc) ** 2
        d2 = np.sqrt(d2 / ns) / h
        if max(d1, d2) <= 1e-15:
            h1 = max(1e-6, h * 1e-3)
        else:
            h1 = (0.01 / max(d1, d2)) ** 0.2
        h = min(100.0 * h, h1, span)

    beta = 0.04
    alpha = 0.2 - 0.75 * beta
    err_old = 1e-4
    rejected_last = False
    n_acc = 0
    n_rej = 0
    while t < t_end:
        if n_acc + n_rej >= max_steps:
            return Y, STATUS_MAX_STEPS, t, h, n_acc, n_rej
        if h < 16.0 * 2.220446049250313e-16 * max(abs(t), 1.0):
            return Y, STATUS_UNDERFLOW, t, h, n_acc, n_rej
        last = False
        if t + h >= t_end or t + 1.01 * h >= t_end:
            h = t_end - t
            last = True
        step(t, Y, h, K, x, signs, seeds, jt, jf, jr, n, gate_mode, gate_a, gate_b, Ynew, errv)
        err = _err_norm(Y[0], Ynew[0], errv, rtol, atol)
        if not np.isfinite(err):
            return Y, STATUS_NONFINITE, t, h, n_acc, n_rej
        if err <= 1.0:
            t_new = t_end if last else t + h
            # dense output for samples in (t, t_new]
            while si < ts.size and ts[si] <= t_new:
                th = (ts[si] - t) / h
                b0 = th
                b1 = th * th
                b2 = b1 * th
                b3 = b2 * th
                for i in range(ns):
                    acc = 0.0
                    for j in range(7):
                        w = P[j, 0] * b0 + P[j, 1] * b1 + P[j, 2] * b2 + P[j, 3] * b3
                        acc += w * K[j, 0, i]
                    samples[si, i] = Y[0, i] + h * acc
                si += 1
            for col in range(ncols):
                for i in range(ns):
                    Y[col, i] = Ynew[col, i]
                    K[0, col, i] = K[6, col, i]
            t = t_new
            n_acc += 1
            e = max(err, 1e-10)
            fac = 0.9 * e ** (-alpha) * err_old**beta
            fac = min(10.0, max(0.2, fac))
            if rejected_last:
                fac = min(fac, 1.0)
            err_old = max(err, 1e-4)
            rejected_last = False
            h = h * fac
        else:
            n_rej += 1
            fac = max(0.2, 0.9 * err ** (-alpha))
            h = h * fac
            rejected_last = True
    return Y, STATUS_OK, t, h, n_acc, n_rej
