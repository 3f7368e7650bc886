"""Compiled inner loops shared by the planners.

Plan vectors are flat float64 arrays laid out as
``[u1x, u1y, ..., uNx, uNy, d0, d1, ..., dN]`` where ``u_k`` are the future
support feet and ``d0`` is the remaining time of the current step.

Problem parameters travel as one float64 array indexed by the ``P_*``
constants below so the compiled signatures stay short.
"""

import math

import numpy as np
from numba import njit

EULER = 0
HEUN = 1
RK4 = 2

EXACT = -1

P_OMEGA = 0
P_VXREF = 1
P_VYREF = 2
P_WX = 3
P_WY = 4
P_LMAX = 5
P_RFOOT = 6
P_TLOW = 7
P_TUP = 8
P_D0LO = 9
P_D0HI = 10
P_KAPPA = 11
P_MARGIN = 12
P_D0SCALE = 13
N_PARAMS = 14

EXP_CAP = 700.0
SENTINEL = 1e300
NORM_EPS = 1e-24


@njit(cache=True)
def horizon_of(z):
    return (z.shape[0] - 1) // 3


@njit(cache=True)
def n_constraints(n):
    return 5 * n + 3


@njit(cache=True)
def exact_step(x, y, vx, vy, ux, uy, dt, omega):
    c = math.cosh(omega * dt)
    s = math.sinh(omega * dt)
    px = x - ux
    py = y - uy
    return (
        vx / omega * s + px * c + ux,
        vy / omega * s + py * c + uy,
        vx * c + omega * px * s,
        vy * c + omega * py * s,
    )


@njit(cache=True)
def _deriv(x, y, vx, vy, ux, uy, w2):
    return vx, vy, w2 * (x - ux), w2 * (y - uy)


@njit(cache=True)
def integrate(x, y, vx, vy, ux, uy, dt, w2, method, substeps):
    h = dt / substeps
    for _ in range(substeps):
        k1 = _deriv(x, y, vx, vy, ux, uy, w2)
        if method == EULER:
            x, y, vx, vy = x + h * k1[0], y + h * k1[1], vx + h * k1[2], vy + h * k1[3]
        elif method == HEUN:
            k2 = _deriv(x + h * k1[0], y + h * k1[1], vx + h * k1[2], vy + h * k1[3], ux, uy, w2)
            x = x + 0.5 * h * (k1[0] + k2[0])
            y = y + 0.5 * h * (k1[1] + k2[1])
            vx = vx + 0.5 * h * (k1[2] + k2[2])
            vy = vy + 0.5 * h * (k1[3] + k2[3])
        else:
            a = 0.5 * h
            k2 = _deriv(x + a * k1[0], y + a * k1[1], vx + a * k1[2], vy + a * k1[3], ux, uy, w2)
            k3 = _deriv(x + a * k2[0], y + a * k2[1], vx + a * k2[2], vy + a * k2[3], ux, uy, w2)
            k4 = _deriv(x + h * k3[0], y + h * k3[1], vx + h * k3[2], vy + h * k3[3], ux, uy, w2)
            b = h / 6.0
            x = x + b * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
            y = y + b * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
            vx = vx + b * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
            vy = vy + b * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3])
    return x, y, vx, vy


@njit(cache=True)
def _foot(z, f0, k):
    if k == 0:
        return f0[0], f0[1]
    return z[2 * (k - 1)], z[2 * (k - 1) + 1]


@njit(cache=True)
def rollout(z, x0, f0, omega, mode, substeps, out):
    """Fill ``out[0]`` with x0 and ``out[j + 1]`` with the state ending step j."""
    n = horizon_of(z)
    w2 = omega * omega
    out[0, :] = x0
    for j in range(n + 1):
        ux, uy = _foot(z, f0, j)
        d = z[2 * n + j]
        x, y, vx, vy = out[j, 0], out[j, 1], out[j, 2], out[j, 3]
        if mode == EXACT:
            r = exact_step(x, y, vx, vy, ux, uy, d, omega)
        else:
            r = integrate(x, y, vx, vy, ux, uy, d, w2, mode, substeps)
        out[j + 1, 0] = r[0]
        out[j + 1, 1] = r[1]
        out[j + 1, 2] = r[2]
        out[j + 1, 3] = r[3]


@njit(cache=True)
def transition(omega, d, mode, substeps):
    """Per-axis map of (x - u, v) over one step and its derivative in d."""
    if mode == EXACT:
        c = math.cosh(omega * d)
        s = math.sinh(omega * d)
        return (c, s / omega, omega * s, c, omega * s, c, omega * omega * c, omega * s)
    # one RK4 substep of a linear system is c*I + e*A with A = [[0, 1], [w2, 0]]
    w2 = omega * omega
    h = d / substeps
    s2 = w2 * h * h
    c = 1.0 + 0.5 * s2 + s2 * s2 / 24.0
    e = h * (1.0 + s2 / 6.0)
    dc = w2 * h + w2 * w2 * h * h * h / 6.0
    de = 1.0 + 0.5 * s2
    # powers of c*I + e*A stay in that family: (a, b) -> a*I + b*A
    pa, pb = 1.0, 0.0
    for _ in range(substeps - 1):
        pa, pb = pa * c + pb * e * w2, pa * e + pb * c
    fa, fb = pa * c + pb * e * w2, pa * e + pb * c
    ga, gb = pa * dc + pb * de * w2, pa * de + pb * dc
    return (fa, fb, fb * w2, fa, ga, gb, gb * w2, ga)


@njit(cache=True)
def state_jacobian(z, states, f0, omega, mode, substeps, out):
    """``out[j, i, :]`` = d states[j, i] / d z for the rollout in ``states``."""
    n = horizon_of(z)
    nz = z.shape[0]
    out[:, :, :] = 0.0
    for j in range(n + 1):
        ux, uy = _foot(z, f0, j)
        d = z[2 * n + j]
        t00, t01, t10, t11, g00, g01, g10, g11 = transition(omega, d, mode, substeps)
        for v in range(nz):
            dx = out[j, 0, v]
            dy = out[j, 1, v]
            dvx = out[j, 2, v]
            dvy = out[j, 3, v]
            dux = 0.0
            duy = 0.0
            if j > 0:
                if v == 2 * (j - 1):
                    dux = 1.0
                elif v == 2 * (j - 1) + 1:
                    duy = 1.0
            out[j + 1, 0, v] = t00 * (dx - dux) + t01 * dvx + dux
            out[j + 1, 1, v] = t00 * (dy - duy) + t01 * dvy + duy
            out[j + 1, 2, v] = t10 * (dx - dux) + t11 * dvx
            out[j + 1, 3, v] = t10 * (dy - duy) + t11 * dvy
        px = states[j, 0] - ux
        py = states[j, 1] - uy
        vd = 2 * n + j
        out[j + 1, 0, vd] += g00 * px + g01 * states[j, 2]
        out[j + 1, 1, vd] += g00 * py + g01 * states[j, 3]
        out[j + 1, 2, vd] += g10 * px + g11 * states[j, 2]
        out[j + 1, 3, vd] += g10 * py + g11 * states[j, 3]


@njit(cache=True)
def tracking_cost(states, prm):
    n1 = states.shape[0] - 1
    total = 0.0
    for j in range(1, n1 + 1):
        ex = states[j, 2] - prm[P_VXREF]
        ey = states[j, 3] - prm[P_VYREF]
        total += prm[P_WX] * ex * ex + prm[P_WY] * ey * ey
    return total


@njit(cache=True)
def tracking_gradient(states, jac, prm, out):
    n1 = states.shape[0] - 1
    out[:] = 0.0
    for j in range(1, n1 + 1):
        ex = 2.0 * prm[P_WX] * (states[j, 2] - prm[P_VXREF])
        ey = 2.0 * prm[P_WY] * (states[j, 3] - prm[P_VYREF])
        for v in range(out.shape[0]):
            out[v] += ex * jac[j, 2, v] + ey * jac[j, 3, v]


@njit(cache=True)
def _reach(states, jac, z, f0, row, j, k, limit, scale, want_jac, r, c, g):
    ux, uy = _foot(z, f0, k)
    dx = states[j, 0] - ux
    dy = states[j, 1] - uy
    dist = math.sqrt(dx * dx + dy * dy + NORM_EPS)
    r[row] = dist - limit
    c[row] = scale
    if want_jac:
        nx = dx / dist
        ny = dy / dist
        for v in range(z.shape[0]):
            g[row, v] = nx * jac[j, 0, v] + ny * jac[j, 1, v]
        if k > 0:
            g[row, 2 * (k - 1)] -= nx
            g[row, 2 * (k - 1) + 1] -= ny


@njit(cache=True)
def constraints(z, states, jac, f0, stance, prm, want_jac, r, c, g):
    """Residuals (<= 0 satisfied), positive scales and optional Jacobian rows.

    Row order: touchdown reach k=1..N, liftoff reach k=0..N, crossing
    k=1..N, duration lower k=0..N, duration upper k=0..N.
    """
    n = horizon_of(z)
    if want_jac:
        g[:, :] = 0.0
    limit = prm[P_LMAX] - prm[P_MARGIN]
    lmax = prm[P_LMAX]
    row = 0
    for k in range(1, n + 1):
        _reach(states, jac, z, f0, row, k, k, limit, lmax, want_jac, r, c, g)
        row += 1
    for k in range(0, n + 1):
        _reach(states, jac, z, f0, row, k + 1, k, limit, lmax, want_jac, r, c, g)
        row += 1
    rf = prm[P_RFOOT]
    rscale = rf if rf > 0.0 else lmax
    for k in range(1, n + 1):
        # foot k sits on the side opposite to foot k-1
        sigma = -stance if (k % 2 == 1) else stance
        _, yprev = _foot(z, f0, k - 1)
        _, ycur = _foot(z, f0, k)
        r[row] = rf - sigma * (ycur - yprev)
        c[row] = rscale
        if want_jac:
            g[row, 2 * (k - 1) + 1] = -sigma
            if k > 1:
                g[row, 2 * (k - 2) + 1] = sigma
        row += 1
    tl = prm[P_TLOW]
    tu = prm[P_TUP]
    for k in range(n + 1):
        lo = prm[P_D0LO] if k == 0 else tl
        r[row] = lo - z[2 * n + k]
        c[row] = prm[P_D0SCALE] if k == 0 else tl
        if want_jac:
            g[row, 2 * n + k] = -1.0
        row += 1
    for k in range(n + 1):
        hi = prm[P_D0HI] if k == 0 else tu
        r[row] = z[2 * n + k] - hi
        c[row] = tu
        if want_jac:
            g[row, 2 * n + k] = 1.0
        row += 1


@njit(cache=True)
def soft_terms(r, c, weights, kappa):
    """Sum of w_i exp(1 + kappa r_i / c_i); second value False on overflow."""
    total = 0.0
    ok = True
    for i in range(r.shape[0]):
        a = 1.0 + kappa * r[i] / c[i]
        if a > EXP_CAP or not np.isfinite(a):
            ok = False
            total = SENTINEL
            break
        total += weights[i] * math.exp(a)
    return total, ok




@njit(cache=True)
def soft_cost(z, x0, f0, stance, prm, weights, states, r, c):
    """Closed-form rollout cost plus penalties: returns (J_p, J, ok)."""
    rollout(z, x0, f0, prm[P_OMEGA], EXACT, 1, states)
    jcost = tracking_cost(states, prm)
    dummy = np.zeros((1, 1, 1))
    gdummy = np.zeros((1, 1))
    constraints(z, states, dummy, f0, stance, prm, False, r, c, gdummy)
    pen, ok = soft_terms(r, c, weights, prm[P_KAPPA])
    if not np.isfinite(jcost):
        return SENTINEL, jcost, False
    return jcost + pen, jcost, ok


@njit(cache=True)
def soft_gradient(z, x0, f0, stance, prm, weights, reject, states, jac, r, c, g, grad):
    """Analytical gradient of J_p into ``grad``; returns (J_p, J, valid)."""
    omega = prm[P_OMEGA]
    rollout(z, x0, f0, omega, EXACT, 1, states)
    state_jacobian(z, states, f0, omega, EXACT, 1, jac)
    jcost = tracking_cost(states, prm)
    tracking_gradient(states, jac, prm, grad)
    constraints(z, states, jac, f0, stance, prm, True, r, c, g)
    kappa = prm[P_KAPPA]
    total = jcost
    valid = np.isfinite(jcost)
    for i in range(r.shape[0]):
        a = 1.0 + kappa * r[i] / c[i]
        if a > EXP_CAP or not np.isfinite(a):
            valid = False
            total = SENTINEL
            break
        p = weights[i] * math.exp(a)
        total += p
        coef = p * kappa / c[i]
        for v in range(grad.shape[0]):
            grad[v] += coef * g[i, v]
    if valid:
        for v in range(grad.shape[0]):
            if not np.isfinite(grad[v]) or abs(grad[v]) > reject:
                valid = False
                break
    return total, jcost, valid


DESCENT_CONVERGED = 0
DESCENT_MAX_STEPS = 1
DESCENT_INVALID_FIRST = 2
DESCENT_INVALID = 3
DESCENT_STALLED = 4


@njit(cache=True)
def descend(z, x0, f0, stance, prm, weights, reject, max_steps, alpha0, shrink,
            armijo, gtol, min_alpha, trace):
    """Backtracking gradient descent on J_p, updating ``z`` in place.

    ``trace[i]`` receives (J, J_p, |grad|) of iterate i. Returns
    (accepted steps, status, J_p).
    """
    n = horizon_of(z)
    nz = z.shape[0]
    m = n_constraints(n)
    states = np.empty((n + 2, 4))
    jac = np.empty((n + 2, 4, nz))
    r = np.empty(m)
    c = np.empty(m)
    g = np.empty((m, nz))
    grad = np.empty(nz)
    trial = np.empty(nz)
    steps = 0
    status = DESCENT_MAX_STEPS
    fp = 0.0
    for it in range(max_steps + 1):
        fp, jcost, valid = soft_gradient(z, x0, f0, stance, prm, weights, reject,
                                         states, jac, r, c, g, grad)
        gg = 0.0
        for v in range(nz):
            gg += grad[v] * grad[v]
        if it < trace.shape[0]:
            trace[it, 0] = jcost
            trace[it, 1] = fp
            trace[it, 2] = math.sqrt(gg) if valid else np.inf
        if not valid:
            status = DESCENT_INVALID_FIRST if it == 0 else DESCENT_INVALID
            break
        if math.sqrt(gg) <= gtol:
            status = DESCENT_CONVERGED
            break
        if it == max_steps:
            break
        alpha = alpha0
        accepted = False
        while alpha >= min_alpha:
            for v in range(nz):
                trial[v] = z[v] - alpha * grad[v]
            ft, _, ok = soft_cost(trial, x0, f0, stance, prm, weights, states, r, c)
            if ok and ft <= fp - armijo * alpha * gg:
                accepted = True
                break
            alpha *= shrink
        if not accepted:
            status = DESCENT_STALLED
            break
        z[:] = trial
        steps += 1
    return steps, status, fp


@njit(cache=True)
def solve_linear(a, b, out):
    """Gaussian elimination with partial pivoting; False if singular."""
    n = b.shape[0]
    m = a.copy()
    x = b.copy()
    for col in range(n):
        piv = col
        best = abs(m[col, col])
        for row in range(col + 1, n):
            if abs(m[row, col]) > best:
                best = abs(m[row, col])
                piv = row
        if best < 1e-14:
            return False
        if piv != col:
            for k in range(n):
                m[col, k], m[piv, k] = m[piv, k], m[col, k]
            x[col], x[piv] = x[piv], x[col]
        for row in range(col + 1, n):
            f = m[row, col] / m[col, col]
            if f != 0.0:
                for k in range(col, n):
                    m[row, k] -= f * m[col, k]
                x[row] -= f * x[col]
    for row in range(n - 1, -1, -1):
        s = x[row]
        for k in range(row + 1, n):
            s -= m[row, k] * out[k]
        out[row] = s / m[row, row]
    return True


@njit(cache=True)
def spd_inverse(h, out):
    """Inverse of a symmetric positive definite matrix via Cholesky."""
    n = h.shape[0]
    lower = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1):
            s = h[i, j]
            for k in range(j):
                s -= lower[i, k] * lower[j, k]
            if i == j:
                if s <= 0.0:
                    return False
                lower[i, i] = math.sqrt(s)
            else:
                lower[i, j] = s / lower[j, j]
    linv = np.zeros((n, n))
    for i in range(n):
        linv[i, i] = 1.0 / lower[i, i]
        for j in range(i):
            s = 0.0
            for k in range(j, i):
                s -= lower[i, k] * linv[k, j]
            linv[i, j] = s / lower[i, i]
    for i in range(n):
        for j in range(n):
            s = 0.0
            for k in range(max(i, j), n):
                s += linv[k, i] * linv[k, j]
            out[i, j] = s
    return True


QP_OPTIMAL = 0
QP_INFEASIBLE = 1
QP_NOT_CONVEX = 2
QP_ITERATION_LIMIT = 3


@njit(cache=True)
def qp_solve(h, q, a, b, x, lam):
    """Dual active-set solve of min 1/2 x'Hx + q'x s.t. a x <= b.

    H must be positive definite. Multipliers are written to ``lam``.
    """
    n = h.shape[0]
    m = a.shape[0]
    ginv = np.empty((n, n))
    lam[:] = 0.0
    if not spd_inverse(h, ginv):
        return QP_NOT_CONVEX
    for i in range(n):
        s = 0.0
        for k in range(n):
            s -= ginv[i, k] * q[k]
        x[i] = s
    active = np.empty(n, dtype=np.int64)
    u = np.empty(n + 1)
    is_active = np.zeros(m, dtype=np.bool_)
    na = 0
    norms = np.empty(m)
    for i in range(m):
        s = 0.0
        for k in range(n):
            s += a[i, k] * a[i, k]
        norms[i] = math.sqrt(s) if s > 0.0 else 1.0
    z = np.empty(n)
    r = np.empty(n)
    gn = np.empty(n)
    work = np.empty(n)
    for _ in range(20 * (m + n) + 20):
        p = -1
        worst = -1e-12
        for i in range(m):
            if is_active[i]:
                continue
            s = b[i]
            for k in range(n):
                s -= a[i, k] * x[k]
            s /= norms[i]
            if s < worst:
                worst = s
                p = i
        if p < 0:
            for k in range(na):
                lam[active[k]] = u[k]
            return QP_OPTIMAL
        uplus = 0.0
        added = False
        for _inner in range(2 * n + 4):
            # normal of the violated constraint in ">= 0" form is -a_p
            for i in range(n):
                s = 0.0
                for k in range(n):
                    s -= ginv[i, k] * a[p, k]
                gn[i] = s
            if na > 0:
                mm = np.empty((na, na))
                yy = np.empty(na)
                for i in range(na):
                    ai = active[i]
                    s = 0.0
                    for k in range(n):
                        s -= a[ai, k] * gn[k]
                    yy[i] = s
                    for j in range(na):
                        aj = active[j]
                        s = 0.0
                        for k in range(n):
                            t = 0.0
                            for l in range(n):
                                t += ginv[k, l] * a[aj, l]
                            s += a[ai, k] * t
                        mm[i, j] = s
                rr = np.empty(na)
                if not solve_linear(mm, yy, rr):
                    return QP_INFEASIBLE
                for i in range(na):
                    r[i] = rr[i]
                for i in range(n):
                    work[i] = 0.0
                for j in range(na):
                    aj = active[j]
                    for i in range(n):
                        work[i] -= a[aj, i] * r[j]
                for i in range(n):
                    s = 0.0
                    for k in range(n):
                        s += ginv[i, k] * work[k]
                    z[i] = gn[i] - s
            else:
                for i in range(n):
                    z[i] = gn[i]
            t1 = np.inf
            drop = -1
            for k in range(na):
                if r[k] > 1e-14:
                    ratio = u[k] / r[k]
                    if ratio < t1:
                        t1 = ratio
                        drop = k
            zn = 0.0
            sp = b[p]
            for k in range(n):
                zn -= z[k] * a[p, k]
                sp -= a[p, k] * x[k]
            zz = 0.0
            for k in range(n):
                zz += z[k] * z[k]
            t2 = np.inf
            if math.sqrt(zz) > 1e-12 and zn > 1e-14:
                t2 = -sp / zn
            t = min(t1, t2)
            if t == np.inf:
                return QP_INFEASIBLE
            if t2 == np.inf:
                for k in range(na):
                    u[k] -= t * r[k]
                uplus += t
            else:
                for k in range(n):
                    x[k] += t * z[k]
                for k in range(na):
                    u[k] -= t * r[k]
                uplus += t
                if t2 <= t1:
                    active[na] = p
                    u[na] = uplus
                    is_active[p] = True
                    na += 1
                    added = True
                    break
            # drop the blocking constraint and retry the same violated one
            is_active[active[drop]] = False
            for k in range(drop, na - 1):
                active[k] = active[k + 1]
                u[k] = u[k + 1]
            na -= 1
        if not added:
            return QP_ITERATION_LIMIT
    return QP_ITERATION_LIMIT


SQP_CONVERGED = 0
SQP_CAP_FEASIBLE = 1
SQP_CAP_INFEASIBLE = 2
SQP_NAN = 3

SLACK_PRICE = 1e4
SLACK_CURVATURE = 1e-6


@njit(cache=True)
def _max_violation(r):
    worst = 0.0
    for i in range(r.shape[0]):
        if r[i] > worst:
            worst = r[i]
    return worst


@njit(cache=True)
def _sum_violation(r):
    s = 0.0
    for i in range(r.shape[0]):
        if r[i] > 0.0:
            s += r[i]
    return s


@njit(cache=True)
def rk4_objective(z, x0, f0, stance, prm, substeps, states, r, c):
    rollout(z, x0, f0, prm[P_OMEGA], RK4, substeps, states)
    dummy = np.zeros((1, 1, 1))
    gdummy = np.zeros((1, 1))
    constraints(z, states, dummy, f0, stance, prm, False, r, c, gdummy)
    return tracking_cost(states, prm)


@njit(cache=True)
def sqp(z, x0, f0, stance, prm, substeps, max_iter, feas_tol, opt_tol, trust, trace):
    """Gauss-Newton SQP with an l1 merit line search over the RK4 rollout.

    ``z`` is updated in place. ``trace[i]`` receives (objective, max
    residual) of iterate i. Returns (iterations, status, objective, max
    residual).
    """
    n = horizon_of(z)
    nz = z.shape[0]
    m = n_constraints(n)
    nv = nz + 1
    n_trust = 4 * n
    rows = m + 1 + n_trust
    states = np.empty((n + 2, 4))
    jac = np.empty((n + 2, 4, nz))
    r = np.empty(m)
    c = np.empty(m)
    g = np.empty((m, nz))
    grad = np.empty(nz)
    h = np.zeros((nv, nv))
    q = np.zeros(nv)
    a = np.zeros((rows, nv))
    b = np.zeros(rows)
    p = np.empty(nv)
    lam = np.empty(rows)
    trial = np.empty(nz)
    best = z.copy()
    best_f = np.inf
    # duration rows are simple bounds and never need the elastic slack
    first_duration_row = 3 * n + 1
    nu = 1.0
    status = SQP_CAP_INFEASIBLE
    iters = 0
    f = 0.0
    viol = 0.0
    omega = prm[P_OMEGA]
    for it in range(max_iter + 1):
        iters = it
        rollout(z, x0, f0, omega, RK4, substeps, states)
        state_jacobian(z, states, f0, omega, RK4, substeps, jac)
        f = tracking_cost(states, prm)
        tracking_gradient(states, jac, prm, grad)
        constraints(z, states, jac, f0, stance, prm, True, r, c, g)
        viol = _max_violation(r)
        if not np.isfinite(f) or not np.isfinite(viol):
            return it, SQP_NAN, f, viol
        if it < trace.shape[0]:
            trace[it, 0] = f
            trace[it, 1] = viol
        if viol <= feas_tol and f < best_f:
            best_f = f
            best[:] = z
        if it == max_iter:
            break
        h[:, :] = 0.0
        n1 = n + 1
        for j in range(1, n1 + 1):
            for v in range(nz):
                for w in range(nz):
                    h[v, w] += 2.0 * (prm[P_WX] * jac[j, 2, v] * jac[j, 2, w]
                                      + prm[P_WY] * jac[j, 3, v] * jac[j, 3, w])
        diag = 0.0
        for v in range(nz):
            if h[v, v] > diag:
                diag = h[v, v]
        mu = 1e-4 * (1.0 + diag)
        for v in range(nz):
            h[v, v] += mu
        h[nz, nz] = SLACK_CURVATURE
        for v in range(nz):
            q[v] = grad[v]
        q[nz] = SLACK_PRICE
        a[:, :] = 0.0
        for i in range(m):
            for v in range(nz):
                a[i, v] = g[i, v]
            if i < first_duration_row:
                a[i, nz] = -1.0
            b[i] = -r[i]
        a[m, nz] = -1.0
        b[m] = 0.0
        row = m + 1
        for v in range(2 * n):
            a[row, v] = 1.0
            b[row] = trust
            a[row + 1, v] = -1.0
            b[row + 1] = trust
            row += 2
        qs = qp_solve(h, q, a, b, p, lam)
        if qs != QP_OPTIMAL:
            break
        pinf = 0.0
        for v in range(nz):
            if abs(p[v]) > pinf:
                pinf = abs(p[v])
        if pinf <= opt_tol and viol <= feas_tol:
            status = SQP_CONVERGED
            break
        for i in range(m):
            if 1.1 * lam[i] > nu:
                nu = 1.1 * lam[i]
        sv = _sum_violation(r)
        phi0 = f + nu * sv
        slope = -nu * sv
        for v in range(nz):
            slope += grad[v] * p[v]
        if slope > 0.0:
            slope = 0.0
        alpha = 1.0
        accepted = False
        for _ in range(40):
            for v in range(nz):
                trial[v] = z[v] + alpha * p[v]
            ft = rk4_objective(trial, x0, f0, stance, prm, substeps, states, r, c)
            phit = ft + nu * _sum_violation(r)
            if np.isfinite(phit) and phit <= phi0 + 1e-4 * alpha * slope:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        z[:] = trial
    if status == SQP_CONVERGED:
        if best_f < f:
            z[:] = best
            f = best_f
            viol = 0.0
        return iters, status, f, viol
    if best_f < np.inf:
        if viol > feas_tol or best_f <= f:
            z[:] = best
            f = rk4_objective(z, x0, f0, stance, prm, substeps, states, r, c)
            viol = _max_violation(r)
        return iters, SQP_CAP_FEASIBLE, f, viol
    return iters, SQP_CAP_INFEASIBLE, f, viol
