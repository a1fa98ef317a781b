"""Compiled primal-dual interior-point kernel for the per-building subproblem.

Per slot ``t`` the variable block is ``[grid_buy, grid_sell, charge, discharge,
coal_total, soc_next]`` and two equality rows couple it: the coalition-amended
power balance and the battery recursion.  The objective is

    sum_t buy[t]*Gb[t] - sell[t]*Gs[t] + lin_c[t]*C[t] + 0.5*quad_c*C[t]**2

With ``quad_c == 0`` the coalition trade is pinned at zero and the problem is
the plain dispatch LP.  The normal equations are banded (half bandwidth 2)
and are factorised in O(T) per Newton step.  Everything works on flat arrays
of length ``6*T`` indexed ``6*t + k``.
"""

import numpy as np
from numba import njit

GB, GS, UC, UD, CT, SO = 0, 1, 2, 3, 4, 5
NV = 6

OK = 0
MAX_ITER = 1
NUMERICAL = 2

_FREE, _LOWER, _BOX, _FIXED = 0, 1, 2, 3


@njit(cache=True, error_model="numpy")
def _band_solve(nb, L, rhs, out, tmp):
    # nb[i, k] = N[i, i-k], k = 0..2, lower band of an SPD matrix
    n = rhs.shape[0]
    for i in range(n):
        for k in range(2, 0, -1):
            j = i - k
            if j < 0:
                L[i, k] = 0.0
                continue
            s = nb[i, k]
            for m in range(max(0, i - 2), j):
                s -= L[i, i - m] * L[j, j - m]
            L[i, k] = s / L[j, 0]
        s = nb[i, 0]
        for k in range(1, 3):
            if i - k >= 0:
                s -= L[i, k] * L[i, k]
        if not s > 1e-14 * nb[i, 0]:
            if not np.isfinite(s):
                return False
            # dependent row at the current scaling: drop the direction
            L[i, 0] = 1e64
            continue
        L[i, 0] = np.sqrt(s)
    for i in range(n):
        s = rhs[i]
        for k in range(1, 3):
            if i - k >= 0:
                s -= L[i, k] * tmp[i - k]
        tmp[i] = s / L[i, 0]
    for i in range(n - 1, -1, -1):
        s = tmp[i]
        for k in range(1, 3):
            if i + k < n:
                s -= L[i + k, k] * out[i + k]
        out[i] = s / L[i, 0]
    return True


@njit(cache=True, error_model="numpy")
def _mat_vec(v, T, rho_c, rho_d, out):
    for t in range(T):
        o = NV * t
        out[2 * t] = v[o + GB] - v[o + GS] - v[o + UC] + v[o + UD] + v[o + CT]
        prev = v[o - NV + SO] if t > 0 else 0.0
        out[2 * t + 1] = v[o + SO] - prev - rho_c * v[o + UC] + v[o + UD] / rho_d


@njit(cache=True, error_model="numpy")
def _mat_t_vec(y, T, rho_c, rho_d, out):
    for t in range(T):
        o = NV * t
        yp = y[2 * t]
        yd = y[2 * t + 1]
        out[o + GB] = yp
        out[o + GS] = -yp
        out[o + UC] = -yp - rho_c * yd
        out[o + UD] = yp + yd / rho_d
        out[o + CT] = yp
        out[o + SO] = yd - (y[2 * t + 3] if t < T - 1 else 0.0)


@njit(cache=True, error_model="numpy")
def _step_len(kind, w_l, w_u, z_l, z_u, dx, dzl, dzu):
    a = 1.0
    for i in range(dx.shape[0]):
        kd = kind[i]
        if kd == _LOWER or kd == _BOX:
            if dx[i] < 0.0:
                a = min(a, -w_l[i] / dx[i])
            if dzl[i] < 0.0:
                a = min(a, -z_l[i] / dzl[i])
        if kd == _BOX:
            if dx[i] > 0.0:
                a = min(a, w_u[i] / dx[i])
            if dzu[i] < 0.0:
                a = min(a, -z_u[i] / dzu[i])
    return a


@njit(cache=True, error_model="numpy")
def _comp_after(kind, w_l, w_u, z_l, z_u, dx, dzl, dzu, a):
    c = 0.0
    for i in range(dx.shape[0]):
        kd = kind[i]
        if kd == _LOWER or kd == _BOX:
            c += (w_l[i] + a * dx[i]) * (z_l[i] + a * dzl[i])
        if kd == _BOX:
            c += (w_u[i] - a * dx[i]) * (z_u[i] + a * dzu[i])
    return c


@njit(cache=True, error_model="numpy")
def solve_kernel(net, buy, sell, lin_c, quad_c, rho_c, rho_d, u_max, soc_max,
                 soc_init, tol, max_iter):
    """Solve one building subproblem.

    ``net`` is demand minus generation per slot.  Returns ``(x, status, iters)``
    with ``x`` of shape ``(T, 6)``.
    """
    T = net.shape[0]
    n = NV * T
    kind = np.empty(n, dtype=np.int8)
    lb = np.zeros(n)
    ub = np.zeros(n)
    H = np.zeros(n)
    q = np.zeros(n)
    x = np.zeros(n)
    battery = u_max > 0.0 and soc_max > 0.0
    scale = 1.0
    for t in range(T):
        scale = max(scale, abs(net[t]))
    for t in range(T):
        o = NV * t
        q[o + GB] = buy[t]
        q[o + GS] = -sell[t]
        kind[o + GB] = _LOWER
        kind[o + GS] = _LOWER
        x[o + GB] = scale + max(net[t], 0.0)
        x[o + GS] = scale + max(-net[t], 0.0)
        if battery:
            kind[o + UC] = _BOX
            kind[o + UD] = _BOX
            kind[o + SO] = _BOX
            ub[o + UC] = u_max
            ub[o + UD] = u_max
            ub[o + SO] = soc_max
            x[o + UC] = 0.5 * u_max
            x[o + UD] = 0.5 * u_max
            x[o + SO] = 0.5 * soc_max
        else:
            kind[o + UC] = _FIXED
            kind[o + UD] = _FIXED
            kind[o + SO] = _FIXED
            x[o + SO] = soc_init
        if quad_c > 0.0:
            kind[o + CT] = _FREE
            H[o + CT] = quad_c
            q[o + CT] = lin_c[t]
        else:
            kind[o + CT] = _FIXED

    n_comp = 0
    for i in range(n):
        if kind[i] == _LOWER:
            n_comp += 1
        elif kind[i] == _BOX:
            n_comp += 2
    zl = np.zeros(n)
    zu = np.zeros(n)
    wl = np.ones(n)
    wu = np.ones(n)
    for i in range(n):
        if kind[i] == _LOWER or kind[i] == _BOX:
            zl[i] = 1.0
        if kind[i] == _BOX:
            zu[i] = 1.0

    b = np.zeros(2 * T)
    for t in range(T):
        b[2 * t] = net[t]
    b[1] = soc_init
    b_norm = 1.0
    for i in range(2 * T):
        b_norm = max(b_norm, 1.0 + abs(b[i]))
    q_norm = 1.0
    for i in range(n):
        q_norm = max(q_norm, 1.0 + abs(q[i]))

    y = np.zeros(2 * T)
    rp = np.empty(2 * T)
    rd = np.empty(n)
    ax = np.empty(2 * T)
    aty = np.empty(n)
    m = np.zeros(n)
    nb = np.zeros((2 * T, 3))
    L = np.zeros((2 * T, 3))
    tmp = np.empty(2 * T)
    rhs = np.empty(2 * T)
    r1 = np.zeros(n)
    rl = np.zeros(n)
    ru = np.zeros(n)
    dx = np.zeros(n)
    dy = np.zeros(2 * T)
    dzl = np.zeros(n)
    dzu = np.zeros(n)
    dxa = np.zeros(n)
    dzla = np.zeros(n)
    dzua = np.zeros(n)
    mr1 = np.zeros(n)

    x_ok = np.zeros(n)
    have_fallback = False
    status = MAX_ITER
    it = 0
    for it in range(1, max_iter + 1):
        _mat_vec(x, T, rho_c, rho_d, ax)
        rp_max = 0.0
        for i in range(2 * T):
            rp[i] = b[i] - ax[i]
            rp_max = max(rp_max, abs(rp[i]))
        _mat_t_vec(y, T, rho_c, rho_d, aty)
        rd_max = 0.0
        comp = 0.0
        for i in range(n):
            kd = kind[i]
            if kd == _FIXED:
                rd[i] = 0.0
                m[i] = 0.0
                continue
            rd[i] = H[i] * x[i] + q[i] - aty[i] - zl[i] + zu[i]
            rd_max = max(rd_max, abs(rd[i]))
            sig = 0.0
            if kd == _LOWER or kd == _BOX:
                wl[i] = x[i] - lb[i]
                comp += wl[i] * zl[i]
                sig += zl[i] / wl[i]
            if kd == _BOX:
                wu[i] = ub[i] - x[i]
                comp += wu[i] * zu[i]
                sig += zu[i] / wu[i]
            m[i] = 1.0 / (H[i] + sig)
        mu = comp / max(n_comp, 1)
        if rp_max <= 10 * tol * b_norm and rd_max <= 10 * tol * q_norm and mu <= tol:
            status = OK
            break
        if rp_max <= 1e-7 * b_norm and rd_max <= 1e-7 * q_norm and mu <= 1e-8:
            have_fallback = True
            for i in range(n):
                x_ok[i] = x[i]

        for t in range(T):
            o = NV * t
            r = 2 * t
            nb[r, 0] = m[o + GB] + m[o + GS] + m[o + UC] + m[o + UD] + m[o + CT]
            nb[r, 1] = 0.0
            nb[r, 2] = 0.0
            d = m[o + SO] + rho_c * rho_c * m[o + UC] + m[o + UD] / (rho_d * rho_d)
            if t > 0:
                d += m[o - NV + SO]
                nb[r + 1, 2] = -m[o - NV + SO]
            else:
                nb[r + 1, 2] = 0.0
            nb[r + 1, 0] = d
            nb[r + 1, 1] = rho_c * m[o + UC] + m[o + UD] / rho_d
        for i in range(2 * T):
            if nb[i, 0] <= 1e-300:
                # row touches only pinned variables and is already satisfied
                nb[i, 0] = 1.0

        sigma = 0.0
        for phase in range(3):
            if phase == 2:
                # the corrector raised complementarity: retry without it
                a = _step_len(kind, wl, wu, zl, zu, dx, dzl, dzu)
                if _comp_after(kind, wl, wu, zl, zu, dx, dzl, dzu, a) <= comp:
                    break
                for i in range(n):
                    dxa[i] = 0.0
                    dzla[i] = 0.0
                    dzua[i] = 0.0
            if phase == 1:
                a = _step_len(kind, wl, wu, zl, zu, dxa, dzla, dzua)
                mu_aff = _comp_after(kind, wl, wu, zl, zu, dxa, dzla, dzua, a) / max(n_comp, 1)
                sigma = (mu_aff / mu) ** 3 if mu > 0.0 else 0.0
            for i in range(n):
                kd = kind[i]
                if kd == _FIXED:
                    r1[i] = 0.0
                    mr1[i] = 0.0
                    continue
                v = -rd[i]
                if kd == _LOWER or kd == _BOX:
                    rl[i] = sigma * mu - wl[i] * zl[i] - dxa[i] * dzla[i]
                    v += rl[i] / wl[i]
                if kd == _BOX:
                    ru[i] = sigma * mu - wu[i] * zu[i] + dxa[i] * dzua[i]
                    v -= ru[i] / wu[i]
                r1[i] = v
                mr1[i] = m[i] * v
            _mat_vec(mr1, T, rho_c, rho_d, ax)
            for i in range(2 * T):
                rhs[i] = rp[i] - ax[i]
            if not _band_solve(nb, L, rhs, dy, tmp):
                if have_fallback:
                    return x_ok.reshape((T, NV)), OK, it
                return x.reshape((T, NV)), NUMERICAL, it
            _mat_t_vec(dy, T, rho_c, rho_d, aty)
            for i in range(n):
                kd = kind[i]
                if kd == _FIXED:
                    dx[i] = 0.0
                    dzl[i] = 0.0
                    dzu[i] = 0.0
                    continue
                dx[i] = m[i] * (r1[i] + aty[i])
                dzl[i] = (rl[i] - zl[i] * dx[i]) / wl[i] if (kd == _LOWER or kd == _BOX) else 0.0
                dzu[i] = (ru[i] + zu[i] * dx[i]) / wu[i] if kd == _BOX else 0.0
            if phase == 0:
                for i in range(n):
                    dxa[i] = dx[i]
                    dzla[i] = dzl[i]
                    dzua[i] = dzu[i]

        a = min(1.0, 0.995 * _step_len(kind, wl, wu, zl, zu, dx, dzl, dzu))
        # the quadratic term makes dx'dz positive; shorten the step until the
        # complementarity gap actually shrinks
        for _ in range(30):
            if _comp_after(kind, wl, wu, zl, zu, dx, dzl, dzu, a) <= (1.0 - 0.01 * a) * comp:
                break
            a *= 0.5
        for i in range(n):
            x[i] += a * dx[i]
            zl[i] += a * dzl[i]
            zu[i] += a * dzu[i]
        for i in range(2 * T):
            y[i] += a * dy[i]
        for i in range(n):
            dxa[i] = 0.0
            dzla[i] = 0.0
            dzua[i] = 0.0
    if status != OK and have_fallback:
        return x_ok.reshape((T, NV)), OK, it
    return x.reshape((T, NV)), status, it


@njit(cache=True, error_model="numpy")
def polish(x, net, quad_c, u_max, snap):
    """Clip controls to their box and fold grid residuals below ``snap`` into them."""
    T = x.shape[0]
    uc = np.empty(T)
    ud = np.empty(T)
    ct = np.zeros(T)
    for t in range(T):
        uc[t] = min(max(x[t, UC], 0.0), u_max)
        ud[t] = min(max(x[t, UD], 0.0), u_max)
        if quad_c > 0:
            ct[t] = x[t, CT]
        eps = net[t] + uc[t] - ud[t] - ct[t]
        if eps == 0.0 or abs(eps) > snap:
            continue
        if eps < 0:
            if ud[t] >= -eps:
                ud[t] += eps
            elif uc[t] - eps <= u_max:
                uc[t] -= eps
        else:
            if uc[t] >= eps:
                uc[t] -= eps
            elif ud[t] + eps <= u_max:
                ud[t] += eps
    return uc, ud, ct
