"""Fixed-step RK4 integrators for Hill-gate regulatory dynamics.

Integrates a batch of independent systems (one per intervention) to steady
state. Fixed points of the vector field are exactly fixed points of the RK4
map, so the step size affects only the path taken, never the limit; callers
pick larger steps on the fitting path. Numba and numpy builds share the same
operation order.
"""

import numpy as np

from ._accel import HAVE_NUMBA, njit


@njit(cache=True, error_model="numpy")
def _deriv_nb(x, slev, b, beta, gamma, regulated, esrc, edst, esign, ekn, en, u, dx):
    d = x.shape[0]
    prod = np.ones(d)
    for e in range(esrc.shape[0]):
        if esrc[e] == 0:
            s = slev
        else:
            s = x[esrc[e] - 1]
        if s < 0.0:
            s = 0.0
        sn = s ** en[e]
        if esign[e] > 0:
            hval = sn / (ekn[e] + sn)
        else:
            hval = ekn[e] / (ekn[e] + sn)
        prod[edst[e]] *= hval
    for i in range(d):
        reg = beta[i] * u[i] * prod[i] if regulated[i] else 0.0
        dx[i] = b[i] + reg - gamma[i] * x[i]


@njit(cache=True, error_model="numpy")
def _steady_batch_nb(b, beta, gamma, regulated, esrc, edst, esign, eK, en,
                     u, slev, x0, h, tol, max_steps):
    M, d = x0.shape
    ekn = np.empty(eK.shape[0])
    for e in range(eK.shape[0]):
        ekn[e] = eK[e] ** en[e]
    out = x0.copy()
    resid = np.empty(M)
    steps = np.zeros(M, dtype=np.int64)
    k1 = np.empty(d)
    k2 = np.empty(d)
    k3 = np.empty(d)
    k4 = np.empty(d)
    xt = np.empty(d)
    for m in range(M):
        x = out[m]
        r = np.inf
        n_steps = 0
        for _ in range(max_steps):
            _deriv_nb(x, slev[m], b, beta, gamma, regulated, esrc, edst, esign, ekn, en, u[m], k1)
            r = 0.0
            ok = True
            for i in range(d):
                a = abs(k1[i])
                if not np.isfinite(a):
                    ok = False
                    break
                if a > r:
                    r = a
            if not ok:
                r = np.inf
                break
            if r < tol:
                break
            for i in range(d):
                xt[i] = x[i] + 0.5 * h * k1[i]
            _deriv_nb(xt, slev[m], b, beta, gamma, regulated, esrc, edst, esign, ekn, en, u[m], k2)
            for i in range(d):
                xt[i] = x[i] + 0.5 * h * k2[i]
            _deriv_nb(xt, slev[m], b, beta, gamma, regulated, esrc, edst, esign, ekn, en, u[m], k3)
            for i in range(d):
                xt[i] = x[i] + h * k3[i]
            _deriv_nb(xt, slev[m], b, beta, gamma, regulated, esrc, edst, esign, ekn, en, u[m], k4)
            bad = False
            for i in range(d):
                x[i] = x[i] + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
                if not np.isfinite(x[i]):
                    bad = True
            n_steps += 1
            if bad:
                r = np.inf
                break
        resid[m] = r
        steps[m] = n_steps
    return out, resid, steps


def _deriv_np(x, slev, b, beta, gamma, regulated, esrc, edst, esign, ekn, en, u):
    M, d = x.shape
    prod = np.ones((M, d))
    xs = np.maximum(x, 0.0)
    for e in range(esrc.shape[0]):
        s = slev if esrc[e] == 0 else xs[:, esrc[e] - 1]
        sn = s ** en[e]
        hval = sn / (ekn[e] + sn) if esign[e] > 0 else ekn[e] / (ekn[e] + sn)
        prod[:, edst[e]] = prod[:, edst[e]] * hval
    reg = beta[None, :] * u * prod * regulated[None, :]
    return b[None, :] + reg - gamma[None, :] * x


def _steady_batch_np(b, beta, gamma, regulated, esrc, edst, esign, eK, en,
                     u, slev, x0, h, tol, max_steps):
    ekn = eK ** en
    reg = regulated.astype(np.float64)
    x = x0.copy()
    M, d = x.shape
    resid = np.full(M, np.inf)
    steps = np.zeros(M, dtype=np.int64)
    active = np.ones(M, dtype=bool)
    with np.errstate(all="ignore"):
        for _ in range(max_steps):
            k1 = _deriv_np(x, slev, b, beta, gamma, reg, esrc, edst, esign, ekn, en, u)
            r = np.max(np.abs(k1), axis=1)
            r = np.where(np.isfinite(r), r, np.inf)
            resid[active] = r[active]
            newly_done = active & ((r < tol) | ~np.isfinite(r))
            active &= ~newly_done
            if not active.any():
                break
            k2 = _deriv_np(x + 0.5 * h * k1, slev, b, beta, gamma, reg, esrc, edst, esign, ekn, en, u)
            k3 = _deriv_np(x + 0.5 * h * k2, slev, b, beta, gamma, reg, esrc, edst, esign, ekn, en, u)
            k4 = _deriv_np(x + h * k3, slev, b, beta, gamma, reg, esrc, edst, esign, ekn, en, u)
            upd = (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            x[active] += upd[active]
            bad = active & ~np.all(np.isfinite(x), axis=1)
            if bad.any():
                resid[bad] = np.inf
                active &= ~bad
            steps[active] += 1
            if not active.any():
                break
        if active.any():
            k1 = _deriv_np(x, slev, b, beta, gamma, reg, esrc, edst, esign, ekn, en, u)
            r = np.max(np.abs(k1), axis=1)
            resid[active] = np.where(np.isfinite(r[active]), r[active], np.inf)
    return x, resid, steps


def steady_batch(b, beta, gamma, regulated, esrc, edst, esign, eK, en,
                 u, slev, x0, h, tol, max_steps):
    """Integrate M systems to steady state; returns (states, residuals, steps)."""
    args = (
        np.ascontiguousarray(b, dtype=np.float64),
        np.ascontiguousarray(beta, dtype=np.float64),
        np.ascontiguousarray(gamma, dtype=np.float64),
        np.ascontiguousarray(regulated, dtype=np.bool_),
        np.ascontiguousarray(esrc, dtype=np.int64),
        np.ascontiguousarray(edst, dtype=np.int64),
        np.ascontiguousarray(esign, dtype=np.int64),
        np.ascontiguousarray(eK, dtype=np.float64),
        np.ascontiguousarray(en, dtype=np.float64),
        np.ascontiguousarray(u, dtype=np.float64),
        np.ascontiguousarray(slev, dtype=np.float64),
        np.ascontiguousarray(x0, dtype=np.float64),
        float(h), float(tol), int(max_steps),
    )
    if HAVE_NUMBA:
        return _steady_batch_nb(*args)
    return _steady_batch_np(*args)
