"""Stack-machine programs ("tapes") compiled from hypothesis ASTs.

A tape is a flat ``(n_instr, 2)`` int32 array of ``(opcode, argument)`` pairs
executed bottom-up over a batch of input rows. Domain violations (log of a
non-positive value, division by zero, 0 to a negative power, overflow) follow
IEEE semantics and surface as nan/inf values, never as exceptions: callers
count non-finite outputs instead of catching errors.

Two interchangeable executors exist: a numba ``@njit`` build and a vectorized
numpy build, selected in ``_accel``. The damped-least-squares constant fitter
lives here too because its inner loop is residual/Jacobian evaluation on the
same tapes.
"""

import numpy as np

from ._accel import HAVE_NUMBA, njit

OP_VAR = 0
OP_LIT = 1
OP_CONST = 2
OP_NEG = 3
OP_ADD = 4
OP_SUB = 5
OP_MUL = 6
OP_DIV = 7
OP_POW = 8
OP_EXP = 9
OP_LOG = 10
OP_LOG10 = 11
OP_SQRT = 12
OP_SIN = 13
OP_COS = 14
OP_TANH = 15
OP_ABS = 16

FUNC_OPS = {
    "exp": OP_EXP,
    "log": OP_LOG,
    "log10": OP_LOG10,
    "sqrt": OP_SQRT,
    "sin": OP_SIN,
    "cos": OP_COS,
    "tanh": OP_TANH,
    "abs": OP_ABS,
}

_LM_PENALTY = 1.0e6  # objective charge per non-finite residual component


@njit(cache=True, error_model="numpy")
def _tape_eval_nb(prog, lits, theta, X, stack):
    n = X.shape[0]
    sp = 0
    for k in range(prog.shape[0]):
        op = prog[k, 0]
        arg = prog[k, 1]
        if op == OP_VAR:
            for i in range(n):
                stack[sp, i] = X[i, arg]
            sp += 1
        elif op == OP_LIT:
            v = lits[arg]
            for i in range(n):
                stack[sp, i] = v
            sp += 1
        elif op == OP_CONST:
            v = theta[arg]
            for i in range(n):
                stack[sp, i] = v
            sp += 1
        elif op == OP_NEG:
            for i in range(n):
                stack[sp - 1, i] = -stack[sp - 1, i]
        elif op == OP_ADD:
            for i in range(n):
                stack[sp - 2, i] = stack[sp - 2, i] + stack[sp - 1, i]
            sp -= 1
        elif op == OP_SUB:
            for i in range(n):
                stack[sp - 2, i] = stack[sp - 2, i] - stack[sp - 1, i]
            sp -= 1
        elif op == OP_MUL:
            for i in range(n):
                stack[sp - 2, i] = stack[sp - 2, i] * stack[sp - 1, i]
            sp -= 1
        elif op == OP_DIV:
            for i in range(n):
                stack[sp - 2, i] = stack[sp - 2, i] / stack[sp - 1, i]
            sp -= 1
        elif op == OP_POW:
            for i in range(n):
                stack[sp - 2, i] = stack[sp - 2, i] ** stack[sp - 1, i]
            sp -= 1
        elif op == OP_EXP:
            for i in range(n):
                stack[sp - 1, i] = np.exp(stack[sp - 1, i])
        elif op == OP_LOG:
            for i in range(n):
                stack[sp - 1, i] = np.log(stack[sp - 1, i])
        elif op == OP_LOG10:
            for i in range(n):
                stack[sp - 1, i] = np.log10(stack[sp - 1, i])
        elif op == OP_SQRT:
            for i in range(n):
                stack[sp - 1, i] = np.sqrt(stack[sp - 1, i])
        elif op == OP_SIN:
            for i in range(n):
                stack[sp - 1, i] = np.sin(stack[sp - 1, i])
        elif op == OP_COS:
            for i in range(n):
                stack[sp - 1, i] = np.cos(stack[sp - 1, i])
        elif op == OP_TANH:
            for i in range(n):
                stack[sp - 1, i] = np.tanh(stack[sp - 1, i])
        elif op == OP_ABS:
            for i in range(n):
                stack[sp - 1, i] = abs(stack[sp - 1, i])
    return stack[0]


def _tape_eval_np(prog, lits, theta, X):
    n = X.shape[0]
    stack = []
    with np.errstate(all="ignore"):
        for op, arg in prog:
            if op == OP_VAR:
                stack.append(X[:, arg].copy())
            elif op == OP_LIT:
                stack.append(np.full(n, lits[arg]))
            elif op == OP_CONST:
                stack.append(np.full(n, theta[arg]))
            elif op == OP_NEG:
                stack[-1] = -stack[-1]
            elif op == OP_ADD:
                b = stack.pop()
                stack[-1] = stack[-1] + b
            elif op == OP_SUB:
                b = stack.pop()
                stack[-1] = stack[-1] - b
            elif op == OP_MUL:
                b = stack.pop()
                stack[-1] = stack[-1] * b
            elif op == OP_DIV:
                b = stack.pop()
                stack[-1] = stack[-1] / b
            elif op == OP_POW:
                b = stack.pop()
                stack[-1] = np.power(stack[-1], b)
            elif op == OP_EXP:
                stack[-1] = np.exp(stack[-1])
            elif op == OP_LOG:
                stack[-1] = np.log(stack[-1])
            elif op == OP_LOG10:
                stack[-1] = np.log10(stack[-1])
            elif op == OP_SQRT:
                stack[-1] = np.sqrt(stack[-1])
            elif op == OP_SIN:
                stack[-1] = np.sin(stack[-1])
            elif op == OP_COS:
                stack[-1] = np.cos(stack[-1])
            elif op == OP_TANH:
                stack[-1] = np.tanh(stack[-1])
            elif op == OP_ABS:
                stack[-1] = np.abs(stack[-1])
    return stack[0]


def tape_eval(prog, lits, theta, X, stack_depth):
    """Evaluate a tape over row-matrix ``X``; returns one value per row."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    if HAVE_NUMBA:
        stack = np.empty((stack_depth, X.shape[0]), dtype=np.float64)
        return _tape_eval_nb(prog, lits, theta, X, stack).copy()
    return _tape_eval_np(prog, lits, theta, X)


# --- damped least squares over a tape ----------------------------------------
#
# Objective: sum over finite components of (log1p(yhat) - log1p(y))^2, plus a
# fixed penalty per non-finite component so steps that create domain
# violations are rejected. Damping follows a fixed schedule: start 1e-3,
# x10 on rejected steps, /10 on accepted ones.


@njit(cache=True, error_model="numpy")
def _residuals_nb(prog, lits, theta, X, ylog, stack, out):
    yhat = _tape_eval_nb(prog, lits, theta, X, stack)
    n = X.shape[0]
    loss = 0.0
    bad = 0
    for i in range(n):
        v = yhat[i]
        if np.isfinite(v) and v > -1.0:
            r = np.log1p(v) - ylog[i]
            if np.isfinite(r):
                out[i] = r
                loss += r * r
                continue
        out[i] = np.nan
        bad += 1
    return loss + _LM_PENALTY * bad, bad


@njit(cache=True, error_model="numpy")
def _solve_damped_nb(A, g, delta):
    # Gaussian elimination with partial pivoting; returns False on a
    # numerically dead pivot so the caller can treat the step as rejected.
    p = A.shape[0]
    M = np.empty((p, p + 1))
    for i in range(p):
        for j in range(p):
            M[i, j] = A[i, j]
        M[i, p] = -g[i]
    for c in range(p):
        piv = c
        best = abs(M[c, c])
        for r in range(c + 1, p):
            if abs(M[r, c]) > best:
                best = abs(M[r, c])
                piv = r
        if best < 1e-300 or not np.isfinite(best):
            return False
        if piv != c:
            for j in range(p + 1):
                tmp = M[c, j]
                M[c, j] = M[piv, j]
                M[piv, j] = tmp
        invp = 1.0 / M[c, c]
        for r in range(c + 1, p):
            f = M[r, c] * invp
            if f != 0.0:
                for j in range(c, p + 1):
                    M[r, j] -= f * M[c, j]
    for i in range(p - 1, -1, -1):
        acc = M[i, p]
        for j in range(i + 1, p):
            acc -= M[i, j] * delta[j]
        delta[i] = acc / M[i, i]
        if not np.isfinite(delta[i]):
            return False
    return True


@njit(cache=True, error_model="numpy")
def _lm_fit_nb(prog, lits, X, ylog, theta0s, max_iter, stack_depth):
    n = X.shape[0]
    n_starts, p = theta0s.shape
    stack = np.empty((stack_depth, n), dtype=np.float64)
    r = np.empty(n)
    rp = np.empty(n)
    rm = np.empty(n)
    J = np.empty((n, p))
    A = np.empty((p, p))
    g = np.empty(p)
    delta = np.empty(p)
    trial = np.empty(p)

    best_theta = theta0s[0].copy()
    best_loss = np.inf
    best_bad = n
    best_idx = -1
    n_evals = 0
    best_converged = False

    for s in range(n_starts):
        theta = theta0s[s].copy()
        loss, bad = _residuals_nb(prog, lits, theta, X, ylog, stack, r)
        n_evals += 1
        lam = 1e-3
        converged = False
        if np.isfinite(loss):
            for _ in range(max_iter):
                if p == 0:
                    converged = True
                    break
                # central-difference Jacobian of the residual vector
                for j in range(p):
                    h = 1e-6 * max(1.0, abs(theta[j]))
                    tj = theta[j]
                    theta[j] = tj + h
                    _residuals_nb(prog, lits, theta, X, ylog, stack, rp)
                    theta[j] = tj - h
                    _residuals_nb(prog, lits, theta, X, ylog, stack, rm)
                    theta[j] = tj
                    n_evals += 2
                    inv2h = 0.5 / h
                    for i in range(n):
                        d = (rp[i] - rm[i]) * inv2h
                        if np.isfinite(d):
                            J[i, j] = d
                        else:
                            J[i, j] = 0.0
                gmax = 0.0
                for a in range(p):
                    acc = 0.0
                    for i in range(n):
                        if np.isfinite(r[i]):
                            acc += J[i, a] * r[i]
                    g[a] = acc
                    if abs(acc) > gmax:
                        gmax = abs(acc)
                    for bcol in range(a, p):
                        acc2 = 0.0
                        for i in range(n):
                            if np.isfinite(r[i]):
                                acc2 += J[i, a] * J[i, bcol]
                        A[a, bcol] = acc2
                        A[bcol, a] = acc2
                if gmax < 1e-12:
                    converged = True
                    break
                stepped = False
                while lam < 1e12:
                    # Marquardt scaling with an absolute floor on the diagonal
                    Ad = A.copy()
                    for a in range(p):
                        Ad[a, a] = A[a, a] + lam * max(A[a, a], 1e-12)
                    ok = _solve_damped_nb(Ad, g, delta)
                    if ok:
                        for a in range(p):
                            trial[a] = theta[a] + delta[a]
                        new_loss, new_bad = _residuals_nb(prog, lits, trial, X, ylog, stack, rp)
                        n_evals += 1
                        if np.isfinite(new_loss) and new_loss < loss:
                            rel = (loss - new_loss) / (loss + 1e-300)
                            for a in range(p):
                                theta[a] = trial[a]
                            for i in range(n):
                                r[i] = rp[i]
                            loss = new_loss
                            bad = new_bad
                            lam = max(lam * 0.1, 1e-12)
                            stepped = True
                            if rel < 1e-12 or loss < 1e-20:
                                converged = True
                            break
                    lam *= 10.0
                if not stepped:
                    break
                if converged:
                    break
        if np.isfinite(loss) and loss < best_loss:
            best_loss = loss
            best_bad = bad
            best_idx = s
            best_converged = converged
            for a in range(p):
                best_theta[a] = theta[a]
        if best_loss < 1e-18 and best_bad == 0:
            break
    return best_theta, best_loss, best_bad, best_idx, n_evals, best_converged


def _residuals_np(prog, lits, theta, X, ylog):
    yhat = _tape_eval_np(prog, lits, theta, X)
    with np.errstate(all="ignore"):
        r = np.where(yhat > -1.0, np.log1p(np.maximum(yhat, -1.0 + 1e-300)), np.nan) - ylog
    r = np.where(np.isfinite(r), r, np.nan)
    bad = int(np.isnan(r).sum())
    loss = float(np.nansum(r * r)) + _LM_PENALTY * bad
    return r, loss, bad


def _lm_fit_np(prog, lits, X, ylog, theta0s, max_iter, stack_depth):
    n = X.shape[0]
    n_starts, p = theta0s.shape
    best = (theta0s[0].copy(), np.inf, n, -1, 0, False)
    n_evals = 0
    for s in range(n_starts):
        theta = theta0s[s].copy()
        r, loss, bad = _residuals_np(prog, lits, theta, X, ylog)
        n_evals += 1
        lam = 1e-3
        converged = False
        if np.isfinite(loss):
            for _ in range(max_iter):
                if p == 0:
                    converged = True
                    break
                J = np.zeros((n, p))
                for j in range(p):
                    h = 1e-6 * max(1.0, abs(theta[j]))
                    up = theta.copy()
                    up[j] += h
                    dn = theta.copy()
                    dn[j] -= h
                    rp, _, _ = _residuals_np(prog, lits, up, X, ylog)
                    rm, _, _ = _residuals_np(prog, lits, dn, X, ylog)
                    n_evals += 2
                    col = (rp - rm) / (2 * h)
                    J[:, j] = np.where(np.isfinite(col), col, 0.0)
                rf = np.where(np.isfinite(r), r, 0.0)
                g = J.T @ rf
                if np.max(np.abs(g)) < 1e-12:
                    converged = True
                    break
                A = J.T @ J
                stepped = False
                while lam < 1e12:
                    Ad = A + np.diag(lam * np.maximum(np.diag(A), 1e-12))
                    try:
                        delta = np.linalg.solve(Ad, -g)
                    except np.linalg.LinAlgError:
                        lam *= 10.0
                        continue
                    if not np.all(np.isfinite(delta)):
                        lam *= 10.0
                        continue
                    trial = theta + delta
                    r_new, new_loss, new_bad = _residuals_np(prog, lits, trial, X, ylog)
                    n_evals += 1
                    if np.isfinite(new_loss) and new_loss < loss:
                        rel = (loss - new_loss) / (loss + 1e-300)
                        theta, r, loss, bad = trial, r_new, new_loss, new_bad
                        lam = max(lam * 0.1, 1e-12)
                        stepped = True
                        if rel < 1e-12 or loss < 1e-20:
                            converged = True
                        break
                    lam *= 10.0
                if not stepped:
                    break
                if converged:
                    break
        if np.isfinite(loss) and loss < best[1]:
            best = (theta.copy(), loss, bad, s, 0, converged)
        if best[1] < 1e-18 and best[2] == 0:
            break
    return best[0], best[1], best[2], best[3], n_evals, best[5]


def lm_fit(prog, lits, X, y, theta0s, max_iter, stack_depth):
    """Multi-start damped least squares on log1p residuals.

    Returns (theta, loss, n_nonfinite, start_index, n_evals, converged) for
    the best start; ties keep the earliest start.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    ylog = np.log1p(np.asarray(y, dtype=np.float64))
    theta0s = np.ascontiguousarray(theta0s, dtype=np.float64)
    if theta0s.ndim != 2:
        raise ValueError("theta0s must be (n_starts, n_params)")
    if HAVE_NUMBA:
        out = _lm_fit_nb(prog, lits, X, ylog, theta0s, max_iter, stack_depth)
        return out[0].copy(), float(out[1]), int(out[2]), int(out[3]), int(out[4]), bool(out[5])
    out = _lm_fit_np(prog, lits, X, ylog, theta0s, max_iter, stack_depth)
    return out[0], float(out[1]), int(out[2]), int(out[3]), int(out[4]), bool(out[5])


def residual_jacobian(prog, lits, theta, X, y, stack_depth):
    """Central-difference Jacobian of the log1p residual vector (test hook)."""
    theta = np.asarray(theta, dtype=np.float64)
    ylog = np.log1p(np.asarray(y, dtype=np.float64))
    p = theta.size
    n = X.shape[0]
    J = np.zeros((n, p))
    for j in range(p):
        h = 1e-6 * max(1.0, abs(theta[j]))
        up = theta.copy()
        up[j] += h
        dn = theta.copy()
        dn[j] -= h
        rp = np.log1p(tape_eval(prog, lits, up, X, stack_depth)) - ylog
        rm = np.log1p(tape_eval(prog, lits, dn, X, stack_depth)) - ylog
        J[:, j] = (rp - rm) / (2 * h)
    return J
