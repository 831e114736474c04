"""Independent reference implementations used only by the tests."""

import itertools

import numpy as np


def duality_gap(A, y, x, lam, nonneg=True):
    """Primal minus dual objective at the scaled-residual dual point; bounds ``P(x) - P*``."""
    r = y - A @ x
    c = A.T @ r
    m = max(float(c.max() if nonneg else np.abs(c).max()), lam)
    theta = r * (lam / m)
    primal = 0.5 * float(r @ r) + lam * float(np.abs(x).sum())
    dual = 0.5 * float(y @ y) - 0.5 * float(np.sum((y - theta) ** 2))
    return primal - dual


def cd_lasso(A, y, lam, nonneg=True, sweeps=200000, tol=1e-15, gap_tol=0.0):
    """Cyclic coordinate descent for ``0.5||y - Ax||^2 + lam||x||_1``.

    Works on the explicit matrix with closed-form 1-D minimizers, sharing no
    code with the proximal-gradient solver. Full sweeps alternate with sweeps
    over the current support. With ``gap_tol > 0`` it also stops once the
    duality gap certifies the objective to that accuracy.
    """
    A = np.asarray(A, float)
    y = np.asarray(y, float).ravel()
    n = A.shape[1]
    cols = [A[:, j].copy() for j in range(n)]
    col_sq = np.einsum("ij,ij->j", A, A)
    x = np.zeros(n)
    r = y.copy()

    def sweep(idx):
        biggest = 0.0
        for j in idx:
            if col_sq[j] == 0:
                continue
            rho = cols[j] @ r + col_sq[j] * x[j]
            if nonneg:
                new = max(rho - lam, 0.0) / col_sq[j]
            else:
                new = np.sign(rho) * max(abs(rho) - lam, 0.0) / col_sq[j]
            d = new - x[j]
            if d:
                r[:] -= d * cols[j]
                x[j] = new
                biggest = max(biggest, abs(d))
        return biggest

    done = 0
    while done < sweeps:
        if gap_tol and duality_gap(A, y, x, lam, nonneg) < gap_tol:
            break
        done += 1
        if sweep(range(n)) < tol:
            break
        support = np.flatnonzero(x)
        for _ in range(100):
            done += 1
            if sweep(support) < tol:
                break
    return x, 0.5 * float(r @ r) + lam * float(np.abs(x).sum())


def best_assignment_count(pred, truth, tol):
    """Maximum number of one-to-one pairs within ``tol`` (exhaustive search)."""
    pred = np.asarray(pred, float).reshape(-1, 2)
    truth = np.asarray(truth, float).reshape(-1, 2)
    if len(pred) == 0 or len(truth) == 0:
        return 0
    ok = np.hypot(*(pred[:, None, :] - truth[None, :, :]).transpose(2, 0, 1)) <= tol
    small, big, okm = (pred, truth, ok) if len(pred) <= len(truth) else (truth, pred, ok.T)
    best = 0
    for perm in itertools.permutations(range(len(big)), len(small)):
        best = max(best, sum(okm[i, j] for i, j in enumerate(perm)))
    return best


def central_diff(f, x, idx, h):
    """Central finite difference of scalar ``f`` wrt ``x[idx]`` (x is modified in place and restored)."""
    old = x[idx]
    x[idx] = old + h
    fp = f()
    x[idx] = old - h
    fm = f()
    x[idx] = old
    return (fp - fm) / (2 * h)
