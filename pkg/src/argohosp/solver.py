"""Exponentially weighted L1-penalized least squares by cyclic coordinate descent.

The problem solved is

    min_{mu, b}  sum_t wbar_t (y_t - mu - xs_t . b)^2 + lam * ||b||_1

where ``wbar = w / sum(w)`` and ``xs`` are the penalized columns standardized
to weighted mean 0 and weighted variance 1 under ``wbar``. The intercept is
never penalized. Coefficients are reported on the original column scale.
With this scaling the smallest penalty that zeroes every coefficient is
``lam_max = 2 * max_j |sum_t wbar_t xs_tj (y_t - ybar)|``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numba
import numpy as np

log = logging.getLogger(__name__)

# relative sd below which a column is treated as constant
ZERO_VAR = 1e-10


class NonFiniteInput(ValueError):
    pass


class DegenerateFold(ValueError):
    pass


def decay_weights(n: int, omega: float = 0.8) -> np.ndarray:
    """Oldest-to-newest weights ``(omega**n, ..., omega**2, omega)``."""
    if n < 1:
        raise ValueError("n must be positive")
    if not 0 < omega <= 1:
        raise ValueError("omega must lie in (0, 1]")
    return omega ** np.arange(n, 0, -1, dtype=float)


@dataclass(frozen=True)
class Standardized:
    xs: np.ndarray
    yc: np.ndarray
    wbar: np.ndarray
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float
    active: np.ndarray


def standardize(X, y, w) -> Standardized:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    if X.ndim != 2 or y.shape != (X.shape[0],) or w.shape != y.shape:
        raise ValueError(f"shape mismatch: X {X.shape}, y {y.shape}, w {w.shape}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y)) and np.all(np.isfinite(w))):
        raise NonFiniteInput("X, y and w must be finite")
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    wbar = w / w.sum()
    x_mean = wbar @ X
    xc = X - x_mean
    sd = np.sqrt(wbar @ (xc * xc))
    active = sd > ZERO_VAR * (1.0 + np.abs(x_mean))
    scale = np.where(active, sd, 1.0)
    xs = np.where(active, xc / scale, 0.0)
    y_mean = float(wbar @ y)
    return Standardized(np.ascontiguousarray(xs), y - y_mean, wbar, x_mean, scale, y_mean, active)


@numba.njit(cache=True)
def _sweep(gram, grad, beta, half_lam, idx):
    """One cyclic pass over the coordinates in ``idx``; returns the largest update.

    ``grad`` holds ``X'W(y - X beta)`` and is kept current after every update.
    """
    p = gram.shape[0]
    maxd = 0.0
    for j in idx:
        gjj = gram[j, j]
        z = grad[j] + gjj * beta[j]
        if z > half_lam:
            nb = (z - half_lam) / gjj
        elif z < -half_lam:
            nb = (z + half_lam) / gjj
        else:
            nb = 0.0
        d = nb - beta[j]
        if d != 0.0:
            for k in range(p):
                grad[k] -= d * gram[k, j]
            beta[j] = nb
            if abs(d) > maxd:
                maxd = abs(d)
    return maxd


@numba.njit(cache=True)
def _kkt(grad, beta, lam, idx):
    worst = 0.0
    for j in idx:
        g = 2.0 * grad[j]
        if beta[j] > 0.0:
            v = abs(g - lam)
        elif beta[j] < 0.0:
            v = abs(g + lam)
        else:
            v = max(0.0, abs(g) - lam)
        if v > worst:
            worst = v
    return worst


@numba.njit(cache=True)
def _solve(gram, corr, beta, lam, tol, kkt_tol, max_iter, all_idx, hist):
    """Coordinate descent with active-set inner loops.

    Full sweeps alternate with sweeps over the nonzero coordinates only. The
    fit is accepted after a full sweep whose largest update is below ``tol``
    and whose KKT residual (gradient recomputed from scratch) is at most
    ``kkt_tol``. ``beta`` is updated in place; ``hist`` (if it has rows)
    receives ``beta`` after every sweep. Returns (sweeps, converged).
    """
    half = 0.5 * lam
    track = hist.shape[0] > 0
    grad = corr - gram @ beta
    sweeps = 0
    while sweeps < max_iter:
        maxd = _sweep(gram, grad, beta, half, all_idx)
        if track:
            hist[sweeps, :] = beta
        sweeps += 1
        if maxd < tol:
            grad = corr - gram @ beta
            if _kkt(grad, beta, lam, all_idx) <= kkt_tol:
                return sweeps, True
        nz = np.flatnonzero(beta != 0.0)
        if nz.size == 0:
            continue
        while sweeps < max_iter:
            maxd = _sweep(gram, grad, beta, half, nz)
            if track:
                hist[sweeps, :] = beta
            sweeps += 1
            if maxd < tol:
                break
    return sweeps, False


@dataclass(frozen=True)
class FitResult:
    intercept: float
    coefficients: np.ndarray = field(repr=False)
    lam: float
    n_iter: int
    converged: bool
    cv_curve: tuple = ()
    std_coefficients: np.ndarray = field(default=None, repr=False)
    history: np.ndarray | None = field(default=None, repr=False)

    @property
    def nnz(self) -> int:
        return int(np.count_nonzero(self.coefficients))

    def to_json(self, labels=None, groups=None) -> str:
        """JSON audit record; ``groups`` is a sequence of FeatureGroup."""
        coef = [float(c) for c in self.coefficients]
        out = {
            "lambda": float(self.lam),
            "intercept": float(self.intercept),
            "n_iter": int(self.n_iter),
            "converged": bool(self.converged),
            "cv_curve": [[float(a), float(b)] for a, b in self.cv_curve],
        }
        if groups is not None:
            it = iter(coef)
            out["coefficients"] = {
                g.name.value: {lab: next(it) for lab in g.column_labels} for g in groups
            }
        elif labels is not None:
            out["coefficients"] = dict(zip(labels, coef))
        else:
            out["coefficients"] = coef
        return json.dumps(out, indent=2)


def _result(st: Standardized, beta, lam, sweeps, converged, cv_curve=(), history=None) -> FitResult:
    coef = np.where(st.active, beta / st.x_scale, 0.0)
    intercept = st.y_mean - float(coef @ st.x_mean)
    return FitResult(intercept, coef, float(lam), int(sweeps), bool(converged), tuple(cv_curve),
                     beta.copy(), history)


def _moments(st: Standardized):
    xw = st.xs * st.wbar[:, None]
    gram = np.ascontiguousarray(xw.T @ st.xs)
    corr = xw.T @ st.yc
    inactive = ~st.active
    gram[inactive, :] = 0.0
    gram[:, inactive] = 0.0
    gram[inactive, inactive] = 1.0
    corr[inactive] = 0.0
    return gram, corr


def _polish(gram, corr, beta, lam, idx, kkt_tol, max_steps=None):
    """Finish a fit with sign-feasible active-set steps.

    Starting from the current coefficients, repeatedly minimize the penalized
    quadratic on the current support and sign pattern. A coefficient that
    would change sign is stopped at zero and dropped; the worst KKT violator
    outside the support is added. Every step lowers the objective. Returns
    the KKT-certified coefficients, or None if the steps run out or a
    support system is singular. Used to finish fits on ill-conditioned
    designs, where cyclic updates crawl along directions of tiny curvature.
    """
    half = 0.5 * lam
    cur = beta.copy()
    active = set(np.flatnonzero(cur != 0.0).tolist())
    signs = {j: np.sign(cur[j]) for j in active}
    for _ in range(max_steps or 2 * len(idx) + 10):
        grad = corr - gram @ cur
        if not active:
            viol = np.abs(2.0 * grad[idx]) - lam
            k = int(np.argmax(viol))
            if viol[k] <= kkt_tol:
                return cur
            j = int(idx[k])
            active.add(j)
            signs[j] = np.sign(grad[j])
            continue
        A = np.array(sorted(active))
        sgn = np.array([signs[j] for j in A])
        try:
            b = np.linalg.solve(gram[np.ix_(A, A)], corr[A] - half * sgn)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(b)):
            return None
        flips = np.sign(b) != sgn
        if np.any(flips):
            old = cur[A]
            with np.errstate(divide="ignore", invalid="ignore"):
                ts = np.where(flips, old / (old - b), np.inf)
            k = int(np.argmin(ts))
            t = float(np.clip(ts[k], 0.0, 1.0))
            cur[A] = old + t * (b - old)
            cur[A[k]] = 0.0
            active.discard(int(A[k]))
            signs.pop(int(A[k]), None)
            continue
        cur[:] = 0.0
        cur[A] = b
        grad = corr - gram @ cur
        out = np.setdiff1d(idx, A)
        if out.size:
            viol = np.abs(2.0 * grad[out]) - lam
            k = int(np.argmax(viol))
            if viol[k] > kkt_tol:
                j = int(out[k])
                active.add(j)
                signs[j] = np.sign(grad[j])
                continue
        if _kkt(grad, cur, lam, idx) <= kkt_tol:
            return cur
        return None
    return None


def _penalized(gram, corr, beta, lam):
    # objective up to the constant sum(wbar * yc**2)
    return float(beta @ gram @ beta - 2.0 * corr @ beta + lam * np.abs(beta).sum())


POLISH_EVERY = 10


def _solve_std(st: Standardized, lam, beta0, tol, max_iter, track, moments=None):
    gram, corr = moments if moments is not None else _moments(st)
    beta = np.zeros(st.xs.shape[1]) if beta0 is None else np.array(beta0, dtype=float)
    beta[~st.active] = 0.0
    idx = np.flatnonzero(st.active)
    kkt_tol = 10.0 * float(tol)
    hist = np.empty((max_iter if track else 0, st.xs.shape[1]))
    sweeps, ok = 0, False
    while sweeps < max_iter and not ok:
        budget = min(POLISH_EVERY, max_iter - sweeps)
        n, ok = _solve(gram, corr, beta, float(lam), float(tol), kkt_tol, budget, idx,
                       hist[sweeps:sweeps + budget])
        sweeps += n
        if ok or sweeps >= max_iter:
            break
        cand = _polish(gram, corr, beta, float(lam), idx, kkt_tol)
        if cand is not None and _penalized(gram, corr, cand, lam) <= _penalized(gram, corr, beta, lam):
            beta[:] = cand
            if track:
                hist[sweeps] = beta
            sweeps += 1
            ok = True
    if not ok:
        log.warning("coordinate descent did not converge at lambda=%g after %d sweeps", lam, sweeps)
    return beta, sweeps, ok, (hist[:sweeps] if track else None)


def fit_weighted_lasso(X, y, w, lam: float, tol: float = 1e-7, max_iter: int = 10000,
                       beta0=None, track: bool = False) -> FitResult:
    """Solve the weighted lasso at one penalty.

    ``beta0`` warm-starts on the standardized scale (``FitResult.std_coefficients``).
    With ``track=True`` the standardized coefficients after every sweep are
    kept in ``FitResult.history``.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    st = standardize(X, y, w)
    beta, sweeps, ok, hist = _solve_std(st, lam, beta0, tol, max_iter, track)
    return _result(st, beta, lam, sweeps, ok, history=hist)


def lambda_max(X, y, w) -> float:
    st = standardize(X, y, w)
    return float(2.0 * np.max(np.abs((st.wbar * st.yc) @ st.xs), initial=0.0))


def lambda_grid(X, y, w, size: int = 50, ratio: float = 1e-4) -> np.ndarray:
    """``size`` log-spaced penalties from ``lam_max`` down to ``ratio * lam_max``."""
    top = lambda_max(X, y, w)
    if top <= 0:
        return np.zeros(1)
    return np.geomspace(top, ratio * top, size)


def lasso_path(X, y, w, grid, tol: float = 1e-7, max_iter: int = 10000,
               warm_start: bool = True) -> list[FitResult]:
    st = standardize(X, y, w)
    moments = _moments(st)
    out, beta = [], None
    for lam in grid:
        beta, sweeps, ok, _ = _solve_std(st, lam, beta if warm_start else None, tol, max_iter, False,
                                         moments)
        out.append(_result(st, beta, lam, sweeps, ok))
    return out


def objective(X, y, w, lam: float, fit: FitResult) -> float:
    """Penalized loss on the solver's internal (normalized, standardized) scale."""
    st = standardize(X, y, w)
    r = np.asarray(y, float) - predict(fit, X)
    beta = np.where(st.active, fit.coefficients * st.x_scale, 0.0)
    return float(st.wbar @ (r * r) + lam * np.abs(beta).sum())


def sweep_objectives(X, y, w, lam: float, fit: FitResult) -> np.ndarray:
    """Objective value before the first sweep and after every tracked sweep."""
    if fit.history is None:
        raise ValueError("fit was not run with track=True")
    st = standardize(X, y, w)
    betas = np.vstack([np.zeros(st.xs.shape[1]), fit.history])
    r = st.yc[None, :] - betas @ st.xs.T
    return (r * r) @ st.wbar + lam * np.abs(betas).sum(axis=1)


def kkt_residual(X, y, w, lam: float, fit: FitResult) -> float:
    """Largest violation of the lasso subgradient conditions on the internal scale."""
    X = np.asarray(X, dtype=float)
    if fit.coefficients.shape != (X.shape[1],):
        raise ValueError(f"fit has {fit.coefficients.shape[0]} coefficients, X has {X.shape[1]} columns")
    st = standardize(X, y, w)
    beta = np.where(st.active, fit.coefficients * st.x_scale, 0.0)
    r = np.asarray(y, float) - predict(fit, X)
    g = 2.0 * (st.wbar * r) @ st.xs
    viol = np.where(beta > 0, np.abs(g - lam),
                    np.where(beta < 0, np.abs(g + lam), np.maximum(0.0, np.abs(g) - lam)))
    return float(np.max(viol[st.active], initial=0.0))


def predict(fit: FitResult, row) -> np.ndarray | float:
    row = np.asarray(row, dtype=float)
    if row.shape[-1] != fit.coefficients.shape[0]:
        raise ValueError(f"row has {row.shape[-1]} features, fit has {fit.coefficients.shape[0]}")
    out = fit.intercept + row @ fit.coefficients
    return float(out) if row.ndim == 1 else out


def fold_indices(n: int, folds: int, mode: str = "blocked", seed: int = 0) -> list[np.ndarray]:
    if folds < 2:
        raise ValueError("need at least 2 folds")
    order = np.arange(n)
    if mode == "random":
        order = np.random.default_rng(seed).permutation(n)
    elif mode != "blocked":
        raise ValueError(f"unknown cv mode {mode!r}")
    parts = np.array_split(order, folds)
    if min(len(p) for p in parts) < 2:
        raise DegenerateFold(f"{n} rows cannot fill {folds} folds of at least 2 rows")
    return [np.sort(p) for p in parts]


def cross_validate_lambda(X, y, w, grid, folds: int = 10, seed: int = 0, mode: str = "blocked",
                          tol: float = 1e-7, max_iter: int = 10000):
    """Pick the penalty with the lowest out-of-fold weighted squared error.

    The grid must be sorted in descending order; each fold solves it with
    warm starts. The error is ``sum_t w_t (y_t - yhat_t)^2 / sum_t w_t`` over
    all held-out rows. Ties go to the larger penalty.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("empty penalty grid")
    if np.any(np.diff(grid) > 0):
        raise ValueError("penalty grid must be sorted in descending order")
    sse = np.zeros(grid.size)
    for held in fold_indices(len(y), folds, mode, seed):
        train = np.setdiff1d(np.arange(len(y)), held)
        path = lasso_path(X[train], y[train], w[train], grid, tol, max_iter)
        for k, fit in enumerate(path):
            res = y[held] - predict(fit, X[held])
            sse[k] += w[held] @ (res * res)
    err = sse / w.sum()
    best = int(np.argmin(err))
    return float(grid[best]), tuple(zip(grid.tolist(), err.tolist()))


def fit_cv(X, y, w, grid_size: int = 50, folds: int = 10, seed: int = 0, mode: str = "blocked",
           tol: float = 1e-7, max_iter: int = 10000, lam: float | None = None) -> FitResult:
    """Choose the penalty by cross-validation (unless ``lam`` is given) and refit on all rows."""
    curve = ()
    if lam is None:
        grid = lambda_grid(X, y, w, grid_size)
        lam, curve = cross_validate_lambda(X, y, w, grid, folds, seed, mode, tol, max_iter)
        path = lasso_path(X, y, w, grid[grid >= lam], tol, max_iter)
        fit = path[-1]
    else:
        fit = fit_weighted_lasso(X, y, w, lam, tol, max_iter)
    return FitResult(fit.intercept, fit.coefficients, fit.lam, fit.n_iter, fit.converged, curve,
                     fit.std_coefficients)
