import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from argohosp.solver import (DegenerateFold, FitResult, NonFiniteInput, cross_validate_lambda, decay_weights,
                             fit_cv, fit_weighted_lasso, fold_indices, kkt_residual, lambda_grid, lambda_max,
                             lasso_path, objective, predict, sweep_objectives)
from oracles import dense_wls, lasso_objective, soft


def instance(seed, n=56, p=10, sparse=True, noise=0.5):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p)) * rng.uniform(0.1, 10, p) + rng.normal(0, 5, p)
    beta = rng.normal(0, 2, p)
    if sparse:
        beta[rng.random(p) < 0.5] = 0.0
    y = 3.0 + X @ beta + rng.normal(0, noise, n)
    return X, y, decay_weights(n, 0.8)


def test_decay_weights():
    assert np.allclose(decay_weights(3, 0.8), [0.512, 0.64, 0.8], rtol=0, atol=1e-15)
    assert decay_weights(1, 0.3).tolist() == [0.3]
    assert decay_weights(5, 1.0).tolist() == [1.0] * 5
    with pytest.raises(ValueError):
        decay_weights(0)
    with pytest.raises(ValueError):
        decay_weights(3, 1.5)


def test_lambda_max_zeroes_everything():
    X, y, w = instance(0)
    top = lambda_max(X, y, w)
    for lam in (top, 1.5 * top):
        fit = fit_weighted_lasso(X, y, w, lam)
        assert fit.nnz == 0
        assert fit.intercept == pytest.approx((w @ y) / w.sum(), abs=1e-12)
        assert kkt_residual(X, y, w, lam, fit) <= 1e-9
    fit = fit_weighted_lasso(X, y, w, 0.99 * top)
    assert fit.nnz >= 1


def test_lambda_zero_square_system_matches_dense_solve():
    rng = np.random.default_rng(1)
    p = 9
    X = rng.normal(size=(p + 1, p))
    y = rng.normal(size=p + 1)
    w = np.ones(p + 1)
    fit = fit_weighted_lasso(X, y, w, 0.0, tol=1e-12, max_iter=200_000)
    b0, b = dense_wls(X, y, w)
    assert fit.converged
    assert np.max(np.abs(fit.coefficients - b)) < 1e-8
    assert abs(fit.intercept - b0) < 1e-8
    # exact interpolation of a square nonsingular system
    assert predict(fit, X[0]) == pytest.approx(y[0], abs=1e-6)


@pytest.mark.parametrize("lam", [0.0, 0.05, 0.3, 1.0, 5.0])
def test_single_predictor_closed_form(lam):
    rng = np.random.default_rng(2)
    n = 40
    x = rng.normal(size=n)
    x = (x - x.mean()) / x.std()
    y = 0.7 * x + rng.normal(0, 0.5, n)
    fit = fit_weighted_lasso(x[:, None], y, np.ones(n), lam, tol=1e-12)
    expected = soft(x @ y / n, lam / 2) / (x @ x / n)
    assert abs(fit.coefficients[0] - expected) < 1e-10


def test_kkt_definition_and_perturbation():
    X, y, w = instance(3, p=12)
    lam = 0.05 * lambda_max(X, y, w)
    fit = fit_weighted_lasso(X, y, w, lam / 1.0, tol=1e-9)
    assert fit.converged
    # tolerance is relative to the target's scale
    base = kkt_residual(X, y, w, lam, fit)
    assert base <= 10 * 1e-9 * np.std(y) * 10
    j = int(np.argmax(np.abs(fit.coefficients)))
    coef = fit.coefficients.copy()
    coef[j] += 0.1
    bumped = FitResult(fit.intercept, coef, fit.lam, fit.n_iter, fit.converged)
    assert kkt_residual(X, y, w, lam, bumped) > base
    assert objective(X, y, w, lam, bumped) > objective(X, y, w, lam, fit)


def test_objective_matches_oracle():
    X, y, w = instance(4)
    lam = 0.1 * lambda_max(X, y, w)
    fit = fit_weighted_lasso(X, y, w, lam)
    assert objective(X, y, w, lam, fit) == pytest.approx(
        lasso_objective(X, y, w, lam, fit.intercept, fit.coefficients), rel=1e-12)


def test_fit_minimizes_against_local_perturbations():
    X, y, w = instance(5)
    lam = 0.02 * lambda_max(X, y, w)
    fit = fit_weighted_lasso(X, y, w, lam, tol=1e-10)
    f0 = lasso_objective(X, y, w, lam, fit.intercept, fit.coefficients)
    rng = np.random.default_rng(0)
    for _ in range(50):
        d = rng.normal(0, 1e-4, X.shape[1])
        assert lasso_objective(X, y, w, lam, fit.intercept, fit.coefficients + d) >= f0 - 1e-12


def test_zero_variance_column_pinned():
    X, y, w = instance(6)
    X[:, 3] = 7.0
    fit = fit_weighted_lasso(X, y, w, 0.01)
    assert fit.coefficients[3] == 0.0
    assert np.isfinite(fit.intercept)


def test_non_finite_rejected():
    X, y, w = instance(7)
    X[0, 0] = np.nan
    with pytest.raises(NonFiniteInput):
        fit_weighted_lasso(X, y, w, 0.1)
    with pytest.raises(ValueError):
        fit_weighted_lasso(X[:, :3], y[:-1], w, 0.1)
    with pytest.raises(ValueError):
        fit_weighted_lasso(instance(7)[0], y, w, -1.0)


def test_not_converged_is_reported_not_raised():
    X, y, w = instance(8, p=30)
    fit = fit_weighted_lasso(X, y, w, 1e-6, max_iter=1)
    assert not fit.converged and fit.n_iter == 1


def test_predict():
    fit = FitResult(2.5, np.array([1.0, -2.0]), 0.1, 3, True)
    assert predict(fit, np.zeros(2)) == 2.5
    assert predict(fit, np.array([1.0, 1.0])) == 1.5
    zero = FitResult(4.0, np.zeros(3), 1.0, 1, True)
    assert predict(zero, np.array([9.0, -3.0, 2.0])) == 4.0
    assert predict(fit, np.ones((3, 2))).tolist() == [1.5] * 3
    with pytest.raises(ValueError):
        predict(fit, np.ones(3))


def test_to_json_labels_and_groups():
    from argohosp.design import FeatureGroup, Group

    fit = FitResult(1.0, np.array([0.5, 0.0, -1.0]), 0.2, 7, True, ((1.0, 3.0), (0.2, 2.0)))
    out = json.loads(fit.to_json(["a", "b", "c"]))
    assert out["coefficients"] == {"a": 0.5, "b": 0.0, "c": -1.0}
    groups = (FeatureGroup(Group.AUTO_LAG, ("a", "b")), FeatureGroup(Group.WEEKDAY, ("c",)))
    out = json.loads(fit.to_json(groups=groups))
    assert out["coefficients"] == {"auto_lag": {"a": 0.5, "b": 0.0}, "weekday": {"c": -1.0}}
    assert out["lambda"] == 0.2 and out["converged"] is True and out["cv_curve"] == [[1.0, 3.0], [0.2, 2.0]]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000), st.sampled_from([10, 30]), st.floats(1e-3, 0.9))
def test_kkt_certificate_on_converged_fits(seed, p, frac):
    X, y, w = instance(seed, p=p)
    y = y / np.std(y)
    lam = frac * lambda_max(X, y, w)
    fit = fit_weighted_lasso(X, y, w, lam, tol=1e-7)
    if fit.converged:
        assert kkt_residual(X, y, w, lam, fit) <= 10 * 1e-7


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000), st.sampled_from([10, 30]), st.floats(1e-4, 0.9))
def test_objective_non_increasing_per_sweep(seed, p, frac):
    X, y, w = instance(seed, p=p)
    lam = frac * lambda_max(X, y, w)
    fit = fit_weighted_lasso(X, y, w, lam, track=True)
    obj = sweep_objectives(X, y, w, lam, fit)
    assert len(obj) == fit.n_iter + 1
    assert np.all(np.diff(obj) <= 1e-12 * (1 + np.abs(obj[:-1])))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000), st.floats(0.01, 100).filter(lambda c: abs(c) > 0.01), st.booleans(),
       st.integers(0, 9))
def test_scaling_equivariance(seed, c, neg, j):
    X, y, w = instance(seed)
    c = -c if neg else c
    lam = 0.05 * lambda_max(X, y, w)
    a = fit_weighted_lasso(X, y, w, lam, tol=1e-12, max_iter=100_000)
    Xs = X.copy()
    Xs[:, j] *= c
    b = fit_weighted_lasso(Xs, y, w, lam, tol=1e-12, max_iter=100_000)
    assert np.max(np.abs(predict(a, X) - predict(b, Xs))) < 1e-8 * (1 + np.max(np.abs(y)))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 100_000), st.sampled_from([10, 30]))
def test_warm_start_path_equivalence(seed, p):
    X, y, w = instance(seed, p=p)
    grid = lambda_grid(X, y, w, 20)
    warm = lasso_path(X, y, w, grid, tol=1e-9, warm_start=True)
    cold = lasso_path(X, y, w, grid, tol=1e-9, warm_start=False)
    for lam, a, b in zip(grid, warm, cold):
        assert abs(objective(X, y, w, lam, a) - objective(X, y, w, lam, b)) < 1e-6


@pytest.mark.parametrize("seed", [0, 1, 2, 4, 6])
def test_nested_sparsity_along_path(seed):
    X, y, w = instance(seed, p=30)
    grid = lambda_grid(X, y, w, 30)
    nnz = [f.nnz for f in lasso_path(X, y, w, grid, tol=1e-9)]
    for big, small in zip(nnz, nnz[1:]):
        assert big <= small + 1


@pytest.mark.parametrize("seed", [3, 5])
def test_path_support_drops_are_genuine(seed):
    # these seeds lose two predictors between neighbouring penalties; both fits carry a KKT certificate
    X, y, w = instance(seed, p=30)
    grid = lambda_grid(X, y, w, 30)
    path = lasso_path(X, y, w, grid, tol=1e-9)
    drops = [k for k in range(len(path) - 1) if path[k].nnz > path[k + 1].nnz + 1]
    assert drops
    for k in drops:
        for lam, f in ((grid[k], path[k]), (grid[k + 1], path[k + 1])):
            assert kkt_residual(X, y, w, lam, f) <= 1e-6 * np.std(y)


def test_orthogonal_design_path_is_monotone():
    rng = np.random.default_rng(0)
    Q, _ = np.linalg.qr(rng.normal(size=(56, 12)) - 0.0)
    X = Q - Q.mean(axis=0)
    y = X @ rng.normal(0, 3, 12) + rng.normal(0, 0.1, 56)
    w = np.ones(56)
    grid = lambda_grid(X, y, w, 40)
    nnz = [f.nnz for f in lasso_path(X, y, w, grid, tol=1e-10)]
    assert nnz == sorted(nnz)


def test_fold_indices():
    folds = fold_indices(56, 10)
    assert [len(f) for f in folds] == [6] * 6 + [5] * 4
    assert np.array_equal(np.concatenate(folds), np.arange(56))
    rnd = fold_indices(56, 10, "random", seed=3)
    assert sorted(np.concatenate(rnd).tolist()) == list(range(56))
    assert [f.tolist() for f in rnd] == [f.tolist() for f in fold_indices(56, 10, "random", seed=3)]
    with pytest.raises(DegenerateFold):
        fold_indices(15, 10)
    with pytest.raises(ValueError):
        fold_indices(20, 2, "weird")


def test_cv_single_grid_value():
    X, y, w = instance(9)
    lam, curve = cross_validate_lambda(X, y, w, [0.3])
    assert lam == 0.3 and len(curve) == 1


def test_cv_grid_must_descend():
    X, y, w = instance(9)
    with pytest.raises(ValueError):
        cross_validate_lambda(X, y, w, [0.1, 0.3])


def test_cv_ties_go_to_larger_lambda():
    X, y, w = instance(10)
    top = lambda_max(X, y, w)
    # far above every fold's own lambda_max, so all three fits are the null model
    lam, curve = cross_validate_lambda(X, y, w, [30 * top, 20 * top, 10 * top])
    assert lam == 30 * top
    assert curve[0][1] == curve[1][1] == curve[2][1]


def support_instance(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(56, 20))
    beta = np.zeros(20)
    beta[[2, 7, 13]] = [3.0, -2.0, 1.5]
    return X, X @ beta + rng.normal(0, 0.1, 56), np.ones(56)


def test_cv_recovers_true_support_fixed_seed():
    X, y, w = support_instance(11)
    grid = lambda_grid(X, y, w)
    exact = {float(lam) for lam, f in zip(grid, lasso_path(X, y, w, grid, tol=1e-10))
             if set(np.flatnonzero(f.coefficients)) == {2, 7, 13}}
    fit = fit_cv(X, y, w, seed=11)
    assert fit.lam in exact
    assert set(np.flatnonzero(fit.coefficients)) == {2, 7, 13}


@pytest.mark.parametrize("seed", range(10))
def test_cv_support_screening(seed):
    # the CV-optimal penalty keeps every true predictor; spurious ones stay tiny
    X, y, w = support_instance(seed)
    fit = fit_cv(X, y, w, seed=seed)
    nz = set(np.flatnonzero(fit.coefficients))
    assert {2, 7, 13} <= nz
    assert all(abs(fit.coefficients[j]) < 0.1 for j in nz - {2, 7, 13})


def test_cv_deterministic():
    X, y, w = instance(12, p=30)
    grid = lambda_grid(X, y, w)
    for mode in ("blocked", "random"):
        a = cross_validate_lambda(X, y, w, grid, seed=5, mode=mode)
        b = cross_validate_lambda(X, y, w, grid, seed=5, mode=mode)
        assert a == b


def test_fit_cv_refit_matches_direct_fit():
    X, y, w = instance(13)
    fit = fit_cv(X, y, w)
    direct = fit_weighted_lasso(X, y, w, fit.lam)
    assert len(fit.cv_curve) == 50
    assert np.allclose(predict(fit, X), predict(direct, X), atol=1e-5 * np.std(y))
    fixed = fit_cv(X, y, w, lam=fit.lam)
    assert fixed.cv_curve == () and fixed.lam == fit.lam
