import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import synthetic
from oracles import naive_quadratic, simplex_grid, sphere_grid
from pillarmkl import mkl, svm
from pillarmkl.errors import AllKernelsInactive, InvalidSpec, KernelMismatch, ShapeMismatch

TWO_K = np.array([[1.0, -1.0], [-1.0, 1.0]])


def test_sk_objective_examples():
    assert mkl.sk_objective(np.zeros(2), [1, -1], TWO_K) == 0.0
    assert mkl.sk_objective([0.5, 0.5], [1, -1], TWO_K) == pytest.approx(-0.5, abs=1e-15)
    with pytest.raises(ShapeMismatch):
        mkl.sk_objective([0.5], [1, -1], TWO_K)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 10))
def test_sk_objective_matches_double_loop(seed, n):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0, 3, n)
    y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    m = rng.standard_normal((n, n))
    k = m @ m.T
    expect = 0.5 * naive_quadratic(a, y, k) - a.sum()
    assert mkl.sk_objective(a, y, k) == pytest.approx(expect, abs=1e-12 * max(1, abs(expect)))


@pytest.fixture(scope="module")
def two_view():
    return synthetic([(0, 1), (2, 3)])


@pytest.mark.parametrize("mode", ["l1", "l2"])
def test_single_kernel(two_view, mode):
    ktr, kte, ytr, _ = two_view
    m = mkl.fit_mkl(ktr[:1], ytr, mode)
    assert m.beta.tolist() == [1.0]
    plain = svm.predict_multiclass(svm.train_one_vs_rest(ktr[0], ytr), kte[0])[0]
    assert np.array_equal(mkl.mkl_predict(m, kte[:1])[0], plain)


def test_identical_kernels_l1(two_view):
    ktr, kte, ytr, _ = two_view
    m = mkl.silp_l1([ktr[0], ktr[0]], ytr)
    assert abs(m.beta.sum() - 1) <= 1e-8
    ref = svm.train_one_vs_rest(ktr[0], ytr)
    a = mkl.mkl_predict(m, [kte[0], kte[0]])
    b = svm.predict_multiclass(ref, kte[0])
    assert np.max(np.abs(a[1] - b[1])) <= 1e-6
    assert np.array_equal(a[0], b[0])


def test_identical_kernels_l2(two_view):
    ktr, kte, ytr, _ = two_view
    m = mkl.l2_mkl([ktr[1], ktr[1]], ytr, svm_tol=1e-8)
    assert np.allclose(m.beta, [0.70711, 0.70711], atol=1e-4)
    # kappa = sqrt(2) K, i.e. the plain SVM on K with its box widened by sqrt(2)
    ref = svm.train_one_vs_rest(ktr[1], ytr, C=100 * np.sqrt(2), tol=1e-8)
    got = mkl.mkl_predict(m, [kte[1], kte[1]])
    assert np.max(np.abs(got[1] - svm.predict_multiclass(ref, kte[1])[1])) <= 1e-5
    assert np.array_equal(got[0], svm.predict_multiclass(ref, kte[1])[0])


def test_identical_kernels_l2_without_bounded_svs():
    ktr, kte, ytr, _ = synthetic([(0, 1), (2, 3)], dims=16, noise=0.3)
    ref = svm.train_one_vs_rest(ktr[0], ytr)
    assert all(np.all(b.alpha < b.C) for b in ref.per_class)
    m = mkl.l2_mkl([ktr[0], ktr[0]], ytr)
    assert np.array_equal(mkl.mkl_predict(m, [kte[0], kte[0]])[0],
                          svm.predict_multiclass(ref, kte[0])[0])


def test_two_view_silp_against_simplex_grid(two_view):
    ktr, kte, ytr, yte = two_view
    m = mkl.silp_l1(ktr, ytr, tol=1e-6)
    assert np.all(m.beta > 0.1)
    fused = np.mean(mkl.mkl_predict(m, kte)[0] == yte)
    for k, kt in zip(ktr, kte):
        single = np.mean(svm.predict_multiclass(svm.train_one_vs_rest(k, ytr), kt)[0] == yte)
        assert fused > single
    grid = [(mkl.fused_objective(ktr, ytr, b, tol=1e-6), b) for b in simplex_grid(2)]
    best, b_best = min(grid, key=lambda t: t[0])
    assert np.all(b_best > 0.1)
    got = mkl.fused_objective(ktr, ytr, m.beta, tol=1e-6)
    # the learnt weights are at least as good as every grid point
    assert got <= best + 1e-3 * abs(best)


@pytest.mark.parametrize("seed", [5, 6])
def test_three_pillar_l2_against_sphere_grid(seed):
    ktr, _, ytr, _ = synthetic([(0,), (1,), (2,)], n_samples=240, n_classes=3, dims=6, seed=seed)
    m = mkl.l2_mkl(ktr, ytr, svm_tol=1e-6)
    got = mkl.fused_objective(ktr, ytr, m.beta, tol=1e-6)
    best = min(mkl.fused_objective(ktr, ytr, b, tol=1e-6) for b in sphere_grid(3))
    assert got <= best * (1 + 1e-6)
    assert abs(got - best) <= 1e-3 * abs(best)


def test_silp_trace_and_constraints(two_view):
    ktr, _, ytr, _ = two_view
    m = mkl.silp_l1(ktr + [0.5 * ktr[0] + 0.5 * ktr[1]], ytr, eps=1e-4)
    assert m.converged
    thetas = [e.theta for e in m.trace]
    assert all(b >= a for a, b in zip(thetas, thetas[1:]))
    assert all(e.gap >= 0 for e in m.trace) and m.trace[-1].gap <= 1e-4
    assert np.all(m.beta >= 0) and abs(m.beta.sum() - 1) <= 1e-8


def test_silp_cut_limit(two_view):
    ktr, _, ytr, _ = two_view
    m = mkl.silp_l1(ktr, ytr, eps=1e-12, max_cuts=2)
    assert not m.converged and len(m.trace) <= 2


def test_l2_constraint_active(two_view):
    ktr, _, ytr, _ = two_view
    m = mkl.l2_mkl(ktr, ytr)
    assert m.converged and np.all(m.beta >= 0)
    assert abs(np.sum(m.beta ** 2) - 1) <= 1e-8
    assert m.trace[-1].gap <= 1e-5


def test_noise_kernel_does_not_hurt(two_view):
    ktr, kte, ytr, yte = two_view
    rng = np.random.default_rng(0)
    noise_tr = np.eye(len(ytr))
    noise_te = np.zeros((len(yte), len(ytr)))
    informative = np.mean(
        svm.predict_multiclass(svm.train_one_vs_rest(ktr[0], ytr), kte[0])[0] == yte)
    a = rng.standard_normal((len(ytr) + len(yte), 3))
    lin = a @ a.T
    for ntr, nte in ((noise_tr, noise_te),
                     (lin[:len(ytr), :len(ytr)] / np.mean(np.diag(lin[:len(ytr), :len(ytr)])),
                      lin[len(ytr):, :len(ytr)] / np.mean(np.diag(lin[:len(ytr), :len(ytr)])))):
        m = mkl.silp_l1([ktr[0], ntr], ytr)
        fused = np.mean(mkl.mkl_predict(m, [kte[0], nte])[0] == yte)
        assert fused >= informative - 0.02


@pytest.mark.parametrize("mode", ["l1", "l2"])
def test_common_scaling_keeps_labels(two_view, mode):
    from pillarmkl.kernels import normalize_kernel
    ktr, kte, ytr, _ = two_view
    base = mkl.mkl_predict(mkl.fit_mkl(ktr, ytr, mode), kte)[0]
    c = 7.3
    scaled, tests = [], []
    for k, kt in zip(ktr, kte):
        v, s = normalize_kernel(c * k)
        scaled.append(v)
        tests.append(c * kt / s)
    assert np.array_equal(mkl.mkl_predict(mkl.fit_mkl(scaled, ytr, mode), tests)[0], base)


def test_beta_one_zero_is_single_kernel(two_view):
    ktr, kte, ytr, _ = two_view
    m = mkl.silp_l1(ktr[:1], ytr)
    m.beta = np.array([1.0, 0.0])
    ref = svm.predict_multiclass(m.fused_svm, kte[0])
    out = mkl.mkl_predict(m, [kte[0], kte[1]])
    assert np.array_equal(out[0], ref[0]) and np.array_equal(out[1], ref[1])
    with pytest.raises(ShapeMismatch):
        mkl.mkl_predict(m, [kte[0]])


def test_errors(two_view):
    ktr, _, ytr, _ = two_view
    with pytest.raises(KernelMismatch):
        mkl.silp_l1([ktr[0], ktr[1][:-1, :-1]], ytr)
    with pytest.raises(KernelMismatch):
        mkl.l2_mkl([], ytr)
    with pytest.raises(AllKernelsInactive):
        mkl.l2_mkl([np.zeros_like(ktr[0])], ytr)
    with pytest.raises(InvalidSpec):
        mkl.fit_mkl(ktr, ytr, "l3")


def test_zero_block_gets_zero_weight(two_view):
    ktr, _, ytr, _ = two_view
    m = mkl.l2_mkl([ktr[0], np.zeros_like(ktr[0])], ytr)
    assert m.beta[1] == 0.0 and m.beta[0] == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("mode", ["l1", "l2"])
def test_plmk_roundtrip(tmp_path, two_view, mode):
    ktr, kte, ytr, _ = two_view
    m = mkl.fit_mkl(ktr, ytr, mode, kernel_ids=["rgb", "flow"])
    p = tmp_path / "m.plmk"
    mkl.save_mkl_model(m, p)
    back = mkl.load_mkl_model(p)
    assert back.beta.tobytes() == m.beta.tobytes() and back.norm_mode == mode
    assert back.kernel_ids == ["rgb", "flow"] and back.converged == m.converged
    assert [(e.iteration, e.theta, e.gap) for e in back.trace] == \
        [(e.iteration, e.theta, e.gap) for e in m.trace]
    assert np.array_equal(mkl.mkl_predict(back, kte)[1], mkl.mkl_predict(m, kte)[1])
    assert mkl.mkl_model_bytes(back) == p.read_bytes()
    lines = mkl.trace_csv(m).splitlines()
    assert lines[0] == "iteration,theta,gap" and len(lines) == len(m.trace) + 1
