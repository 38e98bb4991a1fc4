import math

import numpy as np
import pytest

from fstg.errors import DegenerateData, DimensionMismatch, SingleClass
from fstg.nn import numerical_gradient, relative_error, sigmoid
from fstg.shallow import (LRModel, MlpHead, focal_loss, focal_loss_logits, inverse_frequency_alpha, load_mlp,
                          load_pca_lr, logreg_fit, logreg_gradient, logreg_objective, logreg_predict,
                          mlp_backward, mlp_forward, pca_fit, pca_inverse, pca_transform, predict_mlp,
                          save_mlp, save_pca_lr, train_mlp_head, weighted_bce, weighted_bce_logits)
from oracles import central_difference, jacobi_eigh, principal_angles


# -- PCA ---------------------------------------------------------------------

def _line_data(n=30, seed=0):
    rng = np.random.default_rng(seed)
    u = np.array([1.0, 2.0, -2.0]) / 3.0
    t = rng.normal(size=n)
    return np.array([0.5, -1.0, 2.0]) + t[:, None] * u, t, u


def test_pca_line_data():
    X, t, u = _line_data()
    model = pca_fit(X)
    assert model.k == 1
    assert abs(abs(model.components[0] @ u) - 1) < 1e-6
    scores = pca_transform(model, X)[:, 0]
    sign = np.sign(model.components[0] @ u)
    # scores are signed arc-length from the mean along the line
    assert np.allclose(scores, sign * (t - t.mean()), atol=1e-6)
    assert np.allclose(pca_transform(model, model.mean), 0)


def test_pca_isotropic_split():
    X = np.random.default_rng(1).normal(size=(1000, 2))
    model = pca_fit(X, variance_target=0.999)
    assert model.k == 2
    share = model.explained_variance / model.explained_variance.sum()
    assert np.all(np.abs(share - 0.5) < 0.05)
    cov = np.cov(X, rowvar=False)
    assert model.explained_variance.sum() == pytest.approx(np.trace(cov), rel=1e-9)


def test_pca_matches_jacobi_oracle():
    X = np.random.default_rng(2).normal(size=(20, 6))
    model = pca_fit(X, n_components=3)
    vals, vecs = jacobi_eigh(np.cov(X, rowvar=False))
    assert np.allclose(model.explained_variance, vals[:3], rtol=1e-9)
    assert np.max(principal_angles(model.components.T, vecs[:, :3])) < 1e-6


def test_pca_orthonormal_and_reconstruction():
    X = np.random.default_rng(3).normal(size=(20, 6))
    model = pca_fit(X, n_components=6)
    gram = model.components @ model.components.T
    assert np.max(np.abs(gram - np.eye(model.k))) < 1e-8
    assert np.all(np.diff(model.explained_variance) <= 0)
    assert np.max(np.abs(pca_inverse(model, pca_transform(model, X)) - X)) < 1e-6
    assert model.explained_variance.sum() == pytest.approx(model.total_variance, rel=1e-6)


def test_pca_caps_and_errors():
    X = np.random.default_rng(4).normal(size=(4, 10))
    assert pca_fit(X, n_components=50).k == 3
    with pytest.raises(DegenerateData):
        pca_fit(np.ones((5, 3)))
    with pytest.raises(DegenerateData):
        pca_fit(np.ones((1, 3)))
    with pytest.raises(DimensionMismatch):
        pca_transform(pca_fit(X), np.zeros((2, 9)))


# -- logistic regression ---------------------------------------------------------

def test_logreg_gradient_finite_differences():
    rng = np.random.default_rng(5)
    X, y = rng.normal(size=(10, 3)), rng.integers(0, 2, 10).astype(float)
    w, b, lam = rng.normal(size=3), 0.3, 0.2
    gw, gb = logreg_gradient(w, b, X, y, lam)
    num_w = central_difference(lambda v: logreg_objective(v, b, X, y, lam), w, 1e-5)
    num_b = central_difference(lambda v: logreg_objective(w, float(v[0]), X, y, lam), np.array([b]), 1e-5)
    assert relative_error(gw, num_w) < 1e-4
    assert relative_error([gb], num_b) < 1e-4


def test_logreg_separable():
    X = np.array([[-3.0], [-2.0], [-1.0], [1.0], [2.0], [3.0]])
    y = [0, 0, 0, 1, 1, 1]
    model = logreg_fit(X, y, lam=0.1)
    assert np.array_equal(logreg_predict(model, X) >= 0.5, np.array(y, bool))
    assert model.grad_norm < 1e-8


def test_logreg_large_lambda_gives_prior():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(40, 4))
    y = (rng.random(40) < 0.3).astype(int)
    y[:2] = [0, 1]
    model = logreg_fit(X, y, lam=1e6)
    assert np.linalg.norm(model.w) < 1e-3
    assert np.all(np.abs(logreg_predict(model, X) - y.mean()) < 0.01)
    assert model.b == pytest.approx(math.log(y.mean() / (1 - y.mean())), abs=1e-3)


def test_logreg_optimum_beats_perturbations():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(30, 3))
    y = (X[:, 0] + rng.normal(size=30) > 0).astype(int)
    lam = 0.05
    m = logreg_fit(X, y, lam)
    best = logreg_objective(m.w, m.b, X, y, lam)
    for _ in range(100):
        d = rng.normal(size=4)
        d *= 0.1 / np.linalg.norm(d)
        assert logreg_objective(m.w + d[:3], m.b + d[3], X, y, lam) >= best - 1e-12


def test_logreg_weight_norm_monotone_in_lambda():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(30, 3))
    y = (X @ [1.0, -0.5, 0.2] + 0.5 * rng.normal(size=30) > 0).astype(int)
    norms = [np.linalg.norm(logreg_fit(X, y, lam).w) for lam in (1e-3, 1e-2, 0.1, 1.0, 10.0)]
    assert all(a >= b - 1e-9 for a, b in zip(norms, norms[1:]))


def test_logreg_predict_contract():
    m = LRModel(np.zeros(2), 0.0)
    assert logreg_predict(m, np.array([3.0, -1.0])) == 0.5
    m = LRModel(np.array([1.0, -2.0]), 0.0)
    x = np.array([0.4, 0.3])
    assert logreg_predict(m, x) + logreg_predict(m, -x) == pytest.approx(1.0)
    with pytest.raises(DimensionMismatch):
        logreg_predict(m, np.zeros(3))
    with pytest.raises(SingleClass):
        logreg_fit(np.zeros((3, 1)), [1, 1, 1])


# -- losses -----------------------------------------------------------------

def test_focal_reduces_to_half_bce():
    p, y = np.array([0.2, 0.7, 0.9]), np.array([1, 0, 1])
    assert focal_loss(p, y, alpha=0.5, gamma=0) == pytest.approx(0.5 * weighted_bce(p, y), rel=1e-12)


def test_focal_ratio_example():
    ratio = focal_loss([0.9], [1], gamma=2) / focal_loss([0.5], [1], gamma=2)
    assert ratio == pytest.approx((0.01 * math.log(0.9)) / (0.25 * math.log(0.5)), rel=1e-12)
    assert ratio == pytest.approx(0.00608, abs=5e-6)
    assert focal_loss([1 - 1e-12], [1]) < 1e-20


def test_focal_logits_gradient():
    z = np.array([-2.0, -0.3, 0.4, 1.7])
    y = np.array([1, 0, 1, 0])
    loss, grad = focal_loss_logits(z, y, alpha=0.3)
    assert loss == pytest.approx(focal_loss(sigmoid(z), y, alpha=0.3), rel=1e-12)
    num = central_difference(lambda v: focal_loss_logits(v, y, alpha=0.3)[0], z)
    assert np.allclose(grad, num, atol=1e-8)


def test_weighted_bce_examples():
    assert weighted_bce([0.5], [1], w_pos=2) == pytest.approx(2 * math.log(2))
    z = np.array([0.3])
    _, grad = weighted_bce_logits(z, np.array([1]), w_pos=2.5)
    num = central_difference(lambda v: weighted_bce_logits(v, np.array([1]), 2.5)[0], z)
    assert grad[0] == pytest.approx(2.5 * (sigmoid(0.3) - 1))
    assert abs(grad[0] - num[0]) < 1e-6
    with pytest.raises(ValueError):
        weighted_bce([0.5], [1], w_pos=0)


def test_losses_non_negative():
    rng = np.random.default_rng(9)
    p, y = rng.uniform(0.01, 0.99, 50), rng.integers(0, 2, 50)
    assert focal_loss(p, y) >= 0 and weighted_bce(p, y, 3.0) >= 0
    assert inverse_frequency_alpha([1, 0, 0, 0]) == 0.75


# -- MLP head ---------------------------------------------------------------

def test_mlp_zero_output_is_half():
    head = MlpHead(512, 128, zero_output=True)
    x = np.random.default_rng(10).normal(size=(4, 512))
    assert np.all(mlp_forward(head, x) == 0.5)
    assert mlp_forward(head, x[0]) == 0.5
    with pytest.raises(DimensionMismatch):
        mlp_forward(head, np.zeros(100))


def test_mlp_gradient_check():
    rng = np.random.default_rng(11)
    head = MlpHead(8, 4, seed=3)
    x, y = rng.normal(size=(5, 8)), np.array([1, 0, 1, 1, 0])
    _, dz = weighted_bce_logits(head.logits(x), y, 1.5)
    grads = mlp_backward(head, dz)

    def f():
        return weighted_bce_logits(head.logits(x, cache=False), y, 1.5)[0]

    for name, arr in head.parameters().items():
        num = numerical_gradient(f, arr, 1e-6)
        assert relative_error(grads[name], num, floor=1e-8) < 1e-3, name


def test_mlp_overfits_small_set():
    rng = np.random.default_rng(12)
    X = rng.normal(size=(16, 8))
    y = np.array([0, 1] * 8)
    res = train_mlp_head([x[None] for x in X], y, epochs=2000, lr=1e-2, weight_decay=0.0, hidden=16,
                         train_grouper=False)
    assert res.history[-1] < 0.05
    assert np.array_equal(predict_mlp(res, [x[None] for x in X]) >= 0.5, y.astype(bool))


def test_mlp_with_grouper_and_persistence(tmp_path):
    rng = np.random.default_rng(13)
    stacks = [rng.normal(size=(3, 6)) + (i % 2) for i in range(8)]
    y = [i % 2 for i in range(8)]
    res = train_mlp_head(stacks, y, epochs=30, lr=1e-2, hidden=4)
    assert res.grouper is not None and np.any(res.grouper.w != 0)
    path = tmp_path / "m.json"
    save_mlp(path, res)
    back = load_mlp(path)
    assert np.allclose(predict_mlp(back, stacks), predict_mlp(res, stacks), atol=1e-12)
    with pytest.raises(SingleClass):
        train_mlp_head(stacks, [1] * 8)


def test_pca_lr_persistence(tmp_path):
    rng = np.random.default_rng(14)
    X = rng.normal(size=(20, 5))
    y = (X[:, 0] > 0).astype(int)
    pca = pca_fit(X)
    lr = logreg_fit(pca_transform(pca, X), y, lam=0.1)
    path = tmp_path / "m.json"
    save_pca_lr(path, pca, lr, {"seed": 3})
    p2, l2, header = load_pca_lr(path)
    assert header["seed"] == 3 and header["k"] == pca.k
    assert np.allclose(logreg_predict(l2, pca_transform(p2, X)), logreg_predict(lr, pca_transform(pca, X)))
