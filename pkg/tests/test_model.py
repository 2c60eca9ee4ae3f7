import numpy as np
import pytest

from conceptgate import rng
from conceptgate.errors import DimensionError, ParameterError
from conceptgate.hierarchy import build_general, build_shared
from conceptgate.model import (
    MODES,
    PARAM_NAMES,
    backward,
    compute_loss,
    forward_high,
    forward_low,
    forward_training,
    init_params,
    link_indicators,
)


def _unit_rows(gen, *shape):
    v = gen.normal(size=shape)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _instance(seed, n=4, k=3, h=2, arity=2, p=4, c=2, shared=False):
    """A tiny random problem with non-trivial parameters and fixed noise."""
    gen = np.random.default_rng(seed)
    l_all = h * arity
    if shared:
        # every concept also borrows its neighbour's first attribute
        mapping = {
            i: list(range(i * arity, (i + 1) * arity)) + [((i + 1) % h) * arity]
            for i in range(h)
        }
        hier = build_shared([f"c{i}" for i in range(h)],
                            [f"a{j}" for j in range(l_all)], mapping)
    else:
        hier = build_general([f"c{i}" for i in range(h)],
                             [[f"c{i}/a{j}" for j in range(arity)] for i in range(h)])
    images = _unit_rows(gen, n, k)
    patches = _unit_rows(gen, n, p, k)
    s_h = _unit_rows(gen, n, h) * 0.8
    s_l = _unit_rows(gen, n * p, l_all).reshape(n, p, l_all) * 0.8
    labels = gen.integers(0, c, size=n)
    params = init_params(k, h, l_all, c, seed)
    # nonzero amortization so sampler and KL paths carry real gradients
    params.w_hs = gen.normal(size=(k, h)) * 0.7
    params.w_ls = gen.normal(size=(k, l_all)) * 0.7
    u_h = gen.uniform(0.02, 0.98, size=(n, h))
    u_l = gen.uniform(0.02, 0.98, size=(n, p, l_all))
    return hier, images, patches, s_h, s_l, labels, params, u_h, u_l


def _total_loss(params, hier, images, patches, s_h, s_l, labels, u_h, u_l,
                mode, temp=1.0, beta=0.05):
    trace = forward_training(params, images, patches, s_h, s_l, hier,
                             temp, u_h, u_l, mode)
    return compute_loss(trace, labels, 0.1, 0.2, beta).total


def test_init_params_shapes_and_ranges():
    params = init_params(embed_dim=7, n_high=3, n_low=6, n_classes=4, seed=0)
    assert params.w_hc.shape == (3, 4)
    assert params.w_lc.shape == (6, 4)
    assert params.w_hs.shape == (7, 3)
    assert params.w_ls.shape == (7, 6)
    assert np.all(params.w_hs == 0.0)
    assert np.all(params.w_ls == 0.0)
    assert np.abs(params.w_hc).max() <= 1 / np.sqrt(3)
    assert np.abs(params.w_lc).max() <= 1 / np.sqrt(6)


def test_init_params_seed_determinism():
    a = init_params(5, 2, 4, 3, seed=9)
    b = init_params(5, 2, 4, 3, seed=9)
    c = init_params(5, 2, 4, 3, seed=10)
    assert np.array_equal(a.w_hc, b.w_hc)
    assert not np.array_equal(a.w_hc, c.w_hc)


def test_forward_high_formula_and_shape_check():
    gen = np.random.default_rng(1)
    s = gen.normal(size=(3, 2))
    z = gen.integers(0, 2, size=(3, 2)).astype(float)
    w = gen.normal(size=(2, 4))
    assert np.allclose(forward_high(s, z, w), (z * s) @ w)
    with pytest.raises(DimensionError):
        forward_high(s, z[:, :1], w)


def test_link_single_owner_reduces_to_product():
    hier = build_general(["c0", "c1"], [["c0/a", "c0/b"], ["c1/a", "c1/b"]])
    z_h = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    z_l = np.ones((3, 1, 4))
    out = link_indicators(z_h, z_l, hier)
    assert np.array_equal(out[:, 0, :], [[1, 1, 0, 0], [0, 0, 1, 1], [1, 1, 1, 1]])


def test_link_shared_owner_is_clamped_or_not_a_sum():
    # attribute 0 belongs to both concepts: two active owners still gate to 1
    hier = build_shared(["c0", "c1"], ["a0", "a1"], {0: [0], 1: [0, 1]})
    z_h = np.array([[1.0, 1.0]])
    z_l = np.ones((1, 1, 2))
    out = link_indicators(z_h, z_l, hier)
    assert np.array_equal(out, [[[1.0, 1.0]]])
    # fractional memberships accumulate below the clamp
    z_h = np.array([[0.25, 0.5]])
    out = link_indicators(z_h, z_l, hier)
    assert np.allclose(out, [[[0.75, 0.5]]])


def test_link_dimension_errors():
    hier = build_general(["c0"], [["a", "b"]])
    with pytest.raises(DimensionError):
        link_indicators(np.ones((2, 3)), np.ones((2, 1, 2)), hier)
    with pytest.raises(DimensionError):
        link_indicators(np.ones((2, 1)), np.ones((2, 1, 5)), hier)


def test_forward_low_max_and_first_tie():
    s = np.zeros((1, 3, 2))
    s[0, 0] = [1.0, 0.0]
    s[0, 1] = [1.0, 0.0]  # duplicate of patch 0: tie
    s[0, 2] = [0.0, 1.0]
    z = np.ones_like(s)
    w = np.array([[1.0, 0.0], [0.0, 2.0]])
    logits, arg = forward_low(s, z, w)
    assert np.allclose(logits, [[1.0, 2.0]])
    assert arg[0, 0] == 0  # ties break to the first patch
    assert arg[0, 1] == 2


def test_forward_low_rejects_bad_shapes():
    with pytest.raises(DimensionError):
        forward_low(np.ones((2, 2, 3)), np.ones((2, 2, 2)), np.ones((3, 2)))
    with pytest.raises(DimensionError):
        forward_low(np.ones((2, 3)), np.ones((2, 3)), np.ones((3, 2)))


def test_forward_training_mode_field_population():
    hier, images, patches, s_h, s_l, labels, params, u_h, u_l = _instance(0)

    tr = forward_training(params, images, patches, s_h, s_l, hier, 0.5,
                          u_h, u_l, "joint")
    for name in ("q_h", "q_l", "z_h", "z_l", "gate", "raw_gate", "z_combined",
                 "logits_high", "logits_low", "argmax_patch"):
        assert getattr(tr, name) is not None, name
    assert np.allclose(tr.z_combined, tr.gate[:, None, :] * tr.z_l)

    tr = forward_training(params, images, patches, s_h, s_l, hier, 0.5,
                          u_h, u_l, "high-only")
    assert tr.q_l is None and tr.logits_low is None
    assert tr.logits_high is not None

    tr = forward_training(params, images, patches, s_h, s_l, hier, 0.5,
                          u_h, u_l, "low-only")
    assert tr.q_h is None and tr.logits_high is None
    assert tr.gate is None
    assert tr.z_combined is tr.z_l  # ungated

    tr = forward_training(params, images, patches, s_h, s_l, hier, 0.5,
                          u_h, u_l, "no-discovery")
    assert tr.q_h is None and tr.q_l is None
    assert np.all(tr.z_h == 1.0)
    assert np.all(tr.z_combined == 1.0)

    with pytest.raises(ParameterError, match="mode"):
        forward_training(params, images, patches, s_h, s_l, hier, 0.5,
                         u_h, u_l, "both")


def test_compute_loss_omits_absent_terms():
    hier, images, patches, s_h, s_l, labels, params, u_h, u_l = _instance(1)
    tr = forward_training(params, images, patches, s_h, s_l, hier, 0.5,
                          u_h, u_l, "high-only")
    loss = compute_loss(tr, labels, 0.1, 0.2, 0.05)
    assert loss.ce_low == 0.0 and loss.kl_low == 0.0
    assert loss.total == pytest.approx(loss.ce_high + 0.05 * loss.kl_high)

    tr = forward_training(params, images, patches, s_h, s_l, hier, 0.5,
                          u_h, u_l, "no-discovery")
    loss = compute_loss(tr, labels, 0.1, 0.2, 0.05)
    assert loss.kl_high == 0.0 and loss.kl_low == 0.0
    assert loss.total == pytest.approx(loss.ce_high + loss.ce_low)


def test_backward_zeroes_untrained_matrices():
    hier, images, patches, s_h, s_l, labels, params, u_h, u_l = _instance(2)
    tr = forward_training(params, images, patches, s_h, s_l, hier, 0.5,
                          u_h, u_l, "high-only")
    g = backward(tr, labels, params, hier, 0.1, 0.2, 0.05)
    assert np.all(g.w_lc == 0.0) and np.all(g.w_ls == 0.0)
    assert np.any(g.w_hc != 0.0) and np.any(g.w_hs != 0.0)

    tr = forward_training(params, images, patches, s_h, s_l, hier, 0.5,
                          u_h, u_l, "low-only")
    g = backward(tr, labels, params, hier, 0.1, 0.2, 0.05)
    assert np.all(g.w_hc == 0.0) and np.all(g.w_hs == 0.0)


def _check_gradients(seed, mode, shared):
    hier, images, patches, s_h, s_l, labels, params, u_h, u_l = \
        _instance(seed, shared=shared)
    trace = forward_training(params, images, patches, s_h, s_l, hier, 1.0,
                             u_h, u_l, mode)
    grads = backward(trace, labels, params, hier, 0.1, 0.2, 0.05)
    step = 1e-6
    for name in PARAM_NAMES:
        analytic = getattr(grads, name)
        base = getattr(params, name)
        fd = np.zeros_like(base)
        it = np.nditer(base, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            probe = params.copy()
            getattr(probe, name)[idx] = base[idx] + step
            up = _total_loss(probe, hier, images, patches, s_h, s_l, labels,
                             u_h, u_l, mode)
            getattr(probe, name)[idx] = base[idx] - step
            down = _total_loss(probe, hier, images, patches, s_h, s_l, labels,
                               u_h, u_l, mode)
            fd[idx] = (up - down) / (2 * step)
            it.iternext()
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), 1e-8)
        rel = np.abs(analytic - fd) / denom
        ok = (rel < 1e-4) | (np.abs(analytic - fd) <= 1e-8)
        assert ok.all(), f"{name} ({mode}) worst rel {rel.max():.2e}"


@pytest.mark.parametrize("mode", MODES)
def test_backward_matches_finite_differences(mode):
    _check_gradients(seed=3, mode=mode, shared=False)


def test_backward_shared_hierarchy_clamp_path():
    """Overlapping owners push raw gates past 1; the clamp must block them."""
    _check_gradients(seed=4, mode="joint", shared=True)
