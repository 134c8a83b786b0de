import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bitdlab.approx import (HEAD_COMBOS, HEADS, PARAMETERIZATIONS, FeatureMap, MultiHeadNet,
                            forward_all, gradient, head_parameter_mask, init_net,
                            physical_heads, sgd_step, zero_net)
from oracles import finite_difference


def test_triangular_anchor_and_midpoint():
    fmap = FeatureMap.triangular(9, (0, 4, 8))
    np.testing.assert_allclose(fmap.encode(4), [0, 1, 0])
    np.testing.assert_allclose(fmap.encode(2), [0.5, 0.5, 0])


def test_default_triangular_rows():
    fmap = FeatureMap.triangular(9)
    assert fmap.anchors == (0, 2, 4, 6, 8) and fmap.dim == 5
    M = fmap.matrix()
    assert np.all(M >= 0)
    np.testing.assert_allclose(M.sum(axis=1), 1.0)
    np.testing.assert_allclose(fmap.encode(3), [0, 0.5, 0.5, 0, 0])


def test_one_hot_rows_are_basis_vectors():
    fmap = FeatureMap.one_hot(4)
    np.testing.assert_array_equal(fmap.matrix(), np.eye(4))
    np.testing.assert_array_equal(fmap.matrix(6)[4:], 0.0)


def test_feature_map_validation():
    with pytest.raises(ValueError):
        FeatureMap.triangular(9, (0, 0, 8))
    with pytest.raises(ValueError):
        FeatureMap("gaussian", 3)
    with pytest.raises(IndexError):
        FeatureMap.one_hot(3).encode(3)


@pytest.mark.parametrize("param", PARAMETERIZATIONS)
def test_head_identities(param):
    net = init_net(5, 4, np.random.default_rng(0), param, scale=1.0, bias_scale=1.0)
    x = np.array([0.1, 0.5, 0.4, 0.0, 0.0])
    f, b, bi = forward_all(net, x)
    assert bi == pytest.approx(f + b)
    a, bb = physical_heads(net, x)
    for value, head in zip((f, b, bi), HEADS):
        ca, cb = HEAD_COMBOS[param][head]
        assert value == pytest.approx(ca * a + cb * bb)


def _fd_check(net, x, head):
    def value(p):
        return forward_all(net.with_params(p), x)[HEADS.index(head)]
    num = finite_difference(value, np.array(net.params))
    ana = gradient(net, x, head).values
    return np.all(np.abs(num - ana) <= np.maximum(1e-5, 1e-4 * np.abs(num)))


def _away_from_kinks(net, x, margin=1e-4):
    if net.torso != "relu":
        return True
    z = net.W1 @ x + net.part("b1")
    return np.all(np.abs(z) > margin)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), param=st.sampled_from(PARAMETERIZATIONS),
       head=st.sampled_from(HEADS), torso=st.sampled_from(["relu", "identity"]))
def test_gradient_matches_finite_differences(seed, param, head, torso):
    rng = np.random.default_rng(seed)
    net = init_net(5, 6, rng, param, torso=torso, scale=1.0, bias_scale=0.5)
    x = rng.uniform(0, 1, size=5)
    if _away_from_kinks(net, x):
        assert _fd_check(net, x, head)


def test_gradient_zero_at_kink():
    net = zero_net(2, 1)
    p = np.array(net.params)
    sl = net.layout.slices()
    p[sl["wA"]] = 3.0
    net = net.with_params(p)
    g = gradient(net, np.array([1.0, 0.0]), "forward").values
    assert np.all(g[sl["W1"]] == 0) and g[sl["b1"]][0] == 0


@pytest.mark.parametrize("param", PARAMETERIZATIONS)
def test_head_masks_follow_parameterization(param):
    net = init_net(3, 2, np.random.default_rng(1), param)
    sl = net.layout.slices()
    for head in HEADS:
        mask = head_parameter_mask(net, head)
        ca, cb = HEAD_COMBOS[param][head]
        assert mask[sl["wA"]].all() == (ca != 0)
        assert mask[sl["wB"]].all() == (cb != 0)
        g = gradient(net, np.array([0.3, 0.2, 0.9]), head).values
        assert np.all(g[~mask] == 0)


def test_identity_torso_layout():
    net = init_net(4, 4, np.random.default_rng(2), torso="identity")
    assert net.layout.size == 8
    x = np.array([1.0, 2.0, 3.0, 4.0])
    a, b = physical_heads(net, x)
    assert a == pytest.approx(net.part("wA") @ x)
    with pytest.raises(ValueError):
        MultiHeadNet(np.zeros(8), 4, 3, torso="identity")


def test_init_ranges_and_zero_biases():
    net = init_net(5, 9, np.random.default_rng(3))
    assert np.abs(net.part("W1")).max() <= 0.5
    assert not net.part("b1").any() and net.part("bA")[0] == 0 and net.part("bB")[0] == 0


def test_sgd_step_returns_new_net():
    net = init_net(3, 2, np.random.default_rng(4))
    g = gradient(net, np.ones(3), "forward")
    new = sgd_step(net, g, 0.1)
    np.testing.assert_allclose(new.params, net.params + 0.1 * g.values)
    assert sgd_step(net, g, 0.0) is net


def test_json_roundtrip():
    net = init_net(5, 9, np.random.default_rng(5), "BiTD_FBi")
    back = MultiHeadNet.from_json(net.to_json())
    np.testing.assert_array_equal(back.params, net.params)
    assert back.parameterization == "BiTD_FBi" and back.hidden == 9


def test_json_rejects_mismatched_header():
    import json
    blob = json.loads(init_net(2, 2, np.random.default_rng(6)).to_json())
    blob["shape"]["size"] = 99
    with pytest.raises(ValueError):
        MultiHeadNet.from_json(json.dumps(blob))


def test_params_are_read_only():
    net = zero_net(2, 2)
    with pytest.raises(ValueError):
        net.params[0] = 1.0
