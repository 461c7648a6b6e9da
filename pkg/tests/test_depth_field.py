import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shadowscan import depth_field as dfm
from shadowscan.depth_field import DepthField, EncodingSpec, encode, normalize_pixels, softplus
from shadowscan.gradcheck import field_param_check, field_point_check


@pytest.fixture(scope="module")
def field():
    return dfm.init(0, (32, 32), depth_center=2.0)


# -- encoding -------------------------------------------------------------------


def test_encoding_zero_octaves_is_identity():
    p = np.array([[0.3, -0.7]])
    out = encode(p, EncodingSpec(0))
    assert out.shape == (1, 2) and np.array_equal(out, p)


def test_encoding_length_26_for_six_octaves():
    assert encode(np.zeros((3, 2)), EncodingSpec(6)).shape == (3, 26)
    assert EncodingSpec(6).out_dim == 26


def test_center_pixel_encodes_to_origin():
    H, W = 33, 17
    p = normalize_pixels([[(W - 1) / 2, (H - 1) / 2]], (H, W))
    assert np.allclose(p, 0.0)
    e = encode(p, EncodingSpec(6))[0]
    sins = np.concatenate([e[2 + 4 * k : 4 + 4 * k] for k in range(6)])
    coss = np.concatenate([e[4 + 4 * k : 6 + 4 * k] for k in range(6)])
    assert np.allclose(sins, 0.0) and np.allclose(coss, 1.0)


def test_normalization_maps_corners_to_unit_box():
    p = normalize_pixels([[0, 0], [63, 31]], (32, 64))
    assert np.allclose(p, [[-1, -1], [1, 1]])


def test_encoding_frequencies_double():
    p = np.array([[0.1, 0.2]])
    e = encode(p, EncodingSpec(3, np.pi))[0]
    for k in range(3):
        f = np.pi * 2**k
        assert np.allclose(e[2 + 4 * k : 4 + 4 * k], np.sin(f * p[0]))
        assert np.allclose(e[4 + 4 * k : 6 + 4 * k], np.cos(f * p[0]))


# -- architecture / eval ----------------------------------------------------------


def test_default_architecture(field):
    assert field.layer_sizes == (26, 128, 128, 128, 128, 128, 1)
    assert field.num_layers == 6
    assert field.omega_first == 30.0


def test_zero_final_layer_gives_constant_transform_of_bias(field):
    f = field.copy()
    f.weights[-1][:] = 0.0
    f.biases[-1][:] = 0.37
    d = f.depth_grid()
    assert np.allclose(d, f.transform(np.array(0.37)), rtol=0, atol=1e-14)
    assert np.ptp(d) == 0.0


def test_raw_zero_maps_to_center():
    f = dfm.init(1, (8, 8), depth_center=3.5, depth_offset=0.2, depth_scale=2.0)
    assert f.transform(np.array(0.0)) == pytest.approx(3.5, abs=1e-12)


def test_eval_deterministic(field):
    u = np.array([3.25, 17.5])
    assert field.eval(u) == field.eval(u)


def test_batch_matches_pointwise(field):
    rng = np.random.default_rng(3)
    pts = rng.uniform(0, 31, size=(10, 2))
    d, _ = field.eval_batch_with_grads(pts)
    assert np.allclose(d, [field.eval(p) for p in pts], rtol=0, atol=1e-13)


def test_eval_is_continuous(field):
    rng = np.random.default_rng(4)
    for u in rng.uniform(0, 31, size=(20, 2)):
        assert abs(field.eval(u) - field.eval(u + 1e-4)) < 1e-2


def test_positivity_under_random_inits():
    rng = np.random.default_rng(5)
    pts = rng.uniform(-5, 40, size=(100_000, 2))
    for seed in range(3):
        f = dfm.init(seed, (32, 32), depth_center=1.0, depth_offset=0.05, depth_scale=50.0)
        d = f(pts)
        assert np.all(np.isfinite(d)) and np.all(d > 0)


def test_transform_validation():
    f = dfm.init(0, (4, 4))
    with pytest.raises(ValueError):
        f.__class__(f.params, f.layer_sizes, f.image_size, depth_offset=1.0, depth_center=0.5)
    with pytest.raises(ValueError):
        f.__class__(f.params[:-1], f.layer_sizes, f.image_size)


# -- init -------------------------------------------------------------------------


def test_same_seed_same_params():
    assert np.array_equal(dfm.init(7, (16, 16)).params, dfm.init(7, (16, 16)).params)
    assert not np.array_equal(dfm.init(7, (16, 16)).params, dfm.init(8, (16, 16)).params)


def test_init_bounds(field):
    n0 = field.layer_sizes[0]
    assert np.abs(field.weights[0]).max() <= 1.0 / n0
    for l in range(1, field.num_layers):
        n = field.layer_sizes[l]
        assert np.abs(field.weights[l]).max() <= np.sqrt(6.0 / n) / field.omega_hidden


def test_hidden_weight_mean_within_three_standard_errors(field):
    w = field.weights[2].ravel()
    assert w.size == 128 * 128
    bound = np.sqrt(6.0 / 128) / 30.0
    se = bound / np.sqrt(3.0) / np.sqrt(w.size)  # std of U(-b, b) is b / sqrt(3)
    assert abs(w.mean()) < 3 * se


def test_hidden_weight_variance_matches_uniform_law(field):
    w = field.weights[3].ravel()
    bound = np.sqrt(6.0 / 128) / 30.0
    assert w.var() == pytest.approx(bound**2 / 3, rel=0.05)


def test_fresh_field_hidden_activations_non_degenerate():
    # Sine layers initialised this way keep unit-scale pre-activations, so the
    # activations neither vanish nor saturate.
    f = dfm.init(0, (32, 32))
    _, tape = f.eval_grid(with_tape=True)
    for a in tape.acts[1:]:
        assert 0.05 < a.std() < 2.0


def test_fresh_field_output_std_matches_linear_head_law():
    # Oracle: the head is linear with weights U(-b, b), b = sqrt(6/128)/omega,
    # over activations of std ~0.7, so the per-pixel output variance across
    # parameter draws is 128 * b**2/3 * E[a**2] plus the bias variance 1/(3 * 128).
    f = dfm.init(0, (32, 32))
    b = np.sqrt(6.0 / 128) / 30.0
    _, tape = f.eval_grid(with_tape=True)
    a2 = (tape.acts[-1] ** 2).mean()
    predicted = np.sqrt(128 * b**2 / 3 * a2 + 1.0 / (3 * 128))
    draws = np.stack([dfm.init(s, (32, 32)).eval_grid(True)[1].raw for s in range(40)])
    across = (draws - draws.mean(axis=0)).std()
    assert across == pytest.approx(predicted, rel=0.1)


@pytest.mark.xfail(strict=True, reason="raw output std of the sine init is ~0.017, below the 0.05 floor; see decisions ledger")
def test_fresh_field_raw_output_std_in_stated_range():
    f = dfm.init(0, (32, 32))
    _, tape = f.eval_grid(with_tape=True)
    assert 0.05 < tape.raw.std() < 2.0


# -- gradients ----------------------------------------------------------------------


def test_zero_upstream_gives_zero_gradient(field):
    _, tape = field.eval_batch_with_grads(np.array([[1.0, 2.0], [5.0, 7.0]]))
    assert np.array_equal(tape.backward(np.zeros(2)), np.zeros(field.params.size))


def test_duplicate_point_gradient_doubles(field):
    # Equal up to BLAS kernel choice (1-row vs 2-row products round differently).
    p = np.array([[4.5, 9.25]])
    _, t1 = field.eval_batch_with_grads(p)
    _, t2 = field.eval_batch_with_grads(np.vstack([p, p]))
    single = t1.backward(np.ones(1))
    assert np.abs(t2.backward(np.ones(2)) - 2.0 * single).max() <= 1e-12 * np.abs(single).max()


def test_gradient_linearity(field):
    rng = np.random.default_rng(9)
    pts = rng.uniform(0, 31, size=(6, 2))
    _, tape = field.eval_batch_with_grads(pts)
    whole = tape.backward(np.ones(6))
    parts = sum(field.eval_batch_with_grads(pts[i : i + 1])[1].backward(np.ones(1)) for i in range(6))
    assert np.abs(whole - parts).max() <= 1e-10 * np.abs(whole).max()


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_single_point_gradient_matches_finite_differences(seed):
    r = field_point_check(seed)
    assert r.max_rel_error < 1e-4, r.line()


def test_per_layer_gradients_match_finite_differences():
    for r in field_param_check(0):
        assert r.max_rel_error < 1e-4, r.line()


def test_input_gradient_matches_finite_differences(field):
    rng = np.random.default_rng(11)
    pts = rng.uniform(1, 30, size=(5, 2))
    up = rng.normal(size=5)
    _, tape = field.eval_batch_with_grads(pts)
    _, g_u = tape.backward(up, input_grad=True)
    h = 1e-6
    for axis in range(2):
        e = np.zeros(2)
        e[axis] = h
        num = (field(pts + e) - field(pts - e)) / (2 * h) * up
        assert np.allclose(g_u[:, axis], num, rtol=1e-4, atol=1e-8)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 3))
def test_gradient_property_random_fields(seed, octaves):
    rng = np.random.default_rng(seed)
    f = dfm.init(seed, (16, 16), hidden=16, encoding=EncodingSpec(octaves), depth_center=2.0)
    pts = rng.uniform(0, 15, size=(3, 2))
    up = rng.normal(size=3)
    _, tape = f.eval_batch_with_grads(pts)
    g = tape.backward(up)
    idx = rng.choice(f.params.size, size=8, replace=False)
    h = 1e-6
    for i in idx:
        p = f.params.copy()
        p[i] += h
        fp = up @ f.with_params(p)(pts)
        p[i] -= 2 * h
        fm = up @ f.with_params(p)(pts)
        num = (fp - fm) / (2 * h)
        assert abs(g[i] - num) <= 1e-3 * max(abs(g[i]), abs(num)) + 1e-8


# -- serialization ---------------------------------------------------------------------


def test_bytes_round_trip(field, tmp_path):
    path = tmp_path / "f.bin"
    field.save(path)
    g = DepthField.load(path)
    assert g.layer_sizes == field.layer_sizes and g.image_size == field.image_size
    assert g.encoding == field.encoding and g.omega_first == field.omega_first
    assert (g.depth_offset, g.depth_scale, g.depth_center) == (field.depth_offset, field.depth_scale, field.depth_center)
    assert np.array_equal(g.params, field.params.astype(np.float32).astype(np.float64))
    # a float32-exact field survives bit-for-bit
    h = DepthField.from_bytes(g.to_bytes())
    assert np.array_equal(h.params, g.params)


def test_header_layout(field):
    blob = field.to_bytes()
    assert blob[:4] == b"SDF1"
    assert len(blob) == 4 + 4 + 4 * 7 + 12 + 48 + 4 * field.params.size


def test_bad_magic_rejected():
    with pytest.raises(ValueError):
        DepthField.from_bytes(b"NOPE" + bytes(64))


def test_softplus_stable_for_large_inputs():
    assert softplus(np.array(1000.0)) == 1000.0
    assert softplus(np.array(-1000.0)) == 0.0


# -- capacity ------------------------------------------------------------------------------


@pytest.mark.slow
def test_plain_regression_fits_a_plane():
    # supervised sanity fit: the oracle is the plane itself
    from shadowscan.optimizer import Adam

    f = dfm.init(0, (64, 64), depth_center=1.0, depth_offset=0.1)
    v, u = np.mgrid[0:64, 0:64]
    pts = np.stack([u.ravel(), v.ravel()], axis=1).astype(float)
    target = 1.0 + 0.001 * pts[:, 0]
    opt = Adam(f.params.size)
    for _ in range(160):
        d, tape = f.eval_batch_with_grads(pts)
        f = f.with_params(opt.update(f.params, tape.backward(2 * (d - target) / len(d)), 1e-3))
    assert np.abs(f(pts) - target).max() < 1e-3
