import numpy as np
import pytest

from leapts.errors import ConfigError, DataError, NumericError, ShapeError
from leapts.forward import forecast, predict_batch
from leapts.model import LeapTS, ModelConfig

from conftest import toy_config


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(look_back=0, horizon=8, n_variates=1)
    with pytest.raises(ConfigError):
        ModelConfig(look_back=8, horizon=8, n_variates=2, n_clusters=3)
    with pytest.raises(ConfigError):
        ModelConfig(look_back=8, horizon=8, n_variates=1, mask_temp=0.0)
    with pytest.raises(ConfigError):
        ModelConfig(look_back=8, horizon=8, n_variates=1, dt_min=2.0, dt_max=1.0)


def test_encode_shape_contract():
    model = LeapTS(ModelConfig(look_back=96, horizon=60, n_variates=7, hidden_dim=12))
    z = model.encode(np.random.default_rng(0).normal(size=(96, 7)))
    assert z.z0.shape == (7, 12)


def test_encode_rejects_bad_input(toy_model):
    with pytest.raises(ShapeError):
        toy_model.encode(np.zeros((5, 2)))
    bad = np.zeros((24, 2))
    bad[3, 1] = np.nan
    with pytest.raises(NumericError):
        toy_model.encode(bad)


def test_zero_window_gives_equal_rows(toy_model):
    z = toy_model.encode(np.zeros((24, 2)))
    assert np.array_equal(z.z0.data[0], z.z0.data[1])


def test_identical_histories_identical_latents(toy_model, rng):
    col = rng.normal(size=24)
    z = toy_model.encode(np.stack([col, col], axis=1))
    assert np.array_equal(z.z0.data[0], z.z0.data[1])


def test_variate_permutation_permutes_latents(rng):
    model = LeapTS(toy_config(n_variates=4))
    window = rng.normal(size=(24, 4))
    perm = [2, 0, 3, 1]
    z = model.encode(window)
    zp = model.encode(window[:, perm])
    assert np.array_equal(zp.z0.data, z.z0.data[perm])


def test_coarse_zero_latent_zero_forecast(toy_model):
    from leapts.autodiff import Tensor
    from leapts.model import LatentState

    out = toy_model.coarse_forecast(LatentState(z0=Tensor(np.zeros((2, 8)))))
    assert np.array_equal(out.data, np.zeros((8, 2)))


def test_coarse_shape_and_linearity(rng):
    from leapts.autodiff import Tensor
    from leapts.model import LatentState

    model = LeapTS(ModelConfig(look_back=96, horizon=60, n_variates=7, hidden_dim=16))
    z = rng.normal(size=(7, 16))
    one = model.coarse_forecast(LatentState(z0=Tensor(z)))
    two = model.coarse_forecast(LatentState(z0=Tensor(2.0 * z)))
    assert one.shape == (60, 7)
    assert np.allclose(two.data, 2.0 * one.data, atol=1e-12)  # biases init to zero


def test_fuse_identity_and_gate(toy_model, rng):
    from leapts.autodiff import Tensor

    coarse = Tensor(np.array([[1.0, 1.0]]))
    sched = Tensor(np.array([[2.0, 2.0]]))
    assert toy_model.alpha == 0.5  # logit initialized at zero
    fused = toy_model.fuse(coarse, sched)
    assert np.array_equal(fused.data, [[2.0, 2.0]])

    toy_model.store["fuse_logit"].data[:] = -40.0  # gate closed
    fused = toy_model.fuse(coarse, sched)
    assert np.allclose(fused.data, coarse.data, atol=1e-15)
    assert 0.0 < toy_model.alpha < 1.0


def test_fusion_identity_full_forward(rng):
    model = LeapTS(toy_config())
    pair, _ = forecast(model, rng.normal(size=(24, 2)))
    assert np.allclose(pair.fused - pair.coarse, pair.alpha * pair.sched, atol=1e-12)


def test_init_state_zero_and_bounded(toy_model, rng):
    from leapts.autodiff import Tensor
    from leapts.model import LatentState

    h0 = toy_model.init_controller_state(LatentState(z0=Tensor(np.zeros((2, 8)))))
    assert np.array_equal(h0.data, np.zeros((2, 8)))
    h = toy_model.init_controller_state(LatentState(z0=Tensor(rng.normal(size=(2, 8)))))
    assert np.abs(h.data).max() < 1.0
    # float64 tanh saturates to exactly 1 for huge inputs; still bounded
    h = toy_model.init_controller_state(
        LatentState(z0=Tensor(rng.normal(scale=1e6, size=(2, 8))))
    )
    assert np.abs(h.data).max() <= 1.0


def test_forward_outputs_finite_over_random_inputs(rng):
    model = LeapTS(toy_config(seed=11))
    for _ in range(10):
        scale = float(rng.uniform(0.1, 20.0))
        pair, _ = forecast(model, rng.normal(scale=scale, size=(24, 2)))
        assert np.all(np.isfinite(pair.fused))
        assert np.all(np.isfinite(pair.coarse))


def test_window_norm_roundtrip_consistency(rng):
    cfg = toy_config(window_norm=True)
    model = LeapTS(cfg)
    window = 5.0 + 3.0 * rng.normal(size=(24, 2))
    pair, _ = forecast(model, window)
    assert np.all(np.isfinite(pair.fused))
    assert np.allclose(pair.fused - pair.coarse, pair.alpha * pair.sched, atol=1e-9)


def test_checkpoint_roundtrip_bit_exact(tmp_path, rng):
    model = LeapTS(toy_config(seed=9))
    model.cluster_of_variate = np.array([0, 0])
    model.data_norm = (np.array([1.0, 2.0]), np.array([3.0, 4.0]))
    x = rng.normal(size=(3, 24, 2))
    before, _ = predict_batch(model, x)
    path = tmp_path / "model.ckpt"
    model.save(path)
    loaded = LeapTS.load(path)
    after, _ = predict_batch(loaded, x)
    assert np.array_equal(before, after)
    assert loaded.ablation == model.ablation
    assert np.array_equal(loaded.data_norm[1], [3.0, 4.0])


def test_checkpoint_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b'{"magic": "NOPE"}\n')
    with pytest.raises(DataError, match="magic"):
        LeapTS.load(path)
    path.write_bytes(b"\x00\x01binarygarbage\n")
    with pytest.raises(DataError):
        LeapTS.load(path)


def test_ablation_param_counts():
    cfg = toy_config()
    full = LeapTS(cfg).store.n_values()
    no_hl = LeapTS(cfg, ablation="no_high_level").store.n_values()
    no_sched = LeapTS(cfg, ablation="no_sched").store.n_values()
    assert no_sched < no_hl < full


def test_unknown_ablation_rejected():
    with pytest.raises(ConfigError):
        LeapTS(toy_config(), ablation="bogus")
