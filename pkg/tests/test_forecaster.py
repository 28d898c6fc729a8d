"""End-to-end model: forward rollout, loss, bounds, checkpoints."""

import dataclasses

import numpy as np
import pytest

from koopcast.encoder import EncoderConfig, encode
from koopcast.forecaster import (
    CheckpointError,
    ForecastModel,
    ModelConfig,
    certified_output_bound,
    forward,
    init_model,
    load_checkpoint,
    save_checkpoint,
    training_loss,
)
from koopcast.koopman import StableKoopmanOperator, materialize
from koopcast.linalg import spectral_norm


def _tiny_cfg(variant="patch", horizon=3, **kw):
    enc = EncoderConfig(
        variant=variant, d_model=4, n_layers=1, n_heads=2, ffn_width=8, patch_len=4
    )
    return ModelConfig(
        encoder=enc, context_len=8, horizon=horizon, n_channels=2, **kw
    )


def _koop_from(model):
    return StableKoopmanOperator(
        model.params["koop.u_raw"],
        model.params["koop.v_raw"],
        model.params["koop.sigma_raw"],
        model.cfg.rho_max,
        model.cfg.tie_factors,
    )


# -- config / init ------------------------------------------------------------


def test_model_config_validation():
    with pytest.raises(ValueError):
        _tiny_cfg(rho_max=1.5)
    with pytest.raises(ValueError):
        ModelConfig(encoder=EncoderConfig(patch_len=5), context_len=8)


def test_trend_head_defaults():
    assert not _tiny_cfg("patch").trend_head_enabled
    assert _tiny_cfg("decomp").trend_head_enabled
    assert not _tiny_cfg("decomp", use_trend_head=False).trend_head_enabled
    assert _tiny_cfg("patch", use_trend_head=True).trend_head_enabled


def test_init_model_shapes():
    model = init_model(_tiny_cfg("decomp"), seed=0)
    p = model.params
    assert p["koop.u_raw"].shape == (4, 4)
    assert p["koop.sigma_raw"].shape == (4,)
    assert np.array_equal(p["koop.sigma_raw"], np.zeros(4))
    assert p["decoder_w"].shape == (2, 4)
    assert p["trend_w"].shape == (16, 6)  # (P*d, H*d)
    assert "trend_w" not in init_model(_tiny_cfg("patch"), seed=0).params


def test_init_model_deterministic():
    a = init_model(_tiny_cfg(), seed=5)
    b = init_model(_tiny_cfg(), seed=5)
    for k in a.params:
        assert np.array_equal(a.params[k], b.params[k])


# -- forward ------------------------------------------------------------------


def test_forward_zero_decoder_gives_zero_output():
    model = init_model(_tiny_cfg(), seed=0)
    model.params["decoder_w"] = np.zeros_like(model.params["decoder_w"])
    out = forward(model, np.random.default_rng(0).standard_normal((8, 2)))
    assert np.array_equal(out.y_hat, np.zeros((3, 2)))


def test_forward_single_step_composition():
    cfg = _tiny_cfg(horizon=1)
    model = init_model(cfg, seed=1)
    x = np.random.default_rng(1).standard_normal((8, 2))
    out = forward(model, x)
    assert out.y_hat.shape == (1, 2)
    z_t = encode(x, cfg.encoder, model.params).z.data
    k, _ = materialize(_koop_from(model))
    want = model.params["decoder_w"] @ (k @ z_t)
    assert np.allclose(out.y_hat[0], want, atol=1e-12)


def test_forward_matches_matrix_chain_oracle():
    cfg = _tiny_cfg(horizon=3)
    model = init_model(cfg, seed=2)
    x = np.random.default_rng(2).standard_normal((8, 2))
    out = forward(model, x)
    z = encode(x, cfg.encoder, model.params).z.data
    k, _ = materialize(_koop_from(model))
    w = model.params["decoder_w"]
    for h in range(3):
        want = w @ (np.linalg.matrix_power(k, h + 1) @ z)
        assert np.allclose(out.y_hat[h], want, atol=1e-12)
    assert len(out.latent_trajectory) == 4
    assert np.allclose(out.latent_trajectory[0], z, atol=1e-14)


def test_forward_trend_head_contribution():
    cfg = _tiny_cfg("decomp", horizon=2)
    model = init_model(cfg, seed=3)
    x = np.random.default_rng(3).standard_normal((8, 2))
    with_trend = forward(model, x).y_hat
    no_trend_model = ForecastModel(
        cfg=dataclasses.replace(cfg, use_trend_head=False),
        params={k: v for k, v in model.params.items() if k != "trend_w"},
        seed=3,
    )
    base = forward(no_trend_model, x).y_hat
    trend = encode(x, cfg.encoder, model.params).trend
    extra = (trend.reshape(-1) @ model.params["trend_w"]).reshape(2, 2)
    assert np.allclose(with_trend, base + extra, atol=1e-12)


def test_forward_batched_matches_single():
    cfg = _tiny_cfg("decomp")
    model = init_model(cfg, seed=4)
    xb = np.random.default_rng(4).standard_normal((5, 8, 2))
    batched = forward(model, xb)
    for b in range(5):
        single = forward(model, xb[b])
        assert np.allclose(batched.y_hat[b], single.y_hat, atol=1e-12)


def test_forward_latent_contraction():
    model = init_model(_tiny_cfg(horizon=6), seed=5)
    out = forward(model, np.random.default_rng(5).standard_normal((8, 2)))
    z0 = np.linalg.norm(out.latent_trajectory[0])
    for h, z in enumerate(out.latent_trajectory[1:], start=1):
        assert np.linalg.norm(z) <= 0.99**h * z0 * (1 + 1e-8)


def test_forward_zero_horizon():
    model = init_model(_tiny_cfg(horizon=0), seed=6)
    out = forward(model, np.zeros((8, 2)))
    assert out.y_hat.shape == (0, 2)
    assert len(out.latent_trajectory) == 1


def test_forward_shape_mismatch():
    model = init_model(_tiny_cfg(), seed=0)
    with pytest.raises(ValueError):
        forward(model, np.zeros((7, 2)))
    with pytest.raises(ValueError):
        forward(model, np.zeros((8, 3)))


# -- training loss ------------------------------------------------------------


def test_loss_exact_fit_contractive():
    y = np.random.default_rng(0).standard_normal((1, 3, 2))
    traj = [np.ones((1, 4)) * s for s in (1.0, 0.9, 0.8, 0.7)]
    total, mse, lyap = training_loss(y, y, traj, lam=0.1)
    assert total == 0.0 and mse == 0.0 and lyap == 0.0


def test_loss_hand_case_single_pair():
    # mse = 0, one pair with squared norms 1.0 -> 1.5, lambda = 0.1
    y = np.zeros((1, 1, 2))
    traj = [np.array([[1.0, 0.0]]), np.array([[np.sqrt(1.5), 0.0]])]
    total, mse, lyap = training_loss(y, y, traj, lam=0.1)
    assert mse == 0.0
    assert lyap == pytest.approx(0.5, abs=1e-12)
    assert total == pytest.approx(0.05, abs=1e-12)


def test_loss_lambda_zero():
    rng = np.random.default_rng(1)
    y_hat = rng.standard_normal((2, 3, 2))
    y = rng.standard_normal((2, 3, 2))
    traj = [rng.standard_normal((2, 4)) * 10 for _ in range(4)]
    total, mse, lyap = training_loss(y_hat, y, traj, lam=0.0)
    assert total == mse
    assert mse == pytest.approx(np.mean((y_hat - y) ** 2), abs=1e-12)


def test_loss_all_pairs_vs_first_pair():
    rng = np.random.default_rng(2)
    y = np.zeros((1, 2, 2))
    # norms increase only at the second transition
    traj = [np.array([[2.0, 0.0]]), np.array([[1.0, 0.0]]), np.array([[3.0, 0.0]])]
    _, _, lyap_all = training_loss(y, y, traj, lam=1.0, all_pairs=True)
    _, _, lyap_first = training_loss(y, y, traj, lam=1.0, all_pairs=False)
    assert lyap_first == 0.0
    assert lyap_all == pytest.approx((0.0 + 8.0) / 2, abs=1e-12)


def test_loss_batch_permutation_invariant():
    rng = np.random.default_rng(3)
    y_hat = rng.standard_normal((6, 2, 2))
    y = rng.standard_normal((6, 2, 2))
    traj = [rng.standard_normal((6, 4)) for _ in range(3)]
    perm = rng.permutation(6)
    a = training_loss(y_hat, y, traj, lam=0.3)
    b = training_loss(y_hat[perm], y[perm], [z[perm] for z in traj], lam=0.3)
    assert a == pytest.approx(b, abs=1e-12)


def test_loss_rejects_negative_lambda_and_mismatch():
    y = np.zeros((1, 2, 2))
    traj = [np.zeros((1, 4))] * 3
    with pytest.raises(ValueError):
        training_loss(y, y, traj, lam=-0.1)
    with pytest.raises(ValueError):
        training_loss(np.zeros((1, 3, 2)), y, traj, lam=0.1)


# -- certified bound ----------------------------------------------------------


def test_certified_bound_trivial_cases():
    model = init_model(_tiny_cfg(), seed=0)
    assert certified_output_bound(model, 5, 0.0) == 0.0
    model.params["decoder_w"] = np.eye(2, 4)
    assert certified_output_bound(model, 0, 0.7) == pytest.approx(0.7, abs=1e-10)


def test_certified_bound_caps_measured_deviation():
    rng = np.random.default_rng(11)
    for seed in range(10):
        model = init_model(_tiny_cfg(horizon=1), seed=seed)
        k, _ = materialize(_koop_from(model))
        w = model.params["decoder_w"]
        z = rng.standard_normal(4)
        dz = rng.standard_normal(4)
        z_p, z_q = z.copy(), z + dz
        for h in range(1, 51):
            z_p, z_q = k @ z_p, k @ z_q
            measured = np.linalg.norm(w @ z_p - w @ z_q)
            bound = certified_output_bound(model, h, np.linalg.norm(dz))
            assert measured <= bound * (1 + 1e-10)


def test_certified_bound_uses_decoder_spectral_norm():
    model = init_model(_tiny_cfg(), seed=1)
    want = spectral_norm(model.params["decoder_w"]) * 0.99**3 * 2.0
    assert certified_output_bound(model, 3, 2.0) == pytest.approx(want, rel=1e-12)


# -- checkpointing ------------------------------------------------------------


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    model = init_model(_tiny_cfg("decomp"), seed=9)
    path = tmp_path / "model.npz"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path)
    assert loaded.cfg == model.cfg
    assert loaded.seed == model.seed
    assert sorted(loaded.params) == sorted(model.params)
    for k in model.params:
        assert np.array_equal(loaded.params[k], model.params[k])
    x = np.random.default_rng(9).standard_normal((8, 2))
    assert np.array_equal(forward(model, x).y_hat, forward(loaded, x).y_hat)


def test_checkpoint_shape_mismatch_rejected(tmp_path):
    model = init_model(_tiny_cfg(), seed=0)
    model.params["decoder_w"] = np.zeros((3, 4))  # wrong channel count
    path = tmp_path / "bad.npz"
    save_checkpoint(model, path)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_checkpoint_corrupt_file_rejected(tmp_path):
    path = tmp_path / "garbage.npz"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_checkpoint_unknown_parameter_rejected(tmp_path):
    model = init_model(_tiny_cfg(), seed=0)
    model.params["mystery"] = np.zeros(3)
    path = tmp_path / "extra.npz"
    save_checkpoint(model, path)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
