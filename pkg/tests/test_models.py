import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semigen import autodiff as ad
from semigen.models import (MlpNetwork, ObservationModel, discriminate, generate_theta, load_checkpoint,
                            log_obs_density, make_discriminator, make_generator, sample_x, save_checkpoint)
from gradcheck import check_gradients


def test_zero_network_outputs_zero():
    gen = make_generator(rng=None)
    theta = generate_theta(gen, np.random.default_rng(0).standard_normal((7, 10)))
    assert theta.shape == (7, 2)
    assert not theta.value.any()


def test_zero_discriminator_is_half():
    disc = make_discriminator(2, rng=None)
    logits = discriminate(disc, np.random.default_rng(0).standard_normal((5, 2)))
    assert logits.shape == (5,)
    np.testing.assert_array_equal(logits.value, 0.0)


def test_parameter_count_and_defaults():
    gen = make_generator(rng=np.random.default_rng(0))
    assert gen.widths == [10, 100, 100, 2]
    assert gen.n_params == 10 * 100 + 100 + 100 * 100 + 100 + 100 * 2 + 2
    disc = make_discriminator(2, rng=np.random.default_rng(0))
    assert disc.widths == [2, 100, 1]
    assert [p.name for p in disc.params] == ["discriminator.layer0.weight", "discriminator.layer0.bias",
                                             "discriminator.layer1.weight", "discriminator.layer1.bias"]


def test_generator_deterministic():
    gen = make_generator(rng=np.random.default_rng(1))
    z = np.random.default_rng(2).standard_normal((4, 10))
    np.testing.assert_array_equal(gen(z).value, gen(z).value)
    np.testing.assert_array_equal(gen(z).value, gen.predict(z))


def test_width_mismatch():
    gen = make_generator(rng=np.random.default_rng(1))
    with pytest.raises(ad.ShapeError):
        gen(np.zeros((3, 4)))


def test_invalid_widths():
    with pytest.raises(ValueError):
        MlpNetwork([3, 0, 1])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_poisson_generator_positive(seed):
    rng = np.random.default_rng(seed)
    gen = make_generator(1, (8, 8), 1, output="softplus", rng=rng)
    for p in gen.params:
        p.value *= 30.0
    theta = gen.predict(100 * rng.standard_normal((50, 1)))
    assert np.all(theta >= 1e-6) and np.all(np.isfinite(theta))


def test_generator_mean_gradient():
    rng = np.random.default_rng(3)
    gen = make_generator(4, (6, 5), 2, rng=rng)
    z = rng.standard_normal((8, 4))
    assert check_gradients(lambda: ad.mean(gen(z)), gen.params) < 1e-4


def test_discriminator_mean_logit_gradient():
    rng = np.random.default_rng(4)
    disc = make_discriminator(2, (7,), rng=rng)
    x = rng.standard_normal((9, 2))
    assert check_gradients(lambda: ad.mean(discriminate(disc, x)), disc.params) < 1e-4


def test_large_inputs_give_finite_logits():
    disc = make_discriminator(2, rng=np.random.default_rng(5))
    logits = discriminate(disc, np.full((3, 2), 1e3))
    assert np.all(np.isfinite(logits.value))


def test_init_preactivation_scale():
    net = MlpNetwork([10, 100, 100, 2], rng=np.random.default_rng(6))
    pre = net.preactivations(np.random.default_rng(7).standard_normal((10_000, 10)))
    for a in pre:
        assert 0.5 <= a.std() <= 2.0


# ---------------------------------------------------------------- observation models

def test_gaussian_density_at_mean():
    obs = ObservationModel("gaussian", 0.1, 2)
    val = log_obs_density(obs, np.array([[0.3, -0.2]]), np.array([[0.3, -0.2]])).value[0, 0]
    assert val == pytest.approx(-math.log(2 * math.pi * 0.01), abs=1e-12)
    assert val == pytest.approx(2.7672, abs=1e-4)


def test_poisson_density_example():
    obs = ObservationModel("poisson", dim=1)
    assert log_obs_density(obs, np.array([[0.0]]), np.array([[1.0]])).value[0, 0] == pytest.approx(-1.0)


def test_gaussian_density_brute_force():
    rng = np.random.default_rng(8)
    x, theta = rng.standard_normal((2, 3)), rng.standard_normal((3, 3))
    obs = ObservationModel("gaussian", 0.7, 3)
    got = log_obs_density(obs, x, theta).value
    for i in range(2):
        for j in range(3):
            sq = sum((x[i, k] - theta[j, k]) ** 2 for k in range(3))
            want = -1.5 * math.log(2 * math.pi * 0.49) - sq / (2 * 0.49)
            assert got[i, j] == pytest.approx(want, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_density_permutation_exchangeable(seed):
    rng = np.random.default_rng(seed)
    x, theta = rng.standard_normal((4, 2)), rng.standard_normal((5, 2))
    obs = ObservationModel("gaussian", 0.5, 2)
    px, pt = rng.permutation(4), rng.permutation(5)
    full = log_obs_density(obs, x, theta).value
    perm = log_obs_density(obs, x[px], theta[pt]).value
    np.testing.assert_array_equal(perm, full[np.ix_(px, pt)])


def test_poisson_rejects_bad_counts():
    obs = ObservationModel("poisson", dim=1)
    with pytest.raises(ValueError):
        log_obs_density(obs, np.array([[1.5]]), np.array([[1.0]]))
    with pytest.raises(ValueError):
        log_obs_density(obs, np.array([[-1.0]]), np.array([[1.0]]))


def test_observation_model_validation():
    with pytest.raises(ValueError):
        ObservationModel("gaussian", 0.0)
    with pytest.raises(ValueError):
        ObservationModel("poisson", dim=2)
    with pytest.raises(ValueError):
        ObservationModel("laplace")


def test_sample_x_vanishing_noise():
    theta = np.random.default_rng(9).standard_normal((100, 2))
    x = sample_x(ObservationModel("gaussian", 1e-9, 2), theta, np.random.default_rng(1))
    assert np.max(np.abs(x - theta)) < 1e-8


def test_sample_x_poisson_mean():
    x = sample_x(ObservationModel("poisson", dim=1), np.full((100_000, 1), 10.0), np.random.default_rng(2))
    assert 9.9 <= x.mean() <= 10.1


def test_sample_x_gaussian_covariance():
    theta = np.tile([1.0, -1.0], (100_000, 1))
    x = sample_x(ObservationModel("gaussian", 0.3, 2), theta, np.random.default_rng(3))
    cov = np.cov((x - theta).T)
    np.testing.assert_allclose(np.diag(cov), 0.09, rtol=0.02)
    assert abs(cov[0, 1]) < 0.02 * 0.09


# ---------------------------------------------------------------- checkpoints

def test_checkpoint_roundtrip(tmp_path):
    gen = make_generator(rng=np.random.default_rng(10))
    prefix = str(tmp_path / "ck")
    manifest = save_checkpoint(prefix, {"step": 3}, [(p.name, p.value) for p in gen.params])
    blob = (tmp_path / "ck.bin").read_bytes()
    assert len(blob) == 8 * gen.n_params
    assert np.frombuffer(blob, "<f8")[:5].tolist() == gen.params[0].value.ravel()[:5].tolist()
    loaded, arrays = load_checkpoint(prefix + ".json")
    assert loaded["step"] == 3 and loaded["layout"] == manifest["layout"]
    for p in gen.params:
        np.testing.assert_array_equal(arrays[p.name], p.value)
    save_checkpoint(str(tmp_path / "again"), {"step": 3}, list(arrays.items()))
    assert (tmp_path / "again.bin").read_bytes() == blob


def test_flat_roundtrip():
    gen = make_generator(3, (4,), 2, rng=np.random.default_rng(11))
    flat = gen.get_flat()
    other = make_generator(3, (4,), 2, rng=None)
    other.set_flat(flat)
    np.testing.assert_array_equal(other.get_flat(), flat)
    with pytest.raises(ValueError):
        other.set_flat(flat[:-1])
