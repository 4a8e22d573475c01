import math

import numpy as np
import pytest

from gradlab.attack import (
    AttackConfig,
    infer_single_label,
    invert,
    match_assignment,
    psnr_from_mse,
)
from gradlab.defenses import DefendedGradient, DefenseAudit
from gradlab.errors import ConfigError
from gradlab.layers import Dense, LeakyRelu
from gradlab.models import Batch, ModelSpec, ParamVector, init_params, param_gradient


def _tiny_mlp(seed=0):
    model = ModelSpec((20,), (Dense(20, 8), LeakyRelu(0.01), Dense(8, 2)), "cross_entropy")
    params = init_params(model, np.random.default_rng([seed, 1]))
    x = np.random.default_rng([seed, 2]).standard_normal((1, 20))
    labels = np.array([seed % 2])
    return model, params, x, labels


def test_identity_map_recovery(identity_map):
    # the observation *is* the datum: squared-l2 matching recovers it
    model, params = identity_map
    x = np.random.default_rng(0).standard_normal((1, 6))
    g = param_gradient(model, params, Batch(x))
    cfg = AttackConfig(iterations=200, match_loss="squared-l2", step_size=1.0)
    res = invert(model, params, g, x.shape, cfg, np.random.default_rng(1), truth=x)
    assert res.mse <= 1e-8


def test_linear_oracle_gradient_match(linear_oracle):
    # exact recovery is not identifiable (one equation, two unknowns): the
    # attack must land on the solution manifold g(x_hat) = g(x)
    model, params, batch = linear_oracle
    g = param_gradient(model, params, batch)
    cfg = AttackConfig(iterations=400, match_loss="squared-l2", step_size=0.5)
    res = invert(
        model, params, g, batch.inputs.shape, cfg, np.random.default_rng(2),
        targets=batch.targets,
    )
    ghat = param_gradient(model, params, Batch(res.reconstruction, targets=batch.targets))
    assert float(np.sum((ghat - g) ** 2)) <= 1e-10


def test_tiny_mlp_recovers_input():
    model, params, x, labels = _tiny_mlp(3)
    g = param_gradient(model, params, Batch(x, labels=labels))
    cfg = AttackConfig(iterations=1500, restarts=2)
    res = invert(model, params, g, x.shape, cfg, np.random.default_rng(4), labels=labels, truth=x)
    assert res.mse <= 1e-3


def test_attack_reads_only_shared_values():
    # a poisoned audit must not change anything the attacker computes
    model, params, x, labels = _tiny_mlp(5)
    g = param_gradient(model, params, Batch(x, labels=labels))
    cfg = AttackConfig(iterations=50)
    poisoned = DefendedGradient(
        g.copy(), DefenseAudit(kind="noise", sigma_used=np.full(model.param_count, 1e9))
    )
    r1 = invert(model, params, poisoned, x.shape, cfg, np.random.default_rng(6), labels=labels)
    r2 = invert(model, params, g, x.shape, cfg, np.random.default_rng(6), labels=labels)
    np.testing.assert_array_equal(r1.reconstruction, r2.reconstruction)


def test_restart_determinism():
    model, params, x, labels = _tiny_mlp(7)
    g = param_gradient(model, params, Batch(x, labels=labels))
    cfg = AttackConfig(iterations=60, restarts=3)
    r1 = invert(model, params, g, x.shape, cfg, np.random.default_rng(8), labels=labels)
    r2 = invert(model, params, g, x.shape, cfg, np.random.default_rng(8), labels=labels)
    np.testing.assert_array_equal(r1.reconstruction, r2.reconstruction)
    assert r1.final_match_loss == r2.final_match_loss


def test_zero_gradient_cosine_falls_back():
    model, params, x, labels = _tiny_mlp(9)
    y = np.zeros(model.param_count)
    cfg = AttackConfig(iterations=5, match_loss="cosine")
    res = invert(model, params, y, x.shape, cfg, np.random.default_rng(10), labels=labels)
    assert any("squared-l2" in n for n in res.notes)


def test_inferred_single_label():
    model, params, x, _ = _tiny_mlp(11)
    true_label = np.array([1])
    g = param_gradient(model, params, Batch(x, labels=true_label))
    assert infer_single_label(model, g) == 1
    cfg = AttackConfig(iterations=30, labels="inferred-single")
    res = invert(model, params, g, x.shape, cfg, np.random.default_rng(12))
    assert res.reconstruction.shape == x.shape


def test_known_labels_required():
    model, params, x, _ = _tiny_mlp(13)
    cfg = AttackConfig(iterations=5)
    with pytest.raises(ConfigError):
        invert(model, params, np.zeros(model.param_count), x.shape, cfg, np.random.default_rng(0))


def test_observed_length_checked():
    model, params, x, labels = _tiny_mlp(15)
    cfg = AttackConfig(iterations=5)
    with pytest.raises(ConfigError):
        invert(model, params, np.zeros(3), x.shape, cfg, np.random.default_rng(0), labels=labels)


# assignment and metrics -----------------------------------------------------


def test_assignment_recovers_permutation():
    rng = np.random.default_rng(1)
    truth = rng.standard_normal((5, 7))
    perm_true = np.array([3, 0, 4, 1, 2])
    recon = truth[perm_true]
    perm, per_image = match_assignment(recon, truth)
    np.testing.assert_array_equal(recon[perm], truth)
    np.testing.assert_allclose(per_image, np.zeros(5), atol=1e-15)


def test_assignment_single_sample_identity():
    perm, per_image = match_assignment(np.ones((1, 4)), np.ones((1, 4)))
    np.testing.assert_array_equal(perm, [0])
    assert per_image[0] == 0.0


def test_assignment_two_by_two_enumeration():
    # cross-distance matrix {0.1, 0.2 / 0.3, 0.05}: identity pairing wins
    # with total 0.15 against the swap's 0.5
    recon = np.array([[0.0], [1.0]])
    truth = np.array([[np.sqrt(0.1)], [1.0 - np.sqrt(0.05)]])
    perm, per_image = match_assignment(recon, truth)
    np.testing.assert_array_equal(perm, [0, 1])
    assert per_image.sum() == pytest.approx(0.15)


def test_assignment_shape_mismatch():
    with pytest.raises(ConfigError):
        match_assignment(np.ones((2, 3)), np.ones((3, 3)))


def test_psnr_values():
    assert psnr_from_mse(0.01, 1.0) == pytest.approx(20.0)
    assert psnr_from_mse(1.0, 1.0) == pytest.approx(0.0)
    assert psnr_from_mse(0.0, 1.0) == math.inf
    with pytest.raises(ConfigError):
        psnr_from_mse(0.1, 0.0)


def test_attack_config_validation():
    with pytest.raises(ConfigError):
        AttackConfig(iterations=0)
    with pytest.raises(ConfigError):
        AttackConfig(match_loss="l1")
    with pytest.raises(ConfigError):
        AttackConfig(tv_weight=-0.5)
    with pytest.raises(ConfigError):
        AttackConfig(box=(1.0, 0.0))
    with pytest.raises(ConfigError):
        AttackConfig.from_config({"iterations": 10, "typo": 1})
