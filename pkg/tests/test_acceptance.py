"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s`.  Criteria mix analytic
oracles, exhaustive small-instance checks, and direction-of-trend
reproductions at desk scale; every tolerance is pinned here.
"""

import filecmp
import itertools
import math
import os
import time
from contextlib import contextmanager

import numpy as np
import pytest

from gradlab.attack import AttackConfig, invert
from gradlab.bounds import PriorSpec, fisher_trace_noise, reconstruction_bound, utility_first_order
from gradlab.cli import main
from gradlab.data import Dataset, load_idx
from gradlab.defenses import DefenseSpec, defend, optimal_noise_sigma, optimal_prune_scores, prune_by_index
from gradlab.flsim import FLConfig, OptimizerSpec, train
from gradlab.layers import Conv2d, Dense, Flatten, LeakyRelu, MaxPool
from gradlab.models import Batch, ModelSpec, ParamVector, init_params, input_gradient, param_gradient
from gradlab.probe import exact_row_norms, grad_directional_derivative, sketch_row_norms

from conftest import FIXTURES, digits_path, fd_input_gradient, fd_param_gradient, make_random_model, vec_rel_error


@contextmanager
def criterion(number, name, limit_seconds):
    started = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"\nACCEPTANCE {number} {name}: FAIL ({time.perf_counter() - started:.1f}s)")
        raise
    elapsed = time.perf_counter() - started
    print(f"\nACCEPTANCE {number} {name}: PASS ({elapsed:.1f}s)")
    assert elapsed < limit_seconds, f"criterion {number} exceeded {limit_seconds}s"


def _desk_model():
    """Appendix-style conv stack shrunk to 8x8 inputs (9802 parameters)."""
    return ModelSpec(
        (1, 8, 8),
        (
            Conv2d(1, 8, 3, pad=1), LeakyRelu(0.01), MaxPool(2),
            Conv2d(8, 16, 3, pad=1), LeakyRelu(0.01),
            Flatten(), Dense(256, 32), LeakyRelu(0.01), Dense(32, 10),
        ),
        "cross_entropy",
    )


def _digits():
    ds = load_idx(digits_path("digits512_images.idx"), digits_path("digits512_labels.idx"))
    return Dataset(ds.inputs.reshape(-1, 1, 8, 8), ds.labels)


LINEAR_MODEL = ModelSpec((2,), (Dense(2, 1, bias=False),), "squared_error")
LINEAR_PARAMS = ParamVector(np.array([1.0, 2.0]), LINEAR_MODEL)
LINEAR_BATCH = Batch(np.array([[1.0, 1.0]]), targets=np.array([[0.0]]))
LINEAR_ROW_NORMS = np.array([20.0, 26.0])


def test_criterion_1_gradient_correctness():
    with criterion(1, "gradient correctness vs finite differences", 60):
        for seed in range(50):
            model, params, batch = make_random_model(np.random.default_rng([seed, 1001]))
            assert model.param_count <= 500
            g = param_gradient(model, params, batch)
            assert vec_rel_error(g, fd_param_gradient(model, params, batch)) <= 1e-5
            gx = input_gradient(model, params, batch)
            assert vec_rel_error(gx, fd_input_gradient(model, params, batch)) <= 1e-5


def test_criterion_2_directional_derivative_oracle():
    with criterion(2, "directional derivative vs central differences", 60):
        for seed in range(50):
            rng = np.random.default_rng([seed, 1002])
            model, params, batch = make_random_model(rng)
            v = rng.standard_normal(batch.inputs.shape)
            jv = grad_directional_derivative(model, params, batch, v)
            h = 1e-4 * max(1.0, float(np.abs(batch.inputs).max()))
            up = Batch(batch.inputs + h * v, batch.labels, batch.targets)
            dn = Batch(batch.inputs - h * v, batch.labels, batch.targets)
            fd = (param_gradient(model, params, up) - param_gradient(model, params, dn)) / (2 * h)
            assert vec_rel_error(jv, fd) <= 1e-5
        # analytic rows of the linear oracle, exact to 1e-10
        col0 = grad_directional_derivative(LINEAR_MODEL, LINEAR_PARAMS, LINEAR_BATCH, np.array([[1.0, 0.0]]))
        col1 = grad_directional_derivative(LINEAR_MODEL, LINEAR_PARAMS, LINEAR_BATCH, np.array([[0.0, 1.0]]))
        np.testing.assert_allclose(col0, [4.0, 1.0], atol=1e-10)
        np.testing.assert_allclose(col1, [2.0, 5.0], atol=1e-10)


def test_criterion_3_sketch_concentration():
    with criterion(3, "row-norm sketch concentration (Chebyshev rate)", 60):
        k, eps, trials = 100, 0.5, 1000
        failures = np.zeros(2)
        for seed in range(trials):
            est = sketch_row_norms(
                LINEAR_MODEL, LINEAR_PARAMS, LINEAR_BATCH, k, np.random.default_rng([seed, 1003])
            )
            failures += np.abs(est.values - LINEAR_ROW_NORMS) > eps * LINEAR_ROW_NORMS
        rate = failures / trials
        assert (rate <= 2.0 / (k * eps * eps)).all(), rate


def test_criterion_4_optimal_noise_beats_rescaled_random():
    with criterion(4, "optimal noise minimizes trace at matched utility", 120):
        checked = 0
        seed = 0
        while checked < 20:
            rng = np.random.default_rng([seed, 1004])
            seed += 1
            model, params, batch = make_random_model(rng)
            g = param_gradient(model, params, batch)
            if np.abs(g).min() < 1e-9:
                continue
            rn = exact_row_norms(model, params, batch).values
            sigma_opt = optimal_noise_sigma(g, rn, 1.0, grad_floor=1e-300)
            budget = float(np.sum(g * g * sigma_opt))
            trace_opt = fisher_trace_noise(rn, sigma_opt)
            unit_opt = sigma_opt / np.linalg.norm(sigma_opt)
            for _ in range(200):
                raw = np.exp(rng.standard_normal(g.shape[0]))
                sigma_rand = raw * (budget / float(np.sum(g * g * raw)))
                trace_rand = fisher_trace_noise(rn, sigma_rand)
                assert trace_rand >= trace_opt * (1 - 1e-12)
                gap = np.abs(sigma_rand / np.linalg.norm(sigma_rand) - unit_opt).max()
                if gap > 1e-6:
                    assert trace_rand > trace_opt
            checked += 1


def test_criterion_5_greedy_pruning_matches_exhaustive():
    with criterion(5, "greedy pruning equals exhaustive subset search", 60):
        for seed in range(100):
            rng = np.random.default_rng([seed, 1005])
            d = int(rng.integers(6, 13))
            g = rng.standard_normal(d)
            g[np.abs(g) < 1e-3] = 1e-3
            rn = rng.uniform(0.01, 5.0, d)
            scores = optimal_prune_scores(g, rn, grad_floor=1e-300)
            order = np.argsort(-scores, kind="stable")
            n_prune = int(rng.integers(1, d))
            budget = float(np.sum(g[order[n_prune:]] ** 2)) * (1 - 1e-12)
            out = prune_by_index(g, scores, utility_budget=budget, prune_smallest=False)
            keep = np.ones(d, dtype=bool)
            keep[out.audit.pruned_set] = False
            greedy_leak = float(np.sum(rn[keep]))
            best = math.inf
            for r in range(d + 1):
                for subset in itertools.combinations(range(d), r):
                    mask = np.ones(d, dtype=bool)
                    mask[list(subset)] = False
                    if float(np.sum(g[mask] ** 2)) >= budget:
                        leak = float(np.sum(rn[mask]))
                        best = min(best, leak)
            assert greedy_leak <= best + 1e-9


def test_criterion_6_bound_sanity():
    with criterion(6, "reconstruction bound analytic values", 10):
        # identity-map Gaussian location model: bound equals the Bayes risk
        for m, s2 in ((3, 0.1), (7, 0.5), (64, 2.0)):
            trace = fisher_trace_noise(np.ones(m), np.full(m, s2))
            bound = reconstruction_bound(trace, m, PriorSpec()).bound_value
            bayes_risk = m * s2  # achieved exactly by the identity estimator
            assert abs(bound - bayes_risk) <= 1e-9 * bayes_risk
        oracle = reconstruction_bound(
            fisher_trace_noise(LINEAR_ROW_NORMS, np.ones(2)), 2, PriorSpec()
        ).bound_value
        assert abs(oracle - 4.0 / 46.0) <= 1e-9 * (4.0 / 46.0)


def test_criterion_7_attack_baseline_strength():
    with criterion(7, "no-defense attack recovers tiny-MLP inputs", 600):
        model = ModelSpec((20,), (Dense(20, 8), LeakyRelu(0.01), Dense(8, 2)), "cross_entropy")
        cfg = AttackConfig(iterations=2000, restarts=3)
        hits = 0
        for seed in range(20):
            params = init_params(model, np.random.default_rng([seed, 1007]))
            x = np.random.default_rng([seed, 1008]).standard_normal((1, 20))
            labels = np.array([seed % 2])
            g = param_gradient(model, params, Batch(x, labels=labels))
            res = invert(
                model, params, g, x.shape, cfg, np.random.default_rng([seed, 1009]),
                labels=labels, truth=x,
            )
            hits += res.mse <= 1e-3
        assert hits >= 18, f"only {hits}/20 seeds reached MSE <= 1e-3"


def test_criterion_8_privacy_trend_in_noise_scale():
    with criterion(8, "attack MSE strictly increases with noise scale", 1200):
        ds = load_idx(digits_path("digits512_images.idx"), digits_path("digits512_labels.idx"))
        model = ModelSpec((64,), (Dense(64, 32), LeakyRelu(0.01), Dense(32, 10)), "cross_entropy")
        scales = (0.0, 1e-3, 1e-2, 1e-1)
        cfg = AttackConfig(iterations=600, restarts=2, init="uniform", box=(0.0, 1.0))
        means = []
        for scale in scales:
            mses = []
            for seed in range(5):
                params = init_params(model, np.random.default_rng([seed, 1010]))
                idx = np.random.default_rng([seed, 1011]).choice(512, 2, replace=False)
                x = ds.inputs[idx].reshape(2, 64)
                labels = ds.labels[idx]
                g = param_gradient(model, params, Batch(x, labels=labels))
                if scale == 0.0:
                    y = g
                else:
                    spec = DefenseSpec(kind="noise", sigma=scale / np.sqrt(model.param_count))
                    y = defend(g, spec, rng=np.random.default_rng([seed, 1012])).values
                res = invert(
                    model, params, y, x.shape, cfg, np.random.default_rng([seed, 1013]),
                    labels=labels, truth=x,
                )
                mses.append(res.mse)
            means.append(float(np.mean(mses)))
        print(f"  noise-scale trend: {[f'{m:.2e}' for m in means]}")
        assert all(a < b for a, b in zip(means, means[1:])), means


def test_criterion_9_tradeoff_directions():
    with criterion(9, "optimal defenses dominate baselines directionally", 1800):
        dataset = _digits()
        model = _desk_model()

        # (a) matched retained first-order utility: optimal pruning defends
        # at least as well as magnitude pruning (seed-averaged attack MSE)
        cfg = AttackConfig(iterations=800, restarts=1, init="uniform", box=(0.0, 1.0))
        mag_mses, opt_mses = [], []
        for seed in range(5):
            params = init_params(model, np.random.default_rng([seed, 1014]))
            idx = np.random.default_rng([seed, 1015]).choice(512, 4, replace=False)
            x = dataset.inputs[idx]
            labels = dataset.labels[idx]
            batch = Batch(x, labels=labels)
            g = param_gradient(model, params, batch)
            rn = exact_row_norms(model, params, batch)
            mag_spec = DefenseSpec(kind="prune", ratio=0.8)
            mag = defend(g, mag_spec, rng=np.random.default_rng([seed, 1016]))
            u_mag = utility_first_order([g], mag_spec, mag.audit)
            opt_spec = DefenseSpec(kind="optimal_prune", utility_budget=u_mag)
            opt = defend(g, opt_spec, row_norms=rn, rng=np.random.default_rng([seed, 1016]))
            u_opt = utility_first_order([g], opt_spec, opt.audit)
            assert abs(u_opt - u_mag) <= 0.05 * u_mag, "utilities not matched within 5%"
            rm = invert(model, params, mag, x.shape, cfg, np.random.default_rng([seed, 1017]),
                        labels=labels, truth=x)
            ro = invert(model, params, opt, x.shape, cfg, np.random.default_rng([seed, 1017]),
                        labels=labels, truth=x)
            mag_mses.append(rm.mse)
            opt_mses.append(ro.mse)
        print(f"  pruning: magnitude {np.mean(mag_mses):.3e} vs optimal {np.mean(opt_mses):.3e}")
        assert np.mean(opt_mses) >= np.mean(mag_mses)

        # (b) matched ||Sigma||_F: optimal noise trains at least as well as
        # isotropic DP-SGD (final smoothed loss, seed-averaged)
        scale = 0.1
        iso_var = scale / np.sqrt(model.param_count)
        dp_loss, opt_loss = [], []
        for seed in range(5):
            params = init_params(model, np.random.default_rng([seed, 1018]))
            for spec, sink in (
                (DefenseSpec(kind="dpsgd", sigma=iso_var, clip=1.0), dp_loss),
                (DefenseSpec(kind="optimal_dpsgd", frobenius=scale, clip=1.0), opt_loss),
            ):
                flcfg = FLConfig(
                    num_clients=4, per_round_samples=8, rounds=40, seed=seed, defense=spec,
                    server_optimizer=OptimizerSpec(kind="adam", lr=1e-3),
                )
                log, _ = train(model, params, dataset, flcfg)
                sink.append(log.smoothed_losses(8)[-1])
        print(f"  training: dpsgd {np.mean(dp_loss):.4f} vs optimal {np.mean(opt_loss):.4f}")
        assert np.mean(opt_loss) <= np.mean(dp_loss)


def test_criterion_10_cli_determinism(tmp_path):
    with criterion(10, "CLI reruns are byte-identical", 120):
        oracle = os.path.join(FIXTURES, "linear_oracle.yaml")
        a, b = str(tmp_path / "a"), str(tmp_path / "b")
        assert main(["bound", "--config", oracle, "--out", a]) == 0
        assert main(["bound", "--config", oracle, "--out", b]) == 0
        assert filecmp.cmp(
            os.path.join(a, "linear-oracle-bound.csv"),
            os.path.join(b, "linear-oracle-bound.csv"),
            shallow=False,
        )
        import yaml

        sweep_cfg = {
            "config_version": 1,
            "experiment": "accept-sweep",
            "seed": 0,
            "model": {
                "input_shape": [64],
                "layers": [
                    {"type": "dense", "in": 64, "out": 12},
                    {"type": "leaky_relu", "slope": 0.01},
                    {"type": "dense", "in": 12, "out": 10},
                ],
                "loss": "cross_entropy",
            },
            "dataset": {
                "kind": "idx",
                "images": digits_path("digits512_images.idx"),
                "labels": digits_path("digits512_labels.idx"),
                "limit": 64,
            },
            "grid": [{"kind": "prune", "ratio": 0.5}, {"kind": "noise", "sigma": 0.0001}],
            "attack": {"iterations": 60, "restarts": 1, "init": "uniform", "box": [0.0, 1.0]},
            "fl": {
                "num_clients": 2, "per_round_samples": 2, "rounds": 5,
                "shard_sizes": [32, 32], "optimizer": {"kind": "adam", "lr": 0.001},
            },
            "sweep": {"seeds": [0, 1], "updates": 5},
        }
        cfg_path = tmp_path / "sweep.yaml"
        with open(cfg_path, "w") as fh:
            yaml.safe_dump(sweep_cfg, fh)
        c, d = str(tmp_path / "c"), str(tmp_path / "d")
        assert main(["sweep", "--config", str(cfg_path), "--out", c, "--jobs", "1"]) == 0
        assert main(["sweep", "--config", str(cfg_path), "--out", d, "--jobs", "1"]) == 0
        assert filecmp.cmp(
            os.path.join(c, "accept-sweep.csv"), os.path.join(d, "accept-sweep.csv"), shallow=False
        )


def test_bound_never_exceeds_attack_error_under_gaussian_prior():
    """Theorem-1 check against the implemented attacker.

    The data is drawn from an actual isotropic Gaussian, so the prior term
    in the bound is the true prior information and the regularity
    assumptions hold exactly; with exact row norms the bound on the total
    squared error must stay below whatever the attack achieves.
    """
    model = ModelSpec((16,), (Dense(16, 8), LeakyRelu(0.05), Dense(8, 3)), "cross_entropy")
    tau2 = 0.09
    prior = PriorSpec(kind="isotropic_gaussian", variance=tau2)
    cfg = AttackConfig(iterations=400, restarts=1)
    for seed in range(4):
        for sigma in (1e-5, 1e-3):
            params = init_params(model, np.random.default_rng([seed, 1020]))
            rng = np.random.default_rng([seed, 1021])
            x = 0.5 + np.sqrt(tau2) * rng.standard_normal((1, 16))
            labels = rng.integers(0, 3, 1)
            batch = Batch(x, labels=labels)
            g = param_gradient(model, params, batch)
            rn = exact_row_norms(model, params, batch)
            out = defend(g, DefenseSpec(kind="noise", sigma=sigma),
                         rng=np.random.default_rng([seed, 1022]))
            trace = fisher_trace_noise(rn, out.audit.sigma_used)
            bound = reconstruction_bound(trace, batch.m, prior).bound_value
            res = invert(model, params, out, x.shape, cfg,
                         np.random.default_rng([seed, 1023]), labels=labels, truth=x)
            total_attack_error = res.mse * batch.m
            assert bound <= total_attack_error, (sigma, bound, total_attack_error)
