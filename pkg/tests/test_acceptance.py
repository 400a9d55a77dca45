"""Acceptance gate: one test per shipping criterion, tolerances pinned.

Each test prints a single [criterion N] PASS line on success; run with
``pytest tests/test_acceptance.py -v`` to get one line per criterion.
Criterion 7 needs real IDX data and is skipped unless FEDBREG_MNIST_DIR
points at a directory with the four classic MNIST files.
"""

import csv
import math
import os
import time

import numpy as np
import pytest

from fedbreg.bregman import (
    FAMILIES,
    ConvexGenerator,
    PriorSpec,
    bregman_prox,
    divergence,
    envelope_gradient,
    envelope_value,
    grad_g,
    grad_g_conj,
)
from fedbreg.cli import read_model_dump, run_experiment, run_sweep
from fedbreg.config import parse_config_text
from fedbreg.models import Batch, ModelSpec, fd_gradient, forward_loss, gradient
from fedbreg.metrics import loss_deviation
from fedbreg.param_space import RngStream, seeded_init


@pytest.fixture(autouse=True)
def _sandbox_output(tmp_path, monkeypatch):
    monkeypatch.setenv("FEDBREG_OUTPUT_ROOT", str(tmp_path))
    yield tmp_path


def mean_domain_samples(family, rng, n, dim):
    if family == "gaussian":
        return rng.normal(size=(n, dim))
    if family == "bernoulli":
        return rng.uniform(0.02, 0.98, size=(n, dim))
    return rng.uniform(0.05, 5.0, size=(n, dim))  # poisson / exponential


def recipe_text(algo, seed, out, **over):
    base = {
        "dataset.source": "synthetic",
        "trainer.strategy": algo,
        "run.seed": str(seed),
        "run.output_dir": out,
        "run.eval_cadence": "25",
    }
    base.update({k: str(v) for k, v in over.items()})
    return "".join(f"{k} = {v}\n" for k, v in base.items())


class TestCriterion1:
    def test_criterion_1_conjugate_duality_and_divergence_axioms(self):
        """grad_g and grad_g_conj invert each other to 1e-10 on 1000 points
        per family; divergences are non-negative and exactly zero at x = x."""
        t0 = time.time()
        rng = np.random.default_rng(11)
        for family in FAMILIES:
            gen = ConvexGenerator(family)
            x = mean_domain_samples(family, rng, 1000, 4)
            y = mean_domain_samples(family, rng, 1000, 4)
            for i in range(x.shape[0]):
                back = grad_g(gen, grad_g_conj(gen, x[i]))
                assert np.max(np.abs(back - x[i])) <= 1e-10, family
                d = divergence(gen, x[i], y[i])
                assert d >= 0.0, family
                assert divergence(gen, x[i], x[i]) == 0.0, family
        elapsed = time.time() - t0
        assert elapsed < 5.0, f"duality sweep took {elapsed:.1f}s"
        print(f"[criterion 1] PASS: duality <= 1e-10, D >= 0, D(x,x) = 0 "
              f"(4 families x 1000 points, {elapsed:.2f}s)")

    def test_criterion_1_scaled_gaussian_included(self):
        rng = np.random.default_rng(12)
        gen = ConvexGenerator("gaussian", scale=rng.uniform(0.5, 2.0, size=6))
        for _ in range(200):
            x = rng.normal(size=6)
            back = grad_g_conj(gen, grad_g(gen, x))
            assert np.max(np.abs(back - x)) <= 1e-10


class TestCriterion2:
    def test_criterion_2_prox_matches_quadratic_closed_form(self):
        """For loss 0.5 * ||theta - a||^2 under the squared-distance
        divergence the proximal point has the closed form
        (a + lam * anchor) / (1 + lam); 100 steps at 0.1 land within 1e-6,
        from the default start and from a perturbed warm start."""
        rng = np.random.default_rng(21)
        a = rng.normal(size=5)
        anchor = rng.normal(size=5)
        worst = 0.0
        for lam in (1.0, 15.0):
            prior = PriorSpec(ConvexGenerator("gaussian"), lam)
            grad_loss = lambda th: th - a
            closed = (a + lam * anchor) / (1.0 + lam)
            out = bregman_prox(prior, grad_loss, anchor, steps=100, step_size=0.1)
            warm = bregman_prox(prior, grad_loss, anchor, steps=100, step_size=0.1,
                                start=anchor + 0.5)
            worst = max(worst, float(np.max(np.abs(out - closed))))
            worst = max(worst, float(np.max(np.abs(warm - closed))))
        # diagonally scaled variant: theta_j = (s_j a_j + lam anchor_j) / (s_j + lam)
        scale = rng.uniform(0.5, 2.0, size=5)
        prior = PriorSpec(ConvexGenerator("gaussian", scale=scale), 1.0)
        out = bregman_prox(prior, lambda th: th - a, anchor, steps=100, step_size=0.1)
        closed = (scale * a + 1.0 * anchor) / (scale + 1.0)
        worst = max(worst, float(np.max(np.abs(out - closed))))
        assert worst <= 1e-6, f"worst prox error {worst:.2e}"
        print(f"[criterion 2] PASS: prox vs closed form, worst error {worst:.2e} <= 1e-6")

    def test_criterion_2_prox_is_stationary_for_every_family(self):
        """Where no closed form exists the prox output must satisfy the
        first-order condition grad_loss + lam * grad_theta D = 0 to 1e-6."""
        rng = np.random.default_rng(23)
        lam = 1.0
        for family in FAMILIES:
            if family == "bernoulli":
                a = rng.uniform(0.3, 0.7, size=5)
                anchor = rng.uniform(0.3, 0.7, size=5)
            elif family == "gaussian":
                a = rng.normal(size=5)
                anchor = rng.normal(size=5)
            else:
                a = rng.uniform(0.5, 2.0, size=5)
                anchor = rng.uniform(0.5, 2.0, size=5)
            gen = ConvexGenerator(family)
            prior = PriorSpec(gen, lam)
            th = bregman_prox(prior, lambda t: t - a, anchor, steps=2000, step_size=0.02)
            residual = (th - a) + lam * (grad_g_conj(gen, th) - grad_g_conj(gen, anchor))
            assert np.max(np.abs(residual)) <= 1e-6, family
        print("[criterion 2] PASS: prox stationarity residual <= 1e-6 for all families")

    def test_criterion_2_envelope_gradient_matches_finite_differences(self):
        """d/d anchor of [loss(prox) + lam * D(prox, anchor)] equals the
        reported envelope gradient: rel err <= 1e-4 on a quadratic and
        <= 1e-3 on a multinomial regression loss."""
        rng = np.random.default_rng(22)
        lam = 2.0
        prior = PriorSpec(ConvexGenerator("gaussian"), lam)
        h = 1e-5

        def check(loss_fn, grad_loss, anchor, coords, tol, tag):
            grad = envelope_gradient(prior, grad_loss, anchor, steps=400, step_size=0.1)
            for j in coords:
                hi = anchor.copy(); hi[j] += h
                lo = anchor.copy(); lo[j] -= h
                fd = (
                    envelope_value(prior, loss_fn, grad_loss, hi, 400, 0.1)
                    - envelope_value(prior, loss_fn, grad_loss, lo, 400, 0.1)
                ) / (2 * h)
                rel = abs(fd - grad[j]) / max(abs(fd), 1e-12)
                assert rel <= tol, f"{tag} coord {j}: rel {rel:.2e}"

        # quadratic loss
        a = rng.normal(size=6)
        check(
            lambda th: 0.5 * float(np.sum((th - a) ** 2)),
            lambda th: th - a,
            rng.normal(size=6),
            range(6),
            1e-4,
            "quadratic",
        )

        # multinomial regression loss on a small batch
        spec = ModelSpec("mclr", 4, 3)
        batch = Batch(rng.normal(size=(12, 4)), rng.integers(0, 3, size=12).astype(np.int64))
        check(
            lambda th: forward_loss(spec, th, batch),
            lambda th: gradient(spec, th, batch),
            seeded_init(spec.param_dim, RngStream(22, 3), "normal"),
            range(0, spec.param_dim, 3),
            1e-3,
            "mclr",
        )
        print("[criterion 2] PASS: envelope gradient vs central differences "
              "(quadratic <= 1e-4, mclr <= 1e-3)")


class TestCriterion3:
    @pytest.mark.parametrize("kind,tol", [("mclr", 1e-5), ("dnn", 1e-4)])
    def test_criterion_3_model_gradients_match_finite_differences(self, kind, tol):
        """Analytic batch gradients agree with central differences on 20
        random coordinates for 5 seeds."""
        worst = 0.0
        for seed in range(5):
            rng = np.random.default_rng(100 + seed)
            spec = ModelSpec(kind, 7, 4, hidden_dim=9)
            params = seeded_init(spec.param_dim, RngStream(seed, 3), "normal")
            batch = Batch(rng.normal(size=(15, 7)), rng.integers(0, 4, size=15).astype(np.int64))
            g = gradient(spec, params, batch)
            coords = rng.choice(spec.param_dim, size=20, replace=False)
            coords, est = fd_gradient(spec, params, batch, coords=coords)
            for j, fd in zip(coords, est):
                rel = abs(g[j] - fd) / max(abs(fd), 1e-10)
                worst = max(worst, rel)
        assert worst <= tol, f"{kind}: worst rel err {worst:.2e}"
        print(f"[criterion 3] PASS: {kind} gradient vs finite differences, "
              f"worst rel err {worst:.2e} <= {tol:g}")

    def test_criterion_3_zero_params_loss_is_log_num_classes(self):
        rng = np.random.default_rng(31)
        for kind in ("mclr", "dnn"):
            for C in (2, 5, 10):
                spec = ModelSpec(kind, 6, C, hidden_dim=8)
                batch = Batch(rng.normal(size=(9, 6)), rng.integers(0, C, size=9).astype(np.int64))
                loss = forward_loss(spec, np.zeros(spec.param_dim), batch)
                assert abs(loss - math.log(C)) <= 1e-12, (kind, C)
        print("[criterion 3] PASS: zero-parameter loss equals ln(C) to 1e-12")


class TestCriterion4:
    def test_criterion_4_zero_pull_fo_reduces_to_plain_prox_strategy(self):
        """pfedbred_fo with trainer.eta_alpha = 0 must reproduce a pfedme
        run exactly: same final model bytes, same metric values, over 10
        rounds with 10 clients."""
        over = {
            "dataset.num_classes": 4,
            "dataset.examples_per_class": 40,
            "dataset.input_dim": 8,
            "dataset.num_clients": 10,
            "dataset.classes_per_client": 2,
            "federation.rounds": 10,
            "federation.local_iters": 5,
            "trainer.batch_size": 8,
            "run.eval_cadence": 1,
        }
        fo = run_experiment(parse_config_text(
            recipe_text("pfedbred_fo", 0, "fo", **{**over, "trainer.eta_alpha": 0})))
        me = run_experiment(parse_config_text(recipe_text("pfedme", 0, "me", **over)))
        w_fo = read_model_dump(fo.model_path)
        w_me = read_model_dump(me.model_path)
        np.testing.assert_array_equal(w_fo, w_me)
        for rep_fo, rep_me in zip(fo.reports, me.reports):
            assert rep_fo.global_accuracy == rep_me.global_accuracy
            assert rep_fo.personalized_accuracy == rep_me.personalized_accuracy
            assert rep_fo.personalized_loss == rep_me.personalized_loss
        print("[criterion 4] PASS: fo(eta_alpha=0) == pfedme bitwise over 10 rounds")


class TestCriterion5:
    def test_criterion_5_same_config_same_bytes(self):
        """Two runs from one resolved config produce byte-identical
        metrics.csv files."""
        text = recipe_text(
            "pfedbred_mg", 3, "det",
            **{"dataset.examples_per_class": 30, "dataset.input_dim": 6,
               "dataset.num_clients": 5, "federation.rounds": 3,
               "federation.local_iters": 3, "trainer.batch_size": 5,
               "run.eval_cadence": 1},
        )
        first = open(run_experiment(parse_config_text(text)).metrics_path, "rb").read()
        second = open(run_experiment(parse_config_text(text)).metrics_path, "rb").read()
        assert first == second
        print("[criterion 5] PASS: rerun metrics.csv is byte-identical")


class TestCriterion6:
    def test_criterion_6_personalization_beats_global_baseline(self):
        """Synthetic benchmark (10 classes, dim 60, 20 clients, 3 classes
        each, 100 rounds, median of 3 seeds): the memory+gradient prior's
        personalized accuracy clears fedavg's global accuracy by at least
        3 points and stays within 0.5 points of pfedme."""
        t0 = time.time()
        finals = {}
        for algo in ("pfedbred_mg", "pfedme", "fedavg"):
            g, p = [], []
            for seed in (0, 1, 2):
                cfg = parse_config_text(recipe_text(algo, seed, f"bench/{algo}/{seed}"))
                rep = run_experiment(cfg).reports[-1]
                g.append(rep.global_accuracy)
                p.append(rep.personalized_accuracy)
            finals[algo] = (float(np.median(g)), float(np.median(p)))
        elapsed = time.time() - t0
        mg_p = finals["pfedbred_mg"][1]
        fedavg_g = finals["fedavg"][0]
        pfedme_p = finals["pfedme"][1]
        assert mg_p >= fedavg_g + 0.03, (
            f"mg personalized {mg_p:.4f} vs fedavg global {fedavg_g:.4f}"
        )
        assert mg_p >= pfedme_p - 0.005, (
            f"mg personalized {mg_p:.4f} vs pfedme personalized {pfedme_p:.4f}"
        )
        assert elapsed < 600.0
        print(f"[criterion 6] PASS: mg {mg_p:.3f} vs fedavg-global {fedavg_g:.3f} "
              f"(need +0.03) and pfedme {pfedme_p:.3f} (need -0.005); {elapsed:.0f}s")


MNIST_DIR = os.environ.get("FEDBREG_MNIST_DIR", "")


class TestCriterion7:
    @pytest.mark.skipif(not MNIST_DIR, reason="FEDBREG_MNIST_DIR not set; real-data check skipped")
    def test_criterion_7_real_digit_benchmark(self):
        """With real digit data on disk: 400 rounds of the standard recipe
        should land mg personalized accuracy near 0.8990 and fedavg global
        accuracy near 0.8696, both within 2 points."""
        paths = {
            "dataset.images_path": os.path.join(MNIST_DIR, "train-images-idx3-ubyte"),
            "dataset.labels_path": os.path.join(MNIST_DIR, "train-labels-idx1-ubyte"),
            "dataset.test_images_path": os.path.join(MNIST_DIR, "t10k-images-idx3-ubyte"),
            "dataset.test_labels_path": os.path.join(MNIST_DIR, "t10k-labels-idx1-ubyte"),
        }
        over = {"dataset.source": "idx", "federation.rounds": 400, "run.eval_cadence": 50}
        over.update(paths)
        mg = run_experiment(parse_config_text(
            recipe_text("pfedbred_mg", 0, "mnist_mg", **over))).reports[-1]
        fedavg = run_experiment(parse_config_text(
            recipe_text("fedavg", 0, "mnist_fedavg", **over))).reports[-1]
        assert abs(mg.personalized_accuracy - 0.8990) <= 0.02
        assert abs(fedavg.global_accuracy - 0.8696) <= 0.02
        print(f"[criterion 7] PASS: mg personalized {mg.personalized_accuracy:.4f}, "
              f"fedavg global {fedavg.global_accuracy:.4f}")


class TestCriterion8:
    def test_criterion_8_deviation_identities(self):
        """On a 5-client fixture: count-weighted local deviations and
        share-weighted global deviations sum to zero per class (1e-12);
        identical models give exactly zero global deviation; a client
        without a class deviates by exactly minus the class mean."""
        spec = ModelSpec("mclr", 4, 3)
        rng = np.random.default_rng(81)
        features = rng.normal(size=(50, 4))
        labels = rng.integers(0, 3, size=50).astype(np.int64)
        labels[:10][labels[:10] == 2] = 1  # client 0 holds no class-2 rows
        shards = [np.arange(10), np.arange(10, 18), np.arange(18, 30),
                  np.arange(30, 42), np.arange(42, 50)]
        params = [seeded_init(spec.param_dim, RngStream(81, 10 + i), "normal") for i in range(5)]

        dev = loss_deviation(spec, params, features, labels, shards, 3)
        for c in range(3):
            lw = dev.local_weights[:, c]
            assert abs(np.dot(lw / lw.sum(), dev.local_deviation[:, c])) <= 1e-12
            assert abs(np.dot(dev.client_weights, dev.global_deviation[:, c])) <= 1e-12
        assert dev.local_weights[0, 2] == 0.0
        assert dev.local_deviation[0, 2] == -dev.local_mean[2]

        same = loss_deviation(spec, [params[0]] * 5, features, labels, shards, 3)
        assert np.all(same.global_deviation == 0.0)
        print("[criterion 8] PASS: deviation identities hold to 1e-12")


class TestCriterion9:
    def test_criterion_9_sample_ratio_sweep_writes_full_summary(self):
        """Sweeping the participation ratio over {0.25, 0.5, 1.0} yields a
        summary CSV with a header and one finite row per value."""
        cfg = parse_config_text(recipe_text(
            "pfedbred_mg", 0, "ratio_sweep",
            **{"dataset.examples_per_class": 30, "dataset.input_dim": 6,
               "dataset.num_clients": 8, "federation.rounds": 3,
               "federation.local_iters": 3, "trainer.batch_size": 5,
               "run.eval_cadence": 1},
        ))
        summary = run_sweep(cfg, "federation.sample_ratio", ["0.25", "0.5", "1.0"])
        with open(summary, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["param", "value", "final_global_acc",
                           "final_personalized_acc", "best_personalized_acc"]
        assert len(rows) == 4
        for row, token in zip(rows[1:], ("0.25", "0.5", "1.0")):
            assert row[0] == "federation.sample_ratio" and row[1] == token
            for cell in row[2:]:
                assert math.isfinite(float(cell))
        print("[criterion 9] PASS: sweep summary has 3 well-formed rows")
