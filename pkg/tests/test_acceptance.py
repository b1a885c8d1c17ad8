"""Acceptance gate: ten criteria with independent oracles and pinned seeds.

Each test prints one pass/fail line (visible even without -s). The Langevin,
joint-sampler and end-to-end training runs are cached in module fixtures so
the determinism criterion can rerun them and compare logs byte for byte.
"""

import hashlib
import time

import numpy as np
import pytest

from jointebm.buffers import InitialDistribution, JointBuffer
from jointebm.data import MixtureSpec, generate_mixture, split_holdout
from jointebm.energy import ConditioningSpec, EnergyModel, MlpBackbone, joint_energy_on_tape
from jointebm.engine import MlpSpec, ParameterSet, Tape, Tensor, backward, init_mlp_params
from jointebm.metrics import PredictionSet, auroc, average_precision, ece, f1
from jointebm.oracles import model_conditional_attr_prob, model_label_masses
from jointebm.samplers import (
    GibbsConfig,
    LangevinConfig,
    SampleBatch,
    internal_consistency,
    langevin_step,
    sample_labels,
    semi_conditional_marginalize,
    semi_conditional_resample,
)
from jointebm.trainer import TrainConfig, train

from helpers import GaussianLogitToy, pair_count_auroc, threshold_sweep_ap


def announce(capsys, num, name, detail):
    with capsys.disabled():
        print(f"\n[ACCEPTANCE] criterion {num} ({name}): PASS ({detail})")


def _sha(arr: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()


# -- criterion 1: gradient correctness ----------------------------------------


def test_criterion_01_gradient_correctness(capsys):
    """Autodiff vs central differences (h=1e-5) on 20 random nets."""
    t0 = time.time()
    h = 1e-5
    rng = np.random.default_rng(1001)
    worst = 0.0
    for _ in range(20):
        dim = int(rng.integers(2, 33))
        k = int(rng.integers(1, 9))
        hidden = tuple(int(rng.integers(4, 17)) for _ in range(int(rng.integers(1, 3))))
        spec = MlpSpec(input_dim=dim, hidden=hidden, num_attributes=k)
        params = init_mlp_params(spec, rng)
        model = EnergyModel(MlpBackbone.from_params(spec, params))
        x0 = rng.random(dim)
        y = rng.integers(0, 2, k)

        tape = Tape()
        x_leaf = Tensor(x0, requires_grad=True)
        out = tape.sum(joint_energy_on_tape(tape, params, spec, x_leaf, y))
        params.clear_grads()
        backward(tape, out)

        def value_x(xs):
            return model.joint_energy(xs, np.broadcast_to(y, (xs.shape[0], k)))

        perturbed = np.repeat(x0[None, :], 2 * dim, axis=0)
        for d in range(dim):
            perturbed[2 * d, d] += h
            perturbed[2 * d + 1, d] -= h
        vals = value_x(perturbed)
        fd_x = (vals[0::2] - vals[1::2]) / (2 * h)
        err = np.abs(x_leaf.grad - fd_x) / np.maximum(np.abs(fd_x), 1.0)
        worst = max(worst, float(err.max()))
        assert np.allclose(x_leaf.grad, fd_x, rtol=1e-6, atol=1e-8)

        for name in params.names():
            theta = params.theta[name].data
            fd = np.zeros_like(theta)
            flat = theta.reshape(-1)
            fdf = fd.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = model.joint_energy(x0, y)
                flat[i] = orig - h
                fm = model.joint_energy(x0, y)
                flat[i] = orig
                fdf[i] = (fp - fm) / (2 * h)
            ad = params.theta[name].grad
            err = np.abs(ad - fd) / np.maximum(np.abs(fd), 1.0)
            worst = max(worst, float(err.max()))
            assert np.allclose(ad, fd, rtol=1e-6, atol=1e-8), name
    elapsed = time.time() - t0
    assert worst < 1e-6
    assert elapsed < 5.0
    announce(capsys, 1, "gradient correctness", f"max rel err {worst:.2e}, {elapsed:.1f}s")


# -- criterion 2: marginalization identities -----------------------------------


def test_criterion_02_marginalization_identity(capsys):
    t0 = time.time()
    rng = np.random.default_rng(1002)
    worst_marg = worst_cond = 0.0
    for _ in range(100):
        k = int(rng.integers(1, 13))
        spec = MlpSpec(input_dim=3, hidden=(6,), num_attributes=k)
        params = init_mlp_params(spec, rng)
        model = EnergyModel(MlpBackbone.from_params(spec, params))
        x = rng.random(3)

        vectors, _ = model.enumerate_label_distribution(x)
        joint = model.joint_energy(np.repeat(x[None, :], len(vectors), axis=0), vectors)
        m = joint.max()
        lse = m + np.log(np.exp(joint - m).sum())
        worst_marg = max(worst_marg, abs(model.marginal_energy(x) - lse))

        y = rng.integers(0, 2, k)
        p = model.label_conditional(x)
        log_cond = float(np.where(y == 1, np.log(p), np.log1p(-p)).sum())
        gap = model.joint_energy(x, y) - model.marginal_energy(x)
        worst_cond = max(worst_cond, abs(gap - log_cond))
    elapsed = time.time() - t0
    assert worst_marg < 1e-9
    assert worst_cond < 1e-9
    assert elapsed < 10.0
    announce(
        capsys, 2, "marginalization identity",
        f"marginal gap {worst_marg:.2e}, conditional gap {worst_cond:.2e}, {elapsed:.1f}s",
    )


# -- criterion 3: semi-conditional boundaries ----------------------------------


def test_criterion_03_semiconditional_boundaries(capsys):
    t0 = time.time()
    rng = np.random.default_rng(1003)
    worst = 0.0
    for _ in range(100):
        k = int(rng.integers(1, 9))
        spec = MlpSpec(input_dim=2, hidden=(5,), num_attributes=k)
        params = init_mlp_params(spec, rng)
        model = EnergyModel(MlpBackbone.from_params(spec, params))
        x = rng.random(2)
        y = rng.integers(0, 2, k)
        full_gap = abs(
            model.semi_conditional_energy(x, ConditioningSpec.full(y))
            - model.joint_energy(x, y)
        )
        empty_gap = abs(
            model.semi_conditional_energy(x, ConditioningSpec.empty(k))
            - model.marginal_energy(x)
        )
        worst = max(worst, full_gap, empty_gap)
    assert worst < 1e-12
    announce(
        capsys, 3, "semi-conditional boundaries",
        f"max boundary gap {worst:.2e}, {time.time() - t0:.1f}s",
    )


# -- criterion 4: Langevin stationarity ----------------------------------------

CRIT4_SEED = 2040


def _run_criterion4():
    t0 = time.time()
    eps, lam = 0.1, 0.05
    cfg = LangevinConfig(step_size=eps, temperature=lam, clamp=False, noise=True)
    a = 1.0 - cfg.grad_coef
    target = eps**2 / (1.0 - a**2)

    def grad_fn(x):
        return -0.5 * (x**2).sum(axis=1), -x

    rng = np.random.default_rng(CRIT4_SEED)
    burn = 10_000
    n = 1_000_000
    x = np.zeros((1, 1))
    samples = np.empty(n)
    for t in range(burn + n):
        x, _, _ = langevin_step(x, grad_fn, cfg, rng)
        if t >= burn:
            samples[t - burn] = x[0, 0]
    var = float(samples.var())
    se = target * np.sqrt(2.0 / n * (1 + a**2) / (1 - a**2))
    log = f"var={var!r} first={samples[:3]!r} last={samples[-3:]!r} sha={_sha(samples)}"
    return {
        "var": var,
        "target": target,
        "se": se,
        "log": log,
        "seconds": time.time() - t0,
    }


@pytest.fixture(scope="module")
def crit4():
    return _run_criterion4()


def test_criterion_04_langevin_stationarity(capsys, crit4):
    gap = abs(crit4["var"] - crit4["target"])
    assert gap < 3.0 * crit4["se"]
    assert crit4["seconds"] < 30.0
    announce(
        capsys, 4, "Langevin stationarity",
        f"variance {crit4['var']:.5f} vs {crit4['target']:.5f} "
        f"(|gap| {gap:.2e} < 3se {3 * crit4['se']:.2e}), {crit4['seconds']:.1f}s",
    )


# -- criterion 5: LWG label marginals ------------------------------------------

CRIT5_SWEEPS = 50_000
CRIT5_BURN = 1_000


def _toy_k1(delta):
    centers = np.array([[[0.4], [0.6]]])
    return EnergyModel(
        GaussianLogitToy(centers, np.full((1, 2), 0.15), np.array([[0.0, delta]]))
    )


def _toy_k2():
    centers = np.zeros((2, 2, 1))
    centers[0, 0, 0], centers[0, 1, 0] = 0.4, 0.6
    centers[1, 0, 0], centers[1, 1, 0] = 0.45, 0.55
    offsets = np.array([[0.0, 0.2], [0.0, -0.3]])
    return EnergyModel(GaussianLogitToy(centers, np.full((2, 2), 0.15), offsets))


def _label_trace(model, spec, seed):
    lc = LangevinConfig(step_size=0.08, temperature=1.0, clamp=True, noise=True)
    rng = np.random.default_rng(seed)
    init = SampleBatch(np.array([[0.5]]), np.zeros((1, model.num_attributes), dtype=np.int64))
    rows = []

    def trace(t, x, y):
        if t >= CRIT5_BURN:
            rows.append(y[0].copy())

    semi_conditional_resample(
        model, spec, init, GibbsConfig(sweeps=CRIT5_SWEEPS + CRIT5_BURN), lc, rng,
        trace=trace,
    )
    return np.array(rows)


def _run_criterion5():
    t0 = time.time()
    results = {}

    sym = _toy_k1(0.0)
    _, masses = model_label_masses(sym, 0.0, 1.0)
    ys = _label_trace(sym, ConditioningSpec.empty(1), seed=2024)
    results["symmetric"] = (float(ys[:, 0].mean()), float(masses[1]), _sha(ys))

    asym = _toy_k1(0.7)
    _, masses = model_label_masses(asym, 0.0, 1.0)
    ys = _label_trace(asym, ConditioningSpec.empty(1), seed=2025)
    results["asymmetric"] = (float(ys[:, 0].mean()), float(masses[1]), _sha(ys))

    pinned = _toy_k2()
    spec = ConditioningSpec(2, (0,), (1,))
    w = model_conditional_attr_prob(pinned, spec, 1, 0.0, 1.0)
    ys = _label_trace(pinned, spec, seed=2026)
    assert (ys[:, 0] == 1).all()  # the pinned attribute never moves
    results["pinned_free"] = (float(ys[:, 1].mean()), float(w), _sha(ys))

    log = repr(sorted((k, v[0], v[1], v[2]) for k, v in results.items()))
    return {"results": results, "log": log, "seconds": time.time() - t0}


@pytest.fixture(scope="module")
def crit5():
    return _run_criterion5()


def test_criterion_05_lwg_label_marginals(capsys, crit5):
    details = []
    for name, (emp, target, _) in crit5["results"].items():
        assert abs(emp - target) < 0.03, name
        details.append(f"{name} {emp:.3f} vs {target:.3f}")
    assert crit5["seconds"] < 120.0
    announce(
        capsys, 5, "LWG label marginals",
        "; ".join(details) + f", {crit5['seconds']:.1f}s",
    )


# -- criterion 6: metric oracle equivalence ------------------------------------


def test_criterion_06_metric_oracles(capsys):
    t0 = time.time()
    rng = np.random.default_rng(1006)
    worst = 0.0
    checked = 0
    while checked < 50:
        n = int(rng.integers(5, 201))
        scores = rng.choice(np.linspace(0.05, 0.95, 7), size=n)
        labels = rng.integers(0, 2, n)
        if labels.sum() in (0, n):
            continue
        checked += 1
        p = PredictionSet(scores[:, None], labels[:, None], ["a"])
        worst = max(worst, abs(auroc(p, "micro") - pair_count_auroc(scores, labels)))
        worst = max(
            worst, abs(average_precision(p, "micro") - threshold_sweep_ap(scores, labels))
        )
    assert worst < 1e-12

    n = 100_000
    conf = rng.uniform(0.5, 1.0, n)
    labels = (rng.random(n) < conf).astype(np.int64)
    calib = ece(PredictionSet(conf[:, None], labels[:, None], ["a"]), "micro")
    assert calib < 0.01

    conf_a = np.concatenate([np.full(80, 0.9), np.full(20, 0.1)])
    lab_a = np.concatenate([np.ones(80, int), np.zeros(20, int)])
    conf_b = np.concatenate([np.full(2, 0.1), np.full(98, 0.9)])
    lab_b = np.concatenate([np.ones(2, int), np.zeros(98, int)])
    p = PredictionSet(
        np.stack([conf_a, conf_b], axis=1), np.stack([lab_a, lab_b], axis=1), ["a", "b"]
    )
    assert abs(f1(p, "micro") - f1(p, "macro")) > 0.05

    elapsed = time.time() - t0
    assert elapsed < 10.0
    announce(
        capsys, 6, "metric oracle equivalence",
        f"max oracle gap {worst:.2e}, calibrated ece {calib:.4f}, {elapsed:.1f}s",
    )


# -- criterion 7: buffer laws ----------------------------------------------------


def test_criterion_07_buffer_laws(capsys):
    from scipy import stats

    t0 = time.time()
    rng = np.random.default_rng(1007)
    buf = JointBuffer(40, reinit_rate=0.05)
    buf.write_back(SampleBatch(rng.random((40, 2)), np.zeros((40, 2), dtype=np.int64)))
    p0 = InitialDistribution(
        np.zeros(2), np.ones(2), lambda x, r: np.ones((x.shape[0], 2), dtype=np.int64)
    )
    n = 10_000
    batch = buf.draw_init_batch(n, p0, rng)
    fresh = int((batch.y == 1).all(axis=1).sum())
    sigma = np.sqrt(n * 0.05 * 0.95)
    assert abs(fresh - n * 0.05) < 3 * sigma

    capacity, pushes, runs, bins = 100, 10_000, 50, 20
    counts = np.zeros(bins)
    for _ in range(runs):
        res = JointBuffer(capacity, mode="reservoir")
        for i in range(pushes):
            v = (i + 0.5) / pushes
            res.reservoir_update(SampleBatch(np.array([[v]]), np.array([[0]]))[0], rng)
        counts += np.histogram(res.contents().x[:, 0], bins=bins, range=(0, 1))[0]
    expected = runs * capacity / bins
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    crit = float(stats.chi2.ppf(0.99, bins - 1))
    assert chi2 < crit

    elapsed = time.time() - t0
    assert elapsed < 10.0
    announce(
        capsys, 7, "buffer laws",
        f"fresh {fresh}/{n} (3sig {3 * sigma:.0f}), chi2 {chi2:.1f} < {crit:.1f}, "
        f"{elapsed:.1f}s",
    )


# -- criteria 8 and 9: end-to-end training --------------------------------------

CRIT8_SINGLE_CONDITIONS = [(0, 0), (0, 1), (1, 0), (1, 1)]


def _acceptance_mixture():
    return MixtureSpec.corner_grid(dim=2, num_attributes=2, sigma=0.05)


def _train_config(iterations, seed, eval_every):
    return TrainConfig(
        iterations=iterations,
        batch_size=64,
        learning_rate=1e-3,
        ema_mu=0.999,
        kl_weight=0.3,
        eval_every=eval_every,
        seed=seed,
        langevin=LangevinConfig(step_size=0.01, temperature=1.0 / 20000.0),
        gibbs=GibbsConfig(sweeps=40, inner_steps=1),
        buffer_capacity=2000,
        buffer_reinit=0.05,
    )


def _consistency(model, p0, cond, sampler, rng, n=100, sweeps=200):
    lc = LangevinConfig(step_size=0.01, temperature=1.0 / 20000.0)
    init = p0.draw(n, rng)
    res = sampler(model, cond, init, GibbsConfig(sweeps=sweeps), lc, rng)
    return internal_consistency(model, SampleBatch(res.x, res.y), cond)


def _run_criterion8():
    t0 = time.time()
    ds = generate_mixture(_acceptance_mixture(), 4000, np.random.default_rng(0))
    spec = MlpSpec(input_dim=2, hidden=(32, 32), num_attributes=2)
    state = train(ds, spec, _train_config(4000, seed=1, eval_every=100))
    assert not state.diverged, state.diverged_reason

    model = EnergyModel(MlpBackbone.from_params(spec, ParameterSet(state.selected_ema())))
    rng = np.random.default_rng(123)
    p0 = InitialDistribution(state.p0.low, state.p0.high, lambda x, r: sample_labels(model, x, r))
    consistency = {}
    for method_name, sampler in (
        ("resample", semi_conditional_resample),
        ("marginalize", semi_conditional_marginalize),
    ):
        for k, v in CRIT8_SINGLE_CONDITIONS:
            cond = ConditioningSpec(2, (k,), (v,))
            consistency[(method_name, k, v)] = _consistency(model, p0, cond, sampler, rng)
    log = repr(state.log_rows) + repr(state.accuracy_history) + repr(sorted(consistency.items()))
    return {
        "accuracy": state.best_accuracy,
        "consistency": consistency,
        "log": log,
        "seconds": time.time() - t0,
    }


@pytest.fixture(scope="module")
def crit8():
    return _run_criterion8()


def test_criterion_08_end_to_end_training(capsys, crit8):
    assert crit8["accuracy"] >= 0.95
    for key, value in crit8["consistency"].items():
        assert value >= 0.90, key
    assert crit8["seconds"] < 600.0
    lo = min(crit8["consistency"].values())
    announce(
        capsys, 8, "end-to-end joint training",
        f"val accuracy {crit8['accuracy']:.3f}, min consistency {lo:.2f} over "
        f"{len(crit8['consistency'])} condition/method pairs, {crit8['seconds']:.0f}s",
    )


def test_criterion_09_novel_combination(capsys):
    t0 = time.time()
    ds = generate_mixture(_acceptance_mixture(), 4000, np.random.default_rng(0))
    held = ConditioningSpec(2, (0, 1), (1, 1))
    ds = split_holdout(ds, [held])
    spec = MlpSpec(input_dim=2, hidden=(8,), num_attributes=2)
    state = train(ds, spec, _train_config(3000, seed=4, eval_every=50))
    assert not state.diverged, state.diverged_reason

    model = EnergyModel(MlpBackbone.from_params(spec, ParameterSet(state.selected_ema())))
    rng = np.random.default_rng(321)
    p0 = InitialDistribution(state.p0.low, state.p0.high, lambda x, r: sample_labels(model, x, r))
    values = {}
    for method_name, sampler in (
        ("resample", semi_conditional_resample),
        ("marginalize", semi_conditional_marginalize),
    ):
        values[method_name] = _consistency(model, p0, held, sampler, rng)
        assert values[method_name] >= 0.80, method_name
    elapsed = time.time() - t0
    assert elapsed < 600.0
    announce(
        capsys, 9, "novel-combination synthesis",
        f"held-out (1,1) consistency resample {values['resample']:.2f} / "
        f"marginalize {values['marginalize']:.2f}, {elapsed:.0f}s",
    )


# -- criterion 10: determinism ----------------------------------------------------


def test_criterion_10_determinism(capsys, crit4, crit5, crit8):
    t0 = time.time()
    assert _run_criterion4()["log"] == crit4["log"]
    assert _run_criterion5()["log"] == crit5["log"]
    assert _run_criterion8()["log"] == crit8["log"]
    announce(
        capsys, 10, "determinism",
        f"criteria 4, 5, 8 reruns bit-identical, {time.time() - t0:.0f}s",
    )
