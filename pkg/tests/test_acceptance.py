"""Acceptance criteria, one test each. Every test prints a PASS/FAIL line in the summary."""
import time
from contextlib import contextmanager

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, random_net
from samrl import basins, harness
from samrl.corruption import (CorruptionConfig, corrupt_adversarial_obs, corrupt_random_mixture, corrupt_random_obs,
                              n_corrupted, pgd_attack, pretrained_q)
from samrl.envs_data import POINT_MASS, Dataset, DatasetStats, generate_dataset
from samrl.landscape import evaluate_surface, filter_normalized_directions, flatness_summary, v_loss_evaluator
from samrl.nn_core import MlpSpec, backward, finite_diff_check, forward, init_params
from samrl.optim import AdamState, SamProtocolError, SamState
from samrl.rl_iql import (IqlConfig, ensemble_quantile, expectile_loss, huber_loss, train)

# criterion 7/8 setting
C7_SEEDS = (0, 1, 2, 3, 4)
C7_STEPS = 2000
C7_RHO = harness.TOY_RHO[("iql", "point_mass_2d")]["random"]


@contextmanager
def criterion(n: int, limit_s: float, title: str):
    """Collects booleans and details; records one summary line and fails the test if any check failed."""
    checks: list[tuple[str, bool]] = []
    t0 = time.perf_counter()
    try:
        yield checks
    finally:
        dt = time.perf_counter() - t0
        checks.append((f"runtime {dt:.1f}s < {limit_s:.0f}s", dt < limit_s))
        ok = all(c[1] for c in checks)
        detail = "; ".join(f"{name}{'' if good else ' [FAILED]'}" for name, good in checks)
        ACCEPTANCE_LINES.append(f"CRITERION {n}: {'PASS' if ok else 'FAIL'} - {title} - {detail}")
    assert ok, detail


def _pre_activations(spec, params, x):
    """Every pre-activation of the hidden layers plus the raw output, by a plain matmul loop."""
    segs = params.segments()
    h, pres = x, []
    for k in range(len(segs) // 2):
        z = h @ segs[2 * k].T + segs[2 * k + 1]
        pres.append(z)
        h = np.maximum(z, 0) if spec.activation == "relu" else np.tanh(z)
    return pres


def _smooth_instance(rng):
    """A random net, batch and loss whose pre-activations stay clear of the relu kink and the log-std clamp."""
    while True:
        head = "gaussian_policy" if rng.random() < 0.3 else "linear"
        spec, params = random_net(rng, head=head)
        x = rng.standard_normal((int(rng.integers(1, 6)), spec.input_dim))
        pres = _pre_activations(spec, params, x)
        hidden_ok = spec.activation == "tanh" or all(np.abs(z).min() > 1e-2 for z in pres[:-1])
        out = pres[-1]
        clamp_ok = head == "linear" or np.all((out[:, spec.output_dim:] > -4.9) & (out[:, spec.output_dim:] < 1.9))
        if hidden_ok and clamp_ok:
            break
    kind = rng.choice(["linear", "square"])
    w = rng.standard_normal((x.shape[0], spec.n_outputs))

    def closure(p):
        y = forward(spec, p, x)
        if kind == "linear":
            return float(np.sum(w * y)), backward(spec, p, x, w)
        r = y - w
        return 0.5 * float(np.sum(r * r)), backward(spec, p, x, r)

    return spec, params, closure


def test_c1_gradient_correctness():
    with criterion(1, 10, "backprop vs central differences on 100 random instances") as checks:
        rng = np.random.default_rng(2024)
        worst = 0.0
        for _ in range(100):
            spec, params, closure = _smooth_instance(rng)
            worst = max(worst, finite_diff_check(spec, params, closure, h=1e-4))
        checks.append((f"max rel err {worst:.2e} <= 1e-5", worst <= 1e-5))


def test_c2_sam_mechanics():
    with criterion(2, 5, "SAM mechanics") as checks:
        ds = generate_dataset(POINT_MASS, "replay_mix", 300, seed=0)
        plain, _ = train(ds, IqlConfig(hidden=(16,), steps=40, batch_size=32), seed=1)
        zero, _ = train(ds, IqlConfig(hidden=(16,), steps=40, batch_size=32, sam_targets="V", rho=0.0), seed=1)
        every, _ = train(ds, IqlConfig(hidden=(16,), steps=40, batch_size=32, sam_targets="AQV", rho=0.0), seed=1)
        same = plain.all_params().values.tobytes() == zero.all_params().values.tobytes() == \
            every.all_params().values.tobytes()
        checks.append(("(a) rho=0 training bit-identical to Adam", same))
        rng = np.random.default_rng(7)
        err = 0.0
        for _ in range(1000):
            dim = int(rng.integers(1, 200))
            rho = float(rng.uniform(1e-3, 5.0))
            g = rng.standard_normal(dim) * 10.0 ** rng.uniform(-6, 6)
            theta = rng.standard_normal(dim)
            start = theta.copy()
            SamState(AdamState(dim), rho=rho).first_step(theta, g)
            err = max(err, abs(np.linalg.norm(theta - start) - rho))
        checks.append((f"(b) max | ||eps|| - rho | = {err:.1e} <= 1e-10", err <= 1e-10))
        rejected = 0
        sam = SamState(AdamState(2), rho=0.1)
        theta = np.ones(2)
        for call in (lambda: sam.second_step(theta, np.ones(2)),
                     lambda: (sam.first_step(theta, np.ones(2)), sam.first_step(theta, np.ones(2)))):
            try:
                call()
            except SamProtocolError:
                rejected += 1
        sam.second_step(theta, np.ones(2))
        checks.append((f"(c) {rejected}/2 protocol violations rejected", rejected == 2 and sam.phase == "ready"))


def basin_oracle():
    xs = np.linspace(-6.0, 4.0, 200001)
    L = basins.loss(xs)
    interior = np.flatnonzero((L[1:-1] < L[:-2]) & (L[1:-1] < L[2:])) + 1
    lo, hi = interior[0], interior[-1]
    return xs[lo], xs[hi], xs[lo + np.argmax(L[lo:hi])]


def test_c3_basin_selection():
    with criterion(3, 5, "two-basin loss, Adam sharp vs SAM flat") as checks:
        flat_min, sharp_min, ridge = basin_oracle()
        adam = [basins.optimize(None, s) for s in range(10)]
        sam = [basins.optimize(basins.FLAT_RHO, s) for s in range(10)]
        n_sharp = sum(x > ridge for x in adam)
        n_flat = sum(x < ridge for x in sam)
        checks.append((f"ridge at {ridge:.3f} between minima {flat_min:.3f}, {sharp_min:.3f}", True))
        checks.append((f"Adam sharp basin {n_sharp}/10", n_sharp == 10))
        checks.append((f"SAM(rho={basins.FLAT_RHO}) flat basin {n_flat}/10", n_flat == 10))


def test_c4_corruption_fidelity():
    with criterion(4, 30, "corruption masks, bounds, symmetry, PGD") as checks:
        ds = generate_dataset(POINT_MASS, "replay_mix", 1000, seed=3)
        sizes_ok = True
        for c in (0.2, 0.3, 0.4, 0.5, 0.25, 0.333):
            _, masks = corrupt_random_mixture(ds, CorruptionConfig(rate=c, elements="mixture", seed=1))
            sizes_ok &= all(len(m) == n_corrupted(c, 1000) == len(np.unique(m)) for m in masks.values())
        checks.append(("mask sizes round(c*N)", sizes_ok))
        out, masks = corrupt_random_obs(ds, CorruptionConfig(rate=0.3, seed=2))
        checks.append(("|s_hat - s| <= eps*std(S)", bool(np.all(np.abs(out.s - ds.s) <= ds.stats.std_s))))
        n = 100_000
        std = np.array([0.5, 1.0, 2.0, 4.0])
        flat = Dataset(np.zeros((n, 4)), np.zeros((n, 1)), np.zeros(n), np.zeros((n, 4)), np.zeros(n),
                       DatasetStats(std, np.ones(1), 1.0), {})
        noisy, _ = corrupt_random_obs(flat, CorruptionConfig(rate=1.0, eps=1.0, seed=3))
        lam = noisy.s / std
        z = np.abs(lam.mean(axis=0)) / (1.0 / np.sqrt(3.0) / np.sqrt(n))
        checks.append((f"noise mean within 3 sigma (max |z|={z.max():.2f}), range in [-eps, eps]",
                       bool(z.max() <= 3.0 and lam.min() >= -1.0 and lam.max() <= 1.0)))
        spec = MlpSpec(6, (32, 32), 1)
        rng = np.random.default_rng(0)
        q = pretrained_q(spec, [init_params(spec, rng) for _ in range(2)])
        adv, am = corrupt_adversarial_obs(ds, CorruptionConfig(mode="adversarial", rate=0.3, seed=4), None, q)
        i = am["observation"]
        r = ds.stats.std_s
        box = bool(np.all((adv.s >= ds.s - r) & (adv.s <= ds.s + r)))
        descent = float(np.mean(q(adv.s[i], ds.a[i])[0] <= q(ds.s[i], ds.a[i])[0]))
        checks.append(("PGD box projection exact", box))
        checks.append((f"Q_p descent on {100 * descent:.0f}% of attacked transitions", descent == 1.0))
        w = np.array([0.7, -1.3, 2.0, -0.1])
        s = rng.standard_normal((50, 4))
        corner, _ = pgd_attack(lambda x, a: (x @ w, np.broadcast_to(w, x.shape).copy()), s, None, r, 20, 0.1)
        checks.append(("linear-Q PGD reaches the analytic corner",
                       bool(np.max(np.abs(corner - (s - r * np.sign(w)))) <= 1e-12)))


def test_c5_algorithm_fidelity():
    with criterion(5, 5, "train_step order and gradient counts") as checks:
        ds = generate_dataset(POINT_MASS, "replay_mix", 300, seed=0)
        steps = 10
        for targets, v_per_step in (("", 1), ("V", 2)):
            trace = []
            train(ds, IqlConfig(hidden=(16,), steps=steps, batch_size=32, sam_targets=targets, rho=0.1), 0, trace)
            updates = [e[1] for e in trace if e[0] in ("update", "target")]
            order_ok = updates == ["Q", "A", "V", "Q"] * steps
            kinds = [(e[0], e[1]) for e in trace if e[0] != "grad" or e[1] != "V"]
            v_calls = [e[2] for e in trace if e == ("grad", "V", e[2])]
            count_ok = len(v_calls) == v_per_step * steps
            same_batch = all(np.array_equal(a, b) for a, b in zip(v_calls[::2], v_calls[1::2])) if v_per_step == 2 else True
            label = "{" + targets + "}" if targets else "{}"
            checks.append((f"sam_targets={label}: order Q->A->V->targets", order_ok))
            checks.append((f"sam_targets={label}: {len(v_calls) // steps} V gradient(s) per step", count_ok))
            if v_per_step == 2:
                checks.append(("second V gradient on the identical batch", same_batch))


def test_c6_loss_identities():
    with criterion(6, 5, "loss identities") as checks:
        rng = np.random.default_rng(5)
        u = rng.standard_normal(10_000) * 10
        checks.append(("expectile tau=0.5 = half-MSE", bool(np.allclose(expectile_loss(u, 0.5), 0.5 * u * u, rtol=1e-15, atol=0))))
        taus = rng.uniform(0, 1, u.size)
        checks.append(("expectile asymmetry", bool(np.allclose(expectile_loss(u, taus) + expectile_loss(-u, taus), u * u,
                                                               rtol=1e-12, atol=0))))
        worst = 0.0
        for d in (0.1, 1.0, 3.0):
            for sgn in (-1, 1):
                inside, outside = huber_loss(sgn * d * (1 - 1e-13), d), huber_loss(sgn * d * (1 + 1e-13), d)
                worst = max(worst, abs(inside - outside), abs(huber_loss(sgn * d, d) - 0.5 * d * d))
        checks.append((f"Huber continuous at |u|=delta (gap {worst:.1e})", worst <= 1e-10))
        err = 0.0
        for _ in range(1000):
            k = int(rng.integers(1, 12))
            vals = rng.standard_normal(k) * 5
            alpha = float(rng.uniform())
            srt = np.sort(vals)
            pos = alpha * (k - 1)
            lo = int(np.floor(pos))
            hi = min(lo + 1, k - 1)
            oracle = srt[lo] + (pos - lo) * (srt[hi] - srt[lo])
            err = max(err, abs(ensemble_quantile(vals, alpha) - oracle))
        checks.append((f"quantile vs sort-interpolate on 1000 ensembles (max err {err:.1e})", err <= 1e-12))


# --- directional desk-scale checks ------------------------------------------------------------

@pytest.fixture(scope="module")
def paired_runs(tmp_path_factory):
    out = tmp_path_factory.mktemp("paired")
    base = harness.ExperimentConfig.from_mapping({
        "env": "point_mass_2d", "behavior": "replay_mix", "corruption.mode": "random",
        "corruption.elements": "observation", "corruption.rate": "0.3", "train.steps": str(C7_STEPS),
        "seeds": ",".join(map(str, C7_SEEDS)), "output_dir": str(out), "probe.samples": "64",
        "probe.rho": repr(C7_RHO),
    })
    sam = base.with_sam("V", C7_RHO)
    t0 = time.perf_counter()
    naive_tab, sam_tab = harness.run_many([base, sam])
    elapsed = time.perf_counter() - t0
    pairs = []
    for seed in C7_SEEDS:
        data, _, _ = harness.prepare_data(base, seed)
        agents = [harness.load_agent(out / c.config_hash() / str(seed)) for c in (base, sam)]
        pairs.append((seed, data, agents))
    return {"base": base, "sam": sam, "naive_scores": naive_tab.rows[0].scores, "sam_scores": sam_tab.rows[0].scores,
            "pairs": pairs, "train_seconds": elapsed}


def test_c7_directional_scores(paired_runs):
    with criterion(7, 300, f"IQL vs IQL+SAM(V, rho={C7_RHO}) on corrupted point_mass_2d") as checks:
        t0 = time.perf_counter()
        base = paired_runs["base"]
        sharp = []
        for seed, data, (naive, sam) in paired_runs["pairs"]:
            s_n = harness.v_sharpness(naive, data, base.train, C7_RHO, 64, seed)
            s_s = harness.v_sharpness(sam, data, base.train, C7_RHO, 64, seed)
            sharp.append((s_n, s_s))
        wins = sum(s < n for n, s in sharp)
        checks.append((f"(a) V sharpness lower with SAM in {wins}/5 seeds "
                       f"({', '.join(f'{n:.4f}->{s:.4f}' for n, s in sharp)})", wins >= 4))
        n_mean = float(np.mean(paired_runs["naive_scores"]))
        s_mean = float(np.mean(paired_runs["sam_scores"]))
        checks.append((f"(b) mean score IQL {n_mean:.2f}, IQL+SAM {s_mean:.2f}: within 2 points",
                       s_mean >= n_mean - 2.0))
        checks.append((f"(b) paired mean difference {s_mean - n_mean:+.2f} > 0", s_mean > n_mean))
        # the training runs count toward this criterion's budget
        paired_runs["c7_seconds"] = paired_runs["train_seconds"] + time.perf_counter() - t0
        checks.append((f"training + probes {paired_runs['c7_seconds']:.0f}s < 300s", paired_runs["c7_seconds"] < 300))


def test_c8_surface_diagnostics(paired_runs):
    with criterion(8, 300, "V-loss surface flatness, SAM vs IQL") as checks:
        cfg = paired_runs["base"].train
        range_wins = grad_wins = 0
        fidelity = 0.0
        details = []
        for seed, data, agents in paired_runs["pairs"]:
            idx = np.random.default_rng(seed).choice(len(data), 1024, replace=False)
            batch = data.batch(np.sort(idx))
            summaries = []
            for nets in agents:
                evaluator = v_loss_evaluator(nets, batch, cfg)
                d1, d2 = filter_normalized_directions(nets.v, seed)
                grid = evaluate_surface(evaluator, nets.v, d1, d2, 1.0, 31)
                fidelity = max(fidelity, abs(grid.center_value - evaluator(nets.v)))
                summaries.append(flatness_summary(grid))
            n, s = summaries
            range_wins += s.range < n.range
            grad_wins += s.mean_abs_gradient < n.mean_abs_gradient
            details.append(f"{n.range:.3g}->{s.range:.3g}")
        checks.append((f"range lower with SAM in {range_wins}/5 ({', '.join(details)})", range_wins >= 4))
        checks.append((f"mean_abs_gradient lower with SAM in {grad_wins}/5", grad_wins >= 4))
        checks.append((f"centre fidelity {fidelity:.1e} <= 1e-10", fidelity <= 1e-10))


def test_c9_sweep_axes(tmp_path):
    with criterion(9, 900, "sweep tables for rho x component, batch size, rate, range") as checks:
        base = harness.ExperimentConfig.from_mapping({
            "dataset.size": "1000", "train.steps": "40", "train.hidden": "32,32", "eval.episodes": "5",
            "probe.samples": "4", "seeds": "0,1,2", "output_dir": str(tmp_path)})
        specs = [("rho", harness.RHO_GRID, "sam_component", harness.COMPONENT_GRID),
                 ("batch_size", harness.BATCH_GRID, None, ()),
                 ("corruption_rate", harness.RATE_GRID, None, ()),
                 ("corruption_range", harness.RANGE_GRID, None, ())]
        for axis, values, by, by_values in specs:
            out = tmp_path / f"{axis}.csv"
            table = harness.run_sweep(base.with_sam("V", 0.1), axis, values, by, by_values, out_path=out)
            n_cells = len(values) * max(1, len(by_values))
            n_base = len(values) if axis.startswith("corruption") else 1
            shape_ok = len(table.cells) == n_cells and len(table.baselines) == n_base
            text = out.read_text().splitlines()
            n_impr = sum(line.startswith("improvement,") for line in text)
            impr_ok = n_impr == max(1, len(by_values)) and text[0].startswith("# config_hash=")
            stats_ok = True
            for c in table.cells + table.baselines:
                v = np.asarray(c.scores)
                stats_ok &= abs(c.mean - v.mean()) <= 1e-12
                stats_ok &= abs(c.std - np.sqrt(((v - v.mean()) ** 2).sum() / (len(v) - 1))) <= 1e-12
            for bv in table.by_values:
                col = np.mean([c.mean for c in table.cells if c.by_value == bv])
                stats_ok &= abs(table.improvement(bv) - (col - np.mean([b.mean for b in table.baselines]))) <= 1e-12
            checks.append((f"{axis}{' x ' + by if by else ''}: {len(table.cells)} cells, {len(table.baselines)} "
                           f"baseline(s), {n_impr} improvement row(s)", shape_ok and impr_ok))
            checks.append((f"{axis}: statistics recomputable to 1e-12", bool(stats_ok)))


def _tree(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_c10_determinism_and_provenance(tmp_path):
    with criterion(10, 120, "byte-identical reruns and hash-checked aggregation") as checks:
        m = {"dataset.size": "500", "train.steps": "30", "train.hidden": "16", "eval.episodes": "3",
             "probe.samples": "4", "seeds": "0,1"}
        for mode in ("random", "adversarial"):
            cfgs = [harness.ExperimentConfig.from_mapping(dict(m, output_dir=str(tmp_path / f"{mode}{k}"),
                                                                **{"corruption.mode": mode, "sam.targets": "V"}))
                    for k in (0, 1)]
            for c in cfgs:
                harness.run_experiment(c)
            trees = [_tree(tmp_path / f"{mode}{k}") for k in (0, 1)]
            checks.append((f"{mode}: {len(trees[0])} files byte-identical across reruns",
                           trees[0] == trees[1] and len(trees[0]) > 10))
        a = harness.ExperimentConfig.from_mapping(dict(m, output_dir=str(tmp_path / "p")))
        b = a.evolve(**{"train.lr": "0.001"})
        harness.run_many([a, b])
        refused = False
        try:
            harness.report([tmp_path / "p" / a.config_hash(), tmp_path / "p" / b.config_hash()])
        except harness.ProvenanceError:
            refused = True
        checks.append(("mismatched config hashes refused", refused))
        scores = tmp_path / "p" / a.config_hash() / "scores.csv"
        scores.write_text(scores.read_text().replace(a.config_hash(), "0" * 12, 1))
        tampered = False
        try:
            harness.report([tmp_path / "p" / a.config_hash()])
        except harness.ProvenanceError:
            tampered = True
        checks.append(("tampered hash refused", tampered))
