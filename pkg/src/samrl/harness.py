"""Experiment driver: configs, seeded runs, sweeps and mean/std result tables.

Config files are flat ``key = value`` text with dotted section keys::

    env = point_mass_2d
    algorithm = iql
    sam.targets = V
    sam.rho = 0.1
    corruption.rate = 0.3
    train.steps = 2000
    seeds = 0,1,2

Per-seed artifacts go to ``<output_dir>/<config_hash>/<seed>/``. The hash covers
every field except ``seeds`` and ``output_dir``, so adding a seed never moves
the artifacts of the others. Every text artifact starts with a
``# config_hash=...`` line.
"""
from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .corruption import ELEMENTS, CorruptionConfig, corrupt, save_masks
from .envs_data import ENVS, Dataset, evaluate_policy, generate_dataset, make_env, normalized_score
from .nn_core import ParamVector, load_params, save_params
from .optim import sharpness_probe
from .rl_iql import (COMPONENTS, METRIC_FIELDS, AgentNets, IqlConfig, RiqlConfig, components_label, make_agent,
                     parse_components, train, v_loss)

log = logging.getLogger(__name__)

# Neighbourhood radii used on the D4RL benchmarks, kept as reference values.
BENCHMARK_RHO = {
    ("iql", "halfcheetah"): {"random": 1.0, "adversarial": 1.0},
    ("iql", "walker2d"): {"random": 0.5, "adversarial": 0.1},
    ("iql", "hopper"): {"random": 0.1, "adversarial": 0.5},
    ("riql", "halfcheetah"): {"random": 1.0, "adversarial": 0.1},
    ("riql", "walker2d"): {"random": 0.1, "adversarial": 0.1},
    ("riql", "hopper"): {"random": 1.0, "adversarial": 1.0},
}
# Radii tuned for the toy environments.
TOY_RHO = {
    ("iql", "point_mass_2d"): {"random": 0.1, "adversarial": 0.1},
    ("riql", "point_mass_2d"): {"random": 0.1, "adversarial": 0.1},
    ("iql", "pendulum_lite"): {"random": 0.1, "adversarial": 0.1},
    ("riql", "pendulum_lite"): {"random": 0.1, "adversarial": 0.1},
}

RHO_GRID = (0.05, 0.1, 0.15, 0.2)
COMPONENT_GRID = ("A", "Q", "V", "AQ", "AV", "QV", "AQV")
BATCH_GRID = (256, 128, 64, 32, 16, 8, 4, 2, 1)
RATE_GRID = (0.2, 0.3, 0.4, 0.5)
RANGE_GRID = (0.25, 0.5, 1.0, 2.0)
SWEEP_AXES = ("rho", "sam_component", "batch_size", "corruption_rate", "corruption_range")


def default_rho(algorithm: str, env: str, mode: str = "random") -> float:
    table = TOY_RHO if (algorithm, env) in TOY_RHO else BENCHMARK_RHO
    return table[(algorithm, env)][mode]


class ConfigError(ValueError):
    def __init__(self, errors: dict[str, str]):
        self.errors = dict(errors)
        super().__init__("; ".join(f"{k}: {v}" for k, v in sorted(self.errors.items())))


class ProvenanceError(RuntimeError):
    """Rows from different configurations were about to be merged."""


# --- configuration -----------------------------------------------------------

TRAIN_KEYS = ("gamma", "tau_expectile", "beta_awr", "target_update_rate", "batch_size", "steps", "lr", "hidden",
              "n_q", "adv_clip")
RIQL_KEYS = ("ensemble_k", "quantile_alpha", "huber_delta")
CORRUPTION_KEYS = ("mode", "elements", "rate", "eps", "pgd_steps", "pgd_step_size")


@dataclass(frozen=True)
class ExperimentConfig:
    env: str = "point_mass_2d"
    behavior: str = "replay_mix"
    n_transitions: int = 5000
    algorithm: str = "iql"
    corruption: CorruptionConfig = field(default_factory=CorruptionConfig)
    train: IqlConfig = field(default_factory=IqlConfig)
    seeds: tuple = (0, 1, 2)
    output_dir: str = "runs"
    eval_episodes: int = 20
    probe_samples: int = 64
    probe_rho: float = 0.1  # used for the sharpness column when training rho is 0

    @property
    def sam_targets(self) -> frozenset:
        return self.train.sam_targets

    @property
    def rho(self) -> float:
        return self.train.rho

    @property
    def variant(self) -> str:
        return "naive" if not self.sam_targets else f"SAM({components_label(self.sam_targets)})"

    def with_sam(self, targets, rho: float | None = None) -> ExperimentConfig:
        rho = self.rho if rho is None else rho
        return replace(self, train=self.train.evolve(sam_targets=parse_components(targets), rho=rho))

    def naive(self) -> ExperimentConfig:
        return self.with_sam("", self.rho)

    # flat key/value view ---------------------------------------------------

    def to_mapping(self) -> dict[str, str]:
        t, c = self.train, self.corruption
        m = {
            "env": self.env, "behavior": self.behavior, "dataset.size": str(self.n_transitions),
            "algorithm": self.algorithm, "sam.targets": components_label(t.sam_targets), "sam.rho": repr(t.rho),
            "corruption.mode": c.mode, "corruption.elements": ",".join(e for e in ELEMENTS if e in c.elements),
            "corruption.rate": repr(c.rate), "corruption.eps": repr(c.eps),
            "corruption.pgd_steps": str(c.pgd_steps), "corruption.pgd_step_size": repr(c.pgd_step_size),
            "eval.episodes": str(self.eval_episodes), "probe.samples": str(self.probe_samples),
            "probe.rho": repr(self.probe_rho),
            "seeds": ",".join(str(s) for s in self.seeds), "output_dir": self.output_dir,
        }
        keys = TRAIN_KEYS + (RIQL_KEYS if isinstance(t, RiqlConfig) else ())
        for k in keys:
            v = getattr(t, k)
            m[f"train.{k}"] = ",".join(str(h) for h in v) if k == "hidden" else repr(v)
        return m

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in sorted(self.to_mapping().items()))

    def config_hash(self) -> str:
        m = {k: v for k, v in self.to_mapping().items() if k not in ("seeds", "output_dir")}
        text = "".join(f"{k}={v}\n" for k, v in sorted(m.items()))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]

    @classmethod
    def from_mapping(cls, m: dict[str, str]) -> ExperimentConfig:
        """Build and validate from string key/values; all field errors are reported together."""
        errors: dict[str, str] = {}
        base = cls()
        known = set(base.to_mapping()) | {f"train.{k}" for k in RIQL_KEYS}
        for k in m:
            if k not in known:
                errors[k] = "unknown key"

        def get(key, conv, default):
            if key not in m:
                return default
            try:
                return conv(m[key].strip())
            except (TypeError, ValueError) as exc:
                errors[key] = f"cannot parse {m[key]!r}: {exc}"
                return default

        def int_list(text):
            return tuple(int(x) for x in text.replace(" ", "").split(",") if x)

        env = get("env", str, base.env)
        if env not in ENVS:
            errors["env"] = f"unknown environment {env!r}"
        behavior = get("behavior", str, base.behavior)
        if behavior not in ("medium_noisy", "replay_mix"):
            errors["behavior"] = f"unknown behaviour {behavior!r}"
        algorithm = get("algorithm", str, base.algorithm).lower()
        if algorithm not in ("iql", "riql"):
            errors["algorithm"] = "must be iql or riql"
        n = get("dataset.size", int, base.n_transitions)
        if n < 1:
            errors["dataset.size"] = "must be >= 1"
        seeds = get("seeds", int_list, base.seeds)
        if not seeds:
            errors["seeds"] = "at least one seed required"
        elif len(set(seeds)) != len(seeds):
            errors["seeds"] = "duplicate seeds"
        episodes = get("eval.episodes", int, base.eval_episodes)
        if episodes < 1:
            errors["eval.episodes"] = "must be >= 1"
        probe_samples = get("probe.samples", int, base.probe_samples)
        if probe_samples < 1:
            errors["probe.samples"] = "must be >= 1"
        probe_rho = get("probe.rho", float, base.probe_rho)
        if not probe_rho > 0:
            errors["probe.rho"] = "must be positive"

        targets = get("sam.targets", parse_components, frozenset())
        rho_default = default_rho(algorithm, env) if env in ENVS and algorithm in ("iql", "riql") else 0.1
        rho = get("sam.rho", float, rho_default)
        if rho < 0:
            errors["sam.rho"] = "must be >= 0"

        kw = {}
        proto = RiqlConfig() if algorithm == "riql" else IqlConfig()
        for k in TRAIN_KEYS + (RIQL_KEYS if algorithm == "riql" else ()):
            default = getattr(proto, k)
            conv = int_list if k == "hidden" else type(default)
            kw[k] = get(f"train.{k}", conv, default)
        if algorithm != "riql":
            for k in RIQL_KEYS:
                if f"train.{k}" in m:
                    errors[f"train.{k}"] = "only valid for algorithm = riql"
        train_cfg = None
        try:
            train_cfg = (RiqlConfig if algorithm == "riql" else IqlConfig)(sam_targets=targets, rho=rho, **kw)
        except (TypeError, ValueError) as exc:
            errors["train"] = str(exc)

        ckw = {}
        cproto = CorruptionConfig()
        for k in CORRUPTION_KEYS:
            default = getattr(cproto, k)
            conv = str if k in ("mode", "elements") else type(default)
            ckw[k] = get(f"corruption.{k}", conv, default)
        corr = None
        try:
            corr = CorruptionConfig(**ckw)
        except (TypeError, ValueError) as exc:
            errors["corruption"] = str(exc)

        if errors:
            raise ConfigError(errors)
        return cls(env=env, behavior=behavior, n_transitions=n, algorithm=algorithm, corruption=corr,
                   train=train_cfg, seeds=seeds, output_dir=get("output_dir", str, base.output_dir),
                   eval_episodes=episodes, probe_samples=probe_samples, probe_rho=probe_rho)

    def evolve(self, **flat) -> ExperimentConfig:
        """Copy with flat keys overridden, e.g. ``evolve(**{"train.steps": "10"})``."""
        m = self.to_mapping()
        m.update({k: str(v) for k, v in flat.items()})
        return ExperimentConfig.from_mapping(m)


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError({f"line {lineno}": f"expected key = value, got {raw!r}"})
        out[key.strip()] = value.strip()
    return out


def load_config(path, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    m = parse_config_text(Path(path).read_text()) if path else {}
    m.update(overrides or {})
    return ExperimentConfig.from_mapping(m)


# --- agents on disk ------------------------------------------------------------

def save_agent(nets: AgentNets, directory, header: str = "") -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, pv in (("actor", nets.actor), ("v", nets.v), ("q", nets.q), ("q_target", nets.q_target)):
        save_params(pv, directory / f"{name}.pv")
    info = {"state_dim": nets.v_spec.input_dim, "action_dim": nets.actor_spec.output_dim,
            "hidden": ",".join(str(h) for h in nets.v_spec.hidden), "n_q": nets.n_q}
    (directory / "agent.txt").write_text(header + "".join(f"{k} = {v}\n" for k, v in info.items()))


def load_agent(directory) -> AgentNets:
    directory = Path(directory)
    info = parse_config_text((directory / "agent.txt").read_text())
    hidden = tuple(int(h) for h in info["hidden"].split(","))
    shell = make_agent(int(info["state_dim"]), int(info["action_dim"]),
                       IqlConfig(hidden=hidden, n_q=int(info["n_q"])), 0)
    loaded = {n: load_params(directory / f"{n}.pv") for n in ("actor", "v", "q", "q_target")}
    for name, pv in loaded.items():
        if pv.layout != getattr(shell, name).layout:
            raise ValueError(f"{name}.pv does not match agent.txt")
    return replace(shell, **loaded)


# --- per-seed pipeline -------------------------------------------------------

def _subseed(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence([seed, tag]).generate_state(1)[0])


def pretrain_attacker(dataset_clean: Dataset, cfg: ExperimentConfig, seed: int) -> AgentNets:
    """Train a plain agent (no SAM) on clean data; its Q ensemble is the attacker's Q_p."""
    plain = cfg.train.evolve(sam_targets=frozenset())
    if plain.steps == 0:
        log.warning("pretrain_attacker: steps=0, Q_p is the random initialisation")
    nets, _ = train(dataset_clean, plain, _subseed(seed, 3))
    return nets


def v_sharpness(nets: AgentNets, dataset: Dataset, cfg: IqlConfig, rho: float, n_samples: int, seed: int) -> float:
    """sharpness_probe of the V expectile loss on the full dataset."""
    batch = dataset.batch(np.arange(len(dataset)))

    def loss_and_grad(pv: ParamVector):
        return v_loss(replace(nets, v=pv), batch, cfg)

    return sharpness_probe(loss_and_grad, nets.v, rho, n_samples, seed)


def _csv_text(header: list[str], rows: list[list], config_hash: str) -> str:
    buf = io.StringIO()
    buf.write(f"# config_hash={config_hash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x) -> str:
    if isinstance(x, float):
        return "" if math.isnan(x) else repr(x)
    return str(x)


def prepare_data(cfg: ExperimentConfig, seed: int):
    """The (corrupted) training data of one seed: ``(dataset, masks, attacker or None)``."""
    clean = generate_dataset(make_env(cfg.env), cfg.behavior, cfg.n_transitions, seed)
    q_p = None
    if cfg.corruption.mode == "adversarial" and "observation" in cfg.corruption.elements and cfg.corruption.rate > 0:
        q_p = pretrain_attacker(clean, cfg, seed)
    data, masks = corrupt(clean, replace(cfg.corruption, seed=_subseed(seed, 1)), q_p)
    return data, masks, q_p


def run_seed(cfg: ExperimentConfig, seed: int) -> dict:
    """Full pipeline for one seed; writes artifacts and returns the score record."""
    h = cfg.config_hash()
    out = Path(cfg.output_dir) / h / str(seed)
    out.mkdir(parents=True, exist_ok=True)
    env = make_env(cfg.env)
    record = {"seed": seed, "raw": float("nan"), "normalized": float("nan"), "v_sharpness": float("nan"),
              "status": "ok"}
    try:
        data, masks, q_p = prepare_data(cfg, seed)
        if q_p is not None:
            save_agent(q_p, out / "attacker", f"# config_hash={h}\n")
        save_masks(masks, out, header=f"# config_hash={h}\n")
        nets, metrics = train(data, cfg.train, _subseed(seed, 2))
        save_agent(nets, out, f"# config_hash={h}\n")
        rows = [[_fmt(r[k]) for k in METRIC_FIELDS] for r in metrics]
        (out / "metrics.csv").write_text(_csv_text(list(METRIC_FIELDS), rows, h))
        raw, _ = evaluate_policy(env, (nets.actor_spec, nets.actor), cfg.eval_episodes, _subseed(seed, 4))
        record["raw"] = raw
        record["normalized"] = normalized_score(raw, env)
        probe_rho = cfg.rho if cfg.rho > 0 else cfg.probe_rho
        record["v_sharpness"] = v_sharpness(nets, data, cfg.train, probe_rho, cfg.probe_samples, _subseed(seed, 5))
    except Exception as exc:  # per-seed isolation: one failing seed must not sink the table
        log.exception("seed %s failed", seed)
        record["status"] = f"error: {type(exc).__name__}: {exc}".replace("\n", " ")
    cols = ["seed", "raw", "normalized", "v_sharpness", "status"]
    (out / "score.csv").write_text(_csv_text(cols, [[_fmt(record[c]) for c in cols]], h))
    return record


# --- tables ------------------------------------------------------------------

def mean_std(values) -> tuple[float, float]:
    """Mean and sample std (ddof=1); std is NaN with fewer than two values."""
    v = np.asarray([x for x in values if np.isfinite(x)], dtype=np.float64)
    if v.size == 0:
        return float("nan"), float("nan")
    return float(v.mean()), float(v.std(ddof=1)) if v.size >= 2 else float("nan")


@dataclass
class ResultRow:
    env: str
    corruption: str
    algorithm: str
    variant: str
    config_hash: str
    scores: list[float]

    @property
    def key(self) -> tuple[str, str, str, str]:
        return self.env, self.corruption, self.algorithm, self.variant

    @property
    def mean(self) -> float:
        return mean_std(self.scores)[0]

    @property
    def std(self) -> float:
        return mean_std(self.scores)[1]


@dataclass
class ResultTable:
    rows: list[ResultRow] = field(default_factory=list)

    @property
    def average(self) -> float:
        means = [r.mean for r in self.rows if np.isfinite(r.mean)]
        return float(np.mean(means)) if means else float("nan")

    def row(self, key) -> ResultRow:
        for r in self.rows:
            if r.key == tuple(key):
                return r
        raise KeyError(key)

    def merge(self, other: ResultTable) -> ResultTable:
        return aggregate_rows(self.rows + other.rows)

    def to_csv(self) -> str:
        hashes = sorted({r.config_hash for r in self.rows})
        header = ["env", "corruption", "algorithm", "variant", "config_hash", "mean", "std", "n_seeds"]
        rows = [[r.env, r.corruption, r.algorithm, r.variant, r.config_hash, _fmt(r.mean), _fmt(r.std),
                 sum(np.isfinite(r.scores))] for r in self.rows]
        rows.append(["Average score", "", "", "", "", _fmt(self.average), "", ""])
        return _csv_text(header, rows, ";".join(hashes))


def aggregate_rows(rows: list[ResultRow]) -> ResultTable:
    """Merge rows sharing a key; refuses when the same key comes from different config hashes."""
    merged: dict[tuple, ResultRow] = {}
    for r in rows:
        if r.key in merged:
            prev = merged[r.key]
            if prev.config_hash != r.config_hash:
                raise ProvenanceError(f"row {r.key} mixes config hashes {prev.config_hash} and {r.config_hash}")
            prev.scores = prev.scores + r.scores
        else:
            merged[r.key] = ResultRow(*r.key, r.config_hash, list(r.scores))
    return ResultTable(list(merged.values()))


def _run_jobs(jobs, workers: int):
    if workers <= 1:
        return [run_seed(c, s) for c, s in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_seed, *zip(*jobs)))


def _write_experiment(cfg: ExperimentConfig, records: list[dict]) -> ResultTable:
    h = cfg.config_hash()
    root = Path(cfg.output_dir) / h
    cols = ["seed", "raw", "normalized", "v_sharpness", "status"]
    # the output location is not part of the run's identity, so it stays out of the file
    body = "".join(line for line in cfg.to_text().splitlines(True) if not line.startswith("output_dir ="))
    (root / "config.txt").write_text(f"# config_hash={h}\n" + body)
    (root / "scores.csv").write_text(_csv_text(cols, [[_fmt(r[c]) for c in cols] for r in records], h))
    row = ResultRow(cfg.env, cfg.corruption.label if cfg.corruption.rate > 0 else "clean", cfg.algorithm,
                    cfg.variant, h, [r["normalized"] for r in records])
    table = ResultTable([row])
    (root / "table.csv").write_text(table.to_csv())
    return table


def run_experiment(cfg: ExperimentConfig, workers: int = 1) -> ResultTable:
    records = _run_jobs([(cfg, s) for s in cfg.seeds], workers)
    return _write_experiment(cfg, records)


def run_many(cfgs: list[ExperimentConfig], workers: int = 1) -> list[ResultTable]:
    """Several experiments through one worker pool; aggregation only after all runs finish."""
    jobs = [(c, s) for c in cfgs for s in c.seeds]
    records = _run_jobs(jobs, workers)
    out, i = [], 0
    for c in cfgs:
        out.append(_write_experiment(c, records[i:i + len(c.seeds)]))
        i += len(c.seeds)
    return out


def read_scores(path) -> tuple[str, list[dict]]:
    path = Path(path)
    text = path.read_text()
    first, _, body = text.partition("\n")
    if not first.startswith("# config_hash="):
        raise ProvenanceError(f"{path} carries no config hash")
    h = first.split("=", 1)[1].strip()
    records = []
    for r in csv.DictReader(io.StringIO(body)):
        records.append({"seed": int(r["seed"]), "raw": float(r["raw"] or "nan"),
                        "normalized": float(r["normalized"] or "nan"),
                        "v_sharpness": float(r["v_sharpness"] or "nan"), "status": r["status"]})
    return h, records


def report(experiment_dirs) -> ResultTable:
    """Rebuild a ResultTable from experiment directories (each holding config.txt and scores.csv)."""
    rows = []
    for d in experiment_dirs:
        d = Path(d)
        h, records = read_scores(d / "scores.csv")
        cfg_text = (d / "config.txt").read_text()
        cfg_h = cfg_text.partition("\n")[0].split("=", 1)[1].strip()
        cfg = ExperimentConfig.from_mapping(parse_config_text(cfg_text))
        if not (h == cfg_h == cfg.config_hash()):
            raise ProvenanceError(f"{d}: scores hash {h}, config hash {cfg_h}, recomputed {cfg.config_hash()}")
        label = cfg.corruption.label if cfg.corruption.rate > 0 else "clean"
        rows.append(ResultRow(cfg.env, label, cfg.algorithm, cfg.variant, h, [r["normalized"] for r in records]))
    return aggregate_rows(rows)


# --- sweeps --------------------------------------------------------------------

def _apply_axis(cfg: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    if axis == "rho":
        targets = cfg.sam_targets or frozenset("V")
        return cfg.with_sam(targets, float(value))
    if axis == "sam_component":
        return cfg.with_sam(parse_components(value))
    if axis == "batch_size":
        return replace(cfg, train=cfg.train.evolve(batch_size=int(value)))
    if axis == "corruption_rate":
        return replace(cfg, corruption=replace(cfg.corruption, rate=float(value)))
    if axis == "corruption_range":
        return replace(cfg, corruption=replace(cfg.corruption, eps=float(value)))
    raise ValueError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")


# axes whose values change the naive baseline too (one baseline per value)
_BASELINE_FOLLOWS = {"corruption_rate", "corruption_range"}


@dataclass
class SweepCell:
    value: str
    by_value: str
    variant: str
    config_hash: str
    scores: list[float]

    @property
    def mean(self) -> float:
        return mean_std(self.scores)[0]

    @property
    def std(self) -> float:
        return mean_std(self.scores)[1]


@dataclass
class SweepTable:
    axis: str
    values: list[str]
    by: str | None
    by_values: list[str]
    cells: list[SweepCell]
    baselines: list[SweepCell]

    def cell(self, value, by_value="") -> SweepCell:
        for c in self.cells:
            if c.value == str(value) and c.by_value == str(by_value):
                return c
        raise KeyError((value, by_value))

    def column_average(self, by_value="") -> float:
        means = [c.mean for c in self.cells if c.by_value == str(by_value)]
        return float(np.mean(means))

    def baseline_average(self) -> float:
        return float(np.mean([b.mean for b in self.baselines]))

    def improvement(self, by_value="") -> float:
        """Column average minus the baseline average."""
        return self.column_average(by_value) - self.baseline_average()

    def to_csv(self) -> str:
        header = ["kind", "axis", "value", "by", "by_value", "variant", "config_hash", "mean", "std", "n_seeds"]
        rows = []
        for kind, group in (("cell", self.cells), ("baseline", self.baselines)):
            for c in group:
                rows.append([kind, self.axis, c.value, self.by or "", c.by_value, c.variant, c.config_hash,
                             _fmt(c.mean), _fmt(c.std), sum(np.isfinite(c.scores))])
        for bv in self.by_values:
            rows.append(["average", self.axis, "", self.by or "", bv, "", "", _fmt(self.column_average(bv)), "", ""])
        rows.append(["average", self.axis, "", self.by or "", "", "naive", "", _fmt(self.baseline_average()), "", ""])
        for bv in self.by_values:
            rows.append(["improvement", self.axis, "", self.by or "", bv, "", "", _fmt(self.improvement(bv)), "", ""])
        hashes = sorted({c.config_hash for c in self.cells + self.baselines})
        return _csv_text(header, rows, ";".join(hashes))


def run_sweep(base_cfg: ExperimentConfig, axis: str, values, by: str | None = None, by_values=(),
              workers: int = 1, out_path=None) -> SweepTable:
    """One experiment per axis value (and per ``by`` value for 2-D grids), shared seeds throughout.

    The naive baseline is a single run of ``base_cfg`` without SAM, except for the
    corruption axes where each value gets its own baseline.
    """
    if axis not in SWEEP_AXES or (by is not None and by not in SWEEP_AXES):
        raise ValueError(f"sweep axes must be among {SWEEP_AXES}")
    values = [str(v) for v in values]
    by_values = [str(v) for v in by_values] if by else [""]
    if not values:
        raise ValueError("sweep needs at least one value")
    grid = []
    for v in values:
        for bv in by_values:
            c = _apply_axis(base_cfg, axis, v)
            if by:
                c = _apply_axis(c, by, bv)
            if not c.sam_targets:
                c = c.with_sam("V")
            grid.append((v, bv, c))
    if axis in _BASELINE_FOLLOWS:
        base_runs = [(v, _apply_axis(base_cfg, axis, v).naive()) for v in values]
    else:
        base_runs = [("", base_cfg.naive())]
    # dedupe identical configs so each (config, seed) is trained once
    unique: dict[str, ExperimentConfig] = {}
    for *_, c in grid:
        unique.setdefault(c.config_hash(), c)
    for _, c in base_runs:
        unique.setdefault(c.config_hash(), c)
    tables = dict(zip(unique, run_many(list(unique.values()), workers)))

    def cell(v, bv, c):
        row = tables[c.config_hash()].rows[0]
        return SweepCell(v, bv, c.variant, row.config_hash, list(row.scores))

    table = SweepTable(axis, values, by, by_values if by else [""],
                       [cell(v, bv, c) for v, bv, c in grid], [cell(v, "", c) for v, c in base_runs])
    if out_path is not None:
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        Path(out_path).write_text(table.to_csv())
    return table
