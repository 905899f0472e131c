"""Experiment configs, seeded runs and sweeps, and CSV/manifest emission."""
from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .agent import (AgentConfig, ConfigError, RegretReport, run_polsbe, run_polsbe_simulator, theorem1_config,
                    theorem2_config)
from .baselines import best_in_hindsight_oracle, known_dynamics_omd_baseline, uniform_baseline
from .envgen import AdversarySpec, GeneratorSpec, make_adversary, random_linmdp
from .linmdp import LinearMdpModel, load_model

OUT_ENV = "POLSBE_OUT"
BASELINES = ("uniform", "known_dynamics_omd", "best_in_hindsight_oracle")
THEOREMS = ("theorem1", "theorem2")


def default_out_dir() -> str:
    return os.environ.get(OUT_ENV, "results")


# ---------------------------------------------------------------- parsing helpers

def _line_of(text: str | None, key: str) -> str:
    if not text:
        return ""
    m = re.search(r'"' + re.escape(key) + r'"\s*:', text)
    return f"line {text.count(chr(10), 0, m.start()) + 1}: " if m else ""


def _load_json(path):
    text = Path(path).read_text()
    try:
        return json.loads(text), text
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from None


def _check_keys(doc, allowed, where, text):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object, got {type(doc).__name__}")
    for key in doc:
        if key not in allowed:
            raise ConfigError(f"{_line_of(text, key)}unknown key {key!r} in {where}; allowed: {sorted(allowed)}")


def _fields(cls):
    return {f.name for f in dataclasses.fields(cls)}


# ---------------------------------------------------------------- configs

@dataclass(frozen=True)
class EnvironmentConfig:
    """Either a generator spec or a path to a serialized model."""

    kind: str = "tabular_onehot"
    S: int = 4
    A: int = 3
    H: int = 3
    d: int | None = None
    seed: int = 0
    path: str | None = None

    def build(self) -> LinearMdpModel:
        if self.path is not None:
            return load_model(self.path)
        return random_linmdp(GeneratorSpec(self.kind, self.S, self.A, self.H, d=self.d, seed=self.seed))


@dataclass(frozen=True)
class AgentSpec:
    """Agent settings; a ``theorem`` selector derives everything from (K, d, H).

    Without a selector, missing eta defaults to gamma/(2H), missing beta to
    beta_scale * 2H sqrt(d gamma), and missing beta_p to beta.
    """

    variant: str = "blocking"
    theorem: str | None = None
    c1: float = 1.0
    gamma: float | None = None
    eta: float | None = None
    beta: float | None = None
    beta_scale: float = 1.0
    beta_p: float | None = None
    M: int | None = None
    N: int | None = None
    tau: int | None = None
    mode: str = "practical"
    sigma: float = 0.25
    epsilon: float = 0.01

    def __post_init__(self):
        if self.variant not in ("blocking", "simulator"):
            raise ConfigError(f"unknown agent variant {self.variant!r}")
        if self.theorem is not None and self.theorem not in THEOREMS:
            raise ConfigError(f"unknown theorem selector {self.theorem!r}; use one of {THEOREMS}")

    def resolve(self, K: int, d: int, H: int) -> AgentConfig:
        if self.theorem == "theorem1":
            return theorem1_config(K, d, H, self.c1)
        if self.theorem == "theorem2":
            return theorem2_config(K, d, H, self.c1)
        if self.gamma is None:
            raise ConfigError("agent.gamma is required without a theorem selector")
        eta = self.gamma / (2 * H) if self.eta is None else self.eta
        beta = self.beta_scale * 2 * H * math.sqrt(d * self.gamma) if self.beta is None else self.beta
        beta_p = beta if self.beta_p is None else self.beta_p
        return AgentConfig(eta=eta, gamma=self.gamma, beta=beta, beta_p=beta_p, epsilon=self.epsilon,
                           sigma=self.sigma, mode=self.mode, M=self.M, N=self.N, tau=self.tau,
                           variant=self.variant, c1=self.c1)


@dataclass(frozen=True)
class ExperimentConfig:
    environment: EnvironmentConfig = field(default_factory=EnvironmentConfig)
    adversary: AdversarySpec = field(default_factory=AdversarySpec)
    agent: AgentSpec = field(default_factory=AgentSpec)
    K: int = 1024
    seeds: tuple = (0,)
    baselines: tuple = ()
    out_dir: str | None = None
    diagnostics: bool = False

    def __post_init__(self):
        if self.K < 1:
            raise ConfigError(f"K must be >= 1, got {self.K}")
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        for b in self.baselines:
            if b not in BASELINES:
                raise ConfigError(f"unknown baseline {b!r}; use any of {BASELINES}")

    @classmethod
    def from_dict(cls, doc: dict, text: str | None = None, base_dir=None) -> "ExperimentConfig":
        _check_keys(doc, _fields(cls), "config", text)
        kw = dict(doc)
        try:
            env = kw.get("environment", {})
            _check_keys(env, _fields(EnvironmentConfig), "environment", text)
            if env.get("path") is not None and base_dir is not None:
                env = {**env, "path": str(Path(base_dir) / env["path"])}
            kw["environment"] = EnvironmentConfig(**env)
            adv = kw.get("adversary", {})
            _check_keys(adv, _fields(AdversarySpec), "adversary", text)
            if "switch_episodes" in adv:
                adv = {**adv, "switch_episodes": tuple(adv["switch_episodes"])}
            kw["adversary"] = AdversarySpec(**adv)
            agent = kw.get("agent", {})
            _check_keys(agent, _fields(AgentSpec), "agent", text)
            kw["agent"] = AgentSpec(**agent)
            if "seeds" in kw:
                kw["seeds"] = tuple(int(s) for s in kw["seeds"])
            if "baselines" in kw:
                kw["baselines"] = tuple(kw["baselines"])
            return cls(**kw)
        except ConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        doc, text = _load_json(path)
        return cls.from_dict(doc, text, base_dir=Path(path).parent)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self)))


@dataclass(frozen=True)
class SweepSpec:
    base: ExperimentConfig
    K: tuple = ()
    gamma: tuple = ()
    replications: int = 1

    def __post_init__(self):
        if not self.K and not self.gamma:
            raise ConfigError("sweep grid is empty: give K and/or gamma values")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")

    def cells(self) -> list[tuple[int, float | None]]:
        Ks = self.K or (self.base.K,)
        gammas = self.gamma or (None,)
        return [(int(k), g) for k in Ks for g in gammas]

    @classmethod
    def from_dict(cls, doc, text=None, base_dir=None) -> "SweepSpec":
        _check_keys(doc, {"base", "K", "gamma", "replications"}, "sweep", text)
        base = doc.get("base", {})
        if isinstance(base, str):
            path = Path(base_dir or ".") / base
            base = ExperimentConfig.load(path)
        else:
            base = ExperimentConfig.from_dict(base, text, base_dir)
        return cls(base, tuple(doc.get("K", ())), tuple(doc.get("gamma", ())), int(doc.get("replications", 1)))

    @classmethod
    def load(cls, path) -> "SweepSpec":
        doc, text = _load_json(path)
        return cls.from_dict(doc, text, base_dir=Path(path).parent)


# ---------------------------------------------------------------- execution

def adversary_seed(spec_seed: int, run_seed: int) -> int:
    return int(np.random.SeedSequence([spec_seed, run_seed]).generate_state(1)[0])


def run_seed(cfg: ExperimentConfig, seed: int) -> list[RegretReport]:
    """Agent plus baselines for one seed; every run sees the same cost stream."""
    model = cfg.environment.build()
    spec = dataclasses.replace(cfg.adversary, seed=adversary_seed(cfg.adversary.seed, seed))
    agent_cfg = cfg.agent.resolve(cfg.K, model.feature_dim, model.horizon)
    runner = run_polsbe if agent_cfg.variant == "blocking" else run_polsbe_simulator
    reports = [runner(model, make_adversary(spec, model), cfg.K, agent_cfg, seed=seed, diagnostics=cfg.diagnostics)]
    for name in cfg.baselines:
        adv = make_adversary(spec, model)
        if name == "uniform":
            reports.append(uniform_baseline(model, adv, cfg.K))
        elif name == "known_dynamics_omd":
            reports.append(known_dynamics_omd_baseline(model, adv, cfg.K, agent_cfg.eta))
        elif not adv.oblivious:
            raise ConfigError("best_in_hindsight_oracle needs an oblivious adversary")
        else:
            reports.append(best_in_hindsight_oracle(model, adv, cfg.K))
    return reports


def _summary(report: RegretReport) -> dict:
    return {"agent": report.name, "regret": report.regret, "samples": int(report.samples), "flags": report.flags}


def _run_and_write(cfg: ExperimentConfig, seed: int, out_dir: str | None) -> list[dict]:
    reports = run_seed(cfg, seed)
    out = []
    for r in reports:
        row = {"seed": seed, **_summary(r)}
        if out_dir is not None:
            fname = f"{r.name}_seed{seed}.csv"
            r.to_csv(Path(out_dir) / fname)
            row["csv"] = fname
        out.append(row)
    return out


def _map(fn, args, jobs: int):
    if jobs <= 1 or len(args) <= 1:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, *zip(*args)))


def run_experiment(cfg: ExperimentConfig, out_dir=None, jobs: int = 1, write: bool = True) -> dict:
    """Runs every seed, writes one CSV per (agent, seed) and a manifest; returns the manifest."""
    out_dir = out_dir or cfg.out_dir or default_out_dir()
    if write:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    target = str(out_dir) if write else None
    rows = _map(_run_and_write, [(cfg, s, target) for s in cfg.seeds], jobs)
    manifest = {
        "version": __version__,
        "config": cfg.to_dict(),
        "adversary_kind": cfg.adversary.kind,
        "adversary_oblivious": cfg.adversary.kind != "adaptive_occupancy",
        "runs": [r for seed_rows in rows for r in seed_rows],
    }
    if write:
        (Path(out_dir) / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _cell_run(cfg: ExperimentConfig, seed: int) -> list[dict]:
    return [{"seed": seed, **_summary(r)} for r in run_seed(cfg, seed)]


def run_sweep(sweep: SweepSpec, out_dir=None, jobs: int = 1) -> list[dict]:
    """Per-cell mean and standard deviation of cumulative regret over replications."""
    base = sweep.base
    tasks, keys = [], []
    for K, gamma in sweep.cells():
        agent = base.agent if gamma is None else dataclasses.replace(base.agent, gamma=gamma)
        cfg = dataclasses.replace(base, K=K, agent=agent)
        for r in range(sweep.replications):
            tasks.append((cfg, base.seeds[0] + r))
            keys.append((K, gamma))
    results = _map(_cell_run, tasks, jobs)
    cells: dict = {}
    for key, rows in zip(keys, results):
        for row in rows:
            cells.setdefault((*key, row["agent"]), []).append(row["regret"])
    out = []
    for (K, gamma, agent), vals in cells.items():
        v = np.asarray(vals)
        std = float(v.std(ddof=1)) if len(v) > 1 else 0.0
        out.append({"K": K, "gamma": "" if gamma is None else gamma, "agent": agent, "n": len(v),
                    "mean_regret": float(v.mean()), "std_regret": std, "se_regret": std / math.sqrt(len(v))})
    out_dir = out_dir or base.out_dir or default_out_dir()
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    with open(Path(out_dir) / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(out[0]), lineterminator="\n")
        w.writeheader()
        for row in out:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return out
