"""Pipeline configuration and the stage functions shared by the CLI and the tests."""

from __future__ import annotations

import copy
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from .consistency import AnnotateResult, annotate_dataset
from .dataset import CorruptionConfig, QAPair, Trajectory, build_qa_dataset, forge_dataset, relabel
from .env import DomainShift, WorldSpec, apply_shift, load_world, shift_affected_tasks, world_to_dict
from .estimator.base import EstimatorHub
from .estimator.personas import PersonaSpec, default_personas
from .estimator.scripted import ScriptedEstimator
from .evaluation import EvalReport, evaluate
from .offline_rl import QLearner, RLConfig
from .orchestrator import Orchestrator, OrchestratorConfig

log = logging.getLogger(__name__)

CONFIG_SCHEMA = 1

DEFAULT_CONFIG: dict[str, Any] = {
    "schema": CONFIG_SCHEMA,
    "world": None,
    "seed": 0,
    "dataset": {"per_task": 319, "k_min": 1, "k_max": 3, "label_mode": "all"},
    "estimator": {
        "backend": "scripted",
        "n": 5,
        "flip_rate": 0.1,
        "qa_error_rate": 0.0,
        "verify_error_rate": 0.0,
        "misconception": {},
        "misinformed": 0,
        "personas": None,
        "remote": {},
    },
    "orchestrator": {},
    "policy": {"lr": 1e-3, "steps": 20000, "ensemble": 3, "alpha_cql": 0.5},
    "eval": {"kinds": ["fine", "abstract"], "budget_factor": 2.0, "thresholds": {}},
    "cross_domain": {"shift": {"book": "nightstand"}},
}

_SECTION_KEYS = {
    "dataset": {"per_task", "k_min", "k_max", "label_mode"},
    "estimator": {"backend", "n", "flip_rate", "qa_error_rate", "verify_error_rate", "misconception",
                  "misinformed", "personas", "remote"},
    "eval": {"kinds", "budget_factor", "thresholds"},
    "cross_domain": {"shift"},
}

THRESHOLD_KEYS = {"sr", "cgc", "plan", "fine_sr", "abstract_sr", "fine_cgc", "abstract_cgc"}


class ConfigError(ValueError):
    pass


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("shift", "remote", "thresholds", "misconception"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class PipelineConfig:
    raw: dict
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def from_dict(cls, d: dict | None = None, base_dir: str | Path | None = None) -> "PipelineConfig":
        cfg = cls(_merge(DEFAULT_CONFIG, d or {}), Path(base_dir) if base_dir else Path.cwd())
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        try:
            d = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON: {e}") from e
        return cls.from_dict(d, path.parent)

    def with_overrides(self, pairs: Sequence[str]) -> "PipelineConfig":
        """Apply dotted ``key=json`` overrides such as ``orchestrator.mode="average"``."""
        d = copy.deepcopy(self.raw)
        for pair in pairs:
            if "=" not in pair:
                raise ConfigError(f"override {pair!r} must look like key=value")
            key, val = pair.split("=", 1)
            try:
                value = json.loads(val)
            except json.JSONDecodeError:
                value = val
            node = d
            parts = key.split(".")
            for p in parts[:-1]:
                node = node.setdefault(p, {})
                if not isinstance(node, dict):
                    raise ConfigError(f"override {key!r} descends into a non-object")
            node[parts[-1]] = value
        out = PipelineConfig(d, self.base_dir)
        out.validate()
        return out

    # -- validation ------------------------------------------------------------------

    def validate(self) -> None:
        r = self.raw
        known = set(DEFAULT_CONFIG)
        extra = set(r) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        if r.get("schema") != CONFIG_SCHEMA:
            raise ConfigError(f"unsupported config schema {r.get('schema')!r}")
        if not isinstance(r["seed"], int):
            raise ConfigError("seed must be an integer")
        for sec, keys in _SECTION_KEYS.items():
            bad = set(r[sec]) - keys
            if bad:
                raise ConfigError(f"unknown keys in {sec}: {sorted(bad)}")
        if r["world"] is not None and not self.world_path.is_file():
            raise ConfigError(f"world file not found: {self.world_path}")
        try:
            self.corruption
            self.orchestrator
            self.policy
            self.personas
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e
        if r["estimator"]["backend"] not in ("scripted", "remote"):
            raise ConfigError(f"unknown estimator backend {r['estimator']['backend']!r}")
        kinds = r["eval"]["kinds"]
        if not kinds or set(kinds) - {"fine", "abstract", "train"}:
            raise ConfigError(f"eval.kinds must be drawn from fine/abstract/train, got {kinds}")
        bad = set(r["eval"]["thresholds"]) - THRESHOLD_KEYS
        if bad:
            raise ConfigError(f"unknown eval thresholds {sorted(bad)}")
        if not isinstance(r["cross_domain"]["shift"], dict):
            raise ConfigError("cross_domain.shift must map object ids to new homes")

    # -- typed views ------------------------------------------------------------------

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    @property
    def world_path(self) -> Path | None:
        w = self.raw["world"]
        if w is None:
            return None
        p = Path(w)
        return p if p.is_absolute() else self.base_dir / p

    def world(self) -> WorldSpec:
        return load_world(self.world_path)

    @property
    def corruption(self) -> CorruptionConfig:
        return CorruptionConfig(**self.raw["dataset"])

    @property
    def personas(self) -> list[PersonaSpec]:
        e = self.raw["estimator"]
        if e["personas"]:
            return [PersonaSpec.from_json(p) for p in e["personas"]]
        return default_personas(e["n"], e["flip_rate"], e["qa_error_rate"], e["verify_error_rate"],
                                seed=stage_seed(self.seed, "estimate"), misconception=e["misconception"],
                                misinformed=e["misinformed"])

    @property
    def orchestrator(self) -> OrchestratorConfig:
        return OrchestratorConfig(**self.raw["orchestrator"])

    @property
    def policy(self) -> RLConfig:
        return RLConfig(**self.raw["policy"])

    @property
    def shift(self) -> DomainShift:
        return DomainShift.from_mapping(self.raw["cross_domain"]["shift"])

    # -- lineage ---------------------------------------------------------------------

    def stage_hash(self, stage: str, world: WorldSpec | None = None) -> str:
        """Hash of everything a stage's output depends on, including its upstream stages."""
        deps = {
            "gen-data": ["seed", "dataset", "_world"],
            "build-qa": [],
            "estimate": ["estimator"],
            "train-orchestrator": ["orchestrator"],
            "emit-rewards": [],
            "train-policy": ["policy"],
            "evaluate": ["eval"],
            "cross-domain": ["cross_domain", "eval"],
        }
        upstream = {"gen-data": None, "build-qa": "gen-data", "estimate": "build-qa",
                    "train-orchestrator": "estimate", "emit-rewards": "train-orchestrator",
                    "train-policy": "emit-rewards", "evaluate": "train-policy", "cross-domain": "train-policy"}
        if stage not in deps:
            raise KeyError(stage)
        payload: dict[str, Any] = {"stage": stage}
        for k in deps[stage]:
            if k == "_world":
                w = world or self.world()
                payload[k] = hashlib.sha256(json.dumps(world_to_dict(w), sort_keys=True).encode()).hexdigest()
            else:
                payload[k] = self.raw[k]
        if upstream[stage]:
            payload["upstream"] = self.stage_hash(upstream[stage], world)
        blob = json.dumps(payload, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def stage_seed(root: int, name: str) -> int:
    """Named, independent substream of the root seed."""
    h = hashlib.blake2b(f"{root}:{name}".encode(), digest_size=4).digest()
    return int.from_bytes(h, "little")


# ---------------------------------------------------------------------------
# stages


def make_hub(cfg: PipelineConfig, world: WorldSpec, personas: Sequence[PersonaSpec] | None = None) -> EstimatorHub:
    personas = list(personas if personas is not None else cfg.personas)
    if cfg.raw["estimator"]["backend"] == "remote":
        from .estimator.remote import RemoteConfig, RemoteEstimator
        return RemoteEstimator(world, personas, RemoteConfig(**cfg.raw["estimator"]["remote"]))
    return ScriptedEstimator(world, personas)


def gen_data(cfg: PipelineConfig, world: WorldSpec) -> list[Trajectory]:
    return forge_dataset(world, world.tasks, cfg.corruption, stage_seed(cfg.seed, "gen-data"))


def build_qa(trajectories: Sequence[Trajectory], world: WorldSpec) -> list[QAPair]:
    return build_qa_dataset(trajectories, world)


def estimate(trajectories: Sequence[Trajectory], qa: Sequence[QAPair], hub: EstimatorHub,
             jobs: int = 1) -> AnnotateResult:
    return annotate_dataset(trajectories, hub, qa, jobs=jobs)


def train_orchestrator(annotated: Sequence[Trajectory], cfg: PipelineConfig, world: WorldSpec,
                       ocfg: OrchestratorConfig | None = None, salt: str = "") -> tuple[Orchestrator, list]:
    seed = stage_seed(cfg.seed, "train-orchestrator" + salt)
    model = Orchestrator(world, ocfg or cfg.orchestrator, seed=seed)
    curve = model.fit(annotated, seed=seed)
    return model, curve


def train_policy(unified: Sequence[Trajectory], cfg: PipelineConfig, world: WorldSpec,
                 rlcfg: RLConfig | None = None, salt: str = "") -> tuple[QLearner, list]:
    q = QLearner(world, rlcfg or cfg.policy, seed=stage_seed(cfg.seed, "train-policy" + salt))
    logs = q.fit(unified)
    return q, logs


def run_evaluation(policy, world: WorldSpec, cfg: PipelineConfig, tasks=None, jobs: int = 1) -> EvalReport:
    e = cfg.raw["eval"]
    return evaluate(policy, world, tasks, kinds=e["kinds"], budget_factor=e["budget_factor"], jobs=jobs)


def threshold_failures(report: EvalReport, thresholds: dict) -> list[str]:
    """Names of violated thresholds (values are percentages)."""
    fails = []
    for key, bound in sorted(thresholds.items()):
        kind, _, metric = key.rpartition("_")
        kind = kind or None
        value = {"sr": report.sr, "cgc": report.cgc, "plan": report.plan}[metric](kind)
        if value < bound:
            fails.append(f"{key}={value:.1f} < {bound}")
    return fails


@dataclass
class CrossDomainResult:
    shifted: WorldSpec
    affected: list[str]
    relabeled: list[Trajectory]
    orchestrator: Orchestrator
    policy: QLearner
    adapted: EvalReport
    unadapted: EvalReport

    def summary(self) -> dict:
        return {"affected_tasks": self.affected,
                "adapted": self.adapted.summary(), "unadapted": self.unadapted.summary(),
                "sr_gain": self.adapted.sr() - self.unadapted.sr()}


def cross_domain_run(world: WorldSpec, annotated: Sequence[Trajectory], source_policy, cfg: PipelineConfig,
                     shift: DomainShift | None = None, jobs: int = 1) -> CrossDomainResult:
    """Relabel under the shift, retrain orchestrator and policy on the frozen triples, evaluate.

    The estimator is never consulted: the consistency rewards carried by ``annotated``
    are reused as they are.
    """
    shift = cfg.shift if shift is None else shift
    shifted = apply_shift(world, shift)
    affected = shift_affected_tasks(world, shift) if shift.moves else [t.id for t in world.tasks]
    stale = [t.id for t in shifted.tasks if t.stale]
    if stale:
        raise ValueError(f"shift leaves tasks without a valid plan: {stale}")
    relabeled = relabel(annotated, shifted)
    orch, _ = train_orchestrator(relabeled, cfg, shifted, salt=":cross-domain")
    unified = orch.emit(relabeled)
    policy, _ = train_policy(unified, cfg, shifted, salt=":cross-domain")
    tasks = [shifted.task_by_id[t] for t in affected]
    adapted = run_evaluation(policy, shifted, cfg, tasks, jobs)
    unadapted = run_evaluation(source_policy, shifted, cfg, tasks, jobs)
    return CrossDomainResult(shifted, affected, relabeled, orch, policy, adapted, unadapted)


@dataclass
class RunResult:
    world: WorldSpec
    trajectories: list[Trajectory]
    qa: list[QAPair]
    annotated: AnnotateResult
    orchestrator: Orchestrator
    unified: list[Trajectory]
    policy: QLearner
    report: EvalReport
    hub: EstimatorHub


def run_all_in_memory(cfg: PipelineConfig, world: WorldSpec | None = None, hub: EstimatorHub | None = None,
                      trajectories: list[Trajectory] | None = None, qa: list[QAPair] | None = None,
                      annotated: AnnotateResult | None = None, jobs: int = 1) -> RunResult:
    """Every stage without touching the disk; precomputed upstream pieces may be passed in."""
    world = world or cfg.world()
    trajectories = trajectories if trajectories is not None else gen_data(cfg, world)
    qa = qa if qa is not None else build_qa(trajectories, world)
    hub = hub or make_hub(cfg, world)
    annotated = annotated if annotated is not None else estimate(trajectories, qa, hub, jobs)
    orch, _ = train_orchestrator(annotated.trajectories, cfg, world)
    unified = orch.emit(annotated.trajectories)
    policy, _ = train_policy(unified, cfg, world)
    report = run_evaluation(policy, world, cfg, jobs=jobs)
    return RunResult(world, trajectories, qa, annotated, orch, unified, policy, report, hub)
