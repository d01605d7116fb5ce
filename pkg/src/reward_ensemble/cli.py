"""Command-line driver: one subcommand per pipeline stage plus run-all.

Every artifact lands in ``<out>/<stage>/`` and records the lineage hash of the config
that produced it. A stage refuses inputs whose hash does not match the current config
unless ``--force`` is given.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .consistency import write_diagnostics
from .dataset import load_qa, load_trajectories, save_qa, save_trajectories
from .env import ConfigError as WorldConfigError
from .env import WorldSpec
from .estimator.base import EstimatorError
from .offline_rl import QLearner, write_log
from .orchestrator import Orchestrator, write_curve
from .pipeline import (ConfigError, PipelineConfig, build_qa, cross_domain_run, estimate, gen_data,
                       make_hub, run_evaluation, threshold_failures, train_orchestrator, train_policy)

log = logging.getLogger("reward_ensemble")

EXIT_OK, EXIT_USAGE, EXIT_STAGE, EXIT_THRESHOLD = 0, 1, 2, 3

STAGES = ("gen-data", "build-qa", "estimate", "train-orchestrator", "emit-rewards", "train-policy",
          "evaluate", "cross-domain")

# file each stage writes that downstream stages read
PRIMARY = {
    "gen-data": "trajectories.jsonl",
    "build-qa": "qa.jsonl",
    "estimate": "annotated.jsonl",
    "train-orchestrator": "orchestrator.ckpt",
    "emit-rewards": "unified.jsonl",
    "train-policy": "policy.ckpt",
    "evaluate": "report.json",
    "cross-domain": "summary.json",
}


class StageError(RuntimeError):
    pass


class ThresholdError(RuntimeError):
    pass


class Context:
    def __init__(self, cfg: PipelineConfig, out: Path, force: bool, jobs: int):
        self.cfg, self.out, self.force, self.jobs = cfg, out, force, jobs
        self._world: WorldSpec | None = None

    @property
    def world(self) -> WorldSpec:
        if self._world is None:
            self._world = self.cfg.world()
        return self._world

    def hash(self, stage: str) -> str:
        return self.cfg.stage_hash(stage, self.world)

    def meta(self, stage: str) -> dict:
        return {"stage": stage, "config_hash": self.hash(stage), "version": __version__}

    def dir(self, stage: str) -> Path:
        d = self.out / stage
        d.mkdir(parents=True, exist_ok=True)
        return d

    def upstream(self, stage: str) -> Path:
        path = self.out / stage / PRIMARY[stage]
        if not path.is_file():
            raise StageError(f"missing input {path}; produce it with the '{stage}' subcommand (or run-all)")
        return path

    def check_lineage(self, stage: str, path: Path, meta: dict) -> None:
        want, got = self.hash(stage), meta.get("config_hash")
        if got != want:
            msg = f"{path} was produced under config hash {got}, current config expects {want}"
            if not self.force:
                raise StageError(msg + "; rerun the '" + stage + "' stage or pass --force")
            log.warning("%s (continuing because of --force)", msg)

    # -- loaders --------------------------------------------------------------------

    def load_trajs(self, stage: str):
        path = self.upstream(stage)
        try:
            trajs, meta = load_trajectories(path)
        except (ValueError, KeyError, json.JSONDecodeError) as e:
            raise StageError(f"{path}: {e}") from e
        self.check_lineage(stage, path, meta)
        return trajs

    def load_qa(self):
        path = self.upstream("build-qa")
        pairs, meta = load_qa(path)
        self.check_lineage("build-qa", path, meta)
        return pairs

    def load_model(self, stage: str, cls):
        path = self.upstream(stage)
        try:
            model, head = cls.load(path, self.world)
        except ValueError as e:
            raise StageError(str(e)) from e
        self.check_lineage(stage, path, head)
        return model


def _stamp_csv(path: Path, meta: dict) -> None:
    """Prefix a CSV with a ``#`` comment line carrying the lineage fields."""
    tag = " ".join(f"{k}={meta[k]}" for k in sorted(meta))
    path.write_text(f"# {tag}\n" + path.read_text(encoding="utf-8"), encoding="utf-8")


def _write_json(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# stages


def stage_gen_data(ctx: Context) -> None:
    trajs = gen_data(ctx.cfg, ctx.world)
    d = ctx.dir("gen-data")
    save_trajectories(d / PRIMARY["gen-data"], trajs, ctx.meta("gen-data"))
    n_ok = sum(t.f_s for t in trajs)
    log.info("gen-data: %d trajectories, %d successful", len(trajs), n_ok)


def stage_build_qa(ctx: Context) -> None:
    trajs = ctx.load_trajs("gen-data")
    pairs = build_qa(trajs, ctx.world)
    save_qa(ctx.dir("build-qa") / PRIMARY["build-qa"], pairs, ctx.meta("build-qa"))
    log.info("build-qa: %d pairs", len(pairs))


def stage_estimate(ctx: Context) -> None:
    trajs = ctx.load_trajs("gen-data")
    pairs = ctx.load_qa()
    hub = make_hub(ctx.cfg, ctx.world)
    res = estimate(trajs, pairs, hub, jobs=ctx.jobs)
    d = ctx.dir("estimate")
    save_trajectories(d / PRIMARY["estimate"], res.trajectories, ctx.meta("estimate"))
    write_diagnostics(d / "diagnostics.csv", res, hub.personas)
    _stamp_csv(d / "diagnostics.csv", ctx.meta("estimate"))
    _write_json(d / "summary.json", {**ctx.meta("estimate"), "annotated": len(res.trajectories),
                                     "dropped": [list(x) for x in res.dropped],
                                     "personas": [p.to_json() for p in hub.personas]})
    log.info("estimate: %d annotated, %d dropped", len(res.trajectories), len(res.dropped))


def stage_train_orchestrator(ctx: Context) -> None:
    trajs = ctx.load_trajs("estimate")
    model, curve = train_orchestrator(trajs, ctx.cfg, ctx.world)
    d = ctx.dir("train-orchestrator")
    model.save(d / PRIMARY["train-orchestrator"], ctx.meta("train-orchestrator"))
    write_curve(d / "curve.csv", curve)
    _stamp_csv(d / "curve.csv", ctx.meta("train-orchestrator"))
    w = model.mean_weights(trajs)
    log.info("train-orchestrator: %d epochs, mean weights C=%.3f S=%.3f T=%.3f", len(curve) - 1, *w)


def stage_emit_rewards(ctx: Context) -> None:
    trajs = ctx.load_trajs("estimate")
    model = ctx.load_model("train-orchestrator", Orchestrator)
    unified = model.emit(trajs)
    save_trajectories(ctx.dir("emit-rewards") / PRIMARY["emit-rewards"], unified, ctx.meta("emit-rewards"))
    log.info("emit-rewards: %d trajectories", len(unified))


def stage_train_policy(ctx: Context) -> None:
    trajs = ctx.load_trajs("emit-rewards")
    policy, logs = train_policy(trajs, ctx.cfg, ctx.world)
    d = ctx.dir("train-policy")
    policy.save(d / PRIMARY["train-policy"], ctx.meta("train-policy"))
    write_log(d / "log.csv", logs)
    _stamp_csv(d / "log.csv", ctx.meta("train-policy"))
    log.info("train-policy: %d updates", ctx.cfg.policy.steps)


def stage_evaluate(ctx: Context) -> None:
    policy = ctx.load_model("train-policy", QLearner)
    report = run_evaluation(policy, ctx.world, ctx.cfg, jobs=ctx.jobs)
    d = ctx.dir("evaluate")
    report.write(d / "report.csv", d / PRIMARY["evaluate"], ctx.meta("evaluate"))
    _stamp_csv(d / "report.csv", ctx.meta("evaluate"))
    log.info("evaluate: SR %.1f CGC %.1f Plan %.1f", report.sr(), report.cgc(), report.plan())
    fails = threshold_failures(report, ctx.cfg.raw["eval"]["thresholds"])
    if fails:
        raise ThresholdError("thresholds not met: " + ", ".join(fails))


def stage_cross_domain(ctx: Context) -> None:
    trajs = ctx.load_trajs("estimate")
    source = ctx.load_model("train-policy", QLearner)
    res = cross_domain_run(ctx.world, trajs, source, ctx.cfg, jobs=ctx.jobs)
    d = ctx.dir("cross-domain")
    meta = ctx.meta("cross-domain")
    save_trajectories(d / "relabeled.jsonl", res.relabeled, meta)
    res.orchestrator.save(d / "orchestrator.ckpt", meta)
    res.policy.save(d / "policy.ckpt", meta)
    res.adapted.write(d / "adapted.csv", d / "adapted.json", meta)
    res.unadapted.write(d / "unadapted.csv", d / "unadapted.json", meta)
    _stamp_csv(d / "adapted.csv", meta)
    _stamp_csv(d / "unadapted.csv", meta)
    _write_json(d / PRIMARY["cross-domain"], {**meta, **res.summary()})
    log.info("cross-domain: adapted SR %.1f, unadapted SR %.1f", res.adapted.sr(), res.unadapted.sr())


RUNNERS = {
    "gen-data": stage_gen_data,
    "build-qa": stage_build_qa,
    "estimate": stage_estimate,
    "train-orchestrator": stage_train_orchestrator,
    "emit-rewards": stage_emit_rewards,
    "train-policy": stage_train_policy,
    "evaluate": stage_evaluate,
    "cross-domain": stage_cross_domain,
}

HELP = {
    "gen-data": "forge expert and corrupted trajectories with success flags",
    "build-qa": "build the object-relevance QA set from expert trajectories",
    "estimate": "annotate every step with the consistency reward triple",
    "train-orchestrator": "fit the reward orchestrator on the annotated dataset",
    "emit-rewards": "write unified rewards using the trained orchestrator",
    "train-policy": "train the offline Q policy on unified rewards",
    "evaluate": "roll out the policy on held-out instructions and report SR/CGC/Plan",
    "cross-domain": "relabel under a domain shift, retrain orchestrator and policy, compare",
    "run-all": "run every stage in order (cross-domain included)",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None,
                        help="pipeline config JSON (defaults to the bundled configuration)")
    common.add_argument("--out", type=Path, default=Path("runs/default"),
                        help="output root; artifacts go to <out>/<stage>/ (default: runs/default)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. --set orchestrator.mode='\"average\"' (repeatable)")
    common.add_argument("--seed", type=int, default=None, help="replace the config's root seed")
    common.add_argument("--force", action="store_true",
                        help="accept upstream artifacts whose config hash does not match")
    common.add_argument("--jobs", type=int, default=1, help="maximum worker threads per stage (default: 1)")
    common.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")

    p = argparse.ArgumentParser(prog="reward-ensemble",
                                description="Consistency-guided reward ensemble and offline RL pipeline.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    for name in STAGES + ("run-all",):
        sp = sub.add_parser(name, parents=[common], help=HELP[name], description=HELP[name])
        if name == "run-all":
            sp.add_argument("--skip-cross-domain", action="store_true", help="stop after evaluate")
    return p


def load_config(args: argparse.Namespace) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig.from_dict()
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    return cfg.with_overrides(overrides) if overrides else cfg


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 0 for --help/--version and 2 for usage errors
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose + 1, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.jobs < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = load_config(args)
        ctx = Context(cfg, args.out, args.force, args.jobs)
        ctx.world  # validate the world file before any stage runs
    except (ConfigError, WorldConfigError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE

    if args.command == "run-all":
        order = [s for s in STAGES if not (args.skip_cross_domain and s == "cross-domain")]
    else:
        order = [args.command]
    threshold_msg = None
    try:
        for stage in order:
            try:
                RUNNERS[stage](ctx)
            except ThresholdError as e:
                threshold_msg = str(e)  # keep going so run-all still writes every artifact
    except (StageError, EstimatorError, WorldConfigError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_STAGE
    if threshold_msg:
        print(f"error: {threshold_msg}", file=sys.stderr)
        return EXIT_THRESHOLD
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
