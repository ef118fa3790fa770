"""Command-line entry point.

Subcommands: simulate, train, construct-data, audit-contamination, report, replay.

Settings resolve in three layers: built-in defaults, then an optional
``--config`` file, then flags given on the command line. The config file holds
one ``key = value`` pair per line (``#`` starts a comment); keys are flag names
with or without the leading dashes. Every run writes a manifest next to its
outputs recording the resolved settings, their hash, input and output digests
and library versions; ``replay --manifest M`` re-runs it and checks every
output byte for byte.

Exit codes: 0 ok, 1 runtime failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import platform
import shutil
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .contamination import audit
from .core import ACTIONS, Choice, read_prompts, read_trajectories, write_trajectories
from .datagen import (
    SimProposer,
    construct_logs,
    encode_record,
    export_conversational,
    filter_trajectories,
    write_jsonl,
)
from .env import LiveEnv, SimEnv, SimEnvConfig, run_episode, synthetic_prompts
from .metrics import (
    CostModel,
    action_distribution,
    avg_turns,
    best_vs_final,
    correct_stop_rate,
    latency_account,
    per_turn_curve,
)
from .policy import FixedPolicy, HeuristicPolicy, PolicyParams, SoftmaxPolicy, preference_reference
from .reward import RewardVariant, RewardWeights
from .rng import Stream
from .trainer import TrainConfig, evaluate, train

MANIFEST_FORMAT = 1


class UsageError(Exception):
    """Bad settings or unreadable input; maps to exit code 2."""


def _variant(s: str) -> str:
    v = s.strip().upper().replace("-", "_")
    if v not in RewardVariant.__members__:
        raise argparse.ArgumentTypeError(f"unknown reward variant {s!r}")
    return v


def _positive_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {s}")
    return v


def _nonneg_int(s: str) -> int:
    v = int(s)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected an integer >= 0, got {s}")
    return v


# Defaults per subcommand; keys double as config-file keys.
DEFAULTS: dict[str, dict] = {
    "simulate": {
        "policy": "heuristic", "params": None, "prompts": None, "n_prompts": 100, "seed": 0,
        "tmax": 3, "env": None, "generator_url": None, "reviewer_url": None, "out": None, "workers": None,
    },
    "train": {
        "reward_variant": "PRE_GRPO", "alpha": 0.25, "beta": 0.025, "gamma": 0.1, "k": 8, "steps": 300,
        "seed": 0, "tmax": 3, "lr": 5.0, "clip": 0.2, "prompts_per_step": 4, "init": "heuristic",
        "prompts": None, "n_prompts": 200, "eval_prompts": 200, "env": None, "out": None, "workers": None,
    },
    "construct-data": {
        "k": 4, "tmax": 3, "rho_thr": 4.5, "n_prompts": 200, "seed": 0, "prompts": None,
        "refine_share": 0.5, "env": None, "out": None, "workers": None,
    },
    "audit-contamination": {
        "bench": None, "pool": None, "vectors_bench": None, "vectors_pool": None,
        "containment_threshold": 0.70, "cosine_threshold": 0.8, "report": None,
    },
    "report": {
        "logs": None, "out": None, "cost_generation": 0.0, "cost_review": 0.0, "cost_decision": 0.0,
        "stop_threshold": 4.5,
    },
}

INPUT_KEYS = {
    "simulate": ("params", "prompts", "env"),
    "train": ("prompts", "env"),
    "construct-data": ("prompts", "env"),
    "audit-contamination": ("bench", "pool", "vectors_bench", "vectors_pool"),
    "report": ("logs",),
}

# Settings that do not change results and stay out of the config hash.
_UNHASHED = {"out", "report", "workers"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="genav", description="Generation navigator toolkit.")
    parser.add_argument("--version", action="version", version=f"genav {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name: str, help_: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_, argument_default=argparse.SUPPRESS)
        if name != "replay":
            p.add_argument("--config", help="key = value settings file; explicit flags win")
        return p

    def env_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--env", help="JSON file with simulated-environment settings")
        p.add_argument("--workers", type=_positive_int, help="parallel episode workers (default: all cores)")

    p = add("simulate", "roll out a navigator policy and log trajectories")
    p.add_argument("--policy", choices=["heuristic", "refine", "regenerate", "oneshot", "reference", "params"])
    p.add_argument("--params", help="policy weights file (with --policy params)")
    p.add_argument("--prompts", help="prompt pool, one JSON object per line")
    p.add_argument("--n-prompts", type=_positive_int, help="synthetic prompts when --prompts is absent")
    p.add_argument("--seed", type=int)
    p.add_argument("--tmax", type=_positive_int)
    p.add_argument("--generator-url")
    p.add_argument("--reviewer-url")
    p.add_argument("--out", help="output directory")
    env_flags(p)

    p = add("train", "train the navigator policy with group-relative updates")
    p.add_argument("--reward-variant", type=_variant)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--k", type=int, help="group size")
    p.add_argument("--steps", type=_nonneg_int)
    p.add_argument("--seed", type=int)
    p.add_argument("--tmax", type=_positive_int)
    p.add_argument("--lr", type=float)
    p.add_argument("--clip", type=float)
    p.add_argument("--prompts-per-step", type=_positive_int)
    p.add_argument("--init", choices=["heuristic", "zeros"])
    p.add_argument("--prompts")
    p.add_argument("--n-prompts", type=_positive_int)
    p.add_argument("--eval-prompts", type=_nonneg_int, help="held-out synthetic prompts for the final evaluation")
    p.add_argument("--out", help="output directory")
    env_flags(p)

    p = add("construct-data", "build branch-and-select trajectories and the filtered dataset")
    p.add_argument("--k", type=_positive_int)
    p.add_argument("--tmax", type=_positive_int)
    p.add_argument("--rho-thr", type=float)
    p.add_argument("--n-prompts", type=_positive_int)
    p.add_argument("--seed", type=int)
    p.add_argument("--prompts")
    p.add_argument("--refine-share", type=float)
    p.add_argument("--out", help="output directory")
    env_flags(p)

    p = add("audit-contamination", "lexical and embedding overlap between a benchmark and a training pool")
    p.add_argument("--bench", help="benchmark prompts, one per line")
    p.add_argument("--pool", help="training prompts, one per line")
    p.add_argument("--vectors-bench", help="benchmark embeddings, one comma-separated row per prompt")
    p.add_argument("--vectors-pool", help="pool embeddings, one comma-separated row per prompt")
    p.add_argument("--containment-threshold", type=float)
    p.add_argument("--cosine-threshold", type=float)
    p.add_argument("--report", help="output JSON report")

    p = add("report", "diagnostic tables and CSVs from trajectory logs")
    p.add_argument("--logs", help="trajectory log, one JSON object per line")
    p.add_argument("--out", help="output directory")
    p.add_argument("--cost-generation", type=float)
    p.add_argument("--cost-review", type=float)
    p.add_argument("--cost-decision", type=float)
    p.add_argument("--stop-threshold", type=float)

    p = add("replay", "re-run a manifest and verify its outputs bit for bit")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", help="directory for the re-run (default: a temporary directory)")
    return parser


def read_config_file(path: str | os.PathLike) -> dict[str, str]:
    if not os.path.isfile(path):
        raise UsageError(f"config file not found: {path}")
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key.lstrip("-").replace("-", "_")] = value
    return values


def _converters(parser: argparse.ArgumentParser, command: str) -> dict:
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction)).choices[command]
    return {a.dest: (a.type or str, a.choices) for a in sub._actions if a.dest not in ("help", "config")}


def resolve(parser: argparse.ArgumentParser, ns: argparse.Namespace) -> dict:
    """Defaults, then config file, then explicit flags."""
    command = ns.command
    cfg = dict(DEFAULTS[command])
    explicit = {k: v for k, v in vars(ns).items() if k not in ("command", "config")}
    if getattr(ns, "config", None):
        conv = _converters(parser, command)
        for key, raw in read_config_file(ns.config).items():
            if key not in cfg:
                raise UsageError(f"{ns.config}: unknown setting {key!r} for {command}")
            typ, choices = conv[key]
            try:
                value = typ(raw)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"{ns.config}: bad value for {key}: {exc}") from exc
            if choices is not None and value not in choices:
                raise UsageError(f"{ns.config}: {key} must be one of {sorted(choices)}")
            cfg[key] = value
    cfg.update(explicit)
    for key in INPUT_KEYS.get(command, ()):
        if cfg.get(key) is not None:
            path = Path(cfg[key])
            if not path.is_file():
                raise UsageError(f"input file not found: {path}")
            cfg[key] = str(path.resolve())
    return cfg


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(command: str, cfg: dict) -> str:
    payload = {"command": command, **{k: v for k, v in cfg.items() if k not in _UNHASHED}}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()


def _versions() -> dict:
    import scipy

    return {"genav": __version__, "python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__}


class Outputs:
    """Tracks files a run creates so a failed run leaves nothing half-written."""

    def __init__(self, root: Path, manifest_name: str = "manifest.json"):
        self.root = root
        self.manifest_name = manifest_name
        self._made_root = not root.exists()
        self.files: dict[str, Path] = {}

    def path(self, name: str) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        p = self.root / name
        self.files[name] = p
        return p

    def digests(self) -> dict[str, str]:
        return {name: sha256_file(p) for name, p in sorted(self.files.items())}

    def cleanup(self) -> None:
        for p in list(self.files.values()) + [self.root / self.manifest_name]:
            if p.exists():
                p.unlink()
        if self._made_root and self.root.exists() and not any(self.root.iterdir()):
            self.root.rmdir()


def _outputs_for(command: str, cfg: dict) -> Outputs:
    if command == "audit-contamination":
        if not cfg.get("report"):
            raise UsageError("audit-contamination requires --report")
        report = Path(cfg["report"])
        return Outputs(report.parent if str(report.parent) else Path("."), report.name + ".manifest.json")
    if not cfg.get("out"):
        raise UsageError(f"{command} requires --out")
    return Outputs(Path(cfg["out"]))


def _workers(cfg: dict) -> int:
    return cfg.get("workers") or os.cpu_count() or 1


def _make_env(cfg: dict):
    if cfg.get("generator_url") or cfg.get("reviewer_url"):
        if not (cfg.get("generator_url") and cfg.get("reviewer_url")):
            raise UsageError("live mode needs both --generator-url and --reviewer-url")
        return LiveEnv(cfg["generator_url"], cfg["reviewer_url"])
    if cfg.get("env"):
        try:
            with open(cfg["env"], encoding="utf-8") as fh:
                return SimEnv(SimEnvConfig.from_dict(json.load(fh)))
        except (json.JSONDecodeError, TypeError, ValueError) as exc:
            raise UsageError(f"bad environment file {cfg['env']}: {exc}") from exc
    return SimEnv()


def _prompts(cfg: dict, prefix: str = "p"):
    if cfg.get("prompts"):
        try:
            prompts = read_prompts(cfg["prompts"])
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise UsageError(f"bad prompt file {cfg['prompts']}: {exc}") from exc
        if not prompts:
            raise UsageError(f"prompt file is empty: {cfg['prompts']}")
        return prompts
    return synthetic_prompts(cfg["n_prompts"], cfg["seed"], prefix)


def _simulate_chunk(args):
    policy_name, policy, env, prompts, offset, t_max, seed = args
    out = []
    for j, p in enumerate(prompts):
        stream = Stream(seed, (offset + j,))
        if policy_name == "reference":
            out.append(preference_reference(env, p, t_max, stream)[0])
        else:
            out.append(run_episode(policy, env, p, t_max, stream))
    return out


def _chunks(n: int, workers: int) -> list[tuple[int, int]]:
    size = max(1, -(-n // (workers * 4)))
    return [(i, min(n, i + size)) for i in range(0, n, size)]


def _parallel_map(fn, jobs: list, workers: int) -> list:
    if workers <= 1 or len(jobs) < 2:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def cmd_simulate(cfg: dict, out: Outputs) -> None:
    env = _make_env(cfg)
    prompts = _prompts(cfg)
    name = cfg["policy"]
    policies = {
        "heuristic": HeuristicPolicy(),
        "refine": FixedPolicy(Choice.REFINE),
        "regenerate": FixedPolicy(Choice.REGENERATE),
        "oneshot": FixedPolicy(Choice.STOP),
        "reference": None,
    }
    if name == "params":
        if not cfg.get("params"):
            raise UsageError("--policy params requires --params FILE")
        try:
            policy = SoftmaxPolicy(PolicyParams.load(cfg["params"]))
        except ValueError as exc:
            raise UsageError(f"bad policy file {cfg['params']}: {exc}") from exc
    else:
        policy = policies[name]
    jobs = [(name, policy, env, prompts[a:b], a, cfg["tmax"], cfg["seed"]) for a, b in _chunks(len(prompts), _workers(cfg))]
    trajs = [t for chunk in _parallel_map(_simulate_chunk, jobs, _workers(cfg)) for t in chunk]
    write_trajectories(out.path("trajectories.jsonl"), trajs)
    bvf = best_vs_final(trajs)
    summary = {
        "episodes": len(trajs),
        "mean_best": bvf.mean_best,
        "mean_final": bvf.mean_final,
        "avg_turns": avg_turns(trajs),
        "per_turn_curve": {str(t): v for t, v in per_turn_curve(trajs).items()},
        "action_distribution": {a.value: v for a, v in action_distribution(trajs).items()},
    }
    _write_json(out.path("summary.json"), summary)


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def train_config(cfg: dict) -> TrainConfig:
    try:
        weights = RewardWeights(alpha=cfg["alpha"], beta=cfg["beta"], gamma=cfg["gamma"], t_max=cfg["tmax"])
        return TrainConfig(
            group_size=cfg["k"], steps=cfg["steps"], learning_rate=cfg["lr"], clip_epsilon=cfg["clip"],
            reward_variant=RewardVariant(cfg["reward_variant"]), weights=weights, seed=cfg["seed"],
            prompts_per_step=cfg["prompts_per_step"], init=cfg["init"],
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


CURVE_FIELDS = ("step", "mean_reward", "clip_fraction", "mean_turns", "mean_peak", "mean_gap")


def cmd_train(cfg: dict, out: Outputs) -> None:
    config = train_config(cfg)
    env = _make_env(cfg)
    prompts = _prompts(cfg)
    params, curve = train(config, env, prompts)
    params.save(out.path("policy.txt"))
    write_jsonl(out.path("curve.jsonl"), (json.dumps(rec, sort_keys=True) for rec in curve))
    with open(out.path("curve.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_FIELDS + tuple(f"share_{a.value.lower()}" for a in ACTIONS))
        for rec in curve:
            w.writerow([repr(rec[f]) for f in CURVE_FIELDS] + [repr(rec["action_distribution"][a.value]) for a in ACTIONS])
    if cfg["eval_prompts"] > 0:
        held_out = synthetic_prompts(cfg["eval_prompts"], cfg["seed"] + 1, prefix="e")
        report = evaluate(params, env, held_out, config.t_max, [cfg["seed"]], config.weights.rho_max)
        _write_json(out.path("eval.json"), report.to_dict())


def cmd_construct(cfg: dict, out: Outputs) -> None:
    if not 0.0 < cfg["rho_thr"] <= 5.0:
        raise UsageError("--rho-thr must lie in (0, 5]")
    try:
        proposer = SimProposer(cfg["refine_share"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    env = _make_env(cfg)
    prompts = _prompts(cfg)
    logs = construct_logs(proposer, env, prompts, cfg["k"], cfg["tmax"], cfg["rho_thr"], cfg["seed"], _workers(cfg))
    write_jsonl(out.path("branch_logs.jsonl"), (encode_record(log.to_dict()) for log in logs))
    result = filter_trajectories(logs, cfg["rho_thr"])
    write_jsonl(out.path("conversations.jsonl"), export_conversational(result.kept))
    write_trajectories(out.path("selected_trajectories.jsonl"), (log.to_trajectory() for log in result.kept))
    _write_json(out.path("filter_stats.json"), result.stats)


def _read_lines(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh if line.strip()]


def _read_vectors(path) -> np.ndarray:
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise UsageError(f"bad vector file {path}: {exc}") from exc


def _distribution(values: list[float]) -> dict | None:
    if not values:
        return None
    q = np.quantile(np.asarray(values, dtype=float), [0.0, 0.25, 0.5, 0.75, 0.95, 1.0])
    return dict(zip(("min", "p25", "median", "p75", "p95", "max"), (float(x) for x in q)))


def cmd_audit(cfg: dict, out: Outputs) -> None:
    for key in ("bench", "pool"):
        if not cfg.get(key):
            raise UsageError(f"audit-contamination requires --{key}")
    bench, pool = _read_lines(cfg["bench"]), _read_lines(cfg["pool"])
    vb = vp = None
    if cfg.get("vectors_bench") or cfg.get("vectors_pool"):
        if not (cfg.get("vectors_bench") and cfg.get("vectors_pool")):
            raise UsageError("--vectors-bench and --vectors-pool go together")
        vb, vp = _read_vectors(cfg["vectors_bench"]), _read_vectors(cfg["vectors_pool"])
        if len(vb) != len(bench) or len(vp) != len(pool):
            raise UsageError("vector files must have one row per prompt")
    result = audit(bench, pool, vb, vp, cfg["containment_threshold"], cfg["cosine_threshold"])
    rows = result["rows"]
    metrics = ["jaccard5", "containment5", "containment8"] + (["cosine"] if vb is not None else [])
    result["distributions"] = {m: _distribution([r[m] for r in rows if r.get(m) is not None]) for m in metrics}
    result["flagged"] = {
        "flag_8gram": [r["index"] for r in rows if r["flag_8gram"]],
        "collision13": [r["index"] for r in rows if r["collision13"]],
        "flag_cosine": [r["index"] for r in rows if r.get("flag_cosine")],
    }
    _write_json(out.path(Path(cfg["report"]).name), result)


def cmd_report(cfg: dict, out: Outputs) -> None:
    if not cfg.get("logs"):
        raise UsageError("report requires --logs")
    try:
        trajs = list(read_trajectories(cfg["logs"]))
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise UsageError(f"bad trajectory log {cfg['logs']}: {exc}") from exc
    if not trajs:
        raise UsageError(f"trajectory log is empty: {cfg['logs']}")
    shares = action_distribution(trajs)
    curve = per_turn_curve(trajs)
    bvf = best_vs_final(trajs)
    cost = CostModel(cfg["cost_generation"], cfg["cost_review"], cfg["cost_decision"])
    lat = latency_account(trajs, cost)
    stop_rate = correct_stop_rate(trajs, cfg["stop_threshold"])
    turns = avg_turns(trajs)

    def table(name: str, header: list[str], rows) -> None:
        with open(out.path(name), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)

    table("action_distribution.csv", ["action", "share"], [[a.value, repr(shares[a])] for a in ACTIONS])
    table("per_turn_curve.csv", ["turn", "mean_score"], [[t, repr(v)] for t, v in curve.items()])
    table("turns.csv", ["prompt_id", "turns", "terminated_by"], [[tr.prompt.id, tr.length, tr.terminated_by.value] for tr in trajs])
    table("best_vs_final.csv", ["mean_best", "mean_final", "delta"], [[repr(bvf.mean_best), repr(bvf.mean_final), repr(bvf.delta)]])
    table("latency.csv", ["turn", "seconds"], [[t, repr(v)] for t, v in lat.per_turn.items()] + [["total", repr(lat.total)]])
    lines = [
        f"trajectories        {len(trajs)}",
        f"average turns       {turns:.4f}",
        f"mean best score     {bvf.mean_best:.4f}",
        f"mean final score    {bvf.mean_final:.4f}",
        f"best - final        {bvf.delta:.4f}",
        f"correct stop rate   {stop_rate:.4f}",
        f"latency total (s)   {lat.total:.4f}",
        f"latency per traj    {lat.per_trajectory:.4f}",
        "action shares (turns >= 2)",
        *(f"  {a.value:<11}{shares[a]:.4f}" for a in ACTIONS),
        "mean score per turn",
        *(f"  t={t:<9}{v:.4f}" for t, v in curve.items()),
    ]
    with open(out.path("report.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "construct-data": cmd_construct,
    "audit-contamination": cmd_audit,
    "report": cmd_report,
}


def _input_digests(command: str, cfg: dict) -> dict[str, str]:
    return {cfg[k]: sha256_file(cfg[k]) for k in INPUT_KEYS[command] if cfg.get(k)}


def execute(command: str, cfg: dict) -> Path:
    """Run one subcommand with resolved settings; returns the manifest path."""
    out = _outputs_for(command, cfg)
    try:
        COMMANDS[command](cfg, out)
        manifest = {
            "format": MANIFEST_FORMAT,
            "command": command,
            "config": cfg,
            "seed": cfg.get("seed"),
            "config_hash": config_hash(command, cfg),
            "versions": _versions(),
            "inputs": _input_digests(command, cfg),
            "outputs": out.digests(),
        }
        path = out.root / out.manifest_name
        _write_json(path, manifest)
        return path
    except BaseException:
        out.cleanup()
        raise


def replay(manifest_path: str, out_dir: str | None = None) -> tuple[bool, list[str]]:
    """Re-run a manifest; returns (all outputs identical, mismatch descriptions)."""
    if not os.path.isfile(manifest_path):
        raise UsageError(f"manifest not found: {manifest_path}")
    try:
        with open(manifest_path, encoding="utf-8") as fh:
            manifest = json.load(fh)
        command, cfg = manifest["command"], dict(manifest["config"])
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise UsageError(f"bad manifest {manifest_path}: {exc}") from exc
    if command not in COMMANDS:
        raise UsageError(f"manifest names unknown command {command!r}")
    problems = []
    for path, digest in manifest.get("inputs", {}).items():
        if not os.path.isfile(path):
            raise UsageError(f"input file not found: {path}")
        if sha256_file(path) != digest:
            problems.append(f"input changed since the run: {path}")
    if config_hash(command, cfg) != manifest.get("config_hash"):
        problems.append("manifest settings do not match their recorded hash")
    tmp = None
    if out_dir is None:
        tmp = tempfile.mkdtemp(prefix="genav-replay-")
        out_dir = tmp
    try:
        if command == "audit-contamination":
            cfg["report"] = str(Path(out_dir) / Path(cfg["report"]).name)
        else:
            cfg["out"] = out_dir
        new_manifest = execute(command, cfg)
        with open(new_manifest, encoding="utf-8") as fh:
            fresh = json.load(fh)["outputs"]
    finally:
        if tmp is not None:
            shutil.rmtree(tmp, ignore_errors=True)
    recorded = manifest.get("outputs", {})
    # Files still sitting beside the manifest must match what it recorded.
    base = Path(manifest_path).parent
    for name, digest in sorted(recorded.items()):
        on_disk = base / name
        if on_disk.is_file() and sha256_file(on_disk) != digest:
            problems.append(f"recorded output was modified: {name}")
    for name in sorted(set(recorded) | set(fresh)):
        if recorded.get(name) != fresh.get(name):
            problems.append(f"output differs: {name}")
    return not problems, problems


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if ns.command == "replay":
            ok, problems = replay(ns.manifest, getattr(ns, "out", None))
            for p in problems:
                print(f"replay: {p}", file=sys.stderr)
            if ok:
                print(f"replay: all outputs of {ns.manifest} reproduced bit for bit")
            return 0 if ok else 1
        cfg = resolve(parser, ns)
        manifest = execute(ns.command, cfg)
        print(f"{ns.command}: wrote {manifest}")
        return 0
    except UsageError as exc:
        print(f"genav: error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        print("genav: interrupted", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"genav: {ns.command} failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
