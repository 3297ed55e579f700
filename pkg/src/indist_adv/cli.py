"""Command-line entry point: ``indist-adv <command> [--config FILE] [flags]``.

Every command resolves a flat JSON config (defaults, then ``--config``, then
flags), runs, and writes its outputs plus ``manifest.json`` into ``--out``.
A manifest can be passed back as ``--config`` to replay the run.

Exit codes: 0 success, 1 run failure, 2 usage error or unknown command,
3 malformed config, 4 missing input file.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shlex
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import evaluation as ev
from .cma_search import AttackPreconditionError, attack, parametric_space, read_outcomes, write_outcomes
from .manifest import MANIFEST_NAME, Manifest, ManifestError, is_manifest, manifest_from_json, manifest_write
from .mlp import TrainConfig, accuracy, load_model, mlp_init, save_model, train
from .parallel import resolve_jobs
from .parametric_data import LabeledDataset, UniformPairSupport, read_dataset, sample_dataset, write_dataset
from .scene_space import OracleError, SceneVector, SubprocessOracle, attack_scene, sample_scene
from .seeding import derive_seed, make_rng
from .stochasticity import (AblationSpec, BaseConfig, BaseModelGateError, EvalConfig, Source, find_robust_base,
                            run_ablation)

log = logging.getLogger("indist_adv")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_MISSING = 4


class ConfigError(ValueError):
    pass


class MissingInput(FileNotFoundError):
    pass


# -- parameter declarations ---------------------------------------------------

def _int(v):
    if isinstance(v, bool) or not isinstance(v, int):
        raise TypeError("an integer")
    return v


def _float(v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise TypeError("a number")
    return float(v)


def _str(v):
    if not isinstance(v, str):
        raise TypeError("a string")
    return v


def _opt(conv):
    return lambda v: None if v is None else conv(v)


def _command(v):
    if isinstance(v, str):
        v = shlex.split(v)
    if not isinstance(v, list) or not v or not all(isinstance(x, str) for x in v):
        raise TypeError("a command string or a non-empty list of strings")
    return v


def _list(conv):
    def f(v):
        if not isinstance(v, list) or not v:
            raise TypeError("a non-empty list")
        return [conv(x) for x in v]
    return f


@dataclass(frozen=True)
class Param:
    name: str
    conv: Callable[[Any], Any]
    default: Any
    help: str
    argtype: Callable | None = None  # argparse type; None for flags taking lists
    nargs: str | None = None
    is_input: bool = False


def P(name, kind, default, help, is_input=False):
    table = {
        "int": (_int, int, None), "float": (_float, float, None), "str": (_str, str, None),
        "optint": (_opt(_int), int, None), "optfloat": (_opt(_float), float, None),
        "optstr": (_opt(_str), str, None),
        "ints": (_list(_int), int, "+"), "strs": (_list(_str), str, "+"),
        "optcmd": (_opt(_command), str, None),
    }
    conv, argtype, nargs = table[kind]
    return Param(name, conv, default, help, argtype, nargs, is_input)


SEED = P("seed", "int", 0, "master seed; sub-seeds left unset derive from it")


def _seed_params(*labels):
    return [P(f"{lab}_seed", "optint", None, f"explicit {lab} seed (default: derived from --seed)")
            for lab in labels]


TRAIN = [
    P("learning_rate", "float", 0.1, "SGD learning rate on the batch-mean loss"),
    P("epochs", "int", 100, "training epochs"),
    P("batch_size", "int", 64000, "minibatch size"),
]
ATTACK = [
    P("max_generations", "int", 1500, "CMA-Search generation cap"),
    P("sigma0", "optfloat", None, "initial step size in input units (default: 5%% of the range)"),
]
TEST = [P("test_size", "int", 2000, "held-out points for accuracy")]

# sub-seed name -> derivation label
SEED_LABELS = {"data_seed": "data", "init_seed": "init", "sgd_seed": "sgd", "test_seed": "test",
               "attack_seed": "attack", "scene_seed": "scenes", "orth_seed": "orth"}

COMMANDS: dict[str, dict] = {}


def command(name, help, params):
    def deco(fn):
        COMMANDS[name] = {"help": help, "params": params, "run": fn}
        return fn
    return deco


def _train_cfg(cfg, sgd_seed=0) -> TrainConfig:
    return TrainConfig(cfg["learning_rate"], cfg["epochs"], cfg["batch_size"], sgd_seed)


def _attack_cfg(cfg) -> ev.AttackConfig:
    return ev.AttackConfig(cfg["max_generations"], cfg["sigma0"])


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- commands -------------------------------------------------------------------

@command("gen-data", "sample a labeled dataset from the two-cube distribution", [
    P("dim", "int", 20, "input dimension"),
    P("n_per_class", "int", 500, "points per class"),
    SEED, *_seed_params("data"),
])
def cmd_gen_data(cfg, out: Path, jobs):
    data = sample_dataset(UniformPairSupport(cfg["dim"]), cfg["n_per_class"], cfg["data_seed"])
    write_dataset(data, out / "data.csv")
    return ["data.csv"]


@command("train", "train an MLP on a dataset file or a freshly sampled one", [
    P("data", "optstr", None, "dataset file (default: sample dim/dataset_size points)", is_input=True),
    P("dim", "int", 20, "input dimension when sampling"),
    P("dataset_size", "int", 1000, "total points when sampling"),
    *TRAIN, *TEST, SEED, *_seed_params("data", "init", "sgd", "test"),
])
def cmd_train(cfg, out: Path, jobs):
    seeds = ev.ModelSeeds(cfg["data_seed"], cfg["init_seed"], cfg["sgd_seed"])
    tcfg = _train_cfg(cfg)
    outputs = ["model.json", "history.json", "metrics.json"]
    if cfg["data"]:
        data = read_dataset(cfg["data"])
        model, history = train(mlp_init(data.support.dim, seeds.init_seed), data,
                               _train_cfg(cfg, seeds.sgd_seed))
    else:
        model, data, history = ev.fit_model(cfg["dim"], cfg["dataset_size"], seeds, tcfg)
        write_dataset(data, out / "data.csv")
        outputs.append("data.csv")
    test_acc = ev.held_out_accuracy(model, data.support, cfg["test_seed"], cfg["test_size"])
    save_model(model, out / "model.json")
    _write_json(out / "history.json", {"loss": history})
    _write_json(out / "metrics.json", {"train_accuracy": accuracy(model, data), "test_accuracy": test_acc,
                                       "passes_gate": test_acc > ev.ACCURACY_GATE})
    log.info("test accuracy %.4f", test_acc)
    return outputs


def _load_parametric_model(path):
    model = load_model(path)
    return model, UniformPairSupport(model.input_dim)


def _read_starts(path):
    starts = []
    with open(path) as fh:
        for i, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                starts.append((np.asarray(obj["start"], dtype=float), int(obj["true_label"])))
            except (ValueError, KeyError, TypeError) as exc:
                raise ConfigError(f"{path}: line {i}: expected {{\"start\": [...], \"true_label\": k}} ({exc})")
    return starts


@command("attack", "run CMA-Search from given or freshly drawn correctly classified starts", [
    P("model", "str", "model.json", "model file", is_input=True),
    P("starts", "optstr", None, "JSON-lines file of {start, true_label} (default: draw n_starts)", is_input=True),
    P("n_starts", "int", 10, "starts to draw when no starts file is given"),
    *ATTACK, SEED, *_seed_params("attack"),
])
def cmd_attack(cfg, out: Path, jobs):
    model, support = _load_parametric_model(cfg["model"])
    acfg = _attack_cfg(cfg)
    if cfg["starts"]:
        outcomes = []
        for i, (x, y) in enumerate(_read_starts(cfg["starts"])):
            outcomes.append(attack(model, y, x, parametric_space(support, y), acfg.max_generations,
                                   acfg.sigma0, derive_seed(cfg["attack_seed"], "start", i)))
    else:
        rep = ev.attack_rate(model, support, cfg["n_starts"], 1, acfg, cfg["attack_seed"], jobs=jobs)
        outcomes = rep.outcomes[0]
    write_outcomes(outcomes, out / "outcomes.jsonl")
    wins = [o for o in outcomes if o.success]
    _write_json(out / "summary.json", {
        "n": len(outcomes), "successes": len(wins),
        "rate": len(wins) / len(outcomes) if outcomes else None,
        "mean_distance": float(np.mean([o.distance for o in wins])) if wins else None,
    })
    return ["outcomes.jsonl", "summary.json"]


@command("attack-rate", "measure the attack rate of a model", [
    P("model", "str", "model.json", "model file", is_input=True),
    P("test_data", "optstr", None, "dataset file to draw starts from before sampling fresh ones", is_input=True),
    P("n_starts", "int", 100, "starts per repeat"),
    P("n_repeats", "int", 10, "repeats"),
    *ATTACK, SEED, *_seed_params("attack"),
])
def cmd_attack_rate(cfg, out: Path, jobs):
    model, support = _load_parametric_model(cfg["model"])
    pool = read_dataset(cfg["test_data"]) if cfg["test_data"] else None
    rep = ev.attack_rate(model, support, cfg["n_starts"], cfg["n_repeats"], _attack_cfg(cfg),
                         cfg["attack_seed"], pool, jobs)
    write_outcomes([o for r in rep.outcomes for o in r], out / "outcomes.jsonl")
    _write_json(out / "report.json", rep.to_json())
    log.info("attack rate %.3f +- %.3f", rep.mean_rate, rep.std_rate)
    return ["outcomes.jsonl", "report.json"]


@command("sweep", "attack rate and distance across dimensions and dataset sizes", [
    P("dims", "ints", [20], "input dimensions"),
    P("sizes", "ints", [1000, 10000, 100000], "training-set sizes"),
    P("repeats", "int", 1, "models per (dim, size)"),
    P("n_starts", "int", 100, "starts per attack repeat"),
    P("n_repeats", "int", 1, "attack repeats per model"),
    *ATTACK, *TRAIN, *TEST, SEED,
])
def cmd_sweep(cfg, out: Path, jobs):
    scfg = ev.SweepConfig(cfg["n_starts"], cfg["n_repeats"], cfg["test_size"], _attack_cfg(cfg), _train_cfg(cfg))
    rows = ev.scaling_sweep(cfg["dims"], cfg["sizes"], cfg["repeats"], scfg, cfg["seed"], jobs)
    ev.write_sweep_csv(rows, out / "sweep.csv")
    return ["sweep.csv"]


@command("church-window", "classify 2-D slices through (start, adversarial) pairs", [
    P("model", "str", "model.json", "model file", is_input=True),
    P("outcomes", "str", "outcomes.jsonl", "attack outcomes (JSON lines)", is_input=True),
    P("max_plots", "int", 20, "successful outcomes to plot"),
    P("steps", "int", 101, "grid points per axis (odd keeps the start on the grid)"),
    P("extent_factor", "float", 3.0, "half-width of the slice in units of the attack distance"),
    SEED, *_seed_params("orth"),
])
def cmd_church_window(cfg, out: Path, jobs):
    model, support = _load_parametric_model(cfg["model"])
    wins = [o for o in read_outcomes(cfg["outcomes"]) if o.success][: cfg["max_plots"]]
    outputs, clean = [], []
    for k, o in enumerate(wins):
        ext = cfg["extent_factor"] * o.distance
        grid = ev.church_window(model, support, o.start, o.adversarial, (ext, ext), (cfg["steps"], cfg["steps"]),
                                derive_seed(cfg["orth_seed"], k))
        name = f"window_{k:03d}.ppm"
        ev.render_grid(grid, out / name)
        outputs += [name, name + ".json"]
        clean.append(ev.has_clean_band(grid))
    _write_json(out / "summary.json", {"n": len(wins), "clean": int(sum(clean)), "clean_flags": clean})
    log.info("%d of %d slices show a clean band", sum(clean), len(wins))
    return outputs + ["summary.json"]


@command("robust-train", "retrain with found adversarial points and re-measure the attack rate", [
    P("dim", "int", 20, "input dimension"),
    P("dataset_size", "int", 10000, "training-set size"),
    P("n_adversarial", "int", 2000, "adversarial points to add"),
    P("collect_max_generations", "int", 100, "generation cap while collecting adversarial points"),
    P("n_starts", "int", 100, "starts per attack repeat"),
    P("n_repeats", "int", 10, "attack repeats"),
    *ATTACK, *TRAIN, *TEST, SEED, *_seed_params("data", "init", "sgd", "attack", "test"),
])
def cmd_robust_train(cfg, out: Path, jobs):
    seeds = ev.ModelSeeds(cfg["data_seed"], cfg["init_seed"], cfg["sgd_seed"])
    rep, before, after, adv, labels = ev.robust_train_experiment(
        cfg["dim"], cfg["dataset_size"], cfg["n_adversarial"], seeds, cfg["attack_seed"], cfg["test_seed"],
        cfg["n_starts"], cfg["n_repeats"], _attack_cfg(cfg), _train_cfg(cfg), cfg["test_size"],
        cfg["collect_max_generations"], jobs)
    save_model(before, out / "model_before.json")
    save_model(after, out / "model_after.json")
    write_dataset(LabeledDataset(UniformPairSupport(cfg["dim"]), adv, labels, cfg["attack_seed"]),
                  out / "adversarial.csv")
    _write_json(out / "report.json", rep.to_json())
    log.info("attack rate %.3f before, %.3f after", rep.before.mean_rate, rep.after.mean_rate)
    return ["model_before.json", "model_after.json", "adversarial.csv", "report.json"]


@command("ablate", "vary one random source at a time around a robust base model", [
    P("base", "optstr", None, "JSON file with a base config (default: search with find_robust_base)",
      is_input=True),
    P("dim", "int", 20, "input dimension for the base search"),
    P("dataset_size", "int", 100000, "training-set size for the base search"),
    P("max_candidates", "int", 10, "base-search budget"),
    P("rate_screen", "float", 0.3, "largest attack rate accepted for a robust base"),
    P("sources", "strs", [s.value for s in Source], "sources to vary"),
    P("n_trials", "int", 10, "trials per source"),
    P("n_starts", "int", 100, "starts per attack repeat"),
    P("n_repeats", "int", 1, "attack repeats per trial"),
    *ATTACK, *TRAIN, *TEST, SEED,
])
def cmd_ablate(cfg, out: Path, jobs):
    ecfg = EvalConfig(cfg["n_starts"], cfg["n_repeats"], cfg["test_size"], _attack_cfg(cfg), _train_cfg(cfg))
    try:
        sources = [Source(s) for s in cfg["sources"]]
    except ValueError as exc:
        raise ConfigError(f"config key 'sources': {exc}") from None
    outputs = []
    if cfg["base"]:
        with open(cfg["base"]) as fh:
            obj = json.load(fh)
        try:
            base = BaseConfig.from_json(obj.get("base", obj))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{cfg['base']}: not a base config ({exc})") from None
    else:
        base, logbook = find_robust_base(cfg["dim"], cfg["dataset_size"], cfg["max_candidates"], ecfg,
                                         cfg["seed"], cfg["rate_screen"], jobs)
        _write_json(out / "candidates.json", {"base": base.to_json() if base else None,
                                              "candidates": [c.to_json() for c in logbook]})
        outputs.append("candidates.json")
        if base is None:
            raise RuntimeError(f"no robust base among {cfg['max_candidates']} candidates "
                               f"(see {out / 'candidates.json'})")
    reports = {}
    for src in sources:
        rep = run_ablation(AblationSpec(base, src, cfg["n_trials"]), ecfg, jobs)
        reports[src.value] = rep.to_json()
        log.info("%s: mean rate %.3f +- %.3f", src.value, rep.mean, rep.std)
    _write_json(out / "ablation.json", reports)
    return outputs + ["ablation.json"]


@command("sample-scenes", "sample scene vectors from the camera/light distribution", [
    P("n", "int", 100, "scenes to sample"),
    SEED, *_seed_params("scene"),
])
def cmd_sample_scenes(cfg, out: Path, jobs):
    rng = make_rng(cfg["scene_seed"])
    with open(out / "scenes.jsonl", "w") as fh:
        for _ in range(cfg["n"]):
            fh.write(json.dumps(sample_scene(rng).to_json()) + "\n")
    return ["scenes.jsonl"]


def _read_scenes(path):
    scenes = []
    with open(path) as fh:
        for i, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                label = obj.get("label")
                scenes.append((SceneVector.from_flat(obj["flat"], int(obj["n_lights"])),
                               None if label is None else int(label)))
            except (ValueError, KeyError, TypeError) as exc:
                raise ConfigError(f"{path}: line {i}: not a scene record ({exc})")
    return scenes


@command("attack-scene", "CMA-Search over one scene-parameter block against an oracle command", [
    P("scenes", "optstr", None, "JSON-lines scenes {n_lights, flat[, label]} (default: sample n_starts)",
      is_input=True),
    P("oracle", "optcmd", None, "oracle command line, shell-quoted (default: the built-in synthetic oracle)"),
    P("oracle_seed", "int", 0, "seed of the built-in synthetic oracle"),
    P("n_starts", "int", 20, "scenes to sample when no scenes file is given"),
    P("block", "str", "camera", "'camera' or 'light:<i>'"),
    P("max_generations", "int", 15, "CMA-Search generation cap"),
    P("sigma0", "optfloat", None, "initial step size (default: 5%% of the mean block range)"),
    SEED, *_seed_params("scene", "attack"),
])
def cmd_attack_scene(cfg, out: Path, jobs):
    if cfg["scenes"]:
        starts = _read_scenes(cfg["scenes"])
    else:
        rng = make_rng(cfg["scene_seed"])
        starts = [(sample_scene(rng), None) for _ in range(cfg["n_starts"])]
    cmd = cfg["oracle"] or [sys.executable, "-m", "indist_adv.oracle_server", "--seed", str(cfg["oracle_seed"])]
    outcomes, skipped = [], 0
    with SubprocessOracle(cmd) as oracle:
        for i, (scene, label) in enumerate(starts):
            try:
                outcomes.append(attack_scene(oracle, scene, cfg["block"], label, cfg["max_generations"],
                                             cfg["sigma0"], derive_seed(cfg["attack_seed"], "start", i)))
            except AttackPreconditionError as exc:
                log.warning("scene %d skipped: %s", i, exc)
                skipped += 1
    write_outcomes(outcomes, out / "outcomes.jsonl")
    wins = [o.distance for o in outcomes if o.success]
    _write_json(out / "summary.json", {
        "attacked": len(outcomes), "skipped": skipped, "successes": len(wins),
        "rate": len(wins) / len(outcomes) if outcomes else None,
        "mean_distance": float(np.mean(wins)) if wins else None,
        "std_distance": float(np.std(wins)) if wins else None,
    })
    return ["outcomes.jsonl", "summary.json"]


# -- config resolution ----------------------------------------------------------

def _load_config_file(path, name):
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except FileNotFoundError:
        raise MissingInput(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    if is_manifest(obj):
        try:
            m = manifest_from_json(obj)
        except ManifestError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if m.command != name:
            raise ConfigError(f"{path}: manifest is for '{m.command}', not '{name}'")
        return m.config
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return obj


def resolve_config(name: str, file_cfg: dict | None, overrides: dict) -> tuple[dict, dict]:
    """Merge defaults, file values and flag overrides; fill derived sub-seeds.

    Returns ``(config, seeds)``.
    """
    params = {p.name: p for p in COMMANDS[name]["params"]}
    cfg = {k: p.default for k, p in params.items()}
    for source, values in (("config", file_cfg or {}), ("flag", overrides)):
        for k, v in values.items():
            if k not in params:
                raise ConfigError(f"unknown {source} key {k!r} for '{name}'")
            try:
                cfg[k] = params[k].conv(v)
            except TypeError as exc:
                raise ConfigError(f"config key {k!r}: expected {exc}, got {v!r}") from None
    seeds = {"seed": cfg["seed"]}
    for k in params:
        if k in SEED_LABELS:
            if cfg[k] is None:
                cfg[k] = derive_seed(cfg["seed"], SEED_LABELS[k])
            seeds[k] = cfg[k]
    for p in params.values():
        if p.is_input and cfg[p.name] is not None:
            cfg[p.name] = os.path.abspath(cfg[p.name])
    return cfg, seeds


def check_inputs(name: str, cfg: dict) -> None:
    for p in COMMANDS[name]["params"]:
        if p.is_input and cfg[p.name] is not None and not os.path.isfile(cfg[p.name]):
            raise MissingInput(f"input file not found: {cfg[p.name]}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="indist-adv", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True
    for name, spec in COMMANDS.items():
        sp = sub.add_parser(name, help=spec["help"], description=spec["help"])
        sp.add_argument("--config", help="JSON config or a manifest.json from an earlier run")
        sp.add_argument("--out", help=f"run directory (default: runs/{name})")
        sp.add_argument("--jobs", type=int, help="worker processes (default: $INDIST_ADV_JOBS or all cores)")
        sp.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
        for p in spec["params"]:
            default = p.default if not isinstance(p.default, list) else " ".join(map(str, p.default))
            sp.add_argument("--" + p.name.replace("_", "-"), dest="param_" + p.name, type=p.argtype, nargs=p.nargs,
                            default=None, help=f"{p.help} [{default}]")
    return parser


def _fail(code: int, msg: str) -> int:
    print(f"indist-adv: error: {msg}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    name = args.command
    overrides = {k[len("param_"):]: v for k, v in vars(args).items() if k.startswith("param_") and v is not None}
    try:
        file_cfg = _load_config_file(args.config, name) if args.config else None
        cfg, seeds = resolve_config(name, file_cfg, overrides)
        check_inputs(name, cfg)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    except MissingInput as exc:
        return _fail(EXIT_MISSING, str(exc))
    out = Path(args.out or os.path.join("runs", name))
    out.mkdir(parents=True, exist_ok=True)
    jobs = resolve_jobs(args.jobs)
    t0 = time.perf_counter()
    try:
        outputs = COMMANDS[name]["run"](cfg, out, jobs)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    except FileNotFoundError as exc:
        return _fail(EXIT_MISSING, f"input file not found: {exc.filename or exc}")
    except (BaseModelGateError, OracleError, ev.StartPoolExhausted, AttackPreconditionError,
            RuntimeError, ValueError) as exc:
        return _fail(EXIT_FAILURE, str(exc).splitlines()[0] if str(exc) else type(exc).__name__)
    wall = round(time.perf_counter() - t0, 3)
    manifest_write(Manifest(name, cfg, seeds, wall_time_s=wall, outputs=outputs), out / MANIFEST_NAME)
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
