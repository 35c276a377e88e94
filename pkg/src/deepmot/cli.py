"""Command-line entry point: ``deepmot <command> [--config FILE] [--key value ...]``.

Every option can also be given in a flat ``key = value`` config file
(``#`` starts a comment); command-line flags override the file.  Each run
writes ``run.meta`` (JSON: command, resolved config, versions) into its
output directory.  Exit status: 0 success, 1 runtime failure, 2 invalid
configuration.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

log = logging.getLogger("deepmot")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Opt:
    name: str
    type: Callable
    default: object
    help: str


def _ints(v) -> tuple:
    return tuple(int(x) for x in str(v).replace(" ", "").split(",") if x)


COMMON = [
    Opt("seed", int, 0, "random seed"),
    Opt("out", str, "runs/{command}", "output directory (run.meta and artifacts)"),
]

SCENE_OPTS = [
    Opt("n", int, 20, "number of scenes"),
    Opt("length", int, 50, "frames per scene"),
    Opt("width", float, 640.0, "frame width in pixels"),
    Opt("height", float, 480.0, "frame height in pixels"),
    Opt("min_objects", int, 3, "fewest objects per scene"),
    Opt("max_objects", int, 6, "most objects per scene"),
    Opt("min_speed", float, 0.5, "slowest object speed (pixels/frame)"),
    Opt("max_speed", float, 4.0, "fastest object speed (pixels/frame)"),
    Opt("min_scale", float, 0.8, "smallest detection rescale factor"),
    Opt("max_scale", float, 1.2, "largest detection rescale factor"),
    Opt("max_offset", float, 0.25, "largest detection shift as a fraction of box size"),
    Opt("drop_prob", float, 0.05, "probability of a missed detection"),
    Opt("clutter_rate", float, 0.2, "mean false detections per frame"),
]

COMMANDS = {
    "gen-pairs": ("write synthetic (distance, assignment) training pairs", [
        Opt("n", int, 20000, "number of pairs"),
        Opt("min_size", int, 2, "smallest matrix side"),
        Opt("max_size", int, 12, "largest matrix side"),
        Opt("mode", str, "mix", "uniform, tracking or mix"),
    ]),
    "train-dhn": ("train a Deep Hungarian Net on a pair file", [
        Opt("train", str, "", "training pair file (required)"),
        Opt("test", str, "", "test pair file evaluated after every epoch"),
        Opt("variant", str, "seq_gru", "seq_gru, seq_lstm, paral_gru, paral_lstm or conv1d"),
        Opt("hidden", int, 64, "recurrent hidden size"),
        Opt("head", _ints, (64, 32, 1), "widths of the fully connected layers"),
        Opt("lr", float, 3e-4, "initial RMSprop learning rate"),
        Opt("decay", float, 0.95, "learning-rate decay factor"),
        Opt("decay_every", int, 20000, "matrices between decays"),
        Opt("epochs", int, 20, "training epochs"),
        Opt("batch_size", int, 32, "matrices of equal shape per update"),
        Opt("dtype", str, "float32", "float32 or float64"),
    ]),
    "eval-dhn": ("print WA/MA/SA of a DHN checkpoint on a pair file", [
        Opt("model", str, "", "DHN checkpoint, or 'echo' to use the labels as predictions"),
        Opt("pairs", str, "", "pair file (required)"),
    ]),
    "size-study": ("WA versus square matrix size", [
        Opt("model", str, "", "DHN checkpoint (required)"),
        Opt("min_size", int, 2, "smallest size"),
        Opt("max_size", int, 300, "largest size"),
        Opt("per_size", int, 10, "matrices per size"),
    ]),
    "gen-scenes": ("write synthetic scenes in MOTChallenge layout", SCENE_OPTS),
    "train-tracker": ("train the box tracker through a frozen DHN", [
        Opt("scenes", str, "", "directory of scenes (required)"),
        Opt("dhn", str, "", "frozen DHN checkpoint (required)"),
        Opt("steps", int, 3000, "training steps"),
        Opt("lr", float, 1e-4, "Adam learning rate"),
        Opt("hidden", int, 32, "perceptron hidden width"),
        Opt("min_scale", float, 0.8, "smallest initial-box rescale"),
        Opt("max_scale", float, 1.2, "largest initial-box rescale"),
        Opt("max_offset", float, 0.25, "largest initial-box shift (fraction of size)"),
        Opt("delta", float, 0.5, "soft FP/FN threshold value"),
        Opt("lam", float, 5.0, "weight of the precision term"),
        Opt("gamma", float, 2.0, "weight of identity switches"),
    ]),
    "run-tracker": ("track every scene's detections", [
        Opt("scenes", str, "", "directory of scenes (required)"),
        Opt("tracker", str, "zero", "tracker checkpoint, or 'zero' for the constant-position tracker"),
        Opt("birth_frames", int, 3, "consecutive detections needed to start a track"),
        Opt("birth_iou", float, 0.3, "IoU needed to link detections and verify tracks"),
        Opt("refine_iou", float, 0.6, "IoU above which prediction and detection are averaged"),
        Opt("patience", int, 60, "frames an unverified track survives"),
    ]),
    "eval-mot": ("CLEAR-MOT, IDF1 and MT/ML of tracker output", [
        Opt("gt", str, "", "ground-truth file, or a directory of scenes"),
        Opt("pred", str, "", "prediction file, or a directory of <scene>.txt files"),
        Opt("distance", str, "combined", "combined or iou"),
        Opt("tau", float, 0.5, "matching threshold"),
    ]),
    "gradfield": ("negative loss gradient on every predicted box", [
        Opt("gt", str, "", "ground-truth file (required)"),
        Opt("pred", str, "", "predicted tracks file (required)"),
        Opt("dhn", str, "", "DHN checkpoint (required)"),
        Opt("delta", float, 0.5, "soft FP/FN threshold value"),
        Opt("lam", float, 5.0, "weight of the precision term"),
        Opt("gamma", float, 2.0, "weight of identity switches"),
    ]),
    "selftest": ("run the built-in oracle checks", []),
}


def _options(command: str) -> list:
    return COMMANDS[command][1] + COMMON


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deepmot", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", metavar="command")
    for name, (text, _) in COMMANDS.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--config", default=None, help="key = value config file (default: none)")
        for opt in _options(name):
            default = ",".join(map(str, opt.default)) if isinstance(opt.default, tuple) else opt.default
            p.add_argument("--" + opt.name.replace("_", "-"), dest=opt.name, default=None,
                           metavar=opt.type.__name__.lstrip("_").upper(),
                           help=f"{opt.help} (default: {default!r})")
    return parser


def read_config_file(path) -> dict:
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags; unknown keys are rejected."""
    opts = {o.name: o for o in _options(command)}
    cfg = {k: o.default for k, o in opts.items()}
    raw = read_config_file(args.config) if args.config else {}
    unknown = sorted(set(raw) - set(opts))
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {', '.join(unknown)}")
    raw.update({k: getattr(args, k) for k in opts if getattr(args, k, None) is not None})
    for key, value in raw.items():
        try:
            cfg[key] = opts[key].type(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid value for {key}: {value!r} ({exc})") from None
    cfg["out"] = cfg["out"].format(command=command)
    return cfg


def _require(cfg: dict, *keys):
    missing = [k for k in keys if not cfg[k]]
    if missing:
        raise ConfigError("missing required option(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _code_version() -> str:
    try:
        from importlib.metadata import version
        return version("artifact")
    except Exception:  # pragma: no cover - not installed
        from . import __version__
        return __version__


def write_meta(out: Path, command: str, cfg: dict, extra: dict | None = None):
    meta = {
        "command": command,
        "config": {k: list(v) if isinstance(v, tuple) else v for k, v in cfg.items()},
        "seed": cfg.get("seed"),
        "code_version": _code_version(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "rng": "numpy PCG64 (default_rng)",
    }
    meta.update(extra or {})
    (out / "run.meta").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

LOSS_META = {"tp_mask": "thresholded Hungarian on D at tau 0.5, constant in differentiation",
             "empty_frames": "skipped", "clip_loss": "mean over frames"}


def cmd_gen_pairs(cfg, out):
    from .datasets import gen_matrix_pairs, save_pairs
    if cfg["mode"] not in ("uniform", "tracking", "mix"):
        raise ConfigError(f"mode must be uniform, tracking or mix, got {cfg['mode']!r}")
    if not 1 <= cfg["min_size"] <= cfg["max_size"] or cfg["n"] < 1:
        raise ConfigError("need n >= 1 and 1 <= min_size <= max_size")
    pairs = gen_matrix_pairs(cfg["n"], (cfg["min_size"], cfg["max_size"]), cfg["mode"], cfg["seed"])
    save_pairs(pairs, out / "pairs.txt")
    print(f"wrote {len(pairs)} pairs to {out / 'pairs.txt'}")
    return {}


def _dhn_configs(cfg):
    from .dhn import DhnConfig, TrainConfig
    try:
        model_cfg = DhnConfig(cfg["variant"], cfg["hidden"], cfg["head"])
        train_cfg = TrainConfig(lr=cfg["lr"], decay=cfg["decay"], decay_every=cfg["decay_every"],
                                epochs=cfg["epochs"], batch_size=cfg["batch_size"], seed=cfg["seed"],
                                dtype=cfg["dtype"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg["dtype"] not in ("float32", "float64"):
        raise ConfigError("dtype must be float32 or float64")
    return model_cfg, train_cfg


def cmd_train_dhn(cfg, out):
    from .datasets import load_pairs
    from .dhn import train_dhn
    _require(cfg, "train")
    model_cfg, train_cfg = _dhn_configs(cfg)
    train = load_pairs(cfg["train"])
    test = load_pairs(cfg["test"]) if cfg["test"] else None
    res = train_dhn(train, model_cfg, train_cfg, test,
                    on_epoch=lambda s: print(f"epoch {s.epoch} loss {s.train_loss:.5f} "
                                             f"WA row {s.test_wa_row} col {s.test_wa_col}", flush=True))
    res.model.save(out / "dhn.ntf")
    res.write_curve(out / "curve.csv")
    return {"model": model_cfg.to_meta(), "checksum": res.model.checksum()}


def cmd_eval_dhn(cfg, out):
    from .datasets import load_pairs
    from .dhn import DhnModel, eval_dhn, score_assignments
    _require(cfg, "model", "pairs")
    pairs = load_pairs(cfg["pairs"])
    rows = {}
    for mode in ("row", "column"):
        if cfg["model"] == "echo":
            sc = score_assignments([A.astype(float) for _, A in pairs], [A for _, A in pairs], mode)
        else:
            sc = eval_dhn(DhnModel.load(cfg["model"]), pairs, mode)
        rows[mode] = {"WA": sc.wa, "MA": sc.ma, "SA": sc.sa}
        print(f"{mode:6s}  WA {100 * sc.wa:6.2f} %   MA {sc.ma:6.2f} %   SA {sc.sa:6.2f} %")
    (out / "scores.json").write_text(json.dumps(rows, indent=2) + "\n")
    return {}


def cmd_size_study(cfg, out):
    from .dhn import DhnModel, size_study
    _require(cfg, "model")
    if not 1 <= cfg["min_size"] <= cfg["max_size"] or cfg["per_size"] < 1:
        raise ConfigError("need 1 <= min_size <= max_size and per_size >= 1")
    rows = size_study(DhnModel.load(cfg["model"]), range(cfg["min_size"], cfg["max_size"] + 1),
                      cfg["per_size"], cfg["seed"], out / "size_study.csv")
    print(f"wrote {len(rows)} sizes to {out / 'size_study.csv'}")
    return {}


def _scene_config(cfg, seed):
    from .datasets import SceneConfig
    try:
        return SceneConfig(width=cfg["width"], height=cfg["height"],
                           n_objects=(cfg["min_objects"], cfg["max_objects"]),
                           speed=(cfg["min_speed"], cfg["max_speed"]),
                           scale_range=(cfg["min_scale"], cfg["max_scale"]),
                           max_offset=cfg["max_offset"], drop_prob=cfg["drop_prob"],
                           clutter_rate=cfg["clutter_rate"], length=cfg["length"], seed=seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_gen_scenes(cfg, out):
    from .datasets import gen_synthetic_sequences, save_scene
    if cfg["n"] < 1:
        raise ConfigError("n must be >= 1")
    for k in range(cfg["n"]):
        sc = _scene_config(cfg, cfg["seed"] * 100003 + k)
        gt, det = gen_synthetic_sequences(sc)
        save_scene(out / f"scene_{k:03d}", gt, det, f"scene_{k:03d}")
    print(f"wrote {cfg['n']} scenes to {out}")
    return {}


def _scene_dirs(root) -> list:
    dirs = sorted(p for p in Path(root).iterdir() if (p / "gt" / "gt.txt").is_file())
    if not dirs:
        raise FileNotFoundError(f"no scenes (*/gt/gt.txt) under {root}")
    return dirs


def _loss_config(cfg):
    from .loss import LossConfig
    try:
        return LossConfig(delta=cfg["delta"], lam=cfg["lam"], gamma=cfg["gamma"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_train_tracker(cfg, out):
    from .datasets import load_scene
    from .dhn import DhnModel
    from .tracker import TrackerTrainConfig, save_params, train_tracker
    _require(cfg, "scenes", "dhn")
    loss_cfg = _loss_config(cfg)
    try:
        tcfg = TrackerTrainConfig(lr=cfg["lr"], steps=cfg["steps"], hidden=cfg["hidden"],
                                  scale_range=(cfg["min_scale"], cfg["max_scale"]),
                                  max_offset=cfg["max_offset"], seed=cfg["seed"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    scenes = [load_scene(d) for d in _scene_dirs(cfg["scenes"])]
    model = DhnModel.load(cfg["dhn"])
    before = model.checksum()
    res = train_tracker(scenes, model, tcfg, loss_cfg)
    if model.checksum() != before:
        raise RuntimeError("DHN parameters changed during tracker training")
    save_params(out / "tracker.ntf", res.params, {"hidden": tcfg.hidden})
    res.write_curve(out / "curve.csv")
    sm = res.smoothed()
    print(f"smoothed loss {sm[0]:.4f} -> {sm[-1]:.4f}")
    return {"loss": {**loss_cfg.to_meta(), **LOSS_META}, "dhn_checksum": before}


def cmd_run_tracker(cfg, out):
    from .datasets import load_scene, save_motchallenge
    from .tracker import ManagementConfig, load_params, run_tracker, zero_params
    _require(cfg, "scenes")
    try:
        mgmt = ManagementConfig(cfg["birth_frames"], cfg["birth_iou"], cfg["refine_iou"], cfg["patience"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    params = zero_params() if cfg["tracker"] == "zero" else load_params(cfg["tracker"])
    for d in _scene_dirs(cfg["scenes"]):
        _, det = load_scene(d)
        save_motchallenge(run_tracker(det, params, mgmt), out / f"{d.name}.txt", layout=9)
    print(f"wrote tracks to {out}")
    return {}


def cmd_eval_mot(cfg, out):
    from .datasets import load_motchallenge
    from .moteval import DISTANCES, REPORT_COLUMNS, evaluate
    _require(cfg, "gt", "pred")
    if cfg["distance"] not in DISTANCES:
        raise ConfigError(f"distance must be one of {DISTANCES}")
    gt_path, pred_path = Path(cfg["gt"]), Path(cfg["pred"])
    if gt_path.is_dir():
        jobs = [(d.name, d / "gt" / "gt.txt", pred_path / f"{d.name}.txt") for d in _scene_dirs(gt_path)]
    else:
        jobs = [(gt_path.stem, gt_path, pred_path)]
    reports = []
    for name, g, p in jobs:
        gt = load_motchallenge(g, "gt")
        pred = load_motchallenge(p, "gt", dims=gt.dims, n_frames=gt.length)
        rep = evaluate(gt, pred, cfg["tau"], cfg["distance"])
        rep.write_csv(out / f"report_{name}.csv")
        reports.append(rep)
        print(f"== {name}\n{rep.pretty()}")
    if len(reports) > 1:
        mean = {k: float(np.mean([getattr(r, k) for r in reports])) for k in REPORT_COLUMNS}
        print("== mean over sequences\n" + "  ".join(f"{k} {v:.4f}" for k, v in mean.items()))
        (out / "summary.json").write_text(json.dumps(mean, indent=2) + "\n")
    return {"distance": cfg["distance"], "tau": cfg["tau"]}


def cmd_gradfield(cfg, out):
    from .datasets import load_motchallenge
    from .dhn import DhnModel
    from .loss import Frame, gradient_field, write_gradient_csv
    _require(cfg, "gt", "pred", "dhn")
    loss_cfg = _loss_config(cfg)
    gt = load_motchallenge(cfg["gt"], "gt")
    pred = load_motchallenge(cfg["pred"], "gt", dims=gt.dims, n_frames=gt.length)
    frames = []
    for t in range(1, gt.length + 1):
        pi, pb = pred.frame(t)
        gi, gb = gt.frame(t)
        frames.append(Frame(pi, pb, gi, gb, t))
    rows = gradient_field(frames, gt.dims, DhnModel.load(cfg["dhn"]), loss_cfg)
    write_gradient_csv(rows, out / "gradients.csv")
    print(f"wrote {len(rows)} gradient rows to {out / 'gradients.csv'}")
    return {"loss": {**loss_cfg.to_meta(), **LOSS_META}}


def cmd_selftest(cfg, out):
    from .selftest import run_all
    results = run_all()
    bad = 0
    for name, fails in results.items():
        print(f"{name:10s} {'ok' if not fails else 'FAILED'}")
        for f in fails:
            print(f"    {f}")
        bad += len(fails)
    if bad:
        raise RuntimeError(f"{bad} self-test check(s) failed")
    return {}


HANDLERS = {
    "gen-pairs": cmd_gen_pairs, "train-dhn": cmd_train_dhn, "eval-dhn": cmd_eval_dhn,
    "size-study": cmd_size_study, "gen-scenes": cmd_gen_scenes, "train-tracker": cmd_train_tracker,
    "run-tracker": cmd_run_tracker, "eval-mot": cmd_eval_mot, "gradfield": cmd_gradfield,
    "selftest": cmd_selftest,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not args.command:
        parser.print_help()
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg, out, extra, status = None, None, {}, 0
    try:
        cfg = resolve_config(args.command, args)
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        extra = HANDLERS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"deepmot {args.command}: invalid configuration: {exc}", file=sys.stderr)
        status, extra = 2, {"error": str(exc)}
    except Exception as exc:
        log.debug("command failed", exc_info=True)
        print(f"deepmot {args.command}: error: {exc}", file=sys.stderr)
        status, extra = 1, {"error": str(exc)}
    if out is not None and out.is_dir():
        write_meta(out, args.command, cfg, {**extra, "exit_status": status})
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
