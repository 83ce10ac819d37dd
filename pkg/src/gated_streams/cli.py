"""Command line entry point: generate / train / evaluate / predict / ablate / gradcheck.

Every run writes ``resolved_config.txt`` next to its outputs. That file
holds the subcommand and every resolved argument and can be fed back with
``replay`` to repeat the run.

Errors print one line to stderr, ``error code=<n> kind=<kind> msg=<text>``.
Exit codes: 2 missing file, 3 validation failure, 4 gradcheck breach.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .config import ConfigError, ModelConfig, format_kv, from_mapping, parse_kv, read_kv

EXIT_MISSING = 2
EXIT_INVALID = 3
EXIT_GRADCHECK = 4

SNAPSHOT = "resolved_config.txt"

log = logging.getLogger("gated_streams")


class CliError(Exception):
    def __init__(self, code: int, kind: str, msg: str):
        super().__init__(msg)
        self.code, self.kind, self.msg = code, kind, msg


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(EXIT_INVALID, "usage", message)


def _existing(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError(EXIT_MISSING, "missing_file", f"{what} not found: {path}")
    return p


def _out_dir(path: str) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _overrides(pairs) -> dict[str, str]:
    out = {}
    for item in pairs or ():
        if "=" not in item:
            raise CliError(EXIT_INVALID, "usage", f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _split_config(values: dict[str, str]):
    """Route keys to ModelConfig / TrainConfig; anything else is an error."""
    from .training import TrainConfig

    model_keys = {f.name for f in dataclasses.fields(ModelConfig)}
    train_keys = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = set(values) - model_keys - train_keys
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    model_cfg = from_mapping(ModelConfig, {k: v for k, v in values.items() if k in model_keys})
    train_cfg = from_mapping(TrainConfig, {k: v for k, v in values.items() if k in train_keys})
    return model_cfg, train_cfg


def _load_config(path: str | None, overrides) -> dict[str, str]:
    values = dict(read_kv(_existing(path, "config"))) if path else {}
    values.update(_overrides(overrides))
    return values


def _snapshot(out: Path, command: str, args: dict, config: dict | None = None) -> None:
    values = {"command": command}
    values.update({f"arg.{k}": v for k, v in args.items() if v is not None})
    if config:
        values.update(config)
    (out / SNAPSHOT).write_text(format_kv(values), encoding="utf-8")


# --- subcommands ----------------------------------------------------------


def cmd_generate(a) -> int:
    from .data import GeneratorSpec, generate_split, save_dataset

    values = _load_config(a.spec, a.set)
    counts = {k: int(values.pop(k, d)) for k, d in (("n_train", 20), ("n_val", 5), ("n_test", 10))}
    spec = from_mapping(GeneratorSpec, values)
    train, val, test = generate_split(spec, counts["n_train"], counts["n_val"], counts["n_test"], a.seed)
    out = save_dataset(a.out, {"train": train, "val": val, "test": test})
    _snapshot(out, "generate", {"out": a.out, "seed": a.seed},
              {**dataclasses.asdict(spec), **counts})
    print(f"wrote {len(train)}/{len(val)}/{len(test)} videos to {out}")
    return 0


def cmd_train(a) -> int:
    from .checkpoint import save
    from .data import load_dataset
    from .model import GatedStreamTransformer
    from .training import train

    data = load_dataset(_existing(a.data, "dataset"))
    model_cfg, train_cfg = _split_config(_load_config(a.config, a.set))
    out = _out_dir(a.out)
    model = GatedStreamTransformer(model_cfg, seed=train_cfg.seed)
    result = train(model, data["train"], data["val"], train_cfg, log_path=out / "train_log.csv")
    save(out / "checkpoint.glsc", model)
    _snapshot(out, "train", {"data": a.data, "out": a.out},
              {**model_cfg.to_dict(), **dataclasses.asdict(train_cfg)})
    print(f"best epoch {result.best_epoch} val accuracy {result.best_val_accuracy:.2f}")
    return 0


def cmd_evaluate(a) -> int:
    from .checkpoint import load
    from .data import load_dataset
    from .evaluation import evaluate, format_report, write_metrics_csv

    model = load(_existing(a.checkpoint, "checkpoint"))
    videos = load_dataset(_existing(a.data, "dataset"))[a.split]
    out = _out_dir(a.out)
    report, _ = evaluate(model, videos, a.batch_size)
    write_metrics_csv(out / "metrics.csv", report)
    (out / "metrics.txt").write_text(format_report(report) + "\n", encoding="utf-8")
    _snapshot(out, "evaluate", {"checkpoint": a.checkpoint, "data": a.data, "out": a.out,
                                "split": a.split, "batch_size": a.batch_size})
    print(format_report(report))
    return 0


def cmd_predict(a) -> int:
    from .checkpoint import load
    from .data import decode_frames, read_labels
    from .evaluation import PredictionTrack, predict_video, render_ribbon, write_track_csv

    model = load(_existing(a.checkpoint, "checkpoint"))
    video = _existing(a.video, "video")
    frames = decode_frames(video.read_bytes(), video)
    labels_path = video.with_name(video.name.replace(".glsv", ".labels.csv"))
    pred = predict_video(model, frames, a.batch_size)
    truth = read_labels(labels_path) if labels_path.exists() else pred
    track = PredictionTrack(video.stem, pred, truth)
    ribbon = Path(a.ribbon_out)
    ribbon.parent.mkdir(parents=True, exist_ok=True)
    render_ribbon(track, ribbon, width=a.width)
    write_track_csv(ribbon.with_suffix(".csv"), track)
    _snapshot(ribbon.parent, "predict", {"checkpoint": a.checkpoint, "video": a.video,
                                         "ribbon_out": a.ribbon_out, "width": a.width,
                                         "batch_size": a.batch_size})
    print(f"wrote {ribbon} and {ribbon.with_suffix('.csv')}")
    return 0


def parse_grid(text: str):
    """``modes=Feature,NoGating`` and ``rates=2,4`` lines (or ``;``-separated inline)."""
    from .training import ABLATION_MODES, ABLATION_RATES, ablation_grid

    p = Path(text)
    body = p.read_text(encoding="utf-8") if text and p.is_file() else text.replace(";", "\n")
    values = parse_kv(body)
    unknown = set(values) - {"modes", "rates"}
    if unknown:
        raise ConfigError(f"unknown grid keys: {sorted(unknown)}")
    modes = values["modes"].split(",") if "modes" in values else ABLATION_MODES
    try:
        rates = [int(r) for r in values["rates"].split(",")] if "rates" in values else ABLATION_RATES
        return ablation_grid(modes, rates)
    except ValueError as exc:
        raise ConfigError(f"bad grid: {exc}") from None


def cmd_ablate(a) -> int:
    from .data import load_dataset
    from .training import run_ablation

    data = load_dataset(_existing(a.data, "dataset"))
    model_cfg, train_cfg = _split_config(_load_config(a.config, a.set))
    grid = parse_grid(a.grid)
    out = _out_dir(a.out)
    rows = run_ablation(grid, data["train"], data["val"], data["test"], model_cfg, train_cfg,
                        init_seed=train_cfg.seed, out_csv=out / "ablation.csv")
    _snapshot(out, "ablate", {"data": a.data, "grid": a.grid, "out": a.out},
              {**model_cfg.to_dict(), **dataclasses.asdict(train_cfg)})
    for r in rows:
        print(f"{r['gating_mode']:<14} s={r['s']:<3} acc={r['accuracy']:.2f} jac={r['jaccard']:.2f}")
    return 0


def cmd_gradcheck(a) -> int:
    from .config import TOY_GRADCHECK_CONFIG
    from .gradcheck import check_model, check_ops

    cfg = TOY_GRADCHECK_CONFIG
    values = _load_config(a.config, a.set)
    if values:
        cfg = from_mapping(ModelConfig, {**{k: str(v) for k, v in cfg.to_dict().items()}, **values})
    results = check_ops(a.seed) + check_model(cfg, a.seed, a.per_group)
    worst = max(results, key=lambda r: r.max_rel_error / r.tolerance)
    failed = [r for r in results if not r.passed]
    for r in failed:
        print(f"FAIL {r.name}: rel err {r.max_rel_error:.3e} >= {r.tolerance:.0e}")
    print(f"max relative error {max(r.max_rel_error for r in results):.3e} "
          f"(worst vs tolerance: {worst.name} {worst.max_rel_error:.3e}/{worst.tolerance:.0e}) "
          f"over {sum(r.n_checked for r in results)} entries")
    if a.out:
        _snapshot(_out_dir(a.out), "gradcheck", {"config": a.config, "seed": a.seed, "per_group": a.per_group},
                  cfg.to_dict())
    if failed:
        raise CliError(EXIT_GRADCHECK, "gradcheck", f"{len(failed)} checks above tolerance")
    return 0


def cmd_replay(a) -> int:
    values = read_kv(_existing(a.snapshot, "snapshot"))
    command = values.pop("command", None)
    if command not in COMMANDS or command == "replay":
        raise CliError(EXIT_INVALID, "validation", f"snapshot has no replayable command: {command!r}")
    argv = [command]
    config = {}
    for k, v in values.items():
        if k.startswith("arg."):
            argv += [f"--{k[4:].replace('_', '-')}", v]
        else:
            config[k] = v
    if config and command in ("train", "ablate", "gradcheck", "generate"):
        for k, v in config.items():
            argv += ["--set", f"{k}={v}"]
    return main(argv)


COMMANDS = {
    "generate": cmd_generate, "train": cmd_train, "evaluate": cmd_evaluate, "predict": cmd_predict,
    "ablate": cmd_ablate, "gradcheck": cmd_gradcheck, "replay": cmd_replay,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gated-streams",
                description="Gated long/short two-stream transformer for online step recognition.",
                epilog="exit codes: 0 ok, 2 missing file, 3 validation failure, 4 gradcheck breach")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    set_help = "override a config value (repeatable)"

    g = sub.add_parser("generate", help="write a synthetic train/val/test dataset")
    g.add_argument("--spec", help="key=value generator spec (GeneratorSpec fields, n_train, n_val, n_test)")
    g.add_argument("--out", required=True, help="dataset directory to create")
    g.add_argument("--seed", type=int, default=0, help="dataset seed")
    g.add_argument("--set", action="append", metavar="KEY=VALUE", help=set_help)

    t = sub.add_parser("train", help="train a model on a dataset")
    t.add_argument("--data", required=True, help="dataset directory")
    t.add_argument("--config", help="key=value model + training config")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help=set_help)

    e = sub.add_parser("evaluate", help="score a checkpoint on a dataset split")
    e.add_argument("--checkpoint", required=True, help="checkpoint file")
    e.add_argument("--data", required=True, help="dataset directory")
    e.add_argument("--out", required=True, help="output directory")
    e.add_argument("--split", default="test", choices=("train", "val", "test"), help="split to score")
    e.add_argument("--batch-size", type=int, default=64, help="windows per forward pass")

    r = sub.add_parser("predict", help="per-frame predictions and a ribbon image for one video")
    r.add_argument("--checkpoint", required=True, help="checkpoint file")
    r.add_argument("--video", required=True, help=".glsv frames file; labels CSV beside it is used as truth")
    r.add_argument("--ribbon-out", required=True, help="output .ppm path; the CSV goes beside it")
    r.add_argument("--width", type=int, default=600, help="ribbon width in pixels")
    r.add_argument("--batch-size", type=int, default=64, help="windows per forward pass")

    a = sub.add_parser("ablate", help="train/test one model per gating mode x sampling period")
    a.add_argument("--data", required=True, help="dataset directory")
    a.add_argument("--grid", default="", help="grid file or inline 'modes=...;rates=...' (default: full 4x4)")
    a.add_argument("--config", help="key=value model + training config")
    a.add_argument("--out", required=True, help="output directory")
    a.add_argument("--set", action="append", metavar="KEY=VALUE", help=set_help)

    c = sub.add_parser("gradcheck", help="finite-difference check of all ops and the toy model")
    c.add_argument("--config", help="key=value model config (default: toy gradcheck config)")
    c.add_argument("--seed", type=int, default=0, help="random seed")
    c.add_argument("--per-group", type=int, default=20, help="entries checked per parameter tensor")
    c.add_argument("--out", help="directory for the resolved-config snapshot")
    c.add_argument("--set", action="append", metavar="KEY=VALUE", help=set_help)

    y = sub.add_parser("replay", help="re-run a command from its resolved_config.txt")
    y.add_argument("snapshot", help="path to resolved_config.txt")
    return p


def main(argv=None) -> int:
    from .checkpoint import CheckpointError
    from .data import FormatError

    try:
        args = build_parser().parse_args(argv)
        if args.verbose:
            logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
        return COMMANDS[args.command](args)
    except CliError as exc:
        err = exc
    except FileNotFoundError as exc:
        err = CliError(EXIT_MISSING, "missing_file", str(exc))
    except (ConfigError, FormatError, CheckpointError, ValueError) as exc:
        err = CliError(EXIT_INVALID, "validation", str(exc))
    msg = " ".join(err.msg.split())
    print(f"error code={err.code} kind={err.kind} msg={msg}", file=sys.stderr)
    return err.code


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
