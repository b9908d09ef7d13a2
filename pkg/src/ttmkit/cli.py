"""Command-line front end.

Every command prints key=value lines on stdout. Exit codes: 0 success,
1 invalid input (flags, config, data files), 2 failure while running.
"""

from __future__ import annotations

import argparse
import csv
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .errors import ConfigError, DataError
from .evalkit import (
    ABLATION_HEADER,
    SNR_HEADER,
    Benchmark,
    Variant,
    evaluate,
    run_ablation,
    run_threshold_study,
    snr_sweep,
    summarize,
    write_csv,
    write_summary,
)
from .headpose import euler_from_rotation, euler_to_rotation, gram_schmidt_6d
from .model import ModelConfig, TTMModel
from .numkit import finite_difference_check, read_checkpoint, save_checkpoint
from .scenario import SPLITS, generate, load_dataset, save_dataset
from .train import fit, noisy_mels, predict, prepare

OUT_ENV = "TTMKIT_OUT"
CONFIG_NAME = "config.yaml"
CHECKPOINT_NAME = "model.ckpt"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def emit(**kv) -> None:
    print(" ".join(f"{k}={_fmt(v)}" for k, v in kv.items()), flush=True)


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6f}"
    if v is None:
        return "none"
    if isinstance(v, bool):
        return str(v).lower()
    return str(v)


def git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=10)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() if out.returncode == 0 and out.stdout.strip() else "unknown"


# -- run directories -------------------------------------------------------------


def out_root(cfg: cfgmod.RunConfig, flag: str | None) -> Path:
    return Path(flag or cfg.paths.out_root or os.environ.get(OUT_ENV) or "runs")


def make_run_dir(root: Path, cfg: cfgmod.RunConfig, command: str) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    base = f"{stamp}-{command}-{cfg.digest()[:10]}"
    path = root / base
    n = 1
    while path.exists():
        path = root / f"{base}-{n}"
        n += 1
    path.mkdir(parents=True)
    (path / CONFIG_NAME).write_text(cfg.to_yaml())
    return path


def finish(run_dir: Path, cfg: cfgmod.RunConfig, command: str, results: dict) -> None:
    write_summary(run_dir / "summary.json", {
        "command": command,
        "config_sha256": cfg.digest(),
        "seed": cfg.seed,
        "eval_seeds": list(cfg.eval.seeds),
        "git": git_describe(),
        "results": results,
    })
    emit(run_dir=run_dir)


# -- data --------------------------------------------------------------------------


def load_splits(cfg: cfgmod.RunConfig, data_dir: str | None) -> dict:
    data_dir = data_dir or cfg.paths.data
    if not data_dir:
        return generate(cfg.scenario_config())
    out = {}
    for split in SPLITS:
        path = Path(data_dir) / f"{split}.ttm"
        if not path.exists():
            raise DataError(f"missing dataset file {path}")
        out[split] = load_dataset(path)
    s0 = out["train"][0]
    if s0.head.shape[1] != cfg.model.n_feat or s0.lip.shape[1] != cfg.model.image_size:
        raise DataError(f"dataset in {data_dir} does not match the model config (n_feat, image size)")
    return out


def write_predictions(path: Path, data, scores: np.ndarray, threshold: float = 0.5) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sequence_id", "frame", "score", "label", "truth"])
        for i, sid in enumerate(data.ids):
            for t in range(scores.shape[1]):
                s = float(scores[i, t])
                w.writerow([sid, t, repr(s), int(s >= threshold), int(data.labels[i, t])])


# -- commands ----------------------------------------------------------------------


def cmd_generate(cfg, args) -> int:
    out = Path(args.out) if args.out else make_run_dir(out_root(cfg, args.out_root), cfg, "generate")
    out.mkdir(parents=True, exist_ok=True)
    if args.out:
        (out / CONFIG_NAME).write_text(cfg.to_yaml())
    sums = {}
    for split, ds in generate(cfg.scenario_config()).items():
        path = out / f"{split}.ttm"
        sums[split] = save_dataset(ds, path)
        st = ds.stats()
        emit(split=split, sequences=len(ds), positive_rate=st["positive_rate"],
             missing_rate=st["missing_rate"], overlap_rate=st["overlap_rate"], sha256=sums[split], path=path)
    finish(out, cfg, "generate", {"sha256": sums})
    return 0


def cmd_train(cfg, args) -> int:
    datasets = load_splits(cfg, args.data)
    train, val = prepare(datasets["train"]), prepare(datasets["val"])
    run_dir = make_run_dir(out_root(cfg, args.out_root), cfg, "train")
    model = TTMModel(cfg.model_config(), seed=cfg.seed)

    def log(stats):
        emit(epoch=stats["epoch"], loss=stats["loss"], focal=stats["focal"], mse=stats["mse"],
             val_map=stats["val_map"])

    result = fit(model, train, val, cfg.train_config(), log=log)
    save_checkpoint(model.params, run_dir / CHECKPOINT_NAME)
    scores = predict(model, val)
    m = evaluate(model, val, per_sequence=cfg.eval.per_sequence)
    write_predictions(run_dir / "predictions_val.csv", val, scores)
    with open(run_dir / "history.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["epoch", "loss", "focal", "mse", "val_map"], lineterminator="\n")
        w.writeheader()
        for row in result["history"]:
            w.writerow({k: row[k] for k in w.fieldnames})
    emit(best_epoch=result["best_epoch"], val_mAP=m["mAP"], val_Acc=m["Acc"], beta=model.beta)
    finish(run_dir, cfg, "train", {"best_epoch": result["best_epoch"], "val": m, "beta": model.beta})
    return 0


def _load_run(args):
    run = Path(args.run)
    if not (run / CONFIG_NAME).exists() or not (run / CHECKPOINT_NAME).exists():
        raise DataError(f"{run} is not a training run directory (needs {CONFIG_NAME} and {CHECKPOINT_NAME})")
    return run


def cmd_eval(cfg, args) -> int:
    run = _load_run(args)
    datasets = load_splits(cfg, args.data)
    split = args.split or cfg.eval.split
    data = prepare(datasets[split])
    model = TTMModel(cfg.model_config(), seed=cfg.seed)
    state, step = read_checkpoint(run / CHECKPOINT_NAME)
    model.load_state(state, step)
    mel = None if args.snr is None else noisy_mels(data, args.snr, cfg.eval.noise_seed)
    scores = predict(model, data, mel)
    m = evaluate(model, data, mel, per_sequence=cfg.eval.per_sequence)
    run_dir = make_run_dir(out_root(cfg, args.out_root), cfg, "eval")
    write_predictions(run_dir / f"predictions_{split}.csv", data, scores)
    emit(split=split, snr_db=args.snr, mAP=m["mAP"], Acc=m["Acc"])
    finish(run_dir, cfg, "eval", {"split": split, "snr_db": args.snr, "checkpoint": str(run), **m})
    return 0


def _bench(cfg, args) -> Benchmark:
    datasets = load_splits(cfg, args.data)
    return Benchmark.build(cfg.scenario_config(), cfg.model_config(), cfg.train_config(), datasets)


def _seeds(cfg, args):
    return args.seeds if args.seeds else list(cfg.eval.seeds)


def cmd_ablate(cfg, args) -> int:
    bench = _bench(cfg, args)
    seeds = _seeds(cfg, args)
    run_dir = make_run_dir(out_root(cfg, args.out_root), cfg, "ablate")

    def log(row):
        emit(variant=row["variant"], seed=row["seed"], mAP=row["mAP"] or None, Acc=row["Acc"] or None,
             error=row["error"] or None)

    results, failed = {}, 0
    if args.study in ("ablation", "both"):
        rows = run_ablation(bench, seeds, cfg.vmma.mode, log=log)
        write_csv(rows, ABLATION_HEADER, run_dir / "ablation.csv")
        results["ablation"] = summarize(rows)
        failed += sum(1 for r in rows if r["error"])
    if args.study in ("threshold", "both"):
        rows = run_threshold_study(bench, seeds, log=log)
        write_csv(rows, ABLATION_HEADER, run_dir / "thresholds.csv")
        results["threshold"] = summarize(rows)
        failed += sum(1 for r in rows if r["error"])
    emit(failed_rows=failed)
    finish(run_dir, cfg, "ablate", results)
    return 2 if failed else 0


def cmd_snr_sweep(cfg, args) -> int:
    bench = _bench(cfg, args)
    seeds = _seeds(cfg, args)
    run_dir = make_run_dir(out_root(cfg, args.out_root), cfg, "snr-sweep")
    from .evalkit import train_variant

    mode = cfg.vmma.mode
    variants = {"psa": Variant("psa", psa=True, prompt_mode=mode),
                "no-psa": Variant("no-psa", psa=False, prompt_mode=mode)}
    models = {name: [] for name in variants}
    for name, v in variants.items():
        for seed in seeds:
            models[name].append(train_variant(bench, v, seed))
            emit(trained=name, seed=seed)
    rows = snr_sweep(models, bench.splits[cfg.eval.split], cfg.eval.snr_grid, cfg.eval.noise_seed)
    for r in rows:
        r["seed"] = seeds[r["seed"]]
        emit(snr_db=r["snr_db"], variant=r["variant"], seed=r["seed"], mAP=r["mAP"], Acc=r["Acc"])
    write_csv(rows, SNR_HEADER, run_dir / "snr.csv")
    by_level = {}
    for r in rows:
        by_level.setdefault(str(r["snr_db"]), []).append(r)
    finish(run_dir, cfg, "snr-sweep", {k: summarize(v) for k, v in by_level.items()})
    return 0


def gradcheck_model(seed: int = 0, max_entries: int | None = None):
    """Finite-difference check of the whole tiny model, PSA term included."""
    rng = np.random.default_rng(seed + 1)
    T = 4
    model = TTMModel(ModelConfig.tiny(), seed=seed)
    model.set_threshold(0.3)
    from .model import Batch

    batch = Batch(
        head=rng.normal(size=(2, T, 4)),
        lip=rng.random((2, T, 8, 8, 1)),
        mel=rng.normal(size=(2, 12, 80)),
        present=np.array([[True, False, True, True], [True, True, False, False]]),
        labels=np.array([[1, 0, 0, 1], [0, 1, 1, 0]], dtype=float),
        mel_clean=rng.normal(size=(2, 12, 80)),
    )
    return finite_difference_check(lambda: model.loss(batch, psa_weight=0.5)[0], dict(model.params.items()),
                                   max_entries=max_entries)


def cmd_gradcheck(cfg, args) -> int:
    t0 = time.time()
    rep = gradcheck_model(cfg.seed, args.max_entries)
    passed = rep.max_rel_error < args.tol
    emit(max_rel_error=f"{rep.max_rel_error:.3e}", worst=rep.worst, checked=rep.checked,
         tol=f"{args.tol:.0e}", passed=passed, seconds=f"{time.time() - t0:.1f}")
    return 0 if passed else 2


def cmd_pose(cfg, args) -> int:
    if (args.six is None) == (args.euler is None):
        raise ConfigError("pose needs exactly one of --6d or --euler")
    if args.six is not None:
        R = gram_schmidt_6d(np.array(args.six[:3]), np.array(args.six[3:])).data
    else:
        R = euler_to_rotation(np.array(args.euler))
    yaw, pitch, roll = euler_from_rotation(R)
    for i, row in enumerate(R):
        emit(row=i, values=",".join(f"{x:.9f}" for x in row))
    emit(yaw=float(yaw), pitch=float(pitch), roll=float(roll), det=float(np.linalg.det(R)))
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "snr-sweep": cmd_snr_sweep,
    "gradcheck": cmd_gradcheck,
    "pose": cmd_pose,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="YAML run config")
    common.add_argument("--seed", type=int, help="top-level seed (overrides the file)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key, e.g. train.epochs=5 (repeatable)")
    common.add_argument("--out-root", help=f"run directory root (default: paths.out_root, ${OUT_ENV}, ./runs)")

    p = _Parser(prog="ttmkit", description="Talking-to-me detection toolkit")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", parents=[common], help="write the synthetic dataset splits")
    g.add_argument("--out", help="directory for the dataset files (default: a new run directory)")

    t = sub.add_parser("train", parents=[common], help="train the full model")
    t.add_argument("--data", help="dataset directory from `generate` (default: generate in memory)")
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--mode", choices=["none", "fine", "coarse"], help="prompt mode")

    e = sub.add_parser("eval", parents=[common], help="evaluate a trained run")
    e.add_argument("--run", required=True, help="training run directory")
    e.add_argument("--data")
    e.add_argument("--split", choices=list(SPLITS))
    e.add_argument("--snr", type=float, help="evaluate with noise mixed in at this SNR (dB)")

    a = sub.add_parser("ablate", parents=[common], help="toggle grid and threshold study")
    a.add_argument("--data")
    a.add_argument("--study", choices=["ablation", "threshold", "both"], default="both")
    a.add_argument("--seeds", type=int, nargs="+")

    s = sub.add_parser("snr-sweep", parents=[common], help="PSA vs non-PSA across SNR levels")
    s.add_argument("--data")
    s.add_argument("--seeds", type=int, nargs="+")

    gc = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of the tiny model")
    gc.add_argument("--tol", type=float, default=1e-5)
    gc.add_argument("--max-entries", type=int, help="sample this many entries per tensor instead of all")

    po = sub.add_parser("pose", parents=[common], help="6D or Euler input to rotation and angles")
    po.add_argument("--6d", dest="six", type=float, nargs=6, metavar="X")
    po.add_argument("--euler", type=float, nargs=3, metavar=("YAW", "PITCH", "ROLL"))
    return p


def resolve_config(args) -> cfgmod.RunConfig:
    overrides = []
    run_cfg = getattr(args, "run", None)
    path = args.config
    if path is None and run_cfg:
        # eval defaults to the config the run was trained with
        path = str(Path(run_cfg) / CONFIG_NAME)
    overrides.extend(args.set)
    flag_tree = {}
    if args.seed is not None:
        flag_tree["seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        flag_tree.setdefault("train", {})["epochs"] = args.epochs
    if getattr(args, "lr", None) is not None:
        flag_tree.setdefault("train", {})["lr"] = args.lr
    if getattr(args, "mode", None) is not None:
        flag_tree["vmma"] = {"mode": args.mode}
    overrides.append(flag_tree)
    return cfgmod.build(path, overrides)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except (ConfigError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime failure
        print(f"failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
