"""Command-line interface: make-data, train, eval, synthesize, gradcheck.

Configuration merges command-line flags over an optional flat config file
(`key = value`, `#` comments) over built-in defaults; unknown keys are
rejected and every value is type-checked.  Exit codes: 0 success,
1 usage error, 2 numeric failure, 3 I/O or format error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import evaluator as ev
from . import synthdata as sdata
from . import trainer as tr
from .errors import ConfigError, FormatError, NumericError, UsageError
from .networks import AIMModel, ModelConfig
from .trainer import TrainConfig, Trainer, TrainData

ENV_DATA_DIR = "AIM_DATA_DIR"

# Every addressable key with its type and built-in default.
CONFIG_DEFAULTS = {
    "seed": (int, 0),
    # data
    "subjects": (int, 200),
    "per_subject": (int, 12),
    "image_size": (int, 32),
    "workers": (int, 1),
    # model
    "base_channels": (int, 32),
    "feature_dim": (int, 256),
    "patch_size": (int, 0),
    "dropout_keep": (float, 0.7),
    "grl_coeff": (float, 0.1),
    "use_attention": (bool, True),
    # training
    "batch_size": (int, 32),
    "adam_alpha": (float, 2e-4),
    "adam_beta1": (float, 0.5),
    "adam_beta2": (float, 0.999),
    "weight_decay": (float, 5e-3),
    "epochs": (int, 60),
    "lr_decay_epoch": (int, 20),
    "lr_decay_factor": (float, 0.1),
    "grad_clip": (float, 10.0),
    "steps": (int, 0),
    "ablation": (str, "full"),
    "subjects_limit": (int, 0),
    "train_folds": (str, "0-7"),
    "eval_folds": (str, "8-9"),
    "print_every": (int, 100),
    "checkpoint_every": (int, 0),
    # evaluation
    "metric": (str, "cosine"),
}


def _parse_value(key: str, raw: str):
    if key not in CONFIG_DEFAULTS:
        raise UsageError(f"unknown configuration key {key!r}")
    typ, _ = CONFIG_DEFAULTS[key]
    raw = raw.strip()
    if typ is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise UsageError(f"{key}: expected a boolean, got {raw!r}")
    try:
        return typ(raw)
    except ValueError:
        raise UsageError(f"{key}: expected {typ.__name__}, got {raw!r}")


def load_config_file(path) -> dict:
    values = {}
    try:
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise UsageError(f"{path}:{lineno}: expected 'key = value'")
                key, raw = line.split("=", 1)
                values[key.strip()] = _parse_value(key.strip(), raw)
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}")
    return values


def resolve_config(args) -> dict:
    """flags > config file > defaults."""
    merged = {key: default for key, (_, default) in CONFIG_DEFAULTS.items()}
    if getattr(args, "config", None):
        merged.update(load_config_file(args.config))
    for key in CONFIG_DEFAULTS:
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
    return merged


def parse_folds(text: str) -> list:
    """'0-7' or '1,3,5' -> fold id list."""
    folds = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-", 1)
            folds.extend(range(int(lo), int(hi) + 1))
        elif part:
            folds.append(int(part))
    if not folds or not all(0 <= k < 10 for k in folds):
        raise UsageError(f"invalid fold list {text!r}")
    return folds


def data_root(args) -> str:
    root = getattr(args, "data", None) or os.environ.get(ENV_DATA_DIR)
    if not root:
        raise UsageError(f"no dataset directory: pass --data or set {ENV_DATA_DIR}")
    return root


# ---------------------------------------------------------------------------
# subcommands

def cmd_make_data(args) -> int:
    cfg = resolve_config(args)
    out = data_root(args)
    manifest = os.path.join(out, sdata.MANIFEST_NAME)
    if os.path.exists(manifest) and not args.force:
        raise UsageError(f"{out} already holds a dataset (use --force to overwrite)")
    dataset = sdata.make_dataset(cfg["subjects"], cfg["per_subject"], cfg["seed"],
                                 image_size=cfg["image_size"], workers=cfg["workers"])
    sdata.save_dataset(dataset, out, pair_seed=cfg["seed"])
    print(f"wrote {len(dataset.samples)} samples for {cfg['subjects']} subjects "
          f"({cfg['image_size']}x{cfg['image_size']}) to {out}")
    return 0


def _build_model(cfg: dict, num_identities: int) -> AIMModel:
    use_attention = cfg["use_attention"] and tr.variant_uses_attention(cfg["ablation"])
    mcfg = ModelConfig(image_size=cfg["image_size"], feature_dim=cfg["feature_dim"],
                       base_channels=cfg["base_channels"], patch_size=cfg["patch_size"],
                       num_identities=num_identities, dropout_keep=cfg["dropout_keep"],
                       grl_coeff=cfg["grl_coeff"], use_attention=use_attention,
                       seed=cfg["seed"])
    return AIMModel(mcfg)


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    root = data_root(args)
    dataset = sdata.load_dataset(root)
    cfg["image_size"] = dataset.image_size
    train_folds = parse_folds(cfg["train_folds"])

    if cfg["subjects_limit"]:
        limited = []
        for k in train_folds:
            limited.extend(sorted(dataset.folds[k]))
        keep = set(limited[:cfg["subjects_limit"]])
        if len(keep) < 2:
            raise UsageError("subjects_limit leaves fewer than 2 training subjects")
        dataset = sdata.Dataset(
            samples=[s for s in dataset.samples if s.identity_id in keep
                     or s.identity_id not in {x for f in train_folds for x in dataset.folds[f]}],
            folds=[[sid for sid in fold if sid in keep] if k in train_folds else fold
                   for k, fold in enumerate(dataset.folds)],
            image_size=dataset.image_size, seed=dataset.seed,
            num_subjects=dataset.num_subjects,
            samples_per_subject=dataset.samples_per_subject)

    data = TrainData.from_dataset(dataset, train_folds)
    model = _build_model(cfg, data.num_identities)
    tcfg = TrainConfig(batch_size=cfg["batch_size"], adam_alpha=cfg["adam_alpha"],
                       adam_beta1=cfg["adam_beta1"], adam_beta2=cfg["adam_beta2"],
                       weight_decay=cfg["weight_decay"], epochs=cfg["epochs"],
                       lr_decay_epoch=cfg["lr_decay_epoch"],
                       lr_decay_factor=cfg["lr_decay_factor"], grad_clip=cfg["grad_clip"],
                       seed=cfg["seed"], max_steps=cfg["steps"], ablation=cfg["ablation"])

    out_dir = args.out or root
    os.makedirs(out_dir, exist_ok=True)
    ckpt = os.path.join(out_dir, "model.ckpt")
    metrics = os.path.join(out_dir, "metrics.csv")
    trainer = Trainer(model, data, tcfg, metrics_path=metrics)
    if args.resume:
        tr.resume_trainer(trainer, tr.load_checkpoint(args.resume))
    trainer.run(print_every=cfg["print_every"], checkpoint_path=ckpt,
                checkpoint_every=cfg["checkpoint_every"])
    print(f"finished at step {trainer.step_count}; checkpoint: {ckpt}")
    return 0


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    root = data_root(args)
    dataset = sdata.load_dataset(root)
    bundle = tr.load_checkpoint(args.checkpoint)
    model = tr.restore_model(bundle)
    if model.cfg.image_size != dataset.image_size:
        raise ConfigError(f"checkpoint expects {model.cfg.image_size}px images, "
                          f"dataset has {dataset.image_size}px")
    fold_ids = parse_folds(cfg["eval_folds"])
    report = ev.evaluate_folds(model, dataset, fold_ids, pair_seed=dataset.seed,
                               metric=cfg["metric"])

    out_dir = args.out or root
    os.makedirs(out_dir, exist_ok=True)
    report.write_csv(os.path.join(out_dir, "eval_report.csv"))
    if report.roc:
        report.write_roc_csv(os.path.join(out_dir, "roc.csv"))
    with open(os.path.join(out_dir, "eval_report.txt"), "w") as fh:
        fh.write(report.summary() + "\n")
    print(report.summary())
    return 0


def cmd_synthesize(args) -> int:
    cfg = resolve_config(args)
    root = data_root(args)
    dataset = sdata.load_dataset(root)
    model = tr.restore_model(tr.load_checkpoint(args.checkpoint))
    if model.cfg.image_size != dataset.image_size:
        raise ConfigError("checkpoint and dataset image sizes differ")
    out_dir = args.out or root
    os.makedirs(out_dir, exist_ok=True)

    def pick(idx):
        if not 0 <= idx < len(dataset.samples):
            raise UsageError(f"sample index {idx} out of range 0..{len(dataset.samples) - 1}")
        return dataset.samples[idx]

    if args.sweep is not None:
        sample = pick(args.sweep)
        grid, attention = ev.manifold_grid(model, sample, sample,
                                           steps_identity=2, steps_age=13)
        cells = grid[0]                      # 13 codes: 7 phases + 6 midpoints
        path = os.path.join(out_dir, "age_sweep.aimt")
        sdata.write_tensor(path, cells)
        print(f"wrote {cells.shape[0]} age-sweep cells to {path}")
        if args.png:
            _write_png(ev.grid_to_image(cells[None]), os.path.join(out_dir, "age_sweep.png"))
        return 0

    rows, cols = ((int(v) for v in args.grid.split("x")) if args.grid else (5, 7))
    a, b = pick(args.sample_a), pick(args.sample_b)
    grid, attention = ev.manifold_grid(model, a, b, steps_identity=rows, steps_age=cols)
    path = os.path.join(out_dir, "manifold_grid.aimt")
    sdata.write_tensor(path, ev.grid_to_image(grid))
    print(f"wrote {rows}x{cols} interpolation grid to {path}")
    if attention is not None and args.export_attention:
        att_path = os.path.join(out_dir, "manifold_grid_attention.aimt")
        sdata.write_tensor(att_path, ev.grid_to_image(attention))
        print(f"wrote attention maps to {att_path}")
    if args.png:
        _write_png(ev.grid_to_image(grid), os.path.join(out_dir, "manifold_grid.png"))
    return 0


def _write_png(chw_image: np.ndarray, path):
    try:
        from PIL import Image
    except ImportError:
        raise UsageError("PNG export needs the pillow package (pip install pillow)")
    arr = np.clip((chw_image.transpose(1, 2, 0) + 1) * 127.5, 0, 255).astype(np.uint8)
    if arr.shape[2] == 1:
        arr = arr[:, :, 0]
    Image.fromarray(arr).save(path)
    print(f"wrote {path}")


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite
    cfg = resolve_config(args)
    results = run_suite(seed=cfg["seed"])
    tolerance = args.tolerance
    failed = []
    for name in sorted(results):
        status = "ok" if results[name] < tolerance else "FAIL"
        print(f"{name:28s} max_rel_err={results[name]:.3e}  {status}")
        if results[name] >= tolerance:
            failed.append(name)
    if failed:
        raise NumericError(f"gradient checks failed: {', '.join(failed)}")
    print(f"all {len(results)} gradient checks passed (tolerance {tolerance:g})")
    return 0


# ---------------------------------------------------------------------------
# parser

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_common(p):
    p.add_argument("--config", help="flat key = value configuration file")
    p.add_argument("--data", help=f"dataset directory (default ${ENV_DATA_DIR})")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (default: the dataset directory)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="aimkit", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-data", help="generate the synthetic dataset")
    _add_common(p)
    p.add_argument("--subjects", type=int)
    p.add_argument("--per-subject", dest="per_subject", type=int)
    p.add_argument("--image-size", dest="image_size", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_make_data)

    p = sub.add_parser("train", help="train a model variant")
    _add_common(p)
    for key in ("batch_size", "epochs", "steps", "lr_decay_epoch", "print_every",
                "checkpoint_every", "base_channels", "subjects_limit"):
        p.add_argument("--" + key.replace("_", "-"), dest=key, type=int)
    for key in ("adam_alpha", "adam_beta1", "adam_beta2", "weight_decay",
                "lr_decay_factor", "grad_clip", "dropout_keep", "grl_coeff"):
        p.add_argument("--" + key.replace("_", "-"), dest=key, type=float)
    p.add_argument("--ablation", type=str)
    p.add_argument("--train-folds", dest="train_folds", type=str)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="verification metrics on held-out folds")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--eval-folds", dest="eval_folds", type=str)
    p.add_argument("--metric", type=str, choices=sorted(ev.SCORERS))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synthesize", help="cross-age synthesis grids")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sample-a", type=int, default=0)
    p.add_argument("--sample-b", type=int, default=1)
    p.add_argument("--grid", help="ROWSxCOLS, e.g. 5x7")
    p.add_argument("--sweep", type=int, help="single-sample age sweep (13 codes)")
    p.add_argument("--export-attention", action="store_true")
    p.add_argument("--png", action="store_true")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    _add_common(p)
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2
    except (FormatError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
