"""Command-line experiments: ``python -m hssnb <command> ...``.

Exit codes: 0 success, 1 usage/configuration error, 2 data error,
3 numerical failure (divergence or a failed gradient check).
"""

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import metrics as M
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import (DatasetError, extract_patches, load_dataset, pca_apply, pca_fit,
                   save_dataset, stratified_split, synth_generate)
from .network import (PRESETS, ArchitectureError, TrainConfig, TrainingDiverged, build_model,
                      grad_check, jitter_for_check, predict, preset, seed_for, train)
from .tensor import make_rng

log = logging.getLogger("hssnb")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

# index 0 = unlabeled (black); 1..16 class colours
PALETTE = np.array([
    (0, 0, 0), (255, 0, 0), (0, 255, 0), (0, 0, 255), (255, 255, 0),
    (255, 0, 255), (0, 255, 255), (255, 128, 0), (128, 0, 255), (0, 128, 0),
    (128, 128, 0), (0, 128, 128), (128, 0, 0), (255, 128, 192), (128, 128, 255),
    (192, 192, 192), (128, 64, 0),
], dtype=np.uint8)


class UsageError(Exception):
    pass


@dataclass
class ExperimentConfig:
    dataset: str = ""
    out_dir: str = "runs"
    preset: str = "full"
    window: int = None  # None -> preset value (25 for the full preset)
    pca: int = None  # None -> preset value (30 for the full preset)
    filters3d: list = None
    filters2d: list = None
    hidden: int = None
    peepholes: bool = False
    dtype: str = "float64"
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    train_fraction: float = 0.3
    seed: int = 0
    runs: int = 3  # repeated runs feed the mean ± std report
    windows: list = field(default_factory=lambda: [19, 21, 23, 25])
    serial: bool = True

    def to_json(self):
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        raw = json.loads(text)
        if not isinstance(raw, dict):
            raise UsageError("config file must hold a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**raw)

    def architecture(self, classes, window=None):
        if self.preset not in PRESETS:
            raise UsageError(f"unknown preset {self.preset!r}")
        over = {"classes": classes, "peepholes": bool(self.peepholes)}
        if window or self.window:
            over["window"] = window or self.window
        if self.pca:
            over["bands"] = self.pca
        if self.filters3d:
            over["filters3d"] = tuple(self.filters3d)
        if self.filters2d:
            over["filters2d"] = tuple(self.filters2d)
        if self.hidden:
            over["hidden"] = self.hidden
        return preset(self.preset, **over)

    def train_config(self, arch, seed=None):
        return TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, learning_rate=self.learning_rate,
            beta1=self.beta1, beta2=self.beta2, adam_eps=self.adam_eps,
            train_fraction=self.train_fraction, window=arch.window, pca=arch.bands,
            seed=self.seed if seed is None else seed,
        )


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _on_off(text):
    if text.lower() in ("on", "true", "1", "yes"):
        return True
    if text.lower() in ("off", "false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError("expected on/off")


def _experiment_flags(p):
    p.add_argument("--config", help="flat JSON config file; flags override its values")
    p.add_argument("--dataset")
    p.add_argument("--out", dest="out_dir")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--window", type=int)
    p.add_argument("--pca", type=int)
    p.add_argument("--filters3d", type=_int_list)
    p.add_argument("--filters2d", type=_int_list)
    p.add_argument("--hidden", type=int)
    p.add_argument("--peepholes", type=_on_off)
    p.add_argument("--dtype", choices=["float64", "float32"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", dest="learning_rate", type=float)
    p.add_argument("--train-fraction", dest="train_fraction", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--runs", type=int)
    p.add_argument("--windows", type=_int_list)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--serial", dest="serial", action="store_true", default=None)
    mode.add_argument("--parallel", dest="serial", action="store_false")


def build_parser():
    parser = _Parser(prog="hssnb", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--size", default="32x32x16", help="WIDTHxHEIGHTxBANDS")
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config")

    p = sub.add_parser("train", help="PCA, patches, split, train, evaluate")
    _experiment_flags(p)

    p = sub.add_parser("eval", help="recompute test metrics for trained checkpoints")
    p.add_argument("--checkpoint", nargs="+", required=True,
                   help="checkpoint files or training output directories")
    p.add_argument("--dataset")
    p.add_argument("--split-seed", type=int)
    p.add_argument("--json", dest="json_out")
    p.add_argument("--config")

    p = sub.add_parser("map", help="export a colour classification map (PPM)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--config")

    p = sub.add_parser("gradcheck", help="finite-difference check of every parameter tensor")
    p.add_argument("--preset", default="gradcheck", choices=sorted(PRESETS))
    p.add_argument("--peepholes", default="both", choices=["on", "off", "both"])
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config")

    p = sub.add_parser("sweep", help="train/evaluate once per window size")
    _experiment_flags(p)
    return parser


def resolve_config(args):
    cfg = ExperimentConfig()
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                cfg = ExperimentConfig.from_json(fh.read())
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}")
        except (json.JSONDecodeError, TypeError) as exc:
            raise UsageError(f"bad config {args.config}: {exc}")
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    for key, val in vars(args).items():
        if key in names and val is not None:
            setattr(cfg, key, val)
    return cfg


# ---------------------------------------------------------------- pipeline pieces


def prepare(cube, labels, window, pca, train_fraction, split_seed):
    """PCA, patch extraction and the seeded split.  Returns ``(train_set, test_set)``."""
    reduced = pca_apply(pca_fit(cube, pca), cube)
    patches = extract_patches(reduced, labels, window)
    return stratified_split(patches, train_fraction, make_rng(seed_for(split_seed, "split")))


def _load(dataset, classes_expected=None):
    if not dataset:
        raise UsageError("--dataset is required")
    cube, labels = load_dataset(dataset)
    if classes_expected is not None and labels.class_count != classes_expected:
        raise DatasetError(
            f"dataset has {labels.class_count} classes, checkpoint expects {classes_expected}")
    return cube, labels


def evaluate(model, test_set):
    pred = predict(model, test_set.patches)
    cm = M.ConfusionMatrix.from_labels(test_set.class_indices, pred, model.arch.classes)
    s = M.scores(cm)
    return (s["kappa"], s["aa"], s["oa"]), cm


def run_training(cfg, run_dir, seed, window=None):
    """One full train + test evaluation.  Writes checkpoint, history and metrics into ``run_dir``."""
    cube, labels = _load(cfg.dataset)
    arch = cfg.architecture(labels.class_count, window)
    tcfg = cfg.train_config(arch, seed)
    tr, te = prepare(cube, labels, arch.window, arch.bands, tcfg.train_fraction, seed)
    dtype = np.float32 if cfg.dtype == "float32" else np.float64
    model = build_model(arch, make_rng(seed_for(seed, "init")), dtype=dtype)
    history = train(model, tr, tcfg)
    result, cm = evaluate(model, te)

    os.makedirs(run_dir, exist_ok=True)
    save_checkpoint(os.path.join(run_dir, "checkpoint.bin"), model, seed=seed, epoch=tcfg.epochs,
                    extra={"train_fraction": tcfg.train_fraction, "dataset": cfg.dataset})
    with open(os.path.join(run_dir, "history.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss", "train_accuracy"])
        for rec in history:
            w.writerow([rec["epoch"], repr(rec["loss"]), repr(rec["train_accuracy"])])
    with open(os.path.join(run_dir, "metrics.json"), "w") as fh:
        json.dump({"kappa": result[0], "aa": result[1], "oa": result[2],
                   "confusion": cm.counts.tolist(), "train_size": len(tr), "test_size": len(te)},
                  fh, indent=2, sort_keys=True)
    return result


def run_seed(cfg, r):
    return cfg.seed + 10 * r


def cmd_synth(args):
    try:
        w, h, b = (int(v) for v in args.size.lower().split("x"))
    except ValueError:
        raise UsageError(f"--size must look like 32x32x16, got {args.size!r}")
    if args.classes < 2:
        raise UsageError("--classes must be >= 2")
    if b < args.classes:
        raise UsageError("bands must be >= classes")
    try:
        cube, labels = synth_generate(w, h, b, args.classes, args.noise, make_rng(args.seed))
    except ValueError as exc:
        raise UsageError(str(exc))
    save_dataset(args.out, cube, labels, name=f"synthetic-{w}x{h}x{b}-seed{args.seed}")
    print(f"wrote {args.out}: {w}x{h}x{b}, {args.classes} classes")
    return EXIT_OK


def cmd_train(args):
    cfg = resolve_config(args)
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "config.json"), "w") as fh:
        fh.write(cfg.to_json() + "\n")
    results = []
    for r in range(cfg.runs):
        run_dir = cfg.out_dir if cfg.runs == 1 else os.path.join(cfg.out_dir, f"run_{r}")
        results.append(run_training(cfg, run_dir, run_seed(cfg, r)))
    summary = M.report_json(results)
    with open(os.path.join(cfg.out_dir, "report.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    print(M.report_table(results, title=f"test metrics over {cfg.runs} run(s), %"))
    return EXIT_OK


def _checkpoint_files(paths):
    out = []
    for p in paths:
        if os.path.isdir(p):
            direct = os.path.join(p, "checkpoint.bin")
            if os.path.isfile(direct):
                out.append(direct)
            else:
                runs = sorted(d for d in os.listdir(p) if d.startswith("run_"))
                out += [os.path.join(p, d, "checkpoint.bin") for d in runs]
        else:
            out.append(p)
    if not out:
        raise DatasetError("no checkpoints found")
    return out


def cmd_eval(args):
    cfg = resolve_config(args)
    results = []
    for path in _checkpoint_files(args.checkpoint):
        model, header = load_checkpoint(path)
        cube, labels = _load(cfg.dataset or header["extra"].get("dataset", ""), model.arch.classes)
        seed = header["seed"] if args.split_seed is None else args.split_seed
        _, te = prepare(cube, labels, model.arch.window, model.arch.bands,
                        header["extra"]["train_fraction"], seed)
        results.append(evaluate(model, te)[0])
    print(M.report_table(results, title=f"test metrics over {len(results)} run(s), %"))
    if args.json_out:
        with open(args.json_out, "w") as fh:
            fh.write(M.dumps_report(results) + "\n")
    return EXIT_OK


def write_ppm(path, index_map):
    """Binary P6 image of a palette-index map."""
    rgb = PALETTE[np.asarray(index_map) % len(PALETTE)]
    h, w = index_map.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(rgb.astype(np.uint8).tobytes())


def classification_map(model, cube, labels):
    reduced = pca_apply(pca_fit(cube, model.arch.bands), cube)
    patches = extract_patches(reduced, labels, model.arch.window)
    pred = predict(model, patches.patches)
    out = np.zeros(labels.labels.shape, dtype=np.int64)
    out[patches.coords[:, 0], patches.coords[:, 1]] = pred
    return out


def cmd_map(args):
    cfg = resolve_config(args)
    model, header = load_checkpoint(args.checkpoint)
    cube, labels = _load(cfg.dataset or header["extra"].get("dataset", ""), model.arch.classes)
    write_ppm(args.out, classification_map(model, cube, labels))
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_gradcheck(args):
    modes = {"on": [True], "off": [False], "both": [False, True]}[args.peepholes]
    ok = True
    for peep in modes:
        arch = preset(args.preset, peepholes=peep)
        rng = make_rng(args.seed)
        model = build_model(arch, rng)
        jitter_for_check(model, rng)
        patch = rng.normal(size=model.input_shape)
        one_hot = np.eye(arch.classes)[rng.integers(arch.classes)]
        rep = grad_check(model, patch, one_hot, epsilon=args.epsilon, tolerance=args.tolerance)
        print(f"peepholes {'on' if peep else 'off'}")
        print(rep.summary())
        ok &= rep.passed
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_sweep(args):
    cfg = resolve_config(args)
    rows = []
    for window in sorted(cfg.windows):
        try:
            kappa_, aa, oa = run_training(cfg, os.path.join(cfg.out_dir, f"window_{window}"),
                                          cfg.seed, window=window)
            rows.append({"window": window, "oa": oa, "aa": aa, "kappa": kappa_})
        except (ArchitectureError, TrainingDiverged, DatasetError, ValueError) as exc:
            print(f"window {window}: failed: {exc}", file=sys.stderr)
            rows.append({"window": window, "oa": None, "error": str(exc)})
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "sweep.json"), "w") as fh:
        json.dump(rows, fh, indent=2, sort_keys=True)
    lines = [f"{'Window':>8} | {'OA (%)':>8}", "-" * 19]
    for row in rows:
        oa = "failed" if row["oa"] is None else f"{100 * row['oa']:.2f}"
        lines.append(f"{row['window']:>3}x{row['window']:<4} | {oa:>8}")
    table = "\n".join(lines)
    with open(os.path.join(cfg.out_dir, "sweep.txt"), "w") as fh:
        fh.write(table + "\n")
    print(table)
    return EXIT_OK if all(r["oa"] is not None for r in rows) else EXIT_NUMERIC


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "map": cmd_map,
            "gradcheck": cmd_gradcheck, "sweep": cmd_sweep}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ArchitectureError) as exc:
        print(f"hssnb {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, CheckpointError, OSError) as exc:
        print(f"hssnb {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDiverged, FloatingPointError) as exc:
        print(f"hssnb {args.command}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
