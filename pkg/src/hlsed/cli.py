"""Command-line entry point: ``hlsed <command> [options]``.

Settings resolve in order: built-in defaults, then ``--config FILE`` (flat
``key = value`` lines, keys named like the long flags), then explicit flags.
Every failure exits with status 2 and one line ``error: <Kind>: <message>``.
"""
from __future__ import annotations

import argparse
import configparser
import contextlib
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import __version__
from .decode import decode, estimate_vitals, plausibility_filter
from .errors import HlsedError, InvalidConfig, InvalidParam
from .labels import CLASS_NAMES, EventList, canonical_class, load_manifest, read_labels, save_manifest, write_labels
from .metrics import BASES, DEFAULT_GRID, EvalConfig, counts_csv, default_collar, macro_f1, mape_csv, mape_curve, pool, pr_csv, pr_curve, score
from .model import DESK_CRNN, DESK_TCN, CrnnConfig, TcnConfig, forward, load_weights
from .pipeline import CorpusSpec, StrategyConfig, SynthSpec, build_corpora, generate_pseudo_labels, merge_datasets, run_strategy, synth_clip
from .signal import FeatureConfig, load_audio, log_mel, resample, save_audio, write_features
from .train import TrainConfig, items_from_manifest, train_loop

MODEL_SIZES = {
    ("crnn", "desk"): DESK_CRNN,
    ("crnn", "full"): CrnnConfig(),
    ("tcn", "desk"): DESK_TCN,
    ("tcn", "full"): TcnConfig(),
}

# flag name -> type, for values coming from a config file
_CONFIG_TYPES = {
    "seed": int, "threshold": float, "collar": float, "basis": str, "arch": str, "size": str,
    "loss": str, "gamma": float, "zeta": float, "lr": float, "batch_size": int, "epochs": int,
    "window_s": float, "patience": int, "task": str, "deterministic": None,
}


def read_config(path) -> dict:
    """Flat INI-style ``key = value`` file; a section header is optional."""
    text = Path(path).read_text(encoding="utf-8")
    if not text.lstrip().startswith("["):
        text = "[run]\n" + text
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise InvalidConfig(f"{path}: {exc}") from None
    out = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            key = key.replace("-", "_")
            if key not in _CONFIG_TYPES:
                raise InvalidConfig(f"{path}: unknown key {key!r}")
            conv = _CONFIG_TYPES[key]
            try:
                out[key] = parser.getboolean(section, key) if conv is None else conv(raw)
            except ValueError:
                raise InvalidConfig(f"{path}: bad value for {key}: {raw!r}") from None
    return out


def _fill(args, parser):
    """Apply config-file values to options the user did not set explicitly."""
    if not getattr(args, "config", None):
        return args
    values = read_config(args.config)
    for key, value in values.items():
        if not hasattr(args, key):
            continue
        if getattr(args, key) == parser.get_default(key) or getattr(args, key) is None:
            setattr(args, key, value)
    return args


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _features(clip, fcfg):
    if clip.sample_rate != fcfg.sample_rate:
        clip = resample(clip, fcfg.sample_rate)
    return clip, log_mel(clip, fcfg)


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        loss=args.loss, gamma=args.gamma, zeta=args.zeta, lr=args.lr, batch_size=args.batch_size,
        epochs=args.epochs, window_s=args.window_s, threshold=args.threshold,
        early_stop_patience=args.patience, seed=args.seed, deterministic=args.deterministic,
    ).validate()


def _eval_config(args) -> EvalConfig:
    collar = args.collar
    if collar is None and args.task in ("heart", "lung"):
        collar = default_collar(args.task)
    return EvalConfig(t_collar=collar)


def _write(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")


def _classes_arg(text):
    if text is None:
        return None
    return [canonical_class(t.strip()) for t in text.split(",") if t.strip()]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_featurize(args):
    fcfg = FeatureConfig()
    out = Path(args.out)
    for path in args.audio:
        try:
            _, spec = _features(load_audio(path), fcfg)
        except HlsedError as exc:
            raise type(exc)(f"{path}: {exc}" if str(path) not in str(exc) else str(exc)) from None
        out.mkdir(parents=True, exist_ok=True)
        target = out / (Path(path).stem + ".lmel")
        write_features(target, spec)
        print(f"{target},{spec.n_frames},{spec.n_mels}")


def cmd_train(args):
    entries = load_manifest(args.manifest)
    fcfg = FeatureConfig()
    train_e = [e for e in entries if e.split == "train"]
    val_e = [e for e in entries if e.split == "val"]
    model_cfg = MODEL_SIZES[(args.arch, args.size)]
    _, history = train_loop(
        items_from_manifest(train_e, fcfg), items_from_manifest(val_e, fcfg), model_cfg,
        _train_config(args), fcfg, run_dir=args.run_dir,
    )
    print(f"epochs={history.epochs} best_epoch={history.best_epoch} run_dir={args.run_dir}")


def cmd_infer(args):
    w = load_weights(args.weights)
    fcfg = FeatureConfig()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for path in args.audio:
        clip, spec = _features(load_audio(path), fcfg)
        p, _ = forward(w, spec, "eval")
        events = decode(p, spec.frame_duration, args.threshold, duration=clip.duration)
        target = out / (Path(path).stem + ".txt")
        write_labels(target, events)
        print(f"{target},{len(events)}")


def cmd_eval(args):
    entries = load_manifest(args.gt)
    cfg = _eval_config(args)
    per_clip = []
    for e in entries:
        duration = load_audio(e.audio).duration
        gt = read_labels(e.labels, duration) if e.labels else EventList([], duration)
        pred_path = Path(args.pred_dir) / (Path(e.audio).stem + ".txt")
        pred = read_labels(pred_path, duration)
        classes = e.supervised_classes()
        counts = score(gt.only(classes), pred.only(classes), args.basis, cfg)
        per_clip.append(counts)
    pooled = pool(per_clip)
    ordered = {c: pooled[c] for c in CLASS_NAMES if c in pooled}
    _write(args.out, counts_csv(ordered, args.basis))
    print(f"macro_f1={macro_f1(ordered):.6f}", file=sys.stderr)


def cmd_curves(args):
    w = load_weights(args.weights)
    fcfg = FeatureConfig()
    posts, gts = [], []
    for e in load_manifest(args.manifest):
        clip, spec = _features(load_audio(e.audio), fcfg)
        posts.append(forward(w, spec, "eval")[0])
        gts.append(read_labels(e.labels, clip.duration) if e.labels else EventList([], clip.duration))
    out = Path(args.out_dir)
    cfg = _eval_config(args)
    _write(out / "pr.csv", pr_csv(pr_curve(posts, gts, DEFAULT_GRID, args.basis, cfg, fcfg.frame_duration)))
    _write(out / "mape.csv", mape_csv(mape_curve(posts, gts, DEFAULT_GRID, fcfg.frame_duration)))
    print(f"{out / 'pr.csv'}\n{out / 'mape.csv'}")


def cmd_pseudolabel(args):
    w = load_weights(args.weights)
    corpus = load_manifest(args.corpus)
    out = Path(args.out_dir)
    res = generate_pseudo_labels(w, corpus, _classes_arg(args.classes), out / "labels", args.threshold)
    save_manifest(out / "pseudo.json", res.entries)
    _write(out / "rejections.csv", res.rejections_csv())
    _write(out / "totals.csv", res.totals_csv())
    print(f"accepted={len(res.entries)} rejected={len(res.rejections)}")


def cmd_merge(args):
    out = Path(args.out_dir)
    res = merge_datasets(load_manifest(args.gt), load_manifest(args.pl), out / "labels")
    save_manifest(out / "merged.json", res.entries)
    _write(out / "conflicts.csv", res.conflicts_csv())
    print(f"entries={len(res.entries)} conflicts={len(res.conflicts)}")


def cmd_synth(args):
    out = Path(args.out)
    if args.corpus:
        cs = CorpusSpec(seed=args.seed, duration=args.duration)
        paths = build_corpora(out, cs)
        for key in ("heart", "lung", "test"):
            print(paths[key])
        return
    spec = SynthSpec(duration=args.duration, heart_rate=args.hr, respiratory_rate=args.rr,
                     wheeze_hz=args.wheeze_hz, crackle_density=args.crackle_density, seed=args.seed)
    clip, events = synth_clip(spec)
    out.mkdir(parents=True, exist_ok=True)
    save_audio(out / f"{args.name}.wav", clip)
    write_labels(out / f"{args.name}.txt", events)
    print(out / f"{args.name}.wav")


def cmd_vitals(args):
    if (args.weights is None) == (args.labels is None):
        raise InvalidParam("give exactly one of --weights or --labels")
    w = load_weights(args.weights) if args.weights else None
    fcfg = FeatureConfig()
    rows = ["clip,heart_rate,respiratory_rate,duration,decision"]
    for path in args.audio:
        clip = load_audio(path)
        if w is None:
            # oracle mode: count events from a label file instead of a model
            events = read_labels(args.labels, clip.duration)
        else:
            clip, spec = _features(clip, fcfg)
            events = decode(forward(w, spec, "eval")[0], spec.frame_duration, args.threshold, clip.duration)
        v = estimate_vitals(events, clip.duration)
        d = plausibility_filter(v, args.task)
        rows.append(f"{Path(path).stem},{v.heart_rate:.1f},{v.respiratory_rate:.1f},{v.observed_duration:.3f},"
                    f"{'accept' if d else d.reason}")
    _write(args.out, "\n".join(rows) + "\n")


def cmd_strategy(args):
    cfg = StrategyConfig(
        workdir=args.workdir, heart_manifest=args.heart, lung_manifest=args.lung,
        model_cfg=MODEL_SIZES[(args.arch, args.size)], train=_train_config(args), threshold=args.threshold,
    )
    result = run_strategy(args.stage, cfg)
    if args.stage == 2:
        print(f"heart_pl={len(result['heart_pl'].entries)} lung_pl={len(result['lung_pl'].entries)} "
              f"merged={result['manifest']}")
    elif args.stage == 1:
        print(f"heart={result['heart']['weights']} lung={result['lung']['weights']}")
    else:
        print(f"weights={result['weights']}")


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _common(p):
    p.add_argument("--config", help="flat key = value file; keys mirror flag names")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--deterministic", action="store_true", help="single-threaded BLAS")
    p.add_argument("--threshold", type=float, default=0.5)


def _training(p):
    p.add_argument("--arch", choices=["crnn", "tcn"], default="crnn")
    p.add_argument("--size", choices=["desk", "full"], default="desk")
    p.add_argument("--loss", choices=["bce", "afl"], default="afl")
    p.add_argument("--gamma", type=float, default=0.0625)
    p.add_argument("--zeta", type=float, default=1.0)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=8)
    p.add_argument("--epochs", type=int, default=25)
    p.add_argument("--window-s", dest="window_s", type=float, default=10.0)
    p.add_argument("--patience", type=int, default=5)


def _scoring(p):
    p.add_argument("--basis", choices=list(BASES), default="event")
    p.add_argument("--collar", type=float, default=None, help="seconds; default depends on --task")
    p.add_argument("--task", choices=["heart", "lung", "both"], default="both")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hlsed", description="Heart and lung sound event detection.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("featurize", help="dump log-mel features")
    _common(p)
    p.add_argument("audio", nargs="*")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="train a model from a manifest")
    _common(p)
    _training(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--run-dir", dest="run_dir", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="write event files for audio clips")
    _common(p)
    p.add_argument("--weights", required=True)
    p.add_argument("audio", nargs="*")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score predicted event files against a GT manifest")
    _common(p)
    _scoring(p)
    p.add_argument("--gt", required=True)
    p.add_argument("--pred-dir", dest="pred_dir", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("curves", help="precision-recall and MAPE threshold sweeps")
    _common(p)
    _scoring(p)
    p.set_defaults(basis="segment")
    p.add_argument("--weights", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.set_defaults(func=cmd_curves)

    p = sub.add_parser("pseudolabel", help="gated pseudo labels for a corpus")
    _common(p)
    p.add_argument("--weights", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--classes", required=True, help="comma-separated class names")
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.set_defaults(func=cmd_pseudolabel)

    p = sub.add_parser("merge", help="merge GT and pseudo-label manifests")
    _common(p)
    p.add_argument("--gt", required=True)
    p.add_argument("--pl", required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("synth", help="synthetic clips or corpora")
    _common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--name", default="synth")
    p.add_argument("--duration", type=float, default=10.0)
    p.add_argument("--hr", type=float, default=72.0)
    p.add_argument("--rr", type=float, default=15.0)
    p.add_argument("--wheeze-hz", dest="wheeze_hz", type=float, default=None)
    p.add_argument("--crackle-density", dest="crackle_density", type=float, default=0.0)
    p.add_argument("--corpus", action="store_true", help="write heart, lung and test corpora")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("vitals", help="heart and respiratory rate per clip")
    _common(p)
    p.add_argument("audio", nargs="+")
    p.add_argument("--weights", default=None)
    p.add_argument("--labels", default=None, help="count events from this label file instead of a model")
    p.add_argument("--task", choices=["heart", "lung", "both"], default="both")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_vitals)

    p = sub.add_parser("strategy", help="run one stage of the three-stage strategy")
    _common(p)
    _training(p)
    p.add_argument("--stage", type=int, choices=[1, 2, 3], required=True)
    p.add_argument("--workdir", required=True)
    p.add_argument("--heart", default=None, help="heart corpus manifest")
    p.add_argument("--lung", default=None, help="lung corpus manifest")
    p.set_defaults(func=cmd_strategy)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    try:
        _fill(args, sub)
        limiter = threadpool_limits(limits=1) if args.deterministic else contextlib.nullcontext()
        with limiter:
            args.func(args)
    except HlsedError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
