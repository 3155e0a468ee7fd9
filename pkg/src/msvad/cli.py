"""``msvad`` command line: synth, train, infer, stream, eval, experiment.

Errors are reported as one line on stderr, ``error: <CODE>: <message>``,
with a nonzero exit status. Resolved configuration is logged (JSON) to
stderr at the start of every command; results go to stdout or ``--out``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, metrics
from .config import ConfigError, RunConfig
from .features import FeatureConfig, extract
from .mixgen import CorpusError, list_mixtures, load_mixture, load_sidecar, read_wav, save_mixture, synthesize_mixture
from .model import predict
from .numcore import NumericError, TapeError
from .streaming import StreamError, init_stream, push_samples
from .training import Trainer, TrainingError, load_checkpoint, make_example, split_valid

log = logging.getLogger("msvad")

EXIT_CODES = {"USAGE": 2, "CONFIG": 3, "IO": 4, "DATA": 5, "CHECKPOINT": 6, "STREAM": 7, "TRAIN": 8,
              "NUMERIC": 9, "INTERNAL": 70}


class CliError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


# -- helpers ----------------------------------------------------------------------

def _run_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _log_config(command: str, payload: dict) -> None:
    log.info("resolved config %s", json.dumps({"command": command, **payload}, sort_keys=True, default=str))


def _require_out(args) -> Path:
    if not args.out:
        raise CliError("USAGE", f"{args.command} needs --out")
    return Path(args.out)


def _synth_one(job):
    spec, corpus, out, name = job
    mix = synthesize_mixture(spec, corpus, keep_sources=False)
    save_mixture(mix, out, name)
    return name


def _load_examples(data_dir, feature_config: FeatureConfig, causal: bool, causal_labels: bool):
    paths = list_mixtures(data_dir)
    if not paths:
        raise CliError("DATA", f"no mixtures (<id>.wav + <id>.json) under {data_dir}")
    return [make_example(load_mixture(p), feature_config, causal=causal, causal_labels=causal_labels, name=p.stem)
            for p in paths]


def config_diff(expected: dict, actual: dict) -> list[str]:
    keys = sorted(set(expected) | set(actual))
    return [f"{k}: checkpoint={actual.get(k)!r} requested={expected.get(k)!r}"
            for k in keys if expected.get(k) != actual.get(k)]


# -- commands -----------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = _run_config(args)
    out = _require_out(args)
    corpus = cfg.build_corpus()
    specs = cfg.mixture.specs(args.count, cfg.seed, cfg.features.sample_rate)
    _log_config("synth", {"seed": cfg.seed, "count": args.count, "mixture": cfg.to_dict()["mixture"],
                          "corpus": cfg.corpus})
    jobs = [(spec, corpus, out, f"mix{i:06d}") for i, spec in enumerate(specs)]
    # every spec carries its own rng seed, so results do not depend on --jobs
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            names = list(pool.map(_synth_one, jobs, chunksize=8))
    else:
        names = [_synth_one(j) for j in jobs]
    print(json.dumps({"written": len(names), "out": str(out)}))
    return 0


def cmd_train(args) -> int:
    cfg = _run_config(args)
    out = _require_out(args)
    model = cfg.model
    if args.causal:
        model = replace(model, causal=True)
    if args.no_pos_encoding:
        model = replace(model, pos_encoding=False)
    train_cfg = replace(cfg.train, seed=cfg.seed)
    if args.causal_labels:
        train_cfg = replace(train_cfg, causal_labels=True)
    if args.alpha is not None:
        train_cfg = replace(train_cfg, alpha=args.alpha)
    if args.epochs is not None:
        train_cfg = replace(train_cfg, epochs=args.epochs)
    _log_config("train", {"model": model.to_dict(), "train": train_cfg.to_dict(),
                          "features": cfg.features.to_dict(), "data": args.data, "valid": args.valid})
    data = _load_examples(args.data, cfg.features, model.causal, train_cfg.causal_labels)
    if args.valid:
        valid = _load_examples(args.valid, cfg.features, model.causal, train_cfg.causal_labels)
    else:
        data, valid = split_valid(data, train_cfg.valid_fraction)
    trainer = Trainer(model, train_cfg, feature_config=cfg.features)
    trainer.fit(data, valid, checkpoint=out, on_epoch=lambda rec: print(json.dumps(rec), flush=True))
    if not valid:
        log.info("no validation set; saved final weights")
    return 0


def _check_compat(args, ckpt, cfg: RunConfig | None):
    if args.causal and not ckpt.model_config.causal:
        raise CliError("CONFIG", "checkpoint mismatch: causal: checkpoint=False requested=True")
    if cfg is not None and args.config:
        diff = config_diff(cfg.features.to_dict(), ckpt.feature_config.to_dict())
        if diff:
            raise CliError("CONFIG", "checkpoint mismatch: features " + "; ".join(diff))


def infer_file(path, ckpt, threshold: float = 0.5) -> tuple[dict, list[str], object]:
    """Offline prediction for one WAV; returns (prediction dict, RTTM lines, features)."""
    path = Path(path)
    fc, mc = ckpt.feature_config, ckpt.model_config
    feats = extract(read_wav(path, fc.sample_rate), fc, causal=mc.causal)
    # float64, so causal results agree with the streaming engine to rounding
    params = {k: v.astype(np.float64) for k, v in ckpt.params.items()}
    probs = predict(feats.frames.astype(np.float64), mc, params)
    activity = metrics.binarize(probs, threshold)
    pred = {"file": path.stem, "frame_hop": fc.frame_hop, "threshold": threshold, "causal": mc.causal,
            "probs": probs.tolist(), "activity": activity.astype(int).tolist()}
    return pred, metrics.to_rttm(path.stem, activity, fc.frame_hop), feats


def cmd_infer(args) -> int:
    cfg = _run_config(args) if args.config else None
    out = _require_out(args)
    ckpt = _checkpoint(args.ckpt)
    _check_compat(args, ckpt, cfg)
    if bool(args.wav) == bool(args.data):
        raise CliError("USAGE", "infer needs exactly one of --wav or --data")
    wavs = [Path(args.wav)] if args.wav else sorted(Path(args.data).glob("*.wav"))
    if not wavs:
        raise CliError("DATA", f"no .wav files under {args.data}")
    _log_config("infer", {"ckpt": args.ckpt, "model": ckpt.model_config.to_dict(),
                          "features": ckpt.feature_config.to_dict(), "threshold": args.threshold,
                          "files": len(wavs)})
    out.mkdir(parents=True, exist_ok=True)

    def run(wav):
        pred, rttm, feats = infer_file(wav, ckpt, args.threshold)
        (out / f"{wav.stem}.pred.json").write_text(json.dumps(pred))
        (out / f"{wav.stem}.rttm").write_text("".join(line + "\n" for line in rttm))
        if args.dump_features:
            (out / f"{wav.stem}.features.json").write_text(feats.to_json())
        return wav.stem

    if args.jobs > 1:
        with ThreadPoolExecutor(args.jobs) as pool:
            done = list(pool.map(run, wavs))
    else:
        done = [run(w) for w in wavs]
    print(json.dumps({"files": len(done), "out": str(out)}))
    return 0


def cmd_stream(args) -> int:
    ckpt = _checkpoint(args.ckpt)
    state = init_stream(ckpt, args.threshold)
    wav = Path(args.wav)
    _log_config("stream", {"ckpt": args.ckpt, "wav": str(wav), "threshold": args.threshold,
                           "chunk_seconds": args.chunk_seconds})
    audio = read_wav(wav, state.feature_config.sample_rate)
    step = max(int(args.chunk_seconds * state.feature_config.sample_rate), 1)
    activity = []
    for start in range(0, audio.size, step):
        for d in push_samples(state, audio[start:start + step]):
            activity.append((d.is_main_active, d.is_bg_active))
            if args.json_lines:
                print(d.to_json(), flush=True)
    act = np.array(activity, dtype=np.uint8).reshape(-1, 2)
    rttm = metrics.to_rttm(wav.stem, act, state.feature_config.frame_hop)
    if args.out:
        Path(args.out).write_text("".join(line + "\n" for line in rttm))
    else:
        for line in rttm:
            print(line)
    return 0


def _read_activity(path: Path, threshold: float, n_frames: int | None = None,
                   frame_hop: float | None = None) -> tuple[np.ndarray, float]:
    """Binary (T, 2) activity from a label sidecar, prediction JSON or RTTM file."""
    if path.suffix == ".rttm":
        if n_frames is None:
            raise CliError("USAGE", f"{path}: RTTM needs a frame-level counterpart to fix its length")
        rows = [r for seg in metrics.read_rttm(path).values() for r in seg]
        return metrics.rttm_to_frames(rows, n_frames, frame_hop), frame_hop
    d = json.loads(path.read_text())
    if "probs" in d:
        return metrics.binarize(np.asarray(d["probs"]).reshape(-1, 2), threshold), d["frame_hop"]
    if "labels" in d:
        return load_sidecar(path)["labels"], d["frame_hop"]
    raise CliError("DATA", f"{path}: neither labels nor probs")


def _index(directory) -> dict[str, Path]:
    found: dict[str, Path] = {}
    directory = Path(directory)
    if not directory.is_dir():
        raise CliError("IO", f"not a directory: {directory}")
    # prefer frame-level files; RTTM only when nothing else exists for an id
    for pattern in ("*.rttm", "*.json"):
        for p in sorted(directory.glob(pattern)):
            if p.name.endswith(".features.json"):
                continue
            found[p.name.split(".")[0]] = p
    return found


def cmd_eval(args) -> int:
    refs, hyps = _index(args.ref), _index(args.hyp)
    common = sorted(set(refs) & set(hyps))
    if not common:
        raise CliError("DATA", f"no matching ids between {args.ref} and {args.hyp}")
    missing = sorted(set(refs) - set(hyps))
    _log_config("eval", {"ref": args.ref, "hyp": args.hyp, "threshold": args.threshold, "files": len(common),
                         "missing_hyp": len(missing)})
    samples = []
    for name in common:
        rp, hp = refs[name], hyps[name]
        if rp.suffix == ".rttm" and hp.suffix == ".rttm":
            raise CliError("USAGE", f"{name}: both sides are RTTM; give frame-level labels for one")
        if rp.suffix == ".rttm":
            hyp, hop = _read_activity(hp, args.threshold)
            ref, _ = _read_activity(rp, args.threshold, len(hyp), hop)
        else:
            ref, hop = _read_activity(rp, args.threshold)
            hyp, _ = _read_activity(hp, args.threshold, len(ref), hop)
        if len(hyp) != len(ref):
            raise CliError("DATA", f"{name}: {len(ref)} reference frames vs {len(hyp)} hypothesis frames")
        samples.append((ref, hyp))
    report = metrics.score(samples, common)
    report["missing_hyp"] = missing
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_experiment(args) -> int:
    from .experiments import Scale, end_to_end_experiment

    scale = Scale(n_train=args.n_train, epochs=args.epochs)
    seeds = tuple(range(args.seed or 0, (args.seed or 0) + args.n_seeds))
    _log_config("experiment", {"preset": args.preset, "scale": scale.__dict__, "seeds": seeds})
    table = end_to_end_experiment(args.preset, scale, seeds)
    print(table.format())
    if args.out:
        Path(args.out).write_text(json.dumps(table.to_dict(), indent=2) + "\n")
    return 0


def _checkpoint(path):
    try:
        return load_checkpoint(path)
    except FileNotFoundError:
        raise CliError("IO", f"checkpoint not found: {path}") from None
    except (KeyError, ValueError) as exc:
        raise CliError("CHECKPOINT", f"{path}: {exc}") from None


# -- parser ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="overrides the config file seed")
    common.add_argument("--config", help="JSON run config (see msvad.config)")
    common.add_argument("--out", help="output file or directory")
    common.add_argument("--jobs", type=int, default=1, help="worker count where samples are independent")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="msvad", description="main-speaker voice activity detection")
    parser.add_argument("--version", action="version", version=f"msvad {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate labelled mixtures")
    p.add_argument("--count", type=int, required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train a model on a synth directory")
    p.add_argument("--data", required=True)
    p.add_argument("--valid", help="held-out synth directory (default: split off valid_fraction)")
    p.add_argument("--causal", action="store_true", help="causal attention and causal front end")
    p.add_argument("--causal-labels", action="store_true", help="causal-aware targets")
    p.add_argument("--alpha", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--no-pos-encoding", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", parents=[common], help="offline prediction to JSON + RTTM")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--wav")
    p.add_argument("--data", help="directory of .wav files")
    p.add_argument("--causal", action="store_true", help="require a causal checkpoint")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--dump-features", action="store_true")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("stream", parents=[common], help="frame-by-frame causal inference")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--wav", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--json-lines", action="store_true", help="one JSON object per frame on stdout")
    p.add_argument("--chunk-seconds", type=float, default=0.1)
    p.set_defaults(func=cmd_stream)

    p = sub.add_parser("eval", parents=[common], help="score hypotheses against references")
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", parents=[common], help="desk-scale experiment grid")
    p.add_argument("--preset", required=True,
                   choices=["speech-ratio-grid", "volume-grid", "pe-ablation", "causal-vs-noncausal"])
    p.add_argument("--n-train", type=int, default=400)
    p.add_argument("--epochs", type=int, default=6)
    p.add_argument("--n-seeds", type=int, default=1)
    p.set_defaults(func=cmd_experiment)
    return parser


def _fail(code: str, message: str) -> int:
    print(f"error: {code}: {' '.join(str(message).split())}", file=sys.stderr)
    return EXIT_CODES[code]


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse already printed usage; keep its status for --help / --version
        if exc.code in (0, None):
            return 0
        return _fail("USAGE", "invalid arguments")
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        return _fail(exc.code, str(exc))
    except ConfigError as exc:
        return _fail("CONFIG", str(exc))
    except (StreamError,) as exc:
        return _fail("STREAM", str(exc))
    except TrainingError as exc:
        return _fail("TRAIN", str(exc))
    except (NumericError, TapeError) as exc:
        return _fail("NUMERIC", str(exc))
    except CorpusError as exc:
        return _fail("DATA", str(exc))
    except OSError as exc:
        return _fail("IO", str(exc))
    except (ValueError, KeyError) as exc:
        return _fail("DATA", str(exc))
    except Exception as exc:  # noqa: BLE001
        return _fail("INTERNAL", f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
