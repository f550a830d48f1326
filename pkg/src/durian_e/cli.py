"""Command line entry point: ``durian-e {gen-data,train,synth,verify}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import load_config


def _common(p: argparse.ArgumentParser, out_required: bool = True):
    p.add_argument("--config", type=Path, help="JSON overrides on top of the preset")
    p.add_argument("--preset", choices=["paper", "desk"], help="named configuration (default desk)")
    p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("--out", type=Path, required=out_required, help="output directory")


def cmd_gen_data(args) -> int:
    from .corpus import SyntheticCorpusSpec, gen_corpus, save_corpus
    cfg = load_config(args.config, args.preset)
    spec = SyntheticCorpusSpec(utterances=args.utterances, mel_channels=cfg.model.mel_channels,
                               seed=args.seed if args.seed is not None else 0)
    paths = save_corpus(gen_corpus(spec), args.out)
    print(f"wrote {len(paths)} utterances to {args.out}")
    return 0


def cmd_train(args) -> int:
    from .corpus import load_corpus
    from .train import Trainer, teacher_forced_metrics
    cfg = load_config(args.config, args.preset)
    if args.seed is not None:
        cfg.train.seed = args.seed
    steps = args.steps if args.steps is not None else cfg.train.steps
    corpus = load_corpus(args.data)
    if corpus[0].mel.shape[1] != cfg.model.mel_channels:
        raise SystemExit(f"corpus has {corpus[0].mel.shape[1]} mel channels, config expects "
                         f"{cfg.model.mel_channels}")
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "config.json").write_text(cfg.to_json())
    trainer = Trainer(cfg, corpus)
    trainer.run(steps, args.out)
    print(json.dumps({"step": trainer.step, **teacher_forced_metrics(trainer.model, corpus)}))
    return 0


def cmd_synth(args) -> int:
    from .synth import synth_to_files
    paths = synth_to_files(args.checkpoint, args.text, args.style, args.speaker, args.out,
                           seed=args.seed if args.seed is not None else 0,
                           emit_predenoiser=args.emit_predenoiser)
    for kind, p in paths.items():
        print(f"{kind}: {p}")
    return 0


def cmd_verify(args) -> int:
    from . import verify
    checks = verify.run(args.suite, seed=args.seed if args.seed is not None else 0)
    print(verify.report(checks))
    return 0 if all(c.passed for c in checks) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="durian-e", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic corpus of DRNE records")
    _common(p)
    p.add_argument("--utterances", type=int, default=8)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train on a corpus directory")
    _common(p)
    p.add_argument("--data", type=Path, required=True, help="corpus directory from gen-data")
    p.add_argument("--steps", type=int, help="override the configured step count")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synth", help="synthesize a phoneme string to mel records")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--text", required=True, help='space separated symbols, e.g. "p3 p7 #1 p2"')
    p.add_argument("--style", default="neutral", help="style label or id")
    p.add_argument("--speaker", default="0", help="speaker id")
    p.add_argument("--emit-predenoiser", action="store_true", help="also write the decoder-only mel")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("verify", help="run the self-check suites")
    p.add_argument("suite", nargs="?", default="all", choices=["gradcheck", "invariants", "diffusion-oracle", "all"])
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (KeyError, ValueError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
