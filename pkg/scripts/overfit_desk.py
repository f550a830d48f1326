"""Train the desk preset on an 8-utterance synthetic corpus and report how well it fits.

    python3 scripts/overfit_desk.py --out runs/overfit [--steps 2000] [--override '{"model": {...}}']
"""
import argparse
import json

from durian_e.config import preset
from durian_e.corpus import SyntheticCorpusSpec, gen_corpus
from durian_e.train import overfit_run


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=None)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--utterances", type=int, default=8)
    ap.add_argument("--override", default="{}", help="JSON with optional 'model' / 'train' sections")
    args = ap.parse_args()

    extra = json.loads(args.override)
    cfg = preset("desk", **extra)
    corpus = gen_corpus(SyntheticCorpusSpec(utterances=args.utterances, mel_channels=cfg.model.mel_channels))
    _, r = overfit_run(cfg, corpus, steps=args.steps, out_dir=args.out)

    print(f"steps {r.steps} in {r.seconds:.1f}s")
    print("teacher-forced", {k: round(v, 5) for k, v in r.teacher_forced.items()})
    print(f"diffusion mse {r.diffusion_mse_start:.4f} -> {r.diffusion_mse_end:.4f} ({r.diffusion_reduction:.1f}x)")
    print("utt   pre_l1   post_l1")
    for i, (pre, post) in enumerate(r.pre_post_l1):
        print(f"{i:3d}  {pre:.4f}   {post:.4f}{'  *' if post <= pre else ''}")
    print(f"denoiser not worse on {r.denoiser_wins}/{len(r.pre_post_l1)}")


if __name__ == "__main__":
    main()
