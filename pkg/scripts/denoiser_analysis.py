"""Break down where the shallow reverse chain loses accuracy on a trained checkpoint.

For every utterance of the training corpus, compares the l1 error to the target of
  pre       decoder output (the chain's starting point)
  post      the sampling chain as used at synthesis time
  renoise   decoder output pushed through q(m_S | m_0) before the chain
  det       the same chain with its injected noise switched off
  gt_start  the chain started from the ground-truth mel

    python3 scripts/denoiser_analysis.py runs/overfit/last.drnc
"""
import argparse

import numpy as np

from durian_e import numerics as nx
from durian_e.corpus import SyntheticCorpusSpec, gen_corpus
from durian_e.diffusion import reverse_step, shallow_sample
from durian_e.train import load_model


def deterministic_chain(m, s, c, p, sched):
    for t in range(sched.S_shallow, 0, -1):
        m = reverse_step(m, p(m, s, c, t).data, t, 0.0, sched)
    return m


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("checkpoint")
    ap.add_argument("--utterances", type=int, default=8)
    args = ap.parse_args()

    model, cfg = load_model(args.checkpoint)
    model.eval()
    sched = model.schedule
    corpus = gen_corpus(SyntheticCorpusSpec(utterances=args.utterances, mel_channels=cfg.model.mel_channels))
    cols = ["pre", "post", "renoise", "det", "gt_start"]
    rows = []
    with nx.no_grad():
        for i, u in enumerate(corpus):
            syn = model.synthesize(u.sequence, u.style, u.speaker, np.random.default_rng([0, i]),
                                   durations=u.durations)
            h, _ = model.phoneme_states(u.sequence, u.style, u.speaker)
            s, c = model.teacher_condition(h, u)
            p = model.denoiser
            outs = [syn.pre, syn.post,
                    shallow_sample(syn.pre, s, c, p, sched, np.random.default_rng(i), renoise=True),
                    deterministic_chain(syn.pre, s, c, p, sched),
                    shallow_sample(u.mel, s, c, p, sched, np.random.default_rng(i))]
            rows.append([float(np.mean(np.abs(m - u.mel))) for m in outs])
    rows = np.array(rows)
    print("utt  " + "  ".join(f"{c:>8s}" for c in cols))
    for i, r in enumerate(rows):
        print(f"{i:3d}  " + "  ".join(f"{v:8.4f}" for v in r))
    print("mean " + "  ".join(f"{v:8.4f}" for v in rows.mean(axis=0)))


if __name__ == "__main__":
    main()
