"""Training loop, evaluation helpers and checkpoint plumbing."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from . import checkpoint as ckpt
from . import numerics as nx
from .config import Config
from .corpus import Utterance
from .decoder import reconstruction_loss
from .diffusion import diffusion_loss
from .model import LOSS_NAMES, DurianE
from .optim import make_optimizer

log = logging.getLogger(__name__)

LOG_FIELDS = ("step",) + LOSS_NAMES + ("total",)


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, losses: dict):
        super().__init__(f"non-finite loss at step {step}: {losses}")
        self.step = step


@dataclass
class StepRecord:
    step: int
    losses: dict[str, float]
    total: float

    def line(self) -> str:
        vals = [repr(self.losses[n]) for n in LOSS_NAMES] + [repr(self.total)]
        return ",".join([str(self.step)] + vals)

    @classmethod
    def parse(cls, line: str) -> "StepRecord":
        parts = line.strip().split(",")
        vals = [float(v) for v in parts[1:]]
        return cls(int(parts[0]), dict(zip(LOSS_NAMES, vals[:-1])), vals[-1])


class Trainer:
    """Single-utterance-per-step trainer; utterance ``step % len(corpus)`` is used."""

    def __init__(self, config: Config, corpus: list[Utterance]):
        if not corpus:
            raise ValueError("empty corpus")
        self.config = config
        self.corpus = corpus
        tc = config.train
        self.model = DurianE(config.model, seed=tc.seed)
        self.optimizer = make_optimizer(tc.optimizer, list(self.model.named_parameters()), tc.lr,
                                        tc.momentum)
        self.rng = np.random.default_rng([tc.seed, 3])
        self.step = 0
        self.weights = {"l1": tc.w_l1, "dur_l2": tc.w_duration, "pitch_l2": tc.w_pitch,
                        "range_l2": tc.w_range, "diff_mse": tc.w_diffusion}

    def current_utterance(self) -> Utterance:
        return self.corpus[self.step % len(self.corpus)]

    def evaluate_step_loss(self) -> StepRecord:
        """Forward-only loss the next ``train_step`` will see (rng is not advanced)."""
        rng = np.random.default_rng()
        rng.bit_generator.state = self.rng.bit_generator.state
        self.model.train()
        with nx.no_grad():
            out = self.model.forward_train(self.current_utterance(), rng, self.weights,
                                           draws=self.config.train.diffusion_draws)
        return StepRecord(self.step, {k: v.item() for k, v in out.losses.items()}, out.total.item())

    def train_step(self) -> StepRecord:
        self.model.train()
        out = self.model.forward_train(self.current_utterance(), self.rng, self.weights,
                                       draws=self.config.train.diffusion_draws)
        losses = {k: v.item() for k, v in out.losses.items()}
        total = out.total.item()
        if not math.isfinite(total):
            raise TrainingDiverged(self.step, losses)
        self.model.zero_grad()
        nx.backward(out.total)
        self.optimizer.step()
        rec = StepRecord(self.step, losses, total)
        self.step += 1
        return rec

    def run(self, steps: int, out_dir: str | Path | None = None) -> list[StepRecord]:
        records = []
        log_file = None
        if out_dir is not None:
            out_dir = Path(out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            log_file = open(out_dir / "metrics.log", "a")
        try:
            for _ in range(steps):
                rec = self.train_step()
                records.append(rec)
                if log_file:
                    log_file.write(rec.line() + "\n")
                if rec.step % 100 == 0:
                    log.info("step %d total %.4f l1 %.4f diff %.4f", rec.step, rec.total,
                             rec.losses["l1"], rec.losses["diff_mse"])
                every = self.config.train.checkpoint_every
                if out_dir is not None and every and self.step % every == 0:
                    self.save(out_dir / f"step_{self.step:06d}.drnc")
            if out_dir is not None:
                self.save(out_dir / "last.drnc")
        finally:
            if log_file:
                log_file.close()
        return records

    # -- persistence --------------------------------------------------------
    def to_checkpoint(self) -> ckpt.Checkpoint:
        blobs = {f"param/{k}": v for k, v in self.model.state_dict().items()}
        blobs.update({f"opt/{k}": v for k, v in self.optimizer.state_dict().items()})
        return ckpt.Checkpoint(self.config.to_dict(), blobs, self.rng.bit_generator.state, self.step)

    def save(self, path: str | Path):
        ckpt.save(self.to_checkpoint(), path)

    @classmethod
    def from_checkpoint(cls, ck: ckpt.Checkpoint, corpus: list[Utterance]) -> "Trainer":
        tr = cls(Config.from_dict(ck.config), corpus)
        tr.model.load_state_dict(ck.params)
        tr.optimizer.load_state_dict(ck.optimizer)
        tr.rng.bit_generator.state = ck.rng_state
        tr.step = ck.step
        return tr


def load_model(path: str | Path) -> tuple[DurianE, Config]:
    ck = ckpt.load(path)
    config = Config.from_dict(ck.config)
    model = DurianE(config.model, seed=config.train.seed)
    model.load_state_dict(ck.params)
    return model, config


# ----------------------------------------------------------------------------
# evaluation
# ----------------------------------------------------------------------------

def teacher_forced_metrics(model: DurianE, corpus: Iterable[Utterance]) -> dict[str, float]:
    """Mean teacher-forced l1 and variance l2 losses with dropout disabled."""
    model.eval()
    acc = {"l1": [], "dur_l2": [], "pitch_l2": [], "range_l2": []}
    with nx.no_grad():
        for u in corpus:
            out = model.forward_train(u, np.random.default_rng(0), t=1, eps=np.zeros_like(u.mel))
            for k in acc:
                acc[k].append(out.losses[k].item())
    return {k: float(np.mean(v)) for k, v in acc.items()}


def diffusion_eval(model: DurianE, corpus: Iterable[Utterance], seed: int = 1234) -> float:
    """Noise-regression MSE averaged over every step t = 1..T and every utterance.

    Noise draws are fixed by ``seed`` so values are comparable across checkpoints.
    """
    model.eval()
    sched = model.schedule
    vals = []
    with nx.no_grad():
        for i, u in enumerate(corpus):
            rng = np.random.default_rng([seed, i])
            h, _ = model.phoneme_states(u.sequence, u.style, u.speaker)
            s, c = model.teacher_condition(h, u)
            for t in range(1, sched.T_total + 1):
                loss, _, _ = diffusion_loss(u.mel, s, c, model.denoiser, sched, rng, t=t)
                vals.append(loss.item())
    return float(np.mean(vals))


def denoiser_comparison(model: DurianE, corpus: Iterable[Utterance], seed: int = 0,
                        force_durations: bool = False) -> list[tuple[float, float]]:
    """(pre-denoiser l1, post-denoiser l1) against the target for each utterance.

    Utterances whose predicted length differs from the target give ``nan``
    unless ``force_durations`` supplies the ground-truth alignment.
    """
    out = []
    for i, u in enumerate(corpus):
        syn = model.synthesize(u.sequence, u.style, u.speaker, np.random.default_rng([seed, i]),
                               durations=u.durations if force_durations else None)
        if syn.pre.shape != u.mel.shape:
            out.append((math.nan, math.nan))
            continue
        out.append((reconstruction_loss(syn.pre, u.mel).item(), reconstruction_loss(syn.post, u.mel).item()))
    return out


@dataclass
class OverfitReport:
    """Outcome of a fixed-length training run evaluated on its own training set."""
    steps: int
    seconds: float
    teacher_forced: dict[str, float]
    diffusion_mse_start: float
    diffusion_mse_end: float
    pre_post_l1: list[tuple[float, float]]

    @property
    def diffusion_reduction(self) -> float:
        return self.diffusion_mse_start / self.diffusion_mse_end

    @property
    def denoiser_wins(self) -> int:
        return sum(1 for pre, post in self.pre_post_l1 if post <= pre)


def overfit_run(config: Config, corpus: list[Utterance], steps: int | None = None,
                out_dir: str | Path | None = None) -> tuple[Trainer, OverfitReport]:
    trainer = Trainer(config, corpus)
    d0 = diffusion_eval(trainer.model, corpus)
    t0 = time.perf_counter()
    trainer.run(config.train.steps if steps is None else steps, out_dir)
    seconds = time.perf_counter() - t0
    report = OverfitReport(trainer.step, seconds, teacher_forced_metrics(trainer.model, corpus), d0,
                           diffusion_eval(trainer.model, corpus), denoiser_comparison(trainer.model, corpus))
    return trainer, report
