"""Self-check suites behind ``durian-e verify``.

Each suite returns a list of :class:`Check` records carrying the worst error
seen and the tolerance it was held to.  ``gradcheck`` compares every layer and a
miniature end-to-end loss against central differences; ``invariants`` runs the
recurrence, normalization and alignment contracts against scalar oracles;
``diffusion-oracle`` checks the schedule and sampler algebra.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import numerics as nx
from .numerics import Tensor

GRAD_TOL = 1e-4


@dataclass
class Check:
    suite: str
    name: str
    max_error: float
    tol: float
    passed: bool
    seconds: float = 0.0

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag}  {self.suite}/{self.name:<28s} max_err={self.max_error:.3e}  tol={self.tol:.0e}"


def _timed(suite: str, name: str, tol: float, fn: Callable[[], float], strict: bool = False) -> Check:
    t0 = time.perf_counter()
    try:
        err = float(fn())
    except Exception as exc:  # a crashing check is a failing check
        return Check(suite, f"{name} ({type(exc).__name__}: {exc})", math.inf, tol, False,
                     time.perf_counter() - t0)
    ok = err < tol if strict else err <= tol
    return Check(suite, name, err, tol, bool(ok and math.isfinite(err)), time.perf_counter() - t0)


# ----------------------------------------------------------------------------
# gradcheck
# ----------------------------------------------------------------------------

def _randomize(module, rng, scale=0.5):
    """Give zero-initialized parameters random values so no gradient path is trivially zero."""
    for p in module.parameters():
        if not np.any(p.data):
            p.data = np.asarray(scale * rng.normal(size=p.shape))
    return module


def _gc(f, inputs, max_checks=None, floor=1e-6) -> float:
    return nx.gradcheck(f, inputs, tol=GRAD_TOL, eps=1e-5, floor=floor, max_checks=max_checks).max_rel_error


def _primitive_cases(rng):
    U = lambda *s: Tensor(rng.uniform(-2, 2, size=s))  # noqa: E731
    P = lambda *s: Tensor(rng.uniform(0.5, 2, size=s))  # noqa: E731
    return {
        "add": (nx.add, [U(3, 4), U(4)]),
        "mul": (nx.mul, [U(3, 4), U(3, 1)]),
        "div": (nx.div, [U(3, 4), P(3, 4)]),
        "power": (lambda a: nx.power(a, 1.5), [P(5)]),
        "exp": (nx.exp, [U(5)]),
        "log": (nx.log, [P(5)]),
        "sigmoid": (nx.sigmoid, [U(5)]),
        "tanh": (nx.tanh, [U(5)]),
        "sqrt": (nx.sqrt, [P(5)]),
        "mean": (lambda a: nx.mean(a, axis=0), [U(4, 3)]),
        "var": (lambda a: nx.var(a, axis=0), [U(4, 3)]),
        "matmul": (nx.matmul, [U(3, 4), U(4, 2)]),
        "softmax": (lambda a: nx.softmax(a, axis=-1), [U(3, 4)]),
        "conv1d": (lambda x, w, b: nx.conv1d(x, w, b), [U(6, 2), U(3, 2, 3), U(3)]),
        "swish_scan": (nx.swish_scan, [U(5, 3), U(3), Tensor(np.array(0.9)), Tensor(np.array(0.2))]),
    }


def suite_gradcheck(seed: int = 0) -> list[Check]:
    from .alignment import VariancePredictor
    from .config import preset
    from .corpus import SyntheticCorpusSpec, gen_corpus
    from .decoder import ARDecoder, decode_sequence
    from .diffusion import Denoiser
    from .encoders import FrameEncoder, FrameEncoderConfig, LinguisticEncoder, LinguisticEncoderConfig
    from .alignment import SymbolSequence
    from .layers import SAIN, Conv1d, LayerNorm, Linear, MultiHeadAttention, SwishRNN
    from .model import DurianE

    rng = np.random.default_rng(seed)
    checks = []

    for name, (f, ins) in _primitive_cases(rng).items():
        checks.append(_timed("gradcheck", f"primitive.{name}", GRAD_TOL, lambda f=f, ins=ins: _gc(f, ins)))

    def layer(name, module, make_inputs, call, max_checks=None, floor=1e-6):
        _randomize(module, rng)
        ins = make_inputs()
        checks.append(_timed("gradcheck", name, GRAD_TOL,
                             lambda: _gc(lambda *_: call(module, *ins), list(ins) + module.parameters(),
                                         max_checks, floor)))

    T = lambda *s: Tensor(rng.normal(size=s))  # noqa: E731
    layer("linear", Linear(rng, 4, 3), lambda: [T(5, 4)], lambda m, x: m(x))
    layer("conv1d.k3", Conv1d(rng, 3, 2, 3), lambda: [T(6, 3)], lambda m, x: m(x))
    layer("layer_norm", LayerNorm(4), lambda: [T(3, 4)], lambda m, x: m(x))
    layer("swishrnn", SwishRNN(rng, 3, 3), lambda: [T(4, 3)], lambda m, x: m(x))
    layer("attention", MultiHeadAttention(rng, 4, 2), lambda: [T(5, 4)], lambda m, x: m(x))
    layer("sain", SAIN(rng, 3, 4), lambda: [T(6, 4), T(3)], lambda m, x, s: m(x, s))
    layer("variance_predictor", VariancePredictor(rng, 4), lambda: [T(5, 4)], lambda m, h: m(h))

    ling = LinguisticEncoder(rng, LinguisticEncoderConfig(vocab_size=6, blocks=1, hidden=8, heads=2,
                                                          dropout=0.0))
    seq = SymbolSequence([1, 5, 2], [False, True, False])
    # Composite modules contain parameters whose true gradient is exactly zero (attention key
    # biases under softmax, value biases under SAIN).  Central differences there return pure
    # roundoff, about 1e-10 on O(10) outputs, so the floor is raised to 1e-5 for them.
    layer("linguistic_encoder", ling, lambda: [], lambda m: m(seq), max_checks=6, floor=1e-5)
    frame = _randomize(FrameEncoder(rng, FrameEncoderConfig(blocks=1, hidden=8, heads=2, dropout=0.0)), rng)
    e, s = T(6, 8), T(8)
    checks.append(_timed("gradcheck", "frame_encoder", GRAD_TOL,
                         lambda: _gc(lambda *_: frame(e, s), [e, s] + frame.parameters(), 6, floor=1e-5)))
    dec = ARDecoder(rng, 4, 3, prenet_dim=5, hidden=4)
    tgt = rng.normal(size=(4, 3))
    layer("decoder.teacher_forced", dec, lambda: [T(4, 4)], lambda m, x: decode_sequence(x, m, tgt))
    layer("decoder.free_running", dec, lambda: [T(4, 4)], lambda m, x: decode_sequence(x, m))
    for at in ("cond", "gate"):
        den = Denoiser(rng, 3, 4, 5, channels=8, blocks=2, kernel=3, step_dim=8, sain_at=at)
        layer(f"denoiser.sain_{at}", den, lambda: [T(5, 3), T(5), T(5, 4)],
              lambda m, x, s_, c: m(x, s_, c, 9), max_checks=6)

    # miniature end-to-end loss through every module; the 0.1 gradient boundary is set to 1
    # here because a scaled gradient is by design not the derivative of the loss
    cfg = preset("desk", model={"grad_scale": 1.0, "hidden": 8, "linguistic_blocks": 1, "frame_blocks": 1, "mel_channels": 3,
                                "prenet_dim": 4, "decoder_hidden": 4, "residual_channels": 4,
                                "residual_blocks": 1, "step_embed_dim": 4, "dropout": 0.0}).model
    model = _randomize(DurianE(cfg, seed=seed), rng, 0.3)
    utt = gen_corpus(SyntheticCorpusSpec(utterances=1, mel_channels=3, min_phonemes=3, max_phonemes=3,
                                         max_duration=2, seed=seed))[0]
    eps = rng.normal(size=utt.mel.shape)
    model.eval()
    checks.append(_timed("gradcheck", "end_to_end_loss", GRAD_TOL, lambda: _gc(
        lambda *_: model.forward_train(utt, np.random.default_rng(0), t=7, eps=eps).total,
        model.parameters(), max_checks=3, floor=1e-5)))
    return checks


# ----------------------------------------------------------------------------
# invariants
# ----------------------------------------------------------------------------

def _swish_scalar(x, a, b):
    return x / (1.0 + math.exp(-(a * x + b)))


def _swishrnn_scan_oracle(x1, c0, a, b):
    c = list(c0)
    out = np.zeros_like(x1)
    for i in range(x1.shape[0]):
        for j in range(x1.shape[1]):
            c[j] = _swish_scalar(c[j] - x1[i, j], a, b) + x1[i, j]
            out[i, j] = c[j]
    return out


def swishrnn_oracle_error(seed: int = 0) -> float:
    from .layers import SwishRNN, swishrnn_forward
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(5):
        d_in, hidden, L = (int(v) for v in rng.integers(1, 5, size=3))
        p = SwishRNN(rng, d_in, hidden)
        for b in (p.b_c, p.b_sigma, p.b_3):
            b.data = rng.normal(size=hidden)
        p.alpha.data, p.beta.data = np.array(rng.uniform(0.5, 1.5)), np.array(rng.uniform(-0.5, 0.5))
        X = rng.normal(size=(L, d_in))
        a, b = float(p.alpha.data), float(p.beta.data)
        C = _swishrnn_scan_oracle(X @ p.W1.data, np.zeros(hidden), a, b)
        x2 = X @ p.W2.data
        H = np.zeros((L, hidden))
        for i in range(L):
            gated = [(C[i, k] + p.b_c.data[k]) / (1.0 + math.exp(-(x2[i, k] + p.b_sigma.data[k])))
                     for k in range(hidden)]
            for j in range(hidden):
                H[i, j] = sum(gated[k] * p.W3.data[k, j] for k in range(hidden)) + p.b_3.data[j]
        worst = max(worst, float(np.max(np.abs(swishrnn_forward(X, p).data - H))))
    return worst


def swishrnn_pooling_error(seed: int = 0, trials: int = 2000) -> float:
    """Worst |c - max(c_prev, x1)| when the gap between them is at least 20."""
    rng = np.random.default_rng(seed)
    prev = rng.uniform(-50, 50, size=trials)
    x1 = prev + rng.choice([-1.0, 1.0], size=trials) * rng.uniform(20, 200, size=trials)
    c = nx.swish_scan(x1[None, :], prev, 1.0, 0.0).data[0]
    return float(np.max(np.abs(c - np.maximum(prev, x1))))


def sain_errors(seed: int = 0) -> dict[str, float]:
    from .layers import SAIN, sain
    rng = np.random.default_rng(seed)
    out = {"mean": 0.0, "std": 0.0, "constant": 0.0, "affine": 0.0}
    for _ in range(20):
        T, C = int(rng.integers(4, 40)), int(rng.integers(1, 6))
        p = SAIN(rng, 3, C)
        s = rng.normal(size=3)
        x = rng.normal(size=(T, C)) * rng.uniform(0.1, 10, size=C) + rng.normal(size=C)
        unit = SAIN(rng, 3, C)
        unit.G_proj.data[...] = 0.0
        unit.B_proj.data[...] = 0.0
        y = sain(x, s, unit).data
        out["mean"] = max(out["mean"], float(np.max(np.abs(y.mean(axis=0)))))
        out["std"] = max(out["std"], float(np.max(np.abs(y.std(axis=0) - 1.0))))
        xc = x.copy()
        xc[:, 0] = rng.normal()
        _, B = p.gain_bias(s)
        out["constant"] = max(out["constant"], float(np.max(np.abs(sain(xc, s, p).data[:, 0] - B.data[0, 0]))))
        a, b = rng.uniform(0.05, 20), rng.uniform(-10, 10)
        out["affine"] = max(out["affine"], float(np.max(np.abs(sain(a * x + b, s, p).data - sain(x, s, p).data))))
    return out


def skip_select_error(seed: int = 0, trials: int = 200) -> float:
    """Count of rows where skip_select disagrees with an index-filter oracle."""
    from .alignment import SymbolSequence, skip_select
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(trials):
        n = int(rng.integers(1, 20))
        flags = rng.random(n) < 0.4
        flags[rng.integers(n)] = False
        h = rng.normal(size=(n, 3))
        got = skip_select(h, SymbolSequence(list(range(n)), list(flags))).data
        want = np.array([h[i] for i in range(n) if not flags[i]])
        bad += int(got.shape != want.shape or not np.array_equal(got, want))
    return float(bad)


def length_regulate_error(seed: int = 0, trials: int = 1000) -> float:
    """Count of random cases whose output length differs from the duration sum or
    whose rows differ from a replication oracle."""
    from .alignment import length_regulate
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(trials):
        n = int(rng.integers(1, 15))
        d = rng.integers(0, 7, size=n)
        if d.sum() == 0:
            d[rng.integers(n)] = 1
        h = rng.normal(size=(n, 2))
        out = length_regulate(h, d).data
        want = np.array([h[i] for i in range(n) for _ in range(d[i])])
        bad += int(out.shape[0] != d.sum() or not np.array_equal(out, want))
    return float(bad)


def decoder_parallel_error(seed: int = 0) -> float:
    """Bytes-level disagreement (0 or 1) between teacher-forced decoding and a step loop."""
    from .decoder import ARDecoder, DecoderState, decode_sequence, decode_step
    rng = np.random.default_rng(seed)
    bad = 0
    for T in (1, 3, 17):
        dec = _randomize(ARDecoder(rng, 8, 4, prenet_dim=6, hidden=8), rng)
        e, tgt = rng.normal(size=(T, 8)), rng.normal(size=(T, 4))
        par = decode_sequence(e, dec, targets=tgt).data
        state, rows = dec.initial_state(), []
        for t in range(T):
            frame, state = decode_step(e[t], state, dec)
            rows.append(frame.data)
            state = DecoderState(state.c, Tensor(tgt[t]))
        bad += int(np.stack(rows).tobytes() != par.tobytes())
    return float(bad)


def scale_gradient_errors(seed: int = 0) -> tuple[float, float]:
    """(forward bytes mismatch, max |grad_scaled - 0.1 grad_plain|)."""
    rng = np.random.default_rng(seed)
    x0 = rng.normal(size=(5, 3))
    fwd = float(nx.scale_gradient(x0, 0.1).data.tobytes() != x0.tobytes())

    def grad(factor):
        x = nx.parameter(x0.copy())
        y = nx.tanh(nx.mul(x, 1.7))
        if factor is not None:
            y = nx.scale_gradient(y, factor)
        nx.backward(nx.tsum(nx.mul(nx.exp(y), y)))
        return x.grad

    return fwd, float(np.max(np.abs(grad(0.1) - 0.1 * grad(None))))


def suite_invariants(seed: int = 0) -> list[Check]:
    S = "invariants"
    sain_err = sain_errors(seed)
    checks = [
        _timed(S, "swishrnn.scalar_oracle", 1e-12, lambda: swishrnn_oracle_error(seed)),
        _timed(S, "swishrnn.pooling_limit", 1e-3, lambda: swishrnn_pooling_error(seed), strict=True),
        Check(S, "sain.unit_gain_mean", sain_err["mean"], 1e-9, sain_err["mean"] <= 1e-9),
        Check(S, "sain.unit_gain_std", sain_err["std"], 1e-6, sain_err["std"] <= 1e-6),
        Check(S, "sain.constant_to_bias", sain_err["constant"], 1e-12, sain_err["constant"] <= 1e-12),
        Check(S, "sain.affine_invariance", sain_err["affine"], 1e-9, sain_err["affine"] <= 1e-9),
        _timed(S, "skip_select.filter_oracle", 0.0, lambda: skip_select_error(seed)),
        _timed(S, "length_regulate.1000_cases", 0.0, lambda: length_regulate_error(seed)),
        _timed(S, "decoder.loop_equals_parallel", 0.0, lambda: decoder_parallel_error(seed)),
    ]
    fwd, bwd = scale_gradient_errors(seed)
    checks.append(Check(S, "scale_gradient.forward", fwd, 0.0, fwd == 0.0))
    checks.append(Check(S, "scale_gradient.backward", bwd, 1e-10, bwd <= 1e-10))
    return checks


# ----------------------------------------------------------------------------
# diffusion oracles
# ----------------------------------------------------------------------------

def alpha_bar_recurrence_error(sched) -> float:
    ab = 1.0
    worst = 0.0
    for t in range(1, sched.T_total + 1):
        ab = ab * (1.0 - sched.beta(t))
        worst = max(worst, abs(sched.alpha_bar(t) - ab))
    decreasing = all(sched.alpha_bar(t) < sched.alpha_bar(t - 1) for t in range(1, sched.T_total + 1))
    return worst if decreasing else math.inf


def q_sample_composition_error(sched, t: int, trials: int = 100_000, seed: int = 0, m0: float = 1.3) -> float:
    """Worst relative mismatch in mean and variance between closed-form and composed sampling,
    and between each of them and the analytic moments."""
    from .diffusion import q_sample, q_step
    rng = np.random.default_rng([seed, t])
    closed = q_sample(np.full(trials, m0), t, rng.standard_normal(trials), sched)
    x = np.full(trials, m0)
    for k in range(1, t + 1):
        x = q_step(x, k, rng.standard_normal(trials), sched)
    ab = sched.alpha_bar(t)
    mean, var = math.sqrt(ab) * m0, 1.0 - ab
    rel = lambda a, b: abs(a - b) / abs(b)  # noqa: E731
    return max(rel(closed.mean(), x.mean()), rel(closed.var(), x.var()),
               rel(closed.mean(), mean), rel(closed.var(), var), rel(x.mean(), mean), rel(x.var(), var))


def reverse_step_oracle_error(sched, seed: int = 0, trials: int = 500) -> float:
    """reverse_step with the exact noise and z = 0 against the scalar posterior mean."""
    from .diffusion import q_sample, reverse_step
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        t = int(rng.integers(2, sched.T_total + 1))
        m0, eps = float(rng.normal()), float(rng.normal())
        x_t = q_sample(m0, t, eps, sched)
        ab, abp, b = sched.alpha_bar(t), sched.alpha_bar(t - 1), sched.beta(t)
        want = math.sqrt(abp) * b / (1 - ab) * m0 + math.sqrt(1 - b) * (1 - abp) / (1 - ab) * x_t
        worst = max(worst, abs(float(reverse_step(x_t, eps, t, 0.0, sched)) - want))
    return worst


def elbo_perfect_oracle(sched, seed: int = 0) -> float:
    from .diffusion import elbo_terms
    rng = np.random.default_rng(seed)
    m0 = rng.normal(size=6)

    def perfect(x_t, t):
        ab = sched.alpha_bar(t)
        return (x_t - math.sqrt(ab) * m0) / math.sqrt(1 - ab)

    return max(abs(k) for k in elbo_terms(m0, perfect, sched, rng))


def elbo_quadrature_error(sched, seed: int = 0) -> float:
    from scipy import integrate, stats

    from .diffusion import elbo_terms, posterior_mean_var, q_sample
    m0, bias = np.array([0.6]), 0.25
    terms = elbo_terms(m0, lambda x, t: np.full_like(x, bias), sched, np.random.default_rng(seed),
                       model_var="beta")
    replay = np.random.default_rng(seed)
    worst = 0.0
    for t in range(2, sched.T_total + 1):
        x_t = float(q_sample(m0, t, replay.standard_normal(1), sched)[0])
        if t % 11:
            continue
        mq, vq = posterior_mean_var(float(m0[0]), x_t, t, sched)
        a, ab = sched.alpha(t), sched.alpha_bar(t)
        mp = (x_t - (1 - a) / math.sqrt(1 - ab) * bias) / math.sqrt(a)
        q, p = stats.norm(mq, math.sqrt(vq)), stats.norm(mp, math.sqrt(sched.beta(t)))
        sd = math.sqrt(vq)
        num, _ = integrate.quad(lambda x: q.pdf(x) * (q.logpdf(x) - p.logpdf(x)), mq - 12 * sd, mq + 12 * sd,
                                epsabs=1e-12, limit=200)
        worst = max(worst, abs(terms[t - 2] - num))
    return worst


def suite_diffusion(seed: int = 0) -> list[Check]:
    from .diffusion import make_schedule
    S = "diffusion-oracle"
    sched = make_schedule(70, 30, 1e-4, 0.06)
    checks = [_timed(S, "alpha_bar.recurrence", 0.0, lambda: alpha_bar_recurrence_error(sched))]
    for t in (1, 10, 30, 70):
        checks.append(_timed(S, f"q_sample.composed_t{t}", 0.01,
                             lambda t=t: q_sample_composition_error(sched, t, seed=seed)))
    checks += [
        _timed(S, "reverse_step.posterior_mean", 1e-12, lambda: reverse_step_oracle_error(sched, seed)),
        _timed(S, "elbo.perfect_oracle", 1e-10, lambda: elbo_perfect_oracle(sched, seed), strict=True),
        _timed(S, "elbo.quadrature", 1e-4, lambda: elbo_quadrature_error(sched, seed)),
    ]
    return checks


SUITES = {"gradcheck": suite_gradcheck, "invariants": suite_invariants, "diffusion-oracle": suite_diffusion}


def run(suite: str = "all", seed: int = 0) -> list[Check]:
    if suite == "all":
        return [c for name in SUITES for c in SUITES[name](seed)]
    if suite not in SUITES:
        raise KeyError(f"unknown suite {suite!r}; choose from {sorted(SUITES) + ['all']}")
    return SUITES[suite](seed)


def report(checks: list[Check]) -> str:
    lines = [c.line() for c in checks]
    failed = sum(not c.passed for c in checks)
    lines.append(f"{len(checks) - failed}/{len(checks)} checks passed")
    return "\n".join(lines)
