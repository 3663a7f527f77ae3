"""Invariant suites shared by the ``gradcheck`` and ``selftest`` commands.

Each check returns a list of ``(name, passed, detail)`` rows so callers can
print one line per property.
"""

from __future__ import annotations

import itertools
import math
import time
from typing import Callable, Optional

import numpy as np

from .config import ModelConfig, SearchParams
from .data.batch import Sample, make_bibatch, strip_core
from .data.vocab import EOS, SOS
from .evaluation import EvalResult, token_edit_distance
from .inference import L2R, R2L, beam_search, joint_search, rank_key
from .model import Model, tile_memory
from .numerics import Tensor, gradcheck, no_grad, ops
from .training import concat_loss

Row = tuple[str, bool, str]


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------

def _t(rng, *shape, positive=False):
    x = rng.normal(size=shape)
    if positive:
        x = np.abs(x) + 0.5
    return Tensor(x, requires_grad=True)


def op_cases(rng: np.random.Generator) -> dict[str, tuple[Callable, dict]]:
    """One small random instance of every differentiable op, float64."""
    r = np.random.default_rng(rng.integers(2**32))
    mask = np.where(r.random((3, 5)) < 0.3, -np.inf, 0.0)
    mask[:, 0] = 0.0
    drop = (r.random((3, 4)) > 0.3) / 0.7
    targets = r.integers(0, 6, size=(2, 3))
    ids = r.integers(0, 5, size=(2, 4))
    rm, rv = np.zeros(3), np.ones(3)
    cases = {
        "add": (lambda v: ops.add(v["a"], v["b"]), {"a": _t(r, 3, 4), "b": _t(r, 4)}),
        "sub": (lambda v: ops.sub(v["a"], v["b"]), {"a": _t(r, 3, 1), "b": _t(r, 3, 4)}),
        "mul": (lambda v: ops.mul(v["a"], v["b"]), {"a": _t(r, 3, 4), "b": _t(r, 1, 4)}),
        "scale": (lambda v: ops.scale(v["x"], 0.37), {"x": _t(r, 5)}),
        "relu": (lambda v: ops.relu(v["x"]), {"x": _t(r, 4, 5)}),
        "dropout": (lambda v: ops.dropout(v["x"], drop), {"x": _t(r, 3, 4)}),
        "reshape": (lambda v: ops.reshape(v["x"], (6, 2)), {"x": _t(r, 3, 4)}),
        "transpose": (lambda v: ops.transpose(v["x"], (2, 0, 1)), {"x": _t(r, 2, 3, 4)}),
        "concat": (lambda v: ops.concat([v["a"], v["b"]], axis=1), {"a": _t(r, 2, 3), "b": _t(r, 2, 2)}),
        "sum": (lambda v: ops.sum(v["x"], axis=1, keepdims=True), {"x": _t(r, 3, 4)}),
        "mean": (lambda v: ops.mean(v["x"], axis=0), {"x": _t(r, 3, 4)}),
        "matmul": (lambda v: ops.matmul(v["a"], v["b"]), {"a": _t(r, 2, 3, 4), "b": _t(r, 2, 4, 5)}),
        "linear": (lambda v: ops.linear(v["x"], v["w"], v["b"]),
                   {"x": _t(r, 2, 3, 4), "w": _t(r, 4, 5), "b": _t(r, 5)}),
        "softmax": (lambda v: ops.softmax(v["x"], mask), {"x": _t(r, 3, 5)}),
        "log_softmax": (lambda v: ops.log_softmax(v["x"]), {"x": _t(r, 3, 5)}),
        "cross_entropy": (lambda v: ops.cross_entropy(v["x"], targets), {"x": _t(r, 2, 3, 6)}),
        "layernorm": (lambda v: ops.layernorm(v["x"], v["g"], v["b"]),
                      {"x": _t(r, 2, 3, 6), "g": _t(r, 6), "b": _t(r, 6)}),
        "batchnorm": (lambda v: ops.batchnorm(v["x"], v["g"], v["b"], rm.copy(), rv.copy(), True),
                      {"x": _t(r, 4, 3, 2, 2), "g": _t(r, 3), "b": _t(r, 3)}),
        "conv2d": (lambda v: ops.conv2d(v["x"], v["w"], v["b"], 1, 1),
                   {"x": _t(r, 2, 3, 5, 4), "w": _t(r, 2, 3, 3, 3), "b": _t(r, 2)}),
        "conv2d_stride": (lambda v: ops.conv2d_nhwc(v["x"], v["w"], None, 2, 1),
                          {"x": _t(r, 2, 5, 6, 1), "w": _t(r, 4, 1, 3, 3)}),
        "conv2d_1x1": (lambda v: ops.conv2d_nhwc(v["x"], v["w"], v["b"]),
                       {"x": _t(r, 2, 3, 3, 4), "w": _t(r, 3, 4, 1, 1), "b": _t(r, 3)}),
        "avgpool2d": (lambda v: ops.avgpool2d(v["x"], 2), {"x": _t(r, 2, 3, 5, 3)}),
        "embedding": (lambda v: ops.embedding(v["w"], ids), {"w": _t(r, 5, 3)}),
    }
    # probe each op through sum(out * r) so every output entry reaches the gradient
    probe = {}
    for name, (fn, inputs) in cases.items():
        weights = np.random.default_rng(r.integers(2**32))
        out_shape = fn(inputs).shape
        w = weights.normal(size=out_shape)
        probe[name] = ((lambda f, w: lambda v: ops.sum(ops.mul(f(v), w)))(fn, w), inputs)
    return probe


def model_case(seed: int, preset: str = "mini", vocab_size: int = 9):
    """Bidirectional loss of a float64 model on a random two-sample batch."""
    rng = np.random.default_rng(seed)
    model = Model(ModelConfig.preset(preset, vocab_size), seed=seed)
    model.astype(np.float64)
    model.train()
    samples = [Sample(rng.random((int(rng.integers(6, 10)), int(rng.integers(6, 14)))),
                      list(rng.integers(3, vocab_size, size=int(rng.integers(1, 5)))), f"s{i}")
               for i in range(2)]
    batch = make_bibatch(samples)

    def loss_fn(_):
        memory = model.encode(batch.images, batch.image_mask)
        logits = model.decoder.forward(tile_memory(memory, 2), batch.inputs(), batch.masks())
        return concat_loss(logits, batch)

    return loss_fn, dict(model.named_parameters())


def gradient_suite(seeds: int = 20, tolerance: float = 1e-3, model_entries: Optional[int] = 6,
                   first_seed: int = 0) -> list[Row]:
    """Finite-difference checks of every op and the mini model over ``seeds`` seeds."""
    worst: dict[str, float] = {}
    for s in range(first_seed, first_seed + seeds):
        rng = np.random.default_rng(s)
        for name, (fn, inputs) in op_cases(rng).items():
            rep = gradcheck(fn, inputs, tolerance, rng=rng)
            worst[name] = max(worst.get(name, 0.0), rep.max_error)
        fn, params = model_case(s)
        rep = gradcheck(fn, params, tolerance, rng=rng, max_entries=model_entries)
        worst["model"] = max(worst.get("model", 0.0), rep.max_error)
    return [(f"gradcheck {k}", v <= tolerance, f"max rel err {v:.2e} over {seeds} seeds")
            for k, v in worst.items()]


# ---------------------------------------------------------------------------
# decoding oracle
# ---------------------------------------------------------------------------

def teacher_forced_logprob(model: Model, memory, start: int, core, stop: int) -> float:
    """log P(core, stop | start) from one full forward pass, summed in order."""
    with no_grad():
        logits = model.decoder.forward(memory, np.array([[start, *core]])).data[0].astype(np.float64)
    m = logits.max(axis=-1, keepdims=True)
    lp = logits - m - np.log(np.exp(logits - m).sum(axis=-1, keepdims=True))
    total = 0.0
    for i, tok in enumerate([*core, stop]):
        total = total + lp[i, tok]
    return float(total)


def enumerate_cores(n_content: int, max_len: int):
    toks = range(EOS + 1, EOS + 1 + n_content)
    for n in range(1, max_len + 1):
        yield from itertools.product(toks, repeat=n)


def exhaustive_winners(model: Model, memory, params: SearchParams, n_content: int) -> dict:
    """Brute-force winners for L2R, R2L and joint search (reading-order cores).

    The joint oracle applies the same pool rule as the search: each direction
    keeps its ``k`` best sequences, then the combined score picks among them.
    """
    cores = list(enumerate_cores(n_content, params.max_len))
    a = params.alpha
    l2r = {c: teacher_forced_logprob(model, memory, SOS, c, EOS) for c in cores}
    r2l = {c: teacher_forced_logprob(model, memory, EOS, c[::-1], SOS) for c in cores}
    pen = lambda lp, c: lp / float(len(c)) ** a
    by_l2r = sorted(cores, key=lambda c: rank_key(pen(l2r[c], c), c))
    by_r2l = sorted(cores, key=lambda c: rank_key(pen(r2l[c], c), c[::-1]))
    pool = []
    for c in by_l2r[: params.beam]:
        pool.append((pen(l2r[c], c) + params.rescore_weight * pen(r2l[c], c), c))
    for c in by_r2l[: params.beam]:
        pool.append((pen(r2l[c], c) + params.rescore_weight * pen(l2r[c], c), c))
    joint = min(pool, key=lambda sc: rank_key(sc[0], sc[1]))[1]
    global_joint = min(cores, key=lambda c: rank_key(pen(l2r[c] + r2l[c], c), c))
    return {"l2r": by_l2r[0], "r2l": by_r2l[0], "joint": joint,
            "global_joint": global_joint}


def decoding_oracle(seeds: int = 10, n_content: int = 4, max_len: int = 3, beam: int = 64) -> list[Row]:
    mismatches = {"l2r": 0, "r2l": 0, "joint": 0, "global_joint": 0}
    for s in range(seeds):
        cfg = ModelConfig.preset("mini", 3 + n_content)
        cfg.decoder.max_len = max_len
        model = Model(cfg, seed=s)
        model.astype(np.float64)
        model.eval()
        img = np.random.default_rng(s).random((6, 9))
        with no_grad():
            memory = model.encode(img)
        params = SearchParams(beam=beam, max_len=max_len, alpha=1.0)
        want = exhaustive_winners(model, memory, params, n_content)
        got_l2r = beam_search(model, memory, L2R, params)[0].l2r_core()
        got_r2l = beam_search(model, memory, R2L, params)[0].l2r_core()
        got_joint = joint_search(model, memory, params).ids
        mismatches["l2r"] += got_l2r != want["l2r"]
        mismatches["r2l"] += got_r2l != want["r2l"]
        mismatches["joint"] += got_joint != want["joint"]
        mismatches["global_joint"] += got_joint != want["global_joint"]
    return [(f"decoding oracle {k}", v == 0, f"{v}/{seeds} mismatches") for k, v in mismatches.items()]


# ---------------------------------------------------------------------------
# decoder causality and cache equivalence
# ---------------------------------------------------------------------------

def causality_suite(cases: int = 50, tol: float = 1e-5) -> list[Row]:
    leaks, worst = 0, 0.0
    for s in range(cases):
        rng = np.random.default_rng(1000 + s)
        cfg = ModelConfig.preset("mini", 10)
        model = Model(cfg, seed=s)
        model.eval()
        with no_grad():
            memory = model.encode(rng.random((int(rng.integers(4, 9)), int(rng.integers(4, 12)))))
            length = int(rng.integers(2, 10))
            ids = rng.integers(3, 10, size=(1, length))
            ids[0, 0] = SOS if rng.random() < 0.5 else EOS
            full = model.decoder.forward(memory, ids).data[0]
            j = int(rng.integers(1, length))
            bumped = ids.copy()
            bumped[0, j] = 3 + (ids[0, j] - 3 + 1) % 7
            other = model.decoder.forward(memory, bumped).data[0]
            leaks += int(not np.array_equal(full[:j], other[:j]))
            state = model.decoder.init_state(memory)
            for t in range(length):
                step_logits, state = model.decoder.step(state, ids[:, t])
                worst = max(worst, float(np.abs(step_logits[0] - full[t]).max()))
    return [("causality: later tokens never change earlier logits", leaks == 0, f"{leaks}/{cases} leaks"),
            ("incremental logits match the full pass", worst <= tol, f"max abs diff {worst:.2e}")]


# ---------------------------------------------------------------------------
# bidirectional batches
# ---------------------------------------------------------------------------

def random_samples(rng: np.random.Generator, n: int, vocab_size: int = 12, max_tokens: int = 8) -> list[Sample]:
    return [Sample(rng.random((int(rng.integers(3, 8)), int(rng.integers(3, 12)))).astype(np.float32),
                   [int(t) for t in rng.integers(3, vocab_size, size=int(rng.integers(1, max_tokens + 1)))],
                   f"r{i}") for i in range(n)]


def reversal_suite(batches: int = 1000, tol: float = 1e-6) -> list[Row]:
    failures = 0
    for s in range(batches):
        rng = np.random.default_rng(s)
        samples = random_samples(rng, int(rng.integers(1, 6)))
        b = make_bibatch(samples)
        for i, smp in enumerate(samples):
            l2r = strip_core(b.l2r_input[i])
            ok = (l2r == smp.tokens and strip_core(b.r2l_input[i])[::-1] == l2r
                  and strip_core(b.l2r_target[i]) == l2r and strip_core(b.r2l_target[i])[::-1] == l2r
                  and b.l2r_input[i, 0] == SOS and b.r2l_input[i, 0] == EOS)
            failures += not ok
    rng = np.random.default_rng(7)
    worst = 0.0
    for s in range(20):
        b = make_bibatch(random_samples(rng, 3))
        n, length = b.size, b.l2r_input.shape[1]
        logits = rng.normal(size=(2 * n, length, 12))
        loss = concat_loss(Tensor(logits), b).item()
        swapped = type(b)(b.images, b.image_mask, b.r2l_input, b.r2l_target, b.l2r_input, b.l2r_target,
                          b.token_mask, b.names)
        loss2 = concat_loss(Tensor(np.concatenate([logits[n:], logits[:n]])), swapped).item()
        worst = max(worst, abs(loss - loss2))
    return [("reversal invariant on random batches", failures == 0, f"{failures} failing rows over {batches} batches"),
            ("loss symmetric under swapping halves", worst <= tol, f"max diff {worst:.2e}")]


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def metric_suite(triples: int = 1000) -> list[Row]:
    rng = np.random.default_rng(0)
    bad_sym = bad_tri = bad_id = bad_mono = 0
    seq = lambda: list(rng.integers(0, 5, size=int(rng.integers(0, 9))))
    for _ in range(triples):
        a, b, c = seq(), seq(), seq()
        ab, ba = token_edit_distance(a, b), token_edit_distance(b, a)
        bad_sym += ab != ba
        bad_id += (ab == 0) != (a == b) or token_edit_distance(a, a) != 0
        bad_tri += token_edit_distance(a, c) > ab + token_edit_distance(b, c)
    for _ in range(triples):
        truths = [seq() or [1] for _ in range(int(rng.integers(1, 20)))]
        preds = []
        for t in truths:
            p = list(t)
            for _ in range(int(rng.integers(0, 4))):
                if p and rng.random() < 0.5:
                    p[int(rng.integers(len(p)))] = int(rng.integers(0, 5))
                else:
                    p.insert(int(rng.integers(len(p) + 1)), int(rng.integers(0, 5)))
            preds.append(p)
        r = EvalResult.from_distances([token_edit_distance(p, t) for p, t in zip(preds, truths)])
        bad_mono += not (r.exprate <= r.le1_rate <= r.le2_rate <= 1.0)
    return [("edit distance symmetric", bad_sym == 0, f"{bad_sym} violations"),
            ("edit distance identity of indiscernibles", bad_id == 0, f"{bad_id} violations"),
            ("edit distance triangle inequality", bad_tri == 0, f"{bad_tri} violations"),
            ("exprate <= le1 <= le2", bad_mono == 0, f"{bad_mono} violations")]


def run_all(quick: bool = True) -> list[Row]:
    rows = []
    t0 = time.perf_counter()
    rows += gradient_suite(seeds=3 if quick else 20)
    rows += decoding_oracle(seeds=3 if quick else 10)
    rows += causality_suite(cases=20 if quick else 50)
    rows += reversal_suite(batches=200 if quick else 1000)
    rows += metric_suite(triples=300 if quick else 1000)
    rows.append(("selftest wall time", True, f"{time.perf_counter() - t0:.1f}s"))
    return rows
