"""Central-difference checks of the tape gradients, per op and end to end."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .config import TOY_GRADCHECK_CONFIG, ModelConfig
from .model import GatedStreamTransformer
from .tensor import Tensor

OP_TOLERANCE = 1e-4
MODEL_TOLERANCE = 1e-3
# |a - n| / max(|a|, |n|, floor): entries below the floor are compared absolutely
OP_FLOOR = 1e-8
MODEL_FLOOR = 1e-6


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    n_checked: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def _check(name: str, build: Callable[[], Tensor], inputs: list[Tensor], rng: np.random.Generator,
           tol: float, floor: float, h: float = 1e-5, max_entries: int | None = None) -> CheckResult:
    for x in inputs:
        x.grad = None
    with T.Tape() as tape:
        loss = build()
    tape.backward(loss)

    def f():
        return build().item()

    worst, count = 0.0, 0
    for x in inputs:
        grad = x.grad if x.grad is not None else np.zeros_like(x.data)
        flat = np.arange(x.data.size)
        if max_entries is not None and x.data.size > max_entries:
            flat = rng.choice(x.data.size, size=max_entries, replace=False)
        for k in flat:
            idx = np.unravel_index(int(k), x.shape)
            num = T.numerical_grad(f, x, idx, h)
            worst = max(worst, T.relative_error(grad[idx], num, floor))
            count += 1
    return CheckResult(name, worst, count, tol)


def _weighted(out: Tensor, w: np.ndarray) -> Tensor:
    # random projection so gradients of normalising ops are not trivially zero
    return T.sum_all(T.mul(out, Tensor(w)))


def op_cases(rng: np.random.Generator) -> dict[str, tuple[Callable[[], Tensor], list[Tensor]]]:
    def p(*shape):
        return Tensor(rng.standard_normal(shape), requires_grad=True)

    def w(*shape):
        return rng.standard_normal(shape)

    a, b = p(3, 3), p(3, 3)
    ba, bb = p(2, 3, 4), p(4, 5)
    ca, cb = p(2, 1, 3, 4), p(3, 4, 2)
    x5, x35 = p(5), p(3, 5)
    lx, lg, lb = p(4, 6), p(6), p(6)
    ga, gb = p(4, 3), p(4, 3)
    c1, c2 = p(2, 3), p(2, 4)
    sx = p(3, 7)
    bx = p(1, 3)
    rx = p(2, 6)
    px = p(2, 3, 4)
    mx = p(4, 5)
    ex = p(5)
    ebx = p(4, 6)
    tgt = rng.integers(0, 6, size=4)
    li, lw, lbias = p(2, 3, 4), p(4, 5), p(5)
    ws = {k: w(*s) for k, s in {
        "bmm": (2, 3, 5), "bcast": (2, 3, 3, 2), "sm5": (5,), "sm": (3, 5), "ln": (4, 6), "ew": (4, 3),
        "cat": (2, 7), "slice": (3, 3), "bto": (4, 3), "rs": (3, 4), "perm": (4, 2, 3), "mean": (4,),
        "lin": (2, 3, 5), "gelu": (4, 3),
    }.items()}
    return {
        "matmul": (lambda: T.sum_all(T.matmul(a, b)), [a, b]),
        "matmul_batched": (lambda: _weighted(T.matmul(ba, bb), ws["bmm"]), [ba, bb]),
        "matmul_broadcast": (lambda: _weighted(T.matmul(ca, cb), ws["bcast"]), [ca, cb]),
        "softmax_last_5": (lambda: _weighted(T.softmax_last(x5), ws["sm5"]), [x5]),
        "softmax_last": (lambda: _weighted(T.softmax_last(x35), ws["sm"]), [x35]),
        "layer_norm": (lambda: _weighted(T.layer_norm(lx, lg, lb), ws["ln"]), [lx, lg, lb]),
        "gelu": (lambda: _weighted(T.gelu(ga), ws["gelu"]), [ga]),
        "add": (lambda: _weighted(T.add(ga, gb), ws["ew"]), [ga, gb]),
        "sub": (lambda: _weighted(T.sub(ga, gb), ws["ew"]), [ga, gb]),
        "mul": (lambda: _weighted(T.mul(ga, gb), ws["ew"]), [ga, gb]),
        "scale": (lambda: _weighted(T.scale(ga, -1.7), ws["ew"]), [ga]),
        "one_minus": (lambda: _weighted(T.one_minus(ga), ws["ew"]), [ga]),
        "concat": (lambda: _weighted(T.concat([c1, c2], axis=1), ws["cat"]), [c1, c2]),
        "slice": (lambda: _weighted(T.slice_axis(sx, 1, 2, 5), ws["slice"]), [sx]),
        "broadcast_to": (lambda: _weighted(T.broadcast_to(bx, (4, 3)), ws["bto"]), [bx]),
        "reshape": (lambda: _weighted(T.reshape(rx, (3, 4)), ws["rs"]), [rx]),
        "permute": (lambda: _weighted(T.permute(px, (2, 0, 1)), ws["perm"]), [px]),
        "mean": (lambda: _weighted(T.mean(mx, axis=1), ws["mean"]), [mx]),
        "cross_entropy": (lambda: T.cross_entropy(ex, 2), [ex]),
        "cross_entropy_batched": (lambda: T.cross_entropy(ebx, tgt), [ebx]),
        "linear": (lambda: _weighted(T.linear(li, lw, lbias), ws["lin"]), [li, lw, lbias]),
    }


def check_ops(seed: int = 0, tol: float = OP_TOLERANCE) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    return [_check(name, build, inputs, rng, tol, OP_FLOOR) for name, (build, inputs) in op_cases(rng).items()]


def toy_batch(cfg: ModelConfig, rng: np.random.Generator, batch: int = 2):
    st = rng.random((batch, cfg.n_st, cfg.H, cfg.W, cfg.C))
    lt = rng.random((batch, cfg.n_lt, cfg.H, cfg.W, cfg.C)) if cfg.uses_long_stream else None
    y = rng.integers(0, cfg.num_classes, size=batch)
    return st, lt, y


def check_model(cfg: ModelConfig = TOY_GRADCHECK_CONFIG, seed: int = 0, per_group: int = 20,
                tol: float = MODEL_TOLERANCE) -> list[CheckResult]:
    """One result per parameter tensor, ``per_group`` random entries each."""
    rng = np.random.default_rng(seed)
    model = GatedStreamTransformer(cfg, seed=seed)
    st, lt, y = toy_batch(cfg, rng)

    def build():
        return T.cross_entropy(model(st, lt), y)

    model.zero_grad()
    with T.Tape() as tape:
        loss = build()
    tape.backward(loss)

    def f():
        return build().item()

    results = []
    for name, p in model.params.items():
        grad = p.grad if p.grad is not None else np.zeros_like(p.data)
        picks = rng.choice(p.data.size, size=min(per_group, p.data.size), replace=False)
        worst = 0.0
        for k in picks:
            idx = np.unravel_index(int(k), p.shape)
            worst = max(worst, T.relative_error(grad[idx], T.numerical_grad(f, p, idx), MODEL_FLOOR))
        results.append(CheckResult(name, worst, len(picks), tol))
    return results
