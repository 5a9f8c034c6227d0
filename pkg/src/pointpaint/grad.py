"""Reverse-mode automatic differentiation over dense float64 tensors (rank <= 3).

Just the primitive set the encoder forward pass and cross-entropy loss need,
plus Adam and a finite-difference gradient checker.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ShapeError, TrainingError


class Tensor:
    """Dense float64 array with an optional gradient accumulator."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        if self.data.ndim > 3:
            raise ShapeError(f"rank {self.data.ndim} > 3 not supported")
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        if self.grad is not None:
            self.grad.fill(0.0)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _swap(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


class Tape:
    """Ordered record of primitive ops; creation order is topological order."""

    def __init__(self):
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], object]] = []

    def _track(self, out_data, parents, backward_fn) -> Tensor:
        req = any(p.requires_grad for p in parents)
        out = Tensor(out_data, requires_grad=req)
        if req:
            self._nodes.append((out, tuple(parents), backward_fn))
        return out

    # ---- primitives -------------------------------------------------------

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        out = a.data + b.data

        def bw(g):
            return [_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)]

        return self._track(out, (a, b), bw)

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        out = a.data * b.data

        def bw(g):
            return [_unbroadcast(g * b.data, a.data.shape),
                    _unbroadcast(g * a.data, b.data.shape)]

        return self._track(out, (a, b), bw)

    def scale(self, a: Tensor, s: float) -> Tensor:
        return self._track(a.data * s, (a,), lambda g: [g * s])

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.data.ndim < 2 or b.data.ndim < 2:
            raise ShapeError("matmul operands must have rank >= 2")
        out = np.matmul(a.data, b.data)

        def bw(g):
            ga = _unbroadcast(np.matmul(g, _swap(b.data)), a.data.shape)
            gb = _unbroadcast(np.matmul(_swap(a.data), g), b.data.shape)
            return [ga, gb]

        return self._track(out, (a, b), bw)

    def transpose(self, a: Tensor) -> Tensor:
        return self._track(_swap(a.data), (a,), lambda g: [_swap(g)])

    def reshape(self, a: Tensor, shape) -> Tensor:
        old = a.data.shape
        return self._track(a.data.reshape(shape), (a,), lambda g: [g.reshape(old)])

    def concat(self, tensors: list[Tensor], axis: int) -> Tensor:
        sizes = [t.data.shape[axis] for t in tensors]
        splits = np.cumsum(sizes)[:-1]
        out = np.concatenate([t.data for t in tensors], axis=axis)

        def bw(g):
            return list(np.split(g, splits, axis=axis))

        return self._track(out, tuple(tensors), bw)

    def gather_rows(self, table: Tensor, idx: np.ndarray) -> Tensor:
        if table.data.ndim != 2:
            raise ShapeError("gather_rows expects a 2-d table")
        idx = np.asarray(idx, dtype=np.int64)
        if np.any((idx < 0) | (idx >= table.data.shape[0])):
            raise ShapeError("gather_rows index out of range")
        out = table.data[idx]

        def bw(g):
            gt = np.zeros_like(table.data)
            np.add.at(gt, idx, g)
            return [gt]

        return self._track(out, (table,), bw)

    def relu(self, a: Tensor) -> Tensor:
        mask = a.data > 0
        return self._track(a.data * mask, (a,), lambda g: [g * mask])

    def rowsoftmax(self, a: Tensor) -> Tensor:
        z = a.data - a.data.max(axis=-1, keepdims=True)
        e = np.exp(z)
        s = e / e.sum(axis=-1, keepdims=True)

        def bw(g):
            return [s * (g - (g * s).sum(axis=-1, keepdims=True))]

        return self._track(s, (a,), bw)

    def sum_all(self, a: Tensor) -> Tensor:
        shape = a.data.shape
        return self._track(a.data.sum(), (a,), lambda g: [np.broadcast_to(g, shape).copy()])

    def cross_entropy(self, logits: Tensor, targets: np.ndarray) -> Tensor:
        """Mean over rows of -log softmax(logits)[target], max-subtracted."""
        if logits.data.ndim != 2:
            raise ShapeError("cross_entropy expects N x C logits")
        n, c = logits.data.shape
        targets = np.asarray(targets, dtype=np.int64)
        if targets.shape != (n,):
            raise ShapeError(f"targets shape {targets.shape} != ({n},)")
        if np.any((targets < 0) | (targets >= c)):
            raise ShapeError(f"targets must lie in [0, {c})")
        z = logits.data - logits.data.max(axis=1, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=1))
        loss = float(np.mean(lse - z[np.arange(n), targets]))
        softmax = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)

        def bw(g):
            gl = softmax.copy()
            gl[np.arange(n), targets] -= 1.0
            return [gl * (float(g) / n)]

        return self._track(loss, (logits,), bw)


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(tensor) into .grad of every requires_grad tensor.

    Each call adds one full pass worth of gradient; call zero_grad between
    steps. Adjoints are carried in a scratch map so repeated calls are exactly
    additive.
    """
    if loss.data.shape != ():
        raise ShapeError(f"loss must be scalar, got shape {loss.data.shape}")
    adj: dict[int, np.ndarray] = {id(loss): np.ones(())}
    seen: dict[int, Tensor] = {id(loss): loss}
    for out, parents, bw in reversed(tape._nodes):
        g = adj.get(id(out))
        if g is None:
            continue
        for p, pg in zip(parents, bw(np.asarray(g, dtype=np.float64))):
            if not p.requires_grad:
                continue
            key = id(p)
            if key in adj:
                adj[key] = adj[key] + pg
            else:
                adj[key] = pg
                seen[key] = p
    for key, t in seen.items():
        if t.requires_grad:
            t.grad += adj[key]


# ---- optimizer ------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict[str, Tensor], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, in place, from each tensor's .grad."""
    state.t += 1
    t = state.t
    for name, p in params.items():
        g = p.grad
        if g is None:
            raise TrainingError(f"parameter {name!r} has no gradient buffer")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in parameter {name!r}")
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.zero_grad()


# ---- gradient checking ----------------------------------------------------


@dataclass
class GradCheckReport:
    per_tensor: dict[str, float]  # max relative error per named tensor
    max_rel_err: float
    failures: list[str]  # "name[idx]" for every coordinate above tol
    tol: float

    @property
    def passed(self) -> bool:
        return not self.failures


def grad_check(params: dict[str, Tensor], loss_fn, eps: float = 1e-3,
               tol: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients of loss_fn() against central finite differences.

    loss_fn builds a fresh tape from the current parameter values and returns
    (tape, loss). rel_err = |a - n| / max(|a|, |n|, 1e-8) per coordinate.
    """
    zero_grads(params)
    tape, loss = loss_fn()
    backward(tape, loss)
    analytic = {name: p.grad.copy() for name, p in params.items()}

    per_tensor: dict[str, float] = {}
    failures: list[str] = []
    max_err = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            _, lp = loss_fn()
            flat[i] = orig - eps
            _, lm = loss_fn()
            flat[i] = orig
            numeric = (float(lp.data) - float(lm.data)) / (2 * eps)
            a = analytic[name].reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            if err > tol:
                failures.append(f"{name}[{i}]")
            worst = max(worst, err)
        per_tensor[name] = worst
        max_err = max(max_err, worst)
    return GradCheckReport(per_tensor=per_tensor, max_rel_err=max_err,
                           failures=failures, tol=tol)
