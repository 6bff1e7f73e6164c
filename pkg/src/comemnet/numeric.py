"""Dense float64 tensors with a recorded-tape reverse-mode differentiator.

Every differentiable op appends one backward closure to the active
:class:`Tape`; :meth:`Tape.backward` replays them in reverse. Parameters live
in :class:`Param` objects that carry their own AdamW state, so the optimizer
needs nothing but the parameter list.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, DivergenceError

DTYPE = np.float64


class Param:
    """A trainable matrix with gradient and AdamW moment buffers."""

    def __init__(self, value: np.ndarray, decay: bool = True):
        value = np.asarray(value, dtype=DTYPE)
        if value.ndim != 2:
            raise ConfigError(f"Param must be 2-D, got shape {value.shape}")
        self.value = value.copy()
        self.grad = np.zeros_like(self.value)
        self.adam_m = np.zeros_like(self.value)
        self.adam_v = np.zeros_like(self.value)
        self.step_count = 0
        # embedding tables opt out of weight decay so untouched rows stay put
        self.decay = decay

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def append_rows(self, rows: np.ndarray) -> None:
        """Grow along axis 0; optimizer state for the new rows starts at zero."""
        rows = np.asarray(rows, dtype=DTYPE).reshape(-1, self.value.shape[1])
        pad = np.zeros_like(rows)
        self.value = np.vstack([self.value, rows])
        self.grad = np.vstack([self.grad, pad])
        self.adam_m = np.vstack([self.adam_m, pad])
        self.adam_v = np.vstack([self.adam_v, pad])

    def copy(self) -> "Param":
        p = Param(self.value, decay=self.decay)
        p.grad = self.grad.copy()
        p.adam_m = self.adam_m.copy()
        p.adam_v = self.adam_v.copy()
        p.step_count = self.step_count
        return p

    def __repr__(self) -> str:
        return f"Param(shape={self.shape}, step={self.step_count})"


class Var:
    """A value recorded on a tape. ``grad`` is allocated on first accumulation."""

    __slots__ = ("value", "grad", "requires_grad", "param")

    def __init__(self, value: np.ndarray, requires_grad: bool = False, param: Param | None = None):
        self.value = value
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.param = param

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def _acc(self, g: np.ndarray, fresh: bool = False) -> None:
        """Add ``g`` into ``grad``. ``fresh`` promises ``g`` is not aliased elsewhere."""
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = g if fresh else np.array(g, dtype=DTYPE, copy=True)
        else:
            self.grad += g


class Tape:
    """Records ops in execution order and runs their backward closures in reverse."""

    def __init__(self) -> None:
        self._backward: list[Callable[[], None]] = []
        self._param_vars: dict[int, Var] = {}

    # -- leaves --------------------------------------------------------------

    def var(self, x) -> Var:
        """Wrap ``x``: Params become gradient leaves (one Var per Param per tape)."""
        if isinstance(x, Var):
            return x
        if isinstance(x, Param):
            v = self._param_vars.get(id(x))
            if v is None:
                v = Var(x.value, requires_grad=True, param=x)
                self._param_vars[id(x)] = v
            return v
        return Var(np.asarray(x, dtype=DTYPE))

    def _out(self, value: np.ndarray, *parents: Var) -> Var:
        return Var(value, requires_grad=any(p.requires_grad for p in parents))

    # -- ops -----------------------------------------------------------------

    def matmul(self, a, b) -> Var:
        a, b = self.var(a), self.var(b)
        if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ConfigError(f"matmul shape mismatch {a.shape} @ {b.shape}")
        out = self._out(a.value @ b.value, a, b)
        if out.requires_grad:
            def back():
                g = out.grad
                if g is None:
                    return
                if a.requires_grad:
                    a._acc(g @ b.value.T, fresh=True)
                if b.requires_grad:
                    b._acc(a.value.T @ g, fresh=True)
            self._backward.append(back)
        return out

    def add_row(self, x, b) -> Var:
        """x[B×O] + b[1×O] broadcast over rows."""
        x, b = self.var(x), self.var(b)
        if b.value.ndim != 2 or b.shape[0] != 1 or b.shape[1] != x.shape[1]:
            raise ConfigError(f"row bias shape {b.shape} does not fit {x.shape}")
        out = self._out(x.value + b.value, x, b)
        if out.requires_grad:
            def back():
                g = out.grad
                if g is None:
                    return
                x._acc(g)
                b._acc(g.sum(axis=0, keepdims=True), fresh=True)
            self._backward.append(back)
        return out

    def linear(self, x, w, b) -> Var:
        """y = x·w + b, with b broadcast across rows."""
        x, w, b = self.var(x), self.var(w), self.var(b)
        if x.value.ndim != 2 or x.shape[1] != w.shape[0]:
            raise ConfigError(f"linear: input {x.shape} does not match weight {w.shape}")
        if b.shape != (1, w.shape[1]):
            raise ConfigError(f"linear: bias {b.shape} does not match weight {w.shape}")
        y = x.value @ w.value
        y += b.value
        out = self._out(y, x, w, b)
        if out.requires_grad:
            def back():
                g = out.grad
                if g is None:
                    return
                if x.requires_grad:
                    x._acc(g @ w.value.T, fresh=True)
                w._acc(x.value.T @ g, fresh=True)
                b._acc(g.sum(axis=0, keepdims=True), fresh=True)
            self._backward.append(back)
        return out

    def add(self, a, b) -> Var:
        a, b = self.var(a), self.var(b)
        if a.shape != b.shape:
            raise ConfigError(f"add shape mismatch {a.shape} vs {b.shape}")
        out = self._out(a.value + b.value, a, b)
        if out.requires_grad:
            def back():
                if out.grad is None:
                    return
                a._acc(out.grad)
                b._acc(out.grad)
            self._backward.append(back)
        return out

    def sub(self, a, b) -> Var:
        return self.add(a, self.scale(b, -1.0))

    def mul(self, a, b) -> Var:
        """Elementwise product of equal-shape operands."""
        a, b = self.var(a), self.var(b)
        if a.shape != b.shape:
            raise ConfigError(f"mul shape mismatch {a.shape} vs {b.shape}")
        out = self._out(a.value * b.value, a, b)
        if out.requires_grad:
            def back():
                g = out.grad
                if g is None:
                    return
                a._acc(g * b.value, fresh=True)
                b._acc(g * a.value, fresh=True)
            self._backward.append(back)
        return out

    def scale(self, a, c: float) -> Var:
        a = self.var(a)
        out = self._out(a.value * c, a)
        if out.requires_grad:
            def back():
                if out.grad is not None:
                    a._acc(out.grad * c, fresh=True)
            self._backward.append(back)
        return out

    def one_minus(self, a) -> Var:
        a = self.var(a)
        out = self._out(1.0 - a.value, a)
        if out.requires_grad:
            def back():
                if out.grad is not None:
                    a._acc(-out.grad, fresh=True)
            self._backward.append(back)
        return out

    def relu(self, x) -> Var:
        x = self.var(x)
        mask = x.value > 0
        out = self._out(np.where(mask, x.value, 0.0), x)
        if out.requires_grad:
            def back():
                if out.grad is not None:
                    x._acc(out.grad * mask, fresh=True)
            self._backward.append(back)
        return out

    def sigmoid(self, x) -> Var:
        x = self.var(x)
        # split by sign to avoid exp overflow
        v = x.value
        s = np.empty_like(v)
        pos = v >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
        e = np.exp(v[~pos])
        s[~pos] = e / (1.0 + e)
        out = self._out(s, x)
        if out.requires_grad:
            def back():
                if out.grad is not None:
                    x._acc(out.grad * s * (1.0 - s), fresh=True)
            self._backward.append(back)
        return out

    def tanh(self, x) -> Var:
        x = self.var(x)
        t = np.tanh(x.value)
        out = self._out(t, x)
        if out.requires_grad:
            def back():
                if out.grad is not None:
                    x._acc(out.grad * (1.0 - t * t), fresh=True)
            self._backward.append(back)
        return out

    def concat(self, parts: Sequence) -> Var:
        """Column-wise concatenation of matrices with equal row counts."""
        parts = [self.var(p) for p in parts]
        rows = {p.shape[0] for p in parts}
        if len(rows) != 1:
            raise ConfigError(f"concat row mismatch: {[p.shape for p in parts]}")
        out = self._out(np.concatenate([p.value for p in parts], axis=1), *parts)
        if out.requires_grad:
            bounds = np.cumsum([0] + [p.shape[1] for p in parts])
            def back():
                g = out.grad
                if g is None:
                    return
                for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
                    p._acc(g[:, lo:hi])
            self._backward.append(back)
        return out

    def gather(self, table, idx) -> Var:
        """Row lookup ``table[idx]``; backward scatter-adds into the table."""
        table = self.var(table)
        idx = np.asarray(idx, dtype=np.intp)
        out = self._out(table.value[idx], table)
        if out.requires_grad:
            def back():
                g = out.grad
                if g is None:
                    return
                n_rows = table.value.shape[0]
                # column-wise bincount: much faster than np.add.at, same fixed order
                acc = np.empty_like(table.value)
                for c in range(acc.shape[1]):
                    acc[:, c] = np.bincount(idx, weights=g[:, c], minlength=n_rows)
                table._acc(acc, fresh=True)
            self._backward.append(back)
        return out

    def repeat_rows(self, x, n: int) -> Var:
        """Tile a 1×D row into n×D."""
        x = self.var(x)
        if x.shape[0] != 1:
            raise ConfigError(f"repeat_rows expects a single row, got {x.shape}")
        out = self._out(np.repeat(x.value, n, axis=0), x)
        if out.requires_grad:
            def back():
                if out.grad is not None:
                    x._acc(out.grad.sum(axis=0, keepdims=True), fresh=True)
            self._backward.append(back)
        return out

    def mean_rows(self, x) -> Var:
        x = self.var(x)
        n = x.shape[0]
        if n == 0:
            raise ConfigError("mean over zero rows")
        out = self._out(x.value.mean(axis=0, keepdims=True), x)
        if out.requires_grad:
            def back():
                if out.grad is not None:
                    x._acc(np.repeat(out.grad / n, n, axis=0), fresh=True)
            self._backward.append(back)
        return out

    def mae(self, pred, target) -> Var:
        """Mean absolute error as a 1×1 Var; target is treated as constant."""
        pred = self.var(pred)
        target = np.asarray(target.value if isinstance(target, Var) else target, dtype=DTYPE)
        if pred.shape != target.shape:
            raise ConfigError(f"mae shape mismatch {pred.shape} vs {target.shape}")
        if pred.value.size == 0:
            raise ConfigError("mae over an empty set")
        diff = pred.value - target
        out = self._out(np.array([[np.abs(diff).mean()]]), pred)
        if out.requires_grad:
            n = diff.size
            def back():
                if out.grad is not None:
                    pred._acc(np.sign(diff) * (out.grad[0, 0] / n), fresh=True)
            self._backward.append(back)
        return out

    def sum_squares(self, x) -> Var:
        x = self.var(x)
        out = self._out(np.array([[np.sum(x.value * x.value)]]), x)
        if out.requires_grad:
            def back():
                if out.grad is not None:
                    x._acc(2.0 * x.value * out.grad[0, 0], fresh=True)
            self._backward.append(back)
        return out

    # -- backward ------------------------------------------------------------

    def backward(self, loss: Var) -> None:
        """Seed d(loss)/d(loss)=1, replay the tape, and add leaf grads into Params."""
        if loss.value.size != 1:
            raise ConfigError("backward needs a scalar loss")
        loss.grad = np.ones_like(loss.value)
        for back in reversed(self._backward):
            back()
        for v in self._param_vars.values():
            if v.grad is not None:
                v.param.grad += v.grad


# -- optimizer -----------------------------------------------------------------


def adamw_step(
    p: Param,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    weight_decay: float = 0.0,
    eps: float = 1e-8,
) -> None:
    """One AdamW update with bias correction; decay is decoupled from the moments."""
    g = p.grad
    if not np.all(np.isfinite(g)):
        bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
        raise DivergenceError(f"non-finite gradient in {p!r}: {bad} bad entries")
    b1, b2 = betas
    p.step_count += 1
    p.adam_m *= b1
    p.adam_m += (1.0 - b1) * g
    p.adam_v *= b2
    p.adam_v += (1.0 - b2) * g * g
    if weight_decay and p.decay:
        p.value -= lr * weight_decay * p.value
    m_hat = p.adam_m / (1.0 - b1**p.step_count)
    v_hat = p.adam_v / (1.0 - b2**p.step_count)
    p.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
    p.zero_grad()


# -- gradient checking -----------------------------------------------------------


def finite_diff_check(
    loss_fn: Callable[[Tape], Var],
    params: Iterable[Param],
    eps: float = 1e-5,
    n_coords: int = 20,
    seed: int = 0,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``loss_fn`` builds a scalar loss on the tape it is handed and must be a
    deterministic function of the parameter values. Coordinates are sampled
    uniformly over all entries of all params.
    """
    params = list(params)
    total = sum(p.value.size for p in params)
    if total == 0:
        return 0.0
    for p in params:
        p.zero_grad()
    tape = Tape()
    tape.backward(loss_fn(tape))
    analytic = [p.grad.copy() for p in params]
    for p in params:
        p.zero_grad()

    rng = np.random.default_rng(seed)
    flat = rng.choice(total, size=min(n_coords, total), replace=False)
    offsets = np.cumsum([0] + [p.value.size for p in params])
    worst = 0.0
    for k in np.sort(flat):
        pi = int(np.searchsorted(offsets, k, side="right") - 1)
        p = params[pi]
        idx = np.unravel_index(k - offsets[pi], p.value.shape)
        orig = p.value[idx]
        p.value[idx] = orig + eps
        up = float(loss_fn(Tape()).value.ravel()[0])
        p.value[idx] = orig - eps
        down = float(loss_fn(Tape()).value.ravel()[0])
        p.value[idx] = orig
        numeric = (up - down) / (2.0 * eps)
        a = analytic[pi][idx]
        worst = max(worst, abs(a - numeric) / (abs(a) + 1e-8))
    return worst
