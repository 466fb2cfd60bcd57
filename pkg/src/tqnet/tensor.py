"""Reverse-mode automatic differentiation on 2-D tensors.

A deliberately small engine: every value is a rank-2 float array wrapped in
:class:`DiffTensor`, every differentiable operation appends one backward
closure to a :class:`Tape`, and ``Tape.backward`` replays the closures in
reverse recording order.  Gradients accumulate additively, so a parameter
used in several places (or across several per-sample tapes) ends up with the
sum of all contributions — which is exactly what minibatch training needs.

Ops take the tape as their first argument; passing ``tape=None`` runs the
same math without recording anything (cheap inference path).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import NumericError, ShapeError, TapeError


class DiffTensor:
    """A 2-D array plus an optional, lazily allocated gradient buffer."""

    __slots__ = ("values", "grad", "requires_grad", "name")

    def __init__(self, values, requires_grad=False, name=None):
        values = np.asarray(values)
        if values.ndim != 2:
            raise ShapeError(f"DiffTensor must be 2-D, got shape {values.shape}")
        if values.dtype not in (np.float32, np.float64):
            values = values.astype(np.float64)
        self.values = values
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def rows(self):
        return self.values.shape[0]

    @property
    def cols(self):
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape

    @property
    def dtype(self):
        return self.values.dtype

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def item(self):
        if self.values.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.values.shape}")
        return float(self.values[0, 0])

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"DiffTensor(shape={self.values.shape}, dtype={self.values.dtype}{tag})"


class Tape:
    """Ordered log of backward closures; replayed last-recorded-first."""

    __slots__ = ("_nodes",)

    def __init__(self):
        self._nodes = []

    def __len__(self):
        return len(self._nodes)

    def record(self, fn):
        self._nodes.append(fn)

    def backward(self, out, seed=1.0):
        """Seed ``out.grad`` with ``seed`` and propagate to every input.

        ``seed`` scales the whole gradient; passing ``1/batch_size`` while
        looping per-sample tapes realizes a batch-mean loss without ever
        materializing the batch.
        """
        if not self._nodes:
            raise TapeError("backward on an empty tape; run a recorded forward first")
        if out.grad is None:
            out.grad = np.zeros_like(out.values)
        out.grad += np.asarray(seed, dtype=out.values.dtype)
        for fn in reversed(self._nodes):
            fn()


def _needs(*tensors):
    return any(t.requires_grad for t in tensors)


# ---------------------------------------------------------------------------
# primitive operations
# ---------------------------------------------------------------------------

def matmul(tape, a, b, transpose_b=False):
    bv = b.values.T if transpose_b else b.values
    if a.cols != bv.shape[0]:
        raise ShapeError(
            f"matmul: inner dims differ, {a.shape} @ "
            f"{b.shape}{'^T' if transpose_b else ''}"
        )
    out = DiffTensor(a.values @ bv, requires_grad=_needs(a, b))
    if tape is not None and out.requires_grad:
        av = a.values

        def backward():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                a.accumulate(g @ bv.T)
            if b.requires_grad:
                gb = av.T @ g
                b.accumulate(gb.T if transpose_b else gb)

        tape.record(backward)
    return out


def linear(tape, x, w, bias=None):
    """x @ w + bias, bias broadcast across rows (shape 1 x cols)."""
    if x.cols != w.rows:
        raise ShapeError(f"linear: input {x.shape} does not match weight {w.shape}")
    vals = x.values @ w.values
    if bias is not None:
        if bias.shape != (1, w.cols):
            raise ShapeError(
                f"linear: bias must be (1, {w.cols}), got {bias.shape}"
            )
        vals = vals + bias.values
    out = DiffTensor(
        vals, requires_grad=_needs(x, w) or (bias is not None and bias.requires_grad)
    )
    if tape is not None and out.requires_grad:
        xv, wv = x.values, w.values

        def backward():
            g = out.grad
            if g is None:
                return
            if x.requires_grad:
                x.accumulate(g @ wv.T)
            if w.requires_grad:
                w.accumulate(xv.T @ g)
            if bias is not None and bias.requires_grad:
                bias.accumulate(g.sum(axis=0, keepdims=True))

        tape.record(backward)
    return out


def add(tape, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes differ, {a.shape} vs {b.shape}")
    out = DiffTensor(a.values + b.values, requires_grad=_needs(a, b))
    if tape is not None and out.requires_grad:

        def backward():
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                a.accumulate(g)
            if b.requires_grad:
                b.accumulate(g)

        tape.record(backward)
    return out


def scale(tape, x, c):
    c = float(c)
    out = DiffTensor(x.values * c, requires_grad=x.requires_grad)
    if tape is not None and out.requires_grad:

        def backward():
            if out.grad is not None:
                x.accumulate(out.grad * c)

        tape.record(backward)
    return out


def softmax_rows(tape, x):
    """Row-wise softmax, max-shifted for stability; rows sum to one."""
    y = kernels.softmax_rows(x.values)
    out = DiffTensor(y, requires_grad=x.requires_grad)
    if tape is not None and out.requires_grad:

        def backward():
            if out.grad is not None:
                x.accumulate(kernels.softmax_rows_grad(y, out.grad))

        tape.record(backward)
    return out


def gelu(tape, x):
    """Exact (erf-based) gaussian error linear unit."""
    out = DiffTensor(kernels.gelu(x.values), requires_grad=x.requires_grad)
    if tape is not None and out.requires_grad:
        xv = x.values.copy()

        def backward():
            if out.grad is not None:
                x.accumulate(out.grad * kernels.gelu_grad(xv))

        tape.record(backward)
    return out


def dropout(tape, x, p, mode, rng=None):
    """Inverted dropout: train-mode keeps with prob 1-p and rescales by 1/(1-p).

    Eval mode (or p == 0) is the identity and consumes no randomness.
    """
    p = float(p)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or p == 0.0:
        return x
    if rng is None:
        raise ValueError("train-mode dropout with p > 0 needs an rng")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / np.asarray(
        1.0 - p, dtype=x.dtype
    )
    out = DiffTensor(x.values * keep, requires_grad=x.requires_grad)
    if tape is not None and out.requires_grad:

        def backward():
            if out.grad is not None:
                x.accumulate(out.grad * keep)

        tape.record(backward)
    return out


def concat_cols(tape, parts):
    if not parts:
        raise ShapeError("concat_cols needs at least one part")
    rows = parts[0].rows
    for p in parts:
        if p.rows != rows:
            raise ShapeError(
                f"concat_cols: row counts differ, {rows} vs {p.rows}"
            )
    out = DiffTensor(
        np.concatenate([p.values for p in parts], axis=1),
        requires_grad=any(p.requires_grad for p in parts),
    )
    if tape is not None and out.requires_grad:
        widths = [p.cols for p in parts]

        def backward():
            g = out.grad
            if g is None:
                return
            off = 0
            for p, w in zip(parts, widths):
                if p.requires_grad:
                    p.accumulate(g[:, off : off + w])
                off += w

        tape.record(backward)
    return out


def gather_cols(tape, x, idx):
    """Select columns ``idx`` (repeats allowed); backward scatter-adds."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"gather_cols: index must be 1-D, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.cols):
        raise ShapeError(
            f"gather_cols: index out of range for {x.cols} columns"
        )
    out = DiffTensor(x.values[:, idx], requires_grad=x.requires_grad)
    if tape is not None and out.requires_grad:

        def backward():
            g = out.grad
            if g is None:
                return
            if x.grad is None:
                x.grad = np.zeros_like(x.values)
            kernels.scatter_add_cols(x.grad, idx, np.ascontiguousarray(g))

        tape.record(backward)
    return out


def take_rows(tape, x, rows):
    """Select a subset of rows; backward scatters into the originals."""
    rows = list(rows)
    if any(r < 0 or r >= x.rows for r in rows):
        raise ShapeError(f"take_rows: row index out of range for {x.rows} rows")
    out = DiffTensor(x.values[rows, :], requires_grad=x.requires_grad)
    if tape is not None and out.requires_grad:

        def backward():
            g = out.grad
            if g is None:
                return
            if x.grad is None:
                x.grad = np.zeros_like(x.values)
            for i, r in enumerate(rows):
                x.grad[r, :] += g[i, :]

        tape.record(backward)
    return out


def row_affine(tape, x, scale_vec, shift_vec):
    """Per-row ``x * scale + shift`` with constant (non-learned) vectors."""
    scale_vec = np.asarray(scale_vec, dtype=x.dtype).reshape(-1)
    shift_vec = np.asarray(shift_vec, dtype=x.dtype).reshape(-1)
    if scale_vec.size != x.rows or shift_vec.size != x.rows:
        raise ShapeError(
            f"row_affine: need {x.rows} per-row constants, got "
            f"{scale_vec.size} scales / {shift_vec.size} shifts"
        )
    out = DiffTensor(
        x.values * scale_vec[:, None] + shift_vec[:, None],
        requires_grad=x.requires_grad,
    )
    if tape is not None and out.requires_grad:

        def backward():
            if out.grad is not None:
                x.accumulate(out.grad * scale_vec[:, None])

        tape.record(backward)
    return out


def mse_loss(tape, pred, target):
    """Mean squared error against a constant target, as a 1x1 tensor."""
    target = np.asarray(target, dtype=pred.dtype)
    if target.shape != pred.shape:
        raise ShapeError(
            f"mse_loss: target {target.shape} does not match prediction {pred.shape}"
        )
    diff = pred.values - target
    out = DiffTensor(
        np.array([[np.mean(diff * diff)]], dtype=pred.dtype),
        requires_grad=pred.requires_grad,
    )
    if tape is not None and out.requires_grad:
        n = diff.size

        def backward():
            g = out.grad
            if g is None:
                return
            pred.accumulate((2.0 * g[0, 0] / n) * diff)

        tape.record(backward)
    return out


def check_finite(x, stage):
    """Raise NumericError naming ``stage`` if ``x`` holds NaN or inf."""
    vals = x.values if isinstance(x, DiffTensor) else x
    if not np.isfinite(vals).all():
        raise NumericError(f"non-finite value produced at stage {stage!r}")
    return x


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckResult:
    """Outcome of a finite-difference check over named parameter groups."""

    eps: float
    tol: float
    per_param: dict = field(default_factory=dict)
    frozen: tuple = ()

    @property
    def max_rel_err(self):
        return max(self.per_param.values(), default=0.0)

    @property
    def passed(self):
        return self.max_rel_err < self.tol

    def summary(self):
        lines = [
            f"{name}: max rel err {err:.3e}"
            for name, err in sorted(self.per_param.items(), key=lambda kv: -kv[1])
        ]
        lines.append(
            f"overall max rel err {self.max_rel_err:.3e} "
            f"({'PASS' if self.passed else 'FAIL'} at tol {self.tol:g})"
        )
        return "\n".join(lines)


def gradient_check(closure, params, eps=1e-5, tol=1e-4, rel_floor=1e-6):
    """Compare tape gradients against central finite differences.

    ``closure`` must rebuild the forward pass from the parameters' *current*
    values and return ``(loss, tape)`` with a 1x1 loss.  It has to be
    deterministic; the check runs it twice up front and refuses to proceed if
    the two losses differ bitwise.  Parameters must be float64 — float32
    differencing noise would drown the signal.

    Relative error per element is |analytic - numeric| / max(|analytic|,
    |numeric|, rel_floor).  Parameters with ``requires_grad=False`` are
    reported as frozen (gradient identically zero) and not differenced.
    """
    named = []
    for i, p in enumerate(params):
        if p.dtype != np.float64:
            raise ValueError(
                f"gradient_check needs float64 parameters, {p.name or i} is {p.dtype}"
            )
        named.append((p.name or f"param{i}", p))

    l1, _ = closure()
    l2, _ = closure()
    if l1.values[0, 0] != l2.values[0, 0]:
        raise RuntimeError(
            "closure is not deterministic: two forward passes disagree "
            f"({l1.values[0, 0]!r} vs {l2.values[0, 0]!r}); disable dropout "
            "or fix the rng before gradient checking"
        )

    for _, p in named:
        p.zero_grad()
    loss, tape = closure()
    tape.backward(loss)

    result = GradCheckResult(eps=eps, tol=tol)
    frozen = []
    for name, p in named:
        if not p.requires_grad:
            if p.grad is not None and np.any(p.grad):
                raise RuntimeError(f"frozen parameter {name} received gradient")
            frozen.append(name)
            continue
        analytic = np.zeros_like(p.values) if p.grad is None else p.grad.copy()
        worst = 0.0
        flat = p.values.reshape(-1)
        aflat = analytic.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            fp = closure()[0].values[0, 0]
            flat[j] = orig - eps
            fm = closure()[0].values[0, 0]
            flat[j] = orig
            numeric = (fp - fm) / (2.0 * eps)
            denom = max(abs(aflat[j]), abs(numeric), rel_floor)
            worst = max(worst, abs(aflat[j] - numeric) / denom)
        result.per_param[name] = worst
    result.frozen = tuple(frozen)
    for _, p in named:
        p.zero_grad()
    return result
