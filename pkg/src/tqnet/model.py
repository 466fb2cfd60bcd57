"""Forecasting model: periodically indexed learnable queries feeding
multi-head attention over channels, followed by a residual MLP trunk.

Data layout convention: one sample is a (channels x lookback) window ``x``
whose absolute start position ``t`` is known.  Each channel owns a learnable
query vector of length ``period`` (one slot per position of the assumed
cycle).  For a window starting at ``t``, slot ``(t + j) mod period`` is read
for offset ``j``, so two windows whose starts differ by a whole number of
periods read byte-identical query segments — the query bank is a phase-locked
description of each channel, not of any single window.

Attention mixes *channels* (rows): queries come from the bank segment, keys
and values from the observed window, so a channel attends to the raw channels
most useful for predicting it.  ``VariantSpec`` rewires the block for
component studies (raw self-attention, bank-only attention, additive channel
identifiers, plain MLP).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .errors import ConfigError, ShapeError
from .tensor import (
    DiffTensor,
    add,
    check_finite,
    concat_cols,
    dropout,
    gather_cols,
    gelu,
    linear,
    matmul,
    row_affine,
    scale,
    softmax_rows,
)


@dataclass(frozen=True)
class ModelConfig:
    channels: int
    lookback: int
    horizon: int
    period: int
    hidden: int = 512
    heads: int = 4
    attn_dropout: float = 0.5
    out_dropout: float = 0.0
    use_instance_norm: bool = True
    norm_eps: float = 1e-5
    scale_by_head_dim: bool = False
    seed: int = 2024
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("channels", "lookback", "horizon", "period", "hidden", "heads"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.lookback % self.heads != 0:
            raise ConfigError(
                f"lookback ({self.lookback}) must be divisible by heads ({self.heads})"
            )
        for name in ("attn_dropout", "out_dropout"):
            v = getattr(self, name)
            if not 0.0 <= float(v) < 1.0:
                raise ConfigError(f"{name} must be in [0, 1), got {v!r}")
        if self.norm_eps <= 0:
            raise ConfigError(f"norm_eps must be positive, got {self.norm_eps!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")

    @property
    def head_dim(self):
        return self.lookback // self.heads

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


@dataclass(frozen=True)
class VariantSpec:
    """Wiring of the attention block for component studies.

    ``query_source``/``key_source`` select what feeds Q and K ("bank" or
    "window"); values always come from the observed window.  With
    ``attention=False`` and ``bank=True`` the bank segment is added to the
    window elementwise (an additive channel identifier).  With both off the
    model is the bare MLP trunk.
    """

    query_source: str = "bank"
    key_source: str = "window"
    attention: bool = True
    bank: bool = True

    NAMED = (
        "default",
        "self_attention",
        "global_only",
        "channel_identifier",
        "pure_mlp",
    )

    def __post_init__(self):
        for field_name in ("query_source", "key_source"):
            v = getattr(self, field_name)
            if v not in ("bank", "window"):
                raise ConfigError(
                    f"{field_name} must be 'bank' or 'window', got {v!r}"
                )
        if self.attention and not self.bank and "bank" in (
            self.query_source,
            self.key_source,
        ):
            raise ConfigError("attention reads the bank but bank=False")

    @classmethod
    def named(cls, name):
        table = {
            "default": cls(),
            "self_attention": cls(query_source="window", key_source="window"),
            "global_only": cls(query_source="bank", key_source="bank"),
            "channel_identifier": cls(attention=False, bank=True),
            "pure_mlp": cls(
                query_source="window", key_source="window", attention=False, bank=False
            ),
        }
        if name not in table:
            raise ConfigError(
                f"unknown variant {name!r}; known: {', '.join(sorted(table))}"
            )
        return table[name]

    @property
    def name(self):
        for candidate in self.NAMED:
            if VariantSpec.named(candidate) == self:
                return candidate
        return (
            f"custom(q={self.query_source},k={self.key_source},"
            f"attn={self.attention},bank={self.bank})"
        )


class TemporalQueryBank:
    """Per-channel learnable vector over one period, read cyclically."""

    def __init__(self, channels, period, dtype=np.float32):
        self.period = int(period)
        self.theta = DiffTensor(
            np.zeros((channels, period), dtype=dtype),
            requires_grad=True,
            name="bank.theta",
        )

    def segment_indices(self, t, length):
        """Column indices for a window of ``length`` starting at ``t``."""
        if t < 0:
            raise ValueError(f"window start must be non-negative, got {t}")
        return (t + np.arange(length, dtype=np.int64)) % self.period

    def extract(self, tape, t, length):
        return gather_cols(tape, self.theta, self.segment_indices(t, length))


def instance_norm(x, eps):
    """Per-row standardization with population variance; returns (xn, mu, var)."""
    return kernels.row_norm_stats(x, eps)


def instance_denorm(y, mu, var, eps):
    return y * np.sqrt(var + eps)[:, None] + mu[:, None]


def _uniform_init(rng, rows, cols, dtype):
    bound = 1.0 / math.sqrt(rows)
    return rng.uniform(-bound, bound, size=(rows, cols)).astype(dtype)


class TQNet:
    """The forecaster.  See the module docstring for the block layout."""

    def __init__(self, config, variant=None, init_rng=None):
        self.config = config
        self.variant = variant if variant is not None else VariantSpec()
        rng = init_rng if init_rng is not None else np.random.default_rng(config.seed)
        dt = config.np_dtype
        C, L, H, d = config.channels, config.lookback, config.horizon, config.hidden
        hd = config.head_dim

        self.bank = None
        if self.variant.bank:
            self.bank = TemporalQueryBank(C, config.period, dtype=dt)

        self.wq = self.wk = self.wv = self.wo = None
        if self.variant.attention:
            self.wq, self.wk, self.wv = [], [], []
            for h in range(config.heads):
                self.wq.append(self._param(f"attn.h{h}.wq", _uniform_init(rng, L, hd, dt)))
                self.wk.append(self._param(f"attn.h{h}.wk", _uniform_init(rng, L, hd, dt)))
                self.wv.append(self._param(f"attn.h{h}.wv", _uniform_init(rng, L, hd, dt)))
            self.wo = self._param("attn.wo", _uniform_init(rng, L, L, dt))

        self.proj_in_w = self._param("proj_in.w", _uniform_init(rng, L, d, dt))
        self.proj_in_b = self._param("proj_in.b", np.zeros((1, d), dtype=dt))
        self.mlp_w1 = self._param("mlp.w1", _uniform_init(rng, d, d, dt))
        self.mlp_b1 = self._param("mlp.b1", np.zeros((1, d), dtype=dt))
        self.mlp_w2 = self._param("mlp.w2", _uniform_init(rng, d, d, dt))
        self.mlp_b2 = self._param("mlp.b2", np.zeros((1, d), dtype=dt))
        self.proj_out_w = self._param("proj_out.w", _uniform_init(rng, d, H, dt))
        self.proj_out_b = self._param("proj_out.b", np.zeros((1, H), dtype=dt))

    @staticmethod
    def _param(name, values):
        return DiffTensor(values, requires_grad=True, name=name)

    # -- parameter bookkeeping ------------------------------------------------

    def named_parameters(self):
        out = []
        if self.bank is not None:
            out.append((self.bank.theta.name, self.bank.theta))
        if self.variant.attention:
            for h in range(self.config.heads):
                for p in (self.wq[h], self.wk[h], self.wv[h]):
                    out.append((p.name, p))
            out.append((self.wo.name, self.wo))
        for p in (
            self.proj_in_w,
            self.proj_in_b,
            self.mlp_w1,
            self.mlp_b1,
            self.mlp_w2,
            self.mlp_b2,
            self.proj_out_w,
            self.proj_out_b,
        ):
            out.append((p.name, p))
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grads(self):
        for p in self.parameters():
            p.zero_grad()

    def snapshot(self):
        return {name: p.values.copy() for name, p in self.named_parameters()}

    def restore(self, state):
        for name, p in self.named_parameters():
            p.values[...] = state[name]

    def param_count(self):
        return sum(p.values.size for p in self.parameters())

    # -- forward --------------------------------------------------------------

    def forward(self, x, t, tape=None, mode="eval", rng=None):
        """Map one (channels x lookback) window to (channels x horizon).

        ``t`` is the window's absolute start index in its series; the bank is
        read at phase ``t mod period``.  ``mode`` is "train" or "eval"; eval
        additionally guards against non-finite intermediates.  ``rng`` drives
        dropout and must be given in train mode when any dropout is active.
        """
        cfg = self.config
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        x = np.asarray(x, dtype=cfg.np_dtype)
        if x.shape != (cfg.channels, cfg.lookback):
            raise ShapeError(
                f"expected window of shape ({cfg.channels}, {cfg.lookback}), "
                f"got {x.shape}"
            )
        check_finite(x, "input window")

        if cfg.use_instance_norm:
            xn, mu, var = instance_norm(x, cfg.norm_eps)
        else:
            xn = x
        xt = DiffTensor(xn, name="window")

        seg = None
        if self.bank is not None:
            seg = self.bank.extract(tape, t, cfg.lookback)

        if self.variant.attention:
            q_src = seg if self.variant.query_source == "bank" else xt
            k_src = seg if self.variant.key_source == "bank" else xt
            h = self._attention(tape, q_src, k_src, xt, mode, rng)
        elif self.bank is not None:
            h = add(tape, xt, seg)
        else:
            h = xt
        if mode == "eval":
            check_finite(h, "attention block")

        h1 = linear(tape, h, self.proj_in_w, self.proj_in_b)
        z = linear(tape, h1, self.mlp_w1, self.mlp_b1)
        z = gelu(tape, z)
        z = linear(tape, z, self.mlp_w2, self.mlp_b2)
        h2 = add(tape, z, h1)
        if mode == "eval":
            check_finite(h2, "mlp block")
        h2 = dropout(tape, h2, cfg.out_dropout, mode, rng)
        y = linear(tape, h2, self.proj_out_w, self.proj_out_b)

        if cfg.use_instance_norm:
            y = row_affine(tape, y, np.sqrt(var + cfg.norm_eps), mu)
        if mode == "eval":
            check_finite(y, "output projection")
        return y

    def _attention(self, tape, q_src, k_src, v_src, mode, rng):
        cfg = self.config
        denom = cfg.head_dim if cfg.scale_by_head_dim else cfg.lookback
        inv_scale = 1.0 / math.sqrt(denom)
        heads = []
        for h in range(cfg.heads):
            q = matmul(tape, q_src, self.wq[h])
            k = matmul(tape, k_src, self.wk[h])
            v = matmul(tape, v_src, self.wv[h])
            scores = scale(tape, matmul(tape, q, k, transpose_b=True), inv_scale)
            weights = softmax_rows(tape, scores)
            weights = dropout(tape, weights, cfg.attn_dropout, mode, rng)
            heads.append(matmul(tape, weights, v))
        mixed = matmul(tape, concat_cols(tape, heads), self.wo)
        return add(tape, mixed, v_src)

    def attention_weights(self, x, t):
        """Eval-mode per-head softmax weights (channels x channels each)."""
        cfg = self.config
        if not self.variant.attention:
            raise ConfigError("variant has no attention block")
        x = np.asarray(x, dtype=cfg.np_dtype)
        if cfg.use_instance_norm:
            x = instance_norm(x, cfg.norm_eps)[0]
        xt = DiffTensor(x)
        seg = self.bank.extract(None, t, cfg.lookback) if self.bank else None
        q_src = seg if self.variant.query_source == "bank" else xt
        k_src = seg if self.variant.key_source == "bank" else xt
        denom = cfg.head_dim if cfg.scale_by_head_dim else cfg.lookback
        inv_scale = 1.0 / math.sqrt(denom)
        out = []
        for h in range(cfg.heads):
            q = matmul(None, q_src, self.wq[h])
            k = matmul(None, k_src, self.wk[h])
            scores = scale(None, matmul(None, q, k, transpose_b=True), inv_scale)
            out.append(softmax_rows(None, scores).values)
        return out

    def predict(self, x, t):
        return self.forward(x, t, tape=None, mode="eval").values

    def with_config(self, **overrides):
        """Fresh model from this one's config with fields replaced."""
        return TQNet(replace(self.config, **overrides), variant=self.variant)
