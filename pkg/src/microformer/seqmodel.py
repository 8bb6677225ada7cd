"""Decoder-only transformer surrogate mapping strain histories to stress histories.

Both input streams are embedded, refined by gated residual networks that
see the microstructure as static context, and combined in a causal decoder
stack: the (right-shifted) stress stream is the query side, the strain
stream is the attended memory. Every attention is causally masked so the
prediction at step t only depends on steps <= t.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Optional

import numpy as np

from .convnet import ConvNet, ConvNetConfig
from .ndcore import LayerNorm, Linear, Module, Tensor, ops

MAX_LEN = 100


@dataclass(frozen=True)
class SurrogateConfig:
    d_model: int = 512
    heads: int = 8
    layers: int = 6
    d_ff: int = 2048
    grn_hidden: int = 2048
    grn_stack: int = 2
    dropout: float = 0.1
    strain_dim: int = 3
    stress_dim: int = 4
    micro_dim: int = 3              # 0 builds the homogeneous (context-free) variant
    micro_source: str = "pca"       # "pca" (descriptor vector) or "cnn" (image encoder)
    cnn: Optional[ConvNetConfig] = None
    max_len: int = MAX_LEN

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ValueError("d_model must be divisible by heads")
        if self.d_model % 2:
            raise ValueError("d_model must be even for the positional encoding")
        if self.micro_source not in ("pca", "cnn"):
            raise ValueError("micro_source must be 'pca' or 'cnn'")

    @property
    def homogeneous(self) -> bool:
        return self.micro_dim == 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cnn"] = self.cnn.to_dict() if self.cnn is not None else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SurrogateConfig":
        d = dict(d)
        if d.get("cnn") is not None:
            d["cnn"] = ConvNetConfig.from_dict(d["cnn"])
        return cls(**d)


PRESETS = {
    "full": SurrogateConfig(),
    "desk": SurrogateConfig(d_model=128, heads=4, layers=3, d_ff=512, grn_hidden=512),
    "tiny": SurrogateConfig(d_model=32, heads=2, layers=2, d_ff=64, grn_hidden=64),
}


def preset(name: str, **overrides) -> SurrogateConfig:
    try:
        return replace(PRESETS[name], **overrides)
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


# -- building blocks -----------------------------------------------------------

def causal_mask(n_q: int, n_k: Optional[int] = None) -> np.ndarray:
    """Boolean ``[n_q, n_k]`` mask, True where query i may see key j <= i."""
    n_k = n_q if n_k is None else n_k
    return np.tril(np.ones((n_q, n_k), dtype=bool))


def positional_encoding(length: int, d_model: int) -> np.ndarray:
    if length < 1:
        raise ValueError("length must be >= 1")
    pos = np.arange(length)[:, None]
    freq = 10000.0 ** (np.arange(0, d_model, 2) / d_model)
    pe = np.empty((length, d_model))
    pe[:, 0::2] = np.sin(pos / freq)
    pe[:, 1::2] = np.cos(pos / freq)
    return pe


def shift_right(stress) -> np.ndarray:
    """Insert a zero row at the front of the time axis (-2) and drop the last row."""
    s = np.asarray(stress, dtype=np.float64)
    if s.ndim < 2 or s.shape[-2] == 0:
        raise ValueError("shift_right needs a non-empty [..., T, C] sequence")
    out = np.zeros_like(s)
    out[..., 1:, :] = s[..., :-1, :]
    return out


class GLU(Module):
    """Width-preserving gated linear unit ``sigmoid(W1 x + b1) * (W2 x + b2)``."""

    def __init__(self, width: int, rng: np.random.Generator):
        self.gate = Linear(width, width, rng)
        self.value = Linear(width, width, rng)

    def forward(self, x):
        return ops.sigmoid(self.gate(x)) * self.value(x)


def glu(x, W1, b1, W2, b2) -> Tensor:
    return ops.sigmoid(ops.linear(x, W1, b1)) * ops.linear(x, W2, b2)


class GRN(Module):
    def __init__(self, width: int, hidden: int, context_width: int, dropout: float,
                 rng: np.random.Generator):
        self.fc_in = Linear(width, hidden, rng)
        self.fc_context = Linear(context_width, hidden, rng, bias=False) if context_width else None
        self.fc_out = Linear(hidden, width, rng)
        self.glu = GLU(width, rng)
        self.norm = LayerNorm(width)
        self.dropout = dropout

    def forward(self, x, context=None, rng: Optional[np.random.Generator] = None):
        a = self.fc_in(x)
        if context is not None:
            if self.fc_context is None:
                raise ValueError("this GRN was built without a context input")
            c = self.fc_context(context)
            if c.ndim == 2 and a.ndim == 3:        # static context, broadcast over time
                c = ops.reshape(c, (c.shape[0], 1, c.shape[1]))
            a = a + c
        g = ops.dropout(self.fc_out(ops.elu(a)), self.dropout, rng, self.training)
        return self.norm(x + self.glu(g))


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, t, d = x.shape
    return ops.transpose(ops.reshape(x, (b, t, heads, d // heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, h, t, dk = x.shape
    return ops.reshape(ops.transpose(x, (0, 2, 1, 3)), (b, t, h * dk))


class MultiHeadAttention(Module):
    """Per-head projections stored side by side in one ``d x d`` matrix each."""

    def __init__(self, d_model: int, heads: int, rng: np.random.Generator):
        self.heads = heads
        self.q = Linear(d_model, d_model, rng)
        self.k = Linear(d_model, d_model, rng)
        self.v = Linear(d_model, d_model, rng)
        self.o = Linear(d_model, d_model, rng)

    def keys_values(self, source):
        return _split_heads(self.k(source), self.heads), _split_heads(self.v(source), self.heads)

    def attend(self, query, keys, values, mask=None):
        q = _split_heads(self.q(query), self.heads)
        return self.o(_merge_heads(ops.attention(q, keys, values, mask)))

    def forward(self, query, source, mask=None):
        k, v = self.keys_values(source)
        return self.attend(query, k, v, mask)


def multi_head(query, source, mask, Wq, Wk, Wv, Wo, heads: int,
               bq=None, bk=None, bv=None, bo=None) -> Tensor:
    """Functional form: ``Concat(head_1..head_h) Wo`` with ``head_i`` using column block i."""
    q3 = ops.reshape(ops.as_tensor(query), (1, *np.shape(query)[-2:])) if np.ndim(query) == 2 else query
    s3 = ops.reshape(ops.as_tensor(source), (1, *np.shape(source)[-2:])) if np.ndim(source) == 2 else source
    for w, name in ((Wq, "Wq"), (Wk, "Wk"), (Wv, "Wv")):
        if np.shape(w)[0] != q3.shape[-1]:
            raise ValueError(f"{name} rows must match model width")
    q = _split_heads(ops.linear(q3, Wq, bq), heads)
    k = _split_heads(ops.linear(s3, Wk, bk), heads)
    v = _split_heads(ops.linear(s3, Wv, bv), heads)
    out = ops.linear(_merge_heads(ops.attention(q, k, v, mask)), Wo, bo)
    return ops.reshape(out, out.shape[1:]) if np.ndim(query) == 2 else out


class FeedForward(Module):
    def __init__(self, d_model: int, d_ff: int, rng: np.random.Generator):
        self.fc1 = Linear(d_model, d_ff, rng)
        self.fc2 = Linear(d_ff, d_model, rng)

    def forward(self, x):
        return self.fc2(ops.relu(self.fc1(x)))


class DecoderLayer(Module):
    """Post-norm layer: causal self-attention, causal memory attention, feed-forward."""

    def __init__(self, cfg: SurrogateConfig, rng: np.random.Generator):
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.heads, rng)
        self.norm1 = LayerNorm(cfg.d_model)
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.heads, rng)
        self.norm2 = LayerNorm(cfg.d_model)
        self.ff = FeedForward(cfg.d_model, cfg.d_ff, rng)
        self.norm3 = LayerNorm(cfg.d_model)
        self.dropout = cfg.dropout

    def _drop(self, x, rng):
        return ops.dropout(x, self.dropout, rng, self.training)

    def forward(self, x, memory, rng=None):
        mask = causal_mask(x.shape[1], memory.shape[1])
        x = self.norm1(x + self._drop(self.self_attn(x, x, mask), rng))
        x = self.norm2(x + self._drop(self.cross_attn(x, memory, mask), rng))
        return self.norm3(x + self._drop(self.ff(x), rng))

    def step(self, x_t, cache: dict, memory_kv: tuple, t: int):
        """Advance one position in eval mode. ``x_t`` is ``[B, 1, d]``."""
        k, v = self.self_attn.keys_values(x_t)
        cache["k"] = k.data if "k" not in cache else np.concatenate([cache["k"], k.data], axis=2)
        cache["v"] = v.data if "v" not in cache else np.concatenate([cache["v"], v.data], axis=2)
        x_t = self.norm1(x_t + self.self_attn.attend(x_t, Tensor(cache["k"]), Tensor(cache["v"])))
        mk, mv = memory_kv
        x_t = self.norm2(x_t + self.cross_attn.attend(x_t, Tensor(mk[:, :, :t + 1]),
                                                     Tensor(mv[:, :, :t + 1])))
        return self.norm3(x_t + self.ff(x_t))


class InputPath(Module):
    """Linear embedding, stacked GRNs with micro context, micro addition, norm."""

    def __init__(self, n_in: int, cfg: SurrogateConfig, rng: np.random.Generator):
        ctx = 0 if cfg.homogeneous else cfg.d_model
        self.embed = Linear(n_in, cfg.d_model, rng)
        self.grns = [GRN(cfg.d_model, cfg.grn_hidden, ctx, cfg.dropout, rng)
                     for _ in range(cfg.grn_stack)]
        self.norm = LayerNorm(cfg.d_model)

    def forward(self, x, micro=None, rng=None):
        h = self.embed(x)
        for grn in self.grns:
            h = grn(h, micro, rng)
        if micro is not None:
            h = h + ops.reshape(micro, (micro.shape[0], 1, micro.shape[1]))
        return self.norm(h)


class Surrogate(Module):
    def __init__(self, config: SurrogateConfig = SurrogateConfig(),
                 rng: Optional[np.random.Generator] = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        cfg = self.config = config
        self.cnn = None
        if not cfg.homogeneous and cfg.micro_source == "cnn":
            cnn_cfg = cfg.cnn or ConvNetConfig(out_features=cfg.micro_dim)
            if cnn_cfg.out_features != cfg.micro_dim:
                raise ValueError("CNN output width must equal micro_dim")
            self.cnn = ConvNet(cnn_cfg, rng)
        self.micro_embed = None if cfg.homogeneous else Linear(cfg.micro_dim, cfg.d_model, rng)
        self.strain_path = InputPath(cfg.strain_dim, cfg, rng)
        self.stress_path = InputPath(cfg.stress_dim, cfg, rng)
        self.decoder = [DecoderLayer(cfg, rng) for _ in range(cfg.layers)]
        ctx = 0 if cfg.homogeneous else cfg.d_model
        self.out_grns = [GRN(cfg.d_model, cfg.grn_hidden, ctx, cfg.dropout, rng)
                         for _ in range(cfg.grn_stack)]
        self.head = Linear(cfg.d_model, cfg.stress_dim, rng)

    # -- input handling --------------------------------------------------------
    def _check(self, strain, prev_stress, micro):
        cfg = self.config
        t = strain.shape[1]
        if not 1 <= t <= cfg.max_len:
            raise ValueError(f"sequence length {t} outside [1, {cfg.max_len}]")
        if strain.shape[2] != cfg.strain_dim or prev_stress.shape[2] != cfg.stress_dim:
            raise ValueError("strain/stress channel count mismatch")
        if prev_stress.shape[:2] != strain.shape[:2]:
            raise ValueError("strain and shifted stress must have the same [B, T]")
        if cfg.homogeneous:
            if micro is not None:
                raise ValueError("homogeneous model does not take a microstructure")
        elif micro is None:
            raise ValueError("model needs a microstructure input")

    def micro_context(self, micro, rng=None) -> Optional[Tensor]:
        """``[B, micro_dim]`` descriptors (or ``[B, S, S]`` images) to ``[B, d_model]``."""
        if self.micro_embed is None:
            return None
        if self.cnn is not None:
            self.cnn.train(self.training)
            desc = self.cnn(micro, rng=rng)
        else:
            desc = micro if isinstance(micro, Tensor) else Tensor(np.asarray(micro, dtype=np.float64))
            if desc.shape[-1] != self.config.micro_dim:
                raise ValueError(f"descriptor length {desc.shape[-1]} != {self.config.micro_dim}")
        return self.micro_embed(desc)

    @staticmethod
    def _batch(x, dims: int):
        a = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
        return (a[None], True) if a.ndim == dims - 1 else (a, False)

    def _prepare(self, strain, prev_stress, micro):
        strain, single = self._batch(strain, 3)
        prev_stress, _ = self._batch(prev_stress, 3)
        if micro is not None and single:
            micro = np.asarray(micro, dtype=np.float64)[None]
        self._check(strain, prev_stress, micro)
        return strain, prev_stress, micro, single

    # -- forward ---------------------------------------------------------------
    def forward(self, strain, prev_stress, micro=None, rng: Optional[np.random.Generator] = None):
        """Teacher-forced prediction. ``prev_stress`` is the right-shifted stress stream."""
        strain, prev_stress, micro, single = self._prepare(strain, prev_stress, micro)
        t = strain.shape[1]
        pe = positional_encoding(t, self.config.d_model)
        ctx = self.micro_context(micro, rng)
        memory = self.strain_path(Tensor(strain), ctx, rng) + pe
        h = self.stress_path(Tensor(prev_stress), ctx, rng) + pe
        for layer in self.decoder:
            h = layer(h, memory, rng)
        for grn in self.out_grns:
            h = grn(h, ctx, rng)
        out = self.head(h)
        return ops.reshape(out, out.shape[1:]) if single else out

    def teacher_forced(self, strain, stress, micro=None, rng=None):
        return self.forward(strain, shift_right(stress), micro, rng)

    def autoregressive_predict(self, strain, micro=None) -> np.ndarray:
        """Feed predictions back one step at a time (eval mode, cached keys/values)."""
        was_training = self.training
        self.eval()
        try:
            strain, _, micro, single = self._prepare(strain, np.zeros(np.shape(strain)[:-1] + (
                self.config.stress_dim,)), micro)
            b, t, _ = strain.shape
            pe = positional_encoding(t, self.config.d_model)
            ctx = self.micro_context(micro)
            memory = self.strain_path(Tensor(strain), ctx) + pe
            mem_kv = [tuple(x.data for x in layer.cross_attn.keys_values(memory))
                      for layer in self.decoder]
            caches = [{} for _ in self.decoder]
            out = np.zeros((b, t, self.config.stress_dim))
            prev = np.zeros((b, 1, self.config.stress_dim))
            for i in range(t):
                h = self.stress_path(Tensor(prev), ctx) + pe[i]
                for layer, cache, kv in zip(self.decoder, caches, mem_kv):
                    h = layer.step(h, cache, kv, i)
                for grn in self.out_grns:
                    h = grn(h, ctx)
                y = self.head(h).data
                out[:, i] = y[:, 0]
                prev = y
            return out[0] if single else out
        finally:
            self.train(was_training)

    # -- bookkeeping -----------------------------------------------------------
    def param_breakdown(self) -> dict:
        groups = {
            "cnn": [self.cnn],
            "micro_embedding": [self.micro_embed],
            "strain_path": [self.strain_path],
            "stress_path": [self.stress_path],
            "decoder_stack": self.decoder,
            "output_grns": self.out_grns,
            "head": [self.head],
        }
        counts = {k: sum(m.num_parameters() for m in ms if m is not None) for k, ms in groups.items()}
        counts["total"] = self.num_parameters()
        return counts


def surrogate_forward(model: Surrogate, strain, prev_stress, micro=None, mode: str = "eval",
                      rng=None) -> Tensor:
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    model.train(mode == "train")
    return model(strain, prev_stress, micro, rng=rng)


def decoder_param_count(config: SurrogateConfig) -> int:
    rng = np.random.default_rng(0)
    return sum(DecoderLayer(config, rng).num_parameters() for _ in range(config.layers))
