"""Small causal transformer in double-precision numpy with manual backprop.

Architecture: token embedding, N pre-norm blocks (RMSNorm, multi-head
attention with rotary Q/K, RMSNorm, gated-linear MLP), final RMSNorm, and
an untied output projection. The rotary frequency table (including its
attention-scale multiplier) is swappable at runtime, which is what context
extension does.

Gradients are validated against central finite differences in the tests,
so every backward formula here has an independent oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError, NumericError
from ..rope import FrequencyTable, Method, RopeSpec, ScalingMethod, cos_sin_table

RMS_EPS = 1e-6


@dataclass
class ToyModelConfig:
    layers: int = 2
    d_model: int = 64
    heads: int = 4
    vocab_size: int = 128
    context_length: int = 256
    mlp_mult: int = 2
    base_theta: float = 5.0e5
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise ConfigurationError("d_model must be divisible by heads")
        if self.head_dim % 2 != 0:
            raise ConfigurationError("head_dim must be even")
        if self.context_length < 8:
            raise ConfigurationError("context_length must be >= 8")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.heads

    def rope_spec(self) -> RopeSpec:
        return RopeSpec(
            head_dim=self.head_dim,
            base_theta=self.base_theta,
            original_context=self.context_length,
        )

    def as_dict(self) -> dict:
        return {
            "layers": self.layers, "d_model": self.d_model, "heads": self.heads,
            "vocab_size": self.vocab_size, "context_length": self.context_length,
            "mlp_mult": self.mlp_mult, "base_theta": self.base_theta, "seed": self.seed,
        }


@dataclass
class ToyModel:
    config: ToyModelConfig
    params: dict = field(default_factory=dict)  # name -> float64 ndarray
    context_length: int = 0  # current (possibly extended) window
    scaling: ScalingMethod = field(default_factory=ScalingMethod)
    freq_table: FrequencyTable | None = None

    def __post_init__(self):
        if self.context_length == 0:
            self.context_length = self.config.context_length
        if self.freq_table is None:
            self.freq_table = self.scaling.table(self.config.rope_spec())

    def num_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def set_frequency_table(self, table: FrequencyTable, context_length: int) -> None:
        self.freq_table = table
        self.context_length = context_length


def init_model(config: ToyModelConfig) -> ToyModel:
    rng = np.random.default_rng(config.seed)
    d, v, m = config.d_model, config.vocab_size, config.mlp_mult * config.d_model

    def w(*shape, scale=None):
        scale = scale if scale is not None else (shape[0]) ** -0.5
        return rng.normal(0.0, scale, size=shape).astype(np.float64)

    params = {"embed": w(v, d, scale=0.02), "out_norm_g": np.ones(d)}
    for i in range(config.layers):
        p = f"layer{i}."
        params[p + "attn_norm_g"] = np.ones(d)
        params[p + "wq"] = w(d, d)
        params[p + "wk"] = w(d, d)
        params[p + "wv"] = w(d, d)
        params[p + "wo"] = w(d, d)
        params[p + "mlp_norm_g"] = np.ones(d)
        params[p + "w_gate"] = w(d, m)
        params[p + "w_up"] = w(d, m)
        params[p + "w_down"] = w(m, d)
    params["w_out"] = w(d, v)
    return ToyModel(config=config, params=params)


def _rmsnorm_fwd(x, g):
    inv = 1.0 / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + RMS_EPS)
    return x * inv * g, inv


def _rmsnorm_bwd(dy, x, inv, g):
    d = x.shape[-1]
    gdy = dy * g
    dg = np.sum(dy * x * inv, axis=tuple(range(x.ndim - 1)))
    dx = gdy * inv - x * (np.sum(gdy * x, axis=-1, keepdims=True) * inv**3 / d)
    return dx, dg


def _rotate_fwd(x, cos, sin):
    # x: (B, H, T, hd); cos/sin: (T, hd/2) with attention scale folded in
    even, odd = x[..., 0::2], x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


def _rotate_bwd(dy, cos, sin):
    de, do = dy[..., 0::2], dy[..., 1::2]
    dx = np.empty_like(dy)
    dx[..., 0::2] = de * cos + do * sin
    dx[..., 1::2] = -de * sin + do * cos
    return dx


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def forward(model: ToyModel, tokens: np.ndarray, cache: dict | None = None) -> np.ndarray:
    """Logits of shape (batch, seq, vocab); pass a dict to keep the
    intermediates backward() needs."""
    tokens = np.asarray(tokens)
    if tokens.ndim == 1:
        tokens = tokens[None, :]
    B, T = tokens.shape
    if T > model.context_length:
        raise ValueError(
            f"sequence length {T} exceeds context_length {model.context_length}"
        )
    cfg = model.config
    H, hd = cfg.heads, cfg.head_dim
    p = model.params

    cos, sin = cos_sin_table(np.arange(T), model.freq_table)
    mask = np.triu(np.full((T, T), -np.inf), k=1)  # strictly causal

    x = p["embed"][tokens]  # (B, T, d)
    c = cache if cache is not None else {}
    c["tokens"], c["cos"], c["sin"], c["layers"] = tokens, cos, sin, []

    for i in range(cfg.layers):
        lp = f"layer{i}."
        lc = {}
        lc["x_in"] = x
        h, lc["attn_inv"] = _rmsnorm_fwd(x, p[lp + "attn_norm_g"])
        lc["h_attn"] = h
        q = (h @ p[lp + "wq"]).reshape(B, T, H, hd).transpose(0, 2, 1, 3)
        k = (h @ p[lp + "wk"]).reshape(B, T, H, hd).transpose(0, 2, 1, 3)
        v = (h @ p[lp + "wv"]).reshape(B, T, H, hd).transpose(0, 2, 1, 3)
        lc["q"], lc["k"], lc["v"] = q, k, v
        qr, kr = _rotate_fwd(q, cos, sin), _rotate_fwd(k, cos, sin)
        lc["qr"], lc["kr"] = qr, kr
        # softmax computed in place: the (B, H, T, T) score tensor dominates
        # memory traffic at long T, so avoid temporaries
        scores = (qr / np.sqrt(hd)) @ kr.transpose(0, 1, 3, 2)
        scores += mask
        scores -= scores.max(axis=-1, keepdims=True)
        np.exp(scores, out=scores)
        scores /= scores.sum(axis=-1, keepdims=True)
        attn = scores
        lc["attn"] = attn
        o = (attn @ v).transpose(0, 2, 1, 3).reshape(B, T, cfg.d_model)
        lc["o"] = o
        x = x + o @ p[lp + "wo"]

        lc["x_mid"] = x
        h2, lc["mlp_inv"] = _rmsnorm_fwd(x, p[lp + "mlp_norm_g"])
        lc["h_mlp"] = h2
        zg = h2 @ p[lp + "w_gate"]
        zu = h2 @ p[lp + "w_up"]
        sg = _sigmoid(zg)
        act = zg * sg  # SiLU gate
        lc["zg"], lc["zu"], lc["sg"], lc["act"] = zg, zu, sg, act
        x = x + (act * zu) @ p[lp + "w_down"]
        c["layers"].append(lc)

    c["x_final"] = x
    h, c["out_inv"] = _rmsnorm_fwd(x, p["out_norm_g"])
    c["h_out"] = h
    logits = h @ p["w_out"]
    c["logits"] = logits
    return logits


def cross_entropy(logits: np.ndarray, targets: np.ndarray,
                  mask: np.ndarray | None = None):
    """Mean next-token cross entropy and the gradient wrt logits.

    mask, if given, marks positions that contribute to the loss (1/0).
    """
    B, T, V = logits.shape
    shifted = logits - logits.max(axis=-1, keepdims=True)
    logz = np.log(np.sum(np.exp(shifted), axis=-1))
    gold = np.take_along_axis(shifted, targets[..., None], axis=-1)[..., 0]
    nll = logz - gold
    if mask is None:
        n = B * T
        loss = float(nll.sum() / n)
        probs = np.exp(shifted - logz[..., None])
        dlogits = probs
        np.subtract.at(
            dlogits.reshape(-1, V), (np.arange(B * T), targets.reshape(-1)), 1.0
        )
        dlogits /= n
    else:
        n = mask.sum()
        if n == 0:
            return 0.0, np.zeros_like(logits)
        loss = float((nll * mask).sum() / n)
        probs = np.exp(shifted - logz[..., None])
        dlogits = probs.copy()
        np.subtract.at(
            dlogits.reshape(-1, V), (np.arange(B * T), targets.reshape(-1)), 1.0
        )
        dlogits *= mask[..., None]
        dlogits /= n
    return loss, dlogits


def backward(model: ToyModel, cache: dict, dlogits: np.ndarray) -> dict:
    """Reverse-mode gradients for every parameter given dL/dlogits."""
    cfg = model.config
    p = model.params
    B, T = cache["tokens"].shape
    H, hd = cfg.heads, cfg.head_dim
    cos, sin = cache["cos"], cache["sin"]
    grads = {}

    grads["w_out"] = cache["h_out"].reshape(-1, cfg.d_model).T @ dlogits.reshape(-1, cfg.vocab_size)
    dh = dlogits @ p["w_out"].T
    dx, grads["out_norm_g"] = _rmsnorm_bwd(dh, cache["x_final"], cache["out_inv"], p["out_norm_g"])

    for i in reversed(range(cfg.layers)):
        lp = f"layer{i}."
        lc = cache["layers"][i]

        # MLP block
        dmlp_out = dx  # residual add passes dx through unchanged
        d_actzu = dmlp_out @ p[lp + "w_down"].T
        m = lc["act"].shape[-1]
        grads[lp + "w_down"] = (lc["act"] * lc["zu"]).reshape(-1, m).T @ dmlp_out.reshape(-1, cfg.d_model)
        dact = d_actzu * lc["zu"]
        dzu = d_actzu * lc["act"]
        dzg = dact * (lc["sg"] * (1.0 + lc["zg"] * (1.0 - lc["sg"])))
        h2 = lc["h_mlp"]
        grads[lp + "w_gate"] = h2.reshape(-1, cfg.d_model).T @ dzg.reshape(-1, dzg.shape[-1])
        grads[lp + "w_up"] = h2.reshape(-1, cfg.d_model).T @ dzu.reshape(-1, dzu.shape[-1])
        dh2 = dzg @ p[lp + "w_gate"].T + dzu @ p[lp + "w_up"].T
        dx_mid, grads[lp + "mlp_norm_g"] = _rmsnorm_bwd(
            dh2, lc["x_mid"], lc["mlp_inv"], p[lp + "mlp_norm_g"]
        )
        dx = dx + dx_mid

        # attention block
        do_proj = dx
        grads[lp + "wo"] = lc["o"].reshape(-1, cfg.d_model).T @ do_proj.reshape(-1, cfg.d_model)
        do = (do_proj @ p[lp + "wo"].T).reshape(B, T, H, hd).transpose(0, 2, 1, 3)
        dattn = do @ lc["v"].transpose(0, 1, 3, 2)
        dv = lc["attn"].transpose(0, 1, 3, 2) @ do
        a = lc["attn"]
        # softmax backward in place on the fresh (B, H, T, T) tensor
        dattn -= np.einsum("bhij,bhij->bhi", dattn, a)[..., None]
        dattn *= a
        dscores = dattn
        # the 1/sqrt(hd) score scale is applied to the small (B, H, T, hd)
        # outputs rather than the (B, H, T, T) score gradient
        dqr = (dscores @ lc["kr"]) / np.sqrt(hd)
        dkr = (dscores.transpose(0, 1, 3, 2) @ lc["qr"]) / np.sqrt(hd)
        dq = _rotate_bwd(dqr, cos, sin)
        dk = _rotate_bwd(dkr, cos, sin)

        def merge(t):
            return t.transpose(0, 2, 1, 3).reshape(B, T, cfg.d_model)

        h = lc["h_attn"]
        hflat = h.reshape(-1, cfg.d_model)
        grads[lp + "wq"] = hflat.T @ merge(dq).reshape(-1, cfg.d_model)
        grads[lp + "wk"] = hflat.T @ merge(dk).reshape(-1, cfg.d_model)
        grads[lp + "wv"] = hflat.T @ merge(dv).reshape(-1, cfg.d_model)
        dh = (
            merge(dq) @ p[lp + "wq"].T
            + merge(dk) @ p[lp + "wk"].T
            + merge(dv) @ p[lp + "wv"].T
        )
        dx_in, grads[lp + "attn_norm_g"] = _rmsnorm_bwd(
            dh, lc["x_in"], lc["attn_inv"], p[lp + "attn_norm_g"]
        )
        dx = dx + dx_in

    dembed = np.zeros_like(p["embed"])
    np.add.at(dembed, cache["tokens"].reshape(-1), dx.reshape(-1, cfg.d_model))
    grads["embed"] = dembed
    return grads


def loss_and_gradients(model: ToyModel, batch: np.ndarray, targets: np.ndarray,
                       loss_mask: np.ndarray | None = None):
    """Mean token cross entropy and gradients for every parameter."""
    cache = {}
    logits = forward(model, batch, cache)
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits in forward pass")
    tgt = np.asarray(targets)
    if tgt.ndim == 1:
        tgt = tgt[None, :]
    loss, dlogits = cross_entropy(logits, tgt, loss_mask)
    grads = backward(model, cache, dlogits)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
    return loss, grads
