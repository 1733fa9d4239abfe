"""Rotary-embedding frequency tables and context-extension scaling.

Implements the base rotary frequencies plus the four extension methods
(position interpolation, NTK-aware, dynamic NTK, and ramp-interpolated
scaling with an optional attention-temperature term), along with the
pairwise rotation itself and a cos/sin precomputation helper.

All tables are computed in double precision. Functions here are pure and
hold no state, so they are safe to call concurrently.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import ConfigurationError

DEFAULT_BASE_THETA = 5.0e5
DEFAULT_ORIGINAL_CONTEXT = 8192
# Explicit enlarged base used by the NTK-aware baseline we compare against.
GRADIENT_NTK_THETA = 3_580_165_449.0


@dataclass(frozen=True)
class RopeSpec:
    """Geometry of the rotary embedding: head size, base, native context."""

    head_dim: int
    base_theta: float = DEFAULT_BASE_THETA
    original_context: int = DEFAULT_ORIGINAL_CONTEXT

    def __post_init__(self):
        if self.head_dim < 2 or self.head_dim % 2 != 0:
            raise ConfigurationError(
                f"head_dim must be even and >= 2, got {self.head_dim}"
            )
        if not self.base_theta > 1:
            raise ConfigurationError(f"base_theta must be > 1, got {self.base_theta}")
        if self.original_context < 1:
            raise ConfigurationError(
                f"original_context must be >= 1, got {self.original_context}"
            )


class Method(str, Enum):
    NONE = "none"
    PI = "pi"
    NTK = "ntk"
    DYNAMIC_NTK = "dynamic_ntk"
    YARN = "yarn"


@dataclass(frozen=True)
class FrequencyTable:
    """Per-dimension rotary frequencies in radians/position, plus the
    attention-scale multiplier applied to rotated queries and keys."""

    freqs: np.ndarray  # shape (head_dim // 2,), float64, strictly positive
    attention_scale: float = 1.0

    def __post_init__(self):
        freqs = np.asarray(self.freqs, dtype=np.float64)
        object.__setattr__(self, "freqs", freqs)
        if freqs.ndim != 1 or freqs.size == 0:
            raise ConfigurationError("freqs must be a non-empty 1-D array")
        if not np.all(np.isfinite(freqs)) or not np.all(freqs > 0):
            raise ConfigurationError("freqs must be finite and positive")
        if not (self.attention_scale > 0 and math.isfinite(self.attention_scale)):
            raise ConfigurationError("attention_scale must be positive and finite")

    @property
    def half_dim(self) -> int:
        return int(self.freqs.size)


def base_frequencies(spec: RopeSpec) -> FrequencyTable:
    """Standard rotary table: freqs[d] = theta^(-2d/D) for d in [0, D/2)."""
    d = np.arange(spec.head_dim // 2, dtype=np.float64)
    freqs = spec.base_theta ** (-2.0 * d / spec.head_dim)
    return FrequencyTable(freqs=freqs, attention_scale=1.0)


def rotations_in_context(spec: RopeSpec, table: FrequencyTable) -> np.ndarray:
    """Full rotations each dimension completes over the original context:
    r_d = L_orig * f_d / (2*pi)."""
    return spec.original_context * table.freqs / (2.0 * math.pi)


def ramp(r, alpha: float, beta: float):
    """Linear ramp clamped to [0, 1]: 0 at r <= alpha, 1 at r >= beta."""
    if not alpha < beta:
        raise ConfigurationError(f"ramp requires alpha < beta, got {alpha} >= {beta}")
    return np.clip((np.asarray(r, dtype=np.float64) - alpha) / (beta - alpha), 0.0, 1.0)


def attention_scale_for(s: float, enabled: bool = True) -> float:
    """Temperature multiplier 0.1*ln(s) + 1 for s > 1, else 1."""
    if enabled and s > 1:
        return 0.1 * math.log(s) + 1.0
    return 1.0


def yarn_frequencies(
    spec: RopeSpec,
    s: float,
    alpha: float = 1.0,
    beta: float = 4.0,
    mscale_enabled: bool = True,
) -> FrequencyTable:
    """Ramp-interpolated scaling: dimensions rotating fewer than alpha times
    in the original context are fully interpolated (divided by s), those
    rotating more than beta times are untouched, with a linear blend between.
    """
    if s < 1:
        raise ConfigurationError(f"scale factor must be >= 1, got {s}")
    base = base_frequencies(spec)
    r = rotations_in_context(spec, base)
    gamma = ramp(r, alpha, beta)
    freqs = base.freqs * ((1.0 - gamma) / s + gamma)
    return FrequencyTable(freqs=freqs, attention_scale=attention_scale_for(s, mscale_enabled))


def pi_frequencies(spec: RopeSpec, s: float) -> FrequencyTable:
    """Position interpolation: every frequency divided by s."""
    if s < 1:
        raise ConfigurationError(f"scale factor must be >= 1, got {s}")
    base = base_frequencies(spec)
    return FrequencyTable(freqs=base.freqs / s, attention_scale=1.0)


def ntk_frequencies(
    spec: RopeSpec, s_or_theta: float, mode: str = "factor"
) -> FrequencyTable:
    """NTK-aware scaling: enlarge the base instead of dividing frequencies.

    mode="factor" derives theta' = theta * s^(D/(D-2)); mode="explicit"
    treats the argument as theta' directly.
    """
    if mode == "factor":
        s = s_or_theta
        if s < 1:
            raise ConfigurationError(f"scale factor must be >= 1, got {s}")
        if spec.head_dim == 2:
            raise ConfigurationError(
                "factor-mode NTK is undefined for head_dim=2 (exponent D/(D-2))"
            )
        theta_prime = spec.base_theta * s ** (spec.head_dim / (spec.head_dim - 2))
    elif mode == "explicit":
        theta_prime = s_or_theta
        if not theta_prime > 1:
            raise ConfigurationError(f"explicit theta must be > 1, got {theta_prime}")
    else:
        raise ConfigurationError(f"unknown NTK mode {mode!r}")
    d = np.arange(spec.head_dim // 2, dtype=np.float64)
    freqs = theta_prime ** (-2.0 * d / spec.head_dim)
    return FrequencyTable(freqs=freqs, attention_scale=1.0)


def dynamic_scale(spec: RopeSpec, current_length: int) -> float:
    """Effective factor for dynamic NTK: max(1, current/original)."""
    if current_length < 1:
        raise ConfigurationError(f"current_length must be >= 1, got {current_length}")
    return max(1.0, current_length / spec.original_context)


def scale_factor_for_target(
    target_context: int,
    base_pretrain_context: int,
    round_up_pow2: bool = False,
) -> float:
    """Exact ratio target/base; optionally rounded up to a power of two."""
    if base_pretrain_context < 1 or target_context < base_pretrain_context:
        raise ConfigurationError(
            f"need target >= base >= 1, got target={target_context} base={base_pretrain_context}"
        )
    s = target_context / base_pretrain_context
    if round_up_pow2:
        s = float(2 ** math.ceil(math.log2(s))) if s > 1 else 1.0
    return s


@dataclass(frozen=True)
class ScalingMethod:
    """Declarative description of one extension method and its parameters."""

    variant: Method = Method.NONE
    s: float = 1.0
    alpha: float = 1.0
    beta: float = 4.0
    explicit_theta: float | None = None
    mscale_enabled: bool = True

    def __post_init__(self):
        if self.s < 1:
            raise ConfigurationError(f"scale factor must be >= 1, got {self.s}")
        if not self.alpha < self.beta:
            raise ConfigurationError(
                f"need alpha < beta, got {self.alpha} >= {self.beta}"
            )
        if self.explicit_theta is not None and not self.explicit_theta > 1:
            raise ConfigurationError("explicit_theta must be > 1")

    def table(self, spec: RopeSpec, current_length: int | None = None) -> FrequencyTable:
        """Materialize the frequency table this method prescribes."""
        if self.variant is Method.NONE:
            return base_frequencies(spec)
        if self.variant is Method.PI:
            return pi_frequencies(spec, self.s)
        if self.variant is Method.NTK:
            if self.explicit_theta is not None:
                return ntk_frequencies(spec, self.explicit_theta, mode="explicit")
            return ntk_frequencies(spec, self.s, mode="factor")
        if self.variant is Method.DYNAMIC_NTK:
            if current_length is None:
                raise ConfigurationError("dynamic NTK needs the current sequence length")
            return ntk_frequencies(spec, dynamic_scale(spec, current_length), mode="factor")
        if self.variant is Method.YARN:
            return yarn_frequencies(spec, self.s, self.alpha, self.beta, self.mscale_enabled)
        raise ConfigurationError(f"unknown scaling variant {self.variant!r}")


def apply_rotary(
    vector: Sequence[float], position: int, table: FrequencyTable
) -> np.ndarray:
    """Rotate adjacent pairs (x[2d], x[2d+1]) by position * freqs[d], then
    multiply by the attention scale. Norm-preserving when the scale is 1."""
    x = np.asarray(vector, dtype=np.float64)
    if x.shape[-1] != 2 * table.half_dim:
        raise ValueError(
            f"vector length {x.shape[-1]} does not match head_dim {2 * table.half_dim}"
        )
    if position < 0:
        raise ValueError(f"position must be >= 0, got {position}")
    angles = position * table.freqs
    m = table.attention_scale
    cos, sin = m * np.cos(angles), m * np.sin(angles)
    even, odd = x[..., 0::2], x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


def cos_sin_table(positions, table: FrequencyTable) -> tuple[np.ndarray, np.ndarray]:
    """Precompute (m*cos(p*f_d), m*sin(p*f_d)) for a range of positions.

    Returns (cos, sin) arrays of shape (len(positions), head_dim // 2).
    Applying the rotation through these entries is bit-identical in double
    precision to apply_rotary.
    """
    pos = np.asarray(list(positions) if not isinstance(positions, np.ndarray) else positions)
    if pos.size == 0:
        raise ConfigurationError("position range must be non-empty")
    angles = pos.astype(np.float64)[:, None] * table.freqs[None, :]
    m = table.attention_scale
    return m * np.cos(angles), m * np.sin(angles)


def rotate_with_tables(x: np.ndarray, cos: np.ndarray, sin: np.ndarray) -> np.ndarray:
    """Apply the pairwise rotation from precomputed cos/sin rows.

    x has shape (..., P, D); cos/sin have shape (P, D/2). The attention
    scale is already folded into the tables.
    """
    even, odd = x[..., 0::2], x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


@dataclass
class TableExport:
    """JSON-serializable description of a frequency table and its provenance."""

    spec: RopeSpec
    method: str
    params: dict = field(default_factory=dict)
    table: FrequencyTable = None

    def to_json(self) -> str:
        doc = {
            "head_dim": self.spec.head_dim,
            "theta": self.spec.base_theta,
            "original_context": self.spec.original_context,
            "method": self.method,
            "params": self.params,
            "freqs": [float(f) for f in self.table.freqs],
            "attention_scale": float(self.table.attention_scale),
        }
        # json emits shortest round-trip decimals for Python floats
        return json.dumps(doc, indent=2)

    @staticmethod
    def from_json(text: str) -> "TableExport":
        doc = json.loads(text)
        spec = RopeSpec(
            head_dim=doc["head_dim"],
            base_theta=doc["theta"],
            original_context=doc["original_context"],
        )
        table = FrequencyTable(
            freqs=np.asarray(doc["freqs"], dtype=np.float64),
            attention_scale=doc["attention_scale"],
        )
        return TableExport(spec=spec, method=doc["method"], params=doc["params"], table=table)
