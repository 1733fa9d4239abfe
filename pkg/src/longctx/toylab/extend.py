"""Context extension for the toy model: swap the rotary table, keep weights."""

from __future__ import annotations

from ..errors import ConfigurationError
from ..rope import Method, ScalingMethod
from .model import ToyModel

EXTENDABLE = (Method.YARN, Method.NTK, Method.PI)


def extend(model: ToyModel, method, s: float, new_context: int,
           explicit_theta: float | None = None,
           mscale_enabled: bool = True) -> ToyModel:
    """Replace the model's frequency table with a scaled one and raise the
    context window. Parameters are untouched.

    new_context must equal s times the base (pretraining) context within
    rounding. With s=1 the table reduces to the base frequencies, so the
    forward pass is unchanged.
    """
    try:
        method = Method(method)
    except ValueError as exc:
        raise ConfigurationError(f"unknown extension method {method!r}") from exc
    if method not in EXTENDABLE:
        raise ConfigurationError(f"cannot extend with method {method.value!r}")
    if s < 1:
        raise ConfigurationError(f"scale factor must be >= 1, got {s}")
    base = model.config.context_length
    if round(s * base) != new_context:
        raise ConfigurationError(
            f"new_context {new_context} != s*base = {s}*{base}"
        )
    scaling = ScalingMethod(
        variant=method, s=float(s), explicit_theta=explicit_theta,
        mscale_enabled=mscale_enabled,
    )
    model.scaling = scaling
    model.set_frequency_table(scaling.table(model.config.rope_spec()), new_context)
    return model


def widen(model: ToyModel, new_context: int) -> ToyModel:
    """Copy of the model allowed to run past its trained window with the
    frequency table unchanged — the no-extension baseline for comparisons."""
    return ToyModel(
        config=model.config,
        params={k: v.copy() for k, v in model.params.items()},
        context_length=max(new_context, model.context_length),
        scaling=model.scaling,
        freq_table=model.freq_table,
    )
