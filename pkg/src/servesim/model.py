"""Transformer description: shape, operator list, breakpoints, sizing."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Union

from . import constants

OPERATOR_KINDS = (
    "QKVProj",
    "AttnScore",
    "AttnOutProj",
    "MLPUp",
    "MLPDown",
    "LMHead",
    "Custom",
)

END = "end"


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class OperatorSpec:
    """One coarse operator of a decoder iteration.

    Built-in kinds take their FLOP/byte formulas from the cost table in
    :mod:`servesim.costmodel`. ``Custom`` operators are linear in the number of
    new tokens: ``flops = flops_per_token * T`` and
    ``bytes = weight_bytes + bytes_per_token * T``.
    """

    kind: str
    per_layer: bool = True
    flops_per_token: int = 0
    bytes_per_token: int = 0
    weight_bytes: int = 0

    def __post_init__(self):
        if self.kind not in OPERATOR_KINDS:
            raise ModelError(f"unknown operator kind {self.kind!r}")


@dataclass(frozen=True)
class Breakpoint:
    position: Union[int, str] = END  # operator index or "end"
    hook: str = "iteration"

    @property
    def at_end(self) -> bool:
        return self.position == END


def default_operators() -> tuple[OperatorSpec, ...]:
    return (
        OperatorSpec("QKVProj"),
        OperatorSpec("AttnScore"),
        OperatorSpec("AttnOutProj"),
        OperatorSpec("MLPUp"),
        OperatorSpec("MLPDown"),
        OperatorSpec("LMHead", per_layer=False),
    )


@dataclass(frozen=True)
class ModelSpec:
    name: str
    num_layers: int
    hidden_dim: int
    num_heads: int
    head_dim: int
    ffn_dim: int
    vocab_size: int
    num_kv_heads: int = 0  # 0 means "same as num_heads"
    gated_mlp: bool = False
    dtype_bytes: int = 2
    operators: tuple[OperatorSpec, ...] = field(default_factory=default_operators)
    breakpoints: tuple[Breakpoint, ...] = (Breakpoint(),)

    def __post_init__(self):
        if self.num_kv_heads == 0:
            object.__setattr__(self, "num_kv_heads", self.num_heads)
        object.__setattr__(self, "operators", tuple(self.operators))
        bps = tuple(self.breakpoints)
        if not any(bp.at_end for bp in bps):
            bps = (Breakpoint(),) + bps
        object.__setattr__(self, "breakpoints", bps)
        self.validate()

    def validate(self) -> None:
        for name in ("num_layers", "hidden_dim", "num_heads", "head_dim", "dtype_bytes"):
            if getattr(self, name) < 1:
                raise ModelError(f"{name} must be >= 1")
        if self.ffn_dim < 0 or self.vocab_size < 0:
            raise ModelError("ffn_dim and vocab_size must be >= 0")
        if self.hidden_dim != self.num_heads * self.head_dim:
            raise ModelError(
                f"hidden_dim ({self.hidden_dim}) != num_heads * head_dim "
                f"({self.num_heads} * {self.head_dim})"
            )
        if not 1 <= self.num_kv_heads <= self.num_heads:
            raise ModelError("num_kv_heads must be in [1, num_heads]")
        if self.num_heads % self.num_kv_heads:
            raise ModelError("num_heads must be a multiple of num_kv_heads")
        if not self.operators:
            raise ModelError("operator list is empty")
        n_ops = len(self.operators)
        for bp in self.breakpoints:
            if bp.at_end:
                continue
            if not isinstance(bp.position, int) or not 0 <= bp.position < n_ops:
                raise ModelError(
                    f"breakpoint position {bp.position!r} is not an operator index "
                    f"in [0, {n_ops})"
                )

    @property
    def q_dim(self) -> int:
        return self.num_heads * self.head_dim

    @property
    def kv_dim(self) -> int:
        return self.num_kv_heads * self.head_dim

    def replace(self, **changes) -> "ModelSpec":
        return dataclasses.replace(self, **changes)


def kv_bytes_per_token(m: ModelSpec) -> int:
    """Bytes of K and V cached per token across all layers."""
    return 2 * m.num_layers * m.num_kv_heads * m.head_dim * m.dtype_bytes


def layer_params(m: ModelSpec) -> int:
    attn = m.hidden_dim * (m.q_dim + 2 * m.kv_dim) + m.q_dim * m.hidden_dim
    mlp = (3 if m.gated_mlp else 2) * m.hidden_dim * m.ffn_dim
    return attn + mlp


def param_count(m: ModelSpec) -> int:
    custom = sum(
        op.weight_bytes // m.dtype_bytes * (m.num_layers if op.per_layer else 1)
        for op in m.operators
        if op.kind == "Custom"
    )
    return m.num_layers * layer_params(m) + m.vocab_size * m.hidden_dim + custom


def weight_bytes(m: ModelSpec) -> int:
    return param_count(m) * m.dtype_bytes


def builtin(name: str, **overrides) -> ModelSpec:
    try:
        base = constants.MODELS[name]
    except KeyError:
        known = ", ".join(sorted(constants.MODELS))
        raise ModelError(f"unknown model {name!r} (known: {known})") from None
    return ModelSpec(name=name, **{**base, **overrides})
