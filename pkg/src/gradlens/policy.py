"""Discrete-action policies with closed-form log-probability gradients.

Two architectures: ``linear_softmax`` (one weight block per action over the
context, so the score-function gradient has an exact closed form) and
``mlp1`` (one tanh hidden layer, differentiated by manual backprop). All
probability math runs in log space. A central-finite-difference oracle is
included for gradient verification.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from gradlens import kernels
from gradlens.errors import ConfigError, ContractError, NumericError, ShapeError
from gradlens.rngstreams import substream

ARCHS = ("linear_softmax", "mlp1")


class Segment(NamedTuple):
    name: str
    offset: int
    length: int


@dataclass
class ParamVector:
    """Flat float64 parameter or gradient container with named segments.

    Segments must partition [0, len) without gaps or overlap, and every
    value must be finite; both are checked at construction.
    """

    values: np.ndarray
    segments: tuple

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ShapeError("ParamVector values must be 1-D")
        self.segments = tuple(Segment(*s) for s in self.segments)
        cursor = 0
        for seg in self.segments:
            if seg.offset != cursor or seg.length <= 0:
                raise ShapeError(f"segments do not partition the vector at {seg}")
            cursor += seg.length
        if cursor != self.values.shape[0]:
            raise ShapeError("segments do not cover the full vector")
        if not np.all(np.isfinite(self.values)):
            raise NumericError("non-finite values in ParamVector")

    def __len__(self) -> int:
        return self.values.shape[0]

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.segments)

    def with_values(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(values, self.segments)

    def segment_names(self) -> tuple:
        return tuple(s.name for s in self.segments)

    def segment_slice(self, name: str) -> slice:
        for seg in self.segments:
            if seg.name == name:
                return slice(seg.offset, seg.offset + seg.length)
        raise ConfigError(f"unknown segment {name!r}")

    def dot(self, other: "ParamVector") -> float:
        if len(other) != len(self):
            raise ShapeError("length mismatch in dot")
        return float(self.values @ other.values)

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


@dataclass(frozen=True)
class PolicySpec:
    arch: str
    context_dim: int
    action_count: int
    hidden_dim: int = 0
    init_seed: int = 0

    def validate(self) -> None:
        if self.arch not in ARCHS:
            raise ConfigError(f"unknown arch {self.arch!r}")
        if self.context_dim < 1:
            raise ConfigError("context_dim must be positive")
        if self.action_count < 2:
            raise ConfigError("action_count must be >= 2")
        if self.arch == "mlp1" and self.hidden_dim < 1:
            raise ConfigError("mlp1 requires hidden_dim >= 1")


def _segments_for(spec: PolicySpec) -> tuple:
    k, d = spec.action_count, spec.context_dim
    if spec.arch == "linear_softmax":
        return (Segment("output", 0, k * d),)
    h = spec.hidden_dim
    hidden_len = h * d + h
    return (
        Segment("hidden", 0, hidden_len),
        Segment("output", hidden_len, k * h + k),
    )


class Policy:
    """Stateless policy family: all methods are pure in (params, context)."""

    def __init__(self, spec: PolicySpec):
        spec.validate()
        self.spec = spec
        self.segments = _segments_for(spec)
        self.param_count = sum(s.length for s in self.segments)

    # -- parameter layout -------------------------------------------------

    def init_params(self) -> ParamVector:
        """Deterministic initialization from the spec's init_seed.

        linear_softmax starts at exactly zero (uniform policy); mlp1 draws
        each layer from a symmetric uniform range scaled by 1/sqrt(fan_in).
        """
        if self.spec.arch == "linear_softmax":
            return ParamVector(np.zeros(self.param_count), self.segments)
        rng = substream(self.spec.init_seed, "policy_init")
        d, h, k = self.spec.context_dim, self.spec.hidden_dim, self.spec.action_count
        lim1 = 1.0 / np.sqrt(d)
        lim2 = 1.0 / np.sqrt(h)
        values = np.concatenate(
            [
                rng.uniform(-lim1, lim1, size=h * d),
                rng.uniform(-lim1, lim1, size=h),
                rng.uniform(-lim2, lim2, size=k * h),
                rng.uniform(-lim2, lim2, size=k),
            ]
        )
        return ParamVector(values, self.segments)

    def _unpack_linear(self, params: ParamVector) -> np.ndarray:
        k, d = self.spec.action_count, self.spec.context_dim
        return params.values.reshape(k, d)

    def _unpack_mlp(self, params: ParamVector):
        d, h, k = self.spec.context_dim, self.spec.hidden_dim, self.spec.action_count
        v = params.values
        ofs = 0
        w1 = v[ofs : ofs + h * d].reshape(h, d)
        ofs += h * d
        b1 = v[ofs : ofs + h]
        ofs += h
        w2 = v[ofs : ofs + k * h].reshape(k, h)
        ofs += k * h
        b2 = v[ofs : ofs + k]
        return w1, b1, w2, b2

    def _check_context(self, context: np.ndarray) -> np.ndarray:
        context = np.asarray(context, dtype=np.float64)
        if context.shape != (self.spec.context_dim,):
            raise ShapeError(
                f"context shape {context.shape} != ({self.spec.context_dim},)"
            )
        return context

    def _check_params(self, params: ParamVector) -> None:
        if len(params) != self.param_count:
            raise ShapeError(
                f"param length {len(params)} != expected {self.param_count}"
            )

    # -- forward ----------------------------------------------------------

    def forward(self, params: ParamVector, context: np.ndarray):
        """Return (logits, hidden_or_None) for one context."""
        context = self._check_context(context)
        self._check_params(params)
        if self.spec.arch == "linear_softmax":
            return self._unpack_linear(params) @ context, None
        w1, b1, w2, b2 = self._unpack_mlp(params)
        h, logits = kernels.mlp_forward(w1, b1, w2, b2, context)
        return logits, h

    def distribution(self, params: ParamVector, context: np.ndarray):
        """Return (probs, log_probs) over actions, stable under extreme logits."""
        logits, _ = self.forward(params, context)
        log_probs = kernels.log_softmax(logits)
        return np.exp(log_probs), log_probs

    def action_distribution(self, params: ParamVector, context: np.ndarray) -> np.ndarray:
        return self.distribution(params, context)[0]

    # -- gradients ----------------------------------------------------------

    def grad_from_dlogits(
        self,
        params: ParamVector,
        context: np.ndarray,
        dlogits: np.ndarray,
        hidden: np.ndarray | None = None,
    ) -> ParamVector:
        """Map a gradient w.r.t. the logits back to parameter space."""
        context = self._check_context(context)
        if self.spec.arch == "linear_softmax":
            return ParamVector(np.outer(dlogits, context).ravel(), self.segments)
        w1, b1, w2, b2 = self._unpack_mlp(params)
        if hidden is None:
            hidden, _ = kernels.mlp_forward(w1, b1, w2, b2, context)
        dw1, db1, dw2, db2 = kernels.mlp_backward(dlogits, hidden, context, w2)
        values = np.concatenate([dw1.ravel(), db1, dw2.ravel(), db2])
        return ParamVector(values, self.segments)

    def grad_log_prob(
        self, params: ParamVector, context: np.ndarray, action: int
    ) -> ParamVector:
        """Closed-form gradient of log pi(action | context) w.r.t. params."""
        if not 0 <= action < self.spec.action_count:
            raise ContractError(f"action {action} out of range")
        logits, hidden = self.forward(params, context)
        probs = np.exp(kernels.log_softmax(logits))
        dlogits = -probs
        dlogits[action] += 1.0
        return self.grad_from_dlogits(params, context, dlogits, hidden)

    def log_prob(self, params: ParamVector, context: np.ndarray, action: int) -> float:
        logits, _ = self.forward(params, context)
        return float(kernels.log_softmax(logits)[action])

    def finite_diff_grad(
        self, params: ParamVector, context: np.ndarray, action: int, step: float
    ) -> ParamVector:
        """Central-difference oracle for grad_log_prob; test use only."""
        if step <= 0:
            raise ContractError("finite-difference step must be > 0")
        base = params.values
        grad = np.empty_like(base)
        for i in range(base.shape[0]):
            bumped = base.copy()
            bumped[i] = base[i] + step
            hi = self.log_prob(params.with_values(bumped), context, action)
            bumped[i] = base[i] - step
            lo = self.log_prob(params.with_values(bumped), context, action)
            grad[i] = (hi - lo) / (2.0 * step)
        return ParamVector(grad, self.segments)
