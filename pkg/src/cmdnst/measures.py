"""Empirical measures over feature maps and their marginal central moments.

A feature map of shape (C, n) is read as n equal-weight samples in R^C, one
per spatial position; the spatial layout is discarded on purpose. Moments are
population moments of that empirical measure:

    c_1     = mean over samples, per channel
    c_i     = mean of (x - c_1)^i over samples, per channel, for i >= 2

Keeping tensors throughout makes every operation differentiable with respect
to the underlying feature values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import torch
from torch import Tensor

from .errors import ContractViolationError, InvalidInputError


def _as_2d_tensor(values) -> Tensor:
    t = torch.as_tensor(values)
    if not t.is_floating_point():
        t = t.to(torch.get_default_dtype())
    if t.ndim != 2:
        raise InvalidInputError(f"expected a 2-d array, got shape {tuple(t.shape)}")
    return t


@dataclass(frozen=True)
class FeatureMap:
    """Encoder activations at one layer, reshaped to channels x samples.

    ``values`` has shape (C, n) with n = H * W; column j holds the C-vector
    at spatial position j. Entries are assumed finite.
    """

    layer_id: str
    values: Tensor

    def __post_init__(self):
        object.__setattr__(self, "values", _as_2d_tensor(self.values))
        if self.values.numel() == 0:
            raise InvalidInputError(
                f"feature map '{self.layer_id}' is empty (shape {tuple(self.values.shape)})"
            )

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def n_samples(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Uniform-weight atomic distribution over n samples in R^C.

    ``samples`` has shape (n, C); every atom carries weight 1/n. When
    ``support_bounded`` is set, every coordinate must lie in [0, 1]; this is
    verified at construction and is a precondition for the central-moment
    style loss.
    """

    samples: Tensor
    support_bounded: bool = False

    def __post_init__(self):
        object.__setattr__(self, "samples", _as_2d_tensor(self.samples))
        if self.samples.numel() == 0:
            raise InvalidInputError("an empirical measure needs at least one sample")
        if self.support_bounded and not _in_unit_interval(self.samples):
            raise ContractViolationError(
                "support_bounded is set but some coordinate lies outside [0, 1]"
            )

    @classmethod
    def from_samples(cls, samples) -> "EmpiricalMeasure":
        """Build a measure, detecting [0,1] support automatically."""
        t = _as_2d_tensor(samples)
        return cls(samples=t, support_bounded=_in_unit_interval(t))

    @classmethod
    def _from_bounded(cls, samples: Tensor) -> "EmpiricalMeasure":
        # caller must guarantee samples already lie in [0,1] (and are 2-d
        # non-empty); skips the construction-time scan on the hot path
        m = object.__new__(cls)
        object.__setattr__(m, "samples", samples)
        object.__setattr__(m, "support_bounded", True)
        return m

    @property
    def size(self) -> int:
        return self.samples.shape[0]

    @property
    def dimension(self) -> int:
        return self.samples.shape[1]


def _in_unit_interval(t: Tensor) -> bool:
    with torch.no_grad():
        return bool(((t >= 0.0) & (t <= 1.0)).all())


@dataclass(frozen=True)
class MomentSummary:
    """Per-channel mean plus marginal central moments of orders 2..K."""

    mean: Tensor
    central: tuple = field(default_factory=tuple)

    @property
    def order(self) -> int:
        return 1 + len(self.central)

    def moment(self, i: int) -> Tensor:
        """Return c_i: the mean for i = 1, the i-th central moment otherwise."""
        if i == 1:
            return self.mean
        if 2 <= i <= self.order:
            return self.central[i - 2]
        raise InvalidInputError(f"moment order {i} not available (have 1..{self.order})")


def feature_map_to_measure(feature_map: FeatureMap) -> EmpiricalMeasure:
    """View a (C, n) feature map as n samples in R^C with weight 1/n each.

    Column order carries no meaning in the result; measures built from
    column-permuted maps are equal as multisets.
    """
    values = feature_map.values
    if values.numel() == 0:
        raise InvalidInputError(f"feature map '{feature_map.layer_id}' is empty")
    return EmpiricalMeasure.from_samples(values.transpose(0, 1))


def sigmoid_transform(measure: EmpiricalMeasure) -> EmpiricalMeasure:
    """Map every coordinate through the logistic function 1 / (1 + exp(-x)).

    The image of the map lies in (0, 1), so the result always has bounded
    support; the transform is smooth, hence gradients pass through.
    """
    return EmpiricalMeasure._from_bounded(torch.sigmoid(measure.samples))


def marginal_central_moments(measure: EmpiricalMeasure, n_moments: int) -> MomentSummary:
    """Compute c_1..c_K per channel with the population (divide-by-n) convention.

    Two passes: the mean first, then powers of the centered samples, which
    avoids the cancellation of one-pass raw-moment formulas.
    """
    if not isinstance(n_moments, int) or isinstance(n_moments, bool) or n_moments < 1:
        raise InvalidInputError(f"n_moments must be an integer >= 1, got {n_moments!r}")
    samples = measure.samples
    mean = samples.mean(dim=0)
    if n_moments == 1:
        return MomentSummary(mean=mean)
    centered = samples - mean
    central = []
    power = centered
    for _ in range(2, n_moments + 1):
        power = power * centered
        central.append(power.mean(dim=0))
    return MomentSummary(mean=mean, central=tuple(central))


def moment_gaps(p: EmpiricalMeasure, q: EmpiricalMeasure, n_moments: int) -> dict[int, float]:
    """Euclidean gap per moment order: {i: ||c_i(p) - c_i(q)||_2} for i = 1..K."""
    if p.dimension != q.dimension:
        raise InvalidInputError(
            f"dimension mismatch: {p.dimension} vs {q.dimension}"
        )
    mp = marginal_central_moments(p, n_moments)
    mq = marginal_central_moments(q, n_moments)
    with torch.no_grad():
        return {
            i: float(torch.linalg.vector_norm(mp.moment(i) - mq.moment(i)))
            for i in range(1, n_moments + 1)
        }
