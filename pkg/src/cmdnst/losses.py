"""Style and content losses over encoder feature maps.

Four interchangeable style-loss families, all differentiable in the feature
values of the first argument:

* ``cmd_loss``          weighted sum of Euclidean gaps between marginal
                        central moments of orders 1..K (a central moment
                        discrepancy); requires both measures to live in
                        [0, 1]^C.
* ``mmd_gram_loss``     squared Frobenius gap between channel Gram matrices;
                        identical to the quadratic-kernel MMD^2 V-statistic
                        up to the constant 1 / (4 C^2).
* ``moment_match_loss`` squared gaps of per-channel means and standard
                        deviations (batch-norm statistics).
* ``gaussian_w2_loss``  squared 2-Wasserstein distance between the Gaussians
                        fitted to each map (Bures metric between covariances).

``total_loss`` mixes a content term and a layer-weighted style term with a
convex weight alpha.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Mapping, NamedTuple, Sequence

import torch
from torch import Tensor

from .errors import ConfigError, ContractViolationError, InvalidInputError, NumericError
from .measures import EmpiricalMeasure, FeatureMap, marginal_central_moments


class LossFamily(str, enum.Enum):
    CMD = "cmd"
    MMD_GRAM = "mmd_gram"
    MOMENT_MATCH = "moment_match"
    GAUSSIAN_OT = "gaussian_ot"


_FAMILY_ALIASES = {
    "cmd": LossFamily.CMD,
    "mmd": LossFamily.MMD_GRAM,
    "gram": LossFamily.MMD_GRAM,
    "mmd_gram": LossFamily.MMD_GRAM,
    "mm": LossFamily.MOMENT_MATCH,
    "moment_match": LossFamily.MOMENT_MATCH,
    "ot": LossFamily.GAUSSIAN_OT,
    "w2": LossFamily.GAUSSIAN_OT,
    "gaussian_ot": LossFamily.GAUSSIAN_OT,
}


def parse_family(name: str | LossFamily) -> LossFamily:
    """Resolve a loss-family name or alias (cmd, mmd, gram, mm, ot, w2)."""
    if isinstance(name, LossFamily):
        return name
    try:
        return _FAMILY_ALIASES[str(name).strip().lower()]
    except KeyError:
        raise ConfigError(
            f"unknown loss family {name!r}; expected one of {sorted(_FAMILY_ALIASES)}"
        ) from None


@dataclass
class StyleLossConfig:
    """Which style loss to use and how to weight layers and moment orders.

    ``moment_weights`` applies to the CMD family only; entry i weights the
    order-(i+1) moment gap and its length fixes the moment order K. When left
    unset it defaults to all ones of length ``n_moments``.
    """

    family: LossFamily
    layer_weights: Mapping[str, float]
    n_moments: int = 5
    moment_weights: tuple[float, ...] | None = None

    def __post_init__(self):
        self.family = parse_family(self.family)
        if not self.layer_weights:
            raise ConfigError("layer_weights must name at least one layer")
        weights = {str(k): float(v) for k, v in dict(self.layer_weights).items()}
        for layer, w in weights.items():
            if not math.isfinite(w) or w < 0.0:
                raise ConfigError(f"layer weight for {layer!r} must be finite and >= 0, got {w}")
        self.layer_weights = weights
        if self.moment_weights is not None:
            self.moment_weights = tuple(float(a) for a in self.moment_weights)
            self.n_moments = len(self.moment_weights)
        if not isinstance(self.n_moments, int) or self.n_moments < 1:
            raise ConfigError(f"n_moments must be an integer >= 1, got {self.n_moments!r}")
        if self.moment_weights is None:
            self.moment_weights = (1.0,) * self.n_moments
        if any(a < 0 for a in self.moment_weights):
            raise ConfigError("moment weights must be non-negative")
        if self.family is LossFamily.CMD and not any(a > 0 for a in self.moment_weights):
            raise ConfigError("CMD needs at least one positive moment weight")


def equal_layer_weights(layers: Sequence[str]) -> dict[str, float]:
    """Uniform weights 1 / L over the named layers, preserving order."""
    names = [str(l) for l in layers]
    if not names:
        raise ConfigError("need at least one layer name")
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate layer names in {names}")
    return {name: 1.0 / len(names) for name in names}


class LossParts(NamedTuple):
    total: Tensor
    content: Tensor
    style: Tensor


def _safe_norm(diff: Tensor) -> Tensor:
    """Euclidean norm that is exactly 0 with a zero gradient at diff == 0.

    sqrt is not differentiable at 0; clamping the squared sum away from zero
    inside the untaken branch keeps backward finite without changing values.
    """
    sum_sq = (diff * diff).sum()
    tiny = torch.finfo(sum_sq.dtype).tiny
    safe = torch.sqrt(torch.clamp(sum_sq, min=tiny))
    return torch.where(sum_sq > 0, safe, sum_sq * 0.0)


def cmd_loss(
    p: EmpiricalMeasure,
    q: EmpiricalMeasure,
    moment_weights: Sequence[float],
    n_moments: int | None = None,
) -> Tensor:
    """Central moment discrepancy: sum_i a_i * ||c_i(p) - c_i(q)||_2.

    Both measures must have support in [0, 1] (see ``sigmoid_transform``).
    Entry i of ``moment_weights`` weights order i+1; order 1 is the mean.
    """
    weights = [float(a) for a in moment_weights]
    if n_moments is None:
        n_moments = len(weights)
    if n_moments != len(weights):
        raise InvalidInputError(
            f"n_moments ({n_moments}) must equal len(moment_weights) ({len(weights)})"
        )
    if not weights:
        raise InvalidInputError("moment_weights must not be empty")
    if any(a < 0 for a in weights):
        raise InvalidInputError("moment weights must be non-negative")
    for name, m in (("p", p), ("q", q)):
        if not m.support_bounded:
            raise ContractViolationError(
                f"measure {name} does not have [0,1]-bounded support; "
                "apply sigmoid_transform first"
            )
    if p.dimension != q.dimension:
        raise InvalidInputError(
            f"dimension mismatch: p has {p.dimension} channels, q has {q.dimension}"
        )
    mq = marginal_central_moments(q, n_moments)
    target = tuple(mq.moment(i) for i in range(1, n_moments + 1))
    return _cmd_against_moments(p, target, weights)


def _cmd_against_moments(
    p: EmpiricalMeasure, target_moments: Sequence[Tensor], weights: Sequence[float]
) -> Tensor:
    mp = marginal_central_moments(p, len(weights))
    out = tuple(mp.moment(i) for i in range(1, len(weights) + 1))
    return _cmd_sum(out, target_moments, weights)


def _cmd_sum(
    out_moments: Sequence[Tensor], target_moments: Sequence[Tensor], weights: Sequence[float]
) -> Tensor:
    total = out_moments[0].new_zeros(())
    for a, mo, mt in zip(weights, out_moments, target_moments):
        if a == 0.0:
            continue
        total = total + a * _safe_norm(mo - mt)
    return total


def _sigmoid_moments(values: Tensor, n_moments: int) -> tuple[Tensor, ...]:
    """c_1..c_K per channel of the sigmoid-wrapped values of a (C, n) map.

    Reductions run along the sample dimension, which is contiguous for
    encoder feature maps. Both sides of the style comparison use this
    function, so equal inputs give exactly equal moments.
    """
    s = torch.sigmoid(values)
    mean = s.mean(dim=1)
    moments = [mean]
    if n_moments > 1:
        centered = s - mean[:, None]
        power = centered
        for _ in range(2, n_moments + 1):
            power = power * centered
            moments.append(power.mean(dim=1))
    return tuple(moments)


def gram_matrix(feature_map: FeatureMap) -> Tensor:
    """Channel correlation matrix F F^T / n of a (C, n) feature map."""
    values = feature_map.values
    return values @ values.transpose(0, 1) / values.shape[1]


def mmd_gram_loss(f_out: FeatureMap, f_style: FeatureMap) -> Tensor:
    """||G_out - G_style||_F^2 / (4 C^2), each Gram normalized by its own n.

    Equal to the biased (V-statistic) estimate of MMD^2 with the quadratic
    kernel k(x, y) = (x^T y)^2, divided by 4 C^2.
    """
    _require_same_channels(f_out, f_style)
    c = f_out.channels
    diff = gram_matrix(f_out) - gram_matrix(f_style)
    return (diff * diff).sum() / (4.0 * c * c)


def moment_match_loss(f_out: FeatureMap, f_style: FeatureMap) -> Tensor:
    """Sum over channels of squared mean and standard-deviation gaps.

    Standard deviations use the population convention (divide by n).
    """
    _require_same_channels(f_out, f_style)
    mu_o, sd_o = _channel_stats(f_out.values)
    mu_s, sd_s = _channel_stats(f_style.values)
    return ((mu_o - mu_s) ** 2).sum() + ((sd_o - sd_s) ** 2).sum()


def _channel_stats(values: Tensor) -> tuple[Tensor, Tensor]:
    mu = values.mean(dim=1)
    var = ((values - mu[:, None]) ** 2).mean(dim=1)
    # clamp keeps the sqrt gradient finite for exactly-constant channels
    sd = torch.sqrt(torch.clamp(var, min=torch.finfo(var.dtype).tiny))
    return mu, sd


def gaussian_w2_loss(f_out: FeatureMap, f_style: FeatureMap) -> Tensor:
    """Squared 2-Wasserstein distance between Gaussian fits of the two maps.

    ||mu_o - mu_s||^2 + Tr(S_o + S_s - 2 (S_o^1/2 S_s S_o^1/2)^1/2) with
    empirical (population) means and covariances. Matrix square roots come
    from symmetric eigendecompositions with eigenvalues clamped at zero; a
    1e-8 ridge is added when a covariance is necessarily rank-deficient
    (n <= C). Round-off from the eigendecompositions is clamped so the result
    is never negative.
    """
    _require_same_channels(f_out, f_style)
    for fm in (f_out, f_style):
        if fm.n_samples < 2:
            raise InvalidInputError(
                f"covariance of '{fm.layer_id}' needs at least 2 samples, got {fm.n_samples}"
            )
    mu_o, cov_o = _mean_and_covariance(f_out)
    mu_s, cov_s = _mean_and_covariance(f_style)
    return _w2_from_gaussians(mu_o, cov_o, mu_s, cov_s)


def _w2_from_gaussians(mu_o: Tensor, cov_o: Tensor, mu_s: Tensor, cov_s: Tensor) -> Tensor:
    root_o = _spd_sqrt(cov_o)
    inner = root_o @ cov_s @ root_o
    inner = (inner + inner.transpose(0, 1)) / 2
    cross = _sqrt_eigvals(inner).sum()
    w2 = ((mu_o - mu_s) ** 2).sum() + torch.diagonal(cov_o).sum() + torch.diagonal(
        cov_s
    ).sum() - 2.0 * cross
    return torch.clamp(w2, min=0.0)


def _mean_and_covariance(fm: FeatureMap) -> tuple[Tensor, Tensor]:
    values = fm.values
    mu = values.mean(dim=1)
    centered = values - mu[:, None]
    cov = centered @ centered.transpose(0, 1) / values.shape[1]
    if not bool(torch.isfinite(cov).all()) or not bool(torch.isfinite(mu).all()):
        raise NumericError(f"non-finite covariance statistics for '{fm.layer_id}'")
    if values.shape[1] <= values.shape[0]:
        cov = cov + 1e-8 * torch.eye(cov.shape[0], dtype=cov.dtype, device=cov.device)
    return mu, cov


def _sqrt_eigvals(sym: Tensor) -> Tensor:
    eigvals = torch.linalg.eigvalsh(sym)
    return torch.sqrt(torch.clamp(eigvals, min=torch.finfo(sym.dtype).tiny))


def _spd_sqrt(sym: Tensor) -> Tensor:
    eigvals, eigvecs = torch.linalg.eigh(sym)
    root = torch.sqrt(torch.clamp(eigvals, min=torch.finfo(sym.dtype).tiny))
    return (eigvecs * root) @ eigvecs.transpose(0, 1)


def content_loss(f_out: FeatureMap, f_content: FeatureMap) -> Tensor:
    """Mean squared difference over all entries (constant 1 / (C n))."""
    if f_out.values.shape != f_content.values.shape:
        raise InvalidInputError(
            f"shape mismatch: {tuple(f_out.values.shape)} vs {tuple(f_content.values.shape)}"
        )
    diff = f_out.values - f_content.values
    return (diff * diff).mean()


@dataclass(frozen=True)
class StyleTargetStats:
    """Fixed target-side statistics for one layer, precomputed once per run.

    What ``tensors`` holds depends on the family: the K central-moment
    vectors of the sigmoid-wrapped measure for CMD, the Gram matrix for
    MMD_GRAM, per-channel (mean, std) for MOMENT_MATCH, and (mean,
    covariance) for GAUSSIAN_OT.
    """

    family: LossFamily
    layer_id: str
    channels: int
    n_moments: int
    tensors: tuple[Tensor, ...]


def prepare_style_state(f_style: FeatureMap, config: StyleLossConfig) -> StyleTargetStats:
    """Reduce a style feature map to the statistics its family compares against."""
    with torch.no_grad():
        if config.family is LossFamily.CMD:
            tensors = _sigmoid_moments(f_style.values, config.n_moments)
        elif config.family is LossFamily.MMD_GRAM:
            tensors = (gram_matrix(f_style),)
        elif config.family is LossFamily.MOMENT_MATCH:
            tensors = _channel_stats(f_style.values)
        elif config.family is LossFamily.GAUSSIAN_OT:
            if f_style.n_samples < 2:
                raise InvalidInputError(
                    f"covariance of '{f_style.layer_id}' needs at least 2 samples"
                )
            tensors = _mean_and_covariance(f_style)
        else:
            raise ConfigError(f"unhandled loss family {config.family!r}")
    return StyleTargetStats(
        family=config.family,
        layer_id=f_style.layer_id,
        channels=f_style.channels,
        n_moments=config.n_moments,
        tensors=tensors,
    )


def style_layer_loss(
    f_out: FeatureMap, f_style: FeatureMap | StyleTargetStats, config: StyleLossConfig
) -> Tensor:
    """Single-layer style loss under the configured family.

    ``f_style`` may be a raw feature map or the precomputed statistics from
    ``prepare_style_state``; both give identical values.
    """
    if isinstance(f_style, FeatureMap):
        f_style = prepare_style_state(f_style, config)
    stats = f_style
    if stats.family is not config.family:
        raise InvalidInputError(
            f"style stats for '{stats.layer_id}' were prepared for family "
            f"{stats.family.value}, not {config.family.value}"
        )
    if stats.channels != f_out.channels:
        raise InvalidInputError(
            f"channel mismatch: '{f_out.layer_id}' has {f_out.channels}, "
            f"'{stats.layer_id}' has {stats.channels}"
        )
    if config.family is LossFamily.CMD:
        if stats.n_moments != config.n_moments:
            raise InvalidInputError(
                f"style stats hold {stats.n_moments} moment orders, config wants "
                f"{config.n_moments}"
            )
        out_moments = _sigmoid_moments(f_out.values, config.n_moments)
        return _cmd_sum(out_moments, stats.tensors, config.moment_weights)
    if config.family is LossFamily.MMD_GRAM:
        c = f_out.channels
        diff = gram_matrix(f_out) - stats.tensors[0]
        return (diff * diff).sum() / (4.0 * c * c)
    if config.family is LossFamily.MOMENT_MATCH:
        mu_o, sd_o = _channel_stats(f_out.values)
        mu_s, sd_s = stats.tensors
        return ((mu_o - mu_s) ** 2).sum() + ((sd_o - sd_s) ** 2).sum()
    if config.family is LossFamily.GAUSSIAN_OT:
        if f_out.n_samples < 2:
            raise InvalidInputError(
                f"covariance of '{f_out.layer_id}' needs at least 2 samples"
            )
        mu_o, cov_o = _mean_and_covariance(f_out)
        mu_s, cov_s = stats.tensors
        return _w2_from_gaussians(mu_o, cov_o, mu_s, cov_s)
    raise ConfigError(f"unhandled loss family {config.family!r}")


def total_loss(
    features_out: Mapping[str, FeatureMap],
    features_content: Mapping[str, FeatureMap],
    features_style: Mapping[str, FeatureMap],
    config: StyleLossConfig,
    alpha: float,
    style_states: Mapping[str, StyleTargetStats] | None = None,
) -> LossParts:
    """alpha * content + (1 - alpha) * sum_l w_l * style_l.

    The content term sums over the layers present in ``features_content``;
    the style term iterates ``config.layer_weights`` in insertion order, so
    the summation order (and with it bit-level determinism) is fixed.
    ``style_states`` lets a caller reuse target statistics across calls; a
    layer absent from it falls back to ``features_style``.
    """
    alpha = float(alpha)
    if not (0.0 <= alpha <= 1.0):
        raise InvalidInputError(f"alpha must lie in [0, 1], got {alpha}")

    anchor = next(iter(features_out.values())).values
    content_part = anchor.new_zeros(())
    for layer, f_content in features_content.items():
        if layer not in features_out:
            raise InvalidInputError(f"content layer {layer!r} missing from output features")
        content_part = content_part + content_loss(features_out[layer], f_content)

    style_part = anchor.new_zeros(())
    for layer, weight in config.layer_weights.items():
        if weight == 0.0:
            continue
        if layer not in features_out:
            raise InvalidInputError(f"style layer {layer!r} missing from output features")
        if style_states is not None and layer in style_states:
            target: FeatureMap | StyleTargetStats = style_states[layer]
        elif layer in features_style:
            target = features_style[layer]
        else:
            raise InvalidInputError(f"style layer {layer!r} missing from style features")
        style_part = style_part + weight * style_layer_loss(
            features_out[layer], target, config
        )

    total = alpha * content_part + (1.0 - alpha) * style_part
    return LossParts(total=total, content=content_part, style=style_part)


def _require_same_channels(a: FeatureMap, b: FeatureMap) -> None:
    if a.channels != b.channels:
        raise InvalidInputError(
            f"channel mismatch: '{a.layer_id}' has {a.channels}, '{b.layer_id}' has {b.channels}"
        )
