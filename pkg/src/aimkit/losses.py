"""The nine training losses and the three composite objectives.

Every loss is a differentiable scalar built from autodiff primitives.
Probabilities are clamped at 1e-12 before logs.  The binary-notation
domain and identity losses are implemented as their multi-class softmax
cross-entropy generalization (they reduce to the binary form for two
classes); the adversarial losses keep the exact sign-flipped objective,
so the generator terms are the same expressions entering the composites
with negative weights.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError, NumericError, UsageError

LOG_CLAMP = 1e-12
LOSS_NAMES = ("cad", "cer", "adv1", "ip", "adv2", "ae", "mc", "tv", "att")


@dataclass
class LossWeights:
    """The fourteen weighting factors, in their canonical order.

    cad, cer, adv1, ip, adv2_enc, ae_enc, mc_enc, tv_enc, att_enc weight
    the encoder objective; adv2_dec..att_dec weight the decoder objective.
    ``cad`` doubles as the gradient reversal coefficient.
    """

    cad: float = 0.1
    cer: float = 0.1
    adv1: float = 0.01
    ip: float = 1.0
    adv2_enc: float = 0.01
    ae_enc: float = 0.05
    mc_enc: float = 0.1
    tv_enc: float = 1e-5
    att_enc: float = 0.03
    adv2_dec: float = 0.01
    ae_dec: float = 0.05
    mc_dec: float = 0.1
    tv_dec: float = 1e-5
    att_dec: float = 0.03

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise UsageError(f"loss weight {f.name} must be non-negative")

    def to_tuple(self) -> tuple:
        return tuple(getattr(self, f.name) for f in fields(self))

    @classmethod
    def from_tuple(cls, values) -> "LossWeights":
        names = [f.name for f in fields(cls)]
        if len(values) != len(names):
            raise UsageError(f"expected {len(names)} weights, got {len(values)}")
        return cls(**dict(zip(names, values)))


class AdversarialPair(NamedTuple):
    """Discriminator loss and the identical expression entering the
    generator composites with a negative weight (saturating objective)."""

    d_loss: Tensor
    g_term: Tensor


def _clamped_log(x: Tensor) -> Tensor:
    return ad.log(ad.clamp_min(x, LOG_CLAMP))


def _one_hot(labels, num_classes: int, dtype) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise UsageError(f"labels must be a 1-D integer array, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise UsageError(f"labels must lie in 0..{num_classes - 1}")
    out = np.zeros((len(labels), num_classes), dtype=dtype)
    out[np.arange(len(labels)), labels] = 1
    return out


def _flat_mean(x: Tensor) -> Tensor:
    return ad.mean(ad.reshape(x, (-1,)))


def loss_cad(domain_probs: Tensor, domain_labels) -> Tensor:
    """Mean 7-way cross-entropy of the domain classifier.

    The probabilities are expected to come from a softmax downstream of
    the gradient reversal layer, so minimizing this loss through the
    classifier maximizes domain confusion for the encoder.
    """
    n, k = domain_probs.shape
    hot = _one_hot(domain_labels, k, domain_probs.data.dtype)
    picked = ad.sum_(ad.multiply(domain_probs, Tensor(hot)), axis=1)
    return -ad.mean(_clamped_log(picked))


def loss_cer(reg_probs: Tensor) -> Tensor:
    """Binary cross-entropy of every output against the smoothed label 1/7,
    summed over the 7 outputs and averaged over the batch."""
    dtype = reg_probs.data.dtype
    target = Tensor(np.asarray(1.0 / 7.0, dtype))
    one = Tensor(np.asarray(1.0, dtype))
    per_elem = ad.subtract(-ad.multiply(target, _clamped_log(reg_probs)),
                           ad.multiply(ad.subtract(one, target),
                                       _clamped_log(ad.subtract(one, reg_probs))))
    return ad.mean(ad.sum_(per_elem, axis=1))


def _binary_adversarial(real_scores: Tensor, fake_scores: Tensor) -> Tensor:
    one = Tensor(np.asarray(1.0, real_scores.data.dtype))
    real_term = -_flat_mean(_clamped_log(real_scores))
    fake_term = -_flat_mean(_clamped_log(ad.subtract(one, fake_scores)))
    return ad.add(real_term, fake_term)


def loss_adv1(prior_scores: Tensor, encoded_scores: Tensor) -> AdversarialPair:
    """Latent-space adversarial loss; the uniform-prior sample is 'real'."""
    value = _binary_adversarial(prior_scores, encoded_scores)
    return AdversarialPair(value, value)


def loss_ip(identity_logits: Tensor, identity_labels) -> Tensor:
    """Mean n-way softmax cross-entropy over identities."""
    n, k = identity_logits.shape
    hot = _one_hot(identity_labels, k, identity_logits.data.dtype)
    probs = ad.softmax(identity_logits, axis=1)
    picked = ad.sum_(ad.multiply(probs, Tensor(hot)), axis=1)
    return -ad.mean(_clamped_log(picked))


def loss_adv2(fake_patch_scores: Tensor, real_patch_scores: Tensor) -> AdversarialPair:
    """Patch adversarial loss, averaged uniformly over all patches."""
    if fake_patch_scores.size != real_patch_scores.size:
        raise UsageError(
            f"patch count mismatch: {fake_patch_scores.size} fake vs {real_patch_scores.size} real")
    value = _binary_adversarial(real_patch_scores, fake_patch_scores)
    return AdversarialPair(value, value)


def age_regression(age_est: Tensor, target_codes) -> Tensor:
    """Mean squared distance of one age estimate from the target code."""
    codes = target_codes if isinstance(target_codes, Tensor) else Tensor(
        np.asarray(target_codes, age_est.data.dtype))
    if age_est.shape != codes.shape:
        raise DimensionError(f"age estimate {age_est.shape} does not match codes {codes.shape}")
    return ad.mean(ad.sum_(ad.square(ad.subtract(age_est, codes)), axis=1))


def loss_ae(age_est_fake: Tensor, age_est_real: Tensor, target_codes) -> Tensor:
    """Squared distances of both age estimates from the target code."""
    return ad.add(age_regression(age_est_fake, target_codes),
                  age_regression(age_est_real, target_codes))


def loss_mc(synthesized: Tensor, x: Tensor) -> Tensor:
    """Mean squared pixel difference (squared norm over the image size)."""
    if synthesized.shape != x.shape:
        raise DimensionError(f"shape mismatch: {synthesized.shape} vs {x.shape}")
    return ad.mean(ad.square(ad.subtract(synthesized, x)))


def _tv_terms(img: Tensor) -> Tensor:
    """Sum of squared horizontal and vertical forward differences, averaged
    over the batch dimension."""
    if img.ndim != 4:
        raise DimensionError(f"expected (N,C,H,W) images, got {img.shape}")
    n = img.shape[0]
    h_diff = ad.subtract(img[:, :, :, 1:], img[:, :, :, :-1])
    v_diff = ad.subtract(img[:, :, 1:, :], img[:, :, :-1, :])
    total = ad.add(ad.sum_(ad.square(h_diff)), ad.sum_(ad.square(v_diff)))
    return ad.multiply(total, Tensor(np.asarray(1.0 / n, img.data.dtype)))


def loss_tv(img: Tensor) -> Tensor:
    """Total-variation penalty discouraging spiky artifacts."""
    return _tv_terms(img)


def loss_att(attention: Tensor) -> Tensor:
    """Attention smoothness (total variation) plus squared-norm sparsity."""
    n = attention.shape[0]
    norm = ad.multiply(ad.sum_(ad.square(attention)),
                       Tensor(np.asarray(1.0 / n, attention.data.dtype)))
    return ad.add(_tv_terms(attention), norm)


# ---------------------------------------------------------------------------
# composites

def _require(parts, names):
    missing = [name for name in names if name not in parts]
    if missing:
        raise UsageError(f"missing loss parts: {', '.join(missing)}")


def composite_encoder_loss(parts, weights: LossWeights):
    """Signed weighted sum driving the encoder (adversarial terms negative)."""
    _require(parts, LOSS_NAMES)
    w = weights
    return (-w.cad * parts["cad"] + w.cer * parts["cer"] - w.adv1 * parts["adv1"]
            + w.ip * parts["ip"] - w.adv2_enc * parts["adv2"] + w.ae_enc * parts["ae"]
            + w.mc_enc * parts["mc"] + w.tv_enc * parts["tv"] + w.att_enc * parts["att"])


def composite_decoder_loss(parts, weights: LossWeights):
    """Signed weighted sum driving the decoder."""
    _require(parts, ("adv2", "ae", "mc", "tv", "att"))
    w = weights
    return (-w.adv2_dec * parts["adv2"] + w.ae_dec * parts["ae"] + w.mc_dec * parts["mc"]
            + w.tv_dec * parts["tv"] + w.att_dec * parts["att"])


def overall_loss(parts, weights: LossWeights):
    """The overall objective; identical in form to the encoder composite."""
    return composite_encoder_loss(parts, weights)


# ---------------------------------------------------------------------------
# reporting

@dataclass
class LossReport:
    """Per-step scalar values for all nine losses and the composites."""

    step: int
    values: dict
    encoder_composite: float
    decoder_composite: float
    overall: float

    CSV_HEADER = ("step," + ",".join(LOSS_NAMES)
                  + ",encoder_composite,decoder_composite,overall")

    def validate_finite(self):
        for name in LOSS_NAMES:
            if not np.isfinite(self.values.get(name, 0.0)):
                raise NumericError(f"loss {name} is non-finite at step {self.step}")
        for label, v in (("encoder_composite", self.encoder_composite),
                         ("decoder_composite", self.decoder_composite),
                         ("overall", self.overall)):
            if not np.isfinite(v):
                raise NumericError(f"{label} is non-finite at step {self.step}")

    def csv_row(self) -> str:
        cells = [str(self.step)]
        cells += [repr(float(self.values.get(name, 0.0))) for name in LOSS_NAMES]
        cells += [repr(float(self.encoder_composite)), repr(float(self.decoder_composite)),
                  repr(float(self.overall))]
        return ",".join(cells)

    @classmethod
    def from_parts(cls, step: int, parts: dict, weights: LossWeights) -> "LossReport":
        values = {name: float(v.item() if isinstance(v, Tensor) else v)
                  for name, v in parts.items()}
        full = {name: values.get(name, 0.0) for name in LOSS_NAMES}
        return cls(step=step, values=values,
                   encoder_composite=float(composite_encoder_loss(full, weights)),
                   decoder_composite=float(composite_decoder_loss(full, weights)),
                   overall=float(overall_loss(full, weights)))
