"""Reconstruction, code-consistency, cyclic, adversarial, and classification
losses, and the two weighted objectives that train (encoders, decoder) and the
discriminator.

Every L1 term uses mean reduction so the default weights are resolution
independent. Loss functions credit the A side of a pair; the B side is
credited by calling them on ``PairForward.swapped()``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import torch
import torch.nn.functional as F

from .networks import Discriminator, ModelBundle

__all__ = [
    "GeneratorLossWeights",
    "DiscriminatorLossWeights",
    "PairForward",
    "NonFiniteTensorError",
    "compute_pair_forward",
    "recon_image_loss",
    "recon_class_code_loss",
    "recon_indiv_code_loss",
    "cycle_loss",
    "adv_loss_generator",
    "cls_loss_generator",
    "generator_loss_terms",
    "generator_objective",
    "discriminator_loss_terms",
    "discriminator_objective",
    "fused_generator_terms",
    "fused_discriminator_terms",
]

REAL_SLOT = 1  # realness-head logit index for "real"; 0 is "fake"
FAKE_SLOT = 0


class NonFiniteTensorError(RuntimeError):
    """A tensor involved in a loss contains NaN or Inf; carries the tensor name."""

    def __init__(self, name: str):
        super().__init__(f"non-finite values in tensor {name!r}")
        self.tensor_name = name


def _require_finite(name: str, t: torch.Tensor) -> torch.Tensor:
    if not torch.isfinite(t).all():
        raise NonFiniteTensorError(name)
    return t


@dataclass(frozen=True)
class GeneratorLossWeights:
    """Weights for the encoder/decoder objective, in term order."""

    recon_image: float = 10.0
    recon_class_code: float = 1.0
    recon_indiv_code: float = 1.0
    cycle: float = 10.0
    adversarial: float = 1.0
    classification: float = 1.0

    def __post_init__(self):
        for name, v in self.__dict__.items():
            if v < 0:
                raise ValueError(f"{name} must be nonnegative, got {v}")


@dataclass(frozen=True)
class DiscriminatorLossWeights:
    adversarial: float = 1.0
    classification: float = 2.0

    def __post_init__(self):
        for name, v in self.__dict__.items():
            if v < 0:
                raise ValueError(f"{name} must be nonnegative, got {v}")


@dataclass(frozen=True)
class PairForward:
    """All intermediate tensors of one shuffled cross-class pair.

    ``cross_a`` wears A's individual style with B's class code; re-encoding it
    gives ``c_from_cross_a`` (should match ``c_b``) and ``s_from_cross_a``
    (should match ``s_a``); decoding (``c_a``, ``s_from_cross_a``) closes the
    cycle as ``cycle_a``. Mirrored fields for B.
    """

    x_a: torch.Tensor
    x_b: torch.Tensor
    y_a: torch.Tensor
    y_b: torch.Tensor
    c_a: torch.Tensor
    c_b: torch.Tensor
    s_a: torch.Tensor
    s_b: torch.Tensor
    recon_a: torch.Tensor
    recon_b: torch.Tensor
    cross_a: torch.Tensor
    cross_b: torch.Tensor
    c_from_cross_a: torch.Tensor
    c_from_cross_b: torch.Tensor
    s_from_cross_a: torch.Tensor
    s_from_cross_b: torch.Tensor
    cycle_a: torch.Tensor
    cycle_b: torch.Tensor

    def swapped(self) -> "PairForward":
        """The same forward with the roles of A and B exchanged."""
        return replace(
            self,
            x_a=self.x_b, x_b=self.x_a,
            y_a=self.y_b, y_b=self.y_a,
            c_a=self.c_b, c_b=self.c_a,
            s_a=self.s_b, s_b=self.s_a,
            recon_a=self.recon_b, recon_b=self.recon_a,
            cross_a=self.cross_b, cross_b=self.cross_a,
            c_from_cross_a=self.c_from_cross_b, c_from_cross_b=self.c_from_cross_a,
            s_from_cross_a=self.s_from_cross_b, s_from_cross_b=self.s_from_cross_a,
            cycle_a=self.cycle_b, cycle_b=self.cycle_a,
        )


def compute_pair_forward(
    bundle: ModelBundle,
    x_a: torch.Tensor,
    x_b: torch.Tensor,
    y_a: torch.Tensor,
    y_b: torch.Tensor,
) -> PairForward:
    """Run the swap / re-encode / swap-back schema for a batch of pairs.

    The A and B sides (and all four first-round decodes) go through each
    network as single batched calls.
    """
    enc_c, enc_s, dec = bundle.class_encoder, bundle.indiv_encoder, bundle.decoder
    n = x_a.shape[0]
    both = torch.cat([x_a, x_b])
    c = enc_c(both)
    s = enc_s(both)
    c_a, c_b = c[:n], c[n:]
    s_a, s_b = s[:n], s[n:]
    decoded = dec(torch.cat([c_a, c_b, c_b, c_a]), torch.cat([s_a, s_b, s_a, s_b]))
    recon_a, recon_b = decoded[:n], decoded[n : 2 * n]
    cross_a, cross_b = decoded[2 * n : 3 * n], decoded[3 * n :]
    crosses = decoded[2 * n :]
    c_from_cross = enc_c(crosses)
    s_from_cross = enc_s(crosses)
    c_from_cross_a, c_from_cross_b = c_from_cross[:n], c_from_cross[n:]
    s_from_cross_a, s_from_cross_b = s_from_cross[:n], s_from_cross[n:]
    cycles = dec(torch.cat([c_a, c_b]), s_from_cross)
    cycle_a, cycle_b = cycles[:n], cycles[n:]
    return PairForward(
        x_a=x_a, x_b=x_b, y_a=y_a, y_b=y_b,
        c_a=c_a, c_b=c_b, s_a=s_a, s_b=s_b,
        recon_a=recon_a, recon_b=recon_b,
        cross_a=cross_a, cross_b=cross_b,
        c_from_cross_a=c_from_cross_a, c_from_cross_b=c_from_cross_b,
        s_from_cross_a=s_from_cross_a, s_from_cross_b=s_from_cross_b,
        cycle_a=cycle_a, cycle_b=cycle_b,
    )


def _mean_abs(name_x: str, x: torch.Tensor, name_y: str, y: torch.Tensor) -> torch.Tensor:
    _require_finite(name_x, x)
    _require_finite(name_y, y)
    return (x - y).abs().mean()


def recon_image_loss(pf: PairForward) -> torch.Tensor:
    """Mean |decode(own codes) - input| for the A side."""
    return _mean_abs("recon_a", pf.recon_a, "x_a", pf.x_a)


def recon_class_code_loss(pf: PairForward) -> torch.Tensor:
    """Mean |re-encoded class code of the B-styled cross decode - c_a|."""
    return _mean_abs("c_from_cross_b", pf.c_from_cross_b, "c_a", pf.c_a)


def recon_indiv_code_loss(pf: PairForward) -> torch.Tensor:
    """Mean |re-encoded individual code of A's cross decode - s_a|."""
    return _mean_abs("s_from_cross_a", pf.s_from_cross_a, "s_a", pf.s_a)


def cycle_loss(pf: PairForward) -> torch.Tensor:
    """Mean |second-round decode - x_a| after swapping the class code back."""
    return _mean_abs("cycle_a", pf.cycle_a, "x_a", pf.x_a)


def _realness_nll(logits: torch.Tensor, slot: int) -> torch.Tensor:
    return -F.log_softmax(logits, dim=1)[:, slot].mean()


def adv_loss_generator(pf: PairForward, disc: Discriminator) -> torch.Tensor:
    """Realness loss pushing A's cross decode toward the real slot."""
    r_logits, _ = disc(pf.cross_a)
    _require_finite("realness_logits(cross_a)", r_logits)
    return _realness_nll(r_logits, REAL_SLOT)


def cls_loss_generator(
    pf: PairForward, disc: Discriminator, target: torch.Tensor | None = None
) -> torch.Tensor:
    """Class loss pushing A's cross decode toward the donor class y_b."""
    if target is None:
        target = pf.y_b
    _, c_logits = disc(pf.cross_a)
    _require_finite("class_logits(cross_a)", c_logits)
    if int(target.max()) >= c_logits.shape[1]:
        raise ValueError(
            f"target class {int(target.max())} >= class count {c_logits.shape[1]}"
        )
    return F.cross_entropy(c_logits, target)


def generator_loss_terms(pf: PairForward, disc: Discriminator) -> dict[str, torch.Tensor]:
    """Unweighted objective terms, each already summed over both directions."""
    sw = pf.swapped()
    return {
        "recon_image": recon_image_loss(pf) + recon_image_loss(sw),
        "recon_class_code": recon_class_code_loss(pf) + recon_class_code_loss(sw),
        "recon_indiv_code": recon_indiv_code_loss(pf) + recon_indiv_code_loss(sw),
        "cycle": cycle_loss(pf) + cycle_loss(sw),
        "adversarial": adv_loss_generator(pf, disc) + adv_loss_generator(sw, disc),
        "classification": cls_loss_generator(pf, disc) + cls_loss_generator(sw, disc),
    }


def generator_objective(
    pf: PairForward, disc: Discriminator, w: GeneratorLossWeights
) -> torch.Tensor:
    terms = generator_loss_terms(pf, disc)
    return (
        w.recon_image * terms["recon_image"]
        + w.recon_class_code * terms["recon_class_code"]
        + w.recon_indiv_code * terms["recon_indiv_code"]
        + w.cycle * terms["cycle"]
        + w.adversarial * terms["adversarial"]
        + w.classification * terms["classification"]
    )


def adv_loss_discriminator(pf: PairForward, disc: Discriminator) -> torch.Tensor:
    """Synthetic-to-fake plus real-to-real realness loss for the A-to-B direction.

    The cross decode enters detached: the discriminator update must not push
    gradients into the encoders or decoder.
    """
    r_fake, _ = disc(pf.cross_a.detach())
    r_real, _ = disc(pf.x_b)
    _require_finite("realness_logits(cross_a)", r_fake)
    _require_finite("realness_logits(x_b)", r_real)
    return _realness_nll(r_fake, FAKE_SLOT) + _realness_nll(r_real, REAL_SLOT)


def cls_loss_discriminator(pf: PairForward, disc: Discriminator) -> torch.Tensor:
    """Class cross-entropy on the real sample A."""
    _, c_logits = disc(pf.x_a)
    _require_finite("class_logits(x_a)", c_logits)
    return F.cross_entropy(c_logits, pf.y_a)


def discriminator_loss_terms(pf: PairForward, disc: Discriminator) -> dict[str, torch.Tensor]:
    sw = pf.swapped()
    return {
        "adversarial": adv_loss_discriminator(pf, disc) + adv_loss_discriminator(sw, disc),
        "classification": cls_loss_discriminator(pf, disc) + cls_loss_discriminator(sw, disc),
    }


def discriminator_objective(
    pf: PairForward, disc: Discriminator, w: DiscriminatorLossWeights
) -> torch.Tensor:
    terms = discriminator_loss_terms(pf, disc)
    return w.adversarial * terms["adversarial"] + w.classification * terms["classification"]


# --- fused variants -------------------------------------------------------
# Same terms as the per-direction ops above, but each discriminator pass runs
# once on concatenated inputs. Values agree with the unfused path up to
# float association order; the training loop uses these.

def fused_generator_terms(pf: PairForward, disc: Discriminator) -> dict[str, torch.Tensor]:
    sw = pf.swapped()
    n = pf.x_a.shape[0]
    synth = torch.cat([pf.cross_a, pf.cross_b])
    r_logits, c_logits = disc(synth)
    _require_finite("realness_logits(crosses)", r_logits)
    _require_finite("class_logits(crosses)", c_logits)
    if int(pf.y_a.max()) >= c_logits.shape[1] or int(pf.y_b.max()) >= c_logits.shape[1]:
        raise ValueError("target class out of range")
    return {
        "recon_image": recon_image_loss(pf) + recon_image_loss(sw),
        "recon_class_code": recon_class_code_loss(pf) + recon_class_code_loss(sw),
        "recon_indiv_code": recon_indiv_code_loss(pf) + recon_indiv_code_loss(sw),
        "cycle": cycle_loss(pf) + cycle_loss(sw),
        "adversarial": _realness_nll(r_logits[:n], REAL_SLOT)
        + _realness_nll(r_logits[n:], REAL_SLOT),
        "classification": F.cross_entropy(c_logits[:n], pf.y_b)
        + F.cross_entropy(c_logits[n:], pf.y_a),
    }


def fused_discriminator_terms(pf: PairForward, disc: Discriminator) -> dict[str, torch.Tensor]:
    n = pf.x_a.shape[0]
    fakes = torch.cat([pf.cross_a, pf.cross_b]).detach()
    reals = torch.cat([pf.x_a, pf.x_b])
    r_fake, _ = disc(fakes)
    r_real, c_real = disc(reals)
    for name, t in (
        ("realness_logits(fakes)", r_fake),
        ("realness_logits(reals)", r_real),
        ("class_logits(reals)", c_real),
    ):
        _require_finite(name, t)
    return {
        "adversarial": _realness_nll(r_fake[:n], FAKE_SLOT)
        + _realness_nll(r_real[n:], REAL_SLOT)
        + _realness_nll(r_fake[n:], FAKE_SLOT)
        + _realness_nll(r_real[:n], REAL_SLOT),
        "classification": F.cross_entropy(c_real[:n], pf.y_a)
        + F.cross_entropy(c_real[n:], pf.y_b),
    }
