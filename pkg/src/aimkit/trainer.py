"""Alternating adversarial training with Adam, checkpoints and ablations.

One step performs, in this fixed order: (1) latent-discriminator update,
(2) patch-discriminator update, (3) domain classifier and regularizer
updates, (4) encoder update on its composite, (5) decoder update on its
composite.  Both generator gradients are evaluated on one shared forward
pass taken after the discriminator updates; the gradient reversal layer
supplies the domain-confusion sign flip inside the encoder composite.
All randomness flows through a single seeded generator, so a fixed seed
reproduces runs bit for bit in single-threaded mode.
"""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass, field, asdict, replace

import numpy as np

from . import autodiff as ad
from . import losses as lo
from . import synthdata as sdata
from .autodiff import Tape, Tensor
from .errors import ConfigError, FormatError, NumericError, UsageError
from .losses import LossReport, LossWeights
from .networks import AIMModel, ModelConfig, phase_codes, sample_latent_prior

NUM_PHASES = 7


@dataclass
class TrainConfig:
    batch_size: int = 32
    adam_alpha: float = 2e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 5e-3
    epochs: int = 60
    lr_decay_epoch: int = 20
    lr_decay_factor: float = 0.1
    grad_clip: float = 10.0
    disc_steps: int = 1
    seed: int = 0
    max_steps: int = 0           # 0: run the full epoch budget
    ablation: str = "full"

    def __post_init__(self):
        for name in ("batch_size", "adam_alpha", "adam_beta1", "adam_beta2",
                     "weight_decay", "epochs", "disc_steps"):
            if getattr(self, name) <= 0 and name not in ("weight_decay",):
                raise ConfigError(f"{name} must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        if not 0 < self.lr_decay_factor <= 1:
            raise ConfigError("lr_decay_factor must lie in (0, 1]")


def lr_schedule(epoch: int, config: TrainConfig) -> float:
    """Base rate until the decay epoch, then one-tenth of it."""
    if epoch < 0:
        raise UsageError(f"epoch must be >= 0, got {epoch}")
    if epoch < config.lr_decay_epoch:
        return config.adam_alpha
    return config.adam_alpha * config.lr_decay_factor


# ---------------------------------------------------------------------------
# Adam with decoupled weight decay

def adam_update(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray,
                t: int, lr: float, beta1: float, beta2: float, eps: float,
                weight_decay: float, _scratch=None):
    """One in-place Adam step (t is the 1-based step count).

    Decoupled decay: the parameter shrinks by lr*weight_decay*param before
    the bias-corrected Adam delta is applied.
    """
    if weight_decay:
        param -= lr * weight_decay * param
    m *= beta1
    m += (1 - beta1) * grad
    v *= beta2
    v += (1 - beta2) * np.square(grad)
    denom = np.sqrt(v / (1 - beta2 ** t))
    denom += eps
    update = m / denom
    update *= lr / (1 - beta1 ** t)
    param -= update


class Adam:
    """Adam state for one named parameter group."""

    def __init__(self, params: dict, config: TrainConfig):
        self.params = params
        self.beta1 = config.adam_beta1
        self.beta2 = config.adam_beta2
        self.eps = config.adam_eps
        self.weight_decay = config.weight_decay
        self.grad_clip = config.grad_clip
        self.t = 0
        self.moments = {name: (np.zeros_like(p.data), np.zeros_like(p.data))
                        for name, p in params.items()}

    def step(self, lr: float):
        grads = {name: p.grad for name, p in self.params.items() if p.grad is not None}
        if not grads:
            return
        if self.grad_clip:
            total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if total > self.grad_clip:
                scale = np.asarray(self.grad_clip / total,
                                   next(iter(grads.values())).dtype)
                grads = {name: g * scale for name, g in grads.items()}
        self.t += 1
        for name, g in grads.items():
            p = self.params[name]
            m, v = self.moments[name]
            adam_update(p.data, g, m, v, self.t, lr,
                        self.beta1, self.beta2, self.eps, self.weight_decay)

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()


# ---------------------------------------------------------------------------
# ablation variants

ABLATION_VARIANTS = {
    "full": {},
    "w/o C_φ": {"zero": ("cad",)},
    "w/o R_ψ": {"zero": ("cer",)},
    "w/o Att.": {"zero": ("att",), "no_attention": True},
    "w/o L_ip": {"zero": ("ip",)},
    "w/o L_adv1": {"zero": ("adv1",)},
    "w/o L_ae": {"zero": ("ae",)},
    "w/o L_mc": {"zero": ("mc",)},
    "w/o L_adv2": {"zero": ("adv2",)},
    "encoder-only baseline": {"encoder_only": True},
}

_ABLATION_ALIASES = {
    "w/o-C_phi": "w/o C_φ",
    "w/o-R_psi": "w/o R_ψ",
    "w/o-Att.": "w/o Att.",
    "w/o-att": "w/o Att.",
    "w/o-L_ip": "w/o L_ip",
    "w/o-L_adv1": "w/o L_adv1",
    "w/o-L_ae": "w/o L_ae",
    "w/o-L_mc": "w/o L_mc",
    "w/o-L_adv2": "w/o L_adv2",
    "encoder-only": "encoder-only baseline",
}

# zeroing one loss name disables the matching encoder and decoder weights
_ZERO_FIELDS = {
    "cad": ("cad",), "cer": ("cer",), "adv1": ("adv1",), "ip": ("ip",),
    "adv2": ("adv2_enc", "adv2_dec"), "ae": ("ae_enc", "ae_dec"),
    "mc": ("mc_enc", "mc_dec"), "tv": ("tv_enc", "tv_dec"),
    "att": ("att_enc", "att_dec"),
}


def resolve_variant(name: str) -> str:
    canonical = _ABLATION_ALIASES.get(name, name)
    if canonical not in ABLATION_VARIANTS:
        raise UsageError(f"unknown ablation variant {name!r}; valid: "
                         + ", ".join(sorted(ABLATION_VARIANTS)))
    return canonical


def variant_weights(name: str, base: LossWeights | None = None) -> LossWeights:
    """Loss weights for an ablation variant (zeroed terms removed)."""
    base = base if base is not None else LossWeights()
    spec = ABLATION_VARIANTS[resolve_variant(name)]
    if spec.get("encoder_only"):
        zeroed = {f: 0.0 for key in _ZERO_FIELDS if key != "ip"
                  for f in _ZERO_FIELDS[key]}
        return replace(base, **zeroed)
    zeroed = {f: 0.0 for key in spec.get("zero", ()) for f in _ZERO_FIELDS[key]}
    return replace(base, **zeroed)


def variant_uses_attention(name: str) -> bool:
    spec = ABLATION_VARIANTS[resolve_variant(name)]
    return not (spec.get("no_attention") or spec.get("encoder_only"))


def variant_is_encoder_only(name: str) -> bool:
    return bool(ABLATION_VARIANTS[resolve_variant(name)].get("encoder_only"))


# ---------------------------------------------------------------------------
# training data container

@dataclass
class TrainData:
    """Dense arrays for the training split, with per-phase sample pools."""

    images: np.ndarray           # (S, 3, H, W) float32
    labels: np.ndarray           # (S,) identity index 0..n-1
    phases: np.ndarray           # (S,) age phase 0..6
    num_identities: int
    phase_pools: list = field(default_factory=list)

    def __post_init__(self):
        if not self.phase_pools:
            self.phase_pools = [np.flatnonzero(self.phases == k) for k in range(NUM_PHASES)]
        for k, pool in enumerate(self.phase_pools):
            if len(pool) == 0:
                raise UsageError(f"training split has no samples in age phase {k}")

    @classmethod
    def from_dataset(cls, dataset: sdata.Dataset, train_folds) -> "TrainData":
        members = sorted(sid for k in train_folds for sid in dataset.folds[k])
        index = {sid: i for i, sid in enumerate(members)}
        picked = [s for s in dataset.samples if s.identity_id in index]
        if not picked:
            raise UsageError("no training samples in the selected folds")
        images = np.stack([s.image for s in picked])
        labels = np.array([index[s.identity_id] for s in picked])
        phases = np.array([s.phase for s in picked])
        return cls(images=images, labels=labels, phases=phases,
                   num_identities=len(members))


# ---------------------------------------------------------------------------
# the trainer

class Trainer:
    def __init__(self, model: AIMModel, data: TrainData, config: TrainConfig,
                 metrics_path=None):
        self.model = model
        self.data = data
        self.config = config
        self.variant = resolve_variant(config.ablation)
        self.weights = variant_weights(self.variant, model.weights)
        self.encoder_only = variant_is_encoder_only(self.variant)
        self.rng = np.random.default_rng(np.random.SeedSequence([0x7124, config.seed]))
        self.step_count = 0
        self.metrics_path = metrics_path
        self._metrics_fh = None

        c = config
        self.optimizers = {
            "encoder": Adam(model.net_parameters("encoder"), c),
            "decoder": Adam(model.net_parameters("decoder"), c),
            "latent_disc": Adam(model.net_parameters("latent_disc"), c),
            "patch_disc": Adam(model.net_parameters("patch_disc"), c),
            "domain_classifier": Adam(model.net_parameters("domain_classifier"), c),
            "regularizer": Adam(model.net_parameters("regularizer"), c),
        }
        model.set_rng(self.rng)
        steps_per_epoch = max(1, len(data.images) // c.batch_size)
        self.steps_per_epoch = steps_per_epoch
        self._order = None
        self._cursor = 0

    # -- scheduling -----------------------------------------------------------
    @property
    def epoch(self) -> int:
        return self.step_count // self.steps_per_epoch

    def current_lr(self) -> float:
        return lr_schedule(self.epoch, self.config)

    def _next_batch(self):
        n = self.config.batch_size
        if self._order is None or self._cursor + n > len(self._order):
            self._order = self.rng.permutation(len(self.data.images))
            self._cursor = 0
        idx = self._order[self._cursor:self._cursor + n]
        self._cursor += n
        return idx

    # -- one optimization step -------------------------------------------------
    def train_step(self, batch_idx=None) -> LossReport:
        model, data, w = self.model, self.data, self.weights
        cfg = self.config
        lr = self.current_lr()
        use_att = model.decoder.use_attention if not self.encoder_only else False

        if batch_idx is None:
            batch_idx = self._next_batch()
        x_np = data.images[batch_idx]
        labels = data.labels[batch_idx]
        real_phases = data.phases[batch_idx]
        n = len(batch_idx)

        # Fixed draw order keeps runs reproducible for a given seed.
        target_phases = self.rng.integers(0, NUM_PHASES, n)
        prior_sample = sample_latent_prior(self.rng, n, model.cfg.feature_dim,
                                           model.cfg.np_dtype)
        ref_idx = np.array([self.data.phase_pools[p][self.rng.integers(len(self.data.phase_pools[p]))]
                            for p in target_phases])
        x_ref_np = data.images[ref_idx]

        codes = phase_codes(target_phases, model.cfg.np_dtype)
        x = Tensor(x_np.astype(model.cfg.np_dtype, copy=False))
        x_ref = Tensor(x_ref_np.astype(model.cfg.np_dtype, copy=False))

        model.set_training(True)

        # Shared generator forward; reused (detached) by the discriminator
        # phases and differentiated by the generator phases.
        gen_tape = Tape()
        with gen_tape:
            f = model.encode(x)
            if not self.encoder_only:
                att_map, feat_img, xhat = model.decode(f, codes, x)
        f_const = f.detach()
        xhat_const = xhat.detach() if not self.encoder_only else None
        parts = {}

        for _ in range(cfg.disc_steps):
            # (1) latent discriminator: adversarial agent plus identity agent.
            if w.adv1 > 0 or w.ip > 0:
                with Tape() as tape:
                    realness_f, logits_f = model.discriminate_latent(f_const)
                    terms = []
                    if w.adv1 > 0:
                        realness_prior, _ = model.discriminate_latent(Tensor(prior_sample))
                        d_adv1 = lo.loss_adv1(realness_prior, realness_f).d_loss
                        terms.append(d_adv1)
                    if w.ip > 0:
                        d_ip = lo.loss_ip(logits_f, labels)
                        terms.append(w.ip * d_ip)
                    objective = terms[0] if len(terms) == 1 else ad.add(*terms)
                    self.optimizers["latent_disc"].zero_grad()
                    tape.backward(objective, wrt=self.optimizers["latent_disc"].params.values())
                    self.optimizers["latent_disc"].step(lr)

            # (2) patch discriminator: adversarial agent plus age agent.  The
            # age agent regresses on real images only: supervising it with the
            # target code on not-yet-conditioned synthesized images teaches it
            # to ignore pixel evidence and silences the conditioning gradient.
            if not self.encoder_only and (w.adv2_dec > 0 or w.ae_dec > 0
                                          or w.adv2_enc > 0 or w.ae_enc > 0):
                with Tape() as tape:
                    fake_scores, fake_age = model.discriminate_patches(xhat_const, codes)
                    real_scores, real_age = model.discriminate_patches(x_ref, codes)
                    terms = []
                    if w.adv2_dec > 0 or w.adv2_enc > 0:
                        terms.append(lo.loss_adv2(fake_scores, real_scores).d_loss)
                    if w.ae_dec > 0 or w.ae_enc > 0:
                        terms.append(w.ae_dec * lo.age_regression(real_age, codes))
                    objective = terms[0] if len(terms) == 1 else ad.add(*terms)
                    self.optimizers["patch_disc"].zero_grad()
                    tape.backward(objective, wrt=self.optimizers["patch_disc"].params.values())
                    self.optimizers["patch_disc"].step(lr)

            # (3) domain classifier and regularizer (separate parameters).
            if w.cad > 0:
                with Tape() as tape:
                    probs = model.classify_domain(f_const)
                    d_cad = lo.loss_cad(probs, real_phases)
                    self.optimizers["domain_classifier"].zero_grad()
                    tape.backward(d_cad, wrt=self.optimizers["domain_classifier"].params.values())
                    self.optimizers["domain_classifier"].step(lr)
            if w.cer > 0:
                with Tape() as tape:
                    probs = model.regularize_domain(f_const)
                    d_cer = lo.loss_cer(probs)
                    self.optimizers["regularizer"].zero_grad()
                    tape.backward(d_cer, wrt=self.optimizers["regularizer"].params.values())
                    self.optimizers["regularizer"].step(lr)

        # (4) + (5): generator objectives on the shared tape, against the
        # just-updated discriminators.
        with gen_tape:
            enc_terms = []
            if w.cad > 0:
                # The gradient reversal layer turns this +1-weighted term into
                # the -cad_weight contribution of the encoder composite.
                parts["cad"] = lo.loss_cad(model.classify_domain(f), real_phases)
                enc_terms.append(parts["cad"])
            if w.cer > 0:
                parts["cer"] = lo.loss_cer(model.regularize_domain(f))
                enc_terms.append(w.cer * parts["cer"])
            if w.adv1 > 0 or w.ip > 0:
                realness_f, logits_f = model.discriminate_latent(f)
                if w.adv1 > 0:
                    realness_prior, _ = model.discriminate_latent(Tensor(prior_sample))
                    parts["adv1"] = lo.loss_adv1(realness_prior, realness_f).g_term
                    enc_terms.append(-w.adv1 * parts["adv1"])
                if w.ip > 0:
                    parts["ip"] = lo.loss_ip(logits_f, labels)
                    enc_terms.append(w.ip * parts["ip"])
            if not self.encoder_only:
                if w.adv2_enc > 0 or w.adv2_dec > 0 or w.ae_enc > 0 or w.ae_dec > 0:
                    fake_scores, fake_age = model.discriminate_patches(xhat, codes)
                    real_scores, real_age = model.discriminate_patches(x_ref, codes)
                    if w.adv2_enc > 0 or w.adv2_dec > 0:
                        parts["adv2"] = lo.loss_adv2(fake_scores, real_scores).g_term
                        enc_terms.append(-w.adv2_enc * parts["adv2"])
                    if w.ae_enc > 0 or w.ae_dec > 0:
                        parts["ae"] = lo.loss_ae(fake_age, real_age, codes)
                        enc_terms.append(w.ae_enc * parts["ae"])
                parts["mc"] = lo.loss_mc(xhat, x)
                enc_terms.append(w.mc_enc * parts["mc"])
                parts["tv"] = lo.loss_tv(xhat)
                enc_terms.append(w.tv_enc * parts["tv"])
                if use_att and w.att_enc > 0:
                    parts["att"] = lo.loss_att(att_map)
                    enc_terms.append(w.att_enc * parts["att"])

            encoder_objective = enc_terms[0]
            for term in enc_terms[1:]:
                encoder_objective = ad.add(encoder_objective, term)

            self.optimizers["encoder"].zero_grad()
            gen_tape.backward(encoder_objective,
                              wrt=self.optimizers["encoder"].params.values())

            if not self.encoder_only:
                dec_parts = {name: parts.get(name, 0.0)
                             for name in ("adv2", "ae", "mc", "tv", "att")}
                decoder_objective = lo.composite_decoder_loss(dec_parts, w)
                self.optimizers["decoder"].zero_grad()
                gen_tape.backward(decoder_objective,
                                  wrt=self.optimizers["decoder"].params.values())

        self.optimizers["encoder"].step(lr)
        if not self.encoder_only:
            self.optimizers["decoder"].step(lr)

        self.step_count += 1
        report = LossReport.from_parts(self.step_count, parts, w)
        report.validate_finite()
        if self.metrics_path:
            self._append_metrics(report)
        return report

    # -- run loop ---------------------------------------------------------------
    def total_steps(self) -> int:
        budget = self.config.epochs * self.steps_per_epoch
        if self.config.max_steps:
            return min(budget, self.config.max_steps) if budget else self.config.max_steps
        return budget

    def run(self, print_every: int = 0, checkpoint_path=None, checkpoint_every: int = 0):
        last = None
        for _ in range(self.total_steps() - self.step_count):
            last = self.train_step()
            if print_every and self.step_count % print_every == 0:
                self._print_progress(last)
            if checkpoint_path and checkpoint_every and self.step_count % checkpoint_every == 0:
                save_checkpoint(checkpoint_path, self.model, self.optimizers,
                                self.step_count, self.config)
        if checkpoint_path:
            save_checkpoint(checkpoint_path, self.model, self.optimizers,
                            self.step_count, self.config)
        if self._metrics_fh:
            self._metrics_fh.close()
            self._metrics_fh = None
        return last

    def _print_progress(self, report: LossReport):
        extras = " ".join(f"L_{k}={v:.4f}" for k, v in sorted(report.values.items()))
        print(f"step={report.step} L_enc={report.encoder_composite:.4f} "
              f"L_dec={report.decoder_composite:.4f} {extras}", flush=True)

    def _append_metrics(self, report: LossReport):
        if self._metrics_fh is None:
            fresh = not os.path.exists(self.metrics_path)
            self._metrics_fh = open(self.metrics_path, "a")
            if fresh:
                self._metrics_fh.write(LossReport.CSV_HEADER + "\n")
        self._metrics_fh.write(report.csv_row() + "\n")
        self._metrics_fh.flush()


# ---------------------------------------------------------------------------
# checkpoints: named AIMT tensor records behind a small header

CKPT_MAGIC = b"AIMC"
CKPT_VERSION = 1


@dataclass
class CheckpointBundle:
    params: dict
    buffers: dict
    adam_moments: dict           # group -> name -> (m, v)
    adam_steps: dict             # group -> int
    step: int
    model_config: dict
    train_config: dict
    loss_weights: dict


def _encode_record(name: str, array: np.ndarray) -> bytes:
    name_b = name.encode("utf-8")
    return struct.pack("<H", len(name_b)) + name_b + sdata.tensor_bytes(array)


def save_checkpoint(path, model: AIMModel, optimizers: dict, step: int,
                    train_config: TrainConfig):
    """Atomic write: temp file then rename."""
    chunks = [CKPT_MAGIC + struct.pack("<H", CKPT_VERSION)]
    for name, tensor in model.parameters().items():
        chunks.append(_encode_record(f"param/{name}", tensor.data))
    for name, buf in model.buffers().items():
        chunks.append(_encode_record(f"buffer/{name}", buf))
    for group, opt in optimizers.items():
        for name, (m, v) in opt.moments.items():
            chunks.append(_encode_record(f"adam/{group}/{name}/m", m))
            chunks.append(_encode_record(f"adam/{group}/{name}/v", v))
        chunks.append(_encode_record(f"adam_step/{group}", np.asarray(float(opt.t))))
    chunks.append(_encode_record("meta/step", np.asarray(float(step))))
    meta = {"model_config": asdict(model.cfg), "train_config": asdict(train_config),
            "loss_weights": asdict(model.weights)}
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    chunks.append(_encode_record("meta/config_json",
                                 np.frombuffer(meta_bytes, dtype=np.uint8).astype(np.float64)))
    blob = b"".join(chunks)
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, str(path))


def load_checkpoint(path) -> CheckpointBundle:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 6 or blob[:4] != CKPT_MAGIC:
        raise FormatError(f"not a checkpoint file: bad magic {blob[:4]!r}")
    version = struct.unpack_from("<H", blob, 4)[0]
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    pos = 6
    records = {}
    while pos < len(blob):
        if len(blob) - pos < 2:
            raise FormatError(f"truncated record header at byte {pos}")
        (name_len,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        if len(blob) - pos < name_len:
            raise FormatError(f"truncated record name at byte {pos}")
        name = blob[pos:pos + name_len].decode("utf-8")
        pos += name_len
        arr, used = sdata.tensor_from_bytes(blob, pos)
        pos += used
        records[name] = arr

    if "meta/step" not in records or "meta/config_json" not in records:
        raise FormatError("checkpoint is missing meta records")
    meta = json.loads(bytes(records.pop("meta/config_json").astype(np.uint8)).decode("utf-8"))
    step = int(float(records.pop("meta/step")))
    params, buffers, adam_moments, adam_steps = {}, {}, {}, {}
    for name, arr in records.items():
        if name.startswith("param/"):
            params[name[len("param/"):]] = arr
        elif name.startswith("buffer/"):
            buffers[name[len("buffer/"):]] = arr
        elif name.startswith("adam_step/"):
            adam_steps[name[len("adam_step/"):]] = int(arr[()])
        elif name.startswith("adam/"):
            _, group, rest = name.split("/", 2)
            pname, kind = rest.rsplit("/", 1)
            slot = adam_moments.setdefault(group, {}).setdefault(pname, [None, None])
            slot[0 if kind == "m" else 1] = arr
    return CheckpointBundle(params=params, buffers=buffers, adam_moments=adam_moments,
                            adam_steps=adam_steps, step=step,
                            model_config=meta["model_config"],
                            train_config=meta["train_config"],
                            loss_weights=meta.get("loss_weights", {}))


def restore_model(bundle: CheckpointBundle) -> AIMModel:
    """Rebuild the model a checkpoint was saved from, bit-exact."""
    cfg = ModelConfig(**bundle.model_config)
    model = AIMModel(cfg, LossWeights(**bundle.loss_weights) if bundle.loss_weights else None)
    apply_checkpoint(model, bundle)
    return model


def apply_checkpoint(model: AIMModel, bundle: CheckpointBundle):
    params = model.parameters()
    if set(params) != set(bundle.params):
        missing = set(params) ^ set(bundle.params)
        raise FormatError(f"checkpoint parameters do not match the model: {sorted(missing)[:4]}")
    for name, arr in bundle.params.items():
        if params[name].data.shape != arr.shape:
            raise FormatError(f"shape mismatch for {name}: "
                              f"{params[name].data.shape} vs {arr.shape}")
        params[name].data = arr.astype(params[name].data.dtype, copy=True)
    buffers = model.buffers()
    for name, arr in bundle.buffers.items():
        buffers[name][...] = arr.astype(buffers[name].dtype, copy=False)


def resume_trainer(trainer: Trainer, bundle: CheckpointBundle):
    """Continue a run: parameters, moments and the step counter."""
    apply_checkpoint(trainer.model, bundle)
    for group, opt in trainer.optimizers.items():
        opt.t = bundle.adam_steps.get(group, 0)
        for name, (m, v) in bundle.adam_moments.get(group, {}).items():
            om, ov = opt.moments[name]
            om[...] = m.astype(om.dtype, copy=False)
            ov[...] = v.astype(ov.dtype, copy=False)
    trainer.step_count = bundle.step


# ---------------------------------------------------------------------------
# ablation harness

def run_ablation(variant_name: str, dataset, train_config: TrainConfig,
                 model_config: ModelConfig | None = None,
                 train_folds=range(8), eval_folds=(8, 9), metric: str = "cosine",
                 eval_pair_seeds=None, return_model: bool = False):
    """Train one variant and score verification on held-out folds.

    ``eval_pair_seeds`` draws several independent pair lists per fold and
    treats each draw as one fold for aggregation, which tightens the metric
    estimate without touching the per-subject 5+5 pair protocol.
    """
    from . import evaluator as ev
    variant = resolve_variant(variant_name)
    data = TrainData.from_dataset(dataset, train_folds)
    if model_config is None:
        model_config = ModelConfig(image_size=dataset.image_size,
                                   num_identities=data.num_identities,
                                   seed=train_config.seed)
    cfg = replace(model_config, num_identities=data.num_identities,
                  use_attention=model_config.use_attention and variant_uses_attention(variant))
    model = AIMModel(cfg)
    trainer = Trainer(model, data, replace(train_config, ablation=variant))
    trainer.run()
    if eval_pair_seeds is None:
        report = ev.evaluate_folds(model, dataset, eval_folds, pair_seed=dataset.seed,
                                   metric=metric)
    else:
        from .synthdata import make_pairs
        fold_reports = []
        for fold_id in eval_folds:
            for ps in eval_pair_seeds:
                pairs = ev.score_pair_list(model, dataset, make_pairs(dataset, fold_id, ps),
                                           metric=metric)
                fold_reports.append(ev.evaluate_pairs(pairs))
        report = ev.kfold_aggregate(fold_reports)
    return (report, model) if return_model else report
