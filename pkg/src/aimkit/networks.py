"""The five sub-networks and the age condition code utilities.

Encoder maps images to 256-d features squashed by tanh; the decoder
consumes feature+code and emits an attention map, a feature image and
their blend with the input.  Two discriminators (latent and local-patch,
each with dual output heads), a domain classifier behind a gradient
reversal layer, and a separately parameterized regularizer complete the
model.  All sizes scale down from the reference resolution by halving
the block count; 128x128 reproduces the reference topology pattern.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import layers as ly
from .errors import ConfigError, DimensionError, UsageError

NUM_PHASES = 7
FEATURE_DIM = 256


# ---------------------------------------------------------------------------
# age condition codes

def age_code(phase: int, dtype=np.float32) -> np.ndarray:
    """Pure 7-element code: +1 at the phase index, -1 elsewhere."""
    if not isinstance(phase, (int, np.integer)) or not 0 <= phase < NUM_PHASES:
        raise UsageError(f"age phase must be an integer in 0..6, got {phase!r}")
    code = -np.ones(NUM_PHASES, dtype=dtype)
    code[phase] = 1
    return code


def is_pure_code(code: np.ndarray) -> bool:
    return (code.shape == (NUM_PHASES,)
            and np.count_nonzero(code == 1) == 1
            and np.count_nonzero(code == -1) == NUM_PHASES - 1)


def interpolate_codes(c1: np.ndarray, c2: np.ndarray, t: float) -> np.ndarray:
    """Elementwise (1-t)*c1 + t*c2 between two adjacent pure codes."""
    if not (is_pure_code(c1) and is_pure_code(c2)):
        raise UsageError("interpolate_codes expects pure phase codes")
    p1, p2 = int(np.argmax(c1)), int(np.argmax(c2))
    if abs(p1 - p2) != 1:
        raise UsageError(f"phases {p1} and {p2} are not adjacent")
    if not 0.0 <= t <= 1.0:
        raise UsageError(f"interpolation t must lie in [0, 1], got {t}")
    return (1 - t) * c1 + t * c2


def phase_codes(phases: np.ndarray, dtype=np.float32) -> np.ndarray:
    """Batch of pure codes, one row per phase label."""
    out = -np.ones((len(phases), NUM_PHASES), dtype=dtype)
    out[np.arange(len(phases)), np.asarray(phases, dtype=int)] = 1
    return out


def sample_latent_prior(rng: np.random.Generator, batch: int,
                        dim: int = FEATURE_DIM, dtype=np.float32) -> np.ndarray:
    """Uniform prior on [-1, 1]^dim, matching the encoder's tanh range."""
    return rng.uniform(-1.0, 1.0, (batch, dim)).astype(dtype)


# ---------------------------------------------------------------------------
# model configuration

@dataclass
class ModelConfig:
    image_size: int = 32
    feature_dim: int = FEATURE_DIM
    base_channels: int = 32
    channel_cap: int = 256
    patch_size: int = 0            # 0 -> image_size // 4
    num_identities: int = 10
    dropout_keep: float = 0.7
    grl_coeff: float = 0.1
    use_attention: bool = True
    seed: int = 0
    dtype: int = 32                # 32 or 64 bit floats

    def __post_init__(self):
        if self.patch_size == 0:
            self.patch_size = self.image_size // 4
        n = self.image_size
        if n < 8 or n & (n - 1):
            raise ConfigError(f"image_size must be a power of two >= 8, got {n}")
        if self.image_size % self.patch_size:
            raise ConfigError(
                f"image_size {self.image_size} is not divisible by patch_size {self.patch_size}")
        if self.dtype not in (32, 64):
            raise ConfigError(f"dtype must be 32 or 64, got {self.dtype}")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == 32 else np.float64

    def encoder_channels(self):
        depth = int(math.log2(self.image_size)) - 1   # stride-2 blocks down to 2x2
        return [min(self.base_channels * 2 ** i, self.channel_cap) for i in range(depth)]


# ---------------------------------------------------------------------------
# sub-networks

class Encoder:
    """Strided conv blocks (conv-BN-LeakyReLU) + dense head squashed by tanh."""

    def __init__(self, cfg: ModelConfig, rng):
        dtype = cfg.np_dtype
        blocks = []
        c_in = 3
        for c_out in cfg.encoder_channels():
            blocks += [ly.Conv2d(c_in, c_out, 3, rng, stride=2, dtype=dtype),
                       ly.BatchNorm(c_out, dtype),
                       ly.Activation("leaky_relu")]
            c_in = c_out
        blocks += [ly.Flatten(), ly.Dense(c_in * 4, cfg.feature_dim, rng, dtype),
                   ly.Activation("tanh")]
        self.net = ly.Sequential(blocks)
        self.image_size = cfg.image_size

    def __call__(self, x: ad.Tensor) -> ad.Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise DimensionError(f"encoder expects (N, 3, H, W) images, got {x.shape}")
        if x.shape[2] != self.image_size or x.shape[3] != self.image_size:
            raise DimensionError(
                f"encoder built for {self.image_size}x{self.image_size}, got {x.shape[2]}x{x.shape[3]}")
        return self.net(x)

    params = property(lambda self: self.net.params)
    state = property(lambda self: self.net.state)

    def set_training(self, training):
        self.net.set_training(training)

    def set_rng(self, rng):
        self.net.set_rng(rng)


class Decoder:
    """Dense projection + fractionally-strided conv blocks + two 1x1 heads.

    The attention head is sigmoid-activated (one channel in [0, 1]); the
    feature head is scaled-sigmoid-activated (three channels in [-1, 1]).
    The synthesized image blends the feature image with the input under
    the attention mask.  Without attention the feature image is returned
    directly.
    """

    def __init__(self, cfg: ModelConfig, rng):
        dtype = cfg.np_dtype
        channels = cfg.encoder_channels()
        self.c0 = channels[-1]
        self.use_attention = cfg.use_attention
        self.project = ly.Dense(cfg.feature_dim + NUM_PHASES, self.c0 * 4, rng, dtype)
        blocks = []
        c_in = self.c0
        for c_out in [max(c // 2, 4) for c in reversed(channels)]:
            blocks += [ly.ConvTranspose2d(c_in, c_out, 3, rng, stride=2, dtype=dtype),
                       ly.BatchNorm(c_out, dtype),
                       ly.Activation("relu")]
            c_in = c_out
        self.blocks = ly.Sequential(blocks)
        self.attention_head = ly.Conv2d(c_in, 1, 1, rng, dtype=dtype) if cfg.use_attention else None
        self.feature_head = ly.Conv2d(c_in, 3, 1, rng, dtype=dtype)
        self.feature_dim = cfg.feature_dim

    def __call__(self, f: ad.Tensor, code: ad.Tensor, x: ad.Tensor):
        """Returns (attention_map, feature_image, synthesized_image)."""
        if f.shape[1] != self.feature_dim:
            raise DimensionError(f"decoder expects {self.feature_dim}-d features, got {f.shape}")
        if code.shape != (f.shape[0], NUM_PHASES):
            raise DimensionError(
                f"decoder expects codes shaped ({f.shape[0]}, {NUM_PHASES}), got {code.shape}")
        h = ad.concat([f, code], axis=1)
        h = self.project(h)
        h = ad.reshape(h, (f.shape[0], self.c0, 2, 2))
        h = self.blocks(h)
        feature_img = ad.scaled_sigmoid(self.feature_head(h))
        if not self.use_attention:
            return None, feature_img, feature_img
        attention = ad.sigmoid(self.attention_head(h))
        synthesized = blend_with_attention(attention, feature_img, x)
        return attention, feature_img, synthesized

    def params(self):
        yield from (("project." + n, t) for n, t in self.project.params())
        yield from (("blocks." + n, t) for n, t in self.blocks.params())
        if self.attention_head is not None:
            yield from (("attention." + n, t) for n, t in self.attention_head.params())
        yield from (("feature." + n, t) for n, t in self.feature_head.params())

    def state(self):
        yield from (("blocks." + n, b) for n, b in self.blocks.state())

    def set_training(self, training):
        self.blocks.set_training(training)

    def set_rng(self, rng):
        self.blocks.set_rng(rng)


def blend_with_attention(attention: ad.Tensor, feature_img: ad.Tensor, x: ad.Tensor) -> ad.Tensor:
    """att*feature + (1-att)*x with the one-channel mask broadcast over RGB."""
    one = ad.Tensor(np.asarray(1, dtype=x.data.dtype))
    return ad.add(ad.multiply(attention, feature_img),
                  ad.multiply(ad.subtract(one, attention), x))


class LatentDiscriminator:
    """MLP over features with dual heads: realness score and identity logits."""

    def __init__(self, cfg: ModelConfig, rng):
        dtype = cfg.np_dtype
        self.hidden = ly.Sequential([
            ly.Dense(cfg.feature_dim, 256, rng, dtype),
            ly.Activation("leaky_relu"),
            ly.Dropout(cfg.dropout_keep),
        ])
        self.realness_head = ly.Dense(256, 1, rng, dtype)
        self.identity_head = ly.Dense(256, cfg.num_identities, rng, dtype)

    def __call__(self, f: ad.Tensor):
        h = self.hidden(f)
        realness = ad.sigmoid(self.realness_head(h))
        identity_logits = self.identity_head(h)
        return realness, identity_logits

    def params(self):
        yield from (("hidden." + n, t) for n, t in self.hidden.params())
        yield from (("realness." + n, t) for n, t in self.realness_head.params())
        yield from (("identity." + n, t) for n, t in self.identity_head.params())

    def state(self):
        return ()

    def set_training(self, training):
        self.hidden.set_training(training)

    def set_rng(self, rng):
        self.hidden.set_rng(rng)


class PatchDiscriminator:
    """Conv stack scoring non-overlapping patches, conditioned on the age code.

    The trunk sees raw pixel patches only.  The code is broadcast per patch
    and concatenated to the trunk features of the realness head, so the
    adversarial agent judges patches *given* the target age.  The age head
    deliberately never sees the code: feeding it the conditioning channels
    would let it satisfy its objective by copying them instead of reading
    age from pixels, which silences the gradient the decoder needs.
    Dual heads per patch: realness (sigmoid) and a 7-way tanh age estimate
    averaged over patches per image.
    """

    def __init__(self, cfg: ModelConfig, rng):
        dtype = cfg.np_dtype
        self.patch_size = cfg.patch_size
        self.grid = cfg.image_size // cfg.patch_size
        depth = int(math.log2(self.patch_size))     # stride-2 blocks down to 1x1
        blocks = []
        c_in = 3
        c_out = cfg.base_channels
        for _ in range(depth):
            blocks += [ly.Conv2d(c_in, c_out, 3, rng, stride=2, dtype=dtype),
                       ly.Activation("leaky_relu")]
            c_in = c_out
            c_out = min(c_out * 2, cfg.channel_cap)
        blocks.append(ly.Flatten())
        self.net = ly.Sequential(blocks)
        self.realness_head = ly.Dense(c_in + NUM_PHASES, 1, rng, dtype)
        self.age_head = ly.Dense(c_in, NUM_PHASES, rng, dtype)

    def extract_patches(self, img: ad.Tensor) -> ad.Tensor:
        """(N,3,H,W) -> (P*N,3,p,p), patch-major so row k*N+i is patch k of image i."""
        n, _, h, w = img.shape
        p = self.patch_size
        if h % p or w % p:
            raise ConfigError(f"image {h}x{w} is not divisible into {p}x{p} patches")
        tiles = [img[:, :, i:i + p, j:j + p]
                 for i in range(0, h, p) for j in range(0, w, p)]
        return ad.concat(tiles, axis=0)

    def __call__(self, img: ad.Tensor, codes: np.ndarray):
        n = img.shape[0]
        num = self.grid * self.grid
        patches = self.extract_patches(img)
        dtype = img.data.dtype
        h = self.net(patches)
        cond = np.tile(np.asarray(codes, dtype), (num, 1))
        patch_scores = ad.sigmoid(self.realness_head(
            ad.concat([h, ad.Tensor(cond)], axis=1)))                # (P*N, 1)
        per_patch_age = ad.tanh(self.age_head(h))                    # (P*N, 7)
        age_estimate = ad.mean(ad.reshape(per_patch_age, (num, n, NUM_PHASES)), axis=0)
        return patch_scores, age_estimate

    def params(self):
        yield from (("net." + n, t) for n, t in self.net.params())
        yield from (("realness." + n, t) for n, t in self.realness_head.params())
        yield from (("age." + n, t) for n, t in self.age_head.params())

    def state(self):
        return ()

    def set_training(self, training):
        self.net.set_training(training)

    def set_rng(self, rng):
        self.net.set_rng(rng)


class DomainHead:
    """MLP mapping features to 7 domain probabilities (softmax).

    With ``reverse_gradient`` a gradient reversal layer sits in front, so
    minimizing the downstream loss maximizes domain confusion upstream.
    """

    def __init__(self, cfg: ModelConfig, rng, reverse_gradient: bool):
        dtype = cfg.np_dtype
        self.grl = ly.GradReversal(cfg.grl_coeff) if reverse_gradient else None
        self.net = ly.Sequential([
            ly.Dense(cfg.feature_dim, 256, rng, dtype),
            ly.Activation("leaky_relu"),
            ly.Dropout(cfg.dropout_keep),
            ly.Dense(256, NUM_PHASES, rng, dtype),
            ly.Activation("softmax"),
        ])

    def __call__(self, f: ad.Tensor, bypass_grl: bool = False) -> ad.Tensor:
        if self.grl is not None and not bypass_grl:
            f = self.grl(f)
        return self.net(f)

    def params(self):
        yield from self.net.params()

    def state(self):
        return ()

    def set_training(self, training):
        self.net.set_training(training)

    def set_rng(self, rng):
        self.net.set_rng(rng)


# ---------------------------------------------------------------------------
# full model bundle

class AIMModel:
    """The five parameterized sub-networks plus loss weights."""

    def __init__(self, cfg: ModelConfig, loss_weights=None):
        from .losses import LossWeights
        self.cfg = cfg
        self.weights = loss_weights if loss_weights is not None else LossWeights()
        rng = np.random.default_rng(cfg.seed)
        self.encoder = Encoder(cfg, rng)
        self.decoder = Decoder(cfg, rng)
        self.latent_disc = LatentDiscriminator(cfg, rng)
        self.patch_disc = PatchDiscriminator(cfg, rng)
        self.domain_classifier = DomainHead(cfg, rng, reverse_gradient=True)
        self.regularizer = DomainHead(cfg, rng, reverse_gradient=False)

    def nets(self):
        return (("encoder", self.encoder), ("decoder", self.decoder),
                ("latent_disc", self.latent_disc), ("patch_disc", self.patch_disc),
                ("domain_classifier", self.domain_classifier), ("regularizer", self.regularizer))

    # -- spec operations ----------------------------------------------------
    def encode(self, x: ad.Tensor) -> ad.Tensor:
        return self.encoder(x)

    def decode(self, f: ad.Tensor, code, x: ad.Tensor):
        code_t = code if isinstance(code, ad.Tensor) else ad.Tensor(
            np.asarray(code, self.cfg.np_dtype).reshape(-1, NUM_PHASES))
        return self.decoder(f, code_t, x)

    def discriminate_latent(self, f: ad.Tensor):
        return self.latent_disc(f)

    def discriminate_patches(self, img: ad.Tensor, codes):
        return self.patch_disc(img, np.asarray(codes, self.cfg.np_dtype).reshape(-1, NUM_PHASES))

    def classify_domain(self, f: ad.Tensor, bypass_grl: bool = False) -> ad.Tensor:
        return self.domain_classifier(f, bypass_grl=bypass_grl)

    def regularize_domain(self, f: ad.Tensor) -> ad.Tensor:
        return self.regularizer(f)

    # -- bookkeeping ---------------------------------------------------------
    def parameters(self) -> dict:
        out = {}
        for net_name, net in self.nets():
            for name, tensor in net.params():
                out[f"{net_name}/{name}"] = tensor
        return out

    def buffers(self) -> dict:
        out = {}
        for net_name, net in self.nets():
            for name, buf in net.state():
                out[f"{net_name}/{name}"] = buf
        return out

    def net_parameters(self, net_name: str) -> dict:
        net = dict(self.nets())[net_name]
        return {f"{net_name}/{name}": tensor for name, tensor in net.params()}

    def set_training(self, training: bool):
        for _, net in self.nets():
            net.set_training(training)

    def set_rng(self, rng):
        for _, net in self.nets():
            net.set_rng(rng)

    def zero_grad(self):
        for tensor in self.parameters().values():
            tensor.zero_grad()
