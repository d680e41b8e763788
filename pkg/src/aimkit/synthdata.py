"""Procedural synthetic cross-age face dataset and the AIMT tensor format.

Each sample is an oval "face" whose shape and low-frequency texture are a
pure function of an identity seed.  Age deterministically shrinks the
oval by up to 10%, overlays high-frequency wrinkle bands whose amplitude
grows with age, and darkens the image by up to 0.2; a noise seed adds a
small translation jitter and Gaussian pixel noise (sigma 0.02).  The age
and identity signals are deliberately of comparable pixel magnitude so
that disentangling them is non-trivial but achievable at desk scale.
"""

from __future__ import annotations

import csv
import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, UsageError

NUM_PHASES = 7
AGE_SHRINK = 0.10            # maximal radial shrink of the face oval
AGE_DARKEN = 0.20            # maximal mean-brightness drop
NOISE_SIGMA = 0.02
WRINKLE_AMP = 0.28           # wrinkle amplitude at age 1
FACE_TEXTURE_AMP = 0.35      # per-wave bound, face-anchored texture
AMBIENT_AMP = 0.18           # per-wave bound, frame-anchored per-subject field
LUM_SPREAD = 0.25            # per-subject global brightness offset bound
TINT_AMP = 0.03              # per-channel colour offset bound
FACE_LEVEL = 0.10            # face base brightness over the background
EDGE_SOFTNESS = 0.08         # face boundary transition width (radius units)
JITTER_BASE_PX = 3           # translation jitter at the reference 32x32 size
AMBIENT_AGE_DRIFT = 2.4      # ambient wave phase drift over the age span (pi units)
TEXTURE_AGE_DRIFT = 1.8      # face texture phase drift over the age span (pi units)

# Fixed high-pass kernel defining the wrinkle band (3x3 Laplacian).
HIGHPASS_KERNEL = np.array([[0.0, 1.0, 0.0],
                            [1.0, -4.0, 1.0],
                            [0.0, 1.0, 0.0]], dtype=np.float64)


@dataclass
class FaceSample:
    image: np.ndarray            # (3, H, W) float32 in [-1, 1]
    identity_id: int
    age: float
    phase: int


@dataclass
class Pair:
    index_a: int
    index_b: int
    is_genuine: bool
    age_gap: float


@dataclass
class PairList:
    fold_id: int
    pairs: list


@dataclass
class Dataset:
    samples: list
    folds: list                  # fold_id -> list of subject ids
    image_size: int
    seed: int
    num_subjects: int
    samples_per_subject: int

    def subject_fold(self) -> dict:
        return {sid: k for k, fold in enumerate(self.folds) for sid in fold}

    def fold_sample_indices(self, fold_id: int) -> list:
        members = set(self.folds[fold_id])
        return [i for i, s in enumerate(self.samples) if s.identity_id in members]


def age_phase(age: float) -> int:
    """Uniform binning of [0, 1] into 7 phases."""
    return min(NUM_PHASES - 1, int(math.floor(age * NUM_PHASES)))


def _jitter_px(image_size: int) -> int:
    return max(1, round(JITTER_BASE_PX * image_size / 32))


def render_face(identity_seed: int, age: float, noise_seed: int,
                image_size: int = 32) -> FaceSample:
    """Deterministic synthetic face for (identity_seed, age, noise_seed).

    Identity cues are split between head-anchored structure (soft-edged
    oval, texture and landmarks, which pose jitter misaligns and ageing
    geometrically distorts) and frame-anchored fields (ambient waves,
    brightness and tint offsets, which jitter cannot touch).  Age cues are
    the oval shrink, a fixed frame-anchored wrinkle field scaled by age,
    and the global darkening.  Both texture families additionally drift in
    phase with age, so images of one subject at equal ages match exactly
    while images across a large age gap are substantially decorrelated;
    this keeps identity recovery across ages non-trivial.
    """
    if not 0.0 <= age <= 1.0:
        raise UsageError(f"age must lie in [0, 1], got {age}")
    n = image_size
    id_rng = np.random.default_rng(np.random.SeedSequence([0xFACE, int(identity_seed)]))
    noise_rng = np.random.default_rng(
        np.random.SeedSequence([0x0153, int(identity_seed), int(noise_seed)]))

    # Eight identity shape parameters.
    cx, cy = id_rng.uniform(-0.10, 0.10, 2)
    rx = id_rng.uniform(0.50, 0.78)
    ry = id_rng.uniform(0.58, 0.88)
    tilt = id_rng.uniform(-0.35, 0.35)
    eye_dx = id_rng.uniform(0.15, 0.40)
    eye_y = id_rng.uniform(-0.32, -0.12)
    mouth_w = id_rng.uniform(0.18, 0.45)
    lum = id_rng.uniform(-LUM_SPREAD, LUM_SPREAD)

    ys, xs = np.meshgrid(np.linspace(-1, 1, n), np.linspace(-1, 1, n), indexing="ij")
    xr = (xs - cx) * math.cos(tilt) + (ys - cy) * math.sin(tilt)
    yr = -(xs - cx) * math.sin(tilt) + (ys - cy) * math.cos(tilt)

    shrink = 1.0 - AGE_SHRINK * age
    un = xr / (rx * shrink)
    vn = yr / (ry * shrink)
    radius = np.sqrt(un ** 2 + vn ** 2)
    mask = 1.0 / (1.0 + np.exp((radius - 1.0) / EDGE_SOFTNESS))
    mask_sum = mask.sum()

    # Face-anchored low-frequency texture, tapered toward the boundary and
    # centred to zero mean under the mask so it cannot move the image mean.
    taper = np.clip(1.4 * (1.0 - radius ** 2), 0.0, 1.0)
    texture = np.zeros((n, n))
    for _ in range(4):
        u, v = id_rng.uniform(0.15, 0.5, 2)
        amp = id_rng.uniform(-1.0, 1.0) * FACE_TEXTURE_AMP
        phase_shift = id_rng.uniform(0, 2 * math.pi)
        drift = id_rng.uniform(-1.0, 1.0) * TEXTURE_AGE_DRIFT * math.pi
        texture += amp * np.cos(math.pi * (u * un + v * vn) + phase_shift + drift * age)
    texture *= taper
    texture -= (texture * mask).sum() / mask_sum

    base = mask * (FACE_LEVEL + texture)

    # Smooth eye spots and mouth bar anchored to the (shrunken) oval.
    for ex in (-eye_dx, eye_dx):
        d2 = (xr - ex * rx * shrink) ** 2 + (yr - eye_y * ry * shrink) ** 2
        base = base - 0.22 * np.exp(-d2 / (2 * (0.24 * rx * shrink) ** 2)) * mask
    mouth = (np.exp(-((np.abs(xr) / (mouth_w * rx * shrink)) ** 6))
             * np.exp(-(yr - 0.45 * ry * shrink) ** 2 / (2 * (0.10 * ry * shrink) ** 2)))
    base = base - 0.18 * mouth * mask

    # Frame-anchored ambient identity waves (applied after jitter below).
    ambient = np.zeros((n, n))
    for _ in range(3):
        u, v = id_rng.uniform(0.3, 0.9, 2)
        amp = id_rng.uniform(-1.0, 1.0) * AMBIENT_AMP
        phase_shift = id_rng.uniform(0, 2 * math.pi)
        drift = id_rng.uniform(-1.0, 1.0) * AMBIENT_AGE_DRIFT * math.pi
        ambient += amp * np.cos(math.pi * (u * xs + v * ys) + phase_shift + drift * age)
    ambient -= ambient.mean()

    tint = id_rng.uniform(-TINT_AMP, TINT_AMP, 3)
    head = base[None, :, :] + tint[:, None, None]

    # Pose jitter: integer translation of the head pattern.
    j = _jitter_px(n)
    dy, dx = noise_rng.integers(-j, j + 1, 2)
    out = np.zeros_like(head) + tint[:, None, None]
    src_y = slice(max(0, -dy), n - max(0, dy))
    dst_y = slice(max(0, dy), n - max(0, -dy))
    src_x = slice(max(0, -dx), n - max(0, dx))
    dst_x = slice(max(0, dx), n - max(0, -dx))
    out[:, dst_y, dst_x] = head[:, src_y, src_x]

    # Frame-anchored fields: ambient identity waves, the zero-mean wrinkle
    # band scaled by age, per-subject brightness, and the age darkening.
    rows = np.arange(n)[:, None] * np.ones((1, n))
    cols = np.ones((n, 1)) * np.arange(n)[None, :]
    wrinkle = (np.sin(2 * math.pi * rows / 3.1)
               + 0.6 * np.sin(2 * math.pi * (rows + cols) / 4.3))
    wrinkle -= wrinkle.mean()
    out = out + ambient[None] + WRINKLE_AMP * age * wrinkle[None] + lum - AGE_DARKEN * age

    out += noise_rng.normal(0.0, NOISE_SIGMA, out.shape)
    image = np.clip(out, -1.0, 1.0).astype(np.float32)
    return FaceSample(image=image, identity_id=int(identity_seed),
                      age=float(age), phase=age_phase(age))


def wrinkle_band_energy(image: np.ndarray) -> float:
    """Mean squared response of the fixed high-pass filter on the gray image."""
    gray = np.asarray(image, dtype=np.float64).mean(axis=0)
    k = HIGHPASS_KERNEL
    h, w = gray.shape
    acc = np.zeros((h - 2, w - 2))
    for i in range(3):
        for j in range(3):
            acc += k[i, j] * gray[i:i + h - 2, j:j + w - 2]
    return float(np.mean(acc ** 2))


# ---------------------------------------------------------------------------
# dataset assembly

def make_dataset(num_subjects: int, samples_per_subject: int, seed: int,
                 image_size: int = 32, workers: int = 1) -> Dataset:
    """Render the corpus and split subjects into 10 disjoint folds."""
    if num_subjects < 20:
        raise UsageError(f"need at least 20 subjects, got {num_subjects}")
    if samples_per_subject < 2:
        raise UsageError("samples_per_subject must be >= 2, otherwise genuine pairs are impossible")

    master = np.random.default_rng(np.random.SeedSequence([0xDA7A, int(seed)]))
    jobs = []
    for subject in range(num_subjects):
        ages = master.uniform(0.0, 1.0, samples_per_subject)
        noise_seeds = master.integers(0, 2 ** 31, samples_per_subject)
        for age, ns in zip(ages, noise_seeds):
            jobs.append((subject, float(age), int(ns), image_size))

    if workers > 1:
        import multiprocessing as mp
        with mp.Pool(workers) as pool:
            samples = pool.starmap(render_face, jobs, chunksize=64)
    else:
        samples = [render_face(*job) for job in jobs]

    fold_rng = np.random.default_rng(np.random.SeedSequence([0xF01D, int(seed)]))
    order = fold_rng.permutation(num_subjects)
    folds = [sorted(int(s) for s in order[k::10]) for k in range(10)]
    return Dataset(samples=samples, folds=folds, image_size=image_size, seed=seed,
                   num_subjects=num_subjects, samples_per_subject=samples_per_subject)


def make_pairs(dataset: Dataset, fold_id: int, rng_seed: int,
               genuine_per_subject: int = 5, imposter_per_subject: int = 5) -> PairList:
    """5 genuine and 5 imposter pairs per subject of one fold."""
    subjects = dataset.folds[fold_id]
    if len(subjects) < 2:
        raise UsageError(f"fold {fold_id} has fewer than 2 subjects")
    rng = np.random.default_rng(np.random.SeedSequence([0xBA1B, int(rng_seed), int(fold_id)]))

    by_subject = {}
    for i, s in enumerate(dataset.samples):
        by_subject.setdefault(s.identity_id, []).append(i)

    pairs = []
    seen = set()
    for sid in subjects:
        idxs = by_subject.get(sid, [])
        combos = [(a, b) for k, a in enumerate(idxs) for b in idxs[k + 1:]
                  if dataset.samples[a].age != dataset.samples[b].age]
        if len(combos) < genuine_per_subject:
            raise UsageError(
                f"subject {sid} has only {len(combos)} distinct-age sample pairs, "
                f"needs {genuine_per_subject}")
        for k in rng.choice(len(combos), genuine_per_subject, replace=False):
            a, b = combos[int(k)]
            seen.add((a, b))
            pairs.append(Pair(a, b, True,
                              abs(dataset.samples[a].age - dataset.samples[b].age)))
        others = [o for o in subjects if o != sid]
        made = 0
        while made < imposter_per_subject:
            other = others[int(rng.integers(len(others)))]
            a = idxs[int(rng.integers(len(idxs)))]
            b = by_subject[other][int(rng.integers(len(by_subject[other])))]
            if (a, b) in seen:
                continue
            seen.add((a, b))
            pairs.append(Pair(a, b, False,
                              abs(dataset.samples[a].age - dataset.samples[b].age)))
            made += 1
    return PairList(fold_id=fold_id, pairs=pairs)


# ---------------------------------------------------------------------------
# AIMT binary tensor format

AIMT_MAGIC = b"AIMT"
AIMT_VERSION = 1
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def tensor_bytes(array: np.ndarray) -> bytes:
    """Serialize an array: magic, version, dtype, rank, dims, LE payload."""
    arr = np.ascontiguousarray(array)
    if arr.dtype not in _DTYPE_CODES:
        raise UsageError(f"AIMT stores float32/float64 tensors, got {arr.dtype}")
    head = AIMT_MAGIC + struct.pack("<HBB", AIMT_VERSION, _DTYPE_CODES[arr.dtype], arr.ndim)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b""
    payload = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
    return head + dims + payload


def tensor_from_bytes(blob: bytes, offset: int = 0):
    """Parse one tensor record; returns (array, bytes consumed)."""
    base = offset
    if len(blob) - base < 8:
        raise FormatError(f"truncated header at byte {base}: need 8 bytes, have {len(blob) - base}")
    if blob[base:base + 4] != AIMT_MAGIC:
        raise FormatError(f"bad magic at byte {base}: {blob[base:base + 4]!r}")
    version, dtype_code, rank = struct.unpack_from("<HBB", blob, base + 4)
    if version != AIMT_VERSION:
        raise FormatError(f"unsupported version {version} at byte {base + 4}")
    if dtype_code not in _CODE_DTYPES:
        raise FormatError(f"unknown dtype code {dtype_code} at byte {base + 6}")
    pos = base + 8
    if len(blob) - pos < 8 * rank:
        raise FormatError(f"truncated dims at byte {pos}")
    shape = struct.unpack_from(f"<{rank}Q", blob, pos) if rank else ()
    pos += 8 * rank
    dtype = _CODE_DTYPES[dtype_code]
    count = int(np.prod(shape)) if rank else 1
    need = count * dtype.itemsize
    have = len(blob) - pos
    if have < need:
        raise FormatError(
            f"truncated payload at byte {pos}: expected {need} bytes, got {have}")
    arr = np.frombuffer(blob, dtype=dtype, count=count, offset=pos).reshape(shape)
    return arr.astype(dtype.newbyteorder("="), copy=True), pos + need - base


def write_tensor(path, array: np.ndarray):
    data = tensor_bytes(array)
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    arr, consumed = tensor_from_bytes(blob)
    if consumed != len(blob):
        raise FormatError(f"trailing garbage: {len(blob) - consumed} bytes after payload")
    return arr


# ---------------------------------------------------------------------------
# on-disk dataset layout: samples/ + manifest.csv + pair lists

MANIFEST_NAME = "manifest.csv"


def save_dataset(dataset: Dataset, out_dir, pair_seed: int = 0,
                 genuine_per_subject: int = 5, imposter_per_subject: int = 5):
    """Write samples, manifest, fold assignments and per-fold pair lists."""
    out_dir = str(out_dir)
    samples_dir = os.path.join(out_dir, "samples")
    os.makedirs(samples_dir, exist_ok=True)
    fold_of = dataset.subject_fold()

    rows = []
    for i, s in enumerate(dataset.samples):
        rel = os.path.join("samples", f"s{i:06d}.aimt")
        write_tensor(os.path.join(out_dir, rel), s.image)
        rows.append((rel, s.identity_id, s.age, s.phase, fold_of[s.identity_id]))

    with open(os.path.join(out_dir, MANIFEST_NAME), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_path", "identity_id", "age", "phase", "fold_id"])
        for rel, sid, age, phase, fold in rows:
            writer.writerow([rel, sid, repr(age), phase, fold])

    with open(os.path.join(out_dir, "meta.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_size", "seed", "num_subjects", "samples_per_subject"])
        writer.writerow([dataset.image_size, dataset.seed, dataset.num_subjects,
                         dataset.samples_per_subject])

    for fold_id in range(len(dataset.folds)):
        pl = make_pairs(dataset, fold_id, pair_seed,
                        genuine_per_subject, imposter_per_subject)
        with open(os.path.join(out_dir, f"pairs_fold{fold_id}.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index_a", "index_b", "is_genuine", "age_gap"])
            for p in pl.pairs:
                writer.writerow([p.index_a, p.index_b, int(p.is_genuine), repr(p.age_gap)])


def load_dataset(root) -> Dataset:
    root = str(root)
    manifest = os.path.join(root, MANIFEST_NAME)
    if not os.path.exists(manifest):
        raise UsageError(f"no dataset manifest at {manifest}")
    with open(os.path.join(root, "meta.csv"), newline="") as fh:
        meta_rows = list(csv.reader(fh))
    image_size, seed, num_subjects, spp = (int(v) for v in meta_rows[1])

    samples = []
    with open(manifest, newline="") as fh:
        reader = csv.DictReader(fh)
        fold_of = {}
        for row in reader:
            img = read_tensor(os.path.join(root, row["sample_path"]))
            samples.append(FaceSample(image=img.astype(np.float32),
                                      identity_id=int(row["identity_id"]),
                                      age=float(row["age"]),
                                      phase=int(row["phase"])))
            fold_of[int(row["identity_id"])] = int(row["fold_id"])
    folds = [[] for _ in range(10)]
    for sid, fold in sorted(fold_of.items()):
        folds[fold].append(sid)
    return Dataset(samples=samples, folds=folds, image_size=image_size, seed=seed,
                   num_subjects=num_subjects, samples_per_subject=spp)


def load_pairs(root, fold_id: int) -> PairList:
    path = os.path.join(str(root), f"pairs_fold{fold_id}.csv")
    if not os.path.exists(path):
        raise UsageError(f"no pair list at {path}")
    pairs = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            pairs.append(Pair(int(row["index_a"]), int(row["index_b"]),
                              bool(int(row["is_genuine"])), float(row["age_gap"])))
    return PairList(fold_id=fold_id, pairs=pairs)
