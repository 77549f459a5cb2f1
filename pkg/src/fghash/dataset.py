"""Deterministic synthetic dataset with fine-grained structure.

Each class is identified by a small grating motif (a class-specific
orientation and spatial frequency) composited onto smooth backgrounds drawn
from a pool shared across all classes. Intra-class variance comes from the
background choice, the motif's random translation and phase, a global
brightness jitter and additive noise, so two images of one class differ a
lot at the pixel level while two classes differ only in the subtle texture
of a small region: high intra-class and low inter-class variance.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigError, DataFormatError, ShapeError, SupervisionError
from .ops import bilinear_resize_array
from .serialize import finish_with_crc, json_block, open_checked, read_json_block, read_tensor, tensor_bytes

SPLIT_TRAIN = 0
SPLIT_QUERY = 1

_MAGIC = b"FGHD"
_VERSION = 1


@dataclass(frozen=True)
class GenConfig:
    classes: int = 10
    per_class: int = 64
    height: int = 32
    width: int = 32
    motif_size: int = 14
    motif_amplitude: float = 0.35
    motif_freq_low: float = 0.22
    motif_freq_high: float = 0.45
    background_pool: int = 8
    background_cells: int = 4
    brightness_jitter: float = 0.12
    noise_std: float = 0.05
    query_fraction: float = 0.2

    def validate(self) -> None:
        if self.classes < 2:
            raise ConfigError(f"classes must be >= 2, got {self.classes}")
        if self.per_class < 4:
            raise ConfigError(f"per_class must be >= 4, got {self.per_class}")
        if self.height < 16 or self.width < 16:
            raise ConfigError(f"image dims must be >= 16, got {self.height}x{self.width}")
        if not 1 <= self.motif_size <= min(self.height, self.width):
            raise ConfigError(f"motif_size out of range: {self.motif_size}")
        if not 0.0 < self.motif_amplitude <= 0.5:
            raise ConfigError(f"motif_amplitude must be in (0, 0.5], got {self.motif_amplitude}")
        if not 0.0 < self.motif_freq_low < self.motif_freq_high <= 0.5:
            raise ConfigError("motif frequencies must satisfy 0 < low < high <= 0.5")
        if self.background_pool < 1 or self.background_cells < 1:
            raise ConfigError("background_pool and background_cells must be >= 1")
        if self.brightness_jitter < 0.0 or self.noise_std < 0.0:
            raise ConfigError("brightness_jitter and noise_std must be >= 0")
        if not 0.0 < self.query_fraction < 1.0:
            raise ConfigError(f"query_fraction must be in (0,1), got {self.query_fraction}")
        if min(self._query_counts()) < 1 or max(self._query_counts()) >= self.per_class:
            raise ConfigError("query_fraction leaves a class without train or query members")

    def _query_counts(self) -> list[int]:
        """Per-class query allocation by largest remainder, summing to round(N*fraction)."""
        total = round(self.classes * self.per_class * self.query_fraction)
        base = total // self.classes
        extra = total - base * self.classes
        return [base + (1 if c < extra else 0) for c in range(self.classes)]

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, raw: dict) -> "GenConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown generator config keys: {sorted(unknown)}")
        return cls(**raw)


@dataclass
class Dataset:
    images: np.ndarray  # (n, 3, h, w) float64 in [0, 1]
    labels: np.ndarray  # (n,) uint32
    split: np.ndarray  # (n,) uint8, SPLIT_TRAIN or SPLIT_QUERY
    class_count: int
    gen_config: GenConfig
    seed: int

    @property
    def count(self) -> int:
        return self.images.shape[0]

    @property
    def height(self) -> int:
        return self.images.shape[2]

    @property
    def width(self) -> int:
        return self.images.shape[3]

    @property
    def train_ids(self) -> np.ndarray:
        return np.flatnonzero(self.split == SPLIT_TRAIN)

    @property
    def query_ids(self) -> np.ndarray:
        return np.flatnonzero(self.split == SPLIT_QUERY)

    def train_labels(self) -> np.ndarray:
        return self.labels[self.train_ids]


@dataclass
class SimilarityMatrix:
    """Pair-wise +/-1 supervision between sampled anchors and the database.

    ``entries[i, j]`` is +1 iff the anchor behind row i and database item j
    share a label. ``sample_ids`` are database-relative anchor indices, so a
    row always holds +1 at its own column.
    """

    entries: np.ndarray  # (r, n) int8 in {-1, +1}
    sample_ids: np.ndarray  # (r,) int64, indices into the database

    @property
    def rounds(self) -> int:
        return self.entries.shape[0]

    @property
    def database_size(self) -> int:
        return self.entries.shape[1]


def _upsample(coarse: np.ndarray, h: int, w: int) -> np.ndarray:
    return np.stack([bilinear_resize_array(ch, h, w) for ch in coarse])


def class_wave(config: GenConfig, label: int) -> tuple[float, float]:
    """Per-class grating wave vector (fx, fy) in cycles per pixel.

    Classes share a small set of orientations and two frequency bands, so
    every class signature is a unique (orientation, frequency) pair.
    """
    half = (config.classes + 1) // 2
    theta = np.pi * (label % half) / half
    freq = config.motif_freq_low if label < half else config.motif_freq_high
    return freq * np.cos(theta), freq * np.sin(theta)


def motif_patch(config: GenConfig, label: int, phase: float = 0.0) -> np.ndarray:
    """The (3, m, m) windowed grating patch of one class at a given phase.

    A raised-cosine envelope tapers the grating toward the patch border, so
    the average pixel difference between two class motifs stays small while
    the patch center keeps full amplitude.
    """
    m = config.motif_size
    fx, fy = class_wave(config, label)
    yy, xx = np.mgrid[0:m, 0:m]
    wave = np.sin(2.0 * np.pi * (fx * xx + fy * yy) + phase)
    window = np.sin(np.pi * (yy + 0.5) / m) * np.sin(np.pi * (xx + 0.5) / m)
    pattern = 0.5 + config.motif_amplitude * wave * window
    return np.broadcast_to(pattern, (3,) + pattern.shape).copy()


def class_motifs(config: GenConfig, seed: int) -> np.ndarray:
    """Canonical (classes, 3, m, m) zero-phase motif patches."""
    del seed  # motifs are phase-normalized and depend only on the config
    return np.stack([motif_patch(config, c) for c in range(config.classes)])


def generate(config: GenConfig, seed: int) -> Dataset:
    """Build the dataset as a pure function of (config, seed)."""
    config.validate()
    _, ss_bg, ss_img, ss_split = np.random.SeedSequence(seed).spawn(4)

    bg_rng = np.random.default_rng(ss_bg)
    h, w, m = config.height, config.width, config.motif_size
    backgrounds = np.stack(
        [
            _upsample(bg_rng.random((3, config.background_cells, config.background_cells)), h, w)
            for _ in range(config.background_pool)
        ]
    )

    n = config.classes * config.per_class
    images = np.empty((n, 3, h, w))
    labels = np.empty(n, dtype=np.uint32)
    rng = np.random.default_rng(ss_img)
    i = 0
    for c in range(config.classes):
        for _ in range(config.per_class):
            img = backgrounds[rng.integers(config.background_pool)].copy()
            dy = int(rng.integers(h - m + 1))
            dx = int(rng.integers(w - m + 1))
            phase = rng.uniform(0.0, 2.0 * np.pi)
            img[:, dy : dy + m, dx : dx + m] += motif_patch(config, c, phase) - 0.5
            if config.brightness_jitter:
                img += rng.uniform(-config.brightness_jitter, config.brightness_jitter)
            if config.noise_std:
                img += rng.normal(0.0, config.noise_std, img.shape)
            np.clip(img, 0.0, 1.0, out=img)
            images[i] = img
            labels[i] = c
            i += 1

    split = np.full(n, SPLIT_TRAIN, dtype=np.uint8)
    split_rng = np.random.default_rng(ss_split)
    for c, q_count in enumerate(config._query_counts()):
        members = np.arange(c * config.per_class, (c + 1) * config.per_class)
        chosen = split_rng.permutation(config.per_class)[:q_count]
        split[members[chosen]] = SPLIT_QUERY

    return Dataset(images, labels, split, config.classes, config, seed)


def similarity_matrix(sample_ids: np.ndarray, db_labels: np.ndarray) -> SimilarityMatrix:
    """+1 where the sampled anchor's label equals the database item's label."""
    sample_ids = np.asarray(sample_ids, dtype=np.int64)
    db_labels = np.asarray(db_labels)
    if sample_ids.ndim != 1 or db_labels.ndim != 1:
        raise ShapeError("sample_ids and db_labels must be 1-d")
    if sample_ids.size and (sample_ids.min() < 0 or sample_ids.max() >= db_labels.size):
        raise ShapeError("sample_ids out of database range")
    row_labels = db_labels[sample_ids]
    entries = np.where(row_labels[:, None] == db_labels[None, :], 1, -1).astype(np.int8)
    return SimilarityMatrix(entries, sample_ids)


def sample_round(dataset: Dataset, r: int, rng: np.random.Generator) -> tuple[np.ndarray, SimilarityMatrix]:
    """Sample r anchors uniformly without replacement from the database split."""
    db_labels = dataset.train_labels()
    if r > db_labels.size:
        raise ConfigError(f"r={r} exceeds the database size {db_labels.size}")
    ids = rng.choice(db_labels.size, size=r, replace=False)
    return ids, similarity_matrix(ids, db_labels)


def pick_positive(row: int, sim: SimilarityMatrix, rng: np.random.Generator) -> int:
    """Uniform same-class database index for anchor row, excluding itself when possible."""
    own = int(sim.sample_ids[row])
    positives = np.flatnonzero(sim.entries[row] == 1)
    if positives.size == 0:
        raise SupervisionError(f"similarity row {row} has no positive entry")
    others = positives[positives != own]
    if others.size == 0:
        return own
    return int(others[rng.integers(others.size)])


def save_dataset(dataset: Dataset, path) -> None:
    header = {
        "gen_config": dataset.gen_config.to_dict(),
        "seed": dataset.seed,
        "class_count": dataset.class_count,
        "count": dataset.count,
    }
    buf = bytearray(_MAGIC)
    buf += struct.pack("<I", _VERSION)
    buf += json_block(header)
    buf += struct.pack("<I", dataset.count)
    buf += dataset.labels.astype("<u4").tobytes()
    buf += dataset.split.astype("u1").tobytes()
    buf += tensor_bytes(dataset.images)
    with open(path, "wb") as fh:
        fh.write(finish_with_crc(buf))


def load_dataset(path) -> Dataset:
    reader = open_checked(path, "dataset")
    if reader.take(4) != _MAGIC:
        raise DataFormatError("dataset: bad magic")
    version = reader.u32()
    if version != _VERSION:
        raise DataFormatError(f"dataset: unsupported version {version}")
    header = read_json_block(reader)
    config = GenConfig.from_dict(header["gen_config"])
    n = reader.u32()
    labels = np.frombuffer(reader.take(4 * n), dtype="<u4").astype(np.uint32)
    split = np.frombuffer(reader.take(n), dtype="u1").astype(np.uint8)
    images = read_tensor(reader)
    if reader.remaining():
        raise DataFormatError(f"dataset: {reader.remaining()} trailing bytes")
    if images.shape[0] != n:
        raise DataFormatError("dataset: image count disagrees with header")
    return Dataset(images, labels, split, int(header["class_count"]), config, int(header["seed"]))
