"""Alternating training: gradient steps on the network, closed-form bit
updates on the database codes.

Each iteration samples r anchors from the database split, builds triplets
(anchor, positive pair, erased view regenerated from the current network's
feature maps), runs a fixed number of epochs of SGD with the database codes
frozen, then re-encodes the anchors and sweeps the code columns.

Column update: with every column but m fixed, the residual objective is
linear in column m, so its minimizer is

    V[:, m] = -sign(V_rest @ (U_rest.T @ U[:, m]) - k * G[:, m])

where G = S.T @ U aggregates the sampled codes by pair label. A published
variant of this update weights G by 2k instead of k; it is available behind
``v_update_double_weight`` but loses the guarantee of matching the
brute-force column minimizer.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, fields

import numpy as np

from . import erasing, objective
from .backbone import ArchDescriptor, BackboneParams, extract_batch
from .dataset import Dataset, SimilarityMatrix, pick_positive, sample_round
from .errors import ConfigError, ShapeError
from .hash_layer import BitCodeMatrix, HashParams, hash_forward
from .optim import SgdState, sgd_step
from .serialize import read_checkpoint, write_checkpoint
from .tensor import Tensor, no_grad


@dataclass(frozen=True)
class TrainConfig:
    k: int = 16
    r: int = 256
    iterations: int = 10
    epochs_per_iteration: int = 5
    batch_size: int = 4
    lr: float = 5e-2
    lr_milestones: tuple[int, ...] = (5, 8)
    momentum: float = 0.9
    weight_decay: float = 1e-5
    alpha: float = 1.0
    beta: float = 1.0
    n_e: int = 8
    l: int = 5
    epsilon: float = 1e-6
    seed: int = 0
    v_passes: int = 1
    grad_clip: float = 0.15
    srem_enabled: bool = True
    normalize_loss: bool = True
    v_update_double_weight: bool = False

    def validate(self) -> None:
        positive = {
            "k": self.k,
            "r": self.r,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "n_e": self.n_e,
            "l": self.l,
            "epsilon": self.epsilon,
            "v_passes": self.v_passes,
            "epochs_per_iteration": self.epochs_per_iteration,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ConfigError(f"{name} must be > 0, got {value}")
        if self.k > 512:
            raise ConfigError(f"k must be <= 512, got {self.k}")
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        for name, value in (("momentum", self.momentum), ("weight_decay", self.weight_decay),
                            ("alpha", self.alpha), ("beta", self.beta), ("grad_clip", self.grad_clip)):
            if value < 0:
                raise ConfigError(f"{name} must be >= 0, got {value}")
        ms = list(self.lr_milestones)
        if any(not isinstance(m, int) for m in ms):
            raise ConfigError(f"lr_milestones must be integers, got {ms}")
        if ms != sorted(set(ms)):
            raise ConfigError(f"lr_milestones must be strictly increasing, got {ms}")
        if ms and (ms[0] < 0 or ms[-1] >= self.iterations):
            raise ConfigError(f"lr_milestones must lie in [0, iterations), got {ms}")

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["lr_milestones"] = list(self.lr_milestones)
        return d

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        raw = dict(raw)
        if "lr_milestones" in raw:
            raw["lr_milestones"] = tuple(raw["lr_milestones"])
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    @property
    def plain_mode(self) -> bool:
        """True when training reduces to the similarity term alone."""
        return not self.srem_enabled and self.alpha == 0.0 and self.beta == 0.0


@dataclass
class EpochLoss:
    iteration: int
    epoch: int
    l_sq: float
    l_self: float
    l_others: float
    total: float


@dataclass
class TripletRound:
    """One sampling round: anchors, their positives and erased views."""

    sim: SimilarityMatrix
    positive_rows: np.ndarray | None  # database-relative, aligned with sim.sample_ids
    erased: np.ndarray | None  # (r, 3, h, w)


@dataclass
class TrainState:
    backbone: BackboneParams
    hash_params: HashParams
    v: np.ndarray  # (n, k) float64 in {-1, +1}
    rng: np.random.Generator
    iteration: int = 0
    loss_log: list[EpochLoss] = field(default_factory=list)

    def parameters(self) -> list[Tensor]:
        return self.backbone.parameters() + self.hash_params.parameters()


def similarity_aggregate(s_entries: np.ndarray, u: np.ndarray) -> np.ndarray:
    """G = S.T @ U: per database item, the label-weighted sum of sampled codes."""
    s = np.asarray(s_entries, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if s.ndim != 2 or u.ndim != 2 or s.shape[0] != u.shape[0]:
        raise ShapeError(f"aggregate shapes disagree: s {s.shape}, u {u.shape}")
    return s.T @ u


def discrete_loss(u: np.ndarray, v: np.ndarray, s_entries: np.ndarray, bits: int) -> float:
    """Objective minimized by the code sweep, evaluated directly."""
    resid = np.asarray(u, dtype=np.float64) @ np.asarray(v, dtype=np.float64).T
    resid = resid - bits * np.asarray(s_entries, dtype=np.float64)
    return float(np.sum(resid * resid))


def update_code_column(
    v: np.ndarray,
    u: np.ndarray,
    aggregate: np.ndarray,
    m: int,
    bits: int,
    double_weight: bool = False,
) -> np.ndarray:
    """Replace column m of v with its closed-form minimizer (in place).

    A zero argument maps to -1 (the inner sign treats 0 as +1).
    """
    if not 0 <= m < bits:
        raise ShapeError(f"column index {m} out of range for k={bits}")
    rest = [j for j in range(bits) if j != m]
    cross = v[:, rest] @ (u[:, rest].T @ u[:, m])
    weight = 2.0 * bits if double_weight else float(bits)
    arg = cross - weight * aggregate[:, m]
    v[:, m] = np.where(arg < 0.0, 1.0, -1.0)
    return v


def sweep_codes(
    v: np.ndarray,
    u: np.ndarray,
    s_entries: np.ndarray,
    bits: int,
    passes: int = 1,
    double_weight: bool = False,
    check_monotone: bool = False,
) -> np.ndarray:
    """Column sweeps over the database codes; never increases the objective."""
    aggregate = similarity_aggregate(s_entries, u)
    before = discrete_loss(u, v, s_entries, bits) if check_monotone else None
    for _ in range(passes):
        for m in range(bits):
            update_code_column(v, u, aggregate, m, bits, double_weight)
            if check_monotone:
                after = discrete_loss(u, v, s_entries, bits)
                if after > before + 1e-9 * max(1.0, abs(before)):
                    raise AssertionError(f"code sweep increased the objective: {before} -> {after}")
                before = after
    return v


def default_arch(dataset: Dataset) -> ArchDescriptor:
    return ArchDescriptor(input_height=dataset.height, input_width=dataset.width)


def encode_images(state: TrainState, images: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Relaxed codes for a stack of images, without recording gradients."""
    outs = []
    with no_grad():
        for start in range(0, images.shape[0], chunk):
            x = Tensor(images[start : start + chunk])
            _, z = extract_batch(x, state.backbone)
            outs.append(hash_forward(z, state.hash_params).data)
    return np.concatenate(outs, axis=0) if outs else np.zeros((0, state.hash_params.bits))


def materialize_round(state: TrainState, dataset: Dataset, config: TrainConfig) -> TripletRound:
    """Sample anchors and, unless in plain mode, build positives and erased views."""
    sample_ids, sim = sample_round(dataset, config.r, state.rng)
    if config.plain_mode:
        return TripletRound(sim, None, None)
    positives = np.array([pick_positive(row, sim, state.rng) for row in range(config.r)], dtype=np.int64)

    train_ids = dataset.train_ids
    anchors = dataset.images[train_ids[sample_ids]]
    erased = np.empty_like(anchors)
    with no_grad():
        a, _ = extract_batch(Tensor(anchors), state.backbone)
    for i in range(config.r):
        if config.srem_enabled:
            erased[i] = erasing.make_erased(
                anchors[i], a.data[i], config.n_e, config.l, config.epsilon
            )
        else:
            erased[i] = anchors[i]
    return TripletRound(sim, positives, erased)


def train_epoch(
    state: TrainState,
    dataset: Dataset,
    round_data: TripletRound,
    config: TrainConfig,
    sgd: SgdState,
) -> tuple[float, float, float, float]:
    """One pass over the round's triplets in shuffled mini-batches.

    Returns the summed (l_sq, l_self, l_others, total) over the epoch.
    """
    train_ids = dataset.train_ids
    sim = round_data.sim
    r = sim.rounds
    params = state.parameters()
    sums = np.zeros(4)

    perm = state.rng.permutation(r)
    for start in range(0, r, config.batch_size):
        rows = perm[start : start + config.batch_size]
        b = rows.size
        anchors = dataset.images[train_ids[sim.sample_ids[rows]]]
        s_batch = sim.entries[rows].astype(np.float64)

        if config.plain_mode:
            x = Tensor(anchors)
            _, z = extract_batch(x, state.backbone)
            u_all = hash_forward(z, state.hash_params)
            value, grad_u = objective.loss_sq(
                u_all.data, state.v, s_batch, config.k, config.normalize_loss
            )
            seed = grad_u
            sums += (value, 0.0, 0.0, value)
        else:
            positives = dataset.images[train_ids[round_data.positive_rows[rows]]]
            x = Tensor(np.concatenate([anchors, round_data.erased[rows], positives], axis=0))
            _, z = extract_batch(x, state.backbone)
            u_all = hash_forward(z, state.hash_params)
            u = u_all.data[:b]
            u_view = u_all.data[b : 2 * b]
            u_pos = u_all.data[2 * b :]
            terms, grad_u, grad_view, grad_pos = objective.loss_total(
                u, u_view, u_pos, state.v, s_batch, config.k,
                config.alpha, config.beta, config.normalize_loss,
            )
            seed = np.concatenate([grad_u, grad_view, grad_pos], axis=0)
            sums += (terms.l_sq, terms.l_self, terms.l_others, terms.total)

        u_all.backward(seed)
        grads = [p.grad for p in params]
        if config.grad_clip:
            grads = [clip_gradient(g, config.grad_clip) for g in grads]
        sgd_step(params, grads, sgd)
        for p in params:
            p.zero_grad()

    return tuple(sums)


def clip_gradient(g: np.ndarray, max_norm: float) -> np.ndarray:
    """Rescale one gradient tensor so its L2 norm is at most max_norm.

    The discrete step rewrites the code targets each iteration; the first
    batches afterwards see residuals an order of magnitude above steady
    state, and unclipped steps large enough to dead-end the relu stack.
    """
    norm = float(np.sqrt((g * g).sum()))
    if norm <= max_norm:
        return g
    return g * (max_norm / norm)


def learning_rate_at(config: TrainConfig, iteration: int) -> float:
    drops = sum(1 for m in config.lr_milestones if iteration >= m)
    return config.lr / (10.0 ** drops)


@dataclass
class TrainResult:
    state: TrainState
    config: TrainConfig
    arch: ArchDescriptor


def random_codes(n: int, bits: int, rng: np.random.Generator) -> np.ndarray:
    """Random +/-1 init for the database codes, balanced per column.

    Balancing (each column sums to ~0) removes the spurious global pull that
    an unbalanced random init exerts on every sampled code through the
    negative-pair majority, which otherwise collapses training at the start.
    """
    v = np.empty((n, bits))
    half = n // 2
    base = np.concatenate([np.ones(half), -np.ones(n - half)])
    for m in range(bits):
        v[:, m] = base[rng.permutation(n)]
    return v


def init_state(dataset: Dataset, config: TrainConfig) -> TrainState:
    config.validate()
    arch = default_arch(dataset)
    ss_backbone, ss_hash, ss_codes, ss_rounds = np.random.SeedSequence(config.seed).spawn(4)
    backbone = BackboneParams.init(arch, ss_backbone)
    embed_dim = arch.feature_shape()[0]
    hash_params = HashParams.init(config.k, embed_dim, ss_hash)
    n = dataset.train_ids.size
    v = random_codes(n, config.k, np.random.default_rng(ss_codes))
    return TrainState(backbone, hash_params, v, np.random.default_rng(ss_rounds))


def train(
    dataset: Dataset,
    config: TrainConfig,
    mask_dump_dir=None,
) -> TrainResult:
    """Run the full alternating schedule; deterministic in (dataset, config)."""
    state = init_state(dataset, config)
    if config.r > dataset.train_ids.size:
        raise ConfigError(f"r={config.r} exceeds the database size {dataset.train_ids.size}")

    sgd = SgdState.for_params(state.parameters(), config.lr, config.momentum, config.weight_decay)
    for iteration in range(config.iterations):
        sgd.learning_rate = learning_rate_at(config, iteration)
        round_data = materialize_round(state, dataset, config)
        if mask_dump_dir is not None and not config.plain_mode and config.srem_enabled:
            _dump_masks(state, dataset, round_data, config, mask_dump_dir, iteration)
        for epoch in range(config.epochs_per_iteration):
            l_sq, l_self, l_others, total = train_epoch(state, dataset, round_data, config, sgd)
            state.loss_log.append(
                EpochLoss(iteration, epoch, float(l_sq), float(l_self), float(l_others), float(total))
            )
        anchors = dataset.images[dataset.train_ids[round_data.sim.sample_ids]]
        u = encode_images(state, anchors)
        sweep_codes(
            state.v, u, round_data.sim.entries, config.k,
            passes=config.v_passes, double_weight=config.v_update_double_weight,
        )
        state.iteration = iteration + 1
    return TrainResult(state, config, state.backbone.arch)


def _dump_masks(state, dataset, round_data, config, dump_dir, iteration) -> None:
    """Debug dump: per-anchor erase mask as PGM plus anchor positions as JSON."""
    import json
    import os

    out = os.path.join(dump_dir, f"iter_{iteration:03d}")
    os.makedirs(out, exist_ok=True)
    train_ids = dataset.train_ids
    anchors = dataset.images[train_ids[round_data.sim.sample_ids]]
    with no_grad():
        a, _ = extract_batch(Tensor(anchors), state.backbone)
    for i in range(anchors.shape[0]):
        mask = erasing.erase_mask(
            a.data[i], dataset.height, dataset.width, config.n_e, config.l, config.epsilon
        )
        erasing.write_mask_pgm(os.path.join(out, f"anchor_{i:04d}.pgm"), mask)
        with open(os.path.join(out, f"anchor_{i:04d}.json"), "w") as fh:
            json.dump({"anchors": mask.anchors}, fh)


def save_model(path, result: TrainResult) -> None:
    """Checkpoint both parameter groups plus the architecture descriptor."""
    tensors = dict(result.state.backbone.named_arrays())
    tensors.update(result.state.hash_params.named_arrays())
    meta = {"arch": result.arch.to_dict(), "k": result.config.k}
    write_checkpoint(path, meta, tensors)


def load_model(path) -> tuple[ArchDescriptor, BackboneParams, HashParams]:
    meta, tensors = read_checkpoint(path)
    arch = ArchDescriptor.from_dict(meta["arch"])
    backbone = BackboneParams.init(arch, seed=0)
    for i in range(len(arch.stage_channels)):
        backbone.weights[i] = Tensor(tensors[f"conv{i}_w"], requires_grad=True)
        backbone.biases[i] = Tensor(tensors[f"conv{i}_b"], requires_grad=True)
    hp = HashParams(Tensor(tensors["hash_w"], requires_grad=True), Tensor(tensors["hash_b"], requires_grad=True))
    if hp.bits != int(meta["k"]):
        raise ShapeError("checkpoint k disagrees with the stored hash weights")
    return arch, backbone, hp


def database_codes(result: TrainResult) -> BitCodeMatrix:
    return BitCodeMatrix.from_codes(result.state.v)


def write_train_log(path, rows: list[EpochLoss]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "epoch", "l_sq", "l_self", "l_others", "total"])
        for row in rows:
            writer.writerow([row.iteration, row.epoch,
                             repr(row.l_sq), repr(row.l_self), repr(row.l_others), repr(row.total)])
