"""Retrieval metrics: average precision over ranked relevance flags, and the
end-to-end evaluation pass (encode queries, rank the database, report).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .backbone import BackboneParams, extract_batch
from .dataset import Dataset
from .errors import ShapeError, SupervisionError
from .hash_layer import HashParams, binarize, hash_forward, pack_matrix
from .index import HammingIndex, query_topk
from .tensor import Tensor, no_grad


def average_precision(flags) -> float:
    """Average of precision at each relevant rank; 0.0 when nothing relevant.

    ``flags`` are 0/1 relevance indicators of the ranked list, truncated at
    the evaluation cutoff.
    """
    flags = np.asarray(flags, dtype=np.float64)
    if flags.ndim != 1 or flags.size < 1:
        raise ShapeError("flags must be a non-empty 1-d sequence")
    total = flags.sum()
    if total == 0.0:
        return 0.0
    ranks = np.arange(1, flags.size + 1)
    return float(((np.cumsum(flags) / ranks) * flags).sum() / total)


def mean_ap(aps) -> float:
    aps = np.asarray(aps, dtype=np.float64)
    if aps.size == 0:
        raise ShapeError("mean_ap over an empty run set")
    return float(aps.sum() / aps.size)


def precision_at(flags, k: int) -> float:
    flags = np.asarray(flags, dtype=np.float64)
    if not 1 <= k <= flags.size:
        raise ShapeError(f"precision cutoff {k} out of range for {flags.size} flags")
    return float(flags[:k].mean())


@dataclass
class EvalReport:
    query_ids: np.ndarray  # dataset-global ids
    ap: np.ndarray
    p_at_10: np.ndarray
    map: float
    p_at_10_mean: float
    cutoff: int


def encode_queries(dataset: Dataset, backbone: BackboneParams, hash_params: HashParams) -> np.ndarray:
    """Binarized codes for the query split, one image at a time semantically
    (batched execution is numerically identical stage by stage)."""
    ids = dataset.query_ids
    codes = np.empty((ids.size, hash_params.bits))
    with no_grad():
        for start in range(0, ids.size, 256):
            chunk = ids[start : start + 256]
            _, z = extract_batch(Tensor(dataset.images[chunk]), backbone)
            codes[start : start + chunk.size] = binarize(hash_forward(z, hash_params))
    return codes


def evaluate(
    index: HammingIndex,
    backbone: BackboneParams,
    hash_params: HashParams,
    dataset: Dataset,
    cutoff: int | None = None,
) -> EvalReport:
    """Per-query AP at the cutoff (full ranking by default) plus precision@10."""
    db_labels = dataset.train_labels()
    if index.count != db_labels.size or not np.array_equal(index.labels, db_labels):
        raise SupervisionError("index labels do not match the dataset's database split")
    if cutoff is None:
        cutoff = index.count
    query_ids = dataset.query_ids
    codes = pack_matrix(encode_queries(dataset, backbone, hash_params))

    aps = np.empty(query_ids.size)
    p10 = np.empty(query_ids.size)
    for qi, qid in enumerate(query_ids):
        ranked = query_topk(index, codes[qi], cutoff)
        flags = np.fromiter(
            (1.0 if index.labels[db_id] == dataset.labels[qid] else 0.0 for db_id, _ in ranked),
            dtype=np.float64,
            count=len(ranked),
        )
        aps[qi] = average_precision(flags)
        p10[qi] = precision_at(flags, min(10, flags.size))
    return EvalReport(query_ids, aps, p10, mean_ap(aps), float(p10.mean()), cutoff)


def write_report(report: EvalReport, results_path, summary_path, config_hash: str, seeds: dict) -> None:
    """results.csv with per-query rows plus a deterministic summary.json."""
    with open(results_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query_id", "ap", "p_at_10"])
        for qid, ap, p in zip(report.query_ids, report.ap, report.p_at_10):
            writer.writerow([int(qid), repr(float(ap)), repr(float(p))])
    summary = {
        "map": report.map,
        "p_at_10": report.p_at_10_mean,
        "cutoff": report.cutoff,
        "config_hash": config_hash,
        "seeds": seeds,
    }
    with open(summary_path, "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
