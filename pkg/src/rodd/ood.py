"""Post-training OOD machinery.

Fits one unit direction per class (the first right singular vector of that
class's feature matrix), scores test features by the smallest angle to any
class direction, estimates the accept threshold as an empirical quantile of
the training scores, and runs Monte-Carlo inference over stochastic input
augmentations.  A max-softmax baseline scorer is included for comparison
runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .contrastive import AugmentationSpec, augment_batch
from .encoder import FEATURE_NORM_FLOOR, EncoderModel, features, softmax
from .errors import ContractViolation, DegenerateFeatureError
from .linalg import as_matrix, svd

SCORE_COLUMNS = ("sample_id", "delta", "argmin_class", "mc_probability", "decision")


@dataclass
class ClassSubspaceSet:
    """Per-class unit directions plus the fitted angle threshold."""

    directions: list[np.ndarray]
    threshold: float
    quantile_used: float

    @property
    def n_classes(self) -> int:
        return len(self.directions)

    def direction_matrix(self) -> np.ndarray:
        return np.column_stack(self.directions)


@dataclass
class ScoreRecord:
    sample_id: int
    delta: float
    argmin_class: int
    mc_probability: float | None
    decision: str  # "ID" | "OOD"
    degenerate_draws: int = 0


def fit_subspaces(
    feats, labels, quantile: float = 0.95, abs_cosine: bool = False
) -> ClassSubspaceSet:
    """Fit one dominant direction per class and the angle threshold.

    The direction is the first right singular vector of the class's feature
    matrix, oriented so the mean training-feature projection onto it is
    nonnegative (exact ties fall back to making the largest-magnitude entry
    positive).  The threshold is the empirical quantile of the training
    uncertainty scores under these directions: the smallest score with at
    least `quantile` of the training mass at or below it.
    """
    feats = as_matrix(feats, "features")
    if labels is None:
        raise ContractViolation("fit_subspaces requires labels")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (feats.shape[0],):
        raise ContractViolation(
            f"labels shape {labels.shape} != ({feats.shape[0]},)"
        )
    if not 0.0 < quantile < 1.0:
        raise ContractViolation(f"quantile must lie in (0, 1), got {quantile}")
    n_classes = int(labels.max()) + 1 if labels.size else 0
    if n_classes < 1:
        raise ContractViolation("at least one class is required")
    directions = []
    for cls in range(n_classes):
        block = feats[labels == cls]
        if block.shape[0] == 0:
            raise ContractViolation(f"class {cls} has no samples")
        u = svd(block).v[:, 0]
        mean_proj = float((block @ u).mean())
        if mean_proj < 0:
            u = -u
        elif mean_proj == 0.0 and u[int(np.argmax(np.abs(u)))] < 0:
            u = -u
        directions.append(u)
    subspaces = ClassSubspaceSet(directions, threshold=0.0, quantile_used=quantile)
    scores, _ = uncertainty_scores(feats, subspaces, abs_cosine=abs_cosine)
    order = np.sort(scores)
    k = int(math.ceil(quantile * scores.size - 1e-9))
    k = min(max(k, 1), scores.size)
    subspaces.threshold = float(order[k - 1])
    return subspaces


def uncertainty_scores(
    feats, subspaces: ClassSubspaceSet, abs_cosine: bool = False
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized minimum angle to any class direction, plus the arg classes.

    Angles are arccos of the (signed, or absolute when abs_cosine) cosine
    between each feature and each direction, with the cosine clamped to
    [-1, 1] against rounding; ties in the minimum go to the lowest class
    index.  Zero-norm features raise DegenerateFeatureError.
    """
    feats = as_matrix(feats, "features")
    norms = np.linalg.norm(feats, axis=1)
    bad = np.nonzero(norms < FEATURE_NORM_FLOOR)[0]
    if bad.size:
        raise DegenerateFeatureError(int(bad[0]), float(norms[bad[0]]))
    cos = (feats / norms[:, None]) @ subspaces.direction_matrix()
    if abs_cosine:
        cos = np.abs(cos)
    angles = np.arccos(np.clip(cos, -1.0, 1.0))
    return angles.min(axis=1), angles.argmin(axis=1)


def uncertainty_score(
    feat, subspaces: ClassSubspaceSet, abs_cosine: bool = False
) -> tuple[float, int]:
    """Angle score for a single feature vector: (delta, argmin class)."""
    arr = np.asarray(feat, dtype=np.float64)
    if arr.ndim != 1:
        raise ContractViolation(f"expected a 1-D feature vector, got shape {arr.shape}")
    deltas, argmins = uncertainty_scores(arr[None, :], subspaces, abs_cosine=abs_cosine)
    return float(deltas[0]), int(argmins[0])


def mc_detect(
    model: EncoderModel,
    subspaces: ClassSubspaceSet,
    raw_sample,
    k_draws: int = 50,
    noise: AugmentationSpec | None = None,
    seed: int = 0,
    sample_id: int = 0,
    abs_cosine: bool = False,
) -> ScoreRecord:
    """Monte-Carlo accept probability from k stochastic input augmentations.

    Each draw is encoded in eval mode and scored; mc_probability is the
    fraction of draws with angle at or below the threshold, and the decision
    is ID iff that fraction reaches 0.5.  Degenerate-feature draws count as
    rejections (angle pi in the record's mean delta) and are tallied on the
    record.  Deterministic per seed.
    """
    if k_draws < 1:
        raise ContractViolation(f"k_draws must be >= 1, got {k_draws}")
    noise = noise if noise is not None else AugmentationSpec(gaussian_sigma=0.01)
    raw = np.asarray(raw_sample, dtype=np.float64)
    if raw.ndim != 1:
        raise ContractViolation(f"raw_sample must be a 1-D vector, got {raw.shape}")
    rng = np.random.default_rng(seed)
    draws = augment_batch(np.tile(raw, (k_draws, 1)), noise, rng)
    feats = features(model, draws)
    norms = np.linalg.norm(feats, axis=1)
    valid = norms >= FEATURE_NORM_FLOOR
    deltas = np.full(k_draws, math.pi)
    argmins = np.full(k_draws, -1, dtype=np.int64)
    if valid.any():
        deltas[valid], argmins[valid] = uncertainty_scores(
            feats[valid], subspaces, abs_cosine=abs_cosine
        )
    hits = int(((deltas <= subspaces.threshold) & valid).sum())
    probability = hits / k_draws
    if valid.any():
        votes = np.bincount(argmins[valid], minlength=subspaces.n_classes)
        arg_class = int(np.argmax(votes))
    else:
        arg_class = -1
    return ScoreRecord(
        sample_id=int(sample_id),
        delta=float(deltas.mean()),
        argmin_class=arg_class,
        mc_probability=probability,
        decision="ID" if probability >= 0.5 else "OOD",
        degenerate_draws=int(k_draws - valid.sum()),
    )


def score_records(
    feats, subspaces: ClassSubspaceSet, start_id: int = 0, abs_cosine: bool = False
) -> list[ScoreRecord]:
    """Deterministic single-pass records: decision is delta <= threshold."""
    deltas, argmins = uncertainty_scores(feats, subspaces, abs_cosine=abs_cosine)
    return [
        ScoreRecord(
            sample_id=start_id + i,
            delta=float(deltas[i]),
            argmin_class=int(argmins[i]),
            mc_probability=None,
            decision="ID" if deltas[i] <= subspaces.threshold else "OOD",
        )
        for i in range(deltas.size)
    ]


def msp_score(logits) -> float:
    """Maximum softmax probability of a single logit vector."""
    arr = np.asarray(logits, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 1:
        raise ContractViolation(f"logits must be a nonempty 1-D vector, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ContractViolation("logits must be finite")
    return float(softmax(arr[None, :])[0].max())


def write_scores(path, records) -> None:
    """Score table CSV with exactly the columns the pipeline consumes."""
    lines = [",".join(SCORE_COLUMNS)]
    for rec in records:
        mc = "" if rec.mc_probability is None else repr(float(rec.mc_probability))
        lines.append(
            f"{rec.sample_id},{float(rec.delta)!r},{rec.argmin_class},{mc},{rec.decision}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def subspaces_to_dict(subspaces: ClassSubspaceSet) -> dict:
    return {
        "directions": [[float(x) for x in u] for u in subspaces.directions],
        "threshold": float(subspaces.threshold),
        "quantile_used": float(subspaces.quantile_used),
    }


def subspaces_from_dict(payload: dict) -> ClassSubspaceSet:
    return ClassSubspaceSet(
        directions=[np.asarray(u, dtype=np.float64) for u in payload["directions"]],
        threshold=float(payload["threshold"]),
        quantile_used=float(payload["quantile_used"]),
    )
