"""Self-supervised pre-training of the encoder body on augmentation pairs.

The objective is the pairwise spectral term ||A - F F^T||_F^2 over a batch
adjacency built from two augmented views per source sample; an optional
projected sign-gradient perturbation of the views maximizes that same
objective within an infinity-norm budget before each update.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .encoder import EncoderModel, _body_backward, _body_forward, features
from .errors import ContractViolation, DivergenceError
from .linalg import as_matrix


@dataclass(frozen=True)
class AugmentationSpec:
    """Stochastic input augmentation: additive noise, scale jitter, dropout."""

    gaussian_sigma: float = 0.0
    mask_fraction: float = 0.0
    scale_jitter: float = 0.0

    def __post_init__(self):
        if not all(
            math.isfinite(v)
            for v in (self.gaussian_sigma, self.mask_fraction, self.scale_jitter)
        ):
            raise ContractViolation("augmentation parameters must be finite")
        if self.gaussian_sigma < 0:
            raise ContractViolation("gaussian_sigma must be >= 0")
        if not 0.0 <= self.mask_fraction < 1.0:
            raise ContractViolation("mask_fraction must lie in [0, 1)")
        if self.scale_jitter < 0:
            raise ContractViolation("scale_jitter must be >= 0")


@dataclass(frozen=True)
class AdversarialSpec:
    """Infinity-norm budget and schedule for the sign-gradient perturbation."""

    epsilon: float
    steps: int = 3
    step_size: float = 0.01

    def __post_init__(self):
        if self.epsilon < 0:
            raise ContractViolation("epsilon must be >= 0")
        if self.steps < 1:
            raise ContractViolation("steps must be >= 1")
        if self.step_size <= 0:
            raise ContractViolation("step_size must be > 0")
        if self.steps * self.step_size < self.epsilon:
            warnings.warn(
                "steps * step_size < epsilon: the budget cannot be reached",
                stacklevel=2,
            )


@dataclass
class PretrainConfig:
    epochs: int
    batch_size: int = 64
    lr: float = 0.02
    momentum: float = 0.9
    grad_clip: float = 1.0  # global-norm cap; the objective is quartic in F
    aug: AugmentationSpec = AugmentationSpec(gaussian_sigma=0.1)
    adv: AdversarialSpec | None = None
    seed: int = 0


def augment(x, spec: AugmentationSpec, rng_seed: int) -> np.ndarray:
    """One augmented copy of a single input vector, deterministic per seed."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ContractViolation(f"augment expects a 1-D vector, got shape {arr.shape}")
    return augment_batch(arr[None, :], spec, np.random.default_rng(rng_seed))[0]


def augment_batch(x, spec: AugmentationSpec, rng: np.random.Generator) -> np.ndarray:
    """Independently augment each row; the all-zero spec is an exact identity.

    Draw order is fixed (noise, jitter factors, mask scores) so results only
    depend on the generator state, not on which parameters are active.
    """
    x = as_matrix(x, "x")
    n, d = x.shape
    noise = rng.standard_normal((n, d))
    factors = 1.0 + rng.uniform(-spec.scale_jitter, spec.scale_jitter, size=n)
    scores = rng.random((n, d))
    out = (x + spec.gaussian_sigma * noise) * factors[:, None]
    k = int(round(spec.mask_fraction * d))
    if k > 0:
        drop = np.argsort(scores, axis=1, kind="stable")[:, :k]
        np.put_along_axis(out, drop, 0.0, axis=1)
    return out


def batch_adjacency(pairing, n: int) -> np.ndarray:
    """Symmetric 0/1 adjacency with unit diagonal from positive view pairs.

    Each (i, j) marks both (i, j) and (j, i); listing the same unordered
    pair twice (or a self-pair) is a ContractViolation.
    """
    if n < 1:
        raise ContractViolation("batch size must be positive")
    a = np.eye(n)
    seen = set()
    for pair in pairing:
        i, j = (int(pair[0]), int(pair[1]))
        if not (0 <= i < n and 0 <= j < n):
            raise ContractViolation(f"pair ({i}, {j}) out of range for batch size {n}")
        if i == j:
            raise ContractViolation(f"self-pair ({i}, {i}) conflicts with the unit diagonal")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise ContractViolation(f"duplicate pair {key}")
        seen.add(key)
        a[i, j] = a[j, i] = 1.0
    return a


def spectral_contrastive_loss(batch_features, adjacency) -> tuple[float, np.ndarray]:
    """||A - F F^T||_F^2 and its gradient -4 (A - F F^T) F with respect to F."""
    f = as_matrix(batch_features, "features")
    a = as_matrix(adjacency, "adjacency")
    n = f.shape[0]
    if a.shape != (n, n):
        raise ContractViolation(
            f"adjacency shape {a.shape} does not match {n} feature rows"
        )
    if n and float(np.abs(a - a.T).max()) > 1e-12:
        raise ContractViolation("adjacency must be symmetric")
    residual = a - f @ f.T
    loss = float((residual * residual).sum())
    grad = -4.0 * (residual @ f)
    return loss, grad


def adversarial_perturb(
    model: EncoderModel, batch, pairing, spec: AdversarialSpec
) -> np.ndarray:
    """Projected sign-gradient ascent on the pairwise spectral objective.

    Each step moves every coordinate by +-step_size along the sign of the
    input gradient and re-projects onto the infinity-norm ball of radius
    epsilon around the original batch.  epsilon = 0 returns the input
    unchanged.
    """
    x0 = as_matrix(batch, "batch").copy()
    if spec.epsilon == 0.0:
        return x0
    adjacency = batch_adjacency(pairing, x0.shape[0])
    x = x0.copy()
    for _ in range(spec.steps):
        feats, cache = _body_forward(model.layers, x)
        residual = adjacency - feats @ feats.T
        dfeat = -4.0 * (residual @ feats)
        _, dx = _body_backward(model.layers, cache, dfeat)
        x = x + spec.step_size * np.sign(dx)
        x = x0 + np.clip(x - x0, -spec.epsilon, spec.epsilon)
    return x


def pretrain(model: EncoderModel, dataset, config: PretrainConfig):
    """Optimize the body on two augmented views per sample; head untouched.

    The per-batch objective is the spectral loss divided by the number of
    view rows (keeps the step size meaningful across batch sizes); history
    records that normalized value per epoch.  Deterministic per seed.
    Returns (model, history).
    """
    if dataset.n < 1:
        raise ContractViolation("dataset must be nonempty")
    rng = np.random.default_rng(config.seed)
    body_params = {}
    for i, layer in enumerate(model.layers):
        body_params[f"layers.{i}.weight"] = layer.weight
        if layer.bias is not None:
            body_params[f"layers.{i}.bias"] = layer.bias
    velocity = {k: np.zeros_like(v) for k, v in body_params.items()}
    history = []
    n = dataset.n
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            xb = dataset.inputs[idx]
            m = idx.size
            views = augment_batch(np.vstack([xb, xb]), config.aug, rng)
            pairs = [(i, m + i) for i in range(m)]
            if config.adv is not None:
                views = adversarial_perturb(model, views, pairs, config.adv)
            adjacency = batch_adjacency(pairs, 2 * m)
            feats, cache = _body_forward(model.layers, views)
            loss, dfeat = spectral_contrastive_loss(feats, adjacency)
            scale = 1.0 / (2 * m)
            loss *= scale
            if not math.isfinite(loss):
                raise DivergenceError(epoch)
            grads, _ = _body_backward(model.layers, cache, dfeat * scale)
            norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            clip = min(1.0, config.grad_clip / max(norm, 1e-12))
            for key, param in body_params.items():
                velocity[key] *= config.momentum
                velocity[key] -= config.lr * clip * grads[key]
                param += velocity[key]
            losses.append(loss)
        history.append(float(np.mean(losses)))
    return model, history


def pair_cosine_stats(model: EncoderModel, dataset, spec, seed: int, n_pairs: int = 64):
    """Mean within-pair vs between-pair feature cosine on fresh view pairs."""
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, dataset.n, size=n_pairs)
    xb = dataset.inputs[idx]
    views = augment_batch(np.vstack([xb, xb]), spec, rng)
    feats = features(model, views)
    norms = np.linalg.norm(feats, axis=1)
    norms[norms == 0] = 1.0
    unit = feats / norms[:, None]
    cos = unit @ unit.T
    within = np.array([cos[i, n_pairs + i] for i in range(n_pairs)])
    mask = np.ones_like(cos, dtype=bool)
    np.fill_diagonal(mask, False)
    for i in range(n_pairs):
        mask[i, n_pairs + i] = mask[n_pairs + i, i] = False
    return float(within.mean()), float(cos[mask].mean())
