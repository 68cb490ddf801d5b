"""Synthetic feature matrices with known structure, for tests and demos.

Generators cover separated Gaussian blobs (known cluster labels), simple
one-dimensional manifolds (ring, line segment) and "layer chains" where
each layer is the previous one plus Gaussian noise, so alignment between
layers decays with their distance in the chain.
"""

from __future__ import annotations

import numpy as np

from .data import FeatureMatrix, RowMeta, SourceInfo, stage_rng
from .errors import ValidationError


def _matrix(data, labels, model, layer=1):
    n = data.shape[0]
    meta = RowMeta.empty(n)
    if labels is not None:
        meta.class_labels = np.asarray(labels, dtype=np.int32)
    return FeatureMatrix(data.astype(np.float32), meta,
                         SourceInfo(model=model, layer_index=layer, token_kind="SEQ"))


def gaussian_blobs(n_points, n_blobs=3, dim=20, separation=10.0, sigma=1.0, seed=0):
    """Equal-size isotropic Gaussian blobs with pairwise center distance
    ``separation * sigma``. Ground-truth labels live in ``meta.class_labels``."""
    if n_blobs > dim:
        raise ValidationError("need dim >= n_blobs to place equidistant centers")
    if n_points < n_blobs:
        raise ValidationError("need at least one point per blob")
    rng = stage_rng(seed, "blobs")
    # scaled standard-basis corners: all pairwise distances equal separation*sigma
    centers = np.eye(n_blobs, dim) * (separation * sigma / np.sqrt(2.0))
    sizes = np.full(n_blobs, n_points // n_blobs)
    sizes[: n_points % n_blobs] += 1
    labels = np.repeat(np.arange(n_blobs), sizes)
    data = centers[labels] + rng.normal(scale=sigma, size=(n_points, dim))
    return _matrix(data, labels, "synthetic-blobs")


def ring_manifold(n_points, dim=20, radius=5.0, noise=0.0, seed=0):
    """Points on a circle living in the first two of ``dim`` coordinates."""
    if dim < 2:
        raise ValidationError("a ring needs at least two dimensions")
    rng = stage_rng(seed, "ring")
    angles = rng.uniform(0.0, 2.0 * np.pi, n_points)
    data = np.zeros((n_points, dim))
    data[:, 0] = radius * np.cos(angles)
    data[:, 1] = radius * np.sin(angles)
    if noise:
        data += rng.normal(scale=noise, size=data.shape)
    return _matrix(data, None, "synthetic-ring")


def line_segment(n_points, dim=10, length=1.0, noise=0.0, seed=0):
    """Points uniform on a segment along the first coordinate axis."""
    rng = stage_rng(seed, "line")
    data = np.zeros((n_points, dim))
    data[:, 0] = rng.uniform(0.0, length, n_points)
    if noise:
        data += rng.normal(scale=noise, size=data.shape)
    return _matrix(data, None, "synthetic-line")


def layer_chain(base, n_layers, noise_scale, seed=0):
    """A chain of representations: layer l+1 = layer l + Gaussian noise.

    Noise accumulates along the chain, so representations of nearby layers
    stay more aligned than distant ones. Returns one FeatureMatrix per
    layer with 1-based layer indices and the base labels carried through.
    """
    if n_layers < 1:
        raise ValidationError("need at least one layer")
    if noise_scale < 0:
        raise ValidationError("noise scale must be non-negative")
    rng = stage_rng(seed, "layer-chain")
    layers = []
    data = np.asarray(base.data, dtype=np.float64).copy()
    for layer in range(1, n_layers + 1):
        layers.append(_matrix(data.copy(), base.meta.class_labels.copy(),
                              base.source.model + "-chain", layer))
        data += rng.normal(scale=noise_scale, size=data.shape)
    return layers


GENERATORS = {
    "blobs": gaussian_blobs,
    "ring": ring_manifold,
    "line": line_segment,
}


def generate_synthetic(spec, seed=0):
    """Build matrices from a generator spec dict (the CLI `synth` payload).

    ``{"kind": "blobs", "n_points": 300, ...}`` yields a single matrix;
    ``{"kind": "chain", "base": {...}, "n_layers": 5, "noise_scale": 0.3}``
    yields one matrix per layer.
    """
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind == "chain":
        base_spec = spec.pop("base")
        n_layers = spec.pop("n_layers")
        noise_scale = spec.pop("noise_scale")
        if spec:
            raise ValidationError(f"unknown chain options: {sorted(spec)}")
        base = generate_synthetic(base_spec, seed=seed)[0]
        return layer_chain(base, n_layers, noise_scale, seed=seed)
    if kind not in GENERATORS:
        raise ValidationError(f"unknown generator kind: {kind!r}")
    try:
        return [GENERATORS[kind](seed=seed, **spec)]
    except TypeError as exc:
        raise ValidationError(f"bad options for {kind}: {exc}") from exc
