"""Synthetic-data generators."""

import numpy as np
import pytest
from scipy.spatial.distance import cdist

from conceptalign import (
    ValidationError,
    gaussian_blobs,
    generate_synthetic,
    layer_chain,
    line_segment,
    ring_manifold,
    twonn_id,
)


class TestBlobs:
    def test_shapes_and_labels(self):
        fm = gaussian_blobs(301, 3, dim=20, seed=0)
        assert fm.n == 301 and fm.f == 20
        counts = np.bincount(fm.meta.class_labels)
        assert counts.tolist() == [101, 100, 100]

    def test_center_separation(self):
        fm = gaussian_blobs(600, 3, dim=10, separation=12.0, sigma=2.0, seed=1)
        centers = np.stack([
            fm.data[fm.meta.class_labels == b].mean(axis=0) for b in range(3)
        ])
        gaps = cdist(centers, centers)[np.triu_indices(3, k=1)]
        np.testing.assert_allclose(gaps, 24.0, rtol=0.15)

    def test_determinism(self):
        a = gaussian_blobs(50, 2, dim=5, seed=3)
        b = gaussian_blobs(50, 2, dim=5, seed=3)
        assert a.data.tobytes() == b.data.tobytes()

    def test_too_many_blobs(self):
        with pytest.raises(ValidationError):
            gaussian_blobs(10, 5, dim=3)


class TestManifolds:
    def test_ring_is_one_dimensional(self):
        fm = ring_manifold(2000, dim=20, radius=5.0, seed=2)
        assert 0.8 <= twonn_id(fm.data.astype(np.float64)) <= 1.2

    def test_line_extent(self):
        fm = line_segment(500, dim=10, length=3.0, seed=1)
        assert fm.data[:, 0].max() <= 3.0
        assert np.abs(fm.data[:, 1:]).max() == 0.0


class TestLayerChain:
    def test_alignment_decays_along_chain(self):
        base = gaussian_blobs(200, 3, dim=10, seed=5)
        layers = layer_chain(base, 4, noise_scale=0.5, seed=5)
        assert [l.source.layer_index for l in layers] == [1, 2, 3, 4]
        drift = [np.linalg.norm(layers[0].data - l.data) for l in layers]
        assert drift[0] == 0.0
        assert drift[1] < drift[2] < drift[3]

    def test_labels_carried_through(self):
        base = gaussian_blobs(60, 2, dim=5, seed=6)
        layers = layer_chain(base, 3, noise_scale=0.1, seed=6)
        for l in layers:
            np.testing.assert_array_equal(l.meta.class_labels, base.meta.class_labels)


class TestGeneratorSpec:
    def test_blob_spec(self):
        out = generate_synthetic({"kind": "blobs", "n_points": 30, "n_blobs": 2,
                                  "dim": 4}, seed=1)
        assert len(out) == 1 and out[0].n == 30

    def test_chain_spec(self):
        out = generate_synthetic({
            "kind": "chain",
            "base": {"kind": "blobs", "n_points": 30, "n_blobs": 2, "dim": 4},
            "n_layers": 3,
            "noise_scale": 0.2,
        }, seed=1)
        assert len(out) == 3

    def test_unknown_kind(self):
        with pytest.raises(ValidationError):
            generate_synthetic({"kind": "spiral"})

    def test_bad_options(self):
        with pytest.raises(ValidationError):
            generate_synthetic({"kind": "blobs", "wings": 2})
