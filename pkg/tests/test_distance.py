import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from synaptik.distance import distance_to_mask, feature_transform
from synaptik.errors import ParameterError


def brute_force(coords, ids, shape, spacing, sub=1):
    """O(N*M) reference: exact squared distances, ties to the smallest id."""
    grid = np.stack(np.meshgrid(*[np.arange(n) * sub for n in shape], indexing="ij"), -1).reshape(-1, 3)
    w = (np.asarray(spacing, float) / sub) ** 2
    d2 = (((grid[:, None, :] - coords[None, :, :]) ** 2) * w).sum(-1)
    best = d2.min(1)
    cand = np.where(d2 == best[:, None], ids[None, :], np.iinfo(np.int64).max)
    return np.sqrt(best).reshape(shape), cand.min(1).reshape(shape)


def random_sites(rng, shape, sub=1, max_sites=12):
    n = rng.integers(1, max_sites + 1)
    fine = [(s - 1) * sub + 1 for s in shape]
    coords = np.stack([rng.integers(0, f, n) for f in fine], 1)
    ids = rng.integers(1, 6, n)  # few ids so equidistant sites with different ids are common
    return coords, ids


@pytest.mark.parametrize("spacing", [(30.0, 4.0, 4.0), (1.0, 1.0, 1.0), (2.0, 3.0, 5.0)])
def test_matches_brute_force(rng, spacing):
    shape = (6, 7, 9)
    for _ in range(15):
        coords, ids = random_sites(rng, shape)
        dist, nearest = feature_transform(coords, ids, shape, spacing)
        ref_d, ref_id = brute_force(coords, ids, shape, spacing)
        np.testing.assert_allclose(dist, ref_d, rtol=0, atol=1e-6)
        np.testing.assert_array_equal(nearest, ref_id)


def test_half_voxel_sites(rng):
    shape = (5, 6, 7)
    spacing = (30.0, 4.0, 4.0)
    for _ in range(15):
        coords, ids = random_sites(rng, shape, sub=2)
        dist, nearest = feature_transform(coords, ids, shape, spacing, subdivision=2)
        ref_d, ref_id = brute_force(coords, ids, shape, spacing, sub=2)
        np.testing.assert_allclose(dist, ref_d, rtol=0, atol=1e-6)
        np.testing.assert_array_equal(nearest, ref_id)


@settings(max_examples=40, deadline=None)
@given(
    shape=st.tuples(*[st.integers(1, 6)] * 3),
    seed=st.integers(0, 2**32 - 1),
    spacing=st.tuples(*[st.sampled_from([1.0, 2.5, 4.0, 30.0])] * 3),
)
def test_property_against_brute_force(shape, seed, spacing):
    rng = np.random.default_rng(seed)
    coords, ids = random_sites(rng, shape, max_sites=5)
    dist, nearest = feature_transform(coords, ids, shape, spacing)
    ref_d, ref_id = brute_force(coords, ids, shape, spacing)
    np.testing.assert_allclose(dist, ref_d, rtol=0, atol=1e-6)
    np.testing.assert_array_equal(nearest, ref_id)


def test_equidistant_sites_pick_smallest_id():
    # voxel 2 sits exactly between sites at 0 and 4
    dist, nearest = feature_transform([[0, 0, 0], [0, 0, 4]], [9, 3], (1, 1, 5), (1, 1, 1))
    assert nearest[0, 0, 2] == 3
    assert dist[0, 0, 2] == 2.0


def test_distance_to_mask_matches_scipy(rng):
    spacing = (30.0, 4.0, 4.0)
    for _ in range(10):
        mask = rng.random((8, 12, 10)) < 0.05
        mask[0, 0, 0] = True
        ours = distance_to_mask(mask, spacing)
        ref = ndimage.distance_transform_edt(~mask, sampling=spacing)
        np.testing.assert_allclose(ours, ref, rtol=0, atol=1e-6)


@pytest.mark.parametrize(
    "coords,ids,sub",
    [
        (np.zeros((0, 3), int), np.zeros(0, int), 1),
        ([[0, 0, 0]], [0], 1),
        ([[0, 0, 5]], [1], 1),
        ([[0, 0, 0]], [1], 0),
    ],
)
def test_rejects_bad_sites(coords, ids, sub):
    with pytest.raises(ParameterError):
        feature_transform(coords, ids, (2, 2, 2), (1, 1, 1), subdivision=sub)
