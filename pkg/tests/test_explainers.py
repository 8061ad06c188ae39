import numpy as np
import pytest
from scipy import ndimage

from segnoise.core import Image, SegMask, gen_shapes_dataset
from segnoise.explainers import EXPLAINERS, build_explainer, ground_truth_saliency


@pytest.fixture(scope="module")
def item():
    return gen_shapes_dataset(0, 1, 64, 2, split="test").items[0]


def test_ground_truth_is_dilated_mask(item):
    img, seg = item
    sal = build_explainer("ground_truth", dilation=3)(img, 1, seg)
    expected = ndimage.binary_dilation(seg.labels == 1, ndimage.generate_binary_structure(2, 1), iterations=3)
    assert np.array_equal(sal.values, expected.astype(np.float32))


def test_inverted_is_complement(item):
    img, seg = item
    gt = build_explainer("ground_truth")(img, 1, seg)
    inv = build_explainer("inverted")(img, 1, seg)
    np.testing.assert_array_equal(gt.values + inv.values, 1.0)


def test_ground_truth_needs_labels(item):
    with pytest.raises(ValueError):
        build_explainer("ground_truth")(item[0], 1, None)


def test_random_reproducible(item):
    img, _ = item
    fn = build_explainer("random", seed=3)
    a, b = fn(img, 1, None), fn(img, 1, None)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, build_explainer("random", seed=4)(img, 1, None).values)
    assert a.values.min() == 0 and a.values.max() == 1


def test_unknown_name():
    with pytest.raises(KeyError):
        build_explainer("lime")


def test_registry_names():
    assert set(EXPLAINERS) == {"seg_sobol", "seg_grad_cam", "seg_grad_cam_pp", "ground_truth", "inverted", "random"}


def test_ground_truth_empty_class():
    seg = SegMask(np.zeros((32, 32), int), 2)
    assert np.all(ground_truth_saliency(seg, 1).values == 0)
