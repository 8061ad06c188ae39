import numpy as np
import pytest
import torch
from torch import nn

from segnoise.core import Image, SegModel
from segnoise.core.nets import EncoderDecoder
from segnoise.gradcam import LayerSelector, default_region, seg_grad_cam, seg_grad_cam_pp

METHODS = [seg_grad_cam, seg_grad_cam_pp]


class ConstantLogitNet(nn.Module):
    def __init__(self):
        super().__init__()
        self.enc3 = nn.Conv2d(3, 4, 3, padding=1)

    def forward(self, x):
        feats = self.enc3(x)
        base = torch.tensor([0.3, 1.2]).view(1, 2, 1, 1)
        return base.expand(x.shape[0], 2, *x.shape[2:]) + 0.0 * feats.sum(dim=1, keepdim=True)


@pytest.fixture(scope="module")
def random_model():
    torch.manual_seed(0)
    return SegModel(EncoderDecoder(3, 2, (8, 16, 32)), 2)


@pytest.fixture(scope="module")
def image():
    return Image(np.random.default_rng(0).uniform(size=(32, 32, 3)))


@pytest.mark.parametrize("method", METHODS)
def test_constant_logit_gives_zero_map(method, image):
    model = SegModel(ConstantLogitNet(), 2)
    sal = method(model, image, 1)
    assert sal.degenerate
    assert np.all(sal.values == 0)


@pytest.mark.parametrize("method", METHODS)
def test_range_and_dims(method, random_model, image):
    sal = method(random_model, image, 1)
    assert sal.values.shape == image.hw
    if not sal.degenerate and sal.values.max() > 0:
        assert sal.values.min() == 0.0 and sal.values.max() == 1.0


@pytest.mark.parametrize("method", METHODS)
@pytest.mark.parametrize("layer", ["enc1", "enc2", "enc3", "dec2"])
def test_nonnegative_before_normalization(method, random_model, image, layer):
    sal = method(random_model, image, 1, LayerSelector(layer))
    assert np.all(sal.meta["cam"] >= 0)


@pytest.mark.parametrize("scale", [0.01, 3.0, 250.0])
def test_argmax_invariant_to_positive_scaling(random_model, image, scale):
    ref = seg_grad_cam(random_model, image, 1, layer_sel := LayerSelector("enc2"))
    out = seg_grad_cam(random_model, image, 1, layer_sel, scale=scale)
    assert np.argmax(out.values) == np.argmax(ref.values)
    np.testing.assert_allclose(out.values, ref.values, atol=1e-6)


@pytest.mark.parametrize("method", METHODS)
def test_deterministic(method, random_model, image):
    assert np.array_equal(method(random_model, image, 1).values, method(random_model, image, 1).values)


def test_unknown_layer(random_model, image):
    with pytest.raises(KeyError):
        seg_grad_cam(random_model, image, 1, LayerSelector("nope"))


def test_class_out_of_range(random_model, image):
    with pytest.raises(ValueError):
        seg_grad_cam_pp(random_model, image, 5)


def test_default_region_fallback(image):
    model = SegModel(ConstantLogitNet(), 2)
    assert default_region(model, image, 0).all()
