import numpy as np
import pytest
import torch

from mreg.encoder import encode, init_encoder


def _bag(rng, n_inst=3, t=16, hw=(48, 48)):
    return torch.as_tensor(rng.integers(0, 256, size=(n_inst, t, 3, *hw), dtype=np.uint8))


def test_same_seed_same_params():
    a, b = init_encoder(64, 16, seed=5), init_encoder(64, 16, seed=5)
    for (ka, va), (kb, vb) in zip(a.state_dict().items(), b.state_dict().items()):
        assert ka == kb and torch.equal(va, vb)
    c = init_encoder(64, 16, seed=6)
    assert not torch.equal(a.patch_weight, c.patch_weight)


def test_class_embedding_shapes():
    enc = init_encoder(64, 16)
    assert enc.class_emb2.shape == (2, 64)
    assert enc.class_emb3.shape == (3, 64)


def test_non_square_patch_count_rejected():
    with pytest.raises(ValueError):
        init_encoder(64, 15)


def test_init_variance_matches_glorot():
    enc = init_encoder(160, 16, frame_hw=(64, 64), seed=0, dtype=torch.float64)
    w = enc.patch_weight.detach().numpy().ravel()
    assert w.size >= 100_000
    fan_in, fan_out = enc.patch_weight.shape
    nominal = 2.0 / (fan_in + fan_out)
    assert abs(w.var() / nominal - 1) < 0.2
    assert abs(w.mean()) < 0.05 * np.sqrt(nominal)


def test_feature_shapes(rng):
    enc = init_encoder(64, 16)
    f = encode(_bag(rng), enc)
    assert f.f_video.shape == (3, 16, 64)
    assert f.f_text2.shape == (3, 2, 64)
    assert f.f_text3.shape == (3, 16, 16, 3, 64)
    for t in f:
        assert torch.isfinite(t).all()


def test_zero_pixels_give_zero_video_features():
    enc = init_encoder(32, 16)
    f = encode(torch.zeros(3, 16, 3, 48, 48, dtype=torch.uint8), enc)
    assert torch.count_nonzero(f.f_video) == 0


def test_instance_permutation_equivariance(rng):
    enc = init_encoder(32, 16, dtype=torch.float64)
    bag = _bag(rng)
    perm = [2, 0, 1]
    a, b = encode(bag, enc), encode(bag[perm], enc)
    torch.testing.assert_close(b.f_video, a.f_video[perm], rtol=0, atol=1e-12)
    torch.testing.assert_close(b.f_text3, a.f_text3[perm], rtol=0, atol=1e-12)


def test_text_features_independent_of_pixels(rng):
    enc = init_encoder(32, 16)
    a, b = encode(_bag(rng), enc), encode(_bag(rng), enc)
    assert torch.equal(a.f_text2, b.f_text2)
    # dividing out the patch factor leaves the same class embeddings
    ratio = a.f_text3[0, 0, 0] / a.f_text3[0, 0, 0, :1]
    ratio_b = b.f_text3[1, 3, 5] / b.f_text3[1, 3, 5, :1]
    torch.testing.assert_close(ratio, ratio_b)


def test_shape_mismatch_rejected(rng):
    enc = init_encoder(32, 16)
    with pytest.raises(ValueError):
        encode(_bag(rng, hw=(32, 32)), enc)


def test_gradient_patch_weight(fd_check, rng):
    enc = init_encoder(16, 16, frame_hw=(16, 16), dtype=torch.float64)
    bag = _bag(rng, t=4, hw=(16, 16))
    err = fd_check(lambda: encode(bag, enc).f_video.sum(), enc.patch_weight, n_coords=20)
    assert err <= 1e-4


@pytest.mark.parametrize("name", ["patch_bias", "w_query", "w_key", "w_value", "class_emb3"])
def test_gradient_other_params(fd_check, rng, name):
    enc = init_encoder(16, 16, frame_hw=(16, 16), dtype=torch.float64)
    bag = _bag(rng, t=4, hw=(16, 16))
    probe = torch.as_tensor(rng.normal(size=(3, 4, 16)))
    probe3 = torch.as_tensor(rng.normal(size=(3, 4, 16, 3, 16)))

    def fn():
        f = encode(bag, enc)
        return (f.f_video * probe).sum() + (f.f_text3 * probe3).sum()

    assert fd_check(fn, getattr(enc, name), n_coords=10) <= 1e-4


def test_gradient_wrt_pixels(fd_check, rng):
    enc = init_encoder(16, 16, frame_hw=(16, 16), dtype=torch.float64)
    pixels = torch.as_tensor(rng.random((3, 4, 3, 16, 16))).requires_grad_()
    assert fd_check(lambda: encode(pixels, enc).f_video.square().sum(), pixels, n_coords=10) <= 1e-4
