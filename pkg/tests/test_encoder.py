import pytest
import torch

from hcmseg.encoder import ASPP, STAGE_CHANNELS, ResNetEncoder, check_image


@pytest.fixture(scope="module")
def encoder():
    torch.manual_seed(0)
    return ResNetEncoder().eval()


def test_pyramid_shapes_352(encoder):
    with torch.no_grad():
        feats = encoder(torch.randn(1, 3, 352, 352))
    expected = [(1, 64, 176, 176), (1, 256, 88, 88), (1, 512, 44, 44), (1, 1024, 22, 22), (1, 2048, 11, 11)]
    assert [tuple(f.shape) for f in feats] == expected
    assert all(torch.isfinite(f).all() for f in feats)


def test_batch_dim_preserved(encoder):
    with torch.no_grad():
        feats = encoder(torch.randn(2, 3, 64, 96))
    assert [f.shape[0] for f in feats] == [2] * 5
    assert [tuple(f.shape[1:]) for f in feats] == [
        (c, -(-64 // s), -(-96 // s)) for c, s in zip(STAGE_CHANNELS, (2, 4, 8, 16, 32))
    ]


@pytest.mark.parametrize("shape", [(1, 3, 350, 350), (1, 3, 352, 340), (1, 1, 64, 64), (3, 64, 64)])
def test_rejects_bad_input(encoder, shape):
    with pytest.raises(ValueError):
        encoder(torch.randn(*shape))


def test_rejects_non_finite():
    x = torch.zeros(1, 3, 32, 32)
    x[0, 0, 0, 0] = float("nan")
    with pytest.raises(ValueError):
        check_image(x)


def test_batch_equivariance(encoder):
    # float64 so float32 accumulation-order noise does not mask the property
    enc = encoder.double()
    a, b = torch.randn(1, 3, 64, 64, dtype=torch.float64), torch.randn(1, 3, 64, 64, dtype=torch.float64)
    with torch.no_grad():
        joint = enc(torch.cat([a, b]))
        sep = [torch.cat(p) for p in zip(enc(a), enc(b))]
    encoder.float()
    for j, s in zip(joint, sep):
        assert (j - s).abs().max().item() <= 1e-5


def test_weight_file_round_trip(tmp_path):
    import torchvision

    torch.manual_seed(3)
    ref = torchvision.models.resnet50(weights=None)
    path = tmp_path / "resnet50.pth"
    torch.save(ref.state_dict(), path)
    enc = ResNetEncoder(path)
    assert torch.equal(enc.layer3[0].conv1.weight, ref.layer3[0].conv1.weight)
    torch.save({"conv1.weight": ref.conv1.weight}, tmp_path / "partial.pth")
    with pytest.raises(RuntimeError):
        ResNetEncoder(tmp_path / "partial.pth")


def test_aspp_shapes():
    aspp = ASPP(2048, 64).eval()
    with torch.no_grad():
        f5, p5 = aspp(torch.randn(1, 2048, 11, 11))
    assert f5.shape == (1, 64, 11, 11) and p5.shape == (1, 1, 11, 11)


def test_aspp_zero_projection():
    aspp = ASPP(32, 8).eval()
    torch.nn.init.zeros_(aspp.project.weight)
    torch.nn.init.zeros_(aspp.project.bias)
    with torch.no_grad():
        _, p5 = aspp(torch.randn(3, 32, 5, 5))
    assert torch.count_nonzero(p5) == 0


def test_aspp_batch_permutation():
    torch.manual_seed(1)
    aspp = ASPP(32, 8).eval().double()
    x = torch.randn(4, 32, 6, 6, dtype=torch.float64)
    perm = torch.tensor([2, 0, 3, 1])
    with torch.no_grad():
        f5, p5 = aspp(x)
        f5p, p5p = aspp(x[perm])
    torch.testing.assert_close(f5p, f5[perm], rtol=0, atol=1e-12)
    torch.testing.assert_close(p5p, p5[perm], rtol=0, atol=1e-12)


def test_aspp_trains_with_batch_one():
    aspp = ASPP(32, 8).train()
    f5, p5 = aspp(torch.randn(1, 32, 2, 2))
    p5.sum().backward()
    assert torch.isfinite(f5).all()
