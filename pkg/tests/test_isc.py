import numpy as np
import pytest
import torch
import torch.nn as nn

from hcmseg.isc import ISC


def identity_isc() -> ISC:
    """Single-channel ISC whose convolutions are identity kernels and whose norms are removed."""
    isc = ISC(1, 1)
    for name, mod in list(isc.named_modules()):
        if isinstance(mod, nn.Conv2d):
            k = mod.kernel_size[0]
            with torch.no_grad():
                mod.weight.zero_()
                mod.weight[0, 0, k // 2, k // 2] = 1.0
                if mod.bias is not None:
                    mod.bias.zero_()
        for child_name, child in list(mod.named_children()):
            if isinstance(child, nn.BatchNorm2d):
                setattr(mod, child_name, nn.Identity())
    return isc.eval()


def test_shape_stage2():
    isc = ISC(512, 64).eval()
    with torch.no_grad():
        out = isc(torch.randn(1, 512, 44, 44))
    assert out.shape == (1, 64, 44, 44)


@pytest.mark.parametrize("channels,size", [(256, 16), (2048, 3), (1024, 5)])
def test_spatial_preserved(channels, size):
    with torch.no_grad():
        assert ISC(channels, 8).eval()(torch.randn(2, channels, size, size + 1)).shape == (2, 8, size, size + 1)


def test_channel_mismatch_raises():
    with pytest.raises(RuntimeError):
        ISC(256, 8)(torch.randn(1, 512, 8, 8))


def test_identity_kernel_oracle():
    isc = identity_isc()
    x = np.random.default_rng(0).random((1, 1, 9, 9))
    with torch.no_grad():
        out = isc(torch.from_numpy(x).float()).double().numpy()
    expected = x + 4 * x**2  # f3 = f5 = f, fused (2f)(2f)
    np.testing.assert_allclose(out, expected, atol=1e-6)
    with torch.no_grad():
        half = isc(torch.full((1, 1, 3, 3), 0.5))
    assert torch.allclose(half, torch.full_like(half, 1.5), atol=1e-6)


def test_zeroed_fusion_gives_residual_exactly():
    torch.manual_seed(0)
    isc = ISC(32, 8).eval()
    nn.init.zeros_(isc.out.weight)
    nn.init.zeros_(isc.out.bias)
    x = torch.randn(2, 32, 7, 7)
    with torch.no_grad():
        assert torch.equal(isc(x), isc.residual(x))


def test_gradients_match_finite_differences():
    torch.manual_seed(0)
    c = 4
    isc = ISC(c, c).double().eval()
    x = torch.randn(1, c, 4, 4, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(isc, (x,), eps=1e-6, atol=1e-6, rtol=1e-3)
    isc(x).square().sum().backward()
    for name, mod in isc.named_modules():
        if isinstance(mod, nn.Conv2d):
            assert mod.weight.grad is not None and mod.weight.grad.abs().sum() > 0, name
