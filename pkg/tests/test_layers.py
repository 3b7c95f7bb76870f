import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from bgop.errors import ConfigurationError, ShapeError
from bgop.layers import GDN, GdnParams, gdn
from util import fd_grad, rel_err


def params_for(beta, gamma):
    return GdnParams(beta=torch.as_tensor(beta, dtype=torch.float64),
                     gamma=torch.as_tensor(gamma, dtype=torch.float64))


def random_params(channels, seed):
    g = torch.Generator().manual_seed(seed)
    beta = 0.2 + torch.rand(channels, generator=g, dtype=torch.float64)
    gamma = 0.05 + 0.3 * torch.rand(channels, channels, generator=g, dtype=torch.float64)
    return GdnParams(beta=beta, gamma=gamma)


class TestGdnFunction:
    def test_identity_when_gamma_zero_beta_one(self):
        x = torch.randn(2, 3, 5, 5, generator=torch.Generator().manual_seed(0), dtype=torch.float64)
        p = params_for([1.0, 1.0, 1.0], torch.zeros(3, 3))
        assert torch.allclose(gdn(x, p), x, atol=0)

    def test_single_channel_closed_form(self):
        # x=2, beta=1, gamma=1: 2 / sqrt(1 + 4) = 2 / sqrt(5)
        x = torch.full((1, 1, 1, 1), 2.0, dtype=torch.float64)
        p = params_for([1.0], [[1.0]])
        assert float(gdn(x, p)) == pytest.approx(2 / math.sqrt(5), abs=1e-12)
        assert float(gdn(x, p, inverse=True)) == pytest.approx(2 * math.sqrt(5), abs=1e-12)

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=40)
    def test_inverse_composition_identity(self, seed):
        g = torch.Generator().manual_seed(seed)
        x = (torch.rand(1, 4, 3, 3, generator=g, dtype=torch.float64) - 0.5) * 6
        p = random_params(4, seed + 1)
        y = gdn(gdn(x, p), p, inverse=True)
        assert rel_err(y, x) < 1e-6
        z = gdn(gdn(x, p, inverse=True), p)
        assert rel_err(z, x) < 1e-6

    def test_cross_channel_coupling(self):
        # energy in channel 1 must shrink channel 0's output
        p = params_for([1.0, 1.0], [[0.0, 1.0], [0.0, 0.0]])
        x = torch.tensor([[[[1.0]], [[0.0]]]], dtype=torch.float64)
        lone = float(gdn(x, p)[0, 0])
        x[0, 1] = 3.0
        coupled = float(gdn(x, p)[0, 0])
        assert lone == pytest.approx(1.0)
        assert coupled == pytest.approx(1 / math.sqrt(10))

    def test_shape_validation(self):
        p = random_params(3, 0)
        with pytest.raises(ShapeError):
            gdn(torch.zeros(1, 4, 2, 2, dtype=torch.float64), p)
        with pytest.raises(ShapeError):
            GdnParams(beta=torch.ones(3, 1), gamma=torch.ones(3, 3))
        with pytest.raises(ShapeError):
            GdnParams(beta=torch.ones(3), gamma=torch.ones(3, 2))

    def test_positivity_validation(self):
        with pytest.raises(ConfigurationError):
            GdnParams(beta=torch.zeros(2), gamma=torch.zeros(2, 2))
        with pytest.raises(ConfigurationError):
            GdnParams(beta=torch.ones(2), gamma=-torch.ones(2, 2))

    def test_gradients_match_finite_differences(self):
        g = torch.Generator().manual_seed(7)
        x0 = (torch.rand(1, 3, 4, 4, generator=g, dtype=torch.float64) - 0.5) * 4
        p = random_params(3, 8)

        x = x0.clone().requires_grad_()
        beta = p.beta.clone().requires_grad_()
        gamma = p.gamma.clone().requires_grad_()
        gdn(x, GdnParams(beta=beta, gamma=gamma)).sum().backward()

        assert rel_err(x.grad, fd_grad(lambda t: gdn(t, p).sum(), x0)) < 1e-3
        assert rel_err(beta.grad, fd_grad(
            lambda t: gdn(x0, GdnParams(beta=t, gamma=p.gamma)).sum(), p.beta)) < 1e-3
        assert rel_err(gamma.grad, fd_grad(
            lambda t: gdn(x0, GdnParams(beta=p.beta, gamma=t)).sum(), p.gamma)) < 1e-3


class TestGdnModule:
    def test_initial_parameters(self):
        layer = GDN(5)
        p = layer.params()
        assert torch.allclose(p.beta, torch.ones(5), atol=1e-6)
        assert torch.allclose(p.gamma.diagonal(), torch.full((5,), 0.1), atol=1e-4)
        assert bool((p.gamma >= 0).all())

    def test_parameters_stay_positive_after_updates(self):
        layer = GDN(3)
        opt = torch.optim.SGD(layer.parameters(), lr=10.0)  # hostile step size
        g = torch.Generator().manual_seed(1)
        for _ in range(5):
            x = torch.randn(2, 3, 4, 4, generator=g)
            layer(x).sum().backward()
            opt.step()
            opt.zero_grad()
        p = layer.params()
        assert bool((p.beta > 0).all()) and bool((p.gamma >= 0).all())

    def test_inverse_module_roundtrip(self):
        fwd, inv = GDN(4), GDN(4, inverse=True)
        inv.load_state_dict(fwd.state_dict())
        x = torch.randn(1, 4, 6, 6, generator=torch.Generator().manual_seed(2))
        assert torch.allclose(inv(fwd(x)), x, atol=1e-5)

    def test_deterministic_forward(self):
        layer = GDN(3).eval()
        x = torch.randn(1, 3, 8, 8, generator=torch.Generator().manual_seed(3))
        assert torch.equal(layer(x), layer(x))
