import pytest
import torch

from bgop.entropy import B_MIN
from bgop.errors import ShapeError
from bgop.networks import (
    AutoencoderConfig,
    FlowPyramid,
    MaskUnet,
    MaskUnetConfig,
    PostprocConfig,
    TensorSpec,
    build_flow_pyramid,
    build_hyper_autoencoder,
    build_image_autoencoder,
    build_mask_unet,
    build_postproc,
)


def seeded(seed=0):
    return torch.Generator().manual_seed(seed)


class TestAutoencoder:
    def test_default_channel_sizes(self):
        cfg = AutoencoderConfig()
        assert cfg.hidden_channels == 96
        assert cfg.latent_channels == 192
        assert cfg.down_layers == 4 and cfg.hyper_down_layers == 2

    def test_latent_shape(self):
        enc, dec = build_image_autoencoder(AutoencoderConfig())
        x = torch.rand(1, 3, 64, 64, generator=seeded())
        y = enc(x)
        assert y.shape == (1, 192, 4, 4)
        assert dec(y).shape == (1, 3, 64, 64)

    def test_flow_pair_input_channels(self):
        enc, dec = build_image_autoencoder(AutoencoderConfig(input_channels=4))
        y = enc(torch.rand(1, 4, 64, 64, generator=seeded()))
        assert y.shape == (1, 192, 4, 4)
        assert dec(y).shape == (1, 4, 64, 64)

    def test_rectangular_input(self):
        enc, dec = build_image_autoencoder(AutoencoderConfig(hidden_channels=8, latent_channels=16))
        x = torch.rand(2, 3, 64, 128, generator=seeded())
        y = enc(x)
        assert y.shape == (2, 16, 4, 8)
        assert dec(y).shape == x.shape

    def test_indivisible_dims_rejected(self):
        enc, _ = build_image_autoencoder(AutoencoderConfig(hidden_channels=8, latent_channels=8))
        with pytest.raises(ShapeError):
            enc(torch.rand(1, 3, 60, 64))

    def test_deterministic(self):
        enc, _ = build_image_autoencoder(AutoencoderConfig(hidden_channels=8, latent_channels=8))
        enc.eval()
        x = torch.rand(1, 3, 64, 64, generator=seeded(1))
        assert torch.equal(enc(x), enc(x))


class TestHyperAutoencoder:
    def test_shapes(self):
        cfg = AutoencoderConfig()
        henc, hdec = build_hyper_autoencoder(cfg)
        y = torch.randn(1, 192, 4, 4, generator=seeded())
        z = henc(y)
        assert z.shape == (1, cfg.hyper_width, 1, 1)
        params = hdec(z)
        assert params.mu.shape == y.shape
        assert params.b.shape == y.shape

    def test_scale_floor(self):
        _, hdec = build_hyper_autoencoder(AutoencoderConfig(hidden_channels=8, latent_channels=8))
        z = torch.randn(1, 8, 2, 2, generator=seeded()) * 50
        assert bool((hdec(z).b >= B_MIN).all())

    def test_scale_only_mode(self):
        _, hdec = build_hyper_autoencoder(
            AutoencoderConfig(hidden_channels=8, latent_channels=8, mean_scale=False))
        params = hdec(torch.randn(1, 8, 2, 2, generator=seeded()))
        assert torch.equal(params.mu, torch.zeros_like(params.mu))

    def test_indivisible_latent_rejected(self):
        henc, _ = build_hyper_autoencoder(AutoencoderConfig(hidden_channels=8, latent_channels=8))
        with pytest.raises(ShapeError):
            henc(torch.randn(1, 8, 3, 4))


class TestMaskUnet:
    def test_output_range_and_shape(self):
        net = build_mask_unet(MaskUnetConfig(base_channels=8, depth=2))
        x = torch.rand(2, 6, 64, 64, generator=seeded())
        m = net(x)
        assert m.shape == (2, 1, 64, 64)
        assert bool((m > 0).all()) and bool((m < 1).all())

    def test_zero_init_head_gives_half(self):
        net = build_mask_unet(MaskUnetConfig(base_channels=8, depth=2))
        m = net(torch.rand(1, 6, 64, 64, generator=seeded(1)))
        assert torch.equal(m, torch.full_like(m, 0.5))

    def test_default_input_channels(self):
        assert MaskUnetConfig().in_channels == 6

    def test_rectangular(self):
        net = MaskUnet(MaskUnetConfig(base_channels=4, depth=3))
        m = net(torch.rand(1, 6, 64, 128, generator=seeded()))
        assert m.shape == (1, 1, 64, 128)


class TestFlowPyramid:
    def test_zero_init_outputs_zero_flow(self):
        net = build_flow_pyramid(levels=3, channels=8)
        ref = torch.rand(1, 3, 64, 64, generator=seeded())
        cur = torch.rand(1, 3, 64, 64, generator=seeded(1))
        flow = net(ref, cur)
        assert flow.shape == (1, 2, 64, 64)
        assert torch.equal(flow, torch.zeros_like(flow))

    def test_trained_weights_move_flow(self):
        net = build_flow_pyramid(levels=2, channels=4)
        g = seeded(2)
        with torch.no_grad():
            for stage in net.stages:
                stage.net[-1].weight.normal_(0, 0.1, generator=g)
        ref = torch.rand(1, 3, 32, 32, generator=g)
        flow = net(ref, ref + 0.1)
        assert float(flow.abs().max()) > 0

    def test_indivisible_dims_rejected(self):
        net = FlowPyramid(levels=3, channels=4)
        with pytest.raises(ShapeError):
            net(torch.rand(1, 3, 12, 12), torch.rand(1, 3, 12, 12))

    def test_levels_validated(self):
        with pytest.raises(Exception):
            build_flow_pyramid(levels=0)


class TestPostproc:
    def test_zero_init_is_identity(self):
        net = build_postproc(PostprocConfig(blocks=3, channels=8))
        x = torch.rand(1, 3, 64, 64, generator=seeded())
        assert torch.equal(net(x), x)

    def test_default_block_count(self):
        net = build_postproc()
        assert len(net.blocks) == 12
        assert net.blocks[0].conv1.out_channels == 64

    def test_shape_preserved(self):
        net = build_postproc(PostprocConfig(blocks=2, channels=4))
        x = torch.rand(2, 3, 64, 128, generator=seeded(1))
        assert net(x).shape == x.shape


class TestTensorSpec:
    def test_valid(self):
        TensorSpec(batch=1, channels=3, height=64, width=128).validate_frame()

    def test_indivisible(self):
        with pytest.raises(ShapeError):
            TensorSpec(batch=1, channels=3, height=60, width=64).validate_frame()

    def test_nonpositive(self):
        with pytest.raises(Exception):
            TensorSpec(batch=0, channels=3, height=64, width=64)
