import pytest
import torch
from hypothesis import HealthCheck, settings

from bgop.codec import CodecConfig, VideoCodec
from bgop.data import load_frames, make_synthetic_dataset

settings.register_profile(
    "desk",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("desk")


@pytest.fixture(scope="session")
def synth_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    make_synthetic_dataset(seed=0, sequences=3, frames_per_seq=9, dims=(64, 64), out_dir=root)
    return root


@pytest.fixture(scope="session")
def still_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("still")
    make_synthetic_dataset(seed=3, sequences=2, frames_per_seq=5, dims=(64, 64),
                           out_dir=root, still=True)
    return root


@pytest.fixture()
def synth_dataset(synth_root):
    return load_frames(synth_root)


@pytest.fixture()
def still_dataset(still_root):
    return load_frames(still_root)


@pytest.fixture()
def tiny_codec():
    codec = VideoCodec.seeded(CodecConfig.tiny(), 11)
    codec.eval()
    return codec


@pytest.fixture()
def gop_frames():
    g = torch.Generator().manual_seed(42)
    return [torch.rand(1, 3, 64, 64, generator=g) for _ in range(5)]
