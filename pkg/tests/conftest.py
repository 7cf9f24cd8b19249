import numpy as np
import pytest
import torch

from framecond.unet import UNetConfig, VideoUNet


def central_difference(fn, tensors, eps=1e-6):
    """Numerical gradients of the scalar ``fn()`` with respect to each tensor, entry by entry."""
    grads = []
    for x in tensors:
        g = torch.zeros_like(x)
        flat = x.data.view(-1)
        gflat = g.view(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + eps
            up = float(fn())
            flat[i] = orig - eps
            down = float(fn())
            flat[i] = orig
            gflat[i] = (up - down) / (2 * eps)
        grads.append(g)
    return grads


def relative_error(analytic, numeric):
    a = analytic.detach().reshape(-1).double()
    n = numeric.detach().reshape(-1).double()
    return float((a - n).norm() / max(float(n.norm()), 1e-12))


def tiny_config(**overrides):
    params = dict(base_channels=8, channel_multipliers=(1, 2), attention_resolutions=(2,), num_frames=4,
                  latent_channels=4, latent_size=8, label_vocab=3, embed_dim=16, head_count=2,
                  norm_groups=4)
    params.update(overrides)
    return UNetConfig(**params)


@pytest.fixture
def tiny_model():
    return VideoUNet.build(tiny_config(), seed=3)


@pytest.fixture
def gen():
    return torch.Generator().manual_seed(1234)


ACCEPTANCE_KEY = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def acceptance_report(request):
    """Collects one ``(passed, detail)`` entry per acceptance criterion."""
    return request.config.stash.setdefault(ACCEPTANCE_KEY, {})


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(ACCEPTANCE_KEY, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results):
        passed, detail = results[key]
        terminalreporter.write_line(f"criterion {key:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
