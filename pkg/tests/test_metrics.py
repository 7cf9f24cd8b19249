import numpy as np
import pytest
import torch

from framecond.metrics import compute_metrics, temporal_flicker


def test_static_video_no_flicker():
    v = torch.rand(5, 3, 4, 4).expand(5, 3, 4, 4)
    v = v[:1].expand(5, 3, 4, 4)
    assert temporal_flicker(v) == 0.0


def test_constant_difference():
    v = torch.zeros(2, 3, 4, 4)
    v[1] = 0.25
    assert temporal_flicker(v) == pytest.approx(0.25)


def test_single_frame_undefined():
    assert temporal_flicker(torch.zeros(1, 3, 2, 2)) is None
    r = compute_metrics(torch.zeros(1, 3, 2, 2), torch.zeros(3, 2, 2))
    assert r.temporal_flicker is None and r.flicker_series == []


def test_report():
    g = torch.Generator().manual_seed(0)
    v = torch.rand(4, 3, 4, 4, generator=g, dtype=torch.float64)
    ref = v[0].clone()
    r = compute_metrics(v, ref)
    assert r.first_frame_fidelity == 0.0
    assert len(r.flicker_series) == 3 and len(r.fidelity_series) == 4
    expected = [float((v[i + 1] - v[i]).abs().mean()) for i in range(3)]
    assert r.flicker_series == pytest.approx(expected)
    assert r.temporal_flicker == pytest.approx(np.mean(expected))
    assert all(x >= 0 for x in r.flicker_series + r.fidelity_series)
    assert set(r.as_dict()) == {"temporal_flicker", "first_frame_fidelity", "flicker_series", "fidelity_series"}


def test_fidelity_nonzero():
    v = torch.zeros(2, 3, 2, 2)
    r = compute_metrics(v, torch.full((3, 2, 2), 0.5))
    assert r.first_frame_fidelity == pytest.approx(0.5)


def test_shape_mismatch():
    with pytest.raises(ValueError):
        compute_metrics(torch.zeros(2, 3, 2, 2), torch.zeros(3, 4, 4))
