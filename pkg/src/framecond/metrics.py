from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass
class MetricsReport:
    """Consistency metrics of a pixel video.

    ``temporal_flicker`` is ``None`` when the video has fewer than two frames.
    """

    temporal_flicker: Optional[float]
    first_frame_fidelity: float
    flicker_series: list
    fidelity_series: list

    def as_dict(self) -> dict:
        return {
            "temporal_flicker": self.temporal_flicker,
            "first_frame_fidelity": self.first_frame_fidelity,
            "flicker_series": self.flicker_series,
            "fidelity_series": self.fidelity_series,
        }


def _np(x) -> np.ndarray:
    if hasattr(x, "detach"):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def temporal_flicker(video) -> Optional[float]:
    v = _np(video)
    if v.shape[0] < 2:
        return None
    return float(np.abs(np.diff(v, axis=0)).mean())


def compute_metrics(video, first_frame) -> MetricsReport:
    """Mean absolute consecutive-frame difference, and frame-1 distance to ``first_frame``."""
    v = _np(video)
    ref = _np(first_frame)
    if v.shape[1:] != ref.shape:
        raise ValueError(f"first frame {ref.shape} does not match video frames {v.shape[1:]}")
    size = int(np.prod(v.shape[1:]))
    per_pair = np.abs(np.diff(v, axis=0)).reshape(-1, size).mean(axis=1)
    per_frame = np.abs(v - ref[None]).reshape(-1, size).mean(axis=1)
    return MetricsReport(
        temporal_flicker=float(per_pair.mean()) if v.shape[0] >= 2 else None,
        first_frame_fidelity=float(per_frame[0]),
        flicker_series=[float(x) for x in per_pair],
        fidelity_series=[float(x) for x in per_frame],
    )
