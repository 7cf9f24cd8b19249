"""Layout-guided noise initialisation in the space-time frequency domain.

The low-frequency band of a noised layout video (by default the first frame
repeated ``N`` times) replaces the low band of the sampling noise. Transforms
run over the frame, height and width axes of ``[..., N, C, H, W]`` tensors.
The forward FFT is unnormalised; the inverse divides by ``N*H*W``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .diffusion import NoiseSchedule, add_noise, check_timestep

SPACETIME_DIMS = (-4, -2, -1)


@dataclass(frozen=True)
class FrameInitParams:
    tau: int = 850
    d0: float = 0.25
    enabled: bool = True

    def __post_init__(self):
        if self.d0 <= 0:
            raise ValueError("d0 must be positive")
        if self.tau < 1:
            raise ValueError("tau must be >= 1")


@dataclass(frozen=True)
class FrequencyMask:
    """Mask values on the centred ``[N, H, W]`` frequency grid (zero frequency in the middle)."""

    values: np.ndarray
    d0: float

    def unshifted(self) -> np.ndarray:
        """Values laid out in FFT order, ready to multiply an ``fft3`` result."""
        return np.fft.ifftshift(self.values)


def make_static_video(frame_latent: torch.Tensor, N: int) -> torch.Tensor:
    if N < 1:
        raise ValueError("N must be >= 1")
    return frame_latent.unsqueeze(-4).expand(*frame_latent.shape[:-3], N, *frame_latent.shape[-3:]).clone()


def fft3(x: torch.Tensor) -> torch.Tensor:
    return torch.fft.fftn(x, dim=SPACETIME_DIMS)


def ifft3(X: torch.Tensor) -> torch.Tensor:
    return torch.fft.ifftn(X, dim=SPACETIME_DIMS)


def centered_coordinates(n: int) -> np.ndarray:
    """Per-axis frequency coordinates in centred order, scaled to ``[-1, 1]``."""
    return 2.0 * np.fft.fftshift(np.fft.fftfreq(n))


def gaussian_low_pass(shape, d0: float) -> FrequencyMask:
    """``exp(-u^2 / (2 d0^2))`` with ``u`` the norm of the normalised centred frequency."""
    if d0 <= 0:
        raise ValueError(f"d0 must be positive, got {d0}")
    n, h, w = (int(s) for s in shape)
    ft, fh, fw = np.meshgrid(centered_coordinates(n), centered_coordinates(h), centered_coordinates(w), indexing="ij")
    u2 = ft**2 + fh**2 + fw**2
    return FrequencyMask(values=np.exp(-u2 / (2.0 * d0**2)), d0=float(d0))


def _mask_tensor(mask: FrequencyMask, like: torch.Tensor) -> torch.Tensor:
    # [N, H, W] -> [N, 1, H, W] so it broadcasts over channels
    return torch.from_numpy(mask.unshifted()).to(like.real.dtype)[:, None]


def band_split(x: torch.Tensor, d0: float):
    """Real low- and high-frequency reconstructions of ``x``; they sum to ``x``."""
    N, _, H, W = x.shape[-4:]
    g = _mask_tensor(gaussian_low_pass((N, H, W), d0), x)
    X = fft3(x)
    return ifft3(X * g).real, ifft3(X * (1 - g)).real


def frame_init_mix_complex(z_static: torch.Tensor, eps: torch.Tensor, params: FrameInitParams,
                           sched: NoiseSchedule) -> torch.Tensor:
    """Mixed noise before dropping the imaginary part (kept for realness checks)."""
    if z_static.shape != eps.shape:
        raise ValueError(f"shape mismatch: {tuple(z_static.shape)} vs {tuple(eps.shape)}")
    check_timestep(params.tau, sched)
    z_tau = add_noise(z_static, eps, params.tau, sched)
    return mix_bands(z_tau, eps, params.d0)


def mix_bands(low_source: torch.Tensor, high_source: torch.Tensor, d0: float) -> torch.Tensor:
    N, _, H, W = low_source.shape[-4:]
    g = _mask_tensor(gaussian_low_pass((N, H, W), d0), low_source)
    return ifft3(fft3(low_source) * g + fft3(high_source) * (1 - g))


def frame_init_mix(z_static: torch.Tensor, eps: torch.Tensor, params: FrameInitParams,
                   sched: NoiseSchedule) -> torch.Tensor:
    """Low band of ``add_noise(z_static, eps, tau)`` plus high band of ``eps``."""
    return frame_init_mix_complex(z_static, eps, params, sched).real.to(eps.dtype).contiguous()
