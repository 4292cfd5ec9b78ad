"""Latency and energy models for local GPU training, OFDMA uplink and RSU generation.

Functions accept scalars or numpy arrays for the per-vehicle fields so the
allocator can evaluate a whole selected set at once.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

LN2 = math.log(2.0)


@dataclass(frozen=True)
class GpuProfile:
    t0: float = 0.1
    c1: float = 1.0
    c2: float = 1.0
    theta_mem: float = 5e7      # cycles per mini-batch
    theta_core: float = 1e8
    f_mem: float = 1.5e9        # Hz
    f_core: float = 1.3e9
    p_g0: float = 2.0           # W
    zeta_mem: float = 1e-9      # W/Hz
    zeta_core: float = 2e-9     # W/(V^2 Hz)
    v_core: float = 1.0         # V
    batches: int = 10

    def __post_init__(self):
        if self.f_mem <= 0 or self.f_core <= 0:
            raise DomainError("GPU frequencies must be positive")
        if self.batches < 0 or min(self.p_g0, self.zeta_mem, self.zeta_core) < 0:
            raise DomainError("batches and power coefficients must be nonnegative")


@dataclass(frozen=True)
class RadioProfile:
    W: float = 1e7              # per-subcarrier bandwidth, Hz
    phi: float = 0.5            # transmit power, W
    h0: float = 1e-3            # channel gain at 1 m
    d: float = 100.0            # m
    gamma: float = 3.0
    N0: float = 4e-14           # noise power over W, W
    l: float = 1.0              # subcarrier share
    s_omega: float = 4e7        # model size, bits

    def __post_init__(self):
        if self.W <= 0 or self.N0 <= 0 or self.d <= 0:
            raise DomainError("W, N0 and d must be positive")

    @property
    def gain(self) -> float:
        """Received SNR per watt of transmit power, h0 d^-gamma / N0."""
        return self.h0 * self.d ** (-self.gamma) / self.N0


@dataclass(frozen=True)
class RsuProfile:
    f_rsu: float = 1e12         # cycles/s
    d_step: float = 8e8         # cycles per inference step
    steps: int = 50             # diffusion steps per image
    t_s0: float = 0.05
    c_s1: float = 1.0
    c_s2: float = 1.0
    theta_s_mem: float = 5e7
    theta_s_core: float = 1e8
    f_s_mem: float = 5e9
    f_s_core: float = 2e9
    batch_size: int = 64        # images per augmented-training batch

    def __post_init__(self):
        if self.f_rsu <= 0 or self.steps < 1 or self.d_step <= 0:
            raise DomainError("invalid RSU profile")

    @property
    def t0_img(self) -> float:
        """Seconds to generate one image."""
        return self.steps * self.d_step / self.f_rsu


def noise_power(noise_dbm_per_hz: float, bandwidth_hz: float) -> float:
    """Thermal noise in W over ``bandwidth_hz`` from a density in dBm/Hz."""
    return 10 ** (noise_dbm_per_hz / 10.0) * 1e-3 * bandwidth_hz


def gpu_time(t0, c1, c2, batches, theta_mem, f_mem, theta_core, f_core):
    return t0 + c1 * batches * theta_mem / f_mem + c2 * batches * theta_core / f_core


def gpu_power(p_g0, zeta_mem, f_mem, zeta_core, v_core, f_core):
    return p_g0 + zeta_mem * f_mem + zeta_core * v_core ** 2 * f_core


def local_train_time(g: GpuProfile) -> float:
    return gpu_time(g.t0, g.c1, g.c2, g.batches, g.theta_mem, g.f_mem, g.theta_core, g.f_core)


def local_train_power(g: GpuProfile) -> float:
    return gpu_power(g.p_g0, g.zeta_mem, g.f_mem, g.zeta_core, g.v_core, g.f_core)


def local_train_energy(g: GpuProfile) -> float:
    return local_train_power(g) * local_train_time(g)


def spectral_efficiency(phi, gain):
    """log2(1 + phi * gain), bits/s/Hz."""
    return np.log2(1.0 + np.multiply(phi, gain))


def uplink_rate(r: RadioProfile) -> float:
    return float(r.l * r.W * spectral_efficiency(r.phi, r.gain))


def upload_time_energy(r: RadioProfile) -> tuple[float, float]:
    if r.s_omega == 0:
        return 0.0, 0.0
    rate = uplink_rate(r)
    if rate <= 0:
        raise DomainError("no subcarrier")
    t = r.s_omega / rate
    return t, r.phi * t


def upload_time(phi, a, b):
    """t(phi) = a / log2(1 + b phi) with a = s/(l W), b = gain."""
    return a / np.log2(1.0 + b * phi)


def upload_energy(phi, a, b):
    return phi * upload_time(phi, a, b)


def upload_time_derivative(phi, a, b):
    u = 1.0 + b * phi
    return -a * b * LN2 / (u * np.log(u) ** 2)


def upload_energy_derivative(phi, a, b):
    u = 1.0 + b * phi
    lg = np.log2(u)
    return a / lg - a * b * phi / (LN2 * u * lg ** 2)


def generation_latency(rsu: RsuProfile, b_images: int) -> float:
    if b_images < 0:
        raise DomainError("image count must be nonnegative")
    return b_images * rsu.t0_img


def augmented_train_time(rsu: RsuProfile, b_s: float) -> float:
    return gpu_time(rsu.t_s0, rsu.c_s1, rsu.c_s2, b_s, rsu.theta_s_mem, rsu.f_s_mem,
                    rsu.theta_s_core, rsu.f_s_core)


def augmented_batches(rsu: RsuProfile, n_images: int) -> int:
    return -(-int(n_images) // rsu.batch_size)


def vehicle_round_latency(g: GpuProfile, r: RadioProfile, downlink_offset: float = 0.0) -> float:
    """Local compute plus upload (plus an optional constant downlink term)."""
    t_up, _ = upload_time_energy(r)
    return local_train_time(g) + t_up + downlink_offset
