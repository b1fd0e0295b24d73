"""Device geometry, fading, and OFDM channel synthesis.

Devices form a Poisson point process on a square region with the access
point at the center.  A device at distance D with per-antenna unit-mean
exponential gains G has channel h_l = D**(-alpha/2) * sqrt(G_l) * e**(i phi_l)
and counts as a neighbor (in cell, part of the decoder's ground truth) when
D**(-alpha) * sum(G) >= r * theta.  Every device transmits regardless; the
far ones appear only as residual interference.

Slot observations live in the post-DFT frequency domain,

    Y[l, n] = sqrt(gamma) * sum_k h[k, l] X_k(n) e**(-i Delta_k n) + Z[l, n]

with n = 1..N one-based, Delta_k = 2 pi delta_f tau_k the normalized delay
and Z unit-variance circular Gaussian.  time_domain_reference rebuilds the
same observation the long way (continuous-time waveform, sampling, prefix
discard, DFT) and exists to pin the model down in tests.

The normalized delay is drawn uniform on [-pi, pi); the seconds-valued tau
is derived from it and clamped to [0, tau_max], so the frequency-domain
model governs and the clamp only matters to the time-domain path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from .access_pipeline import FrameConfig, MessagePayload, draw_messages, segment_pair_bits
from .rm_codec import Codeword, bits_to_pair_batch, rm_samples_batch

__all__ = [
    "GeometryConfig",
    "DeviceRealization",
    "SlotObservation",
    "expected_neighbors",
    "interference_power",
    "sample_frame",
    "classify_neighbors",
    "synthesize_slot",
    "frame_observations",
    "time_domain_reference",
]


@dataclass(frozen=True)
class GeometryConfig:
    """Population and link-budget parameters.

    density: devices per square meter; area: region size in square meters
    (the region is the square of that area, access point at the center);
    alpha: path-loss exponent; theta: neighbor gain threshold; gamma:
    transmit power (linear, the sqrt(gamma) prefactor of the signal model);
    r: receive antennas.
    """

    density: float
    area: float
    alpha: float
    theta: float
    gamma: float
    r: int

    def __post_init__(self) -> None:
        if self.alpha <= 2:
            raise ValueError("path-loss exponent must exceed 2")
        if self.density < 0:
            raise ValueError("density must be nonnegative")
        if self.area <= 0 or self.theta <= 0 or self.gamma <= 0:
            raise ValueError("area, theta and gamma must be positive")
        if self.r < 1:
            raise ValueError("need at least one antenna")

    @property
    def side(self) -> float:
        return math.sqrt(self.area)


@dataclass(frozen=True)
class DeviceRealization:
    """One device: geometry, fading, channel, timing, and its message plan."""

    distance: float
    gains: np.ndarray
    phases: np.ndarray
    h: np.ndarray
    tau: float
    delta: float
    message: MessagePayload

    def __post_init__(self) -> None:
        for name in ("gains", "phases", "h"):
            arr = np.ascontiguousarray(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def payload(self) -> np.ndarray:
        return self.message.info

    @property
    def slots(self) -> np.ndarray:
        return self.message.slots


@dataclass(frozen=True)
class SlotObservation:
    """Post-DFT received matrix (antennas x subcarriers) of one slot."""

    Y: np.ndarray
    slot: int

    def __post_init__(self) -> None:
        Y = np.ascontiguousarray(np.asarray(self.Y, dtype=np.complex128))
        if Y.ndim != 2:
            raise ValueError("Y must be an antennas x subcarriers matrix")
        if not np.isfinite(Y).all():
            raise ValueError("observation contains non-finite entries")
        Y.setflags(write=False)
        object.__setattr__(self, "Y", Y)


def _gamma_ratio(cfg: GeometryConfig) -> float:
    """Gamma(2/alpha + r) / Gamma(r), stable for large r."""
    return float(np.exp(gammaln(2.0 / cfg.alpha + cfg.r) - gammaln(cfg.r)))


def expected_neighbors(cfg: GeometryConfig) -> float:
    """Mean number of in-cell devices:
    pi * density * (r theta)**(-2/alpha) * Gamma(2/alpha + r) / Gamma(r)."""
    return math.pi * cfg.density * (cfg.r * cfg.theta) ** (-2.0 / cfg.alpha) * _gamma_ratio(cfg)


def interference_power(cfg: GeometryConfig) -> float:
    """Mean total received power of out-of-cell devices:
    (r theta)**(1 - 2/alpha) * (2 pi density gamma / (alpha - 2))
    * Gamma(2/alpha + r) / Gamma(r)."""
    prefactor = 2.0 * math.pi * cfg.density * cfg.gamma / (cfg.alpha - 2.0)
    return (cfg.r * cfg.theta) ** (1.0 - 2.0 / cfg.alpha) * prefactor * _gamma_ratio(cfg)


def sample_frame(
    cfg: GeometryConfig, frame: FrameConfig, rng: np.random.Generator
) -> list[DeviceRealization]:
    """Draw one frame's device population.

    Draw order is fixed (count, positions, fading, phases, delays, then
    messages) so a seeded generator reproduces the frame exactly.  Poisson
    count with mean density * area, positions uniform on the square,
    unit-mean exponential gains, uniform phases.  Delays: normalized delay
    uniform on [-pi, pi), tau clamped from it; both zero when the frame is
    synchronous.
    """
    count = int(rng.poisson(cfg.density * cfg.area))
    half = cfg.side / 2.0
    xy = rng.uniform(-half, half, size=(count, 2))
    dist = np.hypot(xy[:, 0], xy[:, 1])
    gains = rng.exponential(1.0, size=(count, cfg.r))
    phases = rng.uniform(0.0, 2.0 * math.pi, size=(count, cfg.r))
    h = dist[:, None] ** (-cfg.alpha / 2.0) * np.sqrt(gains) * np.exp(1j * phases)
    if frame.synchronous:
        delta = np.zeros(count)
        tau = np.zeros(count)
    else:
        delta = rng.uniform(-math.pi, math.pi, size=count)
        tau = np.clip(delta / (2.0 * math.pi * frame.delta_f), 0.0, frame.tau_max)
    messages = draw_messages(frame, rng, count)
    return [
        DeviceRealization(
            distance=float(dist[k]),
            gains=gains[k],
            phases=phases[k],
            h=h[k],
            tau=float(tau[k]),
            delta=float(delta[k]),
            message=messages[k],
        )
        for k in range(count)
    ]


def classify_neighbors(
    devices: Sequence[DeviceRealization], cfg: GeometryConfig
) -> tuple[list[DeviceRealization], list[DeviceRealization]]:
    """Partition into (in_cell, out_of_cell) by
    distance**(-alpha) * sum(gains) >= r * theta."""
    in_cell: list[DeviceRealization] = []
    out_cell: list[DeviceRealization] = []
    for dev in devices:
        aggregate = float(dev.distance ** (-cfg.alpha) * dev.gains.sum())
        (in_cell if aggregate >= cfg.r * cfg.theta else out_cell).append(dev)
    return in_cell, out_cell


def _tx_samples(codeword) -> np.ndarray:
    samples = codeword.samples if isinstance(codeword, Codeword) else np.asarray(codeword)
    if samples.ndim != 1:
        raise ValueError("codeword samples must be a 1-D vector")
    return samples.astype(np.complex128, copy=False)


def synthesize_slot(
    transmissions: Sequence[tuple],
    gamma: float,
    noise_on: bool,
    rng: np.random.Generator | None = None,
    *,
    r: int | None = None,
    n: int | None = None,
    slot: int = 0,
) -> SlotObservation:
    """Frequency-domain observation of one slot.

    transmissions is a list of (codeword, h, delta) triples; h vectors must
    share their length and codewords their order.  r and n override the
    dimensions (required for an empty list).  Noise needs a generator.
    """
    if transmissions:
        first_h = np.asarray(transmissions[0][1])
        r = first_h.size if r is None else r
        n = _tx_samples(transmissions[0][0]).size if n is None else n
    if r is None or n is None:
        raise ValueError("empty slot synthesis needs explicit r and n")
    Y = np.zeros((r, n), dtype=np.complex128)
    n_idx = np.arange(1, n + 1)
    amp = math.sqrt(gamma)
    for codeword, h, delta in transmissions:
        samples = _tx_samples(codeword)
        h = np.asarray(h, dtype=np.complex128)
        if h.shape != (r,):
            raise ValueError(f"channel vector shape {h.shape} does not match r={r}")
        if samples.size != n:
            raise ValueError(f"codeword length {samples.size} does not match n={n}")
        Y += amp * np.outer(h, samples * np.exp(-1j * float(delta) * n_idx))
    if noise_on:
        if rng is None:
            raise ValueError("noise synthesis needs a generator")
        Y += (rng.standard_normal((r, n)) + 1j * rng.standard_normal((r, n))) / math.sqrt(2.0)
    return SlotObservation(Y=Y, slot=slot)


def frame_observations(
    devices: Sequence[DeviceRealization],
    frame: FrameConfig,
    cfg: GeometryConfig,
    rng: np.random.Generator | None = None,
    noise_on: bool = True,
) -> list[list[SlotObservation]]:
    """All slot observations of one frame, indexed [sub_block][slot].

    Every device contributes every copy of every sub-block segment to the
    slot it lands in, with its block-static channel and delay.  Codewords
    for the whole population are generated in one batch; noise for the whole
    grid is drawn up front in one block so the result is reproducible
    independently of the accumulation order.
    """
    r, n = cfg.r, frame.seq_len
    n_sub, n_slots = frame.n_subblocks, frame.n_slots
    if noise_on:
        if rng is None:
            raise ValueError("noise synthesis needs a generator")
        shape = (n_sub, n_slots, r, n)
        Y = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)
    else:
        Y = np.zeros((n_sub, n_slots, r, n), dtype=np.complex128)
    if devices:
        k = len(devices)
        segments = np.stack([dev.message.segments for dev in devices])
        slots = np.stack([dev.message.slots for dev in devices])
        h = np.stack([dev.h for dev in devices])
        if h.shape[1] != r:
            raise ValueError("device channel dimension does not match the antenna count")
        delta = np.array([dev.delta for dev in devices])
        ramp = np.exp(-1j * np.outer(delta, np.arange(1, n + 1)))
        flat = segments.reshape(k * n_sub, frame.segment_bits)
        amp = math.sqrt(cfg.gamma)
        for c in range(frame.copies):
            bits = segment_pair_bits(flat, frame, np.full(k * n_sub, c == 1))
            X = rm_samples_batch(*bits_to_pair_batch(bits)).reshape(k, n_sub, n)
            X = X * ramp[:, None, :]
            for j in range(n_sub):
                landed = slots[:, j, c]
                for i in np.unique(landed):
                    sel = landed == i
                    Y[j, i] += amp * np.einsum("kl,kn->ln", h[sel], X[sel, j])
    return [
        [SlotObservation(Y=Y[j, i], slot=int(i)) for i in range(n_slots)] for j in range(n_sub)
    ]


def time_domain_reference(
    transmissions: Sequence[tuple],
    delta_f: float,
    tau_max: float,
    gamma: float,
    *,
    r: int | None = None,
    n: int | None = None,
    slot: int = 0,
) -> SlotObservation:
    """Noise-free observation built through the time domain.

    transmissions is a list of (codeword, h, tau) with tau in seconds.  The
    continuous-time superposition sum_n X(n) e**(2 pi i n delta_f (t - tau))
    is sampled at t_u = u / (N delta_f) for u = 1..N+M, the first
    M = ceil(tau_max N delta_f) prefix samples are discarded, and the re-
    tained block is projected onto the subcarriers with the absolute sample
    index in the kernel,

        Y[n'] = (1/N) sum_{u=M+1}^{M+N} y(t_u) e**(-2 pi i n' u / N),

    which lands exactly on the frequency-domain model for any tau within
    [0, tau_max].  A tau outside that window violates the prefix model and
    raises.
    """
    if delta_f <= 0:
        raise ValueError("delta_f must be positive")
    if tau_max < 0:
        raise ValueError("tau_max must be nonnegative")
    if transmissions:
        first_h = np.asarray(transmissions[0][1])
        r = first_h.size if r is None else r
        n = _tx_samples(transmissions[0][0]).size if n is None else n
    if r is None or n is None:
        raise ValueError("empty slot synthesis needs explicit r and n")
    m_cp = math.ceil(tau_max * n * delta_f)
    u = np.arange(1, n + m_cp + 1)
    t = u / (n * delta_f)
    n_idx = np.arange(1, n + 1)
    y = np.zeros((r, n + m_cp), dtype=np.complex128)
    amp = math.sqrt(gamma)
    for codeword, h, tau in transmissions:
        samples = _tx_samples(codeword)
        h = np.asarray(h, dtype=np.complex128)
        tau = float(tau)
        if h.shape != (r,):
            raise ValueError(f"channel vector shape {h.shape} does not match r={r}")
        if samples.size != n:
            raise ValueError(f"codeword length {samples.size} does not match n={n}")
        if tau < 0 or tau > tau_max:
            raise ValueError(f"delay {tau} outside the prefix window [0, {tau_max}]")
        wave = samples @ np.exp(2j * math.pi * delta_f * np.outer(n_idx, t - tau))
        y += amp * np.outer(h, wave)
    retained = y[:, m_cp:]
    kernel = np.exp(-2j * math.pi * np.outer(n_idx, u[m_cp:]) / n) / n
    return SlotObservation(Y=retained @ kernel.T, slot=slot)
