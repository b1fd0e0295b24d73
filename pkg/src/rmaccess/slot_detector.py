"""Layered per-slot detector with successive interference cancellation.

Works on the post-DFT observation Y (antennas x subcarriers) of one slot.
Each iteration estimates the strongest remaining transmission: correlating
adjacent subcarrier pairs across antennas turns the strongest device's
contribution into a Walsh function whose WHT peak reveals one column of its P
matrix; the peak's fourth-root-of-unity polarity carries one (b, beta) bit
pair and its residual phase one component of the timing phase.  Folding the
two half-sequences onto each other halves the problem and doubles the timing
phase, so m-1 layers plus a final two-column step read out the whole pair,
the channel vector, and m wrapped multiples of the delay, which a small grid
search then reconciles into one delay estimate.  The reconstructed signal is
subtracted and the loop repeats until the residual drops under a threshold,
an iteration cap is hit, or cancellation stops helping (that last detection
is dropped and the loop stops).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .rm_codec import RmPair, binary_index, rm_samples, walsh_factor, wht

__all__ = [
    "Detection",
    "DetectorConfig",
    "correlate_layer",
    "peak_search",
    "decode_polarity",
    "fold_layer",
    "estimate_final",
    "refine_delay",
    "reconstruct_signal",
    "cancel",
    "detect_slot",
]

_IOTA_POW = np.array([1.0 + 0.0j, 1.0j, -1.0 + 0.0j, -1.0j])


def _wrap(x):
    """Wrap angle(s) to [-pi, pi)."""
    return (x + np.pi) % (2.0 * np.pi) - np.pi


@dataclass(frozen=True)
class DetectorConfig:
    """Stopping rule and delay-search knobs for detect_slot.

    k_max caps the SIC iterations per slot, eps is the residual Frobenius
    norm under which the slot is declared empty.  refine_window /
    refine_resolution bound the scalar grid search that reconciles the m
    wrapped delay components.  estimate_delay=False selects the synchronous
    variant: no timing phases anywhere and the top layer's polarity is
    decoded as data instead of being forced to zero.
    """

    k_max: int
    eps: float
    refine_window: float = 0.1
    refine_resolution: float = 1e-4
    estimate_delay: bool = True

    def __post_init__(self) -> None:
        if self.k_max < 1:
            raise ValueError("k_max must be at least 1")
        if self.refine_resolution <= 0:
            raise ValueError("refine_resolution must be positive")
        if self.refine_window < 0:
            raise ValueError("refine_window must be nonnegative")

    @classmethod
    def from_operating_point(
        cls,
        *,
        n_active: float,
        r: int,
        m: int,
        p: int,
        d: int = 0,
        interference: float,
        neighbors: float,
        refine_window: float = 0.1,
        refine_resolution: float = 1e-4,
        estimate_delay: bool = True,
    ) -> "DetectorConfig":
        """Default stopping rule for a frame with n_active devices total.

        eps = sqrt(22 * K^(-1/3) * r^(-1/4) * (sigma2 + r 2^m)) - d + 3(m - p)
        with sigma2 the out-of-cell interference power and K = n_active;
        k_max = ceil(6 * K_star / 2^p * r^(1/4)) with K_star the expected
        neighbor count, floored at one iteration.
        """
        if n_active > 0:
            eps = float(
                math.sqrt(22.0 * n_active ** (-1.0 / 3.0) * r ** (-0.25) * (interference + r * 2**m))
                - d
                + 3 * (m - p)
            )
        else:
            eps = math.inf
        k_max = max(1, math.ceil(6.0 * neighbors / 2**p * r**0.25))
        return cls(
            k_max=k_max,
            eps=eps,
            refine_window=refine_window,
            refine_resolution=refine_resolution,
            estimate_delay=estimate_delay,
        )


@dataclass(frozen=True)
class Detection:
    """One detected transmission: its pair, channel estimate (scaled by
    sqrt(gamma)), delay estimate, the raw per-layer delay components, and the
    residual norms around its cancellation."""

    pair: RmPair
    h_hat: np.ndarray
    delta_hat: float
    delta_components: np.ndarray
    residual_before: float
    residual_after: float
    iteration: int

    def __post_init__(self) -> None:
        h = np.ascontiguousarray(np.asarray(self.h_hat, dtype=np.complex128))
        comps = np.ascontiguousarray(np.asarray(self.delta_components, dtype=np.float64))
        h.setflags(write=False)
        comps.setflags(write=False)
        object.__setattr__(self, "h_hat", h)
        object.__setattr__(self, "delta_components", comps)


def correlate_layer(Y: np.ndarray) -> np.ndarray:
    """Adjacent-column correlation across antennas.

    out[n] = Y[:, 2n+1] . conj(Y[:, 2n]) (0-based), halving the column count.
    For a single device this strips the data down to the layer's Walsh
    factor times gamma*||h||^2 times one phase factor of the delay.
    """
    Y = np.asarray(Y)
    if Y.ndim != 2:
        raise ValueError("expected an antennas x columns matrix")
    if Y.shape[1] % 2 != 0:
        raise ValueError(f"column count must be even, got {Y.shape[1]}")
    return np.einsum("ln,ln->n", Y[:, 1::2], np.conj(Y[:, 0::2]))


def peak_search(t: np.ndarray) -> tuple[np.ndarray, complex]:
    """Largest-magnitude WHT bin: (frequency bits MSB-first, peak value).

    Ties break toward the smallest index.
    """
    t = np.asarray(t)
    if t.ndim != 1 or t.size == 0:
        raise ValueError("expected a nonempty 1-D transform")
    n = t.size
    if n & (n - 1) != 0:
        raise ValueError(f"transform length must be a power of two, got {n}")
    idx = int(np.argmax(np.abs(t)))
    return binary_index(idx, n.bit_length() - 1), complex(t[idx])


def decode_polarity(peak: complex, phase_comp: float) -> tuple[int, int, float]:
    """Split a WHT peak into its (b, beta) bit pair and delay component.

    peak * exp(i*phase_comp) should sit near one of {1, i, -1, -i}, which map
    to (b, beta) = (0,0), (0,1), (1,0), (1,1).  The returned delay component
    is -Arg(peak * conj(i**(2b+beta))), i.e. the peak phase with the polarity
    removed, in [-pi, pi).
    """
    peak = complex(peak)
    if peak == 0:
        raise ValueError("zero peak; polarity is ambiguous")
    rotated = peak * np.exp(1j * phase_comp)
    quadrant = int(np.floor((np.angle(rotated) + np.pi / 4) / (np.pi / 2))) % 4
    b_bit, beta_bit = quadrant >> 1, quadrant & 1
    component = float(_wrap(-np.angle(peak * np.conj(_IOTA_POW[quadrant]))))
    return b_bit, beta_bit, component


def fold_layer(Y: np.ndarray, V_hat: np.ndarray, delta_hat_layer: float) -> np.ndarray:
    """Average the two half-sequences of every antenna row onto each other.

    out[:, n] = (exp(-i*delta)*Y[:, 2n] + conj(V_hat[n])*Y[:, 2n+1]) / 2.
    delta_hat_layer is the delay component estimated at THIS layer; the next
    layer sees the doubled phase ramp.  Averaging halves the noise variance.
    """
    Y = np.asarray(Y)
    if Y.ndim != 2 or Y.shape[1] % 2 != 0:
        raise ValueError("expected an antennas x even-columns matrix")
    V_hat = np.asarray(V_hat)
    if V_hat.shape != (Y.shape[1] // 2,):
        raise ValueError("V_hat must have half as many entries as Y has columns")
    return 0.5 * (np.exp(-1j * delta_hat_layer) * Y[:, 0::2] + np.conj(V_hat)[None, :] * Y[:, 1::2])


def estimate_final(
    Y1: np.ndarray, delta_prev: float, estimate_delay: bool = True
) -> tuple[int, int, float, np.ndarray]:
    """Read the last bit pair, last delay component, and channel off the
    two-column layer.

    Returns (b1, beta1, delta_component_m, h_hat) where h_hat estimates
    sqrt(gamma) * h.  delta_prev is the component estimated one layer up
    (its doubling compensates the correlation phase).
    """
    Y1 = np.asarray(Y1)
    if Y1.ndim != 2 or Y1.shape[1] != 2:
        raise ValueError("expected an antennas x 2 matrix")
    y_corr = complex(np.einsum("l,l->", Y1[:, 1], np.conj(Y1[:, 0])))
    if y_corr == 0:
        raise ValueError("zero correlation; final layer is ambiguous")
    comp_phase = 2.0 * delta_prev if estimate_delay else 0.0
    b1, beta1, comp_m = decode_polarity(y_corr, comp_phase)
    if not estimate_delay:
        comp_m = 0.0
    polarity = _IOTA_POW[(2 * b1 + beta1) & 3]
    h_hat = 0.5 * (
        Y1[:, 0] * np.exp(1j * comp_m) + np.conj(polarity) * np.exp(2j * comp_m) * Y1[:, 1]
    )
    return b1, beta1, comp_m, h_hat


def refine_delay(components: np.ndarray, cfg: DetectorConfig) -> float:
    """Reconcile the m wrapped delay components into one estimate.

    Component l (1-based) measures Arg(e^{i 2^(l-1) delta}).  The first
    component alone fixes delta but with the largest noise; the search scans
    corrections e in [-window, window] at the configured resolution,
    predicts every component from delta_1 - e, and keeps the e minimizing
    the wrap-aware squared residual.  Returns delta_1 - e*, in [-pi, pi).
    """
    components = np.asarray(components, dtype=np.float64)
    if components.ndim != 1 or components.size < 2:
        raise ValueError("need at least two delay components")
    first = components[0]
    steps = int(round(cfg.refine_window / cfg.refine_resolution))
    grid = first - np.arange(-steps, steps + 1) * cfg.refine_resolution
    scale = 2.0 ** np.arange(components.size)
    predicted = _wrap(scale[:, None] * grid[None, :])
    residual = np.sum(_wrap(components[:, None] - predicted) ** 2, axis=0)
    return float(_wrap(grid[int(np.argmin(residual))]))


def reconstruct_signal(pair: RmPair, h_hat: np.ndarray, delta_hat: float) -> np.ndarray:
    """Post-DFT contribution of one transmission: outer(h_hat, X * ramp)
    with ramp[n-1] = exp(-i * delta_hat * n), n = 1..2**m (h_hat carries the
    sqrt(gamma) scale)."""
    samples = rm_samples(pair.P, pair.b)
    n_idx = np.arange(1, samples.size + 1)
    return np.outer(np.asarray(h_hat), samples * np.exp(-1j * delta_hat * n_idx))


def cancel(observation, detection: Detection):
    """Subtract a detection's reconstructed signal from an observation.

    Accepts either a raw antennas x subcarriers array or an observation
    object with a .Y attribute; returns the same kind it was given.
    """
    rebuilt = reconstruct_signal(detection.pair, detection.h_hat, detection.delta_hat)
    if isinstance(observation, np.ndarray):
        return observation - rebuilt
    return dataclasses.replace(observation, Y=observation.Y - rebuilt)


def _estimate_strongest(Y: np.ndarray, m: int, cfg: DetectorConfig):
    """One pass down the layers: pair, channel and delay of the strongest
    transmission in Y, or None if a peak degenerates to zero."""
    P = np.zeros((m, m), dtype=np.uint8)
    b = np.zeros(m, dtype=np.uint8)
    components = np.zeros(m, dtype=np.float64)
    Ys = Y
    prev = 0.0
    for s in range(m, 1, -1):
        t = wht(correlate_layer(Ys))
        eta, peak = peak_search(t)
        if peak == 0:
            return None
        if s == m and cfg.estimate_delay:
            # reserved zeros: the whole peak phase is timing
            b_s, beta_s = 0, 0
            comp = float(_wrap(-np.angle(peak)))
        else:
            comp_phase = 2.0 * prev if cfg.estimate_delay else 0.0
            b_s, beta_s, comp = decode_polarity(peak, comp_phase)
            if not cfg.estimate_delay:
                comp = 0.0
        P[: s - 1, s - 1] = eta
        P[s - 1, : s - 1] = eta
        P[s - 1, s - 1] = beta_s
        b[s - 1] = b_s
        components[m - s] = comp
        Ys = fold_layer(Ys, walsh_factor(eta, b_s, beta_s), comp)
        prev = comp
    try:
        b1, beta1, comp_m, h_hat = estimate_final(Ys, prev, cfg.estimate_delay)
    except ValueError:
        return None
    b[0] = b1
    P[0, 0] = beta1
    components[m - 1] = comp_m
    if cfg.estimate_delay:
        delta_hat = refine_delay(components, cfg)
    else:
        delta_hat = 0.0
    return RmPair(P, b), h_hat, delta_hat, components


def detect_slot(observation, cfg: DetectorConfig) -> list[Detection]:
    """Detect-and-cancel loop over one slot observation.

    Runs while the residual Frobenius norm exceeds cfg.eps and fewer than
    cfg.k_max iterations have been spent.  A detection whose cancellation
    does not shrink the residual is discarded and ends the loop.  Returns
    detections in the order found (strongest first on clean scenes); the
    input is never mutated.
    """
    Y = observation if isinstance(observation, np.ndarray) else observation.Y
    Y = np.array(Y, dtype=np.complex128)
    if Y.ndim != 2:
        raise ValueError("expected an antennas x subcarriers observation")
    n = Y.shape[1]
    if n < 4 or (n & (n - 1)) != 0:
        raise ValueError(f"subcarrier count must be a power of two >= 4, got {n}")
    m = n.bit_length() - 1
    detections: list[Detection] = []
    k = 0
    residual = float(np.linalg.norm(Y))
    while residual > cfg.eps and k < cfg.k_max:
        k += 1
        est = _estimate_strongest(Y, m, cfg)
        if est is None:
            break
        pair, h_hat, delta_hat, components = est
        Y_next = Y - reconstruct_signal(pair, h_hat, delta_hat)
        residual_next = float(np.linalg.norm(Y_next))
        if residual_next >= residual:
            break  # cancellation stopped helping; drop this detection
        detections.append(
            Detection(
                pair=pair,
                h_hat=h_hat,
                delta_hat=delta_hat,
                delta_components=components,
                residual_before=residual,
                residual_after=residual_next,
                iteration=k,
            )
        )
        Y = Y_next
        residual = residual_next
    return detections
