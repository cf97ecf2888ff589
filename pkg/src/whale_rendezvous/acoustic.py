"""Simulated acoustic AOA batches from a towed linear array."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .world import Pose2D, fold_aoa

BATCH_PERIOD = 10.0  # seconds between batches sent to the estimator
AMPLITUDE_JITTER = 0.05


@dataclass(frozen=True)
class AOAMeasurement:
    t: float
    aoa: float
    amplitude: float
    source_id_hidden: int = -1


@dataclass(frozen=True)
class AcousticNoiseParams:
    sigma_deg: float = 5.0
    clicks_per_batch: int = 20
    amplitude_scale: float = 1000.0

    def __post_init__(self):
        if self.sigma_deg < 0:
            raise ValueError("sigma_deg must be >= 0")
        if self.clicks_per_batch < 1:
            raise ValueError("clicks_per_batch must be >= 1")


def amplitude_at(distance, amplitude_scale: float):
    """Expected click amplitude at ``distance`` meters (inverse-distance law)."""
    return amplitude_scale / np.asarray(distance)


def observe_batch(whales, array_pose: Pose2D, params: AcousticNoiseParams, t: float,
                  rng, batch_period: float = BATCH_PERIOD) -> list[AOAMeasurement]:
    """One batch of folded, noisy AOA measurements.

    Args:
        whales: Sequence of ``(position, is_surfaced)`` pairs; the list index is
            used as the hidden source id.
        array_pose: Towed array pose; its heading is the array axis.
        params: Noise and click-rate parameters.
        t: Batch time; must sit on a batch boundary.
        rng: numpy Generator.

    Surfaced whales are silent and contribute nothing.
    """
    if abs(t / batch_period - round(t / batch_period)) > 1e-9:
        raise ValueError(f"t={t} is not a batch boundary")
    sigma = math.radians(params.sigma_deg)
    n = params.clicks_per_batch
    out = []
    for wid, (pos, surfaced) in enumerate(whales):
        if surfaced:
            continue
        dx, dy = pos[0] - array_pose.x, pos[1] - array_pose.y
        d = math.hypot(dx, dy)
        if d == 0.0:
            raise ValueError("degenerate geometry: whale coincident with array")
        true_bearing = math.atan2(dy, dx)
        noisy = true_bearing + rng.normal(0.0, sigma, n) if sigma > 0 else np.full(n, true_bearing)
        aoas = fold_aoa(noisy, array_pose.heading)
        amps = params.amplitude_scale / d * (1.0 + rng.normal(0.0, AMPLITUDE_JITTER, n))
        amps = np.maximum(amps, 1e-12)
        out.extend(AOAMeasurement(t, float(a), float(m), wid) for a, m in zip(aoas, amps))
    return out
