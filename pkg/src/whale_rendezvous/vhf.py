"""VHF tag pulses: synthetic two-antenna IQ, pulse detection and phase AOA.

A UAV rotating in place sweeps a two-antenna baseline through all headings.
The phase difference between the antennas for a tag at bearing ``b`` with
the baseline at heading ``theta`` is ``(2 pi l / lambda) cos(b - theta)``;
matching that model against measured per-pulse phase differences over the
sweep gives an AOA profile without left/right ambiguity.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils import check_array
from sklearn.utils.validation import check_is_fitted

from .world import TWO_PI

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class VHFParams:
    frequency: float = 150.754e6
    antenna_separation: float = 2.0
    snr2_threshold: float = 10.0
    power_threshold_dbm: float = -77.0
    dbm_reference: float = -80.0        # dBm of unit digital power (noise floor per sample)
    samples_per_pulse_top: int = 200
    grid_step: float = 1.0              # degrees
    sample_rate: float = 20_000.0
    fft_window: int = 64
    moving_average_s: float = 1e-3
    pulse_on_s: float = 0.020
    pulse_period_s: float = 1.100
    tone_bin: int = 4

    def __post_init__(self):
        if self.antenna_separation <= 0:
            raise ValueError("antenna_separation must be positive")
        if self.grid_step <= 0:
            raise ValueError("grid_step must be positive")
        if self.sample_rate <= 0 or self.frequency <= 0:
            raise ValueError("sample_rate and frequency must be positive")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.frequency

    @property
    def wavenumber_baseline(self) -> float:
        """Peak phase difference 2 pi l / lambda, radians."""
        return TWO_PI * self.antenna_separation / self.wavelength


@dataclass
class IQRecord:
    samples: np.ndarray          # (2, N) complex baseband, one row per antenna
    sample_rate: float
    center_freq: float
    orientation_t: np.ndarray    # baseline heading telemetry timestamps, s
    orientation: np.ndarray      # baseline heading, radians (unwrapped)
    t0: float = 0.0

    def __post_init__(self):
        if self.samples.ndim != 2 or self.samples.shape[0] != 2:
            raise ValueError("samples must have shape (2, N)")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    @property
    def timestamps(self) -> np.ndarray:
        return self.t0 + np.arange(self.samples.shape[1]) / self.sample_rate

    def heading_at(self, t):
        return np.interp(t, self.orientation_t, self.orientation)


@dataclass(frozen=True)
class PulseRecord:
    start_idx: int
    end_idx: int
    snr2: float
    mean_phase_diff: float
    baseline_heading: float
    t: float = 0.0

    def __post_init__(self):
        if self.end_idx <= self.start_idx:
            raise ValueError("end_idx must exceed start_idx")


@dataclass
class AOAProfile:
    angles: np.ndarray           # degrees
    values: np.ndarray
    top_peaks: list              # [(angle_deg, value), ...] descending by value


def phase_difference(tag_bearing, baseline_heading, params: VHFParams):
    """Model phase difference (radians, unwrapped) between the two antennas."""
    return params.wavenumber_baseline * np.cos(np.asarray(tag_bearing) - baseline_heading)


def uniform_rotation(start_deg: float, sweep_deg: float, duration: float, n: int = 200):
    """Baseline heading telemetry for a constant-rate in-place rotation."""
    t = np.linspace(0.0, duration, n)
    return t, np.radians(start_deg + sweep_deg * t / duration)


def synthesize_iq(tag_bearing: float, uav_rotation, params: VHFParams, noise_snr_db: float,
                  rng, duration: float | None = None, phase_noise_std: float = 0.0,
                  pulse_offset: float = 0.05, noise_free: bool = False) -> IQRecord:
    """Two-channel IQ for a pulsing tag seen from a rotating baseline.

    Args:
        tag_bearing: Tag bearing in degrees, world frame.
        uav_rotation: ``(times, headings)`` telemetry; headings in radians,
            must sweep at least a full turn.
        params: VHF parameters.
        noise_snr_db: Pulse signal power over noise power, dB
            (``10 log10(SNR^2)``).
        rng: numpy Generator.
        duration: Record length in seconds; defaults to the telemetry span.
        phase_noise_std: Per-pulse Gaussian phase error, radians.
        pulse_offset: Time of the first pulse start, seconds.
        noise_free: Skip the additive noise floor (zero-noise checks).
    """
    times, headings = (np.asarray(a, dtype=float) for a in uav_rotation)
    if abs(headings[-1] - headings[0]) < TWO_PI - 1e-9:
        raise ValueError("rotation must cover at least 360 degrees")
    duration = float(times[-1]) if duration is None else duration
    fs = params.sample_rate
    n = int(round(duration * fs))
    t = np.arange(n) / fs

    pulse_idx = np.floor((t - pulse_offset) / params.pulse_period_s)
    phase_in = (t - pulse_offset) - pulse_idx * params.pulse_period_s
    on = (t >= pulse_offset) & (phase_in < params.pulse_on_s)
    n_pulses = int(pulse_idx.max()) + 1 if n else 0
    pulse_noise = rng.normal(0.0, phase_noise_std, max(n_pulses, 1)) if phase_noise_std > 0 \
        else np.zeros(max(n_pulses, 1))

    heading = np.interp(t, times, headings)
    dphi = phase_difference(math.radians(tag_bearing), heading, params)
    dphi = dphi + np.where(on, pulse_noise[np.clip(pulse_idx, 0, None).astype(int)], 0.0)

    amp = math.sqrt(10.0 ** (noise_snr_db / 10.0))
    f_tone = params.tone_bin * fs / params.fft_window
    carrier = np.exp(1j * (TWO_PI * f_tone * t + rng.uniform(0, TWO_PI)))
    s0 = amp * on * carrier
    s1 = s0 * np.exp(1j * dphi)
    samples = np.vstack([s0, s1])
    if not noise_free:
        samples = samples + (rng.normal(size=(2, n)) + 1j * rng.normal(size=(2, n))) / math.sqrt(2.0)
    return IQRecord(samples, fs, params.frequency, times, headings)


def _moving_average(x: np.ndarray, width: int) -> np.ndarray:
    if width <= 1:
        return x
    kernel = np.ones(width) / width
    return np.convolve(x, kernel, mode="same")


def window_peak_power_dbm(record: IQRecord, params: VHFParams) -> np.ndarray:
    """Peak FFT bin power per non-overlapping window of channel 0, in dBm."""
    w = params.fft_window
    x = record.samples[0]
    nwin = x.size // w
    spec = np.fft.fft(x[: nwin * w].reshape(nwin, w), axis=1)
    power = np.abs(spec) ** 2 / (w * w)
    return 10.0 * np.log10(np.maximum(power.max(axis=1), 1e-30)) + params.dbm_reference


def _regions(flags: np.ndarray):
    """Half-open index ranges of consecutive True values."""
    if not flags.any():
        return []
    padded = np.concatenate([[False], flags, [False]]).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    return list(zip(edges[::2], edges[1::2]))


def detect_pulses(record: IQRecord, params: VHFParams) -> list[PulseRecord]:
    """Find tag pulses: FFT power threshold per window, then an SNR^2 gate per pulse.

    Windows whose peak bin power clears ``power_threshold_dbm`` are merged
    into candidate pulses. Each candidate's core (where the moving-average
    power exceeds half its peak above the noise floor) must reach
    ``snr2_threshold``; the strongest ``samples_per_pulse_top`` core samples
    give the mean inter-antenna phase difference.
    """
    x0, x1 = record.samples
    if x0.size == 0:
        raise ValueError("empty record")
    w = params.fft_window
    flags = window_peak_power_dbm(record, params) >= params.power_threshold_dbm
    regions = _regions(flags)

    quiet = ~flags
    for a, b in regions:
        quiet[max(a - 1, 0):b + 1] = False
    p0 = np.abs(x0) ** 2
    if quiet.any():
        noise = float(p0[: quiet.size * w].reshape(-1, w)[quiet].mean())
    else:
        noise = float(np.median(p0) / math.log(2.0))
    noise = max(noise, 1e-12)

    ma = max(1, int(round(params.moving_average_s * record.sample_rate)))
    pulses = []
    for a, b in regions:
        lo = max(a - 1, 0) * w
        hi = min((b + 1) * w, x0.size)
        smooth = _moving_average(p0[lo:hi], ma)
        peak = int(np.argmax(smooth))
        level = noise + 0.5 * (smooth[peak] - noise)
        above = smooth >= level
        s = peak
        while s > 0 and above[s - 1]:
            s -= 1
        e = peak + 1
        while e < above.size and above[e]:
            e += 1
        core = slice(lo + s, lo + e)
        snr2 = max(0.0, (float(p0[core].mean()) - noise) / noise)
        if snr2 < params.snr2_threshold:
            continue
        k = min(params.samples_per_pulse_top, e - s)
        top = lo + s + np.argsort(smooth[s:e])[::-1][:k]
        dphi = float(np.angle(np.sum(x1[top] * np.conj(x0[top]))))
        t_mid = record.t0 + (lo + (s + e) / 2.0) / record.sample_rate
        pulses.append(PulseRecord(
            start_idx=lo + s,
            end_idx=lo + e,
            snr2=snr2,
            mean_phase_diff=dphi,
            baseline_heading=float(np.mod(record.heading_at(t_mid), TWO_PI)),
            t=record.t0 + (lo + s) / record.sample_rate,
        ))
    return pulses


def heading_coverage(headings) -> float:
    """Angular span (radians) covered by a set of headings on the circle."""
    h = np.sort(np.mod(np.asarray(headings, dtype=float), TWO_PI))
    if h.size < 2:
        return 0.0
    gaps = np.diff(np.append(h, h[0] + TWO_PI))
    return TWO_PI - float(gaps.max())


def coherence_profile(phase_diffs, headings, angles_rad, params: VHFParams) -> np.ndarray:
    """|mean_i exp(j (dphi_i - model(angle, theta_i)))|^2 for each candidate angle."""
    phase_diffs = np.asarray(phase_diffs, dtype=float)
    headings = np.asarray(headings, dtype=float)
    model = phase_difference(angles_rad[:, None], headings[None, :], params)
    z = np.exp(1j * (phase_diffs[None, :] - model)).mean(axis=1)
    return np.abs(z) ** 2


def top_local_maxima(angles, values, k: int = 3):
    """Up to ``k`` circular local maxima, strongest first."""
    left = np.roll(values, 1)
    right = np.roll(values, -1)
    idx = np.flatnonzero((values >= left) & (values > right))
    idx = idx[np.argsort(values[idx], kind="stable")[::-1]][:k]
    return [(float(angles[i]), float(values[i])) for i in idx]


def compute_aoa_profile(pulses, params: VHFParams) -> AOAProfile:
    """AOA likelihood over a degree grid from detected pulses.

    Raises:
        ValueError: pulses cover less than 180 degrees of baseline heading
            ("aperture incomplete").
    """
    headings = [p.baseline_heading for p in pulses]
    if heading_coverage(headings) < math.pi - 1e-9:
        raise ValueError("aperture incomplete: pulses span less than 180 degrees of heading")
    angles = np.arange(0.0, 360.0, params.grid_step)
    values = coherence_profile([p.mean_phase_diff for p in pulses], headings,
                               np.radians(angles), params)
    peak = values.max()
    if peak > 0:
        values = values / peak
    return AOAProfile(angles, values, top_local_maxima(angles, values, 3))


def surfacing_cue(pulses, window, params: VHFParams) -> bool:
    """True iff some pulse in ``window = (t0, t1)`` clears the SNR^2 threshold."""
    t0, t1 = window
    return any(t0 <= p.t <= t1 and p.snr2 >= params.snr2_threshold for p in pulses)


def angular_error_deg(a, b) -> float:
    return float(abs((a - b + 180.0) % 360.0 - 180.0))


def min_top_error(profile: AOAProfile, true_deg: float) -> float:
    """Smallest angular error among the profile's top peaks, degrees."""
    return min(angular_error_deg(a, true_deg) for a, _ in profile.top_peaks)


# Per-tag presets emulating the land-based fish-tracker trials: pulse SNR per
# antenna separation and a per-pulse phase error standing in for multipath.
# The phase error is fitted so the 2 m mean top-3 error lands near the trial's.
TAG_PRESETS = {
    "150.453": {"frequency": 150.453e6, "snr_db": {1.0: 26.48, 2.0: 23.16}, "phase_noise_std": 1.5},
    "150.754": {"frequency": 150.754e6, "snr_db": {1.0: 29.40, 2.0: 27.57}, "phase_noise_std": 1.1},
    "150.983": {"frequency": 150.983e6, "snr_db": {1.0: 24.15, 2.0: 21.08}, "phase_noise_std": 1.4},
}


class VHFDirectionFinder(BaseEstimator):
    """Estimate a tag bearing from per-pulse phase differences.

    ``fit`` takes ``X`` of shape (n_pulses, 2) holding
    ``[mean_phase_diff, baseline_heading]`` in radians and stores the
    profile; ``bearing_`` is the top peak in degrees.
    """

    def __init__(self, frequency=150.754e6, antenna_separation=2.0, grid_step=1.0):
        self.frequency = frequency
        self.antenna_separation = antenna_separation
        self.grid_step = grid_step

    def _vhf_params(self):
        return VHFParams(frequency=self.frequency, antenna_separation=self.antenna_separation,
                         grid_step=self.grid_step)

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != 2:
            raise ValueError("X must have columns [mean_phase_diff, baseline_heading]")
        pulses = [PulseRecord(0, 1, 0.0, float(d), float(h)) for d, h in X]
        self.profile_ = compute_aoa_profile(pulses, self._vhf_params())
        self.bearing_ = self.profile_.top_peaks[0][0]
        return self

    @classmethod
    def pulses_to_X(cls, pulses) -> np.ndarray:
        return np.array([[p.mean_phase_diff, p.baseline_heading] for p in pulses])

    def predict(self, X=None):
        """Top-peak bearing in degrees (one value per call)."""
        check_is_fitted(self, "profile_")
        return np.array([self.bearing_])
