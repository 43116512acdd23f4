"""Synthetic ground-penetrating-radar surveys.

The transmit pulse is a Gaussian monocycle (first derivative of a Gaussian).
Each buried target is a handful of point scatterers whose impulse response is
a sum of time-shifted, weighted Gaussian pulses; a range profile is the
discrete convolution of the sampled pulse with that response plus additive
Gaussian noise.  A survey lays profiles on a pixel grid (1 cm pitch along the
scan direction, 4 cm across it), marks target halos, and adds spatially
correlated soil clutter so that neighbouring profiles resemble each other the
way real scans do.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.signal import fftconvolve


@dataclass(frozen=True)
class PulseParams:
    """Monocycle parameters: centre frequency, peak amplitude, sampling rate.

    ``tau`` is the pulse time offset; by default one carrier period so the
    sampled pulse starts near zero amplitude.
    """

    fc: float = 2.0e9
    amplitude: float = 1.0
    fs: float = 40.0e9
    tau: float | None = None

    def __post_init__(self):
        if self.fc <= 0:
            raise ValueError("fc must be positive")
        if self.amplitude <= 0:
            raise ValueError("amplitude must be positive")
        if self.fs <= 2 * self.fc:
            raise ValueError("fs must exceed twice fc")
        if self.tau is None:
            object.__setattr__(self, "tau", 1.0 / self.fc)


@dataclass(frozen=True)
class Scatterer:
    """One point scatterer: signed reflectivity, time shift, pulse duration."""

    alpha: float
    t_m: float
    dT_m: float

    def __post_init__(self):
        if self.dT_m <= 0:
            raise ValueError("dT_m must be positive")
        if self.t_m < 0:
            raise ValueError("t_m must be non-negative")


@dataclass(frozen=True)
class TargetSpec:
    """A buried target: class id, halo centre/radius in cells, scatterers."""

    class_id: int
    center: tuple[int, int]
    halo_radius: int
    scatterers: tuple[Scatterer, ...]

    def __post_init__(self):
        if self.class_id < 1:
            raise ValueError("target class ids start at 1 (0 is clutter)")
        if self.halo_radius < 1:
            raise ValueError("halo radius must be at least 1 cell")
        object.__setattr__(self, "scatterers", tuple(self.scatterers))


@dataclass(frozen=True)
class SurveyLayout:
    """Grid geometry, targets and clutter/noise difficulty knobs."""

    x_cells: int
    y_cells: int
    targets: tuple[TargetSpec, ...] = ()
    clutter_density: float = 2.0
    clutter_amplitude: float = 0.4
    noise_sigma: float = 0.02
    m_samples: int = 211
    class_names: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.x_cells < 1 or self.y_cells < 1:
            raise ValueError("grid must have at least one cell per axis")
        if self.clutter_density < 0:
            raise ValueError("clutter_density must be non-negative")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.m_samples < 8:
            raise ValueError("m_samples must be at least 8")
        object.__setattr__(self, "targets", tuple(self.targets))
        if self.class_names is not None:
            object.__setattr__(self, "class_names", tuple(self.class_names))

    @property
    def n_pixels(self) -> int:
        return self.x_cells * self.y_cells


@dataclass
class SurveyDataset:
    """Profiles (columns = pixels), labels, halos and grid geometry."""

    profiles: np.ndarray
    labels: np.ndarray
    halos: list[tuple[int, np.ndarray]]
    geometry: tuple[int, int]
    seed: int
    class_names: tuple[str, ...] | None = None

    @property
    def n_pixels(self) -> int:
        return self.profiles.shape[1]


def monocycle(t, p: PulseParams):
    """Transmit pulse amplitude at time ``t`` (scalar or array, seconds).

    The waveform is odd about ``t = tau`` and its absolute peak equals the
    configured amplitude.
    """
    t = np.asarray(t, dtype=np.float64)
    u = t - p.tau
    return 2.0 * math.sqrt(math.e) * math.pi * p.fc * p.amplitude * u * np.exp(
        -2.0 * (math.pi * p.fc * u) ** 2
    )


def target_cir(scatterers, t_grid) -> np.ndarray:
    """Channel impulse response of a scatterer list on a time grid."""
    t = np.asarray(t_grid, dtype=np.float64)
    if t.size == 0:
        raise ValueError("empty grid")
    if t.size > 1 and np.any(np.diff(t) <= 0):
        raise ValueError("time grid must be strictly increasing")
    h = np.zeros_like(t)
    for s in scatterers:
        h += s.alpha * np.exp(-4.0 * math.pi * ((t - s.t_m) / s.dT_m) ** 2)
    return h


def sample_pulse(p: PulseParams) -> np.ndarray:
    """Sample the monocycle at ``fs`` over its effective support."""
    # 2.5 carrier periods past tau: the Gaussian envelope is below 1e-50 there.
    n = int(math.ceil((p.tau + 2.5 / p.fc) * p.fs)) + 1
    return monocycle(np.arange(n) / p.fs, p)


def range_profile(scatterers, p: PulseParams, noise_sigma: float,
                  m_samples: int, rng) -> np.ndarray:
    """One received echo: pulse convolved with the target response plus noise.

    The linear convolution is truncated to ``m_samples`` starting at lag zero.
    """
    if m_samples < 8:
        raise ValueError("m_samples must be at least 8")
    t_grid = np.arange(m_samples) / p.fs
    h = target_cir(scatterers, t_grid) if scatterers else np.zeros(m_samples)
    y = np.convolve(sample_pulse(p), h)[:m_samples]
    if noise_sigma > 0:
        y = y + rng.normal(0.0, noise_sigma, m_samples)
    return y


def halo_pixels(layout: SurveyLayout, target: TargetSpec) -> np.ndarray:
    """Pixel indices within Euclidean distance ``halo_radius`` of the centre."""
    cx, cy = target.center
    r = target.halo_radius
    if cx - r < 0 or cx + r >= layout.x_cells or cy - r < 0 or cy + r >= layout.y_cells:
        raise ValueError(f"halo of target at {target.center} leaves the grid")
    xs = np.arange(layout.x_cells)
    ys = np.arange(layout.y_cells)
    gx, gy = np.meshgrid(xs, ys)
    inside = (gx - cx) ** 2 + (gy - cy) ** 2 <= r * r
    return np.flatnonzero(inside.ravel())


def generate_survey(layout: SurveyLayout, p: PulseParams, seed: int) -> SurveyDataset:
    """Build a labeled survey: one profile per pixel, deterministic per seed.

    Pixels inside a target halo share that target's scatterers on top of the
    local clutter; the per-pixel clutter responses are smoothed with a
    three-pixel moving average along the scan (x) axis so adjacent profiles
    stay correlated.
    """
    rng = np.random.default_rng(seed)
    n_pix = layout.n_pixels
    m = layout.m_samples
    t_grid = np.arange(m) / p.fs
    window = t_grid[-1]

    labels = np.zeros(n_pix, dtype=np.int64)
    halos: list[tuple[int, np.ndarray]] = []
    claimed = np.zeros(n_pix, dtype=bool)
    target_cirs = np.zeros((m, n_pix))
    for tgt in layout.targets:
        pix = halo_pixels(layout, tgt)
        if claimed[pix].any():
            raise ValueError("halo collision")
        claimed[pix] = True
        labels[pix] = tgt.class_id
        halos.append((tgt.class_id, pix))
        target_cirs[:, pix] = target_cir(tgt.scatterers, t_grid)[:, None]

    # Poisson-count clutter scatterers per pixel, drawn in pixel order.
    clutter = np.zeros((m, n_pix))
    a = layout.clutter_amplitude
    for pix in range(n_pix):
        count = rng.poisson(layout.clutter_density)
        if count == 0:
            continue
        alphas = rng.uniform(-a, a, count)
        times = rng.uniform(0.0, window, count)
        widths = rng.uniform(0.5, 2.0, count) / p.fc
        for alpha, t_m, dt in zip(alphas, times, widths):
            clutter[:, pix] += alpha * np.exp(-4.0 * math.pi * ((t_grid - t_m) / dt) ** 2)

    # Smooth clutter along x within each y row; pixel index = iy*x_cells + ix.
    clutter = clutter.reshape(m, layout.y_cells, layout.x_cells)
    clutter = uniform_filter1d(clutter, size=3, axis=2, mode="nearest")
    clutter = clutter.reshape(m, n_pix)

    cir = clutter + target_cirs
    pulse = sample_pulse(p)
    profiles = fftconvolve(cir, pulse[:, None], axes=0)[:m]
    if layout.noise_sigma > 0:
        profiles = profiles + rng.normal(0.0, layout.noise_sigma, (m, n_pix))

    return SurveyDataset(
        profiles=profiles,
        labels=labels,
        halos=halos,
        geometry=(layout.x_cells, layout.y_cells),
        seed=seed,
        class_names=layout.class_names,
    )


def reduce_samples(Y, keep_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Keep ``floor(keep_fraction * M)`` rows chosen uniformly at random.

    Returns the row-subsampled matrix and the sorted row mask so the same
    pattern can be applied to a dictionary.
    """
    if not 0 < keep_fraction <= 1:
        raise ValueError("keep_fraction must be in (0, 1]")
    Y = np.asarray(Y)
    m = Y.shape[0]
    n_keep = int(math.floor(keep_fraction * m))
    if n_keep < 1:
        raise ValueError("keep_fraction leaves no rows")
    rng = np.random.default_rng(seed)
    mask = np.sort(rng.choice(m, size=n_keep, replace=False))
    return Y[mask], mask


def default_layout(x_cells: int = 20, y_cells: int = 20) -> SurveyLayout:
    """Four-class survey preset: clutter plus large/medium/small targets.

    The three target classes occupy separate delay bands with distinct echo
    structure so the preset is separable under moderate clutter.
    """
    large = (
        Scatterer(alpha=1.4, t_m=1.6e-9, dT_m=9.0e-10),
        Scatterer(alpha=-0.9, t_m=2.1e-9, dT_m=7.0e-10),
        Scatterer(alpha=0.5, t_m=2.6e-9, dT_m=5.0e-10),
    )
    medium = (
        Scatterer(alpha=1.1, t_m=2.9e-9, dT_m=5.0e-10),
        Scatterer(alpha=-0.8, t_m=3.4e-9, dT_m=4.0e-10),
        Scatterer(alpha=0.6, t_m=3.8e-9, dT_m=3.5e-10),
    )
    small = (
        Scatterer(alpha=0.9, t_m=4.4e-9, dT_m=2.5e-10),
        Scatterer(alpha=-0.5, t_m=4.7e-9, dT_m=2.0e-10),
    )
    targets = (
        TargetSpec(class_id=1, center=(4, 4), halo_radius=3, scatterers=large),
        TargetSpec(class_id=1, center=(15, 15), halo_radius=3, scatterers=large),
        TargetSpec(class_id=2, center=(15, 4), halo_radius=3, scatterers=medium),
        TargetSpec(class_id=2, center=(4, 15), halo_radius=3, scatterers=medium),
        TargetSpec(class_id=3, center=(9, 9), halo_radius=3, scatterers=small),
    )
    return SurveyLayout(
        x_cells=x_cells,
        y_cells=y_cells,
        targets=targets,
        clutter_density=2.0,
        clutter_amplitude=0.35,
        noise_sigma=0.02,
        m_samples=211,
        class_names=("clutter", "large", "medium", "small"),
    )


def layout_to_dict(layout: SurveyLayout, pulse: PulseParams) -> dict:
    """JSON-ready description of a layout and its pulse."""
    return {
        "x_cells": layout.x_cells,
        "y_cells": layout.y_cells,
        "clutter_density": layout.clutter_density,
        "clutter_amplitude": layout.clutter_amplitude,
        "noise_sigma": layout.noise_sigma,
        "m_samples": layout.m_samples,
        "class_names": list(layout.class_names) if layout.class_names else None,
        "pulse": {
            "fc": pulse.fc,
            "amplitude": pulse.amplitude,
            "fs": pulse.fs,
            "tau": pulse.tau,
        },
        "targets": [
            {
                "class_id": t.class_id,
                "center": list(t.center),
                "halo_radius": t.halo_radius,
                "scatterers": [
                    {"alpha": s.alpha, "t_m": s.t_m, "dT_m": s.dT_m}
                    for s in t.scatterers
                ],
            }
            for t in layout.targets
        ],
    }


def layout_from_dict(doc: dict) -> tuple[SurveyLayout, PulseParams]:
    """Inverse of :func:`layout_to_dict`."""
    pulse_doc = doc.get("pulse", {})
    pulse = PulseParams(
        fc=pulse_doc.get("fc", 2.0e9),
        amplitude=pulse_doc.get("amplitude", 1.0),
        fs=pulse_doc.get("fs", 40.0e9),
        tau=pulse_doc.get("tau"),
    )
    targets = tuple(
        TargetSpec(
            class_id=t["class_id"],
            center=tuple(t["center"]),
            halo_radius=t["halo_radius"],
            scatterers=tuple(
                Scatterer(alpha=s["alpha"], t_m=s["t_m"], dT_m=s["dT_m"])
                for s in t["scatterers"]
            ),
        )
        for t in doc.get("targets", ())
    )
    names = doc.get("class_names")
    layout = SurveyLayout(
        x_cells=doc["x_cells"],
        y_cells=doc["y_cells"],
        targets=targets,
        clutter_density=doc.get("clutter_density", 2.0),
        clutter_amplitude=doc.get("clutter_amplitude", 0.4),
        noise_sigma=doc.get("noise_sigma", 0.02),
        m_samples=doc.get("m_samples", 211),
        class_names=tuple(names) if names else None,
    )
    return layout, pulse
