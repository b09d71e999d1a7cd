"""Linear 1-D SH site response, Ricker ensembles, intensity measures and GOF scores.

Sign convention: spectra follow ``numpy.fft`` (``X(f) = sum x e^{-i 2 pi f t}``),
so a pure delay ``tau`` is ``e^{-i 2 pi f tau}`` and the layer recursion below
uses the matching ``e^{i(omega t + k z)}`` wave form.
"""

from __future__ import annotations

import cmath
import csv
import functools
import logging
import math
from concurrent.futures import Executor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import optimize, signal

from . import core, geostat
from .core import LayeredProfile, Provenance
from .io import DataFormatError, fmt6

log = logging.getLogger(__name__)

G = 9.80665
BANDS = ("low", "mid", "high")
IM_NAMES = ("pga", "pgv", "pgd", "arias", "d5_95", "fas", "psa")
AMPLITUDE_IMS = ("pga", "pgv", "pgd", "fas", "psa")
BAND_FLOOR = 0.01
BAND_CEIL = 10.0
DEFAULT_VS30_BINS = (100.0, 200.0, 300.0, 400.0, 600.0, 800.0, 1200.0)
DEFAULT_PERIODS = np.logspace(-2, 1, 50)


class SiteResponseError(ValueError):
    """Invalid site-response input."""


# --------------------------------------------------------------------------
# motions
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MotionRecord:
    """Uniformly sampled acceleration history.

    ``units`` is ``"g"`` or ``"m/s2"``; peak acceleration is reported in these
    units, velocity/displacement/Arias in SI.
    """

    dt: float
    acc: np.ndarray
    label: str = ""
    units: str = "g"

    def __post_init__(self):
        a = np.array(self.acc, dtype=float)
        if not self.dt > 0:
            raise SiteResponseError("dt must be positive")
        if a.ndim != 1 or a.size < 256:
            raise SiteResponseError("motion needs at least 256 samples")
        if not np.all(np.isfinite(a)):
            raise SiteResponseError("motion samples must be finite")
        if self.units not in ("g", "m/s2"):
            raise SiteResponseError("units must be 'g' or 'm/s2'")
        a.setflags(write=False)
        object.__setattr__(self, "acc", a)

    @property
    def npts(self) -> int:
        return self.acc.size

    @property
    def time(self) -> np.ndarray:
        return np.arange(self.npts) * self.dt

    @property
    def duration(self) -> float:
        return self.npts * self.dt

    @property
    def acc_si(self) -> np.ndarray:
        return self.acc * G if self.units == "g" else self.acc

    def with_acc(self, acc, label=None) -> "MotionRecord":
        return MotionRecord(self.dt, acc, self.label if label is None else label, self.units)


def write_motion(motion: MotionRecord, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# units={motion.units} dt={motion.dt!r} label={motion.label}\n")
        w = csv.writer(fh, lineterminator="\n")
        for t, a in zip(motion.time, motion.acc):
            w.writerow([repr(float(t)), repr(float(a))])


def read_motion(path: str | Path) -> MotionRecord:
    with open(path) as fh:
        head = fh.readline()
        if not head.startswith("#"):
            raise DataFormatError(f"{path}: missing '# units=.. dt=..' header")
        meta = dict(item.split("=", 1) for item in head[1:].split() if "=" in item)
        try:
            t, a = np.loadtxt(fh, delimiter=",", unpack=True, ndmin=2)
            dt = float(meta["dt"])
        except (KeyError, ValueError) as exc:
            raise DataFormatError(f"{path}: {exc}") from exc
    if t.size > 1 and not np.allclose(np.diff(t), dt, rtol=1e-6):
        raise DataFormatError(f"{path}: time column is not uniformly spaced at dt")
    return MotionRecord(dt, a, meta.get("label", ""), meta.get("units", "g"))


def ricker(fc: float, dt: float, duration: float, t0: float | None = None, units: str = "g") -> MotionRecord:
    """Ricker wavelet with unit peak at ``t0`` (default ``1.5/fc``).

    Both sides of ``t0`` must hold ``1.5/fc`` of signal, where the envelope
    has decayed below 1e-9.
    """
    if not fc > 0:
        raise SiteResponseError("fc must be positive")
    if dt > 1.0 / (20.0 * fc):
        raise SiteResponseError(f"dt = {dt} s under-resolves fc = {fc} Hz (need dt <= 1/(20 fc))")
    if t0 is None:
        t0 = 1.5 / fc
    if t0 < 1.5 / fc - 1e-12 or duration - t0 < 1.5 / fc - 1e-12:
        raise SiteResponseError(f"duration {duration} s does not cover t0 +- 1.5/fc for fc = {fc} Hz")
    n = int(round(duration / dt))
    t = np.arange(n) * dt
    arg = (math.pi * fc * (t - t0)) ** 2
    return MotionRecord(dt, (1.0 - 2.0 * arg) * np.exp(-arg), f"ricker_{fc:.6g}Hz", units)


def ricker_spectrum(f, fc):
    """Analytic Fourier amplitude of the unit-peak Ricker (per Hz)."""
    f = np.asarray(f, dtype=float)
    return 2.0 / math.sqrt(math.pi) * f**2 / fc**3 * np.exp(-(f**2) / fc**2)


@dataclass(frozen=True)
class EnsembleSettings:
    f_lo: float = 0.1
    f_hi: float = 10.0
    count: int = 20
    dt: float = 0.005
    duration: float = 40.96


def ensemble_input(f_lo=0.1, f_hi=10.0, count=20, dt=0.005, duration=40.96) -> list[MotionRecord]:
    """Log-spaced Ricker wavelets scaled so their mean spectrum is flat over the band.

    The scale factors solve a bounded least-squares fit of the mean analytic
    spectrum to 1 on 200 log-spaced frequencies. Each factor is kept at or
    above half of the ``fc``-proportional scaling that equalizes peak spectra,
    so no wavelet drops out of the ensemble.
    """
    if not (0 < f_lo < f_hi):
        raise SiteResponseError("ensemble needs 0 < f_lo < f_hi")
    if count < 2:
        raise SiteResponseError("ensemble needs count >= 2")
    fcs = np.geomspace(f_lo, f_hi, count)
    f = np.geomspace(f_lo, f_hi, 200)
    A = np.column_stack([ricker_spectrum(f, fc) for fc in fcs]) / count
    ones = np.ones_like(f)
    c = np.linalg.lstsq((A @ fcs)[:, None], ones, rcond=None)[0][0]
    w = optimize.lsq_linear(A, ones, bounds=(0.5 * c * fcs, np.inf)).x
    mean = A @ w
    spread_db = 20 * math.log10(mean.max() / mean.min()) if mean.min() > 0 else math.inf
    if spread_db >= 3.0:
        decades = math.log10(f_hi / f_lo)
        raise SiteResponseError(
            f"ensemble of {count} wavelets over {decades:.2g} decades varies by {spread_db:.2f} dB (> 3 dB); "
            "use more wavelets (about 8 per decade)"
        )
    out = []
    for fc, wi in zip(fcs, w):
        r = ricker(fc, dt, duration)
        out.append(r.with_acc(r.acc * wi, label=r.label))
    return out


def ensemble_from(settings: EnsembleSettings) -> list[MotionRecord]:
    return ensemble_input(settings.f_lo, settings.f_hi, settings.count, settings.dt, settings.duration)


# --------------------------------------------------------------------------
# site columns and transfer functions
# --------------------------------------------------------------------------


def density_proxy(vs):
    """kg/m^3 from vs (m/s): 1600 + 0.1 vs, clamped to [1600, 2600]."""
    return np.clip(1600.0 + 0.1 * np.asarray(vs, dtype=float), 1600.0, 2600.0)


@dataclass(frozen=True)
class HalfSpace:
    vs: float
    density: float


@dataclass(frozen=True)
class SiteOptions:
    damping: float = 0.02
    halfspace_vs_min: float = 1000.0
    density: Callable = density_proxy


def default_halfspace(profile: LayeredProfile, options: SiteOptions = SiteOptions()) -> HalfSpace:
    vs = max(float(profile.vs[-1]), options.halfspace_vs_min)
    return HalfSpace(vs, float(options.density(vs)))


def transfer_function(
    profile: LayeredProfile,
    halfspace: HalfSpace,
    damping: float,
    freqs,
    density=None,
) -> np.ndarray:
    """Surface over outcrop motion for vertically incident SH waves.

    Complex velocity ``vs * sqrt(1 + 2 i damping)`` in every layer and the
    half-space. ``density`` defaults to the proxy applied to layer vs.
    """
    freqs = np.asarray(freqs, dtype=float)
    if np.any(np.diff(freqs) < 0):
        raise SiteResponseError("freqs must be ascending")
    if not 0 <= damping <= 0.2:
        raise SiteResponseError("damping must lie in [0, 0.2]")
    h = profile.thickness
    if np.any(h <= 0):
        raise SiteResponseError("zero-thickness layers are not allowed")
    rho = density_proxy(profile.vs) if density is None else np.asarray(density, dtype=float)
    if np.any(rho <= 0) or halfspace.vs <= 0 or halfspace.density <= 0:
        raise SiteResponseError("vs and density must be positive")
    c = cmath.sqrt(1 + 2j * damping)
    vs_c = np.append(profile.vs, halfspace.vs) * c
    z = np.append(rho, halfspace.density) * vs_c
    omega = 2 * math.pi * freqs
    A = np.ones_like(omega, dtype=complex)
    B = np.ones_like(omega, dtype=complex)
    for m in range(h.size):
        alpha = z[m] / z[m + 1]
        ikh = 1j * omega * h[m] / vs_c[m]
        e_pos, e_neg = np.exp(ikh), np.exp(-ikh)
        A, B = (
            0.5 * A * (1 + alpha) * e_pos + 0.5 * B * (1 - alpha) * e_neg,
            0.5 * A * (1 - alpha) * e_pos + 0.5 * B * (1 + alpha) * e_neg,
        )
    return 1.0 / A


def padded_length(n: int) -> int:
    """Next power of two of at least twice the record length."""
    return 1 << int(math.ceil(math.log2(2 * n)))


def fft_grid(motion: MotionRecord) -> np.ndarray:
    return np.fft.rfftfreq(padded_length(motion.npts), motion.dt)


def _interp_tf(freqs, tf, grid):
    if grid[-1] > freqs[-1] * (1 + 1e-9) or grid[0] < freqs[0] * (1 - 1e-9) - 1e-12:
        raise SiteResponseError("transfer function grid does not cover the motion's FFT grid")
    mag = np.interp(grid, freqs, np.abs(tf))
    phase = np.interp(grid, freqs, np.unwrap(np.angle(tf)))
    return mag * np.exp(1j * phase)


def propagate(motion: MotionRecord, tf, freqs=None) -> MotionRecord:
    """Apply a transfer function in the frequency domain.

    The record is zero-padded to ``padded_length`` samples and returned at
    that length. ``tf`` is either a callable of frequency (Hz), an array on
    ``fft_grid(motion)``, or an array on ``freqs`` (interpolated in magnitude
    and unwrapped phase). The DC and Nyquist bins are forced real (their
    magnitudes) so the output is real and Parseval holds exactly.
    """
    n = padded_length(motion.npts)
    grid = np.fft.rfftfreq(n, motion.dt)
    if callable(tf):
        H = np.asarray(tf(grid), dtype=complex)
    elif freqs is None:
        H = np.asarray(tf, dtype=complex)
        if H.ndim == 0:
            H = np.full(grid.shape, H)
    else:
        H = _interp_tf(np.asarray(freqs, dtype=float), np.asarray(tf, dtype=complex), grid)
    if H.shape != grid.shape:
        raise SiteResponseError(f"transfer function has {H.size} bins, FFT grid has {grid.size}")
    H = H.copy()
    H[0] = abs(H[0])
    H[-1] = abs(H[-1])
    X = np.fft.rfft(motion.acc, n)
    return MotionRecord(motion.dt, np.fft.irfft(X * H, n), motion.label, motion.units)


def surface_motion(motion: MotionRecord, profile: LayeredProfile, options: SiteOptions = SiteOptions()) -> MotionRecord:
    return surface_motions([motion], profile, options)[0]


def surface_motions(motions, profile: LayeredProfile, options: SiteOptions = SiteOptions()) -> list[MotionRecord]:
    """Outcrop-to-surface propagation of several records through one column.

    The transfer function is evaluated once per distinct FFT grid.
    """
    hs = default_halfspace(profile, options)
    rho = options.density(profile.vs)
    cache = {}
    out = []
    for m in motions:
        key = (m.npts, m.dt)
        if key not in cache:
            cache[key] = transfer_function(profile, hs, options.damping, fft_grid(m), density=rho)
        out.append(propagate(m, cache[key]))
    return out


# --------------------------------------------------------------------------
# intensity measures
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ImSet:
    """Intensity measures; ``pga`` in record units, pgv m/s, pgd m, arias m/s, d5_95 s."""

    pga: float
    pgv: float
    pgd: float
    arias: float
    d5_95: float
    fas_freqs: np.ndarray
    fas: np.ndarray
    psa_periods: np.ndarray
    psa: np.ndarray
    flags: tuple = ()

    def scalar(self, name: str) -> float:
        return float(getattr(self, name))


def _baseline_integral(y, dt):
    """Cumulative trapezoid with the end-point drift removed linearly."""
    out = np.concatenate([[0.0], np.cumsum(0.5 * (y[1:] + y[:-1]) * dt)])
    return out - out[-1] * np.linspace(0.0, 1.0, out.size)


@functools.lru_cache(maxsize=4096)
def sdof_filter(period: float, damping: float, dt: float):
    """Digital filter of relative displacement of an SDOF under ground acceleration.

    Newmark average acceleration is the trapezoidal rule, i.e. the bilinear
    transform of ``-1 / (s^2 + 2 zeta w s + w^2)``.
    """
    w = 2 * math.pi / period
    return signal.bilinear([-1.0], [1.0, 2 * damping * w, w * w], fs=1.0 / dt)


def psa_newmark(acc, dt, periods, damping=0.05):
    """Pseudo-spectral acceleration ``w^2 max|u|`` (units of ``acc``).

    ``acc`` may be 2-D (records along the last axis).
    """
    acc = np.asarray(acc, dtype=float)
    out = np.empty(acc.shape[:-1] + (len(periods),))
    for i, T in enumerate(periods):
        b, a = sdof_filter(float(T), float(damping), float(dt))
        u = signal.lfilter(b, a, acc, axis=-1)
        out[..., i] = (2 * math.pi / T) ** 2 * np.max(np.abs(u), axis=-1)
    return out


def intensity_measures(motion: MotionRecord, psa_periods=DEFAULT_PERIODS, damping: float = 0.05) -> ImSet:
    return intensity_measures_many([motion], psa_periods, damping)[0]


def intensity_measures_many(motions, psa_periods=DEFAULT_PERIODS, damping: float = 0.05) -> list[ImSet]:
    """IMs of several records; equal-length records share one PSA filter pass."""
    motions = list(motions)
    periods = np.asarray(psa_periods, dtype=float)
    same = len({(m.npts, m.dt) for m in motions}) == 1
    if same and motions:
        psa_all = psa_newmark(np.stack([m.acc for m in motions]), motions[0].dt, periods, damping)
    else:
        psa_all = [psa_newmark(m.acc, m.dt, periods, damping) for m in motions]
    out = []
    for motion, psa in zip(motions, psa_all):
        a = motion.acc
        a_si = motion.acc_si
        dt = motion.dt
        vel = _baseline_integral(a_si, dt)
        disp = _baseline_integral(vel, dt)
        ramp = np.concatenate([[0.0], np.cumsum(0.5 * (a_si[1:] ** 2 + a_si[:-1] ** 2) * dt)])
        arias = math.pi / (2 * G) * ramp[-1]
        if ramp[-1] > 0:
            norm = ramp / ramp[-1]
            t = motion.time
            d595 = float(np.interp(0.95, norm, t) - np.interp(0.05, norm, t))
        else:
            d595 = 0.0
        spec = np.abs(np.fft.rfft(a)) * dt
        freqs = np.fft.rfftfreq(a.size, dt)
        flags = []
        if periods.size and 10 * periods.max() > motion.duration:
            flags.append(f"motion shorter than 10 cycles of T = {periods.max():.3g} s")
        out.append(
            ImSet(
                pga=float(np.max(np.abs(a))),
                pgv=float(np.max(np.abs(vel))),
                pgd=float(np.max(np.abs(disp))),
                arias=float(arias),
                d5_95=max(d595, 0.0),
                fas_freqs=freqs[1:],
                fas=spec[1:],
                psa_periods=periods,
                psa=np.asarray(psa, dtype=float),
                flags=tuple(flags),
            )
        )
    return out


# --------------------------------------------------------------------------
# bands and GOF
# --------------------------------------------------------------------------


def band_edges(fp: float, floor: float = BAND_FLOOR, ceil: float = BAND_CEIL) -> dict:
    """``{"low": (floor, fp), "mid": (fp, 2fp), "high": (2fp, ceil)}``; empty bands omitted."""
    edges = {"low": (floor, min(fp, ceil)), "mid": (max(fp, floor), min(2 * fp, ceil)), "high": (max(2 * fp, floor), ceil)}
    return {k: v for k, v in edges.items() if v[1] > v[0]}


def band_of(f: float, fp: float) -> str | None:
    """Band holding frequency ``f``; half-open except the top edge."""
    for name, (lo, hi) in band_edges(fp).items():
        if lo <= f < hi or (f == hi == BAND_CEIL):
            return name
    return None


def _bandpass_sos(dt: float, f_lo: float, f_hi: float, order: int):
    nyq = 0.5 / dt
    lo = f_lo if f_lo > BAND_FLOOR else None
    hi = f_hi if f_hi < nyq else None
    if lo is None and hi is None:
        return None
    if lo is not None and hi is not None:
        return signal.butter(order, [lo, hi], btype="bandpass", fs=1 / dt, output="sos")
    if lo is not None:
        return signal.butter(order, lo, btype="highpass", fs=1 / dt, output="sos")
    return signal.butter(order, hi, btype="lowpass", fs=1 / dt, output="sos")


def bandpass(motion: MotionRecord, f_lo: float, f_hi: float, order: int = 4) -> MotionRecord:
    """Zero-phase Butterworth band-pass; corners at or below 0.01 Hz are skipped."""
    sos = _bandpass_sos(motion.dt, f_lo, f_hi, order)
    return motion if sos is None else motion.with_acc(signal.sosfiltfilt(sos, motion.acc))


def bandpass_many(motions, f_lo: float, f_hi: float, order: int = 4) -> list[MotionRecord]:
    motions = list(motions)
    if len({(m.npts, m.dt) for m in motions}) != 1:
        return [bandpass(m, f_lo, f_hi, order) for m in motions]
    sos = _bandpass_sos(motions[0].dt, f_lo, f_hi, order)
    if sos is None:
        return motions
    filtered = signal.sosfiltfilt(sos, np.stack([m.acc for m in motions]), axis=-1)
    return [m.with_acc(a) for m, a in zip(motions, filtered)]


def _mean_log_ratio(x, ref, mask):
    ok = mask & (ref > 0) & (x > 0)
    if not np.any(ok):
        return None
    return float(np.mean(np.log(x[ok]) - np.log(ref[ok])))


def gof_score(ref: ImSet, model: ImSet, band: tuple) -> dict:
    """ln(model/ref) per IM, band-averaged for FAS and PSA, plus ``aggregate``.

    Positive scores mean the model over-predicts. IMs with a zero reference
    (or no grid points in the band) are left out and listed under ``excluded``.
    """
    lo, hi = band
    scores = {}
    excluded = []
    for name in ("pga", "pgv", "pgd", "arias", "d5_95"):
        r, m = ref.scalar(name), model.scalar(name)
        if r > 0 and m > 0:
            scores[name] = 0.0 if r == m else math.log(m / r)
        else:
            excluded.append(name)
    in_band = (ref.fas_freqs >= lo) & (ref.fas_freqs <= hi)
    fas = _mean_log_ratio(model.fas, ref.fas, in_band)
    f_psa = 1.0 / ref.psa_periods
    psa = _mean_log_ratio(model.psa, ref.psa, (f_psa >= lo) & (f_psa <= hi))
    for name, val in (("fas", fas), ("psa", psa)):
        if val is None:
            excluded.append(name)
        else:
            scores[name] = val
    if excluded:
        log.debug("GOF excluded %s in band %s", excluded, band)
    scores["aggregate"] = float(np.mean([scores[n] for n in IM_NAMES if n in scores])) if len(scores) else float("nan")
    scores["excluded"] = tuple(excluded)
    return scores


# --------------------------------------------------------------------------
# experiments
# --------------------------------------------------------------------------


@dataclass
class GofReport:
    """Per-profile scores and Vs30-bin aggregates."""

    rows: list = field(default_factory=list)  # (profile_id, vs30, band, im, score)
    skipped: list = field(default_factory=list)  # (profile_id, reason)
    bins: tuple = DEFAULT_VS30_BINS
    label: str = ""

    def profile_scores(self, band: str, im: str | None = None) -> dict:
        """Per-profile score in a band; the IM mean when ``im`` is None."""
        acc: dict = {}
        for pid, vs30, b, name, s in self.rows:
            if b == band and (im is None or name == im):
                acc.setdefault(pid, (vs30, []))[1].append(s)
        return {pid: (v, float(np.mean(s))) for pid, (v, s) in acc.items()}

    def band_mean(self, band: str, im: str | None = None) -> float:
        vals = [s for _, s in self.profile_scores(band, im).values()]
        return float(np.mean(vals)) if vals else float("nan")

    def aggregates(self) -> list:
        """``(bin_label, band, mean, p16, p84, n)`` of per-profile mean scores."""
        out = []
        edges = self.bins
        for band in BANDS:
            scores = self.profile_scores(band)
            for lo, hi in zip(edges[:-1], edges[1:]):
                vals = np.array([s for v, s in scores.values() if lo <= v < hi])
                label = f"{lo:g}-{hi:g}"
                if vals.size:
                    out.append((label, band, float(vals.mean()), float(np.percentile(vals, 16)), float(np.percentile(vals, 84)), int(vals.size)))
                else:
                    out.append((label, band, float("nan"), float("nan"), float("nan"), 0))
        return out

    def write(self, scores_path: str | Path, aggregate_path: str | Path) -> None:
        with open(scores_path, "w", newline="") as fh:
            fh.write(f"# GOF variant: ln(model/reference), band-averaged for fas/psa; {self.label}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["profile_id", "vs30", "band", "im", "score"])
            for pid, vs30, band, im, s in self.rows:
                w.writerow([pid, fmt6(vs30), band, im, fmt6(s)])
        with open(aggregate_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["vs30_bin", "band", "mean", "p16", "p84", "n"])
            for label, band, m, p16, p84, n in self.aggregates():
                w.writerow([label, band, fmt6(m), fmt6(p16), fmt6(p84), n])

    def summary(self) -> str:
        lines = [f"GOF summary {self.label}".rstrip()]
        for band in BANDS:
            n = len(self.profile_scores(band))
            if n:
                lines.append(f"  {band:>4} band: mean aggregate {self.band_mean(band):+.4f} over {n} profiles")
        if self.skipped:
            lines.append(f"  skipped {len(self.skipped)} profiles")
        return "\n".join(lines)


@dataclass(frozen=True)
class EvaluationOptions:
    site: SiteOptions = SiteOptions()
    psa_periods: tuple = tuple(DEFAULT_PERIODS)
    bins: tuple = DEFAULT_VS30_BINS


def _band_ims(surface: list, bands: dict, periods) -> dict:
    return {band: intensity_measures_many(bandpass_many(surface, lo, hi), periods) for band, (lo, hi) in bands.items()}


def _reference_ims(reference: LayeredProfile, ensemble: list, options: EvaluationOptions):
    fp = core.fp_quarter_wavelength(reference)
    bands = band_edges(fp)
    periods = np.asarray(options.psa_periods)
    return bands, _band_ims(surface_motions(ensemble, reference, options.site), bands, periods)


def _score_candidates(bands, ref_ims, candidates, ensemble, options):
    periods = np.asarray(options.psa_periods)
    totals: dict = {b: {} for b in bands}
    for cand in candidates:
        cand_ims = _band_ims(surface_motions(ensemble, cand, options.site), bands, periods)
        for band in bands:
            for r, c in zip(ref_ims[band], cand_ims[band]):
                sc = gof_score(r, c, bands[band])
                for im in IM_NAMES:
                    if im in sc:
                        totals[band].setdefault(im, []).append(sc[im])
    return {band: {im: float(np.mean(v)) for im, v in d.items()} for band, d in totals.items()}


def median_candidates(coeffs, field: geostat.SpatialField | None = None) -> Callable:
    """Generator of median columns on each reference's own layering.

    Vs30 is the reference's site value. With ``field`` the slope adjustment
    is the kriged mean at the reference location.
    """

    def gen(p: LayeredProfile) -> LayeredProfile:
        dbr = 0.0
        if field is not None:
            if p.lat is None or p.lon is None:
                raise ValueError(f"{p.id}: spatial candidate needs coordinates")
            x, y = field.project([p.lat], [p.lon])
            dbr = float(geostat.krige_dbr(field, x, y)[0][0])
        params = core.ProfileParams.from_vs30(p.site_vs30(), coeffs, dbr)
        return p.replace(vs=core.median_vs(p.mid_depth, params), provenance=Provenance.MODEL_MEDIAN)

    return gen


def realization_candidates(
    base: Callable,
    sill_s: float,
    range_r: float,
    count: int = 10,
    seed: int = 0,
    total_var: float | None = None,
    vs_min: float = 50.0,
) -> Callable:
    """Wrap a median generator with ``count`` depth-variability realizations.

    Streams derive from ``(seed, profile id, realization index)``.
    """
    if count < 1:
        raise ValueError("count must be at least 1")

    def gen(p: LayeredProfile) -> list:
        m = base(p)
        return [
            geostat.realize_profile(m, sill_s, range_r, geostat.derive_seed(seed, "realization", p.id, r), total_var, vs_min, r)
            for r in range(count)
        ]

    return gen


def background_candidates(background) -> Callable:
    """Generator sampling a background model (``.profile(lat, lon, thickness, id)``) on each reference's layering."""

    def gen(p: LayeredProfile) -> LayeredProfile:
        if p.lat is None or p.lon is None:
            raise ValueError(f"{p.id}: background candidate needs coordinates")
        return background.profile(p.lat, p.lon, p.thickness, id=p.id)

    return gen


def evaluate_profile(reference: LayeredProfile, candidates: list, ensemble: list, options: EvaluationOptions = EvaluationOptions()):
    """Scores ``{band: {im: score}}`` of candidate columns against a reference.

    Scores are averaged over ensemble members and over the candidates.
    """
    bands, ref_ims = _reference_ims(reference, ensemble, options)
    return _score_candidates(bands, ref_ims, candidates, ensemble, options)


def evaluate_modes(
    reference_profiles,
    generators: dict,
    ensemble: list,
    options: EvaluationOptions = EvaluationOptions(),
    executor: Executor | None = None,
) -> dict:
    """One GofReport per named candidate generator, sharing the reference runs.

    ``generators[mode](profile)`` returns a LayeredProfile or a list of them
    (realizations, whose scores are averaged). A failing generator or
    site-response run skips that profile in that mode and records the reason.
    Rows follow the input profile order whatever the executor.
    """
    refs = list(reference_profiles)

    def task(p):
        try:
            bands, ref_ims = _reference_ims(p, ensemble, options)
        except (ValueError, ArithmeticError) as exc:
            return {mode: (None, str(exc)) for mode in generators}
        out = {}
        for mode, gen in generators.items():
            try:
                cands = gen(p)
                if isinstance(cands, LayeredProfile):
                    cands = [cands]
                out[mode] = (_score_candidates(bands, ref_ims, list(cands), ensemble, options), None)
            except (ValueError, ArithmeticError) as exc:
                out[mode] = (None, str(exc))
        return out

    results = list(executor.map(task, refs)) if executor is not None else [task(p) for p in refs]
    reports = {mode: GofReport(bins=options.bins, label=mode) for mode in generators}
    for p, res in zip(refs, results):
        vs30 = p.site_vs30()
        for mode, (scores, err) in res.items():
            report = reports[mode]
            if scores is None:
                log.warning("profile %s skipped in %s mode: %s", p.id, mode, err)
                report.skipped.append((p.id, err))
                continue
            for band in BANDS:
                for im in IM_NAMES:
                    if im in scores.get(band, {}):
                        report.rows.append((p.id, vs30, band, im, scores[band][im]))
    return reports


def evaluate_models(
    reference_profiles,
    candidate_generator: Callable,
    ensemble: list,
    options: EvaluationOptions = EvaluationOptions(),
    executor: Executor | None = None,
    label: str = "",
) -> GofReport:
    """Run every reference profile and its candidates through the ensemble."""
    return evaluate_modes(reference_profiles, {label: candidate_generator}, ensemble, options, executor)[label]
