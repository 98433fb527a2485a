"""Relative L2 error, radial power spectra and the spectral error ``E_s``."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, UndefinedMetric
from .fields import Boundary, Field, sine_forward

__all__ = [
    "rel_l2",
    "RadialSpectrum",
    "radial_power_spectrum",
    "SpectralBin",
    "SpectralErrorReport",
    "spectral_error",
    "LOG_FLOOR",
]

LOG_FLOOR = 1e-12


def _values(f) -> np.ndarray:
    return f.values if isinstance(f, Field) else np.asarray(f, dtype=np.float64)


def rel_l2(pred, truth) -> float:
    """``|pred - truth| / |truth|`` (grid weights cancel).

    Raises
    ------
    UndefinedMetric
        If ``truth`` is identically zero.
    """
    if isinstance(pred, Field) and isinstance(truth, Field) and pred.grid != truth.grid:
        raise InvalidArgument(f"grid mismatch: {pred.grid} vs {truth.grid}")
    p, t = _values(pred), _values(truth)
    if p.shape != t.shape:
        raise InvalidArgument(f"shape mismatch: {p.shape} vs {t.shape}")
    nt = np.linalg.norm(t)
    if nt == 0:
        raise UndefinedMetric("relative error is undefined for a zero reference field")
    return float(np.linalg.norm(p - t) / nt)


@dataclass(frozen=True, eq=False)
class RadialSpectrum:
    """Annulus-averaged power: ``power[b]`` is the mean modal power in bin ``b``.

    ``sum(power * counts)`` equals the squared grid norm of the field.
    """

    k: np.ndarray
    power: np.ndarray
    counts: np.ndarray
    edges: np.ndarray

    def __iter__(self):
        return iter(zip(self.k.tolist(), self.power.tolist()))

    def __len__(self):
        return self.k.size

    def total_power(self) -> float:
        return float(np.sum(self.power * self.counts))


def _modal_power(f: Field) -> tuple[np.ndarray, np.ndarray]:
    """Per-mode power and wavenumber magnitude, normalised so power sums to ``h^2 sum f^2``."""
    R = f.grid.resolution
    if f.grid.boundary is Boundary.DIRICHLET:
        # sine modes are the odd-periodic Fourier modes of the field
        c = sine_forward(f).coeffs
        m = np.arange(1, R + 1)
        kk = np.hypot(m[None, :], m[:, None])
        return c**2, kk
    F = np.fft.fft2(f.values, norm="ortho")
    freq = np.fft.fftfreq(R, d=1.0 / R)
    kk = np.hypot(freq[None, :], freq[:, None])
    return f.grid.h**2 * np.abs(F) ** 2, kk


def radial_power_spectrum(f: Field, n_bins: int | None = None) -> RadialSpectrum:
    """Bin modal power by ``|k| = sqrt(m^2 + n^2)`` on linear edges from 1 to the largest radius.

    Wavenumbers below 1 (the periodic mean) fall in the first bin.
    """
    if n_bins is None:
        n_bins = max(1, f.grid.resolution // 2)
    if isinstance(n_bins, bool) or int(n_bins) != n_bins or n_bins < 1:
        raise InvalidArgument(f"n_bins must be a positive integer, got {n_bins!r}")
    n_bins = int(n_bins)
    power, kk = _modal_power(f)
    kmax = float(kk.max())
    edges = np.linspace(1.0, max(kmax, 1.0 + 1e-12), n_bins + 1)
    idx = np.clip(np.searchsorted(edges, kk.ravel(), side="right") - 1, 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins).astype(np.int64)
    sums = np.bincount(idx, weights=power.ravel(), minlength=n_bins)
    P = np.divide(sums, counts, out=np.zeros(n_bins), where=counts > 0)
    centers = 0.5 * (edges[:-1] + edges[1:])
    return RadialSpectrum(k=centers, power=P, counts=counts, edges=edges)


@dataclass(frozen=True)
class SpectralBin:
    k: float
    P_pred: float
    P_true: float
    rel_err: float


@dataclass(frozen=True)
class SpectralErrorReport:
    bins: tuple
    E_s: float
    excluded: int

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "P_pred", "P_true", "rel_err"])
        for b in self.bins:
            w.writerow([repr(b.k), repr(b.P_pred), repr(b.P_true), repr(b.rel_err)])
        return buf.getvalue()


def spectral_error(pred: Field, truth: Field, n_bins: int | None = None) -> SpectralErrorReport:
    """Geometric mean over bins of ``|P_pred - P_true| / P_true``.

    Bins with zero reference power are dropped (and counted in
    ``excluded``); each relative error is floored at ``1e-12`` inside the log.
    """
    if pred.grid != truth.grid:
        raise InvalidArgument(f"grid mismatch: {pred.grid} vs {truth.grid}")
    sp = radial_power_spectrum(pred, n_bins)
    st = radial_power_spectrum(truth, n_bins)
    keep = st.power > 0
    if not np.any(keep):
        raise UndefinedMetric("reference spectrum is empty in every bin")
    bins = []
    logs = []
    for k, pp, pt in zip(sp.k[keep], sp.power[keep], st.power[keep]):
        rel = abs(pp - pt) / pt
        bins.append(SpectralBin(float(k), float(pp), float(pt), float(rel)))
        logs.append(np.log(max(rel, LOG_FLOOR)))
    return SpectralErrorReport(bins=tuple(bins), E_s=float(np.exp(np.mean(logs))), excluded=int(np.count_nonzero(~keep)))
