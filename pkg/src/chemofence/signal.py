"""Nest signal: attenuation, sensor noise, averaging filter and calibration.

Intensities are raw, unit-less microphone readings; nothing here converts to
decibels.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import RngStream

A0_DEFAULT = 140.5193
ALPHA_DEFAULT = 0.1193
AE_DEFAULT = 48.1824
SIGMA_REL_DEFAULT = 0.06


@dataclass(frozen=True)
class SignalModel:
    A0: float = A0_DEFAULT
    alpha: float = ALPHA_DEFAULT
    Ae: float = AE_DEFAULT
    sigma_rel: float = SIGMA_REL_DEFAULT

    def __post_init__(self):
        if not (self.A0 > 0 and self.alpha > 0 and self.Ae >= 0 and self.sigma_rel >= 0):
            raise ValueError(f"invalid signal model {self}")

    @classmethod
    def from_dict(cls, d: dict | None) -> SignalModel:
        if not d:
            return cls()
        unknown = set(d) - {"A0", "alpha", "Ae", "sigma_rel"}
        if unknown:
            raise ValueError(f"unknown signal keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})

    def to_dict(self) -> dict:
        return {"A0": self.A0, "alpha": self.alpha, "Ae": self.Ae, "sigma_rel": self.sigma_rel}


def attenuated_intensity(model: SignalModel, d: float) -> float:
    """Mean intensity ``d`` metres from the source: ``A0 exp(-alpha d) + Ae``."""
    if d < 0:
        raise ValueError("distance must be non-negative")
    return model.A0 * math.exp(-model.alpha * d) + model.Ae


def noisy_sample(model: SignalModel, d: float, rng: RngStream) -> float:
    """One sensor reading: ``A(d) * (1 - N(0, sigma_rel))``."""
    a = attenuated_intensity(model, d)
    return a * (1.0 - model.sigma_rel * rng.standard_normal())


def threshold_for_distance(model: SignalModel, d_c: float) -> float:
    """Chemotaxis activation intensity for activation distance ``d_c``."""
    return attenuated_intensity(model, d_c)


def distance_for_intensity(model: SignalModel, A: float) -> float:
    """Invert the attenuation curve.

    Raises ValueError at or below the ambient floor (no finite distance) and
    above ``A0 + Ae`` (the distance would be negative).
    """
    excess = A - model.Ae
    if excess <= 0:
        raise ValueError(f"intensity {A} is at or below the ambient floor {model.Ae}")
    if excess > model.A0:
        if A - (model.A0 + model.Ae) <= 1e-12 * (model.A0 + model.Ae):
            return 0.0
        raise ValueError(f"intensity {A} exceeds the source intensity {model.A0 + model.Ae}")
    return -math.log(excess / model.A0) / model.alpha


class FilterWindow:
    """Moving average over the last ``n`` raw samples.

    Keeps a ring buffer and a running sum.  Before ``n`` samples have arrived
    the mean is taken over whatever is stored.
    """

    __slots__ = ("n", "buf", "count", "idx", "total")

    def __init__(self, n: int):
        if n < 1:
            raise ValueError("window length must be >= 1")
        self.n = n
        self.buf = [0.0] * n
        self.count = 0
        self.idx = 0
        self.total = 0.0

    def push(self, x: float) -> None:
        if self.count == self.n:
            self.total -= self.buf[self.idx]
        else:
            self.count += 1
        self.buf[self.idx] = x
        self.total += x
        self.idx = (self.idx + 1) % self.n

    def samples(self) -> list[float]:
        """Stored samples, oldest first."""
        if self.count < self.n:
            return self.buf[: self.count]
        return self.buf[self.idx:] + self.buf[: self.idx]

    def __len__(self) -> int:
        return self.count

    def copy(self) -> FilterWindow:
        w = FilterWindow(self.n)
        w.buf = list(self.buf)
        w.count, w.idx, w.total = self.count, self.idx, self.total
        return w


def filtered_intensity(window: FilterWindow) -> float:
    if window.count == 0:
        raise ValueError("filter window is empty")
    return window.total / window.count


# --------------------------------------------------------------------------
# calibration


@dataclass
class CalibrationData:
    distance: np.ndarray
    intensity: np.ndarray

    def __post_init__(self):
        self.distance = np.asarray(self.distance, dtype=float)
        self.intensity = np.asarray(self.intensity, dtype=float)
        if self.distance.shape != self.intensity.shape or self.distance.ndim != 1:
            raise ValueError("distance and intensity must be 1-d arrays of equal length")
        if np.any(self.distance < 0):
            raise ValueError("distances must be non-negative")
        if not (np.all(np.isfinite(self.distance)) and np.all(np.isfinite(self.intensity))):
            raise ValueError("calibration data must be finite")

    def __len__(self):
        return len(self.distance)

    @classmethod
    def from_csv(cls, path) -> CalibrationData:
        d, a = [], []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or {"distance_m", "intensity"} - set(reader.fieldnames):
                raise ValueError("calibration CSV needs columns distance_m,intensity")
            for row in reader:
                d.append(float(row["distance_m"]))
                a.append(float(row["intensity"]))
        return cls(np.array(d), np.array(a))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["distance_m", "intensity"])
            for d, a in zip(self.distance, self.intensity):
                w.writerow([repr(float(d)), repr(float(a))])


def synthetic_traces(model: SignalModel, rng: RngStream, *, traces: int = 5,
                     start: float = 15.0, speed: float = 0.1, rate_hz: float = 10.0) -> CalibrationData:
    """Logged runs of a robot driving straight at the source.

    Mimics the calibration drive: ``traces`` runs from ``start`` metres to the
    source at ``speed`` m/s, sampled at ``rate_hz``, all overlaid.
    """
    n = int(round(start / speed * rate_hz)) + 1
    dist, vals = [], []
    for _ in range(traces):
        for k in range(n):
            d = max(start - k * speed / rate_hz, 0.0)
            dist.append(d)
            vals.append(noisy_sample(model, d, rng))
    return CalibrationData(np.array(dist), np.array(vals))


@dataclass
class FitResult:
    model: SignalModel
    converged: bool
    iterations: int
    residual_norm: float
    identifiable: bool = True
    message: str = ""

    def summary(self) -> dict:
        return {
            "A0": self.model.A0,
            "alpha": self.model.alpha,
            "Ae": self.model.Ae,
            "residual_norm": self.residual_norm,
            "converged": self.converged,
            "identifiable": self.identifiable,
            "iterations": self.iterations,
        }


def _residuals(p: np.ndarray, d: np.ndarray, y: np.ndarray) -> np.ndarray:
    return p[0] * np.exp(-p[1] * d) + p[2] - y


def _jacobian(p: np.ndarray, d: np.ndarray) -> np.ndarray:
    e = np.exp(-p[1] * d)
    return np.column_stack([e, -p[0] * d * e, np.ones_like(d)])


def fit_attenuation(data: CalibrationData, *, x0=None, max_iter: int = 500,
                    xtol: float = 1e-13, gtol: float = 1e-13,
                    sigma_rel: float = SIGMA_REL_DEFAULT) -> FitResult:
    """Least-squares fit of ``A0 exp(-alpha d) + Ae`` by Levenberg-Marquardt.

    Uses the analytic Jacobian and Marquardt's diagonal scaling. The default
    start is ``Ae = min(y)``, ``A0 = max(y) - min(y)``, ``alpha = 0.1``.

    A fit that does not converge within ``max_iter`` returns the best
    parameters seen with ``converged=False``.  A fit whose curvature matrix is
    singular at the solution, or whose amplitude or decay collapses to zero,
    is flagged ``identifiable=False``.
    """
    d, y = data.distance, data.intensity
    if len(d) < 3:
        raise ValueError("need at least 3 samples")
    if np.unique(d).size < 2:
        raise ValueError("need at least 2 distinct distances")

    if x0 is None:
        p = np.array([y.max() - y.min(), 0.1, y.min()], dtype=float)
    else:
        p = np.array(x0, dtype=float)
    r = _residuals(p, d, y)
    cost = float(r @ r)
    lam = 1e-3
    converged = False
    it = 0
    msg = "max iterations reached"
    for it in range(1, max_iter + 1):
        J = _jacobian(p, d)
        g = J.T @ r
        if np.max(np.abs(g)) <= gtol * max(1.0, cost):
            converged, msg = True, "gradient tolerance"
            break
        H = J.T @ J
        diag = np.diag(H).copy()
        diag[diag == 0] = 1.0
        improved = False
        while lam < 1e16:
            try:
                step = np.linalg.solve(H + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            p_new = p + step
            r_new = _residuals(p_new, d, y)
            cost_new = float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new <= cost:
                improved = True
                break
            lam *= 10
        if not improved:
            converged, msg = cost <= 1e-20 * max(1.0, float(y @ y)), "no further decrease"
            break
        rel_step = np.linalg.norm(step) / (np.linalg.norm(p) + xtol)
        p, r = p_new, r_new
        dcost = cost - cost_new
        cost = cost_new
        lam = max(lam / 10, 1e-12)
        if rel_step <= xtol or dcost <= 1e-15 * max(cost, 1e-300):
            converged, msg = True, "step tolerance"
            break

    H = _jacobian(p, d).T @ _jacobian(p, d)
    identifiable = bool(
        abs(p[0]) > 1e-9 * max(1.0, float(np.abs(y).max()))
        and p[1] > 1e-9
        and np.linalg.cond(H) < 1e14
    )
    if not identifiable:
        msg += "; model parameters not identifiable from these data"
    try:
        model = SignalModel(p[0], p[1], p[2], sigma_rel)
    except ValueError:
        # the exponential collapsed; report raw numbers without validation
        model = object.__new__(SignalModel)
        for k, v in zip(("A0", "alpha", "Ae", "sigma_rel"), (*p, sigma_rel)):
            object.__setattr__(model, k, float(v))
        identifiable = False
    return FitResult(model, converged, it, math.sqrt(cost), identifiable, msg)


@dataclass
class SegmentStats:
    start: float
    end: float
    count: int
    slope: float
    intercept: float
    raw_mean: float
    line_mean: float
    std: float
    ratio: float


@dataclass
class NoiseAnalysis:
    segments: list[SegmentStats]
    pooled_ratio: float
    skipped: list[tuple[float, float, int]] = field(default_factory=list)
    mean_basis: str = "fitted_line"

    def to_rows(self) -> list[dict]:
        return [s.__dict__.copy() for s in self.segments]


def noise_ratio_analysis(data: CalibrationData, segment_len: float = 1.0) -> NoiseAnalysis:
    """Per-segment noise level relative to the local mean.

    Splits the distance axis into ``[k L, (k+1) L)`` bins, fits a straight
    line to each bin, and reports the residual standard deviation (``n - 2``
    degrees of freedom) divided by the line's mean over the bin (its value at
    the bin midpoint).  Bins with fewer than 2 samples are skipped with a
    warning.  The pooled ratio is the plain mean of per-bin ratios.
    """
    if not segment_len > 0:
        raise ValueError("segment_len must be > 0")
    d, y = data.distance, data.intensity
    if len(d) == 0:
        raise ValueError("no data")
    bins = np.floor(d / segment_len).astype(np.int64)
    segments, skipped = [], []
    for b in range(int(bins.min()), int(bins.max()) + 1):
        sel = bins == b
        lo, hi = b * segment_len, (b + 1) * segment_len
        k = int(sel.sum())
        if k < 2 or np.unique(d[sel]).size < 2:
            if k:
                skipped.append((lo, hi, k))
            continue
        x, v = d[sel], y[sel]
        slope, intercept = np.polyfit(x, v, 1)
        resid = v - (slope * x + intercept)
        dof = k - 2
        std = float(math.sqrt(resid @ resid / dof)) if dof > 0 else 0.0
        line_mean = float(slope * (lo + hi) / 2 + intercept)
        segments.append(SegmentStats(lo, hi, k, float(slope), float(intercept),
                                     float(v.mean()), line_mean, std, std / line_mean))
    if skipped:
        warnings.warn(f"skipped {len(skipped)} segment(s) with fewer than 2 distinct samples",
                      stacklevel=2)
    if not segments:
        raise ValueError("no segment has enough samples")
    pooled = float(np.mean([s.ratio for s in segments]))
    return NoiseAnalysis(segments, pooled, skipped)
