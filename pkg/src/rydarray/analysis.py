"""Damped-Rabi fits, beam-profile reconstruction and collective-scaling ratios."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .dynamics import TimeSeries, rabi_trace
from .lattice import TrapArray, site_position


class FitError(RuntimeError):
    """Fit could not be set up or did not converge; ``diagnostics`` says why."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class IllConditionedFitError(FitError):
    pass


@dataclass
class RabiFit:
    rabi: float
    damping: float
    amplitude: float
    offset: float
    residual_rms: float
    std_errors: dict = field(default_factory=dict)
    n_points: int = 0

    @property
    def params(self):
        return {"rabi": self.rabi, "damping": self.damping, "amplitude": self.amplitude, "offset": self.offset}

    def as_dict(self):
        return {"params": self.params, "std_errors": self.std_errors, "residual_rms": self.residual_rms, "n_points": self.n_points}

    def model(self, times, decay_fraction=0.5):
        return self.offset + self.amplitude * rabi_trace(times, self.rabi, self.damping, decay_fraction=decay_fraction)


@dataclass
class BeamFit:
    center: tuple
    waist: float
    rabi_max: float
    residual_rms: float
    std_errors: dict = field(default_factory=dict)
    waist_lower_bound: float | None = None

    @property
    def waist_is_lower_bound(self):
        return self.waist_lower_bound is not None

    def as_dict(self):
        return {
            "params": {"center_x": self.center[0], "center_y": self.center[1], "waist": self.waist, "rabi_max": self.rabi_max},
            "std_errors": self.std_errors,
            "residual_rms": self.residual_rms,
            "waist_lower_bound": self.waist_lower_bound,
        }


_LM_OPTIONS = dict(method="lm", diff_step=1e-6, ftol=1e-10, xtol=1e-10, gtol=1e-10)


def _std_errors(res, n_points):
    J = res.jac
    dof = max(1, n_points - J.shape[1])
    s2 = 2.0 * res.cost / dof
    cov = np.linalg.pinv(J.T @ J) * s2
    return np.sqrt(np.clip(np.diag(cov), 0.0, None))


def dominant_frequency(times, values, pad_factor=16):
    """Peak of the zero-padded spectrum of ``values`` (uniform sampling), with a peak-to-floor ratio."""
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float) - np.mean(values)
    dt = np.median(np.diff(t))
    n = len(y)
    nfft = int(2 ** math.ceil(math.log2(n * pad_factor)))
    power = np.abs(np.fft.rfft(y * np.hanning(n), nfft)) ** 2
    freqs = np.fft.rfftfreq(nfft, dt)
    # ignore the DC lobe of the window
    lo = max(1, int(math.ceil(nfft / n)))
    k = lo + int(np.argmax(power[lo:]))
    floor = np.median(power[lo:]) + 1e-300
    return float(freqs[k]), float(power[k] / floor)


def fit_rabi(series, observable="p_site_0", decay_fraction=0.5, min_peak_ratio=10.0) -> RabiFit:
    """Least-squares fit of ``offset + amplitude * P_r(t; rabi, damping)``.

    ``series`` is a :class:`TimeSeries` (``observable`` picks the column) or a
    ``(times, values)`` pair.  The model is the damped single-atom master
    equation; the frequency starts from the spectral peak, amplitude and
    offset from the trace extrema.
    """
    if isinstance(series, TimeSeries):
        t, y = series.times, np.asarray(series[observable], dtype=float)
    else:
        t, y = (np.asarray(a, dtype=float) for a in series)
    if len(t) < 8:
        raise FitError("need at least 8 time points", {"n_points": len(t)})
    f0, ratio = dominant_frequency(t, y)
    span = t[-1] - t[0]
    diag = {"guess_rabi": f0, "peak_to_floor": ratio, "span_us": span}
    if ratio < min_peak_ratio or f0 <= 0:
        raise FitError("no spectral peak above the noise floor", diag)
    if span * f0 < 1.0 - 1e-9:
        raise FitError("trace spans less than one oscillation period", diag)

    def resid(p):
        return p[3] + p[2] * rabi_trace(t, abs(p[0]), abs(p[1]), decay_fraction=decay_fraction) - y

    amp0 = float(np.max(y) - np.min(y))
    best = None
    for g0 in (0.05, 0.5):
        res = least_squares(resid, [f0, g0, amp0, float(np.min(y))], max_nfev=200 * 5, **_LM_OPTIONS)
        if best is None or res.cost < best.cost:
            best = res
    if best.status <= 0:
        raise FitError("least squares did not converge", {**diag, "message": best.message})
    err = _std_errors(best, len(t))
    p = best.x
    return RabiFit(
        rabi=abs(p[0]),
        damping=abs(p[1]),
        amplitude=p[2],
        offset=p[3],
        residual_rms=float(np.sqrt(np.mean(best.fun**2))),
        std_errors=dict(zip(("rabi", "damping", "amplitude", "offset"), map(float, err))),
        n_points=len(t),
    )


def fit_beam_profile(site_rabi: dict, array: TrapArray) -> BeamFit:
    """Fit Omega^2(r) = Omega_max^2 exp(-2 |r - c|^2 / w^2) over site positions.

    The fit runs in the curvature ``q = 1/w^2``; when ``q`` is not
    significantly positive the waist is unresolved, ``waist`` is inf and
    ``waist_lower_bound`` holds the 2-sigma bound.
    """
    items = [(s, v) for s, v in site_rabi.items() if np.isfinite(v)]
    if len(items) < 6:
        raise FitError("need at least 6 sites with finite Rabi frequency", {"n_sites": len(items)})
    xy = np.array([site_position(array, s) for s, _ in items])
    om2 = np.array([v for _, v in items]) ** 2
    centred = xy - xy.mean(axis=0)
    if np.linalg.matrix_rank(centred, tol=1e-9 * array.pitch) < 2:
        raise IllConditionedFitError("site geometry is collinear; beam centre is unresolvable")
    extent = float(np.max(np.linalg.norm(centred, axis=1)))

    wts = om2 / om2.sum()
    c0 = wts @ xy
    q0 = 1.0 / max(extent, array.pitch) ** 2

    def resid(p):
        d2 = np.sum((xy - p[:2]) ** 2, axis=1)
        return p[3] ** 2 * np.exp(-2.0 * p[2] * d2) - om2

    res = least_squares(resid, [c0[0], c0[1], q0, math.sqrt(om2.max())], max_nfev=2000, **_LM_OPTIONS)
    err = _std_errors(res, len(om2))
    cx, cy, q, a = res.x
    a = abs(a)
    rms = float(np.sqrt(np.mean(res.fun**2)))
    lower = None
    # below this curvature Omega^2 varies by < 0.1 % across the sampled sites
    q_min = 5e-4 / extent**2
    if q - 2 * err[2] <= 0 or q < q_min:
        waist = math.inf
        lower = 1.0 / math.sqrt(max(q + 2 * err[2], q_min))
        w_err = math.inf
    else:
        waist = 1.0 / math.sqrt(q)
        w_err = 0.5 * err[2] / q**1.5
    return BeamFit(
        center=(float(cx), float(cy)),
        waist=waist,
        rabi_max=float(a),
        residual_rms=rms,
        std_errors={"center_x": float(err[0]), "center_y": float(err[1]), "waist": float(w_err), "rabi_max": float(err[3])},
        waist_lower_bound=lower,
    )


def beam_rabi(xy, center, waist, rabi_max):
    """Rabi frequency of a Gaussian beam (Omega ~ sqrt(I)) at point(s) ``xy``."""
    d2 = np.sum((np.atleast_2d(xy) - np.asarray(center)) ** 2, axis=1)
    return rabi_max * np.exp(-d2 / waist**2)


def collective_scaling(fits) -> list:
    """Ratios Omega_N / (sqrt(N) Omega_1) with propagated standard errors.

    ``fits`` is a sequence of ``(N, RabiFit)``; the first N=1 entry is the
    baseline.
    """
    base = next((f for n, f in fits if n == 1), None)
    if base is None:
        raise ValueError("collective scaling needs an N=1 baseline fit")
    s1 = base.std_errors.get("rabi", 0.0) / base.rabi if base.rabi else math.inf
    out = []
    for n, f in fits:
        ratio = f.rabi / (math.sqrt(n) * base.rabi)
        if f is base:
            unc = 0.0
        else:
            sn = f.std_errors.get("rabi", 0.0) / f.rabi if f.rabi else math.inf
            unc = ratio * math.hypot(sn, s1)
        out.append({"N": n, "rabi": f.rabi, "damping": f.damping, "ratio": ratio, "ratio_std": unc})
    return out
