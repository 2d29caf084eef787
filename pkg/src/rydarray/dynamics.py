"""Effective two-level ground/Rydberg dynamics of small atom clusters.

All energies are frequencies E/h in MHz and all times are in us, so the
Hamiltonian enters the equations of motion as ``-2*pi*i*[H, rho]``.  Rates
(damping, decay) are plain inverse microseconds.

Basis states are integers whose bits mark Rydberg excitations, atom 0 being
the most significant bit, which matches ``np.kron`` ordering.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .lattice import LatticeError, fold_angle, pair_geometry

TWO_PI = 2.0 * math.pi

# Interaction calibrations; angular factors are dimensionless scale factors
# keyed by the folded angle to the quantization axis.
C6_57D = 0.075 * (7.0 * math.sqrt(2.0)) ** 6  # 75 kHz across the 9.9 um diagonal
C6_87D = 24.0 * 7.0**6  # 24 MHz between 7.0 um neighbours
ANISOTROPY_87D = ((0.0, 1.0), (math.pi / 4, 5.0 / 3.0), (math.pi / 2, 1.0))


class StepSizeError(ValueError):
    pass


class CapacityError(ValueError):
    pass


@dataclass(frozen=True)
class ExcitationParams:
    """Effective two-photon drive.

    ``damping`` is the phenomenological rate gamma (1/us) at which Rabi
    oscillations decay under strong resonant drive.  A fraction
    ``decay_fraction`` of it is carried by r -> g decay, the rest by pure
    dephasing.  ``scattering_rate`` is the intermediate-state scattering rate
    that noisy simulations add on top of ``damping``.
    """

    rabi: float
    two_photon_detuning: float = 0.0
    damping: float = 0.0
    intermediate_detuning: float = 410.0
    scattering_rate: float = 0.08
    decay_fraction: float = 0.5

    def __post_init__(self):
        if self.rabi < 0:
            raise ValueError("rabi must be non-negative")
        if self.damping < 0 or self.scattering_rate < 0:
            raise ValueError("rates must be non-negative")
        if self.intermediate_detuning == 0:
            raise ValueError("intermediate_detuning must be non-zero")
        if not 0.0 <= self.decay_fraction <= 1.0:
            raise ValueError("decay_fraction must lie in [0, 1]")

    def channel_rates(self):
        """(population decay rate, coherence dephasing rate) realising ``damping``."""
        g = self.damping
        return 4.0 / 3.0 * self.decay_fraction * g, 2.0 * (1.0 - self.decay_fraction) * g


@dataclass(frozen=True)
class InteractionModel:
    """Van der Waals pair interaction -c6 * f(theta) / R**6.

    ``perfect_blockade`` replaces the finite interaction by an infinite one:
    states with two or more excitations are decoupled from the drive.
    """

    c6: float = 0.0
    angular_factors: tuple = ((0.0, 1.0),)
    quantization_axis: tuple = (1.0, 0.0)
    perfect_blockade: bool = False

    def __post_init__(self):
        if self.c6 < 0:
            raise ValueError("c6 must be non-negative")
        factors = self.angular_factors
        if isinstance(factors, dict):
            factors = tuple(sorted(factors.items()))
        factors = tuple((float(a), float(f)) for a, f in factors)
        if not factors or any(f < 0 for _, f in factors):
            raise ValueError("angular factors must be non-empty and non-negative")
        object.__setattr__(self, "angular_factors", factors)
        object.__setattr__(self, "quantization_axis", tuple(float(x) for x in self.quantization_axis))

    def angular_factor(self, theta):
        t = fold_angle(theta)
        return min(self.angular_factors, key=lambda af: (abs(fold_angle(af[0]) - t), af[0]))[1]


def interaction_57d(**kw) -> InteractionModel:
    return InteractionModel(c6=C6_57D, **kw)


def interaction_87d(anisotropic=False, **kw) -> InteractionModel:
    if anisotropic:
        kw.setdefault("angular_factors", ANISOTROPY_87D)
    return InteractionModel(c6=C6_87D, **kw)


def pair_interaction(r_a, r_b, model: InteractionModel) -> float:
    """Signed pair shift dE/h in MHz."""
    R, theta = pair_geometry(r_a, r_b, model.quantization_axis)
    return -model.c6 * model.angular_factor(theta) / R**6


def blockade_radius(c6_eff, rabi) -> float:
    """R_b = (C6 / Omega)^(1/6) with both quantities as frequencies."""
    if not (c6_eff > 0 and rabi > 0):
        raise ValueError("blockade radius needs positive c6_eff and rabi")
    return (c6_eff / rabi) ** (1.0 / 6.0)


@dataclass(frozen=True)
class ClusterDynamicsSpec:
    positions: tuple
    params: ExcitationParams
    interaction: InteractionModel = field(default_factory=InteractionModel)
    per_atom_rabi: tuple | None = None
    per_atom_detuning: tuple | None = None
    max_atoms: int = 12

    def __post_init__(self):
        pos = tuple(tuple(float(x) for x in p) for p in self.positions)
        object.__setattr__(self, "positions", pos)
        if len(pos) < 1:
            raise ValueError("cluster needs at least one atom")
        if len(set(pos)) != len(pos):
            raise LatticeError("cluster positions must be distinct")
        for name in ("per_atom_rabi", "per_atom_detuning"):
            v = getattr(self, name)
            if v is not None:
                v = tuple(float(x) for x in v)
                if len(v) != len(pos):
                    raise ValueError(f"{name} needs one entry per atom")
                object.__setattr__(self, name, v)

    @property
    def n_atoms(self):
        return len(self.positions)

    def rabi_values(self):
        if self.per_atom_rabi is not None:
            return np.array(self.per_atom_rabi)
        return np.full(self.n_atoms, self.params.rabi)

    def detunings(self):
        base = np.full(self.n_atoms, self.params.two_photon_detuning)
        if self.per_atom_detuning is not None:
            base = base + np.array(self.per_atom_detuning)
        return base

    def interaction_matrix(self):
        """Symmetric matrix of V_ij in MHz (zero diagonal)."""
        n = self.n_atoms
        V = np.zeros((n, n))
        if self.interaction.c6 == 0:
            return V
        for i in range(n):
            for j in range(i + 1, n):
                V[i, j] = V[j, i] = pair_interaction(self.positions[i], self.positions[j], self.interaction)
        return V

    def max_rate(self):
        """Largest frequency scale entering the step-size guard."""
        scales = [np.max(np.abs(self.rabi_values())), np.max(np.abs(self.detunings()))]
        if not self.interaction.perfect_blockade:
            scales.append(np.max(np.abs(self.interaction_matrix())))
        return float(max(scales))


def basis_bits(n):
    """(2**n, n) array: entry [b, i] is 1 when atom i is excited in state b."""
    b = np.arange(2**n)[:, None]
    return ((b >> (n - 1 - np.arange(n))[None, :]) & 1).astype(np.int8)


def build_hamiltonian(spec: ClusterDynamicsSpec) -> np.ndarray:
    """Dense H/h in MHz on the 2**N product basis."""
    n = spec.n_atoms
    if n > spec.max_atoms:
        raise CapacityError(f"{n} atoms exceeds the configured maximum of {spec.max_atoms}")
    bits = basis_bits(n)
    d = 2**n
    rabi = spec.rabi_values()
    delta = spec.detunings()
    H = np.zeros((d, d), dtype=complex)
    diag = -(bits @ delta)
    if not spec.interaction.perfect_blockade:
        V = spec.interaction_matrix()
        diag = diag + 0.5 * np.einsum("bi,ij,bj->b", bits, V, bits)
    H[np.arange(d), np.arange(d)] = diag
    exc = bits.sum(axis=1)
    states = np.arange(d)
    for i in range(n):
        flipped = states ^ (1 << (n - 1 - i))
        H[states, flipped] += rabi[i] / 2
    if spec.interaction.perfect_blockade:
        multi = exc >= 2
        H[np.ix_(multi, ~multi)] = 0
        H[np.ix_(~multi, multi)] = 0
    return H


class _Lindblad:
    """Right-hand side of the master equation, with dissipators applied elementwise."""

    def __init__(self, spec: ClusterDynamicsSpec):
        n = spec.n_atoms
        self.n = n
        self.d = 2**n
        self.H = build_hamiltonian(spec)
        bits = basis_bits(n).astype(float)
        g_decay, g_phi = spec.params.channel_rates()
        self.g_decay = g_decay
        self.dissipative = g_decay > 0 or g_phi > 0
        # dephasing with L = sqrt(2*g_phi) n_i damps each flipped-bit coherence at g_phi
        kappa = 2.0 * g_phi
        ba, bb = bits[:, None, :], bits[None, :, :]
        self.mask = (kappa * (ba * bb - 0.5 * (ba + bb)) - 0.5 * g_decay * (ba + bb)).sum(axis=2)
        states = np.arange(self.d)
        self.jumps = []
        for i in range(n):
            m = 1 << (n - 1 - i)
            lo = states[(states & m) == 0]
            self.jumps.append((np.ix_(lo, lo), np.ix_(lo | m, lo | m)))
        self.A = -1j * TWO_PI * self.H

    def __call__(self, rho):
        out = self.A @ rho + rho @ self.A.conj().T
        if self.dissipative:
            out = out + rho * self.mask
            if self.g_decay > 0:
                for dst, src in self.jumps:
                    out[dst] += self.g_decay * rho[src]
        return out

    def superoperator(self):
        """Matrix of the right-hand side acting on row-major vec(rho)."""
        d = self.d
        L = np.empty((d * d, d * d), dtype=complex)
        e = np.zeros((d, d), dtype=complex)
        for k in range(d * d):
            e.flat[k] = 1.0
            L[:, k] = self(e).ravel()
            e.flat[k] = 0.0
        return L


def _rk4_polynomial(M, h):
    """One classical RK4 step for the linear system x' = M x, as a matrix."""
    hM = h * M
    I = np.eye(M.shape[0], dtype=complex)
    return I + hM @ (I + hM @ (I / 2 + hM @ (I / 6 + hM / 24)))


@dataclass
class TimeSeries:
    """Sampled observables: per-site Rydberg probability and P(k excitations)."""

    times: np.ndarray
    site_probs: np.ndarray
    k_probs: np.ndarray
    states: list | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_atoms(self):
        return self.site_probs.shape[1]

    @property
    def observables(self):
        obs = {f"p_site_{i}": self.site_probs[:, i] for i in range(self.n_atoms)}
        obs.update({f"p_k{k}": self.k_probs[:, k] for k in range(self.k_probs.shape[1])})
        return obs

    def __getitem__(self, name):
        return self.observables[name]

    def to_csv(self, header_comments=()):
        buf = io.StringIO()
        for line in header_comments:
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time_us", *self.observables.keys()])
        cols = [self.times, *self.observables.values()]
        for row in zip(*cols):
            w.writerow([f"{x:.9g}" for x in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
        rows = list(csv.reader(lines))
        header, data = rows[0], np.array(rows[1:], dtype=float)
        if header[0] != "time_us":
            raise ValueError("first column must be time_us")
        site = [i for i, h in enumerate(header) if h.startswith("p_site_")]
        kcols = [i for i, h in enumerate(header) if h.startswith("p_k")]
        return cls(data[:, 0], data[:, site], data[:, kcols])


def _observables(pops, bits):
    exc = bits.sum(axis=1)
    n = bits.shape[1]
    site = pops @ bits
    k = np.zeros((pops.shape[0], n + 1))
    for kk in range(n + 1):
        k[:, kk] = pops[:, exc == kk].sum(axis=1)
    return site, k


def ground_state(n, pure=True):
    d = 2**n
    if pure:
        psi = np.zeros(d, dtype=complex)
        psi[0] = 1.0
        return psi
    rho = np.zeros((d, d), dtype=complex)
    rho[0, 0] = 1.0
    return rho


def step_guard(spec: ClusterDynamicsSpec) -> float:
    rate = spec.max_rate()
    return math.inf if rate == 0 else 1.0 / (50.0 * rate)


def evolve(spec: ClusterDynamicsSpec, initial=None, t_max=5.0, dt=None, sample_dt=None, keep_states=False) -> TimeSeries:
    """Integrate the master equation with fixed-step RK4.

    Parameters
    ----------
    dt : float, optional
        Integration step in us.  Must respect ``dt <= 1/(50 * max rate)``;
        defaults to that bound (or to ``sample_dt``, whichever is smaller).
    sample_dt : float, optional
        Spacing of the output grid; a multiple of the step is used by
        shrinking the step slightly if needed.  Defaults to ``dt``.

    Pure states are propagated as vectors when the damping is zero.
    """
    guard = step_guard(spec)
    if dt is None:
        dt = guard if sample_dt is None else min(guard, sample_dt)
        if not math.isfinite(dt):
            dt = t_max / 1000.0
    elif dt > guard * (1 + 1e-12):
        raise StepSizeError(f"dt={dt} us exceeds the resolution guard {guard:.3g} us")
    if sample_dt is None:
        sample_dt = dt
    n_samples = int(round(t_max / sample_dt))
    if n_samples < 1 or abs(n_samples * sample_dt - t_max) > 1e-9 * max(1.0, t_max):
        raise ValueError("t_max must be a positive multiple of the sampling interval")
    substeps = max(1, int(math.ceil(sample_dt / dt - 1e-9)))
    h = sample_dt / substeps

    rhs = _Lindblad(spec)
    n, d = rhs.n, rhs.d
    if initial is None:
        initial = ground_state(n, pure=not rhs.dissipative)
    state = np.array(initial, dtype=complex)
    if state.ndim == 1 and rhs.dissipative:
        state = np.outer(state, state.conj())
    pure = state.ndim == 1
    if state.shape[0] != d:
        raise ValueError(f"initial state has dimension {state.shape[0]}, expected {d}")

    if pure:
        step = np.linalg.matrix_power(_rk4_polynomial(rhs.A, h), substeps)
        advance = lambda s: step @ s
        pops_of = lambda s: np.abs(s) ** 2
    elif not rhs.dissipative:
        # RK4 on each pure component of rho keeps it positive semidefinite
        U = np.linalg.matrix_power(_rk4_polynomial(rhs.A, h), substeps)
        advance = lambda s: U @ s @ U.conj().T
        pops_of = lambda s: np.real(np.diag(s))
    elif d <= 16:
        P = np.linalg.matrix_power(_rk4_polynomial(rhs.superoperator(), h), substeps)
        advance = lambda s: (P @ s.ravel()).reshape(d, d)
        pops_of = lambda s: np.real(np.diag(s))
    else:
        def advance(s):
            for _ in range(substeps):
                k1 = rhs(s)
                k2 = rhs(s + 0.5 * h * k1)
                k3 = rhs(s + 0.5 * h * k2)
                k4 = rhs(s + h * k3)
                s = s + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            return s
        pops_of = lambda s: np.real(np.diag(s))

    pops = np.empty((n_samples + 1, d))
    states = [] if keep_states else None
    for k in range(n_samples + 1):
        if k:
            state = advance(state)
        pops[k] = pops_of(state)
        if keep_states:
            states.append(state.copy())
    site, kp = _observables(pops, basis_bits(n))
    times = np.arange(n_samples + 1) * sample_dt
    return TimeSeries(times, site, kp, states)


def excitation_statistics(series: TimeSeries) -> dict:
    """P(k) traces keyed by k, plus ``double`` (k == 2) and ``leakage`` (k >= 2)."""
    kp = series.k_probs
    stats = {k: kp[:, k] for k in range(kp.shape[1])}
    zeros = np.zeros(len(series.times))
    stats["double"] = kp[:, 2] if kp.shape[1] > 2 else zeros
    stats["leakage"] = kp[:, 2:].sum(axis=1) if kp.shape[1] > 2 else zeros
    return stats


def single_atom_liouvillian(rabi, damping, detuning=0.0, decay_fraction=0.5):
    params = ExcitationParams(rabi=rabi, damping=damping, two_photon_detuning=detuning, decay_fraction=decay_fraction)
    return _Lindblad(ClusterDynamicsSpec(((0.0, 0.0),), params)).superoperator()


def rabi_trace(times, rabi, damping, detuning=0.0, decay_fraction=0.5):
    """Rydberg population of one driven, damped atom starting in |g>.

    Exact propagation of the same master equation that :func:`evolve`
    integrates, used as the fit model.
    """
    times = np.asarray(times, dtype=float)
    L = single_atom_liouvillian(max(rabi, 0.0), max(damping, 0.0), detuning, decay_fraction)
    rho0 = np.array([1, 0, 0, 0], dtype=complex)
    order = np.argsort(times)
    out = np.empty(times.shape)
    t_prev, state = 0.0, rho0
    cache = {}
    for idx in order:
        t = times[idx]
        if t != t_prev:
            gap = round(t - t_prev, 12)
            if gap not in cache:
                cache[gap] = expm(L * gap)
            state = cache[gap] @ state
            t_prev = t
        out[idx] = state[3].real
    return out
