"""Shot-to-shot fluctuations, Rydberg recapture simulation and static corrections.

Every random draw is keyed by ``(seed, index)`` through
:class:`numpy.random.SeedSequence`, so individual shots and trials are
reproducible regardless of evaluation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .assembler import binomial_ci
from .dynamics import ClusterDynamicsSpec, TimeSeries, evolve
from .lattice import TrapArray

# kB / m(85Rb) expressed as (um/us)^2 per uK; also um/us^2 per (uK/um).
RB85_MASS_KG = 84.911789738 * 1.66053906660e-27
KB_OVER_M = 1.380649e-23 * 1e-6 / RB85_MASS_KG

# Effective principal quantum numbers of nD5/2 in 85Rb (quantum defect 1.3465).
_D52_DEFECT = 1.3465


@dataclass(frozen=True)
class NoiseModel:
    """Per-shot fluctuation amplitudes (one standard deviation each).

    Frequencies are in MHz (already divided by 2 pi), positions in um,
    power fluctuations relative.
    """

    temperature: float = 52.0
    doppler_width: float = 0.170
    power_fluct_480: float = 0.05
    power_fluct_780: float = 0.02
    rabi_jitter: float = 0.037
    stark_jitter: float = 0.024
    pos_sigma_radial: float = 0.3
    pos_sigma_axial: float = 2.4
    include_scattering: bool = True

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if k != "include_scattering" and v < 0:
                raise ValueError(f"{k} must be non-negative")

    @classmethod
    def zero(cls, temperature=52.0):
        return cls(temperature, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, include_scattering=False)

    @property
    def rabi_scale_sigma(self):
        # Omega ~ sqrt(P480 * P780)
        return 0.5 * math.hypot(self.power_fluct_480, self.power_fluct_780)


@dataclass(frozen=True)
class DetectionModel:
    false_negative: float = 0.19
    prep_fidelity: float = 0.96
    sequence_loss: float = 0.05
    rydberg_decay_rate: float = 0.005
    release_time: float = 10.0
    label: str = "57D"

    def __post_init__(self):
        for k in ("false_negative", "prep_fidelity", "sequence_loss"):
            if not 0.0 <= getattr(self, k) <= 1.0:
                raise ValueError(f"{k} must lie in [0, 1]")
        if self.rydberg_decay_rate < 0 or self.release_time < 0:
            raise ValueError("rates and times must be non-negative")


def scaled_decay_rate(n, reference_n=57, reference_rate=0.005):
    """Scale a Rydberg decay rate with the n*^-3 lifetime law."""
    ns = n - _D52_DEFECT
    ref = reference_n - _D52_DEFECT
    return reference_rate * (ref / ns) ** 3


def detection_57d(**kw) -> DetectionModel:
    return DetectionModel(**{"false_negative": 0.19, "rydberg_decay_rate": 0.005, "label": "57D", **kw})


def detection_87d(**kw) -> DetectionModel:
    return DetectionModel(**{"false_negative": 0.06, "rydberg_decay_rate": scaled_decay_rate(87), "label": "87D", **kw})


@dataclass(frozen=True)
class ShotSample:
    doppler_detuning: np.ndarray
    rabi_scale: float
    rabi_offset: float
    stark_offset: float
    position_offsets: np.ndarray


def shot_rng(seed, index):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def sample_shot(noise: NoiseModel, n_atoms, seed, shot_index) -> ShotSample:
    """Draw one realisation of the fluctuating parameters.

    Doppler shifts and position offsets are independent per atom; laser
    power (Rabi scale and offset) and Stark shift are common to the shot.
    """
    rng = shot_rng(seed, shot_index)
    doppler = rng.normal(0.0, noise.doppler_width, n_atoms)
    scale = 1.0 + rng.normal(0.0, noise.rabi_scale_sigma)
    offset = rng.normal(0.0, noise.rabi_jitter)
    stark = rng.normal(0.0, noise.stark_jitter)
    sig = np.array([noise.pos_sigma_radial, noise.pos_sigma_radial, noise.pos_sigma_axial])
    pos = rng.normal(0.0, 1.0, (n_atoms, 3)) * sig
    return ShotSample(doppler, float(scale), float(offset), float(stark), pos)


def perturb_spec(spec: ClusterDynamicsSpec, sample: ShotSample, include_scattering=True) -> ClusterDynamicsSpec:
    n = spec.n_atoms
    positions = []
    for p, d in zip(spec.positions, sample.position_offsets):
        p3 = np.zeros(3)
        p3[: len(p)] = p
        positions.append(tuple(p3 + d))
    rabi = np.clip(spec.rabi_values() * sample.rabi_scale + sample.rabi_offset, 0.0, None)
    base_det = np.zeros(n) if spec.per_atom_detuning is None else np.array(spec.per_atom_detuning)
    detuning = base_det + sample.doppler_detuning + sample.stark_offset
    params = spec.params
    if include_scattering:
        params = replace(params, damping=params.damping + params.scattering_rate)
    return replace(spec, positions=tuple(positions), per_atom_rabi=tuple(rabi), per_atom_detuning=tuple(detuning), params=params)


def _exact_mean(stack):
    """Correctly rounded mean over axis 0, independent of shot order."""
    flat = stack.reshape(stack.shape[0], -1)
    out = np.array([math.fsum(col) for col in flat.T]) / stack.shape[0]
    return out.reshape(stack.shape[1:])


def monte_carlo_dynamics(spec: ClusterDynamicsSpec, noise: NoiseModel, shots, seed, t_max=5.0, sample_dt=0.05, dt=None) -> TimeSeries:
    """Average :func:`evolve` over independently perturbed shots."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    site, kp = [], []
    times = None
    for i in range(shots):
        s = sample_shot(noise, spec.n_atoms, seed, i)
        ts = evolve(perturb_spec(spec, s, noise.include_scattering), t_max=t_max, dt=dt, sample_dt=sample_dt)
        times = ts.times
        site.append(ts.site_probs)
        kp.append(ts.k_probs)
    return TimeSeries(times, _exact_mean(np.array(site)), _exact_mean(np.array(kp)))


# --- recapture -------------------------------------------------------------


def _trap_profile(pos, waist, zr):
    """Normalised Gaussian-beam intensity f and its gradient at positions (n, 3)."""
    x, y, z = pos[:, 0], pos[:, 1], pos[:, 2]
    u = 1.0 + (z / zr) ** 2
    rho2 = x * x + y * y
    f = np.exp(-2.0 * rho2 / (waist**2 * u)) / u
    dudz = 2.0 * z / zr**2
    grad = np.empty_like(pos)
    grad[:, 0] = f * (-4.0 * x / (waist**2 * u))
    grad[:, 1] = f * (-4.0 * y / (waist**2 * u))
    grad[:, 2] = f * dudz * (-1.0 / u + 2.0 * rho2 / (waist**2 * u * u))
    return f, grad


def leapfrog(pos, vel, depth_scale, waist, zr, dt, n_steps):
    """Velocity-Verlet steps in the potential ``depth_scale * f`` (uK).

    A negative ``depth_scale`` is an attractive trap, a positive one the
    repulsive ponderomotive potential.
    """
    pos, vel = pos.copy(), vel.copy()
    _, g = _trap_profile(pos, waist, zr)
    acc = -KB_OVER_M * depth_scale * g
    for _ in range(n_steps):
        vel += 0.5 * dt * acc
        pos += dt * vel
        _, g = _trap_profile(pos, waist, zr)
        acc = -KB_OVER_M * depth_scale * g
        vel += 0.5 * dt * acc
    return pos, vel


def kinetic_energy(vel):
    """Kinetic energy in uK for velocities in um/us."""
    return 0.5 * np.sum(vel * vel, axis=-1) / KB_OVER_M


def thermal_sample(array: TrapArray, temperature, n, rng):
    """Positions (um) and velocities (um/us) from the harmonic approximation of the trap."""
    U0 = array.trap_depth
    zr = array.rayleigh_length
    sx = array.trap_waist * math.sqrt(temperature / (4.0 * U0))
    sz = zr * math.sqrt(temperature / (2.0 * U0))
    pos = rng.normal(0.0, 1.0, (n, 3)) * np.array([sx, sx, sz])
    vel = rng.normal(0.0, math.sqrt(KB_OVER_M * temperature), (n, 3))
    return pos, vel


@dataclass
class RecaptureResult:
    state: str
    n_level_label: str
    trials: int
    recaptured: int
    p_recapture: float
    ci_low: float
    ci_high: float
    ponderomotive_scale: float = 1.0

    def as_dict(self):
        return dict(self.__dict__)


def recapture_probability(array: TrapArray, det: DetectionModel, noise: NoiseModel, state="rydberg", trials=100_000, seed=0, ponderomotive_scale=1.0, dt=0.1, t_cap=2000.0) -> RecaptureResult:
    """Monte Carlo probability that an atom is found in its trap after the excitation window.

    Atoms start from a thermal distribution, fly freely while the traps are
    off, and are recaptured when their energy in the restored trap is
    negative.  A Rydberg atom instead sees the inverted trap profile scaled
    by ``ponderomotive_scale`` until it decays (exponential waiting time),
    after which the same energy criterion applies at the decay point.
    """
    if state not in ("ground", "rydberg"):
        raise ValueError("state must be 'ground' or 'rydberg'")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = shot_rng(seed, 0)
    U0 = array.trap_depth
    w0, zr = array.trap_waist, array.rayleigh_length
    pos, vel = thermal_sample(array, noise.temperature, trials, rng)
    rate = det.rydberg_decay_rate
    u = rng.random(trials)
    if state == "ground" or math.isinf(rate):
        t_decay = np.zeros(trials)
    elif rate == 0:
        t_decay = np.full(trials, np.inf)
    else:
        t_decay = -np.log1p(-u) / rate

    pos = pos + vel * det.release_time
    f, _ = _trap_profile(pos, w0, zr)
    bound = kinetic_energy(vel) - U0 * f < 0
    captured = np.where(t_decay <= det.release_time, bound, False)

    active = np.nonzero(t_decay > det.release_time)[0]
    s = ponderomotive_scale
    p, v, td = pos[active], vel[active], t_decay[active]
    t = det.release_time
    _, g = _trap_profile(p, w0, zr)
    acc = -KB_OVER_M * s * U0 * g
    while active.size and t < t_cap:
        v += 0.5 * dt * acc
        p += dt * v
        f, g = _trap_profile(p, w0, zr)
        acc = -KB_OVER_M * s * U0 * g
        v += 0.5 * dt * acc
        t += dt
        ke = kinetic_energy(v)
        e_ground = ke - U0 * f
        decayed = td <= t
        captured[active[decayed]] = e_ground[decayed] < 0
        # outgoing and already too energetic for the ground trap: never recaptured
        gone = ~decayed & (np.einsum("ij,ij->i", p, v) >= 0) & (e_ground >= 0)
        keep = ~(decayed | gone)
        active, p, v, td, acc = active[keep], p[keep], v[keep], td[keep], acc[keep]

    n_cap = int(captured.sum())
    lo, hi = binomial_ci(n_cap, trials)
    return RecaptureResult(state, det.label, trials, n_cap, n_cap / trials, lo, hi, s)


# --- static error correction ------------------------------------------------


def detection_factor(det: DetectionModel):
    return (1.0 - det.false_negative) * det.prep_fidelity * (1.0 - det.sequence_loss)


def static_correction(raw: TimeSeries, det: DetectionModel, direction="forward") -> TimeSeries:
    """Map true excitation probabilities to observed ones, or back.

    ``forward`` multiplies every excitation probability (per-site and
    P(k >= 1)) by the detection chain factor; ``inverse`` divides and clips
    to [0, 1].  P(0) is re-derived from normalisation.  Clipping is recorded
    in ``meta['clipped']``.
    """
    a = detection_factor(det)
    site = raw.site_probs.copy()
    kp = raw.k_probs.copy()
    clipped = False
    if direction == "forward":
        site *= a
        kp[:, 1:] *= a
    elif direction == "inverse":
        if a == 0:
            raise ValueError("detection chain factor is zero; cannot invert")
        site /= a
        kp[:, 1:] /= a
        clipped = bool((site > 1).any() or (site < 0).any() or (kp[:, 1:] > 1).any() or (kp[:, 1:] < 0).any())
        site = np.clip(site, 0.0, 1.0)
        kp[:, 1:] = np.clip(kp[:, 1:], 0.0, 1.0)
        excess = kp[:, 1:].sum(axis=1) - 1.0
        if (excess > 0).any():
            clipped = True
            kp[:, 1:] /= np.maximum(1.0, kp[:, 1:].sum(axis=1))[:, None]
    else:
        raise ValueError("direction must be 'forward' or 'inverse'")
    kp[:, 0] = 1.0 - kp[:, 1:].sum(axis=1)
    return TimeSeries(raw.times.copy(), site, kp, meta={"clipped": clipped, "direction": direction, "factor": a})
