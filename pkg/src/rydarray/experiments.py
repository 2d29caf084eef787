"""Desk-scale versions of the assembly, checkerboard-Rabi, blockade and recapture runs."""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from . import analysis, assembler, dynamics, noise
from .lattice import SiteIndex, TrapArray, site_position


def sub_seed(seed, *keys):
    """Deterministic 63-bit child seed for an independent sub-run."""
    return int(np.random.SeedSequence([int(seed), *map(int, keys)]).generate_state(2, np.uint64)[0] >> np.uint64(1))


# --- assembly ---------------------------------------------------------------


def run_assembly(array, pattern, load, exec_model, trials, seed):
    records = []
    for i in range(trials):
        s = sub_seed(seed, i)
        res = assembler.assemble(array, pattern, load, exec_model, s)
        records.append(
            {
                "trial": i,
                "seed": s,
                "cycles": res.cycles_used,
                "moves": res.moves,
                "losses": res.losses,
                "duration_ms": round(res.duration_ms, 9),
                "success": bool(res.success),
                "final_grid": res.grid,
            }
        )
    n_ok = sum(r["success"] for r in records)
    lo, hi = assembler.binomial_ci(n_ok, trials)
    aggregate = {"trials": trials, "successes": n_ok, "success_rate": n_ok / trials, "ci_low": lo, "ci_high": hi}
    return records, aggregate


# --- collective Rabi oscillations ----------------------------------------------


def blockade_clusters(pitch=7.0):
    """Single atom, nearest-neighbour pair and right triangle (pitch, pitch, pitch*sqrt 2)."""
    return {
        1: ((0.0, 0.0),),
        2: ((0.0, 0.0), (pitch, 0.0)),
        3: ((0.0, 0.0), (pitch, 0.0), (0.0, pitch)),
    }


def run_blockade(rabi, interaction, noise_model, det, shots, seed, pitch=7.0, t_max=5.0, sample_dt=0.05, sizes=(1, 2, 3)):
    """Simulate N = 1, 2, 3 clusters and fit P(1 excitation).

    Returns per-N true, observed (forward-corrected) and corrected
    (inverse of observed) traces, fits on the corrected traces, the
    collective-scaling table and, for N=3, the double-excitation leakage of
    the finite interaction compared with perfect blockade.
    """
    params = dynamics.ExcitationParams(rabi=rabi)
    clusters = blockade_clusters(pitch)
    out = {"series": {}, "fits": {}, "leakage": None}
    for n in sizes:
        spec = dynamics.ClusterDynamicsSpec(clusters[n], params, interaction)
        true = noise.monte_carlo_dynamics(spec, noise_model, shots, sub_seed(seed, n), t_max, sample_dt)
        observed = noise.static_correction(true, det, "forward")
        corrected = noise.static_correction(observed, det, "inverse")
        out["series"][n] = {"true": true, "observed": observed, "corrected": corrected}
        out["fits"][n] = analysis.fit_rabi(corrected, "p_k1")
    out["scaling"] = analysis.collective_scaling([(n, out["fits"][n]) for n in sizes])
    if 3 in sizes and not interaction.perfect_blockade:
        spec = dynamics.ClusterDynamicsSpec(clusters[3], params, interaction)
        ideal = dynamics.ClusterDynamicsSpec(clusters[3], params, replace(interaction, perfect_blockade=True))
        finite = dynamics.evolve(spec, t_max=t_max, sample_dt=sample_dt)
        perfect = dynamics.evolve(ideal, t_max=t_max, sample_dt=sample_dt)
        out["leakage"] = {
            "times": finite.times,
            "finite": dynamics.excitation_statistics(finite)["double"],
            "perfect": dynamics.excitation_statistics(perfect)["double"],
        }
    return out


# --- simultaneous Rabi oscillations on a checkerboard ---------------------------


def checkerboard_patterns(rows, cols):
    """The two complementary checkerboards, as sorted site lists."""
    a = [SiteIndex(r, c) for r in range(rows) for c in range(cols) if (r + c) % 2 == 0]
    b = [SiteIndex(r, c) for r in range(rows) for c in range(cols) if (r + c) % 2 == 1]
    return a, b


def run_checkerboard(region: TrapArray, beam_center, beam_waist, rabi_max, interaction, noise_model, shots, seed, t_max=5.0, sample_dt=0.05, with_neighbours=True):
    """Per-site Rabi traces for both checkerboard patterns, merged.

    Each site is simulated together with the diagonal neighbours that are
    occupied in the same pattern, so their interaction shifts act on it.
    Returns ``{site: TimeSeries}`` of the site's own Rydberg probability,
    per-site fits and the beam-profile fit of the fitted Rabi map.
    """
    params = dynamics.ExcitationParams(rabi=rabi_max)
    series, fits = {}, {}
    for pattern in checkerboard_patterns(region.rows, region.cols):
        occupied = set(pattern)
        for site in pattern:
            cluster = [site]
            if with_neighbours:
                for dr in (-1, 1):
                    for dc in (-1, 1):
                        nb = SiteIndex(site.row + dr, site.col + dc)
                        if nb in occupied:
                            cluster.append(nb)
            pos = [site_position(region, s) for s in cluster]
            rabi = analysis.beam_rabi(np.array(pos), beam_center, beam_waist, rabi_max)
            spec = dynamics.ClusterDynamicsSpec(tuple(pos), params, interaction, per_atom_rabi=tuple(rabi))
            ts = noise.monte_carlo_dynamics(spec, noise_model, shots, sub_seed(seed, site.row, site.col), t_max, sample_dt)
            own = dynamics.TimeSeries(ts.times, ts.site_probs[:, :1], np.column_stack([1 - ts.site_probs[:, 0], ts.site_probs[:, 0]]))
            series[site] = own
            fits[site] = analysis.fit_rabi(own, "p_site_0")
    beam = analysis.fit_beam_profile({s: f.rabi for s, f in fits.items()}, region)
    rabis = np.array([f.rabi for f in fits.values()])
    damps = np.array([f.damping for f in fits.values()])
    summary = {
        "rabi_min": float(rabis.min()),
        "rabi_max": float(rabis.max()),
        "damping_mean": float(damps.mean()),
        "damping_std": float(damps.std(ddof=1)) if damps.size > 1 else 0.0,
    }
    return {"series": series, "fits": fits, "beam": beam, "summary": summary}


def region_center(region: TrapArray):
    return ((region.cols - 1) * region.pitch / 2, (region.rows - 1) * region.pitch / 2)


# --- detection error ------------------------------------------------------------


def run_recapture(array, det, noise_model, trials, seed, ponderomotive_scale=1.0, states=("rydberg", "ground")):
    return [noise.recapture_probability(array, det, noise_model, st, trials, seed, ponderomotive_scale).as_dict() for st in states]
