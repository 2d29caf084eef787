"""Stochastic loading and atom-by-atom rearrangement.

The planner pairs every vacant target site with the closest reservoir atom,
working outward from the target centroid.  Atoms travel along grid lines on
one of two L-shaped routes; occupied sites on the chosen route are shifted
forward one hop each so that no atom ever passes through an occupied trap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .lattice import OccupancyGrid, SiteIndex, TargetPattern, TrapArray, LatticeError


class ExecutionIntegrityError(RuntimeError):
    """A plan tried to move an atom that was never there, or into an occupied trap."""


@dataclass(frozen=True)
class LoadModel:
    fill_probability: float = 0.55

    def __post_init__(self):
        if not 0.0 <= self.fill_probability <= 1.0:
            raise ValueError(f"fill_probability must lie in [0, 1], got {self.fill_probability}")


@dataclass(frozen=True)
class Move:
    """Single tweezer move along grid lines.

    A move with ``discard=True`` removes the atom at ``source`` from the array;
    its destination equals the source.
    """

    source: SiteIndex
    destination: SiteIndex
    path: tuple
    discard: bool = False

    @property
    def hops(self):
        return len(self.path) - 1


@dataclass(frozen=True)
class ExecutionModel:
    """Timing and loss parameters of one rearrangement sequence.

    Durations are in ms.  ``transport_duration`` is the tweezer travel time
    between the capture and release ramps; the default of 0.6 ms makes one
    full elementary move (ramp, transport, ramp) last 1 ms.
    """

    ramp_duration: float = 0.2
    transport_duration: float = 0.6
    cycle_overhead: float = 20.0
    per_move_loss: float = 0.01
    per_cycle_loss: float = 0.005
    depth_lowering_factor: float = 5.0
    max_cycles: int = 15
    surplus_policy: str = "relocate"

    def __post_init__(self):
        for name in ("per_move_loss", "per_cycle_loss"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        for name in ("ramp_duration", "transport_duration", "cycle_overhead", "depth_lowering_factor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_cycles < 0:
            raise ValueError("max_cycles must be non-negative")
        if self.surplus_policy not in ("relocate", "discard"):
            raise ValueError("surplus_policy must be 'relocate' or 'discard'")

    @property
    def move_duration(self):
        return self.transport_duration + 2 * self.ramp_duration

    def sequence_duration(self, n_moves):
        return self.cycle_overhead + n_moves * self.move_duration


@dataclass(frozen=True)
class RearrangementPlan:
    moves: tuple = ()
    estimated_duration: float = 0.0
    shortfall: int = 0

    def __len__(self):
        return len(self.moves)


def sample_loading(array: TrapArray, model: LoadModel, rng_seed) -> OccupancyGrid:
    """Independent single-atom occupation of every trap (collisional blockade)."""
    rng = np.random.default_rng(rng_seed)
    return OccupancyGrid(rng.random(array.shape) < model.fill_probability)


def l_paths(a, b):
    """The horizontal-first and vertical-first grid routes from ``a`` to ``b``."""
    (r0, c0), (r1, c1) = a, b
    dc = 1 if c1 >= c0 else -1
    dr = 1 if r1 >= r0 else -1
    horiz = [SiteIndex(r0, c) for c in range(c0, c1 + dc, dc)]
    horiz += [SiteIndex(r, c1) for r in range(r0 + dr, r1 + dr, dr)]
    vert = [SiteIndex(r, c0) for r in range(r0, r1 + dr, dr)]
    vert += [SiteIndex(r1, c) for c in range(c0 + dc, c1 + dc, dc)]
    return horiz, vert


def _route(occ, a, b):
    """Pick the L-route with fewest occupied intermediate sites (ties: horizontal first)."""
    best = None
    for path in l_paths(a, b):
        obstacles = [i for i in range(1, len(path) - 1) if occ[path[i]]]
        if best is None or len(obstacles) < len(best[1]):
            best = (path, obstacles)
    return best


def _chain_moves(occ, path, obstacles):
    """Split a blocked route into hop-by-hop moves, nearest-to-destination first.

    Mutates ``occ`` to reflect the executed chain.
    """
    stops = [0] + obstacles + [len(path) - 1]
    moves = []
    for k in range(len(stops) - 1, 0, -1):
        i, j = stops[k - 1], stops[k]
        seg = tuple(path[i : j + 1])
        moves.append(Move(seg[0], seg[-1], seg))
        occ[seg[0]] = False
        occ[seg[-1]] = True
    return moves


def _dist2(a, b):
    return (a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2


def _nearest(candidates, ref):
    # Lattice distances are isotropic in pitch, so squared index distance orders Euclidean distance.
    return min(candidates, key=lambda s: (_dist2(s, ref), s[0], s[1]))


def plan_rearrangement(grid: OccupancyGrid, pattern: TargetPattern, exec_model: ExecutionModel | None = None) -> RearrangementPlan:
    """Greedy assignment of reservoir atoms to vacant target sites.

    Vacancies are served center-out (Euclidean distance from the target
    centroid, ties row-major), each by the Euclidean-closest atom outside the
    target.  Exclusion-frame atoms count as reservoir; any left after filling
    are relocated to the nearest empty outlying site or discarded.
    Insufficient reservoir is reported through ``shortfall``.
    """
    if grid.shape != pattern.shape:
        raise LatticeError(f"grid {grid.shape} does not match pattern {pattern.shape}")
    exec_model = exec_model or ExecutionModel()
    occ = grid.occupation.copy()
    targets = pattern.target_sites
    frame = pattern.exclusion_frame
    cr, cc = pattern.centroid()

    vacancies = sorted(
        (s for s in targets if not occ[s]),
        key=lambda s: ((s[0] - cr) ** 2 + (s[1] - cc) ** 2, s[0], s[1]),
    )
    reservoir = {SiteIndex(int(r), int(c)) for r, c in zip(*np.nonzero(occ))} - targets

    moves = []
    shortfall = 0
    for v in vacancies:
        if not reservoir:
            shortfall += 1
            continue
        src = _nearest(reservoir, v)
        reservoir.discard(src)
        path, obstacles = _route(occ, src, v)
        moves.extend(_chain_moves(occ, path, obstacles))

    stray = sorted(s for s in frame if occ[s])
    for s in stray:
        if exec_model.surplus_policy == "relocate":
            free = [SiteIndex(int(r), int(c)) for r, c in zip(*np.nonzero(~occ))]
            free = [f for f in free if f not in targets and f not in frame]
            if free:
                dest = _nearest(free, s)
                path, obstacles = _route(occ, s, dest)
                moves.extend(_chain_moves(occ, path, obstacles))
                continue
        moves.append(Move(s, s, (s,), discard=True))
        occ[s] = False

    moves = tuple(moves)
    return RearrangementPlan(moves, exec_model.sequence_duration(len(moves)), shortfall)


@dataclass
class ExecutionStats:
    moves_attempted: int = 0
    moves_skipped: int = 0
    atoms_lost: int = 0
    atoms_discarded: int = 0
    duration_ms: float = 0.0

    def as_dict(self):
        return dict(self.__dict__)


def execute_plan(grid: OccupancyGrid, plan: RearrangementPlan, exec_model: ExecutionModel, rng_seed):
    """Run a plan with independent per-move loss.

    A move whose source was emptied by an earlier loss is skipped; a move
    from a site that the plan itself never filled raises
    :class:`ExecutionIntegrityError`.
    """
    rng = np.random.default_rng(rng_seed)
    occ = grid.occupation.copy()
    expected = grid.occupation.copy()
    stats = ExecutionStats()
    for m in plan.moves:
        src, dst = tuple(m.source), tuple(m.destination)
        if not expected[src]:
            raise ExecutionIntegrityError(f"move from empty site {src}")
        if not m.discard and expected[dst]:
            raise ExecutionIntegrityError(f"move into occupied site {dst}")
        expected[src] = False
        if not m.discard:
            expected[dst] = True
        if not occ[src]:
            stats.moves_skipped += 1
            continue
        stats.moves_attempted += 1
        occ[src] = False
        if m.discard:
            stats.atoms_discarded += 1
        elif rng.random() < exec_model.per_move_loss:
            stats.atoms_lost += 1
        else:
            occ[dst] = True
    stats.duration_ms = exec_model.sequence_duration(stats.moves_attempted)
    return OccupancyGrid(occ), stats


@dataclass
class AssemblyResult:
    grid: OccupancyGrid
    success: bool
    cycles_used: int
    moves: int = 0
    losses: int = 0
    duration_ms: float = 0.0
    history: list = field(default_factory=list)


def _cycle_seed(rng_seed, cycle, stream):
    return np.random.SeedSequence([int(rng_seed), int(cycle), int(stream)])


def assemble(array: TrapArray, pattern: TargetPattern, load: LoadModel, exec_model: ExecutionModel, rng_seed, initial=None) -> AssemblyResult:
    """Load, then plan/execute/re-detect until the pattern holds or cycles run out.

    Random streams are keyed by ``(rng_seed, cycle)`` so that a run with a
    larger ``max_cycles`` replays the shorter run exactly before continuing.
    """
    if pattern.shape != array.shape:
        raise LatticeError(f"pattern {pattern.shape} does not match array {array.shape}")
    grid = initial if initial is not None else sample_loading(array, load, _cycle_seed(rng_seed, 0, 0))
    result = AssemblyResult(grid, False, 0)
    for cycle in range(exec_model.max_cycles + 1):
        if pattern.is_satisfied(grid):
            result.success = True
            break
        if cycle == exec_model.max_cycles:
            break
        plan = plan_rearrangement(grid, pattern, exec_model)
        grid, stats = execute_plan(grid, plan, exec_model, _cycle_seed(rng_seed, cycle + 1, 1))
        if exec_model.per_cycle_loss > 0:
            rng = np.random.default_rng(_cycle_seed(rng_seed, cycle + 1, 2))
            survive = rng.random(grid.shape) >= exec_model.per_cycle_loss
            kept = grid.occupation & survive
            stats.atoms_lost += grid.n_atoms - int(kept.sum())
            grid = OccupancyGrid(kept)
        result.cycles_used = cycle + 1
        result.moves += stats.moves_attempted
        result.losses += stats.atoms_lost
        result.duration_ms += stats.duration_ms
        result.history.append(stats.as_dict())
    result.grid = grid
    return result


def binomial_ci(successes, trials, z=1.959963984540054):
    """Wilson score interval for a binomial proportion."""
    if trials <= 0:
        return (0.0, 1.0)
    p = successes / trials
    denom = 1 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    # the Wilson interval always contains p; guard against rounding at p = 0 or 1
    return (max(0.0, min(p, centre - half)), min(1.0, max(p, centre + half)))
