"""Trap-grid geometry, occupancy bookkeeping and the ASCII pattern format.

Sites are addressed as ``(row, col)`` with ``(0, 0)`` at the top-left; the
x coordinate runs along columns and y along rows, both in micrometres.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np


class LatticeError(ValueError):
    """Raised for out-of-bounds sites, degenerate pairs and dimension mismatches."""


class PatternParseError(ValueError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}"
            if column is not None:
                where += f", column {column}"
            where += ": "
        super().__init__(where + message)


class SiteIndex(NamedTuple):
    row: int
    col: int


@dataclass(frozen=True)
class TrapArray:
    """Quadratic array of identical optical dipole traps.

    Parameters
    ----------
    rows, cols : int
        Grid dimensions.
    pitch : float
        Site separation in um.
    trap_waist : float
        1/e^2 intensity radius of a single trap in um.
    trap_depth : float
        Depth U0/kB in uK.
    trap_wavelength : float
        Trapping light wavelength in nm.
    """

    rows: int = 19
    cols: int = 19
    pitch: float = 7.0
    trap_waist: float = 1.45
    trap_depth: float = 1000.0
    trap_wavelength: float = 797.3

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise LatticeError(f"grid must be at least 1x1, got {self.rows}x{self.cols}")
        for name in ("pitch", "trap_waist", "trap_depth", "trap_wavelength"):
            if not getattr(self, name) > 0:
                raise LatticeError(f"{name} must be positive")

    @property
    def shape(self):
        return (self.rows, self.cols)

    @property
    def n_sites(self):
        return self.rows * self.cols

    @property
    def rayleigh_length(self):
        """Rayleigh range of a single trap in um."""
        return math.pi * self.trap_waist**2 / (self.trap_wavelength * 1e-3)

    def contains(self, site) -> bool:
        r, c = site
        return 0 <= r < self.rows and 0 <= c < self.cols

    def sites(self):
        """All sites in row-major order."""
        return [SiteIndex(r, c) for r in range(self.rows) for c in range(self.cols)]


# Preset trap arrays; waist and depth are common to all three.
PRESETS = {
    1: dict(pitch=14.1, trap_wavelength=798.6),
    2: dict(pitch=10.3, trap_wavelength=797.3),
    3: dict(pitch=7.0, trap_wavelength=797.3),
}


def preset_array(number, rows=19, cols=19) -> TrapArray:
    try:
        params = PRESETS[int(number)]
    except (KeyError, ValueError):
        raise LatticeError(f"unknown trap-array preset {number!r}; choose 1, 2 or 3") from None
    return TrapArray(rows=rows, cols=cols, trap_waist=1.45, trap_depth=1000.0, **params)


def _check_site(array, s):
    if not array.contains(s):
        raise LatticeError(f"site {tuple(s)} outside {array.rows}x{array.cols} grid")


def site_position(array: TrapArray, s) -> tuple[float, float]:
    """Return the (x, y) position of site ``s`` in um relative to site (0, 0)."""
    _check_site(array, s)
    return (s[1] * array.pitch, s[0] * array.pitch)


def fold_angle(theta):
    """Fold an angle onto [0, pi/2] using the |cos| symmetry of the interaction."""
    t = math.fmod(abs(theta), math.pi)
    return math.pi - t if t > math.pi / 2 else t


def pair_geometry(ra, rb, quant_axis=(1.0, 0.0)):
    """Distance and folded angle between two points (2D or 3D) in um.

    The angle is measured between the separation vector and the in-plane
    quantization axis.
    """
    d = np.asarray(rb, dtype=float) - np.asarray(ra, dtype=float)
    R = float(np.sqrt(np.dot(d, d)))
    if R == 0.0:
        raise LatticeError("degenerate pair: coincident positions")
    axis = np.zeros_like(d)
    ax = np.asarray(quant_axis, dtype=float)
    axis[: ax.size] = ax / np.linalg.norm(ax)
    cos_t = min(1.0, abs(float(np.dot(d, axis))) / R)
    return R, math.acos(cos_t)


def pairwise_distance_and_angle(array: TrapArray, a, b, quant_axis=(1.0, 0.0)):
    """Separation R (um) and folded angle theta in [0, pi/2] between two sites."""
    _check_site(array, a)
    _check_site(array, b)
    if tuple(a) == tuple(b):
        raise LatticeError(f"degenerate pair: site {tuple(a)} paired with itself")
    return pair_geometry(site_position(array, a), site_position(array, b), quant_axis)


@dataclass(frozen=True)
class OccupancyGrid:
    """Boolean trap occupation; ``occupation[row, col]`` is True for an atom."""

    occupation: np.ndarray

    def __post_init__(self):
        occ = np.array(self.occupation, dtype=bool, copy=True)
        if occ.ndim != 2:
            raise LatticeError("occupation must be a 2D matrix")
        occ.setflags(write=False)
        object.__setattr__(self, "occupation", occ)

    @classmethod
    def empty(cls, rows, cols):
        return cls(np.zeros((rows, cols), dtype=bool))

    @property
    def shape(self):
        return self.occupation.shape

    @property
    def n_atoms(self):
        return int(self.occupation.sum())

    def __getitem__(self, site):
        return bool(self.occupation[site[0], site[1]])

    def occupied_sites(self):
        return [SiteIndex(int(r), int(c)) for r, c in zip(*np.nonzero(self.occupation))]

    def with_changes(self, set_true=(), set_false=()):
        occ = self.occupation.copy()
        for r, c in set_false:
            occ[r, c] = False
        for r, c in set_true:
            occ[r, c] = True
        return OccupancyGrid(occ)

    def __eq__(self, other):
        if not isinstance(other, OccupancyGrid):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.occupation, other.occupation))

    def __hash__(self):
        return hash((self.shape, self.occupation.tobytes()))


@dataclass(frozen=True)
class TargetPattern:
    """Sites that must end occupied and an exclusion frame that must end empty."""

    rows: int
    cols: int
    target_sites: frozenset = field(default_factory=frozenset)
    exclusion_frame: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        tgt = frozenset(SiteIndex(*s) for s in self.target_sites)
        exc = frozenset(SiteIndex(*s) for s in self.exclusion_frame)
        object.__setattr__(self, "target_sites", tgt)
        object.__setattr__(self, "exclusion_frame", exc)
        if tgt & exc:
            raise LatticeError(f"target and exclusion overlap at {sorted(tgt & exc)[:3]}")
        for r, c in tgt | exc:
            if not (0 <= r < self.rows and 0 <= c < self.cols):
                raise LatticeError(f"pattern site {(r, c)} outside {self.rows}x{self.cols} grid")

    @property
    def shape(self):
        return (self.rows, self.cols)

    def centroid(self):
        if not self.target_sites:
            return ((self.rows - 1) / 2, (self.cols - 1) / 2)
        pts = np.array(sorted(self.target_sites), dtype=float)
        return tuple(pts.mean(axis=0))

    def is_satisfied(self, grid: OccupancyGrid) -> bool:
        counts = classify(grid, self)
        return counts["vacant_target"] == 0 and counts["frame_violations"] == 0


def centered_block(rows, cols, height, width, frame=0) -> TargetPattern:
    """Centered ``height x width`` target with an optional exclusion frame of ``frame`` sites."""
    r0 = (rows - height) // 2
    c0 = (cols - width) // 2
    tgt = {(r, c) for r in range(r0, r0 + height) for c in range(c0, c0 + width)}
    exc = set()
    for r in range(r0 - frame, r0 + height + frame):
        for c in range(c0 - frame, c0 + width + frame):
            if (r, c) not in tgt and 0 <= r < rows and 0 <= c < cols:
                exc.add((r, c))
    return TargetPattern(rows, cols, frozenset(tgt), frozenset(exc))


_PATTERN_CHARS = {".", "T", "x"}
_GRID_CHARS = {".", "o"}


def _content_lines(text):
    lines = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if line.strip():
            lines.append((lineno, line.strip()))
    return lines


def _parse_char_grid(text, allowed):
    lines = _content_lines(text)
    if not lines:
        raise PatternParseError("no grid rows found")
    width = len(lines[0][1])
    for lineno, line in lines:
        if len(line) != width:
            raise PatternParseError(f"ragged row: expected {width} columns, got {len(line)}", lineno)
        for col, ch in enumerate(line, start=1):
            if ch not in allowed:
                raise PatternParseError(f"unknown character {ch!r}", lineno, col)
    return [line for _, line in lines]


def parse_pattern(text: str) -> TargetPattern:
    """Parse the ASCII target format ('.' don't care, 'T' target, 'x' exclusion)."""
    rows = _parse_char_grid(text, _PATTERN_CHARS)
    tgt, exc = set(), set()
    for r, line in enumerate(rows):
        for c, ch in enumerate(line):
            if ch == "T":
                tgt.add((r, c))
            elif ch == "x":
                exc.add((r, c))
    return TargetPattern(len(rows), len(rows[0]), frozenset(tgt), frozenset(exc))


def emit_pattern(pattern: TargetPattern) -> str:
    out = []
    for r in range(pattern.rows):
        row = []
        for c in range(pattern.cols):
            s = (r, c)
            row.append("T" if s in pattern.target_sites else "x" if s in pattern.exclusion_frame else ".")
        out.append("".join(row))
    return "\n".join(out) + "\n"


def parse_occupancy(text: str) -> OccupancyGrid:
    """Parse an occupancy file ('o' occupied, '.' empty)."""
    rows = _parse_char_grid(text, _GRID_CHARS)
    return OccupancyGrid(np.array([[ch == "o" for ch in line] for line in rows], dtype=bool))


def emit_occupancy(grid: OccupancyGrid) -> str:
    return "\n".join("".join("o" if v else "." for v in row) for row in grid.occupation) + "\n"


def classify(grid: OccupancyGrid, pattern: TargetPattern) -> dict:
    """Count correctly occupied targets, reservoir atoms, vacant targets and frame violations.

    Every occupied site falls into exactly one of ``correctly_occupied``,
    ``reservoir`` or ``frame_violations``.
    """
    if grid.shape != pattern.shape:
        raise LatticeError(f"grid {grid.shape} does not match pattern {pattern.shape}")
    occ = grid.occupation
    tgt = _mask(pattern.target_sites, pattern.shape)
    exc = _mask(pattern.exclusion_frame, pattern.shape)
    return {
        "correctly_occupied": int((occ & tgt).sum()),
        "reservoir": int((occ & ~tgt & ~exc).sum()),
        "vacant_target": int((~occ & tgt).sum()),
        "frame_violations": int((occ & exc).sum()),
    }


def _mask(sites: Iterable, shape):
    m = np.zeros(shape, dtype=bool)
    for r, c in sites:
        m[r, c] = True
    return m
