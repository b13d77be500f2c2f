"""Circuit representation in the space domain.

The track is sampled once per lap as curvature and grade versus distance.
Multi-lap stint horizons tile this lap profile periodically.  The maximum
kinetic energy a driver can carry at each point is derived from a point-mass
lateral grip model with linear-in-v^2 downforce, so grip and aero
disturbances re-shape the bound consistently instead of it being a frozen
input profile.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import TrackError

# Grid construction constants: corner spacing, straight spacing, the
# curvature level separating the two, and the blending band between them.
STEP_CORNER = 5.0      # [m]
STEP_STRAIGHT = 25.0   # [m]
STEP_SIMULATION = 1.0  # [m]
KAPPA_CORNER = 1.0 / 200.0  # [1/m]
TRANSITION_BAND = 50.0      # [m]

MAX_SOURCE_SPACING = 5.0  # [m] coarsest acceptable lap sampling

G = 9.81  # [m/s^2]


@dataclass(frozen=True)
class PitZone:
    """Speed-limited zone in lap coordinates, active every lap."""

    s_start: float
    s_end: float
    v_limit: float  # [m/s]


@dataclass(frozen=True)
class TrackProfile:
    """One lap of circuit geometry sampled along the racing line.

    ``s`` runs from 0 to ``s_lap`` strictly increasing; ``kappa`` [1/m] is
    signed curvature and ``grade`` [rad] the longitudinal slope angle.
    Arrays are treated as immutable.  Grid construction additionally
    requires sampling no coarser than ``MAX_SOURCE_SPACING``.
    """

    s_lap: float
    s: np.ndarray
    kappa: np.ndarray
    grade: np.ndarray
    pit_zones: tuple[PitZone, ...] = field(default_factory=tuple)

    def __post_init__(self):
        s = np.asarray(self.s, dtype=float)
        kappa = np.asarray(self.kappa, dtype=float)
        grade = np.asarray(self.grade, dtype=float)
        if s.ndim != 1 or len(s) < 2:
            raise TrackError("track needs at least two samples")
        if len(kappa) != len(s) or len(grade) != len(s):
            raise TrackError("s, kappa, grade must have equal length")
        ds = np.diff(s)
        if np.any(ds <= 0):
            raise TrackError("s must be strictly increasing (duplicate or unsorted s)")
        if abs(s[0]) > 1e-9 or abs(s[-1] - self.s_lap) > 1e-6:
            raise TrackError("samples must span exactly [0, s_lap]")
        if not (np.all(np.isfinite(kappa)) and np.all(np.isfinite(grade))):
            raise TrackError("kappa and grade must be finite")
        for z in self.pit_zones:
            if not (0 <= z.s_start < z.s_end <= self.s_lap and z.v_limit > 0):
                raise TrackError(f"invalid pit zone {z}")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "kappa", kappa)
        object.__setattr__(self, "grade", grade)


@dataclass(frozen=True)
class GripState:
    """Multipliers applied to grip and aero plus an optional global speed cap."""

    mu_scale: float = 1.0
    aero_scale: float = 1.0
    v_cap: float | None = None  # [m/s]

    def __post_init__(self):
        if not (0.0 < self.mu_scale <= 1.5):
            raise TrackError(f"mu_scale {self.mu_scale} outside (0, 1.5]")
        if not (0.0 < self.aero_scale <= 1.5):
            raise TrackError(f"aero_scale {self.aero_scale} outside (0, 1.5]")
        if self.v_cap is not None and self.v_cap <= 0:
            raise TrackError("v_cap must be positive")


@dataclass(frozen=True)
class Grid:
    """Monotone node distances [m] over a stint horizon."""

    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or len(nodes) < 2:
            raise TrackError("grid needs at least two nodes")
        if np.any(np.diff(nodes) <= 0):
            raise TrackError("grid nodes must be strictly increasing")
        object.__setattr__(self, "nodes", nodes)

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def n_intervals(self) -> int:
        return len(self.nodes) - 1


def wrap_s(track: TrackProfile, s) -> np.ndarray:
    """Map stint distances onto lap coordinates [0, s_lap)."""
    return np.asarray(s, dtype=float) % track.s_lap


def kappa_at(track: TrackProfile, s) -> np.ndarray:
    """Signed curvature at stint distance(s), tiling the lap periodically."""
    return np.interp(wrap_s(track, s), track.s, track.kappa)


def grade_at(track: TrackProfile, s) -> np.ndarray:
    """Slope angle at stint distance(s), tiling the lap periodically."""
    return np.interp(wrap_s(track, s), track.s, track.grade)


def pit_speed_limit(track: TrackProfile, s) -> np.ndarray:
    """Per-position speed limit from pit zones, inf where unrestricted."""
    s_mod = np.atleast_1d(wrap_s(track, s))
    limit = np.full(s_mod.shape, np.inf)
    for z in track.pit_zones:
        inside = (s_mod >= z.s_start) & (s_mod < z.s_end)
        limit[inside] = np.minimum(limit[inside], z.v_limit)
    return limit


def _target_step(track: TrackProfile, s) -> np.ndarray:
    """Desired optimizer step at stint distance(s).

    5 m where |kappa| >= the corner threshold, 25 m far from any corner,
    linearly blended over a 50 m band measured as distance to the nearest
    corner sample (computed circularly on the lap).
    """
    corner = np.abs(track.kappa) >= KAPPA_CORNER
    if not corner.any():
        return np.full(np.shape(np.atleast_1d(s)), STEP_STRAIGHT)
    # circular distance from every lap sample to the nearest corner sample
    big = 2.0 * track.s_lap
    dist = np.where(corner, 0.0, big)
    for _ in range(2):  # two passes settle the circular wrap
        for i in range(1, len(dist)):
            dist[i] = min(dist[i], dist[i - 1] + (track.s[i] - track.s[i - 1]))
        for i in range(len(dist) - 2, -1, -1):
            dist[i] = min(dist[i], dist[i + 1] + (track.s[i + 1] - track.s[i]))
        gap = track.s[0] + track.s_lap - track.s[-1]
        dist[0] = min(dist[0], dist[-1] + gap)
        dist[-1] = min(dist[-1], dist[0] + gap)
    d = np.interp(wrap_s(track, s), track.s, dist)
    frac = np.clip(d / TRANSITION_BAND, 0.0, 1.0)
    return STEP_CORNER + (STEP_STRAIGHT - STEP_CORNER) * frac


def build_grid(track: TrackProfile, s0: float, s_stint: float, mode: str) -> Grid:
    """Construct the spatial grid for a horizon [s0, s_stint].

    ``mode`` is ``"optimizer"`` (variable 5-25 m steps, shrinking near
    corners) or ``"simulation"`` (uniform 1 m).  Endpoints land exactly on
    s0 and s_stint.
    """
    if not 0 <= s0 < s_stint:
        raise TrackError(f"empty or invalid horizon [{s0}, {s_stint}]")
    max_spacing = np.max(np.diff(track.s))
    if max_spacing > MAX_SOURCE_SPACING + 1e-9:
        raise TrackError(
            f"track sampling ({max_spacing:.2f} m) coarser than requested step"
        )
    if mode == "simulation":
        n = int(round((s_stint - s0) / STEP_SIMULATION))
        n = max(n, 1)
        return Grid(np.linspace(s0, s_stint, n + 1))
    if mode != "optimizer":
        raise TrackError(f"unknown grid mode {mode!r}")
    nodes = [float(s0)]
    while True:
        h = float(np.atleast_1d(_target_step(track, nodes[-1]))[0])
        nxt = nodes[-1] + h
        if nxt >= s_stint - 0.5 * STEP_CORNER:
            nodes.append(float(s_stint))
            break
        nodes.append(nxt)
    return Grid(np.array(nodes))


def _vmax_grip(kappa, mu_eff, m, rho_cl_a_eff, v_straight):
    """Grip-limited speed from the lateral force balance, per node.

    m v^2 |kappa| <= mu (m g + 0.5 rho_cl_a v^2)  resolves to
    v^2 = mu m g / (m |kappa| - mu 0.5 rho_cl_a) for positive denominators.
    Transition curvature below the corner threshold with a non-positive
    denominator is flat-out (straight cap applies); a genuine corner whose
    denominator closes is a modeling breakdown and rejected.
    """
    ak = np.abs(kappa)
    denom = m * ak - mu_eff * 0.5 * rho_cl_a_eff
    v = np.full(ak.shape, float(v_straight))
    limited = (ak > 1e-12) & (denom > 0)
    bad = (ak >= KAPPA_CORNER) & (denom <= 0)
    if bad.any():
        idx = int(np.argmax(bad))
        raise TrackError(f"downforce-unbounded corner at node {idx}")
    v[limited] = np.sqrt(mu_eff[limited] * m * G / denom[limited])
    return np.minimum(v, v_straight)


def max_kinetic_energy_arrays(
    track: TrackProfile,
    params,
    grid: Grid,
    mu_scale,
    aero_scale,
    v_cap=None,
) -> np.ndarray:
    """Per-node kinetic energy bound with per-node grip/aero/cap arrays.

    ``mu_scale``, ``aero_scale`` and ``v_cap`` may be scalars or arrays of
    the grid node count; ``v_cap`` entries of inf mean uncapped.  This is
    the disturbance-aware workhorse behind :func:`max_kinetic_energy`.
    """
    nodes = grid.nodes
    kappa = kappa_at(track, nodes)
    mu_eff = params.mu0 * np.broadcast_to(np.asarray(mu_scale, float), nodes.shape)
    cla_eff = params.rho_cl_A * np.broadcast_to(np.asarray(aero_scale, float), nodes.shape)
    v = _vmax_grip(kappa, mu_eff, params.m, cla_eff, params.v_max_straight)
    if v_cap is not None:
        v = np.minimum(v, np.broadcast_to(np.asarray(v_cap, float), nodes.shape))
    v = np.minimum(v, pit_speed_limit(track, nodes))
    return 0.5 * params.m_eq * v**2


def max_kinetic_energy(track: TrackProfile, params, grip: GripState, grid: Grid) -> np.ndarray:
    """Per-node maximum kinetic energy [J] under a uniform grip state."""
    cap = grip.v_cap if grip.v_cap is not None else np.inf
    return max_kinetic_energy_arrays(
        track, params, grid, grip.mu_scale, grip.aero_scale, cap
    )


def generate_synthetic_track(seed: int, n_corners: int, s_lap: float) -> TrackProfile:
    """Deterministic closed circuit of alternating straights and arcs.

    Corners are constant-radius arcs with linear curvature ramps on entry
    and exit; signed curvature integrates to 2 pi over the lap.  The start
    line sits on the main straight 200 m before the first corner entry, so
    lap transitions fall inside a braking approach as on most real
    circuits.  Intended as a desk-scale stand-in for real circuit data.
    """
    if n_corners < 1:
        raise TrackError("need at least one corner")
    if s_lap < 500:
        raise TrackError("s_lap must be at least 500 m")
    rng = np.random.default_rng(seed)
    ds = 2.0
    ramp = 30.0  # [m] linear curvature ramp on each corner side

    weights = rng.uniform(0.6, 1.4, n_corners)
    angles = 2.0 * np.pi * weights / weights.sum()
    radii = rng.uniform(25.0, 90.0, n_corners)

    def snap(x):
        return max(ds, round(x / ds) * ds)

    arcs = []
    kappas = []
    for theta, r in zip(angles, radii):
        arc = snap(max(10.0, theta * r - ramp))
        arcs.append(arc)
        kappas.append(theta / (arc + ramp))
    blocks = [a + 2 * ramp for a in arcs]
    budget = s_lap - sum(blocks)
    min_straight = 60.0
    if budget < n_corners * min_straight:
        raise TrackError(
            f"cannot close the lap: {sum(blocks):.0f} m of corners leaves "
            f"{budget:.0f} m for {n_corners} straights"
        )
    fractions = rng.uniform(0.5, 1.5, n_corners)
    straights = [snap(budget * f / fractions.sum()) for f in fractions]
    # absorb snapping error into the final straight so the lap closes exactly
    total = sum(straights) + sum(blocks)
    straights[-1] += s_lap - total
    if straights[-1] < min_straight / 2:
        raise TrackError("cannot close the lap within tolerance")

    # piecewise-linear curvature: knot list of (s, kappa)
    knots = [(0.0, 0.0)]
    pos = 0.0
    for i in range(n_corners):
        pos += straights[i]
        knots.append((pos, 0.0))
        pos += ramp
        knots.append((pos, kappas[i]))
        pos += arcs[i]
        knots.append((pos, kappas[i]))
        pos += ramp
        knots.append((pos, 0.0))
    assert abs(pos - s_lap) < 1e-6

    s = np.arange(0.0, s_lap + ds / 2, ds)
    ks, kv = zip(*knots)
    kappa = np.interp(s, np.array(ks), np.array(kv))
    # rotate the origin to 200 m before the first corner; straights are
    # snapped to ds so the shift is an exact number of samples
    lead = 200.0
    shift = int(round(max(0.0, straights[0] - lead) / ds))
    period = np.roll(kappa[:-1], -shift)
    kappa = np.append(period, period[0])
    # normalize so the trapezoidal curvature integral is exactly 2 pi
    integral = np.trapezoid(kappa, s)
    kappa *= 2.0 * np.pi / integral
    return TrackProfile(
        s_lap=float(s_lap), s=s, kappa=kappa, grade=np.zeros_like(s)
    )


def load_track_csv(path) -> TrackProfile:
    """Read a lap profile from CSV with header ``s,kappa,grade`` (m, 1/m, rad)."""
    rows = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != [
            "s",
            "kappa",
            "grade",
        ]:
            raise TrackError(f"expected header 's,kappa,grade' in {path}")
        for row in reader:
            rows.append((float(row["s"]), float(row["kappa"]), float(row["grade"])))
    if len(rows) < 2:
        raise TrackError(f"track file {path} has fewer than two rows")
    s = np.array([r[0] for r in rows])
    if np.any(np.diff(s) == 0):
        raise TrackError(f"duplicate s values in {path}")
    return TrackProfile(
        s_lap=float(s[-1]),
        s=s,
        kappa=np.array([r[1] for r in rows]),
        grade=np.array([r[2] for r in rows]),
    )


def save_track_csv(track: TrackProfile, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["s", "kappa", "grade"])
        for si, ki, gi in zip(track.s, track.kappa, track.grade):
            writer.writerow([repr(float(si)), repr(float(ki)), repr(float(gi))])
