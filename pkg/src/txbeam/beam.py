"""Beam pattern synthesis from transmit delays, focal laws, targets, objective.

A delay profile holds one delay per symmetric element pair (R_{-i} = R_{i-1}),
so the optimization variable has length aperture/2.  The beam pattern at a
single frequency is the modulus square of the delayed coherent element sum:

    P(x, z) = | sum_i H_i(x, z) * exp(-2j*pi*R_i*f0) |^2

over the active (centered) elements.  An equivalent pairwise cross-term
expansion is provided as an algebraic cross-check.  Power matrices are stored
depth-major (shape (n_depth, n_lateral)); flattening in C order gives the
unrolled index k = u + n_lateral * v with u the lateral index re-based to 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .field import ElementResponseMap, ProbeGeometry, SimulationGrid, active_element_indices

# Absolute slack (meters) for closed-rectangle boundary tests; far below any
# grid scale but above coordinate round-off.
_BOUNDARY_SLACK = 1e-12


def expand_symmetric(half_delays) -> np.ndarray:
    """Expand pair delays [R_0..R_{M-1}] to the full palindromic sequence
    [R_{M-1}, .., R_0, R_0, .., R_{M-1}] covering elements -M..M-1."""
    half = np.asarray(half_delays, dtype=float)
    if half.ndim != 1 or half.size == 0:
        raise ValueError("half_delays must be a non-empty 1-D sequence")
    return np.concatenate([half[::-1], half])


@dataclass(frozen=True)
class DelayProfile:
    """Symmetric transmit delays for `aperture` centered elements.

    half_delays[i] is the delay of elements i and -i-1 (seconds).  Delays are
    unconstrained finite reals; `canonical()` wraps them onto [0, 1/frequency).
    """

    aperture: int
    half_delays: np.ndarray
    frequency: float

    def __post_init__(self):
        half = np.asarray(self.half_delays, dtype=float)
        object.__setattr__(self, "half_delays", half)
        if self.aperture < 2 or self.aperture % 2 != 0:
            raise ValueError(f"aperture must be even and >= 2, got {self.aperture}")
        if half.shape != (self.aperture // 2,):
            raise ValueError(
                f"half_delays must have length aperture/2 = {self.aperture // 2}, "
                f"got shape {half.shape}"
            )
        if not np.all(np.isfinite(half)):
            raise ValueError("half_delays must be finite")
        if not self.frequency > 0:
            raise ValueError(f"frequency must be positive, got {self.frequency}")

    def full_delays(self) -> np.ndarray:
        return expand_symmetric(self.half_delays)

    def canonical(self) -> "DelayProfile":
        """Equivalent profile with each delay wrapped to [0, 1/frequency)."""
        period = 1.0 / self.frequency
        wrapped = np.mod(self.half_delays, period)
        wrapped[wrapped >= period] = 0.0
        return DelayProfile(self.aperture, wrapped, self.frequency)


@dataclass(frozen=True)
class PrescribedShape:
    """Rectangular target: value `inside_value` inside the closed rectangle
    |x| <= half_width, |z - z_center| <= z_length/2, else `outside_value`."""

    z_center: float
    z_length: float
    half_width: float
    inside_value: float = 1.0
    outside_value: float = 0.0

    def __post_init__(self):
        if not self.z_length > 0:
            raise ValueError(f"z_length must be positive, got {self.z_length}")
        if not self.half_width > 0:
            raise ValueError(f"half_width must be positive, got {self.half_width}")

    @property
    def z_min(self) -> float:
        return self.z_center - self.z_length / 2.0

    @property
    def z_max(self) -> float:
        return self.z_center + self.z_length / 2.0


@dataclass(frozen=True)
class BeamPattern:
    """Nonnegative power on the grid, shape (n_depth, n_lateral)."""

    grid: SimulationGrid
    power: np.ndarray
    frequency: float
    provenance: DelayProfile | None = None

    def __post_init__(self):
        power = np.asarray(self.power, dtype=float)
        object.__setattr__(self, "power", power)
        if power.shape != self.grid.shape:
            raise ValueError(f"power shape {power.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(power)):
            raise ValueError("power contains non-finite values")
        if power.size and power.min() < 0:
            raise ValueError(f"power contains negative values (min {power.min()})")

    def central_line(self) -> np.ndarray:
        """P(0, z) along depth."""
        return self.power[:, self.grid.center_index]

    def flattened(self) -> np.ndarray:
        """Unrolled power, k = u + n_lateral * v."""
        return self.power.ravel()


def _check_compatible(resp_map: ElementResponseMap, profile: DelayProfile) -> np.ndarray:
    if profile.frequency != resp_map.frequency:
        raise ValueError(
            f"profile frequency {profile.frequency} != response map frequency "
            f"{resp_map.frequency}"
        )
    if profile.aperture > resp_map.probe.num_elements:
        raise ValueError(
            f"aperture {profile.aperture} exceeds probe size {resp_map.probe.num_elements}"
        )
    return active_element_indices(resp_map.probe, profile.aperture)


def synthesize(resp_map: ElementResponseMap, profile: DelayProfile) -> BeamPattern:
    """Beam pattern via the modulus-squared coherent sum over active elements."""
    indices = _check_compatible(resp_map, profile)
    delays = profile.full_delays()
    phasors = np.exp(-2j * np.pi * profile.frequency * delays)
    n = resp_map.probe.half_count
    active = resp_map.responses[indices + n]
    z = np.tensordot(phasors, active, axes=(0, 0))
    power = z.real * z.real + z.imag * z.imag
    return BeamPattern(grid=resp_map.grid, power=power, frequency=resp_map.frequency, provenance=profile)


def synthesize_crossterm(resp_map: ElementResponseMap, profile: DelayProfile) -> BeamPattern:
    """Beam pattern via the pairwise expansion

        P = sum_{m,n} Re(H_m conj(H_n)) cos(D_mn) + Im(H_m conj(H_n)) sin(D_mn)

    with D_mn = 2*pi*f0*(R_m - R_n).  Algebraically identical to
    :func:`synthesize`; useful as a cross-check.  O(aperture^2) per point.
    """
    indices = _check_compatible(resp_map, profile)
    delays = profile.full_delays()
    n = resp_map.probe.half_count
    active = resp_map.responses[indices + n]
    n_active = active.shape[0]

    power = np.zeros(resp_map.grid.shape)
    two_pi_f = 2.0 * np.pi * profile.frequency
    for m in range(n_active):
        for k in range(n_active):
            cross = active[m] * np.conj(active[k])
            delta = two_pi_f * (delays[m] - delays[k])
            power += cross.real * np.cos(delta) + cross.imag * np.sin(delta)
    # The pairwise float sum can dip a few ulps below zero at deep nulls.
    np.maximum(power, 0.0, out=power)
    return BeamPattern(grid=resp_map.grid, power=power, frequency=resp_map.frequency, provenance=profile)


def standard_focal_law(
    probe: ProbeGeometry,
    aperture: int,
    focal_depth: float,
    sound_speed: float,
    frequency: float,
) -> DelayProfile:
    """Single-focus delay law: R_i = (d_max - d_i)/c with d_i the distance
    from element i's center to (0, focal_depth).  Delays are nonnegative and
    largest for the central pair."""
    if not focal_depth > 0:
        raise ValueError(f"focal_depth must be positive, got {focal_depth}")
    if aperture % 2 != 0:
        raise ValueError(f"aperture must be even, got {aperture}")
    indices = active_element_indices(probe, aperture)
    centers = np.array([probe.element_center(int(i)) for i in indices])
    dist = np.hypot(centers, focal_depth)
    delays = (dist.max() - dist) / sound_speed
    half = delays[aperture // 2 :]
    return DelayProfile(aperture=aperture, half_delays=half, frequency=frequency)


def rect_target(grid: SimulationGrid, shape: PrescribedShape) -> np.ndarray:
    """Discretize the prescribed rectangle on the grid, unrolled with
    k = u + n_lateral * v (closed rectangle: boundary points are inside)."""
    if shape.z_min < grid.depth_coords[0] - _BOUNDARY_SLACK or shape.z_max > grid.depth_coords[
        -1
    ] + _BOUNDARY_SLACK:
        raise ValueError(
            f"rectangle depth extent [{shape.z_min}, {shape.z_max}] outside grid "
            f"range [{grid.depth_coords[0]}, {grid.depth_coords[-1]}]"
        )
    in_x = np.abs(grid.lateral_coords) <= shape.half_width + _BOUNDARY_SLACK
    in_z = np.abs(grid.depth_coords - shape.z_center) <= shape.z_length / 2.0 + _BOUNDARY_SLACK
    mask = in_z[:, np.newaxis] & in_x[np.newaxis, :]
    target = np.where(mask, shape.inside_value, shape.outside_value)
    return target.ravel()


class DegenerateBeamError(ValueError):
    """The synthesized beam is identically zero; the normalized residual is
    undefined."""


class BeamObjective:
    """Least-squares distance between the max-normalized beam and a target.

    objective(R) = sum_k (X_k(R)/max_k X_k(R) - G_k)^2

    Active symmetric element pairs share a delay, so their responses are
    pre-summed; this folding is algebraically identical to the full element
    sum and halves the work.  `evaluate_many` scores a whole swarm of delay
    vectors with one matrix product.
    """

    def __init__(self, resp_map: ElementResponseMap, aperture: int, target: np.ndarray):
        if aperture % 2 != 0 or not 2 <= aperture <= resp_map.probe.num_elements:
            raise ValueError(
                f"aperture must be even and within [2, {resp_map.probe.num_elements}], "
                f"got {aperture}"
            )
        target = np.asarray(target, dtype=float).ravel()
        n_points = resp_map.grid.n_depth * resp_map.grid.n_lateral
        if target.size != n_points:
            raise ValueError(f"target length {target.size} != grid size {n_points}")
        n = resp_map.probe.half_count
        m = aperture // 2
        right = resp_map.responses[n : n + m]
        left = resp_map.responses[n - m : n][::-1]
        self._pair_responses = (right + left).reshape(m, n_points)
        self._target = target
        self.aperture = aperture
        self.frequency = resp_map.frequency
        self.grid = resp_map.grid

    @property
    def dimension(self) -> int:
        return self.aperture // 2

    def evaluate_many(self, half_delay_matrix: np.ndarray) -> np.ndarray:
        """Objective values for rows of a (n_vectors, aperture/2) matrix."""
        half = np.atleast_2d(np.asarray(half_delay_matrix, dtype=float))
        if half.shape[1] != self.dimension:
            raise ValueError(f"expected {self.dimension} delays per row, got {half.shape[1]}")
        phasors = np.exp(-2j * np.pi * self.frequency * half)
        z = phasors @ self._pair_responses
        power = z.real * z.real + z.imag * z.imag
        peak = power.max(axis=1)
        if np.any(peak == 0.0):
            raise DegenerateBeamError("beam pattern is identically zero")
        residual = power / peak[:, np.newaxis] - self._target[np.newaxis, :]
        return np.einsum("ij,ij->i", residual, residual)

    def __call__(self, half_delays: np.ndarray) -> float:
        return float(self.evaluate_many(np.asarray(half_delays)[np.newaxis, :])[0])


def ls_objective(
    resp_map: ElementResponseMap, half_delays, aperture: int, target: np.ndarray
) -> float:
    """Least-squares objective for one delay vector (see :class:`BeamObjective`)."""
    return BeamObjective(resp_map, aperture, target)(np.asarray(half_delays, dtype=float))


# ---------------------------------------------------------------------------
# File formats: CSV (linear power with coordinate headers) and 8-bit PGM (dB).

_FLOAT_FMT = "%.9g"


def _profile_provenance(profile: DelayProfile | None) -> dict:
    if profile is None:
        return {}
    return {
        "aperture": profile.aperture,
        "frequency_hz": profile.frequency,
        "half_delays_s": [float(v) for v in profile.half_delays],
    }


def beam_to_csv(bp: BeamPattern, path, provenance: dict | None = None) -> None:
    """Write: comment metadata, a header row of lateral coords, then one row
    per depth (depth coordinate first, linear power values after)."""
    meta = dict(provenance or {})
    meta.setdefault("frequency_hz", bp.frequency)
    lines = [f"# txbeam beam pattern v1", f"# meta: {json.dumps(meta, sort_keys=True)}"]
    header = ["z_m\\x_m"] + [_FLOAT_FMT % x for x in bp.grid.lateral_coords]
    lines.append(",".join(header))
    for v, z in enumerate(bp.grid.depth_coords):
        row = [_FLOAT_FMT % z] + [_FLOAT_FMT % p for p in bp.power[v]]
        lines.append(",".join(row))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def beam_from_csv(path) -> tuple[BeamPattern, dict]:
    """Parse a beam pattern CSV; returns the pattern and its metadata dict."""
    meta: dict = {}
    rows: list[list[str]] = []
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("meta:"):
                    try:
                        meta = json.loads(body[len("meta:") :])
                    except json.JSONDecodeError as exc:
                        raise ValueError(f"{path}:{lineno}: bad metadata JSON: {exc}") from exc
                continue
            rows.append(line.split(","))
    if not rows:
        raise ValueError(f"{path}: no data rows")
    try:
        lateral = np.array([float(v) for v in rows[0][1:]])
        depths = np.array([float(r[0]) for r in rows[1:]])
        power = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    except (ValueError, IndexError) as exc:
        raise ValueError(f"{path}: malformed beam CSV: {exc}") from exc
    if power.shape != (depths.size, lateral.size):
        raise ValueError(
            f"{path}: inconsistent row lengths (expected {lateral.size} values per row)"
        )
    frequency = float(meta.get("frequency_hz", 0.0))
    if frequency <= 0:
        raise ValueError(f"{path}: missing or invalid frequency_hz metadata")
    grid = SimulationGrid(lateral_coords=lateral, depth_coords=depths)
    return BeamPattern(grid=grid, power=power, frequency=frequency), meta


def beam_to_pgm(bp: BeamPattern, path, db_floor: float = -40.0, comment: str = "") -> None:
    """8-bit binary PGM of the beam in dB relative to the grid maximum,
    clipped at `db_floor` (rows = depth, columns = lateral)."""
    if db_floor >= 0:
        raise ValueError(f"db_floor must be negative, got {db_floor}")
    peak = bp.power.max()
    if peak <= 0:
        raise DegenerateBeamError("cannot render an all-zero beam pattern")
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(bp.power / peak)
    db = np.clip(db, db_floor, 0.0)
    gray = np.round((db - db_floor) / (-db_floor) * 255.0).astype(np.uint8)
    header = f"P5\n"
    if comment:
        header += f"# {comment}\n"
    header += f"{gray.shape[1]} {gray.shape[0]}\n255\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(gray.tobytes())
