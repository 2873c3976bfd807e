"""Probe geometry, propagation medium, image grid and per-element field responses.

The probe is a linear array of ``2N`` rectangular elements centered on the
origin.  Restricting the surface integral to the imaging plane, each element
radiates as a line of point sources; the single-frequency response of element
``i`` at a field point is a midpoint-quadrature sum of attenuated spherical
waves over sub-element midpoints.  A brute-force time-domain power estimate is
provided as an independent cross-check of the frequency-domain synthesis.

Conventions: SI units (meters, seconds, Hz) everywhere; forward phase kernel
``exp(-2j*pi*f0*t)`` so a pure propagation delay ``r/c`` maps to
``exp(-2j*pi*f0*r/c)``.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"TXBRMAP1"
FORMAT_VERSION = 1


class SingularSourceError(ValueError):
    """A field point coincides with a sub-element source point."""


@dataclass(frozen=True)
class ProbeGeometry:
    """Linear array of 2N elements; element i (i = -N..N-1) is centered at
    (i + 1/2) * pitch."""

    num_elements: int
    pitch: float
    element_width: float

    def __post_init__(self):
        if self.num_elements < 2 or self.num_elements % 2 != 0:
            raise ValueError(f"num_elements must be even and >= 2, got {self.num_elements}")
        if not self.pitch > 0:
            raise ValueError(f"pitch must be positive, got {self.pitch}")
        if not 0 < self.element_width <= self.pitch:
            raise ValueError(
                f"element_width must be in (0, pitch={self.pitch}], got {self.element_width}"
            )

    @property
    def half_count(self) -> int:
        return self.num_elements // 2

    def element_center(self, i: int) -> float:
        """Lateral center of element i, i in [-N, N-1]."""
        n = self.half_count
        if not -n <= i <= n - 1:
            raise ValueError(f"element index {i} outside [-{n}, {n - 1}]")
        return (i + 0.5) * self.pitch

    def element_centers(self) -> np.ndarray:
        """Centers of all elements in index order i = -N..N-1."""
        n = self.half_count
        return (np.arange(-n, n) + 0.5) * self.pitch


@dataclass(frozen=True)
class Medium:
    """Homogeneous medium: sound speed in m/s, attenuation in dB/(MHz*cm)."""

    sound_speed: float
    attenuation: float = 0.0

    def __post_init__(self):
        if not self.sound_speed > 0:
            raise ValueError(f"sound_speed must be positive, got {self.sound_speed}")
        if self.attenuation < 0:
            raise ValueError(f"attenuation must be >= 0, got {self.attenuation}")


@dataclass(frozen=True)
class SimulationGrid:
    """Image-plane sampling grid.

    ``lateral_coords`` must be strictly increasing, symmetric about 0 and of
    odd length (so the beam axis x=0 is a grid column); ``depth_coords``
    strictly increasing and positive (the z=0 source plane is singular).
    """

    lateral_coords: np.ndarray
    depth_coords: np.ndarray

    def __post_init__(self):
        lat = np.asarray(self.lateral_coords, dtype=float)
        dep = np.asarray(self.depth_coords, dtype=float)
        object.__setattr__(self, "lateral_coords", lat)
        object.__setattr__(self, "depth_coords", dep)
        if lat.ndim != 1 or dep.ndim != 1 or lat.size < 1 or dep.size < 1:
            raise ValueError("grid coordinates must be non-empty 1-D arrays")
        if np.any(np.diff(lat) <= 0) or np.any(np.diff(dep) <= 0):
            raise ValueError("grid coordinates must be strictly increasing")
        if dep[0] <= 0:
            raise ValueError(f"depth coordinates must be positive, got min {dep[0]}")
        if lat.size % 2 != 1:
            raise ValueError("lateral coordinate count must be odd (x=0 on the grid)")
        scale = max(abs(lat[0]), abs(lat[-1]), 1e-300)
        if np.max(np.abs(lat + lat[::-1])) > 1e-9 * scale:
            raise ValueError("lateral coordinates must be symmetric about 0")

    @property
    def n_lateral(self) -> int:
        return self.lateral_coords.size

    @property
    def n_depth(self) -> int:
        return self.depth_coords.size

    @property
    def center_index(self) -> int:
        """Index of the x=0 column."""
        return self.lateral_coords.size // 2

    @property
    def shape(self) -> tuple[int, int]:
        """(n_depth, n_lateral): depth-major, lateral-fastest layout."""
        return (self.n_depth, self.n_lateral)


@dataclass(frozen=True)
class ElementResponseMap:
    """Per-element complex field response at a single frequency.

    ``responses`` has shape (num_elements, n_depth, n_lateral) in element
    index order i = -N..N-1; entry [j, v, u] is the response of element
    i = j - N at grid point (lateral_coords[u], depth_coords[v]).
    """

    frequency: float
    grid: SimulationGrid
    responses: np.ndarray
    subdivisions: int
    probe: ProbeGeometry
    medium: Medium

    def __post_init__(self):
        resp = np.asarray(self.responses, dtype=np.complex128)
        object.__setattr__(self, "responses", resp)
        expected = (self.probe.num_elements, self.grid.n_depth, self.grid.n_lateral)
        if resp.shape != expected:
            raise ValueError(f"responses shape {resp.shape} != expected {expected}")
        if not np.all(np.isfinite(resp)):
            raise ValueError("responses contain non-finite values")

    def element_response(self, i: int) -> np.ndarray:
        """Response of element i (i = -N..N-1), shape (n_depth, n_lateral)."""
        return self.responses[i + self.probe.half_count]


def build_grid(
    probe: ProbeGeometry, depth_min: float, depth_max: float, depth_step: float
) -> SimulationGrid:
    """Standard grid: lateral x_u = u*pitch/4 for u = -4N..4N (8N+1 points),
    depths depth_min, depth_min+depth_step, ... <= depth_max."""
    if not depth_min > 0:
        raise ValueError(f"depth_min must be positive (z=0 is singular), got {depth_min}")
    if not depth_max > depth_min:
        raise ValueError(f"depth_max ({depth_max}) must exceed depth_min ({depth_min})")
    if not depth_step > 0:
        raise ValueError(f"depth_step must be positive, got {depth_step}")
    four_n = 2 * probe.num_elements
    lateral = np.arange(-four_n, four_n + 1) * (probe.pitch / 4.0)
    n_steps = int(np.floor((depth_max - depth_min) / depth_step + 1e-9))
    depths = depth_min + depth_step * np.arange(n_steps + 1)
    return SimulationGrid(lateral_coords=lateral, depth_coords=depths)


def attenuation_factor(path_length, frequency: float, medium: Medium):
    """Amplitude attenuation 10**(-alpha * f[MHz] * r[cm] / 20) over a path.

    Accepts scalar or ndarray path lengths (meters).
    """
    r = np.asarray(path_length, dtype=float)
    if np.any(r < 0):
        raise ValueError("path_length must be >= 0")
    db = medium.attenuation * (frequency / 1e6) * (r * 100.0)
    out = 10.0 ** (-db / 20.0)
    return out if out.ndim else float(out)


def default_subdivisions(probe: ProbeGeometry, medium: Medium, frequency: float) -> int:
    """Smallest sub-element count giving sub-element width <= lambda/8."""
    wavelength = medium.sound_speed / frequency
    return max(1, int(np.ceil(probe.element_width / (wavelength / 8.0))))


def _subelement_offsets(element_width: float, subdivisions: int) -> np.ndarray:
    """Midpoints of `subdivisions` equal sub-elements spanning the width,
    relative to the element center.  Symmetrized so off[s] == -off[-1-s]
    bit-exactly."""
    k = np.arange(subdivisions) + 0.5
    off = (k / subdivisions - 0.5) * element_width
    return 0.5 * (off - off[::-1])


def active_element_indices(probe: ProbeGeometry, aperture: int) -> np.ndarray:
    """Indices of the `aperture` centered active elements.

    Even apertures give the symmetric block -a/2..a/2-1; aperture 1 gives
    element 0 (useful for single-element checks).
    """
    if not 1 <= aperture <= probe.num_elements:
        raise ValueError(f"aperture {aperture} outside [1, {probe.num_elements}]")
    lo = -(aperture // 2)
    return np.arange(lo, lo + aperture)


def element_frequency_response(
    probe: ProbeGeometry,
    medium: Medium,
    grid: SimulationGrid,
    frequency: float,
    subdivisions: int | None = None,
) -> ElementResponseMap:
    """Compute the per-element single-frequency response map on the grid.

    For element i and grid point (x, z):

        H_i(x, z) = sum_s w * A(r_s) * exp(-2j*pi*f0*r_s/c) / (2*pi*r_s)

    with w = element_width/subdivisions, r_s the distance from the s-th
    sub-element midpoint, and A the attenuation factor.  Right-half elements
    (i >= 0) are computed directly; left-half ones are their exact lateral
    mirrors, so H_i(x, z) == H_{-i-1}(-x, z) bit-for-bit.
    """
    if not frequency > 0:
        raise ValueError(f"frequency must be positive, got {frequency}")
    if subdivisions is None:
        subdivisions = default_subdivisions(probe, medium, frequency)
    if subdivisions < 1:
        raise ValueError(f"subdivisions must be >= 1, got {subdivisions}")

    n = probe.half_count
    offsets = _subelement_offsets(probe.element_width, subdivisions)
    weight = probe.element_width / subdivisions
    k_wave = 2.0 * np.pi * frequency / medium.sound_speed

    x = grid.lateral_coords[np.newaxis, :]
    z = grid.depth_coords[:, np.newaxis]
    responses = np.empty((probe.num_elements, grid.n_depth, grid.n_lateral), dtype=np.complex128)
    for i in range(n):
        center = probe.element_center(i)
        acc = np.zeros((grid.n_depth, grid.n_lateral), dtype=np.complex128)
        for off in offsets:
            r = np.hypot(x - (center + off), z)
            if np.any(r == 0.0):
                v, u = np.argwhere(r == 0.0)[0]
                raise SingularSourceError(
                    f"grid point (x={grid.lateral_coords[u]!r}, z={grid.depth_coords[v]!r}) "
                    f"coincides with a sub-element source of element {i}"
                )
            amp = weight * attenuation_factor(r, frequency, medium) / (2.0 * np.pi * r)
            acc += amp * np.exp(-1j * k_wave * r)
        responses[n + i] = acc
        responses[n - 1 - i] = acc[:, ::-1]

    return ElementResponseMap(
        frequency=frequency,
        grid=grid,
        responses=responses,
        subdivisions=subdivisions,
        probe=probe,
        medium=medium,
    )


def time_domain_power(
    probe: ProbeGeometry,
    medium: Medium,
    point: tuple[float, float],
    delays: np.ndarray,
    frequency: float,
    samples_per_period: int = 64,
    subdivisions: int | None = None,
) -> float:
    """Brute-force time-domain power of the summed cosine wavefront at a point.

    Builds s(t) = sum_{i,s} a_{i,s} * cos(2*pi*f0*(t - R_i - r_{i,s}/c)) on
    `samples_per_period` uniform times over one period and returns mean(s**2).
    Independent oracle for the frequency-domain synthesis: it equals
    (1/2) * |sum_i H_i * exp(-2j*pi*R_i*f0)|^2, the 1/2 being the mean power
    of a unit real cosine versus the complex-envelope modulus square.
    """
    if samples_per_period < 8:
        raise ValueError(f"samples_per_period must be >= 8, got {samples_per_period}")
    if not frequency > 0:
        raise ValueError(f"frequency must be positive, got {frequency}")
    delays = np.asarray(delays, dtype=float)
    if subdivisions is None:
        subdivisions = default_subdivisions(probe, medium, frequency)

    indices = active_element_indices(probe, len(delays))
    offsets = _subelement_offsets(probe.element_width, subdivisions)
    weight = probe.element_width / subdivisions
    px, pz = float(point[0]), float(point[1])

    # Source lateral positions, per (element, sub-element).
    centers = np.array([probe.element_center(int(i)) for i in indices])
    src_x = centers[:, np.newaxis] + offsets[np.newaxis, :]
    r = np.hypot(px - src_x, pz)
    if np.any(r == 0.0):
        i, s = np.argwhere(r == 0.0)[0]
        raise SingularSourceError(
            f"point (x={px!r}, z={pz!r}) coincides with sub-element {s} "
            f"of element {int(indices[i])}"
        )
    amp = weight * attenuation_factor(r, frequency, medium) / (2.0 * np.pi * r)
    arrival = delays[:, np.newaxis] + r / medium.sound_speed

    period = 1.0 / frequency
    t = np.arange(samples_per_period) * (period / samples_per_period)
    phases = 2.0 * np.pi * frequency * (t[:, np.newaxis] - arrival.ravel()[np.newaxis, :])
    s = np.cos(phases) @ amp.ravel()
    return float(np.mean(s * s))


def _probe_medium_hash(probe: ProbeGeometry, medium: Medium) -> bytes:
    text = "|".join(
        repr(v)
        for v in (
            probe.num_elements,
            probe.pitch,
            probe.element_width,
            medium.sound_speed,
            medium.attenuation,
        )
    )
    return hashlib.sha256(text.encode()).digest()[:8]


_HEADER = struct.Struct("<8sIIIII5d8s")


def save_response_map(resp_map: ElementResponseMap, path) -> None:
    """Write a response map cache file (versioned header + little-endian
    float64 data, element-major then depth-major then lateral, interleaved
    real/imag)."""
    grid = resp_map.grid
    header = _HEADER.pack(
        MAGIC,
        FORMAT_VERSION,
        resp_map.probe.num_elements,
        resp_map.subdivisions,
        grid.n_lateral,
        grid.n_depth,
        resp_map.frequency,
        resp_map.probe.pitch,
        resp_map.probe.element_width,
        resp_map.medium.sound_speed,
        resp_map.medium.attenuation,
        _probe_medium_hash(resp_map.probe, resp_map.medium),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(grid.lateral_coords.astype("<f8").tobytes())
        fh.write(grid.depth_coords.astype("<f8").tobytes())
        fh.write(resp_map.responses.astype("<c16").tobytes())


def load_response_map(path) -> ElementResponseMap:
    """Read a cache file written by :func:`save_response_map`; values are
    reproduced bit-exactly."""
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        if len(raw) < _HEADER.size:
            raise ValueError(f"{path}: truncated header")
        (
            magic,
            version,
            num_elements,
            subdivisions,
            n_lateral,
            n_depth,
            frequency,
            pitch,
            element_width,
            sound_speed,
            attenuation,
            stored_hash,
        ) = _HEADER.unpack(raw)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported format version {version}")
        probe = ProbeGeometry(num_elements=num_elements, pitch=pitch, element_width=element_width)
        medium = Medium(sound_speed=sound_speed, attenuation=attenuation)
        if _probe_medium_hash(probe, medium) != stored_hash:
            raise ValueError(f"{path}: probe/medium hash mismatch (corrupt header)")
        lateral = np.frombuffer(fh.read(8 * n_lateral), dtype="<f8").astype(float)
        depths = np.frombuffer(fh.read(8 * n_depth), dtype="<f8").astype(float)
        count = num_elements * n_depth * n_lateral
        data = np.frombuffer(fh.read(16 * count), dtype="<c16")
        if data.size != count:
            raise ValueError(f"{path}: truncated data section")
        responses = data.astype(np.complex128).reshape(num_elements, n_depth, n_lateral)
    grid = SimulationGrid(lateral_coords=lateral, depth_coords=depths)
    return ElementResponseMap(
        frequency=frequency,
        grid=grid,
        responses=responses,
        subdivisions=subdivisions,
        probe=probe,
        medium=medium,
    )
