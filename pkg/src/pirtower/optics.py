"""Virtual-beam geometry of the sensor tower.

Every lens is an ideal pinhole per lenslet.  The pixel plane of a lens is the
vertical plane ``y = focal_point.y`` facing +y; pixel-plane coordinates
``(u, v)`` are measured from the focal point along +x and +z.  A lenslet's
optical centre sits one focal length from the focal point along its azimuth,
so each (pixel rectangle, lenslet) pair casts one virtual beam.

Because the pixel plane and any plane ``y = R`` are parallel, a beam's
footprint (its virtual pixel) is an exact, axis-aligned rectangle; it is still
returned as four corners so callers need not rely on that.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

CHANNEL_NAMES: Tuple[str, ...] = ("A", "B", "C", "D", "L1", "L2", "R1", "R2")
LENS_SHARING: Dict[str, Tuple[str, str]] = {
    "multilens_AB": ("A", "B"),
    "multilens_CD": ("C", "D"),
    "spot_L": ("L1", "L2"),
    "spot_R": ("R1", "R2"),
}

Rect = Tuple[float, float, float, float]  # (u0, u1, v0, v1) in the pixel plane, metres


def _rect_corners(rect: Rect) -> np.ndarray:
    u0, u1, v0, v1 = rect
    return np.array([[u0, v0], [u1, v0], [u1, v1], [u0, v1]], dtype=float)


@dataclass(frozen=True)
class PixelPair:
    """Two differentially wired pixels of one channel."""

    positive_pixel_rect: Rect
    negative_pixel_rect: Rect
    vertical_offset: float

    @classmethod
    def from_dimensions(cls, width: float, height: float, gap: float,
                        vertical_offset: float) -> "PixelPair":
        """Side-by-side pair centred at ``(0, vertical_offset)``; positive on the -u side."""
        v0, v1 = vertical_offset - height / 2.0, vertical_offset + height / 2.0
        pos = (-gap / 2.0 - width, -gap / 2.0, v0, v1)
        neg = (gap / 2.0, gap / 2.0 + width, v0, v1)
        return cls(pos, neg, vertical_offset)

    def validate(self, aperture_radius: Optional[float] = None) -> None:
        for r in (self.positive_pixel_rect, self.negative_pixel_rect):
            if not (r[1] > r[0] and r[3] > r[2]):
                raise ValueError(f"empty pixel rectangle {r}")
        p, n = self.positive_pixel_rect, self.negative_pixel_rect
        wp, hp = p[1] - p[0], p[3] - p[2]
        wn, hn = n[1] - n[0], n[3] - n[2]
        if not (np.isclose(wp, wn, rtol=1e-9, atol=0) and np.isclose(hp, hn, rtol=1e-9, atol=0)):
            raise ValueError("positive and negative pixels are not congruent")
        overlap_u = min(p[1], n[1]) - max(p[0], n[0])
        overlap_v = min(p[3], n[3]) - max(p[2], n[2])
        if overlap_u > 0 and overlap_v > 0:
            raise ValueError("positive and negative pixels overlap")
        if aperture_radius is not None and abs(self.vertical_offset) >= aperture_radius:
            raise ValueError(
                f"vertical offset {self.vertical_offset} m is not inside the aperture "
                f"radius {aperture_radius} m")


@dataclass(frozen=True)
class LensSystem:
    kind: str  # "spot" | "multi"
    focal_point: Tuple[float, float, float]
    focal_length: float
    lenslet_azimuths: Tuple[float, ...]  # radians, 0 = straight ahead (+y), positive towards +x
    aperture_area: float
    transmission: float = 1.0
    filter_fraction: float = 1.0

    @property
    def lenslet_centers(self) -> np.ndarray:
        az = np.asarray(self.lenslet_azimuths, dtype=float)
        fp = np.asarray(self.focal_point, dtype=float)
        offs = self.focal_length * np.stack([np.sin(az), np.cos(az), np.zeros_like(az)], axis=1)
        return fp[None, :] + offs

    @property
    def aperture_radius(self) -> float:
        return float(np.sqrt(self.aperture_area / np.pi))

    def validate(self) -> None:
        if self.kind not in ("spot", "multi"):
            raise ValueError(f"unknown lens kind {self.kind!r}")
        n = len(self.lenslet_azimuths)
        if self.kind == "spot" and n != 1:
            raise ValueError("a spot lens has exactly one lenslet")
        if self.kind == "multi" and n < 2:
            raise ValueError("a multi-lens needs at least two lenslets")
        if not self.focal_length > 0:
            raise ValueError("focal_length must be positive")
        if not self.aperture_area > 0:
            raise ValueError("aperture area must be positive")
        for name, val in (("transmission", self.transmission), ("filter_fraction", self.filter_fraction)):
            if not 0.0 < val <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {val}")
        if any(abs(a) >= np.pi / 2 for a in self.lenslet_azimuths):
            raise ValueError("lenslet azimuths must be within +-90 degrees")


@dataclass(frozen=True)
class Channel:
    name: str
    pixels: PixelPair
    lens: str


@dataclass(frozen=True)
class SensorTowerConfig:
    channels: Tuple[Channel, ...]
    lenses: Dict[str, LensSystem]
    sample_rate: float = 20.0
    samples_per_event: int = 1024

    @property
    def channel_names(self) -> Tuple[str, ...]:
        return tuple(c.name for c in self.channels)

    def channel(self, name: str) -> Channel:
        for c in self.channels:
            if c.name == name:
                return c
        raise KeyError(name)

    def lens_of(self, channel: str) -> LensSystem:
        return self.lenses[self.channel(channel).lens]

    def mounting_height(self, channel: str) -> float:
        return float(self.lens_of(channel).focal_point[2])

    @property
    def multilens_AB(self) -> LensSystem:
        return self.lenses["multilens_AB"]

    @property
    def multilens_CD(self) -> LensSystem:
        return self.lenses["multilens_CD"]

    @property
    def spot_L(self) -> LensSystem:
        return self.lenses["spot_L"]

    @property
    def spot_R(self) -> LensSystem:
        return self.lenses["spot_R"]

    def validate(self, full_tower: bool = True) -> None:
        """Check geometry; with ``full_tower`` also the fixed 8-channel layout."""
        for lens in self.lenses.values():
            lens.validate()
        names = self.channel_names
        if len(set(names)) != len(names):
            raise ValueError("duplicate channel names")
        for c in self.channels:
            if c.lens not in self.lenses:
                raise ValueError(f"channel {c.name} refers to unknown lens {c.lens!r}")
            c.pixels.validate(self.lenses[c.lens].aperture_radius)
        if self.sample_rate <= 0 or self.samples_per_event <= 0:
            raise ValueError("sample rate and samples per event must be positive")
        if not full_tower:
            return
        if names != CHANNEL_NAMES:
            raise ValueError(f"channels must be exactly {CHANNEL_NAMES}, got {names}")
        for lens_name, members in LENS_SHARING.items():
            if lens_name not in self.lenses:
                raise ValueError(f"missing lens {lens_name}")
            for ch in members:
                if self.channel(ch).lens != lens_name:
                    raise ValueError(f"channel {ch} must use {lens_name}")
        for lens_name in ("multilens_AB", "multilens_CD"):
            if self.lenses[lens_name].kind != "multi":
                raise ValueError(f"{lens_name} must be a multi-lens")
        for lens_name in ("spot_L", "spot_R"):
            if self.lenses[lens_name].kind != "spot":
                raise ValueError(f"{lens_name} must be a spot lens")


@dataclass(frozen=True, eq=False)
class VirtualBeam:
    channel: str
    lenslet_index: int
    polarity: int
    origin: np.ndarray  # lenslet optical centre
    frustum: np.ndarray  # (4, 3) unit corner rays
    lens: str = ""
    rect: Rect = field(default=(0.0, 0.0, 0.0, 0.0))

    @property
    def key(self) -> Tuple[str, int, int]:
        return (self.channel, self.lenslet_index, self.polarity)


def _pixel_point(lens: LensSystem, uv: np.ndarray) -> np.ndarray:
    fp = np.asarray(lens.focal_point, dtype=float)
    pts = np.zeros((len(uv), 3))
    pts[:, 0] = fp[0] + uv[:, 0]
    pts[:, 1] = fp[1]
    pts[:, 2] = fp[2] + uv[:, 1]
    return pts


def build_virtual_beams(config: SensorTowerConfig) -> List[VirtualBeam]:
    """One beam per (pixel rectangle, lenslet), in channel order then lenslet then +/-."""
    beams: List[VirtualBeam] = []
    for ch in config.channels:
        lens = config.lenses[ch.lens]
        for rect in (ch.pixels.positive_pixel_rect, ch.pixels.negative_pixel_rect):
            u0, u1, v0, v1 = rect
            if u0 < 0.0 < u1 and v0 < 0.0 < v1:
                raise ValueError(
                    f"channel {ch.name}: pixel rectangle {rect} straddles the optical axis "
                    "in both directions (degenerate beam)")
        for i, center in enumerate(lens.lenslet_centers):
            for polarity, rect in ((1, ch.pixels.positive_pixel_rect),
                                   (-1, ch.pixels.negative_pixel_rect)):
                corners = _pixel_point(lens, _rect_corners(rect))
                dirs = center[None, :] - corners
                dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
                beams.append(VirtualBeam(ch.name, i, polarity, center.copy(), dirs, ch.lens, rect))
    return beams


@dataclass
class VpaFootprints:
    """Result of :func:`vpa_at_plane`: plane coordinates are ``(x, z)``."""

    range_m: float
    quads: List[Tuple[Tuple[str, int, int], np.ndarray]]
    parallel: List[Tuple[str, int, int]]

    def as_dict(self) -> Dict[Tuple[str, int, int], np.ndarray]:
        return dict(self.quads)


def vpa_at_plane(beams: Sequence[VirtualBeam], range_m: float, eps: float = 1e-12) -> VpaFootprints:
    """Intersect every beam with the vertical plane ``y = range_m``.

    Beams whose corner rays are parallel to the plane, or point away from it,
    are listed in ``parallel`` instead of receiving a quadrilateral.
    """
    if not range_m > 0:
        raise ValueError(f"plane range must be positive, got {range_m}")
    quads, parallel = [], []
    for b in beams:
        dy = range_m - b.origin[1]
        if abs(dy) < eps:
            raise ValueError(f"plane y={range_m} passes through the optical centre of beam {b.key}")
        ray_y = b.frustum[:, 1]
        if np.any(np.abs(ray_y) < eps) or np.any(np.sign(ray_y) != np.sign(dy)):
            parallel.append(b.key)
            continue
        t = dy / ray_y
        pts = b.origin[None, :] + t[:, None] * b.frustum
        quads.append((b.key, pts[:, [0, 2]]))
    return VpaFootprints(range_m, quads, parallel)


def quad_area(quad: np.ndarray) -> float:
    x, y = quad[:, 0], quad[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


@dataclass
class RowSeparationReport:
    min_gap_m: Optional[float]  # signed; negative means rows B and C overlap
    at_range_m: Optional[float]
    range_min_m: float
    range_max_m: float
    vacuous: bool = False

    @property
    def separated(self) -> bool:
        return self.vacuous or (self.min_gap_m is not None and self.min_gap_m >= 0.0)


def check_row_separation(config: SensorTowerConfig, r_min: float = 5.0, r_max: float = 10.0,
                         n_ranges: int = 101) -> RowSeparationReport:
    """Smallest vertical gap between row B's bottom and row C's top over a range interval.

    Gaps are measured between B and C footprints whose horizontal extents
    overlap, i.e. footprints that could be confused for one another.
    """
    names = config.channel_names
    if "B" not in names or "C" not in names or config.channel("B").lens == config.channel("C").lens:
        return RowSeparationReport(None, None, r_min, r_max, vacuous=True)
    beams = [b for b in build_virtual_beams(config) if b.channel in ("B", "C")]
    best, best_r = np.inf, None
    for r in np.linspace(r_min, r_max, n_ranges):
        fp = vpa_at_plane(beams, float(r))
        b_quads = [q for k, q in fp.quads if k[0] == "B"]
        c_quads = [q for k, q in fp.quads if k[0] == "C"]
        for qb in b_quads:
            for qc in c_quads:
                if min(qb[:, 0].max(), qc[:, 0].max()) <= max(qb[:, 0].min(), qc[:, 0].min()):
                    continue
                gap = qb[:, 1].min() - qc[:, 1].max()
                if gap < best:
                    best, best_r = float(gap), float(r)
    if best_r is None:
        return RowSeparationReport(None, None, r_min, r_max, vacuous=True)
    return RowSeparationReport(best, best_r, r_min, r_max)
