"""Spherical-Earth geometry: distances, caps, region clipping, and centroids.

Everything here works on a sphere of radius ``EARTH_RADIUS_KM``.  Constraint
regions are represented as densely sampled boundary polygons and clipped
incrementally; ``grid_oracle`` provides an independent brute-force check of
area and centroid for any set of caps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

EARTH_RADIUS_KM = 6371.0088  # IUGG mean radius
HALF_CIRCUMFERENCE_KM = math.pi * EARTH_RADIUS_KM
GEO_TOLERANCE_KM = 0.1  # boundary tolerance for membership and clipping
DEFAULT_BOUNDARY_POINTS = 720
ARC_STEP_DEG = 360.0 / DEFAULT_BOUNDARY_POINTS  # spacing of inserted arc points


class DegenerateRegionError(ValueError):
    """Region too degenerate for a centroid (vertex directions cancel out)."""


@dataclass(frozen=True)
class GeoPoint:
    """A position on the sphere; lat in [-90, 90], lon normalized to (-180, 180]."""

    lat: float
    lon: float

    def __post_init__(self) -> None:
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude out of range: {self.lat}")
        lon = math.fmod(self.lon, 360.0)
        if lon <= -180.0:
            lon += 360.0
        elif lon > 180.0:
            lon -= 360.0
        object.__setattr__(self, "lon", lon)


@dataclass(frozen=True)
class SphericalCap:
    """All points within ``radius_km`` (great-circle) of ``center``."""

    center: GeoPoint
    radius_km: float
    landmark_id: str = ""

    def __post_init__(self) -> None:
        if not 0.0 < self.radius_km <= HALF_CIRCUMFERENCE_KM:
            raise ValueError(f"cap radius out of range: {self.radius_km}")

    def contains(self, point: GeoPoint, tol_km: float = GEO_TOLERANCE_KM) -> bool:
        return great_circle_distance(self.center, point) <= self.radius_km + tol_km


def _unit(lat_deg, lon_deg) -> np.ndarray:
    """Unit vector(s) for lat/lon in degrees; stacks along the last axis."""
    lat = np.radians(lat_deg)
    lon = np.radians(lon_deg)
    cos_lat = np.cos(lat)
    return np.stack((cos_lat * np.cos(lon), cos_lat * np.sin(lon), np.sin(lat)), axis=-1)


def _point_vec(p: GeoPoint) -> np.ndarray:
    return _unit(p.lat, p.lon)


def _vec_point(v: np.ndarray) -> GeoPoint:
    lat = math.degrees(math.asin(max(-1.0, min(1.0, float(v[2])))))
    lon = math.degrees(math.atan2(float(v[1]), float(v[0])))
    return GeoPoint(lat, lon)


def _frame(p: GeoPoint) -> tuple[np.ndarray, np.ndarray]:
    """Local (north, east) unit vectors at ``p``; at the poles the frame is
    anchored to the point's stored longitude."""
    lat = math.radians(p.lat)
    lon = math.radians(p.lon)
    north = np.array(
        [-math.sin(lat) * math.cos(lon), -math.sin(lat) * math.sin(lon), math.cos(lat)]
    )
    east = np.array([-math.sin(lon), math.cos(lon), 0.0])
    return north, east


def great_circle_distance(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in kilometers between two points."""
    va = _point_vec(a)
    vb = _point_vec(b)
    cross = np.cross(va, vb)
    angle = math.atan2(float(np.linalg.norm(cross)), float(np.dot(va, vb)))
    return EARTH_RADIUS_KM * angle


def _angles_to(center_vec: np.ndarray, vecs: np.ndarray) -> np.ndarray:
    """Angular distances (radians) from a center vector to an (N, 3) array."""
    dots = np.clip(vecs @ center_vec, -1.0, 1.0)
    return np.arccos(dots)


def destination(origin: GeoPoint, bearing_deg: float, distance_km: float) -> GeoPoint:
    """Point reached from ``origin`` along ``bearing_deg`` after ``distance_km``."""
    north, east = _frame(origin)
    v0 = _point_vec(origin)
    delta = distance_km / EARTH_RADIUS_KM
    beta = math.radians(bearing_deg)
    direction = north * math.cos(beta) + east * math.sin(beta)
    return _vec_point(v0 * math.cos(delta) + direction * math.sin(delta))


def initial_bearing(origin: GeoPoint, target: GeoPoint) -> float:
    """Bearing in degrees [0, 360) from ``origin`` toward ``target``."""
    north, east = _frame(origin)
    vt = _point_vec(target)
    beta = math.atan2(float(np.dot(east, vt)), float(np.dot(north, vt)))
    return math.degrees(beta) % 360.0


def cap_boundary(cap: SphericalCap, n_points: int = DEFAULT_BOUNDARY_POINTS) -> list[GeoPoint]:
    """Sample the cap's boundary circle at ``n_points`` bearings, ordered
    clockwise from north."""
    if n_points < 8:
        raise ValueError("cap boundary needs at least 8 points")
    if cap.radius_km >= HALF_CIRCUMFERENCE_KM - GEO_TOLERANCE_KM:
        raise ValueError("cap covers the whole sphere; boundary is degenerate")
    bearings = np.arange(n_points) * (360.0 / n_points)
    vecs = _rim_vecs(cap, bearings)
    lats = np.degrees(np.arcsin(np.clip(vecs[:, 2], -1.0, 1.0)))
    lons = np.degrees(np.arctan2(vecs[:, 1], vecs[:, 0]))
    return [GeoPoint(float(la), float(lo)) for la, lo in zip(lats, lons)]


class Region:
    """A closed region on the sphere, approximated by an ordered boundary
    polygon, that satisfies every cap it was clipped against."""

    __slots__ = ("_latlon", "_vecs", "caps")

    def __init__(self, vertices, caps: Sequence[SphericalCap] = ()):
        if isinstance(vertices, np.ndarray):
            latlon = np.asarray(vertices, dtype=float)
        else:
            latlon = np.array([(p.lat, p.lon) for p in vertices], dtype=float)
        if latlon.ndim != 2 or latlon.shape[1] != 2 or latlon.shape[0] < 3:
            raise ValueError("a region needs at least 3 (lat, lon) vertices")
        self._latlon = latlon
        self._vecs = _unit(latlon[:, 0], latlon[:, 1])
        self.caps = tuple(caps)

    @classmethod
    def from_cap(cls, cap: SphericalCap, n_points: int = DEFAULT_BOUNDARY_POINTS) -> "Region":
        return cls(cap_boundary(cap, n_points), caps=(cap,))

    def __len__(self) -> int:
        return self._latlon.shape[0]

    def __repr__(self) -> str:
        return f"Region({len(self)} vertices, caps={list(self.source_caps)!r})"

    @property
    def vertices(self) -> list[GeoPoint]:
        return [GeoPoint(float(la), float(lo)) for la, lo in self._latlon]

    @property
    def source_caps(self) -> tuple[str, ...]:
        return tuple(c.landmark_id for c in self.caps)


def _slerp(a: np.ndarray, b: np.ndarray, t: float) -> np.ndarray:
    omega = math.atan2(float(np.linalg.norm(np.cross(a, b))), float(np.dot(a, b)))
    if omega < 1e-12:
        return a
    s = math.sin(omega)
    return (math.sin((1.0 - t) * omega) / s) * a + (math.sin(t * omega) / s) * b


def _crossing(inside_vec: np.ndarray, outside_vec: np.ndarray, cap: SphericalCap) -> np.ndarray:
    """Boundary point on the edge from an inside to an outside vertex, found
    by bisection to within GEO_TOLERANCE_KM.  Plain float math: this sits in
    the innermost clipping loop."""
    cx, cy, cz = _point_vec(cap.center)
    ax, ay, az = map(float, inside_vec)
    bx, by, bz = map(float, outside_vec)
    cross = (ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx)
    omega = math.atan2(math.hypot(*cross), ax * bx + ay * by + az * bz)
    if omega < 1e-12:
        return inside_vec

    sin_omega = math.sin(omega)

    def offset(t: float) -> float:
        wa = math.sin((1.0 - t) * omega) / sin_omega
        wb = math.sin(t * omega) / sin_omega
        vx, vy, vz = wa * ax + wb * bx, wa * ay + wb * by, wa * az + wb * bz
        dot = max(-1.0, min(1.0, vx * cx + vy * cy + vz * cz))
        return EARTH_RADIUS_KM * math.acos(dot) - cap.radius_km

    if offset(0.0) > 0.0:  # inside only within tolerance: edge starts on the rim
        return inside_vec
    lo, hi = 0.0, 1.0
    edge_km = EARTH_RADIUS_KM * omega
    while (hi - lo) * edge_km > GEO_TOLERANCE_KM * 0.25:
        mid = 0.5 * (lo + hi)
        if offset(mid) > 0.0:
            hi = mid
        else:
            lo = mid
    return _slerp(inside_vec, outside_vec, lo)


def _rim_vecs(cap: SphericalCap, bearings_deg: np.ndarray) -> np.ndarray:
    """Unit vectors on the cap rim at the given bearings."""
    north, east = _frame(cap.center)
    v0 = _point_vec(cap.center)
    delta = cap.radius_km / EARTH_RADIUS_KM
    betas = np.radians(bearings_deg)
    dirs = np.outer(np.cos(betas), north) + np.outer(np.sin(betas), east)
    return v0 * math.cos(delta) + dirs * math.sin(delta)


def _arc_points(
    cap: SphericalCap,
    from_vec: np.ndarray,
    to_vec: np.ndarray,
    region_caps: Sequence[SphericalCap],
) -> list[np.ndarray]:
    """Points along the cap boundary from one crossing to the next, following
    the side that stays inside the region's existing caps."""
    b0 = initial_bearing(cap.center, _vec_point(from_vec))
    b1 = initial_bearing(cap.center, _vec_point(to_vec))
    span_cw = (b1 - b0) % 360.0
    span_ccw = span_cw - 360.0  # negative sweep

    def midpoint_ok(span: float) -> bool:
        mid = destination(cap.center, b0 + span / 2.0, cap.radius_km)
        return all(c.contains(mid) for c in region_caps)

    candidates = sorted((span_cw, span_ccw), key=abs)
    span = candidates[0]
    for cand in candidates:
        if midpoint_ok(cand):
            span = cand
            break
    n_steps = int(abs(span) / ARC_STEP_DEG)
    if n_steps < 2:
        return []
    bearings = b0 + span * np.arange(1, n_steps) / n_steps
    return list(_rim_vecs(cap, bearings))


def intersect(region: Region, cap: SphericalCap) -> Region | None:
    """Clip ``region`` against ``cap``.

    Walks the boundary polygon keeping inside vertices, inserting bisection
    crossing points where edges cross the cap rim, and following the rim arc
    between an exit and the next entry.  Returns None when the region and cap
    do not meet (no inside vertex and no crossing).
    """
    center = _point_vec(cap.center)
    dist = EARTH_RADIUS_KM * _angles_to(center, region._vecs)
    inside = dist <= cap.radius_km + GEO_TOLERANCE_KM
    n = len(region)
    new_caps = region.caps + (cap,)

    if inside.all():
        out = Region(region._latlon.copy(), caps=new_caps)
        return out
    if not inside.any():
        return None

    start = int(np.argmax(inside))  # first inside vertex
    order = np.concatenate((np.arange(start, n), np.arange(0, start)))
    vecs = region._vecs[order]
    flags = inside[order]

    out_vecs: list[np.ndarray] = [vecs[0]]
    pending_exit: np.ndarray | None = None
    for i in range(1, n + 1):
        cur = vecs[i % n]
        cur_in = flags[i % n] if i < n else True  # closing edge returns to start
        prev = vecs[i - 1]
        prev_in = flags[i - 1]
        if prev_in and cur_in:
            if i < n:
                out_vecs.append(cur)
        elif prev_in and not cur_in:
            pending_exit = _crossing(prev, cur, cap)
            out_vecs.append(pending_exit)
        elif not prev_in and cur_in:
            entry = _crossing(cur, prev, cap)
            if pending_exit is not None:
                out_vecs.extend(_arc_points(cap, pending_exit, entry, region.caps))
                pending_exit = None
            out_vecs.append(entry)
            if i < n:
                out_vecs.append(cur)

    # drop consecutive near-duplicates (crossings that landed on a vertex)
    cleaned: list[np.ndarray] = []
    for v in out_vecs:
        if cleaned and float(np.dot(cleaned[-1], v)) > 1.0 - 1e-14:
            continue
        cleaned.append(v)
    while len(cleaned) > 1 and float(np.dot(cleaned[0], cleaned[-1])) > 1.0 - 1e-14:
        cleaned.pop()
    if len(cleaned) < 3:
        return None
    arr = np.array(cleaned)
    lats = np.degrees(np.arcsin(np.clip(arr[:, 2], -1.0, 1.0)))
    lons = np.degrees(np.arctan2(arr[:, 1], arr[:, 0]))
    return Region(np.column_stack((lats, lons)), caps=new_caps)


def _signed_triangle_areas(hub: np.ndarray, vecs: np.ndarray) -> np.ndarray:
    """Signed spherical excess (steradians) of triangles (hub, v_i, v_{i+1})."""
    a = vecs
    b = np.roll(vecs, -1, axis=0)
    triple = np.einsum("ij,ij->i", np.cross(a, b), np.broadcast_to(hub, a.shape))
    denom = 1.0 + a @ hub + np.einsum("ij,ij->i", a, b) + b @ hub
    return 2.0 * np.arctan2(triple, denom)


def polygon_area_km2(region: Region) -> float:
    """Spherical area enclosed by the region's boundary polygon."""
    vecs = region._vecs
    hub = vecs.mean(axis=0)
    norm = np.linalg.norm(hub)
    if norm < 1e-9:
        raise DegenerateRegionError("vertex directions cancel; no usable interior axis")
    hub = hub / norm
    return abs(float(np.sum(_signed_triangle_areas(hub, vecs)))) * EARTH_RADIUS_KM**2


def barycenter(region: Region) -> GeoPoint:
    """Area-weighted spherical centroid of the region.

    Triangulates from the normalized mean of the vertex directions and sums
    signed-area-weighted triangle centroids, re-projected onto the sphere.
    Degenerate slivers fall back to the plain vertex centroid.
    """
    vecs = region._vecs
    hub = vecs.mean(axis=0)
    norm = np.linalg.norm(hub)
    if norm < 1e-9:
        raise DegenerateRegionError("vertex directions cancel; barycenter undefined")
    hub = hub / norm
    excess = _signed_triangle_areas(hub, vecs)
    total = float(np.sum(excess))
    if abs(total) * EARTH_RADIUS_KM**2 < 1.0:  # < 1 km^2: below discretization scale
        return _vec_point(hub)
    centroids = hub + vecs + np.roll(vecs, -1, axis=0)
    centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)
    weighted = excess @ centroids
    if total < 0.0:
        weighted = -weighted
    wnorm = np.linalg.norm(weighted)
    if wnorm < 1e-12:
        return _vec_point(hub)
    return _vec_point(weighted / wnorm)


def _lon_interval(cap: SphericalCap, ref_lon: float) -> tuple[float, float] | None:
    """Longitude interval of the cap in a frame centered at ``ref_lon``;
    None means the cap spans all longitudes (contains a pole)."""
    theta_deg = math.degrees(cap.radius_km / EARTH_RADIUS_KM)
    if abs(cap.center.lat) + theta_deg >= 90.0:
        return None
    half = math.degrees(
        math.asin(
            min(1.0, math.sin(cap.radius_km / EARTH_RADIUS_KM) / math.cos(math.radians(cap.center.lat)))
        )
    )
    offset = math.fmod(cap.center.lon - ref_lon, 360.0)
    if offset <= -180.0:
        offset += 360.0
    elif offset > 180.0:
        offset -= 360.0
    return offset - half, offset + half


def grid_oracle(
    caps: Sequence[SphericalCap], resolution_deg: float = 0.05
) -> tuple[float, GeoPoint] | None:
    """Brute-force area and centroid of the intersection of ``caps``.

    Tests cell centers of a lat-lon grid (restricted to the caps' common
    bounding box) for membership in every cap; cells are weighted by their
    exact spherical band area.  Returns (area_km2, centroid) or None when no
    cell is inside all caps.
    """
    if resolution_deg <= 0.0:
        raise ValueError("resolution must be positive")
    if not caps:
        raise ValueError("need at least one cap")

    theta = np.array([c.radius_km / EARTH_RADIUS_KM for c in caps])
    theta_deg = np.degrees(theta)
    lat_lo = max(max(c.center.lat - t for c, t in zip(caps, theta_deg)), -90.0)
    lat_hi = min(min(c.center.lat + t for c, t in zip(caps, theta_deg)), 90.0)
    if lat_lo > lat_hi:
        return None

    ref_lon = caps[0].center.lon
    lon_lo, lon_hi = -180.0, 180.0
    constrained = [iv for iv in (_lon_interval(c, ref_lon) for c in caps) if iv is not None]
    if constrained:
        lon_lo = max(iv[0] for iv in constrained)
        lon_hi = min(iv[1] for iv in constrained)
        if lon_lo > lon_hi:
            return None

    res = resolution_deg
    i_lo = math.floor((lat_lo + 90.0) / res)
    i_hi = math.ceil((lat_hi + 90.0) / res)
    j_lo = math.floor(lon_lo / res)
    j_hi = math.ceil(lon_hi / res)
    lats = -90.0 + (np.arange(i_lo, i_hi) + 0.5) * res
    lons = ref_lon + (np.arange(j_lo, j_hi) + 0.5) * res
    if lats.size == 0 or lons.size == 0:
        return None

    cos_lim = np.cos(theta)
    centers = np.array([_point_vec(c.center) for c in caps])
    lon_rad = np.radians(lons)
    cos_lon, sin_lon = np.cos(lon_rad), np.sin(lon_rad)

    area = 0.0
    weighted = np.zeros(3)
    chunk = max(1, int(4_000_000 // max(1, lons.size)))
    dlon = math.radians(res)
    for s in range(0, lats.size, chunk):
        band = lats[s : s + chunk]
        lat_rad = np.radians(band)
        cos_lat, sin_lat = np.cos(lat_rad), np.sin(lat_rad)
        x = cos_lat[:, None] * cos_lon[None, :]
        y = cos_lat[:, None] * sin_lon[None, :]
        z = np.broadcast_to(sin_lat[:, None], x.shape)
        member = np.ones(x.shape, dtype=bool)
        for cv, cl in zip(centers, cos_lim):
            member &= (x * cv[0] + y * cv[1] + z * cv[2]) >= cl
        if not member.any():
            continue
        top = np.sin(np.radians(np.minimum(band + res / 2.0, 90.0)))
        bot = np.sin(np.radians(np.maximum(band - res / 2.0, -90.0)))
        cell_area = EARTH_RADIUS_KM**2 * dlon * (top - bot)  # per row
        w = member * cell_area[:, None]
        area += float(w.sum())
        weighted[0] += float((w * x).sum())
        weighted[1] += float((w * y).sum())
        weighted[2] += float((w * z).sum())

    if area <= 0.0:
        return None
    norm = np.linalg.norm(weighted)
    if norm < 1e-9:
        raise DegenerateRegionError("grid centroid direction degenerate")
    return area, _vec_point(weighted / norm)
