"""Polyline lane centerlines and point-to-lane distance."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .exceptions import NonFiniteError


class LaneProjection(NamedTuple):
    distance: np.ndarray
    foot: np.ndarray
    segment: np.ndarray
    interior: np.ndarray
    normal: np.ndarray


class LaneCenterline:
    """Lane centerline as an ordered polyline of 2-D waypoints (meters).

    Curved lanes are represented by dense waypoints.
    """

    def __init__(self, waypoints, name: str | None = None):
        pts = np.asarray(waypoints, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ValueError("a lane needs at least two 2-D waypoints")
        if not np.all(np.isfinite(pts)):
            raise NonFiniteError("non-finite lane waypoint")
        seg = np.diff(pts, axis=0)
        lengths = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(lengths <= 0):
            raise ValueError("consecutive lane waypoints must be distinct")
        self.name = name
        self.waypoints = pts
        self._starts = pts[:-1]
        self._seg = seg
        self._len2 = lengths**2
        self.arclength = np.concatenate([[0.0], np.cumsum(lengths)])

    def __repr__(self):
        return f"LaneCenterline(name={self.name!r}, waypoints={len(self.waypoints)})"

    def __eq__(self, other):
        return (
            isinstance(other, LaneCenterline)
            and self.name == other.name
            and np.array_equal(self.waypoints, other.waypoints)
        )

    @property
    def length(self) -> float:
        return float(self.arclength[-1])

    def project(self, points) -> LaneProjection:
        """Nearest point on the polyline for each row of ``points`` (shape (..., 2)).

        Ties between segments go to the lowest segment index.
        """
        p = np.asarray(points, dtype=float)
        if not np.all(np.isfinite(p)):
            raise NonFiniteError("non-finite point")
        flat = p.reshape(-1, 2)
        rel = flat[:, None, :] - self._starts[None, :, :]
        s_raw = np.einsum("tsk,sk->ts", rel, self._seg) / self._len2
        s = np.clip(s_raw, 0.0, 1.0)
        feet = self._starts[None, :, :] + s[..., None] * self._seg[None, :, :]
        d2 = np.sum((flat[:, None, :] - feet) ** 2, axis=-1)
        idx = np.argmin(d2, axis=1)
        rows = np.arange(len(flat))
        foot = feet[rows, idx]
        dist = np.sqrt(d2[rows, idx])
        sk = s_raw[rows, idx]
        interior = (sk > 0.0) & (sk < 1.0)
        tangent = self._seg[idx] / np.sqrt(self._len2[idx])[:, None]
        normal = np.stack([-tangent[:, 1], tangent[:, 0]], axis=1)
        batch = p.shape[:-1]
        return LaneProjection(
            dist.reshape(batch), foot.reshape(p.shape), idx.reshape(batch),
            interior.reshape(batch), normal.reshape(p.shape),
        )

    def point_at(self, s: float) -> np.ndarray:
        """Point at arclength ``s`` along the polyline (clamped to its ends)."""
        s = min(max(float(s), 0.0), self.length)
        k = int(np.searchsorted(self.arclength, s, side="right") - 1)
        k = min(k, len(self._seg) - 1)
        frac = (s - self.arclength[k]) / np.sqrt(self._len2[k])
        return self._starts[k] + frac * self._seg[k]

    def heading_at(self, s: float) -> float:
        """Heading angle (0 = +y, clockwise positive) of the segment at arclength ``s``."""
        s = min(max(float(s), 0.0), self.length)
        k = min(int(np.searchsorted(self.arclength, s, side="right") - 1), len(self._seg) - 1)
        dx, dy = self._seg[k]
        return float(np.arctan2(dx, dy))


def distance_to_lane(lane: LaneCenterline, p):
    """Euclidean distance from ``p`` to the lane; also returns foot point and segment index."""
    proj = lane.project(p)
    if np.ndim(proj.distance) == 0:
        return float(proj.distance), proj.foot, int(proj.segment)
    return proj.distance, proj.foot, proj.segment


def squared_distance_hessian(proj: LaneProjection):
    """Gauss-Newton Hessian of the squared lane distance.

    ``2 n n^T`` when the foot point is inside a segment (no curvature along
    the lane), ``2 I`` when it is a vertex (distance to a point).
    """
    n = proj.normal
    H = 2.0 * n[..., :, None] * n[..., None, :]
    return np.where(proj.interior[..., None, None], H, 2.0 * np.eye(2))


def lane_cost_gradient(lane: LaneCenterline, p):
    """Gradient ``2 (p - foot)`` and Gauss-Newton Hessian of the squared lane distance.

    The active segment is held fixed; centerline curvature is dropped.
    """
    proj = lane.project(p)
    grad = 2.0 * (np.asarray(p, dtype=float) - proj.foot)
    return grad, squared_distance_hessian(proj)


def arc_waypoints(center, radius, start_angle, end_angle, num=24):
    """Waypoints on a circular arc; angles measured in the usual math convention (rad)."""
    ang = np.linspace(start_angle, end_angle, num)
    c = np.asarray(center, dtype=float)
    return np.stack([c[0] + radius * np.cos(ang), c[1] + radius * np.sin(ang)], axis=1)
