"""UE motion: fixed waypoint paths for UAVs, random waypoint for ground users."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Union

import numpy as np

from .radio import Position

UAV_MAX_SPEED_MPS = 160 / 3.6
UAV_MAX_SPEED_EXTENDED_MPS = 300 / 3.6
UAV_MAX_ALTITUDE_M = 300.0
GUE_HEIGHT_M = 1.5


@dataclass(frozen=True)
class FixedPath:
    waypoints: tuple
    speed_mps: float
    loop: bool = False

    def __post_init__(self):
        object.__setattr__(self, "waypoints", tuple(self.waypoints))
        if not self.waypoints:
            raise ValueError("FixedPath needs at least one waypoint")
        if self.speed_mps < 0:
            raise ValueError("speed must be >= 0")


@dataclass(frozen=True)
class RandomWaypoint2D:
    bounds: tuple  # (xmin, ymin, xmax, ymax)
    speed_range_mps: tuple
    pause_s: float = 0.0
    z_fixed: float = GUE_HEIGHT_M

    def __post_init__(self):
        xmin, ymin, xmax, ymax = self.bounds
        if not (xmax > xmin and ymax > ymin):
            raise ValueError("degenerate random-waypoint bounds")
        lo, hi = self.speed_range_mps
        if not 0 < lo <= hi:
            raise ValueError("speed range must satisfy 0 < lo <= hi")
        if self.pause_s < 0:
            raise ValueError("pause_s must be >= 0")


MobilityModel = Union[FixedPath, RandomWaypoint2D]


@dataclass(frozen=True)
class UeKinematics:
    position: Position
    velocity: tuple = (0.0, 0.0, 0.0)
    waypoint_index: int = 0
    speed_mps: float = 0.0
    pause_left_s: float = 0.0
    target: Optional[Position] = None


def lawnmower(bounds: Sequence[float], altitude: float, spacing: float, margin: float = 0.0) -> list:
    """Boustrophedon sweep of parallel east-west transects."""
    xmin, ymin, xmax, ymax = bounds
    xs = (xmin + margin, xmax - margin)
    points = []
    y = ymin + margin
    k = 0
    while y <= ymax - margin + 1e-9:
        a, b = (xs if k % 2 == 0 else xs[::-1])
        points += [Position(a, y, altitude), Position(b, y, altitude)]
        y += spacing
        k += 1
    return points


def initial_kinematics(model: MobilityModel, rng: np.random.Generator) -> UeKinematics:
    if isinstance(model, FixedPath):
        return UeKinematics(model.waypoints[0], waypoint_index=min(1, len(model.waypoints) - 1),
                            speed_mps=model.speed_mps)
    xmin, ymin, xmax, ymax = model.bounds
    start = Position(float(rng.uniform(xmin, xmax)), float(rng.uniform(ymin, ymax)), model.z_fixed)
    return UeKinematics(start, pause_left_s=0.0)


def _toward(p: Position, q: Position, step: float):
    d = p.distance(q)
    if d <= step:
        return q, d
    f = step / d
    return Position(p.x + (q.x - p.x) * f, p.y + (q.y - p.y) * f, p.z + (q.z - p.z) * f), step


def _velocity(p: Position, q: Position, speed: float) -> tuple:
    d = p.distance(q)
    if d == 0 or speed == 0:
        return (0.0, 0.0, 0.0)
    return ((q.x - p.x) / d * speed, (q.y - p.y) / d * speed, (q.z - p.z) / d * speed)


def _step_path(kin: UeKinematics, model: FixedPath, dt: float) -> UeKinematics:
    wps = model.waypoints
    pos, idx = kin.position, kin.waypoint_index
    remaining = model.speed_mps * dt
    if len(wps) == 1 or remaining == 0:
        return replace(kin, velocity=(0.0, 0.0, 0.0))
    stalled = 0
    while remaining > 0:
        target = wps[idx]
        pos, moved = _toward(pos, target, remaining)
        remaining -= moved
        if pos != target:
            break
        stalled = stalled + 1 if moved == 0 else 0
        if idx == len(wps) - 1:
            if not model.loop:
                return UeKinematics(pos, (0.0, 0.0, 0.0), idx, 0.0)
            idx = 0
        else:
            idx += 1
        if stalled > len(wps):  # every waypoint coincides
            break
    return UeKinematics(pos, _velocity(pos, wps[idx], model.speed_mps), idx, model.speed_mps)


def _step_random(kin: UeKinematics, model: RandomWaypoint2D, dt: float, rng: np.random.Generator) -> UeKinematics:
    xmin, ymin, xmax, ymax = model.bounds
    pos, target, speed, pause = kin.position, kin.target, kin.speed_mps, kin.pause_left_s
    left = dt
    while left > 1e-12:
        if pause > 0:
            used = min(pause, left)
            pause -= used
            left -= used
            continue
        if target is None:
            target = Position(float(rng.uniform(xmin, xmax)), float(rng.uniform(ymin, ymax)), model.z_fixed)
            speed = float(rng.uniform(*model.speed_range_mps))
        pos, moved = _toward(pos, target, speed * left)
        left -= moved / speed
        if pos == target:
            target = None
            pause = model.pause_s
        else:
            break
    pos = Position(min(max(pos.x, xmin), xmax), min(max(pos.y, ymin), ymax), pos.z)
    vel = _velocity(pos, target, speed) if target is not None and pause <= 0 else (0.0, 0.0, 0.0)
    return UeKinematics(pos, vel, 0, speed, pause, target)


def step_position(kin: UeKinematics, model: MobilityModel, dt: float,
                  rng: Optional[np.random.Generator] = None) -> UeKinematics:
    """Advance one UE by ``dt`` seconds.

    Fixed paths split the step exactly at waypoints; random waypoint motion
    draws its next target and speed from ``rng``.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    if isinstance(model, FixedPath):
        return _step_path(kin, model, dt)
    if rng is None:
        raise ValueError("random waypoint motion needs an rng")
    return _step_random(kin, model, dt, rng)


def validate_caps(model: MobilityModel, kind: str, extended_speed: bool = False) -> list:
    """Speed/height limits for aerial UEs; returns violation messages."""
    if kind != "UAV":
        return []
    problems = []
    cap = UAV_MAX_SPEED_EXTENDED_MPS if extended_speed else UAV_MAX_SPEED_MPS
    if isinstance(model, FixedPath):
        speed, heights = model.speed_mps, [w.z for w in model.waypoints]
    else:
        speed, heights = model.speed_range_mps[1], [model.z_fixed]
    if speed > cap + 1e-9:
        problems.append(f"UAV speed {speed:.2f} m/s exceeds cap {cap:.2f} m/s")
    for h in heights:
        if h > UAV_MAX_ALTITUDE_M:
            problems.append(f"UAV altitude {h} m exceeds {UAV_MAX_ALTITUDE_M:.0f} m")
    return problems


def path_length(waypoints: Sequence[Position]) -> float:
    return sum(a.distance(b) for a, b in zip(waypoints, waypoints[1:]))


def heading_deg(velocity: tuple) -> float:
    return math.degrees(math.atan2(velocity[0], velocity[1])) % 360.0
