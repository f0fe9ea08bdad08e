"""Bird's-eye-view observation rendering.

Each frame is an ego-centered, ego-aligned label raster (drivable area,
agent boxes, ego footprint) plus camera placement metadata: world poses for
every mounted camera (height from the ground model when available) and the
agents visible inside each camera's field-of-view wedge.
"""

import base64
import json
import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from . import defaults
from .geom import points_in_polygon_mask, wrap_angle
from .illumination import write_pgm
from .kinematics import VehicleState


class Cell(IntEnum):
    FREE = 0
    DRIVABLE = 1
    EGO_FOOTPRINT = 2
    AGENT = 3
    OFF_MAP = 4


@dataclass(frozen=True, slots=True)
class CameraConfig:
    id: str
    x: float = 1.5     # mount offset, m forward of the ego center
    y: float = 0.0     # m to the left
    z: float = 1.6     # m up
    yaw: float = 0.0   # rad relative to the ego heading
    fov: float = math.radians(120.0)
    width: int = 400
    height: int = 300

    def to_dict(self) -> dict:
        return {
            "id": self.id, "x": self.x, "y": self.y, "z": self.z,
            "yaw": self.yaw, "fov_deg": math.degrees(self.fov),
            "width": self.width, "height": self.height,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "CameraConfig":
        raw = dict(raw)
        fov_deg = raw.pop("fov_deg", 120.0)
        return cls(fov=math.radians(float(fov_deg)), **raw)


@dataclass(frozen=True, slots=True)
class CameraPose:
    id: str
    x: float
    y: float
    z: float
    yaw: float


@dataclass(slots=True)
class ObservationFrame:
    tick: int
    bev: np.ndarray            # (n, n) uint8 of Cell labels
    resolution: float
    extent: float
    camera_poses: list
    visible_agents: dict       # camera id -> [(agent id, bearing, distance)]
    path: str | None = None    # set when the frame has been saved to disk


class DrivableRaster:
    """World-aligned label grid (FREE / DRIVABLE / OFF_MAP) cached per map.

    The grid carries a one-cell OFF_MAP border so lookups reduce to a single
    clipped gather: indices are clamped into the border ring instead of
    being masked.
    """

    def __init__(self, m, resolution: float = defaults.BEV_RESOLUTION, pad: float = defaults.OFFMAP_PAD):
        self.resolution = resolution
        if m.drivable_area:
            pts = np.vstack(m.drivable_area)
        else:
            pts = np.vstack([lane.xy for lane in m.lanes.values()])
        self.x0 = float(pts[:, 0].min()) - pad
        self.y0 = float(pts[:, 1].min()) - pad
        x1 = float(pts[:, 0].max()) + pad
        y1 = float(pts[:, 1].max()) + pad
        self.nx = max(int(math.ceil((x1 - self.x0) / resolution)), 1)
        self.ny = max(int(math.ceil((y1 - self.y0) / resolution)), 1)
        cx = self.x0 + (np.arange(self.nx) + 0.5) * resolution
        cy = self.y0 + (np.arange(self.ny) + 0.5) * resolution
        gx, gy = np.meshgrid(cx, cy)
        mask = np.zeros((self.ny, self.nx), dtype=bool)
        for poly in m.drivable_area:
            mask |= points_in_polygon_mask(gx, gy, np.asarray(poly, dtype=float))
        labels = np.where(mask, np.uint8(Cell.DRIVABLE), np.uint8(Cell.FREE))
        self.labels = np.pad(labels, 1, constant_values=np.uint8(Cell.OFF_MAP))

    def lookup(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        """Cell labels for world coordinates (out-of-grid -> OFF_MAP).

        The +1 shift happens before truncation so it acts as a floor for the
        border ring (plain int-casting truncates toward zero).
        """
        inv = 1.0 / self.resolution
        j = np.clip((xs - self.x0) * inv + 1.0, 0.0, self.nx + 1.0).astype(np.int32)
        i = np.clip((ys - self.y0) * inv + 1.0, 0.0, self.ny + 1.0).astype(np.int32)
        return self.labels[i, j]


def get_raster(m, resolution: float = defaults.BEV_RESOLUTION) -> DrivableRaster:
    """Per-map cached raster (maps are immutable after load)."""
    cached = getattr(m, "_drivable_raster", None)
    if cached is None or cached.resolution != resolution:
        cached = DrivableRaster(m, resolution)
        m._drivable_raster = cached
    return cached


def _paint_obb(bev: np.ndarray, ego: VehicleState, state: VehicleState, label: int,
               resolution: float, extent: float) -> None:
    """Stamp a vehicle footprint into the ego-frame raster."""
    half = extent / 2.0
    n = bev.shape[0]
    c, s = math.cos(-ego.phi), math.sin(-ego.phi)
    dx, dy = state.x - ego.x, state.y - ego.y
    fx = dx * c - dy * s          # forward
    fy = dx * s + dy * c          # left
    rel = wrap_angle(state.phi - ego.phi)
    reach = 0.5 * math.hypot(state.length, state.width)
    if abs(fx) > half + reach or abs(fy) > half + reach:
        return
    # index window covering the box
    i0 = max(int((half - (fx + reach)) / resolution), 0)
    i1 = min(int((half - (fx - reach)) / resolution) + 1, n)
    j0 = max(int((half - (fy + reach)) / resolution), 0)
    j1 = min(int((half - (fy - reach)) / resolution) + 1, n)
    if i0 >= i1 or j0 >= j1:
        return
    fwd = half - (np.arange(i0, i1) + 0.5) * resolution
    left = half - (np.arange(j0, j1) + 0.5) * resolution
    F, L = np.meshgrid(fwd, left, indexing="ij")
    du = F - fx
    dv = L - fy
    cu, su = math.cos(rel), math.sin(rel)
    lon = du * cu + dv * su
    lat = -du * su + dv * cu
    hit = (np.abs(lon) <= state.length / 2.0) & (np.abs(lat) <= state.width / 2.0)
    patch = bev[i0:i1, j0:j1]
    patch[hit] = label


_GRID_CACHE: dict = {}


def _ego_grid(resolution: float, extent: float):
    """Cached (forward, left) cell-center coordinate grids, float32."""
    key = (resolution, extent)
    grids = _GRID_CACHE.get(key)
    if grids is None:
        n = int(round(extent / resolution))
        axis = (extent / 2.0 - (np.arange(n) + 0.5) * resolution).astype(np.float32)
        grids = np.meshgrid(axis, axis, indexing="ij")
        _GRID_CACHE[key] = grids
    return grids


def render_frame(ego: VehicleState, agents, m, cameras, ground=None, tick: int = 0,
                 resolution: float = defaults.BEV_RESOLUTION,
                 extent: float = defaults.BEV_EXTENT) -> ObservationFrame:
    """Compose the tick's observation: label raster + camera metadata.

    Row 0 of the raster is farthest ahead of the ego; column 0 is farthest
    left. Inactive (untriggered) agents are not part of the world yet and do
    not render.
    """
    F, L = _ego_grid(resolution, extent)
    c, s = math.cos(ego.phi), math.sin(ego.phi)
    X = F * np.float32(c)
    X -= L * np.float32(s)
    X += np.float32(ego.x)
    Y = F * np.float32(s)
    Y += L * np.float32(c)
    Y += np.float32(ego.y)
    bev = get_raster(m, resolution).lookup(X, Y)

    active = [a for a in agents if a.behavior.active]
    for rec in active:
        _paint_obb(bev, ego, rec.state, int(Cell.AGENT), resolution, extent)
    _paint_obb(bev, ego, ego, int(Cell.EGO_FOOTPRINT), resolution, extent)

    poses = []
    visible: dict = {}
    for cam in cameras:
        cx = ego.x + cam.x * c - cam.y * s
        cy = ego.y + cam.x * s + cam.y * c
        cz = cam.z + (ground.predict(cx, cy) if ground is not None else 0.0)
        cyaw = wrap_angle(ego.phi + cam.yaw)
        poses.append(CameraPose(id=cam.id, x=cx, y=cy, z=float(cz), yaw=cyaw))
        seen = []
        for rec in sorted(active, key=lambda r: r.id):
            dist = math.hypot(rec.state.x - cx, rec.state.y - cy)
            if dist > defaults.VISIBILITY_RANGE:
                continue
            bearing = wrap_angle(math.atan2(rec.state.y - cy, rec.state.x - cx) - cyaw)
            if abs(bearing) <= cam.fov / 2.0:
                seen.append((rec.id, bearing, dist))
        visible[cam.id] = seen
    return ObservationFrame(
        tick=tick, bev=bev, resolution=resolution, extent=extent,
        camera_poses=poses, visible_agents=visible,
    )


def frame_sidecar(frame: ObservationFrame) -> dict:
    return {
        "tick": frame.tick,
        "resolution": frame.resolution,
        "extent": frame.extent,
        "labels": {c.name: int(c) for c in Cell},
        "camera_poses": [
            {"id": p.id, "x": p.x, "y": p.y, "z": p.z, "yaw": p.yaw} for p in frame.camera_poses
        ],
        "visible_agents": {
            cam: [{"id": aid, "bearing": b, "distance": d} for aid, b, d in entries]
            for cam, entries in frame.visible_agents.items()
        },
    }


def save_frame(frame: ObservationFrame, pgm_path, json_path) -> None:
    write_pgm(pgm_path, frame.bev, maxval=int(max(Cell)))
    with open(json_path, "w") as fh:
        json.dump(frame_sidecar(frame), fh, sort_keys=True)
        fh.write("\n")
    frame.path = str(pgm_path)


def frame_to_base64(frame: ObservationFrame) -> str:
    header = f"P5\n{frame.bev.shape[1]} {frame.bev.shape[0]}\n{int(max(Cell))}\n".encode()
    return base64.b64encode(header + frame.bev.astype(np.uint8).tobytes()).decode("ascii")
