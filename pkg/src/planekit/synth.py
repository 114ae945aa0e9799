"""Synthetic piece-wise planar indoor scenes with exact ground truth.

Scenes are closed axis-aligned rooms plus axis-aligned boxes, so every
camera ray hits a plane and depth, per-pixel plane parameters, instance
masks, and semantics are all known analytically. This module is the
oracle behind the geometry, loss, and metric tests.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .errors import InvalidInputError
from .geometry import CameraIntrinsics, PlaneParams, RigidTransform

ROOM_INSTANCE_IDS = frozenset(range(1, 7))  # shell rects are always instances 1..6

CLASS_FLOOR = 1
CLASS_CEILING = 2
CLASS_WALL = 3
CLASS_BOX_BASE = 4  # box i gets class CLASS_BOX_BASE + i


@dataclass(frozen=True)
class PlaneRect:
    """One planar rectangle: corners (4, 3) ordered O, O+e1, O+e1+e2, O+e2."""

    plane: PlaneParams
    corners: np.ndarray
    class_id: int
    instance_id: int
    albedo: np.ndarray


@dataclass(frozen=True)
class PlanarScene:
    rects: tuple[PlaneRect, ...]
    seed: int
    bounds_min: np.ndarray  # room interior AABB, for pose sampling
    bounds_max: np.ndarray


@dataclass
class RenderedView:
    camera: CameraIntrinsics
    pose: RigidTransform          # world -> camera
    rgb: np.ndarray               # (H, W, 3) in [0, 1]
    depth: np.ndarray             # (H, W) meters
    instances: np.ndarray         # (H, W) int32, 0 = none
    plane_map: np.ndarray         # (H, W, 3) camera-frame plane vectors
    classes: dict[int, int]       # instance id -> class id


@dataclass(frozen=True)
class StereoSample:
    source: RenderedView
    neighbour: RenderedView
    t_ns: RigidTransform  # neighbour -> source
    t_sn: RigidTransform  # source -> neighbour


def default_camera(width: int = 128, height: int = 96) -> CameraIntrinsics:
    """90-degree horizontal FOV camera; fx = width/2 keeps warp math exact."""
    return CameraIntrinsics(fx=width / 2.0, fy=width / 2.0,
                            cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
                            width=width, height=height)


def _rect(origin, e1, e2, normal, class_id, instance_id, albedo) -> PlaneRect:
    origin = np.asarray(origin, dtype=np.float64)
    e1 = np.asarray(e1, dtype=np.float64)
    e2 = np.asarray(e2, dtype=np.float64)
    normal = np.asarray(normal, dtype=np.float64)
    d = float(normal @ origin)
    if d < 0:
        normal, d = -normal, -d
    corners = np.stack([origin, origin + e1, origin + e1 + e2, origin + e2])
    return PlaneRect(plane=PlaneParams.from_normal_offset(normal, d),
                     corners=corners, class_id=class_id,
                     instance_id=instance_id, albedo=np.asarray(albedo))


def _albedo_palette(rng: np.random.Generator) -> np.ndarray:
    """Shuffled lattice of flat colors, pairwise separable under shading.

    Candidates keep pairwise channel distance >= 0.2 and avoid pairs that
    are near-collinear with comparable brightness; the view-dependent shade
    factor spans about 2:1, so such pairs would produce identical pixels.
    """
    levels = np.array([0.1, 0.3, 0.5, 0.7, 0.9])
    grid = np.stack(np.meshgrid(levels, levels, levels, indexing="ij"), axis=-1)
    lattice = grid.reshape(-1, 3)
    lattice = lattice[rng.permutation(len(lattice))]
    chosen: list[np.ndarray] = []
    cos_min = np.cos(np.deg2rad(8.0))
    for cand in lattice:
        cn = np.linalg.norm(cand)
        conflict = False
        for kept in chosen:
            kn = np.linalg.norm(kept)
            cos = float(cand @ kept / (cn * kn))
            if cos > cos_min and 0.45 < cn / kn < 2.2:
                conflict = True
                break
        if not conflict:
            chosen.append(cand)
    return np.stack(chosen)


def _box_faces(lo, hi, class_id, first_instance, albedos):
    sx, sy, sz = hi - lo
    faces = [
        # (origin, e1, e2, inward normal)
        (lo, (sx, 0, 0), (0, sy, 0), (0, 0, 1)),                      # z = lo.z
        ((lo[0], lo[1], hi[2]), (sx, 0, 0), (0, sy, 0), (0, 0, -1)),  # z = hi.z
        (lo, (0, sy, 0), (0, 0, sz), (1, 0, 0)),                      # x = lo.x
        ((hi[0], lo[1], lo[2]), (0, sy, 0), (0, 0, sz), (-1, 0, 0)),  # x = hi.x
        (lo, (sx, 0, 0), (0, 0, sz), (0, 1, 0)),                      # y = lo.y
        ((lo[0], hi[1], lo[2]), (sx, 0, 0), (0, 0, sz), (0, -1, 0)),  # y = hi.y
    ]
    return [
        _rect(np.asarray(origin, dtype=np.float64), e1, e2, n,
              class_id, first_instance + i, albedos[i])
        for i, (origin, e1, e2, n) in enumerate(faces)
    ]


def generate_scene(seed: int, n_boxes: int = 0) -> PlanarScene:
    """Deterministic axis-aligned room (6 rects) plus n_boxes boxes (6 rects each).

    Shell instances are ids 1..6 (floor, ceiling, left, right, far, back);
    each box face is its own instance. Albedos are flat and pairwise well
    separated. Boxes keep clear of the camera zone near the world origin.
    """
    if n_boxes < 0:
        raise InvalidInputError("n_boxes must be >= 0")
    rng = np.random.default_rng(seed)
    palette = _albedo_palette(rng)
    if 6 + 6 * n_boxes > len(palette):
        raise InvalidInputError("too many boxes for the albedo palette")

    hx = rng.uniform(1.8, 2.3)
    hy = rng.uniform(1.2, 1.6)
    zb = rng.uniform(0.8, 1.2)
    zf = rng.uniform(4.0, 5.0)
    lo = np.array([-hx, -hy, -zb])
    hi = np.array([hx, hy, zf])

    # Shell normals point out of the room so any interior camera sees d > 0.
    shell = [
        _rect((-hx, hy, -zb), (2 * hx, 0, 0), (0, 0, zf + zb), (0, 1, 0),
              CLASS_FLOOR, 1, palette[0]),                                  # floor y=+hy
        _rect((-hx, -hy, -zb), (2 * hx, 0, 0), (0, 0, zf + zb), (0, -1, 0),
              CLASS_CEILING, 2, palette[1]),                                # ceiling y=-hy
        _rect((-hx, -hy, -zb), (0, 2 * hy, 0), (0, 0, zf + zb), (-1, 0, 0),
              CLASS_WALL, 3, palette[2]),                                   # left x=-hx
        _rect((hx, -hy, -zb), (0, 2 * hy, 0), (0, 0, zf + zb), (1, 0, 0),
              CLASS_WALL, 4, palette[3]),                                   # right x=+hx
        _rect((-hx, -hy, zf), (2 * hx, 0, 0), (0, 2 * hy, 0), (0, 0, 1),
              CLASS_WALL, 5, palette[4]),                                   # far z=+zf
        _rect((-hx, -hy, -zb), (2 * hx, 0, 0), (0, 2 * hy, 0), (0, 0, -1),
              CLASS_WALL, 6, palette[5]),                                   # back z=-zb
    ]

    rects = list(shell)
    placed: list[tuple[np.ndarray, np.ndarray]] = []
    for i in range(n_boxes):
        for _ in range(40):
            size = rng.uniform(0.3, 0.9, 3)
            box_lo = np.array([
                rng.uniform(-hx + 0.2, hx - 0.2 - size[0]),
                rng.uniform(-hy + 0.2, hy - 0.2 - size[1]),
                rng.uniform(1.0, zf - 0.2 - size[2]),
            ])
            box_hi = box_lo + size
            overlap = any(
                np.all(box_lo < p_hi + 0.05) and np.all(box_hi > p_lo - 0.05)
                for p_lo, p_hi in placed)
            if not overlap:
                break
        placed.append((box_lo, box_hi))
        rects.extend(_box_faces(box_lo, box_hi, CLASS_BOX_BASE + i,
                                7 + 6 * i, palette[6 + 6 * i: 12 + 6 * i]))

    return PlanarScene(rects=tuple(rects), seed=seed, bounds_min=lo, bounds_max=hi)


def look_pose(center, yaw_deg: float = 0.0, pitch_deg: float = 0.0) -> RigidTransform:
    """World-to-camera pose of a camera at ``center`` looking along +z.

    Yaw rotates about the camera's y axis, pitch about its x axis.
    """
    yaw = np.deg2rad(yaw_deg)
    pitch = np.deg2rad(pitch_deg)
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    ry = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]])
    cam_to_world = ry @ rx
    rot = cam_to_world.T
    return RigidTransform(rot, -(rot @ np.asarray(center, dtype=np.float64)))


def sample_pose(scene: PlanarScene, rng: np.random.Generator) -> RigidTransform:
    """A jittered interior pose near the origin (clear of the box zone)."""
    center = np.array([rng.uniform(-0.3, 0.3), rng.uniform(-0.2, 0.2),
                       rng.uniform(-0.2, 0.4)])
    return look_pose(center, yaw_deg=rng.uniform(-4.0, 4.0),
                     pitch_deg=rng.uniform(-3.0, 3.0))


def _camera_center(pose: RigidTransform) -> np.ndarray:
    return -(pose.rotation.T @ pose.translation)


def render_view(scene: PlanarScene, camera: CameraIntrinsics,
                pose: RigidTransform) -> RenderedView:
    """Exact ray-cast render of a scene.

    Per pixel the nearest positive ray hit defines depth, instance, and
    class; the hit rect's world plane is re-expressed in camera coordinates
    for the plane map; shading is albedo * (0.5 + 0.5 |n . view_dir|).
    """
    center = _camera_center(pose)
    if np.any(center <= scene.bounds_min) or np.any(center >= scene.bounds_max):
        raise InvalidInputError("camera center must be strictly inside the room")

    rects = scene.rects
    normals = np.stack([r.plane.normal for r in rects])
    offsets = np.array([r.plane.offset for r in rects])
    corner0 = np.stack([r.corners[0] for r in rects])
    edge1 = np.stack([r.corners[1] - r.corners[0] for r in rects])
    edge2 = np.stack([r.corners[3] - r.corners[0] for r in rects])

    xhat, yhat = camera.pixel_rays()
    depth, hit = kernels.raycast(xhat, yhat, pose.rotation.T, center,
                                 normals, offsets, corner0, edge1, edge2)
    if np.any(hit < 0):
        raise InvalidInputError("ray escaped the room; scene is not closed")

    # Camera-frame planes per rect; p = n*d is orientation-free, so a
    # negative rotated offset just flips the stored representative.
    n_cam = normals @ pose.rotation.T
    d_cam = offsets + n_cam @ pose.translation
    p_cam = n_cam * d_cam[:, None]
    plane_map = p_cam[hit]

    instance_of = np.array([r.instance_id for r in rects], dtype=np.int32)
    albedo_of = np.stack([r.albedo for r in rects])
    instances = instance_of[hit]

    ray_norm = np.sqrt(xhat * xhat + yhat * yhat + 1.0)
    cos_view = np.abs(n_cam[hit, 0] * xhat + n_cam[hit, 1] * yhat
                      + n_cam[hit, 2]) / ray_norm
    shade = 0.5 + 0.5 * cos_view
    rgb = albedo_of[hit] * shade[..., None]

    classes = {int(r.instance_id): int(r.class_id) for r in rects}
    return RenderedView(camera=camera, pose=pose, rgb=rgb, depth=depth,
                        instances=instances, plane_map=plane_map, classes=classes)


def relative_transform(baseline, yaw_deg: float) -> RigidTransform:
    """Source-to-neighbour transform for a camera offset in source coords.

    The neighbour camera sits at ``baseline`` (source frame) with its axes
    yawed about the source y axis.
    """
    yaw = np.deg2rad(yaw_deg)
    cy, sy = np.cos(yaw), np.sin(yaw)
    ry = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    rot = ry.T
    return RigidTransform(rot, -(rot @ np.asarray(baseline, dtype=np.float64)))


def make_pair(scene: PlanarScene, camera: CameraIntrinsics,
              pose_src: RigidTransform, baseline=(0.2, 0.0, 0.0),
              yaw_deg: float = 5.0) -> StereoSample:
    """Render a source/neighbour pair with consistent relative transforms."""
    t_sn = relative_transform(baseline, yaw_deg)
    pose_nbr = t_sn.compose(pose_src)
    source = render_view(scene, camera, pose_src)
    neighbour = render_view(scene, camera, pose_nbr)
    return StereoSample(source=source, neighbour=neighbour,
                        t_ns=t_sn.inverse(), t_sn=t_sn)


def drop_instances(view: RenderedView, drop_prob: float, seed: int) -> RenderedView:
    """Remove non-room instances from the GT maps with probability drop_prob.

    Dropped pixels get instance 0 and a zero plane vector; depth and rgb are
    untouched. Deterministic in the seed. Room-shell instances (ids 1..6)
    are never dropped.
    """
    if not 0.0 <= drop_prob <= 1.0:
        raise InvalidInputError("drop_prob must be in [0, 1]")
    present = np.unique(view.instances)
    candidates = sorted(int(i) for i in present
                        if i != 0 and int(i) not in ROOM_INSTANCE_IDS)
    rng = np.random.default_rng(seed)
    draws = rng.random(len(candidates))
    dropped = {iid for iid, u in zip(candidates, draws) if u < drop_prob}
    if not dropped:
        return replace(view, instances=view.instances.copy(),
                       plane_map=view.plane_map.copy(), classes=dict(view.classes))
    gone = np.isin(view.instances, sorted(dropped))
    instances = np.where(gone, 0, view.instances).astype(np.int32)
    plane_map = np.where(gone[..., None], 0.0, view.plane_map)
    classes = {i: c for i, c in view.classes.items() if i not in dropped}
    return replace(view, instances=instances, plane_map=plane_map, classes=classes)
