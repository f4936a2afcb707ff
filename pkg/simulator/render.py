import functools

import numpy as np

from core.camera import Frame, pixel_grid

TABLE_COLOR = np.array([0.55, 0.50, 0.45])
# the lattice covers [-EXTENT, EXTENT]² of table; beyond it the edge value repeats
TEXTURE_EXTENT = 1.0


@functools.lru_cache(maxsize=8)
def texture_lattice(seed, cell):
    count = int(round(2 * TEXTURE_EXTENT / cell)) + 1
    lattice = np.random.default_rng(seed).uniform(0.0, 1.0, size=(count, count))
    lattice.setflags(write=False)
    return lattice


def table_texture(x, y, seed, cell):
    """Seeded value noise: bilinear interpolation of a random lattice with ``cell`` metre spacing."""
    lattice = texture_lattice(seed, cell)
    last = lattice.shape[0] - 1
    u = np.clip((np.asarray(x) + TEXTURE_EXTENT) / cell, 0, last)
    v = np.clip((np.asarray(y) + TEXTURE_EXTENT) / cell, 0, last)
    u0 = np.minimum(np.floor(u).astype(np.int64), last - 1)
    v0 = np.minimum(np.floor(v).astype(np.int64), last - 1)
    du, dv = u - u0, v - v0
    return (
        lattice[v0, u0] * (1 - du) * (1 - dv)
        + lattice[v0, u0 + 1] * du * (1 - dv)
        + lattice[v0 + 1, u0] * (1 - du) * dv
        + lattice[v0 + 1, u0 + 1] * du * dv
    )


def camera_rays(camera, intrinsics):
    """Ray origin and per-pixel world directions scaled so that the camera-frame z component is 1."""
    xs, ys = pixel_grid(intrinsics.shape)
    directions = np.stack([(xs - intrinsics.cx) / intrinsics.fx, (ys - intrinsics.cy) / intrinsics.fy,
                           np.ones_like(xs)], axis=-1)
    return camera.translation_vector, directions @ camera.rotation.T


def render(state, camera=None, intrinsics=None, brightness=0.0, contrast=1.0):
    """
    Ray-cast the scene from ``camera`` (defaults to the end-effector camera).

    Objects are extruded prisms, but only their flat top faces are drawn over the textured table
    plane z = 0; side walls are left out, so a ray that would meet a wall below the rim sees
    whatever lies behind it. Every object pixel therefore carries exact top-face depth. The
    nearest hit along each ray wins. Depth is the camera-frame z of the hit, so it doubles as the ray
    parameter for the z = 1 scaled directions.
    """
    camera = camera or state.ee_pose
    intrinsics = intrinsics or state.config.intrinsics
    origin, directions = camera_rays(camera, intrinsics)
    shape = intrinsics.shape

    depth = np.full(shape, np.inf)
    object_ids = np.zeros(shape, dtype=np.int32)
    rgb = np.zeros(shape + (3,))

    # table
    with np.errstate(divide='ignore', invalid='ignore'):
        along = -origin[2] / directions[..., 2]
    table_hit = np.isfinite(along) & (along > 0)
    depth[table_hit] = along[table_hit]
    hit_x = origin[0] + along * directions[..., 0]
    hit_y = origin[1] + along * directions[..., 1]
    texture = table_texture(np.where(table_hit, hit_x, 0.0), np.where(table_hit, hit_y, 0.0),
                            state.config.texture_seed, state.config.texture_cell)
    rgb[table_hit] = np.clip(TABLE_COLOR * (0.55 + 0.9 * texture[table_hit])[:, None], 0.0, 1.0)

    for obj in state.objects:
        shape_geometry = obj.geometry
        to_local = obj.pose.inverse()
        local_origin = to_local.apply(origin)
        local_directions = directions @ to_local.rotation.T
        with np.errstate(divide='ignore', invalid='ignore'):
            along = (shape_geometry.height - local_origin[2]) / local_directions[..., 2]
        # top faces are only visible from above
        facing = local_directions[..., 2] < 0
        local_x = local_origin[0] + along * local_directions[..., 0]
        local_y = local_origin[1] + along * local_directions[..., 1]
        hit = facing & np.isfinite(along) & (along > 0) & shape_geometry.contains(local_x, local_y)
        nearer = hit & (along < depth)
        depth[nearer] = along[nearer]
        object_ids[nearer] = obj.id
        rgb[nearer] = obj.color

    depth[~np.isfinite(depth)] = 0.0
    if brightness != 0.0 or contrast != 1.0:
        rgb = np.clip(contrast * (rgb - 0.5) + 0.5 + brightness, 0.0, 1.0)

    return Frame(
        rgb=rgb,
        depth=depth,
        object_ids=object_ids,
        intrinsics=intrinsics,
        camera_pose=camera,
        scene_digest=state.digest,
    )
