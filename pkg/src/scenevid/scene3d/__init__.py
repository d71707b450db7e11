from .animation import SceneAnimation, interpolate_transforms, render_animation, static_scene
from .camera import Camera, RigidTransform, axis_angle, make_camera_trajectory
from .mesh import Mesh, box, checker_plane, empty_mesh, merge, quad
from .packio import quantize_pack, read_packs, read_pfm, write_packs, write_pfm
from .raster import (
    GuidancePack,
    TaggedMesh,
    foreground_novel_views,
    invisible_region_mask,
    novel_view_cameras,
    rasterize,
)
from .scenefile import SceneDescription, load_scene, parse_scene

DEMO_SCENE = __import__("pathlib").Path(__file__).resolve().parent.parent / "data" / "demo.scene"
