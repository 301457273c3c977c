"""Training-free interactive segmentation and manipulation of 3D Gaussian scenes."""

from .scene import (
    Camera,
    Click,
    Gaussian,
    GaussianScene,
    Mask,
    Selection,
    ViewSet,
    load_cameras,
    load_scene_ply,
    save_scene_ply,
    subsample_views,
)
from .render import render, render_label_map, render_selection_mask
from .voting import SegmentConfig, segment
from .toolbox import (
    EditRequest,
    PlacementTransform,
    colorize,
    combine,
    copy_paste,
    remove_selection,
    scale_selection,
    semantic_edit,
)

__version__ = "0.1.0"
