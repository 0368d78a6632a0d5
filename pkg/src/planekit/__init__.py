"""planekit: piece-wise planar depthmap reconstruction, ground-truth
generation, and evaluation toolkit."""

from .errors import (BadFormat, CameraOutsideRoom, DegenerateGeometry,
                     DegeneratePlane, EmptyRegion, EmptySplit,
                     InsufficientDirections, InvalidConfig, NonPositiveDepth,
                     NoPlaneFound, OutOfRange, PlanekitError, SchemaError)
from .geometry import (CameraIntrinsics, DepthMap, Frame, Plane, Point3Set,
                       Pose, backproject, fit_plane_lsq, fit_plane_lsq_rms,
                       plane_depth, plane_from_normal_offset,
                       render_plane_depthmap)
from .extraction import (ExtractedPlane, ManhattanFrame, RansacConfig,
                         extract_planes, snap_to_manhattan, vote_manhattan)
from .gt_pipeline import (DatasetBuild, FittedMeshPlanes, GroundTruthSample,
                          MergeConfig, Scene, SemanticMesh, build_dataset,
                          filter_sample, fit_semantic_planes, merge_planes,
                          rasterize_frame)
from .masks import LabelMap, ProbMaskStack, labels_to_masks, masks_to_labels
from .segmentation import (DcrfConfig, MrfConfig, dcrf_refine, mrf_segment,
                           mws_segment)
from .losses import (LossReport, PlaneSet, chamfer_plane_loss, refine_planes,
                     segmentation_loss, weighted_depth_loss)
from .evaluation import (DepthStats, PlaneMatch, RecallCurve, aggregate_recall,
                         depth_stats, edge_region_stats, match_planes,
                         planar_region_stats, recall_curves)
from .layout import (LayoutResult, RoleAssignment, estimate_layout,
                     layout_catalog, layout_pixel_error, project_layout,
                     propose_roles)
from .synth import (Cuboid, NoiseSpec, RenderedScene, SceneSpec, corrupt,
                    emit_mesh, look_pose, random_scene, render_scene)

__version__ = "0.1.0"
