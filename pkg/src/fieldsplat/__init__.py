"""Radiance-field-supervised Gaussian splatting, desk scale.

A trainable dense-grid radiance field provides initialization points and
clean supervision renders for a 3D Gaussian splat scene, which is then
optimized with analytic gradients, pruned by ray-contribution importance,
and post-processed into per-camera-cluster visibility lists for filtered
rendering.
"""

from .core import (
    EmptyInitializationError,
    FileFormatError,
    GaussianPrimitive,
    GaussianScene,
    ImageBuffer,
    InvalidParameterError,
    InvalidSceneError,
    PinholeCamera,
    StaleTableError,
    covariance_from_scale_rot,
    eval_sh,
    look_at_camera,
    world_to_camera,
)
from .field import (
    FieldRenderConfig,
    FieldTrainConfig,
    GloEmbedding,
    RadianceFieldGrid,
    RaySample,
    SupervisionSet,
    make_ray,
    render_image,
    render_median_depth,
    render_supervision_set,
    train_field,
    volume_render,
)
from .render import (
    ContributionAccumulator,
    ProjectedGaussian,
    RasterizeOptions,
    RenderOutput,
    project_gaussian,
    rasterize,
    rasterize_filtered,
    rasterize_with_contributions,
)
from .metrics import MetricReport, benchmark, mse, psnr, ssim
from .optim import (
    InitConfig,
    OptimizationConfig,
    compute_loss,
    init_attributes,
    init_point_set,
    optimize,
)
from .pruning import ImportanceTable, compute_importance, prune, prune_sweep
from .visibility import (
    CameraClustering,
    ClusterVisibility,
    bake_visibility,
    cluster_cameras,
    render_from_viewpoint,
)
from .synthetic import SyntheticDataset, SyntheticSpec, load_dataset, \
    make_synthetic, save_dataset
from .io import (
    decode_camera_state,
    encode_camera_state,
    export_viewer,
    load_grid,
    load_scene,
    load_visibility,
    save_grid,
    save_scene,
    save_visibility,
)
from .config import PipelineConfig, load_config
from .pipeline import Pipeline

__version__ = "0.1.0"
