//! Hybrid explicit-representation renderer: an opacity/SH-textured triangle
//! mesh and 3D Gaussian splats composited in one alpha-blended software
//! rasterization pipeline, with stable hybrid depth sorting, facet-rigged
//! splat animation, and gradient-based joint fitting of texture, opacity and
//! splat parameters against reference images.

pub mod error;
pub mod geom;
pub mod hybrid;
pub mod io;
pub mod mesh;
pub mod optim;
pub mod rig;
pub mod scene;
pub mod splat;

pub use error::{Error, Result};
pub use geom::{
    covariance_3d, eval_sh, project_covariance, Camera, Image, ShColor, COV2D_FLOOR,
};
pub use hybrid::{
    blend, blend_detailed, classify_splat, merge_fragments, render, render_forward, Forward,
    FragmentSource, HybridFragment, PrimitiveMask, RenderOptions, SortMode, SplatHit,
    SplatMeshClass, DEFAULT_LAMBDA, TRANSMITTANCE_EPS,
};
pub use mesh::{
    rasterize_mesh, DepthMap, FragmentBuffer, MeshFragment, OpacityMap, OpacityMode, ShMap,
    TexturedMesh, ViewDirMode,
};
pub use rig::{bind_splat, facet_frame, pose_splat, FacetFrame, RiggedSplat};
pub use scene::{Scene, Splats};
pub use splat::{
    rasterize_splats, splat_alpha, DropStats, GaussianSplat, ScreenSplat, SplatBins, ALPHA_CAP,
    ALPHA_SKIP, TILE_SIZE,
};
