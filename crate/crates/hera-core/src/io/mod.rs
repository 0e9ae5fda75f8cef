//! Deterministic loading and saving of scene assets.
//!
//! Formats (all multi-byte values little-endian):
//! - Meshes: Wavefront OBJ restricted to `v`, `vt` and `f v/vt` records,
//!   fan-triangulated on load.
//! - Splats: binary PLY with the common splat field layout
//!   (`x,y,z, f_dc_0..2, f_rest_0..44, opacity, scale_0..2, rot_0..3`).
//! - Float maps: `HERAMAP1` raw planar container
//!   (magic + u32 width/height/channels + channel planes of f32).
//! - Rig tables: `HERARIG1` sidecar (magic + u32 count + facet id per splat).
//! - Cameras: JSON document with row-major rotations.
//! - Images: 8/16-bit PNG in, 8-bit sRGB PNG out.

mod bundle;
mod cameras;
mod heramap;
mod obj;
mod ply;
mod png;
mod rigbin;

pub use bundle::{load_scene, save_scene};
pub use cameras::{load_cameras, ring_cameras, save_cameras, CameraSet};
pub use heramap::{
    load_heramap, load_image_heramap, load_opacity_map, load_texture_map, save_heramap,
    save_image_heramap, save_opacity_map, save_texture_map,
};
pub use obj::{load_obj, save_obj, MeshSkeleton};
pub use ply::{load_splats, save_splats, PlyLoad};
pub use png::{
    load_opacity_png16, load_png_linear, load_png_raw, load_texture_png16, save_png_srgb,
};
pub use rigbin::{load_rig, save_rig};
