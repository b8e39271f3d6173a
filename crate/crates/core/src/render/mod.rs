//! Software rasterization and split-sum image-based shading.
//!
//! Rendering is a deferred two-pass process: [`rasterize`] produces a
//! [`GBuffer`] for a fixed mesh and camera, and [`shade`] evaluates the
//! material maps on it. Only the shading pass depends on the textures, and
//! [`shade_vjp`] returns its exact gradient with respect to every texel.

mod camera;
mod env;
mod raster;
mod shade;
mod texture;

pub use camera::{fixed_views, sample_scene, SceneConfig, SceneSample};
pub use env::{
    dir_to_uv, env_brdf_lut, prefilter_env, uv_to_dir, BrdfLut, EnvImage, PrefilteredEnv, DEFAULT_LUT_RESOLUTION,
    DEFAULT_MIPS, DEFAULT_SAMPLES,
};
pub use raster::{rasterize, GBuffer};
pub use shade::{shade, shade_vjp, tonemap, tonemap_vjp, ShadeOptions};
pub use texture::TextureSet;

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("degenerate camera: {0}")]
    DegenerateCamera(String),
    #[error("render resolution {width}x{height} is below 16x16")]
    Resolution { width: usize, height: usize },
    #[error("scene bounds: {0}")]
    Bounds(String),
    #[error("prefilter: {0}")]
    Prefilter(String),
    #[error("non-finite shading output at pixel ({x}, {y})")]
    NonFinite { x: usize, y: usize },
    #[error("texture set: {0}")]
    Textures(String),
    #[error("image shape {got:?} does not match the {height}x{width} g-buffer")]
    ImageShape {
        got: Vec<usize>,
        height: usize,
        width: usize,
    },
}
