//! Meshes, environment maps and texture images on disk.

pub mod bundled;
mod hdr;
mod obj;
mod texio;

use std::path::{Path, PathBuf};

pub use hdr::{decode_rgbe, encode_rgbe, load_hdr, parse_hdr, write_hdr, EnvironmentMap};
pub use obj::{load_obj, parse_obj, write_obj, Mesh};
pub use texio::{
    encode_normal_byte, linear_to_srgb, load_exr, load_png_linear, load_texture_set, quantize_unit, read_png, srgb_png,
    srgb_to_linear, unit_png, write_exr, write_png, write_texture_pngs, write_texture_set, PngImage,
};

#[derive(Debug, thiserror::Error)]
pub enum AssetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("mesh not UV-unwrapped (face on line {line} has no texture coordinates)")]
    NotUvUnwrapped { line: usize },
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("not a Radiance HDR file (bad magic)")]
    BadMagic,
    #[error("malformed HDR header: {0}")]
    HdrHeader(String),
    #[error("truncated scanline {row}")]
    TruncatedScanline { row: usize },
    #[error("invalid environment map: {0}")]
    InvalidEnv(String),
    #[error("png: {0}")]
    Png(String),
    #[error("exr: {0}")]
    Exr(String),
}

impl AssetError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        AssetError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
