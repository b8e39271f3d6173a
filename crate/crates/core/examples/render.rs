//! Renders a texture set on a bundled mesh from the evaluation cameras.
//!
//! `cargo run --release --example render -- [mesh] [size] [out_dir] [texture_dir]`
//!
//! `mesh` is `builtin:sphere`, `builtin:torus` or an OBJ path. Without a
//! texture directory the bundled reference material is used.

use std::path::PathBuf;

use texdistill::assets::{bundled, load_texture_set, srgb_png, write_png};
use texdistill::cli::eval_views;
use texdistill::render::{prefilter_env, rasterize, shade, tonemap, ShadeOptions, DEFAULT_MIPS, DEFAULT_SAMPLES};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mesh = bundled::mesh_by_name(args.first().map(String::as_str).unwrap_or("builtin:torus"))?;
    let size: usize = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(256);
    let out = PathBuf::from(args.get(2).map(String::as_str).unwrap_or("render_out"));
    let textures = match args.get(3) {
        Some(dir) => load_texture_set(dir)?,
        None => bundled::reference_textures(512),
    };

    let env = prefilter_env(&bundled::studio_env(), DEFAULT_MIPS, DEFAULT_SAMPLES)?;
    let opts = ShadeOptions::default();
    std::fs::create_dir_all(&out)?;
    let start = std::time::Instant::now();
    let views = eval_views(20, 45.0);
    for (i, view) in views.iter().enumerate() {
        let gb = rasterize(&mesh, view, size, size)?;
        let img = tonemap(&shade(&gb, &textures, &env, view, &opts)?);
        write_png(out.join(format!("view_{i:02}.png")), &srgb_png(&img)?)?;
    }
    println!(
        "{} views at {size}px in {:.1?} -> {}",
        views.len(),
        start.elapsed(),
        out.display()
    );
    Ok(())
}
