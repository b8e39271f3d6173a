//! Four-cell toy reconstruction study on the bundled 64x64 image.
//!
//! `cargo run --release --example toy2d -- [steps] [seeds] [out_dir]`

use std::path::PathBuf;

use texdistill::analysis::{display_image, toy2d_experiment, write_toy2d, Toy2DConfig};
use texdistill::assets::bundled;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let steps = args.first().map(|s| s.parse()).transpose()?.unwrap_or(2000);
    let seeds: u64 = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(3);
    let out = PathBuf::from(args.get(2).map(String::as_str).unwrap_or("toy2d_out"));

    let target = display_image(&bundled::astronaut_64());
    let cfg = Toy2DConfig {
        steps,
        ..Default::default()
    };
    let start = std::time::Instant::now();
    let seeds: Vec<u64> = (0..seeds).collect();
    let report = toy2d_experiment(&target, &cfg, &seeds)?;
    println!("{} cells in {:.1?}", report.cells.len(), start.elapsed());
    for r in report.summary() {
        println!(
            "{:>6}/{:<8} psnr mean {:6.2} [{:6.2}, {:6.2}]  latent rel {:.2e}  hf {:.3e}",
            r.model, r.param, r.psnr_mean, r.psnr_min, r.psnr_max, r.latent_residual_rel_max, r.high_band_energy_mean
        );
    }
    println!("target hf {:.3e}", report.target_high_band_energy);
    std::fs::create_dir_all(&out)?;
    write_toy2d(&report, &out)?;
    println!("wrote {}", out.display());
    Ok(())
}
