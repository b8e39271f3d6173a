//! Fixed versus self conditioning under the toy super-resolution scorer.
//!
//! `cargo run --release --example sr_anchor -- [steps] [gain] [out_dir]`

use std::path::PathBuf;

use texdistill::analysis::{display_image, sr_anchor_experiment, write_sr_anchor, SrAnchorConfig};
use texdistill::assets::bundled;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = SrAnchorConfig::default();
    if let Some(s) = args.first() {
        cfg.steps = s.parse()?;
    }
    if let Some(g) = args.get(1) {
        cfg.gain = g.parse()?;
    }
    let out = PathBuf::from(args.get(2).map(String::as_str).unwrap_or("sr_anchor_out"));

    let init = display_image(&bundled::astronaut_256());
    let report = sr_anchor_experiment(&init, &cfg)?;
    for (name, run) in [("fixed", &report.fixed), ("self", &report.self_cond)] {
        let (a, b) = (run.first(), run.last());
        println!(
            "{name:>5}: psnr to anchor {:.2} -> {:.2} dB, high band x{:.3}, max|x| {:.3} -> {:.3}",
            a.psnr_to_anchor,
            b.psnr_to_anchor,
            run.high_band_ratio(),
            a.max_abs,
            b.max_abs
        );
    }
    std::fs::create_dir_all(&out)?;
    write_sr_anchor(&report, &out)?;
    println!("wrote {}", out.display());
    Ok(())
}
