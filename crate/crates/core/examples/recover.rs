//! Stage-1 texture recovery: a keyed closed-form scorer holds renders of the
//! reference material from fixed cameras, and the optimized textures should
//! reproduce them.
//!
//! `cargo run --release --example recover -- [resolution] [steps] [out_dir]`

use std::path::PathBuf;

use texdistill::cli::{texgen, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let resolution: usize = args.first().map(|s| s.parse()).transpose()?.unwrap_or(512);
    let steps: usize = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(300);
    let out = PathBuf::from(args.get(2).map(String::as_str).unwrap_or("recover_out"));

    let json = serde_json::json!({
        "mesh": "builtin:sphere",
        "prompt": "reference material",
        "scorer": "toy",
        "resolution": resolution,
        "out": out,
        "stage1": { "steps": steps },
        "stage2": { "enabled": false },
    });
    let mut cfg = RunConfig::from_json(&json.to_string())?;
    cfg.finish()?;

    let start = std::time::Instant::now();
    let report = texgen(&cfg)?;
    println!("{steps} steps in {:.1?}", start.elapsed());
    for (view, psnr) in report.recovery.unwrap_or_default().iter().enumerate() {
        println!("view {view}: {psnr:.2} dB");
    }
    let last = report.stage1.metrics.last().map(|m| m.grad_norm).unwrap_or(0.0);
    println!(
        "final gradient norm {last:.3e}; textures in {}",
        out.join("textures").display()
    );
    Ok(())
}
