//! Radial power spectra of the bundled image, a 4x blurred copy and an
//! unsharp-masked copy.
//!
//! `cargo run --release --example spectrum -- [out.png]`

use texdistill::analysis::{display_image, line_plot, power_spectrum, Series};
use texdistill::assets::{bundled, write_png};
use texdistill::score::{sr_downsample, sr_target};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "spectrum.png".into());
    let image = display_image(&bundled::astronaut_256());
    let low = sr_downsample(&image)?;
    let variants = [
        ("original", image.clone(), [31, 119, 180]),
        ("blurred", sr_target(&low, 0.0)?, [255, 127, 14]),
        ("sharpened", sr_target(&low, 2.0)?, [44, 160, 44]),
    ];
    let mut curves = Vec::new();
    for (name, img, _) in &variants {
        let report = power_spectrum(img)?;
        println!(
            "{name:>9}: total {:.3e}, high band {:.3e}",
            report.total_power,
            report.high_band_energy()
        );
        curves.push(
            report
                .log_radial()
                .into_iter()
                .enumerate()
                .map(|(i, v)| (i as f64, v))
                .collect::<Vec<_>>(),
        );
    }
    let series: Vec<Series<'_>> = curves
        .iter()
        .zip(&variants)
        .map(|(points, (_, _, color))| Series { points, color: *color })
        .collect();
    write_png(&out, &line_plot(&series, 480, 320))?;
    println!("wrote {out}");
    Ok(())
}
