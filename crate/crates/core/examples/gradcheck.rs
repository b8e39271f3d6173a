//! Finite-difference check of the shading gradients for every texture
//! channel.
//!
//! `cargo run --release --example gradcheck -- [seeds]`

use texdistill::analysis::gradcheck::default_suite;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seeds: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(3);
    let seeds: Vec<u64> = (0..seeds).collect();
    let start = std::time::Instant::now();
    let rows = default_suite(&seeds);
    println!("{:>4}  {:<10} {:>10} {:>10}", "seed", "channel", "rel_err", "max_entry");
    for r in &rows {
        println!(
            "{:>4}  {:<10} {:>10.2e} {:>10.2e}",
            r.seed, r.channel, r.rel_err, r.max_entry_err
        );
    }
    let worst = rows.iter().map(|r| r.rel_err).fold(0.0, f64::max);
    println!("worst {worst:.2e} in {:.1?}", start.elapsed());
    Ok(())
}
