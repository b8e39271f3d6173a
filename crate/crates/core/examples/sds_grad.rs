//! Score-distillation gradients against the closed-form scorer: with unit
//! weighting every draw gives the same gradient, with `1 - alpha_bar`
//! weighting only the scale varies.
//!
//! `cargo run --release --example sds_grad -- [draws]`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use texdistill::gradtape::Tensor;
use texdistill::score::DegenerateModel;
use texdistill::sds::{sds_grad, Query, SdsOptions, WeightMode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let draws: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(8);
    let x0 = Tensor::from_fn(vec![32, 32, 3], |i| (i % 11) as f32 / 10.0);
    let target = Tensor::full(vec![32, 32, 3], 0.5);
    let direction = x0.sub(&target)?;
    let mut scorer = DegenerateModel::single(target);
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    for weight in [WeightMode::Constant, WeightMode::OneMinusAlphaBar] {
        println!("{weight:?}");
        let opts = SdsOptions {
            weight,
            ..Default::default()
        };
        for _ in 0..draws {
            let (g, s) = sds_grad(&mut scorer, &x0, &opts, Query::default(), &mut rng)?;
            let off_axis = g.rel_err(&direction.scaled(s.weight))?;
            println!(
                "  t {:.3}  alpha_bar {:.4}  w {:.4}  |g| {:8.4}  off-axis {off_axis:.1e}",
                s.t,
                s.alpha_bar,
                s.weight,
                g.norm()
            );
        }
    }
    Ok(())
}
