use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::gradtape::Tensor;
use crate::score::{predict_x0, sr_downsample, ScoreError, ScoreModel, ScoreRequest, ToySrModel, ValueRange, ViewKey};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMode {
    /// `w(t) = 1`
    Constant,
    /// `w(t) = 1 - alpha_bar(t)`
    OneMinusAlphaBar,
}

impl WeightMode {
    pub fn weight(self, alpha_bar: f32) -> f32 {
        match self {
            WeightMode::Constant => 1.0,
            WeightMode::OneMinusAlphaBar => 1.0 - alpha_bar,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SdsOptions {
    pub t_min: f32,
    pub t_max: f32,
    pub weight: WeightMode,
    pub guidance: f32,
}

impl Default for SdsOptions {
    fn default() -> Self {
        Self {
            t_min: 0.02,
            t_max: 0.98,
            weight: WeightMode::OneMinusAlphaBar,
            guidance: 1.0,
        }
    }
}

impl SdsOptions {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0 <= self.t_min && self.t_min < self.t_max && self.t_max <= 1.0) {
            return Err(format!(
                "t range [{}, {}] must satisfy 0 <= t_min < t_max <= 1",
                self.t_min, self.t_max
            ));
        }
        if !(self.guidance.is_finite() && self.guidance >= 0.0) {
            return Err(format!("guidance scale {} must be finite and >= 0", self.guidance));
        }
        Ok(())
    }
}

/// Conditioning passed through to the scorer.
#[derive(Clone, Copy, Debug, Default)]
pub struct Query<'a> {
    pub prompt: &'a str,
    pub key: Option<ViewKey>,
    pub cond: Option<&'a Tensor>,
}

/// The draw behind one gradient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SdsSample {
    pub t: f32,
    pub alpha_bar: f32,
    pub weight: f32,
}

fn to_signed(t: &Tensor) -> Tensor {
    t.map(|v| 2.0 * v - 1.0)
}

/// `w(t) (x0 - x0_hat)` for one random `(t, eps)`; the denoised estimate is
/// treated as a constant.
pub fn sds_grad(
    scorer: &mut dyn ScoreModel,
    x0: &Tensor,
    opts: &SdsOptions,
    query: Query<'_>,
    rng: &mut impl Rng,
) -> Result<(Tensor, SdsSample), ScoreError> {
    let t = opts.t_min + (opts.t_max - opts.t_min) * rng.random::<f32>();
    let alpha_bar = scorer.schedule().alpha_bar(t)?;
    let signed = scorer.value_range() == ValueRange::Signed;
    let (x0m, condm) = if signed {
        (to_signed(x0), query.cond.map(to_signed))
    } else {
        (x0.clone(), None)
    };
    let (sa, sn) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    let x_t = Tensor::from_fn(x0m.shape().to_vec(), |i| {
        let e: f32 = StandardNormal.sample(rng);
        sa * x0m.data()[i] + sn * e
    });
    let seed = rng.random::<u64>();
    let req = ScoreRequest {
        x_t: &x_t,
        t,
        prompt: query.prompt,
        cond: if signed { condm.as_ref() } else { query.cond },
        guidance: opts.guidance,
        key: query.key,
        seed,
    };
    let eps = scorer.eps(&req)?;
    let x0_hat = predict_x0(&x_t, alpha_bar, &eps)?;
    let weight = opts.weight.weight(alpha_bar);
    let scale = if signed { 2.0 * weight } else { weight };
    let grad = x0m.zip_map(&x0_hat, |a, b| scale * (a - b))?;
    Ok((grad, SdsSample { t, alpha_bar, weight }))
}

/// Source of the low-resolution condition for super-resolution SDS.
#[derive(Clone, Copy, Debug)]
pub enum SrCondition<'a> {
    /// A fixed image, typically the render of frozen first-stage textures.
    Fixed(&'a Tensor),
    /// The current render downsampled, treated as a constant.
    SelfCond,
}

pub fn sr_sds_grad(
    scorer: &mut dyn ScoreModel,
    x0: &Tensor,
    cond: SrCondition<'_>,
    opts: &SdsOptions,
    query: Query<'_>,
    rng: &mut impl Rng,
) -> Result<(Tensor, SdsSample), ScoreError> {
    let own;
    let cond = match cond {
        SrCondition::Fixed(c) => c,
        SrCondition::SelfCond => {
            own = sr_downsample(x0)?;
            &own
        }
    };
    ToySrModel::check_sizes(x0.shape(), cond.shape())?;
    sds_grad(
        scorer,
        x0,
        opts,
        Query {
            cond: Some(cond),
            ..query
        },
        rng,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::{sr_target, DegenerateModel};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn image(seed: u64, h: usize) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(vec![h, h, 3], |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn degenerate_constant_weight_is_deterministic() {
        let target = image(1, 8);
        let x0 = image(2, 8);
        let mut m = DegenerateModel::single(target.clone());
        let opts = SdsOptions {
            weight: WeightMode::Constant,
            ..Default::default()
        };
        let expect = x0.sub(&target).unwrap();
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (g, _) = sds_grad(&mut m, &x0, &opts, Query::default(), &mut rng).unwrap();
            assert!(g.rel_err(&expect).unwrap() < 1e-5);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (g, _) = sds_grad(&mut m, &target, &opts, Query::default(), &mut rng).unwrap();
        assert!(g.max_abs() < 1e-5);
    }

    #[test]
    fn fixed_condition_targets_sr_output() {
        let cond = image(3, 4);
        let x0 = image(4, 16);
        let mut m = ToySrModel::new(1.0);
        let opts = SdsOptions {
            weight: WeightMode::Constant,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (g, _) = sr_sds_grad(
            &mut m,
            &x0,
            SrCondition::Fixed(&cond),
            &opts,
            Query::default(),
            &mut rng,
        )
        .unwrap();
        let expect = x0.sub(&sr_target(&cond, 1.0).unwrap()).unwrap();
        assert!(g.rel_err(&expect).unwrap() < 1e-5);
        let bad = image(5, 8);
        assert!(sr_sds_grad(&mut m, &x0, SrCondition::Fixed(&bad), &opts, Query::default(), &mut rng).is_err());
    }

    #[test]
    fn options_validation() {
        assert!(SdsOptions::default().validate().is_ok());
        let bad = SdsOptions {
            t_min: 0.5,
            t_max: 0.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
