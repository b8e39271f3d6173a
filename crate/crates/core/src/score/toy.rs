use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{DiffusionSchedule, ScoreError, ScoreModel, ScoreRequest, ViewKey};
use crate::gradtape::kernels::{
    blur_binomial5, conv2d_backward, conv2d_forward, downsample_box, upsample_bilinear, ConvGeom,
};
use crate::gradtape::Tensor;

/// Upsampling factor of the toy super-resolution model.
pub const SR_FACTOR: usize = 4;

/// Closed-form noise prediction of a distribution concentrated at `target`.
/// Undefined without noise, so `alpha_bar` must be below 1.
pub fn degenerate_eps(x_t: &Tensor, alpha_bar: f32, target: &Tensor) -> Result<Tensor, ScoreError> {
    if !(alpha_bar > 0.0 && alpha_bar < 1.0) {
        return Err(ScoreError::NoiseFree(alpha_bar));
    }
    let a = f64::from(alpha_bar);
    let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
    Ok(x_t.zip_map(target, |x, t| ((f64::from(x) - sa * f64::from(t)) / sn) as f32)?)
}

#[derive(Clone, Debug)]
enum Targets {
    Single(Tensor),
    Keyed(BTreeMap<ViewKey, Tensor>),
}

/// Optimal denoiser for a single image, or for one image per view.
#[derive(Clone, Debug)]
pub struct DegenerateModel {
    targets: Targets,
    schedule: DiffusionSchedule,
}

impl DegenerateModel {
    pub fn single(target: Tensor) -> Self {
        Self {
            targets: Targets::Single(target),
            schedule: DiffusionSchedule::Cosine,
        }
    }

    pub fn keyed(targets: BTreeMap<ViewKey, Tensor>) -> Self {
        Self {
            targets: Targets::Keyed(targets),
            schedule: DiffusionSchedule::Cosine,
        }
    }

    pub fn target(&self, key: Option<ViewKey>) -> Result<&Tensor, ScoreError> {
        match (&self.targets, key) {
            (Targets::Single(t), _) => Ok(t),
            (Targets::Keyed(map), Some(k)) => map.get(&k).ok_or(ScoreError::UnknownKey(key)),
            (Targets::Keyed(_), None) => Err(ScoreError::UnknownKey(None)),
        }
    }
}

impl ScoreModel for DegenerateModel {
    fn schedule(&self) -> &DiffusionSchedule {
        &self.schedule
    }

    fn eps(&mut self, req: &ScoreRequest<'_>) -> Result<Tensor, ScoreError> {
        let a = self.schedule.alpha_bar(req.t)?;
        degenerate_eps(req.x_t, a, self.target(req.key)?)
    }
}

/// Fixed random linear encoder: 8x8 kernel, stride 4, padding 2, 3 -> 4
/// channels, unit-variance weights drawn from seed 7.
#[derive(Clone, Debug)]
pub struct ToyEncoder {
    weight: Vec<f32>,
}

impl Default for ToyEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl ToyEncoder {
    pub const KERNEL: usize = 8;
    pub const STRIDE: usize = 4;
    pub const PAD: usize = 2;
    pub const IN_CHANNELS: usize = 3;
    pub const OUT_CHANNELS: usize = 4;
    pub const SEED: u64 = 7;

    pub fn new() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(Self::SEED);
        let n = Self::KERNEL * Self::KERNEL * Self::IN_CHANNELS * Self::OUT_CHANNELS;
        let weight = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        Self { weight }
    }

    fn geom(image_shape: &[usize]) -> Result<ConvGeom, ScoreError> {
        let (h, w) = match image_shape {
            [h, w, c] if *c == Self::IN_CHANNELS => (*h, *w),
            _ => return Err(crate::gradtape::TapeError::NotAnImage(image_shape.to_vec()).into()),
        };
        if h % Self::STRIDE != 0 || w % Self::STRIDE != 0 || h == 0 || w == 0 {
            return Err(ScoreError::Indivisible {
                height: h,
                width: w,
                factor: Self::STRIDE,
            });
        }
        Ok(ConvGeom {
            height: h,
            width: w,
            in_channels: Self::IN_CHANNELS,
            out_channels: Self::OUT_CHANNELS,
            kernel_h: Self::KERNEL,
            kernel_w: Self::KERNEL,
            stride: Self::STRIDE,
            pad: Self::PAD,
        })
    }

    /// `[H, W, 3]` image to `[H/4, W/4, 4]` latent.
    pub fn encode(&self, image: &Tensor) -> Result<Tensor, ScoreError> {
        let g = Self::geom(image.shape())?;
        let (ho, wo) = (g.out_height(), g.out_width());
        let mut out = vec![0.0; ho * wo * Self::OUT_CHANNELS];
        conv2d_forward(&g, image.data(), &self.weight, &[0.0; Self::OUT_CHANNELS], &mut out);
        Ok(Tensor::new(vec![ho, wo, Self::OUT_CHANNELS], out)?)
    }

    /// Transpose of [`ToyEncoder::encode`] applied to a latent gradient.
    pub fn encode_adjoint(&self, image_shape: &[usize], grad: &Tensor) -> Result<Tensor, ScoreError> {
        let g = Self::geom(image_shape)?;
        let expect = [g.out_height(), g.out_width(), Self::OUT_CHANNELS];
        if grad.shape() != expect {
            return Err(crate::gradtape::TapeError::ShapePair {
                left: grad.shape().to_vec(),
                right: expect.to_vec(),
            }
            .into());
        }
        let mut gi = vec![0.0; image_shape.iter().product()];
        let dummy = vec![0.0; gi.len()];
        conv2d_backward(&g, &dummy, &self.weight, grad.data(), Some(&mut gi), None, None);
        Ok(Tensor::new(image_shape.to_vec(), gi)?)
    }
}

/// Unsharp-masked upsample `clamp01(U + gain (U - blur5 U))` of a
/// low-resolution image.
pub fn sr_target(cond: &Tensor, gain: f32) -> Result<Tensor, ScoreError> {
    let (h, w, c) = cond.hwc()?;
    let up = upsample_bilinear(cond.data(), h, w, c, SR_FACTOR);
    let (hu, wu) = (h * SR_FACTOR, w * SR_FACTOR);
    let blurred = blur_binomial5(&up, hu, wu, c);
    let data = up
        .iter()
        .zip(&blurred)
        .map(|(u, b)| (u + gain * (u - b)).clamp(0.0, 1.0))
        .collect();
    Ok(Tensor::new(vec![hu, wu, c], data)?)
}

/// Box downsample by [`SR_FACTOR`].
pub fn sr_downsample(image: &Tensor) -> Result<Tensor, ScoreError> {
    let (h, w, c) = image.hwc()?;
    if h % SR_FACTOR != 0 || w % SR_FACTOR != 0 {
        return Err(ScoreError::Indivisible {
            height: h,
            width: w,
            factor: SR_FACTOR,
        });
    }
    let data = downsample_box(image.data(), h, w, c, SR_FACTOR);
    Ok(Tensor::new(vec![h / SR_FACTOR, w / SR_FACTOR, c], data)?)
}

/// Super-resolution stand-in: the degenerate denoiser around
/// [`sr_target`] of the condition image.
#[derive(Clone, Debug)]
pub struct ToySrModel {
    pub gain: f32,
    schedule: DiffusionSchedule,
}

impl ToySrModel {
    pub fn new(gain: f32) -> Self {
        Self {
            gain,
            schedule: DiffusionSchedule::Cosine,
        }
    }

    pub fn check_sizes(image: &[usize], cond: &[usize]) -> Result<(), ScoreError> {
        let ok = matches!((image, cond), ([h, w, c], [hc, wc, cc])
            if *h == hc * SR_FACTOR && *w == wc * SR_FACTOR && c == cc);
        if ok {
            Ok(())
        } else {
            Err(ScoreError::SizeRatio {
                image: image.to_vec(),
                cond: cond.to_vec(),
                factor: SR_FACTOR,
            })
        }
    }
}

impl ScoreModel for ToySrModel {
    fn schedule(&self) -> &DiffusionSchedule {
        &self.schedule
    }

    fn eps(&mut self, req: &ScoreRequest<'_>) -> Result<Tensor, ScoreError> {
        let cond = req.cond.ok_or(ScoreError::MissingCondition)?;
        Self::check_sizes(req.x_t.shape(), cond.shape())?;
        let a = self.schedule.alpha_bar(req.t)?;
        degenerate_eps(req.x_t, a, &sr_target(cond, self.gain)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::predict_x0;

    #[test]
    fn degenerate_scalar() {
        let x = Tensor::full(vec![1, 1, 1], 1.0);
        let t = Tensor::full(vec![1, 1, 1], 0.5);
        let e = degenerate_eps(&x, 0.5, &t).unwrap().data()[0];
        assert!((e - 0.91421).abs() < 1e-4);
        let e0 = degenerate_eps(&x, 0.5, &Tensor::zeros(vec![1, 1, 1])).unwrap().data()[0];
        assert!((e0 - 1.0 / 0.5f32.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn noiseless_input_gives_zero_eps() {
        let target = Tensor::from_fn(vec![4, 4, 3], |i| (i as f32 * 0.37).sin());
        let a = 0.3f32;
        let x = target.scaled(a.sqrt());
        let e = degenerate_eps(&x, a, &target).unwrap();
        assert!(e.max_abs() < 1e-6);
    }

    #[test]
    fn keyed_lookup() {
        let mut map = BTreeMap::new();
        map.insert(ViewKey(3), Tensor::zeros(vec![2, 2, 3]));
        let mut m = DegenerateModel::keyed(map);
        let x = Tensor::full(vec![2, 2, 3], 0.5);
        let mut req = ScoreRequest::new(&x, 0.5);
        assert!(matches!(m.eps(&req), Err(ScoreError::UnknownKey(None))));
        req.key = Some(ViewKey(4));
        assert!(m.eps(&req).is_err());
        req.key = Some(ViewKey(3));
        let e = m.eps(&req).unwrap();
        let x0 = predict_x0(&x, 0.5, &e).unwrap();
        assert!(x0.max_abs() < 1e-6);
    }

    #[test]
    fn encoder_shapes_and_linearity() {
        let enc = ToyEncoder::new();
        let x = Tensor::from_fn(vec![16, 16, 3], |i| ((i * 7919) % 13) as f32 / 13.0);
        let z = enc.encode(&x).unwrap();
        assert_eq!(z.shape(), &[4, 4, 4]);
        assert_eq!(enc.encode(&Tensor::zeros(vec![16, 16, 3])).unwrap().max_abs(), 0.0);
        let z3 = enc.encode(&x.scaled(3.0)).unwrap();
        assert!(z3.rel_err(&z.scaled(3.0)).unwrap() < 1e-6);
        assert!(matches!(
            enc.encode(&Tensor::zeros(vec![18, 16, 3])),
            Err(ScoreError::Indivisible { .. })
        ));
    }

    #[test]
    fn encoder_adjoint_identity() {
        let enc = ToyEncoder::new();
        let x = Tensor::from_fn(vec![8, 12, 3], |i| (i as f32 * 0.11).cos());
        let g = Tensor::from_fn(vec![2, 3, 4], |i| (i as f32 * 0.7).sin());
        let lhs: f64 = enc
            .encode(&x)
            .unwrap()
            .data()
            .iter()
            .zip(g.data())
            .map(|(a, b)| (a * b) as f64)
            .sum();
        let at = enc.encode_adjoint(x.shape(), &g).unwrap();
        let rhs: f64 = x.data().iter().zip(at.data()).map(|(a, b)| (a * b) as f64).sum();
        assert!((lhs - rhs).abs() < 1e-4 * lhs.abs().max(1.0));
    }

    #[test]
    fn sr_target_cases() {
        let c = Tensor::full(vec![4, 4, 3], 0.4);
        let t = sr_target(&c, 1.0).unwrap();
        assert_eq!(t.shape(), &[16, 16, 3]);
        assert!(t.data().iter().all(|v| (v - 0.4).abs() < 1e-6));

        let edge = Tensor::from_fn(vec![8, 8, 3], |i| if (i / 3) % 8 >= 4 { 0.7 } else { 0.3 });
        let up = sr_target(&edge, 0.0).unwrap();
        let (h, w, ch) = edge.hwc().unwrap();
        assert_eq!(up.data(), upsample_bilinear(edge.data(), h, w, ch, 4).as_slice());
        let sharp = sr_target(&edge, 1.0).unwrap();
        assert!(sharp.data().iter().cloned().fold(0.0f32, f32::max) > 0.7 + 1e-3);
        assert!(sharp.data().iter().cloned().fold(1.0f32, f32::min) < 0.3 - 1e-3);
    }

    #[test]
    fn sr_size_check() {
        let mut m = ToySrModel::new(1.0);
        let x = Tensor::zeros(vec![16, 16, 3]);
        let bad = Tensor::zeros(vec![8, 8, 3]);
        let mut req = ScoreRequest::new(&x, 0.3);
        assert!(matches!(m.eps(&req), Err(ScoreError::MissingCondition)));
        req.cond = Some(&bad);
        assert!(matches!(m.eps(&req), Err(ScoreError::SizeRatio { .. })));
    }
}
