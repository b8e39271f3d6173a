use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::gradtape::{Graph, NodeId, Tensor};

/// Feature widths per U-Net level, finest first.
pub const DIP_CHANNELS: [usize; 5] = [16, 32, 64, 64, 64];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DipConfig {
    pub noise_channels: usize,
    pub leaky_slope: f32,
}

impl Default for DipConfig {
    fn default() -> Self {
        Self {
            noise_channels: 8,
            leaky_slope: 0.2,
        }
    }
}

impl DipConfig {
    /// Side lengths must survive one halving per level below the top.
    pub fn check_resolution(resolution: usize) -> Result<(), String> {
        let f = 1 << (DIP_CHANNELS.len() - 1);
        if resolution == 0 || !resolution.is_multiple_of(f) {
            return Err(format!("DIP resolution {resolution} must be a multiple of {f}"));
        }
        Ok(())
    }
}

fn normal_tensor(shape: Vec<usize>, std: f32, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let z: f32 = StandardNormal.sample(rng);
        z * std
    })
    .with_grad()
}

pub(crate) struct Builder<'a, R: Rng> {
    pub graph: &'a mut Graph,
    pub params: &'a mut BTreeMap<String, Tensor>,
    pub rng: &'a mut R,
}

impl<R: Rng> Builder<'_, R> {
    /// Convolution with He-initialized weights registered as `name.w`, `name.b`.
    pub fn conv(&mut self, name: &str, x: NodeId, k: usize, cin: usize, cout: usize, gain: f32) -> NodeId {
        let std = gain * (2.0 / (k * k * cin) as f32).sqrt();
        let w = format!("{name}.w");
        let b = format!("{name}.b");
        self.params
            .insert(w.clone(), normal_tensor(vec![k, k, cin, cout], std, self.rng));
        self.params.insert(b.clone(), Tensor::zeros(vec![cout]).with_grad());
        let (wn, bn) = (self.graph.input(&w), self.graph.input(&b));
        self.graph.conv2d(x, wn, bn, 1, k / 2)
    }
}

/// Adds an encoder-decoder with skip connections over fixed noise and
/// returns the finest decoder features (`DIP_CHANNELS[0]` wide).
pub(crate) fn build_unet<R: Rng>(b: &mut Builder<'_, R>, resolution: usize, cfg: &DipConfig) -> NodeId {
    let noise = Tensor::from_fn(vec![resolution, resolution, cfg.noise_channels], |_| {
        StandardNormal.sample(b.rng)
    });
    let mut x = b.graph.constant(noise);
    let mut cin = cfg.noise_channels;
    let mut skips = Vec::new();
    for (level, &c) in DIP_CHANNELS.iter().enumerate() {
        if level > 0 {
            x = b.graph.downsample_box(x, 2);
        }
        x = b.conv(&format!("dip.enc{level}a"), x, 3, cin, c, 1.0);
        x = b.graph.leaky_relu(x, cfg.leaky_slope);
        x = b.conv(&format!("dip.enc{level}b"), x, 3, c, c, 1.0);
        x = b.graph.leaky_relu(x, cfg.leaky_slope);
        skips.push((x, c));
        cin = c;
    }
    skips.pop();
    while let Some((skip, c)) = skips.pop() {
        let level = skips.len();
        x = b.graph.upsample2x(x);
        x = b.graph.concat(&[x, skip]);
        x = b.conv(&format!("dip.dec{level}"), x, 3, cin + c, c, 1.0);
        x = b.graph.leaky_relu(x, cfg.leaky_slope);
        cin = c;
    }
    x
}
