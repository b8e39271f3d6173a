//! Finite-difference checks of the shading VJP.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::assets::{bundled, EnvironmentMap};
use crate::gradtape::Tensor;
use crate::render::{
    prefilter_env, rasterize, shade, shade_vjp, PrefilteredEnv, SceneSample, ShadeOptions, TextureSet,
};

pub const CHANNELS: [&str; 4] = ["diffuse", "roughness", "metalness", "normal"];

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckRow {
    pub seed: u64,
    pub channel: &'static str,
    /// `|fd - analytic| / |analytic|` over the whole channel.
    pub rel_err: f64,
    /// Largest entry-wise `|fd - analytic| / max(|analytic|)`.
    pub max_entry_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradcheckConfig {
    pub texture_size: usize,
    pub render_size: usize,
    pub step: f32,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            texture_size: 16,
            render_size: 64,
            step: 1e-3,
        }
    }
}

/// Low-frequency environment whose lookups are smooth at texel scale.
pub fn smooth_env(height: usize) -> EnvironmentMap {
    EnvironmentMap::from_fn(height, |y, x| {
        let d = crate::render::uv_to_dir((x as f32 + 0.5) / (2 * height) as f32, (y as f32 + 0.5) / height as f32);
        let base = 0.6 + 0.3 * d.y + 0.25 * d.x + 0.15 * d.z * d.z;
        [base, base * 0.9 + 0.05, base * 0.8 + 0.1]
    })
    .expect("positive radiance")
}

/// Random material maps with values in `[0.1, 0.99]` and tilted unit normals.
pub fn random_textures(rng: &mut impl Rng, size: usize) -> TextureSet {
    let mut u = |lo: f32, hi: f32| rng.random_range(lo..hi);
    let diffuse = Tensor::from_fn(vec![size, size, 3], |_| u(0.1, 0.99));
    let roughness = Tensor::from_fn(vec![size, size, 1], |_| u(0.1, 0.99));
    let metalness = Tensor::from_fn(vec![size, size, 1], |_| u(0.1, 0.99));
    let mut normal = Vec::with_capacity(size * size * 3);
    for _ in 0..size * size {
        let (x, y) = (u(-0.3, 0.3), u(-0.3, 0.3));
        let l = (x * x + y * y + 1.0).sqrt();
        normal.extend_from_slice(&[x / l, y / l, 1.0 / l]);
    }
    TextureSet {
        diffuse,
        roughness,
        metalness,
        normal: Tensor::new(vec![size, size, 3], normal).expect("sized"),
    }
}

fn map_mut(t: &mut TextureSet, k: usize) -> &mut Tensor {
    match k {
        0 => &mut t.diffuse,
        1 => &mut t.roughness,
        2 => &mut t.metalness,
        _ => &mut t.normal,
    }
}

fn map_ref(t: &TextureSet, k: usize) -> &Tensor {
    t.maps()[k]
}

/// Compares [`shade_vjp`] against central differences of
/// `<weights, shade(textures)>` for every texel of every channel.
pub fn shading_gradcheck(seed: u64, cfg: &GradcheckConfig, penv: &PrefilteredEnv) -> Vec<GradcheckRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mesh = bundled::uv_sphere(24, 48);
    let sample = SceneSample {
        env_rotation: rng.random_range(0.0..std::f32::consts::TAU),
        ..SceneSample::looking_at_origin(
            1.4,
            rng.random_range(0.0..std::f32::consts::TAU),
            rng.random_range(-0.2..0.6),
            0.8,
        )
    };
    let gb = rasterize(&mesh, &sample, cfg.render_size, cfg.render_size).expect("valid camera");
    let tex = random_textures(&mut rng, cfg.texture_size);
    let opts = ShadeOptions::default();
    let weights = Tensor::from_fn(vec![cfg.render_size, cfg.render_size, 3], |_| {
        rng.random_range(-1.0..1.0)
    });
    let analytic = shade_vjp(&gb, &tex, penv, &sample, &opts, &weights).expect("valid inputs");

    let loss_diff = |a: &Tensor, b: &Tensor| -> f64 {
        // per-pixel differences in f32, contracted in f64
        a.data()
            .iter()
            .zip(b.data())
            .zip(weights.data())
            .map(|((x, y), w)| ((x - y) * w) as f64)
            .sum()
    };

    let mut rows = Vec::new();
    for (k, name) in CHANNELS.iter().enumerate() {
        let an = map_ref(&analytic, k);
        let mut fd = vec![0.0f64; an.len()];
        let mut probe = tex.clone();
        for (i, slot) in fd.iter_mut().enumerate() {
            let orig = map_ref(&tex, k).data()[i];
            map_mut(&mut probe, k).data_mut()[i] = orig + cfg.step;
            let plus = shade(&gb, &probe, penv, &sample, &opts).expect("valid");
            map_mut(&mut probe, k).data_mut()[i] = orig - cfg.step;
            let minus = shade(&gb, &probe, penv, &sample, &opts).expect("valid");
            map_mut(&mut probe, k).data_mut()[i] = orig;
            // actual perturbation after rounding
            let h = ((orig + cfg.step) - (orig - cfg.step)) as f64;
            *slot = loss_diff(&plus, &minus) / h;
        }
        let an64: Vec<f64> = an.data().iter().map(|v| *v as f64).collect();
        let diff: f64 = fd.iter().zip(&an64).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let norm: f64 = an64.iter().map(|v| v * v).sum::<f64>().sqrt();
        let max_an = an64.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let max_entry = fd.iter().zip(&an64).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        rows.push(GradcheckRow {
            seed,
            channel: name,
            rel_err: if norm > 0.0 { diff / norm } else { diff },
            max_entry_err: if max_an > 0.0 { max_entry / max_an } else { max_entry },
        });
    }
    rows
}

/// The default check: smooth environment, five seeds.
pub fn default_suite(seeds: &[u64]) -> Vec<GradcheckRow> {
    let penv = prefilter_env(&smooth_env(64), crate::render::DEFAULT_MIPS, 64).expect("valid env");
    let cfg = GradcheckConfig::default();
    seeds.iter().flat_map(|&s| shading_gradcheck(s, &cfg, &penv)).collect()
}
