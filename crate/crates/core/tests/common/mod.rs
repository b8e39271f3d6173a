#![allow(dead_code)]

use proptest::test_runner::{Config as ProptestConfig, FileFailurePersistence};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use texdistill::assets::{bundled, EnvironmentMap};
use texdistill::math::{orthonormal_basis, Vec3};
use texdistill::render::{
    prefilter_env, rasterize, shade, SceneSample, ShadeOptions, TextureSet, DEFAULT_MIPS, DEFAULT_SAMPLES,
};

const DIELECTRIC_F0: f64 = 0.04;

#[derive(Clone, Copy)]
struct V3([f64; 3]);

impl V3 {
    fn of(v: Vec3) -> Self {
        Self(v.to_array().map(f64::from))
    }
    fn dot(self, o: V3) -> f64 {
        (0..3).map(|i| self.0[i] * o.0[i]).sum()
    }
    fn add(self, o: V3) -> V3 {
        V3([0, 1, 2].map(|i| self.0[i] + o.0[i]))
    }
    fn scale(self, s: f64) -> V3 {
        V3(self.0.map(|c| c * s))
    }
    fn unit(self) -> V3 {
        self.scale(1.0 / self.dot(self).sqrt())
    }
}

/// Outgoing radiance under a constant unit environment, integrated on a
/// midpoint grid over the hemisphere around `n`: Lambertian diffuse plus
/// GGX / Smith (Schlick, `k = alpha / 2`) / Schlick-Fresnel specular.
pub fn radiance_oracle(n: Vec3, v: Vec3, albedo: [f64; 3], roughness: f64, metal: f64, grid: usize) -> [f64; 3] {
    let (t, b) = orthonormal_basis(n);
    let (n, t, b, v) = (V3::of(n), V3::of(t), V3::of(b), V3::of(v));
    let alpha = roughness * roughness;
    let a2 = alpha * alpha;
    let k = alpha / 2.0;
    let nov = n.dot(v).max(1e-6);
    let g1 = |x: f64| x / (x * (1.0 - k) + k);
    let f0 = albedo.map(|a| DIELECTRIC_F0 * (1.0 - metal) + a * metal);
    let (dtheta, dphi) = (
        std::f64::consts::FRAC_PI_2 / grid as f64,
        std::f64::consts::TAU / (2 * grid) as f64,
    );
    let mut spec = [0.0; 3];
    for i in 0..grid {
        let theta = (i as f64 + 0.5) * dtheta;
        let (st, ct) = theta.sin_cos();
        for j in 0..2 * grid {
            let phi = (j as f64 + 0.5) * dphi;
            let l = t.scale(st * phi.cos()).add(b.scale(st * phi.sin())).add(n.scale(ct));
            let h = l.add(v).unit();
            let noh = n.dot(h);
            let voh = v.dot(h).max(0.0);
            let dd = noh * noh * (a2 - 1.0) + 1.0;
            let d = a2 / (std::f64::consts::PI * dd * dd);
            let g = g1(nov) * g1(ct);
            let fc = (1.0 - voh).powi(5);
            let w = d * g / (4.0 * ct * nov) * ct * st * dtheta * dphi;
            for c in 0..3 {
                spec[c] += w * (f0[c] + (1.0 - f0[c]) * fc);
            }
        }
    }
    [0, 1, 2].map(|c| albedo[c] * (1.0 - metal) + spec[c])
}

/// Worst per-channel relative deviation of rendered foreground pixels from
/// [`radiance_oracle`] for the red, fully rough dielectric on the bundled
/// sphere. Returns `(max_rel_err, foreground_pixels)`.
pub fn shading_oracle_error(size: usize, grid: usize) -> (f64, usize) {
    let env = EnvironmentMap::constant(64, 32, [1.0; 3]).unwrap();
    let penv = prefilter_env(&env, DEFAULT_MIPS, DEFAULT_SAMPLES).unwrap();
    let mesh = bundled::uv_sphere(32, 64);
    let sample = SceneSample::looking_at_origin(2.0, 0.7, 0.25, 40f32.to_radians());
    let gb = rasterize(&mesh, &sample, size, size).unwrap();
    let tex = TextureSet::constant(8, [1.0, 0.0, 0.0], 1.0, 0.0);
    let img = shade(&gb, &tex, &penv, &sample, &ShadeOptions::default()).unwrap();
    let mut worst = 0.0f64;
    for i in (0..size * size).filter(|&i| gb.coverage[i]) {
        let n = Vec3::from(gb.tbn[i][2]);
        let v = Vec3::from(gb.view[i]);
        let want = radiance_oracle(n, v, [1.0, 0.0, 0.0], 1.0, 0.0, grid);
        for (got, want) in img.data()[i * 3..][..3].iter().zip(want) {
            worst = worst.max((f64::from(*got) - want).abs() / want.abs());
        }
    }
    (worst, gb.covered_count())
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, lo: f32, hi: f32) -> f32 {
    rng.random_range(lo..hi)
}

/// `cases` cases, with failures saved beside the test source.
pub fn proptest_config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: Some(Box::new(FileFailurePersistence::WithSource("proptest-regressions"))),
        ..ProptestConfig::default()
    }
}
