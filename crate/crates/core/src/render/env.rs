use std::f32::consts::{PI, TAU};
use std::sync::OnceLock;

use super::RenderError;
use crate::assets::EnvironmentMap;
use crate::math::{orthonormal_basis, Vec3};

pub const DEFAULT_MIPS: usize = 6;
pub const DEFAULT_SAMPLES: usize = 256;
pub const DEFAULT_LUT_RESOLUTION: usize = 64;
const IRRADIANCE_HEIGHT: usize = 16;
const LUT_SAMPLES: usize = 1024;

/// Equirectangular `(u, v)` of a direction. `u` starts at -Z and grows
/// toward +X; `v` runs from +Y (0) to -Y (1).
pub fn dir_to_uv(d: Vec3) -> (f32, f32) {
    let mut u = d.x.atan2(-d.z) / TAU;
    if u < 0.0 {
        u += 1.0;
    }
    let s = (d.x * d.x + d.z * d.z).sqrt();
    (u, s.atan2(d.y) / PI)
}

/// [`dir_to_uv`] with the gradients of `u` and `v` with respect to `d`.
fn dir_to_uv_jacobian(d: Vec3) -> (f32, f32, Vec3, Vec3) {
    let (u, v) = dir_to_uv(d);
    let q = (d.x * d.x + d.z * d.z).max(1e-20);
    let s = q.sqrt();
    let du = Vec3::new(-d.z / q, 0.0, d.x / q) * (1.0 / TAU);
    let r2 = q + d.y * d.y;
    // d atan2(s, y) = (y ds - s dy) / (s^2 + y^2)
    let ds = Vec3::new(d.x / s, 0.0, d.z / s);
    let dv = (ds * d.y - Vec3::new(0.0, s, 0.0)) * (1.0 / (r2 * PI));
    (u, v, du, dv)
}

pub fn uv_to_dir(u: f32, v: f32) -> Vec3 {
    let (st, ct) = (v * PI).sin_cos();
    let (sp, cp) = (u * TAU).sin_cos();
    Vec3::new(st * sp, ct, -st * cp)
}

/// Rotation about +Y by `angle`.
pub(crate) fn rotate_y(d: Vec3, angle: f32) -> Vec3 {
    let (s, c) = angle.sin_cos();
    Vec3::new(c * d.x + s * d.z, d.y, -s * d.x + c * d.z)
}

/// RGB equirectangular image: `u` repeats, `v` mirrors at the poles.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvImage {
    height: usize,
    width: usize,
    data: Vec<f32>,
    row_means: Vec<Vec3>,
}

/// Uniform cubic B-spline weights and derivatives for fractional offset `t`
/// over taps `i-1, i, i+1, i+2`.
#[inline]
fn bspline(t: f32) -> ([f32; 4], [f32; 4]) {
    let s = 1.0 - t;
    let t2 = t * t;
    let t3 = t2 * t;
    (
        [
            s * s * s / 6.0,
            (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0,
            (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0,
            t3 / 6.0,
        ],
        [
            -s * s / 2.0,
            (3.0 * t2 - 4.0 * t) / 2.0,
            (-3.0 * t2 + 2.0 * t + 1.0) / 2.0,
            t2 / 2.0,
        ],
    )
}

/// Four B-spline taps along one axis of `n` texels.
#[derive(Clone, Copy)]
struct Taps {
    idx: [usize; 4],
    w: [f32; 4],
    /// Weight derivatives with respect to the normalized coordinate.
    dw: [f32; 4],
}

#[derive(Clone, Copy, PartialEq)]
enum Edge {
    Periodic,
    Clamp,
    Mirror,
}

impl Taps {
    #[inline]
    fn new(coord: f32, n: usize, edge: Edge) -> Self {
        let x = coord * n as f32 - 0.5;
        let i = x.floor();
        let (w, dw) = bspline(x - i);
        let i = i as i64;
        let n64 = n as i64;
        let idx = [i - 1, i, i + 1, i + 2].map(|k| match edge {
            Edge::Periodic => k.rem_euclid(n64) as usize,
            Edge::Clamp => k.clamp(0, n64 - 1) as usize,
            Edge::Mirror => {
                let k = if k < 0 {
                    -k - 1
                } else if k >= n64 {
                    2 * n64 - 1 - k
                } else {
                    k
                };
                k.clamp(0, n64 - 1) as usize
            }
        });
        Self {
            idx,
            w,
            dw: dw.map(|d| d * n as f32),
        }
    }
}

impl EnvImage {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self, RenderError> {
        if height == 0 || width == 0 || data.len() != height * width * 3 {
            return Err(RenderError::Prefilter(format!(
                "{} values do not fill a {height}x{width} RGB image",
                data.len()
            )));
        }
        let row_means = (0..height)
            .map(|y| {
                let mut acc = Vec3::ZERO;
                for x in 0..width {
                    acc += Vec3::from_slice(&data[(y * width + x) * 3..]);
                }
                acc * (1.0 / width as f32)
            })
            .collect();
        Ok(Self {
            height,
            width,
            data,
            row_means,
        })
    }

    fn from_env(env: &EnvironmentMap) -> Self {
        Self::new(env.height(), env.width(), env.radiance().to_vec()).expect("validated map")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    fn texel(&self, y: usize, x: usize) -> Vec3 {
        Vec3::from_slice(&self.data[(y * self.width + x) * 3..])
    }

    fn box_down(&self) -> Self {
        let (h, w) = (self.height / 2, self.width / 2);
        let mut data = Vec::with_capacity(h * w * 3);
        for y in 0..h {
            for x in 0..w {
                let s = self.texel(2 * y, 2 * x)
                    + self.texel(2 * y, 2 * x + 1)
                    + self.texel(2 * y + 1, 2 * x)
                    + self.texel(2 * y + 1, 2 * x + 1);
                data.extend_from_slice(&(s * 0.25).to_array());
            }
        }
        Self::new(h, w, data).expect("sized")
    }

    /// Bilinear fetch, used while prefiltering.
    fn sample_bilinear(&self, d: Vec3) -> Vec3 {
        let (u, v) = dir_to_uv(d);
        let (wf, hf) = (self.width as f32, self.height as f32);
        let x = u * wf - 0.5;
        let y = (v * hf - 0.5).clamp(0.0, hf - 1.0);
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let xa = (x0 as i64).rem_euclid(self.width as i64) as usize;
        let xb = (xa + 1) % self.width;
        let ya = y0 as usize;
        let yb = (ya + 1).min(self.height - 1);
        let top = self.texel(ya, xa) * (1.0 - fx) + self.texel(ya, xb) * fx;
        let bot = self.texel(yb, xa) * (1.0 - fx) + self.texel(yb, xb) * fx;
        top * (1.0 - fy) + bot * fy
    }

    /// Squared pole radius below which lookups fade to the row mean.
    fn pole_q0(&self) -> f32 {
        let s = PI / self.height as f32;
        s * s
    }

    /// Squared distance from the polar axis of the normalized direction and
    /// its gradient.
    fn polar_q(d: Vec3) -> (f32, Vec3) {
        let r2 = d.dot(d).max(1e-20);
        let q = (d.x * d.x + d.z * d.z) / r2;
        let dq = (Vec3::new(d.x, 0.0, d.z) - d * q) * (2.0 / r2);
        (q, dq)
    }

    /// Value, d/du and d/dv of the B-spline surface and of the row-mean
    /// profile at `(u, v)`.
    fn eval(&self, u: f32, v: f32) -> [Vec3; 5] {
        let tx = Taps::new(u, self.width, Edge::Periodic);
        let ty = Taps::new(v, self.height, Edge::Mirror);
        let (mut val, mut gu, mut gv) = (Vec3::ZERO, Vec3::ZERO, Vec3::ZERO);
        let (mut mean, mut gmean) = (Vec3::ZERO, Vec3::ZERO);
        for j in 0..4 {
            let (mut row, mut drow) = (Vec3::ZERO, Vec3::ZERO);
            for i in 0..4 {
                let t = self.texel(ty.idx[j], tx.idx[i]);
                row += t * tx.w[i];
                drow += t * tx.dw[i];
            }
            val += row * ty.w[j];
            gu += drow * ty.w[j];
            gv += row * ty.dw[j];
            let m = self.row_means[ty.idx[j]];
            mean += m * ty.w[j];
            gmean += m * ty.dw[j];
        }
        [val, gu, gv, mean, gmean]
    }

    /// Cubic B-spline lookup. Near the poles the result fades to a profile
    /// of row means so that it stays smooth across the polar axis.
    pub fn sample(&self, d: Vec3) -> Vec3 {
        let (u, v) = dir_to_uv(d);
        let [val, _, _, mean, _] = self.eval(u, v);
        let (q, _) = Self::polar_q(d);
        let w = q / (q + self.pole_q0());
        mean + (val - mean) * w
    }

    /// Value and per-channel gradient rows with respect to `d`.
    fn sample_grad(&self, d: Vec3) -> (Vec3, [Vec3; 3]) {
        let (u, v, du, dv) = dir_to_uv_jacobian(d);
        let [val, gu, gv, mean, gmean] = self.eval(u, v);
        let (q, dq) = Self::polar_q(d);
        let q0 = self.pole_q0();
        let w = q / (q + q0);
        let dw = dq * (q0 / ((q + q0) * (q + q0)));
        let out = mean + (val - mean) * w;
        let gu = gu * w;
        let gv = gmean * (1.0 - w) + gv * w;
        let spread = (val - mean).to_array();
        let (gu, gv) = (gu.to_array(), gv.to_array());
        let rows = [0, 1, 2].map(|c| du * gu[c] + dv * gv[c] + dw * spread[c]);
        (out, rows)
    }
}

/// Split-sum BRDF table: `(A, B)` over `(NoV, roughness)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BrdfLut {
    pub resolution: usize,
    /// Row-major by roughness, then NoV.
    pub data: Vec<[f32; 2]>,
}

impl BrdfLut {
    pub fn at(&self, rough_idx: usize, nov_idx: usize) -> [f32; 2] {
        self.data[rough_idx * self.resolution + nov_idx]
    }

    /// Cubic B-spline lookup clamped at the borders. Returns `(A, B)` and
    /// their derivatives in NoV and roughness.
    pub fn lookup(&self, nov: f32, roughness: f32) -> ([f32; 2], [f32; 2], [f32; 2]) {
        let tx = Taps::new(nov, self.resolution, Edge::Clamp);
        let ty = Taps::new(roughness, self.resolution, Edge::Clamp);
        let mut val = [0.0; 2];
        let mut d_nov = [0.0; 2];
        let mut d_rough = [0.0; 2];
        for j in 0..4 {
            let mut row = [0.0f32; 2];
            let mut drow = [0.0f32; 2];
            for i in 0..4 {
                let c = self.at(ty.idx[j], tx.idx[i]);
                for k in 0..2 {
                    row[k] += c[k] * tx.w[i];
                    drow[k] += c[k] * tx.dw[i];
                }
            }
            for k in 0..2 {
                val[k] += row[k] * ty.w[j];
                d_nov[k] += drow[k] * ty.w[j];
                d_rough[k] += row[k] * ty.dw[j];
            }
        }
        (val, d_nov, d_rough)
    }
}

/// Environment prepared for split-sum shading.
#[derive(Clone, Debug, PartialEq)]
pub struct PrefilteredEnv {
    /// Level `k` is prefiltered for roughness `k / (levels - 1)`.
    pub levels: Vec<EnvImage>,
    pub irradiance: EnvImage,
    pub lut: BrdfLut,
}

/// Lookup results plus gradients used by the shading VJP.
pub(crate) struct EnvSample {
    pub value: Vec3,
    /// Per-channel gradient rows with respect to the lookup direction.
    pub d_dir: [Vec3; 3],
    pub d_rough: Vec3,
}

impl PrefilteredEnv {
    pub fn mip_count(&self) -> usize {
        self.levels.len()
    }

    /// B-spline taps across levels, with roughness mapped so that level
    /// centers sit at `k / (levels - 1)`.
    fn level_taps(&self, roughness: f32) -> Taps {
        let n = self.levels.len();
        let k = (n - 1) as f32;
        let coord = (roughness.clamp(0.0, 1.0) * k + 0.5) / n as f32;
        let mut t = Taps::new(coord, n, Edge::Clamp);
        let scale = if (0.0..=1.0).contains(&roughness) {
            k / n as f32
        } else {
            0.0
        };
        t.dw = t.dw.map(|d| d * scale);
        t
    }

    pub fn specular(&self, d: Vec3, roughness: f32) -> Vec3 {
        let t = self.level_taps(roughness);
        let mut acc = Vec3::ZERO;
        for i in 0..4 {
            if t.w[i] != 0.0 {
                acc += self.levels[t.idx[i]].sample(d) * t.w[i];
            }
        }
        acc
    }

    pub(crate) fn specular_grad(&self, d: Vec3, roughness: f32) -> EnvSample {
        let t = self.level_taps(roughness);
        let mut out = EnvSample {
            value: Vec3::ZERO,
            d_dir: [Vec3::ZERO; 3],
            d_rough: Vec3::ZERO,
        };
        for i in 0..4 {
            let (v, g) = self.levels[t.idx[i]].sample_grad(d);
            out.value += v * t.w[i];
            out.d_rough += v * t.dw[i];
            for (d, gc) in out.d_dir.iter_mut().zip(g) {
                *d += gc * t.w[i];
            }
        }
        out
    }

    pub fn diffuse(&self, n: Vec3) -> Vec3 {
        self.irradiance.sample(n)
    }

    pub(crate) fn diffuse_grad(&self, n: Vec3) -> (Vec3, [Vec3; 3]) {
        self.irradiance.sample_grad(n)
    }
}

fn radical_inverse(i: u32) -> f32 {
    (i.reverse_bits() as f64 / 4_294_967_296.0) as f32
}

/// GGX half vector around +Z for roughness `alpha = r^2`.
fn ggx_half(xi: [f32; 2], alpha: f32) -> Vec3 {
    let phi = TAU * xi[0];
    let cos_t = ((1.0 - xi[1]) / (1.0 + (alpha * alpha - 1.0) * xi[1])).sqrt();
    let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
    Vec3::new(sin_t * phi.cos(), sin_t * phi.sin(), cos_t)
}

fn ggx_d(noh: f32, alpha: f32) -> f32 {
    let a2 = alpha * alpha;
    let d = noh * noh * (a2 - 1.0) + 1.0;
    a2 / (PI * d * d)
}

fn smith_g1(ndot: f32, k: f32) -> f32 {
    ndot / (ndot * (1.0 - k) + k)
}

/// Integrates the split-sum BRDF table with GGX importance sampling,
/// Schlick-GGX Smith visibility (`k = alpha / 2`) and Schlick Fresnel.
pub fn env_brdf_lut(resolution: usize) -> Result<BrdfLut, RenderError> {
    if resolution < 16 {
        return Err(RenderError::Prefilter(format!(
            "LUT resolution {resolution} is below 16"
        )));
    }
    let xi: Vec<[f32; 2]> = (0..LUT_SAMPLES as u32)
        .map(|i| [i as f32 / LUT_SAMPLES as f32, radical_inverse(i)])
        .collect();
    let mut data = Vec::with_capacity(resolution * resolution);
    for j in 0..resolution {
        let rough = (j as f32 + 0.5) / resolution as f32;
        let alpha = rough * rough;
        let k = alpha / 2.0;
        for i in 0..resolution {
            let nov = (i as f32 + 0.5) / resolution as f32;
            let v = Vec3::new((1.0 - nov * nov).sqrt(), 0.0, nov);
            let (mut a, mut b) = (0.0f64, 0.0f64);
            for s in &xi {
                let h = ggx_half(*s, alpha);
                let voh = v.dot(h);
                let l = h * (2.0 * voh) - v;
                let nol = l.z;
                if nol <= 0.0 {
                    continue;
                }
                let noh = h.z.max(1e-8);
                let g = smith_g1(nov, k) * smith_g1(nol, k);
                let g_vis = g * voh / (noh * nov);
                let fc = (1.0 - voh).max(0.0).powi(5);
                a += ((1.0 - fc) * g_vis) as f64;
                b += (fc * g_vis) as f64;
            }
            let n = LUT_SAMPLES as f64;
            data.push([(a / n) as f32, (b / n) as f32]);
        }
    }
    Ok(BrdfLut { resolution, data })
}

fn default_lut() -> &'static BrdfLut {
    static LUT: OnceLock<BrdfLut> = OnceLock::new();
    LUT.get_or_init(|| env_brdf_lut(DEFAULT_LUT_RESOLUTION).expect("valid resolution"))
}

/// Box pyramid used for filtered importance sampling.
struct Pyramid(Vec<EnvImage>);

impl Pyramid {
    fn new(base: EnvImage) -> Self {
        let mut levels = vec![base];
        while levels
            .last()
            .is_some_and(|l| l.height >= 4 && l.height % 2 == 0 && l.width % 2 == 0)
        {
            let next = levels.last().expect("non-empty").box_down();
            levels.push(next);
        }
        Self(levels)
    }

    fn sample(&self, d: Vec3, lod: f32) -> Vec3 {
        let max = (self.0.len() - 1) as f32;
        let lod = lod.clamp(0.0, max);
        let i0 = lod.floor() as usize;
        let t = lod - i0 as f32;
        let a = self.0[i0].sample_bilinear(d);
        if t == 0.0 || i0 + 1 >= self.0.len() {
            return a;
        }
        a * (1.0 - t) + self.0[i0 + 1].sample_bilinear(d) * t
    }
}

/// Builds the GGX-prefiltered chain, the cosine irradiance map and the BRDF
/// table (64x64).
pub fn prefilter_env(env: &EnvironmentMap, mips: usize, samples: usize) -> Result<PrefilteredEnv, RenderError> {
    if mips < 2 {
        return Err(RenderError::Prefilter(format!(
            "need at least 2 mip levels, got {mips}"
        )));
    }
    if samples == 0 {
        return Err(RenderError::Prefilter("samples per texel must be positive".into()));
    }
    let base = EnvImage::from_env(env);
    let pyramid = Pyramid::new(base.clone());
    let texel_solid_angle = 4.0 * PI / (base.width * base.height) as f32;
    let xi: Vec<[f32; 2]> = (0..samples as u32)
        .map(|i| [i as f32 / samples as f32, radical_inverse(i)])
        .collect();

    let mut levels = vec![base.clone()];
    for k in 1..mips {
        let rough = k as f32 / (mips - 1) as f32;
        let alpha = rough * rough;
        let height = (base.height >> k).max(8).min(base.height);
        let width = 2 * height;
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                let n = uv_to_dir((x as f32 + 0.5) / width as f32, (y as f32 + 0.5) / height as f32);
                let (t, b) = orthonormal_basis(n);
                let mut acc = Vec3::ZERO;
                let mut wsum = 0.0f32;
                for s in &xi {
                    let hl = ggx_half(*s, alpha);
                    let h = t * hl.x + b * hl.y + n * hl.z;
                    // view = normal, so the reflected direction mirrors n about h
                    let noh = hl.z;
                    let l = h * (2.0 * noh) - n;
                    let nol = n.dot(l);
                    if nol <= 0.0 {
                        continue;
                    }
                    let pdf = ggx_d(noh, alpha) / 4.0;
                    let sample_angle = 1.0 / (samples as f32 * pdf + 1e-6);
                    let lod = 0.5 * (sample_angle / texel_solid_angle).log2() + 1.0;
                    acc += pyramid.sample(l, lod) * nol;
                    wsum += nol;
                }
                let c = if wsum > 0.0 { acc * (1.0 / wsum) } else { Vec3::ZERO };
                data.extend_from_slice(&c.to_array());
            }
        }
        levels.push(EnvImage::new(height, width, data)?);
    }

    let irradiance = irradiance_map(&pyramid);
    Ok(PrefilteredEnv {
        levels,
        irradiance,
        lut: default_lut().clone(),
    })
}

/// Cosine-weighted average of incoming radiance per normal direction,
/// integrated over a coarse pyramid level.
fn irradiance_map(pyramid: &Pyramid) -> EnvImage {
    let src = pyramid
        .0
        .iter()
        .find(|l| l.height <= 32)
        .unwrap_or_else(|| pyramid.0.last().expect("non-empty"));
    let mut dirs = Vec::with_capacity(src.width * src.height);
    for y in 0..src.height {
        let v = (y as f32 + 0.5) / src.height as f32;
        let sin_t = (v * PI).sin();
        for x in 0..src.width {
            let d = uv_to_dir((x as f32 + 0.5) / src.width as f32, v);
            dirs.push((d, sin_t, src.texel(y, x)));
        }
    }
    let height = IRRADIANCE_HEIGHT.min(src.height.max(2));
    let width = 2 * height;
    let mut data = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        for x in 0..width {
            let n = uv_to_dir((x as f32 + 0.5) / width as f32, (y as f32 + 0.5) / height as f32);
            let mut acc = Vec3::ZERO;
            let mut wsum = 0.0f32;
            for (d, sin_t, l) in &dirs {
                let c = n.dot(*d);
                if c > 0.0 {
                    acc += *l * (c * sin_t);
                    wsum += c * sin_t;
                }
            }
            data.extend_from_slice(&(acc * (1.0 / wsum)).to_array());
        }
    }
    EnvImage::new(height, width, data).expect("sized")
}
