use serde::{Deserialize, Serialize};

use super::env::rotate_y;
use super::{GBuffer, PrefilteredEnv, RenderError, SceneSample, TextureSet};
use crate::gradtape::kernels::{footprint, Footprint};
use crate::gradtape::{Tensor, Wrap};
use crate::math::Vec3;

const DIELECTRIC_F0: f32 = 0.04;
const NOV_KNEE: f32 = 0.02;

/// Positive floor on `n.v` with a continuous derivative: identity above the
/// knee, exponential decay toward zero below it.
fn soft_nov(ndv: f32) -> (f32, f32) {
    if ndv >= NOV_KNEE {
        (ndv.min(1.0), if ndv < 1.0 { 1.0 } else { 0.0 })
    } else {
        let e = ((ndv - NOV_KNEE) / NOV_KNEE).exp();
        (NOV_KNEE * e, e)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShadeOptions {
    pub background: [f32; 3],
    /// Perturb the interpolated normal with the normal map.
    pub normal_mapping: bool,
}

impl Default for ShadeOptions {
    fn default() -> Self {
        Self {
            background: [1.0; 3],
            normal_mapping: true,
        }
    }
}

/// Material values fetched at one pixel.
#[derive(Clone, Copy)]
struct Material {
    albedo: Vec3,
    roughness: f32,
    metalness: f32,
    normal: Vec3,
}

#[derive(Default)]
struct MaterialGrad {
    albedo: [f32; 3],
    roughness: f32,
    metalness: f32,
    normal: [f32; 3],
}

fn fetch(tex: &TextureSet, fp: &Footprint) -> Material {
    let get = |t: &Tensor, c: usize| -> [f32; 3] {
        let d = t.data();
        let mut out = [0.0; 3];
        for k in 0..4 {
            let base = fp.texel[k] * c;
            for ch in 0..c {
                out[ch] += fp.weight[k] * d[base + ch];
            }
        }
        out
    };
    Material {
        albedo: get(&tex.diffuse, 3).into(),
        roughness: get(&tex.roughness, 1)[0],
        metalness: get(&tex.metalness, 1)[0],
        normal: get(&tex.normal, 3).into(),
    }
}

fn scatter(grads: &mut TextureSet, fp: &Footprint, g: &MaterialGrad) {
    for k in 0..4 {
        let w = fp.weight[k];
        let t = fp.texel[k];
        let d = grads.diffuse.data_mut();
        for c in 0..3 {
            d[t * 3 + c] += w * g.albedo[c];
        }
        grads.roughness.data_mut()[t] += w * g.roughness;
        grads.metalness.data_mut()[t] += w * g.metalness;
        let n = grads.normal.data_mut();
        for c in 0..3 {
            n[t * 3 + c] += w * g.normal[c];
        }
    }
}

struct Frame {
    t: Vec3,
    b: Vec3,
    n: Vec3,
    v: Vec3,
}

impl Frame {
    fn at(gb: &GBuffer, i: usize) -> Self {
        let [t, b, n] = gb.tbn[i];
        Self {
            t: t.into(),
            b: b.into(),
            n: n.into(),
            v: gb.view[i].into(),
        }
    }
}

fn check_inputs(gb: &GBuffer, tex: &TextureSet, penv: &PrefilteredEnv) -> Result<(), RenderError> {
    tex.validate()?;
    if penv.levels.len() < 2 {
        return Err(RenderError::Prefilter("environment has fewer than 2 levels".into()));
    }
    if gb.coverage.len() != gb.width * gb.height {
        return Err(RenderError::ImageShape {
            got: vec![gb.coverage.len()],
            height: gb.height,
            width: gb.width,
        });
    }
    Ok(())
}

/// Shaded linear radiance times exposure, `[H, W, 3]`. Uncovered pixels take
/// the background color.
pub fn shade(
    gb: &GBuffer,
    tex: &TextureSet,
    penv: &PrefilteredEnv,
    sample: &SceneSample,
    opts: &ShadeOptions,
) -> Result<Tensor, RenderError> {
    check_inputs(gb, tex, penv)?;
    let res = tex.resolution();
    let mut out = Vec::with_capacity(gb.width * gb.height * 3);
    for i in 0..gb.width * gb.height {
        if !gb.coverage[i] {
            out.extend_from_slice(&opts.background);
            continue;
        }
        let [u, v] = gb.uv[i];
        let fp = footprint(res, res, u, v, Wrap::Repeat);
        let mat = fetch(tex, &fp);
        let frame = Frame::at(gb, i);
        let c = shade_pixel(&mat, &frame, penv, sample, opts.normal_mapping);
        if !(c.x.is_finite() && c.y.is_finite() && c.z.is_finite()) {
            return Err(RenderError::NonFinite {
                x: i % gb.width,
                y: i / gb.width,
            });
        }
        out.extend_from_slice(&c.to_array());
    }
    Ok(Tensor::new(vec![gb.height, gb.width, 3], out).expect("sized"))
}

fn shading_normal(mat: &Material, f: &Frame, normal_mapping: bool) -> (Vec3, Vec3, f32) {
    if !normal_mapping {
        return (f.n, f.n, 1.0);
    }
    let raw = f.t * mat.normal.x + f.b * mat.normal.y + f.n * mat.normal.z;
    let len = raw.length();
    (raw * (1.0 / len), raw, len)
}

fn shade_pixel(mat: &Material, f: &Frame, penv: &PrefilteredEnv, s: &SceneSample, normal_mapping: bool) -> Vec3 {
    let (n, _, _) = shading_normal(mat, f, normal_mapping);
    let ndv = n.dot(f.v);
    let (nov, _) = soft_nov(ndv);
    let refl = n * (2.0 * ndv) - f.v;
    let rot = -s.env_rotation;
    let irr = penv.diffuse(rotate_y(n, rot));
    let pre = penv.specular(rotate_y(refl, rot), mat.roughness);
    let ([a, b], _, _) = penv.lut.lookup(nov, mat.roughness);
    let m = mat.metalness;
    let f0 = Vec3::splat(DIELECTRIC_F0 * (1.0 - m)) + mat.albedo * m;
    let diffuse = mat.albedo.mul_elem(irr) * (1.0 - m);
    let spec = (f0 * a + Vec3::splat(b)).mul_elem(pre);
    (diffuse + spec) * s.exposure
}

fn rotate_rows(rows: [Vec3; 3], angle: f32) -> [Vec3; 3] {
    // gradient w.r.t. d of f(R d) is R^T grad, i.e. rotation by -angle
    rows.map(|r| rotate_y(r, -angle))
}

fn shade_pixel_vjp(
    mat: &Material,
    f: &Frame,
    penv: &PrefilteredEnv,
    s: &SceneSample,
    normal_mapping: bool,
    g: Vec3,
) -> MaterialGrad {
    let (n, _, len) = shading_normal(mat, f, normal_mapping);
    let ndv = n.dot(f.v);
    let (nov, nov_slope) = soft_nov(ndv);
    let refl = n * (2.0 * ndv) - f.v;
    let rot = -s.env_rotation;
    let (irr, irr_rows) = penv.diffuse_grad(rotate_y(n, rot));
    let irr_rows = rotate_rows(irr_rows, rot);
    let spec = penv.specular_grad(rotate_y(refl, rot), mat.roughness);
    let pre = spec.value;
    let pre_rows = rotate_rows(spec.d_dir, rot);
    let ([a, b], d_nov, d_rough) = penv.lut.lookup(nov, mat.roughness);
    let m = mat.metalness;
    let alb = mat.albedo;
    let f0 = Vec3::splat(DIELECTRIC_F0 * (1.0 - m)) + alb * m;

    let g = g * s.exposure;
    let ga = [g.x, g.y, g.z];
    let (irr_a, pre_a, f0_a, alb_a) = (irr.to_array(), pre.to_array(), f0.to_array(), alb.to_array());

    let mut out = MaterialGrad::default();
    let mut g_a = 0.0;
    let mut g_b = 0.0;
    let mut g_irr = [0.0f32; 3];
    let mut g_pre = [0.0f32; 3];
    for c in 0..3 {
        out.albedo[c] = ga[c] * ((1.0 - m) * irr_a[c] + m * a * pre_a[c]);
        out.metalness += ga[c] * (-alb_a[c] * irr_a[c] + (alb_a[c] - DIELECTRIC_F0) * a * pre_a[c]);
        g_a += ga[c] * f0_a[c] * pre_a[c];
        g_b += ga[c] * pre_a[c];
        g_irr[c] = ga[c] * (1.0 - m) * alb_a[c];
        g_pre[c] = ga[c] * (f0_a[c] * a + b);
    }
    let d_rough_pre = spec.d_rough.to_array();
    out.roughness = g_a * d_rough[0] + g_b * d_rough[1] + (0..3).map(|c| g_pre[c] * d_rough_pre[c]).sum::<f32>();

    if !normal_mapping {
        return out;
    }
    let mut g_n = Vec3::ZERO;
    for c in 0..3 {
        g_n += irr_rows[c] * g_irr[c];
    }
    let mut g_refl = Vec3::ZERO;
    for c in 0..3 {
        g_refl += pre_rows[c] * g_pre[c];
    }
    // refl = 2 (n.v) n - v
    g_n += f.v * (2.0 * g_refl.dot(n)) + g_refl * (2.0 * ndv);
    g_n += f.v * ((g_a * d_nov[0] + g_b * d_nov[1]) * nov_slope);
    // n = raw / |raw|
    let g_raw = (g_n - n * n.dot(g_n)) * (1.0 / len);
    out.normal = [f.t.dot(g_raw), f.b.dot(g_raw), f.n.dot(g_raw)];
    out
}

/// Gradient of `<grad_image, shade(..)>` with respect to every texel.
pub fn shade_vjp(
    gb: &GBuffer,
    tex: &TextureSet,
    penv: &PrefilteredEnv,
    sample: &SceneSample,
    opts: &ShadeOptions,
    grad_image: &Tensor,
) -> Result<TextureSet, RenderError> {
    let mut grads = tex.zeros_like();
    shade_vjp_accumulate(gb, tex, penv, sample, opts, grad_image, &mut grads)?;
    Ok(grads)
}

/// [`shade_vjp`] added into an existing gradient buffer.
pub(crate) fn shade_vjp_accumulate(
    gb: &GBuffer,
    tex: &TextureSet,
    penv: &PrefilteredEnv,
    sample: &SceneSample,
    opts: &ShadeOptions,
    grad_image: &Tensor,
    grads: &mut TextureSet,
) -> Result<(), RenderError> {
    check_inputs(gb, tex, penv)?;
    if grad_image.shape() != [gb.height, gb.width, 3] {
        return Err(RenderError::ImageShape {
            got: grad_image.shape().to_vec(),
            height: gb.height,
            width: gb.width,
        });
    }
    let res = tex.resolution();
    let gimg = grad_image.data();
    for i in 0..gb.width * gb.height {
        if !gb.coverage[i] {
            continue;
        }
        let g = Vec3::from_slice(&gimg[i * 3..]);
        if g == Vec3::ZERO {
            continue;
        }
        let [u, v] = gb.uv[i];
        let fp = footprint(res, res, u, v, Wrap::Repeat);
        let mat = fetch(tex, &fp);
        let frame = Frame::at(gb, i);
        let mg = shade_pixel_vjp(&mat, &frame, penv, sample, opts.normal_mapping, g);
        scatter(grads, &fp, &mg);
    }
    Ok(())
}

/// Clamp into the `[0, 1]` model space.
pub fn tonemap(img: &Tensor) -> Tensor {
    img.map(|v| v.clamp(0.0, 1.0))
}

/// Passes gradients where the clamp is inactive.
pub fn tonemap_vjp(img: &Tensor, grad: &Tensor) -> Tensor {
    img.zip_map(grad, |v, g| if (0.0..=1.0).contains(&v) { g } else { 0.0 })
        .expect("gradient matches image")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assets::{EnvironmentMap, Mesh};
    use crate::render::{prefilter_env, rasterize};

    fn sphere_scene() -> (GBuffer, SceneSample) {
        let mesh = crate::assets::bundled::uv_sphere(24, 48);
        let s = SceneSample::looking_at_origin(1.6, 0.4, 0.3, 45f32.to_radians());
        (rasterize(&mesh, &s, 32, 32).unwrap(), s)
    }

    #[test]
    fn zero_env_black_foreground() {
        let (gb, s) = sphere_scene();
        let penv = prefilter_env(&EnvironmentMap::constant(32, 16, [0.0; 3]).unwrap(), 3, 16).unwrap();
        let tex = TextureSet::constant(8, [0.8, 0.2, 0.1], 0.4, 0.5);
        let img = shade(&gb, &tex, &penv, &s, &ShadeOptions::default()).unwrap();
        for i in 0..gb.coverage.len() {
            let px = &img.data()[i * 3..i * 3 + 3];
            if gb.coverage[i] {
                assert_eq!(px, &[0.0; 3]);
            } else {
                assert_eq!(px, &[1.0; 3]);
            }
        }
    }

    #[test]
    fn flat_normal_map_matches_geometric_normals() {
        let (gb, s) = sphere_scene();
        let env = crate::assets::bundled::studio_env();
        let penv = prefilter_env(&env, 4, 16).unwrap();
        let tex = TextureSet::constant(8, [0.6, 0.5, 0.4], 0.3, 0.2);
        let a = shade(&gb, &tex, &penv, &s, &ShadeOptions::default()).unwrap();
        let geo = ShadeOptions {
            normal_mapping: false,
            ..ShadeOptions::default()
        };
        let b = shade(&gb, &tex, &penv, &s, &geo).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 1e-6 * x.abs().max(1.0), "{x} {y}");
        }
    }

    #[test]
    fn single_triangle_vjp_is_sparse() {
        let mesh = Mesh::from_triangles(
            vec![[-0.2, -0.2, 0.0], [0.2, -0.2, 0.0], [0.0, 0.2, 0.0]],
            vec![[0.1, 0.1], [0.2, 0.1], [0.15, 0.2]],
            vec![[0, 1, 2]],
        );
        let s = SceneSample::looking_at_origin(1.0, 0.0, 0.0, 1.0);
        let gb = rasterize(&mesh, &s, 32, 32).unwrap();
        let penv = prefilter_env(&EnvironmentMap::constant(32, 16, [1.0; 3]).unwrap(), 3, 16).unwrap();
        let tex = TextureSet::constant(32, [0.5; 3], 0.5, 0.5);
        let g = Tensor::full(vec![32, 32, 3], 1.0);
        let grads = shade_vjp(&gb, &tex, &penv, &s, &ShadeOptions::default(), &g).unwrap();
        // texels far from the uv triangle receive nothing
        assert_eq!(grads.diffuse.pixel(25, 25), &[0.0; 3]);
        assert!(grads.diffuse.pixel(4, 4).iter().any(|v| *v != 0.0));
    }
}
