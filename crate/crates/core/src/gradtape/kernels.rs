//! Raw image kernels shared by graph ops, the renderer and the toy models.
//!
//! All buffers are row-major `[H, W, C]` slices. Every backward kernel is the
//! exact adjoint of its forward kernel and uses a fixed accumulation order.

/// How out-of-range texture coordinates resolve.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Wrap {
    Repeat,
    Clamp,
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Four texels and weights touched by one bilinear fetch, plus the weight
/// derivatives with respect to `u` and `v`.
#[derive(Clone, Copy, Debug)]
pub struct Footprint {
    pub texel: [usize; 4],
    pub weight: [f32; 4],
    pub dweight_du: [f32; 4],
    pub dweight_dv: [f32; 4],
}

#[inline]
fn resolve(i: i64, n: usize, wrap: Wrap) -> usize {
    match wrap {
        Wrap::Repeat => i.rem_euclid(n as i64) as usize,
        Wrap::Clamp => i.clamp(0, n as i64 - 1) as usize,
    }
}

/// Bilinear footprint with texel centers at `(i + 0.5) / W`.
#[inline]
pub fn footprint(height: usize, width: usize, u: f32, v: f32, wrap: Wrap) -> Footprint {
    let x = u * width as f32 - 0.5;
    let y = v * height as f32 - 0.5;
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let xa = resolve(x0, width, wrap);
    let xb = resolve(x0 + 1, width, wrap);
    let ya = resolve(y0, height, wrap);
    let yb = resolve(y0 + 1, height, wrap);
    let (w, h) = (width as f32, height as f32);
    Footprint {
        texel: [ya * width + xa, ya * width + xb, yb * width + xa, yb * width + xb],
        weight: [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy],
        dweight_du: [-(1.0 - fy) * w, (1.0 - fy) * w, -fy * w, fy * w],
        dweight_dv: [-(1.0 - fx) * h, -fx * h, (1.0 - fx) * h, fx * h],
    }
}

#[inline]
pub fn gather(tex: &[f32], channels: usize, fp: &Footprint, out: &mut [f32]) {
    out[..channels].fill(0.0);
    for k in 0..4 {
        let base = fp.texel[k] * channels;
        let w = fp.weight[k];
        for c in 0..channels {
            out[c] += w * tex[base + c];
        }
    }
}

#[inline]
pub fn scatter(grad_tex: &mut [f32], channels: usize, fp: &Footprint, grad: &[f32]) {
    for k in 0..4 {
        let base = fp.texel[k] * channels;
        let w = fp.weight[k];
        for c in 0..channels {
            grad_tex[base + c] += w * grad[c];
        }
    }
}

/// Gradient of `⟨grad, sample(u, v)⟩` with respect to `(u, v)`.
#[inline]
pub fn uv_grad(tex: &[f32], channels: usize, fp: &Footprint, grad: &[f32]) -> (f32, f32) {
    let mut du = 0.0;
    let mut dv = 0.0;
    for k in 0..4 {
        let base = fp.texel[k] * channels;
        let mut d = 0.0;
        for c in 0..channels {
            d += tex[base + c] * grad[c];
        }
        du += fp.dweight_du[k] * d;
        dv += fp.dweight_dv[k] * d;
    }
    (du, dv)
}

/// Eight-lane dot product. Fixed lane order keeps results reproducible while
/// letting the compiler vectorize.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f32; 8];
    let chunks = n / 8;
    for i in 0..chunks {
        let (ca, cb) = (&a[i * 8..i * 8 + 8], &b[i * 8..i * 8 + 8]);
        for l in 0..8 {
            acc[l] += ca[l] * cb[l];
        }
    }
    let mut tail = 0.0;
    for i in chunks * 8..n {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
fn axpy(y: &mut [f32], a: f32, x: &[f32]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Geometry of a 2D convolution over an `[H, W, Cin]` input with an
/// `[KH, KW, Cin, Cout]` kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel_h) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel_w) / self.stride + 1
    }

    fn patch_len(&self) -> usize {
        self.kernel_h * self.kernel_w * self.in_channels
    }

    #[inline]
    fn source(&self, o: usize, k: usize, n: usize) -> Option<usize> {
        let i = (o * self.stride + k) as i64 - self.pad as i64;
        (i >= 0 && (i as usize) < n).then_some(i as usize)
    }
}

/// Unrolls input patches into a `[Ho*Wo, KH*KW*Cin]` matrix whose column
/// order matches the kernel layout. Padding taps are zero.
fn im2col(g: &ConvGeom, input: &[f32]) -> Vec<f32> {
    let (ho, wo) = (g.out_height(), g.out_width());
    let cin = g.in_channels;
    let k = g.patch_len();
    let mut cols = vec![0.0f32; ho * wo * k];
    for oy in 0..ho {
        for ox in 0..wo {
            let row = &mut cols[(oy * wo + ox) * k..][..k];
            for ky in 0..g.kernel_h {
                let Some(iy) = g.source(oy, ky, g.height) else { continue };
                for kx in 0..g.kernel_w {
                    let Some(ix) = g.source(ox, kx, g.width) else { continue };
                    row[(ky * g.kernel_w + kx) * cin..][..cin]
                        .copy_from_slice(&input[(iy * g.width + ix) * cin..][..cin]);
                }
            }
        }
    }
    cols
}

fn col2im_add(g: &ConvGeom, cols: &[f32], grad_in: &mut [f32]) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let cin = g.in_channels;
    let k = g.patch_len();
    for oy in 0..ho {
        for ox in 0..wo {
            let row = &cols[(oy * wo + ox) * k..][..k];
            for ky in 0..g.kernel_h {
                let Some(iy) = g.source(oy, ky, g.height) else { continue };
                for kx in 0..g.kernel_w {
                    let Some(ix) = g.source(ox, kx, g.width) else { continue };
                    axpy(
                        &mut grad_in[(iy * g.width + ix) * cin..][..cin],
                        1.0,
                        &row[(ky * g.kernel_w + kx) * cin..][..cin],
                    );
                }
            }
        }
    }
}

/// `c = alpha * a b + beta * c` for row-major `a: [m, k]`, `b: [k, n]`, with
/// explicit strides so transposed views need no copy.
fn gemm(m: usize, k: usize, n: usize, a: (&[f32], isize, isize), b: (&[f32], isize, isize), beta: f32, c: &mut [f32]) {
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    // SAFETY: callers pass buffers covering every strided index of the
    // stated shapes; `c` is a distinct, contiguous `[m, n]` buffer.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.0.as_ptr(),
            a.1,
            a.2,
            b.0.as_ptr(),
            b.1,
            b.2,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn conv2d_forward(g: &ConvGeom, input: &[f32], weight: &[f32], bias: &[f32], out: &mut [f32]) {
    let p = g.out_height() * g.out_width();
    let (k, cout) = (g.patch_len(), g.out_channels);
    assert!(input.len() >= g.height * g.width * g.in_channels && weight.len() >= k * cout && out.len() >= p * cout);
    for o in out[..p * cout].chunks_exact_mut(cout) {
        o.copy_from_slice(&bias[..cout]);
    }
    let cols = im2col(g, input);
    gemm(
        p,
        k,
        cout,
        (&cols, k as isize, 1),
        (weight, cout as isize, 1),
        1.0,
        &mut out[..p * cout],
    );
}

/// Accumulates input, weight and bias gradients of a convolution.
pub fn conv2d_backward(
    g: &ConvGeom,
    input: &[f32],
    weight: &[f32],
    grad_out: &[f32],
    grad_in: Option<&mut [f32]>,
    grad_weight: Option<&mut [f32]>,
    grad_bias: Option<&mut [f32]>,
) {
    let p = g.out_height() * g.out_width();
    let (k, cout) = (g.patch_len(), g.out_channels);
    assert!(grad_out.len() >= p * cout && weight.len() >= k * cout);
    if let Some(gb) = grad_bias {
        for go in grad_out[..p * cout].chunks_exact(cout) {
            axpy(gb, 1.0, go);
        }
    }
    if let Some(gw) = grad_weight {
        assert!(input.len() >= g.height * g.width * g.in_channels && gw.len() >= k * cout);
        let cols = im2col(g, input);
        gemm(
            k,
            p,
            cout,
            (&cols, 1, k as isize),
            (grad_out, cout as isize, 1),
            1.0,
            &mut gw[..k * cout],
        );
    }
    if let Some(gi) = grad_in {
        assert!(gi.len() >= g.height * g.width * g.in_channels);
        let mut gcols = vec![0.0f32; p * k];
        gemm(
            p,
            cout,
            k,
            (grad_out, cout as isize, 1),
            (weight, 1, cout as isize),
            0.0,
            &mut gcols,
        );
        col2im_add(g, &gcols, gi);
    }
}

/// Per-output-index source taps `(i0, i1, frac)` for a bilinear resize by an
/// integer factor with texel-center alignment and edge clamping.
fn upsample_taps(n: usize, factor: usize) -> Vec<(usize, usize, f32)> {
    (0..n * factor)
        .map(|j| {
            let pos = (j as f32 + 0.5) / factor as f32 - 0.5;
            let p0 = pos.floor();
            let f = pos - p0;
            let i0 = (p0 as i64).clamp(0, n as i64 - 1) as usize;
            let i1 = (p0 as i64 + 1).clamp(0, n as i64 - 1) as usize;
            (i0, i1, f)
        })
        .collect()
}

/// Bilinear upsampling of `[H, W, C]` by an integer factor.
pub fn upsample_bilinear(src: &[f32], h: usize, w: usize, c: usize, factor: usize) -> Vec<f32> {
    let ty = upsample_taps(h, factor);
    let tx = upsample_taps(w, factor);
    let wo = w * factor;
    let mut out = vec![0.0; h * factor * wo * c];
    for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
            let o = &mut out[(oy * wo + ox) * c..][..c];
            let taps = [
                (y0, x0, (1.0 - fy) * (1.0 - fx)),
                (y0, x1, (1.0 - fy) * fx),
                (y1, x0, fy * (1.0 - fx)),
                (y1, x1, fy * fx),
            ];
            for (y, x, wt) in taps {
                axpy(o, wt, &src[(y * w + x) * c..][..c]);
            }
        }
    }
    out
}

/// Adjoint of [`upsample_bilinear`].
pub fn upsample_bilinear_adjoint(grad: &[f32], h: usize, w: usize, c: usize, factor: usize) -> Vec<f32> {
    let ty = upsample_taps(h, factor);
    let tx = upsample_taps(w, factor);
    let wo = w * factor;
    let mut out = vec![0.0; h * w * c];
    for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
            let g = &grad[(oy * wo + ox) * c..][..c];
            let taps = [
                (y0, x0, (1.0 - fy) * (1.0 - fx)),
                (y0, x1, (1.0 - fy) * fx),
                (y1, x0, fy * (1.0 - fx)),
                (y1, x1, fy * fx),
            ];
            for (y, x, wt) in taps {
                axpy(&mut out[(y * w + x) * c..][..c], wt, g);
            }
        }
    }
    out
}

/// Box-filter downsampling by an integer factor. `h` and `w` must divide evenly.
pub fn downsample_box(src: &[f32], h: usize, w: usize, c: usize, factor: usize) -> Vec<f32> {
    let (ho, wo) = (h / factor, w / factor);
    let norm = 1.0 / (factor * factor) as f32;
    let mut out = vec![0.0; ho * wo * c];
    for oy in 0..ho {
        for ox in 0..wo {
            let o = &mut out[(oy * wo + ox) * c..][..c];
            for dy in 0..factor {
                for dx in 0..factor {
                    let (y, x) = (oy * factor + dy, ox * factor + dx);
                    axpy(o, norm, &src[(y * w + x) * c..][..c]);
                }
            }
        }
    }
    out
}

/// Adjoint of [`downsample_box`]; `h`, `w` are the full-resolution extents.
pub fn downsample_box_adjoint(grad: &[f32], h: usize, w: usize, c: usize, factor: usize) -> Vec<f32> {
    let wo = w / factor;
    let norm = 1.0 / (factor * factor) as f32;
    let mut out = vec![0.0; h * w * c];
    for y in 0..h {
        for x in 0..w {
            let g = &grad[((y / factor) * wo + x / factor) * c..][..c];
            for (o, &gv) in out[(y * w + x) * c..][..c].iter_mut().zip(g) {
                *o = norm * gv;
            }
        }
    }
    out
}

/// Separable 5×5 binomial blur `[1 4 6 4 1] / 16` with edge clamping.
pub fn blur_binomial5(src: &[f32], h: usize, w: usize, c: usize) -> Vec<f32> {
    const K: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
    let mut tmp = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            let o = &mut tmp[(y * w + x) * c..][..c];
            for (k, &wt) in K.iter().enumerate() {
                let xs = (x as i64 + k as i64 - 2).clamp(0, w as i64 - 1) as usize;
                axpy(o, wt, &src[(y * w + xs) * c..][..c]);
            }
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            let o = &mut out[(y * w + x) * c..][..c];
            for (k, &wt) in K.iter().enumerate() {
                let ys = (y as i64 + k as i64 - 2).clamp(0, h as i64 - 1) as usize;
                axpy(o, wt, &tmp[(ys * w + x) * c..][..c]);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn texel_center_fetch_is_exact() {
        let tex: Vec<f32> = (0..16).map(|i| i as f32).collect();
        let fp = footprint(4, 4, 2.5 / 4.0, 1.5 / 4.0, Wrap::Clamp);
        let mut out = [0.0];
        gather(&tex, 1, &fp, &mut out);
        assert_eq!(out[0], 6.0);
    }

    #[test]
    fn midway_fetch_averages_neighbours() {
        let tex = vec![1.0, 3.0, 0.0, 0.0];
        let fp = footprint(2, 2, 0.5, 0.25, Wrap::Clamp);
        let mut out = [0.0];
        gather(&tex, 1, &fp, &mut out);
        assert_eq!(out[0], 2.0);
    }

    #[test]
    fn repeat_wrap_is_periodic() {
        let tex: Vec<f32> = (0..12).map(|i| (i * i) as f32 * 0.1).collect();
        let mut a = [0.0; 3];
        let mut b = [0.0; 3];
        gather(&tex, 3, &footprint(2, 2, 1.25, 0.5, Wrap::Repeat), &mut a);
        gather(&tex, 3, &footprint(2, 2, 0.25, 0.5, Wrap::Repeat), &mut b);
        assert_eq!(a, b);
    }

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f32> = (0..37).map(|i| i as f32 * 0.25).collect();
        let b: Vec<f32> = (0..37).map(|i| 1.0 - i as f32 * 0.01).collect();
        let naive: f32 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-3);
    }

    #[test]
    fn box_then_nearest_roundtrip_on_constant() {
        let src = vec![0.25; 8 * 8 * 2];
        let down = downsample_box(&src, 8, 8, 2, 4);
        assert!(down.iter().all(|&v| (v - 0.25).abs() < 1e-7));
        let up = upsample_bilinear(&down, 2, 2, 2, 4);
        assert!(up.iter().all(|&v| (v - 0.25).abs() < 1e-7));
        let blurred = blur_binomial5(&up, 8, 8, 2);
        assert!(blurred.iter().all(|&v| (v - 0.25).abs() < 1e-6));
    }

    #[test]
    fn resample_adjoints() {
        // <A x, y> == <x, A^T y>
        let x: Vec<f32> = (0..3 * 5 * 2).map(|i| ((i * 7) % 11) as f32 * 0.1).collect();
        let y: Vec<f32> = (0..6 * 10 * 2).map(|i| ((i * 5) % 13) as f32 * 0.1).collect();
        let ax = upsample_bilinear(&x, 3, 5, 2, 2);
        let aty = upsample_bilinear_adjoint(&y, 3, 5, 2, 2);
        let lhs: f32 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f32 = x.iter().zip(&aty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-3 * lhs.abs());

        let dx = downsample_box(&y, 6, 10, 2, 2);
        let dty = downsample_box_adjoint(&x, 6, 10, 2, 2);
        let lhs: f32 = dx.iter().zip(&x).map(|(a, b)| a * b).sum();
        let rhs: f32 = y.iter().zip(&dty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-3 * lhs.abs());
    }
}
