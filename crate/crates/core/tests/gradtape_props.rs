//! Finite-difference and structural properties of the autodiff tape.

mod common;

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use texdistill::gradtape::kernels::footprint;
use texdistill::gradtape::{Graph, NodeId, Tensor, Wrap};

const STEP: f32 = 1e-3;
const TOL: f64 = 1e-3;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(0.1..1.0)).with_grad()
}

/// Moves values that sit within `margin` of a kink to `margin` away from it.
fn avoid(t: &mut Tensor, kinks: &[f32], margin: f32) {
    for v in t.data_mut() {
        for &k in kinks {
            if (*v - k).abs() < margin {
                *v = if *v < k { k - margin } else { k + margin };
            }
        }
    }
}

fn loss(out: &Tensor, weights: &Tensor) -> f64 {
    out.data()
        .iter()
        .zip(weights.data())
        .map(|(a, b)| (*a as f64) * (*b as f64))
        .sum()
}

/// Worst norm-relative error between backward and central differences over
/// every input that requires a gradient.
fn fd_error(build: impl Fn(&mut Graph) -> NodeId, inputs: BTreeMap<String, Tensor>, seed: u64) -> f64 {
    let mut g = Graph::new();
    let out = build(&mut g);
    g.set_outputs(&[out]);
    let y = g.forward(&inputs).unwrap().remove(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfd);
    let weights = Tensor::from_fn(y.shape().to_vec(), |_| rng.random_range(-1.0..1.0));
    let analytic = g.backward(&weights).unwrap();
    let mut worst = 0.0f64;
    for (name, t) in &inputs {
        if !t.requires_grad() {
            continue;
        }
        let mut probe = inputs.clone();
        let mut fd = Vec::with_capacity(t.len());
        for i in 0..t.len() {
            let x = t.data()[i];
            probe.get_mut(name).unwrap().data_mut()[i] = x + STEP;
            let plus = loss(&g.forward(&probe).unwrap()[0], &weights);
            probe.get_mut(name).unwrap().data_mut()[i] = x - STEP;
            let minus = loss(&g.forward(&probe).unwrap()[0], &weights);
            probe.get_mut(name).unwrap().data_mut()[i] = x;
            fd.push((plus - minus) / ((x + STEP) - (x - STEP)) as f64);
        }
        let an = &analytic[name];
        let diff: f64 = fd
            .iter()
            .zip(an.data())
            .map(|(f, a)| (f - *a as f64).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm = an.norm();
        let e = if norm > 1e-12 { diff / norm } else { diff };
        if std::env::var("FD_DEBUG").is_ok() {
            eprintln!("{name}: {e:.3e}");
        }
        worst = worst.max(e);
    }
    worst
}

fn named(items: Vec<(&str, Tensor)>) -> BTreeMap<String, Tensor> {
    items.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn unary(seed: u64, shape: &[usize], kinks: &[f32], op: impl Fn(&mut Graph, NodeId) -> NodeId) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = random(&mut rng, shape);
    avoid(&mut x, kinks, 4.0 * STEP);
    fd_error(
        |g| {
            let x = g.input("x");
            op(g, x)
        },
        named(vec![("x", x)]),
        seed,
    )
}

fn binary(seed: u64, a: &[usize], b: &[usize], op: impl Fn(&mut Graph, NodeId, NodeId) -> NodeId) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x, y) = (random(&mut rng, a), random(&mut rng, b));
    fd_error(
        |g| {
            let (x, y) = (g.input("x"), g.input("y"));
            op(g, x, y)
        },
        named(vec![("x", x), ("y", y)]),
        seed,
    )
}

/// `[N, 2]` coordinates kept clear of the texel-center kinks of a `size`
/// texture.
fn uvs(rng: &mut ChaCha8Rng, n: usize, size: usize) -> Tensor {
    let mut uv = Tensor::from_fn(vec![n, 2], |_| rng.random_range(0.05..0.95)).with_grad();
    let kinks: Vec<f32> = (0..=size).map(|i| (i as f32 + 0.5) / size as f32).collect();
    avoid(&mut uv, &kinks, 4.0 * STEP);
    uv
}

proptest! {
    #![proptest_config(common::proptest_config(12))]

    #[test]
    fn elementwise_ops_match_differences(seed in any::<u64>()) {
        let s = [4, 4, 3];
        prop_assert!(binary(seed, &s, &s, |g, x, y| g.add(x, y)) < TOL);
        prop_assert!(binary(seed, &s, &s, |g, x, y| g.sub(x, y)) < TOL);
        prop_assert!(binary(seed, &s, &s, |g, x, y| g.mul(x, y)) < TOL);
        prop_assert!(binary(seed, &s, &[4, 4, 1], |g, x, y| g.mul(x, y)) < TOL);
        prop_assert!(unary(seed, &s, &[], |g, x| g.scale(x, -1.7)) < TOL);
        prop_assert!(unary(seed, &s, &[0.3, 0.8], |g, x| g.clamp(x, 0.3, 0.8)) < TOL);
        prop_assert!(unary(seed, &s, &[], |g, x| g.sigmoid(x)) < TOL);
        prop_assert!(unary(seed, &s, &[], |g, x| g.tanh(x)) < TOL);
        prop_assert!(unary(seed, &s, &[], |g, x| g.pow(x, 2.5)) < TOL);
        let leaky = unary(seed, &s, &[0.55], |g, x| {
            let c = g.constant(Tensor::full(vec![4, 4, 3], 0.55));
            let d = g.sub(x, c);
            g.leaky_relu(d, 0.2)
        });
        prop_assert!(leaky < TOL);
    }

    #[test]
    fn vector_ops_match_differences(seed in any::<u64>()) {
        prop_assert!(unary(seed, &[6, 3], &[], |g, x| g.normalize3(x)) < TOL);
        prop_assert!(binary(seed, &[6, 3], &[6, 3], |g, x, y| g.dot3(x, y)) < TOL);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b, t) = (random(&mut rng, &[4, 4, 3]), random(&mut rng, &[4, 4, 3]), random(&mut rng, &[4, 4, 1]));
        let err = fd_error(
            |g| {
                let (a, b, t) = (g.input("a"), g.input("b"), g.input("t"));
                g.mix(a, b, t)
            },
            named(vec![("a", a), ("b", b), ("t", t)]),
            seed,
        );
        prop_assert!(err < TOL);
    }

    #[test]
    fn resampling_ops_match_differences(seed in any::<u64>()) {
        prop_assert!(unary(seed, &[4, 4, 2], &[], |g, x| g.upsample2x(x)) < TOL);
        prop_assert!(unary(seed, &[8, 8, 2], &[], |g, x| g.downsample_box(x, 2)) < TOL);
        prop_assert!(unary(seed, &[2, 2, 2], &[], |g, x| g.reduce_mean(x)) < TOL);
        prop_assert!(binary(seed, &[3, 3, 1], &[3, 3, 2], |g, x, y| g.concat(&[x, y])) < TOL);
    }

    #[test]
    fn conv2d_matches_differences(seed in any::<u64>(), stride in 1usize..3, pad in 0usize..2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[7, 7, 2]);
        let w = random(&mut rng, &[3, 3, 2, 3]);
        let b = random(&mut rng, &[3]);
        let err = fd_error(
            |g| {
                let (x, w, b) = (g.input("x"), g.input("w"), g.input("b"));
                g.conv2d(x, w, b, stride, pad)
            },
            named(vec![("x", x), ("w", w), ("b", b)]),
            seed,
        );
        prop_assert!(err < TOL);
    }

    #[test]
    fn bilinear_sample_matches_differences(seed in any::<u64>(), repeat in any::<bool>()) {
        let wrap = if repeat { Wrap::Repeat } else { Wrap::Clamp };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tex = random(&mut rng, &[16, 16, 3]);
        let uv = uvs(&mut rng, 24, 16);
        let err = fd_error(
            |g| {
                let (t, uv) = (g.input("tex"), g.input("uv"));
                g.bilinear_sample(t, uv, wrap)
            },
            named(vec![("tex", tex), ("uv", uv)]),
            seed,
        );
        prop_assert!(err < TOL);
    }

    /// Activation, sampling and reduction chained the way texture lookups are.
    #[test]
    fn texture_chain_matches_differences(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = random(&mut rng, &[16, 16, 3]);
        let uv = uvs(&mut rng, 32, 16);
        let light = random(&mut rng, &[32, 3]);
        let err = fd_error(
            |g| {
                let (raw, uv, light) = (g.input("raw"), g.input("uv"), g.input("light"));
                let albedo = g.sigmoid(raw);
                let s = g.bilinear_sample(albedo, uv, Wrap::Repeat);
                let lit = g.mul(s, light);
                let dir = g.normalize3(light);
                g.dot3(lit, dir)
            },
            named(vec![("raw", raw), ("uv", uv), ("light", light)]),
            seed,
        );
        prop_assert!(err < TOL, "chain error {err}");
    }

    #[test]
    fn backward_is_linear_in_output_grad(seed in any::<u64>(), e in -2i32..3) {
        let k = 2f32.powi(e);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::new();
        let (x, w, b, t) = (g.input("x"), g.input("w"), g.input("b"), g.input("t"));
        let c = g.conv2d(x, w, b, 1, 1);
        let s = g.sigmoid(c);
        let m = g.mix(s, x, t);
        let out = g.upsample2x(m);
        g.set_outputs(&[out]);
        let inputs = named(vec![
            ("x", random(&mut rng, &[6, 6, 2])),
            ("w", random(&mut rng, &[3, 3, 2, 2])),
            ("b", random(&mut rng, &[2])),
            ("t", random(&mut rng, &[6, 6, 1])),
        ]);
        let y = g.forward(&inputs).unwrap().remove(0);
        let gy = Tensor::from_fn(y.shape().to_vec(), |_| rng.random_range(-1.0..1.0));
        let base = g.backward(&gy).unwrap();
        let scaled = g.backward(&gy.scaled(k)).unwrap();
        for (name, grad) in &base {
            prop_assert!(scaled[name].rel_err(&grad.scaled(k)).unwrap() <= 1e-6, "{name}");
        }
    }

    #[test]
    fn unsampled_texels_get_zero_gradient(seed in any::<u64>(), n in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let size = 16;
        let tex = random(&mut rng, &[size, size, 3]);
        let uv = Tensor::from_fn(vec![n, 2], |_| rng.random_range(0.0..1.0));
        let mut touched = BTreeSet::new();
        for p in uv.data().chunks_exact(2) {
            let fp = footprint(size, size, p[0], p[1], Wrap::Clamp);
            for (texel, w) in fp.texel.iter().zip(fp.weight) {
                if w != 0.0 {
                    touched.insert(*texel);
                }
            }
        }
        let mut g = Graph::new();
        let (t, u) = (g.input("tex"), g.input("uv"));
        let s = g.bilinear_sample(t, u, Wrap::Clamp);
        g.set_outputs(&[s]);
        g.forward(&named(vec![("tex", tex), ("uv", uv)])).unwrap();
        let grads = g.backward(&Tensor::full(vec![n, 3], 1.0)).unwrap();
        for (i, px) in grads["tex"].data().chunks_exact(3).enumerate() {
            if !touched.contains(&i) {
                prop_assert!(px.iter().all(|v| *v == 0.0), "texel {i} has gradient {px:?}");
            }
        }
    }
}
