use std::f32::consts::{PI, TAU};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::RenderError;
use crate::math::Vec3;

/// Bounds for random scene samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub radius: [f32; 2],
    pub elevation_deg: [f32; 2],
    pub fov_deg: f32,
    /// Randomize the environment rotation per sample.
    pub rotate_env: bool,
    pub exposure: f32,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            radius: [1.5, 2.0],
            elevation_deg: [-10.0, 45.0],
            fov_deg: 45.0,
            rotate_env: true,
            exposure: 1.0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), RenderError> {
        let [r0, r1] = self.radius;
        let [e0, e1] = self.elevation_deg;
        if !(r0 > 0.0 && r0 <= r1 && r1.is_finite()) {
            return Err(RenderError::Bounds(format!(
                "radius range [{r0}, {r1}] is empty or not positive"
            )));
        }
        if !(e0 <= e1 && e0 >= -90.0 && e1 <= 90.0) {
            return Err(RenderError::Bounds(format!(
                "elevation range [{e0}, {e1}] is empty or outside [-90, 90]"
            )));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(RenderError::Bounds(format!(
                "field of view {} outside (0, 180)",
                self.fov_deg
            )));
        }
        if !(self.exposure > 0.0 && self.exposure.is_finite()) {
            return Err(RenderError::Bounds(format!(
                "exposure {} must be positive",
                self.exposure
            )));
        }
        Ok(())
    }
}

/// One camera on a sphere around the origin plus lighting augmentation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSample {
    pub radius: f32,
    /// Radians, measured from +Z toward +X.
    pub azimuth: f32,
    /// Radians above the horizontal plane.
    pub elevation: f32,
    /// Vertical field of view in radians.
    pub fov_y: f32,
    pub env_rotation: f32,
    pub exposure: f32,
}

impl SceneSample {
    pub fn looking_at_origin(radius: f32, azimuth: f32, elevation: f32, fov_y: f32) -> Self {
        Self {
            radius,
            azimuth,
            elevation,
            fov_y,
            env_rotation: 0.0,
            exposure: 1.0,
        }
    }

    pub fn eye(&self) -> Vec3 {
        let (se, ce) = self.elevation.sin_cos();
        let (sa, ca) = self.azimuth.sin_cos();
        Vec3::new(ce * sa, se, ce * ca) * self.radius
    }

    /// Right, up and forward camera axes.
    pub fn basis(&self) -> Result<(Vec3, Vec3, Vec3), RenderError> {
        if !self.radius.is_finite() || self.radius <= 0.0 {
            return Err(RenderError::DegenerateCamera(format!("radius {}", self.radius)));
        }
        let forward = (-self.eye()).normalize();
        let up_hint = if forward.y.abs() > 0.999 {
            Vec3::new(0.0, 0.0, -1.0)
        } else {
            Vec3::Y
        };
        let right = forward.cross(up_hint).normalize();
        let up = right.cross(forward);
        Ok((right, up, forward))
    }
}

/// Draws a sample within `cfg`'s bounds.
pub fn sample_scene(rng: &mut impl Rng, cfg: &SceneConfig) -> Result<SceneSample, RenderError> {
    cfg.validate()?;
    let azimuth = rng.random_range(0.0..TAU);
    let [e0, e1] = cfg.elevation_deg.map(f32::to_radians);
    let elevation = if e1 > e0 { rng.random_range(e0..=e1) } else { e0 };
    let [r0, r1] = cfg.radius;
    let radius = if r1 > r0 { rng.random_range(r0..=r1) } else { r0 };
    // drawn unconditionally so the stream does not depend on the flag
    let rot = rng.random_range(0.0..TAU);
    Ok(SceneSample {
        radius,
        azimuth,
        elevation,
        fov_y: cfg.fov_deg.to_radians(),
        env_rotation: if cfg.rotate_env { rot } else { 0.0 },
        exposure: cfg.exposure,
    })
}

/// `count` cameras evenly spaced in azimuth at a fixed elevation.
pub fn fixed_views(count: usize, radius: f32, elevation_deg: f32, fov_deg: f32) -> Vec<SceneSample> {
    (0..count)
        .map(|i| {
            SceneSample::looking_at_origin(
                radius,
                2.0 * PI * i as f32 / count as f32,
                elevation_deg.to_radians(),
                fov_deg.to_radians(),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn deterministic_given_seed() {
        let cfg = SceneConfig::default();
        let a = sample_scene(&mut ChaCha8Rng::seed_from_u64(42), &cfg).unwrap();
        let b = sample_scene(&mut ChaCha8Rng::seed_from_u64(42), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn elevations_within_bounds() {
        let cfg = SceneConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let s = sample_scene(&mut rng, &cfg).unwrap();
            let e = s.elevation.to_degrees();
            assert!((-10.0 - 1e-4..=45.0 + 1e-4).contains(&e), "{e}");
            assert!((0.0..TAU).contains(&s.env_rotation));
            assert!((1.5..=2.0).contains(&s.radius));
        }
    }

    #[test]
    fn azimuth_histogram_is_uniform() {
        let cfg = SceneConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut bins = [0usize; 8];
        for _ in 0..1000 {
            let s = sample_scene(&mut rng, &cfg).unwrap();
            bins[((s.azimuth / TAU * 8.0) as usize).min(7)] += 1;
        }
        // binomial(1000, 1/8): sigma = sqrt(1000 * 1/8 * 7/8)
        let sigma = (1000.0f64 * 0.125 * 0.875).sqrt();
        for b in bins {
            assert!((b as f64 - 125.0).abs() <= 3.0 * sigma, "{bins:?}");
        }
    }

    #[test]
    fn empty_bounds_rejected() {
        let cfg = SceneConfig {
            elevation_deg: [30.0, 10.0],
            ..SceneConfig::default()
        };
        assert!(sample_scene(&mut ChaCha8Rng::seed_from_u64(0), &cfg).is_err());
    }

    #[test]
    fn basis_is_orthonormal() {
        let s = SceneSample::looking_at_origin(2.0, 0.7, 0.3, 1.0);
        let (r, u, f) = s.basis().unwrap();
        assert!(r.dot(u).abs() < 1e-6 && r.dot(f).abs() < 1e-6 && u.dot(f).abs() < 1e-6);
        assert!((f.dot(-s.eye().normalize()) - 1.0).abs() < 1e-6);
        assert!(u.y > 0.0);
    }
}
