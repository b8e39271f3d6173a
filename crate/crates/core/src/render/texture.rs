use super::RenderError;
use crate::gradtape::Tensor;

/// Material maps in linear units. `normal` holds decoded tangent-space
/// vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct TextureSet {
    pub diffuse: Tensor,
    pub roughness: Tensor,
    pub metalness: Tensor,
    pub normal: Tensor,
}

impl TextureSet {
    /// Uniform maps with a flat normal.
    pub fn constant(size: usize, albedo: [f32; 3], roughness: f32, metalness: f32) -> Self {
        let px = size * size;
        Self {
            diffuse: Tensor::new(vec![size, size, 3], albedo.repeat(px)).expect("sized"),
            roughness: Tensor::full(vec![size, size, 1], roughness),
            metalness: Tensor::full(vec![size, size, 1], metalness),
            normal: Tensor::new(vec![size, size, 3], [0.0, 0.0, 1.0].repeat(px)).expect("sized"),
        }
    }

    pub fn resolution(&self) -> usize {
        self.diffuse.shape()[0]
    }

    pub fn maps(&self) -> [&Tensor; 4] {
        [&self.diffuse, &self.roughness, &self.metalness, &self.normal]
    }

    /// Checks shapes, value ranges and normal orientation.
    pub fn validate(&self) -> Result<(), RenderError> {
        let size = self.diffuse.shape().first().copied().unwrap_or(0);
        let expect = [
            ("diffuse", &self.diffuse, 3),
            ("roughness", &self.roughness, 1),
            ("metalness", &self.metalness, 1),
            ("normal", &self.normal, 3),
        ];
        for (name, t, c) in expect {
            if t.shape() != [size, size, c] {
                return Err(RenderError::Textures(format!(
                    "{name} has shape {:?}, expected [{size}, {size}, {c}]",
                    t.shape()
                )));
            }
            if !t.all_finite() {
                return Err(RenderError::Textures(format!("{name} has non-finite values")));
            }
        }
        for (name, t) in [
            ("diffuse", &self.diffuse),
            ("roughness", &self.roughness),
            ("metalness", &self.metalness),
        ] {
            if t.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(RenderError::Textures(format!("{name} leaves [0, 1]")));
            }
        }
        if self.normal.data().chunks_exact(3).any(|n| n[2] <= 0.0) {
            return Err(RenderError::Textures("normal map has z <= 0".into()));
        }
        Ok(())
    }

    /// Texture-shaped zero buffers, used to accumulate gradients.
    pub fn zeros_like(&self) -> Self {
        let z = |t: &Tensor| Tensor::zeros(t.shape().to_vec());
        Self {
            diffuse: z(&self.diffuse),
            roughness: z(&self.roughness),
            metalness: z(&self.metalness),
            normal: z(&self.normal),
        }
    }

    /// Elementwise `self += s * other`.
    pub fn axpy(&mut self, s: f32, other: &TextureSet) {
        for (a, b) in [
            (&mut self.diffuse, &other.diffuse),
            (&mut self.roughness, &other.roughness),
            (&mut self.metalness, &other.metalness),
            (&mut self.normal, &other.normal),
        ] {
            a.axpy(s, b).expect("texture sets share shapes");
        }
    }
}
