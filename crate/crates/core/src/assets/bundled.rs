//! Assets compiled into the crate: two environments, a natural test image,
//! procedural meshes and a reference material.
//!
//! The HDR and PNG files are produced by the scripts in `scripts/`.

use std::f32::consts::{PI, TAU};

use super::hdr::{parse_hdr, EnvironmentMap};
use super::obj::Mesh;
use super::texio::{png_to_linear, read_png_from};
use crate::gradtape::Tensor;
use crate::render::TextureSet;

static TRAIN_HDR: &[u8] = include_bytes!("../../assets/train.hdr");
static STUDIO_HDR: &[u8] = include_bytes!("../../assets/studio.hdr");
static ASTRONAUT_64: &[u8] = include_bytes!("../../assets/astronaut_64.png");
static ASTRONAUT_256: &[u8] = include_bytes!("../../assets/astronaut_256.png");

/// One dominant sun plus weak sky and ground ambient.
pub fn train_env() -> EnvironmentMap {
    parse_hdr(TRAIN_HDR).expect("bundled HDR is valid")
}

/// Soft-box studio lighting used for evaluation renders.
pub fn studio_env() -> EnvironmentMap {
    parse_hdr(STUDIO_HDR).expect("bundled HDR is valid")
}

/// Resolves `train`, `studio` or a file path.
pub fn env_by_name(name: &str) -> Result<EnvironmentMap, super::AssetError> {
    match name {
        "train" | "builtin:train" => Ok(train_env()),
        "studio" | "builtin:studio" => Ok(studio_env()),
        path => super::load_hdr(path),
    }
}

fn decode(bytes: &[u8]) -> Tensor {
    let img = read_png_from(std::io::Cursor::new(bytes)).expect("bundled PNG is valid");
    png_to_linear(&img).expect("bundled PNG is valid")
}

/// Astronaut photograph, linear RGB `[64, 64, 3]`.
pub fn astronaut_64() -> Tensor {
    decode(ASTRONAUT_64)
}

/// Astronaut photograph, linear RGB `[256, 256, 3]`.
pub fn astronaut_256() -> Tensor {
    decode(ASTRONAUT_256)
}

/// Procedural material used as a known ground truth: smooth colour bands,
/// striped roughness, two metallic patches and a gentle bump pattern.
pub fn reference_textures(size: usize) -> TextureSet {
    let coord = |i: usize| (i as f32 + 0.5) / size as f32;
    let mut diffuse = Vec::with_capacity(size * size * 3);
    let mut roughness = Vec::with_capacity(size * size);
    let mut metalness = Vec::with_capacity(size * size);
    let mut normal = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        let v = coord(y);
        for x in 0..size {
            let u = coord(x);
            let a = (TAU * 4.0 * u).sin();
            let b = (TAU * 3.0 * v).cos();
            diffuse.extend_from_slice(&[
                0.45 + 0.35 * a,
                0.45 + 0.3 * b,
                0.4 + 0.25 * (TAU * (2.0 * u + 2.0 * v)).sin(),
            ]);
            roughness.push(0.55 + 0.3 * (TAU * 6.0 * v).sin());
            let blob = |cu: f32, cv: f32| (-((u - cu).powi(2) + (v - cv).powi(2)) / 0.005).exp();
            metalness.push((0.8 * (blob(0.25, 0.5) + blob(0.75, 0.4))).min(0.9));
            let (tx, ty) = (0.15 * (TAU * 8.0 * u).cos(), 0.15 * (TAU * 5.0 * v).sin());
            let l = (tx * tx + ty * ty + 1.0).sqrt();
            normal.extend_from_slice(&[tx / l, ty / l, 1.0 / l]);
        }
    }
    let shape = |c: usize| vec![size, size, c];
    TextureSet {
        diffuse: Tensor::new(shape(3), diffuse).expect("sized"),
        roughness: Tensor::new(shape(1), roughness).expect("sized"),
        metalness: Tensor::new(shape(1), metalness).expect("sized"),
        normal: Tensor::new(shape(3), normal).expect("sized"),
    }
}

/// Latitude-longitude sphere of radius 0.5 with a duplicated seam column.
pub fn uv_sphere(rings: usize, segments: usize) -> Mesh {
    let mut positions = Vec::new();
    let mut uvs = Vec::new();
    for i in 0..=rings {
        let v = i as f32 / rings as f32;
        let (st, ct) = (v * PI).sin_cos();
        for j in 0..=segments {
            let u = j as f32 / segments as f32;
            let (sp, cp) = ((j % segments) as f32 / segments as f32 * TAU).sin_cos();
            positions.push([0.5 * st * sp, 0.5 * ct, 0.5 * st * cp]);
            uvs.push([u, v]);
        }
    }
    let stride = segments + 1;
    let mut faces = Vec::new();
    for i in 0..rings {
        for j in 0..segments {
            let a = (i * stride + j) as u32;
            let b = a + 1;
            let c = a + stride as u32;
            let d = c + 1;
            if i > 0 {
                faces.push([a, c, b]);
            }
            if i + 1 < rings {
                faces.push([b, c, d]);
            }
        }
    }
    let mut mesh = Mesh::from_triangles(positions, uvs, faces);
    mesh.normals = mesh
        .positions
        .iter()
        .map(|p| {
            let l = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            if l > 0.0 {
                p.map(|x| x / l)
            } else {
                [0.0, p[1].signum(), 0.0]
            }
        })
        .collect();
    mesh.compute_tangents();
    mesh
}

/// Torus around +Y with radii 0.35 and 0.15.
pub fn torus(rings: usize, segments: usize) -> Mesh {
    let (major, minor) = (0.35f32, 0.15f32);
    let mut positions = Vec::new();
    let mut uvs = Vec::new();
    let mut normals = Vec::new();
    for i in 0..=rings {
        let v = i as f32 / rings as f32;
        let (sv, cv) = ((i % rings) as f32 / rings as f32 * TAU).sin_cos();
        for j in 0..=segments {
            let u = j as f32 / segments as f32;
            let (su, cu) = ((j % segments) as f32 / segments as f32 * TAU).sin_cos();
            let r = major + minor * cv;
            positions.push([r * su, minor * sv, r * cu]);
            normals.push([cv * su, sv, cv * cu]);
            uvs.push([u, v]);
        }
    }
    let stride = segments + 1;
    let mut faces = Vec::new();
    for i in 0..rings {
        for j in 0..segments {
            let a = (i * stride + j) as u32;
            let b = a + 1;
            let c = a + stride as u32;
            let d = c + 1;
            faces.push([a, b, c]);
            faces.push([b, d, c]);
        }
    }
    let mut mesh = Mesh::from_triangles(positions, uvs, faces);
    mesh.normals = normals;
    mesh.compute_tangents();
    mesh
}

/// Resolves `builtin:sphere`, `builtin:torus` or an OBJ path.
pub fn mesh_by_name(name: &str) -> Result<Mesh, super::AssetError> {
    match name {
        "builtin:sphere" => Ok(uv_sphere(32, 64)),
        "builtin:torus" => Ok(torus(32, 64)),
        path => super::load_obj(path),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Vec3;

    #[test]
    fn bundled_assets_decode() {
        let t = train_env();
        assert_eq!((t.width(), t.height()), (256, 128));
        let s = studio_env();
        assert!(s.radiance().iter().all(|v| *v >= 0.0));
        assert_eq!(astronaut_64().shape(), &[64, 64, 3]);
        assert_eq!(astronaut_256().shape(), &[256, 256, 3]);
    }

    #[test]
    fn sun_dominates_train_env() {
        let t = train_env();
        let max = t.radiance().iter().cloned().fold(0.0f32, f32::max);
        let mean = t.radiance().iter().sum::<f32>() / t.radiance().len() as f32;
        assert!(max > 20.0 * mean, "{max} {mean}");
    }

    #[test]
    fn meshes_are_valid() {
        for m in [uv_sphere(12, 24), torus(12, 24)] {
            m.validate().unwrap();
            for (n, t) in m.normals.iter().zip(&m.tangents) {
                assert!(Vec3::from(*n).dot(Vec3::new(t[0], t[1], t[2])).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn sphere_faces_point_outward() {
        let m = uv_sphere(8, 16);
        for f in &m.faces {
            let [a, b, c] = f.map(|i| Vec3::from(m.positions[i as usize]));
            let n = (b - a).cross(c - a);
            assert!(n.dot(a + b + c) > 0.0);
        }
    }
}
