use super::{RenderError, SceneSample};
use crate::assets::Mesh;
use crate::math::{orthonormal_basis, Vec3};

const NEAR: f32 = 1e-3;

/// Per-pixel rasterization products, row-major with `y` down.
#[derive(Clone, Debug, PartialEq)]
pub struct GBuffer {
    pub width: usize,
    pub height: usize,
    pub coverage: Vec<bool>,
    pub uv: Vec<[f32; 2]>,
    /// Tangent, bitangent and normal in world space.
    pub tbn: Vec<[[f32; 3]; 3]>,
    /// Unit vector from the surface toward the eye.
    pub view: Vec<[f32; 3]>,
    /// Camera-space depth; infinite where uncovered.
    pub depth: Vec<f32>,
}

impl GBuffer {
    fn empty(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            coverage: vec![false; n],
            uv: vec![[0.0; 2]; n],
            tbn: vec![[[0.0; 3]; 3]; n],
            view: vec![[0.0; 3]; n],
            depth: vec![f32::INFINITY; n],
        }
    }

    pub fn covered_count(&self) -> usize {
        self.coverage.iter().filter(|c| **c).count()
    }

    pub fn coverage_fraction(&self) -> f64 {
        self.covered_count() as f64 / self.coverage.len() as f64
    }
}

/// Clipped polygon vertex: camera-space position plus barycentrics over
/// the source triangle.
#[derive(Clone, Copy)]
struct ClipVert {
    cam: Vec3,
    bary: [f32; 3],
}

fn clip_near(tri: [ClipVert; 3]) -> Vec<ClipVert> {
    let mut out = Vec::with_capacity(4);
    for i in 0..3 {
        let a = tri[i];
        let b = tri[(i + 1) % 3];
        let (ia, ib) = (a.cam.z >= NEAR, b.cam.z >= NEAR);
        if ia {
            out.push(a);
        }
        if ia != ib {
            let t = (NEAR - a.cam.z) / (b.cam.z - a.cam.z);
            let lerp = |x: f32, y: f32| x + (y - x) * t;
            out.push(ClipVert {
                cam: Vec3::new(lerp(a.cam.x, b.cam.x), lerp(a.cam.y, b.cam.y), NEAR),
                bary: [0, 1, 2].map(|k| lerp(a.bary[k], b.bary[k])),
            });
        }
    }
    out
}

#[inline]
fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

#[inline]
fn top_left(a: [f64; 2], b: [f64; 2]) -> bool {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    (dy == 0.0 && dx > 0.0) || dy < 0.0
}

/// Depth-buffered perspective rasterization with the top-left fill rule and
/// perspective-correct attribute interpolation.
pub fn rasterize(mesh: &Mesh, sample: &SceneSample, width: usize, height: usize) -> Result<GBuffer, RenderError> {
    if width < 16 || height < 16 {
        return Err(RenderError::Resolution { width, height });
    }
    let (right, up, forward) = sample.basis()?;
    let eye = sample.eye();
    let tan_half = (sample.fov_y * 0.5).tan();
    let aspect = width as f32 / height as f32;
    let to_cam = |p: [f32; 3]| {
        let d = Vec3::from(p) - eye;
        Vec3::new(d.dot(right), d.dot(up), d.dot(forward))
    };
    let project = |c: Vec3| -> [f64; 2] {
        let nx = c.x / (c.z * tan_half * aspect);
        let ny = c.y / (c.z * tan_half);
        [
            ((nx + 1.0) * 0.5 * width as f32) as f64,
            ((1.0 - ny) * 0.5 * height as f32) as f64,
        ]
    };
    let cam: Vec<Vec3> = mesh.positions.iter().map(|p| to_cam(*p)).collect();

    let mut gb = GBuffer::empty(width, height);
    // winning triangle and source barycentrics per pixel
    let mut hit: Vec<Option<(usize, [f32; 3])>> = vec![None; width * height];

    for (fi, face) in mesh.faces.iter().enumerate() {
        let [i0, i1, i2] = face.map(|i| i as usize);
        let tri = [
            ClipVert {
                cam: cam[i0],
                bary: [1.0, 0.0, 0.0],
            },
            ClipVert {
                cam: cam[i1],
                bary: [0.0, 1.0, 0.0],
            },
            ClipVert {
                cam: cam[i2],
                bary: [0.0, 0.0, 1.0],
            },
        ];
        let poly = if tri.iter().all(|v| v.cam.z >= NEAR) {
            tri.to_vec()
        } else {
            clip_near(tri)
        };
        if poly.len() < 3 {
            continue;
        }
        for k in 1..poly.len() - 1 {
            let mut verts = [poly[0], poly[k], poly[k + 1]];
            let mut scr = verts.map(|v| project(v.cam));
            let area = edge(scr[0], scr[1], scr[2]);
            if area == 0.0 || !area.is_finite() {
                continue;
            }
            if area < 0.0 {
                verts.swap(1, 2);
                scr.swap(1, 2);
            }
            let area = area.abs();
            let inv_z = verts.map(|v| 1.0 / v.cam.z as f64);
            let min_x = scr.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
            let max_x = scr
                .iter()
                .map(|p| p[0])
                .fold(f64::NEG_INFINITY, f64::max)
                .ceil()
                .min(width as f64) as usize;
            let min_y = scr.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
            let max_y = scr
                .iter()
                .map(|p| p[1])
                .fold(f64::NEG_INFINITY, f64::max)
                .ceil()
                .min(height as f64) as usize;
            let edges = [(1, 2), (2, 0), (0, 1)];
            let tl = edges.map(|(a, b)| top_left(scr[a], scr[b]));
            for py in min_y..max_y {
                for px in min_x..max_x {
                    let p = [px as f64 + 0.5, py as f64 + 0.5];
                    let w = edges.map(|(a, b)| edge(scr[a], scr[b], p));
                    let inside = (0..3).all(|e| w[e] > 0.0 || (w[e] == 0.0 && tl[e]));
                    if !inside {
                        continue;
                    }
                    let l = w.map(|x| x / area);
                    let pz = [l[0] * inv_z[0], l[1] * inv_z[1], l[2] * inv_z[2]];
                    let sum = pz[0] + pz[1] + pz[2];
                    let z = (1.0 / sum) as f32;
                    let idx = py * width + px;
                    if z >= gb.depth[idx] {
                        continue;
                    }
                    let pc = pz.map(|v| (v / sum) as f32);
                    let mut src = [0.0f32; 3];
                    for (j, v) in verts.iter().enumerate() {
                        for (s, b) in src.iter_mut().zip(v.bary) {
                            *s += pc[j] * b;
                        }
                    }
                    gb.depth[idx] = z;
                    hit[idx] = Some((fi, src));
                }
            }
        }
    }

    for (idx, h) in hit.iter().enumerate() {
        let Some((fi, b)) = *h else { continue };
        let f = mesh.faces[fi].map(|i| i as usize);
        let mix3 = |a: &[[f32; 3]]| {
            let v = [0, 1, 2].map(|k| Vec3::from(a[f[k]]) * b[k]);
            v[0] + v[1] + v[2]
        };
        let pos = mix3(&mesh.positions);
        let n = mix3(&mesh.normals).normalize_or(Vec3::Y);
        let tangents: Vec<[f32; 3]> = f
            .iter()
            .map(|&i| {
                let t = mesh.tangents[i];
                [t[0], t[1], t[2]]
            })
            .collect();
        let tv = [0, 1, 2].map(|k| Vec3::from(tangents[k]) * b[k]);
        let t_raw = tv[0] + tv[1] + tv[2];
        let t = (t_raw - n * n.dot(t_raw)).normalize_or(orthonormal_basis(n).0);
        let handed = if mesh.tangents[f[0]][3] < 0.0 { -1.0 } else { 1.0 };
        let bt = n.cross(t) * handed;
        let uv = [0, 1].map(|c| (0..3).map(|k| mesh.uvs[f[k]][c] * b[k]).sum::<f32>());
        gb.coverage[idx] = true;
        gb.uv[idx] = uv;
        gb.tbn[idx] = [t.to_array(), bt.to_array(), n.to_array()];
        gb.view[idx] = (eye - pos).normalize().to_array();
    }
    Ok(gb)
}
