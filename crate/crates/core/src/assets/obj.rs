use std::collections::HashMap;
use std::path::Path;

use super::AssetError;
use crate::math::Vec3;

/// Triangle mesh with per-vertex attributes.
///
/// UVs use a top-left origin (`v` grows downward); OBJ files store a
/// bottom-left origin, so the loader flips `v`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub positions: Vec<[f32; 3]>,
    pub uvs: Vec<[f32; 2]>,
    pub normals: Vec<[f32; 3]>,
    /// xyz tangent, w handedness of the bitangent.
    pub tangents: Vec<[f32; 4]>,
    pub faces: Vec<[u32; 3]>,
}

impl Mesh {
    /// Builds a mesh from positions, uvs and faces, deriving normals and tangents.
    pub fn from_triangles(positions: Vec<[f32; 3]>, uvs: Vec<[f32; 2]>, faces: Vec<[u32; 3]>) -> Self {
        let mut mesh = Mesh {
            normals: vec![[0.0; 3]; positions.len()],
            tangents: vec![[0.0; 4]; positions.len()],
            positions,
            uvs,
            faces,
        };
        mesh.compute_normals();
        mesh.compute_tangents();
        mesh
    }

    pub fn vertex_count(&self) -> usize {
        self.positions.len()
    }

    /// Checks index bounds and normal lengths.
    pub fn validate(&self) -> Result<(), AssetError> {
        let n = self.positions.len();
        if self.uvs.len() != n || self.normals.len() != n || self.tangents.len() != n {
            return Err(AssetError::InvalidMesh("attribute arrays differ in length".into()));
        }
        if let Some(f) = self.faces.iter().find(|f| f.iter().any(|&i| i as usize >= n)) {
            return Err(AssetError::InvalidMesh(format!("face {f:?} indexes past {n} vertices")));
        }
        for (i, nrm) in self.normals.iter().enumerate() {
            let l = Vec3::from(*nrm).length();
            if (l - 1.0).abs() > 1e-3 {
                return Err(AssetError::InvalidMesh(format!("normal {i} has length {l}")));
            }
        }
        Ok(())
    }

    /// Area-weighted vertex normals, shared across vertices at the same position.
    pub fn compute_normals(&mut self) {
        let mut by_pos: HashMap<[u32; 3], Vec3> = HashMap::new();
        let key = |p: &[f32; 3]| p.map(f32::to_bits);
        for f in &self.faces {
            let [a, b, c] = f.map(|i| Vec3::from(self.positions[i as usize]));
            let fnrm = (b - a).cross(c - a);
            for &i in f {
                *by_pos.entry(key(&self.positions[i as usize])).or_default() += fnrm;
            }
        }
        self.normals = self
            .positions
            .iter()
            .map(|p| {
                by_pos
                    .get(&key(p))
                    .copied()
                    .unwrap_or(Vec3::ZERO)
                    .normalize_or(Vec3::Y)
                    .to_array()
            })
            .collect();
    }

    /// Per-vertex tangents from UV derivatives, accumulated over incident faces
    /// and Gram-Schmidt orthogonalized against the normal.
    pub fn compute_tangents(&mut self) {
        let n = self.positions.len();
        let mut tan = vec![Vec3::ZERO; n];
        let mut bit = vec![Vec3::ZERO; n];
        for f in &self.faces {
            let [i0, i1, i2] = f.map(|i| i as usize);
            let (p0, p1, p2) = (
                Vec3::from(self.positions[i0]),
                Vec3::from(self.positions[i1]),
                Vec3::from(self.positions[i2]),
            );
            let (t0, t1, t2) = (self.uvs[i0], self.uvs[i1], self.uvs[i2]);
            let (e1, e2) = (p1 - p0, p2 - p0);
            let (du1, dv1) = (t1[0] - t0[0], t1[1] - t0[1]);
            let (du2, dv2) = (t2[0] - t0[0], t2[1] - t0[1]);
            let det = du1 * dv2 - du2 * dv1;
            if det.abs() < 1e-20 {
                continue;
            }
            let r = 1.0 / det;
            let t = (e1 * dv2 - e2 * dv1) * r;
            let b = (e2 * du1 - e1 * du2) * r;
            // weight by face area so large faces dominate
            let area = e1.cross(e2).length();
            let (t, b) = (t.normalize_or(Vec3::ZERO) * area, b.normalize_or(Vec3::ZERO) * area);
            for i in [i0, i1, i2] {
                tan[i] += t;
                bit[i] += b;
            }
        }
        self.tangents = (0..n)
            .map(|i| {
                let nrm = Vec3::from(self.normals[i]);
                let t = tan[i] - nrm * nrm.dot(tan[i]);
                let t = t.normalize_or_else(|| crate::math::orthonormal_basis(nrm).0);
                let w = if nrm.cross(t).dot(bit[i]) < 0.0 { -1.0 } else { 1.0 };
                [t.x, t.y, t.z, w]
            })
            .collect();
    }

    /// Translates and scales so the bounding-box center sits at the origin
    /// and every vertex lies within radius 0.5.
    pub fn normalize_to_unit_sphere(&mut self) {
        if self.positions.is_empty() {
            return;
        }
        let mut lo = Vec3::splat(f32::INFINITY);
        let mut hi = Vec3::splat(f32::NEG_INFINITY);
        for p in &self.positions {
            lo = Vec3::new(lo.x.min(p[0]), lo.y.min(p[1]), lo.z.min(p[2]));
            hi = Vec3::new(hi.x.max(p[0]), hi.y.max(p[1]), hi.z.max(p[2]));
        }
        let center = (lo + hi) * 0.5;
        let radius = self
            .positions
            .iter()
            .map(|p| (Vec3::from(*p) - center).length())
            .fold(0.0f32, f32::max);
        let s = if radius > 0.0 { 0.5 / radius } else { 1.0 };
        for p in &mut self.positions {
            *p = ((Vec3::from(*p) - center) * s).to_array();
        }
    }
}

impl Vec3 {
    fn normalize_or_else(self, f: impl FnOnce() -> Vec3) -> Vec3 {
        let l = self.length();
        if l > 1e-12 {
            self * (1.0 / l)
        } else {
            f()
        }
    }
}

pub fn load_obj(path: impl AsRef<Path>) -> Result<Mesh, AssetError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| AssetError::io(path, e))?;
    parse_obj(&text)
}

/// Parses Wavefront OBJ text. Material statements and groups are ignored.
pub fn parse_obj(text: &str) -> Result<Mesh, AssetError> {
    let mut pos: Vec<[f32; 3]> = Vec::new();
    let mut tex: Vec<[f32; 2]> = Vec::new();
    let mut nrm: Vec<[f32; 3]> = Vec::new();
    let mut corners: HashMap<(usize, usize, Option<usize>), u32> = HashMap::new();
    let mut out_pos = Vec::new();
    let mut out_uv = Vec::new();
    let mut out_nrm: Vec<Option<[f32; 3]>> = Vec::new();
    let mut faces = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut it = content.split_whitespace();
        let Some(tag) = it.next() else { continue };
        let bad = |msg: &str| AssetError::Parse {
            line,
            message: format!("{msg}: `{}`", raw.trim()),
        };
        let floats = |it: std::str::SplitWhitespace<'_>| -> Result<Vec<f32>, AssetError> {
            it.map(|s| s.parse::<f32>().map_err(|_| bad("invalid number")))
                .collect()
        };
        match tag {
            "v" => {
                let v = floats(it)?;
                if v.len() < 3 {
                    return Err(bad("vertex needs 3 coordinates"));
                }
                pos.push([v[0], v[1], v[2]]);
            }
            "vt" => {
                let v = floats(it)?;
                if v.len() < 2 {
                    return Err(bad("texture coordinate needs 2 components"));
                }
                tex.push([v[0], 1.0 - v[1]]);
            }
            "vn" => {
                let v = floats(it)?;
                if v.len() < 3 {
                    return Err(bad("normal needs 3 components"));
                }
                nrm.push(Vec3::new(v[0], v[1], v[2]).normalize_or(Vec3::Y).to_array());
            }
            "f" => {
                let mut idx = Vec::new();
                for corner in it {
                    let mut parts = corner.split('/');
                    let resolve = |s: Option<&str>, n: usize| -> Result<Option<usize>, AssetError> {
                        match s {
                            None | Some("") => Ok(None),
                            Some(s) => {
                                let i: i64 = s.parse().map_err(|_| bad("invalid index"))?;
                                let r = if i > 0 { i - 1 } else { n as i64 + i };
                                if r < 0 || r as usize >= n {
                                    return Err(bad("index out of range"));
                                }
                                Ok(Some(r as usize))
                            }
                        }
                    };
                    let vi = resolve(parts.next(), pos.len())?.ok_or_else(|| bad("missing vertex index"))?;
                    let ti = resolve(parts.next(), tex.len())?.ok_or(AssetError::NotUvUnwrapped { line })?;
                    let ni = resolve(parts.next(), nrm.len())?;
                    let key = (vi, ti, ni);
                    let id = *corners.entry(key).or_insert_with(|| {
                        out_pos.push(pos[vi]);
                        out_uv.push(tex[ti]);
                        out_nrm.push(ni.map(|n| nrm[n]));
                        (out_pos.len() - 1) as u32
                    });
                    idx.push(id);
                }
                if idx.len() < 3 {
                    return Err(bad("face needs at least 3 vertices"));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }

    let has_all_normals = !out_nrm.is_empty() && out_nrm.iter().all(Option::is_some);
    let mut mesh = Mesh {
        normals: vec![[0.0; 3]; out_pos.len()],
        tangents: vec![[0.0; 4]; out_pos.len()],
        positions: out_pos,
        uvs: out_uv,
        faces,
    };
    mesh.normalize_to_unit_sphere();
    if has_all_normals {
        mesh.normals = out_nrm.into_iter().map(Option::unwrap).collect();
    } else {
        mesh.compute_normals();
    }
    mesh.compute_tangents();
    Ok(mesh)
}

/// Serializes positions, uvs, normals and faces.
pub fn write_obj(mesh: &Mesh) -> String {
    use std::fmt::Write;
    let mut s = String::new();
    for p in &mesh.positions {
        let _ = writeln!(s, "v {} {} {}", p[0], p[1], p[2]);
    }
    for t in &mesh.uvs {
        let _ = writeln!(s, "vt {} {}", t[0], 1.0 - t[1]);
    }
    for n in &mesh.normals {
        let _ = writeln!(s, "vn {} {} {}", n[0], n[1], n[2]);
    }
    for f in &mesh.faces {
        let [a, b, c] = f.map(|i| i + 1);
        let _ = writeln!(s, "f {a}/{a}/{a} {b}/{b}/{b} {c}/{c}/{c}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_triangle() {
        let m = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 0 1\nf 1/1 2/2 3/3\n").unwrap();
        assert_eq!(m.faces.len(), 1);
        assert_eq!(m.vertex_count(), 3);
        m.validate().unwrap();
        // geometric normal of a CCW triangle in the xy plane
        assert!((m.normals[0][2] - 1.0).abs() < 1e-6);
        // tangent follows +u
        assert!(m.tangents[0][0] > 0.99);
    }

    #[test]
    fn quad_fans_into_two_triangles() {
        let m = parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 1 1\nvt 0 1\nf 1/1 2/2 3/3 4/4\n")
            .unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn missing_uvs_rejected() {
        let err = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n").unwrap_err();
        assert!(err.to_string().contains("mesh not UV-unwrapped"), "{err}");
    }

    #[test]
    fn malformed_line_reports_number() {
        let err = parse_obj("v 0 0 0\nv 1 zero 0\n").unwrap_err();
        assert!(matches!(err, AssetError::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn normalized_to_unit_diameter() {
        let m = parse_obj("v 10 10 10\nv 14 10 10\nv 10 12 10\nvt 0 0\nvt 1 0\nvt 0 1\nf 1/1 2/2 3/3\n").unwrap();
        let r = m
            .positions
            .iter()
            .map(|p| Vec3::from(*p).length())
            .fold(0.0f32, f32::max);
        assert!((r - 0.5).abs() < 1e-5);
    }
}
