use std::io::Write;
use std::path::Path;

use super::AssetError;

/// Equirectangular linear radiance, row-major `[height, width, 3]`.
///
/// Row 0 is the zenith (+Y), column 0 faces -Z and longitude grows
/// toward +X.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvironmentMap {
    width: usize,
    height: usize,
    radiance: Vec<f32>,
}

impl EnvironmentMap {
    pub fn new(width: usize, height: usize, radiance: Vec<f32>) -> Result<Self, AssetError> {
        if height == 0 || width != 2 * height {
            return Err(AssetError::InvalidEnv(format!(
                "equirectangular maps need width = 2 * height, got {width}x{height}"
            )));
        }
        if radiance.len() != width * height * 3 {
            return Err(AssetError::InvalidEnv(format!(
                "{} values for a {width}x{height} map",
                radiance.len()
            )));
        }
        if let Some(i) = radiance.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(AssetError::InvalidEnv(format!("value {} at index {i}", radiance[i])));
        }
        Ok(Self {
            width,
            height,
            radiance,
        })
    }

    pub fn constant(width: usize, height: usize, value: [f32; 3]) -> Result<Self, AssetError> {
        let data = (0..width * height).flat_map(|_| value).collect();
        Self::new(width, height, data)
    }

    pub fn from_fn(height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Result<Self, AssetError> {
        let width = 2 * height;
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(y, x));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn radiance(&self) -> &[f32] {
        &self.radiance
    }

    pub fn texel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.radiance[i], self.radiance[i + 1], self.radiance[i + 2]]
    }

    /// Multiplies every value by `s`.
    pub fn scaled(&self, s: f32) -> Self {
        Self {
            radiance: self.radiance.iter().map(|v| v * s).collect(),
            ..self.clone()
        }
    }
}

pub fn decode_rgbe(px: [u8; 4]) -> [f32; 3] {
    if px[3] == 0 {
        return [0.0; 3];
    }
    let f = 2f32.powi(px[3] as i32 - 136);
    [px[0] as f32 * f, px[1] as f32 * f, px[2] as f32 * f]
}

pub fn encode_rgbe(c: [f32; 3]) -> [u8; 4] {
    let v = c[0].max(c[1]).max(c[2]);
    if v < 1e-32 {
        return [0; 4];
    }
    // v = m * 2^e with m in [0.5, 1)
    let mut e = v.log2().floor() as i32 + 1;
    if v / 2f32.powi(e) >= 1.0 {
        e += 1;
    } else if v / 2f32.powi(e) < 0.5 {
        e -= 1;
    }
    let scale = 256.0 / 2f32.powi(e);
    let q = |x: f32| ((x * scale) as i32).clamp(0, 255) as u8;
    [q(c[0]), q(c[1]), q(c[2]), (e + 128).clamp(0, 255) as u8]
}

pub fn load_hdr(path: impl AsRef<Path>) -> Result<EnvironmentMap, AssetError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| AssetError::io(path, e))?;
    parse_hdr(&bytes)
}

pub fn parse_hdr(bytes: &[u8]) -> Result<EnvironmentMap, AssetError> {
    let mut pos = 0;
    let next_line = |pos: &mut usize| -> Option<&[u8]> {
        if *pos >= bytes.len() {
            return None;
        }
        let start = *pos;
        let end = bytes[start..]
            .iter()
            .position(|&b| b == b'\n')
            .map_or(bytes.len(), |i| start + i);
        *pos = (end + 1).min(bytes.len());
        Some(&bytes[start..end])
    };
    let magic = next_line(&mut pos).ok_or(AssetError::BadMagic)?;
    if !(magic.starts_with(b"#?RADIANCE") || magic.starts_with(b"#?RGBE")) {
        return Err(AssetError::BadMagic);
    }
    loop {
        let line = next_line(&mut pos).ok_or_else(|| AssetError::HdrHeader("missing blank line".into()))?;
        if line.is_empty() {
            break;
        }
        if let Some(fmt) = line.strip_prefix(b"FORMAT=") {
            if fmt != b"32-bit_rle_rgbe" {
                return Err(AssetError::HdrHeader(format!(
                    "unsupported format {}",
                    String::from_utf8_lossy(fmt)
                )));
            }
        }
    }
    let res = next_line(&mut pos).ok_or_else(|| AssetError::HdrHeader("missing resolution".into()))?;
    let res = String::from_utf8_lossy(res);
    let parts: Vec<&str> = res.split_whitespace().collect();
    let (height, width) = match parts.as_slice() {
        ["-Y", h, "+X", w] => (
            h.parse::<usize>().map_err(|_| AssetError::HdrHeader(res.to_string()))?,
            w.parse::<usize>().map_err(|_| AssetError::HdrHeader(res.to_string()))?,
        ),
        _ => return Err(AssetError::HdrHeader(format!("unsupported orientation `{res}`"))),
    };

    let mut data = Vec::with_capacity(width * height * 3);
    let mut scan = vec![[0u8; 4]; width];
    for row in 0..height {
        pos = read_scanline(bytes, pos, &mut scan).ok_or(AssetError::TruncatedScanline { row })?;
        for px in &scan {
            data.extend_from_slice(&decode_rgbe(*px));
        }
    }
    EnvironmentMap::new(width, height, data)
}

fn read_scanline(bytes: &[u8], mut pos: usize, out: &mut [[u8; 4]]) -> Option<usize> {
    let width = out.len();
    let head = bytes.get(pos..pos + 4)?;
    let new_rle = (8..=0x7fff).contains(&width)
        && head[0] == 2
        && head[1] == 2
        && head[2] & 0x80 == 0
        && ((head[2] as usize) << 8 | head[3] as usize) == width;
    if new_rle {
        pos += 4;
        for ch in 0..4 {
            let mut x = 0;
            while x < width {
                let count = *bytes.get(pos)? as usize;
                pos += 1;
                if count > 128 {
                    let n = count - 128;
                    let v = *bytes.get(pos)?;
                    pos += 1;
                    if x + n > width {
                        return None;
                    }
                    out[x..x + n].iter_mut().for_each(|p| p[ch] = v);
                    x += n;
                } else {
                    if count == 0 || x + count > width {
                        return None;
                    }
                    let src = bytes.get(pos..pos + count)?;
                    for (p, &v) in out[x..x + count].iter_mut().zip(src) {
                        p[ch] = v;
                    }
                    pos += count;
                    x += count;
                }
            }
        }
        return Some(pos);
    }
    // flat pixels, with the old-style (1,1,1,n) repeat convention
    let mut x = 0;
    let mut shift = 0;
    while x < width {
        let px: [u8; 4] = bytes.get(pos..pos + 4)?.try_into().ok()?;
        pos += 4;
        if px[0] == 1 && px[1] == 1 && px[2] == 1 && x > 0 {
            let n = (px[3] as usize) << shift;
            if x + n > width {
                return None;
            }
            let prev = out[x - 1];
            out[x..x + n].iter_mut().for_each(|p| *p = prev);
            x += n;
            shift += 8;
        } else {
            out[x] = px;
            x += 1;
            shift = 0;
        }
    }
    Some(pos)
}

/// Writes RLE scanlines (flat when the width is outside the RLE range).
pub fn write_hdr(env: &EnvironmentMap, path: impl AsRef<Path>) -> Result<(), AssetError> {
    let path = path.as_ref();
    let bytes = encode_hdr(env);
    let mut f = std::fs::File::create(path).map_err(|e| AssetError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| AssetError::io(path, e))
}

pub(crate) fn encode_hdr(env: &EnvironmentMap) -> Vec<u8> {
    let (w, h) = (env.width(), env.height());
    let mut out = format!("#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n-Y {h} +X {w}\n").into_bytes();
    let rle = (8..=0x7fff).contains(&w);
    let mut scan = vec![[0u8; 4]; w];
    for y in 0..h {
        for (x, px) in scan.iter_mut().enumerate() {
            *px = encode_rgbe(env.texel(y, x));
        }
        if !rle {
            scan.iter().for_each(|p| out.extend_from_slice(p));
            continue;
        }
        out.extend_from_slice(&[2, 2, (w >> 8) as u8, (w & 0xff) as u8]);
        for ch in 0..4 {
            let vals: Vec<u8> = scan.iter().map(|p| p[ch]).collect();
            rle_channel(&vals, &mut out);
        }
    }
    out
}

fn rle_channel(vals: &[u8], out: &mut Vec<u8>) {
    let run_at = |i: usize| {
        let mut n = 1;
        while i + n < vals.len() && n < 127 && vals[i + n] == vals[i] {
            n += 1;
        }
        n
    };
    let mut i = 0;
    while i < vals.len() {
        let n = run_at(i);
        if n >= 3 {
            out.push(128 + n as u8);
            out.push(vals[i]);
            i += n;
            continue;
        }
        let start = i;
        while i < vals.len() && i - start < 128 && run_at(i) < 3 {
            i += 1;
        }
        out.push((i - start) as u8);
        out.extend_from_slice(&vals[start..i]);
    }
}
