use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use exr::prelude as ex;

use super::AssetError;
use crate::gradtape::Tensor;
use crate::render::TextureSet;

pub fn linear_to_srgb(v: f32) -> f32 {
    let v = v.clamp(0.0, 1.0);
    if v <= 0.003_130_8 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

pub fn srgb_to_linear(v: f32) -> f32 {
    if v <= 0.040_45 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

/// `[0, 1]` to a byte, rounding half up.
pub fn quantize_unit(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Tangent-space component in `[-1, 1]` to a byte via `(n + 1) / 2`.
pub fn encode_normal_byte(n: f32) -> u8 {
    quantize_unit((n + 1.0) * 0.5)
}

/// 8-bit image with interleaved channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PngImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

pub fn write_png(path: impl AsRef<Path>, img: &PngImage) -> Result<(), AssetError> {
    let path = path.as_ref();
    let color = match img.channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        4 => png::ColorType::Rgba,
        c => return Err(AssetError::Png(format!("cannot write {c}-channel png"))),
    };
    let file = File::create(path).map_err(|e| AssetError::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(|e| AssetError::Png(e.to_string()))?;
    w.write_image_data(&img.data)
        .map_err(|e| AssetError::Png(e.to_string()))
}

/// Reads any 8- or 16-bit PNG, expanding palettes and dropping to 8 bits.
pub fn read_png(path: impl AsRef<Path>) -> Result<PngImage, AssetError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| AssetError::io(path, e))?;
    read_png_from(std::io::BufReader::new(file))
}

pub(crate) fn read_png_from(r: impl std::io::BufRead + std::io::Seek) -> Result<PngImage, AssetError> {
    let mut dec = png::Decoder::new(r);
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(|e| AssetError::Png(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| AssetError::Png("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| AssetError::Png(e.to_string()))?;
    buf.truncate(info.buffer_size());
    let channels = info.color_type.samples();
    Ok(PngImage {
        width: info.width as usize,
        height: info.height as usize,
        channels,
        data: buf,
    })
}

/// sRGB color PNG as a linear `[H, W, 3]` tensor. Gray is replicated and
/// alpha dropped.
pub fn load_png_linear(path: impl AsRef<Path>) -> Result<Tensor, AssetError> {
    png_to_linear(&read_png(path)?)
}

pub(crate) fn png_to_linear(img: &PngImage) -> Result<Tensor, AssetError> {
    let lut: Vec<f32> = (0..=255u8).map(|b| srgb_to_linear(b as f32 / 255.0)).collect();
    let mut data = Vec::with_capacity(img.width * img.height * 3);
    for px in img.data.chunks_exact(img.channels) {
        match img.channels {
            1 | 2 => data.extend_from_slice(&[lut[px[0] as usize]; 3]),
            _ => data.extend(px[..3].iter().map(|&b| lut[b as usize])),
        }
    }
    Tensor::new(vec![img.height, img.width, 3], data).map_err(|e| AssetError::Png(e.to_string()))
}

/// Linear `[H, W, 3]` to sRGB bytes.
pub fn srgb_png(t: &Tensor) -> Result<PngImage, AssetError> {
    let (h, w, c) = dims(t)?;
    Ok(PngImage {
        width: w,
        height: h,
        channels: c,
        data: t.data().iter().map(|&v| quantize_unit(linear_to_srgb(v))).collect(),
    })
}

/// Values in `[0, 1]` straight to bytes.
pub fn unit_png(t: &Tensor) -> Result<PngImage, AssetError> {
    let (h, w, c) = dims(t)?;
    Ok(PngImage {
        width: w,
        height: h,
        channels: c,
        data: t.data().iter().map(|&v| quantize_unit(v)).collect(),
    })
}

fn dims(t: &Tensor) -> Result<(usize, usize, usize), AssetError> {
    t.hwc().map_err(|e| AssetError::Png(e.to_string()))
}

fn channel_names(c: usize) -> Result<&'static [&'static str], AssetError> {
    match c {
        1 => Ok(&["Y"]),
        2 => Ok(&["R", "G"]),
        3 => Ok(&["R", "G", "B"]),
        4 => Ok(&["R", "G", "B", "A"]),
        _ => Err(AssetError::Exr(format!("unsupported channel count {c}"))),
    }
}

/// Writes an `[H, W, C]` tensor as 32-bit float EXR, zip-compressed.
pub fn write_exr(path: impl AsRef<Path>, t: &Tensor) -> Result<(), AssetError> {
    let path = path.as_ref();
    let (h, w, c) = dims(t)?;
    let names = channel_names(c)?;
    let channels: Vec<ex::AnyChannel<ex::FlatSamples>> = names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let samples = t.data().iter().skip(k).step_by(c).copied().collect();
            ex::AnyChannel::new(*name, ex::FlatSamples::F32(samples))
        })
        .collect();
    let layer = ex::Layer::new(
        (w, h),
        ex::LayerAttributes::default(),
        ex::Encoding::SMALL_LOSSLESS,
        ex::AnyChannels::sort(channels.into()),
    );
    use ex::WritableImage;
    ex::Image::from_layer(layer)
        .write()
        .non_parallel()
        .to_file(path)
        .map_err(|e| match e {
            ex::Error::Io(io) => AssetError::io(path, io),
            other => AssetError::Exr(other.to_string()),
        })
}

/// Reads the first layer of an EXR written by [`write_exr`].
pub fn load_exr(path: impl AsRef<Path>) -> Result<Tensor, AssetError> {
    use ex::ReadChannels;
    use ex::ReadLayers;
    let path = path.as_ref();
    let image = ex::read()
        .no_deep_data()
        .largest_resolution_level()
        .all_channels()
        .first_valid_layer()
        .all_attributes()
        .non_parallel()
        .from_file(path)
        .map_err(|e| match e {
            ex::Error::Io(io) => AssetError::io(path, io),
            other => AssetError::Exr(other.to_string()),
        })?;
    let layer = image.layer_data;
    let (w, h) = (layer.size.width(), layer.size.height());
    let list = &layer.channel_data.list;
    let names = channel_names(list.len())?;
    let mut cols = Vec::with_capacity(names.len());
    for name in names {
        let ch = list
            .iter()
            .find(|ch| ch.name.to_string() == *name)
            .ok_or_else(|| AssetError::Exr(format!("missing channel {name}")))?;
        cols.push(ch.sample_data.values_as_f32().collect::<Vec<f32>>());
    }
    let c = cols.len();
    let mut data = vec![0.0; w * h * c];
    for (k, col) in cols.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            data[i * c + k] = *v;
        }
    }
    Tensor::new(vec![h, w, c], data).map_err(|e| AssetError::Exr(e.to_string()))
}

/// Writes `{diffuse,roughness,metalness,normal}.{png,exr}` into `dir`.
pub fn write_texture_set(textures: &TextureSet, dir: impl AsRef<Path>) -> Result<(), AssetError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| AssetError::io(dir, e))?;
    write_texture_pngs(textures, dir)?;
    write_exr(dir.join("diffuse.exr"), &textures.diffuse)?;
    write_exr(dir.join("roughness.exr"), &textures.roughness)?;
    write_exr(dir.join("metalness.exr"), &textures.metalness)?;
    write_exr(dir.join("normal.exr"), &textures.normal)
}

/// PNG half of [`write_texture_set`].
pub fn write_texture_pngs(textures: &TextureSet, dir: &Path) -> Result<(), AssetError> {
    std::fs::create_dir_all(dir).map_err(|e| AssetError::io(dir, e))?;
    write_png(dir.join("diffuse.png"), &srgb_png(&textures.diffuse)?)?;
    write_png(dir.join("roughness.png"), &unit_png(&textures.roughness)?)?;
    write_png(dir.join("metalness.png"), &unit_png(&textures.metalness)?)?;
    let (h, w, c) = dims(&textures.normal)?;
    let normal = PngImage {
        width: w,
        height: h,
        channels: c,
        data: textures.normal.data().iter().map(|&v| encode_normal_byte(v)).collect(),
    };
    write_png(dir.join("normal.png"), &normal)
}

/// Reads the EXR maps written by [`write_texture_set`].
pub fn load_texture_set(dir: impl AsRef<Path>) -> Result<TextureSet, AssetError> {
    let dir = dir.as_ref();
    let ts = TextureSet {
        diffuse: load_exr(dir.join("diffuse.exr"))?,
        roughness: load_exr(dir.join("roughness.exr"))?,
        metalness: load_exr(dir.join("metalness.exr"))?,
        normal: load_exr(dir.join("normal.exr"))?,
    };
    ts.validate().map_err(|e| AssetError::InvalidMesh(e.to_string()))?;
    Ok(ts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn byte_encodings() {
        assert_eq!(quantize_unit(linear_to_srgb(0.5)), 188);
        assert_eq!([0.0f32, 0.0, 1.0].map(encode_normal_byte), [128, 128, 255]);
        assert_eq!(quantize_unit(1.0), 255);
        assert_eq!(quantize_unit(0.0), 0);
    }

    #[test]
    fn srgb_inverse() {
        for i in 0..=100 {
            let v = i as f32 / 100.0;
            assert!((srgb_to_linear(linear_to_srgb(v)) - v).abs() < 1e-5);
        }
    }

    #[test]
    fn texture_set_files() {
        let dir = tempfile::tempdir().unwrap();
        let ts = TextureSet::constant(8, [0.5; 3], 1.0, 0.0);
        write_texture_set(&ts, dir.path()).unwrap();
        let d = read_png(dir.path().join("diffuse.png")).unwrap();
        assert_eq!((d.channels, d.data[0]), (3, 188));
        let n = read_png(dir.path().join("normal.png")).unwrap();
        assert_eq!(&n.data[..3], &[128, 128, 255]);
        let r = read_png(dir.path().join("roughness.png")).unwrap();
        assert_eq!((r.channels, r.data[0]), (1, 255));
        assert_eq!(load_texture_set(dir.path()).unwrap(), ts);
    }

    #[test]
    fn unwritable_directory() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, b"x").unwrap();
        let ts = TextureSet::constant(4, [0.5; 3], 0.6, 0.0);
        assert!(write_texture_set(&ts, blocker.join("sub")).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn exr_roundtrip_bit_exact(
            c in 1usize..=4,
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let t = Tensor::from_fn(vec![5, 7, c], |_| rng.random_range(-1e6f32..1e6));
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("t.exr");
            write_exr(&p, &t).unwrap();
            let back = load_exr(&p).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            let same = back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
        }
    }
}
