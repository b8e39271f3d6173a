use crate::assets::PngImage;

/// One polyline.
pub struct Series<'a> {
    pub points: &'a [(f64, f64)],
    pub color: [u8; 3],
}

const MARGIN: usize = 8;

/// Rasterizes line series into an RGB image with a frame and no labels.
/// Axis ranges are fitted to the data.
pub fn line_plot(series: &[Series<'_>], width: usize, height: usize) -> PngImage {
    let mut img = PngImage {
        width,
        height,
        channels: 3,
        data: vec![255; width * height * 3],
    };
    let pts = series
        .iter()
        .flat_map(|s| s.points.iter())
        .filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for (x, y) in pts {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    if x0 > x1 {
        return img;
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    let (pw, ph) = ((width - 2 * MARGIN) as f64, (height - 2 * MARGIN) as f64);
    let to_px = |x: f64, y: f64| {
        (
            MARGIN as f64 + (x - x0) / (x1 - x0) * pw,
            (height - MARGIN) as f64 - (y - y0) / (y1 - y0) * ph,
        )
    };
    let mut put = |x: i64, y: i64, c: [u8; 3]| {
        if x >= 0 && y >= 0 && (x as usize) < width && (y as usize) < height {
            let i = (y as usize * width + x as usize) * 3;
            img.data[i..i + 3].copy_from_slice(&c);
        }
    };
    for i in MARGIN..width - MARGIN {
        put(i as i64, MARGIN as i64, [160; 3]);
        put(i as i64, (height - MARGIN) as i64, [160; 3]);
    }
    for j in MARGIN..height - MARGIN {
        put(MARGIN as i64, j as i64, [160; 3]);
        put((width - MARGIN) as i64, j as i64, [160; 3]);
    }
    for s in series {
        for w in s.points.windows(2) {
            let (a, b) = (to_px(w[0].0, w[0].1), to_px(w[1].0, w[1].1));
            let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
            for k in 0..=steps {
                let t = k as f64 / steps as f64;
                put(
                    (a.0 + t * (b.0 - a.0)).round() as i64,
                    (a.1 + t * (b.1 - a.1)).round() as i64,
                    s.color,
                );
            }
        }
    }
    img
}
