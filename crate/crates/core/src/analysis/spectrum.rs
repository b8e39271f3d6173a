use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::AnalysisError;
use crate::gradtape::Tensor;

/// Radially binned power of a square image's DFT.
///
/// Power is `|F|^2 / N^4`, so summing over every frequency gives the mean
/// squared pixel value. Bins are integer radii `0..N/2`; frequencies at or
/// beyond Nyquist are left out of the bins but counted in `total_power`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumReport {
    pub size: usize,
    /// Summed power per radius bin.
    pub bin_power: Vec<f64>,
    pub bin_count: Vec<usize>,
    pub total_power: f64,
}

impl SpectrumReport {
    /// Mean power per frequency in each bin.
    pub fn radial_mean(&self) -> Vec<f64> {
        self.bin_power
            .iter()
            .zip(&self.bin_count)
            .map(|(p, c)| if *c > 0 { p / *c as f64 } else { 0.0 })
            .collect()
    }

    pub fn log_radial(&self) -> Vec<f64> {
        self.radial_mean().iter().map(|p| p.max(1e-30).log10()).collect()
    }

    /// First bin of the top third.
    pub fn high_band_start(&self) -> usize {
        2 * self.bin_power.len() / 3
    }

    /// Power in the top third of radius bins.
    pub fn high_band_energy(&self) -> f64 {
        self.bin_power[self.high_band_start()..].iter().sum()
    }
}

fn grayscale(image: &Tensor) -> Result<(usize, Vec<f64>), AnalysisError> {
    let (h, w, c) = match image.shape() {
        [h, w] => (*h, *w, 1),
        [h, w, c] => (*h, *w, *c),
        s => return Err(AnalysisError::NotSquare(s.to_vec())),
    };
    if h != w || h == 0 || c == 0 {
        return Err(AnalysisError::NotSquare(image.shape().to_vec()));
    }
    let g = image
        .data()
        .chunks_exact(c)
        .map(|px| px.iter().map(|v| *v as f64).sum::<f64>() / c as f64)
        .collect();
    Ok((h, g))
}

/// Color images are averaged to grayscale first.
pub fn power_spectrum(image: &Tensor) -> Result<SpectrumReport, AnalysisError> {
    let (n, gray) = grayscale(image)?;
    let mut buf: Vec<Complex<f64>> = gray.iter().map(|v| Complex::new(*v, 0.0)).collect();
    let fft = FftPlanner::new().plan_fft_forward(n);
    for row in buf.chunks_exact_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); n];
    for x in 0..n {
        for y in 0..n {
            col[y] = buf[y * n + x];
        }
        fft.process(&mut col);
        for y in 0..n {
            buf[y * n + x] = col[y];
        }
    }
    let bins = n / 2;
    let norm = (n as f64).powi(4);
    let mut bin_power = vec![0.0; bins];
    let mut bin_count = vec![0usize; bins];
    let mut total = 0.0;
    let freq = |i: usize| {
        if i < n.div_ceil(2) {
            i as f64
        } else {
            i as f64 - n as f64
        }
    };
    for y in 0..n {
        for x in 0..n {
            let p = buf[y * n + x].norm_sqr() / norm;
            total += p;
            let r = (freq(x).powi(2) + freq(y).powi(2)).sqrt().round() as usize;
            if r < bins {
                bin_power[r] += p;
                bin_count[r] += 1;
            }
        }
    }
    Ok(SpectrumReport {
        size: n,
        bin_power,
        bin_count,
        total_power: total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_is_all_dc() {
        let s = power_spectrum(&Tensor::full(vec![16, 16, 3], 0.5)).unwrap();
        assert!((s.bin_power[0] - 0.25).abs() < 1e-12);
        assert!(s.bin_power[1..].iter().all(|p| *p < 1e-20));
    }

    #[test]
    fn sinusoid_lands_in_one_bin() {
        let n = 64;
        let img = Tensor::from_fn(vec![n, n, 1], |i| {
            let x = (i % n) as f32;
            0.5 + 0.25 * (std::f32::consts::TAU * x / 8.0).sin()
        });
        let s = power_spectrum(&img).unwrap();
        let nonzero: Vec<usize> = (1..s.bin_power.len()).filter(|k| s.bin_power[*k] > 1e-9).collect();
        assert_eq!(nonzero, vec![8]);
    }

    #[test]
    fn rejects_non_square() {
        assert!(matches!(
            power_spectrum(&Tensor::zeros(vec![4, 8, 3])),
            Err(AnalysisError::NotSquare(_))
        ));
    }
}
