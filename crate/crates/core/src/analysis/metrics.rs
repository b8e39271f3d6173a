use super::AnalysisError;
use crate::gradtape::Tensor;

/// Returned for identical images.
pub const PSNR_CAP: f64 = 99.0;

/// `10 log10(peak^2 / mse)` with `peak = 1`, capped at [`PSNR_CAP`].
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64, AnalysisError> {
    if a.shape() != b.shape() {
        return Err(AnalysisError::Shape {
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = (*x - *y) as f64;
            d * d
        })
        .sum::<f64>()
        / a.len().max(1) as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_values() {
        let z = Tensor::zeros(vec![4, 4, 3]);
        let o = Tensor::full(vec![4, 4, 3], 1.0);
        assert_eq!(psnr(&z, &z).unwrap(), PSNR_CAP);
        assert!(psnr(&z, &o).unwrap().abs() < 1e-12);
        let off = Tensor::full(vec![4, 4, 3], 0.1);
        assert!((psnr(&z, &off).unwrap() - 20.0).abs() < 1e-5);
        assert!(psnr(&z, &Tensor::zeros(vec![4, 3, 3])).is_err());
    }
}
