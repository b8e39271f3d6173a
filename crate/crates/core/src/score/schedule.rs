use std::f32::consts::FRAC_PI_2;

use super::ScoreError;
use crate::gradtape::{TapeError, Tensor};

pub const ALPHA_BAR_FLOOR: f32 = 1e-4;

/// Cumulative signal retention `alpha_bar(t)`.
#[derive(Clone, Debug, PartialEq)]
pub enum DiffusionSchedule {
    /// `cos^2(pi t / 2)` floored at [`ALPHA_BAR_FLOOR`].
    Cosine,
    /// Discrete per-step values from a remote model, indexed by
    /// `round(t * (len - 1))`.
    Table(Vec<f32>),
}

impl DiffusionSchedule {
    pub fn from_table(values: Vec<f32>) -> Result<Self, ScoreError> {
        if values.is_empty() {
            return Err(ScoreError::Schedule("empty table".into()));
        }
        if let Some(v) = values.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
            return Err(ScoreError::Schedule(format!("value {v} outside (0, 1]")));
        }
        if values.windows(2).any(|w| w[1] > w[0]) {
            return Err(ScoreError::Schedule("table is not non-increasing".into()));
        }
        Ok(Self::Table(values))
    }

    fn check(t: f32) -> Result<(), ScoreError> {
        if (0.0..=1.0).contains(&t) {
            Ok(())
        } else {
            Err(ScoreError::TimeOutOfRange(t))
        }
    }

    /// Discrete step for `t`, if the schedule is tabulated.
    pub fn step(&self, t: f32) -> Result<Option<usize>, ScoreError> {
        Self::check(t)?;
        Ok(match self {
            Self::Cosine => None,
            Self::Table(v) => Some((t * (v.len() - 1) as f32).round() as usize),
        })
    }

    pub fn alpha_bar(&self, t: f32) -> Result<f32, ScoreError> {
        Self::check(t)?;
        Ok(match self {
            Self::Cosine => {
                let c = (FRAC_PI_2 * t).cos();
                (c * c).max(ALPHA_BAR_FLOOR)
            }
            Self::Table(v) => v[self.step(t)?.expect("table")],
        })
    }
}

/// One-step clean estimate `(x_t - sqrt(1 - a) eps) / sqrt(a)`.
pub fn predict_x0(x_t: &Tensor, alpha_bar: f32, eps: &Tensor) -> Result<Tensor, TapeError> {
    let a = f64::from(alpha_bar);
    let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
    x_t.zip_map(eps, |x, e| ((f64::from(x) - sn * f64::from(e)) / sa) as f32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_values() {
        let s = DiffusionSchedule::Cosine;
        assert_eq!(s.alpha_bar(0.0).unwrap(), 1.0);
        assert!((s.alpha_bar(0.5).unwrap() - 0.5).abs() < 1e-6);
        assert_eq!(s.alpha_bar(1.0).unwrap(), ALPHA_BAR_FLOOR);
        assert!(matches!(s.alpha_bar(1.5), Err(ScoreError::TimeOutOfRange(_))));
        assert!(s.alpha_bar(-0.1).is_err());
    }

    #[test]
    fn table_lookup() {
        let s = DiffusionSchedule::from_table(vec![1.0, 0.5, 0.25]).unwrap();
        assert_eq!(s.alpha_bar(0.0).unwrap(), 1.0);
        assert_eq!(s.alpha_bar(0.5).unwrap(), 0.5);
        assert_eq!(s.step(1.0).unwrap(), Some(2));
        assert!(DiffusionSchedule::from_table(vec![0.5, 0.6]).is_err());
        assert!(DiffusionSchedule::from_table(vec![0.0]).is_err());
    }

    #[test]
    fn predict_x0_values() {
        let x = Tensor::full(vec![1, 1, 1], 0.7);
        let z = Tensor::zeros(vec![1, 1, 1]);
        assert_eq!(predict_x0(&x, 1.0, &z).unwrap().data(), x.data());
        let one = Tensor::full(vec![1, 1, 1], 1.0);
        let got = predict_x0(&one, 0.25, &one).unwrap().data()[0];
        assert!((got - 0.26795).abs() < 1e-5);
    }
}
