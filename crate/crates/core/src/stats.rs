//! Small statistical helpers for Monte-Carlo comparisons.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// One-sided paired t-test of `H1: mean(a - b) > 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedTest {
    pub n: usize,
    pub mean_difference: f64,
    pub t: f64,
    pub p_value: f64,
}

impl PairedTest {
    pub fn significant(&self, confidence: f64) -> bool {
        self.p_value < 1.0 - confidence
    }
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn paired_greater(a: &[f64], b: &[f64]) -> Result<PairedTest> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} paired samples", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidInput("a paired test needs at least two pairs".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("paired samples must be finite".into()));
    }
    let m = mean(&d);
    let var = d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    let (t, p_value) = if se == 0.0 {
        let p = if m > 0.0 { 0.0 } else { 1.0 };
        (f64::INFINITY.copysign(m), p)
    } else {
        let t = m / se;
        let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).map_err(|e| Error::Numerical(e.to_string()))?;
        (t, 1.0 - dist.cdf(t))
    };
    Ok(PairedTest { n, mean_difference: m, t, p_value })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn critical_value_of_nineteen_degrees() {
        let a: Vec<f64> = (0..20).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let shift = 1.729_132_8 * (20.0f64 / 19.0).sqrt() / 20.0f64.sqrt();
        let b = vec![-shift; 20];
        let t = paired_greater(&a, &b).unwrap();
        assert!((t.p_value - 0.05).abs() < 1e-6, "{t:?}");
    }

    #[test]
    fn constant_differences() {
        assert_eq!(paired_greater(&[2.0, 3.0], &[1.0, 2.0]).unwrap().p_value, 0.0);
        assert!(!paired_greater(&[1.0, 2.0], &[1.0, 2.0]).unwrap().significant(0.95));
        assert!(paired_greater(&[1.0], &[0.0]).is_err());
    }
}
