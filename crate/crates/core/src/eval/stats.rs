use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

pub const ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    pub p: f64,
    pub significant: bool,
    pub n_a: usize,
    pub n_b: usize,
}

fn mean_and_ss(x: &[f64]) -> (f64, f64) {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    (m, x.iter().map(|v| (v - m) * (v - m)).sum())
}

/// Student's two-sample t-test with pooled variance, two-sided.
pub fn ttest_ind(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    let (n_a, n_b) = (a.len(), b.len());
    if n_a < 2 || n_b < 2 {
        return Err(Error::InvalidArgument(format!(
            "t-test needs at least 2 samples per group, got {n_a} and {n_b}"
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("t-test sample".into()));
    }
    let (ma, ssa) = mean_and_ss(a);
    let (mb, ssb) = mean_and_ss(b);
    let df = (n_a + n_b - 2) as f64;
    let pooled = (ssa + ssb) / df;
    let se = (pooled * (1.0 / n_a as f64 + 1.0 / n_b as f64)).sqrt();
    let (t, p) = if se == 0.0 {
        if ma != mb {
            return Err(Error::InvalidArgument(
                "t-test with zero variance and unequal means".into(),
            ));
        }
        (0.0, 1.0)
    } else {
        let t = (ma - mb) / se;
        let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        (t, (2.0 * dist.cdf(-t.abs())).min(1.0))
    };
    Ok(TTestResult {
        t,
        p,
        significant: p < ALPHA,
        n_a,
        n_b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples() {
        let r = ttest_ind(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((r.t, r.p, r.significant), (0.0, 1.0, false));
    }

    #[test]
    fn constant_groups() {
        assert_eq!(ttest_ind(&[2.0, 2.0], &[2.0, 2.0]).unwrap().p, 1.0);
        assert!(ttest_ind(&[2.0, 2.0], &[3.0, 3.0]).is_err());
        assert!(ttest_ind(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn shifted_groups() {
        let r = ttest_ind(&[1.0, 2.0, 3.0, 4.0, 5.0], &[3.0, 4.0, 5.0, 6.0, 7.0]).unwrap();
        assert!((r.t + 2.0).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&r.p));
    }
}
