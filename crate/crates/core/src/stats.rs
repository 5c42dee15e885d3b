//! Summary statistics and Welch's two-sample t-test.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance (`n - 1` denominator); 0 for a single value.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn std_dev(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchResult {
    pub t: f64,
    /// Two-sided.
    pub p: f64,
    pub df: f64,
}

/// Welch's unequal-variance t-test of `mean(a) - mean(b)`.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Statistics(format!(
            "each sample needs at least 2 values (got {} and {})",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (variance(a) / na, variance(b) / nb);
    let se2 = va + vb;
    if !(se2 > 0.0) {
        return Err(Error::Statistics("both samples have zero variance".into()));
    }
    let t = (mean(a) - mean(b)) / se2.sqrt();
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Statistics(e.to_string()))?;
    let p = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Ok(WelchResult { t, p, df })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn reference_example() {
        let r = welch_t(&[1., 2., 3., 4., 5.], &[2., 3., 4., 5., 6.]).unwrap();
        assert_abs_diff_eq!(r.t, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.df, 8.0, epsilon = 1e-12);
        // scipy.stats.ttest_ind(equal_var=False)
        assert_abs_diff_eq!(r.p, 0.346_593_507_087_334_16, epsilon = 1e-9);
    }

    #[test]
    fn identical_samples() {
        let r = welch_t(&[1., 4., 2.], &[1., 4., 2.]).unwrap();
        assert_eq!(r.t, 0.0);
        assert_abs_diff_eq!(r.p, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn swapping_negates_t() {
        let a = [0.3, 1.2, 0.8, 2.2];
        let b = [1.1, 1.9, 2.4, 3.0, 2.2];
        let r1 = welch_t(&a, &b).unwrap();
        let r2 = welch_t(&b, &a).unwrap();
        assert_abs_diff_eq!(r1.t, -r2.t, epsilon = 1e-14);
        assert_abs_diff_eq!(r1.p, r2.p, epsilon = 1e-14);
    }

    #[test]
    fn p_decreases_with_separation() {
        let base = [0.0, 1.0, -1.0, 0.5, -0.5, 0.2];
        let mut prev = 1.1;
        for shift in [0.0, 0.2, 0.5, 1.0, 2.0] {
            let b: Vec<f64> = base.iter().map(|x| x + shift).collect();
            let r = welch_t(&base, &b).unwrap();
            assert!(r.p < prev);
            prev = r.p;
        }
    }

    #[test]
    fn degenerate_samples() {
        assert!(welch_t(&[1.0], &[1.0, 2.0]).is_err());
        assert!(welch_t(&[1.0, 1.0], &[2.0, 2.0]).is_err());
    }

    #[test]
    fn summary_values() {
        assert_eq!(std_dev(&[3.0]), 0.0);
        assert_abs_diff_eq!(variance(&[1.0, 2.0, 3.0, 4.0]), 5.0 / 3.0, epsilon = 1e-15);
    }
}
