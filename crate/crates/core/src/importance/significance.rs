//! One-sided tests of `H0: FI <= 0` against `H1: FI > 0`.

use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, StudentsT};

use crate::error::{Error, Result};

use super::ImportanceResult;

/// Below this many differences the exact sign test is used.
pub const MIN_T_TEST_SIZE: usize = 30;

fn mean_sd(d: &[f64]) -> (f64, f64) {
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Exact sign test: `P(Bin(n', 1/2) >= k)` with `k` positive differences
/// among the `n'` nonzero ones.
pub fn sign_test(d: &[f64]) -> f64 {
    let nonzero = d.iter().filter(|x| **x != 0.0).count() as u64;
    let k = d.iter().filter(|x| **x > 0.0).count() as u64;
    if nonzero == 0 || k == 0 {
        return 1.0;
    }
    let b = Binomial::new(0.5, nonzero).expect("valid binomial");
    b.sf(k - 1)
}

/// One-sided one-sample t-test on the differences.
pub fn one_sided_t_test(d: &[f64]) -> Result<f64> {
    if d.len() < 2 {
        return Err(Error::invalid("t-test needs at least two differences"));
    }
    let (mean, sd) = mean_sd(d);
    if !(sd > 0.0) {
        return Ok(if mean <= 0.0 { 1.0 } else { sign_test(d) });
    }
    let t = mean / (sd / (d.len() as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (d.len() - 1) as f64).expect("positive degrees of freedom");
    Ok(dist.sf(t))
}

/// The t-test for at least 30 differences, otherwise the sign test.
pub fn significance_p_value(d: &[f64]) -> f64 {
    if d.len() < MIN_T_TEST_SIZE {
        sign_test(d)
    } else {
        one_sided_t_test(d).unwrap_or(1.0)
    }
}

/// p-values for every feature of an importance result (`None` if failed).
pub fn fi_significance(result: &ImportanceResult) -> Vec<Option<f64>> {
    result
        .features
        .iter()
        .map(|f| match f.failed {
            Some(_) => None,
            None => Some(significance_p_value(&f.differences)),
        })
        .collect()
}
