//! Paired one-sided t-test.

use statrs::distribution::{ContinuousCDF, StudentsT};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedTest {
    pub n: usize,
    pub mean_diff: f64,
    pub sd_diff: f64,
    pub t: f64,
    /// P(T >= t) under the null of zero mean difference.
    pub p_value: f64,
}

/// Tests `mean(a - b) > 0`. Needs at least two pairs.
///
/// Zero spread makes the statistic degenerate; the p-value is then 0 when
/// every difference is positive and 1 otherwise.
pub fn paired_greater(a: &[f64], b: &[f64]) -> Option<PairedTest> {
    assert_eq!(a.len(), b.len(), "paired samples must have equal length");
    let n = a.len();
    if n < 2 {
        return None;
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    let se = sd / (n as f64).sqrt();
    if se == 0.0 || !se.is_finite() {
        let p_value = if mean > 0.0 { 0.0 } else { 1.0 };
        let t = if mean > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY };
        return Some(PairedTest {
            n,
            mean_diff: mean,
            sd_diff: sd,
            t: if mean == 0.0 { 0.0 } else { t },
            p_value,
        });
    }
    let t = mean / se;
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("positive degrees of freedom");
    Some(PairedTest {
        n,
        mean_diff: mean,
        sd_diff: sd,
        t,
        p_value: dist.sf(t),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_value() {
        // diffs 1,2,3,4,5: mean 3, sd sqrt(2.5), t = 3 / (sqrt(2.5)/sqrt(5)) = 4.2426
        let a = [2.0, 4.0, 6.0, 8.0, 10.0];
        let b = [1.0, 2.0, 3.0, 4.0, 5.0];
        let r = paired_greater(&a, &b).unwrap();
        assert!((r.t - 18f64.sqrt()).abs() < 1e-12);
        // one-sided p for t=4.2426 with 4 dof is about 0.00662
        assert!((r.p_value - 0.00662).abs() < 5e-5, "{}", r.p_value);
    }

    #[test]
    fn symmetric_differences_give_half() {
        let r = paired_greater(&[1.0, -1.0, 2.0, -2.0], &[0.0; 4]).unwrap();
        assert!((r.p_value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn constant_differences_are_degenerate() {
        assert_eq!(paired_greater(&[2.0, 2.0], &[1.0, 1.0]).unwrap().p_value, 0.0);
        assert_eq!(paired_greater(&[1.0, 1.0], &[2.0, 2.0]).unwrap().p_value, 1.0);
        assert!(paired_greater(&[1.0], &[0.0]).is_none());
    }
}
