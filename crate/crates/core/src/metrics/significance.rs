use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::{mean_std, MetricsError};

pub const ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    /// Two-sample t-test without the equal-variance assumption.
    #[default]
    Welch,
    /// Paired t-test on per-seed differences.
    Paired,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub t: f64,
    pub df: f64,
    pub p_raw: f64,
    /// Bonferroni: `min(1, p_raw * m)`.
    pub p_adjusted: f64,
    pub significant: bool,
}

fn two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    if t == 0.0 {
        return 1.0;
    }
    match StudentsT::new(0.0, 1.0, df) {
        Ok(dist) => (2.0 * dist.sf(t.abs())).min(1.0),
        Err(_) => f64::NAN,
    }
}

/// `t`, `df` for a zero standard error: identical means give t = 0,
/// different means an infinite statistic.
fn degenerate(diff: f64, df: f64) -> (f64, f64) {
    if diff == 0.0 {
        (0.0, df)
    } else {
        (diff.signum() * f64::INFINITY, df)
    }
}

fn welch(a: &[f64], b: &[f64]) -> (f64, f64) {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, sa) = mean_std(a);
    let (mb, sb) = mean_std(b);
    let (va, vb) = (sa * sa / na, sb * sb / nb);
    let se2 = va + vb;
    if se2 == 0.0 {
        return degenerate(ma - mb, na + nb - 2.0);
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    (t, df)
}

fn paired(a: &[f64], b: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let (md, sd) = mean_std(&d);
    if sd == 0.0 {
        return degenerate(md, n - 1.0);
    }
    (md / (sd / n.sqrt()), n - 1.0)
}

/// t-test on per-seed F1 samples with Bonferroni correction for `m`
/// comparisons; significant iff the adjusted p-value is below 0.05.
pub fn compare_conditions(a: &[f64], b: &[f64], m: usize, kind: TestKind) -> Result<Comparison, MetricsError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(MetricsError::TooFewSamples);
    }
    if m == 0 {
        return Err(MetricsError::NoComparisons);
    }
    let (t, df) = match kind {
        TestKind::Welch => welch(a, b),
        TestKind::Paired => {
            if a.len() != b.len() {
                return Err(MetricsError::UnpairedLengths { a: a.len(), b: b.len() });
            }
            paired(a, b)
        }
    };
    let p_raw = two_sided_p(t, df);
    let p_adjusted = bonferroni(p_raw, m);
    Ok(Comparison {
        t,
        df,
        p_raw,
        p_adjusted,
        significant: p_adjusted < ALPHA,
    })
}

pub fn bonferroni(p: f64, m: usize) -> f64 {
    (p * m as f64).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples() {
        let a = [51.2, 49.8, 52.6, 50.4, 53.1];
        for kind in [TestKind::Welch, TestKind::Paired] {
            let c = compare_conditions(&a, &a, 1, kind).unwrap();
            assert_eq!(c.t, 0.0);
            assert_eq!(c.p_raw, 1.0);
            assert!(!c.significant);
        }
    }

    #[test]
    fn constant_but_different() {
        let c = compare_conditions(&[1.0, 1.0], &[2.0, 2.0], 1, TestKind::Welch).unwrap();
        assert_eq!(c.t, f64::NEG_INFINITY);
        assert_eq!(c.p_raw, 0.0);
        assert!(c.significant);
    }

    #[test]
    fn bonferroni_definition() {
        assert!((bonferroni(0.01, 10) - 0.10).abs() < 1e-15);
        assert_eq!(bonferroni(0.2, 10), 1.0);
    }

    #[test]
    fn input_errors() {
        assert_eq!(compare_conditions(&[1.0], &[1.0, 2.0], 1, TestKind::Welch), Err(MetricsError::TooFewSamples));
        assert_eq!(
            compare_conditions(&[1.0, 2.0], &[1.0, 2.0], 0, TestKind::Welch),
            Err(MetricsError::NoComparisons)
        );
        assert!(matches!(
            compare_conditions(&[1.0, 2.0], &[1.0, 2.0, 3.0], 1, TestKind::Paired),
            Err(MetricsError::UnpairedLengths { .. })
        ));
    }
}
