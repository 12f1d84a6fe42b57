//! Rank correlation between two score sequences, by direct pair enumeration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Balanced-vs-imbalanced fitness of the same genotypes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub tokens: Vec<String>,
    pub fitness_a: Vec<f64>,
    pub fitness_b: Vec<f64>,
    pub spearman_rho: f64,
    pub kendall_tau: f64,
}

impl RankReport {
    pub fn new(tokens: Vec<String>, fitness_a: Vec<f64>, fitness_b: Vec<f64>) -> Result<Self> {
        if tokens.len() != fitness_a.len() {
            return Err(Error::Shape(format!(
                "{} tokens but {} scores",
                tokens.len(),
                fitness_a.len()
            )));
        }
        let (spearman_rho, kendall_tau) = rank_correlation(&fitness_a, &fitness_b)?;
        Ok(RankReport {
            tokens,
            fitness_a,
            fitness_b,
            spearman_rho,
            kendall_tau,
        })
    }
}

fn check(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::UndefinedCorrelation(format!(
            "sequences have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two observations".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::UndefinedCorrelation("non-finite score".into()));
    }
    for s in [a, b] {
        if s.iter().all(|&v| v == s[0]) {
            return Err(Error::UndefinedCorrelation("constant sequence".into()));
        }
    }
    Ok(())
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(s: &[f64]) -> Vec<f64> {
    s.iter()
        .map(|&x| {
            let below = s.iter().filter(|&&y| y < x).count() as f64;
            let equal = s.iter().filter(|&&y| y == x).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    check(a, b)?;
    Ok(pearson(&average_ranks(a), &average_ranks(b)))
}

/// Kendall tau-b with the usual tie correction.
pub fn kendall_tau_b(a: &[f64], b: &[f64]) -> Result<f64> {
    check(a, b)?;
    let (mut concordant, mut discordant, mut ties_a, mut ties_b) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            let da = a[i].partial_cmp(&a[j]).expect("finite");
            let db = b[i].partial_cmp(&b[j]).expect("finite");
            use std::cmp::Ordering::Equal;
            match (da, db) {
                (Equal, Equal) => {}
                (Equal, _) => ties_a += 1,
                (_, Equal) => ties_b += 1,
                _ if da == db => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let n0 = concordant + discordant;
    let denom = (((n0 + ties_a) * (n0 + ties_b)) as f64).sqrt();
    Ok(((concordant - discordant) as f64 / denom).clamp(-1.0, 1.0))
}

/// Spearman rho and Kendall tau-b.
pub fn rank_correlation(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    Ok((spearman(a, b)?, kendall_tau_b(a, b)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_and_reversed() {
        let a = [0.1, 0.5, 0.3, 0.9];
        assert_eq!(rank_correlation(&a, &a).unwrap(), (1.0, 1.0));
        let r: Vec<f64> = a.iter().map(|x| -x).collect();
        assert_eq!(rank_correlation(&a, &r).unwrap(), (-1.0, -1.0));
    }

    #[test]
    fn one_swap() {
        let (rho, tau) = rank_correlation(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 4.0, 3.0]).unwrap();
        assert!((tau - 2.0 / 3.0).abs() < 1e-15);
        // 1 - 6 * 2 / (4 * 15)
        assert!((rho - 0.8).abs() < 1e-12);
    }

    #[test]
    fn ties_use_average_ranks_and_tau_b() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        // pairs: (1,2) discordant-free; hand count gives C=4, D=0, ties_a=1, ties_b=1
        let tau = kendall_tau_b(&[1.0, 1.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 3.0]).unwrap();
        assert!((tau - 4.0 / 5.0).abs() < 1e-12, "{tau}");
    }

    #[test]
    fn undefined_cases() {
        assert!(matches!(rank_correlation(&[1.0], &[2.0]), Err(Error::UndefinedCorrelation(_))));
        assert!(matches!(rank_correlation(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::UndefinedCorrelation(_))));
        assert!(matches!(rank_correlation(&[1.0, 2.0], &[1.0]), Err(Error::UndefinedCorrelation(_))));
    }

    proptest! {
        #[test]
        fn bounded_and_symmetric(v in prop::collection::vec((0u8..6, 0u8..6), 2..30)) {
            let a: Vec<f64> = v.iter().map(|p| p.0 as f64).collect();
            let b: Vec<f64> = v.iter().map(|p| p.1 as f64).collect();
            if let Ok((rho, tau)) = rank_correlation(&a, &b) {
                prop_assert!((-1.0..=1.0).contains(&rho) && (-1.0..=1.0).contains(&tau));
                let (rho2, tau2) = rank_correlation(&b, &a).unwrap();
                prop_assert!((rho - rho2).abs() < 1e-12 && (tau - tau2).abs() < 1e-12);
            }
        }

        #[test]
        fn monotone_transform_invariant(v in prop::collection::vec((-50i32..50, -50i32..50), 2..20)) {
            let a: Vec<f64> = v.iter().map(|p| p.0 as f64).collect();
            let b: Vec<f64> = v.iter().map(|p| p.1 as f64).collect();
            let a3: Vec<f64> = a.iter().map(|x| x.powi(3) + 2.0).collect();
            if let (Ok(x), Ok(y)) = (rank_correlation(&a, &b), rank_correlation(&a3, &b)) {
                prop_assert!((x.0 - y.0).abs() < 1e-12 && (x.1 - y.1).abs() < 1e-12);
            }
        }
    }
}
