//! Small statistical helpers shared by the evaluation code and tests.

use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF};

/// One-sided sign test: probability of at least `wins` successes out of
/// `trials` fair coin flips. Ties must be dropped by the caller.
pub fn sign_test_p(wins: u64, trials: u64) -> f64 {
    if trials == 0 || wins == 0 {
        return 1.0;
    }
    let b = Binomial::new(0.5, trials).expect("valid binomial");
    b.sf(wins - 1)
}

/// Sign test over paired samples for the hypothesis `a < b`. Exact ties are
/// dropped.
pub fn paired_sign_test_less(a: &[f64], b: &[f64]) -> (u64, u64, f64) {
    let (wins, trials) = a
        .iter()
        .zip(b)
        .filter(|(x, y)| x != y)
        .fold((0, 0), |(w, n), (x, y)| (w + u64::from(x < y), n + 1));
    (wins, trials, sign_test_p(wins, trials))
}

/// Pearson χ² goodness-of-fit p-value of `counts` against equal cell
/// probabilities.
pub fn chi_square_uniform_p(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    if counts.len() < 2 || n == 0 {
        return 1.0;
    }
    let expected = n as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    ChiSquared::new((counts.len() - 1) as f64).expect("positive degrees of freedom").sf(stat)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1 denominator); zero for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi_square_examples() {
        assert!((chi_square_uniform_p(&[50, 50]) - 1.0).abs() < 1e-12);
        // Statistic 4 on one degree of freedom.
        assert!((chi_square_uniform_p(&[60, 40]) - 0.045500263896).abs() < 1e-9);
    }

    #[test]
    fn sign_test_matches_binomial_tail() {
        // P(X >= 15 | n = 20) = 21700 / 2^20
        let p = sign_test_p(15, 20);
        assert!((p - 21700.0 / 1048576.0).abs() < 1e-12);
        assert!((sign_test_p(30, 30) - 0.5f64.powi(30)).abs() < 1e-20);
        assert_eq!(sign_test_p(0, 10), 1.0);
    }

    #[test]
    fn paired_test_drops_ties() {
        let (w, n, _) = paired_sign_test_less(&[1.0, 2.0, 3.0], &[2.0, 2.0, 1.0]);
        assert_eq!((w, n), (1, 2));
    }

    #[test]
    fn std_dev_of_known_sample() {
        assert!((std_dev(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]) - 2.138089935299395).abs() < 1e-12);
    }
}
