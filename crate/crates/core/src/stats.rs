//! Small descriptive statistics used by the analysis reports.

use statrs::distribution::{ContinuousCDF, StudentsT};

/// Population skewness `m₃ / m₂^{3/2}`; 0 for fewer than two values or a
/// constant sample.
pub fn skewness(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if values.len() < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m3 = values.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    if m2 == 0.0 {
        0.0
    } else {
        m3 / m2.powf(1.5)
    }
}

/// 1-based ranks, ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

/// Spearman rank correlation (Pearson correlation of average ranks); 0 when
/// either sample is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "spearman needs paired samples");
    pearson(&average_ranks(a), &average_ranks(b))
}

/// One-sided p-value for `ρ < 0` under the t approximation with `n − 2`
/// degrees of freedom.
pub fn spearman_p_negative(rho: f64, n: usize) -> f64 {
    if n < 3 {
        return 1.0;
    }
    if rho <= -1.0 {
        return 0.0;
    }
    if rho >= 1.0 {
        return 1.0;
    }
    let df = (n - 2) as f64;
    let t = rho * (df / (1.0 - rho * rho)).sqrt();
    StudentsT::new(0.0, 1.0, df).expect("df > 0").cdf(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_average_ties() {
        assert_eq!(
            average_ranks(&[10.0, 20.0, 10.0, 5.0]),
            vec![2.5, 4.0, 2.5, 1.0]
        );
    }

    #[test]
    fn spearman_of_monotone_maps() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [1.0, 8.0, 27.0, 64.0, 125.0];
        assert!((spearman(&a, &b) - 1.0).abs() < 1e-12);
        let c: Vec<f64> = b.iter().map(|v| -v).collect();
        assert!((spearman(&a, &c) + 1.0).abs() < 1e-12);
        assert_eq!(spearman(&a, &[3.0; 5]), 0.0);
    }

    #[test]
    fn skewness_sign() {
        assert_eq!(skewness(&[1.0, 2.0, 3.0]), 0.0);
        assert!(skewness(&[0.0, 0.0, 0.0, 0.0, 10.0]) > 1.0);
        assert!(skewness(&[0.0, 10.0, 10.0, 10.0, 10.0]) < -1.0);
        assert_eq!(skewness(&[4.0; 6]), 0.0);
    }

    #[test]
    fn p_value_is_small_for_strong_negative_correlation() {
        assert!(spearman_p_negative(-0.8, 20) < 0.001);
        assert!(spearman_p_negative(0.3, 20) > 0.5);
        assert!((spearman_p_negative(0.0, 12) - 0.5).abs() < 1e-12);
    }
}
