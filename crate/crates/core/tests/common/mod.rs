#![allow(dead_code)]

use ddpsa::FieldElement;
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub const BINS: usize = 256;

pub fn low_byte(e: &FieldElement) -> usize {
    (e.value() & 0xff) as usize
}

pub fn histogram(bytes: impl IntoIterator<Item = usize>) -> Vec<u64> {
    let mut h = vec![0u64; BINS];
    for b in bytes {
        h[b] += 1;
    }
    h
}

fn upper_tail(stat: f64, df: usize) -> f64 {
    ChiSquared::new(df as f64).unwrap().sf(stat)
}

/// p-value of Pearson's test against the uniform distribution on the bins.
pub fn chi2_uniform(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    let stat: f64 = counts
        .iter()
        .map(|&o| (o as f64 - expected).powi(2) / expected)
        .sum();
    upper_tail(stat, counts.len() - 1)
}

/// p-value of the two-sample chi-square homogeneity test.
pub fn chi2_two_sample(a: &[u64], b: &[u64]) -> f64 {
    let na: u64 = a.iter().sum();
    let nb: u64 = b.iter().sum();
    let (ka, kb) = ((nb as f64 / na as f64).sqrt(), (na as f64 / nb as f64).sqrt());
    let mut stat = 0.0;
    let mut used = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        if x + y == 0 {
            continue;
        }
        used += 1;
        stat += (ka * x as f64 - kb * y as f64).powi(2) / (x + y) as f64;
    }
    upper_tail(stat, used.saturating_sub(1).max(1))
}
