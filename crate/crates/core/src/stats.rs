//! Small numeric helpers shared by the modelling, selection and scoring code.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Deterministic generator used everywhere a seed is accepted.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent child seed from a master seed and a stable label.
///
/// The mapping is a fixed hash, so the same `(master, label)` pair always
/// yields the same child seed on every platform.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (n - 1 denominator).
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

/// Population standard deviation (n denominator).
pub fn population_std(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Linearly interpolated quantile of already sorted data (Hyndman-Fan type 7).
pub fn quantile_sorted(sorted: &[f64], tau: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let h = (n - 1) as f64 * tau.clamp(0.0, 1.0);
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            let frac = h - lo as f64;
            sorted[lo] + frac * (sorted[hi] - sorted[lo])
        }
    }
}

/// Type 7 empirical quantile of unsorted data.
pub fn empirical_quantile(values: &[f64], tau: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, tau)
}

/// Assign each value to one of `bins` equal-frequency classes.
///
/// Cut points are taken from the sorted sample, so tied values always share
/// a class. Heavily tied data can therefore leave some classes empty.
pub fn equal_frequency_bins(values: &[f64], bins: usize) -> Vec<usize> {
    let n = values.len();
    if n == 0 || bins <= 1 {
        return vec![0; n];
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let edges: Vec<f64> = (1..bins).map(|b| sorted[(b * n) / bins]).collect();
    values
        .iter()
        .map(|v| edges.partition_point(|e| *e <= *v))
        .collect()
}

/// Plug-in mutual information (nats) between two discrete label sequences.
pub fn mutual_information(x: &[usize], y: &[usize]) -> f64 {
    let n = x.len();
    if n == 0 {
        return 0.0;
    }
    let nx = x.iter().max().map_or(0, |m| m + 1);
    let ny = y.iter().max().map_or(0, |m| m + 1);
    let mut joint = vec![0usize; nx * ny];
    let mut px = vec![0usize; nx];
    let mut py = vec![0usize; ny];
    for (&a, &b) in x.iter().zip(y) {
        joint[a * ny + b] += 1;
        px[a] += 1;
        py[b] += 1;
    }
    let nf = n as f64;
    let mut mi = 0.0;
    for a in 0..nx {
        for b in 0..ny {
            let c = joint[a * ny + b];
            if c == 0 {
                continue;
            }
            let pxy = c as f64 / nf;
            mi += pxy * (pxy / ((px[a] as f64 / nf) * (py[b] as f64 / nf))).ln();
        }
    }
    mi.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_interpolates() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&xs, 0.0), 1.0);
        assert_eq!(quantile_sorted(&xs, 1.0), 4.0);
        assert!((quantile_sorted(&xs, 0.5) - 2.5).abs() < 1e-15);
        assert_eq!(empirical_quantile(&[3.0, 1.0, 2.0], 0.5), 2.0);
    }

    #[test]
    fn bins_keep_ties_together() {
        let v = [0.0, 0.0, 0.0, 0.0, 1.0, 2.0];
        let b = equal_frequency_bins(&v, 3);
        assert_eq!(b[0], b[3]);
        assert!(b[5] > b[4] || b[5] == b[4]);
        let u: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let b = equal_frequency_bins(&u, 4);
        for c in 0..4 {
            assert_eq!(b.iter().filter(|&&x| x == c).count(), 25);
        }
    }

    #[test]
    fn mutual_information_of_copy_is_entropy() {
        let x: Vec<usize> = (0..100).map(|i| i % 4).collect();
        let mi = mutual_information(&x, &x);
        assert!((mi - 4f64.ln()).abs() < 1e-12);
        let y: Vec<usize> = (0..100).map(|i| (i / 4) % 4).collect();
        assert!(mutual_information(&x, &y) < 0.05);
    }

    #[test]
    fn derived_seeds_are_stable_and_distinct() {
        assert_eq!(derive_seed(7, "a"), derive_seed(7, "a"));
        assert_ne!(derive_seed(7, "a"), derive_seed(7, "b"));
        assert_ne!(derive_seed(7, "a"), derive_seed(8, "a"));
    }
}
