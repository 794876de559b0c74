use std::cmp::Ordering;

use crate::error::{Error, Result};

/// Integer pair counts from which both τ variants are computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairCounts {
    /// `n(n − 1)/2`.
    pub pairs: u64,
    /// Pairs tied in the first ranking.
    pub ties_a: u64,
    /// Pairs tied in the second ranking.
    pub ties_b: u64,
    /// Concordant minus discordant pairs.
    pub score: i64,
}

impl PairCounts {
    /// τ-a: score over all pairs.
    pub fn tau_a(&self) -> f64 {
        self.score as f64 / self.pairs as f64
    }

    /// τ-b: ties removed from the denominator. Zero when either ranking is
    /// constant (the coefficient is undefined there).
    pub fn tau_b(&self) -> f64 {
        let d = ((self.pairs - self.ties_a) as f64 * (self.pairs - self.ties_b) as f64).sqrt();
        if d == 0.0 {
            0.0
        } else {
            self.score as f64 / d
        }
    }
}

/// Validated copies with `-0.0` folded into `0.0`, so that float equality
/// and total ordering agree.
fn check(a: &[f64], b: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.len() != b.len() {
        return Err(Error::Config(format!(
            "rankings have different lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::TooFewObservations(a.len()));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::NonFinite("ranking".into()));
    }
    let fold = |v: &[f64]| v.iter().map(|x| x + 0.0).collect();
    Ok((fold(a), fold(b)))
}

/// Number of tied pairs in a sorted slice.
fn tied_pairs<T: PartialEq>(sorted: impl Iterator<Item = T>) -> u64 {
    let mut total = 0u64;
    let mut run = 0u64;
    let mut prev: Option<T> = None;
    for v in sorted {
        if prev.as_ref() == Some(&v) {
            run += 1;
        } else {
            total += run * (run + 1) / 2;
            run = 0;
        }
        prev = Some(v);
    }
    total + run * (run + 1) / 2
}

/// Sorts in place and returns the number of inversions (merge sort).
fn count_inversions(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut inv = count_inversions(&mut v[..mid], buf) + count_inversions(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf.push(v[j]);
            inv += (mid - i) as u64;
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    inv
}

/// Pair counts in `O(n log n)`.
pub fn pair_counts(a: &[f64], b: &[f64]) -> Result<PairCounts> {
    let (a, b) = check(a, b)?;
    let n = a.len() as u64;
    let mut idx: Vec<usize> = (0..a.len()).collect();
    idx.sort_by(|&i, &j| a[i].total_cmp(&a[j]).then(b[i].total_cmp(&b[j])));
    let ties_a = tied_pairs(idx.iter().map(|&i| a[i]));
    let ties_ab = tied_pairs(idx.iter().map(|&i| (a[i], b[i])));
    let mut bs: Vec<f64> = idx.iter().map(|&i| b[i]).collect();
    let mut buf = Vec::with_capacity(bs.len());
    let swaps = count_inversions(&mut bs, &mut buf);
    let ties_b = tied_pairs(bs.iter().copied());
    let pairs = n * (n - 1) / 2;
    let score = pairs as i64 - ties_a as i64 - ties_b as i64 + ties_ab as i64 - 2 * swaps as i64;
    Ok(PairCounts {
        pairs,
        ties_a,
        ties_b,
        score,
    })
}

/// Pair counts by enumerating all pairs.
pub fn pair_counts_brute(a: &[f64], b: &[f64]) -> Result<PairCounts> {
    let (a, b) = check(a, b)?;
    let n = a.len();
    let mut c = PairCounts {
        pairs: (n * (n - 1) / 2) as u64,
        ties_a: 0,
        ties_b: 0,
        score: 0,
    };
    let sign = |o: Ordering| match o {
        Ordering::Less => -1i64,
        Ordering::Equal => 0,
        Ordering::Greater => 1,
    };
    for i in 0..n {
        for j in i + 1..n {
            let sa = sign(a[i].total_cmp(&a[j]));
            let sb = sign(b[i].total_cmp(&b[j]));
            c.ties_a += (sa == 0) as u64;
            c.ties_b += (sb == 0) as u64;
            c.score += sa * sb;
        }
    }
    Ok(c)
}

/// Kendall's τ-b between two score vectors (ties handled; equals τ-a when
/// there are none).
pub fn kendall_tau(pred: &[f64], truth: &[f64]) -> Result<f64> {
    Ok(pair_counts(pred, truth)?.tau_b())
}

pub fn kendall_tau_a(pred: &[f64], truth: &[f64]) -> Result<f64> {
    Ok(pair_counts(pred, truth)?.tau_a())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_cases() {
        let id = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(kendall_tau(&id, &id).unwrap(), 1.0);
        assert_eq!(kendall_tau(&[4.0, 3.0, 2.0, 1.0], &id).unwrap(), -1.0);
        let t = kendall_tau_a(&[1.0, 3.0, 2.0, 4.0], &id).unwrap();
        assert!((t - 4.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert!(matches!(kendall_tau(&[1.0], &[1.0]), Err(Error::TooFewObservations(1))));
        assert!(kendall_tau(&[1.0, 2.0], &[1.0]).is_err());
        assert!(kendall_tau(&[1.0, f64::NAN], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn ties() {
        // a ties once, b ties once, one discordant-free ordering otherwise
        let a = [1.0, 1.0, 2.0, 3.0];
        let b = [1.0, 2.0, 2.0, 3.0];
        let c = pair_counts(&a, &b).unwrap();
        assert_eq!(c, pair_counts_brute(&a, &b).unwrap());
        assert_eq!((c.pairs, c.ties_a, c.ties_b, c.score), (6, 1, 1, 4));
        assert!((c.tau_b() - 4.0 / 5.0).abs() < 1e-15);
        assert_eq!(kendall_tau(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
    }
}
