use statrs::function::erf::erfc;

use crate::error::{Error, Result};

fn normal_two_sided(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0)
}

/// Fisher-Z comparison of two independent correlations: `(statistic, p)`.
pub fn fisher_z_compare(r1: f64, n1: usize, r2: f64, n2: usize) -> Result<(f64, f64)> {
    for (r, n) in [(r1, n1), (r2, n2)] {
        if !(r.abs() < 1.0) {
            return Err(Error::Degenerate(format!("fisher z needs |r| < 1, got {r}")));
        }
        if n <= 3 {
            return Err(Error::Degenerate(format!("fisher z needs n > 3, got {n}")));
        }
    }
    let se = (1.0 / (n1 - 3) as f64 + 1.0 / (n2 - 3) as f64).sqrt();
    let z = (r1.atanh() - r2.atanh()) / se;
    Ok((z, normal_two_sided(z)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PValueMethod {
    Exact,
    Normal,
}

impl PValueMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Exact => "exact",
            Self::Normal => "normal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannWhitney {
    /// U of the first sample
    pub u: f64,
    pub p: f64,
    pub method: PValueMethod,
}

/// Largest smaller-sample size for which the p-value is enumerated exactly.
pub const EXACT_MAX: usize = 8;

/// Midranks of the pooled samples, doubled so they are integers, together
/// with the tie-group sizes.
fn doubled_ranks(a: &[f64], b: &[f64]) -> (Vec<u64>, Vec<u64>, Vec<usize>) {
    let mut pooled: Vec<(f64, usize)> = a.iter().chain(b).copied().zip(0..).collect();
    pooled.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut ranks = vec![0u64; pooled.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i + 1;
        while j < pooled.len() && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j, doubled midrank = i + 1 + j
        for p in &pooled[i..j] {
            ranks[p.1] = (i + 1 + j) as u64;
        }
        ties.push(j - i);
        i = j;
    }
    let rb = ranks.split_off(a.len());
    (ranks, rb, ties)
}

/// Counts of each doubled rank sum over all `k`-subsets of `ranks`.
fn rank_sum_distribution(ranks: &[u64], k: usize) -> Vec<f64> {
    let max: u64 = {
        let mut r = ranks.to_vec();
        r.sort_unstable_by(|x, y| y.cmp(x));
        r.iter().take(k).sum()
    };
    let width = max as usize + 1;
    let mut dp = vec![vec![0.0f64; width]; k + 1];
    dp[0][0] = 1.0;
    for &r in ranks {
        let r = r as usize;
        for j in (1..=k).rev() {
            let (lo, hi) = dp.split_at_mut(j);
            let (prev, cur) = (&lo[j - 1], &mut hi[0]);
            for s in (r..width).rev() {
                if prev[s - r] != 0.0 {
                    cur[s] += prev[s - r];
                }
            }
        }
    }
    dp.pop().unwrap()
}

/// Exact two-sided permutation p-value of the first sample's rank sum,
/// valid with ties (midranks). `2 * min(P(S <= s), P(S >= s))`, capped at 1.
pub fn mann_whitney_exact_p(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb, _) = doubled_ranks(a, b);
    // enumerate over the smaller sample; the tail probabilities map onto
    // each other under the swap
    let (sub, k) = if ra.len() <= rb.len() { (&ra, ra.len()) } else { (&rb, rb.len()) };
    let pooled: Vec<u64> = ra.iter().chain(&rb).copied().collect();
    let dist = rank_sum_distribution(&pooled, k);
    let obs = sub.iter().sum::<u64>() as usize;
    let total: f64 = dist.iter().sum();
    let le: f64 = dist[..=obs].iter().sum();
    let ge: f64 = dist[obs..].iter().sum();
    (2.0 * le.min(ge) / total).min(1.0)
}

/// Normal approximation with tie and continuity corrections.
pub fn mann_whitney_normal_p(a: &[f64], b: &[f64]) -> f64 {
    let (ra, _, ties) = doubled_ranks(a, b);
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let n = n1 + n2;
    let u = ra.iter().sum::<u64>() as f64 / 2.0 - n1 * (n1 + 1.0) / 2.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum();
    let var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if !(var > 0.0) {
        return 1.0;
    }
    let z = ((u - n1 * n2 / 2.0).abs() - 0.5).max(0.0) / var.sqrt();
    normal_two_sided(z)
}

/// Two-sided Mann-Whitney U test. Exact enumeration when the smaller
/// sample has at most [`EXACT_MAX`] values, normal approximation otherwise.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("mann-whitney sample".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("non-finite value in mann-whitney sample".into()));
    }
    let (ra, _, _) = doubled_ranks(a, b);
    let n1 = a.len() as f64;
    let u = ra.iter().sum::<u64>() as f64 / 2.0 - n1 * (n1 + 1.0) / 2.0;
    let (p, method) = if a.len().min(b.len()) <= EXACT_MAX {
        (mann_whitney_exact_p(a, b), PValueMethod::Exact)
    } else {
        (mann_whitney_normal_p(a, b), PValueMethod::Normal)
    };
    Ok(MannWhitney { u, p, method })
}

/// Linear-interpolation percentile (`q` in 0..=100) of unsorted values.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    percentile_sorted(&v, q)
}

fn percentile_sorted(v: &[f64], q: f64) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::Empty("percentile of no values".into()));
    }
    let pos = q.clamp(0.0, 100.0) / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    Ok(v[lo] + (pos - lo as f64) * (v[hi] - v[lo]))
}

/// Box-plot summary: whiskers at the 5th/95th percentiles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxSummary {
    pub n: usize,
    pub p5: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p95: f64,
}

impl BoxSummary {
    pub fn of(values: &[f64]) -> Result<Self> {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Ok(Self {
            n: v.len(),
            p5: percentile_sorted(&v, 5.0)?,
            p25: percentile_sorted(&v, 25.0)?,
            p50: percentile_sorted(&v, 50.0)?,
            p75: percentile_sorted(&v, 75.0)?,
            p95: percentile_sorted(&v, 95.0)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    use crate::rng::stream_rng;

    /// Every split of the pooled values into |a| and |b|, counted directly.
    pub(crate) fn brute_force_p(a: &[f64], b: &[f64]) -> f64 {
        let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
        let n = pooled.len();
        let rank = |x: f64| {
            let below = pooled.iter().filter(|&&v| v < x).count() as f64;
            let equal = pooled.iter().filter(|&&v| v == x).count() as f64;
            below + (equal + 1.0) / 2.0
        };
        let ranks: Vec<f64> = pooled.iter().map(|&v| rank(v)).collect();
        let obs: f64 = ranks[..a.len()].iter().sum();
        let (mut le, mut ge, mut total) = (0u64, 0u64, 0u64);
        for bits in 0u32..(1 << n) {
            if bits.count_ones() as usize != a.len() {
                continue;
            }
            let s: f64 = (0..n).filter(|i| bits >> i & 1 == 1).map(|i| ranks[i]).sum();
            total += 1;
            le += (s <= obs) as u64;
            ge += (s >= obs) as u64;
        }
        (2.0 * le.min(ge) as f64 / total as f64).min(1.0)
    }

    fn sample(rng: &mut impl Rng, n: usize, shift: f64, tied: bool) -> Vec<f64> {
        (0..n)
            .map(|_| {
                let v: f64 = rng.random::<f64>() * 4.0 + shift;
                if tied {
                    v.round()
                } else {
                    v
                }
            })
            .collect()
    }

    #[test]
    fn three_vs_three() {
        let m = mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(m.u, 0.0);
        assert!((m.p - 0.1).abs() < 1e-15);
        assert_eq!(m.method, PValueMethod::Exact);
    }

    #[test]
    fn interleaved_gives_half_product() {
        let a = [1.0, 4.0, 5.0, 8.0];
        let b = [2.0, 3.0, 6.0, 7.0];
        let m = mann_whitney_u(&a, &b).unwrap();
        assert_eq!(m.u, 8.0);
        assert_eq!(m.p, 1.0);
    }

    #[test]
    fn exact_matches_enumeration() {
        let mut rng = stream_rng(31, 0);
        for n1 in 1..=8 {
            for n2 in 1..=8 {
                for tied in [false, true] {
                    let a = sample(&mut rng, n1, 0.0, tied);
                    let b = sample(&mut rng, n2, 1.0, tied);
                    assert_eq!(mann_whitney_exact_p(&a, &b), brute_force_p(&a, &b), "{n1} {n2} {tied}");
                }
            }
        }
    }

    #[test]
    fn normal_close_to_exact_at_eight() {
        // every attainable U for 8 vs 8 without ties: 8 values of a placed
        // among 1..=16, sliding the top one up. The continuity-corrected
        // approximation is within 0.01 in the tails and drifts to 0.0109
        // around p ~ 0.4-0.6.
        let mut ranks: Vec<usize> = (1..=8).collect();
        for u in 0..=32usize {
            if u > 0 {
                let i = (0..8).rev().find(|&i| ranks[i] < 16 && !ranks.contains(&(ranks[i] + 1))).unwrap();
                ranks[i] += 1;
            }
            let a: Vec<f64> = ranks.iter().map(|&r| r as f64).collect();
            let b: Vec<f64> = (1..=16).filter(|r| !ranks.contains(r)).map(|r| r as f64).collect();
            let m = mann_whitney_u(&a, &b).unwrap();
            assert_eq!(m.u, u as f64);
            let (e, n) = (m.p, mann_whitney_normal_p(&a, &b));
            let tol = if e <= 0.35 { 0.01 } else { 0.011 };
            assert!((e - n).abs() < tol, "U={u}: {e} {n}");
        }
        let mut rng = stream_rng(32, 0);
        for shift in [1.0, 2.0, 3.0] {
            for _ in 0..10 {
                let a = sample(&mut rng, 8, 0.0, false);
                let b = sample(&mut rng, 8, shift, false);
                let (e, n) = (mann_whitney_exact_p(&a, &b), mann_whitney_normal_p(&a, &b));
                if e <= 0.35 {
                    assert!((e - n).abs() < 0.01, "{e} {n}");
                }
            }
        }
    }

    #[test]
    fn large_samples_use_normal() {
        let mut rng = stream_rng(33, 0);
        let a = sample(&mut rng, 40, 0.0, false);
        let b = sample(&mut rng, 30, 2.0, false);
        let m = mann_whitney_u(&a, &b).unwrap();
        assert_eq!(m.method, PValueMethod::Normal);
        assert!(m.p < 1e-3);
        let swapped = mann_whitney_u(&b, &a).unwrap();
        assert_eq!(m.u + swapped.u, 1200.0);
        assert!((m.p - swapped.p).abs() < 1e-15);
        assert!(mann_whitney_u(&[], &a).is_err());
        assert_eq!(mann_whitney_u(&[1.0; 10], &[1.0; 10]).unwrap().p, 1.0);
    }

    #[test]
    fn fisher_z() {
        let (z, p) = fisher_z_compare(0.5, 100, 0.5, 200).unwrap();
        assert_eq!((z, p), (0.0, 1.0));
        let (z, p) = fisher_z_compare(0.99, 100_000, 0.95, 100_000).unwrap();
        let z1 = 0.5 * ((1.0 + 0.99) / (1.0 - 0.99_f64)).ln();
        let z2 = 0.5 * ((1.0 + 0.95) / (1.0 - 0.95_f64)).ln();
        let oracle = (z1 - z2) / (2.0 / 99_997.0_f64).sqrt();
        assert!((z - oracle).abs() < 1e-12 * oracle.abs());
        assert!(p < 1e-3);
        let (zs, ps) = fisher_z_compare(0.95, 100_000, 0.99, 100_000).unwrap();
        assert_eq!((zs, ps), (-z, p));
        assert!(fisher_z_compare(1.0, 10, 0.5, 10).is_err());
        assert!(fisher_z_compare(0.5, 3, 0.5, 10).is_err());
        // moderate statistic: p from the normal tail
        let (z, p) = fisher_z_compare(0.6, 50, 0.4, 60).unwrap();
        assert!((p - erfc(z.abs() / 2f64.sqrt())).abs() < 1e-15);
        assert!(p > 0.05 && p < 0.5, "{p}");
    }

    #[test]
    fn percentiles() {
        let v = [3.0, 1.0, 2.0, 5.0, 4.0];
        assert_eq!(percentile(&v, 50.0).unwrap(), 3.0);
        assert_eq!(percentile(&v, 25.0).unwrap(), 2.0);
        assert_eq!(percentile(&v, 5.0).unwrap(), 1.2);
        assert_eq!(percentile(&v, 100.0).unwrap(), 5.0);
        let s = BoxSummary::of(&v).unwrap();
        assert_eq!((s.n, s.p50, s.p95), (5, 3.0, 4.8));
        assert!(BoxSummary::of(&[]).is_err());
    }
}
