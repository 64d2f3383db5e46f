//! Seedable Monte Carlo kernel: random streams, trial orchestration and
//! rate statistics.
//!
//! Every random draw in the crate flows through an [`RngStream`]. A stream is
//! identified by a `(seed, stream_id)` pair and is backed by ChaCha8, whose
//! 64-bit stream selector lets independent streams be derived without any
//! shared state. Trials run in parallel, one stream each, and their results
//! are reduced in trial order so the output never depends on scheduling.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of independent runs averaged for every estimate unless overridden.
pub const DEFAULT_TRIALS: usize = 10;

/// A reproducible uniform generator bound to one `(seed, stream_id)` pair.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform draw on `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform draw on `(0, 1]`, safe to feed into `ln`.
    #[inline]
    pub fn uniform_open_zero(&mut self) -> f64 {
        1.0 - self.inner.random::<f64>()
    }

    /// Bernoulli trial with success probability `p`.
    #[inline]
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Builds the generator for `(seed, stream_id)`.
///
/// ```
/// use qloud_core::sim::make_rng;
///
/// let mut a = make_rng(42, 0);
/// let mut b = make_rng(42, 0);
/// assert_eq!(a.uniform(), b.uniform());
/// ```
pub fn make_rng(seed: u64, stream_id: u64) -> RngStream {
    let mut inner = ChaCha8Rng::seed_from_u64(seed);
    inner.set_stream(stream_id);
    RngStream { seed, stream_id, inner }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a stream id from a path of indices, e.g. `(link, point, trial)`.
///
/// Different paths map to different ids with overwhelming probability; the
/// mapping is a pure function so any worker can rebuild it.
pub fn stream_id(path: &[u64]) -> u64 {
    path.iter()
        .fold(0x5157_4C4F_5544_u64, |acc, &part| splitmix64(acc ^ splitmix64(part)))
}

/// Per-trial counts reported by an experiment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrialCounts {
    pub arrived: u64,
    pub sent: u64,
    /// Clicks caused by dark counts rather than photons. Not part of the rate.
    pub dark: u64,
}

impl From<(u64, u64)> for TrialCounts {
    fn from((arrived, sent): (u64, u64)) -> Self {
        TrialCounts { arrived, sent, dark: 0 }
    }
}

/// Mean and spread of `n_arrived / n_sent` over repeated trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub mean: f64,
    pub std: f64,
    pub n_trials: usize,
    pub n_sent_per_trial: u64,
}

impl RateEstimate {
    /// Estimate for a link that is known to deliver nothing.
    pub fn zero(n_trials: usize, n_sent_per_trial: u64) -> Self {
        RateEstimate {
            mean: 0.0,
            std: 0.0,
            n_trials,
            n_sent_per_trial,
        }
    }

    /// Standard error of the mean.
    pub fn sem(&self) -> f64 {
        self.std / (self.n_trials as f64).sqrt()
    }
}

/// Aggregated result of [`run_trials_counted`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialSummary {
    pub estimate: RateEstimate,
    pub total: TrialCounts,
}

impl TrialSummary {
    /// Fraction of counted clicks that came from dark counts.
    pub fn dark_fraction(&self) -> f64 {
        let clicks = self.total.arrived + self.total.dark;
        if clicks == 0 {
            0.0
        } else {
            self.total.dark as f64 / clicks as f64
        }
    }
}

/// Neumaier-compensated sum.
pub(crate) fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0_f64;
    let mut c = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Runs `experiment` once per trial and averages the per-trial rates.
///
/// Trial `k` gets the stream `stream_id(&[base_stream, k])`.
pub fn run_trials<F, T>(seed: u64, base_stream: u64, n_trials: usize, experiment: F) -> Result<RateEstimate>
where
    F: Fn(&mut RngStream) -> T + Sync,
    T: Into<TrialCounts>,
{
    run_trials_counted(seed, base_stream, n_trials, experiment).map(|s| s.estimate)
}

/// Same as [`run_trials`] but also returns summed raw counts.
pub fn run_trials_counted<F, T>(seed: u64, base_stream: u64, n_trials: usize, experiment: F) -> Result<TrialSummary>
where
    F: Fn(&mut RngStream) -> T + Sync,
    T: Into<TrialCounts>,
{
    let counts: Vec<TrialCounts> = run_trial_batch(seed, base_stream, n_trials, |rng| experiment(rng).into())?;
    summarize(&counts)
}

/// Runs `experiment` for each trial on its own stream and returns the
/// outputs in trial order, whatever order the workers finished in.
pub fn run_trial_batch<F, T>(seed: u64, base_stream: u64, n_trials: usize, experiment: F) -> Result<Vec<T>>
where
    F: Fn(&mut RngStream) -> T + Sync,
    T: Send,
{
    if n_trials == 0 {
        return Err(Error::invalid("n_trials", "at least one trial is required"));
    }
    Ok((0..n_trials as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = make_rng(seed, stream_id(&[base_stream, k]));
            experiment(&mut rng)
        })
        .collect())
}

/// Reduces per-trial counts to a rate estimate.
pub fn summarize(counts: &[TrialCounts]) -> Result<TrialSummary> {
    if counts.is_empty() {
        return Err(Error::invalid("n_trials", "at least one trial is required"));
    }
    if let Some(bad) = counts.iter().position(|c| c.sent == 0) {
        return Err(Error::invalid(
            "n_sent",
            format!("trial {bad} reported zero states sent"),
        ));
    }
    if let Some(bad) = counts.iter().position(|c| c.arrived > c.sent) {
        return Err(Error::invalid(
            "n_arrived",
            format!("trial {bad} reported more arrivals than states sent"),
        ));
    }

    let rates: Vec<f64> = counts.iter().map(|c| c.arrived as f64 / c.sent as f64).collect();
    let n = rates.len() as f64;
    let mean = compensated_sum(rates.iter().copied()) / n;
    let std = if rates.len() > 1 {
        let ss = compensated_sum(rates.iter().map(|r| (r - mean) * (r - mean)));
        (ss / (n - 1.0)).sqrt()
    } else {
        0.0
    };

    let mut total = TrialCounts::default();
    for c in counts {
        total.arrived += c.arrived;
        total.sent += c.sent;
        total.dark += c.dark;
    }

    Ok(TrialSummary {
        estimate: RateEstimate {
            mean,
            std,
            n_trials: counts.len(),
            n_sent_per_trial: counts[0].sent,
        },
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_pair_same_sequence() {
        let mut a = make_rng(42, 0);
        let mut b = make_rng(42, 0);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn neighbouring_streams_uncorrelated() {
        let mut a = make_rng(42, 0);
        let mut b = make_rng(42, 1);
        let n = 10_000;
        let xs: Vec<f64> = (0..n).map(|_| a.uniform()).collect();
        let ys: Vec<f64> = (0..n).map(|_| b.uniform()).collect();
        let mx = xs.iter().sum::<f64>() / n as f64;
        let my = ys.iter().sum::<f64>() / n as f64;
        let mut sxy = 0.0;
        let mut sxx = 0.0;
        let mut syy = 0.0;
        for (x, y) in xs.iter().zip(&ys) {
            sxy += (x - mx) * (y - my);
            sxx += (x - mx) * (x - mx);
            syy += (y - my) * (y - my);
        }
        let rho = sxy / (sxx * syy).sqrt();
        assert!(rho.abs() < 0.05, "rho = {rho}");
    }

    #[test]
    fn uniform_mean() {
        let mut rng = make_rng(42, 0);
        let n = 1_000_000;
        let mean = (0..n).map(|_| rng.uniform()).sum::<f64>() / n as f64;
        assert!((0.499..=0.501).contains(&mean), "mean = {mean}");
    }

    #[test]
    fn open_zero_never_zero() {
        let mut rng = make_rng(7, 3);
        for _ in 0..100_000 {
            let u = rng.uniform_open_zero();
            assert!(u > 0.0 && u <= 1.0);
        }
    }

    #[test]
    fn constant_experiment() {
        let est = run_trials(1, 0, 10, |_| (5u64, 10u64)).unwrap();
        assert_eq!(est.mean, 0.5);
        assert_eq!(est.std, 0.0);
        assert_eq!(est.n_trials, 10);
    }

    #[test]
    fn single_trial_has_zero_std() {
        let est = run_trials(1, 0, 1, |rng| {
            let hits = (0..100).filter(|_| rng.bernoulli(0.3)).count() as u64;
            (hits, 100u64)
        })
        .unwrap();
        assert_eq!(est.std, 0.0);
    }

    #[test]
    fn bernoulli_quarter() {
        let n_sent = 100_000u64;
        let est = run_trials(9, 17, 10, |rng| {
            let hits = (0..n_sent).filter(|_| rng.bernoulli(0.25)).count() as u64;
            (hits, n_sent)
        })
        .unwrap();
        assert!((est.mean - 0.25).abs() < 0.005, "{est:?}");
        // Binomial spread of one trial: sqrt(p(1-p)/n) ≈ 1.37e-3.
        assert!(est.std > 5e-4 && est.std < 3e-3, "{est:?}");
    }

    #[test]
    fn rejects_zero_sent() {
        assert!(run_trials(1, 0, 3, |_| (0u64, 0u64)).is_err());
        assert!(run_trials(1, 0, 0, |_| (0u64, 1u64)).is_err());
    }

    #[test]
    fn stream_ids_distinct() {
        let mut ids: Vec<u64> = (0..50).flat_map(|a| (0..50).map(move |b| stream_id(&[a, b]))).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 2500);
        assert_ne!(stream_id(&[1, 2]), stream_id(&[2, 1]));
    }

    #[test]
    fn compensated_sum_order_independent() {
        let values: Vec<f64> = (0..1000).map(|i| 1.0 / (i as f64 + 1.0)).collect();
        let forward = compensated_sum(values.iter().copied());
        let backward = compensated_sum(values.iter().rev().copied());
        assert_eq!(forward, backward);
    }
}
