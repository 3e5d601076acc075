//! Central aggregation of client unigrams.

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::unigram::UnigramDistribution;

/// Retries allowed when Laplace noise drives the denominator non-positive.
pub const DP_MAX_ATTEMPTS: usize = 100;
/// Noisy numerators are floored at this fraction of the denominator.
pub const DP_CLAMP_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpload {
    pub client_id: String,
    pub q: UnigramDistribution,
    /// Pseudo-count weight, `>= 0`.
    pub c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DPConfig {
    pub enabled: bool,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for DPConfig {
    fn default() -> Self {
        DPConfig {
            enabled: false,
            epsilon: 1.0,
            seed: 0,
        }
    }
}

impl DPConfig {
    pub fn with_epsilon(epsilon: f64, seed: u64) -> Self {
        DPConfig {
            enabled: true,
            epsilon,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.enabled && !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Pooled weighted counts `sum_i c_i q_i(w)` and their total `sum_i c_i`,
/// skipping zero-weight uploads.
fn pooled_counts(uploads: &[ClientUpload]) -> Result<(Vec<f64>, f64)> {
    let mut live = uploads.iter().filter(|u| u.c > 0.0);
    let first = live.next().ok_or(Error::NoClientMass)?;
    let n = first.q.len();
    let mut pooled = vec![0.0; n];
    let mut total = 0.0;
    for u in std::iter::once(first).chain(live) {
        if !u.c.is_finite() {
            return Err(Error::InvalidParameter(format!("client {} has weight {}", u.client_id, u.c)));
        }
        u.q.check_len(n)?;
        for (p, &q) in pooled.iter_mut().zip(u.q.probs()) {
            *p += u.c * q;
        }
        total += u.c;
    }
    if let Some(u) = uploads.iter().find(|u| u.c < 0.0) {
        return Err(Error::InvalidParameter(format!("client {} has negative weight", u.client_id)));
    }
    Ok((pooled, total))
}

/// Weighted federated average `sum_i c_i q_i / sum_i c_i`.
pub fn federated_average(uploads: &[ClientUpload]) -> Result<UnigramDistribution> {
    let (pooled, total) = pooled_counts(uploads)?;
    UnigramDistribution::new(pooled.into_iter().map(|p| p / total).collect())
}

/// Laplace-randomized average with an explicit noise vector.
///
/// Returns `Ok(None)` when the noisy denominator is not positive. Noisy
/// numerators below `DP_CLAMP_FLOOR * denominator` are raised to that floor
/// and the result renormalized; with no clamping the output is exactly the
/// noisy ratio, so an all-zero noise vector reproduces [`federated_average`].
pub fn noisy_federated_average(uploads: &[ClientUpload], noise: &[f64]) -> Result<Option<UnigramDistribution>> {
    let (pooled, total) = pooled_counts(uploads)?;
    if noise.len() != pooled.len() {
        return Err(Error::VocabularyMismatch {
            expected: pooled.len(),
            actual: noise.len(),
        });
    }
    let denom = total + noise.iter().sum::<f64>();
    if !(denom > 0.0) {
        return Ok(None);
    }
    let floor = DP_CLAMP_FLOOR * denom;
    let mut clamped = false;
    let q: Vec<f64> = pooled
        .iter()
        .zip(noise)
        .map(|(&p, &r)| {
            let num = p + r;
            if num < floor {
                clamped = true;
                floor / denom
            } else {
                num / denom
            }
        })
        .collect();
    let dist = if clamped {
        UnigramDistribution::from_weights(q)?
    } else {
        UnigramDistribution::new(q)?
    };
    Ok(Some(dist))
}

/// One Laplace(0, scale) draw as a scaled difference of two unit exponentials.
pub fn sample_laplace<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    let a: f64 = Exp1.sample(rng);
    let b: f64 = Exp1.sample(rng);
    scale * (a - b)
}

pub fn laplace_noise<R: Rng + ?Sized>(len: usize, epsilon: f64, rng: &mut R) -> Vec<f64> {
    let scale = 1.0 / epsilon;
    (0..len).map(|_| sample_laplace(scale, rng)).collect()
}

/// Federated average with i.i.d. Laplace(1/epsilon) noise on every pooled
/// word count.
pub fn dp_federated_average<R: Rng + ?Sized>(
    uploads: &[ClientUpload],
    dp: &DPConfig,
    rng: &mut R,
) -> Result<UnigramDistribution> {
    if !dp.enabled {
        return Err(Error::InvalidParameter("DP aggregation requested with DP disabled".into()));
    }
    dp.validate()?;
    let n = uploads
        .iter()
        .find(|u| u.c > 0.0)
        .ok_or(Error::NoClientMass)?
        .q
        .len();
    average_with_noise_source(uploads, || laplace_noise(n, dp.epsilon, rng))
}

fn average_with_noise_source(
    uploads: &[ClientUpload],
    mut draw: impl FnMut() -> Vec<f64>,
) -> Result<UnigramDistribution> {
    for _ in 0..DP_MAX_ATTEMPTS {
        if let Some(q) = noisy_federated_average(uploads, &draw())? {
            return Ok(q);
        }
    }
    Err(Error::DpDegenerate(DP_MAX_ATTEMPTS))
}

/// Uniform sample without replacement of `ceil(fraction * n)` ids, returned
/// in their original order.
pub fn sample_clients<T: Clone, R: Rng + ?Sized>(ids: &[T], fraction: f64, rng: &mut R) -> Result<Vec<T>> {
    if ids.is_empty() {
        return Err(Error::NoClients);
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!("sample fraction {fraction} not in (0, 1]")));
    }
    let n = ids.len();
    // guard against 0.3 * 10 = 3.0000000000000004
    let k = ((fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    if k == n {
        return Ok(ids.to_vec());
    }
    let mut picked = index::sample(rng, n, k).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| ids[i].clone()).collect())
}

pub fn compute_delta(q_new: &UnigramDistribution, q_old: &UnigramDistribution) -> Result<Vec<f64>> {
    q_new.check_len(q_old.len())?;
    Ok(q_new.probs().iter().zip(q_old.probs()).map(|(a, b)| a - b).collect())
}

pub fn apply_delta(q_old: &UnigramDistribution, delta: &[f64]) -> Result<UnigramDistribution> {
    if delta.len() != q_old.len() {
        return Err(Error::VocabularyMismatch {
            expected: q_old.len(),
            actual: delta.len(),
        });
    }
    UnigramDistribution::new(q_old.probs().iter().zip(delta).map(|(a, d)| a + d).collect())
}

/// The aggregator. Holds the current global unigram and the DP noise stream.
#[derive(Debug, Clone)]
pub struct ServerState {
    /// Number of completed aggregations.
    pub round: usize,
    pub q_global: Option<UnigramDistribution>,
    pub dp: DPConfig,
    noise_rng: ChaCha8Rng,
}

impl ServerState {
    pub fn new(dp: DPConfig) -> Result<Self> {
        dp.validate()?;
        let noise_rng = crate::rng::stream_rng(dp.seed, crate::rng::STREAM_DP_NOISE);
        Ok(ServerState {
            round: 0,
            q_global: None,
            dp,
            noise_rng,
        })
    }

    /// Aggregates one round of uploads into a new global unigram.
    pub fn aggregate(&mut self, uploads: &[ClientUpload]) -> Result<&UnigramDistribution> {
        let q = if self.dp.enabled {
            dp_federated_average(uploads, &self.dp, &mut self.noise_rng)?
        } else {
            federated_average(uploads)?
        };
        self.round += 1;
        Ok(self.q_global.insert(q))
    }
}
