//! Reproducible random streams.
//!
//! Every random draw in the crate comes from a [`RngStream`] keyed by a run
//! seed, a stream label and a shard index. ChaCha20 is a counter-mode
//! generator, so the triple fixes the output independently of how work is
//! split across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use sha2::{Digest, Sha256};

pub type RngStream = ChaCha20Rng;

/// Opens the stream `(seed, label, shard)`.
pub fn stream(seed: u64, label: &str, shard: u64) -> RngStream {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let key: [u8; 32] = h.finalize().into();
    let mut rng = ChaCha20Rng::from_seed(key);
    rng.set_stream(shard);
    rng
}

/// Unit-mean exponential variate.
#[inline]
pub fn exp1<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    Exp1.sample(rng)
}

#[inline]
pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Lorentzian (Cauchy) variate of full width `fwhm`, restricted to
/// `|x| <= limit` by inverse-CDF sampling.
#[inline]
pub fn truncated_cauchy<R: Rng + ?Sized>(rng: &mut R, fwhm: f64, limit: f64) -> f64 {
    if fwhm <= 0.0 {
        return 0.0;
    }
    let hw = 0.5 * fwhm;
    let theta_max = (limit / hw).atan();
    let u: f64 = rng.random::<f64>() * 2.0 - 1.0;
    hw * (u * theta_max).tan()
}

/// Number of failures before the first success of a Bernoulli(p) sequence.
#[inline]
pub fn geometric<R: Rng + ?Sized>(rng: &mut R, p: f64) -> u64 {
    if p >= 1.0 {
        return 0;
    }
    if p <= 0.0 {
        return u64::MAX;
    }
    let u: f64 = 1.0 - rng.random::<f64>();
    (u.ln() / (1.0 - p).ln()).floor() as u64
}
