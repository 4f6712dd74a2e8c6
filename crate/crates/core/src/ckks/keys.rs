use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::params::CkksParams;
use super::poly::{CrtContext, NttForm, RingPoly};
use crate::error::Result;

/// Ternary secret with a fixed number of nonzero coefficients.
pub(crate) fn sample_hwt<R: Rng + ?Sized>(n: usize, weight: usize, rng: &mut R) -> Vec<i128> {
    let mut s = vec![0i128; n];
    for i in sample(rng, n, weight) {
        s[i] = if rng.random::<bool>() { 1 } else { -1 };
    }
    s
}

/// Coefficients in {-1, 0, 1} with probabilities 1/4, 1/2, 1/4.
pub(crate) fn sample_zo<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<i128> {
    (0..n)
        .map(|_| match rng.random_range(0..4u8) {
            0 => -1,
            1 => 1,
            _ => 0,
        })
        .collect()
}

/// Rounded Gaussian with standard deviation `sigma`.
pub(crate) fn sample_gauss<R: Rng + ?Sized>(n: usize, sigma: f64, rng: &mut R) -> Vec<i128> {
    let normal = Normal::new(0.0, sigma).expect("validated sigma");
    (0..n).map(|_| normal.sample(rng).round() as i128).collect()
}

/// Switches a ciphertext component from key `s'` to `s`: `b = -a s + e + P s' mod PQ`,
/// kept in NTT form.
#[derive(Clone, Debug)]
pub struct SwitchKey {
    pub(crate) b: NttForm,
    pub(crate) a: NttForm,
}

impl SwitchKey {
    pub(crate) fn generate<R: Rng + ?Sized>(
        params: &CkksParams,
        crt: &CrtContext,
        secret: &[i128],
        target: &RingPoly,
        rng: &mut R,
    ) -> Result<Self> {
        let n = params.ring_degree();
        let log_pq = params.log_special() + params.log_big_q();
        let t = crt.primes_needed(params.log_big_q(), log_pq)?;
        let a = RingPoly::random(n, log_pq, rng);
        let s = RingPoly::from_signed(secret, log_pq);
        let mut b = RingPoly::from_signed(&sample_gauss(n, params.sigma, rng), log_pq);
        b.sub_assign(&crt.mul(&a, &s, log_pq)?)?;
        b.add_assign(&target.mod_down(params.log_big_q()).shifted_left(params.log_special(), log_pq))?;
        Ok(Self { b: crt.forward(&b, t), a: crt.forward(&a, t) })
    }
}

/// Public encryption key `(b, a)` with `b = -a s + e mod Q`.
#[derive(Clone, Debug)]
pub struct PublicKey {
    pub(crate) b: RingPoly,
    pub(crate) a: RingPoly,
}

impl PublicKey {
    pub(crate) fn generate<R: Rng + ?Sized>(
        params: &CkksParams,
        crt: &CrtContext,
        secret: &[i128],
        rng: &mut R,
    ) -> Result<Self> {
        let n = params.ring_degree();
        let log_q = params.log_big_q();
        let a = RingPoly::random(n, log_q, rng);
        let mut b = RingPoly::from_signed(&sample_gauss(n, params.sigma, rng), log_q);
        b.sub_assign(&crt.mul(&a, &RingPoly::from_signed(secret, log_q), log_q)?)?;
        Ok(Self { b, a })
    }
}
