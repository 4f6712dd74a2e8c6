//! Canonical-embedding encoder with sparse slot packing.
//!
//! Slot `j` of an `n`-slot message is the evaluation of the plaintext at
//! `zeta^(5^j)`, `zeta` a primitive `4n`-th root of unity. With fewer than
//! `N/2` slots the plaintext only uses coefficients at multiples of
//! `N / (2n)`.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::poly::RingPoly;
use crate::error::{Error, Result};
use crate::slot_engine::SlotVec;

#[derive(Clone, Debug)]
pub struct Encoder {
    n: usize,
    /// `exp(2 pi i k / 2N)` for `k` in `0..=2N`.
    ksi: Vec<Complex64>,
    /// `5^j mod 2N`.
    rot_group: Vec<usize>,
}

fn bit_reverse_permute(v: &mut [Complex64]) {
    let n = v.len();
    let mut j = 0;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            v.swap(i, j);
        }
    }
}

impl Encoder {
    pub fn new(n: usize) -> Self {
        let m = 2 * n;
        let ksi = (0..=m).map(|k| Complex64::from_polar(1.0, 2.0 * PI * k as f64 / m as f64)).collect();
        let mut rot_group = Vec::with_capacity(n / 2);
        let mut g = 1;
        for _ in 0..n / 2 {
            rot_group.push(g);
            g = g * 5 % m;
        }
        Self { n, ksi, rot_group }
    }

    /// Galois element realizing a left rotation by `r` slots.
    pub fn galois_element(&self, r: usize) -> usize {
        self.rot_group[r % (self.n / 2)]
    }

    /// Slot values of a polynomial from its special-FFT coefficients.
    fn embed(&self, v: &mut [Complex64]) {
        let size = v.len();
        let m = 2 * self.n;
        bit_reverse_permute(v);
        let mut len = 2;
        while len <= size {
            let lenh = len / 2;
            let lenq = len * 4;
            for i in (0..size).step_by(len) {
                for j in 0..lenh {
                    let idx = (self.rot_group[j] % lenq) * m / lenq;
                    let u = v[i + j];
                    let w = v[i + j + lenh] * self.ksi[idx];
                    v[i + j] = u + w;
                    v[i + j + lenh] = u - w;
                }
            }
            len *= 2;
        }
    }

    fn embed_inverse(&self, v: &mut [Complex64]) {
        let size = v.len();
        let m = 2 * self.n;
        let mut len = size;
        while len >= 2 {
            let lenh = len / 2;
            let lenq = len * 4;
            for i in (0..size).step_by(len) {
                for j in 0..lenh {
                    let idx = (lenq - self.rot_group[j] % lenq) * m / lenq;
                    let u = v[i + j] + v[i + j + lenh];
                    let w = (v[i + j] - v[i + j + lenh]) * self.ksi[idx];
                    v[i + j] = u;
                    v[i + j + lenh] = w;
                }
            }
            len /= 2;
        }
        bit_reverse_permute(v);
        let inv = 1.0 / size as f64;
        for x in v.iter_mut() {
            *x *= inv;
        }
    }

    /// Scales `m` by `2^log_scale`, rounds, and reduces modulo `2^log_q`.
    pub fn encode(&self, m: &SlotVec, log_scale: u32, log_q: u32) -> Result<RingPoly> {
        let slots = m.len();
        if slots > self.n / 2 {
            return Err(Error::Encoding(format!("{slots} slots exceed N/2 = {}", self.n / 2)));
        }
        let mut u = m.as_slice().to_vec();
        self.embed_inverse(&mut u);
        let gap = self.n / 2 / slots;
        let scale = 2f64.powi(log_scale as i32);
        let limit = 2f64.powi(log_q.min(126) as i32 - 1);
        let mut coeffs = vec![0i128; self.n];
        for (i, z) in u.iter().enumerate() {
            let (re, im) = ((z.re * scale).round(), (z.im * scale).round());
            if re.abs() >= limit || im.abs() >= limit {
                return Err(Error::Encoding(format!(
                    "scaled value {:.3e} overflows the 2^{log_q} modulus",
                    re.abs().max(im.abs())
                )));
            }
            coeffs[i * gap] = re as i128;
            coeffs[i * gap + self.n / 2] = im as i128;
        }
        Ok(RingPoly::from_signed(&coeffs, log_q))
    }

    pub fn decode(&self, p: &RingPoly, slots: usize, log_scale: u32) -> Result<SlotVec> {
        if slots > self.n / 2 || p.degree() != self.n {
            return Err(Error::Encoding(format!("cannot decode {slots} slots from degree {}", p.degree())));
        }
        let gap = self.n / 2 / slots;
        let inv_scale = 2f64.powi(-(log_scale as i32));
        let mut v: Vec<Complex64> = (0..slots)
            .map(|i| {
                Complex64::new(
                    p.centered_f64(i * gap) * inv_scale,
                    p.centered_f64(i * gap + self.n / 2) * inv_scale,
                )
            })
            .collect();
        self.embed(&mut v);
        SlotVec::new(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ckks::poly::CrtContext;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn random_slots(rng: &mut ChaCha20Rng, n: usize) -> SlotVec {
        SlotVec::new((0..n).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect())
            .unwrap()
    }

    #[test]
    fn roundtrip_small_example() {
        let enc = Encoder::new(64);
        let m = SlotVec::from_real(&[0.5, -0.25]).unwrap();
        let back = enc.decode(&enc.encode(&m, 30, 80).unwrap(), 2, 30).unwrap();
        assert!(back.max_abs_diff(&m) < 1e-6);
        assert!(enc.encode(&SlotVec::zeros(8).unwrap(), 30, 80).unwrap().is_zero());
    }

    #[test]
    fn overflow_is_an_encoding_error() {
        let enc = Encoder::new(16);
        let m = SlotVec::constant(4, 1e6).unwrap();
        assert!(matches!(enc.encode(&m, 40, 50), Err(Error::Encoding(_))));
    }

    #[test]
    fn product_and_automorphism_act_slotwise() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let n = 64;
        let enc = Encoder::new(n);
        let ctx = CrtContext::new(n, 120, 120).unwrap();
        for slots in [4, 32] {
            let a = random_slots(&mut rng, slots);
            let b = random_slots(&mut rng, slots);
            let pa = enc.encode(&a, 30, 120).unwrap();
            let pb = enc.encode(&b, 30, 120).unwrap();
            let prod = enc.decode(&ctx.mul(&pa, &pb, 120).unwrap(), slots, 60).unwrap();
            assert!(prod.max_abs_diff(&a.hadamard(&b)) < 1e-7);
            for r in [1, 3] {
                let rot = enc.decode(&pa.automorphism(enc.galois_element(r)), slots, 30).unwrap();
                assert!(rot.max_abs_diff(&a.rotated_left(r)) < 1e-7, "slots {slots} r {r}");
            }
        }
    }
}
