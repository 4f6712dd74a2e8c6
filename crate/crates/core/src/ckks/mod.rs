//! A small leveled CKKS backend.
//!
//! Ciphertexts are pairs over `Z_q[X]/(X^N + 1)` with a power-of-two modulus
//! `q` that shrinks by `2^log_scale` on every rescale. Relinearization and
//! rotations use key switching with a special modulus `P = Q` and a single
//! key component. Every multiplication is followed by a rescale, so levels
//! line up with the simulator's accounting.

mod encoding;
mod keys;
mod ntt;
mod params;
mod poly;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::slot_engine::{check_slot_count, Backend, CiphertextMeta, CostMeter, OpKind, SlotVec};

pub use encoding::Encoder;
pub use keys::{PublicKey, SwitchKey};
pub use ntt::{negacyclic_schoolbook, ntt_primes, NttTable};
pub use params::CkksParams;
pub use poly::{CrtContext, NttForm, RingPoly};

use keys::{sample_gauss, sample_hwt, sample_zo};

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct CkksCiphertext {
    c0: RingPoly,
    c1: RingPoly,
    slots: usize,
    level: usize,
    scale: f64,
    key_id: u64,
}

impl CkksCiphertext {
    /// Canonical serialization: slot count, level, then both components as little-endian limbs.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.slots as u64).to_le_bytes());
        out.extend_from_slice(&(self.level as u64).to_le_bytes());
        self.c0.write_bytes(&mut out);
        self.c1.write_bytes(&mut out);
        out
    }
}

impl CiphertextMeta for CkksCiphertext {
    fn slot_count(&self) -> usize {
        self.slots
    }

    fn level(&self) -> usize {
        self.level
    }

    fn scale(&self) -> f64 {
        self.scale
    }
}

/// Key material plus evaluator. Holds the secret key, so it also decrypts.
#[derive(Debug)]
pub struct CkksEngine {
    params: CkksParams,
    slot_count: usize,
    encoder: Encoder,
    crt: CrtContext,
    secret: Vec<i128>,
    public: PublicKey,
    relin: SwitchKey,
    rotation_keys: BTreeMap<usize, SwitchKey>,
    key_id: u64,
    meter: CostMeter,
    encryptions: AtomicU64,
}

impl CkksEngine {
    /// Generates keys for `slot_count`-slot messages and the given rotation amounts
    /// (taken modulo `slot_count`).
    pub fn new(params: CkksParams, slot_count: usize, rotations: impl IntoIterator<Item = usize>) -> Result<Self> {
        params.validate()?;
        check_slot_count(slot_count)?;
        if slot_count > params.max_slots() {
            return Err(Error::Params(format!(
                "{slot_count} slots need N >= {}, have N = {}",
                2 * slot_count,
                params.ring_degree()
            )));
        }
        let n = params.ring_degree();
        let log_pq = params.log_special() + params.log_big_q();
        let crt = CrtContext::new(n, log_pq, log_pq)?;
        let encoder = Encoder::new(n);
        let mut rng = ChaCha20Rng::seed_from_u64(mix(params.seed, 0x6b65_7973));
        let secret = sample_hwt(n, params.hamming_weight, &mut rng);
        let public = PublicKey::generate(&params, &crt, &secret, &mut rng)?;
        let log_q = params.log_big_q();
        let s = RingPoly::from_signed(&secret, log_q);
        let s2 = crt.mul(&s, &s, log_q)?;
        let relin = SwitchKey::generate(&params, &crt, &secret, &s2, &mut rng)?;
        let mut amounts: Vec<usize> = rotations.into_iter().map(|r| r % slot_count).filter(|&r| r != 0).collect();
        amounts.sort_unstable();
        amounts.dedup();
        let mut rotation_keys = BTreeMap::new();
        for r in amounts {
            let target = s.automorphism(encoder.galois_element(r));
            rotation_keys.insert(r, SwitchKey::generate(&params, &crt, &secret, &target, &mut rng)?);
        }
        let key_id = mix(params.seed, public.b.coeff(0)[0] ^ public.a.coeff(1)[0]);
        Ok(Self {
            params,
            slot_count,
            encoder,
            crt,
            secret,
            public,
            relin,
            rotation_keys,
            key_id,
            meter: CostMeter::new(),
            encryptions: AtomicU64::new(0),
        })
    }

    pub fn params(&self) -> &CkksParams {
        &self.params
    }

    pub fn slot_count(&self) -> usize {
        self.slot_count
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    fn check_key(&self, c: &CkksCiphertext) -> Result<()> {
        if c.key_id != self.key_id {
            return Err(Error::KeyMismatch);
        }
        Ok(())
    }

    fn check_pair(&self, a: &CkksCiphertext, b: &CkksCiphertext) -> Result<()> {
        self.check_key(a)?;
        self.check_key(b)?;
        if a.slots != b.slots {
            return Err(Error::Shape(format!("slot counts differ: {} vs {}", a.slots, b.slots)));
        }
        if a.scale != b.scale {
            return Err(Error::Scale(a.scale, b.scale));
        }
        Ok(())
    }

    fn check_plain(&self, a: &CkksCiphertext, p: &SlotVec) -> Result<()> {
        self.check_key(a)?;
        if p.len() != a.slots {
            return Err(Error::Shape(format!("plaintext has {} slots, ciphertext {}", p.len(), a.slots)));
        }
        Ok(())
    }

    fn at_level(&self, c: &CkksCiphertext, level: usize) -> (RingPoly, RingPoly) {
        let log_q = self.params.log_q(level);
        (c.c0.mod_down(log_q), c.c1.mod_down(log_q))
    }

    /// `(d * b / P, d * a / P) mod q` for `d` modulo `q`.
    fn key_switch(&self, d: &RingPoly, key: &SwitchKey) -> Result<(RingPoly, RingPoly)> {
        let log_p = self.params.log_special();
        let log_q = d.log_q();
        let t = self.crt.primes_needed(log_q, log_p + self.params.log_big_q())?;
        let fd = self.crt.forward(d, t);
        let k0 = self.crt.backward(&self.crt.pointwise(&fd, &key.b.truncated(t)), log_p + log_q);
        let k1 = self.crt.backward(&self.crt.pointwise(&fd, &key.a.truncated(t)), log_p + log_q);
        Ok((k0.shift_right_round(log_p), k1.shift_right_round(log_p)))
    }

    fn rescaled(&self, c0: RingPoly, c1: RingPoly, level: usize, template: &CkksCiphertext) -> CkksCiphertext {
        self.meter.record(OpKind::Rescale);
        self.meter.record_depth(self.params.levels - (level - 1));
        let bits = self.params.log_scale;
        CkksCiphertext {
            c0: c0.shift_right_round(bits),
            c1: c1.shift_right_round(bits),
            slots: template.slots,
            level: level - 1,
            scale: template.scale,
            key_id: template.key_id,
        }
    }

    fn require_level(&self, level: usize) -> Result<()> {
        if level == 0 {
            return Err(Error::DepthExhausted(format!(
                "multiplication at level 0 (chain of {} levels)",
                self.params.levels
            )));
        }
        Ok(())
    }
}

impl Backend for CkksEngine {
    type Ciphertext = CkksCiphertext;

    fn max_level(&self) -> usize {
        self.params.levels
    }

    fn meter(&self) -> &CostMeter {
        &self.meter
    }

    fn has_rotation(&self, r: usize, slot_count: usize) -> bool {
        let r = r % slot_count;
        r == 0 || (slot_count == self.slot_count && self.rotation_keys.contains_key(&r))
    }

    fn encrypt(&self, m: &SlotVec) -> Result<CkksCiphertext> {
        if m.len() != self.slot_count {
            return Err(Error::Packing(format!(
                "key set packs {} slots, plaintext has {}",
                self.slot_count,
                m.len()
            )));
        }
        let n = self.params.ring_degree();
        let log_q = self.params.log_big_q();
        let counter = self.encryptions.fetch_add(1, Ordering::Relaxed);
        let mut rng = ChaCha20Rng::seed_from_u64(mix(mix(self.params.seed, 0x656e63), counter));
        let encoded = self.encoder.encode(m, self.params.log_scale, log_q)?;
        let v = RingPoly::from_signed(&sample_zo(n, &mut rng), log_q);
        let t = self.crt.primes_needed(log_q, log_q)?;
        let fv = self.crt.forward(&v, t);
        let mut c0 = self.crt.backward(&self.crt.pointwise(&fv, &self.crt.forward(&self.public.b, t)), log_q);
        c0.add_assign(&RingPoly::from_signed(&sample_gauss(n, self.params.sigma, &mut rng), log_q))?;
        c0.add_assign(&encoded)?;
        let mut c1 = self.crt.backward(&self.crt.pointwise(&fv, &self.crt.forward(&self.public.a, t)), log_q);
        c1.add_assign(&RingPoly::from_signed(&sample_gauss(n, self.params.sigma, &mut rng), log_q))?;
        self.meter.record(OpKind::Encrypt);
        Ok(CkksCiphertext {
            c0,
            c1,
            slots: m.len(),
            level: self.params.levels,
            scale: self.params.scale(),
            key_id: self.key_id,
        })
    }

    fn decrypt(&self, c: &CkksCiphertext) -> Result<SlotVec> {
        self.check_key(c)?;
        self.meter.record(OpKind::Decrypt);
        let log_q = c.c0.log_q();
        let s = RingPoly::from_signed(&self.secret, log_q);
        let mut m = self.crt.mul(&c.c1, &s, log_q)?;
        m.add_assign(&c.c0)?;
        self.encoder.decode(&m, c.slots, self.params.log_scale)
    }

    fn add(&self, a: &CkksCiphertext, b: &CkksCiphertext) -> Result<CkksCiphertext> {
        self.check_pair(a, b)?;
        self.meter.record(OpKind::Add);
        let level = a.level.min(b.level);
        let (mut c0, mut c1) = self.at_level(a, level);
        let (d0, d1) = self.at_level(b, level);
        c0.add_assign(&d0)?;
        c1.add_assign(&d1)?;
        Ok(CkksCiphertext { c0, c1, level, ..a.clone() })
    }

    fn sub(&self, a: &CkksCiphertext, b: &CkksCiphertext) -> Result<CkksCiphertext> {
        self.check_pair(a, b)?;
        self.meter.record(OpKind::Add);
        let level = a.level.min(b.level);
        let (mut c0, mut c1) = self.at_level(a, level);
        let (d0, d1) = self.at_level(b, level);
        c0.sub_assign(&d0)?;
        c1.sub_assign(&d1)?;
        Ok(CkksCiphertext { c0, c1, level, ..a.clone() })
    }

    fn add_plain(&self, a: &CkksCiphertext, p: &SlotVec) -> Result<CkksCiphertext> {
        self.check_plain(a, p)?;
        self.meter.record(OpKind::Add);
        let mut out = a.clone();
        out.c0.add_assign(&self.encoder.encode(p, self.params.log_scale, a.c0.log_q())?)?;
        Ok(out)
    }

    fn mult_ct(&self, a: &CkksCiphertext, b: &CkksCiphertext) -> Result<CkksCiphertext> {
        self.check_pair(a, b)?;
        let level = a.level.min(b.level);
        self.require_level(level)?;
        self.meter.record(OpKind::MultCt);
        let (a0, a1) = self.at_level(a, level);
        let (b0, b1) = self.at_level(b, level);
        let log_q = a0.log_q();
        let t = self.crt.primes_needed(log_q, log_q)?;
        let (fa0, fa1) = (self.crt.forward(&a0, t), self.crt.forward(&a1, t));
        let (fb0, fb1) = (self.crt.forward(&b0, t), self.crt.forward(&b1, t));
        let mut d0 = self.crt.backward(&self.crt.pointwise(&fa0, &fb0), log_q);
        let cross = self.crt.sum(&self.crt.pointwise(&fa0, &fb1), &self.crt.pointwise(&fa1, &fb0));
        let mut d1 = self.crt.backward(&cross, log_q);
        let d2 = self.crt.backward(&self.crt.pointwise(&fa1, &fb1), log_q);
        let (k0, k1) = self.key_switch(&d2, &self.relin)?;
        d0.add_assign(&k0)?;
        d1.add_assign(&k1)?;
        Ok(self.rescaled(d0, d1, level, a))
    }

    fn mult_pt(&self, a: &CkksCiphertext, p: &SlotVec) -> Result<CkksCiphertext> {
        self.check_plain(a, p)?;
        self.require_level(a.level)?;
        self.meter.record(OpKind::MultPt);
        let log_q = a.c0.log_q();
        let t = self.crt.primes_needed(log_q, log_q)?;
        let fp = self.crt.forward(&self.encoder.encode(p, self.params.log_scale, log_q)?, t);
        let c0 = self.crt.backward(&self.crt.pointwise(&self.crt.forward(&a.c0, t), &fp), log_q);
        let c1 = self.crt.backward(&self.crt.pointwise(&self.crt.forward(&a.c1, t), &fp), log_q);
        Ok(self.rescaled(c0, c1, a.level, a))
    }

    fn rotate_left(&self, c: &CkksCiphertext, r: usize) -> Result<CkksCiphertext> {
        self.check_key(c)?;
        let r = r % c.slots;
        if r == 0 {
            return Ok(c.clone());
        }
        let key = self.rotation_keys.get(&r).ok_or(Error::MissingKey(r))?;
        self.meter.record(OpKind::Rotate);
        let g = self.encoder.galois_element(r);
        let mut c0 = c.c0.automorphism(g);
        let (k0, k1) = self.key_switch(&c.c1.automorphism(g), key)?;
        c0.add_assign(&k0)?;
        Ok(CkksCiphertext { c0, c1: k1, ..c.clone() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use rand::Rng;

    fn small_engine(rotations: &[usize]) -> CkksEngine {
        let params = CkksParams { log_n: 7, ..CkksParams::default() };
        CkksEngine::new(params, 16, rotations.iter().copied()).unwrap()
    }

    fn random_vec(rng: &mut ChaCha20Rng, n: usize) -> SlotVec {
        SlotVec::new((0..n).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect())
            .unwrap()
    }

    #[test]
    fn homomorphic_ops_match_slotwise_oracle() {
        let engine = small_engine(&[1, 5]);
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let a = random_vec(&mut rng, 16);
        let b = random_vec(&mut rng, 16);
        let (ca, cb) = (engine.encrypt(&a).unwrap(), engine.encrypt(&b).unwrap());
        let tol = 1e-6;
        assert!(engine.decrypt(&ca).unwrap().max_abs_diff(&a) < tol);
        assert!(engine.decrypt(&engine.add(&ca, &cb).unwrap()).unwrap().max_abs_diff(&a.plus(&b)) < tol);
        let diff = a.plus(&b.scaled(Complex64::new(-1.0, 0.0)));
        assert!(engine.decrypt(&engine.sub(&ca, &cb).unwrap()).unwrap().max_abs_diff(&diff) < tol);
        let prod = engine.mult_ct(&ca, &cb).unwrap();
        assert_eq!(prod.level(), 3);
        assert!(engine.decrypt(&prod).unwrap().max_abs_diff(&a.hadamard(&b)) < tol);
        assert!(engine.decrypt(&engine.mult_pt(&ca, &b).unwrap()).unwrap().max_abs_diff(&a.hadamard(&b)) < tol);
        for r in [1, 5, 21] {
            let rot = engine.decrypt(&engine.rotate_left(&ca, r).unwrap()).unwrap();
            assert!(rot.max_abs_diff(&a.rotated_left(r)) < tol, "rotation {r}");
        }
        let mixed = engine.add(&prod, &ca).unwrap();
        assert_eq!(mixed.level(), 3);
        assert!(engine.decrypt(&mixed).unwrap().max_abs_diff(&a.hadamard(&b).plus(&a)) < tol);
        let shifted = engine.add_plain(&ca, &b).unwrap();
        assert!(engine.decrypt(&shifted).unwrap().max_abs_diff(&a.plus(&b)) < tol);
    }

    #[test]
    fn depth_is_bounded_by_chain() {
        let engine = small_engine(&[]);
        let m = SlotVec::constant(16, 0.9).unwrap();
        let mut c = engine.encrypt(&m).unwrap();
        for _ in 0..4 {
            c = engine.mult_ct(&c, &c).unwrap();
        }
        assert_eq!(c.level(), 0);
        let want = 0.9f64.powi(16);
        assert!(engine.decrypt(&c).unwrap().as_slice().iter().all(|z| (z.re - want).abs() < 1e-5));
        assert!(matches!(engine.mult_ct(&c, &c), Err(Error::DepthExhausted(_))));
        assert!(matches!(engine.mult_pt(&c, &m), Err(Error::DepthExhausted(_))));
    }

    #[test]
    fn missing_rotation_and_foreign_keys() {
        let engine = small_engine(&[1]);
        let c = engine.encrypt(&SlotVec::zeros(16).unwrap()).unwrap();
        assert!(matches!(engine.rotate_left(&c, 2), Err(Error::MissingKey(2))));
        assert!(engine.has_rotation(17, 16));
        let other = CkksEngine::new(CkksParams { log_n: 7, seed: 9, ..CkksParams::default() }, 16, []).unwrap();
        assert!(matches!(other.decrypt(&c), Err(Error::KeyMismatch)));
    }

    #[test]
    fn deterministic_bytes_under_seed() {
        let m = SlotVec::from_real(&(0..16).map(|i| i as f64 / 16.0).collect::<Vec<_>>()).unwrap();
        let a = small_engine(&[1]).encrypt(&m).unwrap().to_bytes();
        let b = small_engine(&[1]).encrypt(&m).unwrap().to_bytes();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_oversized_slots() {
        let params = CkksParams { log_n: 5, ..CkksParams::default() };
        assert!(matches!(CkksEngine::new(params, 32, []), Err(Error::Params(_))));
    }
}
