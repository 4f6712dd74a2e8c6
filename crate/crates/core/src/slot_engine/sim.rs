use std::collections::BTreeSet;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{check_slot_count, Backend, CiphertextMeta, CostMeter, OpKind, SlotVec};
use crate::error::{Error, Result};

pub(crate) fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn mix(a: u64, b: u64) -> u64 {
    splitmix(a ^ splitmix(b))
}

fn hash_slots(v: &SlotVec) -> u64 {
    v.as_slice().iter().fold(0x5151_u64, |h, z| {
        mix(mix(h, z.re.to_bits()), z.im.to_bits())
    })
}

/// Key material of the simulator.
///
/// The simulator keys are opaque tokens, but they obey the provisioning rules
/// of a real scheme: ciphertexts only decrypt under the key set that produced
/// them and only the rotations declared at generation time are available.
#[derive(Clone, Debug)]
pub struct KeySet {
    seed: u64,
    slot_count: usize,
    public_key: u64,
    secret_key: u64,
    relinearization_key: u64,
    rotations: BTreeSet<usize>,
}

impl KeySet {
    /// Deterministic key generation. Rotation amounts are taken modulo `slot_count`;
    /// rotation by zero never needs a key.
    pub fn generate(
        seed: u64,
        slot_count: usize,
        rotations: impl IntoIterator<Item = usize>,
    ) -> Result<Self> {
        check_slot_count(slot_count)?;
        let secret_key = mix(seed, 0x5ec);
        let rotations = rotations
            .into_iter()
            .map(|r| r % slot_count)
            .filter(|&r| r != 0)
            .collect();
        Ok(Self {
            seed,
            slot_count,
            public_key: mix(secret_key, 0x9b),
            secret_key,
            relinearization_key: mix(secret_key, 0x7e1),
            rotations,
        })
    }

    pub fn with_all_rotations(seed: u64, slot_count: usize) -> Result<Self> {
        Self::generate(seed, slot_count, 1..slot_count)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn slot_count(&self) -> usize {
        self.slot_count
    }

    pub fn rotations(&self) -> &BTreeSet<usize> {
        &self.rotations
    }

    fn key_id(&self) -> u64 {
        mix(self.public_key, self.relinearization_key ^ self.secret_key)
    }
}

/// Per-slot Gaussian perturbation injected after multiplications, rotations and rescales.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub enabled: bool,
    pub sigma_mult: f64,
    pub sigma_rot: f64,
    pub sigma_rescale: f64,
    pub rng_seed: u64,
}

impl NoiseModel {
    pub fn off() -> Self {
        Self { enabled: false, sigma_mult: 0.0, sigma_rot: 0.0, sigma_rescale: 0.0, rng_seed: 0 }
    }

    /// Decoding error of a 40-bit scale after rescaling.
    pub fn preset(rng_seed: u64) -> Self {
        Self { enabled: true, sigma_mult: 1e-8, sigma_rot: 1e-9, sigma_rescale: 0.0, rng_seed }
    }
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self::off()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub max_level: usize,
    pub log_scale: u32,
    pub noise: NoiseModel,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { max_level: 40, log_scale: 40, noise: NoiseModel::off() }
    }
}

/// A simulator ciphertext: the exact slot vector behind an opaque wrapper.
///
/// The payload is private to the engine; there is no per-slot accessor:
///
/// ```compile_fail
/// use fhenav::slot_engine::{Backend, KeySet, SimConfig, SimEngine, SlotVec};
/// let engine = SimEngine::new(KeySet::with_all_rotations(1, 4).unwrap(), SimConfig::default());
/// let ct = engine.encrypt(&SlotVec::from_real(&[1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
/// let leaked = ct.payload;
/// ```
#[derive(Clone, Debug)]
pub struct SimCiphertext {
    payload: SlotVec,
    level: usize,
    scale: f64,
    key_id: u64,
    nonce: u64,
}

impl CiphertextMeta for SimCiphertext {
    fn slot_count(&self) -> usize {
        self.payload.len()
    }

    fn level(&self) -> usize {
        self.level
    }

    fn scale(&self) -> f64 {
        self.scale
    }
}

/// Exact slot-level simulator of a leveled CKKS-style scheme.
#[derive(Debug)]
pub struct SimEngine {
    keys: KeySet,
    config: SimConfig,
    meter: CostMeter,
}

impl SimEngine {
    pub fn new(keys: KeySet, config: SimConfig) -> Self {
        Self { keys, config, meter: CostMeter::new() }
    }

    pub fn keys(&self) -> &KeySet {
        &self.keys
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    fn scale(&self) -> f64 {
        2f64.powi(self.config.log_scale as i32)
    }

    fn check_key(&self, c: &SimCiphertext) -> Result<()> {
        if c.key_id != self.keys.key_id() {
            return Err(Error::KeyMismatch);
        }
        Ok(())
    }

    fn check_pair(&self, a: &SimCiphertext, b: &SimCiphertext) -> Result<()> {
        self.check_key(a)?;
        self.check_key(b)?;
        if a.slot_count() != b.slot_count() {
            return Err(Error::Shape(format!(
                "slot counts differ: {} vs {}",
                a.slot_count(),
                b.slot_count()
            )));
        }
        if a.scale != b.scale {
            return Err(Error::Scale(a.scale, b.scale));
        }
        Ok(())
    }

    fn check_plain(&self, a: &SimCiphertext, p: &SlotVec) -> Result<()> {
        self.check_key(a)?;
        if a.slot_count() != p.len() {
            return Err(Error::Shape(format!(
                "plaintext has {} slots, ciphertext {}",
                p.len(),
                a.slot_count()
            )));
        }
        Ok(())
    }

    fn perturb(&self, mut payload: SlotVec, sigma: f64, nonce: u64) -> SlotVec {
        let noise = &self.config.noise;
        if !noise.enabled || sigma <= 0.0 {
            return payload;
        }
        // Seeded by the ciphertext nonce so results do not depend on evaluation order.
        let mut rng = ChaCha20Rng::seed_from_u64(mix(noise.rng_seed, nonce));
        let normal = Normal::new(0.0, sigma).expect("sigma is positive and finite");
        let mut slots = payload.0;
        for z in slots.iter_mut() {
            *z += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
        }
        payload.0 = slots;
        payload
    }

    fn product(&self, a: &SimCiphertext, level_b: usize, payload: SlotVec, nonce: u64) -> Result<SimCiphertext> {
        let level = a.level.min(level_b);
        if level == 0 {
            return Err(Error::DepthExhausted(format!(
                "multiplication at level 0 (budget {})",
                self.config.max_level
            )));
        }
        self.meter.record(OpKind::Rescale);
        let sigma = self.config.noise.sigma_mult + self.config.noise.sigma_rescale;
        let payload = self.perturb(payload, sigma, nonce);
        self.meter.record_depth(self.config.max_level - (level - 1));
        Ok(SimCiphertext { payload, level: level - 1, scale: a.scale, key_id: a.key_id, nonce })
    }
}

impl Backend for SimEngine {
    type Ciphertext = SimCiphertext;

    fn max_level(&self) -> usize {
        self.config.max_level
    }

    fn meter(&self) -> &CostMeter {
        &self.meter
    }

    fn has_rotation(&self, r: usize, slot_count: usize) -> bool {
        let r = r % slot_count;
        r == 0 || self.keys.rotations.contains(&(r % self.keys.slot_count))
    }

    fn encrypt(&self, m: &SlotVec) -> Result<SimCiphertext> {
        if m.len() != self.keys.slot_count {
            return Err(Error::Packing(format!(
                "key set packs {} slots, plaintext has {}",
                self.keys.slot_count,
                m.len()
            )));
        }
        self.meter.record(OpKind::Encrypt);
        Ok(SimCiphertext {
            payload: m.clone(),
            level: self.config.max_level,
            scale: self.scale(),
            key_id: self.keys.key_id(),
            nonce: mix(self.keys.key_id(), hash_slots(m)),
        })
    }

    fn decrypt(&self, c: &SimCiphertext) -> Result<SlotVec> {
        self.check_key(c)?;
        self.meter.record(OpKind::Decrypt);
        Ok(c.payload.clone())
    }

    fn add(&self, a: &SimCiphertext, b: &SimCiphertext) -> Result<SimCiphertext> {
        self.check_pair(a, b)?;
        self.meter.record(OpKind::Add);
        Ok(SimCiphertext {
            payload: a.payload.plus(&b.payload),
            level: a.level.min(b.level),
            scale: a.scale,
            key_id: a.key_id,
            nonce: mix(mix(a.nonce, 0xadd), b.nonce),
        })
    }

    fn sub(&self, a: &SimCiphertext, b: &SimCiphertext) -> Result<SimCiphertext> {
        self.check_pair(a, b)?;
        self.meter.record(OpKind::Add);
        let neg = b.payload.scaled(Complex64::new(-1.0, 0.0));
        Ok(SimCiphertext {
            payload: a.payload.plus(&neg),
            level: a.level.min(b.level),
            scale: a.scale,
            key_id: a.key_id,
            nonce: mix(mix(a.nonce, 0x5b), b.nonce),
        })
    }

    fn add_plain(&self, a: &SimCiphertext, p: &SlotVec) -> Result<SimCiphertext> {
        self.check_plain(a, p)?;
        self.meter.record(OpKind::Add);
        Ok(SimCiphertext {
            payload: a.payload.plus(p),
            level: a.level,
            scale: a.scale,
            key_id: a.key_id,
            nonce: mix(mix(a.nonce, 0xa9), hash_slots(p)),
        })
    }

    fn mult_ct(&self, a: &SimCiphertext, b: &SimCiphertext) -> Result<SimCiphertext> {
        self.check_pair(a, b)?;
        self.meter.record(OpKind::MultCt);
        let nonce = mix(mix(a.nonce, 0x3c7), b.nonce);
        self.product(a, b.level, a.payload.hadamard(&b.payload), nonce)
    }

    fn mult_pt(&self, a: &SimCiphertext, p: &SlotVec) -> Result<SimCiphertext> {
        self.check_plain(a, p)?;
        self.meter.record(OpKind::MultPt);
        let nonce = mix(mix(a.nonce, 0x97), hash_slots(p));
        self.product(a, a.level, a.payload.hadamard(p), nonce)
    }

    fn rotate_left(&self, c: &SimCiphertext, r: usize) -> Result<SimCiphertext> {
        self.check_key(c)?;
        let n = c.slot_count();
        let r = r % n;
        if r == 0 {
            return Ok(c.clone());
        }
        if !self.has_rotation(r, n) {
            return Err(Error::MissingKey(r));
        }
        self.meter.record(OpKind::Rotate);
        let nonce = mix(mix(c.nonce, 0x707), r as u64);
        let payload = self.perturb(c.payload.rotated_left(r), self.config.noise.sigma_rot, nonce);
        Ok(SimCiphertext { payload, level: c.level, scale: c.scale, key_id: c.key_id, nonce })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slot_engine::{rotate_sum, RotSumMode};

    fn engine(n: usize) -> SimEngine {
        SimEngine::new(KeySet::with_all_rotations(7, n).unwrap(), SimConfig::default())
    }

    fn v(x: &[f64]) -> SlotVec {
        SlotVec::from_real(x).unwrap()
    }

    #[test]
    fn roundtrip_and_zero() {
        let e = engine(4);
        let m = v(&[1.0, 2.0, 3.0, 4.0]);
        let c = e.encrypt(&m).unwrap();
        assert_eq!(e.decrypt(&c).unwrap(), m);
        assert_eq!(c.level(), 40);
        let z = SlotVec::zeros(256).unwrap();
        let e = engine(256);
        assert!(e.decrypt(&e.encrypt(&z).unwrap()).unwrap().is_zero());
    }

    #[test]
    fn non_power_of_two_is_packing_error() {
        let e = engine(64);
        assert!(matches!(SlotVec::from_real(&[0.0; 50]), Err(Error::Packing(_))));
        let wrong = SlotVec::zeros(32).unwrap();
        assert!(matches!(e.encrypt(&wrong), Err(Error::Packing(_))));
    }

    #[test]
    fn add_and_mult_examples() {
        let e = engine(2);
        let a = e.encrypt(&v(&[1.0, 1.0])).unwrap();
        let b = e.encrypt(&v(&[2.0, 3.0])).unwrap();
        assert_eq!(e.decrypt(&e.add(&a, &b).unwrap()).unwrap(), v(&[3.0, 4.0]));
        let x = e.encrypt(&v(&[2.0, 3.0])).unwrap();
        let y = e.encrypt(&v(&[4.0, 5.0])).unwrap();
        let p = e.mult_ct(&x, &y).unwrap();
        assert_eq!(e.decrypt(&p).unwrap(), v(&[8.0, 15.0]));
        assert_eq!(p.level(), 39);
        let q = e.mult_pt(&x, &SlotVec::constant(2, 1.0).unwrap()).unwrap();
        assert_eq!(e.decrypt(&q).unwrap(), v(&[2.0, 3.0]));
        assert_eq!(q.level(), 39);
    }

    #[test]
    fn depth_exhaustion() {
        let keys = KeySet::with_all_rotations(1, 2).unwrap();
        let e = SimEngine::new(keys, SimConfig { max_level: 3, ..SimConfig::default() });
        let one = SlotVec::constant(2, 1.0).unwrap();
        let mut c = e.encrypt(&one).unwrap();
        for _ in 0..3 {
            c = e.mult_pt(&c, &one).unwrap();
        }
        assert_eq!(c.level(), 0);
        assert!(matches!(e.mult_pt(&c, &one), Err(Error::DepthExhausted(_))));
        assert!(matches!(e.mult_ct(&c, &c), Err(Error::DepthExhausted(_))));
    }

    #[test]
    fn rotation_examples_and_missing_key() {
        let e = engine(4);
        let c = e.encrypt(&v(&[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(e.decrypt(&e.rotate_left(&c, 1).unwrap()).unwrap(), v(&[2.0, 3.0, 4.0, 1.0]));
        assert_eq!(e.decrypt(&e.rotate_left(&c, 0).unwrap()).unwrap(), v(&[1.0, 2.0, 3.0, 4.0]));
        let limited = SimEngine::new(KeySet::generate(1, 4, [1]).unwrap(), SimConfig::default());
        let c = limited.encrypt(&v(&[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert!(limited.rotate_left(&c, 1).is_ok());
        assert!(matches!(limited.rotate_left(&c, 2), Err(Error::MissingKey(2))));
    }

    #[test]
    fn key_mismatch() {
        let e1 = engine(4);
        let e2 = SimEngine::new(KeySet::with_all_rotations(8, 4).unwrap(), SimConfig::default());
        let c = e1.encrypt(&v(&[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert!(matches!(e2.decrypt(&c), Err(Error::KeyMismatch)));
        let d = e2.encrypt(&v(&[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert!(matches!(e1.add(&c, &d), Err(Error::KeyMismatch)));
    }

    #[test]
    fn shape_mismatch() {
        let e = engine(4);
        let c = e.encrypt(&v(&[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert!(matches!(e.mult_pt(&c, &SlotVec::zeros(8).unwrap()), Err(Error::Shape(_))));
    }

    #[test]
    fn rotate_sum_example() {
        let e = engine(4);
        let c = e.encrypt(&v(&[1.0, 2.0, 3.0, 4.0])).unwrap();
        for mode in [RotSumMode::Naive, RotSumMode::Tree] {
            let s = e.decrypt(&rotate_sum(&e, &c, 4, mode).unwrap()).unwrap();
            assert_eq!(s.as_slice()[0].re, 10.0);
        }
        assert!(matches!(rotate_sum(&e, &c, 5, RotSumMode::Naive), Err(Error::Shape(_))));
        assert!(matches!(rotate_sum(&e, &c, 3, RotSumMode::Tree), Err(Error::Shape(_))));
    }

    #[test]
    fn noise_is_deterministic_and_bounded() {
        let keys = KeySet::with_all_rotations(3, 64).unwrap();
        let cfg = SimConfig { noise: NoiseModel::preset(11), ..SimConfig::default() };
        let run = || {
            let e = SimEngine::new(keys.clone(), cfg);
            let m = SlotVec::constant(64, 0.5).unwrap();
            let c = e.encrypt(&m).unwrap();
            let c = e.mult_pt(&e.rotate_left(&c, 3).unwrap(), &SlotVec::constant(64, 2.0).unwrap()).unwrap();
            e.decrypt(&c).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
        let exact = SlotVec::constant(64, 1.0).unwrap();
        let err = a.max_abs_diff(&exact);
        assert!(err > 0.0 && err < 1e-6, "err {err}");
    }
}
