//! Ring elements of `Z_q[X]/(X^N + 1)` with `q = 2^log_q`, and their exact products.
//!
//! Coefficients are fixed-width little-endian limb strings holding the
//! representative in `[0, q)`. Products are computed exactly over the integers
//! by CRT across word-sized NTT primes, then reduced modulo the target power of two.

use num_bigint::BigUint;

use super::ntt::{add_mod, mul_mod, ntt_primes, pow_mod, sub_mod, NttTable};
use crate::error::{Error, Result};

pub(crate) fn limbs_for(bits: u32) -> usize {
    bits.div_ceil(64) as usize
}

fn top_mask(bits: u32) -> u64 {
    match bits % 64 {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RingPoly {
    n: usize,
    log_q: u32,
    limbs: usize,
    data: Vec<u64>,
}

impl RingPoly {
    pub fn zero(n: usize, log_q: u32) -> Self {
        let limbs = limbs_for(log_q);
        Self { n, log_q, limbs, data: vec![0; n * limbs] }
    }

    /// Signed coefficients reduced modulo `2^log_q`.
    pub fn from_signed(values: &[i128], log_q: u32) -> Self {
        let mut p = Self::zero(values.len(), log_q);
        for (i, &v) in values.iter().enumerate() {
            let c = p.coeff_mut(i);
            c[0] = v as u64;
            if c.len() > 1 {
                c[1] = (v >> 64) as u64;
            }
            let fill = if v < 0 { u64::MAX } else { 0 };
            for x in c.iter_mut().skip(2) {
                *x = fill;
            }
            if let Some(last) = c.last_mut() {
                *last &= top_mask(log_q);
            }
        }
        p
    }

    /// Uniform element of `Z_q[X]/(X^N + 1)`.
    pub fn random<R: rand::Rng + ?Sized>(n: usize, log_q: u32, rng: &mut R) -> Self {
        let mut p = Self::zero(n, log_q);
        for x in p.data.iter_mut() {
            *x = rng.random();
        }
        let mask = top_mask(log_q);
        for i in 0..n {
            *p.coeff_mut(i).last_mut().expect("at least one limb") &= mask;
        }
        p
    }

    /// Multiplication by `2^bits`, reduced modulo `2^log_q`.
    pub fn shifted_left(&self, bits: u32, log_q: u32) -> Self {
        let mut out = Self::zero(self.n, log_q);
        let (word, off) = ((bits / 64) as usize, bits % 64);
        let mask = top_mask(log_q);
        for i in 0..self.n {
            let src = self.coeff(i);
            let dst = out.coeff_mut(i);
            for k in word..dst.len() {
                let lo = src.get(k - word).copied().unwrap_or(0);
                let below = if k > word { src.get(k - word - 1).copied().unwrap_or(0) } else { 0 };
                dst[k] = if off == 0 { lo } else { (lo << off) | (below >> (64 - off)) };
            }
            *dst.last_mut().expect("at least one limb") &= mask;
        }
        out
    }

    pub fn degree(&self) -> usize {
        self.n
    }

    pub fn log_q(&self) -> u32 {
        self.log_q
    }

    pub fn coeff(&self, i: usize) -> &[u64] {
        &self.data[i * self.limbs..(i + 1) * self.limbs]
    }

    fn coeff_mut(&mut self, i: usize) -> &mut [u64] {
        &mut self.data[i * self.limbs..(i + 1) * self.limbs]
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0)
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.n != other.n || self.log_q != other.log_q {
            return Err(Error::Shape(format!(
                "ring elements differ: (N={}, log q={}) vs (N={}, log q={})",
                self.n, self.log_q, other.n, other.log_q
            )));
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_compatible(other)?;
        let mask = top_mask(self.log_q);
        for (a, b) in self.data.chunks_mut(self.limbs).zip(other.data.chunks(other.limbs)) {
            let mut carry = false;
            for (x, &y) in a.iter_mut().zip(b) {
                let (s1, c1) = x.overflowing_add(y);
                let (s2, c2) = s1.overflowing_add(carry as u64);
                *x = s2;
                carry = c1 || c2;
            }
            *a.last_mut().expect("at least one limb") &= mask;
        }
        Ok(())
    }

    pub fn sub_assign(&mut self, other: &Self) -> Result<()> {
        self.check_compatible(other)?;
        let mask = top_mask(self.log_q);
        for (a, b) in self.data.chunks_mut(self.limbs).zip(other.data.chunks(other.limbs)) {
            let mut borrow = false;
            for (x, &y) in a.iter_mut().zip(b) {
                let (d1, b1) = x.overflowing_sub(y);
                let (d2, b2) = d1.overflowing_sub(borrow as u64);
                *x = d2;
                borrow = b1 || b2;
            }
            *a.last_mut().expect("at least one limb") &= mask;
        }
        Ok(())
    }

    pub fn negated(&self) -> Self {
        let mut z = Self::zero(self.n, self.log_q);
        z.sub_assign(self).expect("same shape");
        z
    }

    /// Reduction to a smaller power-of-two modulus.
    pub fn mod_down(&self, log_q: u32) -> Self {
        if log_q >= self.log_q {
            return self.clone();
        }
        let mut out = Self::zero(self.n, log_q);
        let mask = top_mask(log_q);
        for i in 0..self.n {
            let src = self.coeff(i);
            let dst = out.coeff_mut(i);
            dst.copy_from_slice(&src[..dst.len()]);
            *dst.last_mut().expect("at least one limb") &= mask;
        }
        out
    }

    /// Rounded division by `2^bits`; the result lives modulo `2^(log_q - bits)`.
    pub fn shift_right_round(&self, bits: u32) -> Self {
        assert!(bits > 0 && bits < self.log_q, "shift must leave a nonzero modulus");
        let new_q = self.log_q - bits;
        let mut out = Self::zero(self.n, new_q);
        let mut buf = vec![0u64; self.limbs];
        let (word, off) = ((bits / 64) as usize, bits % 64);
        let half_word = ((bits - 1) / 64) as usize;
        let half_bit = (bits - 1) % 64;
        let mask = top_mask(new_q);
        for i in 0..self.n {
            buf.copy_from_slice(self.coeff(i));
            let mut carry = 1u64 << half_bit;
            for x in buf.iter_mut().skip(half_word) {
                let (s, c) = x.overflowing_add(carry);
                *x = s;
                carry = c as u64;
                if carry == 0 {
                    break;
                }
            }
            let dst = out.coeff_mut(i);
            for (k, d) in dst.iter_mut().enumerate() {
                let lo = buf.get(word + k).copied().unwrap_or(0);
                let hi = buf.get(word + k + 1).copied().unwrap_or(0);
                *d = if off == 0 { lo } else { (lo >> off) | (hi << (64 - off)) };
            }
            *dst.last_mut().expect("at least one limb") &= mask;
        }
        out
    }

    /// Coefficient `i` as a centred real number in `[-q/2, q/2)`.
    pub fn centered_f64(&self, i: usize) -> f64 {
        let c = self.coeff(i);
        let top_bit = (self.log_q - 1) % 64;
        let negative = (c[self.limbs - 1] >> top_bit) & 1 == 1;
        let to_f64 = |limbs: &[u64]| limbs.iter().rev().fold(0.0, |acc, &x| acc * 18_446_744_073_709_551_616.0 + x as f64);
        if negative {
            let mut neg = vec![0u64; self.limbs];
            negate_into(&mut neg, c, top_mask(self.log_q));
            -to_f64(&neg)
        } else {
            to_f64(c)
        }
    }

    /// `p(X) -> p(X^g)` for odd `g`.
    pub fn automorphism(&self, g: usize) -> Self {
        let two_n = 2 * self.n;
        let mut out = Self::zero(self.n, self.log_q);
        for i in 0..self.n {
            let j = (i * g) % two_n;
            if j < self.n {
                out.coeff_mut(j).copy_from_slice(self.coeff(i));
            } else {
                negate_into(out.coeff_mut(j - self.n), self.coeff(i), top_mask(self.log_q));
            }
        }
        out
    }

    pub fn write_bytes(&self, out: &mut Vec<u8>) {
        for x in &self.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }

    fn residues(&self, p: u64) -> Vec<u64> {
        (0..self.n)
            .map(|i| {
                self.coeff(i)
                    .iter()
                    .rev()
                    .fold(0u64, |r, &x| ((((r as u128) << 64) | x as u128) % p as u128) as u64)
            })
            .collect()
    }
}

/// A ring element in CRT/NTT form over the first `residues.len()` primes.
#[derive(Clone, Debug)]
pub struct NttForm {
    residues: Vec<Vec<u64>>,
}

impl NttForm {
    pub fn prime_count(&self) -> usize {
        self.residues.len()
    }

    /// The same element restricted to its first `t` primes.
    pub fn truncated(&self, t: usize) -> NttForm {
        NttForm { residues: self.residues[..t].to_vec() }
    }
}

/// Shared prime tables and Garner constants for exact products in degree `n`.
#[derive(Debug)]
pub struct CrtContext {
    n: usize,
    tables: Vec<NttTable>,
    /// `prefix_mod[i][j] = (p_0 ... p_{j-1}) mod p_i` for `j < i`.
    prefix_mod: Vec<Vec<u64>>,
    /// `(p_0 ... p_{i-1})^{-1} mod p_i`.
    inv: Vec<u64>,
    /// `p_0 ... p_{i-1}` as limbs, for `i <= tables.len()`.
    prefix: Vec<Vec<u64>>,
}

impl CrtContext {
    /// Enough primes for products of operands up to `max_bits_a` and `max_bits_b` bits.
    pub fn new(n: usize, max_bits_a: u32, max_bits_b: u32) -> Result<Self> {
        let count = Self::count_for(n, max_bits_a, max_bits_b);
        let primes = ntt_primes(count, 2 * n as u64)?;
        let tables = primes.iter().map(|&p| NttTable::new(p, n)).collect::<Result<Vec<_>>>()?;
        let mut prefix_mod = Vec::with_capacity(count);
        let mut inv = Vec::with_capacity(count);
        for (i, &p) in primes.iter().enumerate() {
            let mut row = Vec::with_capacity(i);
            let mut acc = 1u64;
            for &q in &primes[..i] {
                row.push(acc);
                acc = mul_mod(acc, q % p, p);
            }
            prefix_mod.push(row);
            inv.push(pow_mod(acc, p - 2, p));
        }
        let mut prefix = Vec::with_capacity(count + 1);
        let mut big = BigUint::from(1u8);
        for &p in &primes {
            prefix.push(big.to_u64_digits());
            big *= p;
        }
        prefix.push(big.to_u64_digits());
        Ok(Self { n, tables, prefix_mod, inv, prefix })
    }

    fn count_for(n: usize, bits_a: u32, bits_b: u32) -> usize {
        // headroom for the sign, for sums of two products and for an unambiguous top digit
        let bits = bits_a + bits_b + n.trailing_zeros() + 3;
        bits.div_ceil(60) as usize
    }

    pub fn primes_needed(&self, bits_a: u32, bits_b: u32) -> Result<usize> {
        let t = Self::count_for(self.n, bits_a, bits_b);
        if t > self.tables.len() {
            return Err(Error::Params(format!("product of {bits_a}- and {bits_b}-bit operands exceeds the CRT range")));
        }
        Ok(t)
    }

    pub fn forward(&self, a: &RingPoly, t: usize) -> NttForm {
        NttForm {
            residues: self.tables[..t]
                .iter()
                .map(|table| {
                    let mut r = a.residues(table.modulus());
                    table.forward(&mut r);
                    r
                })
                .collect(),
        }
    }

    pub fn pointwise(&self, a: &NttForm, b: &NttForm) -> NttForm {
        let t = a.prime_count().min(b.prime_count());
        NttForm {
            residues: (0..t)
                .map(|k| {
                    let p = self.tables[k].modulus();
                    a.residues[k].iter().zip(&b.residues[k]).map(|(&x, &y)| mul_mod(x, y, p)).collect()
                })
                .collect(),
        }
    }

    pub fn sum(&self, a: &NttForm, b: &NttForm) -> NttForm {
        let t = a.prime_count().min(b.prime_count());
        NttForm {
            residues: (0..t)
                .map(|k| {
                    let p = self.tables[k].modulus();
                    a.residues[k].iter().zip(&b.residues[k]).map(|(&x, &y)| add_mod(x, y, p)).collect()
                })
                .collect(),
        }
    }

    /// Recovers the exact centred integer coefficients and reduces them modulo `2^log_q`.
    pub fn backward(&self, f: &NttForm, log_q: u32) -> RingPoly {
        let t = f.prime_count();
        let coeffs: Vec<Vec<u64>> = f
            .residues
            .iter()
            .zip(&self.tables)
            .map(|(r, table)| {
                let mut r = r.clone();
                table.inverse(&mut r);
                r
            })
            .collect();
        let mut out = RingPoly::zero(self.n, log_q);
        let limbs = out.limbs;
        let mask = top_mask(log_q);
        let mut digits = vec![0u64; t];
        for i in 0..self.n {
            digits[0] = coeffs[0][i];
            for k in 1..t {
                let p = self.tables[k].modulus();
                let mut acc = digits[0] % p;
                for j in 1..k {
                    acc = add_mod(acc, mul_mod(digits[j] % p, self.prefix_mod[k][j], p), p);
                }
                digits[k] = mul_mod(sub_mod(coeffs[k][i], acc, p), self.inv[k], p);
            }
            let dst = out.coeff_mut(i);
            for (k, &d) in digits.iter().enumerate() {
                mul_add_truncated(dst, &self.prefix[k], d);
            }
            let top = self.tables[t - 1].modulus();
            if digits[t - 1] > top / 2 {
                sub_truncated(dst, &self.prefix[t]);
            }
            dst[limbs - 1] &= mask;
        }
        out
    }

    pub fn mul(&self, a: &RingPoly, b: &RingPoly, log_q: u32) -> Result<RingPoly> {
        let t = self.primes_needed(a.log_q, b.log_q)?;
        Ok(self.backward(&self.pointwise(&self.forward(a, t), &self.forward(b, t)), log_q))
    }
}

/// `dst = -src` modulo the width given by `mask` on the top limb.
fn negate_into(dst: &mut [u64], src: &[u64], mask: u64) {
    let mut borrow = false;
    for (d, &x) in dst.iter_mut().zip(src) {
        let (d1, b1) = 0u64.overflowing_sub(x);
        let (d2, b2) = d1.overflowing_sub(borrow as u64);
        *d = d2;
        borrow = b1 || b2;
    }
    if let Some(last) = dst.last_mut() {
        *last &= mask;
    }
}

/// `dst += src * k`, wrapping at the width of `dst`.
fn mul_add_truncated(dst: &mut [u64], src: &[u64], k: u64) {
    let mut carry = 0u128;
    for (idx, d) in dst.iter_mut().enumerate() {
        let s = src.get(idx).copied().unwrap_or(0) as u128;
        let v = *d as u128 + s * k as u128 + carry;
        *d = v as u64;
        carry = v >> 64;
    }
}

/// `dst -= src`, wrapping at the width of `dst`.
fn sub_truncated(dst: &mut [u64], src: &[u64]) {
    let mut borrow = false;
    for (idx, d) in dst.iter_mut().enumerate() {
        let s = src.get(idx).copied().unwrap_or(0);
        let (d1, b1) = d.overflowing_sub(s);
        let (d2, b2) = d1.overflowing_sub(borrow as u64);
        *d = d2;
        borrow = b1 || b2;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn to_big(p: &RingPoly, i: usize) -> BigInt {
        BigInt::from(BigUint::new(p.coeff(i).iter().flat_map(|&x| [x as u32, (x >> 32) as u32]).collect()))
    }

    fn random_poly(rng: &mut ChaCha20Rng, n: usize, log_q: u32) -> RingPoly {
        RingPoly::random(n, log_q, rng)
    }

    #[test]
    fn exact_product_matches_bigint_schoolbook() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let n = 16;
        let ctx = CrtContext::new(n, 200, 200).unwrap();
        for (la, lb, lq) in [(130, 150, 140), (200, 200, 200), (64, 64, 100)] {
            let a = random_poly(&mut rng, n, la);
            let b = random_poly(&mut rng, n, lb);
            let got = ctx.mul(&a, &b, lq).unwrap();
            let modulus = BigInt::from(1u8) << lq;
            for k in 0..n {
                let mut want = BigInt::from(0u8);
                for i in 0..n {
                    for j in 0..n {
                        let prod = to_big(&a, i) * to_big(&b, j);
                        if i + j == k {
                            want += prod;
                        } else if i + j == k + n {
                            want -= prod;
                        }
                    }
                }
                let want = ((want % &modulus) + &modulus) % &modulus;
                assert_eq!(to_big(&got, k), want, "coefficient {k}");
            }
        }
    }

    #[test]
    fn add_sub_neg_and_signed() {
        let p = RingPoly::from_signed(&[3, -5, 0, 1 << 70], 100);
        assert_eq!(p.centered_f64(0), 3.0);
        assert_eq!(p.centered_f64(1), -5.0);
        assert_eq!(p.centered_f64(3), 2f64.powi(70));
        let mut q = p.clone();
        q.add_assign(&p.negated()).unwrap();
        assert!(q.is_zero());
        let mut r = p.clone();
        r.sub_assign(&p).unwrap();
        assert!(r.is_zero());
    }

    #[test]
    fn shift_right_rounds_to_nearest() {
        let p = RingPoly::from_signed(&[1000, -1000, 1023, 1025], 90);
        let s = p.shift_right_round(10);
        assert_eq!(s.log_q(), 80);
        assert_eq!(s.centered_f64(0), 1.0);
        assert_eq!(s.centered_f64(1), -1.0);
        assert_eq!(s.centered_f64(2), 1.0);
        assert_eq!(s.centered_f64(3), 1.0);
        let big = RingPoly::from_signed(&[-(3i128 << 100)], 200);
        assert_eq!(big.shift_right_round(70).centered_f64(0), -(3.0 * 2f64.powi(30)));
    }

    #[test]
    fn shift_left_then_right_is_identity() {
        let p = RingPoly::from_signed(&[-7, 12345, 0, 1 << 100], 150);
        let up = p.shifted_left(130, 280);
        assert_eq!(up.log_q(), 280);
        assert_eq!(up.shift_right_round(130), p);
        let up = p.shifted_left(128, 278);
        assert_eq!(up.shift_right_round(128), p);
    }

    #[test]
    fn mod_down_keeps_low_bits() {
        let p = RingPoly::from_signed(&[-7], 150);
        assert_eq!(p.mod_down(70).centered_f64(0), -7.0);
    }

    #[test]
    fn automorphism_is_a_ring_map() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let n = 8;
        let ctx = CrtContext::new(n, 80, 80).unwrap();
        let a = random_poly(&mut rng, n, 80);
        let b = random_poly(&mut rng, n, 80);
        let g = 5;
        let lhs = ctx.mul(&a, &b, 80).unwrap().automorphism(g);
        let rhs = ctx.mul(&a.automorphism(g), &b.automorphism(g), 80).unwrap();
        assert_eq!(lhs, rhs);
    }
}
