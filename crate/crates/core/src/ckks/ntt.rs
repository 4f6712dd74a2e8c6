//! Negacyclic number-theoretic transforms over word-sized primes.

use crate::error::{Error, Result};

pub(crate) fn mul_mod(a: u64, b: u64, p: u64) -> u64 {
    ((a as u128 * b as u128) % p as u128) as u64
}

pub(crate) fn add_mod(a: u64, b: u64, p: u64) -> u64 {
    let s = a + b;
    if s >= p {
        s - p
    } else {
        s
    }
}

pub(crate) fn sub_mod(a: u64, b: u64, p: u64) -> u64 {
    if a >= b {
        a - b
    } else {
        a + p - b
    }
}

pub(crate) fn pow_mod(mut base: u64, mut exp: u64, p: u64) -> u64 {
    let mut acc = 1 % p;
    base %= p;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base, p);
        }
        base = mul_mod(base, base, p);
        exp >>= 1;
    }
    acc
}

/// Deterministic Miller-Rabin for 64-bit integers.
pub(crate) fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for &b in &BASES {
        if n % b == 0 {
            return n == b;
        }
    }
    let s = (n - 1).trailing_zeros();
    let d = (n - 1) >> s;
    'witness: for &a in &BASES {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// The `count` largest primes `p < 2^61` with `p = 1 mod two_n`, all above `2^60`.
pub fn ntt_primes(count: usize, two_n: u64) -> Result<Vec<u64>> {
    let mut out = Vec::with_capacity(count);
    let mut k = ((1u64 << 61) - 1) / two_n;
    while out.len() < count {
        let p = k * two_n + 1;
        if p <= 1u64 << 60 {
            return Err(Error::Params(format!("ran out of NTT primes for ring degree {}", two_n / 2)));
        }
        if is_prime(p) {
            out.push(p);
        }
        k -= 1;
    }
    Ok(out)
}

fn bit_reverse(mut i: usize, bits: u32) -> usize {
    let mut r = 0;
    for _ in 0..bits {
        r = (r << 1) | (i & 1);
        i >>= 1;
    }
    r
}

/// Twiddle tables for the negacyclic NTT of length `n` modulo `p`. Immutable once built.
#[derive(Clone, Debug)]
pub struct NttTable {
    p: u64,
    n: usize,
    psi_rev: Vec<u64>,
    psi_inv_rev: Vec<u64>,
    n_inv: u64,
}

impl NttTable {
    pub fn new(p: u64, n: usize) -> Result<Self> {
        if !n.is_power_of_two() || n < 2 || (p - 1) % (2 * n as u64) != 0 {
            return Err(Error::Params(format!("no negacyclic NTT of length {n} modulo {p}")));
        }
        let e = (p - 1) / (2 * n as u64);
        let psi = (2..)
            .map(|x| pow_mod(x, e, p))
            .find(|&c| pow_mod(c, n as u64, p) == p - 1)
            .expect("p = 1 mod 2n has a primitive 2n-th root");
        let psi_inv = pow_mod(psi, p - 2, p);
        let bits = n.trailing_zeros();
        let mut psi_rev = vec![0; n];
        let mut psi_inv_rev = vec![0; n];
        let (mut a, mut b) = (1u64, 1u64);
        for i in 0..n {
            let r = bit_reverse(i, bits);
            psi_rev[r] = a;
            psi_inv_rev[r] = b;
            a = mul_mod(a, psi, p);
            b = mul_mod(b, psi_inv, p);
        }
        Ok(Self { p, n, psi_rev, psi_inv_rev, n_inv: pow_mod(n as u64, p - 2, p) })
    }

    pub fn modulus(&self) -> u64 {
        self.p
    }

    /// In-place forward transform; output in bit-reversed order.
    pub fn forward(&self, a: &mut [u64]) {
        let p = self.p;
        let mut t = self.n;
        let mut m = 1;
        while m < self.n {
            t /= 2;
            for i in 0..m {
                let s = self.psi_rev[m + i];
                let j1 = 2 * i * t;
                for j in j1..j1 + t {
                    let u = a[j];
                    let v = mul_mod(a[j + t], s, p);
                    a[j] = add_mod(u, v, p);
                    a[j + t] = sub_mod(u, v, p);
                }
            }
            m *= 2;
        }
    }

    /// In-place inverse of [`NttTable::forward`].
    pub fn inverse(&self, a: &mut [u64]) {
        let p = self.p;
        let mut t = 1;
        let mut m = self.n;
        while m > 1 {
            let h = m / 2;
            let mut j1 = 0;
            for i in 0..h {
                let s = self.psi_inv_rev[h + i];
                for j in j1..j1 + t {
                    let u = a[j];
                    let v = a[j + t];
                    a[j] = add_mod(u, v, p);
                    a[j + t] = mul_mod(sub_mod(u, v, p), s, p);
                }
                j1 += 2 * t;
            }
            t *= 2;
            m = h;
        }
        for x in a.iter_mut() {
            *x = mul_mod(*x, self.n_inv, p);
        }
    }
}

/// Quadratic-time negacyclic product modulo `p`; the oracle for the NTT path.
pub fn negacyclic_schoolbook(a: &[u64], b: &[u64], p: u64) -> Vec<u64> {
    let n = a.len();
    let mut out = vec![0u64; n];
    for i in 0..n {
        for j in 0..n {
            let prod = mul_mod(a[i], b[j], p);
            let k = i + j;
            if k < n {
                out[k] = add_mod(out[k], prod, p);
            } else {
                out[k - n] = sub_mod(out[k - n], prod, p);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn primality() {
        assert!(is_prime(2));
        assert!(is_prime(998_244_353));
        assert!(!is_prime(561));
        assert!(is_prime((1u64 << 61) - 1));
        assert!(!is_prime((1u64 << 61) + 1));
    }

    #[test]
    fn primes_are_ntt_friendly() {
        let ps = ntt_primes(4, 1 << 13).unwrap();
        assert_eq!(ps.len(), 4);
        for p in ps {
            assert!(is_prime(p));
            assert_eq!((p - 1) % (1 << 13), 0);
            assert!(p > 1 << 60 && p < 1 << 61);
        }
    }

    #[test]
    fn ntt_matches_schoolbook() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for log_n in [1u32, 3, 6, 8] {
            let n = 1usize << log_n;
            let p = ntt_primes(1, 2 * n as u64).unwrap()[0];
            let table = NttTable::new(p, n).unwrap();
            let a: Vec<u64> = (0..n).map(|_| rng.random_range(0..p)).collect();
            let b: Vec<u64> = (0..n).map(|_| rng.random_range(0..p)).collect();
            let want = negacyclic_schoolbook(&a, &b, p);
            let (mut fa, mut fb) = (a.clone(), b.clone());
            table.forward(&mut fa);
            table.forward(&mut fb);
            let mut prod: Vec<u64> = fa.iter().zip(&fb).map(|(&x, &y)| mul_mod(x, y, p)).collect();
            table.inverse(&mut prod);
            assert_eq!(prod, want);
            table.inverse(&mut fa);
            assert_eq!(fa, a);
        }
    }

    #[test]
    fn x_times_x_pow_n_minus_one_wraps_negatively() {
        let n = 8;
        let p = ntt_primes(1, 16).unwrap()[0];
        let mut a = vec![0; n];
        a[1] = 1;
        let mut b = vec![0; n];
        b[n - 1] = 1;
        let c = negacyclic_schoolbook(&a, &b, p);
        assert_eq!(c[0], p - 1);
    }
}
