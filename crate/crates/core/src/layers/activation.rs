//! Polynomial activations: a composite sign approximation for ReLU and an
//! odd least-squares polynomial for tanh.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::slot_engine::{sum_all, Backend};

/// `g_1 .. g_4` of the comparison family, odd coefficients of `x, x^3, ...`, in units of 1/1024.
const G_TABLE: [&[f64]; 4] = [
    &[2126.0, -1359.0],
    &[3334.0, -6108.0, 3796.0],
    &[4589.0, -16577.0, 25614.0, -12860.0],
    &[5850.0, -34974.0, 97015.0, -113492.0, 46623.0],
];

fn binomial(n: u64, k: u64) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn odd_to_dense(odd: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; 2 * odd.len()];
    for (k, &c) in odd.iter().enumerate() {
        out[2 * k + 1] = c;
    }
    out
}

/// Power-basis coefficients of `f_n(x) = sum_{i<=n} C(2i,i)/4^i * x (1 - x^2)^i`.
pub fn compg_f(n: usize) -> Vec<f64> {
    let odd: Vec<f64> = (0..=n as u64)
        .map(|k| {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            (k..=n as u64)
                .map(|i| binomial(2 * i, i) / 4f64.powi(i as i32) * binomial(i, k))
                .sum::<f64>()
                * sign
        })
        .collect();
    odd_to_dense(&odd)
}

/// Power-basis coefficients of the tabulated `g_n`, `1 <= n <= 4`.
pub fn compg_g(n: usize) -> Result<Vec<f64>> {
    let odd = G_TABLE
        .get(n.wrapping_sub(1))
        .ok_or_else(|| Error::Model(format!("no g_{n} in the comparison family")))?;
    Ok(odd_to_dense(&odd.iter().map(|c| c / 1024.0).collect::<Vec<_>>()))
}

/// Horner evaluation of power-basis coefficients.
pub fn eval_poly(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// Multiplicative depth of [`eval_poly_encrypted`] for these coefficients.
pub fn poly_depth(coeffs: &[f64]) -> usize {
    match coeffs.iter().rposition(|&c| c != 0.0) {
        None | Some(0) => 0,
        Some(d) => (usize::BITS - d.leading_zeros()) as usize,
    }
}

/// Evaluates a power-basis polynomial on a ciphertext.
///
/// Each monomial `c x^i` is built from the power-of-two powers of `x` named by
/// the bits of `i`, starting with the scalar product on the lowest one, so the
/// depth is `ceil(log2(deg + 1))`.
pub fn eval_poly_encrypted<B: Backend>(engine: &B, x: &B::Ciphertext, coeffs: &[f64]) -> Result<B::Ciphertext> {
    let degree = coeffs.iter().rposition(|&c| c != 0.0).unwrap_or(0);
    let mut powers = vec![x.clone()];
    while (1usize << powers.len()) <= degree {
        let last = powers.last().expect("nonempty");
        powers.push(engine.mult_ct(last, last)?);
    }
    let mut terms = Vec::new();
    for (i, &c) in coeffs.iter().enumerate().skip(1) {
        if c == 0.0 {
            continue;
        }
        let bits: Vec<usize> = (0..usize::BITS as usize).filter(|b| i >> b & 1 == 1).collect();
        let mut term = engine.mult_scalar(&powers[bits[0]], c)?;
        for &b in &bits[1..] {
            term = engine.mult_ct(&term, &powers[b])?;
        }
        terms.push(term);
    }
    let sum = match sum_all(engine, terms)? {
        Some(s) => s,
        None => engine.sub(x, x)?,
    };
    match coeffs.first() {
        Some(&c0) if c0 != 0.0 => engine.add_scalar(&sum, c0),
        _ => Ok(sum),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    ReluCompg,
    TanhPoly8,
    Identity,
}

/// One layer's activation and its approximation parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivationSpec {
    pub kind: ActivationKind,
    /// Largest magnitude seen at this layer's input on calibration data.
    pub scale_factor: f64,
    /// Index `n` of the `g_n`/`f_n` pair used by the sign approximation.
    #[serde(default = "default_compg_degree")]
    pub compg_degree: usize,
    /// Applications of `g_n`, then of `f_n`.
    #[serde(default = "default_compg_g")]
    pub compg_g_iters: usize,
    #[serde(default = "default_compg_f")]
    pub compg_f_iters: usize,
    /// Power-basis coefficients of the tanh polynomial, constant term first.
    #[serde(default)]
    pub tanh_coeffs: Vec<f64>,
}

fn default_compg_degree() -> usize {
    3
}

fn default_compg_g() -> usize {
    3
}

fn default_compg_f() -> usize {
    2
}

/// Relative width of the band around zero where the sign approximation is not trusted.
pub const RELU_DEAD_BAND: f64 = 0.01;

impl ActivationSpec {
    pub fn relu(scale_factor: f64) -> Self {
        Self {
            kind: ActivationKind::ReluCompg,
            scale_factor,
            compg_degree: default_compg_degree(),
            compg_g_iters: default_compg_g(),
            compg_f_iters: default_compg_f(),
            tanh_coeffs: Vec::new(),
        }
    }

    pub fn tanh(scale_factor: f64) -> Self {
        Self { kind: ActivationKind::TanhPoly8, tanh_coeffs: fit_tanh_poly8(), ..Self::relu(scale_factor) }
    }

    pub fn identity() -> Self {
        Self { kind: ActivationKind::Identity, ..Self::relu(1.0) }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ActivationKind::ReluCompg => {
                if !(self.scale_factor > 0.0 && self.scale_factor.is_finite()) {
                    return Err(Error::Model(format!("ReLU scale factor {} must be positive", self.scale_factor)));
                }
                if self.compg_g_iters + self.compg_f_iters == 0 {
                    return Err(Error::Model("sign approximation needs at least one composition".into()));
                }
                compg_g(self.compg_degree)?;
            }
            ActivationKind::TanhPoly8 => {
                if self.tanh_coeffs.len() != 9 || self.tanh_coeffs.iter().any(|c| !c.is_finite()) {
                    return Err(Error::Model("tanh needs 9 finite coefficients".into()));
                }
            }
            ActivationKind::Identity => {}
        }
        Ok(())
    }

    /// The sequence of odd polynomials composed by the sign approximation, with the
    /// input scaling folded into the first and the `(s + 1) / 2` map into the last
    /// (the constant `1/2` is added separately).
    pub fn compg_stages(&self) -> Result<Vec<Vec<f64>>> {
        let g = compg_g(self.compg_degree)?;
        let f = compg_f(self.compg_degree);
        let mut stages: Vec<Vec<f64>> = std::iter::repeat_n(g, self.compg_g_iters)
            .chain(std::iter::repeat_n(f, self.compg_f_iters))
            .collect();
        let inv = 1.0 / self.scale_factor;
        if let Some(first) = stages.first_mut() {
            for (i, c) in first.iter_mut().enumerate() {
                *c *= inv.powi(i as i32);
            }
        }
        if let Some(last) = stages.last_mut() {
            for c in last.iter_mut() {
                *c *= 0.5;
            }
        }
        Ok(stages)
    }

    /// Levels consumed by the encrypted activation.
    pub fn depth(&self) -> Result<usize> {
        Ok(match self.kind {
            ActivationKind::Identity => 0,
            ActivationKind::TanhPoly8 => poly_depth(&self.tanh_coeffs),
            ActivationKind::ReluCompg => self.compg_stages()?.iter().map(|p| poly_depth(p)).sum::<usize>() + 1,
        })
    }

    /// The exact activation.
    pub fn exact(&self, x: f64) -> f64 {
        match self.kind {
            ActivationKind::ReluCompg => x.max(0.0),
            ActivationKind::TanhPoly8 => x.tanh(),
            ActivationKind::Identity => x,
        }
    }

    /// The polynomial stand-in evaluated in the clear.
    pub fn approx(&self, x: f64) -> f64 {
        match self.kind {
            ActivationKind::ReluCompg => {
                let g = compg_g(self.compg_degree).expect("validated");
                let f = compg_f(self.compg_degree);
                let mut u = x / self.scale_factor;
                for _ in 0..self.compg_g_iters {
                    u = eval_poly(&g, u);
                }
                for _ in 0..self.compg_f_iters {
                    u = eval_poly(&f, u);
                }
                x * (u + 1.0) / 2.0
            }
            ActivationKind::TanhPoly8 => eval_poly(&self.tanh_coeffs, x),
            ActivationKind::Identity => x,
        }
    }
}

/// ReLU through `x * (sign(x / s) + 1) / 2` with a composite sign polynomial.
pub fn relu_approx<B: Backend>(engine: &B, c: &B::Ciphertext, spec: &ActivationSpec) -> Result<B::Ciphertext> {
    let mut v = c.clone();
    for stage in spec.compg_stages()? {
        v = eval_poly_encrypted(engine, &v, &stage)?;
    }
    let step = engine.add_scalar(&v, 0.5)?;
    engine.mult_ct(c, &step)
}

pub fn tanh_poly<B: Backend>(engine: &B, c: &B::Ciphertext, spec: &ActivationSpec) -> Result<B::Ciphertext> {
    eval_poly_encrypted(engine, c, &spec.tanh_coeffs)
}

pub fn apply_activation<B: Backend>(engine: &B, c: &B::Ciphertext, spec: &ActivationSpec) -> Result<B::Ciphertext> {
    match spec.kind {
        ActivationKind::ReluCompg => relu_approx(engine, c, spec),
        ActivationKind::TanhPoly8 => tanh_poly(engine, c, spec),
        ActivationKind::Identity => Ok(c.clone()),
    }
}

/// Half-width of the tanh fitting interval.
pub const TANH_RANGE: f64 = 2.0;

/// Degree-8 least-squares fit of tanh on `[-2, 2]` in the Chebyshev basis,
/// returned in the power basis with the even coefficients set to zero.
pub fn fit_tanh_poly8() -> Vec<f64> {
    const DEGREE: usize = 8;
    const NODES: usize = 4001;
    let nodes: Vec<f64> = (0..NODES)
        .map(|j| (std::f64::consts::PI * (j as f64 + 0.5) / NODES as f64).cos())
        .collect();
    // discrete orthogonality of T_k at Chebyshev nodes gives the projection directly
    let cheb: Vec<f64> = (0..=DEGREE)
        .map(|k| {
            let s: f64 = nodes.iter().map(|&t| (TANH_RANGE * t).tanh() * (k as f64 * t.acos()).cos()).sum();
            s * if k == 0 { 1.0 } else { 2.0 } / NODES as f64
        })
        .collect();
    // power coefficients of T_k(t)
    let mut t_prev = vec![0.0; DEGREE + 1];
    let mut t_cur = vec![0.0; DEGREE + 1];
    t_prev[0] = 1.0;
    t_cur[1] = 1.0;
    let mut power_t = vec![0.0; DEGREE + 1];
    for (k, &a) in cheb.iter().enumerate() {
        let tk = match k {
            0 => t_prev.clone(),
            1 => t_cur.clone(),
            _ => {
                let mut next = vec![0.0; DEGREE + 1];
                for i in 0..DEGREE {
                    next[i + 1] += 2.0 * t_cur[i];
                }
                for i in 0..=DEGREE {
                    next[i] -= t_prev[i];
                }
                t_prev = std::mem::replace(&mut t_cur, next);
                t_cur.clone()
            }
        };
        for (p, c) in power_t.iter_mut().zip(&tk) {
            *p += a * c;
        }
    }
    power_t
        .iter()
        .enumerate()
        .map(|(m, &c)| if m % 2 == 0 { 0.0 } else { c / TANH_RANGE.powi(m as i32) })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f3_matches_closed_form() {
        let f3 = compg_f(3);
        let want = [0.0, 35.0 / 16.0, 0.0, -35.0 / 16.0, 0.0, 21.0 / 16.0, 0.0, -5.0 / 16.0];
        for (a, b) in f3.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((eval_poly(&f3, 1.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn composite_sign_meets_target() {
        let spec = ActivationSpec::relu(1.0);
        let g = compg_g(3).unwrap();
        let f = compg_f(3);
        let worst = (0..=10_000)
            .map(|k| 0.01 + 0.99 * k as f64 / 10_000.0)
            .map(|x| {
                let mut u = x;
                for _ in 0..spec.compg_g_iters {
                    u = eval_poly(&g, u);
                }
                for _ in 0..spec.compg_f_iters {
                    u = eval_poly(&f, u);
                }
                (u - 1.0).abs()
            })
            .fold(0.0, f64::max);
        assert!(worst <= 2f64.powi(-7), "worst {worst}");
        assert_eq!(spec.depth().unwrap(), 16);
    }

    #[test]
    fn tanh_fit_quality_and_shape() {
        let c = fit_tanh_poly8();
        assert_eq!(c.len(), 9);
        assert!(c.iter().step_by(2).all(|&x| x == 0.0));
        let worst = (0..2000)
            .map(|k| -2.0 + 4.0 * k as f64 / 1999.0)
            .map(|x| (eval_poly(&c, x) - x.tanh()).abs())
            .fold(0.0, f64::max);
        assert!(worst < 5e-3, "worst {worst}");
        assert_eq!(poly_depth(&c), 3);
    }

    #[test]
    fn depth_formula() {
        assert_eq!(poly_depth(&[1.0]), 0);
        assert_eq!(poly_depth(&[0.0, 1.0]), 1);
        assert_eq!(poly_depth(&[0.0, 0.0, 1.0]), 2);
        assert_eq!(poly_depth(&[0.0, 0.0, 0.0, 1.0]), 2);
        assert_eq!(poly_depth(&[0.0, 0.0, 0.0, 0.0, 1.0]), 3);
    }

    #[test]
    fn encrypted_depth_matches_formula() {
        use crate::slot_engine::{CiphertextMeta, KeySet, SimConfig, SimEngine, SlotVec};
        let e = SimEngine::new(KeySet::with_all_rotations(1, 4).unwrap(), SimConfig::default());
        let x = e.encrypt(&SlotVec::from_real(&[0.5, -0.25, 1.0, 0.0]).unwrap()).unwrap();
        for coeffs in [vec![0.0; 9], vec![0.7], vec![0.1, 2.0], vec![0.0, 1.0, 0.0, -0.5], fit_tanh_poly8()] {
            let y = eval_poly_encrypted(&e, &x, &coeffs).unwrap();
            assert_eq!(x.level() - y.level(), poly_depth(&coeffs), "{coeffs:?}");
            let got = e.decrypt(&y).unwrap().real_parts();
            for (g, v) in got.iter().zip([0.5, -0.25, 1.0, 0.0]) {
                assert!((g - eval_poly(&coeffs, v)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn relu_approx_is_zero_at_zero() {
        let spec = ActivationSpec::relu(3.0);
        assert_eq!(spec.approx(0.0), 0.0);
        assert!((spec.approx(3.0) - 3.0).abs() < 0.03);
        assert!(spec.approx(-3.0).abs() < 0.03);
    }
}
