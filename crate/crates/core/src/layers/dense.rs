use std::collections::BTreeSet;

use super::activation::apply_activation;
use super::model::{DenseWeights, ModelWeights};
use crate::error::{Error, Result};
use crate::hft::CipherGrid;
use crate::slot_engine::{rotate_sum, rotate_sum_rotations, rotate_sum_terms, Backend, CiphertextMeta, RotSumMode, SlotVec};

/// Moves the reduced value in slot 0 of each neuron's product into slot `j` and sums.
fn gather<B: Backend>(
    engine: &B,
    products: Vec<B::Ciphertext>,
    width: usize,
    bias: &[f64],
    mode: RotSumMode,
) -> Result<B::Ciphertext> {
    let slots = products[0].slot_count();
    let e0 = SlotVec::unit(slots, 0)?;
    let terms = rotate_sum_terms(width, mode);
    let mut acc: Option<B::Ciphertext> = None;
    for (j, p) in products.iter().enumerate() {
        let reduced = rotate_sum(engine, p, terms, mode)?;
        let placed = engine.rotate_right(&engine.mult_pt(&reduced, &e0)?, j)?;
        acc = Some(match acc {
            None => placed,
            Some(a) => engine.add(&a, &placed)?,
        });
    }
    engine.add_plain(&acc.expect("at least one neuron"), &SlotVec::padded(bias, slots)?)
}

fn check_layer(w: &DenseWeights<'_>, in_dim: usize, slots: usize) -> Result<()> {
    if w.in_dim() != in_dim || w.bias.data.len() != w.out_dim() || w.out_dim() == 0 || w.out_dim() > slots {
        return Err(Error::Shape(format!(
            "{}x{} layer with {} biases on {in_dim} inputs in {slots} slots",
            w.out_dim(),
            w.in_dim(),
            w.bias.data.len()
        )));
    }
    Ok(())
}

/// `W x + b` for `x` in the first `w.in_dim()` slots; the result fills the first `w.out_dim()` slots.
///
/// Two levels: the weight product and the unit mask that isolates each neuron.
pub fn dense<B: Backend>(engine: &B, x: &B::Ciphertext, w: &DenseWeights<'_>, mode: RotSumMode) -> Result<B::Ciphertext> {
    let slots = x.slot_count();
    check_layer(w, w.in_dim(), slots)?;
    if rotate_sum_terms(w.in_dim(), mode) > slots {
        return Err(Error::Shape(format!("{} inputs exceed {slots} slots", w.in_dim())));
    }
    let products = w
        .weight
        .rows()
        .map(|row| engine.mult_pt(x, &SlotVec::padded(row, slots)?))
        .collect::<Result<Vec<_>>>()?;
    gather(engine, products, w.in_dim(), &w.bias.data, mode)
}

/// Dense layer over a grid flattened row-major: feature `r * row_len + c` is slot `c` of row `r`.
pub fn flatten_dense<B: Backend>(
    engine: &B,
    g: &CipherGrid<B::Ciphertext>,
    w: &DenseWeights<'_>,
    mode: RotSumMode,
) -> Result<B::Ciphertext> {
    let (slots, width) = (g.slot_count(), g.row_len());
    check_layer(w, g.n_rows() * width, slots)?;
    if rotate_sum_terms(width, mode) > slots {
        return Err(Error::Shape(format!("{width} columns exceed {slots} slots")));
    }
    let products = w
        .weight
        .rows()
        .map(|row| {
            let mut acc: Option<B::Ciphertext> = None;
            for (c, chunk) in g.rows().iter().zip(row.chunks(width)) {
                let p = engine.mult_pt(c, &SlotVec::padded(chunk, slots)?)?;
                acc = Some(match acc {
                    None => p,
                    Some(a) => engine.add(&a, &p)?,
                });
            }
            Ok(acc.expect("grid has rows"))
        })
        .collect::<Result<Vec<_>>>()?;
    gather(engine, products, width, &w.bias.data, mode)
}

/// Rotations [`dense`] or [`flatten_dense`] needs for `width` reduced slots and `out_dim` neurons.
pub fn dense_rotations(width: usize, out_dim: usize, slots: usize, mode: RotSumMode) -> BTreeSet<usize> {
    let mut out = rotate_sum_rotations(rotate_sum_terms(width, mode), mode);
    out.extend((1..out_dim).map(|j| slots - j));
    out
}

/// Names of the dense layers in the action head, input side first.
pub fn head_layers(w: &ModelWeights) -> Vec<String> {
    (1..=w.arch().head_hidden.len() + 1).map(|h| format!("head{h}")).collect()
}

/// The action head: dense layers with their configured activations.
pub fn action_head<B: Backend>(engine: &B, latent: &B::Ciphertext, w: &ModelWeights, mode: RotSumMode) -> Result<B::Ciphertext> {
    let mut x = latent.clone();
    for name in head_layers(w) {
        x = dense(engine, &x, &w.dense(&name)?, mode)?;
        x = apply_activation(engine, &x, w.activation(&name)?)?;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::model::Tensor;
    use crate::slot_engine::{KeySet, SimConfig, SimEngine};

    fn engine(slots: usize) -> SimEngine {
        SimEngine::new(KeySet::with_all_rotations(2, slots).unwrap(), SimConfig::default())
    }

    #[test]
    fn identity_and_sum_rows() {
        let e = engine(16);
        let x = e.encrypt(&SlotVec::padded(&[1.0, -2.0, 3.0, 0.5], 16).unwrap()).unwrap();
        let mut eye = vec![0.0; 16];
        for i in 0..4 {
            eye[i * 4 + i] = 1.0;
        }
        let weight = Tensor::new(vec![4, 4], eye).unwrap();
        let bias = Tensor::zeros(vec![4]);
        for mode in [RotSumMode::Naive, RotSumMode::Tree] {
            let y = dense(&e, &x, &DenseWeights { weight: &weight, bias: &bias }, mode).unwrap();
            let out = e.decrypt(&y).unwrap().real_parts();
            assert_eq!(&out[..4], &[1.0, -2.0, 3.0, 0.5]);
            assert!(out[4..].iter().all(|v| v.abs() < 1e-12));
        }
        let ones = Tensor::new(vec![1, 4], vec![1.0; 4]).unwrap();
        let b = Tensor::new(vec![1], vec![0.25]).unwrap();
        let y = dense(&e, &x, &DenseWeights { weight: &ones, bias: &b }, RotSumMode::Naive).unwrap();
        assert!((e.decrypt(&y).unwrap().real_parts()[0] - 2.75).abs() < 1e-12);
    }

    #[test]
    fn flatten_zero_weights_gives_bias() {
        let e = engine(8);
        let g = CipherGrid::encrypt(&e, &[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]], 8).unwrap();
        let weight = Tensor::zeros(vec![2, 6]);
        let bias = Tensor::new(vec![2], vec![0.5, -1.5]).unwrap();
        let y = flatten_dense(&e, &g, &DenseWeights { weight: &weight, bias: &bias }, RotSumMode::Tree).unwrap();
        assert_eq!(&e.decrypt(&y).unwrap().real_parts()[..2], &[0.5, -1.5]);
    }

    #[test]
    fn flatten_one_hot_selects_feature() {
        let e = engine(8);
        let g = CipherGrid::encrypt(&e, &[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]], 8).unwrap();
        let mut data = vec![0.0; 12];
        data[4] = 1.0;
        data[6 + 2] = 1.0;
        let weight = Tensor::new(vec![2, 6], data).unwrap();
        let bias = Tensor::zeros(vec![2]);
        let before = g.level();
        let y = flatten_dense(&e, &g, &DenseWeights { weight: &weight, bias: &bias }, RotSumMode::Naive).unwrap();
        assert_eq!(&e.decrypt(&y).unwrap().real_parts()[..2], &[5.0, 3.0]);
        assert_eq!(before - y.level(), 2);
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        let e = engine(8);
        let x = e.encrypt(&SlotVec::padded(&[1.0, 2.0], 8).unwrap()).unwrap();
        let weight = Tensor::zeros(vec![2, 3]);
        let bias = Tensor::zeros(vec![2]);
        let g = CipherGrid::new(vec![x], 2).unwrap();
        assert!(matches!(
            flatten_dense(&e, &g, &DenseWeights { weight: &weight, bias: &bias }, RotSumMode::Naive),
            Err(Error::Shape(_))
        ));
    }
}
