//! Plaintext forward pass with exact or polynomial activations.
//!
//! Convolution is computed spatially so the reference shares no code with the
//! spectral path it checks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::model::{ArchConfig, ModelWeights, SHARED_LAYERS};
use crate::layers::pack::{concat_frames, Frame};
use crate::layers::ActivationSpec;

/// Which activation each layer applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActivationMode {
    Exact,
    Poly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockOutput {
    pub name: String,
    pub values: Vec<f64>,
}

/// The packed input image and every block's flattened output, in order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockTrace {
    pub input: Vec<f64>,
    pub blocks: Vec<BlockOutput>,
}

impl BlockTrace {
    pub fn output(&self, name: &str) -> Result<&[f64]> {
        self.blocks
            .iter()
            .find(|b| b.name == name)
            .map(|b| b.values.as_slice())
            .ok_or_else(|| Error::Model(format!("trace has no block {name}")))
    }

    /// What block `name` consumed: the previous block's output or the input image.
    pub fn input_of(&self, name: &str) -> Result<&[f64]> {
        let i = self
            .blocks
            .iter()
            .position(|b| b.name == name)
            .ok_or_else(|| Error::Model(format!("trace has no block {name}")))?;
        Ok(if i == 0 { &self.input } else { &self.blocks[i - 1].values })
    }

    /// Final network output.
    pub fn final_output(&self) -> &[f64] {
        self.blocks.last().map_or(&[], |b| b.values.as_slice())
    }
}

/// Valid cross-correlation of an `h x w` image with a `k x k` filter, subsampled by `stride`.
pub fn conv2d_spatial(image: &[f64], h: usize, w: usize, filter: &[f64], kernel: usize, stride: usize) -> Vec<f64> {
    let (vh, vw) = (h + 1 - kernel, w + 1 - kernel);
    let (oh, ow) = (vh.div_ceil(stride), vw.div_ceil(stride));
    let mut out = Vec::with_capacity(oh * ow);
    for i in 0..oh {
        for j in 0..ow {
            let mut acc = 0.0;
            for a in 0..kernel {
                for b in 0..kernel {
                    acc += filter[a * kernel + b] * image[(i * stride + a) * w + j * stride + b];
                }
            }
            out.push(acc);
        }
    }
    out
}

/// `W x + b`.
pub fn matvec(weight: &[f64], bias: &[f64], x: &[f64]) -> Vec<f64> {
    weight.chunks(x.len()).zip(bias).map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b).collect()
}

fn activate(spec: &ActivationSpec, mode: ActivationMode, values: &mut [f64]) {
    for v in values {
        *v = match mode {
            ActivationMode::Exact => spec.exact(*v),
            ActivationMode::Poly => spec.approx(*v),
        };
    }
}

/// Receives each activation layer's name and its pre-activation values.
pub type Observer<'a> = &'a mut dyn FnMut(&str, &[f64]);

fn dense_layer(w: &ModelWeights, layer: &str, mode: ActivationMode, x: &[f64], observe: &mut Observer<'_>) -> Result<Vec<f64>> {
    let d = w.dense(layer)?;
    if d.in_dim() != x.len() {
        return Err(Error::Shape(format!("{layer} takes {} inputs, got {}", d.in_dim(), x.len())));
    }
    let mut y = matvec(&d.weight.data, &d.bias.data, x);
    observe(layer, &y);
    activate(w.activation(layer)?, mode, &mut y);
    Ok(y)
}

/// Runs the network on `frames`, recording each block's output.
pub fn forward(frames: &[Frame], w: &ModelWeights, mode: ActivationMode) -> Result<BlockTrace> {
    forward_observed(frames, w, mode, &mut |_, _| {})
}

/// [`forward`] that also reports every pre-activation to `observe`.
pub fn forward_observed(frames: &[Frame], w: &ModelWeights, mode: ActivationMode, mut observe: Observer<'_>) -> Result<BlockTrace> {
    let arch = w.arch();
    let image = concat_frames(frames, arch.frames, arch.frame_height, arch.frame_width)?;
    let input: Vec<f64> = image.into_iter().flatten().collect();
    let mut blocks = Vec::new();
    let mut x = input.clone();
    for (i, d) in arch.conv_dims().iter().enumerate() {
        let name = ArchConfig::conv_name(i);
        let bias = &w.tensor(&format!("{name}.bias"))?.data;
        let mut y = Vec::with_capacity(d.out_channels * d.out_h * d.out_w);
        for (o, b) in bias.iter().enumerate() {
            let mut acc = vec![*b; d.out_h * d.out_w];
            for c in 0..d.in_channels {
                let plane = &x[c * d.in_h * d.in_w..(c + 1) * d.in_h * d.in_w];
                let part = conv2d_spatial(plane, d.in_h, d.in_w, w.conv_filter(i, o, c)?, arch.kernel, d.stride);
                acc.iter_mut().zip(part).for_each(|(a, p)| *a += p);
            }
            y.extend(acc);
        }
        observe(&name, &y);
        activate(w.activation(&name)?, mode, &mut y);
        blocks.push(BlockOutput { name, values: y.clone() });
        x = y;
    }
    x = dense_layer(w, "feature", mode, &x, &mut observe)?;
    blocks.push(BlockOutput { name: "linear1".into(), values: x.clone() });
    for s in 1..=SHARED_LAYERS {
        x = dense_layer(w, &format!("shared{s}"), mode, &x, &mut observe)?;
        blocks.push(BlockOutput { name: format!("linear{}", s + 1), values: x.clone() });
    }
    for h in 1..=arch.head_hidden.len() + 1 {
        x = dense_layer(w, &format!("head{h}"), mode, &x, &mut observe)?;
    }
    blocks.push(BlockOutput { name: "head".into(), values: x });
    Ok(BlockTrace { input, blocks })
}

/// Exact ReLU and tanh.
pub fn forward_exact(frames: &[Frame], w: &ModelWeights) -> Result<BlockTrace> {
    forward(frames, w, ActivationMode::Exact)
}

/// The polynomial stand-ins the encrypted pipeline evaluates.
pub fn forward_poly(frames: &[Frame], w: &ModelWeights) -> Result<BlockTrace> {
    forward(frames, w, ActivationMode::Poly)
}

/// Mean absolute difference.
pub fn mae_values(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!("cannot compare {} values with {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

/// Per-block mean absolute difference of two traces.
pub fn mae(a: &BlockTrace, b: &BlockTrace) -> Result<Vec<(String, f64)>> {
    if a.blocks.len() != b.blocks.len() {
        return Err(Error::Shape("traces have different block lists".into()));
    }
    a.blocks
        .iter()
        .zip(&b.blocks)
        .map(|(x, y)| {
            if x.name != y.name {
                return Err(Error::Shape(format!("block {} paired with {}", x.name, y.name)));
            }
            Ok((x.name.clone(), mae_values(&x.values, &y.values)?))
        })
        .collect()
}

/// Coefficient of determination `1 - SS_res / SS_tot`.
pub fn r_squared(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() || truth.len() < 2 {
        return Err(Error::Shape(format!("cannot score {} predictions against {} values", pred.len(), truth.len())));
    }
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    if ss_tot == 0.0 {
        return Ok(if ss_res == 0.0 { 1.0 } else { f64::NEG_INFINITY });
    }
    Ok(1.0 - ss_res / ss_tot)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_conv() {
        let image: Vec<f64> = (1..=16).map(f64::from).collect();
        let filter = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -1.0];
        // out(i, j) = x(i, j) - x(i + 2, j + 2) = -10
        assert_eq!(conv2d_spatial(&image, 4, 4, &filter, 3, 1), vec![-10.0; 4]);
        let boxed = conv2d_spatial(&image, 4, 4, &[1.0; 9], 3, 2);
        assert_eq!(boxed, vec![54.0]);
    }

    #[test]
    fn matvec_by_hand() {
        assert_eq!(matvec(&[1.0, 2.0, 3.0, 4.0], &[0.5, -0.5], &[1.0, 1.0]), vec![3.5, 6.5]);
    }

    #[test]
    fn mae_and_r2_arithmetic() {
        assert_eq!(mae_values(&[1.0, 2.0], &[2.0, 4.0]).unwrap(), 1.5);
        assert_eq!(r_squared(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert!(mae_values(&[1.0], &[1.0, 2.0]).is_err());
    }
}
