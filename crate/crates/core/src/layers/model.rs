use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::activation::ActivationSpec;
use crate::error::{Error, Result};

/// Width of the latent vector handed to the action head.
pub const LATENT_DIM: usize = 64;

/// Network dimensions. Everything except the latent width is configurable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub frames: usize,
    pub frame_height: usize,
    pub frame_width: usize,
    /// Slots per row ciphertext; also the row transform size.
    pub row_slots: usize,
    /// Rows of the zero-padded spectral grid; also the column transform size.
    pub grid_rows: usize,
    /// Channel counts, input first: one conv block per consecutive pair.
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub strides: Vec<usize>,
    /// Conventional padding; the valid region starts `2 * pad` slots in.
    pub pad: usize,
    pub latent: usize,
    pub head_hidden: Vec<usize>,
    pub action_dim: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            frames: 3,
            frame_height: 50,
            frame_width: 50,
            row_slots: 256,
            grid_rows: 64,
            conv_channels: vec![1, 8, 16, 16],
            kernel: 3,
            strides: vec![2, 2, 2],
            pad: 1,
            latent: LATENT_DIM,
            head_hidden: vec![64, 64],
            action_dim: 1,
        }
    }
}

/// Shape of one conv block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvDims {
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub stride: usize,
}

impl ArchConfig {
    /// A narrower network with the same depth, for quick runs.
    pub fn reduced() -> Self {
        Self { conv_channels: vec![1, 2, 4, 4], ..Self::default() }
    }

    pub fn input_height(&self) -> usize {
        self.frame_height
    }

    pub fn input_width(&self) -> usize {
        self.frames * self.frame_width
    }

    pub fn conv_dims(&self) -> Vec<ConvDims> {
        let (mut h, mut w) = (self.input_height(), self.input_width());
        let k = self.kernel;
        self.conv_channels
            .windows(2)
            .zip(&self.strides)
            .map(|(ch, &s)| {
                let (vh, vw) = ((h + 1).saturating_sub(k), (w + 1).saturating_sub(k));
                let d = ConvDims {
                    in_channels: ch[0],
                    out_channels: ch[1],
                    in_h: h,
                    in_w: w,
                    out_h: vh.div_ceil(s.max(1)),
                    out_w: vw.div_ceil(s.max(1)),
                    stride: s,
                };
                (h, w) = (d.out_h, d.out_w);
                d
            })
            .collect()
    }

    /// Flattened feature count after the last conv block.
    pub fn flat_features(&self) -> usize {
        self.conv_dims().last().map_or(0, |d| d.out_channels * d.out_h * d.out_w)
    }

    /// Conv block `index` (0-based) as it appears in tensor and activation names.
    pub fn conv_name(index: usize) -> String {
        format!("conv{}", index + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Model(m));
        if self.latent != LATENT_DIM {
            return bad(format!("latent dimension must be {LATENT_DIM}, got {}", self.latent));
        }
        if !self.row_slots.is_power_of_two() || !self.grid_rows.is_power_of_two() || self.grid_rows < 2 {
            return bad("row_slots and grid_rows must be powers of two".into());
        }
        if self.conv_channels.len() < 2 || self.conv_channels[0] != 1 {
            return bad("need a single input channel and at least one conv block".into());
        }
        if self.strides.len() + 1 != self.conv_channels.len() || self.strides.contains(&0) {
            return bad("one positive stride per conv block".into());
        }
        if self.kernel == 0 || 2 * self.pad != self.kernel - 1 {
            return bad(format!("pad {} does not centre a {}-tap kernel", self.pad, self.kernel));
        }
        if self.input_width() > self.row_slots || self.input_height() > self.grid_rows {
            return bad(format!(
                "{}x{} input does not fit the {}x{} spectral grid",
                self.input_height(),
                self.input_width(),
                self.grid_rows,
                self.row_slots
            ));
        }
        if self.grid_rows > self.row_slots {
            return bad("grid_rows must not exceed row_slots".into());
        }
        for (i, d) in self.conv_dims().iter().enumerate() {
            if d.in_h < self.kernel || d.in_w < self.kernel || d.out_h == 0 || d.out_w == 0 {
                return bad(format!("conv{} input {}x{} is smaller than the kernel", i + 1, d.in_h, d.in_w));
            }
        }
        let widest = self.head_hidden.iter().chain([&self.latent, &self.action_dim]).copied().max().unwrap_or(0);
        if widest > self.row_slots || self.action_dim == 0 || self.head_hidden.contains(&0) {
            return bad("dense widths must be positive and fit one ciphertext".into());
        }
        Ok(())
    }
}

/// Row-major tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!("shape {shape:?} does not hold {} values", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![0.0; n] }
    }

    /// Rows of a rank-2 tensor.
    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.shape.last().copied().unwrap_or(1).max(1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(flatten)]
    pub arch: ArchConfig,
    /// Keyed by layer name: `conv{i}`, `feature`, `shared{i}`, `head{i}`.
    pub activations: BTreeMap<String, ActivationSpec>,
}

/// Weights file: a config object plus named row-major tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelWeights {
    pub config: ModelConfig,
    pub tensors: BTreeMap<String, Tensor>,
}

/// A dense layer view: `weight` is `[out, in]`.
#[derive(Clone, Copy, Debug)]
pub struct DenseWeights<'a> {
    pub weight: &'a Tensor,
    pub bias: &'a Tensor,
}

impl DenseWeights<'_> {
    pub fn out_dim(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape[1]
    }
}

/// Number of shared linear blocks after the feature extractor.
pub const SHARED_LAYERS: usize = 2;

impl ModelWeights {
    pub fn arch(&self) -> &ArchConfig {
        &self.config.arch
    }

    /// Expected tensor shapes for the configured architecture.
    pub fn expected_shapes(arch: &ArchConfig) -> BTreeMap<String, Vec<usize>> {
        let mut out = BTreeMap::new();
        let k = arch.kernel;
        for (i, d) in arch.conv_dims().iter().enumerate() {
            let name = ArchConfig::conv_name(i);
            out.insert(format!("{name}.weight"), vec![d.out_channels, d.in_channels, k, k]);
            out.insert(format!("{name}.bias"), vec![d.out_channels]);
        }
        let mut dense = |name: &str, o: usize, i: usize| {
            out.insert(format!("{name}.weight"), vec![o, i]);
            out.insert(format!("{name}.bias"), vec![o]);
        };
        dense("feature", arch.latent, arch.flat_features());
        for s in 1..=SHARED_LAYERS {
            dense(&format!("shared{s}"), arch.latent, arch.latent);
        }
        dense("actor_out", arch.action_dim, arch.latent);
        let mut prev = arch.latent;
        for (h, &width) in arch.head_hidden.iter().chain([&arch.action_dim]).enumerate() {
            dense(&format!("head{}", h + 1), width, prev);
            prev = width;
        }
        out
    }

    /// Layer names that carry an activation, in evaluation order.
    pub fn activation_layers(arch: &ArchConfig) -> Vec<String> {
        let mut names: Vec<String> = (0..arch.conv_dims().len()).map(ArchConfig::conv_name).collect();
        names.push("feature".into());
        names.extend((1..=SHARED_LAYERS).map(|s| format!("shared{s}")));
        names.extend((1..=arch.head_hidden.len() + 1).map(|h| format!("head{h}")));
        names
    }

    pub fn validate(&self) -> Result<()> {
        self.arch().validate()?;
        let expected = Self::expected_shapes(self.arch());
        for (name, shape) in &expected {
            let t = self.tensors.get(name).ok_or_else(|| Error::Model(format!("missing tensor {name}")))?;
            if &t.shape != shape || t.data.len() != shape.iter().product::<usize>() {
                return Err(Error::Model(format!("tensor {name} has shape {:?}, expected {shape:?}", t.shape)));
            }
            if t.data.iter().any(|x| !x.is_finite()) {
                return Err(Error::Model(format!("tensor {name} holds non-finite values")));
            }
        }
        if let Some(extra) = self.tensors.keys().find(|k| !expected.contains_key(*k)) {
            return Err(Error::Model(format!("unexpected tensor {extra}")));
        }
        for name in Self::activation_layers(self.arch()) {
            self.activation(&name)?.validate()?;
        }
        Ok(())
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors.get(name).ok_or_else(|| Error::Model(format!("missing tensor {name}")))
    }

    pub fn dense(&self, layer: &str) -> Result<DenseWeights<'_>> {
        Ok(DenseWeights { weight: self.tensor(&format!("{layer}.weight"))?, bias: self.tensor(&format!("{layer}.bias"))? })
    }

    pub fn activation(&self, layer: &str) -> Result<&ActivationSpec> {
        self.config
            .activations
            .get(layer)
            .ok_or_else(|| Error::Model(format!("no activation configured for {layer}")))
    }

    /// Conv filter `[out][in]` as a `k x k` row-major slice.
    pub fn conv_filter(&self, block: usize, out_ch: usize, in_ch: usize) -> Result<&[f64]> {
        let t = self.tensor(&format!("{}.weight", ArchConfig::conv_name(block)))?;
        let k = t.shape[2];
        let start = (out_ch * t.shape[1] + in_ch) * k * k;
        t.data
            .get(start..start + k * k)
            .ok_or_else(|| Error::Shape(format!("no filter ({out_ch}, {in_ch}) in conv{}", block + 1)))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let w: Self = serde_json::from_str(text)?;
        w.validate()?;
        Ok(w)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// The same weights with every activation replaced by the identity.
    pub fn with_identity_activations(&self) -> Self {
        let mut w = self.clone();
        for spec in w.config.activations.values_mut() {
            *spec = ActivationSpec::identity();
        }
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_dims() {
        let a = ArchConfig::default();
        a.validate().unwrap();
        let dims: Vec<(usize, usize)> = a.conv_dims().iter().map(|d| (d.out_h, d.out_w)).collect();
        assert_eq!(dims, vec![(24, 74), (11, 36), (5, 17)]);
        assert_eq!(a.flat_features(), 1360);
    }

    #[test]
    fn latent_must_be_64() {
        let a = ArchConfig { latent: 32, ..ArchConfig::default() };
        assert!(matches!(a.validate(), Err(Error::Model(_))));
    }

    #[test]
    fn tensor_shape_checked() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.rows().collect::<Vec<_>>(), vec![&[1.0, 2.0][..], &[3.0, 4.0][..]]);
    }
}
