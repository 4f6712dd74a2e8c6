//! The network as a sequence of named blocks with static depth and key requirements.

use std::collections::BTreeSet;

use super::activation::apply_activation;
use super::conv::{apply_stride, conv2d_freq, stride_rotations, ConvKernel, ConvSpec, SpectralGeometry};
use super::dense::{action_head, dense, dense_rotations, flatten_dense, head_layers};
use super::model::{ArchConfig, ConvDims, ModelWeights, SHARED_LAYERS};
use super::pack::{pack_channels, pack_vector, unpack_channels, unpack_vector};
use crate::error::{Error, Result};
use crate::hft::CipherGrid;
use crate::slot_engine::{Backend, CiphertextMeta, RotSumMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    /// Conv block by 0-based index: convolution, stride, activation.
    Conv(usize),
    /// Flatten and project to the latent width.
    Feature,
    /// Shared latent layer by 1-based index.
    Shared(usize),
    Head,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub name: String,
    pub kind: BlockKind,
}

/// Encrypted activations between blocks.
#[derive(Clone, Debug)]
pub enum State<C> {
    /// One grid per channel.
    Channels(Vec<CipherGrid<C>>),
    /// A vector in the first `len` slots.
    Vector { ct: C, len: usize },
}

impl<C: CiphertextMeta + Clone + Send + Sync> State<C> {
    /// Lowest remaining level.
    pub fn level(&self) -> usize {
        match self {
            State::Channels(grids) => grids.iter().map(CipherGrid::level).min().unwrap_or(0),
            State::Vector { ct, .. } => ct.level(),
        }
    }
}

/// Plaintext shape of a block boundary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Channels { channels: usize, h: usize, w: usize },
    Vector(usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Channels { channels, h, w } => channels * h * w,
            Shape::Vector(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Weights prepared for encrypted evaluation.
#[derive(Clone, Debug)]
pub struct EncryptedModel {
    weights: ModelWeights,
    geometry: SpectralGeometry,
    kernels: Vec<ConvKernel>,
    rotsum: RotSumMode,
}

impl EncryptedModel {
    pub fn new(weights: ModelWeights, rotsum: RotSumMode) -> Result<Self> {
        weights.validate()?;
        let arch = weights.arch().clone();
        let geometry = SpectralGeometry::new(arch.row_slots, arch.grid_rows)?;
        let kernels = arch
            .conv_dims()
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let name = ArchConfig::conv_name(i);
                let filters = (0..d.out_channels)
                    .map(|o| (0..d.in_channels).map(|c| weights.conv_filter(i, o, c).map(<[f64]>::to_vec)).collect())
                    .collect::<Result<Vec<Vec<_>>>>()?;
                let spec = ConvSpec {
                    kernel: arch.kernel,
                    stride: d.stride,
                    pad: arch.pad,
                    filters,
                    bias: weights.tensor(&format!("{name}.bias"))?.data.clone(),
                };
                ConvKernel::new(spec, &geometry)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { weights, geometry, kernels, rotsum })
    }

    pub fn weights(&self) -> &ModelWeights {
        &self.weights
    }

    pub fn arch(&self) -> &ArchConfig {
        self.weights.arch()
    }

    pub fn rotsum(&self) -> RotSumMode {
        self.rotsum
    }

    pub fn geometry(&self) -> &SpectralGeometry {
        &self.geometry
    }

    /// All blocks in evaluation order.
    pub fn blocks(&self) -> Vec<Block> {
        block_list(self.arch())
    }

    pub fn block(&self, name: &str) -> Result<Block> {
        self.blocks()
            .into_iter()
            .find(|b| b.name == name)
            .ok_or_else(|| Error::Model(format!("unknown block {name}")))
    }

    fn conv_dims(&self, i: usize) -> ConvDims {
        self.arch().conv_dims()[i]
    }

    pub fn input_shape(&self, block: &Block) -> Shape {
        let arch = self.arch();
        match block.kind {
            BlockKind::Conv(i) => {
                let d = self.conv_dims(i);
                Shape::Channels { channels: d.in_channels, h: d.in_h, w: d.in_w }
            }
            BlockKind::Feature => {
                let d = *arch.conv_dims().last().expect("validated");
                Shape::Channels { channels: d.out_channels, h: d.out_h, w: d.out_w }
            }
            BlockKind::Shared(_) | BlockKind::Head => Shape::Vector(arch.latent),
        }
    }

    pub fn output_shape(&self, block: &Block) -> Shape {
        match block.kind {
            BlockKind::Conv(i) => {
                let d = self.conv_dims(i);
                Shape::Channels { channels: d.out_channels, h: d.out_h, w: d.out_w }
            }
            BlockKind::Feature | BlockKind::Shared(_) => Shape::Vector(self.arch().latent),
            BlockKind::Head => Shape::Vector(self.arch().action_dim),
        }
    }

    fn activation_depth(&self, layer: &str) -> Result<usize> {
        self.weights.activation(layer)?.depth()
    }

    /// Levels the block consumes.
    pub fn static_depth(&self, block: &Block) -> Result<usize> {
        Ok(match block.kind {
            BlockKind::Conv(i) => self.geometry.conv_depth() + 1 + self.activation_depth(&ArchConfig::conv_name(i))?,
            BlockKind::Feature => 2 + self.activation_depth("feature")?,
            BlockKind::Shared(s) => 2 + self.activation_depth(&format!("shared{s}"))?,
            BlockKind::Head => head_layers(&self.weights)
                .iter()
                .map(|l| Ok(2 + self.activation_depth(l)?))
                .sum::<Result<usize>>()?,
        })
    }

    /// Rotation keys the block needs.
    pub fn rotations(&self, block: &Block) -> BTreeSet<usize> {
        let arch = self.arch();
        let slots = arch.row_slots;
        match block.kind {
            BlockKind::Conv(i) => {
                let d = self.conv_dims(i);
                let mut out = self.geometry.rotations(d.in_h);
                out.extend(stride_rotations(d.stride, arch.pad, d.out_w));
                out
            }
            BlockKind::Feature => {
                let d = *arch.conv_dims().last().expect("validated");
                dense_rotations(d.out_w, arch.latent, slots, self.rotsum)
            }
            BlockKind::Shared(_) => dense_rotations(arch.latent, arch.latent, slots, self.rotsum),
            BlockKind::Head => {
                let mut out = BTreeSet::new();
                let mut prev = arch.latent;
                for &width in arch.head_hidden.iter().chain([&arch.action_dim]) {
                    out.extend(dense_rotations(prev, width, slots, self.rotsum));
                    prev = width;
                }
                out
            }
        }
    }

    /// Encrypts a plaintext block input laid out as [`EncryptedModel::input_shape`] describes.
    pub fn encrypt_input<B: Backend>(&self, engine: &B, block: &Block, plain: &[f64]) -> Result<State<B::Ciphertext>> {
        let slots = self.arch().row_slots;
        match self.input_shape(block) {
            Shape::Channels { channels, h, w } => Ok(State::Channels(pack_channels(engine, plain, channels, h, w, slots)?)),
            Shape::Vector(len) => {
                if plain.len() != len {
                    return Err(Error::Shape(format!("{} expects {len} inputs, got {}", block.name, plain.len())));
                }
                Ok(State::Vector { ct: pack_vector(engine, plain, slots)?, len })
            }
        }
    }

    pub fn decrypt_state<B: Backend>(&self, engine: &B, state: &State<B::Ciphertext>) -> Result<Vec<f64>> {
        match state {
            State::Channels(grids) => unpack_channels(engine, grids),
            State::Vector { ct, len } => unpack_vector(engine, ct, *len),
        }
    }

    /// Evaluates one block.
    pub fn run_block<B: Backend>(&self, engine: &B, block: &Block, input: State<B::Ciphertext>) -> Result<State<B::Ciphertext>> {
        let arch = self.arch();
        let fail = |what: &str| Error::Shape(format!("{} expects {what}", block.name));
        match (block.kind, input) {
            (BlockKind::Conv(i), State::Channels(grids)) => {
                let d = self.conv_dims(i);
                if grids.len() != d.in_channels || grids.iter().any(|g| g.n_rows() != d.in_h || g.row_len() != d.in_w) {
                    return Err(fail(&format!("{} channels of {}x{}", d.in_channels, d.in_h, d.in_w)));
                }
                let act = self.weights.activation(&ArchConfig::conv_name(i))?;
                let conv = conv2d_freq(engine, &self.geometry, &grids, &self.kernels[i])?;
                let out = conv
                    .iter()
                    .map(|g| apply_stride(engine, g, d.stride, arch.pad)?.map_rows(|c| apply_activation(engine, c, act)))
                    .collect::<Result<Vec<_>>>()?;
                Ok(State::Channels(out))
            }
            (BlockKind::Feature, State::Channels(grids)) => {
                let Shape::Channels { channels, h, w } = self.input_shape(block) else { unreachable!() };
                if grids.len() != channels || grids.iter().any(|g| g.n_rows() != h || g.row_len() != w) {
                    return Err(fail(&format!("{channels} channels of {h}x{w}")));
                }
                let rows: Vec<_> = grids.into_iter().flat_map(CipherGrid::into_rows).collect();
                let flat = CipherGrid::new(rows, w)?;
                let y = flatten_dense(engine, &flat, &self.weights.dense("feature")?, self.rotsum)?;
                let ct = apply_activation(engine, &y, self.weights.activation("feature")?)?;
                Ok(State::Vector { ct, len: arch.latent })
            }
            (BlockKind::Shared(s), State::Vector { ct, len }) if len == arch.latent => {
                let name = format!("shared{s}");
                let y = dense(engine, &ct, &self.weights.dense(&name)?, self.rotsum)?;
                let ct = apply_activation(engine, &y, self.weights.activation(&name)?)?;
                Ok(State::Vector { ct, len })
            }
            (BlockKind::Head, State::Vector { ct, len }) if len == arch.latent => {
                let ct = action_head(engine, &ct, &self.weights, self.rotsum)?;
                Ok(State::Vector { ct, len: arch.action_dim })
            }
            (BlockKind::Conv(_) | BlockKind::Feature, _) => Err(fail("channel grids")),
            _ => Err(fail(&format!("a {}-vector", arch.latent))),
        }
    }
}

/// Block list for an architecture: conv blocks, then `linear1..` and `head`.
pub fn block_list(arch: &ArchConfig) -> Vec<Block> {
    let mut out: Vec<Block> = (0..arch.conv_dims().len())
        .map(|i| Block { name: ArchConfig::conv_name(i), kind: BlockKind::Conv(i) })
        .collect();
    out.push(Block { name: "linear1".into(), kind: BlockKind::Feature });
    out.extend((1..=SHARED_LAYERS).map(|s| Block { name: format!("linear{}", s + 1), kind: BlockKind::Shared(s) }));
    out.push(Block { name: "head".into(), kind: BlockKind::Head });
    out
}
