//! Seeded weights and moving-blob input frames.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::layers::model::{ArchConfig, ModelConfig, ModelWeights, Tensor};
use crate::layers::{ActivationKind, ActivationSpec, Frame};
use crate::reference::{forward_observed, ActivationMode};

const WEIGHT_STREAM: u64 = 1;
const INPUT_STREAM: u64 = 2;
const CALIBRATION_STREAM: u64 = 3;
const CALIBRATION_INPUTS: usize = 16;
/// ReLU scale factor over the largest calibration magnitude.
const RELU_HEADROOM: f64 = 1.25;
/// Largest calibration magnitude allowed into a tanh layer.
const TANH_TARGET: f64 = 1.5;
const BIAS_STD: f64 = 0.05;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn gaussian(rng: &mut ChaCha8Rng, shape: Vec<usize>, std: f64) -> Tensor {
    let normal = Normal::new(0.0, std).expect("positive std");
    let n = shape.iter().product();
    Tensor { shape, data: (0..n).map(|_| normal.sample(rng)).collect() }
}

fn default_activations(arch: &ArchConfig) -> BTreeMap<String, ActivationSpec> {
    ModelWeights::activation_layers(arch)
        .into_iter()
        .map(|name| {
            let spec = if name.starts_with("shared") {
                ActivationSpec::tanh(1.0)
            } else if name == format!("head{}", arch.head_hidden.len() + 1) {
                ActivationSpec::identity()
            } else {
                ActivationSpec::relu(1.0)
            };
            (name, spec)
        })
        .collect()
}

/// Random He-initialized weights with activation ranges calibrated on blob inputs.
pub fn generate_weights(seed: u64, arch: &ArchConfig) -> Result<ModelWeights> {
    arch.validate()?;
    let mut r = rng(seed, WEIGHT_STREAM);
    let mut tensors = BTreeMap::new();
    for (name, shape) in ModelWeights::expected_shapes(arch) {
        let t = if name.ends_with(".bias") {
            gaussian(&mut r, shape, BIAS_STD)
        } else {
            let fan_in: usize = shape[1..].iter().product();
            gaussian(&mut r, shape, (2.0 / fan_in as f64).sqrt())
        };
        tensors.insert(name, t);
    }
    let mut w = ModelWeights {
        config: ModelConfig { arch: arch.clone(), activations: default_activations(arch) },
        tensors,
    };
    let calibration = generate_inputs(seed ^ CALIBRATION_STREAM, arch, CALIBRATION_INPUTS, CALIBRATION_STREAM);
    // tanh rescaling changes everything downstream, so repeat until stable
    let layers = ModelWeights::activation_layers(arch);
    for _ in 0..=layers.len() {
        let peaks = peak_magnitudes(&w, &calibration)?;
        let mut changed = false;
        for name in &layers {
            let spec = w.config.activations.get_mut(name).expect("default activations cover every layer");
            let peak = peaks.get(name).copied().unwrap_or(0.0);
            match spec.kind {
                ActivationKind::ReluCompg => spec.scale_factor = (RELU_HEADROOM * peak).max(1e-3),
                ActivationKind::TanhPoly8 if peak > TANH_TARGET => {
                    let k = TANH_TARGET / peak;
                    for part in ["weight", "bias"] {
                        let t = w.tensors.get_mut(&format!("{name}.{part}")).expect("validated shapes");
                        t.data.iter_mut().for_each(|x| *x *= k);
                    }
                    changed = true;
                }
                _ => {}
            }
        }
        if !changed {
            break;
        }
    }
    w.validate()?;
    Ok(w)
}

fn peak_magnitudes(w: &ModelWeights, inputs: &[Vec<Frame>]) -> Result<BTreeMap<String, f64>> {
    let mut peaks = BTreeMap::<String, f64>::new();
    for frames in inputs {
        forward_observed(frames, w, ActivationMode::Exact, &mut |name, values| {
            let m = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let e = peaks.entry(name.to_string()).or_default();
            *e = e.max(m);
        })?;
    }
    Ok(peaks)
}

/// `count` inputs of Gaussian blobs drifting across the frames.
pub fn generate_inputs(seed: u64, arch: &ArchConfig, count: usize, stream: u64) -> Vec<Vec<Frame>> {
    let mut r = rng(seed, stream);
    let (h, w) = (arch.frame_height as f64, arch.frame_width as f64);
    (0..count)
        .map(|_| {
            let blobs: Vec<[f64; 6]> = (0..r.random_range(1..=3))
                .map(|_| {
                    [
                        r.random_range(0.0..h),
                        r.random_range(0.0..w),
                        r.random_range(-2.0..2.0),
                        r.random_range(-2.0..2.0),
                        r.random_range(2.0..6.0),
                        r.random_range(0.5..1.0),
                    ]
                })
                .collect();
            (0..arch.frames)
                .map(|f| {
                    let t = f as f64;
                    (0..arch.frame_height)
                        .map(|y| {
                            (0..arch.frame_width)
                                .map(|x| {
                                    blobs
                                        .iter()
                                        .map(|&[cy, cx, vy, vx, sigma, amp]| {
                                            let dy = y as f64 - (cy + vy * t);
                                            let dx = x as f64 - (cx + vx * t);
                                            amp * (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp()
                                        })
                                        .sum::<f64>()
                                        .min(1.0)
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Test inputs for a fixture seed.
pub fn fixture_inputs(seed: u64, arch: &ArchConfig, count: usize) -> Vec<Vec<Frame>> {
    generate_inputs(seed, arch, count, INPUT_STREAM)
}

/// Frames as text: one image row per line, a blank line between frames.
pub fn format_frames(frames: &[Frame]) -> String {
    let mut out = String::new();
    for (i, frame) in frames.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "# frame {i}");
        for row in frame {
            let line: Vec<String> = row.iter().map(f64::to_string).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
    }
    out
}

/// Parses [`format_frames`] output; `#` starts a comment line.
pub fn parse_frames(text: &str, arch: &ArchConfig) -> Result<Vec<Frame>> {
    let mut frames: Vec<Frame> = Vec::new();
    let mut current: Frame = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.starts_with('#') {
            continue;
        }
        if line.is_empty() {
            if !current.is_empty() {
                frames.push(std::mem::take(&mut current));
            }
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| Error::Format(format!("line {}: {t:?}: {e}", n + 1))))
            .collect::<Result<Vec<_>>>()?;
        if row.len() != arch.frame_width {
            return Err(Error::Format(format!("line {}: {} values, expected {}", n + 1, row.len(), arch.frame_width)));
        }
        current.push(row);
    }
    if !current.is_empty() {
        frames.push(current);
    }
    if frames.len() != arch.frames || frames.iter().any(|f| f.len() != arch.frame_height) {
        return Err(Error::Format(format!(
            "expected {} frames of {} rows, got {:?}",
            arch.frames,
            arch.frame_height,
            frames.iter().map(Vec::len).collect::<Vec<_>>()
        )));
    }
    Ok(frames)
}

/// Reads every `*.txt` input in `dir`, sorted by file name.
pub fn read_input_dir(dir: &Path, arch: &ArchConfig) -> Result<Vec<Vec<Frame>>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Format(format!("no .txt inputs in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| parse_frames(&fs::read_to_string(p)?, arch).map_err(|e| Error::Format(format!("{}: {e}", p.display()))))
        .collect()
}

/// Writes `weights.json` and `inputs/input_NNN.txt` under `dir`; returns the written paths.
pub fn write_fixtures(dir: &Path, weights: &ModelWeights, inputs: &[Vec<Frame>]) -> Result<Vec<PathBuf>> {
    let input_dir = dir.join("inputs");
    fs::create_dir_all(&input_dir)?;
    let mut written = vec![dir.join("weights.json")];
    fs::write(&written[0], weights.to_json()?)?;
    for (i, frames) in inputs.iter().enumerate() {
        let p = input_dir.join(format!("input_{i:03}.txt"));
        fs::write(&p, format_frames(frames))?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames_text_roundtrip() {
        let arch = ArchConfig::default();
        let frames = fixture_inputs(4, &arch, 1).remove(0);
        let text = format_frames(&frames);
        assert_eq!(parse_frames(&text, &arch).unwrap(), frames);
        assert!(parse_frames("1 2 3\n", &arch).is_err());
    }

    #[test]
    fn inputs_are_bounded_and_seeded() {
        let arch = ArchConfig::default();
        let a = fixture_inputs(9, &arch, 2);
        assert_eq!(a, fixture_inputs(9, &arch, 2));
        assert_ne!(a, fixture_inputs(10, &arch, 2));
        assert!(a.iter().flatten().flatten().flatten().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
