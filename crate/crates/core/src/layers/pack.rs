use super::model::ArchConfig;
use crate::error::{Error, Result};
use crate::hft::CipherGrid;
use crate::slot_engine::{Backend, SlotVec};

/// One grayscale frame, row-major.
pub type Frame = Vec<Vec<f64>>;

/// Concatenates frames side by side: row `r` is frame 0's row `r`, then frame 1's, and so on.
pub fn concat_frames(frames: &[Frame], count: usize, height: usize, width: usize) -> Result<Vec<Vec<f64>>> {
    if frames.len() != count {
        return Err(Error::Shape(format!("expected {count} frames, got {}", frames.len())));
    }
    for (i, f) in frames.iter().enumerate() {
        if f.len() != height || f.iter().any(|r| r.len() != width) {
            return Err(Error::Shape(format!("frame {i} is not {height}x{width}")));
        }
        if f.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Shape(format!("frame {i} holds non-finite values")));
        }
    }
    Ok((0..height).map(|r| frames.iter().flat_map(|f| f[r].iter().copied()).collect()).collect())
}

/// Encrypts the concatenated frames one row per ciphertext, zero-padded to `slots`.
pub fn pack_input<B: Backend>(engine: &B, frames: &[Frame], arch: &ArchConfig) -> Result<CipherGrid<B::Ciphertext>> {
    let image = concat_frames(frames, arch.frames, arch.frame_height, arch.frame_width)?;
    if arch.input_width() > arch.row_slots {
        return Err(Error::Shape(format!("row of {} values exceeds {} slots", arch.input_width(), arch.row_slots)));
    }
    CipherGrid::encrypt(engine, &image, arch.row_slots)
}

/// Splits a decrypted grid back into `count` frames of `width` columns.
pub fn unpack_frames(rows: &[Vec<f64>], count: usize, width: usize) -> Vec<Frame> {
    (0..count)
        .map(|f| rows.iter().map(|r| r[f * width..(f + 1) * width].to_vec()).collect())
        .collect()
}

/// Encrypts a vector into the first slots of one ciphertext.
pub fn pack_vector<B: Backend>(engine: &B, values: &[f64], slots: usize) -> Result<B::Ciphertext> {
    engine.encrypt(&SlotVec::padded(values, slots)?)
}

/// Encrypts a `[channels][h][w]` tensor as one grid per channel.
pub fn pack_channels<B: Backend>(
    engine: &B,
    data: &[f64],
    channels: usize,
    h: usize,
    w: usize,
    slots: usize,
) -> Result<Vec<CipherGrid<B::Ciphertext>>> {
    if data.len() != channels * h * w {
        return Err(Error::Shape(format!("{} values do not form {channels}x{h}x{w}", data.len())));
    }
    data.chunks(h * w)
        .map(|ch| {
            let rows: Vec<Vec<f64>> = ch.chunks(w).map(<[f64]>::to_vec).collect();
            CipherGrid::encrypt(engine, &rows, slots)
        })
        .collect()
}

/// Decrypts one grid per channel into a flat `[channels][h][w]` vector.
pub fn unpack_channels<B: Backend>(engine: &B, grids: &[CipherGrid<B::Ciphertext>]) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for g in grids {
        for row in g.decrypt(engine)? {
            out.extend(row);
        }
    }
    Ok(out)
}

/// Decrypts the first `len` slots of a ciphertext.
pub fn unpack_vector<B: Backend>(engine: &B, c: &B::Ciphertext, len: usize) -> Result<Vec<f64>> {
    Ok(engine.decrypt(c)?.real_parts()[..len].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slot_engine::{KeySet, SimConfig, SimEngine};

    fn engine() -> SimEngine {
        SimEngine::new(KeySet::generate(0, 256, []).unwrap(), SimConfig::default())
    }

    #[test]
    fn constant_frames_layout() {
        let e = engine();
        let frames: Vec<Frame> = (1..=3).map(|v| vec![vec![v as f64; 50]; 50]).collect();
        let g = pack_input(&e, &frames, &ArchConfig::default()).unwrap();
        assert_eq!(g.n_rows(), 50);
        for c in g.rows() {
            let slots = e.decrypt(c).unwrap().real_parts();
            let mut want = vec![1.0; 50];
            want.extend([2.0; 50]);
            want.extend([3.0; 50]);
            want.extend([0.0; 106]);
            assert_eq!(slots, want);
        }
    }

    #[test]
    fn wrong_frame_count_or_shape() {
        let e = engine();
        let two: Vec<Frame> = vec![vec![vec![0.0; 50]; 50]; 2];
        assert!(concat_frames(&two, 3, 50, 50).is_err());
        let ragged: Vec<Frame> = vec![vec![vec![0.0; 50]; 49]; 3];
        assert!(matches!(pack_input(&e, &ragged, &ArchConfig::default()), Err(Error::Shape(_))));
    }

    #[test]
    fn random_roundtrip() {
        let e = engine();
        let frames: Vec<Frame> = (0..3)
            .map(|f| (0..50).map(|r| (0..50).map(|c| ((f * 7 + r * 3 + c) as f64 * 0.37).sin()).collect()).collect())
            .collect();
        let g = pack_input(&e, &frames, &ArchConfig::default()).unwrap();
        assert_eq!(unpack_frames(&g.decrypt(&e).unwrap(), 3, 50), frames);
    }
}
