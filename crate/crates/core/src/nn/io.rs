//! `NPW1` weight files.
//!
//! Layout (little-endian): magic `NPW1`, `u16` layer count, then per layer
//! `u32 in, u32 out, u8 activation, u8 tie` (`0xFF` = owns its matrix, else
//! the index of the layer whose matrix is reused transposed), followed by the
//! parameter blocks: per layer the owned `out x in` matrix (row-major, absent
//! for tied layers) and then the bias.

use ndarray::{Array1, Array2};

use super::{Activation, DenseLayer, MlpModel, NnError, Weights};

const MAGIC: &[u8; 4] = b"NPW1";
const NO_TIE: u8 = 0xFF;

pub fn save_weights(model: &MlpModel) -> Result<Vec<u8>, NnError> {
    if !model.is_finite() {
        return Err(NnError::NonFinite);
    }
    let count = u16::try_from(model.layers.len())
        .map_err(|_| NnError::InvalidStack("too many layers".into()))?;
    let mut out = Vec::with_capacity(8 + model.parameter_count() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&count.to_le_bytes());
    for layer in &model.layers {
        out.extend_from_slice(&(layer.in_dim as u32).to_le_bytes());
        out.extend_from_slice(&(layer.out_dim as u32).to_le_bytes());
        out.push(layer.activation.tag());
        out.push(match layer.tie() {
            Some(src) => u8::try_from(src)
                .ok()
                .filter(|&s| s != NO_TIE)
                .ok_or_else(|| NnError::InvalidStack("tie index too large".into()))?,
            None => NO_TIE,
        });
    }
    for block in model.param_blocks() {
        for v in block {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn load_weights(bytes: &[u8]) -> Result<MlpModel, NnError> {
    let corrupt = |m: &str| NnError::CorruptHeader(m.to_string());
    if bytes.len() < 6 || &bytes[..4] != MAGIC {
        return Err(corrupt("missing NPW1 magic"));
    }
    let count = u16::from_le_bytes([bytes[4], bytes[5]]) as usize;
    let header_len = 6 + count * 10;
    if count == 0 || bytes.len() < header_len {
        return Err(corrupt("truncated layer table"));
    }
    let mut shapes = Vec::with_capacity(count);
    for l in 0..count {
        let e = &bytes[6 + l * 10..6 + (l + 1) * 10];
        let in_dim = u32::from_le_bytes([e[0], e[1], e[2], e[3]]) as usize;
        let out_dim = u32::from_le_bytes([e[4], e[5], e[6], e[7]]) as usize;
        let activation =
            Activation::from_tag(e[8]).ok_or_else(|| corrupt("unknown activation tag"))?;
        let tie = (e[9] != NO_TIE).then_some(e[9] as usize);
        if in_dim == 0 || out_dim == 0 || in_dim > 1 << 20 || out_dim > 1 << 20 {
            return Err(corrupt("implausible layer dimensions"));
        }
        shapes.push((in_dim, out_dim, activation, tie));
    }
    let expected: usize = header_len
        + 4 * shapes
            .iter()
            .map(|&(i, o, _, tie)| if tie.is_some() { o } else { i * o + o })
            .sum::<usize>();
    if bytes.len() != expected {
        return Err(NnError::SizeMismatch {
            expected,
            found: bytes.len(),
        });
    }
    let mut values = bytes[header_len..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    let mut take = |n: usize| -> Vec<f32> { values.by_ref().take(n).collect() };
    let mut layers = Vec::with_capacity(count);
    for &(in_dim, out_dim, activation, tie) in &shapes {
        let weights = match tie {
            Some(src) => Weights::TiedTranspose(src),
            None => Weights::Own(
                Array2::from_shape_vec((out_dim, in_dim), take(in_dim * out_dim))
                    .map_err(|_| corrupt("weight block shape"))?,
            ),
        };
        let bias = Array1::from_vec(take(out_dim));
        layers.push(DenseLayer {
            in_dim,
            out_dim,
            activation,
            weights,
            bias,
        });
    }
    let model = MlpModel { layers };
    model
        .validate()
        .map_err(|e| NnError::CorruptHeader(e.to_string()))?;
    if !model.is_finite() {
        return Err(NnError::NonFinite);
    }
    Ok(model)
}
