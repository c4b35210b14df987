//! Attentive Haar downsampling.
//!
//! Each channel of an `N × N × K` map is split by four fixed 2×2 masks into
//! LL/LH/HL/HH sub-bands at half resolution. A small shared gate looks at the
//! global maximum of each sub-band, produces four softmax weights, and the
//! weighted sub-bands are stacked channel-wise into `N/2 × N/2 × 4K`.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `f_LL`, `f_LH`, `f_HL`, `f_HH`, indexed `[band][row][col]`.
pub const HAAR_FILTERS: [[[i32; 2]; 2]; 4] = [
    [[1, 1], [1, 1]],
    [[-1, -1], [1, 1]],
    [[-1, 1], [-1, 1]],
    [[1, -1], [-1, 1]],
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subband {
    LL,
    LH,
    HL,
    HH,
}

impl Subband {
    pub const ALL: [Subband; 4] = [Subband::LL, Subband::LH, Subband::HL, Subband::HH];

    pub fn filter(self) -> [[i32; 2]; 2] {
        HAAR_FILTERS[self as usize]
    }

    /// The mask as a `[2, 2, 1, 1]` convolution kernel.
    pub fn kernel(self) -> Tensor {
        let f = self.filter();
        let data = f.iter().flatten().map(|&v| v as f64).collect();
        Tensor::from_parts(vec![2, 2, 1, 1], data)
    }
}

/// Gram matrix of the flattened filters, in exact integer arithmetic.
pub fn filter_gram() -> [[i32; 4]; 4] {
    let mut gram = [[0; 4]; 4];
    for (a, fa) in HAAR_FILTERS.iter().enumerate() {
        for (b, fb) in HAAR_FILTERS.iter().enumerate() {
            gram[a][b] = fa
                .iter()
                .flatten()
                .zip(fb.iter().flatten())
                .map(|(x, y)| x * y)
                .sum();
        }
    }
    gram
}

/// Four half-resolution sub-bands of one map.
#[derive(Clone, Debug, PartialEq)]
pub struct SubbandStack {
    pub ll: Tensor,
    pub lh: Tensor,
    pub hl: Tensor,
    pub hh: Tensor,
    /// Rows and columns of zero padding added before decomposition.
    pub pad: (usize, usize),
}

impl SubbandStack {
    pub fn bands(&self) -> [&Tensor; 4] {
        [&self.ll, &self.lh, &self.hl, &self.hh]
    }

    pub fn band(&self, b: Subband) -> &Tensor {
        self.bands()[b as usize]
    }

    pub fn energy(&self) -> f64 {
        self.bands().iter().map(|t| t.norm().powi(2)).sum()
    }
}

fn check_map(fm: &Tensor) -> Result<(usize, usize)> {
    match fm.shape() {
        &[h, w] => Ok((h, w)),
        s => Err(Error::dim(format!("expected an [N, N] map, got {s:?}"))),
    }
}

/// Splits an even-sized map into sub-bands by stride-2 convolution with each mask.
pub fn haar_decompose(fm: &Tensor) -> Result<SubbandStack> {
    let (h, w) = check_map(fm)?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dim(format!(
            "haar_decompose needs even dimensions, got {h}x{w}"
        )));
    }
    let mut tape = Tape::new();
    let x = tape.constant(fm.reshape(&[h, w, 1])?);
    let mut bands = Vec::with_capacity(4);
    for b in Subband::ALL {
        let k = tape.constant(b.kernel());
        let y = tape.conv2d(x, k, 2, 0)?;
        bands.push(tape.value(y).reshape(&[h / 2, w / 2])?);
    }
    let [ll, lh, hl, hh]: [Tensor; 4] = bands.try_into().unwrap();
    Ok(SubbandStack {
        ll,
        lh,
        hl,
        hh,
        pad: (0, 0),
    })
}

/// Like [`haar_decompose`], zero-padding an odd bottom row / right column first.
pub fn haar_decompose_padded(fm: &Tensor) -> Result<SubbandStack> {
    let (h, w) = check_map(fm)?;
    let pad = (h % 2, w % 2);
    if pad == (0, 0) {
        return haar_decompose(fm);
    }
    let (ph, pw) = (h + pad.0, w + pad.1);
    let mut padded = Tensor::zeros(&[ph, pw]);
    for y in 0..h {
        padded.data_mut()[y * pw..y * pw + w].copy_from_slice(&fm.data()[y * w..(y + 1) * w]);
    }
    let mut sb = haar_decompose(&padded)?;
    sb.pad = pad;
    Ok(sb)
}

/// Inverts [`haar_decompose`]: each 2×2 block is `Σ band · f_band / 4`.
/// Padding recorded in the stack is cropped off.
pub fn haar_reconstruct(sb: &SubbandStack) -> Result<Tensor> {
    let shape = sb.ll.shape().to_vec();
    if shape.len() != 2 || sb.bands().iter().any(|b| b.shape() != shape.as_slice()) {
        return Err(Error::dim("sub-bands must share one [n, n] shape"));
    }
    let (oh, ow) = (shape[0], shape[1]);
    let (h, w) = (2 * oh, 2 * ow);
    let mut out = Tensor::zeros(&[h, w]);
    for y in 0..oh {
        for x in 0..ow {
            for dy in 0..2 {
                for dx in 0..2 {
                    let v: f64 = Subband::ALL
                        .iter()
                        .map(|&b| sb.band(b).data()[y * ow + x] * b.filter()[dy][dx] as f64)
                        .sum();
                    out.data_mut()[(2 * y + dy) * w + 2 * x + dx] = v / 4.0;
                }
            }
        }
    }
    if sb.pad == (0, 0) {
        return Ok(out);
    }
    let (ch, cw) = (h - sb.pad.0, w - sb.pad.1);
    let data = (0..ch)
        .flat_map(|y| out.data()[y * w..y * w + cw].to_vec())
        .collect();
    Tensor::new(vec![ch, cw], data)
}

/// A 1×1 convolution from the four sub-band maxima to four logits,
/// stored as a `[5, 4]` matrix whose last row is the bias.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionGate {
    pub weights: Tensor,
}

impl AttentionGate {
    pub const SHAPE: [usize; 2] = [5, 4];

    pub fn new(weight: &Tensor, bias: &Tensor) -> Result<Self> {
        if weight.shape() != [4, 4] || bias.len() != 4 {
            return Err(Error::dim("gate needs a [4, 4] weight and a 4-element bias"));
        }
        let mut data = weight.data().to_vec();
        data.extend_from_slice(bias.data());
        Ok(AttentionGate {
            weights: Tensor::from_parts(Self::SHAPE.to_vec(), data),
        })
    }

    pub fn from_tensor(weights: Tensor) -> Result<Self> {
        if weights.shape() != Self::SHAPE {
            return Err(Error::dim(format!(
                "gate tensor must be {:?}, got {:?}",
                Self::SHAPE,
                weights.shape()
            )));
        }
        Ok(AttentionGate { weights })
    }

    pub fn zeros() -> Self {
        AttentionGate {
            weights: Tensor::zeros(&Self::SHAPE),
        }
    }

    /// Logits equal to the sub-band maxima.
    pub fn identity() -> Self {
        Self::new(&Tensor::identity(4), &Tensor::zeros(&[4])).unwrap()
    }

    pub fn param_count() -> usize {
        Self::SHAPE.iter().product()
    }
}

/// Softmax weights over the four sub-bands of one map.
pub fn attention_weights(sb: &SubbandStack, gate: &AttentionGate) -> Result<Tensor> {
    let maxima: Vec<f64> = sb
        .bands()
        .iter()
        .map(|b| b.data().iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let mut tape = Tape::new();
    let mut row = maxima;
    row.push(1.0);
    let z = tape.constant(Tensor::new(vec![1, 5], row)?);
    let g = tape.constant(gate.weights.clone());
    let logits = tape.matmul(z, g)?;
    let alpha = tape.softmax(logits, 1)?;
    tape.value(alpha).reshape(&[4])
}

/// Differentiable attentive downsampling of an `[N, N, K]` map (N even) with
/// a `[5, 4]` gate shared by every channel.
pub fn attentive_downsample_var(tape: &mut Tape, x: Var, gate: Var) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 3 {
        return Err(Error::dim(format!("expected [N, N, K], got {shape:?}")));
    }
    if tape.shape(gate) != AttentionGate::SHAPE {
        return Err(Error::dim("gate must be [5, 4]"));
    }
    let k = shape[2];
    let bands = tape.haar(x)?;
    let (oh, ow) = (shape[0] / 2, shape[1] / 2);
    let maxima = tape.reduce_max(bands, &[0, 1])?;
    let maxima = tape.reshape(maxima, &[k, 4])?;
    let ones_k = tape.constant(Tensor::ones(&[k, 1]));
    let augmented = tape.concat(&[maxima, ones_k], 1)?;
    let logits = tape.matmul(augmented, gate)?;
    let alpha = tape.softmax(logits, 1)?;
    let alpha_row = tape.reshape(alpha, &[1, 4 * k])?;
    let ones_hw = tape.constant(Tensor::ones(&[oh * ow, 1]));
    let tiled = tape.matmul(ones_hw, alpha_row)?;
    let tiled = tape.reshape(tiled, &[oh, ow, 4 * k])?;
    tape.mul(bands, tiled)
}

/// Value-level [`attentive_downsample_var`].
pub fn attentive_downsample(fms: &Tensor, gate: &AttentionGate) -> Result<Tensor> {
    let s = fms.shape();
    if s.len() != 3 || s[0] % 2 != 0 || s[1] % 2 != 0 {
        return Err(Error::dim(format!(
            "attentive_downsample needs [even, even, K], got {s:?}"
        )));
    }
    let mut tape = Tape::new();
    let x = tape.constant(fms.clone());
    let g = tape.constant(gate.weights.clone());
    let y = attentive_downsample_var(&mut tape, x, g)?;
    Ok(tape.value(y).clone())
}
