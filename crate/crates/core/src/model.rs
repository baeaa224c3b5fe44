//! Two-layer 3×3 convolutional per-pixel segmenter with Dice loss.
//!
//! ```text
//! image ─conv3x3(1→C)─ReLU─conv3x3(C→1)─sigmoid→ probability map
//! ```
//!
//! Both convolutions use zero "same" padding. Gradients are derived by hand.

use std::fs;
use std::ops::Range;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::mask::{Grid, Mask};
use crate::rng::{substream, Domain};
use crate::scalar::Scalar;

/// Additive smoothing in the Dice loss numerator and denominator.
pub const DICE_SMOOTHING: f64 = 1.0;

const KERNEL: usize = 9;
const OFFSETS: [(isize, isize); KERNEL] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 0),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchDescriptor {
    pub in_channels: usize,
    pub hidden_channels: usize,
}

impl Default for ArchDescriptor {
    fn default() -> Self {
        Self {
            in_channels: 1,
            hidden_channels: 4,
        }
    }
}

/// Index ranges of each named parameter block inside a [`ParamVector`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub conv1_kernel: Range<usize>,
    pub conv1_bias: Range<usize>,
    pub conv2_kernel: Range<usize>,
    pub conv2_bias: Range<usize>,
}

impl ArchDescriptor {
    pub fn new(hidden_channels: usize) -> Result<Self> {
        let arch = Self {
            in_channels: 1,
            hidden_channels,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels != 1 {
            return Err(Error::Validation(format!(
                "only single-channel input is supported, got {}",
                self.in_channels
            )));
        }
        if self.hidden_channels == 0 {
            return Err(Error::Validation("hidden_channels must be at least 1".into()));
        }
        Ok(())
    }

    pub fn layout(&self) -> ParamLayout {
        let c = self.hidden_channels;
        let k1 = KERNEL * self.in_channels * c;
        let k2 = KERNEL * c;
        ParamLayout {
            conv1_kernel: 0..k1,
            conv1_bias: k1..k1 + c,
            conv2_kernel: k1 + c..k1 + c + k2,
            conv2_bias: k1 + c + k2..k1 + c + k2 + 1,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().conv2_bias.end
    }
}

/// Flat model parameter (or gradient, or update) vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector<T>(Vec<T>);

impl<T: Scalar> ParamVector<T> {
    pub fn zeros(len: usize) -> Self {
        Self(vec![T::zero(); len])
    }

    pub fn from_vec(values: Vec<T>) -> Self {
        Self(values)
    }

    pub fn into_vec(self) -> Vec<T> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn check_len(&self, other: &Self) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                actual: other.len(),
            });
        }
        Ok(())
    }

    /// `self += alpha * x`.
    pub fn axpy(&mut self, alpha: T, x: &Self) -> Result<()> {
        self.check_len(x)?;
        for (a, &b) in self.0.iter_mut().zip(&x.0) {
            *a += alpha * b;
        }
        Ok(())
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_len(other)?;
        Ok(Self(self.0.iter().zip(&other.0).map(|(&a, &b)| a - b).collect()))
    }

    pub fn scale(&mut self, alpha: T) {
        for v in &mut self.0 {
            *v *= alpha;
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.check_len(other)?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max))
    }

    /// Little-endian `u64` length followed by that many little-endian `f64`s.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 8 * self.len());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for v in &self.0 {
            out.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let header: [u8; 8] = bytes
            .get(..8)
            .ok_or("missing length header")?
            .try_into()
            .expect("8 bytes");
        let len = u64::from_le_bytes(header) as usize;
        let body = &bytes[8..];
        if body.len() != len.checked_mul(8).ok_or("length overflow")? {
            return Err(format!("header says {len} values, body has {} bytes", body.len()));
        }
        Ok(Self(
            body.chunks_exact(8)
                .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
                .collect(),
        ))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|message| Error::Format {
            path: path.to_path_buf(),
            message,
        })
    }
}

/// Kernel weights uniform in `±sqrt(6 / fan_in)`, biases zero.
pub fn init_params<T: Scalar>(arch: &ArchDescriptor, seed: u64) -> ParamVector<T> {
    let layout = arch.layout();
    let mut rng = substream(seed, Domain::Init, &[arch.hidden_channels as u64]);
    let mut p = ParamVector::zeros(arch.param_count());
    let fill = |range: Range<usize>, fan_in: usize, rng: &mut rand_chacha::ChaCha8Rng, p: &mut ParamVector<T>| {
        let bound = (6.0 / fan_in as f64).sqrt();
        for v in &mut p.as_mut_slice()[range] {
            *v = T::lit(rng.random_range(-bound..bound));
        }
    };
    fill(layout.conv1_kernel, KERNEL * arch.in_channels, &mut rng, &mut p);
    fill(layout.conv2_kernel, KERNEL * arch.hidden_channels, &mut rng, &mut p);
    p
}

#[inline]
fn shifted(r: usize, c: usize, (dr, dc): (isize, isize), h: usize, w: usize) -> Option<usize> {
    let rr = r.checked_add_signed(dr)?;
    let cc = c.checked_add_signed(dc)?;
    (rr < h && cc < w).then_some(rr * w + cc)
}

#[inline]
fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    /// Hidden pre-activations, `hidden_channels` planes of `H·W`.
    pub hidden_pre: Vec<T>,
    pub logits: Grid<T>,
    pub probs: Grid<T>,
}

fn check_params<T: Scalar>(arch: &ArchDescriptor, params: &ParamVector<T>) {
    assert_eq!(
        params.len(),
        arch.param_count(),
        "parameter vector does not match architecture"
    );
}

/// Forward pass keeping intermediates.
///
/// # Panics
/// If `params` does not match `arch`.
pub fn forward_cached<T: Scalar>(arch: &ArchDescriptor, params: &ParamVector<T>, image: &Grid<T>) -> ForwardCache<T> {
    check_params(arch, params);
    let (h, w) = image.shape();
    let n = h * w;
    let c_hidden = arch.hidden_channels;
    let layout = arch.layout();
    let p = params.as_slice();
    let w1 = &p[layout.conv1_kernel];
    let b1 = &p[layout.conv1_bias];
    let w2 = &p[layout.conv2_kernel];
    let b2 = p[layout.conv2_bias.start];
    let x = image.data();

    let mut hidden_pre = vec![T::zero(); c_hidden * n];
    for ch in 0..c_hidden {
        let kernel = &w1[ch * KERNEL..(ch + 1) * KERNEL];
        let plane = &mut hidden_pre[ch * n..(ch + 1) * n];
        for r in 0..h {
            for c in 0..w {
                let mut acc = b1[ch];
                for (k, &off) in OFFSETS.iter().enumerate() {
                    if let Some(idx) = shifted(r, c, off, h, w) {
                        acc += kernel[k] * x[idx];
                    }
                }
                plane[r * w + c] = acc;
            }
        }
    }

    let mut logits = vec![b2; n];
    for ch in 0..c_hidden {
        let kernel = &w2[ch * KERNEL..(ch + 1) * KERNEL];
        let plane = &hidden_pre[ch * n..(ch + 1) * n];
        for r in 0..h {
            for c in 0..w {
                let mut acc = T::zero();
                for (k, &off) in OFFSETS.iter().enumerate() {
                    if let Some(idx) = shifted(r, c, off, h, w) {
                        acc += kernel[k] * plane[idx].max(T::zero());
                    }
                }
                logits[r * w + c] += acc;
            }
        }
    }
    let probs = logits.iter().map(|&z| sigmoid(z)).collect();
    ForwardCache {
        hidden_pre,
        logits: Grid::new(h, w, logits).expect("same shape"),
        probs: Grid::new(h, w, probs).expect("same shape"),
    }
}

/// Per-pixel foreground probabilities, same shape as `image`.
pub fn forward<T: Scalar>(arch: &ArchDescriptor, params: &ParamVector<T>, image: &Grid<T>) -> Grid<T> {
    forward_cached(arch, params, image).probs
}

fn smoothed_terms<T: Scalar>(pred: &Grid<T>, mask: &Mask) -> Result<(T, T)> {
    if pred.shape() != mask.shape() {
        return Err(Error::ShapeMismatch {
            expected: mask.shape(),
            actual: pred.shape(),
        });
    }
    let eps = T::lit(DICE_SMOOTHING);
    let mut inter = T::zero();
    let mut p_sum = T::zero();
    let mut m_sum = T::zero();
    for (&p, &m) in pred.data().iter().zip(mask.bits()) {
        p_sum += p;
        if m {
            inter += p;
            m_sum += T::one();
        }
    }
    Ok((T::lit(2.0) * inter + eps, p_sum + m_sum + eps))
}

/// Smoothed soft Dice loss `1 − (2Σpm + ε)/(Σp + Σm + ε)` with `ε = 1`.
pub fn dice_loss<T: Scalar>(pred: &Grid<T>, mask: &Mask) -> Result<T> {
    let (num, den) = smoothed_terms(pred, mask)?;
    Ok(T::one() - num / den)
}

/// Loss and exact gradient of `dice_loss ∘ forward` for one sample.
///
/// # Panics
/// If `params` does not match `arch` or the mask and image shapes differ.
pub fn loss_and_gradient<T: Scalar>(
    arch: &ArchDescriptor,
    params: &ParamVector<T>,
    image: &Grid<T>,
    mask: &Mask,
) -> (T, ParamVector<T>) {
    let mut grad = ParamVector::zeros(params.len());
    let loss = accumulate_gradient(arch, params, image, mask, T::one(), &mut grad);
    (loss, grad)
}

/// Gradient of the Dice loss with respect to every parameter.
pub fn backward<T: Scalar>(arch: &ArchDescriptor, params: &ParamVector<T>, image: &Grid<T>, mask: &Mask) -> ParamVector<T> {
    loss_and_gradient(arch, params, image, mask).1
}

/// Adds `weight * ∂loss/∂params` into `grad` and returns the loss.
pub(crate) fn accumulate_gradient<T: Scalar>(
    arch: &ArchDescriptor,
    params: &ParamVector<T>,
    image: &Grid<T>,
    mask: &Mask,
    weight: T,
    grad: &mut ParamVector<T>,
) -> T {
    let cache = forward_cached(arch, params, image);
    let (num, den) = smoothed_terms(&cache.probs, mask).expect("image and mask shapes match");
    let loss = T::one() - num / den;

    let (h, w) = image.shape();
    let n = h * w;
    let c_hidden = arch.hidden_channels;
    let layout = arch.layout();
    let p = params.as_slice();
    let w2 = &p[layout.conv2_kernel.clone()];
    let x = image.data();
    let den2 = den * den;
    let two = T::lit(2.0);

    // ∂L/∂logit
    let d_logit: Vec<T> = cache
        .probs
        .data()
        .iter()
        .zip(mask.bits())
        .map(|(&prob, &m)| {
            let m = if m { T::one() } else { T::zero() };
            let d_prob = -(two * m * den - num) / den2;
            weight * d_prob * prob * (T::one() - prob)
        })
        .collect();

    let g = grad.as_mut_slice();
    g[layout.conv2_bias.start] += d_logit.iter().copied().sum();

    let mut d_hidden = vec![T::zero(); n];
    for ch in 0..c_hidden {
        let kernel = &w2[ch * KERNEL..(ch + 1) * KERNEL];
        let plane = &cache.hidden_pre[ch * n..(ch + 1) * n];
        let g_kernel_start = layout.conv2_kernel.start + ch * KERNEL;
        d_hidden.iter_mut().for_each(|v| *v = T::zero());
        for r in 0..h {
            for c in 0..w {
                let dz = d_logit[r * w + c];
                for (k, &off) in OFFSETS.iter().enumerate() {
                    if let Some(idx) = shifted(r, c, off, h, w) {
                        let pre = plane[idx];
                        if pre > T::zero() {
                            g[g_kernel_start + k] += dz * pre;
                            d_hidden[idx] += dz * kernel[k];
                        }
                    }
                }
            }
        }
        // d_hidden now holds ∂L/∂pre-activation (ReLU mask already applied)
        let g1_start = layout.conv1_kernel.start + ch * KERNEL;
        let mut bias_acc = T::zero();
        for r in 0..h {
            for c in 0..w {
                let dz1 = d_hidden[r * w + c];
                if dz1 == T::zero() {
                    continue;
                }
                bias_acc += dz1;
                for (k, &off) in OFFSETS.iter().enumerate() {
                    if let Some(idx) = shifted(r, c, off, h, w) {
                        g[g1_start + k] += dz1 * x[idx];
                    }
                }
            }
        }
        g[layout.conv1_bias.start + ch] += bias_acc;
    }
    loss
}

/// Mean loss and mean gradient over a batch of `(image, mask)` pairs.
///
/// # Panics
/// On an empty batch.
pub fn batch_loss_and_gradient<'a, T: Scalar>(
    arch: &ArchDescriptor,
    params: &ParamVector<T>,
    batch: impl ExactSizeIterator<Item = (&'a Grid<T>, &'a Mask)>,
) -> (T, ParamVector<T>) {
    let n = batch.len();
    assert!(n > 0, "empty batch");
    let weight = T::one() / T::from_usize_lossy(n);
    let mut grad = ParamVector::zeros(params.len());
    let mut loss = T::zero();
    for (image, mask) in batch {
        loss += accumulate_gradient(arch, params, image, mask, weight, &mut grad);
    }
    (loss * weight, grad)
}
