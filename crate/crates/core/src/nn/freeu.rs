//! Decoder feature rebalancing: position-adaptive backbone gain and
//! low-frequency attenuation of skip features.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

pub const BACKBONE_RANGE: (f64, f64) = (1.0, 1.6);
pub const SKIP_RANGE: (f64, f64) = (0.6, 1.0);

/// Per-stage factors; index 0 is the deepest decoder stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FreeUConfig {
    pub b: Vec<f64>,
    pub s: Vec<f64>,
    pub r_thresh: f64,
}

impl Default for FreeUConfig {
    fn default() -> Self {
        Self {
            b: vec![1.3, 1.2],
            s: vec![0.9, 0.95],
            r_thresh: 0.25,
        }
    }
}

impl FreeUConfig {
    /// Factors that leave every feature unchanged.
    pub fn neutral(stages: usize) -> Self {
        Self {
            b: vec![1.0; stages],
            s: vec![1.0; stages],
            r_thresh: 0.25,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.b.len() != self.s.len() {
            return Err(Error::Config("freeu b and s must have the same length".into()));
        }
        for &b in &self.b {
            if !(BACKBONE_RANGE.0..=BACKBONE_RANGE.1).contains(&b) {
                return Err(Error::Config(alloc::format!("backbone factor {b} outside [1, 1.6]")));
            }
        }
        for &s in &self.s {
            if !(SKIP_RANGE.0..=SKIP_RANGE.1).contains(&s) {
                return Err(Error::Config(alloc::format!("skip factor {s} outside [0.6, 1]")));
            }
        }
        if !(self.r_thresh > 0.0 && self.r_thresh <= 1.0) {
            return Err(Error::Config("r_thresh must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn stages(&self) -> usize {
        self.b.len()
    }
}

/// Gain per sequence position from the channel-mean map of one sample.
/// A flat map yields a gain of exactly 1 everywhere.
pub fn backbone_gain(sample: &[f64], channels: usize, b: f64) -> Vec<f64> {
    let len = sample.len() / channels;
    let mut mean = vec![0.0; len];
    for c in 0..channels {
        for (m, v) in mean.iter_mut().zip(&sample[c * len..(c + 1) * len]) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= channels as f64;
    }
    let lo = mean.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = mean.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) || b == 1.0 {
        return vec![1.0; len];
    }
    mean.iter().map(|m| (b - 1.0) * (m - lo) / (hi - lo) + 1.0).collect()
}

/// Scales the first half of the channels by the position-adaptive gain.
pub fn freeu_backbone_scale<T: Real>(x: &Tensor<T>, b: f64) -> Tensor<T> {
    let mut out = x.clone();
    let (channels, len) = (x.channels(), x.len());
    for bi in 0..x.batch() {
        let sample: Vec<f64> = x.sample(bi).iter().map(|v| v.as_f64()).collect();
        let gain = backbone_gain(&sample, channels, b);
        let dst = out.sample_mut(bi);
        for c in 0..channels / 2 {
            for (v, g) in dst[c * len..(c + 1) * len].iter_mut().zip(&gain) {
                *v *= T::of(*g);
            }
        }
    }
    out
}

/// Normalized radial frequency of DFT bin `m` for length `len`: 0 at DC, 1 at
/// Nyquist, mirrored for negative frequencies.
pub fn bin_radius(m: usize, len: usize) -> f64 {
    let f = m.min(len - m) as f64;
    2.0 * f / len as f64
}

pub fn spectral_mask(len: usize, s: f64, r_thresh: f64) -> Vec<f64> {
    (0..len).map(|m| if bin_radius(m, len) < r_thresh { s } else { 1.0 }).collect()
}

/// Forward DFT, mask, inverse DFT of a real row. Returns the filtered row
/// and the largest discarded imaginary residue.
pub fn spectral_filter(row: &[f64], mask: &[f64]) -> (Vec<f64>, f64) {
    let n = row.len();
    let (cos, sin) = twiddles(n);
    let mut re = vec![0.0; n];
    let mut im = vec![0.0; n];
    for m in 0..n {
        let (mut a, mut b) = (0.0, 0.0);
        for (j, x) in row.iter().enumerate() {
            let idx = (m * j) % n;
            a += x * cos[idx];
            b -= x * sin[idx];
        }
        re[m] = a * mask[m];
        im[m] = b * mask[m];
    }
    let mut out = vec![0.0; n];
    let mut residue: f64 = 0.0;
    for (j, o) in out.iter_mut().enumerate() {
        let (mut a, mut b) = (0.0, 0.0);
        for m in 0..n {
            let idx = (m * j) % n;
            a += re[m] * cos[idx] - im[m] * sin[idx];
            b += re[m] * sin[idx] + im[m] * cos[idx];
        }
        *o = a / n as f64;
        residue = residue.max((b / n as f64).abs());
    }
    (out, residue)
}

fn twiddles(n: usize) -> (Vec<f64>, Vec<f64>) {
    (0..n)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / n as f64;
            (a.cos(), a.sin())
        })
        .unzip()
}

/// Attenuates every channel's bins with radius below `r_thresh` by `s`.
pub fn freeu_skip_modulate<T: Real>(h: &Tensor<T>, s: f64, r_thresh: f64) -> Tensor<T> {
    let mask = spectral_mask(h.len(), s, r_thresh);
    let mut out = h.clone();
    for b in 0..h.batch() {
        for c in 0..h.channels() {
            let row: Vec<f64> = h.row(b, c).iter().map(|v| v.as_f64()).collect();
            let (filtered, residue) = spectral_filter(&row, &mask);
            debug_assert!(residue <= 1e-6 * (1.0 + row.iter().fold(0.0f64, |m, v| m.max(v.abs()))));
            for (o, f) in out.row_mut(b, c).iter_mut().zip(filtered) {
                *o = T::of(f);
            }
        }
    }
    out
}
