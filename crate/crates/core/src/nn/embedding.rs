//! Time-step and road-attribute embeddings.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};

/// Interleaved `(sin(t w_j), cos(t w_j))` pairs with `w_j = 10000^(-2j/dim)`.
pub fn sinusoidal_time_embedding(t: f64, dim: usize) -> Result<Vec<f64>> {
    if dim < 2 || dim % 2 != 0 {
        return Err(Error::Config(alloc::format!("time embedding dim must be even and >= 2, got {dim}")));
    }
    let mut out = Vec::with_capacity(dim);
    for j in 0..dim / 2 {
        let w = 10000f64.powf(-2.0 * j as f64 / dim as f64);
        let (s, c) = (t * w).sin_cos();
        out.push(s);
        out.push(c);
    }
    Ok(out)
}
