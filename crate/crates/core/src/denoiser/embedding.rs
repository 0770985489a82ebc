use alloc::vec::Vec;

use num_traits::Float;

use crate::{Error, Result};

/// Scale applied to `sqrt(gamma)` before the sinusoids, so the noise level
/// spans a range comparable to integer timesteps.
pub const GAMMA_SCALE: f64 = 1000.0;

/// Fixed sinusoidal features of `sqrt(gamma)`: `dim / 2` sines followed by
/// `dim / 2` cosines at geometrically spaced frequencies.
pub fn sinusoidal_embedding(gamma: f64, dim: usize) -> Result<Vec<f64>> {
    if dim < 2 || dim % 2 != 0 {
        return Err(Error::InvalidArgument(alloc::format!("embedding dim {dim} must be even and >= 2")));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidArgument(alloc::format!("noise level {gamma} outside (0, 1]")));
    }
    let half = dim / 2;
    let s = Float::sqrt(gamma) * GAMMA_SCALE;
    let step = if half > 1 { Float::ln(10_000.0f64) / (half - 1) as f64 } else { 0.0 };
    let mut out = Vec::with_capacity(dim);
    let freqs: Vec<f64> = (0..half).map(|i| Float::exp(-step * i as f64)).collect();
    out.extend(freqs.iter().map(|f| Float::sin(s * f)));
    out.extend(freqs.iter().map(|f| Float::cos(s * f)));
    Ok(out)
}
