//! Synthetic channel sequences for tests, benchmarks and smoke runs.

use std::f64::consts::PI;

use crate::rnnpb::Channels;
use crate::scalar::Scalar;

/// A smooth periodic pattern in `[0.2, 0.8]` on every channel.
///
/// `pattern` selects frequency and phase offsets so distinct indices give
/// clearly distinct sequences.
pub fn sine_pattern<T: Scalar>(pattern: usize, steps: usize, io_dim: usize) -> Channels<T> {
    let freq = 1.0 + (pattern % 3) as f64 * 0.5;
    let phase = pattern as f64 * 2.0 * PI / 5.0;
    let mut data = Vec::with_capacity(steps * io_dim);
    for t in 0..steps {
        let s = t as f64 / steps.max(1) as f64;
        for ch in 0..io_dim {
            let v = 0.5 + 0.3 * (2.0 * PI * freq * s + phase + ch as f64 * 0.7).sin();
            data.push(T::of(v));
        }
    }
    Channels::new(io_dim, data)
}

/// `count` distinct sine patterns.
pub fn sine_set<T: Scalar>(count: usize, steps: usize, io_dim: usize) -> Vec<Channels<T>> {
    (0..count).map(|k| sine_pattern(k, steps, io_dim)).collect()
}
