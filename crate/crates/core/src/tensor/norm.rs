//! Instance and layer normalization without learned affine parameters.
//!
//! Neither mode keeps running statistics, so the output depends only on the
//! current sample; training and evaluation behave identically.

use super::{Result, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NormMode {
    /// Per (sample, channel) over the spatial extent of an `N×H×W×C` tensor.
    Instance,
    /// Per sample over all remaining features of a rank ≥ 2 tensor.
    Layer,
}

/// How the flat value buffer splits into normalization groups.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Groups {
    /// number of independent groups
    pub count: usize,
    /// elements per group
    pub size: usize,
    /// channels interleaved at the innermost axis (1 for layer norm)
    pub channels: usize,
}

impl Groups {
    pub fn new(shape: &[usize], mode: NormMode) -> Result<Self> {
        match mode {
            NormMode::Instance => {
                if shape.len() != 4 {
                    return Err(TensorError::RankMismatch {
                        op: "instance norm",
                        expected: 4,
                        found: shape.len(),
                    });
                }
                Ok(Self {
                    count: shape[0] * shape[3],
                    size: shape[1] * shape[2],
                    channels: shape[3],
                })
            }
            NormMode::Layer => {
                if shape.len() < 2 {
                    return Err(TensorError::RankMismatch {
                        op: "layer norm",
                        expected: 2,
                        found: shape.len(),
                    });
                }
                Ok(Self {
                    count: shape[0],
                    size: shape[1..].iter().product(),
                    channels: 1,
                })
            }
        }
    }

    /// Flat index of element `i` of group `g`.
    #[inline]
    fn index(&self, g: usize, i: usize) -> usize {
        if self.channels == 1 {
            g * self.size + i
        } else {
            let n = g / self.channels;
            let c = g % self.channels;
            (n * self.size + i) * self.channels + c
        }
    }
}

/// Returns the normalized values and the per-group inverse standard deviation.
pub(crate) fn forward(x: &[f64], groups: Groups, epsilon: f64) -> (Vec<f64>, Vec<f64>) {
    let mut out = vec![0.0; x.len()];
    let mut inv_std = Vec::with_capacity(groups.count);
    let m = groups.size as f64;
    for g in 0..groups.count {
        let mut mean = 0.0;
        for i in 0..groups.size {
            mean += x[groups.index(g, i)];
        }
        mean /= m;
        let mut var = 0.0;
        for i in 0..groups.size {
            let d = x[groups.index(g, i)] - mean;
            var += d * d;
        }
        var /= m;
        let inv = 1.0 / (var + epsilon).sqrt();
        for i in 0..groups.size {
            let idx = groups.index(g, i);
            out[idx] = (x[idx] - mean) * inv;
        }
        inv_std.push(inv);
    }
    (out, inv_std)
}

/// Accumulates `d loss / d x` given the normalized output `xhat` and upstream `dy`.
pub(crate) fn backward(xhat: &[f64], dy: &[f64], inv_std: &[f64], groups: Groups, dx: &mut [f64]) {
    let m = groups.size as f64;
    for (g, &inv) in inv_std.iter().enumerate() {
        let mut sum_dy = 0.0;
        let mut sum_dy_xhat = 0.0;
        for i in 0..groups.size {
            let idx = groups.index(g, i);
            sum_dy += dy[idx];
            sum_dy_xhat += dy[idx] * xhat[idx];
        }
        for i in 0..groups.size {
            let idx = groups.index(g, i);
            dx[idx] += inv / m * (m * dy[idx] - sum_dy - xhat[idx] * sum_dy_xhat);
        }
    }
}
