//! Convolution geometry and the im2col / GEMM kernels behind `Graph::conv2d`.
//!
//! Layouts: input `N×H×W×C`, kernel `KH×KW×C×F`, bias `F`, output `N×OH×OW×F`.

use super::{Result, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Output extent `ceil(in / stride)`. The zero border is split evenly with
    /// the odd pixel going to the bottom/right.
    Same,
    /// No padding; output extent `floor((in - k) / stride) + 1`.
    Valid,
}

/// Output extent and leading pad for one spatial axis.
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize, padding: Padding) -> Option<(usize, usize)> {
    if stride == 0 || kernel == 0 || input == 0 {
        return None;
    }
    match padding {
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            Some((out, total / 2))
        }
        Padding::Valid => (input >= kernel).then(|| ((input - kernel) / stride + 1, 0)),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub filters: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], kernel: &[usize], bias: &[usize], stride: usize, padding: Padding) -> Result<Self> {
        if input.len() != 4 {
            return Err(TensorError::RankMismatch {
                op: "conv2d input",
                expected: 4,
                found: input.len(),
            });
        }
        if kernel.len() != 4 {
            return Err(TensorError::RankMismatch {
                op: "conv2d kernel",
                expected: 4,
                found: kernel.len(),
            });
        }
        if kernel[2] != input[3] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                dim: "input channels (kernel axis 2 vs input axis 3)".into(),
                expected: kernel[2],
                found: input[3],
            });
        }
        if bias.len() != 1 || bias[0] != kernel[3] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                dim: "bias length (filters)".into(),
                expected: kernel[3],
                found: bias.iter().product(),
            });
        }
        let (out_h, pad_top) =
            conv_output_extent(input[1], kernel[0], stride, padding).ok_or(TensorError::ShapeMismatch {
                op: "conv2d",
                dim: "height (kernel larger than input, or zero stride)".into(),
                expected: kernel[0],
                found: input[1],
            })?;
        let (out_w, pad_left) =
            conv_output_extent(input[2], kernel[1], stride, padding).ok_or(TensorError::ShapeMismatch {
                op: "conv2d",
                dim: "width (kernel larger than input, or zero stride)".into(),
                expected: kernel[1],
                found: input[2],
            })?;
        Ok(Self {
            batch: input[0],
            in_h: input[1],
            in_w: input[2],
            in_c: input[3],
            k_h: kernel[0],
            k_w: kernel[1],
            filters: kernel[3],
            stride,
            out_h,
            out_w,
            pad_top,
            pad_left,
        })
    }

    pub fn rows(&self) -> usize {
        self.batch * self.out_h * self.out_w
    }

    pub fn patch(&self) -> usize {
        self.k_h * self.k_w * self.in_c
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.batch, self.out_h, self.out_w, self.filters]
    }

    /// Input pixel feeding output `(oy, ox)` at kernel offset `(ky, kx)`, if inside.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + ky).checked_sub(self.pad_top)?;
        let x = (ox * self.stride + kx).checked_sub(self.pad_left)?;
        (y < self.in_h && x < self.in_w).then_some((y, x))
    }
}

pub(crate) fn im2col(g: &ConvGeom, input: &[f64]) -> Vec<f64> {
    let patch = g.patch();
    let mut cols = vec![0.0; g.rows() * patch];
    let c = g.in_c;
    for n in 0..g.batch {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let row = (n * g.out_h + oy) * g.out_w + ox;
                let dst = &mut cols[row * patch..(row + 1) * patch];
                for ky in 0..g.k_h {
                    for kx in 0..g.k_w {
                        if let Some((y, x)) = g.source(oy, ox, ky, kx) {
                            let src = ((n * g.in_h + y) * g.in_w + x) * c;
                            let off = (ky * g.k_w + kx) * c;
                            dst[off..off + c].copy_from_slice(&input[src..src + c]);
                        }
                    }
                }
            }
        }
    }
    cols
}

pub(crate) fn col2im_add(g: &ConvGeom, cols: &[f64], input_grad: &mut [f64]) {
    let patch = g.patch();
    let c = g.in_c;
    for n in 0..g.batch {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let row = (n * g.out_h + oy) * g.out_w + ox;
                let src_row = &cols[row * patch..(row + 1) * patch];
                for ky in 0..g.k_h {
                    for kx in 0..g.k_w {
                        if let Some((y, x)) = g.source(oy, ox, ky, kx) {
                            let dst = ((n * g.in_h + y) * g.in_w + x) * c;
                            let off = (ky * g.k_w + kx) * c;
                            for (d, s) in input_grad[dst..dst + c].iter_mut().zip(&src_row[off..off + c]) {
                                *d += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `c = op(a) · op(b) + beta · c` for row-major matrices, `op(a)` being `m×k`
/// and `op(b)` being `k×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every strided access stays inside
    // the slices, and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_padding_puts_extra_pixel_bottom_right() {
        // in 4, k 2, s 1 -> out 4, total pad 1 -> top 0, bottom 1
        assert_eq!(conv_output_extent(4, 2, 1, Padding::Same), Some((4, 0)));
        // in 64, k 5, s 2 -> out 32, total pad 3 -> top 1, bottom 2
        assert_eq!(conv_output_extent(64, 5, 2, Padding::Same), Some((32, 1)));
        assert_eq!(conv_output_extent(8, 3, 2, Padding::Same), Some((4, 0)));
    }

    #[test]
    fn valid_padding_extents() {
        assert_eq!(conv_output_extent(8, 3, 1, Padding::Valid), Some((6, 0)));
        assert_eq!(conv_output_extent(8, 3, 2, Padding::Valid), Some((3, 0)));
        assert_eq!(conv_output_extent(2, 3, 1, Padding::Valid), None);
    }

    #[test]
    fn gemm_matches_naive_for_all_transpositions() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64).sin()).collect();
        let at = |i: usize, j: usize| a[i * k + j];
        let bt = |i: usize, j: usize| b[i * n + j];
        let mut expect = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                expect[i * n + j] = (0..k).map(|p| at(i, p) * bt(p, j)).sum();
            }
        }
        let transpose = |x: &[f64], r: usize, c: usize| {
            let mut t = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    t[j * r + i] = x[i * c + j];
                }
            }
            t
        };
        let a_t = transpose(&a, m, k);
        let b_t = transpose(&b, k, n);
        for (aa, ta) in [(&a, false), (&a_t, true)] {
            for (bb, tb) in [(&b, false), (&b_t, true)] {
                let mut c = vec![0.0; m * n];
                gemm(m, k, n, aa, ta, bb, tb, 0.0, &mut c);
                for (x, y) in c.iter().zip(&expect) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }
}
