//! Slice-level kernels shared by the tape's forward and backward passes.

use crate::scalar::{gemm, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub padding: usize,
    pub stride: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn out_len(&self) -> usize {
        self.out_height * self.out_width
    }

    /// Yields `(input_offset, column_offset)` for every in-bounds tap, plus
    /// visits padded taps with `None`.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(Option<usize>, usize)) {
        let ol = self.out_len();
        let mut row = 0;
        for c in 0..self.channels {
            for ky in 0..self.kernel {
                for kx in 0..self.kernel {
                    let base = row * ol;
                    for oy in 0..self.out_height {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        for ox in 0..self.out_width {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            let col = base + oy * self.out_width + ox;
                            if iy >= 0
                                && ix >= 0
                                && (iy as usize) < self.height
                                && (ix as usize) < self.width
                            {
                                let src = (c * self.height + iy as usize) * self.width + ix as usize;
                                f(Some(src), col);
                            } else {
                                f(None, col);
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Unfolds one image (`C×H×W`) into a `(C·k·k) × (H'·W')` column matrix.
pub(crate) fn im2col<T: Scalar>(g: &ConvGeometry, image: &[T], col: &mut [T]) {
    debug_assert_eq!(col.len(), g.patch_len() * g.out_len());
    g.for_each_tap(|src, dst| {
        col[dst] = match src {
            Some(s) => image[s],
            None => T::zero(),
        }
    });
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `image`.
pub(crate) fn col2im<T: Scalar>(g: &ConvGeometry, col: &[T], image: &mut [T]) {
    g.for_each_tap(|src, dst| {
        if let Some(s) = src {
            image[s] += col[dst];
        }
    });
}

pub(crate) fn conv_forward<T: Scalar>(
    g: &ConvGeometry,
    batch: usize,
    filters: usize,
    input: &[T],
    weight: &[T],
    bias: &[T],
    out: &mut [T],
) {
    let in_len = g.channels * g.height * g.width;
    let ol = g.out_len();
    let mut col = vec![T::zero(); g.patch_len() * ol];
    for n in 0..batch {
        im2col(g, &input[n * in_len..(n + 1) * in_len], &mut col);
        let y = &mut out[n * filters * ol..(n + 1) * filters * ol];
        gemm(false, false, filters, g.patch_len(), ol, weight, &col, y, false);
        for (k, row) in y.chunks_exact_mut(ol).enumerate() {
            let b = bias[k];
            row.iter_mut().for_each(|v| *v += b);
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward<T: Scalar>(
    g: &ConvGeometry,
    batch: usize,
    filters: usize,
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    mut grad_input: Option<&mut [T]>,
    mut grad_weight: Option<&mut [T]>,
    mut grad_bias: Option<&mut [T]>,
) {
    let in_len = g.channels * g.height * g.width;
    let ol = g.out_len();
    let pl = g.patch_len();
    let mut col = vec![T::zero(); pl * ol];
    for n in 0..batch {
        let dy = &grad_out[n * filters * ol..(n + 1) * filters * ol];
        if let Some(db) = grad_bias.as_deref_mut() {
            for (k, row) in dy.chunks_exact(ol).enumerate() {
                db[k] += row.iter().copied().sum::<T>();
            }
        }
        if let Some(dw) = grad_weight.as_deref_mut() {
            im2col(g, &input[n * in_len..(n + 1) * in_len], &mut col);
            gemm(false, true, filters, ol, pl, dy, &col, dw, true);
        }
        if let Some(dx) = grad_input.as_deref_mut() {
            gemm(true, false, pl, filters, ol, weight, dy, &mut col, false);
            col2im(g, &col, &mut dx[n * in_len..(n + 1) * in_len]);
        }
    }
}

/// Partition bounds of adaptive pooling: `[floor(i·size/out), ceil((i+1)·size/out))`.
pub(crate) fn adaptive_bounds(i: usize, size: usize, out: usize) -> (usize, usize) {
    let start = i * size / out;
    let end = ((i + 1) * size).div_ceil(out);
    (start, end)
}
