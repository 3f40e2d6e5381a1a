//! Dense kernels behind the tape ops. All matrices are row-major slices.

/// Which operand layout a GEMM argument is stored in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    /// Stored as the logical `rows x cols` matrix.
    Normal,
    /// Stored as the transpose of the logical matrix.
    Transposed,
}

/// `c = a · b + beta · c` where `a` is logically `m x k`, `b` is `k x n` and
/// `c` is `m x n` (row-major).
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_layout: Layout,
    b: &[f64],
    b_layout: Layout,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = match a_layout {
        Layout::Normal => (k as isize, 1),
        Layout::Transposed => (1, m as isize),
    };
    let (rsb, csb) = match b_layout {
        Layout::Normal => (n as isize, 1),
        Layout::Transposed => (1, k as isize),
    };
    // SAFETY: the asserts above bound every index the strides can reach.
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

/// Geometry of a square-kernel 2-D convolution on one item.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_height() * self.out_width()
    }

    /// 1x1, stride 1, no padding: the item itself is already the column matrix.
    pub fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Output columns `x_out` whose input column `x_out * stride + k - pad`
/// lies inside `0..len`.
#[inline]
fn valid_range(out_len: usize, len: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > k {
        (pad - k).div_ceil(stride)
    } else {
        0
    };
    let hi = if len + pad > k {
        (len + pad - k).div_ceil(stride)
    } else {
        0
    };
    (lo.min(out_len), hi.min(out_len).max(lo.min(out_len)))
}

/// Unfolds one `C x H x W` item into a `(C·k·k) x (Ho·Wo)` column matrix.
pub fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let (oh, ow) = (g.out_height(), g.out_width());
    let plane = g.height * g.width;
    let ncols = oh * ow;
    for c in 0..g.channels {
        let src = &x[c * plane..(c + 1) * plane];
        for ki in 0..g.kernel {
            let (y0, y1) = valid_range(oh, g.height, ki, g.stride, g.pad);
            for kj in 0..g.kernel {
                let (x0, x1) = valid_range(ow, g.width, kj, g.stride, g.pad);
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                dst[..y0 * ow].fill(0.0);
                dst[y1 * ow..].fill(0.0);
                for y in y0..y1 {
                    let iy = y * g.stride + ki - g.pad;
                    let out_row = &mut dst[y * ow..(y + 1) * ow];
                    out_row[..x0].fill(0.0);
                    out_row[x1..].fill(0.0);
                    if x1 <= x0 {
                        continue;
                    }
                    let first = iy * g.width + x0 * g.stride + kj - g.pad;
                    let out = &mut out_row[x0..x1];
                    if g.stride == 1 {
                        out.copy_from_slice(&src[first..first + out.len()]);
                    } else {
                        let span = &src[first..first + (out.len() - 1) * g.stride + 1];
                        for (slot, &v) in out.iter_mut().zip(span.iter().step_by(g.stride)) {
                            *slot = v;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds columns back into an item gradient.
pub fn col2im(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let (oh, ow) = (g.out_height(), g.out_width());
    let plane = g.height * g.width;
    let ncols = oh * ow;
    for c in 0..g.channels {
        let dst = &mut dx[c * plane..(c + 1) * plane];
        for ki in 0..g.kernel {
            let (y0, y1) = valid_range(oh, g.height, ki, g.stride, g.pad);
            for kj in 0..g.kernel {
                let (x0, x1) = valid_range(ow, g.width, kj, g.stride, g.pad);
                if x1 <= x0 {
                    continue;
                }
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for y in y0..y1 {
                    let iy = y * g.stride + ki - g.pad;
                    let first = iy * g.width + x0 * g.stride + kj - g.pad;
                    let vals = &src[y * ow + x0..y * ow + x1];
                    if g.stride == 1 {
                        for (d, &v) in dst[first..first + vals.len()].iter_mut().zip(vals) {
                            *d += v;
                        }
                    } else {
                        let span = &mut dst[first..first + (vals.len() - 1) * g.stride + 1];
                        for (d, &v) in span.iter_mut().step_by(g.stride).zip(vals) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}
