//! Dense numeric kernels shared by the forward and backward passes.

/// `c = op(a) · op(b)` (or `c += ...` when `accumulate`), all row-major.
///
/// `op(a)` is `m × k`; when `trans_a` the buffer `a` is stored as `k × m`.
/// Likewise `op(b)` is `k × n`, stored `n × k` when `trans_b`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above guarantee that every index reachable through
    // the (m, k, n) extents and the strides stays inside the three slices.
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

/// Spatial geometry of a 2-D convolution over one sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel.0 * self.kernel.1
    }

    pub fn col_cols(&self) -> usize {
        self.out_height * self.out_width
    }
}

/// Unfolds one sample `[C, H, W]` into `[C·kh·kw, Ho·Wo]`.
pub(crate) fn im2col(x: &[f64], g: &ConvGeometry, cols: &mut [f64]) {
    let (kh, kw) = g.kernel;
    let (sh, sw) = g.stride;
    let (ph, pw) = g.padding;
    let ncols = g.col_cols();
    debug_assert_eq!(cols.len(), g.col_rows() * ncols);
    for c in 0..g.channels {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for oi in 0..g.out_height {
                    let ii = (oi * sh + ki) as isize - ph as isize;
                    for oj in 0..g.out_width {
                        let jj = (oj * sw + kj) as isize - pw as isize;
                        dst[oi * g.out_width + oj] = if ii >= 0
                            && jj >= 0
                            && (ii as usize) < g.height
                            && (jj as usize) < g.width
                        {
                            x[(c * g.height + ii as usize) * g.width + jj as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto `[C, H, W]`.
pub(crate) fn col2im_add(cols: &[f64], g: &ConvGeometry, dx: &mut [f64]) {
    let (kh, kw) = g.kernel;
    let (sh, sw) = g.stride;
    let (ph, pw) = g.padding;
    let ncols = g.col_cols();
    for c in 0..g.channels {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oi in 0..g.out_height {
                    let ii = (oi * sh + ki) as isize - ph as isize;
                    if ii < 0 || ii as usize >= g.height {
                        continue;
                    }
                    for oj in 0..g.out_width {
                        let jj = (oj * sw + kj) as isize - pw as isize;
                        if jj < 0 || jj as usize >= g.width {
                            continue;
                        }
                        dx[(c * g.height + ii as usize) * g.width + jj as usize] +=
                            src[oi * g.out_width + oj];
                    }
                }
            }
        }
    }
}
