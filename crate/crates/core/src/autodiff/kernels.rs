//! Raw slice kernels behind the tape primitives. Everything is row-major f64.

/// Geometry of a 2-D cross-correlation over an NCHW batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn patch_len(&self) -> usize {
        self.in_c * self.k_h * self.k_w
    }

    pub fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// `c = a · b` (or `c += a · b` when `accumulate`), where `a` is m×k and `b`
/// is k×n after the optional transposes. Transposition is expressed through
/// strides, so the operands are never copied.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above pin every operand length to the extents the
    // strides address, and `c` is uniquely borrowed.
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

/// Unfolds one CHW image into columns `offset..offset + out_len` of a
/// `patch_len × ld` column matrix.
pub fn im2col(g: &ConvGeom, image: &[f64], col: &mut [f64], ld: usize, offset: usize) {
    for c in 0..g.in_c {
        let plane = &image[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..g.k_h {
            for kj in 0..g.k_w {
                let row = (c * g.k_h + ki) * g.k_w + kj;
                let dst = &mut col[row * ld + offset..row * ld + offset + g.out_len()];
                for oh in 0..g.out_h {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    let out_row = &mut dst[oh * g.out_w..(oh + 1) * g.out_w];
                    if ih < 0 || ih >= g.in_h as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &plane[ih as usize * g.in_w..(ih as usize + 1) * g.in_w];
                    for (ow, slot) in out_row.iter_mut().enumerate() {
                        let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                        *slot = if iw < 0 || iw >= g.in_w as isize {
                            0.0
                        } else {
                            src[iw as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds columns `offset..offset +
/// out_len` of a column matrix back into a CHW image gradient.
pub fn col2im_add(g: &ConvGeom, col: &[f64], ld: usize, offset: usize, image: &mut [f64]) {
    for c in 0..g.in_c {
        let plane = &mut image[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..g.k_h {
            for kj in 0..g.k_w {
                let row = (c * g.k_h + ki) * g.k_w + kj;
                let src = &col[row * ld + offset..row * ld + offset + g.out_len()];
                for oh in 0..g.out_h {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    if ih < 0 || ih >= g.in_h as isize {
                        continue;
                    }
                    let dst = &mut plane[ih as usize * g.in_w..(ih as usize + 1) * g.in_w];
                    for ow in 0..g.out_w {
                        let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                        if iw >= 0 && iw < g.in_w as isize {
                            dst[iw as usize] += src[oh * g.out_w + ow];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward(g: &ConvGeom, input: &[f64], kernel: &[f64]) -> Vec<f64> {
    let (k, l) = (g.patch_len(), g.out_len());
    let in_len = g.in_c * g.in_h * g.in_w;
    let mut out = vec![0.0; g.batch * g.out_c * l];
    let mut col = vec![0.0; k * l];
    for n in 0..g.batch {
        im2col(g, &input[n * in_len..(n + 1) * in_len], &mut col, l, 0);
        gemm(
            g.out_c,
            k,
            l,
            kernel,
            false,
            &col,
            false,
            &mut out[n * g.out_c * l..(n + 1) * g.out_c * l],
            false,
        );
    }
    out
}

/// Returns `(d_input, d_kernel)` for the requested operands.
pub fn conv2d_backward(
    g: &ConvGeom,
    input: &[f64],
    kernel: &[f64],
    d_out: &[f64],
    want_input: bool,
    want_kernel: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let (k, l) = (g.patch_len(), g.out_len());
    let in_len = g.in_c * g.in_h * g.in_w;
    let mut d_input = want_input.then(|| vec![0.0; g.batch * in_len]);
    let mut d_kernel = want_kernel.then(|| vec![0.0; g.out_c * k]);
    let mut col = vec![0.0; k * l];
    let mut d_col = vec![0.0; k * l];
    for n in 0..g.batch {
        let d_out_n = &d_out[n * g.out_c * l..(n + 1) * g.out_c * l];
        if let Some(dk) = d_kernel.as_mut() {
            im2col(g, &input[n * in_len..(n + 1) * in_len], &mut col, l, 0);
            gemm(g.out_c, l, k, d_out_n, false, &col, true, dk, true);
        }
        if let Some(dx) = d_input.as_mut() {
            gemm(k, g.out_c, l, kernel, true, d_out_n, false, &mut d_col, false);
            col2im_add(g, &d_col, l, 0, &mut dx[n * in_len..(n + 1) * in_len]);
        }
    }
    (d_input, d_kernel)
}

/// Max-pool over NCHW planes. Returns the pooled values and, per output, the
/// flat input index that won; ties go to the first element in scan order.
pub fn maxpool_forward(
    input: &[f64],
    planes: usize,
    h: usize,
    w: usize,
    window: usize,
    stride: usize,
) -> (Vec<f64>, Vec<usize>, usize, usize) {
    let out_h = (h - window) / stride + 1;
    let out_w = (w - window) / stride + 1;
    let mut out = Vec::with_capacity(planes * out_h * out_w);
    let mut arg = Vec::with_capacity(planes * out_h * out_w);
    for p in 0..planes {
        let base = p * h * w;
        for oh in 0..out_h {
            for ow in 0..out_w {
                let mut best_idx = base + oh * stride * w + ow * stride;
                let mut best = input[best_idx];
                for i in 0..window {
                    for j in 0..window {
                        let idx = base + (oh * stride + i) * w + ow * stride + j;
                        if input[idx] > best {
                            best = input[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                arg.push(best_idx);
            }
        }
    }
    (out, arg, out_h, out_w)
}
