use super::Tensor4;
use crate::error::{Error, Result};
use crate::par;

/// Gradients produced by [`conv2d_backward`].
#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub input: Tensor4,
    pub weight: Tensor4,
    pub bias: Tensor4,
}

/// Row-major `c = alpha * op(a) * op(b) + beta * c` where `a` is `m x k`
/// (or `k x m` when `ta`) and `b` is `k x n` (or `n x k` when `tb`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the strides can reach.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
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

/// Unfolds a `(c, h, w)` sample into a `(c*k*k, h*w)` patch matrix with zero
/// padding of `k / 2` on every side.
pub(crate) fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let r = (k / 2) as isize;
    let hw = h * w;
    let mut cols = vec![0.0; c * k * k * hw];
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let dx = kx as isize - r;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + ky as isize - r;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let s0 = (x_lo as isize + dx) as usize;
                    dst[y * w + x_lo..y * w + x_hi].copy_from_slice(&src[s0..s0 + (x_hi - x_lo)]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: folds a patch matrix back, accumulating into `out`.
pub(crate) fn col2im_accumulate(cols: &[f64], c: usize, h: usize, w: usize, k: usize, out: &mut [f64]) {
    let r = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut out[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let dx = kx as isize - r;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + ky as isize - r;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let s0 = (x_lo as isize + dx) as usize;
                    let dst = &mut plane[sy as usize * w + s0..sy as usize * w + s0 + (x_hi - x_lo)];
                    for (d, s) in dst.iter_mut().zip(&src[y * w + x_lo..y * w + x_hi]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

fn check_conv(op: &'static str, input: &Tensor4, weight: &Tensor4, bias: Option<&Tensor4>) -> Result<usize> {
    let [_, c_in, _, _] = input.shape();
    let [c_out, wc, kh, kw] = weight.shape();
    if wc != c_in {
        return Err(Error::shape(
            op,
            format!("kernel input channels = {c_in}"),
            format!("kernel shape {:?} for input {:?}", weight.shape(), input.shape()),
        ));
    }
    if kh != kw || kh % 2 == 0 {
        return Err(Error::shape(op, "odd square kernel", format!("{kh}x{kw}")));
    }
    if let Some(b) = bias {
        if b.shape() != [c_out, 1, 1, 1] {
            return Err(Error::shape(op, format!("bias [{c_out}, 1, 1, 1]"), format!("{:?}", b.shape())));
        }
    }
    Ok(kh)
}

/// Stride-1 convolution with "same" zero padding.
///
/// `weight` has shape `(out, in, k, k)` with odd `k`; `bias`, when given, has
/// shape `(out, 1, 1, 1)`.
pub fn conv2d(input: &Tensor4, weight: &Tensor4, bias: Option<&Tensor4>) -> Result<Tensor4> {
    let k = check_conv("conv2d", input, weight, bias)?;
    let [n, c_in, h, w] = input.shape();
    let c_out = weight.shape()[0];
    let per = c_out * h * w;
    let outs = par::map_range(n, |i| {
        let mut out = vec![0.0; per];
        let cols = im2col(input.sample(i), c_in, h, w, k);
        forward_cols(&cols, c_in * k * k, h * w, weight.data(), bias.map(|b| b.data()), &mut out);
        out
    });
    Tensor4::from_vec([n, c_out, h, w], outs.concat())
}

pub(crate) fn forward_cols(cols: &[f64], ckk: usize, hw: usize, weight: &[f64], bias: Option<&[f64]>, out: &mut [f64]) {
    let c_out = out.len() / hw.max(1);
    match bias {
        Some(b) => {
            for (o, &bv) in b.iter().enumerate().take(c_out) {
                out[o * hw..(o + 1) * hw].fill(bv);
            }
            gemm(c_out, ckk, hw, 1.0, weight, false, cols, false, 1.0, out);
        }
        None => gemm(c_out, ckk, hw, 1.0, weight, false, cols, false, 0.0, out),
    }
}

/// Gradients of `conv2d(input, weight, bias)` given the upstream gradient.
///
/// Weight and bias gradients are summed over the batch in index order.
pub fn conv2d_backward(input: &Tensor4, weight: &Tensor4, grad_out: &Tensor4) -> Result<ConvGrads> {
    let k = check_conv("conv2d_backward", input, weight, None)?;
    let [n, c_in, h, w] = input.shape();
    let c_out = weight.shape()[0];
    if grad_out.shape() != [n, c_out, h, w] {
        return Err(Error::shape(
            "conv2d_backward",
            format!("{:?}", [n, c_out, h, w]),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let ckk = c_in * k * k;
    let hw = h * w;
    let per_sample = par::map_range(n, |i| {
        let cols = im2col(input.sample(i), c_in, h, w, k);
        let g = grad_out.sample(i);
        let mut dw = vec![0.0; c_out * ckk];
        gemm(c_out, hw, ckk, 1.0, g, false, &cols, true, 0.0, &mut dw);
        let db: Vec<f64> = (0..c_out).map(|o| g[o * hw..(o + 1) * hw].iter().sum()).collect();
        let mut dcols = vec![0.0; ckk * hw];
        gemm(ckk, c_out, hw, 1.0, weight.data(), true, g, false, 0.0, &mut dcols);
        let mut dx = vec![0.0; c_in * hw];
        col2im_accumulate(&dcols, c_in, h, w, k, &mut dx);
        (dx, dw, db)
    });
    let mut grad_w = Tensor4::zeros(weight.shape());
    let mut grad_b = Tensor4::zeros([c_out, 1, 1, 1]);
    let mut dx_all = Vec::with_capacity(n * c_in * hw);
    for (dx, dw, db) in per_sample {
        dx_all.extend_from_slice(&dx);
        grad_w.data_mut().iter_mut().zip(&dw).for_each(|(a, b)| *a += b);
        grad_b.data_mut().iter_mut().zip(&db).for_each(|(a, b)| *a += b);
    }
    Ok(ConvGrads {
        input: Tensor4::from_vec([n, c_in, h, w], dx_all)?,
        weight: grad_w,
        bias: grad_b,
    })
}
