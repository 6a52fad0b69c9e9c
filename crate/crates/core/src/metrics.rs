//! Image quality metrics on the `[0, 255]` scale.

use crate::error::{Error, Result};
use crate::frame_io::{Frame, FrameSequence};

/// `10 log10(255^2 / MSE)`; identical frames give `+inf`.
pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    a.check_same("psnr", b)?;
    let n = a.data().len();
    if n == 0 {
        return Err(Error::InvalidParam("psnr of an empty frame".into()));
    }
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { 10.0 * (255.0 * 255.0 / mse).log10() })
}

/// Formats a dB value, writing `inf` for the identical-frames sentinel.
pub fn format_db(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v:.4}")
    }
}

const WIN: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

fn gaussian_taps() -> [f64; WIN] {
    let mut k = [0.0; WIN];
    let r = (WIN / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable filtering over valid positions only.
fn filter_valid(p: &[f64], h: usize, w: usize, k: &[f64; WIN]) -> Vec<f64> {
    let (oh, ow) = (h - WIN + 1, w - WIN + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..WIN).map(|j| k[j] * p[y * w + x + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..WIN).map(|j| k[j] * tmp[(y + j) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over all valid 11x11 Gaussian windows (σ 1.5, K1 0.01,
/// K2 0.03, L 255), averaged over channels.
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    a.check_same("ssim", b)?;
    let (c, h, w) = a.dims();
    if h < WIN || w < WIN {
        return Err(Error::InvalidParam(format!("ssim needs frames of at least {WIN}x{WIN}, got {h}x{w}")));
    }
    let k = gaussian_taps();
    let mut total = 0.0;
    for ch in 0..c {
        let (pa, pb) = (a.plane(ch), b.plane(ch));
        let aa: Vec<f64> = pa.iter().map(|v| v * v).collect();
        let bb: Vec<f64> = pb.iter().map(|v| v * v).collect();
        let ab: Vec<f64> = pa.iter().zip(pb).map(|(x, y)| x * y).collect();
        let (ma, mb) = (filter_valid(pa, h, w, &k), filter_valid(pb, h, w, &k));
        let (saa, sbb, sab) = (filter_valid(&aa, h, w, &k), filter_valid(&bb, h, w, &k), filter_valid(&ab, h, w, &k));
        let mut s = 0.0;
        for i in 0..ma.len() {
            let (mx, my) = (ma[i], mb[i]);
            let vx = saa[i] - mx * mx;
            let vy = sbb[i] - my * my;
            let cxy = sab[i] - mx * my;
            s += ((2.0 * mx * my + C1) * (2.0 * cxy + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2));
        }
        total += s / ma.len() as f64;
    }
    Ok(total / c as f64)
}

/// Per-frame PSNR and SSIM of `test` against `reference`.
pub fn sequence_metrics(test: &FrameSequence, reference: &FrameSequence) -> Result<Vec<(f64, f64)>> {
    if test.len() != reference.len() {
        return Err(Error::shape("sequence_metrics", reference.len(), test.len()));
    }
    test.frames()
        .iter()
        .zip(reference.frames())
        .map(|(t, r)| Ok((psnr(t, r)?, ssim(t, r)?)))
        .collect()
}

/// Mean PSNR of `test` against `reference`.
pub fn mean_psnr(test: &FrameSequence, reference: &FrameSequence) -> Result<f64> {
    if test.len() != reference.len() || test.is_empty() {
        return Err(Error::shape("mean_psnr", reference.len(), test.len()));
    }
    let mut s = 0.0;
    for (t, r) in test.frames().iter().zip(reference.frames()) {
        s += psnr(t, r)?;
    }
    Ok(s / test.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_values() {
        let a = Frame::filled(1, 4, 4, 10.0);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert_eq!(format_db(f64::INFINITY), "inf");
        let b = a.map(|v| v + 1.0);
        assert!((psnr(&a, &b).unwrap() - 10.0 * 65025f64.log10()).abs() < 1e-12);
        assert!((psnr(&Frame::filled(1, 2, 2, 0.0), &Frame::filled(1, 2, 2, 255.0)).unwrap()).abs() < 1e-12);
        assert!(psnr(&a, &Frame::filled(1, 4, 5, 0.0)).is_err());
    }

    #[test]
    fn ssim_values() {
        let a = Frame::from_fn(1, 16, 20, |_, y, x| ((y * 17 + x * 29) % 256) as f64);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let b = a.map(|v| 255.0 - v);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        let lo = Frame::filled(1, 12, 12, 0.0);
        let hi = Frame::filled(1, 12, 12, 255.0);
        assert!(ssim(&lo, &hi).unwrap() < 0.05);
        assert!(ssim(&Frame::filled(1, 10, 20, 0.0), &Frame::filled(1, 10, 20, 0.0)).is_err());
    }
}
