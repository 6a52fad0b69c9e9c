//! Synthetic noise generators.
//!
//! Gaussian variates come from the Box-Muller transform applied to a
//! ChaCha8 stream seeded with the model seed and positioned on stream
//! `frame_index`, so every frame draws from its own reproducible stream
//! regardless of how frames are scheduled.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::frame_io::{Frame, FrameSequence};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseKind {
    /// Additive white Gaussian noise with standard deviation `sigma`.
    Awgn { sigma: f64 },
    /// Each value multiplied by `N(1, sigma^2)`.
    Multiplicative { sigma: f64 },
    /// AWGN field blurred with a 3x3 box filter before being added.
    Correlated { sigma: f64 },
    /// Each value replaced by `U[0, 255]` with probability `p`.
    Impulse { p: f64 },
    /// AWGN followed by block-DCT quantization at `quality`.
    Jpeg { sigma: f64, quality: u8 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub seed: u64,
}

impl NoiseModel {
    pub fn new(kind: NoiseKind, seed: u64) -> Result<Self> {
        let m = Self { kind, seed };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::InvalidParam(what));
        match self.kind {
            NoiseKind::Awgn { sigma } | NoiseKind::Correlated { sigma } | NoiseKind::Multiplicative { sigma }
                if !(sigma > 0.0 && sigma.is_finite()) =>
            {
                bad(format!("noise sigma must be positive, got {sigma}"))
            }
            NoiseKind::Impulse { p } if !(0.0..=1.0).contains(&p) => bad(format!("impulse probability {p} outside [0, 1]")),
            NoiseKind::Jpeg { sigma, .. } if !(sigma > 0.0 && sigma.is_finite()) => {
                bad(format!("noise sigma must be positive, got {sigma}"))
            }
            NoiseKind::Jpeg { quality, .. } if !(1..=100).contains(&quality) => {
                bad(format!("jpeg quality {quality} outside [1, 100]"))
            }
            _ => Ok(()),
        }
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    /// `awgn:20`, `mg:0.3`, `cg:25`, `ir:0.1`, `jpeg:25:60`. Omitted
    /// parameters take the standard test-noise values.
    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.trim().split(':');
        let name = parts.next().unwrap_or_default().to_ascii_lowercase();
        let args: Vec<f64> = parts
            .map(|p| {
                p.parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad noise parameter {p:?} in {s:?}")))
            })
            .collect::<Result<_>>()?;
        let arg = |i: usize, default: f64| args.get(i).copied().unwrap_or(default);
        let max_args = |n: usize| {
            if args.len() > n {
                Err(Error::Config(format!("too many parameters in noise spec {s:?}")))
            } else {
                Ok(())
            }
        };
        let kind = match name.as_str() {
            "awgn" => {
                max_args(1)?;
                NoiseKind::Awgn { sigma: arg(0, 20.0) }
            }
            "mg" => {
                max_args(1)?;
                NoiseKind::Multiplicative { sigma: arg(0, 0.3) }
            }
            "cg" => {
                max_args(1)?;
                NoiseKind::Correlated { sigma: arg(0, 25.0) }
            }
            "ir" => {
                max_args(1)?;
                NoiseKind::Impulse { p: arg(0, 0.1) }
            }
            "jpeg" => {
                max_args(2)?;
                let q = arg(1, 60.0);
                if q.fract() != 0.0 || !(1.0..=100.0).contains(&q) {
                    return Err(Error::Config(format!("jpeg quality must be an integer in [1, 100], got {q}")));
                }
                NoiseKind::Jpeg {
                    sigma: arg(0, 25.0),
                    quality: q as u8,
                }
            }
            other => return Err(Error::Config(format!("unknown noise model {other:?}"))),
        };
        NoiseModel { kind, seed: 0 }
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(kind)
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseKind::Awgn { sigma } => write!(f, "awgn:{sigma}"),
            NoiseKind::Multiplicative { sigma } => write!(f, "mg:{sigma}"),
            NoiseKind::Correlated { sigma } => write!(f, "cg:{sigma}"),
            NoiseKind::Impulse { p } => write!(f, "ir:{p}"),
            NoiseKind::Jpeg { sigma, quality } => write!(f, "jpeg:{sigma}:{quality}"),
        }
    }
}

/// Fills `out` with `std * N(0, 1)` using Box-Muller pairs.
pub fn gaussian_fill<R: Rng>(rng: &mut R, out: &mut [f64], std: f64) {
    let mut chunks = out.chunks_exact_mut(2);
    for pair in &mut chunks {
        let (a, b) = box_muller(rng);
        pair[0] = std * a;
        pair[1] = std * b;
    }
    if let [last] = chunks.into_remainder() {
        *last = std * box_muller(rng).0;
    }
}

fn box_muller<R: Rng>(rng: &mut R) -> (f64, f64) {
    // 1 - U maps [0, 1) onto (0, 1], keeping the log finite.
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    let r = (-2.0 * u1.ln()).sqrt();
    let t = std::f64::consts::TAU * u2;
    (r * t.cos(), r * t.sin())
}

/// Generator for frame `index` of a sequence noised with `seed`.
pub fn frame_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Noises every frame independently, then clips to `[0, 255]` and rounds.
pub fn apply_noise(model: &NoiseModel, clean: &FrameSequence) -> Result<FrameSequence> {
    model.validate()?;
    let frames = par::map_range(clean.len(), |i| apply_noise_frame(model, clean.frame(i), i as u64));
    let mut out = FrameSequence::new(frames)?;
    out.frame_rate = clean.frame_rate;
    Ok(out)
}

/// Noises a single frame using stream `index`.
pub fn apply_noise_frame(model: &NoiseModel, clean: &Frame, index: u64) -> Frame {
    let mut rng = frame_rng(model.seed, index);
    let (c, h, w) = clean.dims();
    let mut noisy = clean.clone();
    match model.kind {
        NoiseKind::Awgn { sigma } => add_gaussian(&mut rng, noisy.data_mut(), sigma),
        NoiseKind::Multiplicative { sigma } => {
            let mut z = vec![0.0; noisy.data().len()];
            gaussian_fill(&mut rng, &mut z, sigma);
            noisy.data_mut().iter_mut().zip(&z).for_each(|(v, n)| *v *= 1.0 + n);
        }
        NoiseKind::Correlated { sigma } => {
            let mut field = vec![0.0; noisy.data().len()];
            gaussian_fill(&mut rng, &mut field, sigma);
            for ch in 0..c {
                let plane = &field[ch * h * w..(ch + 1) * h * w];
                let blurred = box_blur(plane, h, w, 1);
                noisy.data_mut()[ch * h * w..(ch + 1) * h * w]
                    .iter_mut()
                    .zip(&blurred)
                    .for_each(|(v, n)| *v += n);
            }
        }
        NoiseKind::Impulse { p } => {
            for v in noisy.data_mut() {
                let hit = rng.random::<f64>() < p;
                let u = rng.random::<f64>() * 255.0;
                if hit {
                    *v = u;
                }
            }
        }
        NoiseKind::Jpeg { sigma, quality } => {
            add_gaussian(&mut rng, noisy.data_mut(), sigma);
            // The codec sees an 8-bit image.
            noisy = jpeg_degrade(&noisy.quantized(), quality);
        }
    }
    noisy.quantized()
}

fn add_gaussian<R: Rng>(rng: &mut R, data: &mut [f64], sigma: f64) {
    let mut z = vec![0.0; data.len()];
    gaussian_fill(rng, &mut z, sigma);
    data.iter_mut().zip(&z).for_each(|(v, n)| *v += n);
}

/// Mean over the in-image part of each `(2r+1)^2` neighborhood.
pub fn box_blur(plane: &[f64], h: usize, w: usize, r: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let y0 = y.saturating_sub(r);
        let y1 = (y + r).min(h - 1);
        for x in 0..w {
            let x0 = x.saturating_sub(r);
            let x1 = (x + r).min(w - 1);
            let mut s = 0.0;
            for yy in y0..=y1 {
                s += plane[yy * w + x0..=yy * w + x1].iter().sum::<f64>();
            }
            out[y * w + x] = s / ((y1 - y0 + 1) * (x1 - x0 + 1)) as f64;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Block-DCT JPEG-like degradation

/// Annex K luminance quantization table, row-major.
pub const LUMA_QUANT: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Quantizer steps for `quality` following the libjpeg scaling convention.
pub fn quant_table(quality: u8) -> [f64; 64] {
    let q = quality.clamp(1, 100) as u32;
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut t = [0.0; 64];
    for (dst, &base) in t.iter_mut().zip(LUMA_QUANT.iter()) {
        *dst = ((base as u32 * scale + 50) / 100).clamp(1, 255) as f64;
    }
    t
}

fn dct_basis() -> [[f64; 8]; 8] {
    // basis[u][x] = C(u)/2 * cos((2x+1) u pi / 16)
    let mut b = [[0.0; 8]; 8];
    for (u, row) in b.iter_mut().enumerate() {
        let cu = if u == 0 { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
        for (x, v) in row.iter_mut().enumerate() {
            *v = 0.5 * cu * (((2 * x + 1) * u) as f64 * std::f64::consts::PI / 16.0).cos();
        }
    }
    b
}

/// Orthonormal 8x8 DCT-II of a level-shifted block.
pub fn fdct8(block: &[f64; 64]) -> [f64; 64] {
    let b = dct_basis();
    let mut tmp = [0.0; 64];
    for y in 0..8 {
        for u in 0..8 {
            tmp[y * 8 + u] = (0..8).map(|x| b[u][x] * block[y * 8 + x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for v in 0..8 {
        for u in 0..8 {
            out[v * 8 + u] = (0..8).map(|y| b[v][y] * tmp[y * 8 + u]).sum();
        }
    }
    out
}

pub fn idct8(coef: &[f64; 64]) -> [f64; 64] {
    let b = dct_basis();
    let mut tmp = [0.0; 64];
    for v in 0..8 {
        for x in 0..8 {
            tmp[v * 8 + x] = (0..8).map(|u| b[u][x] * coef[v * 8 + u]).sum();
        }
    }
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            out[y * 8 + x] = (0..8).map(|v| b[v][y] * tmp[v * 8 + x]).sum();
        }
    }
    out
}

/// Per channel: 8x8 DCT, quantize/dequantize with the scaled luminance table,
/// inverse DCT, clip to `[0, 255]`. Partial edge blocks are padded by edge
/// replication. No entropy coding and no chroma subsampling.
pub fn jpeg_degrade(frame: &Frame, quality: u8) -> Frame {
    let q = quant_table(quality);
    let (c, h, w) = frame.dims();
    let mut out = frame.clone();
    for ch in 0..c {
        let src = frame.plane(ch);
        let dst = &mut out.data_mut()[ch * h * w..(ch + 1) * h * w];
        for by in (0..h).step_by(8) {
            for bx in (0..w).step_by(8) {
                let mut block = [0.0; 64];
                for y in 0..8 {
                    for x in 0..8 {
                        let sy = (by + y).min(h - 1);
                        let sx = (bx + x).min(w - 1);
                        block[y * 8 + x] = src[sy * w + sx] - 128.0;
                    }
                }
                let mut coef = fdct8(&block);
                for (cv, qv) in coef.iter_mut().zip(&q) {
                    *cv = (*cv / qv).round() * qv;
                }
                let rec = idct8(&coef);
                for y in 0..8.min(h - by) {
                    for x in 0..8.min(w - bx) {
                        dst[(by + y) * w + bx + x] = (rec[y * 8 + x] + 128.0).clamp(0.0, 255.0);
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(frames: Vec<Frame>) -> FrameSequence {
        FrameSequence::new(frames).unwrap()
    }

    fn ramp(h: usize, w: usize) -> Frame {
        Frame::from_fn(1, h, w, |_, y, x| 60.0 + ((y * 7 + x * 3) % 136) as f64)
    }

    #[test]
    fn parses_model_language() {
        assert_eq!("awgn:20".parse::<NoiseKind>().unwrap(), NoiseKind::Awgn { sigma: 20.0 });
        assert_eq!("jpeg:25:60".parse::<NoiseKind>().unwrap(), NoiseKind::Jpeg { sigma: 25.0, quality: 60 });
        assert_eq!("ir".parse::<NoiseKind>().unwrap(), NoiseKind::Impulse { p: 0.1 });
        assert!("awgn:-1".parse::<NoiseKind>().is_err());
        assert!("ir:1.5".parse::<NoiseKind>().is_err());
        assert!("jpeg:25:0".parse::<NoiseKind>().is_err());
        assert!("speckle:3".parse::<NoiseKind>().is_err());
        let k = NoiseKind::Correlated { sigma: 25.0 };
        assert_eq!(k.to_string().parse::<NoiseKind>().unwrap(), k);
    }

    #[test]
    fn invalid_models_are_rejected() {
        assert!(NoiseModel::new(NoiseKind::Awgn { sigma: 0.0 }, 1).is_err());
        assert!(NoiseModel::new(NoiseKind::Multiplicative { sigma: -0.1 }, 1).is_err());
        assert!(NoiseModel::new(NoiseKind::Impulse { p: -0.1 }, 1).is_err());
        assert!(NoiseModel::new(NoiseKind::Jpeg { sigma: 25.0, quality: 101 }, 1).is_err());
    }

    #[test]
    fn impulse_with_zero_probability_only_rounds() {
        let clean = Frame::from_fn(1, 9, 9, |_, y, x| 10.3 * y as f64 + 0.6 * x as f64);
        let m = NoiseModel::new(NoiseKind::Impulse { p: 0.0 }, 5).unwrap();
        let out = apply_noise(&m, &seq(vec![clean.clone(), clean.clone()])).unwrap();
        assert_eq!(out.frame(0), &clean.quantized());
    }

    #[test]
    fn multiplicative_fixes_zero() {
        let m = NoiseModel::new(NoiseKind::Multiplicative { sigma: 0.3 }, 5).unwrap();
        let z = Frame::filled(1, 16, 16, 0.0);
        let out = apply_noise(&m, &seq(vec![z.clone(), z.clone()])).unwrap();
        assert!(out.frames().iter().all(|f| f.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn outputs_are_integers_in_range_and_seeded() {
        let clean = seq(vec![ramp(24, 24), ramp(24, 24), ramp(24, 24)]);
        for spec in ["awgn:20", "mg:0.3", "cg:25", "ir:0.1", "jpeg:25:60"] {
            let kind: NoiseKind = spec.parse().unwrap();
            let a = apply_noise(&NoiseModel::new(kind, 11).unwrap(), &clean).unwrap();
            let b = apply_noise(&NoiseModel::new(kind, 11).unwrap(), &clean).unwrap();
            let c = apply_noise(&NoiseModel::new(kind, 12).unwrap(), &clean).unwrap();
            assert_eq!(a, b, "{spec}");
            assert_ne!(a, c, "{spec}");
            assert_ne!(a.frame(0), a.frame(1), "{spec}: frames must get independent noise");
            for v in a.frames().iter().flat_map(|f| f.data()) {
                assert!(v.fract() == 0.0 && (0.0..=255.0).contains(v), "{spec}: {v}");
            }
        }
    }

    #[test]
    fn awgn_statistics() {
        // >= 1e6 samples, clean values in [60, 195] so clipping never bites.
        let frames: Vec<Frame> = (0..16).map(|_| ramp(256, 256)).collect();
        let clean = seq(frames);
        let noisy = apply_noise(&NoiseModel::new(NoiseKind::Awgn { sigma: 20.0 }, 7).unwrap(), &clean).unwrap();
        let (mut n, mut s2, mut pos, mut neg) = (0usize, 0.0, 0usize, 0usize);
        for (c, y) in clean.frames().iter().zip(noisy.frames()) {
            for (a, b) in c.data().iter().zip(y.data()) {
                let d = b - a;
                n += 1;
                s2 += d * d;
                if d > 0.0 {
                    pos += 1;
                } else if d < 0.0 {
                    neg += 1;
                }
            }
        }
        assert!(n >= 1_000_000);
        let std = (s2 / n as f64).sqrt();
        assert!((std / 20.0 - 1.0).abs() < 0.05, "std {std}");
        // Sign test: under a zero median, pos - neg ~ N(0, pos + neg).
        let m = (pos + neg) as f64;
        let z = (pos as f64 - neg as f64) / m.sqrt();
        assert!(z.abs() < 5.0, "sign test z = {z}");
    }

    #[test]
    fn correlated_noise_is_blurred() {
        let clean = seq(vec![Frame::filled(1, 128, 128, 128.0), Frame::filled(1, 128, 128, 128.0)]);
        let noisy = apply_noise(&NoiseModel::new(NoiseKind::Correlated { sigma: 25.0 }, 3).unwrap(), &clean).unwrap();
        let d: Vec<f64> = noisy.frame(0).data().iter().map(|v| v - 128.0).collect();
        let var = d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64;
        // A 3x3 mean divides the variance by 9 and correlates neighbors.
        assert!((var.sqrt() - 25.0 / 3.0).abs() < 0.5, "{}", var.sqrt());
        let mut cov = 0.0;
        for y in 0..128 {
            for x in 0..127 {
                cov += d[y * 128 + x] * d[y * 128 + x + 1];
            }
        }
        let rho = cov / (128.0 * 127.0) / var;
        assert!(rho > 0.5, "neighbor correlation {rho}");
    }

    #[test]
    fn quality_scaling_follows_libjpeg() {
        let q100 = quant_table(100);
        assert!(q100.iter().all(|&v| v == 1.0));
        let q50 = quant_table(50);
        assert_eq!(q50[0], 16.0);
        let q60 = quant_table(60);
        assert_eq!(q60[0], ((16 * 80 + 50) / 100) as f64);
    }

    #[test]
    fn dct_round_trips() {
        let mut b = [0.0; 64];
        for (i, v) in b.iter_mut().enumerate() {
            *v = ((i * 37) % 23) as f64 - 11.0;
        }
        let r = idct8(&fdct8(&b));
        for (x, y) in b.iter().zip(&r) {
            assert!((x - y).abs() < 1e-10);
        }
        // Constant block: DC = 8 * value.
        let c = fdct8(&[5.0; 64]);
        assert!((c[0] - 40.0).abs() < 1e-12);
    }

    #[test]
    fn jpeg_keeps_constant_blocks() {
        let f = Frame::filled(1, 16, 24, 128.0);
        assert_eq!(jpeg_degrade(&f, 60), f);
        let g = Frame::from_fn(1, 16, 16, |_, y, x| if (y / 8 + x / 8) % 2 == 0 { 77.0 } else { 201.0 });
        assert_eq!(jpeg_degrade(&g, 100).quantized(), g);
    }

    #[test]
    fn sub_half_step_coefficient_is_dropped() {
        let q = quant_table(60);
        // DC on a quantizer multiple plus one AC coefficient below half a step.
        let mut coef = [0.0; 64];
        coef[0] = 3.0 * q[0];
        coef[9] = 0.45 * q[9];
        let block = idct8(&coef);
        let f = Frame::from_fn(1, 8, 8, |_, y, x| block[y * 8 + x] + 128.0);
        let out = jpeg_degrade(&f, 60);
        let dc_only = 128.0 + 3.0 * q[0] / 8.0;
        for v in out.data() {
            assert!((v - dc_only).abs() < 1e-9, "{v} vs {dc_only}");
        }
    }
}
