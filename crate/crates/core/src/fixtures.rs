//! Procedural clean sequences with exact ground-truth flow and occlusion.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::correspondence::OcclusionMask;
use crate::error::{Error, Result};
use crate::flow::{FlowField, FlowGroundTruth};
use crate::frame_io::{Frame, FrameSequence};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FixtureKind {
    StaticTexture,
    TranslatingTexture,
    OccluderSquare,
    LightingRamp,
}

impl FixtureKind {
    pub const ALL: [FixtureKind; 4] = [
        FixtureKind::StaticTexture,
        FixtureKind::TranslatingTexture,
        FixtureKind::OccluderSquare,
        FixtureKind::LightingRamp,
    ];
}

impl FromStr for FixtureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static-texture" => Ok(Self::StaticTexture),
            "translating-texture" => Ok(Self::TranslatingTexture),
            "occluder-square" => Ok(Self::OccluderSquare),
            "lighting-ramp" => Ok(Self::LightingRamp),
            _ => Err(Error::Config(format!(
                "unknown fixture {s:?} (static-texture, translating-texture, occluder-square, lighting-ramp)"
            ))),
        }
    }
}

impl fmt::Display for FixtureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::StaticTexture => "static-texture",
            Self::TranslatingTexture => "translating-texture",
            Self::OccluderSquare => "occluder-square",
            Self::LightingRamp => "lighting-ramp",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FixtureSpec {
    pub kind: FixtureKind,
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub channels: usize,
    pub seed: u64,
    /// Per-frame displacement of the translating texture.
    pub shift: (i64, i64),
    /// Per-frame displacement of the occluding square.
    pub square_step: usize,
}

impl FixtureSpec {
    pub fn new(kind: FixtureKind, size: usize, frames: usize, seed: u64) -> Self {
        Self {
            kind,
            height: size,
            width: size,
            frames,
            channels: 1,
            seed,
            shift: (2, 0),
            square_step: 6,
        }
    }
}

/// A clean sequence with, for each consecutive pair `(t, t+1)`, the ground
/// truth in both directions: `forward[t]` lives on frame `t` and points into
/// frame `t+1`; `backward[t]` lives on frame `t+1` and points into frame `t`.
/// Occlusion marks reference pixels with no counterpart in the other frame.
#[derive(Clone, Debug)]
pub struct Fixture {
    pub spec: FixtureSpec,
    pub clean: FrameSequence,
    pub forward: Vec<FlowGroundTruth>,
    pub backward: Vec<FlowGroundTruth>,
}

/// Periodic sum of integer-frequency sinusoids with values in `[40, 215]`.
#[derive(Clone, Debug)]
pub struct Texture {
    height: usize,
    width: usize,
    /// `(kx, ky, phase, amplitude)` per channel.
    waves: Vec<Vec<(f64, f64, f64, f64)>>,
}

impl Texture {
    pub fn random(height: usize, width: usize, channels: usize, rng: &mut ChaCha8Rng) -> Self {
        let waves = (0..channels)
            .map(|_| {
                let n = 5;
                let mut w: Vec<(f64, f64, f64, f64)> = (0..n)
                    .map(|_| {
                        let kx = rng.random_range(0..=6) as f64;
                        let ky = rng.random_range(if kx == 0.0 { 1 } else { 0 }..=6) as f64;
                        let phase = rng.random::<f64>() * std::f64::consts::TAU;
                        let amp = 0.3 + rng.random::<f64>();
                        (kx, ky, phase, amp)
                    })
                    .collect();
                let total: f64 = w.iter().map(|t| t.3).sum();
                w.iter_mut().for_each(|t| t.3 *= 87.5 / total);
                w
            })
            .collect();
        Self { height, width, waves }
    }

    /// Value at real coordinates, periodic in both axes.
    pub fn at(&self, c: usize, y: f64, x: f64) -> f64 {
        let tau = std::f64::consts::TAU;
        127.5
            + self.waves[c]
                .iter()
                .map(|&(kx, ky, ph, a)| a * (tau * (kx * x / self.width as f64 + ky * y / self.height as f64) + ph).sin())
                .sum::<f64>()
    }

    pub fn frame(&self) -> Frame {
        Frame::from_fn(self.waves.len(), self.height, self.width, |c, y, x| self.at(c, y as f64, x as f64))
    }
}

/// Clean still images for pretraining, independent of any fixture seed.
pub fn texture_corpus(count: usize, size: usize, channels: usize, seed: u64) -> Vec<Frame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_C0A9_0000_0000);
    (0..count)
        .map(|_| Texture::random(size, size, channels, &mut rng).frame().quantized())
        .collect()
}

fn gt(flow: FlowField, occ: OcclusionMask) -> FlowGroundTruth {
    FlowGroundTruth::new(flow, occ).expect("congruent")
}

fn departures(h: usize, w: usize, d: (i64, i64)) -> OcclusionMask {
    OcclusionMask::from_fn(h, w, |y, x| {
        let (sx, sy) = (x as i64 + d.0, y as i64 + d.1);
        sx < 0 || sy < 0 || sx >= w as i64 || sy >= h as i64
    })
}

/// Left edge of the square in each frame: moves by `step` and bounces
/// between the margins.
fn square_track(width: usize, side: usize, step: usize, frames: usize) -> Vec<usize> {
    let lo = side / 4;
    let hi = width - side - side / 4;
    let mut x = lo;
    let mut dir = 1i64;
    let mut out = Vec::with_capacity(frames);
    for _ in 0..frames {
        out.push(x);
        let next = x as i64 + dir * step as i64;
        if next < lo as i64 || next > hi as i64 {
            dir = -dir;
        }
        x = (x as i64 + dir * step as i64) as usize;
    }
    out
}

pub fn make_fixture(spec: FixtureSpec) -> Result<Fixture> {
    let FixtureSpec { kind, height: h, width: w, frames: n, channels: c, seed, .. } = spec;
    if n < 2 || h < 8 || w < 8 || c == 0 {
        return Err(Error::InvalidParam(format!("fixture needs >= 2 frames of >= 8x8 pixels, got {n} of {h}x{w}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bg = Texture::random(h, w, c, &mut rng);
    let still = bg.frame();
    let zero_gt = || gt(FlowField::zeros(h, w), OcclusionMask::empty(h, w));
    let (frames, forward, backward) = match kind {
        FixtureKind::StaticTexture => (vec![still; n], vec![zero_gt(); n - 1], vec![zero_gt(); n - 1]),
        FixtureKind::LightingRamp => {
            let frames = (0..n)
                .map(|t| {
                    let gain = 0.75 + 0.5 * t as f64 / (n - 1) as f64;
                    still.map(|v| (v * gain).clamp(0.0, 255.0))
                })
                .collect();
            (frames, vec![zero_gt(); n - 1], vec![zero_gt(); n - 1])
        }
        FixtureKind::TranslatingTexture => {
            let (dx, dy) = spec.shift;
            let frames = (0..n)
                .map(|t| {
                    let (ox, oy) = (dx * t as i64, dy * t as i64);
                    Frame::from_fn(c, h, w, |ch, y, x| {
                        let sx = (x as i64 - ox).rem_euclid(w as i64);
                        let sy = (y as i64 - oy).rem_euclid(h as i64);
                        still.get(ch, sy as usize, sx as usize)
                    })
                })
                .collect();
            let fwd = gt(FlowField::constant(h, w, dx as f64, dy as f64), departures(h, w, (dx, dy)));
            let bwd = gt(FlowField::constant(h, w, -dx as f64, -dy as f64), departures(h, w, (-dx, -dy)));
            (frames, vec![fwd; n - 1], vec![bwd; n - 1])
        }
        FixtureKind::OccluderSquare => {
            let side = h.min(w) / 4;
            let step = spec.square_step;
            if side == 0 || w < side + side / 2 + step {
                return Err(Error::InvalidParam(format!("{h}x{w} is too small for the occluder square")));
            }
            let fg = Texture::random(h, w, c, &mut rng);
            let top = (h - side) / 2;
            let xs = square_track(w, side, step, n);
            let inside = |y: usize, x: usize, x0: usize| y >= top && y < top + side && x >= x0 && x < x0 + side;
            let frames = xs
                .iter()
                .map(|&x0| {
                    Frame::from_fn(c, h, w, |ch, y, x| {
                        if inside(y, x, x0) {
                            fg.at(ch, (y - top) as f64, (x - x0) as f64)
                        } else {
                            still.get(ch, y, x)
                        }
                    })
                })
                .collect();
            let mut forward = Vec::with_capacity(n - 1);
            let mut backward = Vec::with_capacity(n - 1);
            for t in 0..n - 1 {
                let (a, b) = (xs[t], xs[t + 1]);
                let d = b as f64 - a as f64;
                forward.push(gt(
                    FlowField::from_fn(h, w, |y, x| if inside(y, x, a) { (d, 0.0) } else { (0.0, 0.0) }),
                    OcclusionMask::from_fn(h, w, |y, x| !inside(y, x, a) && inside(y, x, b)),
                ));
                backward.push(gt(
                    FlowField::from_fn(h, w, |y, x| if inside(y, x, b) { (-d, 0.0) } else { (0.0, 0.0) }),
                    OcclusionMask::from_fn(h, w, |y, x| !inside(y, x, b) && inside(y, x, a)),
                ));
            }
            (frames, forward, backward)
        }
    };
    let clean = FrameSequence::new(frames.into_iter().map(|f| f.quantized()).collect())?;
    Ok(Fixture {
        spec,
        clean,
        forward,
        backward,
    })
}
