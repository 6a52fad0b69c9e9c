//! Occlusion from forward-backward consistency (and the divergence
//! baseline), lighting variation between aligned clean estimates, and the
//! loss weight map `γ = (1 - o) · exp(-α3 · l)`.

use std::fmt;
use std::str::FromStr;

use crate::denoiser::Denoise;
use crate::error::{Error, Result};
use crate::flow::{center, refine_flow, warp_inverse, FlowField, RefineParams};
use crate::frame_io::{CropWindow, Frame};
use crate::tensor::Tensor4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MaskDirection {
    /// `o_i`, defined on frame `i` (looks up `w^f` through `w^b`).
    #[default]
    Current,
    /// `o_{i-1}`, the mirrored mask on frame `i - 1`.
    Previous,
}

/// Binary per-pixel map, `true` = occluded.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OcclusionMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
    pub direction: MaskDirection,
}

impl OcclusionMask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
            direction: MaskDirection::Current,
        }
    }

    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape("OcclusionMask::new", height * width, data.len()));
        }
        Ok(Self {
            height,
            width,
            data,
            direction: MaskDirection::Current,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let data = (0..height * width).map(|i| f(i / width, i % width)).collect();
        Self {
            height,
            width,
            data,
            direction: MaskDirection::Current,
        }
    }

    pub fn with_direction(mut self, direction: MaskDirection) -> Self {
        self.direction = direction;
        self
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&o| o).count()
    }

    /// Marks every flagged pixel as occluded.
    pub fn union_flags(&mut self, flags: &[bool]) -> Result<()> {
        if flags.len() != self.data.len() {
            return Err(Error::shape("OcclusionMask::union_flags", self.data.len(), flags.len()));
        }
        self.data.iter_mut().zip(flags).for_each(|(o, &f)| *o |= f);
        Ok(())
    }

    pub(crate) fn check_flow(&self, op: &'static str, f: &FlowField) -> Result<()> {
        if f.height() != self.height || f.width() != self.width {
            return Err(Error::shape(
                op,
                format!("{}x{}", f.height(), f.width()),
                format!("{}x{}", self.height, self.width),
            ));
        }
        Ok(())
    }

    pub fn crop(&self, window: &CropWindow) -> Result<Self> {
        Ok(Self {
            height: window.height,
            width: window.width,
            data: window.crop_plane(&self.data, self.height, self.width)?,
            direction: self.direction,
        })
    }

    /// F1 score of `self` as a prediction of `truth`; 1 when both are empty.
    pub fn f1(&self, truth: &OcclusionMask) -> Result<f64> {
        if self.data.len() != truth.data.len() {
            return Err(Error::shape("OcclusionMask::f1", truth.data.len(), self.data.len()));
        }
        let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
        for (&p, &t) in self.data.iter().zip(&truth.data) {
            match (p, t) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                _ => {}
            }
        }
        if tp + fp + fneg == 0 {
            return Ok(1.0);
        }
        Ok(2.0 * tp as f64 / (2 * tp + fp + fneg) as f64)
    }

    pub fn to_tensor(&self) -> Tensor4 {
        let data = self.data.iter().map(|&o| if o { 1.0 } else { 0.0 }).collect();
        Tensor4::from_vec([1, 1, self.height, self.width], data).expect("sized")
    }
}

/// Real-valued per-pixel map.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

/// Lighting variation `l ≥ 0` on the `[0, 1]` intensity scale.
pub type LightingMap = ScalarMap;
/// Loss weight `γ ∈ [0, 1]`.
pub type WeightMap = ScalarMap;

impl ScalarMap {
    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape("ScalarMap::new", height * width, data.len()));
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn crop(&self, window: &CropWindow) -> Result<Self> {
        Ok(Self {
            height: window.height,
            width: window.width,
            data: window.crop_plane(&self.data, self.height, self.width)?,
        })
    }

    /// Fraction of exactly-zero entries.
    pub fn zero_fraction(&self) -> f64 {
        if self.data.is_empty() {
            return 1.0;
        }
        self.data.iter().filter(|&&g| g == 0.0).count() as f64 / self.data.len() as f64
    }

    pub fn to_tensor(&self) -> Tensor4 {
        Tensor4::from_vec([1, 1, self.height, self.width], self.data.clone()).expect("sized")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorrespondenceParams {
    /// Relative consistency threshold.
    pub alpha1: f64,
    /// Absolute consistency threshold, px^2.
    pub alpha2: f64,
    /// Lighting sharpness in `ξ(l) = exp(-α3 l)`.
    pub alpha3: f64,
    pub eps: f64,
    /// Side of the lighting box filter.
    pub box_size: usize,
    /// Divergence below `-threshold` counts as occlusion in the baseline.
    pub divergence_threshold: f64,
}

impl Default for CorrespondenceParams {
    fn default() -> Self {
        Self {
            alpha1: 0.0064,
            alpha2: 1.4,
            alpha3: 5.0,
            eps: 1e-6,
            box_size: 5,
            divergence_threshold: 0.3,
        }
    }
}

impl CorrespondenceParams {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.alpha1, self.alpha2, self.alpha3, self.eps].iter().all(|v| *v >= 0.0)
            && self.box_size % 2 == 1
            && !self.divergence_threshold.is_nan();
        if !ok {
            return Err(Error::InvalidParam(format!("bad correspondence parameters {self:?}")));
        }
        Ok(())
    }
}

/// `o(p) = 0` iff `|w1(p) + w2(p + w1(p))|^2 < α1 (|w1(p)|^2 + |w2(p + w1(p))|^2) + α2`,
/// with `w2` sampled bilinearly and off-grid lookups counted as occluded.
/// `o_i` is `consistency_mask(w^b, w^f)`; `o_{i-1}` is `consistency_mask(w^f, w^b)`.
fn consistency_mask(w1: &FlowField, w2: &FlowField, params: &CorrespondenceParams) -> Result<OcclusionMask> {
    w1.check_flow("occlusion_consistency", w2)?;
    Ok(OcclusionMask::from_fn(w1.height(), w1.width(), |y, x| {
        let (u1, v1) = w1.get(y, x);
        match w2.sample(x as f64 + u1, y as f64 + v1) {
            None => true,
            Some((u2, v2)) => {
                let lhs = (u1 + u2).powi(2) + (v1 + v2).powi(2);
                let rhs = params.alpha1 * (u1 * u1 + v1 * v1 + u2 * u2 + v2 * v2) + params.alpha2;
                !(lhs < rhs)
            }
        }
    }))
}

/// `o_i` from the forward-backward consistency check.
pub fn occlusion_consistency(wf: &FlowField, wb: &FlowField, params: &CorrespondenceParams) -> Result<OcclusionMask> {
    Ok(consistency_mask(wb, wf, params)?.with_direction(MaskDirection::Current))
}

/// `o_{i-1}`: the same check with `w^f` and `w^b` exchanged.
pub fn occlusion_consistency_prev(wf: &FlowField, wb: &FlowField, params: &CorrespondenceParams) -> Result<OcclusionMask> {
    Ok(consistency_mask(wf, wb, params)?.with_direction(MaskDirection::Previous))
}

/// Central-difference divergence `∂u/∂x + ∂v/∂y` (one-sided on the border).
pub fn divergence(w: &FlowField) -> Vec<f64> {
    let (h, wd) = (w.height(), w.width());
    let d = |p: &[f64], lo: usize, hi: usize, i_lo: usize, i_hi: usize| {
        if hi == lo {
            0.0
        } else {
            (p[i_hi] - p[i_lo]) / (hi - lo) as f64
        }
    };
    let mut out = vec![0.0; h * wd];
    for y in 0..h {
        let (ym, yp) = (y.saturating_sub(1), (y + 1).min(h - 1));
        for x in 0..wd {
            let (xm, xp) = (x.saturating_sub(1), (x + 1).min(wd - 1));
            let du = d(w.u(), xm, xp, y * wd + xm, y * wd + xp);
            let dv = d(w.v(), ym, yp, ym * wd + x, yp * wd + x);
            out[y * wd + x] = du + dv;
        }
    }
    out
}

/// Baseline: occluded where the flow contracts, `div w < -threshold`.
pub fn occlusion_divergence(w: &FlowField, threshold: f64) -> OcclusionMask {
    let div = divergence(w);
    OcclusionMask::new(w.height(), w.width(), div.iter().map(|&d| d < -threshold).collect()).expect("sized")
}

/// `(x̂_i, x̂'_i) = (g(Y_i), warp(g(Y_{i-1}), w^b))`, or the raw center frames
/// in place of `g` outputs when `online` is off. Also returns the warp's
/// out-of-range flags.
pub fn clean_estimates<D: Denoise + ?Sized>(
    denoiser: &D,
    prev: &[&Frame],
    cur: &[&Frame],
    wb: &FlowField,
    online: bool,
) -> Result<(Frame, Frame, Vec<bool>)> {
    let (gp, gc) = if online {
        (denoiser.denoise_stack(prev)?, denoiser.denoise_stack(cur)?)
    } else {
        (center(prev)?.clone(), center(cur)?.clone())
    };
    let (warped, flags) = warp_inverse(&gp, wb)?;
    Ok((gc, warped, flags))
}

/// Zero-padded box sums of side `k`.
fn box_sum(p: &[f64], h: usize, w: usize, k: usize) -> Vec<f64> {
    let r = k / 2;
    // Horizontal then vertical running sums.
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            tmp[y * w + x] = p[y * w + lo..=y * w + hi].iter().sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        for x in 0..w {
            out[y * w + x] = (lo..=hi).map(|yy| tmp[yy * w + x]).sum();
        }
    }
    out
}

/// `l = |κ * ((x̂ - x̂') ⊙ (1 - o))| / (κ * (1 - o) + ε)` with a normalized
/// box filter `κ`, on the channel-mean difference scaled to `[0, 1]`.
pub fn lighting_variation(x_hat: &Frame, x_hat_warped: &Frame, occ: &OcclusionMask, params: &CorrespondenceParams) -> Result<LightingMap> {
    x_hat.check_same("lighting_variation", x_hat_warped)?;
    let (_, h, w) = x_hat.dims();
    if occ.height() != h || occ.width() != w {
        return Err(Error::shape("lighting_variation", format!("{h}x{w} mask"), format!("{}x{}", occ.height(), occ.width())));
    }
    let a = x_hat.luma();
    let b = x_hat_warped.luma();
    let keep: Vec<f64> = occ.data().iter().map(|&o| if o { 0.0 } else { 1.0 }).collect();
    let diff: Vec<f64> = (0..h * w).map(|i| (a[i] - b[i]) / 255.0 * keep[i]).collect();
    let k = params.box_size;
    let norm = 1.0 / (k * k) as f64;
    let num = box_sum(&diff, h, w, k);
    let den = box_sum(&keep, h, w, k);
    let data = num
        .iter()
        .zip(&den)
        .map(|(n, d)| (n * norm).abs() / (d * norm + params.eps))
        .collect();
    ScalarMap::new(h, w, data)
}

/// `ξ(l) = exp(-α3 l)`.
pub fn xi(l: f64, alpha3: f64) -> f64 {
    (-alpha3 * l).exp()
}

/// `γ = (1 - o) · ξ(l)`.
pub fn weight_map(occ: &OcclusionMask, light: &LightingMap, alpha3: f64) -> Result<WeightMap> {
    if occ.height() != light.height() || occ.width() != light.width() {
        return Err(Error::shape(
            "weight_map",
            format!("{}x{}", occ.height(), occ.width()),
            format!("{}x{}", light.height(), light.width()),
        ));
    }
    let data = occ
        .data()
        .iter()
        .zip(light.data())
        .map(|(&o, &l)| if o { 0.0 } else { xi(l, alpha3) })
        .collect();
    ScalarMap::new(occ.height(), occ.width(), data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum OcclusionMode {
    #[default]
    Consistency,
    Divergence,
}

impl FromStr for OcclusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "consistency" | "ofc" => Ok(Self::Consistency),
            "divergence" | "div" => Ok(Self::Divergence),
            _ => Err(Error::Config(format!("occlusion must be consistency|divergence, got {s:?}"))),
        }
    }
}

impl fmt::Display for OcclusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Consistency => "consistency",
            Self::Divergence => "divergence",
        })
    }
}

/// How the masks and weights of a frame pair are derived.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct CorrespondenceConfig {
    pub params: CorrespondenceParams,
    pub occlusion: OcclusionMode,
    pub lighting: bool,
    pub online: bool,
}

/// Masks, lighting maps and weights for both frames of a pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairMaps {
    pub occ_cur: OcclusionMask,
    pub occ_prev: OcclusionMask,
    pub light_cur: LightingMap,
    pub light_prev: LightingMap,
    pub gamma_cur: WeightMap,
    pub gamma_prev: WeightMap,
}

/// Occlusion masks for both directions in the configured mode. Warp
/// departures off the frame are ORed in.
pub fn occlusion_pair(wf: &FlowField, wb: &FlowField, cfg: &CorrespondenceConfig) -> Result<(OcclusionMask, OcclusionMask)> {
    wf.check_flow("occlusion_pair", wb)?;
    let (mut cur, mut prev) = match cfg.occlusion {
        OcclusionMode::Consistency => (
            occlusion_consistency(wf, wb, &cfg.params)?,
            occlusion_consistency_prev(wf, wb, &cfg.params)?,
        ),
        OcclusionMode::Divergence => (
            occlusion_divergence(wb, cfg.params.divergence_threshold).with_direction(MaskDirection::Current),
            occlusion_divergence(wf, cfg.params.divergence_threshold).with_direction(MaskDirection::Previous),
        ),
    };
    cur.union_flags(&departures(wb))?;
    prev.union_flags(&departures(wf))?;
    Ok((cur, prev))
}

fn departures(w: &FlowField) -> Vec<bool> {
    let (h, wd) = (w.height() as f64, w.width() as f64);
    (0..w.height() * w.width())
        .map(|i| {
            let (y, x) = ((i / w.width()) as f64, (i % w.width()) as f64);
            let (sx, sy) = (x + w.u()[i], y + w.v()[i]);
            !(sx >= 0.0 && sy >= 0.0 && sx <= wd - 1.0 && sy <= h - 1.0)
        })
        .collect()
}

/// Refines both flows of a pair against the clean estimates, each under the
/// occlusion mask of its reference frame.
pub fn refine_pair(
    x_prev: &Frame,
    x_cur: &Frame,
    wf: &FlowField,
    wb: &FlowField,
    cfg: &CorrespondenceConfig,
    params: &RefineParams,
) -> Result<(FlowField, FlowField)> {
    let (occ_cur, occ_prev) = occlusion_pair(wf, wb, cfg)?;
    let wf = refine_flow(wf, x_prev, x_cur, &occ_prev, params)?;
    let wb = refine_flow(wb, x_cur, x_prev, &occ_cur, params)?;
    Ok((wf, wb))
}

/// Full correspondence for the pair `(i-1, i)`.
pub fn pair_maps<D: Denoise + ?Sized>(
    denoiser: &D,
    prev: &[&Frame],
    cur: &[&Frame],
    wf: &FlowField,
    wb: &FlowField,
    cfg: &CorrespondenceConfig,
) -> Result<PairMaps> {
    let (xp, xc) = if cfg.online {
        (denoiser.denoise_stack(prev)?, denoiser.denoise_stack(cur)?)
    } else {
        (center(prev)?.clone(), center(cur)?.clone())
    };
    pair_maps_from_estimates(&xp, &xc, wf, wb, cfg)
}

/// [`pair_maps`] given the clean estimates `x̂_{i-1}`, `x̂_i` directly.
pub fn pair_maps_from_estimates(
    x_prev: &Frame,
    x_cur: &Frame,
    wf: &FlowField,
    wb: &FlowField,
    cfg: &CorrespondenceConfig,
) -> Result<PairMaps> {
    cfg.params.validate()?;
    x_prev.check_same("pair_maps", x_cur)?;
    let (occ_cur, occ_prev) = occlusion_pair(wf, wb, cfg)?;
    let (h, w) = (wf.height(), wf.width());
    let (light_cur, light_prev) = if cfg.lighting {
        let (xc_w, _) = warp_inverse(x_prev, wb)?;
        let (xp_w, _) = warp_inverse(x_cur, wf)?;
        (
            lighting_variation(x_cur, &xc_w, &occ_cur, &cfg.params)?,
            lighting_variation(x_prev, &xp_w, &occ_prev, &cfg.params)?,
        )
    } else {
        (ScalarMap::filled(h, w, 0.0), ScalarMap::filled(h, w, 0.0))
    };
    let gamma_cur = weight_map(&occ_cur, &light_cur, cfg.params.alpha3)?;
    let gamma_prev = weight_map(&occ_prev, &light_prev, cfg.params.alpha3)?;
    Ok(PairMaps {
        occ_cur,
        occ_prev,
        light_cur,
        light_prev,
        gamma_cur,
        gamma_prev,
    })
}
