//! Training pair construction: source-disjoint twin pairs, the naive
//! baseline pair, and mini-batch assembly with crops.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::correspondence::{pair_maps_from_estimates, refine_pair, CorrespondenceConfig, PairMaps, WeightMap};
use crate::denoiser::Denoise;
use crate::error::{Error, Result};
use crate::flow::{estimate_flow, warp, FlowDirection, FlowField, FlowParams, RefineParams};
use crate::frame_io::{CropWindow, Frame, FrameSequence};
use crate::par;
use crate::tensor::Tensor4;

/// One training sample. Provenance records which source frame each input
/// slot and the target were sampled from.
#[derive(Clone, Debug, PartialEq)]
pub struct TwinPair {
    pub input: Vec<Frame>,
    pub target: Frame,
    pub weight: WeightMap,
    pub input_provenance: Vec<usize>,
    pub target_provenance: usize,
}

impl TwinPair {
    /// Source frames feeding both the input stack and the target.
    pub fn provenance_overlap(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .input_provenance
            .iter()
            .copied()
            .filter(|&p| p == self.target_provenance)
            .collect();
        v.dedup();
        v
    }

    pub fn crop(&self, window: &CropWindow) -> Result<TwinPair> {
        Ok(TwinPair {
            input: self.input.iter().map(|f| f.crop(window)).collect::<Result<_>>()?,
            target: self.target.crop(window)?,
            weight: self.weight.crop(window)?,
            input_provenance: self.input_provenance.clone(),
            target_provenance: self.target_provenance,
        })
    }

    pub fn input_refs(&self) -> Vec<&Frame> {
        self.input.iter().collect()
    }
}

/// Stack of `window` slots centered on `center`, built from `slot_frame`
/// for in-range indices. Out-of-range slots copy the nearest in-range slot of
/// the stack as built, so any replacement made there is replicated as well.
fn build_stack(
    n: usize,
    center: usize,
    window: usize,
    mut slot_frame: impl FnMut(usize) -> (Frame, usize),
) -> (Vec<Frame>, Vec<usize>) {
    let half = (window / 2) as isize;
    let idx: Vec<isize> = (-half..=half).map(|k| center as isize + k).collect();
    let lo = idx.iter().position(|&j| j >= 0).expect("center in range");
    let hi = idx.iter().rposition(|&j| j < n as isize).expect("center in range");
    let built: Vec<Option<(Frame, usize)>> = idx
        .iter()
        .map(|&j| (j >= 0 && j < n as isize).then(|| slot_frame(j as usize)))
        .collect();
    let mut frames = Vec::with_capacity(window);
    let mut prov = Vec::with_capacity(window);
    for s in 0..window {
        let src = s.clamp(lo, hi);
        let (f, p) = built[src].clone().expect("in range");
        frames.push(f);
        prov.push(p);
    }
    (frames, prov)
}

fn check_pair_args(seq: &FrameSequence, i: usize, window: usize, wf: &FlowField, wb: &FlowField) -> Result<()> {
    if window % 2 == 0 || window == 0 {
        return Err(Error::InvalidParam(format!("temporal window must be odd, got {window}")));
    }
    if i == 0 || i >= seq.len() {
        return Err(Error::InvalidParam(format!("pair index {i} outside 1..{}", seq.len())));
    }
    wf.check_frame("build_twin_pairs", seq.frame(i))?;
    wf.check_flow("build_twin_pairs", wb)
}

/// `(pair_{i-1}, pair_i)`.
///
/// With `y_{(i-1)→i} = warp(y_{i-1}, w^b)` and `y_{i→(i-1)} = warp(y_i, w^f)`:
/// `pair_i` is `Y_i` with slot `i-1` replaced by `y_{i→(i-1)}`, target
/// `y_{(i-1)→i}`, weight `γ_i`; `pair_{i-1}` is `Y_{i-1}` with slot `i`
/// replaced by `y_{(i-1)→i}`, target `y_{i→(i-1)}`, weight `γ_{i-1}`.
/// Only the two given flows are used.
pub fn build_twin_pairs(
    seq: &FrameSequence,
    i: usize,
    window: usize,
    wf: &FlowField,
    wb: &FlowField,
    maps: &PairMaps,
) -> Result<(TwinPair, TwinPair)> {
    check_pair_args(seq, i, window, wf, wb)?;
    let n = seq.len();
    let prev_to_cur = warp(seq.frame(i - 1), wb)?;
    let cur_to_prev = warp(seq.frame(i), wf)?;

    let (input, prov) = build_stack(n, i, window, |j| {
        if j == i - 1 {
            (cur_to_prev.clone(), i)
        } else {
            (seq.frame(j).clone(), j)
        }
    });
    let pair_cur = TwinPair {
        input,
        target: prev_to_cur.clone(),
        weight: maps.gamma_cur.clone(),
        input_provenance: prov,
        target_provenance: i - 1,
    };

    let (input, prov) = build_stack(n, i - 1, window, |j| {
        if j == i {
            (prev_to_cur.clone(), i - 1)
        } else {
            (seq.frame(j).clone(), j)
        }
    });
    let pair_prev = TwinPair {
        input,
        target: cur_to_prev,
        weight: maps.gamma_prev.clone(),
        input_provenance: prov,
        target_provenance: i,
    };
    Ok((pair_prev, pair_cur))
}

/// Baseline: the unmodified stack `Y_i` against `y_{(i-1)→i}`.
pub fn build_naive_pair(seq: &FrameSequence, i: usize, window: usize, wb: &FlowField, weight: &WeightMap) -> Result<TwinPair> {
    check_pair_args(seq, i, window, wb, wb)?;
    let (input, prov) = build_stack(seq.len(), i, window, |j| (seq.frame(j).clone(), j));
    Ok(TwinPair {
        input,
        target: warp(seq.frame(i - 1), wb)?,
        weight: weight.clone(),
        input_provenance: prov,
        target_provenance: i - 1,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SamplerMode {
    #[default]
    Twin,
    Naive,
}

impl FromStr for SamplerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "twin" => Ok(Self::Twin),
            "naive" => Ok(Self::Naive),
            _ => Err(Error::Config(format!("sampler must be twin|naive, got {s:?}"))),
        }
    }
}

impl fmt::Display for SamplerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Twin => "twin",
            Self::Naive => "naive",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplerConfig {
    pub window: usize,
    pub batch_size: usize,
    pub crop: usize,
    pub mode: SamplerMode,
    pub corr: CorrespondenceConfig,
    pub flow: FlowParams,
    pub refine: Option<RefineParams>,
    /// Crops with more than this fraction of zero weight are redrawn.
    pub reject_fraction: f64,
    pub max_retries: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            window: 5,
            batch_size: 32,
            crop: CropWindow::DEFAULT_SIZE,
            mode: SamplerMode::Twin,
            corr: CorrespondenceConfig {
                online: true,
                lighting: true,
                ..Default::default()
            },
            flow: FlowParams::default(),
            refine: None,
            reject_fraction: 0.95,
            max_retries: 10,
        }
    }
}

/// Flows and maps of one frame pair `(i-1, i)`.
#[derive(Clone, Debug)]
pub struct PairCorrespondence {
    pub wf: FlowField,
    pub wb: FlowField,
    pub maps: PairMaps,
}

/// Flows, refinement and maps for the pair `(i-1, i)` under `cfg`.
pub fn pair_correspondence<D: Denoise + ?Sized>(
    seq: &FrameSequence,
    i: usize,
    denoiser: &D,
    cfg: &SamplerConfig,
) -> Result<PairCorrespondence> {
    let (xp, xc) = (clean_estimate(seq, i - 1, denoiser, cfg)?, clean_estimate(seq, i, denoiser, cfg)?);
    correspondence_from_estimates(&xp, &xc, cfg)
}

/// `g_θ(Y_j)` with online denoising, the raw frame `y_j` without.
fn clean_estimate<D: Denoise + ?Sized>(seq: &FrameSequence, j: usize, denoiser: &D, cfg: &SamplerConfig) -> Result<Frame> {
    if cfg.corr.online {
        denoiser.denoise_stack(&seq.window(j, cfg.window))
    } else {
        Ok(seq.frame(j).clone())
    }
}

fn correspondence_from_estimates(xp: &Frame, xc: &Frame, cfg: &SamplerConfig) -> Result<PairCorrespondence> {
    let mut wf = estimate_flow(xp, xc, &cfg.flow)?.with_direction(FlowDirection::Forward);
    let mut wb = estimate_flow(xc, xp, &cfg.flow)?.with_direction(FlowDirection::Backward);
    if let Some(r) = &cfg.refine {
        (wf, wb) = refine_pair(xp, xc, &wf, &wb, &cfg.corr, r)?;
    }
    let maps = pair_maps_from_estimates(xp, xc, &wf, &wb, &cfg.corr)?;
    Ok(PairCorrespondence { wf, wb, maps })
}

/// Correspondences reused across mini-batches, keyed by pair index.
#[derive(Default)]
pub struct FlowCache {
    entries: BTreeMap<usize, PairCorrespondence>,
}

impl FlowCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Cropped training pairs sharing one crop size.
#[derive(Clone, Debug)]
pub struct MiniBatch {
    pub pairs: Vec<TwinPair>,
    /// Pair index `i` of each draw.
    pub draws: Vec<usize>,
    pub crops: Vec<CropWindow>,
}

impl MiniBatch {
    /// `(inputs, targets, weights)` on the `[0, 1]` scale: inputs
    /// `[B, window·C, s, s]`, targets and weights `[B, C, s, s]` with the
    /// per-pixel weight repeated over channels.
    pub fn to_tensors(&self) -> Result<(Tensor4, Tensor4, Tensor4)> {
        let first = self.pairs.first().ok_or_else(|| Error::InvalidParam("empty mini-batch".into()))?;
        let (c, h, w) = first.target.dims();
        let win = first.input.len();
        let b = self.pairs.len();
        let mut x = Vec::with_capacity(b * win * c * h * w);
        let mut y = Vec::with_capacity(b * c * h * w);
        let mut g = Vec::with_capacity(b * c * h * w);
        for p in &self.pairs {
            if p.target.dims() != (c, h, w) || p.input.len() != win {
                return Err(Error::shape("MiniBatch::to_tensors", format!("{:?}", (c, h, w)), format!("{:?}", p.target.dims())));
            }
            for f in &p.input {
                x.extend(f.data().iter().map(|v| v / 255.0));
            }
            y.extend(p.target.data().iter().map(|v| v / 255.0));
            for _ in 0..c {
                g.extend_from_slice(p.weight.data());
            }
        }
        Ok((
            Tensor4::from_vec([b, win * c, h, w], x)?,
            Tensor4::from_vec([b, c, h, w], y)?,
            Tensor4::from_vec([b, c, h, w], g)?,
        ))
    }
}

/// SplitMix64 finalizer over a sequence of words.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut z: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        z = z.wrapping_add(p).wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

fn random_window(rng: &mut ChaCha8Rng, h: usize, w: usize, size: usize) -> CropWindow {
    let (sh, sw) = (size.min(h), size.min(w));
    let top = rng.random_range(0..=h - sh);
    let left = rng.random_range(0..=w - sw);
    CropWindow {
        top,
        left,
        height: sh,
        width: sw,
    }
}

/// Draws a crop for `pair`, redrawing up to `max_retries` times while the
/// crop's weight is zero on more than `reject_fraction` of its pixels.
fn draw_crop(rng: &mut ChaCha8Rng, pair: &TwinPair, cfg: &SamplerConfig) -> Result<CropWindow> {
    let (_, h, w) = pair.target.dims();
    let mut win = random_window(rng, h, w, cfg.crop);
    for _ in 0..cfg.max_retries {
        if pair.weight.crop(&win)?.zero_fraction() <= cfg.reject_fraction {
            break;
        }
        win = random_window(rng, h, w, cfg.crop);
    }
    Ok(win)
}

/// One mini-batch of draws of `i ∈ [1, n-1]`, each pair with its own crop.
/// The twin sampler makes `ceil(batch_size / 2)` draws contributing both
/// twins; the naive sampler makes `batch_size` draws of `(Y_i, y'_i)`. Every draw has its own generator derived from
/// `(seed, batch_index, draw)`, so the batch does not depend on scheduling.
/// Correspondences are computed once per distinct `i` and stored in `cache`.
pub fn assemble_batch<D: Denoise + ?Sized>(
    seq: &FrameSequence,
    denoiser: &D,
    cfg: &SamplerConfig,
    seed: u64,
    batch_index: u64,
    cache: &mut FlowCache,
) -> Result<MiniBatch> {
    if seq.len() < 2 {
        return Err(Error::InvalidParam("need at least two frames to build pairs".into()));
    }
    if cfg.batch_size == 0 || cfg.crop == 0 {
        return Err(Error::InvalidParam("batch size and crop must be positive".into()));
    }
    if denoiser.window() != cfg.window {
        return Err(Error::InvalidParam(format!(
            "denoiser window {} differs from sampler window {}",
            denoiser.window(),
            cfg.window
        )));
    }
    let n = seq.len();
    let draws = match cfg.mode {
        SamplerMode::Twin => cfg.batch_size.div_ceil(2),
        SamplerMode::Naive => cfg.batch_size,
    };
    let mut rngs: Vec<ChaCha8Rng> = (0..draws)
        .map(|d| ChaCha8Rng::seed_from_u64(derive_seed(&[seed, batch_index, d as u64])))
        .collect();
    let idx: Vec<usize> = rngs.iter_mut().map(|r| r.random_range(1..n)).collect();

    let mut missing: Vec<usize> = idx.iter().copied().filter(|i| !cache.entries.contains_key(i)).collect();
    missing.sort_unstable();
    missing.dedup();
    // Each needed frame is denoised once, then shared by the pairs using it.
    let mut needed: Vec<usize> = missing.iter().flat_map(|&i| [i - 1, i]).collect();
    needed.dedup();
    let estimates = par::map_slice(&needed, |&j| clean_estimate(seq, j, denoiser, cfg));
    let estimates: BTreeMap<usize, Frame> = needed.into_iter().zip(estimates).map(|(j, e)| e.map(|e| (j, e))).collect::<Result<_>>()?;
    let fresh = par::map_slice(&missing, |&i| correspondence_from_estimates(&estimates[&(i - 1)], &estimates[&i], cfg));
    for (i, c) in missing.into_iter().zip(fresh) {
        cache.entries.insert(i, c?);
    }

    let mut pairs = Vec::with_capacity(cfg.batch_size);
    let mut crops = Vec::with_capacity(cfg.batch_size);
    for (rng, &i) in rngs.iter_mut().zip(&idx) {
        let c = &cache.entries[&i];
        let built = match cfg.mode {
            SamplerMode::Twin => {
                let (a, b) = build_twin_pairs(seq, i, cfg.window, &c.wf, &c.wb, &c.maps)?;
                vec![a, b]
            }
            SamplerMode::Naive => vec![build_naive_pair(seq, i, cfg.window, &c.wb, &c.maps.gamma_cur)?],
        };
        for p in built {
            if pairs.len() == cfg.batch_size {
                break;
            }
            let win = draw_crop(rng, &p, cfg)?;
            pairs.push(p.crop(&win)?);
            crops.push(win);
        }
    }
    Ok(MiniBatch { pairs, draws: idx, crops })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correspondence::{weight_map, OcclusionMask, ScalarMap};
    use crate::denoiser::IdentityDenoiser;

    fn seq(n: usize, h: usize, w: usize) -> FrameSequence {
        FrameSequence::new(
            (0..n)
                .map(|t| Frame::from_fn(1, h, w, |_, y, x| ((t * 31 + y * 7 + x * 3) % 200) as f64 + 20.0))
                .collect(),
        )
        .unwrap()
    }

    fn unit_maps(h: usize, w: usize) -> PairMaps {
        let occ = OcclusionMask::empty(h, w);
        let l = ScalarMap::filled(h, w, 0.0);
        let g = weight_map(&occ, &l, 5.0).unwrap();
        PairMaps {
            occ_cur: occ.clone(),
            occ_prev: occ,
            light_cur: l.clone(),
            light_prev: l,
            gamma_cur: g.clone(),
            gamma_prev: g,
        }
    }

    #[test]
    fn three_frame_toy_example() {
        // Frames y1, y2, y3 (indices 0..3); pair built between y2 and y3.
        let s = seq(3, 4, 4);
        let z = FlowField::zeros(4, 4);
        let (prev, _) = build_twin_pairs(&s, 2, 3, &z, &z, &unit_maps(4, 4)).unwrap();
        assert_eq!(prev.input[0], *s.frame(0));
        assert_eq!(prev.input[1], *s.frame(1));
        // y_{2→3} is y2 aligned to frame 3; with zero flow it equals y2.
        assert_eq!(prev.input[2], *s.frame(1));
        assert_eq!(prev.input_provenance, vec![0, 1, 1]);
        assert_eq!(prev.target, *s.frame(2));
        assert_eq!(prev.target_provenance, 2);
    }

    #[test]
    fn disjoint_at_every_index_and_window() {
        let s = seq(6, 4, 4);
        let z = FlowField::zeros(4, 4);
        for window in [1, 3, 5, 7] {
            for i in 1..6 {
                let (a, b) = build_twin_pairs(&s, i, window, &z, &z, &unit_maps(4, 4)).unwrap();
                assert!(a.provenance_overlap().is_empty(), "w{window} i{i}");
                assert!(b.provenance_overlap().is_empty(), "w{window} i{i}");
                assert_eq!(a.input.len(), window);
                let naive = build_naive_pair(&s, i, window, &z, &unit_maps(4, 4).gamma_cur).unwrap();
                if window > 1 {
                    assert!(!naive.provenance_overlap().is_empty());
                    assert_eq!(naive.target, naive.input[window / 2 - 1]);
                }
            }
        }
    }

    #[test]
    fn sentinel_frame_never_reaches_the_input() {
        let c = 77.0;
        let frames: Vec<Frame> = (0..5).map(|t| Frame::filled(1, 6, 6, if t == 2 { c } else { 0.0 })).collect();
        let s = FrameSequence::new(frames).unwrap();
        let z = FlowField::zeros(6, 6);
        let (_, cur) = build_twin_pairs(&s, 3, 5, &z, &z, &unit_maps(6, 6)).unwrap();
        assert!(cur.target.data().iter().all(|&v| v == c));
        assert!(cur.input.iter().all(|f| f.data().iter().all(|&v| v != c)));
    }

    #[test]
    fn rejects_bad_indices() {
        let s = seq(4, 4, 4);
        let z = FlowField::zeros(4, 4);
        assert!(build_twin_pairs(&s, 0, 3, &z, &z, &unit_maps(4, 4)).is_err());
        assert!(build_twin_pairs(&s, 4, 3, &z, &z, &unit_maps(4, 4)).is_err());
        assert!(build_twin_pairs(&s, 1, 4, &z, &z, &unit_maps(4, 4)).is_err());
    }

    fn small_cfg() -> SamplerConfig {
        SamplerConfig {
            window: 3,
            batch_size: 4,
            crop: 12,
            flow: FlowParams { levels: 1, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn batches_are_deterministic_and_sized() {
        let s = seq(5, 20, 24);
        let d = IdentityDenoiser::new(3);
        let cfg = small_cfg();
        let a = assemble_batch(&s, &d, &cfg, 9, 0, &mut FlowCache::new()).unwrap();
        let b = assemble_batch(&s, &d, &cfg, 9, 0, &mut FlowCache::new()).unwrap();
        assert_eq!(a.pairs, b.pairs);
        assert_eq!(a.pairs.len(), 4);
        assert_eq!(a.draws.len(), 2);
        let (x, y, g) = a.to_tensors().unwrap();
        assert_eq!(x.shape(), [4, 3, 12, 12]);
        assert_eq!(y.shape(), g.shape());
        let one = assemble_batch(&s, &d, &SamplerConfig { batch_size: 2, ..cfg }, 9, 0, &mut FlowCache::new()).unwrap();
        assert_eq!(one.draws.len(), 1);
        assert_eq!(one.pairs.len(), 2);
        let naive = assemble_batch(&s, &d, &SamplerConfig { mode: SamplerMode::Naive, ..cfg }, 9, 0, &mut FlowCache::new()).unwrap();
        assert_eq!((naive.draws.len(), naive.pairs.len()), (4, 4));
    }

    #[test]
    fn crop_is_clamped_to_frame() {
        let s = seq(3, 10, 14);
        let d = IdentityDenoiser::new(3);
        let b = assemble_batch(&s, &d, &SamplerConfig { crop: 96, flow: FlowParams { levels: 1, ..Default::default() }, ..small_cfg() }, 1, 0, &mut FlowCache::new()).unwrap();
        assert!(b.crops.iter().all(|c| c.height == 10 && c.width == 14));
    }
}
