//! Optical flow: fields, inverse warping, the pyramidal variational
//! estimator, flow pairs on denoised frames, and the warping-regularized
//! flow loss with its direct refiner.

mod hs;
mod refine;

pub use hs::{estimate_flow, estimation_count, FlowParams};
pub use refine::{hybrid_flow_loss, refine_flow, RefineParams};

use crate::correspondence::OcclusionMask;
use crate::denoiser::Denoise;
use crate::error::{Error, Result};
use crate::frame_io::{CropWindow, Frame};
use crate::par;
use crate::tensor::Tensor4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FlowDirection {
    /// `w^f`, from frame `i-1` to frame `i`.
    #[default]
    Forward,
    /// `w^b`, from frame `i` to frame `i-1`.
    Backward,
}

/// Dense displacement field: `u` horizontal, `v` vertical, in pixels. Pixel
/// `p` of the reference frame corresponds to `p + w(p)` in the other frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    u: Vec<f64>,
    v: Vec<f64>,
    pub direction: FlowDirection,
}

impl FlowField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::constant(height, width, 0.0, 0.0)
    }

    pub fn constant(height: usize, width: usize, u: f64, v: f64) -> Self {
        Self {
            height,
            width,
            u: vec![u; height * width],
            v: vec![v; height * width],
            direction: FlowDirection::Forward,
        }
    }

    pub fn new(height: usize, width: usize, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        let n = height * width;
        if u.len() != n || v.len() != n {
            return Err(Error::shape("FlowField::new", n, format!("{} and {}", u.len(), v.len())));
        }
        let f = Self {
            height,
            width,
            u,
            v,
            direction: FlowDirection::Forward,
        };
        if !f.u.iter().chain(&f.v).all(|x| x.is_finite()) {
            return Err(Error::NonFinite("flow field".into()));
        }
        Ok(f)
    }

    /// `f(y, x) -> (u, v)`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> (f64, f64)) -> Self {
        let mut u = Vec::with_capacity(height * width);
        let mut v = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                let (a, b) = f(y, x);
                u.push(a);
                v.push(b);
            }
        }
        Self {
            height,
            width,
            u,
            v,
            direction: FlowDirection::Forward,
        }
    }

    pub fn with_direction(mut self, direction: FlowDirection) -> Self {
        self.direction = direction;
        self
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn get(&self, y: usize, x: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    pub fn set(&mut self, y: usize, x: usize, uv: (f64, f64)) {
        let i = y * self.width + x;
        self.u[i] = uv.0;
        self.v[i] = uv.1;
    }

    pub fn same_shape(&self, other: &FlowField) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub(crate) fn check_frame(&self, op: &'static str, f: &Frame) -> Result<()> {
        if f.height() != self.height || f.width() != self.width {
            return Err(Error::shape(
                op,
                format!("{}x{}", self.height, self.width),
                format!("{}x{}", f.height(), f.width()),
            ));
        }
        Ok(())
    }

    pub(crate) fn check_flow(&self, op: &'static str, other: &FlowField) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::shape(
                op,
                format!("{}x{}", self.height, self.width),
                format!("{}x{}", other.height, other.width),
            ));
        }
        Ok(())
    }

    /// Flow bilinearly sampled at real coordinates; `None` outside the grid.
    pub fn sample(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let (h, w) = (self.height, self.width);
        if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
            return None;
        }
        Some((
            bilinear(&self.u, h, w, x, y).0,
            bilinear(&self.v, h, w, x, y).0,
        ))
    }

    /// Per-pixel Euclidean distance to `other`.
    pub fn endpoint_errors(&self, other: &FlowField) -> Result<Vec<f64>> {
        self.check_flow("endpoint_errors", other)?;
        Ok((0..self.u.len())
            .map(|i| (self.u[i] - other.u[i]).hypot(self.v[i] - other.v[i]))
            .collect())
    }

    pub fn mean_endpoint_error(&self, other: &FlowField) -> Result<f64> {
        let e = self.endpoint_errors(other)?;
        Ok(mean(&e))
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.u.iter().zip(&self.v).map(|(a, b)| a.hypot(*b)).collect()
    }

    pub fn scale(&self, s: f64) -> FlowField {
        let mut f = self.clone();
        f.u.iter_mut().chain(f.v.iter_mut()).for_each(|x| *x *= s);
        f
    }

    pub fn crop(&self, window: &CropWindow) -> Result<FlowField> {
        let u = window.crop_plane(&self.u, self.height, self.width)?;
        let v = window.crop_plane(&self.v, self.height, self.width)?;
        Ok(FlowField {
            height: window.height,
            width: window.width,
            u,
            v,
            direction: self.direction,
        })
    }

    /// `(1, 2, H, W)` tensor with `u` in channel 0 and `v` in channel 1.
    pub fn to_tensor(&self) -> Tensor4 {
        let mut data = self.u.clone();
        data.extend_from_slice(&self.v);
        Tensor4::from_vec([1, 2, self.height, self.width], data).expect("sized")
    }

    pub fn from_tensor(t: &Tensor4) -> Result<Self> {
        let [n, c, h, w] = t.shape();
        if n != 1 || c != 2 {
            return Err(Error::shape("FlowField::from_tensor", "[1, 2, H, W]", format!("{:?}", t.shape())));
        }
        let (u, v) = t.data().split_at(h * w);
        Self::new(h, w, u.to_vec(), v.to_vec())
    }

    /// Clamps every component to `[-limit, limit]`.
    pub(crate) fn clamp_magnitude(&mut self, limit: f64) {
        self.u.iter_mut().chain(self.v.iter_mut()).for_each(|x| *x = x.clamp(-limit, limit));
    }

    pub(crate) fn components_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.u, &mut self.v)
    }
}

/// Ground-truth flow and the occlusion map of its reference frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowGroundTruth {
    pub flow: FlowField,
    pub occlusion: OcclusionMask,
}

impl FlowGroundTruth {
    pub fn new(flow: FlowField, occlusion: OcclusionMask) -> Result<Self> {
        if occlusion.height() != flow.height() || occlusion.width() != flow.width() {
            return Err(Error::shape(
                "FlowGroundTruth",
                format!("{}x{}", flow.height(), flow.width()),
                format!("{}x{}", occlusion.height(), occlusion.width()),
            ));
        }
        Ok(Self { flow, occlusion })
    }
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => s[n / 2],
        _ => 0.5 * (s[n / 2 - 1] + s[n / 2]),
    }
}

/// Bilinear lookup with clamp-to-edge; the flag is `true` when `(x, y)` lies
/// outside the pixel grid.
#[inline]
pub(crate) fn bilinear(plane: &[f64], h: usize, w: usize, x: f64, y: f64) -> (f64, bool) {
    let (xi, fx, ox) = split_coord(x, w);
    let (yi, fy, oy) = split_coord(y, h);
    let x1 = (xi + 1).min(w - 1);
    let y1 = (yi + 1).min(h - 1);
    let top = plane[yi * w + xi] * (1.0 - fx) + plane[yi * w + x1] * fx;
    let bot = plane[y1 * w + xi] * (1.0 - fx) + plane[y1 * w + x1] * fx;
    (top * (1.0 - fy) + bot * fy, ox || oy)
}

/// Spatial gradient of the bilinear interpolant at `(x, y)`; zero along an
/// axis where the coordinate is clamped.
#[inline]
pub(crate) fn bilinear_grad(plane: &[f64], h: usize, w: usize, x: f64, y: f64) -> (f64, f64) {
    let (xi, fx, ox) = split_coord(x, w);
    let (yi, fy, oy) = split_coord(y, h);
    let x1 = (xi + 1).min(w - 1);
    let y1 = (yi + 1).min(h - 1);
    let p00 = plane[yi * w + xi];
    let p01 = plane[yi * w + x1];
    let p10 = plane[y1 * w + xi];
    let p11 = plane[y1 * w + x1];
    let gx = if ox || x1 == xi { 0.0 } else { (1.0 - fy) * (p01 - p00) + fy * (p11 - p10) };
    let gy = if oy || y1 == yi { 0.0 } else { (1.0 - fx) * (p10 - p00) + fx * (p11 - p01) };
    (gx, gy)
}

/// Integer cell, fraction and out-of-range flag of a clamped coordinate. The
/// last lattice point is reached as cell `n-2` with fraction 1, so lattice
/// lookups are exact.
#[inline]
fn split_coord(c: f64, n: usize) -> (usize, f64, bool) {
    let max = (n - 1) as f64;
    let out = !(c >= 0.0 && c <= max);
    let c = if c.is_nan() { 0.0 } else { c.clamp(0.0, max) };
    if n == 1 {
        return (0, 0.0, out);
    }
    let i = (c.floor() as usize).min(n - 2);
    (i, c - i as f64, out)
}

/// `out(p) = b(p + w(p))` by bilinear sampling with clamp-to-edge, plus the
/// per-pixel out-of-range flags.
pub fn warp_inverse(b: &Frame, flow: &FlowField) -> Result<(Frame, Vec<bool>)> {
    flow.check_frame("warp_inverse", b)?;
    let (c, h, w) = b.dims();
    let rows = par::map_range(h, |y| {
        let mut vals = vec![0.0; c * w];
        let mut flags = vec![false; w];
        for x in 0..w {
            let (du, dv) = flow.get(y, x);
            let (sx, sy) = (x as f64 + du, y as f64 + dv);
            for ch in 0..c {
                let (val, out) = bilinear(b.plane(ch), h, w, sx, sy);
                vals[ch * w + x] = val;
                flags[x] = out;
            }
        }
        (vals, flags)
    });
    let mut data = vec![0.0; c * h * w];
    let mut flags = Vec::with_capacity(h * w);
    for (y, (vals, f)) in rows.into_iter().enumerate() {
        for ch in 0..c {
            data[(ch * h + y) * w..(ch * h + y + 1) * w].copy_from_slice(&vals[ch * w..(ch + 1) * w]);
        }
        flags.extend(f);
    }
    Ok((Frame::new(c, h, w, data)?, flags))
}

/// Warps and returns only the image.
pub fn warp(b: &Frame, flow: &FlowField) -> Result<Frame> {
    warp_inverse(b, flow).map(|(f, _)| f)
}

/// Forward and backward flow between two temporal stacks:
/// `w^f = Γ(g(Y_{i-1}), g(Y_i))`, `w^b = Γ(g(Y_i), g(Y_{i-1}))`.
/// With `online` off the raw center frames are used instead of `g` outputs.
pub fn flow_pair<D: Denoise + ?Sized>(
    denoiser: &D,
    prev: &[&Frame],
    cur: &[&Frame],
    online: bool,
    params: &FlowParams,
) -> Result<(FlowField, FlowField)> {
    let (a, b) = if online {
        (denoiser.denoise_stack(prev)?, denoiser.denoise_stack(cur)?)
    } else {
        (center(prev)?.clone(), center(cur)?.clone())
    };
    flow_pair_frames(&a, &b, params)
}

/// `(Γ(a, b), Γ(b, a))` with direction tags.
pub fn flow_pair_frames(a: &Frame, b: &Frame, params: &FlowParams) -> Result<(FlowField, FlowField)> {
    let wf = estimate_flow(a, b, params)?.with_direction(FlowDirection::Forward);
    let wb = estimate_flow(b, a, params)?.with_direction(FlowDirection::Backward);
    Ok((wf, wb))
}

pub(crate) fn center<'a>(stack: &[&'a Frame]) -> Result<&'a Frame> {
    if stack.len() % 2 == 0 {
        return Err(Error::InvalidParam(format!("temporal window must be odd, got {}", stack.len())));
    }
    Ok(stack[stack.len() / 2])
}
