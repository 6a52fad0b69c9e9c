//! Coarse-to-fine Horn-Schunck with image warping.

use std::cell::Cell;

use super::{bilinear, FlowField};
use crate::error::{Error, Result};
use crate::frame_io::Frame;

/// Smallest side allowed at the coarsest pyramid level.
const MIN_LEVEL_SIZE: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowParams {
    /// Pyramid depth, 1 = full resolution only.
    pub levels: usize,
    /// Weight of the quadratic smoothness term, on the `[0, 1]` intensity scale.
    pub smoothness: f64,
    /// Re-linearizations per level.
    pub warps: usize,
    /// Jacobi sweeps per linearization.
    pub iterations: usize,
    /// Flow-gradient scale of the Charbonnier smoothness weight, in pixels.
    /// `0` keeps the plain quadratic term.
    pub edge_scale: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            levels: 3,
            smoothness: 0.05,
            warps: 4,
            iterations: 80,
            edge_scale: 0.15,
        }
    }
}

thread_local! {
    static ESTIMATIONS: Cell<u64> = const { Cell::new(0) };
}

/// Number of [`estimate_flow`] calls made on the current thread.
pub fn estimation_count() -> u64 {
    ESTIMATIONS.with(Cell::get)
}

struct Plane {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Plane {
    fn downsample(&self) -> Plane {
        let (h, w) = (self.h / 2, self.w / 2);
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let r0 = 2 * y * self.w + 2 * x;
                let r1 = r0 + self.w;
                data.push(0.25 * (self.data[r0] + self.data[r0 + 1] + self.data[r1] + self.data[r1 + 1]));
            }
        }
        Plane { h, w, data }
    }
}

/// `Γ(a, b)`: flow from `a` to `b`, so that `a(p) ≈ b(p + w(p))`.
///
/// Minimizes `Σ (b(p + w) - a(p))^2 + smoothness · Σ |∇u|^2 + |∇v|^2` on the
/// channel-mean image scaled to `[0, 1]`, coarse to fine from a zero
/// initialization. Where the image gradient vanishes the smoothness term
/// dominates, so homogeneous frames give exactly zero flow.
pub fn estimate_flow(a: &Frame, b: &Frame, params: &FlowParams) -> Result<FlowField> {
    if !a.same_shape(b) {
        return Err(Error::shape("estimate_flow", format!("{:?}", a.dims()), format!("{:?}", b.dims())));
    }
    if params.levels == 0 || !(params.smoothness > 0.0) || !(params.edge_scale >= 0.0) {
        return Err(Error::InvalidParam(format!("bad flow parameters {params:?}")));
    }
    let (_, h, w) = a.dims();
    let coarsest = h.min(w) >> (params.levels - 1);
    if coarsest < MIN_LEVEL_SIZE {
        return Err(Error::InvalidParam(format!(
            "{h}x{w} frames are too small for {} pyramid levels",
            params.levels
        )));
    }
    ESTIMATIONS.with(|c| c.set(c.get() + 1));

    let scale = 1.0 / 255.0;
    let mut pa = vec![Plane {
        h,
        w,
        data: a.luma().iter().map(|v| v * scale).collect(),
    }];
    let mut pb = vec![Plane {
        h,
        w,
        data: b.luma().iter().map(|v| v * scale).collect(),
    }];
    for _ in 1..params.levels {
        let na = pa.last().expect("nonempty").downsample();
        let nb = pb.last().expect("nonempty").downsample();
        pa.push(na);
        pb.push(nb);
    }

    let top = pa.last().expect("nonempty");
    let mut flow = FlowField::zeros(top.h, top.w);
    for level in (0..params.levels).rev() {
        let (la, lb) = (&pa[level], &pb[level]);
        if flow.height() != la.h || flow.width() != la.w {
            flow = upsample(&flow, la.h, la.w);
        }
        for _ in 0..params.warps {
            solve_linearized(la, lb, &mut flow, params);
        }
    }
    flow.clamp_magnitude(h.max(w) as f64);
    Ok(flow)
}

/// Bilinear resize of a flow field with vectors rescaled to the new grid.
fn upsample(flow: &FlowField, h: usize, w: usize) -> FlowField {
    let (hc, wc) = (flow.height(), flow.width());
    let sx = w as f64 / wc as f64;
    let sy = h as f64 / hc as f64;
    FlowField::from_fn(h, w, |y, x| {
        let cx = (x as f64 + 0.5) / sx - 0.5;
        let cy = (y as f64 + 0.5) / sy - 0.5;
        (
            bilinear(flow.u(), hc, wc, cx, cy).0 * sx,
            bilinear(flow.v(), hc, wc, cx, cy).0 * sy,
        )
    })
}

/// Central differences with replicated borders.
fn gradients(p: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    for y in 0..h {
        let (ym, yp) = (y.saturating_sub(1), (y + 1).min(h - 1));
        for x in 0..w {
            let (xm, xp) = (x.saturating_sub(1), (x + 1).min(w - 1));
            gx[y * w + x] = 0.5 * (p[y * w + xp] - p[y * w + xm]);
            gy[y * w + x] = 0.5 * (p[yp * w + x] - p[ym * w + x]);
        }
    }
    (gx, gy)
}

/// Horn-Schunck neighborhood average (1/6 edge, 1/12 corner neighbors),
/// replicated borders.
fn hs_average(f: &[f64], h: usize, w: usize, out: &mut [f64]) {
    let slow = |y: usize, x: usize| {
        let (ym, yp) = (y.saturating_sub(1), (y + 1).min(h - 1));
        let (xm, xp) = (x.saturating_sub(1), (x + 1).min(w - 1));
        let edge = f[ym * w + x] + f[yp * w + x] + f[y * w + xm] + f[y * w + xp];
        let corner = f[ym * w + xm] + f[ym * w + xp] + f[yp * w + xm] + f[yp * w + xp];
        edge / 6.0 + corner / 12.0
    };
    for y in 0..h {
        if y == 0 || y + 1 == h || w < 3 {
            for x in 0..w {
                out[y * w + x] = slow(y, x);
            }
            continue;
        }
        out[y * w] = slow(y, 0);
        let (up, mid, down) = (&f[(y - 1) * w..y * w], &f[y * w..(y + 1) * w], &f[(y + 1) * w..(y + 2) * w]);
        for x in 1..w - 1 {
            let edge = up[x] + down[x] + mid[x - 1] + mid[x + 1];
            let corner = up[x - 1] + up[x + 1] + down[x - 1] + down[x + 1];
            out[y * w + x] = edge / 6.0 + corner / 12.0;
        }
        out[y * w + w - 1] = slow(y, w - 1);
    }
}

/// Linearizes the data term around the current flow and runs Jacobi sweeps
/// on the total flow.
fn solve_linearized(a: &Plane, b: &Plane, flow: &mut FlowField, params: &FlowParams) {
    let (h, w) = (a.h, a.w);
    let n = h * w;
    let mut bw = vec![0.0; n];
    let mut outside = vec![false; n];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (u, v) = (flow.u()[i], flow.v()[i]);
            let (val, out) = bilinear(&b.data, h, w, x as f64 + u, y as f64 + v);
            bw[i] = val;
            outside[i] = out;
        }
    }
    let (ax, ay) = gradients(&a.data, h, w);
    let (bx, by) = gradients(&bw, h, w);
    let mut ix = vec![0.0; n];
    let mut iy = vec![0.0; n];
    // Constant part of the linearized residual: It - Ix u0 - Iy v0.
    let mut r0 = vec![0.0; n];
    for i in 0..n {
        if outside[i] {
            continue;
        }
        ix[i] = 0.5 * (ax[i] + bx[i]);
        iy[i] = 0.5 * (ay[i] + by[i]);
        r0[i] = bw[i] - a.data[i] - ix[i] * flow.u()[i] - iy[i] * flow.v()[i];
    }
    let alpha = params.smoothness;
    if params.edge_scale == 0.0 {
        let inv: Vec<f64> = (0..n).map(|i| 1.0 / (alpha + ix[i] * ix[i] + iy[i] * iy[i])).collect();
        let mut ubar = vec![0.0; n];
        let mut vbar = vec![0.0; n];
        for _ in 0..params.iterations {
            hs_average(flow.u(), h, w, &mut ubar);
            hs_average(flow.v(), h, w, &mut vbar);
            let (u, v) = flow.components_mut();
            for i in 0..n {
                let t = (ix[i] * ubar[i] + iy[i] * vbar[i] + r0[i]) * inv[i];
                u[i] = ubar[i] - ix[i] * t;
                v[i] = vbar[i] - iy[i] * t;
            }
        }
    } else {
        solve_robust(&ix, &iy, &r0, h, w, flow, params);
    }
}

/// Jacobi sweeps with the smoothness term weighted per pixel by
/// `eps / sqrt(|∇w|^2 + eps^2)`, refreshed every `REWEIGHT` sweeps.
fn solve_robust(ix: &[f64], iy: &[f64], r0: &[f64], h: usize, w: usize, flow: &mut FlowField, params: &FlowParams) {
    const REWEIGHT: usize = 10;
    let n = h * w;
    let eps = params.edge_scale;
    let alpha = params.smoothness;
    let mut ws = vec![0.0; n];
    // Link weights to the right and downward neighbours; zero off the grid.
    let mut gr = vec![0.0; n];
    let mut gd = vec![0.0; n];
    let mut norm = vec![0.0; n];
    let mut inv = vec![0.0; n];
    let mut ubar = vec![0.0; n];
    let mut vbar = vec![0.0; n];
    for it in 0..params.iterations {
        if it % REWEIGHT == 0 {
            let (u, v) = (flow.u(), flow.v());
            for y in 0..h {
                let yp = (y + 1).min(h - 1);
                for x in 0..w {
                    let i = y * w + x;
                    let (r, d) = (y * w + (x + 1).min(w - 1), yp * w + x);
                    let g = (u[r] - u[i]).powi(2) + (v[r] - v[i]).powi(2) + (u[d] - u[i]).powi(2) + (v[d] - v[i]).powi(2);
                    ws[i] = eps / (g + eps * eps).sqrt();
                }
            }
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    gr[i] = if x + 1 < w { 0.5 * (ws[i] + ws[i + 1]) } else { 0.0 };
                    gd[i] = if y + 1 < h { 0.5 * (ws[i] + ws[i + w]) } else { 0.0 };
                }
            }
            for i in 0..n {
                let (x, y) = (i % w, i / w);
                let gl = if x > 0 { gr[i - 1] } else { 0.0 };
                let gu = if y > 0 { gd[i - w] } else { 0.0 };
                let s = gr[i] + gd[i] + gl + gu;
                norm[i] = 1.0 / s;
                inv[i] = 1.0 / (alpha * 0.25 * s + ix[i] * ix[i] + iy[i] * iy[i]);
            }
        }
        let (u, v) = flow.components_mut();
        let edge = |i: usize, x: usize, y: usize| {
            let (mut su, mut sv) = (0.0, 0.0);
            if x + 1 < w {
                su += gr[i] * u[i + 1];
                sv += gr[i] * v[i + 1];
            }
            if y + 1 < h {
                su += gd[i] * u[i + w];
                sv += gd[i] * v[i + w];
            }
            if x > 0 {
                su += gr[i - 1] * u[i - 1];
                sv += gr[i - 1] * v[i - 1];
            }
            if y > 0 {
                su += gd[i - w] * u[i - w];
                sv += gd[i - w] * v[i - w];
            }
            (su * norm[i], sv * norm[i])
        };
        for y in 0..h {
            if y == 0 || y + 1 == h || w < 3 {
                for x in 0..w {
                    (ubar[y * w + x], vbar[y * w + x]) = edge(y * w + x, x, y);
                }
                continue;
            }
            (ubar[y * w], vbar[y * w]) = edge(y * w, 0, y);
            for i in y * w + 1..(y + 1) * w - 1 {
                let (a, b, c, d) = (gr[i], gd[i], gr[i - 1], gd[i - w]);
                ubar[i] = (a * u[i + 1] + b * u[i + w] + c * u[i - 1] + d * u[i - w]) * norm[i];
                vbar[i] = (a * v[i + 1] + b * v[i + w] + c * v[i - 1] + d * v[i - w]) * norm[i];
            }
            (ubar[(y + 1) * w - 1], vbar[(y + 1) * w - 1]) = edge((y + 1) * w - 1, w - 1, y);
        }
        for i in 0..n {
            let t = (ix[i] * ubar[i] + iy[i] * vbar[i] + r0[i]) * inv[i];
            u[i] = ubar[i] - ix[i] * t;
            v[i] = vbar[i] - iy[i] * t;
        }
    }
}
