//! Warping-regularized flow objective and its direct minimizer.

use super::{bilinear, bilinear_grad, warp_inverse, FlowField, FlowGroundTruth};
use crate::correspondence::OcclusionMask;
use crate::error::{Error, Result};
use crate::frame_io::Frame;

const INV255: f64 = 1.0 / 255.0;

/// `mean EPE(flow_est, gt.flow) + λ · mean_p (1 - o_a(p)) |a(p) - warp(b, flow_est)(p)|^2`
/// with intensities rescaled to `[0, 1]` and the squared norm taken over
/// channels. The endpoint error stands in for a learned estimator's native
/// supervised loss.
pub fn hybrid_flow_loss(flow_est: &FlowField, gt: &FlowGroundTruth, a: &Frame, b: &Frame, lambda: f64) -> Result<f64> {
    a.check_same("hybrid_flow_loss", b)?;
    flow_est.check_frame("hybrid_flow_loss", a)?;
    gt.occlusion.check_flow("hybrid_flow_loss", flow_est)?;
    let epe = flow_est.mean_endpoint_error(&gt.flow)?;
    let (wb, _) = warp_inverse(b, flow_est)?;
    let warp_term = masked_sq_residual(a, &wb, &gt.occlusion);
    Ok(epe + lambda * warp_term)
}

fn masked_sq_residual(a: &Frame, wb: &Frame, occ: &OcclusionMask) -> f64 {
    let (c, h, w) = a.dims();
    let n = h * w;
    let mut total = 0.0;
    for i in 0..n {
        if occ.data()[i] {
            continue;
        }
        for ch in 0..c {
            let d = (a.data()[ch * n + i] - wb.data()[ch * n + i]) * INV255;
            total += d * d;
        }
    }
    total / n as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefineParams {
    pub steps: usize,
    pub step_size: f64,
    /// Weight of the warping term.
    pub lambda: f64,
    /// Weight of `|w - w_init|^2`.
    pub lambda_dev: f64,
}

impl Default for RefineParams {
    fn default() -> Self {
        Self {
            steps: 20,
            step_size: 2000.0,
            lambda: 0.06,
            lambda_dev: 1e-6,
        }
    }
}

/// Gradient descent on `λ (1 - o) |a - warp(b, w)|^2 + λ_dev |w - w_init|^2`.
///
/// The objective separates over pixels, so each pixel keeps its own step:
/// a step that would raise the pixel's term is rejected and its step halved,
/// so the recorded objective never increases.
pub fn refine_flow(flow_init: &FlowField, a: &Frame, b: &Frame, occlusion: &OcclusionMask, params: &RefineParams) -> Result<FlowField> {
    a.check_same("refine_flow", b)?;
    flow_init.check_frame("refine_flow", a)?;
    occlusion.check_flow("refine_flow", flow_init)?;
    if !(params.step_size > 0.0) || params.lambda < 0.0 || params.lambda_dev < 0.0 {
        return Err(Error::InvalidParam(format!("bad refine parameters {params:?}")));
    }
    let mut flow = flow_init.clone();
    if params.steps == 0 {
        return Ok(flow);
    }
    let (c, h, w) = a.dims();
    let n = h * w;
    let a01: Vec<f64> = a.data().iter().map(|v| v * INV255).collect();
    let b01: Vec<f64> = b.data().iter().map(|v| v * INV255).collect();

    let energy = |i: usize, u: f64, v: f64| -> f64 {
        let (y, x) = (i / w, i % w);
        let (u0, v0) = flow_init.get(y, x);
        let mut e = params.lambda_dev * ((u - u0).powi(2) + (v - v0).powi(2));
        if !occlusion.data()[i] {
            let (sx, sy) = (x as f64 + u, y as f64 + v);
            for ch in 0..c {
                let d = a01[ch * n + i] - bilinear(&b01[ch * n..(ch + 1) * n], h, w, sx, sy).0;
                e += params.lambda * d * d;
            }
        }
        e
    };

    let mut step = vec![params.step_size; n];
    let (u, v) = flow.components_mut();
    for i in 0..n {
        let (y, x) = (i / w, i % w);
        let (u0, v0) = flow_init.get(y, x);
        let mut e = energy(i, u[i], v[i]);
        for _ in 0..params.steps {
            let (sx, sy) = (x as f64 + u[i], y as f64 + v[i]);
            let mut gu = 2.0 * params.lambda_dev * (u[i] - u0);
            let mut gv = 2.0 * params.lambda_dev * (v[i] - v0);
            if !occlusion.data()[i] {
                for ch in 0..c {
                    let plane = &b01[ch * n..(ch + 1) * n];
                    let d = a01[ch * n + i] - bilinear(plane, h, w, sx, sy).0;
                    let (gx, gy) = bilinear_grad(plane, h, w, sx, sy);
                    gu -= 2.0 * params.lambda * d * gx;
                    gv -= 2.0 * params.lambda * d * gy;
                }
            }
            if gu == 0.0 && gv == 0.0 {
                break;
            }
            let (nu, nv) = (u[i] - step[i] * gu, v[i] - step[i] * gv);
            let ne = energy(i, nu, nv);
            if ne <= e {
                u[i] = nu;
                v[i] = nv;
                e = ne;
            } else {
                step[i] *= 0.5;
            }
        }
    }
    Ok(flow)
}

#[cfg(test)]
/// Total refine objective.
pub(crate) fn refine_objective(flow: &FlowField, flow_init: &FlowField, a: &Frame, b: &Frame, occlusion: &OcclusionMask, params: &RefineParams) -> Result<f64> {
    let (wb, _) = warp_inverse(b, flow)?;
    let n = (flow.height() * flow.width()) as f64;
    let dev: f64 = flow
        .u()
        .iter()
        .zip(flow.v())
        .zip(flow_init.u().iter().zip(flow_init.v()))
        .map(|((u, v), (u0, v0))| (u - u0).powi(2) + (v - v0).powi(2))
        .sum();
    Ok(params.lambda * masked_sq_residual(a, &wb, occlusion) + params.lambda_dev * dev / n)
}
