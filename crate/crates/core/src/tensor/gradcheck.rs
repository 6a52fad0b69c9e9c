//! Central-difference gradient checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Grads, ParamSet};
use crate::par;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Central-difference half step.
    pub h: f64,
    /// Number of scalar parameters to probe (all of them if fewer exist).
    pub samples: usize,
    pub seed: u64,
    /// Lower bound on the denominator of the relative error, so gradients
    /// that are numerically zero do not blow the ratio up.
    pub abs_floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-4,
            samples: 100,
            seed: 0,
            abs_floor: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compares `analytic` against `(L(θ + h e_i) - L(θ - h e_i)) / 2h` on a
/// random subsample of scalar parameters and returns the largest relative
/// error `|a - n| / max(|n|, abs_floor)`.
pub fn finite_diff_check<F>(params: &ParamSet, analytic: &Grads, loss: F, opts: GradCheckOptions) -> GradCheckReport
where
    F: Fn(&ParamSet) -> f64 + Sync + Send,
{
    let index: Vec<(String, usize)> = params
        .iter()
        .flat_map(|(name, t)| (0..t.len()).map(move |i| (name.to_owned(), i)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let picks: Vec<usize> = if index.len() <= opts.samples {
        (0..index.len()).collect()
    } else {
        let mut v = sample(&mut rng, index.len(), opts.samples).into_vec();
        v.sort_unstable();
        v
    };

    let errors = par::map_slice(&picks, |&p| {
        let (name, i) = &index[p];
        let mut probe = params.clone();
        let base = probe.get(name).expect("indexed").data()[*i];
        probe.get_mut(name).expect("indexed").data_mut()[*i] = base + opts.h;
        let up = loss(&probe);
        probe.get_mut(name).expect("indexed").data_mut()[*i] = base - opts.h;
        let down = loss(&probe);
        let numeric = (up - down) / (2.0 * opts.h);
        let a = analytic.get(name).map_or(0.0, |g| g.data()[*i]);
        (a - numeric).abs() / numeric.abs().max(opts.abs_floor)
    });

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: picks.len(),
    };
    for (e, &p) in errors.iter().zip(&picks) {
        if !(*e <= report.max_rel_error) {
            report.max_rel_error = *e;
            report.worst = Some(index[p].clone());
        }
    }
    report
}
