//! Central finite-difference checks of tape gradients.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{ParameterSet, Tape, Var};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub h: f64,
    /// Above this many coordinates a random subsample is checked instead.
    pub exhaustive_limit: usize,
    /// Approximate subsample size when subsampling.
    pub sample_size: usize,
    /// Every tensor contributes at least this many coordinates (or all of them).
    pub min_per_tensor: usize,
    /// Relative error denominator is `max(|analytic|, |numeric|, abs_floor)`.
    pub abs_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            h: 1e-5,
            exhaustive_limit: 10_000,
            sample_size: 2_000,
            min_per_tensor: 8,
            abs_floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct WorstCoordinate {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub coords_checked: usize,
    pub worst: Option<WorstCoordinate>,
}

fn eval_loss<F>(loss_fn: &F, params: &ParameterSet) -> Result<f64>
where
    F: for<'p> Fn(&mut Tape<'p>, &'p ParameterSet) -> Result<Var>,
{
    let mut tape = Tape::new();
    let l = loss_fn(&mut tape, params)?;
    let v = tape.value(l);
    if v.shape() != (1, 1) {
        return Err(Error::Contract(format!("loss must be 1x1, got {:?}", v.shape())));
    }
    let v = v.item();
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("loss evaluated to {v}")));
    }
    Ok(v)
}

/// Compares tape gradients of `loss_fn` against central differences.
///
/// `loss_fn` must be pure: it is re-run twice per checked coordinate.
pub fn gradient_check<F>(loss_fn: F, params: &ParameterSet, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: for<'p> Fn(&mut Tape<'p>, &'p ParameterSet) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new();
        let l = loss_fn(&mut tape, params)?;
        let v = tape.value(l).item();
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("loss evaluated to {v}")));
        }
        tape.backward(l)?.into_params()
    };

    let total = params.num_scalars();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut plan: Vec<(String, Vec<usize>)> = Vec::new();
    for (name, t) in params.iter() {
        let n = t.len();
        let coords = if total <= opts.exhaustive_limit {
            (0..n).collect()
        } else {
            let share = (opts.sample_size as f64 * n as f64 / total as f64).round() as usize;
            let k = share.max(opts.min_per_tensor).min(n);
            let mut picked = index::sample(&mut rng, n, k).into_vec();
            picked.sort_unstable();
            picked
        };
        plan.push((name.to_string(), coords));
    }

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        coords_checked: 0,
        worst: None,
    };
    for (name, coords) in plan {
        let zeros;
        let a_grad: &[f64] = match analytic.get(&name) {
            Some(g) => g,
            None => {
                zeros = vec![0.0; params.get(&name)?.len()];
                &zeros
            }
        };
        for i in coords {
            let orig = work.get(&name)?.values()[i];
            work.get_mut(&name)?.values_mut()[i] = orig + opts.h;
            let plus = eval_loss(&loss_fn, &work)?;
            work.get_mut(&name)?.values_mut()[i] = orig - opts.h;
            let minus = eval_loss(&loss_fn, &work)?;
            work.get_mut(&name)?.values_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * opts.h);
            let a = a_grad[i];
            let denom = a.abs().max(numeric.abs()).max(opts.abs_floor);
            let rel = (a - numeric).abs() / denom;
            report.coords_checked += 1;
            if rel > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = report.max_relative_error.max(rel);
                report.worst = Some(WorstCoordinate {
                    name: name.clone(),
                    index: i,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    Ok(report)
}
