//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::params::{ParamSet, ParamVars};
use super::tape::{Tape, Var};

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Finite-difference half step.
    pub step: f64,
    pub tolerance: f64,
    /// Coordinates checked per tensor; `None` checks every coordinate.
    pub samples_per_param: Option<usize>,
    /// Floor on the relative-error denominator, so that gradients that are
    /// zero up to round-off do not blow up the ratio.
    pub denominator_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tolerance: 1e-4,
            samples_per_param: None,
            denominator_floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    /// Coordinates whose ±step evaluations crossed a ReLU or max-pool
    /// branch, where a central difference is meaningless.
    pub skipped: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.checked > 0 && p.max_rel_error < self.tolerance)
    }

    pub fn max_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares tape gradients of `loss_fn` with central differences for every
/// tensor in `params`.
pub fn grad_check<F>(loss_fn: F, params: &ParamSet, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamVars) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = params.attach(&mut tape);
    let loss = loss_fn(&mut tape, &vars)?;
    let base_value = tape.value(loss).item();
    let base_print = tape.branch_fingerprint();
    let grads = tape.backward(loss)?;
    drop(tape);

    let eval = |ps: &ParamSet| -> Result<(f64, u64)> {
        let mut tape = Tape::new();
        let vars = ps.attach_frozen(&mut tape);
        let loss = loss_fn(&mut tape, &vars)?;
        Ok((tape.value(loss).item(), tape.branch_fingerprint()))
    };

    let (again, _) = eval(params)?;
    if again.to_bits() != base_value.to_bits() {
        return Err(Error::NonDeterministic {
            first: base_value,
            second: again,
        });
    }

    let mut work = params.clone();
    let mut report = Vec::with_capacity(params.len());
    for (pi, p) in params.iter().enumerate() {
        let analytic = grads.wrt(vars.get(&p.name)?);
        let n = p.value.numel();
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (pi as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let order: Vec<usize> = match opts.samples_per_param {
            Some(k) if k < n => {
                // Always include the largest-magnitude gradient entry, then a
                // random permutation of the rest as a pool of candidates.
                let argmax = analytic
                    .data()
                    .iter()
                    .enumerate()
                    .fold(
                        (0, -1.0),
                        |best, (i, g)| if g.abs() > best.1 { (i, g.abs()) } else { best },
                    )
                    .0;
                let mut order = vec![argmax];
                order.extend(sample(&mut rng, n, n).into_iter().filter(|&i| i != argmax));
                order
            }
            _ => (0..n).collect(),
        };
        let budget = opts.samples_per_param.unwrap_or(n).min(n);

        let mut check = ParamCheck {
            name: p.name.clone(),
            checked: 0,
            skipped: 0,
            max_rel_error: 0.0,
            worst_index: 0,
        };
        for idx in order {
            if check.checked >= budget {
                break;
            }
            let original = p.value.data()[idx];
            work.get_mut(&p.name)?.value.data_mut()[idx] = original + opts.step;
            let (plus, plus_print) = eval(&work)?;
            work.get_mut(&p.name)?.value.data_mut()[idx] = original - opts.step;
            let (minus, minus_print) = eval(&work)?;
            work.get_mut(&p.name)?.value.data_mut()[idx] = original;

            if plus_print != base_print || minus_print != base_print {
                check.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * opts.step);
            let err = relative_error(analytic.data()[idx], numeric, opts.denominator_floor);
            if err > check.max_rel_error {
                check.max_rel_error = err;
                check.worst_index = idx;
            }
            check.checked += 1;
        }
        report.push(check);
    }

    Ok(GradCheckReport {
        params: report,
        tolerance: opts.tolerance,
    })
}
