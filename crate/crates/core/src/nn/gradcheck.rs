//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::nn::params::ParameterSet;

/// A scalar objective over a parameter set with an analytic gradient.
pub trait DifferentiableProgram {
    fn loss(&self, params: &ParameterSet) -> Result<f64>;

    /// Evaluates the loss and overwrites every gradient buffer in `params`.
    fn loss_and_grad(&self, params: &mut ParameterSet) -> Result<f64>;
}

pub const DEFAULT_STEP: f64 = 1e-5;
pub const MAX_ENTRIES_PER_PARAM: usize = 64;

#[derive(Debug, Clone, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub entries_checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub per_param: Vec<ParamCheck>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// `|a - n| / max(1, |a|, |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Compares analytic gradients against central differences on up to
/// [`MAX_ENTRIES_PER_PARAM`] randomly chosen entries of each parameter.
pub fn grad_check<P: DifferentiableProgram + ?Sized>(
    program: &P,
    params: &ParameterSet,
    step: f64,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut analytic = params.clone();
    program.loss_and_grad(&mut analytic)?;

    let mut probe = params.clone();
    let names: Vec<String> = params.names().map(str::to_owned).collect();
    let mut per_param = Vec::with_capacity(names.len());
    for name in names {
        let len = params.value(&name).data().len();
        let picks = sample(&mut rng, len, len.min(MAX_ENTRIES_PER_PARAM));
        let mut worst: f64 = 0.0;
        for idx in picks.iter() {
            let original = params.value(&name).data()[idx];
            probe.value_mut(&name).data_mut()[idx] = original + step;
            let up = program.loss(&probe)?;
            probe.value_mut(&name).data_mut()[idx] = original - step;
            let down = program.loss(&probe)?;
            probe.value_mut(&name).data_mut()[idx] = original;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic.grad(&name).data()[idx];
            worst = worst.max(relative_error(a, numeric));
        }
        per_param.push(ParamCheck {
            name,
            entries_checked: len.min(MAX_ENTRIES_PER_PARAM),
            max_rel_error: worst,
        });
    }
    let max_rel_error = per_param
        .iter()
        .map(|p| p.max_rel_error)
        .fold(0.0, f64::max);
    Ok(GradCheckReport {
        per_param,
        max_rel_error,
        tolerance,
        passed: max_rel_error < tolerance,
    })
}
