//! Central-difference gradient checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diff::{FaultInjection, ParameterSet, Tape, Var};
use crate::error::{Error, Result};

pub const EPS_RANGE: (f64, f64) = (1e-7, 1e-3);

/// Outcome of one check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(1, |numeric|)` over the sampled coordinates.
    pub max_relative_error: f64,
    /// Same maximum, split per parameter array (arrays with no sampled coordinate are absent).
    pub per_param: Vec<(String, f64)>,
    pub coords_checked: usize,
}

impl GradCheckReport {
    pub fn offenders(&self, tolerance: f64) -> Vec<&str> {
        self.per_param
            .iter()
            .filter(|(_, e)| *e > tolerance)
            .map(|(n, _)| n.as_str())
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub eps: f64,
    pub sample_fraction: f64,
    pub min_samples: usize,
    pub seed: u64,
    pub fault: FaultInjection,
}

impl GradCheck {
    pub fn new(eps: f64) -> Self {
        GradCheck {
            eps,
            sample_fraction: 0.05,
            min_samples: 20,
            seed: 0,
            fault: FaultInjection::None,
        }
    }

    pub fn with_fault(mut self, fault: FaultInjection) -> Self {
        self.fault = fault;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn loss<F>(&self, builder: &F, params: &ParameterSet) -> Result<f64>
    where
        F: Fn(&mut Tape, &[Var]) -> Result<Var>,
    {
        let mut tape = Tape::with_fault(self.fault);
        let vars = params.bind(&mut tape);
        let loss = builder(&mut tape, &vars)?;
        Ok(tape.scalar(loss))
    }

    pub fn run<F>(&self, builder: F, params: &ParameterSet) -> Result<GradCheckReport>
    where
        F: Fn(&mut Tape, &[Var]) -> Result<Var>,
    {
        if !(EPS_RANGE.0..=EPS_RANGE.1).contains(&self.eps) {
            return Err(Error::InvalidArgument(format!(
                "gradient-check eps {} outside [{:e}, {:e}]",
                self.eps, EPS_RANGE.0, EPS_RANGE.1
            )));
        }

        let first = self.loss(&builder, params)?;
        let second = self.loss(&builder, params)?;
        if first.to_bits() != second.to_bits() {
            return Err(Error::NonDeterministic { first, second });
        }

        let mut tape = Tape::with_fault(self.fault);
        let vars = params.bind(&mut tape);
        let loss = builder(&mut tape, &vars)?;
        let mut grads = tape.backward(loss)?;
        let analytic = params.gradients(&mut grads, &vars);

        // Flat coordinate -> (array, offset).
        let mut owners = Vec::with_capacity(params.num_coords());
        for (p, (_, m)) in params.iter().enumerate() {
            owners.extend((0..m.len()).map(|o| (p, o)));
        }
        let total = owners.len();
        let wanted = ((total as f64 * self.sample_fraction).ceil() as usize)
            .max(self.min_samples)
            .min(total);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut picked = sample(&mut rng, total, wanted).into_vec();
        picked.sort_unstable();

        let mut per_param = vec![f64::NAN; params.len()];
        let mut worst: f64 = 0.0;
        let mut probe = params.clone();
        for flat in picked {
            let (p, o) = owners[flat];
            let original = probe.entry(p).1.as_slice()[o];

            probe.entry_mut(p).as_mut_slice()[o] = original + self.eps;
            let plus = self.loss(&builder, &probe)?;
            probe.entry_mut(p).as_mut_slice()[o] = original - self.eps;
            let minus = self.loss(&builder, &probe)?;
            probe.entry_mut(p).as_mut_slice()[o] = original;

            let numeric = (plus - minus) / (2.0 * self.eps);
            let exact = analytic.entry(p).1.as_slice()[o];
            let err = (exact - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
            per_param[p] = if per_param[p].is_nan() { err } else { per_param[p].max(err) };
        }

        Ok(GradCheckReport {
            max_relative_error: worst,
            per_param: params
                .names()
                .zip(per_param)
                .filter(|(_, e)| !e.is_nan())
                .map(|(n, e)| (n.to_string(), e))
                .collect(),
            coords_checked: wanted,
        })
    }
}

/// Checks `builder`'s backward gradients against central differences on a
/// random sample of coordinates (5%, at least 20). Returns the maximum
/// relative error.
pub fn grad_check<F>(builder: F, params: &ParameterSet, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    GradCheck::new(eps).run(builder, params).map(|r| r.max_relative_error)
}
