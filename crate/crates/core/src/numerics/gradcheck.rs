//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{BackwardFault, NumericsError, ParamStore, Tape, Var};

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Finite-difference step `h`.
    pub step: f64,
    pub tolerance: f64,
    /// Components checked per parameter; small tensors are checked exhaustively.
    pub samples_per_param: usize,
    pub seed: u64,
    /// Restrict the check to these parameter names.
    pub only: Option<Vec<String>>,
    pub fault: Option<BackwardFault>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-5, tolerance: 1e-6, samples_per_param: 12, seed: 0, only: None, fault: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub samples: usize,
    pub worst_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.worst_rel_err < self.tolerance)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(move |p| p.worst_rel_err >= self.tolerance)
    }

    pub fn worst(&self) -> f64 {
        self.params.iter().map(|p| p.worst_rel_err).fold(0.0, f64::max)
    }

    pub fn get(&self, name: &str) -> Option<&ParamCheck> {
        self.params.iter().find(|p| p.name == name)
    }
}

/// Compares the tape gradient of the scalar built by `f` against central
/// differences `(f(θ+h) − f(θ−h)) / 2h`, reporting
/// `|analytic − numeric| / max(1, |numeric|)` per parameter.
pub fn grad_check<F, E>(store: &ParamStore<f64>, f: F, opts: &GradCheckOptions) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Tape<'_, f64>) -> Result<Var, E>,
    E: From<NumericsError>,
{
    let eval = |s: &ParamStore<f64>| -> Result<f64, E> {
        let mut tape = Tape::new(s);
        let loss = f(&mut tape)?;
        Ok(tape.value(loss).item())
    };

    let mut tape = Tape::new(store).with_fault(opts.fault.clone());
    let loss = f(&mut tape)?;
    let first = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    drop(tape);

    let second = eval(store)?;
    if first.to_bits() != second.to_bits() {
        return Err(NumericsError::Nondeterministic { first, second }.into());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work = store.clone();
    let mut report = GradCheckReport { tolerance: opts.tolerance, params: Vec::new() };
    for id in store.ids() {
        let name = store.name(id).to_string();
        if let Some(only) = &opts.only {
            if !only.iter().any(|n| n == &name) {
                continue;
            }
        }
        let n = store.get(id).len();
        let analytic_of = |i: usize| grads.get(id).map_or(0.0, |g| g.data()[i]);
        let indices: Vec<usize> = if n <= opts.samples_per_param {
            (0..n).collect()
        } else {
            // Half the budget goes to components with a live gradient so that
            // sparse parameters (embedding tables) are not checked only at zeros.
            let live: Vec<usize> = (0..n).filter(|&i| analytic_of(i) != 0.0).collect();
            let from_live = (opts.samples_per_param / 2).min(live.len());
            let mut picked: Vec<usize> =
                sample(&mut rng, live.len(), from_live).into_iter().map(|k| live[k]).collect();
            for i in sample(&mut rng, n, opts.samples_per_param - from_live) {
                if !picked.contains(&i) {
                    picked.push(i);
                }
            }
            picked.sort_unstable();
            picked
        };

        let mut check = ParamCheck {
            name,
            samples: indices.len(),
            worst_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in indices {
            let orig = work.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + opts.step;
            let plus = eval(&work)?;
            work.get_mut(id).data_mut()[i] = orig - opts.step;
            let minus = eval(&work)?;
            work.get_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let analytic = analytic_of(i);
            let rel = (analytic - numeric).abs() / numeric.abs().max(1.0);
            if rel > check.worst_rel_err || check.samples == 0 {
                check.worst_rel_err = rel;
                check.worst_index = i;
                check.analytic = analytic;
                check.numeric = numeric;
            }
        }
        report.params.push(check);
    }
    Ok(report)
}
