//! Central-difference gradient checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::{Gradients, ParamId, ParameterStore};
use crate::parallel::{par_map, Parallelism};

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub step: f64,
    /// Largest acceptable relative error.
    pub tolerance: f64,
    /// Entries checked per tensor (all entries when the tensor is smaller).
    pub samples_per_tensor: usize,
    /// Denominator floor for the relative error, so that two gradients that
    /// are both numerically zero compare as equal.
    pub abs_floor: f64,
    pub seed: u64,
    pub parallelism: Parallelism,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-4,
            tolerance: 1e-3,
            samples_per_tensor: 16,
            abs_floor: 1e-6,
            seed: 0,
            parallelism: Parallelism::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EntryCheck {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub name: String,
    pub entries: Vec<EntryCheck>,
    pub max_rel_error: f64,
}

impl TensorCheck {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error.is_finite() && self.max_rel_error <= tolerance
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.passed(self.tolerance))
    }

    pub fn max_rel_error(&self) -> f64 {
        self.tensors
            .iter()
            .map(|t| t.max_rel_error)
            .fold(0.0, |a, b| if b.is_nan() || a.is_nan() { f64::NAN } else { a.max(b) })
    }

    pub fn failures(&self) -> impl Iterator<Item = &TensorCheck> {
        self.tensors.iter().filter(|t| !t.passed(self.tolerance))
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for t in &self.tensors {
            writeln!(
                f,
                "{:<28} {:>4} entries  max rel err {:.3e}  {}",
                t.name,
                t.entries.len(),
                t.max_rel_error,
                if t.passed(self.tolerance) { "ok" } else { "FAIL" }
            )?;
        }
        write!(
            f,
            "overall max rel err {:.3e} (tolerance {:.0e}): {}",
            self.max_rel_error(),
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

/// `|a - n| / max(|a|, |n|, floor)`; non-finite inputs give NaN.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    if !analytic.is_finite() || !numeric.is_finite() {
        return f64::NAN;
    }
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares back-propagated gradients of `loss` with central differences.
pub fn grad_check<F>(store: &ParameterStore, loss: F, cfg: &GradCheckConfig) -> crate::Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>) -> crate::Result<Var> + Sync,
{
    let mut grads = Gradients::for_store(store);
    {
        let mut g = Graph::new(store);
        let l = loss(&mut g)?;
        g.backward(l, &mut grads)?;
    }
    compare_gradients(store, &grads, loss, cfg)
}

/// Checks a supplied set of analytic gradients against central differences
/// of `loss`.
pub fn compare_gradients<F>(
    store: &ParameterStore,
    analytic: &Gradients,
    loss: F,
    cfg: &GradCheckConfig,
) -> crate::Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>) -> crate::Result<Var> + Sync,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut jobs: Vec<(ParamId, usize)> = Vec::new();
    for id in store.ids() {
        let dense = analytic.dense(store, id);
        for index in pick_entries(&dense, cfg.samples_per_tensor, &mut rng) {
            jobs.push((id, index));
        }
    }

    let eval = |s: &ParameterStore| -> crate::Result<f64> {
        let mut g = Graph::new(s);
        let l = loss(&mut g)?;
        Ok(g.scalar(l))
    };
    let numeric = par_map(cfg.parallelism, &jobs, |_, &(id, index)| -> crate::Result<f64> {
        let mut probe = store.clone();
        let base = probe.get(id).data()[index];
        probe.get_mut(id).data_mut()[index] = base + cfg.step;
        let plus = eval(&probe)?;
        probe.get_mut(id).data_mut()[index] = base - cfg.step;
        let minus = eval(&probe)?;
        Ok((plus - minus) / (2.0 * cfg.step))
    });

    let mut tensors: Vec<TensorCheck> = store
        .ids()
        .map(|id| TensorCheck {
            name: store.name(id).to_string(),
            entries: Vec::new(),
            max_rel_error: 0.0,
        })
        .collect();
    for (&(id, index), num) in jobs.iter().zip(numeric) {
        let numeric = num?;
        let a = analytic.get(id).map_or(0.0, |g| g[index]);
        let rel_error = relative_error(a, numeric, cfg.abs_floor);
        let t = &mut tensors[id.0];
        t.max_rel_error = if rel_error.is_nan() || t.max_rel_error.is_nan() {
            f64::NAN
        } else {
            t.max_rel_error.max(rel_error)
        };
        t.entries.push(EntryCheck {
            index,
            analytic: a,
            numeric,
            rel_error,
        });
    }
    Ok(GradCheckReport {
        tolerance: cfg.tolerance,
        tensors,
    })
}

/// Half of the budget goes to entries with a nonzero analytic gradient (the
/// informative ones), the rest is drawn uniformly.
fn pick_entries(grad: &[f64], budget: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if grad.len() <= budget {
        return (0..grad.len()).collect();
    }
    let nonzero: Vec<usize> = (0..grad.len()).filter(|&i| grad[i] != 0.0).collect();
    let from_nonzero = (budget / 2).min(nonzero.len());
    let mut picked: Vec<usize> = sample(rng, nonzero.len(), from_nonzero)
        .into_iter()
        .map(|k| nonzero[k])
        .collect();
    for i in sample(rng, grad.len(), budget) {
        if picked.len() == budget {
            break;
        }
        if !picked.contains(&i) {
            picked.push(i);
        }
    }
    picked.sort_unstable();
    picked
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Array;

    fn bowl(store: &ParameterStore) -> impl Fn(&mut Graph<'_>) -> crate::Result<Var> + Sync + '_ {
        let id = store.id("theta").unwrap();
        move |g: &mut Graph<'_>| {
            let x = g.param(id);
            let target = g.constant(Array::vector(vec![1.0, -2.0, 0.5]).unwrap());
            let diff = g.sub(x, target)?;
            let sq = g.mul(diff, diff)?;
            Ok(g.sum(sq))
        }
    }

    fn store() -> ParameterStore {
        let mut s = ParameterStore::new();
        s.insert("theta", Array::vector(vec![0.3, 0.7, -1.1]).unwrap());
        s
    }

    #[test]
    fn quadratic_bowl_passes_tightly() {
        let s = store();
        let cfg = GradCheckConfig {
            tolerance: 1e-6,
            ..Default::default()
        };
        let report = grad_check(&s, bowl(&s), &cfg).unwrap();
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn corrupted_gradient_fails() {
        let s = store();
        let f = bowl(&s);
        let mut grads = Gradients::for_store(&s);
        let mut g = Graph::new(&s);
        let l = f(&mut g).unwrap();
        g.backward(l, &mut grads).unwrap();
        // a backward rule that forgot the factor of two
        let id = s.id("theta").unwrap();
        let halved: Vec<f64> = grads.dense(&s, id).iter().map(|v| v * 0.5).collect();
        let mut corrupted = Gradients::for_store(&s);
        corrupted.add_to(id, &halved);
        let report = compare_gradients(&s, &corrupted, f, &GradCheckConfig::default()).unwrap();
        assert!(!report.passed());
    }

    #[test]
    fn non_finite_is_failure() {
        assert!(relative_error(f64::NAN, 1.0, 1e-6).is_nan());
        let t = TensorCheck {
            name: "x".into(),
            entries: vec![],
            max_rel_error: f64::NAN,
        };
        assert!(!t.passed(1e-3));
    }
}
