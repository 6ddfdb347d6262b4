//! Central finite-difference gradient oracle.
//!
//! Independent of the analytic backward passes: it only re-evaluates the
//! caller's forward closure at perturbed parameter values. Runs in f64.
//!
//! Non-smooth points (max-pool argmax flips, activation kinks, nearest-
//! neighbour reassignments) make the finite difference meaningless; they
//! are detected by comparing the central difference at step h against the
//! one at h/2 — for a smooth function the two agree to O(h²), while a
//! kink or jump inside the stencil makes them disagree grossly. Detected
//! coordinates are skipped and counted, never silently passed.

use super::ParamStore;
use rand::rngs::StdRng;
use rand::Rng;

/// Tuning knobs for the finite-difference check.
#[derive(Clone, Debug)]
pub struct FdSpec {
    /// Central-difference step.
    pub h: f64,
    /// Max coordinates probed per tensor (all if the tensor is smaller).
    pub max_coords_per_tensor: usize,
    /// Skip threshold on |fd(h) − fd(h/2)| relative to the estimates.
    pub smooth_tol: f64,
    /// Denominator floor of the relative error, i.e. the absolute scale
    /// below which a gradient disagreement is treated as noise.
    pub rel_floor: f64,
}

impl Default for FdSpec {
    fn default() -> Self {
        FdSpec { h: 1e-5, max_coords_per_tensor: 24, smooth_tol: 1e-3, rel_floor: 1e-6 }
    }
}

/// Outcome of one gradient check run.
#[derive(Clone, Debug)]
pub struct FdReport {
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
    /// (param, flat index, analytic, numeric) of the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Compares analytic gradients stored in `params` against central finite
/// differences of `eval`. `eval` must be a pure function of the parameter
/// values. Gradients must already be populated (one backward pass).
pub fn check_gradients<F>(
    params: &mut ParamStore<f64>,
    eval: F,
    spec: &FdSpec,
    rng: &mut StdRng,
) -> FdReport
where
    F: Fn(&ParamStore<f64>) -> f64,
{
    let names = params.names();
    let mut report = FdReport { checked: 0, skipped: 0, max_rel_err: 0.0, worst: None };
    for name in names {
        let n = {
            let t = params.get(&name).expect("listed name");
            t.values().len()
        };
        let coords: Vec<usize> = if n <= spec.max_coords_per_tensor {
            (0..n).collect()
        } else {
            // Distinct random coordinates, deterministic given the rng.
            let mut picked = std::collections::BTreeSet::new();
            while picked.len() < spec.max_coords_per_tensor {
                picked.insert(rng.random_range(0..n));
            }
            picked.into_iter().collect()
        };
        for idx in coords {
            let ana = params
                .get(&name)
                .expect("listed name")
                .grad()
                .map(|g| g[idx])
                .unwrap_or(0.0);
            let orig = params.get(&name).unwrap().values()[idx];
            let mut probe = |delta: f64| {
                params.get_mut(&name).unwrap().values_mut()[idx] = orig + delta;
                eval(params)
            };
            let fd_h = (probe(spec.h) - probe(-spec.h)) / (2.0 * spec.h);
            let h2 = spec.h / 2.0;
            let fd_h2 = (probe(h2) - probe(-h2)) / (2.0 * h2);
            params.get_mut(&name).unwrap().values_mut()[idx] = orig;

            let denom = fd_h.abs().max(fd_h2.abs()).max(spec.rel_floor);
            if (fd_h - fd_h2).abs() > spec.smooth_tol * denom {
                report.skipped += 1;
                continue;
            }
            let rel = (fd_h2 - ana).abs() / (fd_h2.abs() + ana.abs()).max(spec.rel_floor);
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((name.clone(), idx, ana, fd_h2));
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::super::Tensor2;
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn detects_a_wrong_analytic_gradient() {
        let mut ps = ParamStore::new();
        ps.register("w", Tensor2::from_values(1, 2, vec![0.7, -0.3]).unwrap()).unwrap();
        // Loss = w0² + w1²; claim a wrong gradient for w1.
        let wrong = Tensor2::from_values(1, 2, vec![1.4, 1.0]).unwrap();
        ps.get_mut("w").unwrap().accumulate_grad(&wrong);
        let eval = |ps: &ParamStore<f64>| {
            let v = ps.get("w").unwrap().values();
            v[0] * v[0] + v[1] * v[1]
        };
        let mut rng = StdRng::seed_from_u64(1);
        let report = check_gradients(&mut ps, eval, &FdSpec::default(), &mut rng);
        assert!(report.max_rel_err > 0.1, "wrong gradient must be flagged");
        let worst = report.worst.unwrap();
        assert_eq!((worst.0.as_str(), worst.1), ("w", 1));
    }

    #[test]
    fn accepts_a_correct_analytic_gradient() {
        let mut ps = ParamStore::new();
        ps.register("w", Tensor2::from_values(1, 3, vec![0.2, -1.1, 0.5]).unwrap()).unwrap();
        let grad = Tensor2::from_values(1, 3, vec![0.4, -2.2, 1.0]).unwrap();
        ps.get_mut("w").unwrap().accumulate_grad(&grad);
        let eval = |ps: &ParamStore<f64>| ps.get("w").unwrap().values().iter().map(|v| v * v).sum();
        let mut rng = StdRng::seed_from_u64(2);
        let report = check_gradients(&mut ps, eval, &FdSpec::default(), &mut rng);
        assert!(report.max_rel_err < 1e-6, "got {}", report.max_rel_err);
        assert_eq!(report.skipped, 0);
        assert_eq!(report.checked, 3);
    }

    #[test]
    fn skips_a_kink_instead_of_failing() {
        let mut ps = ParamStore::new();
        // |w| has a kink at 0; park the parameter within h of it.
        ps.register("w", Tensor2::from_values(1, 1, vec![2e-6]).unwrap()).unwrap();
        let grad = Tensor2::from_values(1, 1, vec![1.0]).unwrap();
        ps.get_mut("w").unwrap().accumulate_grad(&grad);
        let eval = |ps: &ParamStore<f64>| ps.get("w").unwrap().values()[0].abs();
        let mut rng = StdRng::seed_from_u64(3);
        let report = check_gradients(&mut ps, eval, &FdSpec::default(), &mut rng);
        assert_eq!(report.skipped, 1);
        assert_eq!(report.checked, 0);
    }
}
