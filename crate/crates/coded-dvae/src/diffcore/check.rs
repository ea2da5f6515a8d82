//! Finite-difference verification of reverse-mode gradients.

use super::params::{GradBuffer, ParamStore};
use super::DiffError;

/// Outcome of a finite-difference sweep over every parameter coordinate.
#[derive(Debug, Clone)]
pub struct FiniteDiffReport {
    /// Relative error per flat coordinate:
    /// `|g_ad - g_fd| / max(1e-12, |g_ad| + |g_fd|)`.
    pub rel_errors: Vec<f64>,
    pub max_rel_err: f64,
    /// Flat coordinate and values `(g_ad, g_fd)` behind `max_rel_err`.
    pub worst: Option<(usize, f64, f64)>,
    pub tol: f64,
    pub pass: bool,
}

impl FiniteDiffReport {
    /// Name of the parameter entry owning the worst coordinate.
    pub fn worst_param<'a>(&self, store: &'a ParamStore) -> Option<&'a str> {
        self.worst.map(|(i, _, _)| store.entry_for_flat(i).name.as_str())
    }
}

/// Sweep every parameter coordinate with a central difference of step `h`
/// and compare against the analytic gradient returned by `loss_fn` at the
/// unperturbed point. `loss_fn` must be deterministic (fix all noise).
pub fn finite_diff_check<F, E>(
    loss_fn: F,
    store: &mut ParamStore,
    h: f64,
    tol: f64,
) -> Result<FiniteDiffReport, E>
where
    F: Fn(&ParamStore) -> Result<(f64, GradBuffer), E>,
    E: From<DiffError>,
{
    let (base_loss, analytic) = loss_fn(store)?;
    if !base_loss.is_finite() {
        return Err(DiffError::NonFinite { where_: "loss at base point".into() }.into());
    }
    if analytic.len() != store.flat_len() {
        return Err(DiffError::ShapeMismatch {
            what: format!(
                "gradient has {} coordinates, store has {}",
                analytic.len(),
                store.flat_len()
            ),
        }
        .into());
    }

    let mut rel_errors = Vec::with_capacity(store.flat_len());
    let mut max_rel_err = 0.0f64;
    let mut worst = None;
    for i in 0..store.flat_len() {
        let center = store.flat_at(i);
        store.set_flat_at(i, center + h);
        let plus = loss_fn(store)?.0;
        store.set_flat_at(i, center - h);
        let minus = loss_fn(store)?.0;
        store.set_flat_at(i, center);
        if !plus.is_finite() || !minus.is_finite() {
            return Err(
                DiffError::NonFinite { where_: format!("loss near coordinate {i}") }.into()
            );
        }
        let g_fd = (plus - minus) / (2.0 * h);
        let g_ad = analytic.flat()[i];
        let rel = (g_ad - g_fd).abs() / (g_ad.abs() + g_fd.abs()).max(1e-12);
        if rel > max_rel_err {
            max_rel_err = rel;
            worst = Some((i, g_ad, g_fd));
        }
        rel_errors.push(rel);
    }

    Ok(FiniteDiffReport { rel_errors, max_rel_err, worst, tol, pass: max_rel_err < tol })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{forward_mlp, NetworkPlan, OutputActivation, Tape};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quadratic_loss_matches_to_machine_precision() {
        let mut store = ParamStore::new();
        store.add_vector("p", vec![0.3, -1.2, 2.4]).unwrap();
        let loss = |s: &ParamStore| -> Result<(f64, GradBuffer), DiffError> {
            let mut tape = Tape::new();
            let p = tape.param(s, "p")?;
            let sq = tape.mul(p, p);
            let total = tape.sum(sq);
            let half = tape.scale(total, 0.5);
            let grads = tape.backward(half, s.flat_len())?;
            Ok((tape.scalar(half), grads))
        };
        let report = finite_diff_check(loss, &mut store, 1e-5, 1e-9).unwrap();
        assert!(report.pass, "max rel err {}", report.max_rel_err);
        assert!(report.max_rel_err < 1e-9);
    }

    #[test]
    fn random_three_layer_net_matches_finite_differences() {
        let plan = NetworkPlan::new(vec![4, 6, 5, 3], OutputActivation::Identity).unwrap();
        let mut store = ParamStore::new();
        plan.init_params(&mut store, "net", &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let batch = [
            [0.4, -0.3, 0.8, 0.1],
            [-0.7, 0.9, -0.2, 0.5],
            [1.1, 0.3, 0.6, -0.8],
            [-0.2, -0.6, 1.3, 0.7],
        ];
        let target = [1.0, -0.4, 0.6];
        let loss = move |s: &ParamStore| -> Result<(f64, GradBuffer), DiffError> {
            let mut tape = Tape::new();
            let mut total = None;
            for x in &batch {
                let input = tape.constant(x);
                let out = forward_mlp(&plan, s, "net", &mut tape, input)?;
                let diff = {
                    let t = tape.constant(&target);
                    tape.sub(out, t)
                };
                let sq = tape.mul(diff, diff);
                let item = tape.sum(sq);
                total = Some(match total {
                    None => item,
                    Some(acc) => tape.add(acc, item),
                });
            }
            let total = total.expect("non-empty batch");
            let grads = tape.backward(total, s.flat_len())?;
            Ok((tape.scalar(total), grads))
        };
        let report = finite_diff_check(loss, &mut store, 1e-5, 1e-6).unwrap();
        assert!(report.pass, "max rel err {} at {:?}", report.max_rel_err, report.worst);
    }

    #[test]
    fn corrupted_gradient_fails_the_check() {
        let mut store = ParamStore::new();
        store.add_vector("p", vec![1.0, 2.0]).unwrap();
        let loss = |s: &ParamStore| -> Result<(f64, GradBuffer), DiffError> {
            let mut tape = Tape::new();
            let p = tape.param(s, "p")?;
            let sq = tape.mul(p, p);
            let total = tape.sum(sq);
            let mut grads = tape.backward(total, s.flat_len())?;
            grads.flat_mut()[0] += 0.5; // deliberate corruption
            Ok((tape.scalar(total), grads))
        };
        let report = finite_diff_check(loss, &mut store, 1e-5, 1e-6).unwrap();
        assert!(!report.pass);
        assert_eq!(report.worst.map(|(i, _, _)| i), Some(0));
        assert_eq!(report.worst_param(&store), Some("p"));
    }
}
