//! Multilayer perceptrons over the tape: a layer plan, seeded initialization
//! into a [`ParamStore`], and forward evaluation.

use rand::Rng;

use super::params::ParamStore;
use super::tape::{Tape, Var};
use super::DiffError;

/// Slope of the leaky rectifier used between layers.
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    /// Logistic squashing, for probability outputs.
    Logistic,
    /// Raw affine output.
    Identity,
}

/// Layer sizes `[in, h_1, ..., out]` plus the output activation. Hidden
/// layers use the leaky rectifier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkPlan {
    sizes: Vec<usize>,
    output: OutputActivation,
}

impl NetworkPlan {
    pub fn new(sizes: Vec<usize>, output: OutputActivation) -> Result<Self, DiffError> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(DiffError::ShapeMismatch {
                what: format!("layer plan needs at least [in, out] positive sizes, got {sizes:?}"),
            });
        }
        Ok(Self { sizes, output })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn output(&self) -> OutputActivation {
        self.output
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("non-empty plan")
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn param_count(&self) -> usize {
        (0..self.n_layers()).map(|i| self.sizes[i + 1] * (self.sizes[i] + 1)).sum()
    }

    fn weight_name(prefix: &str, layer: usize) -> String {
        format!("{prefix}.w{layer}")
    }

    fn bias_name(prefix: &str, layer: usize) -> String {
        format!("{prefix}.b{layer}")
    }

    /// Register this plan's parameters under `prefix`: weights uniform in
    /// `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn init_params<R: Rng>(
        &self,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut R,
    ) -> Result<(), DiffError> {
        for layer in 0..self.n_layers() {
            let (fan_in, fan_out) = (self.sizes[layer], self.sizes[layer + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w: Vec<f64> =
                (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
            store.add_matrix(&Self::weight_name(prefix, layer), fan_out, fan_in, w)?;
            store.add_vector(&Self::bias_name(prefix, layer), vec![0.0; fan_out])?;
        }
        Ok(())
    }
}

/// Forward pass up to (and excluding) the output activation.
pub fn forward_mlp_logits(
    plan: &NetworkPlan,
    store: &ParamStore,
    prefix: &str,
    tape: &mut Tape,
    input: Var,
) -> Result<Var, DiffError> {
    if tape.values(input).len() != plan.input_dim() {
        return Err(DiffError::ShapeMismatch {
            what: format!(
                "input has {} values, plan expects {}",
                tape.values(input).len(),
                plan.input_dim()
            ),
        });
    }
    let mut h = input;
    for layer in 0..plan.n_layers() {
        let w = tape.param(store, &NetworkPlan::weight_name(prefix, layer))?;
        let b = tape.param(store, &NetworkPlan::bias_name(prefix, layer))?;
        h = tape.affine(w, b, h, plan.sizes[layer + 1], plan.sizes[layer]);
        if tape.values(h).iter().any(|v| !v.is_finite()) {
            return Err(DiffError::NonFinite { where_: format!("{prefix} layer {layer}") });
        }
        if layer + 1 < plan.n_layers() {
            h = tape.leaky_relu(h, LEAKY_SLOPE);
        }
    }
    Ok(h)
}

/// Full forward pass including the plan's output activation.
pub fn forward_mlp(
    plan: &NetworkPlan,
    store: &ParamStore,
    prefix: &str,
    tape: &mut Tape,
    input: Var,
) -> Result<Var, DiffError> {
    let logits = forward_mlp_logits(plan, store, prefix, tape, input)?;
    Ok(match plan.output() {
        OutputActivation::Logistic => tape.logistic(logits),
        OutputActivation::Identity => logits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_identity_output_gives_zero_vector() {
        let plan = NetworkPlan::new(vec![3, 2], OutputActivation::Identity).unwrap();
        let mut store = ParamStore::new();
        store.add_matrix("net.w0", 2, 3, vec![0.0; 6]).unwrap();
        store.add_vector("net.b0", vec![0.0; 2]).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(&[1.0, -2.0, 3.0]);
        let y = forward_mlp(&plan, &store, "net", &mut tape, x).unwrap();
        assert_eq!(tape.values(y), &[0.0, 0.0]);
    }

    #[test]
    fn single_linear_layer_is_matrix_vector_product() {
        let plan = NetworkPlan::new(vec![2, 2], OutputActivation::Identity).unwrap();
        let mut store = ParamStore::new();
        store.add_matrix("net.w0", 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        store.add_vector("net.b0", vec![0.5, -0.5]).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(&[1.0, 1.0]);
        let y = forward_mlp(&plan, &store, "net", &mut tape, x).unwrap();
        assert_eq!(tape.values(y), &[3.5, 6.5]);
    }

    #[test]
    fn logistic_output_lies_in_unit_interval() {
        let plan = NetworkPlan::new(vec![4, 8, 3], OutputActivation::Logistic).unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        plan.init_params(&mut store, "net", &mut rng).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(&[0.2, -0.9, 1.4, 0.0]);
        let y = forward_mlp(&plan, &store, "net", &mut tape, x).unwrap();
        for &v in tape.values(y) {
            assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn forward_is_deterministic_and_init_is_seeded() {
        let plan = NetworkPlan::new(vec![3, 5, 2], OutputActivation::Logistic).unwrap();
        let mut s1 = ParamStore::new();
        let mut s2 = ParamStore::new();
        plan.init_params(&mut s1, "m", &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        plan.init_params(&mut s2, "m", &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        assert_eq!(s1.flat(), s2.flat());
        let run = |store: &ParamStore| {
            let mut tape = Tape::new();
            let x = tape.constant(&[0.1, 0.2, 0.3]);
            let y = forward_mlp(&plan, store, "m", &mut tape, x).unwrap();
            tape.values(y).to_vec()
        };
        assert_eq!(run(&s1), run(&s2));
        // biases start at zero
        assert!(s1.entry("m.b0").unwrap().values().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn forward_rejects_shape_mismatch() {
        let plan = NetworkPlan::new(vec![3, 2], OutputActivation::Identity).unwrap();
        let mut store = ParamStore::new();
        store.add_matrix("net.w0", 2, 3, vec![0.0; 6]).unwrap();
        store.add_vector("net.b0", vec![0.0; 2]).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(&[1.0]);
        let err = forward_mlp(&plan, &store, "net", &mut tape, x);
        assert!(matches!(err, Err(DiffError::ShapeMismatch { .. })));
    }

    #[test]
    fn plan_validation_and_counts() {
        assert!(NetworkPlan::new(vec![3], OutputActivation::Identity).is_err());
        assert!(NetworkPlan::new(vec![3, 0], OutputActivation::Identity).is_err());
        let plan = NetworkPlan::new(vec![4, 8, 2], OutputActivation::Identity).unwrap();
        assert_eq!(plan.param_count(), 8 * 5 + 2 * 9);
        assert_eq!(plan.input_dim(), 4);
        assert_eq!(plan.output_dim(), 2);
        assert_eq!(plan.n_layers(), 2);
    }
}
