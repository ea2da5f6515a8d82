//! Discrete variational autoencoders whose binary latent messages are
//! protected by error-correcting codes.
//!
//! The crate provides:
//!
//! - [`coding`]: repetition-code encode/decode (hard and soft), explicit
//!   codebooks, minimum-distance decoding, and the XOR posterior algebra for
//!   the hierarchical model;
//! - [`smoothing`]: truncated-exponential relaxations of binary latents with
//!   exact conditional and mixture inverse CDFs;
//! - [`diffcore`]: a small reverse-mode tape over dense vectors, multilayer
//!   perceptrons, and a finite-difference gradient verifier;
//! - [`models`]: the uncoded, coded, and hierarchical model assemblies with
//!   ELBO, closed-form KL, marginal latent densities, importance-weighted
//!   bounds, generation, and reconstruction;
//! - [`codeword_vi`]: categorical inference over explicit codebooks with a
//!   REINFORCE leave-one-out gradient estimator;
//! - [`training`]: Adam and the three training loops with seeded, reproducible
//!   logging;
//! - [`diagnostics`]: bit/word error rates, PSNR, posterior entropy,
//!   importance-sampled log-likelihood, and the accuracy-gap bound harness;
//! - [`data_io`]: IDX image files, a synthetic ground-truth dataset generator,
//!   and deterministic batching;
//! - [`checkpoint`]: a versioned binary dump of model hyperparameters and
//!   named parameter arrays;
//! - [`config`] and [`cli`]: the key=value run configuration format and the
//!   command-line entry points built on it.

pub mod checkpoint;
pub mod cli;
pub mod coding;
pub mod codeword_vi;
pub mod config;
pub mod data_io;
pub mod diagnostics;
pub mod diffcore;
pub mod models;
pub mod smoothing;
pub mod training;

#[cfg(test)]
pub(crate) mod testutil {
    /// Composite Simpson quadrature with `n` (even) panels.
    pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
        assert!(n >= 2 && n % 2 == 0);
        let h = (b - a) / n as f64;
        let mut acc = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(a + i as f64 * h);
        }
        acc * h / 3.0
    }

    /// Sample mean and standard error.
    pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    }
}
