//! Tape graph builders shared by evaluation and training.

use crate::coding::PROB_EPS;
use crate::diffcore::{forward_mlp_logits, ParamStore, Tape, Var};
use crate::smoothing::NoiseDraw;

use super::{check_noise, check_x, Model, ModelError};

/// Vars of one single-sample ELBO recording.
pub struct ElboGraph {
    pub elbo: Var,
    pub recon: Var,
    pub kl: Var,
    pub kl2: Option<Var>,
    /// Information-bit posterior (branch 1 for the hierarchy).
    pub q_m: Var,
    /// Branch-2 posterior (hierarchy only).
    pub q_m2: Option<Var>,
    /// Marginals the sampler uses, aligned with `z`.
    pub q_c: Var,
    pub z: Var,
    pub x_logits: Var,
}

/// Vars of one k-sample importance-weighted recording.
pub struct IwaeGraph {
    pub bound: Var,
    pub log_weights: Vec<Var>,
}

pub(super) struct InferenceVars {
    pub q_m: Var,
    pub q_m2: Option<Var>,
    pub q_c: Var,
}

/// Encoder forward pass to clamped bit probabilities.
pub(super) fn encoder_probs(
    model: &Model,
    store: &ParamStore,
    tape: &mut Tape,
    x: &[f64],
) -> Result<Var, ModelError> {
    check_x(model, x)?;
    let xin = tape.constant(x);
    let logits = forward_mlp_logits(model.encoder(), store, "enc", tape, xin)?;
    let probs = tape.logistic(logits);
    Ok(tape.clamp_probs(probs, PROB_EPS, 1.0 - PROB_EPS))
}

/// Posterior chain from the encoder output to the sampling marginals.
pub(super) fn inference_chain(
    model: &Model,
    store: &ParamStore,
    tape: &mut Tape,
    x: &[f64],
) -> Result<InferenceVars, ModelError> {
    let q_enc = encoder_probs(model, store, tape, x)?;
    Ok(match model {
        Model::Uncoded(_) => InferenceVars { q_m: q_enc, q_m2: None, q_c: q_enc },
        Model::Coded(m) => {
            let l = m.code.repeat();
            let q_m = tape.soft_decode(q_enc, l);
            let q_c = tape.repeat(q_m, l);
            InferenceVars { q_m, q_m2: None, q_c }
        }
        Model::Hier(m) => {
            let (d1, d2) = (m.code1.code_len(), m.code2.code_len());
            let q_u1 = tape.slice(q_enc, 0, d1);
            let q_u2 = tape.slice(q_enc, d1, d2);
            let q_m1 = tape.soft_decode(q_u1, m.code1.repeat());
            let q_m12 = tape.soft_decode(q_u2, m.code2.repeat());
            // branch-2 bits from the decoded combination and branch 1
            let q_m2 = tape.xor_mix(q_m12, q_m1);
            // recombined posterior for the combination, used for sampling
            let q_m12_rec = tape.xor_mix(q_m1, q_m2);
            let q_c1 = tape.repeat(q_m1, m.code1.repeat());
            let q_c2 = tape.repeat(q_m12_rec, m.code2.repeat());
            let q_c = tape.concat(q_c1, q_c2);
            InferenceVars { q_m: q_m1, q_m2: Some(q_m2), q_c }
        }
    })
}

/// Record the single-sample ELBO: inference chain, reparameterized `z`,
/// decoder likelihood, and the closed-form KL over information bits.
pub fn build_elbo_graph(
    model: &Model,
    store: &ParamStore,
    tape: &mut Tape,
    x: &[f64],
    noise: &NoiseDraw,
) -> Result<ElboGraph, ModelError> {
    check_noise(model, noise)?;
    let inf = inference_chain(model, store, tape, x)?;
    let smoothing = *model.smoothing();
    let z = tape.mixture_icdf(inf.q_c, noise.rho(), smoothing);
    let x_logits = forward_mlp_logits(model.decoder(), store, "dec", tape, z)?;
    let recon = tape.bernoulli_loglik(x_logits, x);

    let (elbo, kl, kl2) = match model {
        Model::Uncoded(m) => {
            let kl = tape.kl_bernoulli(inf.q_m, m.prior.nu());
            (tape.sub(recon, kl), kl, None)
        }
        Model::Coded(m) => {
            let kl = tape.kl_bernoulli(inf.q_m, m.prior.nu());
            (tape.sub(recon, kl), kl, None)
        }
        Model::Hier(m) => {
            let kl1 = tape.kl_bernoulli(inf.q_m, m.prior1.nu());
            let kl2 = tape.kl_bernoulli(
                inf.q_m2.expect("hierarchy always has a second branch"),
                m.prior2.nu(),
            );
            let partial = tape.sub(recon, kl1);
            (tape.sub(partial, kl2), kl1, Some(kl2))
        }
    };

    Ok(ElboGraph {
        elbo,
        recon,
        kl,
        kl2,
        q_m: inf.q_m,
        q_m2: inf.q_m2,
        q_c: inf.q_c,
        z,
        x_logits,
    })
}

/// Record the k-sample importance-weighted bound. The encoder runs once; each
/// draw contributes `log w_i = log p(x|z_i) + log p(z_i) - log q(z_i|x)` with
/// both densities taken as factorized smoothing mixtures.
pub fn build_iwae_graph(
    model: &Model,
    store: &ParamStore,
    tape: &mut Tape,
    x: &[f64],
    noise_batch: &[NoiseDraw],
) -> Result<IwaeGraph, ModelError> {
    let inf = inference_chain(model, store, tape, x)?;
    let smoothing = *model.smoothing();
    let prior = model.prior_soft_word();
    let prior_probs = prior.probs();
    let prior_node = tape.constant(&prior_probs);

    let mut log_weights = Vec::with_capacity(noise_batch.len());
    for noise in noise_batch {
        check_noise(model, noise)?;
        let z = tape.mixture_icdf(inf.q_c, noise.rho(), smoothing);
        let x_logits = forward_mlp_logits(model.decoder(), store, "dec", tape, z)?;
        let recon = tape.bernoulli_loglik(x_logits, x);
        let log_p_terms = tape.mixture_log_pdf(prior_node, z, smoothing);
        let log_p = tape.sum(log_p_terms);
        let log_q_terms = tape.mixture_log_pdf(inf.q_c, z, smoothing);
        let log_q = tape.sum(log_q_terms);
        let num = tape.add(recon, log_p);
        log_weights.push(tape.sub(num, log_q));
    }
    let bound = tape.log_mean_exp(&log_weights);
    Ok(IwaeGraph { bound, log_weights })
}
