//! Model assemblies: the uncoded DVAE, the Coded-DVAE with a repetition code,
//! and the hierarchical two-branch Coded-DVAE with an XOR combination.
//!
//! All three share the same anatomy: an encoder MLP mapping data to bit
//! probabilities, a truncated-exponential smoothing of those bits into
//! `z in [0,1]^dim`, and a decoder MLP whose logistic output parameterizes a
//! per-pixel Bernoulli likelihood on intensities in [0,1]. The ELBO is the
//! reconstruction term minus the closed-form Bernoulli KL over the
//! information bits.

use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::coding::{
    hard_encode, xor_combine, BitWord, CodeSpec, CodingError, SoftWord, PROB_EPS,
};
use crate::diffcore::{
    forward_mlp_logits, DiffError, GradBuffer, NetworkPlan, OutputActivation, ParamStore, Tape,
};
use crate::smoothing::{
    log_mixture_pdf, sample_conditional, NoiseDraw, SmoothingError, SmoothingParams,
};

mod graphs;

pub use graphs::{build_elbo_graph, build_iwae_graph, ElboGraph, IwaeGraph};

#[derive(Debug, Clone, PartialEq)]
pub enum ModelError {
    Coding(CodingError),
    Smoothing(SmoothingError),
    Diff(DiffError),
    Shape { what: String },
    NonFinite { where_: String },
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Coding(e) => write!(f, "coding: {e}"),
            Self::Smoothing(e) => write!(f, "smoothing: {e}"),
            Self::Diff(e) => write!(f, "autodiff: {e}"),
            Self::Shape { what } => write!(f, "shape mismatch: {what}"),
            Self::NonFinite { where_ } => write!(f, "non-finite value in {where_}"),
        }
    }
}

impl std::error::Error for ModelError {}

impl From<CodingError> for ModelError {
    fn from(e: CodingError) -> Self {
        Self::Coding(e)
    }
}

impl From<SmoothingError> for ModelError {
    fn from(e: SmoothingError) -> Self {
        Self::Smoothing(e)
    }
}

impl From<DiffError> for ModelError {
    fn from(e: DiffError) -> Self {
        Self::Diff(e)
    }
}

/// Shared i.i.d. Bernoulli prior over information bits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorSpec {
    nu: f64,
}

impl PriorSpec {
    pub fn new(nu: f64) -> Self {
        Self { nu: nu.clamp(PROB_EPS, 1.0 - PROB_EPS) }
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn as_soft_word(&self, dim: usize) -> SoftWord {
        SoftWord::from_probs(&vec![self.nu; dim])
    }

    pub fn sample<R: Rng>(&self, len: usize, rng: &mut R) -> BitWord {
        BitWord::random(len, self.nu, rng)
    }
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self::new(0.5)
    }
}

/// Observation likelihood family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Likelihood {
    /// Per-pixel Bernoulli cross-entropy on intensities in [0,1], with the
    /// decoder's logistic output as the mean.
    #[default]
    Bernoulli,
}

fn model_plan(input: usize, hidden: &[usize], output: usize) -> Result<NetworkPlan, ModelError> {
    if hidden.is_empty() {
        return Err(ModelError::Shape {
            what: "model networks need at least one hidden layer".into(),
        });
    }
    let mut sizes = Vec::with_capacity(hidden.len() + 2);
    sizes.push(input);
    sizes.extend_from_slice(hidden);
    sizes.push(output);
    NetworkPlan::new(sizes, OutputActivation::Logistic).map_err(ModelError::from)
}

/// DVAE with `M` unprotected latent bits.
#[derive(Debug, Clone, PartialEq)]
pub struct UncodedDvae {
    pub info_len: usize,
    pub x_dim: usize,
    pub encoder: NetworkPlan,
    pub decoder: NetworkPlan,
    pub prior: PriorSpec,
    pub smoothing: SmoothingParams,
    pub likelihood: Likelihood,
}

impl UncodedDvae {
    pub fn new(
        info_len: usize,
        x_dim: usize,
        enc_hidden: &[usize],
        dec_hidden: &[usize],
        prior: PriorSpec,
        smoothing: SmoothingParams,
    ) -> Result<Self, ModelError> {
        Ok(Self {
            info_len,
            x_dim,
            encoder: model_plan(x_dim, enc_hidden, info_len)?,
            decoder: model_plan(info_len, dec_hidden, x_dim)?,
            prior,
            smoothing,
            likelihood: Likelihood::Bernoulli,
        })
    }
}

/// Coded-DVAE: information bits are protected by an `(M, D)` repetition code;
/// the encoder estimates the `D` coded-bit probabilities and inference
/// soft-decodes them back to the `M` information bits.
#[derive(Debug, Clone, PartialEq)]
pub struct CodedDvae {
    pub code: CodeSpec,
    pub x_dim: usize,
    pub encoder: NetworkPlan,
    pub decoder: NetworkPlan,
    pub prior: PriorSpec,
    pub smoothing: SmoothingParams,
    pub likelihood: Likelihood,
}

impl CodedDvae {
    pub fn new(
        code: CodeSpec,
        x_dim: usize,
        enc_hidden: &[usize],
        dec_hidden: &[usize],
        prior: PriorSpec,
        smoothing: SmoothingParams,
    ) -> Result<Self, ModelError> {
        Ok(Self {
            code,
            x_dim,
            encoder: model_plan(x_dim, enc_hidden, code.code_len())?,
            decoder: model_plan(code.code_len(), dec_hidden, x_dim)?,
            prior,
            smoothing,
            likelihood: Likelihood::Bernoulli,
        })
    }
}

/// Two-branch hierarchical Coded-DVAE. Branch 1 encodes `m_1` directly;
/// branch 2 encodes `m_1 XOR m_2`, so `m_1` is protected by both branches.
#[derive(Debug, Clone, PartialEq)]
pub struct HierCodedDvae {
    pub code1: CodeSpec,
    pub code2: CodeSpec,
    pub x_dim: usize,
    pub encoder: NetworkPlan,
    pub decoder: NetworkPlan,
    pub prior1: PriorSpec,
    pub prior2: PriorSpec,
    pub smoothing: SmoothingParams,
    pub likelihood: Likelihood,
}

impl HierCodedDvae {
    pub fn new(
        code1: CodeSpec,
        code2: CodeSpec,
        x_dim: usize,
        enc_hidden: &[usize],
        dec_hidden: &[usize],
        prior: PriorSpec,
        smoothing: SmoothingParams,
    ) -> Result<Self, ModelError> {
        if code1.info_len() != code2.info_len() {
            return Err(ModelError::Shape {
                what: format!(
                    "both branches must share M: {} vs {}",
                    code1.info_len(),
                    code2.info_len()
                ),
            });
        }
        let z_dim = code1.code_len() + code2.code_len();
        Ok(Self {
            code1,
            code2,
            x_dim,
            encoder: model_plan(x_dim, enc_hidden, z_dim)?,
            decoder: model_plan(z_dim, dec_hidden, x_dim)?,
            prior1: prior,
            prior2: prior,
            smoothing,
            likelihood: Likelihood::Bernoulli,
        })
    }
}

/// Any of the three model kinds, with a common surface for training,
/// evaluation, and generation.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Uncoded(UncodedDvae),
    Coded(CodedDvae),
    Hier(HierCodedDvae),
}

impl Model {
    pub fn x_dim(&self) -> usize {
        match self {
            Model::Uncoded(m) => m.x_dim,
            Model::Coded(m) => m.x_dim,
            Model::Hier(m) => m.x_dim,
        }
    }

    /// Dimension of `z` (and of one noise draw): `M`, `D`, or `D1 + D2`.
    pub fn noise_dim(&self) -> usize {
        match self {
            Model::Uncoded(m) => m.info_len,
            Model::Coded(m) => m.code.code_len(),
            Model::Hier(m) => m.code1.code_len() + m.code2.code_len(),
        }
    }

    /// Information bits per message word (per branch for the hierarchy).
    pub fn info_len(&self) -> usize {
        match self {
            Model::Uncoded(m) => m.info_len,
            Model::Coded(m) => m.code.info_len(),
            Model::Hier(m) => m.code1.info_len(),
        }
    }

    /// Number of message words a latent assignment carries (2 for the
    /// hierarchy, 1 otherwise).
    pub fn n_messages(&self) -> usize {
        match self {
            Model::Hier(_) => 2,
            _ => 1,
        }
    }

    pub fn smoothing(&self) -> &SmoothingParams {
        match self {
            Model::Uncoded(m) => &m.smoothing,
            Model::Coded(m) => &m.smoothing,
            Model::Hier(m) => &m.smoothing,
        }
    }

    pub fn encoder(&self) -> &NetworkPlan {
        match self {
            Model::Uncoded(m) => &m.encoder,
            Model::Coded(m) => &m.encoder,
            Model::Hier(m) => &m.encoder,
        }
    }

    pub fn decoder(&self) -> &NetworkPlan {
        match self {
            Model::Uncoded(m) => &m.decoder,
            Model::Coded(m) => &m.decoder,
            Model::Hier(m) => &m.decoder,
        }
    }

    /// Marginal mixture weights of the prior over each coordinate of `z`.
    pub fn prior_soft_word(&self) -> SoftWord {
        match self {
            Model::Uncoded(m) => m.prior.as_soft_word(m.info_len),
            Model::Coded(m) => m.prior.as_soft_word(m.code.code_len()),
            Model::Hier(m) => {
                let mut nu = vec![m.prior1.nu(); m.code1.code_len()];
                nu.extend(vec![m.prior2.nu(); m.code2.code_len()]);
                SoftWord::from_probs(&nu)
            }
        }
    }

    /// Fresh parameter store: encoder then decoder, deterministic in `seed`.
    pub fn init_params(&self, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        self.encoder()
            .init_params(&mut store, "enc", &mut rng)
            .expect("fresh store has no duplicates");
        self.decoder()
            .init_params(&mut store, "dec", &mut rng)
            .expect("fresh store has no duplicates");
        store
    }

    /// Draw the message word(s) from the prior: one word, or `(m1, m2)` for
    /// the hierarchy.
    pub fn sample_prior<R: Rng>(&self, rng: &mut R) -> Vec<BitWord> {
        match self {
            Model::Uncoded(m) => vec![m.prior.sample(m.info_len, rng)],
            Model::Coded(m) => vec![m.prior.sample(m.code.info_len(), rng)],
            Model::Hier(m) => vec![
                m.prior1.sample(m.code1.info_len(), rng),
                m.prior2.sample(m.code2.info_len(), rng),
            ],
        }
    }
}

/// Closed-form KL between a factorized Bernoulli posterior and the prior,
/// in nats.
pub fn kl_bernoulli(q: &SoftWord, prior: &PriorSpec) -> f64 {
    let nu = prior.nu();
    (0..q.len())
        .map(|j| {
            let qj = q.prob(j);
            qj * (qj / nu).ln() + (1.0 - qj) * ((1.0 - qj) / (1.0 - nu)).ln()
        })
        .sum()
}

/// `sum_j log[(1-q_j) p(z_j|0) + q_j p(z_j|1)]`: log-density of `z` under the
/// factorized smoothing mixture with weights `q` (posterior or prior).
pub fn marginal_z_logpdf(
    q: &SoftWord,
    z: &[f64],
    p: &SmoothingParams,
) -> Result<f64, ModelError> {
    if q.len() != z.len() {
        return Err(ModelError::Shape {
            what: format!("q has {} entries, z has {}", q.len(), z.len()),
        });
    }
    let mut total = 0.0;
    for j in 0..z.len() {
        total += log_mixture_pdf(q.prob(j), z[j], p)?;
    }
    Ok(total)
}

/// The marginal bit posteriors a model infers for one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct InferredPosterior {
    /// Information-bit posterior `q(m|x)`; branch 1 for the hierarchy.
    pub q_m: SoftWord,
    /// Branch-2 posterior `q(m_2|x)` (hierarchy only).
    pub q_m2: Option<SoftWord>,
    /// Marginals used for sampling `z` (soft-encoded; concatenated branches
    /// for the hierarchy).
    pub q_c: SoftWord,
}

/// ELBO value and its parts, in nats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboBreakdown {
    pub elbo: f64,
    pub recon: f64,
    pub kl: f64,
    /// Branch-2 KL (hierarchy only).
    pub kl2: Option<f64>,
}

/// Raw encoder output as clamped bit probabilities: `q(m|x)` for the uncoded
/// model, the uncoded coded-bit posterior `q^u(c|x)` otherwise.
pub fn encoder_posterior(
    model: &Model,
    store: &ParamStore,
    x: &[f64],
) -> Result<SoftWord, ModelError> {
    let mut tape = Tape::new();
    let q = graphs::encoder_probs(model, store, &mut tape, x)?;
    Ok(SoftWord::from_probs(tape.values(q)))
}

/// Full inference chain of the Coded-DVAE: soft decode the encoder output to
/// the information-bit posterior, then soft encode it back onto the coded
/// positions.
pub fn infer_coded(
    model: &CodedDvae,
    store: &ParamStore,
    x: &[f64],
) -> Result<(SoftWord, SoftWord), ModelError> {
    let wrapped = Model::Coded(model.clone());
    let post = infer_posterior(&wrapped, store, x)?;
    Ok((post.q_m, post.q_c))
}

/// Message-level posterior for any model kind.
pub fn infer_posterior(
    model: &Model,
    store: &ParamStore,
    x: &[f64],
) -> Result<InferredPosterior, ModelError> {
    let mut tape = Tape::new();
    let parts = graphs::inference_chain(model, store, &mut tape, x)?;
    Ok(InferredPosterior {
        q_m: SoftWord::from_probs(tape.values(parts.q_m)),
        q_m2: parts.q_m2.map(|v| SoftWord::from_probs(tape.values(v))),
        q_c: SoftWord::from_probs(tape.values(parts.q_c)),
    })
}

/// Single-sample ELBO estimate at fixed noise.
pub fn elbo(
    model: &Model,
    store: &ParamStore,
    x: &[f64],
    noise: &NoiseDraw,
) -> Result<ElboBreakdown, ModelError> {
    let mut tape = Tape::new();
    let g = build_elbo_graph(model, store, &mut tape, x, noise)?;
    Ok(ElboBreakdown {
        elbo: tape.scalar(g.elbo),
        recon: tape.scalar(g.recon),
        kl: tape.scalar(g.kl),
        kl2: g.kl2.map(|v| tape.scalar(v)),
    })
}

/// Two-KL ELBO of the hierarchical model.
pub fn elbo_hier(
    model: &HierCodedDvae,
    store: &ParamStore,
    x: &[f64],
    noise: &NoiseDraw,
) -> Result<ElboBreakdown, ModelError> {
    elbo(&Model::Hier(model.clone()), store, x, noise)
}

/// Importance-weighted bound over `k` independent noise draws:
/// `log (1/k) sum_i w_i` with `w = p(x|z) p(z) / q(z|x)`, stabilized through
/// log-sum-exp. Also returns the individual log-weights.
pub fn iwae_bound(
    model: &Model,
    store: &ParamStore,
    x: &[f64],
    noise_batch: &[NoiseDraw],
) -> Result<(f64, Vec<f64>), ModelError> {
    if noise_batch.is_empty() {
        return Err(ModelError::Shape { what: "iwae needs k >= 1 noise draws".into() });
    }
    let mut tape = Tape::new();
    let g = build_iwae_graph(model, store, &mut tape, x, noise_batch)?;
    let log_w = g.log_weights.iter().map(|&v| tape.scalar(v)).collect();
    Ok((tape.scalar(g.bound), log_w))
}

/// Data generated from explicit message words.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    /// Decoder mean in [0,1]^x_dim.
    pub x: Vec<f64>,
    /// The smoothed latents fed to the decoder.
    pub z: Vec<f64>,
    /// The codeword(s) the messages were encoded into (per branch).
    pub codewords: Vec<BitWord>,
}

/// Generate an observation mean from hard messages: encode, smooth each coded
/// bit through its conditional inverse CDF, and decode. The uncoded model
/// smooths the message bits directly.
pub fn generate(
    model: &Model,
    store: &ParamStore,
    messages: &[BitWord],
    noise: &NoiseDraw,
) -> Result<Generated, ModelError> {
    if messages.len() != model.n_messages() {
        return Err(ModelError::Shape {
            what: format!(
                "expected {} message words, got {}",
                model.n_messages(),
                messages.len()
            ),
        });
    }
    let smoothing = *model.smoothing();
    let (z, codewords) = match model {
        Model::Uncoded(m) => {
            if messages[0].len() != m.info_len {
                return Err(ModelError::Shape {
                    what: format!(
                        "message has {} bits, expected {}",
                        messages[0].len(),
                        m.info_len
                    ),
                });
            }
            (sample_conditional(&messages[0], noise, &smoothing)?, vec![messages[0].clone()])
        }
        Model::Coded(m) => {
            let c = hard_encode(&m.code, &messages[0])?;
            (sample_conditional(&c, noise, &smoothing)?, vec![c])
        }
        Model::Hier(m) => {
            let c1 = hard_encode(&m.code1, &messages[0])?;
            let combined = xor_combine(&messages[0], &messages[1])?;
            let c2 = hard_encode(&m.code2, &combined)?;
            if noise.len() != m.code1.code_len() + m.code2.code_len() {
                return Err(ModelError::Shape {
                    what: format!(
                        "noise has {} draws, expected {}",
                        noise.len(),
                        m.code1.code_len() + m.code2.code_len()
                    ),
                });
            }
            let rho1 = NoiseDraw::from_uniforms(noise.rho()[..m.code1.code_len()].to_vec())?;
            let rho2 = NoiseDraw::from_uniforms(noise.rho()[m.code1.code_len()..].to_vec())?;
            let mut z = sample_conditional(&c1, &rho1, &smoothing)?;
            z.extend(sample_conditional(&c2, &rho2, &smoothing)?);
            (z, vec![c1, c2])
        }
    };
    let x = decoder_mean(model, store, &z)?;
    Ok(Generated { x, z, codewords })
}

/// Decoder mean `sigma(f(z))` for an explicit latent.
pub fn decoder_mean(model: &Model, store: &ParamStore, z: &[f64]) -> Result<Vec<f64>, ModelError> {
    let mut tape = Tape::new();
    let zin = tape.constant(z);
    let logits = forward_mlp_logits(model.decoder(), store, "dec", &mut tape, zin)?;
    let mean = tape.logistic(logits);
    Ok(tape.values(mean).to_vec())
}

/// `log p(x|z)` under the Bernoulli likelihood, evaluated stably from the
/// decoder logits.
pub fn decoder_loglik(
    model: &Model,
    store: &ParamStore,
    z: &[f64],
    x: &[f64],
) -> Result<f64, ModelError> {
    check_x(model, x)?;
    let mut tape = Tape::new();
    let zin = tape.constant(z);
    let logits = forward_mlp_logits(model.decoder(), store, "dec", &mut tape, zin)?;
    let ll = tape.bernoulli_loglik(logits, x);
    Ok(tape.scalar(ll))
}

/// Reconstruction of one observation plus the inferred posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub x_prime: Vec<f64>,
    pub q_m: SoftWord,
    pub q_m2: Option<SoftWord>,
}

/// Run the full inference chain, sample `z` from the posterior marginals at
/// the given noise, and decode.
pub fn reconstruct(
    model: &Model,
    store: &ParamStore,
    x: &[f64],
    noise: &NoiseDraw,
) -> Result<Reconstruction, ModelError> {
    let mut tape = Tape::new();
    let g = build_elbo_graph(model, store, &mut tape, x, noise)?;
    let mean = tape.logistic(g.x_logits);
    Ok(Reconstruction {
        x_prime: tape.values(mean).to_vec(),
        q_m: SoftWord::from_probs(tape.values(g.q_m)),
        q_m2: g.q_m2.map(|v| SoftWord::from_probs(tape.values(v))),
    })
}

/// Single-sample negated-ELBO gradient for every parameter; shared by the
/// training loops and the gradient-fidelity checks.
pub fn elbo_gradients(
    model: &Model,
    store: &ParamStore,
    x: &[f64],
    noise: &NoiseDraw,
) -> Result<(ElboBreakdown, GradBuffer), ModelError> {
    let mut tape = Tape::new();
    let g = build_elbo_graph(model, store, &mut tape, x, noise)?;
    let neg = tape.scale(g.elbo, -1.0);
    let breakdown = ElboBreakdown {
        elbo: tape.scalar(g.elbo),
        recon: tape.scalar(g.recon),
        kl: tape.scalar(g.kl),
        kl2: g.kl2.map(|v| tape.scalar(v)),
    };
    let grads = tape.backward(neg, store.flat_len())?;
    Ok((breakdown, grads))
}

/// Negated-IWAE gradient over `k` draws.
pub fn iwae_gradients(
    model: &Model,
    store: &ParamStore,
    x: &[f64],
    noise_batch: &[NoiseDraw],
) -> Result<(f64, GradBuffer), ModelError> {
    let mut tape = Tape::new();
    let g = build_iwae_graph(model, store, &mut tape, x, noise_batch)?;
    let neg = tape.scale(g.bound, -1.0);
    let bound = tape.scalar(g.bound);
    let grads = tape.backward(neg, store.flat_len())?;
    Ok((bound, grads))
}

pub(crate) fn check_x(model: &Model, x: &[f64]) -> Result<(), ModelError> {
    if x.len() != model.x_dim() {
        return Err(ModelError::Shape {
            what: format!("x has {} values, model expects {}", x.len(), model.x_dim()),
        });
    }
    Ok(())
}

pub(crate) fn check_noise(model: &Model, noise: &NoiseDraw) -> Result<(), ModelError> {
    if noise.len() != model.noise_dim() {
        return Err(ModelError::Shape {
            what: format!("noise has {} draws, model expects {}", noise.len(), model.noise_dim()),
        });
    }
    Ok(())
}
