//! Reverse-mode tape over dense `f64` vectors.
//!
//! Every operation computes its forward values at insertion time and records
//! enough structure for the backward sweep. A tape is single-consumer: one
//! backward pass per recording.

use crate::coding::PROB_EPS;
use crate::smoothing::{conditional_pdf, mixture_inverse_cdf, SmoothingParams};

use super::params::{GradBuffer, ParamStore};
use super::DiffError;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Const,
    Param { offset: usize },
    Affine { w: Var, b: Var, x: Var, rows: usize, cols: usize },
    LeakyRelu { x: Var, slope: f64 },
    Logistic { x: Var },
    ClampProbs { x: Var, lo: f64, hi: f64 },
    SoftDecode { x: Var, repeat: usize },
    Repeat { x: Var, copies: usize },
    MixtureIcdf { q: Var, rho: Vec<f64>, params: SmoothingParams },
    MixtureLogPdf { q: Var, z: Var, params: SmoothingParams },
    BernoulliLogLik { logits: Var, target: Vec<f64> },
    KlBernoulli { q: Var, nu: f64 },
    XorMix { a: Var, b: Var },
    Concat { a: Var, b: Var },
    Slice { x: Var, start: usize },
    Sum { x: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, k: f64 },
    AddConst { x: Var, k: f64 },
    Log { x: Var },
    Exp { x: Var },
    BookLogScores { probs: Var, words: Vec<Vec<u8>> },
    LogSoftmax { x: Var },
    WeightedSum { x: Var, weights: Vec<f64> },
    LogMeanExp { xs: Vec<Var> },
}

struct Node {
    op: Op,
    values: Vec<f64>,
}

/// Recorded forward computation with reverse-mode gradient accumulation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    adjoints: Vec<Vec<f64>>,
    consumed: bool,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, values: Vec<f64>) -> Var {
        self.nodes.push(Node { op, values });
        Var(self.nodes.len() - 1)
    }

    pub fn values(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].values
    }

    /// Value of a scalar (length-1) node.
    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.nodes[v.0].values.len(), 1);
        self.nodes[v.0].values[0]
    }

    pub fn constant(&mut self, values: &[f64]) -> Var {
        self.push(Op::Const, values.to_vec())
    }

    /// Leaf bound to a named entry of `store`; gradients accumulate into the
    /// store's flat layout.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var, DiffError> {
        let entry = store.entry(name)?;
        Ok(self.push(Op::Param { offset: entry.offset() }, entry.values().to_vec()))
    }

    /// `y = W x + b` with `W` given flat in row-major order.
    pub fn affine(&mut self, w: Var, b: Var, x: Var, rows: usize, cols: usize) -> Var {
        assert_eq!(self.nodes[w.0].values.len(), rows * cols, "weight shape");
        assert_eq!(self.nodes[b.0].values.len(), rows, "bias shape");
        assert_eq!(self.nodes[x.0].values.len(), cols, "input shape");
        let mut out = self.nodes[b.0].values.clone();
        {
            let wv = &self.nodes[w.0].values;
            let xv = &self.nodes[x.0].values;
            for r in 0..rows {
                let row = &wv[r * cols..(r + 1) * cols];
                out[r] += row.iter().zip(xv).map(|(wi, xi)| wi * xi).sum::<f64>();
            }
        }
        self.push(Op::Affine { w, b, x, rows, cols }, out)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let out = self.nodes[x.0].values.iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect();
        self.push(Op::LeakyRelu { x, slope }, out)
    }

    pub fn logistic(&mut self, x: Var) -> Var {
        let out = self.nodes[x.0].values.iter().map(|&v| sigmoid(v)).collect();
        self.push(Op::Logistic { x }, out)
    }

    /// Clamp into `[lo, hi]`; the gradient passes through strictly interior
    /// positions and is zero at clamped ones.
    pub fn clamp_probs(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let out = self.nodes[x.0].values.iter().map(|&v| v.clamp(lo, hi)).collect();
        self.push(Op::ClampProbs { x, lo, hi }, out)
    }

    /// Log-domain soft decode of repetition-code bit probabilities: per group
    /// of `repeat` copies, sum log-likelihood ratios and squash. Exact
    /// pass-through when `repeat == 1`.
    pub fn soft_decode(&mut self, x: Var, repeat: usize) -> Var {
        let xv = &self.nodes[x.0].values;
        assert!(repeat >= 1 && xv.len() % repeat == 0, "coded length divisible by repeat");
        let out: Vec<f64> = if repeat == 1 {
            xv.clone()
        } else {
            xv.chunks(repeat)
                .map(|chunk| {
                    let llr: f64 = chunk.iter().map(|&q| q.ln() - (1.0 - q).ln()).sum();
                    sigmoid(llr).clamp(PROB_EPS, 1.0 - PROB_EPS)
                })
                .collect()
        };
        self.push(Op::SoftDecode { x, repeat }, out)
    }

    /// Soft encode for repetition codes: each probability is repeated
    /// `copies` times. Exact pass-through when `copies == 1`.
    pub fn repeat(&mut self, x: Var, copies: usize) -> Var {
        assert!(copies >= 1);
        let out: Vec<f64> = if copies == 1 {
            self.nodes[x.0].values.clone()
        } else {
            self.nodes[x.0]
                .values
                .iter()
                .flat_map(|&v| std::iter::repeat(v).take(copies))
                .collect()
        };
        self.push(Op::Repeat { x, copies }, out)
    }

    /// Elementwise mixture inverse CDF `z_j = F^{-1}(rho_j; q_j)`. The
    /// adjoint uses the implicit-function form
    /// `dz/dq = (F(z|0) - F(z|1)) / pdf_mix(z)`.
    pub fn mixture_icdf(&mut self, q: Var, rho: &[f64], params: SmoothingParams) -> Var {
        let qv = &self.nodes[q.0].values;
        assert_eq!(qv.len(), rho.len(), "noise dimension");
        let out = qv
            .iter()
            .zip(rho)
            .map(|(&qj, &rj)| mixture_inverse_cdf(qj, rj, &params).expect("valid draw"))
            .collect();
        self.push(Op::MixtureIcdf { q, rho: rho.to_vec(), params }, out)
    }

    /// Per-coordinate log mixture density `log((1-q) p(z|0) + q p(z|1))`.
    pub fn mixture_log_pdf(&mut self, q: Var, z: Var, params: SmoothingParams) -> Var {
        let qv = &self.nodes[q.0].values;
        let zv = &self.nodes[z.0].values;
        assert_eq!(qv.len(), zv.len(), "dimension");
        let out = qv
            .iter()
            .zip(zv)
            .map(|(&qj, &zj)| {
                let p0 = conditional_pdf(zj, 0, &params).expect("z in range");
                let p1 = conditional_pdf(zj, 1, &params).expect("z in range");
                ((1.0 - qj) * p0 + qj * p1).ln()
            })
            .collect();
        self.push(Op::MixtureLogPdf { q, z, params }, out)
    }

    /// `sum_j [t_j l_j - softplus(l_j)]`: Bernoulli log-likelihood of targets
    /// `t` under logits `l`, as a scalar node.
    pub fn bernoulli_loglik(&mut self, logits: Var, target: &[f64]) -> Var {
        let lv = &self.nodes[logits.0].values;
        assert_eq!(lv.len(), target.len(), "target dimension");
        let total: f64 = lv.iter().zip(target).map(|(&l, &t)| t * l - softplus(l)).sum();
        self.push(Op::BernoulliLogLik { logits, target: target.to_vec() }, vec![total])
    }

    /// Closed-form KL between factorized Bernoullis with probabilities `q`
    /// and the shared prior `nu`, as a scalar node.
    pub fn kl_bernoulli(&mut self, q: Var, nu: f64) -> Var {
        let total: f64 = self.nodes[q.0]
            .values
            .iter()
            .map(|&qj| qj * (qj / nu).ln() + (1.0 - qj) * ((1.0 - qj) / (1.0 - nu)).ln())
            .sum();
        self.push(Op::KlBernoulli { q, nu }, vec![total])
    }

    /// Soft XOR `a (1-b) + (1-a) b`, elementwise.
    pub fn xor_mix(&mut self, a: Var, b: Var) -> Var {
        let av = &self.nodes[a.0].values;
        let bv = &self.nodes[b.0].values;
        assert_eq!(av.len(), bv.len(), "operand lengths");
        let out = av.iter().zip(bv).map(|(&x, &y)| x + y - 2.0 * x * y).collect();
        self.push(Op::XorMix { a, b }, out)
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.nodes[a.0].values.clone();
        out.extend_from_slice(&self.nodes[b.0].values);
        self.push(Op::Concat { a, b }, out)
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let out = self.nodes[x.0].values[start..start + len].to_vec();
        self.push(Op::Slice { x, start }, out)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.nodes[x.0].values.iter().sum();
        self.push(Op::Sum { x }, vec![total])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip(a, b, |x, y| x + y);
        self.push(Op::Add { a, b }, out)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip(a, b, |x, y| x - y);
        self.push(Op::Sub { a, b }, out)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip(a, b, |x, y| x * y);
        self.push(Op::Mul { a, b }, out)
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let av = &self.nodes[a.0].values;
        let bv = &self.nodes[b.0].values;
        assert_eq!(av.len(), bv.len(), "operand lengths");
        av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect()
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let out = self.nodes[x.0].values.iter().map(|&v| k * v).collect();
        self.push(Op::Scale { x, k }, out)
    }

    pub fn add_const(&mut self, x: Var, k: f64) -> Var {
        let out = self.nodes[x.0].values.iter().map(|&v| v + k).collect();
        self.push(Op::AddConst { x, k }, out)
    }

    pub fn log(&mut self, x: Var) -> Var {
        let out = self.nodes[x.0].values.iter().map(|&v| v.ln()).collect();
        self.push(Op::Log { x }, out)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.nodes[x.0].values.iter().map(|&v| v.exp()).collect();
        self.push(Op::Exp { x }, out)
    }

    /// Per-codeword Bernoulli log scores: entry `i` is
    /// `sum_j [c_ij log g_j + (1 - c_ij) log(1 - g_j)]` for codeword `c_i`.
    pub fn book_log_scores(&mut self, probs: Var, words: &[Vec<u8>]) -> Var {
        let gv = &self.nodes[probs.0].values;
        let out = words
            .iter()
            .map(|w| {
                assert_eq!(w.len(), gv.len(), "codeword length");
                w.iter()
                    .zip(gv)
                    .map(|(&c, &g)| if c == 1 { g.ln() } else { (1.0 - g).ln() })
                    .sum()
            })
            .collect();
        self.push(Op::BookLogScores { probs, words: words.to_vec() }, out)
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let xv = &self.nodes[x.0].values;
        let lse = log_sum_exp(xv);
        let out = xv.iter().map(|&v| v - lse).collect();
        self.push(Op::LogSoftmax { x }, out)
    }

    /// `sum_i w_i x_i` with constant weights, as a scalar node.
    pub fn weighted_sum(&mut self, x: Var, weights: &[f64]) -> Var {
        let xv = &self.nodes[x.0].values;
        assert_eq!(xv.len(), weights.len(), "weight length");
        let total = xv.iter().zip(weights).map(|(&v, &w)| v * w).sum();
        self.push(Op::WeightedSum { x, weights: weights.to_vec() }, vec![total])
    }

    /// `log((1/k) sum_i exp(x_i))` over scalar nodes, as a scalar node.
    pub fn log_mean_exp(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty());
        let vals: Vec<f64> = xs
            .iter()
            .map(|v| {
                debug_assert_eq!(self.nodes[v.0].values.len(), 1);
                self.nodes[v.0].values[0]
            })
            .collect();
        let total = log_sum_exp(&vals) - (vals.len() as f64).ln();
        self.push(Op::LogMeanExp { xs: xs.to_vec() }, vec![total])
    }

    /// Reverse sweep from the scalar `root`. Returns parameter gradients in
    /// the flat layout of the store the `param` leaves were created from.
    /// Input/intermediate adjoints remain queryable via [`Tape::adjoint`].
    pub fn backward(&mut self, root: Var, flat_len: usize) -> Result<GradBuffer, DiffError> {
        if self.consumed {
            return Err(DiffError::DoubleBackward);
        }
        self.consumed = true;
        if self.nodes[root.0].values.len() != 1 {
            return Err(DiffError::NotScalar { len: self.nodes[root.0].values.len() });
        }

        let mut adj: Vec<Vec<f64>> =
            self.nodes.iter().map(|n| vec![0.0; n.values.len()]).collect();
        adj[root.0][0] = 1.0;
        let mut grads = GradBuffer::zeros(flat_len);

        for i in (0..self.nodes.len()).rev() {
            let seed = std::mem::take(&mut adj[i]);
            if seed.iter().all(|&s| s == 0.0) {
                adj[i] = seed;
                continue;
            }
            match &self.nodes[i].op {
                Op::Const => {}
                Op::Param { offset } => grads.accumulate(*offset, &seed),
                Op::Affine { w, b, x, rows, cols } => {
                    let xv = self.nodes[x.0].values.clone();
                    let wv = self.nodes[w.0].values.clone();
                    for r in 0..*rows {
                        adj[b.0][r] += seed[r];
                        for c in 0..*cols {
                            adj[w.0][r * cols + c] += seed[r] * xv[c];
                            adj[x.0][c] += seed[r] * wv[r * cols + c];
                        }
                    }
                }
                Op::LeakyRelu { x, slope } => {
                    for (j, &s) in seed.iter().enumerate() {
                        let xin = self.nodes[x.0].values[j];
                        adj[x.0][j] += if xin > 0.0 { s } else { slope * s };
                    }
                }
                Op::Logistic { x } => {
                    for (j, &s) in seed.iter().enumerate() {
                        let y = self.nodes[i].values[j];
                        adj[x.0][j] += s * y * (1.0 - y);
                    }
                }
                Op::ClampProbs { x, lo, hi } => {
                    for (j, &s) in seed.iter().enumerate() {
                        let xin = self.nodes[x.0].values[j];
                        if xin > *lo && xin < *hi {
                            adj[x.0][j] += s;
                        }
                    }
                }
                Op::SoftDecode { x, repeat } => {
                    if *repeat == 1 {
                        for (j, &s) in seed.iter().enumerate() {
                            adj[x.0][j] += s;
                        }
                    } else {
                        for (k, &s) in seed.iter().enumerate() {
                            let qm = self.nodes[i].values[k];
                            let gain = s * qm * (1.0 - qm);
                            for r in 0..*repeat {
                                let j = k * repeat + r;
                                let qc = self.nodes[x.0].values[j];
                                adj[x.0][j] += gain / (qc * (1.0 - qc));
                            }
                        }
                    }
                }
                Op::Repeat { x, copies } => {
                    for (j, &s) in seed.iter().enumerate() {
                        adj[x.0][j / copies] += s;
                    }
                }
                Op::MixtureIcdf { q, rho: _, params } => {
                    for (j, &s) in seed.iter().enumerate() {
                        let qj = self.nodes[q.0].values[j];
                        let zj = self.nodes[i].values[j];
                        let dq = crate::smoothing::mixture_icdf_dq(qj, zj, params)
                            .expect("z in range");
                        adj[q.0][j] += s * dq;
                    }
                }
                Op::MixtureLogPdf { q, z, params } => {
                    for (j, &s) in seed.iter().enumerate() {
                        let qj = self.nodes[q.0].values[j];
                        let zj = self.nodes[z.0].values[j];
                        let p0 = conditional_pdf(zj, 0, params).expect("z in range");
                        let p1 = conditional_pdf(zj, 1, params).expect("z in range");
                        let mix = (1.0 - qj) * p0 + qj * p1;
                        adj[q.0][j] += s * (p1 - p0) / mix;
                        adj[z.0][j] += s * params.beta() * (qj * p1 - (1.0 - qj) * p0) / mix;
                    }
                }
                Op::BernoulliLogLik { logits, target } => {
                    let s = seed[0];
                    for (j, &t) in target.iter().enumerate() {
                        let l = self.nodes[logits.0].values[j];
                        adj[logits.0][j] += s * (t - sigmoid(l));
                    }
                }
                Op::KlBernoulli { q, nu } => {
                    let s = seed[0];
                    let prior_logit = (nu / (1.0 - nu)).ln();
                    for j in 0..self.nodes[q.0].values.len() {
                        let qj = self.nodes[q.0].values[j];
                        adj[q.0][j] += s * ((qj / (1.0 - qj)).ln() - prior_logit);
                    }
                }
                Op::XorMix { a, b } => {
                    for (j, &s) in seed.iter().enumerate() {
                        let av = self.nodes[a.0].values[j];
                        let bv = self.nodes[b.0].values[j];
                        adj[a.0][j] += s * (1.0 - 2.0 * bv);
                        adj[b.0][j] += s * (1.0 - 2.0 * av);
                    }
                }
                Op::Concat { a, b } => {
                    let la = self.nodes[a.0].values.len();
                    for (j, &s) in seed.iter().enumerate() {
                        if j < la {
                            adj[a.0][j] += s;
                        } else {
                            adj[b.0][j - la] += s;
                        }
                    }
                }
                Op::Slice { x, start } => {
                    for (j, &s) in seed.iter().enumerate() {
                        adj[x.0][start + j] += s;
                    }
                }
                Op::Sum { x } => {
                    let s = seed[0];
                    for slot in adj[x.0].iter_mut() {
                        *slot += s;
                    }
                }
                Op::Add { a, b } => {
                    for (j, &s) in seed.iter().enumerate() {
                        adj[a.0][j] += s;
                        adj[b.0][j] += s;
                    }
                }
                Op::Sub { a, b } => {
                    for (j, &s) in seed.iter().enumerate() {
                        adj[a.0][j] += s;
                        adj[b.0][j] -= s;
                    }
                }
                Op::Mul { a, b } => {
                    for (j, &s) in seed.iter().enumerate() {
                        let av = self.nodes[a.0].values[j];
                        let bv = self.nodes[b.0].values[j];
                        adj[a.0][j] += s * bv;
                        adj[b.0][j] += s * av;
                    }
                }
                Op::Scale { x, k } => {
                    for (j, &s) in seed.iter().enumerate() {
                        adj[x.0][j] += k * s;
                    }
                }
                Op::AddConst { x, .. } => {
                    for (j, &s) in seed.iter().enumerate() {
                        adj[x.0][j] += s;
                    }
                }
                Op::Log { x } => {
                    for (j, &s) in seed.iter().enumerate() {
                        adj[x.0][j] += s / self.nodes[x.0].values[j];
                    }
                }
                Op::Exp { x } => {
                    for (j, &s) in seed.iter().enumerate() {
                        adj[x.0][j] += s * self.nodes[i].values[j];
                    }
                }
                Op::BookLogScores { probs, words } => {
                    for (wi, &s) in seed.iter().enumerate() {
                        if s == 0.0 {
                            continue;
                        }
                        for (j, &c) in words[wi].iter().enumerate() {
                            let g = self.nodes[probs.0].values[j];
                            adj[probs.0][j] +=
                                s * if c == 1 { 1.0 / g } else { -1.0 / (1.0 - g) };
                        }
                    }
                }
                Op::LogSoftmax { x } => {
                    let total: f64 = seed.iter().sum();
                    for (j, &s) in seed.iter().enumerate() {
                        let softmax_j = self.nodes[i].values[j].exp();
                        adj[x.0][j] += s - softmax_j * total;
                    }
                }
                Op::WeightedSum { x, weights } => {
                    let s = seed[0];
                    for (j, &w) in weights.iter().enumerate() {
                        adj[x.0][j] += s * w;
                    }
                }
                Op::LogMeanExp { xs } => {
                    let s = seed[0];
                    let vals: Vec<f64> = xs.iter().map(|v| self.nodes[v.0].values[0]).collect();
                    let lse = log_sum_exp(&vals);
                    for (v, &xv) in xs.iter().zip(&vals) {
                        adj[v.0][0] += s * (xv - lse).exp();
                    }
                }
            }
            adj[i] = seed;
        }

        if !grads.all_finite() {
            return Err(DiffError::NonFinite { where_: "parameter gradients".into() });
        }
        self.adjoints = adj;
        Ok(grads)
    }

    /// Adjoint (gradient of the backward root) with respect to a node's
    /// values; available after [`Tape::backward`].
    pub fn adjoint(&self, v: Var) -> &[f64] {
        assert!(self.consumed, "adjoint requires a completed backward pass");
        &self.adjoints[v.0]
    }
}
