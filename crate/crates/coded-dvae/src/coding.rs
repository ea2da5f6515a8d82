//! Bit-level code machinery: hard/soft encoding for repetition codes,
//! log-domain soft decoding, minimum-distance decoding over explicit
//! codebooks, and the XOR posterior algebra used by the hierarchical model.
//!
//! Repetition codes repeat each information bit `L` times, so the generator
//! matrix is never materialized; encode and decode walk the repeat pattern
//! positionally in O(D).

use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Probability clamp applied on entry to every [`SoftWord`]. Keeps log-domain
/// math finite and gradients bounded.
pub const PROB_EPS: f64 = 1e-7;

/// Largest message length for which exhaustive codebook enumeration (2^M
/// words) is permitted.
pub const MAX_ENUM_BITS: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CodingError {
    /// Input word length does not match what the code expects.
    LengthMismatch { expected: usize, got: usize },
    /// Word is empty.
    EmptyWord,
    /// A bit outside {0,1} was supplied.
    InvalidBit { index: usize, value: u8 },
    /// A probability outside [0,1] (or non-finite) was supplied.
    InvalidProb { index: usize },
    /// Codebook has no entries.
    EmptyCodebook,
    /// Requested enumeration beyond `MAX_ENUM_BITS` information bits.
    CapacityExceeded { info_len: usize, max: usize },
    /// Cannot draw 2^M distinct words of length D.
    ImpossibleDistinct { info_len: usize, code_len: usize },
    /// Codebook words disagree in length or repeat.
    MalformedCodebook(String),
}

impl fmt::Display for CodingError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::LengthMismatch { expected, got } => {
                write!(f, "length mismatch: expected {expected}, got {got}")
            }
            Self::EmptyWord => write!(f, "words must have positive length"),
            Self::InvalidBit { index, value } => {
                write!(f, "bit at index {index} is {value}, expected 0 or 1")
            }
            Self::InvalidProb { index } => {
                write!(f, "probability at index {index} is not a finite value in [0,1]")
            }
            Self::EmptyCodebook => write!(f, "codebook contains no words"),
            Self::CapacityExceeded { info_len, max } => {
                write!(f, "cannot enumerate 2^{info_len} codewords (limit M <= {max})")
            }
            Self::ImpossibleDistinct { info_len, code_len } => {
                write!(f, "cannot draw 2^{info_len} distinct words of {code_len} bits")
            }
            Self::MalformedCodebook(msg) => write!(f, "malformed codebook: {msg}"),
        }
    }
}

impl std::error::Error for CodingError {}

/// A hard binary word: a message `m` or a codeword `c`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitWord {
    bits: Vec<u8>,
}

impl BitWord {
    /// Construct from raw bits. Panics if `bits` is empty or contains values
    /// outside {0,1}; use [`BitWord::try_new`] for untrusted input.
    pub fn new(bits: Vec<u8>) -> Self {
        Self::try_new(bits).expect("valid bit word")
    }

    pub fn try_new(bits: Vec<u8>) -> Result<Self, CodingError> {
        if bits.is_empty() {
            return Err(CodingError::EmptyWord);
        }
        for (i, &b) in bits.iter().enumerate() {
            if b > 1 {
                return Err(CodingError::InvalidBit { index: i, value: b });
            }
        }
        Ok(Self { bits })
    }

    /// The all-zero word of the given length.
    pub fn zeros(len: usize) -> Self {
        assert!(len > 0, "words must have positive length");
        Self { bits: vec![0; len] }
    }

    /// Word whose bit `k` is bit `k` of `index`, most significant first.
    /// `index` must fit in `len` bits.
    pub fn from_index(index: usize, len: usize) -> Self {
        assert!(len > 0 && len < usize::BITS as usize && index < (1usize << len));
        let bits = (0..len).map(|k| ((index >> (len - 1 - k)) & 1) as u8).collect();
        Self { bits }
    }

    /// Inverse of [`BitWord::from_index`].
    pub fn to_index(&self) -> usize {
        self.bits.iter().fold(0usize, |acc, &b| (acc << 1) | b as usize)
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        false // length > 0 is a construction invariant
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn bit(&self, j: usize) -> u8 {
        self.bits[j]
    }

    pub fn hamming_distance(&self, other: &BitWord) -> Result<usize, CodingError> {
        if self.len() != other.len() {
            return Err(CodingError::LengthMismatch { expected: self.len(), got: other.len() });
        }
        Ok(self.bits.iter().zip(&other.bits).filter(|(a, b)| a != b).count())
    }

    /// Draw a word of i.i.d. Bernoulli(nu) bits.
    pub fn random<R: Rng>(len: usize, nu: f64, rng: &mut R) -> Self {
        assert!(len > 0);
        let bits = (0..len).map(|_| u8::from(rng.gen::<f64>() < nu)).collect();
        Self { bits }
    }
}

impl fmt::Display for BitWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.bits {
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

/// A word of per-bit marginal probabilities `q(bit = 1)`, held as clamped
/// log-probability pairs `(log q, log(1-q))` so that products of many bit
/// probabilities stay finite.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftWord {
    log_p1: Vec<f64>,
    log_p0: Vec<f64>,
}

impl SoftWord {
    /// Construct from probabilities, clamping each entry into
    /// `[PROB_EPS, 1-PROB_EPS]`. Panics on non-finite or out-of-range input;
    /// use [`SoftWord::try_from_probs`] for untrusted values.
    pub fn from_probs(probs: &[f64]) -> Self {
        Self::try_from_probs(probs).expect("valid probabilities")
    }

    pub fn try_from_probs(probs: &[f64]) -> Result<Self, CodingError> {
        if probs.is_empty() {
            return Err(CodingError::EmptyWord);
        }
        let mut log_p1 = Vec::with_capacity(probs.len());
        let mut log_p0 = Vec::with_capacity(probs.len());
        for (i, &p) in probs.iter().enumerate() {
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(CodingError::InvalidProb { index: i });
            }
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            log_p1.push(p.ln());
            log_p0.push((1.0 - p).ln());
        }
        Ok(Self { log_p1, log_p0 })
    }

    /// Construct from per-bit log-likelihood ratios `log(q/(1-q))`, staying in
    /// the log domain. The ratio is clamped so probabilities remain inside
    /// `[PROB_EPS, 1-PROB_EPS]`.
    pub fn from_llrs(llrs: &[f64]) -> Self {
        assert!(!llrs.is_empty(), "words must have positive length");
        let max_llr = ((1.0 - PROB_EPS) / PROB_EPS).ln();
        let mut log_p1 = Vec::with_capacity(llrs.len());
        let mut log_p0 = Vec::with_capacity(llrs.len());
        for &llr in llrs {
            let llr = if llr.is_nan() { 0.0 } else { llr.clamp(-max_llr, max_llr) };
            // log sigmoid(llr) and log sigmoid(-llr)
            log_p1.push(-softplus(-llr));
            log_p0.push(-softplus(llr));
        }
        Self { log_p1, log_p0 }
    }

    /// Raw log pairs, not necessarily normalized; used where only the
    /// per-position ratio matters.
    pub(crate) fn from_log_pairs_raw(log_p1: Vec<f64>, log_p0: Vec<f64>) -> Self {
        assert!(!log_p1.is_empty() && log_p1.len() == log_p0.len());
        Self { log_p1, log_p0 }
    }

    /// Degenerate probabilities for a hard word (clamped to the usual range).
    pub fn from_hard(word: &BitWord) -> Self {
        let probs: Vec<f64> =
            word.bits().iter().map(|&b| if b == 1 { 1.0 } else { 0.0 }).collect();
        Self::from_probs(&probs)
    }

    pub fn len(&self) -> usize {
        self.log_p1.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `q(bit_j = 1)`, recovered from the stored log pair.
    pub fn prob(&self, j: usize) -> f64 {
        sigmoid(self.log_p1[j] - self.log_p0[j])
    }

    pub fn probs(&self) -> Vec<f64> {
        (0..self.len()).map(|j| self.prob(j)).collect()
    }

    /// Log-likelihood ratio `log q - log(1-q)` at position `j`.
    pub fn llr(&self, j: usize) -> f64 {
        self.log_p1[j] - self.log_p0[j]
    }

    pub fn log_pair(&self, j: usize) -> (f64, f64) {
        (self.log_p1[j], self.log_p0[j])
    }
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

/// An `(M, D)` repetition code: each of the `M` information bits is repeated
/// `L` times, giving codewords of length `D = M * L` and rate `R = 1/L`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodeSpec {
    info_len: usize,
    repeat: usize,
}

impl CodeSpec {
    pub fn new(info_len: usize, repeat: usize) -> Self {
        assert!(info_len > 0 && repeat > 0, "code dimensions must be positive");
        Self { info_len, repeat }
    }

    /// Number of information bits M.
    pub fn info_len(&self) -> usize {
        self.info_len
    }

    /// Copies per information bit L.
    pub fn repeat(&self) -> usize {
        self.repeat
    }

    /// Codeword length D = M * L.
    pub fn code_len(&self) -> usize {
        self.info_len * self.repeat
    }

    /// Coding rate R = M / D = 1 / L.
    pub fn rate(&self) -> f64 {
        1.0 / self.repeat as f64
    }
}

/// Repeat each information bit `L` times: positions `L*k .. L*(k+1)` of the
/// codeword all carry bit `k` of the message.
pub fn hard_encode(code: &CodeSpec, m: &BitWord) -> Result<BitWord, CodingError> {
    if m.len() != code.info_len() {
        return Err(CodingError::LengthMismatch { expected: code.info_len(), got: m.len() });
    }
    let mut bits = Vec::with_capacity(code.code_len());
    for &b in m.bits() {
        bits.extend(std::iter::repeat(b).take(code.repeat()));
    }
    Ok(BitWord { bits })
}

/// Propagate information-bit probabilities onto the coded positions: every
/// copy of bit `k` carries `q(m_k = 1)`.
pub fn soft_encode(code: &CodeSpec, q_m: &SoftWord) -> Result<SoftWord, CodingError> {
    if q_m.len() != code.info_len() {
        return Err(CodingError::LengthMismatch { expected: code.info_len(), got: q_m.len() });
    }
    let l = code.repeat();
    let mut log_p1 = Vec::with_capacity(code.code_len());
    let mut log_p0 = Vec::with_capacity(code.code_len());
    for k in 0..q_m.len() {
        for _ in 0..l {
            log_p1.push(q_m.log_p1[k]);
            log_p0.push(q_m.log_p0[k]);
        }
    }
    Ok(SoftWord { log_p1, log_p0 })
}

/// Soft majority voting: for each information bit, form the all-ones and
/// all-zeros products over its `L` copies and renormalize. Carried out in the
/// log domain as a sum of per-copy log-likelihood ratios.
///
/// With `L = 1` this is an exact pass-through of the input word.
pub fn soft_decode(code: &CodeSpec, q_c: &SoftWord) -> Result<SoftWord, CodingError> {
    if q_c.len() != code.code_len() {
        return Err(CodingError::LengthMismatch { expected: code.code_len(), got: q_c.len() });
    }
    if code.repeat() == 1 {
        return Ok(q_c.clone());
    }
    let l = code.repeat();
    let llrs: Vec<f64> = (0..code.info_len())
        .map(|k| (0..l).map(|i| q_c.llr(k * l + i)).sum())
        .collect();
    Ok(SoftWord::from_llrs(&llrs))
}

/// Componentwise MAP decision: bit `k` is 1 iff `q_k > 0.5`. A tie at exactly
/// 0.5 resolves to 0.
pub fn map_bits(q: &SoftWord) -> BitWord {
    let bits = (0..q.len()).map(|j| u8::from(q.log_p1[j] > q.log_p0[j])).collect();
    BitWord { bits }
}

/// An explicit table of codewords, for minimum-distance decoding and
/// codeword-level inference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Codebook {
    words: Vec<BitWord>,
    index_len: usize,
}

impl Codebook {
    pub fn new(words: Vec<BitWord>, index_len: usize) -> Result<Self, CodingError> {
        if words.is_empty() {
            return Err(CodingError::EmptyCodebook);
        }
        let d = words[0].len();
        for w in &words {
            if w.len() != d {
                return Err(CodingError::MalformedCodebook(format!(
                    "word length {} != {}",
                    w.len(),
                    d
                )));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for w in &words {
            if !seen.insert(w.bits()) {
                return Err(CodingError::MalformedCodebook(format!("duplicate word {w}")));
            }
        }
        Ok(Self { words, index_len })
    }

    pub fn words(&self) -> &[BitWord] {
        &self.words
    }

    pub fn word(&self, i: usize) -> &BitWord {
        &self.words[i]
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Message length M backing this book (`len() == 2^M` for exhaustive books).
    pub fn index_len(&self) -> usize {
        self.index_len
    }

    /// Codeword length D.
    pub fn code_len(&self) -> usize {
        self.words[0].len()
    }

    /// Smallest pairwise Hamming distance in the book.
    pub fn min_pairwise_distance(&self) -> usize {
        let mut best = usize::MAX;
        for i in 0..self.words.len() {
            for j in (i + 1)..self.words.len() {
                let d = self.words[i].hamming_distance(&self.words[j]).expect("equal lengths");
                best = best.min(d);
            }
        }
        best
    }
}

/// Nearest valid codeword by Hamming distance; ties break toward the lowest
/// codeword index.
pub fn min_distance_decode(
    book: &Codebook,
    c_hard: &BitWord,
) -> Result<(usize, BitWord), CodingError> {
    if book.is_empty() {
        return Err(CodingError::EmptyCodebook);
    }
    if c_hard.len() != book.code_len() {
        return Err(CodingError::LengthMismatch { expected: book.code_len(), got: c_hard.len() });
    }
    let mut best_idx = 0;
    let mut best_dist = usize::MAX;
    for (i, w) in book.words().iter().enumerate() {
        let d = w.hamming_distance(c_hard)?;
        if d < best_dist {
            best_dist = d;
            best_idx = i;
        }
    }
    Ok((best_idx, book.word(best_idx).clone()))
}

/// Elementwise exclusive-or of two equal-length words.
pub fn xor_combine(m1: &BitWord, m2: &BitWord) -> Result<BitWord, CodingError> {
    if m1.len() != m2.len() {
        return Err(CodingError::LengthMismatch { expected: m1.len(), got: m2.len() });
    }
    let bits = m1.bits().iter().zip(m2.bits()).map(|(a, b)| a ^ b).collect();
    Ok(BitWord { bits })
}

fn soft_xor(a: &SoftWord, b: &SoftWord) -> Result<SoftWord, CodingError> {
    if a.len() != b.len() {
        return Err(CodingError::LengthMismatch { expected: a.len(), got: b.len() });
    }
    let probs: Vec<f64> = (0..a.len())
        .map(|j| {
            let pa = a.prob(j);
            let pb = b.prob(j);
            pa * (1.0 - pb) + (1.0 - pa) * pb
        })
        .collect();
    Ok(SoftWord::from_probs(&probs))
}

/// Marginal posterior of the second branch's own bits: given `q(m_12)` for the
/// combined bits and `q(m_1)` for the first branch,
/// `p_j = q(m_12=1) q(m_1=0) + q(m_12=0) q(m_1=1)`.
pub fn posterior_xor_residual(
    q_m12: &SoftWord,
    q_m1: &SoftWord,
) -> Result<SoftWord, CodingError> {
    soft_xor(q_m12, q_m1)
}

/// Recompute the combined-bit posterior from the two branch posteriors:
/// `q_j = q(m_1=1) q(m_2=0) + q(m_1=0) q(m_2=1)`.
pub fn posterior_xor_recombine(
    q_m1: &SoftWord,
    q_m2: &SoftWord,
) -> Result<SoftWord, CodingError> {
    soft_xor(q_m1, q_m2)
}

/// All `2^M` codewords of the repetition code, in message-index order
/// (message bit 0 is the most significant index bit).
pub fn enumerate_codebook(code: &CodeSpec) -> Result<Codebook, CodingError> {
    let m = code.info_len();
    if m > MAX_ENUM_BITS {
        return Err(CodingError::CapacityExceeded { info_len: m, max: MAX_ENUM_BITS });
    }
    let words = (0..(1usize << m))
        .map(|i| hard_encode(code, &BitWord::from_index(i, m)).expect("length fixed"))
        .collect();
    Codebook::new(words, m)
}

/// Draw `2^M` distinct uniform `D`-bit words; collisions are resampled.
/// Deterministic for a fixed seed.
pub fn random_codebook(info_len: usize, code_len: usize, seed: u64) -> Result<Codebook, CodingError> {
    if info_len > MAX_ENUM_BITS {
        return Err(CodingError::CapacityExceeded { info_len, max: MAX_ENUM_BITS });
    }
    if info_len > code_len {
        return Err(CodingError::ImpossibleDistinct { info_len, code_len });
    }
    let total = 1usize << info_len;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = std::collections::HashSet::new();
    let mut words = Vec::with_capacity(total);
    while words.len() < total {
        let w = BitWord::random(code_len, 0.5, &mut rng);
        if seen.insert(w.bits().to_vec()) {
            words.push(w);
        }
    }
    Codebook::new(words, info_len)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() < tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn hard_encode_repeats_each_bit() {
        let code = CodeSpec::new(3, 2);
        let c = hard_encode(&code, &BitWord::new(vec![1, 0, 1])).unwrap();
        assert_eq!(c.bits(), &[1, 1, 0, 0, 1, 1]);
    }

    #[test]
    fn hard_encode_zero_message_gives_zero_word() {
        for l in [1, 3, 7] {
            let code = CodeSpec::new(4, l);
            let c = hard_encode(&code, &BitWord::zeros(4)).unwrap();
            assert!(c.bits().iter().all(|&b| b == 0));
            assert_eq!(c.len(), 4 * l);
        }
    }

    #[test]
    fn hard_encode_single_bit() {
        let code = CodeSpec::new(1, 3);
        let c = hard_encode(&code, &BitWord::new(vec![1])).unwrap();
        assert_eq!(c.bits(), &[1, 1, 1]);
    }

    #[test]
    fn hard_encode_rejects_wrong_length() {
        let code = CodeSpec::new(3, 2);
        let err = hard_encode(&code, &BitWord::new(vec![1, 0])).unwrap_err();
        assert!(matches!(err, CodingError::LengthMismatch { expected: 3, got: 2 }));
    }

    #[test]
    fn soft_encode_replicates_probabilities() {
        let code = CodeSpec::new(3, 2);
        let q = SoftWord::from_probs(&[0.3, 0.6, 0.9]);
        let qc = soft_encode(&code, &q).unwrap();
        let want = [0.3, 0.3, 0.6, 0.6, 0.9, 0.9];
        for (j, w) in want.iter().enumerate() {
            approx(qc.prob(j), *w, 1e-12);
        }
    }

    #[test]
    fn soft_encode_uniform_is_invariant() {
        let code = CodeSpec::new(4, 5);
        let q = SoftWord::from_probs(&[0.5; 4]);
        let qc = soft_encode(&code, &q).unwrap();
        for j in 0..qc.len() {
            assert_eq!(qc.prob(j), 0.5);
        }
    }

    #[test]
    fn soft_encode_of_hard_word_matches_hard_encode() {
        let code = CodeSpec::new(3, 2);
        let m = BitWord::new(vec![1, 0, 1]);
        let qc = soft_encode(&code, &SoftWord::from_hard(&m)).unwrap();
        let c = hard_encode(&code, &m).unwrap();
        for j in 0..qc.len() {
            let want = if c.bit(j) == 1 { 1.0 - PROB_EPS } else { PROB_EPS };
            approx(qc.prob(j), want, 1e-12);
        }
    }

    #[test]
    fn soft_decode_normalized_product() {
        // copies (0.9, 0.8): 0.72 / (0.72 + 0.02)
        let code = CodeSpec::new(1, 2);
        let q = soft_decode(&code, &SoftWord::from_probs(&[0.9, 0.8])).unwrap();
        approx(q.prob(0), 0.72 / 0.74, 1e-9);
    }

    #[test]
    fn soft_decode_uninformative_copies() {
        let code = CodeSpec::new(2, 3);
        let q = soft_decode(&code, &SoftWord::from_probs(&[0.5; 6])).unwrap();
        for j in 0..2 {
            assert_eq!(q.prob(j), 0.5);
        }
    }

    #[test]
    fn soft_decode_preserves_certainty() {
        let code = CodeSpec::new(1, 2);
        let q = soft_decode(&code, &SoftWord::from_probs(&[1.0, 1.0])).unwrap();
        assert!(q.prob(0) > 1.0 - 1e-6);
    }

    #[test]
    fn soft_decode_many_confident_copies_stays_finite() {
        let code = CodeSpec::new(1, 200);
        let q = soft_decode(&code, &SoftWord::from_probs(&vec![0.999; 200])).unwrap();
        let (lp1, lp0) = q.log_pair(0);
        assert!(lp1.is_finite() && lp0.is_finite());
        approx(q.prob(0), 1.0 - PROB_EPS, 1e-9);
    }

    #[test]
    fn soft_decode_rejects_bad_length() {
        let code = CodeSpec::new(2, 3);
        let err = soft_decode(&code, &SoftWord::from_probs(&[0.5; 5])).unwrap_err();
        assert!(matches!(err, CodingError::LengthMismatch { .. }));
    }

    #[test]
    fn soft_decode_round_trips_all_messages() {
        for l in [1, 2, 3, 5] {
            let code = CodeSpec::new(3, l);
            for i in 0..8 {
                let m = BitWord::from_index(i, 3);
                let qc = soft_encode(&code, &SoftWord::from_hard(&m)).unwrap();
                let qm = soft_decode(&code, &qc).unwrap();
                assert_eq!(map_bits(&qm), m, "l={l} i={i}");
            }
        }
    }

    #[test]
    fn soft_decode_is_monotone_in_each_copy() {
        let code = CodeSpec::new(1, 3);
        let base = soft_decode(&code, &SoftWord::from_probs(&[0.4, 0.6, 0.3])).unwrap();
        let raised = soft_decode(&code, &SoftWord::from_probs(&[0.4, 0.7, 0.3])).unwrap();
        assert!(raised.prob(0) >= base.prob(0));
    }

    #[test]
    fn map_bits_thresholds_and_breaks_ties_to_zero() {
        let q = SoftWord::from_probs(&[0.9, 0.2]);
        assert_eq!(map_bits(&q).bits(), &[1, 0]);
        let tie = SoftWord::from_probs(&[0.5]);
        assert_eq!(map_bits(&tie).bits(), &[0]);
    }

    #[test]
    fn map_bits_after_product_rule() {
        let code = CodeSpec::new(1, 3);
        let q = soft_decode(&code, &SoftWord::from_probs(&[0.6, 0.6, 0.6])).unwrap();
        assert_eq!(map_bits(&q).bits(), &[1]);
    }

    #[test]
    fn map_after_soft_decode_equals_majority_vote() {
        // Hard noisy copies with channel confidence 1-p: the log-domain product
        // rule reduces to majority voting for odd L.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let code = CodeSpec::new(4, 5);
        let p = 0.23;
        for _ in 0..200 {
            let m = BitWord::random(4, 0.5, &mut rng);
            let c = hard_encode(&code, &m).unwrap();
            let received: Vec<u8> =
                c.bits().iter().map(|&b| if rng.gen::<f64>() < p { b ^ 1 } else { b }).collect();
            let q_c: Vec<f64> =
                received.iter().map(|&r| if r == 1 { 1.0 - p } else { p }).collect();
            let decoded =
                map_bits(&soft_decode(&code, &SoftWord::from_probs(&q_c)).unwrap());
            for k in 0..4 {
                let ones: usize =
                    (0..5).map(|i| received[k * 5 + i] as usize).sum();
                let majority = u8::from(ones >= 3);
                assert_eq!(decoded.bit(k), majority);
            }
        }
    }

    #[test]
    fn min_distance_decode_returns_exact_codeword() {
        let code = CodeSpec::new(3, 2);
        let book = enumerate_codebook(&code).unwrap();
        for w in book.words() {
            let (idx, decoded) = min_distance_decode(&book, w).unwrap();
            assert_eq!(&decoded, w);
            assert_eq!(book.word(idx), w);
        }
    }

    #[test]
    fn min_distance_decode_breaks_ties_by_lowest_index() {
        let code = CodeSpec::new(3, 2);
        let book = enumerate_codebook(&code).unwrap();
        // [1,0,0,0,1,1] is at distance 1 from both [0,0,0,0,1,1] (index 1)
        // and [1,1,0,0,1,1] (index 5); the lower index wins.
        let received = BitWord::new(vec![1, 0, 0, 0, 1, 1]);
        let (idx, decoded) = min_distance_decode(&book, &received).unwrap();
        assert_eq!(idx, 1);
        assert_eq!(decoded.bits(), &[0, 0, 0, 0, 1, 1]);
    }

    #[test]
    fn min_distance_decode_all_zero() {
        let code = CodeSpec::new(3, 2);
        let book = enumerate_codebook(&code).unwrap();
        let (_, decoded) = min_distance_decode(&book, &BitWord::zeros(6)).unwrap();
        assert!(decoded.bits().iter().all(|&b| b == 0));
    }

    #[test]
    fn xor_combine_table_identity_self_inverse() {
        let a = BitWord::new(vec![1, 0]);
        let b = BitWord::new(vec![1, 1]);
        assert_eq!(xor_combine(&a, &b).unwrap().bits(), &[0, 1]);
        let zero = BitWord::zeros(2);
        assert_eq!(xor_combine(&a, &zero).unwrap(), a);
        assert!(xor_combine(&a, &a).unwrap().bits().iter().all(|&x| x == 0));
    }

    #[test]
    fn xor_residual_examples() {
        // XOR of certain bits: clamped inputs 1-eps give 2 eps (1-eps) ~ 0.
        let certain = posterior_xor_residual(
            &SoftWord::from_probs(&[1.0]),
            &SoftWord::from_probs(&[1.0]),
        )
        .unwrap();
        approx(certain.prob(0), 2.0 * PROB_EPS * (1.0 - PROB_EPS), 1e-12);
        assert!(certain.prob(0) < 3.0 * PROB_EPS);

        let uniform = posterior_xor_residual(
            &SoftWord::from_probs(&[0.9]),
            &SoftWord::from_probs(&[0.5]),
        )
        .unwrap();
        approx(uniform.prob(0), 0.5, 1e-12);

        let mixed = posterior_xor_residual(
            &SoftWord::from_probs(&[0.9]),
            &SoftWord::from_probs(&[0.2]),
        )
        .unwrap();
        approx(mixed.prob(0), 0.74, 1e-9);
    }

    #[test]
    fn xor_recombine_examples() {
        let hard = posterior_xor_recombine(
            &SoftWord::from_hard(&BitWord::new(vec![1, 0])),
            &SoftWord::from_hard(&BitWord::new(vec![1, 1])),
        )
        .unwrap();
        assert_eq!(map_bits(&hard).bits(), &[0, 1]);

        let uniform = posterior_xor_recombine(
            &SoftWord::from_probs(&[0.5]),
            &SoftWord::from_probs(&[0.123]),
        )
        .unwrap();
        approx(uniform.prob(0), 0.5, 1e-12);

        let soft = posterior_xor_recombine(
            &SoftWord::from_probs(&[0.9]),
            &SoftWord::from_probs(&[0.9]),
        )
        .unwrap();
        approx(soft.prob(0), 0.18, 1e-9);
    }

    #[test]
    fn xor_algebra_is_correlation_multiplicative() {
        // chi(p) = 1 - 2p turns the soft XOR into a product, so the composed
        // residual-of-recombine shrinks toward 0.5 by chi(q1)^2. MAP decisions
        // survive the shrink exactly.
        let grid = [0.05, 0.2, 0.35, 0.5, 0.65, 0.8, 0.95];
        for &a in &grid {
            for &b in &grid {
                let q1 = SoftWord::from_probs(&[a]);
                let q2 = SoftWord::from_probs(&[b]);
                let r = posterior_xor_recombine(&q1, &q2).unwrap();
                approx(1.0 - 2.0 * r.prob(0), (1.0 - 2.0 * a) * (1.0 - 2.0 * b), 1e-9);
                let back = posterior_xor_residual(&r, &q1).unwrap();
                approx(
                    1.0 - 2.0 * back.prob(0),
                    (1.0 - 2.0 * a).powi(2) * (1.0 - 2.0 * b),
                    1e-9,
                );
                // MAP decisions survive the shrink whenever q1 is informative
                if a != 0.5 {
                    assert_eq!(map_bits(&back).bit(0), map_bits(&q2).bit(0));
                }
            }
        }
    }

    #[test]
    fn enumerate_codebook_small_codes() {
        let book = enumerate_codebook(&CodeSpec::new(1, 2)).unwrap();
        assert_eq!(book.len(), 2);
        assert_eq!(book.word(0).bits(), &[0, 0]);
        assert_eq!(book.word(1).bits(), &[1, 1]);

        let book = enumerate_codebook(&CodeSpec::new(3, 2)).unwrap();
        assert_eq!(book.len(), 8);
        assert!(book.words().iter().any(|w| w.bits() == [1, 1, 0, 0, 1, 1]));

        let book = enumerate_codebook(&CodeSpec::new(2, 1)).unwrap();
        assert_eq!(book.len(), 4);
        assert_eq!(book.min_pairwise_distance(), 1);
    }

    #[test]
    fn enumerate_codebook_rejects_large_m() {
        let err = enumerate_codebook(&CodeSpec::new(13, 1)).unwrap_err();
        assert!(matches!(err, CodingError::CapacityExceeded { .. }));
    }

    #[test]
    fn random_codebook_forced_and_deterministic() {
        let book = random_codebook(1, 1, 3).unwrap();
        assert_eq!(book.len(), 2);

        let a = random_codebook(3, 10, 7).unwrap();
        let b = random_codebook(3, 10, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 8);
        assert!(a.min_pairwise_distance() >= 1);
    }

    #[test]
    fn random_codebook_rejects_impossible() {
        let err = random_codebook(4, 3, 0).unwrap_err();
        assert!(matches!(err, CodingError::ImpossibleDistinct { .. }));
    }

    #[test]
    fn bitword_index_round_trip() {
        for i in 0..16 {
            let w = BitWord::from_index(i, 4);
            assert_eq!(w.to_index(), i);
        }
        assert_eq!(BitWord::from_index(5, 3).bits(), &[1, 0, 1]);
    }

    #[test]
    fn softword_rejects_bad_probs() {
        assert!(SoftWord::try_from_probs(&[]).is_err());
        assert!(SoftWord::try_from_probs(&[0.5, f64::NAN]).is_err());
        assert!(SoftWord::try_from_probs(&[1.5]).is_err());
        assert!(SoftWord::try_from_probs(&[-0.1]).is_err());
    }
}
