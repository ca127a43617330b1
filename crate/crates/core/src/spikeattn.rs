//! Dot-product softmax attention next to its SDM-style counterpart: cosine
//! similarity against every key with hard top-k winner selection.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::codes::cosine;
use crate::error::{Error, Result};
use crate::matrix::{dot, l2_norm, Matrix};
use crate::stats::argsort_desc;

#[derive(Debug, Clone)]
pub struct AttentionInputs {
    queries: Matrix,
    keys: Matrix,
    values: Matrix,
}

impl AttentionInputs {
    pub fn new(queries: Matrix, keys: Matrix, values: Matrix) -> Result<Self> {
        if keys.rows() == 0 {
            return Err(Error::Parameter("attention needs at least one key".into()));
        }
        if queries.cols() != keys.cols() {
            return Err(Error::Dimension {
                op: "AttentionInputs::new",
                expected: keys.cols(),
                got: queries.cols(),
            });
        }
        if values.rows() != keys.rows() {
            return Err(Error::Dimension {
                op: "AttentionInputs::new",
                expected: keys.rows(),
                got: values.rows(),
            });
        }
        Ok(Self { queries, keys, values })
    }

    pub fn queries(&self) -> &Matrix {
        &self.queries
    }

    pub fn keys(&self) -> &Matrix {
        &self.keys
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    fn combine(&self, weights: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.values.cols()];
        for (k, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(self.values.row(k)) {
                *o += w * v;
            }
        }
        out
    }
}

/// Numerically stable softmax of one row.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|x| (x - mx).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Row-wise softmax weights of `Q K^T / temperature`.
pub fn softmax_weights(inp: &AttentionInputs, temperature: f64) -> Result<Matrix> {
    if !(temperature > 0.0) {
        return Err(Error::Parameter(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let nk = inp.keys.rows();
    let mut data = Vec::with_capacity(inp.queries.rows() * nk);
    for q in 0..inp.queries.rows() {
        let logits: Vec<f64> = (0..nk)
            .map(|k| dot(inp.queries.row(q), inp.keys.row(k)) / temperature)
            .collect();
        data.extend(softmax(&logits));
    }
    Matrix::from_vec(inp.queries.rows(), nk, data)
}

pub fn softmax_attention(inp: &AttentionInputs, temperature: f64) -> Result<Matrix> {
    let w = softmax_weights(inp, temperature)?;
    let mut data = Vec::with_capacity(inp.queries.rows() * inp.values.cols());
    for q in 0..inp.queries.rows() {
        data.extend(inp.combine(w.row(q)));
    }
    Matrix::from_vec(inp.queries.rows(), inp.values.cols(), data)
}

/// How winners' values are mixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WinnerMix {
    /// Weights proportional to each winner's (non-negative part of) cosine.
    #[default]
    Similarity,
    Uniform,
}

#[derive(Debug, Clone)]
pub struct WtaOutput {
    pub output: Matrix,
    /// Winning key indices per query, most similar first.
    pub winners: Vec<Vec<usize>>,
    /// Queries where no key cleared the threshold; their output row is zero.
    pub degenerate: Vec<bool>,
}

pub fn wta_attention(inp: &AttentionInputs, n_winners: usize, threshold: f64) -> Result<WtaOutput> {
    wta_attention_with(inp, n_winners, threshold, WinnerMix::Similarity)
}

/// Per query: cosine to every key, keep the `n_winners` most similar at or
/// above `threshold`, and return a convex combination of their values.
/// A winner set whose similarities are all non-positive falls back to
/// uniform mixing.
pub fn wta_attention_with(
    inp: &AttentionInputs,
    n_winners: usize,
    threshold: f64,
    mix: WinnerMix,
) -> Result<WtaOutput> {
    let nk = inp.keys.rows();
    if n_winners == 0 || n_winners > nk {
        return Err(Error::Parameter(format!(
            "n_winners must lie in 1..={nk}, got {n_winners}"
        )));
    }
    let dv = inp.values.cols();
    let mut data = Vec::with_capacity(inp.queries.rows() * dv);
    let mut winners = Vec::with_capacity(inp.queries.rows());
    let mut degenerate = Vec::with_capacity(inp.queries.rows());
    for q in 0..inp.queries.rows() {
        let query = inp.queries.row(q);
        let sims: Vec<f64> = (0..nk).map(|k| cosine(query, inp.keys.row(k)).unwrap_or(0.0)).collect();
        let chosen: Vec<usize> = argsort_desc(&sims)
            .into_iter()
            .take(n_winners)
            .filter(|&k| sims[k] >= threshold)
            .collect();
        let mut weights = vec![0.0; nk];
        if chosen.is_empty() || l2_norm(query) == 0.0 {
            data.extend(std::iter::repeat_n(0.0, dv));
            winners.push(Vec::new());
            degenerate.push(true);
            continue;
        }
        let total: f64 = chosen.iter().map(|&k| sims[k].max(0.0)).sum();
        for &k in &chosen {
            weights[k] = match mix {
                WinnerMix::Similarity if total > 0.0 => sims[k].max(0.0) / total,
                _ => 1.0 / chosen.len() as f64,
            };
        }
        data.extend(inp.combine(&weights));
        winners.push(chosen);
        degenerate.push(false);
    }
    Ok(WtaOutput {
        output: Matrix::from_vec(inp.queries.rows(), dv, data)?,
        winners,
        degenerate,
    })
}

/// Index of the largest dot-product logit (lowest index on ties).
pub fn softmax_argmax(query: &[f64], keys: &Matrix) -> usize {
    let logits: Vec<f64> = (0..keys.rows()).map(|k| dot(query, keys.row(k))).collect();
    argsort_desc(&logits)[0]
}

/// Index of the most cosine-similar key (lowest index on ties).
pub fn wta_argmax(query: &[f64], keys: &Matrix) -> usize {
    let sims: Vec<f64> = (0..keys.rows())
        .map(|k| cosine(query, keys.row(k)).unwrap_or(f64::NEG_INFINITY))
        .collect();
    argsort_desc(&sims)[0]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialResult {
    pub trial: usize,
    pub softmax_argmax: usize,
    pub wta_argmax: usize,
}

impl TrialResult {
    pub fn agree(&self) -> bool {
        self.softmax_argmax == self.wta_argmax
    }
}

/// Random gaussian query against `n_keys` random keys per trial, optionally
/// projected to unit norm, comparing the two selection rules.
pub fn compare_selection<R: Rng + ?Sized>(
    trials: usize,
    dim: usize,
    n_keys: usize,
    unit_keys: bool,
    rng: &mut R,
) -> Vec<TrialResult> {
    (0..trials)
        .map(|trial| {
            let query: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let mut keys = Vec::with_capacity(n_keys * dim);
            for _ in 0..n_keys {
                let mut k: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                if unit_keys {
                    let n = l2_norm(&k);
                    k.iter_mut().for_each(|v| *v /= n);
                } else {
                    // Spread key norms so dot product and cosine can disagree.
                    let s: f64 = rng.random_range(0.25..4.0);
                    k.iter_mut().for_each(|v| *v *= s);
                }
                keys.extend(k);
            }
            let keys = Matrix::from_vec(n_keys, dim, keys).expect("sized above");
            TrialResult {
                trial,
                softmax_argmax: softmax_argmax(&query, &keys),
                wta_argmax: wta_argmax(&query, &keys),
            }
        })
        .collect()
}
