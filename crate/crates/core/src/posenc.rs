//! Positional encodings and the phase/latency correspondence.
//!
//! Sinusoidal encoding places position on a bank of frequencies
//! `omega_i = base^(-2i/d)`. Assigning spike latency `t(pos) = pos * T / L`
//! and multiplying by the same frequencies reproduces every phase difference
//! scaled by `T / L`, so the spike-timing encoding is `(T/L) * PE` and every
//! positional dot product scales by `(T/L)^2`. Positive scaling leaves the
//! ordering of attention logits untouched.
//!
//! The frequency-compressed variant `sin((pos/L) * omega_i)` instead squeezes
//! all phases into `[0, 1)` radians, flattening the distance profile.

use crate::error::{Error, Result};
use crate::stats::{argsort_desc, pearson, spearman};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosEncParams {
    seq_len: usize,
    dim: usize,
    base: f64,
    window: f64,
}

impl PosEncParams {
    pub fn new(seq_len: usize, dim: usize, base: f64, window: f64) -> Result<Self> {
        if dim == 0 || dim % 2 != 0 {
            return Err(Error::Parameter(format!(
                "encoding dim must be positive and even, got {dim}"
            )));
        }
        if seq_len < 2 {
            return Err(Error::Parameter(format!(
                "sequence length must be at least 2, got {seq_len}"
            )));
        }
        if !(window > 0.0 && window.is_finite()) {
            return Err(Error::Parameter(format!("spike window must be positive, got {window}")));
        }
        if !(base > 0.0 && base.is_finite()) {
            return Err(Error::Parameter(format!("frequency base must be positive, got {base}")));
        }
        Ok(Self {
            seq_len,
            dim,
            base,
            window,
        })
    }

    /// Base 10000, window 1.
    pub fn standard(seq_len: usize, dim: usize) -> Result<Self> {
        Self::new(seq_len, dim, 10_000.0, 1.0)
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    pub fn window(&self) -> f64 {
        self.window
    }

    /// `omega_i = base^(-2i/d)` for pair `i`.
    pub fn frequency(&self, pair: usize) -> f64 {
        self.base.powf(-(2.0 * pair as f64) / self.dim as f64)
    }

    /// `T / L`.
    pub fn latency_scale(&self) -> f64 {
        self.window / self.seq_len as f64
    }

    /// Spike time of position `pos` inside the window.
    pub fn spike_latency(&self, pos: usize) -> f64 {
        pos as f64 * self.window / self.seq_len as f64
    }

    /// Sinusoidal phase `pos * omega_i`.
    pub fn phase(&self, pos: usize, pair: usize) -> f64 {
        pos as f64 * self.frequency(pair)
    }

    /// Frequency-scaled spike latency `omega_i * t(pos)`.
    pub fn spike_phase(&self, pos: usize, pair: usize) -> f64 {
        self.frequency(pair) * self.spike_latency(pos)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncodingKind {
    Sinusoidal,
    SpikeTiming,
    FreqCompressed,
    LearnedRank,
    Zero,
}

impl EncodingKind {
    pub fn label(self) -> &'static str {
        match self {
            EncodingKind::Sinusoidal => "sinusoidal",
            EncodingKind::SpikeTiming => "spike_timing",
            EncodingKind::FreqCompressed => "freq_compressed",
            EncodingKind::LearnedRank => "learned_rank",
            EncodingKind::Zero => "zero",
        }
    }
}

/// `L x d` table of position vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodingMatrix {
    kind: EncodingKind,
    seq_len: usize,
    dim: usize,
    data: Vec<f64>,
}

impl EncodingMatrix {
    pub fn from_vec(kind: EncodingKind, seq_len: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != seq_len * dim {
            return Err(Error::Dimension {
                op: "EncodingMatrix::from_vec",
                expected: seq_len * dim,
                got: data.len(),
            });
        }
        Ok(Self {
            kind,
            seq_len,
            dim,
            data,
        })
    }

    pub fn zeros(seq_len: usize, dim: usize) -> Self {
        Self {
            kind: EncodingKind::Zero,
            seq_len,
            dim,
            data: vec![0.0; seq_len * dim],
        }
    }

    pub fn kind(&self) -> EncodingKind {
        self.kind
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, pos: usize) -> &[f64] {
        &self.data[pos * self.dim..(pos + 1) * self.dim]
    }

    pub fn dot(&self, p: usize, q: usize) -> f64 {
        self.row(p).iter().zip(self.row(q)).map(|(a, b)| a * b).sum()
    }

    /// Full `L x L` gram matrix, row-major.
    pub fn gram(&self) -> Vec<f64> {
        let l = self.seq_len;
        let mut g = vec![0.0; l * l];
        for p in 0..l {
            for q in p..l {
                let v = self.dot(p, q);
                g[p * l + q] = v;
                g[q * l + p] = v;
            }
        }
        g
    }
}

fn build(p: &PosEncParams, kind: EncodingKind, arg: impl Fn(usize, usize) -> f64) -> EncodingMatrix {
    let (l, d) = (p.seq_len, p.dim);
    let mut data = vec![0.0; l * d];
    for pos in 0..l {
        for i in 0..d / 2 {
            let x = arg(pos, i);
            data[pos * d + 2 * i] = x.sin();
            data[pos * d + 2 * i + 1] = x.cos();
        }
    }
    EncodingMatrix {
        kind,
        seq_len: l,
        dim: d,
        data,
    }
}

pub fn sinusoidal_pe(p: &PosEncParams) -> EncodingMatrix {
    build(p, EncodingKind::Sinusoidal, |pos, i| p.phase(pos, i))
}

/// `(T/L) * sinusoidal_pe`.
pub fn spike_timing_pe(p: &PosEncParams) -> EncodingMatrix {
    let mut e = sinusoidal_pe(p);
    let s = p.latency_scale();
    e.data.iter_mut().for_each(|v| *v *= s);
    e.kind = EncodingKind::SpikeTiming;
    e
}

/// What the compressed encoding puts on the odd (cosine) channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CosChannel {
    /// `cos((pos/L) * omega_i)`, compressed like the sine channel.
    #[default]
    Compressed,
    /// Zero.
    Zeroed,
}

pub fn freq_compressed_pe(p: &PosEncParams) -> EncodingMatrix {
    freq_compressed_pe_with(p, CosChannel::Compressed)
}

pub fn freq_compressed_pe_with(p: &PosEncParams, cos: CosChannel) -> EncodingMatrix {
    let l = p.seq_len as f64;
    let mut e = build(p, EncodingKind::FreqCompressed, |pos, i| {
        (pos as f64 / l) * p.frequency(i)
    });
    if cos == CosChannel::Zeroed {
        for row in e.data.chunks_exact_mut(p.dim) {
            for v in row.iter_mut().skip(1).step_by(2) {
                *v = 0.0;
            }
        }
    }
    e
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsomorphismReport {
    /// Max over pairs and bands of `|dphi - (L/T) * dphi_spike|`.
    pub max_abs_residual: f64,
    /// Max over pairs of `|stpe_dot - (T/L)^2 pe_dot|`, relative to the
    /// expected value, or to `(T/L)^2 * d` where the expected value is
    /// below `1e-9` of that.
    pub max_gram_rel_residual: f64,
    pub pearson_r: f64,
    pub spearman_rho: f64,
    /// `(T/L)^2`.
    pub gram_scale_checked: f64,
}

pub fn verify_isomorphism(p: &PosEncParams) -> IsomorphismReport {
    let l = p.seq_len;
    let inv = p.seq_len as f64 / p.window;
    let mut max_abs_residual: f64 = 0.0;
    for i in 0..p.dim / 2 {
        let phase: Vec<f64> = (0..l).map(|pos| p.phase(pos, i)).collect();
        let spike: Vec<f64> = (0..l).map(|pos| p.spike_phase(pos, i)).collect();
        for a in 0..l {
            for b in 0..l {
                let r = (phase[a] - phase[b]) - inv * (spike[a] - spike[b]);
                max_abs_residual = max_abs_residual.max(r.abs());
            }
        }
    }

    let pe = sinusoidal_pe(p);
    let st = spike_timing_pe(p);
    let scale = p.latency_scale().powi(2);
    let gp = pe.gram();
    let gs = st.gram();
    let mut max_rel: f64 = 0.0;
    let mut xs = Vec::with_capacity(l * (l - 1));
    let mut ys = Vec::with_capacity(l * (l - 1));
    for a in 0..l {
        for b in 0..l {
            let (x, y) = (gp[a * l + b], gs[a * l + b]);
            let expect = scale * x;
            let floor = scale * p.dim as f64;
            let rel = if expect.abs() < 1e-9 * floor {
                (y - expect).abs() / floor
            } else {
                (y - expect).abs() / expect.abs()
            };
            max_rel = max_rel.max(rel);
            if a != b {
                xs.push(x);
                ys.push(y);
            }
        }
    }
    IsomorphismReport {
        max_abs_residual,
        max_gram_rel_residual: max_rel,
        pearson_r: pearson(&xs, &ys),
        spearman_rho: spearman(&xs, &ys),
        gram_scale_checked: scale,
    }
}

/// Per-query comparison of positional logit orderings between two encodings.
#[derive(Debug, Clone, PartialEq)]
pub struct RankInvarianceReport {
    /// True when every query's argsort matched.
    pub preserved: bool,
    pub per_query_spearman: Vec<f64>,
    /// Queries whose argsort differed.
    pub mismatched_queries: Vec<usize>,
    /// Mean over queries of `max softmax weight under A / max under B`.
    pub max_weight_ratio: f64,
}

fn logits(e: &EncodingMatrix, q: usize) -> Vec<f64> {
    (0..e.seq_len).map(|k| e.dot(q, k)).collect()
}

/// Rounds logits to a grid relative to the row's largest magnitude so that
/// analytically equal logits compare equal under both encodings.
fn snap(v: &[f64]) -> Vec<f64> {
    let m = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if m == 0.0 {
        return v.to_vec();
    }
    v.iter().map(|x| (x / m * 1e9).round()).collect()
}

fn softmax_max(v: &[f64]) -> f64 {
    let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = v.iter().map(|x| (x - mx).exp()).sum();
    1.0 / z
}

/// Compares positional-logit orderings of `a` against `b` for every query.
pub fn rank_invariance(a: &EncodingMatrix, b: &EncodingMatrix) -> Result<RankInvarianceReport> {
    if a.seq_len != b.seq_len {
        return Err(Error::Dimension {
            op: "rank_invariance",
            expected: a.seq_len,
            got: b.seq_len,
        });
    }
    let mut per_query_spearman = Vec::with_capacity(a.seq_len);
    let mut mismatched_queries = Vec::new();
    let mut ratio_sum = 0.0;
    for q in 0..a.seq_len {
        let la = logits(a, q);
        let lb = logits(b, q);
        let (sa, sb) = (snap(&la), snap(&lb));
        if argsort_desc(&sa) != argsort_desc(&sb) {
            mismatched_queries.push(q);
        }
        per_query_spearman.push(spearman(&sa, &sb));
        ratio_sum += softmax_max(&la) / softmax_max(&lb);
    }
    Ok(RankInvarianceReport {
        preserved: mismatched_queries.is_empty(),
        per_query_spearman,
        mismatched_queries,
        max_weight_ratio: ratio_sum / a.seq_len as f64,
    })
}

/// Sinusoidal versus spike-timing positional logits.
pub fn spike_timing_rank_invariance(p: &PosEncParams) -> RankInvarianceReport {
    rank_invariance(&sinusoidal_pe(p), &spike_timing_pe(p)).expect("same length by construction")
}

/// Mean `<row(p), row(p + delta)>` for every `delta` in `0..L`.
pub fn distance_profile(e: &EncodingMatrix) -> Vec<(usize, f64)> {
    let l = e.seq_len;
    (0..l)
        .map(|delta| {
            let n = l - delta;
            let s: f64 = (0..n).map(|p| e.dot(p, p + delta)).sum();
            (delta, s / n as f64)
        })
        .collect()
}

/// Standard deviation of the profile over `delta >= 1`.
pub fn profile_spread(profile: &[(usize, f64)]) -> f64 {
    let vals: Vec<f64> = profile.iter().filter(|(d, _)| *d >= 1).map(|&(_, v)| v).collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}
