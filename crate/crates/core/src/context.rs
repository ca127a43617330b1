//! Gated recurrent context.
//!
//! The next context is the N-of-M code of a blend between the projected
//! previous context and the projected current input:
//!
//! ```text
//! C_n = nofm(gate * scale(P1 * C_{n-1}) + (1 - gate) * scale(P2 * I_n))
//! ```
//!
//! A gate of 0 makes the context the current input; a gate near 1 makes it
//! its own history.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codes::{nofm, CodeParams, SignificanceVector};
use crate::error::{Error, Result};
use crate::matrix::{l2_norm, Matrix};

/// Normalisation applied to each projected term before blending.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScalePolicy {
    /// Divide by the L2 norm. A zero vector stays zero.
    #[default]
    UnitL2,
    /// Leave magnitudes untouched.
    Identity,
}

impl ScalePolicy {
    pub fn apply(self, mut v: Vec<f64>) -> Vec<f64> {
        match self {
            ScalePolicy::UnitL2 => {
                let n = l2_norm(&v);
                if n > 0.0 {
                    v.iter_mut().for_each(|x| *x /= n);
                }
                v
            }
            ScalePolicy::Identity => v,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ContextConfig {
    lambda_gate: f64,
    p1: Matrix,
    p2: Matrix,
    code_params: CodeParams,
    scale: ScalePolicy,
}

impl ContextConfig {
    pub fn new(lambda_gate: f64, p1: Matrix, p2: Matrix, code_params: CodeParams) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda_gate) {
            return Err(Error::Parameter(format!(
                "context gate must lie in [0, 1], got {lambda_gate}"
            )));
        }
        let mc = code_params.m_total();
        if p1.rows() != mc || p1.cols() != mc {
            return Err(Error::Parameter(format!(
                "P1 must be {mc}x{mc}, got {}x{}",
                p1.rows(),
                p1.cols()
            )));
        }
        if p2.rows() != mc {
            return Err(Error::Parameter(format!("P2 must have {mc} rows, got {}", p2.rows())));
        }
        Ok(Self {
            lambda_gate,
            p1,
            p2,
            code_params,
            scale: ScalePolicy::default(),
        })
    }

    /// Seeded random projections: i.i.d. normal entries with unit-norm columns.
    pub fn random(lambda_gate: f64, code_params: CodeParams, input_dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mc = code_params.m_total();
        let p1 = Matrix::random_normal_columns(mc, mc, &mut rng);
        let p2 = Matrix::random_normal_columns(mc, input_dim, &mut rng);
        Self::new(lambda_gate, p1, p2, code_params)
    }

    pub fn with_scale(mut self, scale: ScalePolicy) -> Self {
        self.scale = scale;
        self
    }

    pub fn lambda_gate(&self) -> f64 {
        self.lambda_gate
    }

    pub fn code_params(&self) -> CodeParams {
        self.code_params
    }

    pub fn input_dim(&self) -> usize {
        self.p2.cols()
    }

    pub fn p1(&self) -> &Matrix {
        &self.p1
    }

    pub fn p2(&self) -> &Matrix {
        &self.p2
    }
}

/// Current context code. Starts empty (all zeros) before the first input.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextState {
    vector: SignificanceVector,
}

impl ContextState {
    pub fn empty(m_total: usize) -> Self {
        Self {
            vector: SignificanceVector::zeros(m_total),
        }
    }

    pub fn from_vector(vector: SignificanceVector) -> Self {
        Self { vector }
    }

    pub fn vector(&self) -> &SignificanceVector {
        &self.vector
    }

    pub fn is_empty(&self) -> bool {
        self.vector.is_zero()
    }
}

/// Pre-selection blend of history and input.
pub fn blend(prev: &ContextState, input: &SignificanceVector, cfg: &ContextConfig) -> Result<Vec<f64>> {
    if prev.vector.len() != cfg.code_params.m_total() {
        return Err(Error::Dimension {
            op: "update_context",
            expected: cfg.code_params.m_total(),
            got: prev.vector.len(),
        });
    }
    if input.len() != cfg.p2.cols() {
        return Err(Error::Dimension {
            op: "update_context",
            expected: cfg.p2.cols(),
            got: input.len(),
        });
    }
    if input.is_zero() {
        return Err(Error::Degenerate("context input is all zeros".into()));
    }
    let hist = cfg.scale.apply(cfg.p1.matvec(prev.vector.values())?);
    let cur = cfg.scale.apply(cfg.p2.matvec(input.values())?);
    let g = cfg.lambda_gate;
    Ok(hist.iter().zip(&cur).map(|(h, c)| g * h + (1.0 - g) * c).collect())
}

/// One context step. The result is always a canonical N-of-M significance
/// vector: the selected components are re-weighted `alpha^k` by rank.
pub fn update_context(prev: &ContextState, input: &SignificanceVector, cfg: &ContextConfig) -> Result<ContextState> {
    let v = blend(prev, input, cfg)?;
    if v.iter().all(|&x| x == 0.0) {
        return Err(Error::Degenerate("blended context vector is all zeros".into()));
    }
    let params = cfg.code_params;
    let code = nofm(&v, params.n_active(), params)?;
    Ok(ContextState {
        vector: code.to_significance(),
    })
}
