//! The sequence machine: symbol codebook, gated context, SDM storage and a
//! winner-take-all decoder, composed into one-shot learning and
//! autoregressive recall.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codes::{cosine_sim, CodeParams, RankOrderCode, SignificanceVector};
use crate::context::{update_context, ContextConfig, ContextState};
use crate::error::{Error, Result};
use crate::sdm::{calibrate_threshold, decode_address, AddressDecoder, CorrelationMatrix, Readout};

/// Scores closer than this (relative) count as tied in the decoder.
const TIE_EPS: f64 = 1e-12;

/// One rank-order code per symbol, all distinct.
#[derive(Debug, Clone)]
pub struct Codebook {
    params: CodeParams,
    codes: Vec<RankOrderCode>,
    significances: Vec<SignificanceVector>,
}

impl Codebook {
    pub fn new(codes: Vec<RankOrderCode>) -> Result<Self> {
        let params = codes
            .first()
            .map(RankOrderCode::params)
            .ok_or_else(|| Error::Parameter("codebook needs at least one symbol".into()))?;
        for (i, a) in codes.iter().enumerate() {
            if a.params() != params {
                return Err(Error::Parameter("codebook codes differ in parameters".into()));
            }
            if codes[..i].iter().any(|b| b.firing_order() == a.firing_order()) {
                return Err(Error::Parameter(format!("symbol {i} duplicates an earlier code")));
            }
        }
        let significances = codes.iter().map(RankOrderCode::to_significance).collect();
        Ok(Self {
            params,
            codes,
            significances,
        })
    }

    /// Uniform random distinct codes from `seed`.
    pub fn random(alphabet_size: usize, params: CodeParams, seed: u64) -> Result<Self> {
        if alphabet_size == 0 {
            return Err(Error::Parameter("alphabet must be nonempty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut codes: Vec<RankOrderCode> = Vec::with_capacity(alphabet_size);
        let mut attempts = 0usize;
        while codes.len() < alphabet_size {
            let c = RankOrderCode::random(params, &mut rng);
            if !codes.iter().any(|b| b.firing_order() == c.firing_order()) {
                codes.push(c);
            }
            attempts += 1;
            if attempts > alphabet_size * 1000 {
                return Err(Error::Parameter(format!(
                    "cannot draw {alphabet_size} distinct codes from this code space"
                )));
            }
        }
        Self::new(codes)
    }

    pub fn alphabet_size(&self) -> usize {
        self.codes.len()
    }

    pub fn params(&self) -> CodeParams {
        self.params
    }

    pub fn code(&self, symbol: usize) -> Result<&RankOrderCode> {
        self.codes.get(symbol).ok_or(Error::Alphabet {
            symbol,
            alphabet: self.codes.len(),
        })
    }

    pub fn encode(&self, symbol: usize) -> Result<SignificanceVector> {
        self.significances.get(symbol).cloned().ok_or(Error::Alphabet {
            symbol,
            alphabet: self.codes.len(),
        })
    }

    /// Winner-take-all over per-symbol cosine scores (the transposed encoder
    /// applied to the burst). Returns the winner and its margin over the
    /// runner-up; near-ties go to the lower symbol.
    pub fn decode(&self, burst: &SignificanceVector) -> Result<(usize, f64)> {
        if burst.is_zero() {
            return Err(Error::Degenerate("cannot decode an all-zero burst".into()));
        }
        let scores = self
            .significances
            .iter()
            .map(|s| cosine_sim(burst, s))
            .collect::<Result<Vec<_>>>()?;
        let mut best = 0;
        for (i, &s) in scores.iter().enumerate().skip(1) {
            if s > scores[best] + TIE_EPS * scores[best].abs().max(1.0) {
                best = i;
            }
        }
        let second = scores
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != best)
            .map(|(_, &s)| s)
            .fold(f64::NEG_INFINITY, f64::max);
        let margin = if second.is_finite() {
            scores[best] - second
        } else {
            scores[best]
        };
        Ok((best, margin))
    }
}

pub fn encode_symbol(cb: &Codebook, symbol: usize) -> Result<SignificanceVector> {
    cb.encode(symbol)
}

pub fn decode_burst(cb: &Codebook, burst: &SignificanceVector) -> Result<(usize, f64)> {
    cb.decode(burst)
}

/// What recall feeds back into the context after each prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Feedback {
    /// The clean code of the decoded symbol.
    #[default]
    Clean,
    /// The raw readout code, before decoding.
    Raw,
}

/// Geometry and defaults for building a machine.
#[derive(Debug, Clone)]
pub struct MachineConfig {
    pub alphabet_size: usize,
    pub code: CodeParams,
    pub locations: usize,
    pub lambda_gate: f64,
    /// Mean number of active locations the threshold calibration aims for.
    pub target_active: usize,
    /// Fixed threshold; when `None` it is calibrated.
    pub threshold: Option<f64>,
    pub binary_activation: bool,
    pub feedback: Feedback,
    /// Reads at or below this confidence halt recall.
    pub halt_confidence: f64,
    pub seed: u64,
}

impl Default for MachineConfig {
    fn default() -> Self {
        Self {
            alphabet_size: 26,
            code: CodeParams::new(256, 11, 0.9).expect("valid default code"),
            locations: 512,
            lambda_gate: 0.7,
            target_active: 16,
            threshold: None,
            binary_activation: false,
            feedback: Feedback::Clean,
            halt_confidence: 0.0,
            seed: 42,
        }
    }
}

/// One recalled symbol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub symbol: usize,
    pub margin: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HaltReason {
    /// No address cleared the threshold.
    NoActiveLocation,
    /// Active locations held nothing (confidence at or below the halt level).
    WeakRetrieval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recall {
    pub predictions: Vec<Prediction>,
    /// Set when recall stopped before producing every requested step.
    pub halted: Option<(usize, HaltReason)>,
}

impl Recall {
    pub fn symbols(&self) -> Vec<usize> {
        self.predictions.iter().map(|p| p.symbol).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SequenceMachine {
    codebook: Codebook,
    context_cfg: ContextConfig,
    decoder: AddressDecoder,
    memory: CorrelationMatrix,
    state: ContextState,
    feedback: Feedback,
    halt_confidence: f64,
    seed: u64,
}

impl SequenceMachine {
    pub fn new(codebook: Codebook, context_cfg: ContextConfig, decoder: AddressDecoder) -> Result<Self> {
        let m = codebook.params().m_total();
        if context_cfg.input_dim() != m {
            return Err(Error::Dimension {
                op: "SequenceMachine::new",
                expected: m,
                got: context_cfg.input_dim(),
            });
        }
        let mc = context_cfg.code_params().m_total();
        if decoder.dim() != mc {
            return Err(Error::Dimension {
                op: "SequenceMachine::new",
                expected: mc,
                got: decoder.dim(),
            });
        }
        let memory = CorrelationMatrix::new(m, decoder.locations());
        Ok(Self {
            codebook,
            context_cfg,
            decoder,
            memory,
            state: ContextState::empty(mc),
            feedback: Feedback::Clean,
            halt_confidence: 0.0,
            seed: 0,
        })
    }

    /// Builds every component from one seed. The codebook, projections and
    /// addresses draw from independent derived streams.
    pub fn from_config(cfg: &MachineConfig) -> Result<Self> {
        let seed = cfg.seed;
        let codebook = Codebook::random(cfg.alphabet_size, cfg.code, seed)?;
        let context_cfg = ContextConfig::random(
            cfg.lambda_gate,
            cfg.code,
            cfg.code.m_total(),
            seed.wrapping_add(0x9e37_79b9),
        )?;
        let mut decoder = AddressDecoder::random(cfg.code, cfg.locations, 0.0, seed.wrapping_add(0x7f4a_7c15))?;
        let threshold = match cfg.threshold {
            Some(t) => t,
            None => calibrate_threshold(
                &decoder,
                cfg.code,
                cfg.target_active,
                64,
                seed.wrapping_add(0x94d0_49bb),
            )?,
        };
        decoder = AddressDecoder::new(decoder.addresses().to_vec(), threshold)?.with_binary(cfg.binary_activation);
        let mut m = Self::new(codebook, context_cfg, decoder)?;
        m.feedback = cfg.feedback;
        m.halt_confidence = cfg.halt_confidence;
        m.seed = seed;
        Ok(m)
    }

    pub fn codebook(&self) -> &Codebook {
        &self.codebook
    }

    pub fn decoder(&self) -> &AddressDecoder {
        &self.decoder
    }

    pub fn memory(&self) -> &CorrelationMatrix {
        &self.memory
    }

    pub fn state(&self) -> &ContextState {
        &self.state
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn set_feedback(&mut self, feedback: Feedback) {
        self.feedback = feedback;
    }

    pub fn reset_context(&mut self) {
        self.state = ContextState::empty(self.context_cfg.code_params().m_total());
    }

    fn step_context(&mut self, input: &SignificanceVector) -> Result<()> {
        self.state = update_context(&self.state, input, &self.context_cfg)?;
        Ok(())
    }

    fn check_symbols(&self, symbols: &[usize]) -> Result<()> {
        let a = self.codebook.alphabet_size();
        match symbols.iter().find(|&&s| s >= a) {
            Some(&symbol) => Err(Error::Alphabet { symbol, alphabet: a }),
            None => Ok(()),
        }
    }

    /// One pass, one write per transition. The context starts empty.
    pub fn learn_sequence(&mut self, symbols: &[usize]) -> Result<()> {
        self.check_symbols(symbols)?;
        if symbols.len() < 2 {
            return Ok(());
        }
        self.reset_context();
        for pair in symbols.windows(2) {
            let input = self.codebook.encode(pair[0])?;
            self.step_context(&input)?;
            let act = decode_address(self.state.vector(), &self.decoder)?;
            let target = self.codebook.encode(pair[1])?;
            self.memory.write(&act, &target)?;
        }
        self.reset_context();
        Ok(())
    }

    fn read(&self) -> Result<Readout> {
        let act = decode_address(self.state.vector(), &self.decoder)?;
        self.memory.read(&act, self.codebook.params())
    }

    /// Primes the context with `seed_symbols`, then predicts `steps` symbols,
    /// feeding each prediction back as the next input.
    pub fn recall_sequence(&mut self, seed_symbols: &[usize], steps: usize) -> Result<Recall> {
        if seed_symbols.is_empty() {
            return Err(Error::Parameter("recall needs at least one seed symbol".into()));
        }
        self.check_symbols(seed_symbols)?;
        self.reset_context();
        for &s in seed_symbols {
            let input = self.codebook.encode(s)?;
            self.step_context(&input)?;
        }
        let mut predictions = Vec::with_capacity(steps);
        let mut halted = None;
        for step in 0..steps {
            let readout = match self.read() {
                Ok(r) => r,
                Err(Error::NoActiveLocation) => {
                    halted = Some((step + 1, HaltReason::NoActiveLocation));
                    break;
                }
                Err(e) => return Err(e),
            };
            if readout.confidence <= self.halt_confidence {
                halted = Some((step + 1, HaltReason::WeakRetrieval));
                break;
            }
            let burst = readout.code.to_significance();
            let (symbol, margin) = self.codebook.decode(&burst)?;
            predictions.push(Prediction {
                symbol,
                margin,
                confidence: readout.confidence,
            });
            let next = match self.feedback {
                Feedback::Clean => self.codebook.encode(symbol)?,
                Feedback::Raw => burst,
            };
            self.step_context(&next)?;
        }
        self.reset_context();
        Ok(Recall { predictions, halted })
    }
}

pub fn learn_sequence(m: &mut SequenceMachine, symbols: &[usize]) -> Result<()> {
    m.learn_sequence(symbols)
}

pub fn recall_sequence(m: &mut SequenceMachine, seed_symbols: &[usize], steps: usize) -> Result<Recall> {
    m.recall_sequence(seed_symbols, steps)
}

/// Outcome of one capacity trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapacityTrial {
    pub seed: u64,
    pub sequences: usize,
    pub correct: usize,
    pub total: usize,
}

impl CapacityTrial {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

/// Random sequences for a capacity trial. First symbols are distinct so a
/// one-symbol seed identifies the sequence.
pub fn random_sequences(alphabet: usize, count: usize, len: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if count > alphabet || len < 2 {
        return Err(Error::Parameter(format!(
            "need count <= alphabet ({count} > {alphabet}?) and len >= 2 (got {len})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5e9_5eed);
    let mut firsts: Vec<usize> = (0..alphabet).collect();
    firsts.shuffle(&mut rng);
    Ok(firsts[..count]
        .iter()
        .map(|&f| {
            let mut s = vec![f];
            s.extend((1..len).map(|_| rng.random_range(0..alphabet)));
            s
        })
        .collect())
}

/// Stores `sequences` random sequences of length `len` in a fresh machine
/// built from `cfg` (with `seed` replacing its seed), then recalls each from
/// its first symbol and counts symbol-exact predictions.
pub fn capacity_trial(cfg: &MachineConfig, sequences: usize, len: usize, seed: u64) -> Result<CapacityTrial> {
    let cfg = MachineConfig { seed, ..cfg.clone() };
    let mut m = SequenceMachine::from_config(&cfg)?;
    let seqs = random_sequences(cfg.alphabet_size, sequences, len, seed)?;
    for s in &seqs {
        m.learn_sequence(s)?;
    }
    let mut correct = 0;
    for s in &seqs {
        let r = m.recall_sequence(&s[..1], len - 1)?;
        correct += r.symbols().iter().zip(&s[1..]).filter(|(a, b)| a == b).count();
    }
    Ok(CapacityTrial {
        seed,
        sequences,
        correct,
        total: sequences * (len - 1),
    })
}
