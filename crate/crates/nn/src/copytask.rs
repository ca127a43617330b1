//! Copy task for comparing positional encodings in a small causal
//! transformer.
//!
//! Each sequence holds `K = (L - 1) / 2` payload tokens, a separator at
//! position `K`, and `K` placeholder slots after it. The model must emit
//! `payload[j]` at slot `K + 1 + j`; any remaining position is padding.
//! Placeholder inputs are identical, so slots can only be told apart by
//! their position.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spikeseq_core::posenc::{freq_compressed_pe, sinusoidal_pe, PosEncParams};

use crate::error::{NnError, Result};
use crate::nnkit::{Activation, Tape, Tensor, Var};
use crate::optim::Adam;
use crate::transformer::{block_forward, init_block, BlockShape, BLOCK_PARAM_NAMES};

pub const PLACEHOLDER: usize = 0;
pub const SEP: usize = 1;
/// First token id used for payload.
pub const FIRST_PAYLOAD: usize = 2;
/// A run has converged once a logged BPC falls below this.
pub const CONVERGED_BPC: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PosEncoding {
    Sinusoidal,
    FreqCompressed,
    LearnedRank,
    /// No positional signal; negative control.
    Zero,
}

impl PosEncoding {
    pub const ALL: [PosEncoding; 4] = [
        PosEncoding::Sinusoidal,
        PosEncoding::FreqCompressed,
        PosEncoding::LearnedRank,
        PosEncoding::Zero,
    ];

    pub fn label(self) -> &'static str {
        match self {
            PosEncoding::Sinusoidal => "sinusoidal",
            PosEncoding::FreqCompressed => "freq_compressed",
            PosEncoding::LearnedRank => "learned_rank",
            PosEncoding::Zero => "zero",
        }
    }
}

impl FromStr for PosEncoding {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self> {
        PosEncoding::ALL.into_iter().find(|e| e.label() == s).ok_or_else(|| {
            NnError::Parameter(format!(
                "unknown encoding {s:?}; expected one of sinusoidal, freq_compressed, learned_rank, zero"
            ))
        })
    }
}

impl std::fmt::Display for PosEncoding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CopyTaskConfig {
    pub seq_len: usize,
    pub dim: usize,
    pub vocab: usize,
    pub steps: usize,
    pub seed: u64,
    pub encoding: PosEncoding,
    pub batch_size: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub learning_rate: f64,
    pub log_every: usize,
    /// Held-out batches for the final score.
    pub eval_batches: usize,
}

impl Default for CopyTaskConfig {
    fn default() -> Self {
        Self {
            seq_len: 64,
            dim: 64,
            vocab: 50,
            steps: 10_000,
            seed: 42,
            encoding: PosEncoding::Sinusoidal,
            batch_size: 32,
            layers: 2,
            heads: 4,
            ffn_mult: 4,
            learning_rate: 3e-4,
            log_every: 100,
            eval_batches: 8,
        }
    }
}

impl CopyTaskConfig {
    pub fn payload_len(&self) -> usize {
        self.seq_len.saturating_sub(1) / 2
    }

    pub fn sep_position(&self) -> usize {
        self.payload_len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NnError::Parameter(m));
        if self.seq_len < 3 {
            return bad(format!("seq_len must be at least 3, got {}", self.seq_len));
        }
        if self.vocab <= FIRST_PAYLOAD {
            return bad(format!("vocab must exceed {FIRST_PAYLOAD}, got {}", self.vocab));
        }
        if self.dim == 0 || self.dim % 2 != 0 {
            return bad(format!("dim must be positive and even, got {}", self.dim));
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return bad(format!("dim {} must be divisible by heads {}", self.dim, self.heads));
        }
        if self.batch_size == 0
            || self.layers == 0
            || self.ffn_mult == 0
            || self.log_every == 0
            || self.eval_batches == 0
        {
            return bad("batch_size, layers, ffn_mult, log_every and eval_batches must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        Ok(())
    }

    /// Every hyperparameter on one line.
    pub fn manifest(&self) -> String {
        format!(
            "seq_len={} dim={} vocab={} steps={} seed={} encoding={} batch_size={} layers={} heads={} ffn_mult={} \
             learning_rate={} optimizer=adam(0.9,0.999,1e-8) activation=gelu norm=pre log_every={} eval_batches={} payload={}",
            self.seq_len,
            self.dim,
            self.vocab,
            self.steps,
            self.seed,
            self.encoding,
            self.batch_size,
            self.layers,
            self.heads,
            self.ffn_mult,
            self.learning_rate,
            self.log_every,
            self.eval_batches,
            self.payload_len()
        )
    }

    fn block_shape(&self) -> BlockShape {
        BlockShape {
            dim: self.dim,
            heads: self.heads,
            ffn_mult: self.ffn_mult,
            activation: Activation::Gelu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub batch_size: usize,
    pub seq_len: usize,
    /// Row-major `batch_size x seq_len`.
    pub tokens: Vec<usize>,
    pub targets: Vec<usize>,
    pub mask: Vec<bool>,
}

pub fn gen_batch<R: Rng + ?Sized>(cfg: &CopyTaskConfig, rng: &mut R) -> Batch {
    let (b, l, k) = (cfg.batch_size, cfg.seq_len, cfg.payload_len());
    let mut tokens = vec![PLACEHOLDER; b * l];
    let mut targets = vec![0; b * l];
    let mut mask = vec![false; b * l];
    for s in 0..b {
        let row = s * l;
        for j in 0..k {
            let tok = rng.random_range(FIRST_PAYLOAD..cfg.vocab);
            tokens[row + j] = tok;
            targets[row + k + 1 + j] = tok;
            mask[row + k + 1 + j] = true;
        }
        tokens[row + k] = SEP;
    }
    Batch {
        batch_size: b,
        seq_len: l,
        tokens,
        targets,
        mask,
    }
}

#[derive(Debug, Clone)]
pub struct CopyModel {
    cfg: CopyTaskConfig,
    params: Vec<Tensor>,
    names: Vec<String>,
    fixed_pos: Option<Tensor>,
}

/// Token and learned position tables are normal with unit variance (a
/// one-hot lookup has fan-in one); the output projection starts at zero so
/// the untrained model predicts uniformly.
pub fn build_model(cfg: &CopyTaskConfig) -> Result<CopyModel> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (l, d, v) = (cfg.seq_len, cfg.dim, cfg.vocab);
    let mut params = vec![Tensor::randn(vec![v, d], 1.0, &mut rng)];
    let mut names = vec!["tok_emb".to_string()];
    let fixed_pos = match cfg.encoding {
        PosEncoding::LearnedRank => {
            params.push(Tensor::randn(vec![l, d], 1.0, &mut rng));
            names.push("pos_emb".into());
            None
        }
        PosEncoding::Sinusoidal | PosEncoding::FreqCompressed => {
            let p = PosEncParams::standard(l, d)?;
            let e = if cfg.encoding == PosEncoding::Sinusoidal {
                sinusoidal_pe(&p)
            } else {
                freq_compressed_pe(&p)
            };
            Some(Tensor::new(vec![l, d], e.data().to_vec())?)
        }
        PosEncoding::Zero => None,
    };
    let shape = cfg.block_shape();
    for layer in 0..cfg.layers {
        params.extend(init_block(&shape, &mut rng));
        names.extend(BLOCK_PARAM_NAMES.iter().map(|n| format!("block{layer}.{n}")));
    }
    params.push(Tensor::filled(vec![d], 1.0));
    params.push(Tensor::zeros(vec![d]));
    params.push(Tensor::zeros(vec![d, v]));
    params.push(Tensor::zeros(vec![v]));
    names.extend(["lnf.gamma", "lnf.beta", "head.w", "head.b"].map(String::from));
    Ok(CopyModel {
        cfg: cfg.clone(),
        params,
        names,
        fixed_pos,
    })
}

impl CopyModel {
    pub fn config(&self) -> &CopyTaskConfig {
        &self.cfg
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Records the forward pass; returns the loss (bits per target token)
    /// and the parameter leaves in [`CopyModel::params`] order.
    pub fn forward(&self, tape: &mut Tape, batch: &Batch) -> Result<(Var, Vec<Var>)> {
        let vars: Vec<Var> = self.params.iter().map(|p| tape.leaf(p.clone())).collect();
        let loss = self.forward_with(tape, &vars, batch)?;
        Ok((loss, vars))
    }

    /// Forward pass with parameters supplied as tape variables in
    /// [`CopyModel::params`] order.
    pub fn forward_with(&self, tape: &mut Tape, vars: &[Var], batch: &Batch) -> Result<Var> {
        let cfg = &self.cfg;
        if vars.len() != self.params.len() {
            return Err(NnError::Parameter(format!(
                "model has {} parameters, got {}",
                self.params.len(),
                vars.len()
            )));
        }
        if batch.seq_len != cfg.seq_len {
            return Err(NnError::Shape {
                op: "copytask",
                detail: format!("batch seq_len {} vs model {}", batch.seq_len, cfg.seq_len),
            });
        }
        let mut x = tape.embedding(vars[0], &batch.tokens)?;
        let mut next = 1;
        if cfg.encoding == PosEncoding::LearnedRank {
            x = tape.add_tiled(x, vars[1])?;
            next = 2;
        } else if let Some(pe) = &self.fixed_pos {
            let pe = tape.leaf(pe.clone());
            x = tape.add_tiled(x, pe)?;
        }
        let shape = cfg.block_shape();
        let per = BLOCK_PARAM_NAMES.len();
        for layer in 0..cfg.layers {
            let p = &vars[next + layer * per..next + (layer + 1) * per];
            x = block_forward(tape, x, p, &shape, batch.batch_size, batch.seq_len)?;
        }
        let tail = next + cfg.layers * per;
        let h = tape.layer_norm(x, vars[tail], vars[tail + 1])?;
        let logits = tape.linear(h, vars[tail + 2], vars[tail + 3])?;
        tape.cross_entropy_bits(logits, &batch.targets, &batch.mask)
    }

    pub fn loss(&self, batch: &Batch) -> Result<f64> {
        let mut tape = Tape::new();
        let (loss, _) = self.forward(&mut tape, batch)?;
        Ok(tape.value(loss).item())
    }

    /// One optimiser step; returns the loss before the update.
    pub fn train_step(&mut self, opt: &mut Adam, batch: &Batch) -> Result<f64> {
        let mut tape = Tape::new();
        let (loss, vars) = self.forward(&mut tape, batch)?;
        let value = tape.value(loss).item();
        let mut grads = tape.backward(loss)?;
        let g: Vec<Tensor> = vars.iter().map(|&v| grads.take(v)).collect();
        opt.step(&mut self.params, &g)?;
        Ok(value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainLogRow {
    pub step: usize,
    pub bpc: f64,
    pub encoding: PosEncoding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Training-batch BPC every `log_every` steps, then the held-out BPC at
    /// `step == steps`.
    pub rows: Vec<TrainLogRow>,
    pub final_bpc: f64,
    pub convergence_step: Option<usize>,
}

const DATA_SALT: u64 = 0xda7a_5eed;
const EVAL_SALT: u64 = 0xe7a1_5eed;

/// Mean BPC over the held-out batches, which depend only on the seed.
pub fn evaluate(model: &CopyModel) -> Result<f64> {
    let cfg = model.config();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ EVAL_SALT);
    let mut total = 0.0;
    for _ in 0..cfg.eval_batches {
        total += model.loss(&gen_batch(cfg, &mut rng))?;
    }
    Ok(total / cfg.eval_batches as f64)
}

/// First logged step with BPC below [`CONVERGED_BPC`].
pub fn first_convergence(rows: &[TrainLogRow]) -> Option<usize> {
    rows.iter().find(|r| r.bpc < CONVERGED_BPC).map(|r| r.step)
}

pub fn train(cfg: &CopyTaskConfig) -> Result<TrainOutcome> {
    train_with(cfg, |_| {})
}

/// As [`train`], calling `on_log` with each row as it is produced.
pub fn train_with(cfg: &CopyTaskConfig, mut on_log: impl FnMut(&TrainLogRow)) -> Result<TrainOutcome> {
    let mut model = build_model(cfg)?;
    let mut opt = Adam::new(cfg.learning_rate);
    let mut data = ChaCha8Rng::seed_from_u64(cfg.seed ^ DATA_SALT);
    let mut rows = Vec::new();
    let diverged = |step| NnError::Diverged {
        step,
        encoding: cfg.encoding.label().into(),
    };
    for step in 0..cfg.steps {
        let batch = gen_batch(cfg, &mut data);
        let loss = match model.train_step(&mut opt, &batch) {
            Ok(l) if l.is_finite() => l,
            Ok(_) | Err(NnError::NonFinite { .. }) => return Err(diverged(step)),
            Err(e) => return Err(e),
        };
        if step % cfg.log_every == 0 {
            let row = TrainLogRow {
                step,
                bpc: loss,
                encoding: cfg.encoding,
            };
            on_log(&row);
            rows.push(row);
        }
    }
    let final_bpc = match evaluate(&model) {
        Ok(v) => v,
        Err(NnError::NonFinite { .. }) => return Err(diverged(cfg.steps)),
        Err(e) => return Err(e),
    };
    let row = TrainLogRow {
        step: cfg.steps,
        bpc: final_bpc,
        encoding: cfg.encoding,
    };
    on_log(&row);
    rows.push(row);
    let convergence_step = first_convergence(&rows);
    Ok(TrainOutcome {
        rows,
        final_bpc,
        convergence_step,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub encoding: PosEncoding,
    pub seed: u64,
    pub final_bpc: f64,
    pub convergence_step: Option<usize>,
}

impl RunSummary {
    pub fn from_outcome(cfg: &CopyTaskConfig, out: &TrainOutcome) -> Self {
        Self {
            encoding: cfg.encoding,
            seed: cfg.seed,
            final_bpc: out.final_bpc,
            convergence_step: out.convergence_step,
        }
    }

    pub fn converged(&self) -> bool {
        self.convergence_step.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    /// `encoding,seed,final_bpc,converged,convergence_step`, one row per run.
    pub csv: String,
    /// One row per encoding; mean and std when several seeds are present.
    pub markdown: String,
    /// Expected encodings with no completed run.
    pub missing: Vec<PosEncoding>,
}

pub fn ablation_report(runs: &[RunSummary], expected: &[PosEncoding]) -> AblationReport {
    let mut csv = String::from("encoding,seed,final_bpc,converged,convergence_step\n");
    for r in runs {
        let step = r.convergence_step.map_or(String::new(), |s| s.to_string());
        let _ = writeln!(
            csv,
            "{},{},{:.6},{},{}",
            r.encoding,
            r.seed,
            r.final_bpc,
            r.converged(),
            step
        );
    }
    let mut order: Vec<PosEncoding> = expected.to_vec();
    for r in runs {
        if !order.contains(&r.encoding) {
            order.push(r.encoding);
        }
    }
    let mut md = String::from("| encoding | final_bpc | converged | convergence_step |\n|---|---|---|---|\n");
    let mut missing = Vec::new();
    for enc in order {
        let group: Vec<&RunSummary> = runs.iter().filter(|r| r.encoding == enc).collect();
        if group.is_empty() {
            missing.push(enc);
            let _ = writeln!(md, "| {enc} | missing | missing | missing |");
            continue;
        }
        if group.len() == 1 {
            let r = group[0];
            let step = r.convergence_step.map_or("-".to_string(), |s| s.to_string());
            let _ = writeln!(md, "| {enc} | {:.6} | {} | {step} |", r.final_bpc, r.converged());
        } else {
            let bpcs: Vec<f64> = group.iter().map(|r| r.final_bpc).collect();
            let mean = bpcs.iter().sum::<f64>() / bpcs.len() as f64;
            let std = (bpcs.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (bpcs.len() - 1) as f64).sqrt();
            let conv = group.iter().filter(|r| r.converged()).count();
            let steps: Vec<f64> = group
                .iter()
                .filter_map(|r| r.convergence_step)
                .map(|s| s as f64)
                .collect();
            let step = if steps.is_empty() {
                "-".to_string()
            } else {
                format!("{:.0}", steps.iter().sum::<f64>() / steps.len() as f64)
            };
            let _ = writeln!(md, "| {enc} | {mean:.6} ± {std:.6} | {conv}/{} | {step} |", group.len());
        }
    }
    AblationReport {
        csv,
        markdown: md,
        missing,
    }
}

/// Seeds where `learned_rank <= sinusoidal < freq_compressed` in final BPC,
/// out of the seeds that have all three runs.
pub fn ordering_holds(runs: &[RunSummary]) -> (usize, usize) {
    let mut seeds: Vec<u64> = runs.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let find = |seed, enc| {
        runs.iter()
            .find(|r| r.seed == seed && r.encoding == enc)
            .map(|r| r.final_bpc)
    };
    let mut holds = 0;
    let mut total = 0;
    for seed in seeds {
        let (Some(rank), Some(sin), Some(fc)) = (
            find(seed, PosEncoding::LearnedRank),
            find(seed, PosEncoding::Sinusoidal),
            find(seed, PosEncoding::FreqCompressed),
        ) else {
            continue;
        };
        total += 1;
        if rank <= sin && sin < fc {
            holds += 1;
        }
    }
    (holds, total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> CopyTaskConfig {
        CopyTaskConfig {
            seq_len: 9,
            dim: 8,
            vocab: 7,
            steps: 3,
            batch_size: 2,
            layers: 1,
            heads: 2,
            log_every: 1,
            eval_batches: 1,
            ..CopyTaskConfig::default()
        }
    }

    #[test]
    fn default_layout() {
        let cfg = CopyTaskConfig::default();
        assert_eq!(cfg.payload_len(), 31);
        assert_eq!(cfg.sep_position(), 31);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = gen_batch(&cfg, &mut rng);
        for s in 0..cfg.batch_size {
            let row = &b.tokens[s * 64..(s + 1) * 64];
            assert_eq!(row[31], SEP);
            assert!(row[32..].iter().all(|&t| t == PLACEHOLDER));
            assert!(row[..31].iter().all(|&t| (2..50).contains(&t)));
            let m = &b.mask[s * 64..(s + 1) * 64];
            assert_eq!(m.iter().filter(|&&x| x).count(), 31);
            assert!(m[32..63].iter().all(|&x| x) && !m[63]);
            assert_eq!(&b.targets[s * 64 + 32..s * 64 + 63], &row[..31]);
        }
    }

    #[test]
    fn encoding_labels_roundtrip() {
        for e in PosEncoding::ALL {
            assert_eq!(e.label().parse::<PosEncoding>().unwrap(), e);
        }
        assert!("rope".parse::<PosEncoding>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(CopyTaskConfig { heads: 3, ..tiny() }.validate().is_err());
        assert!(CopyTaskConfig { vocab: 2, ..tiny() }.validate().is_err());
        assert!(CopyTaskConfig {
            learning_rate: 0.0,
            ..tiny()
        }
        .validate()
        .is_err());
        assert!(tiny().validate().is_ok());
    }

    #[test]
    fn untrained_model_is_uniform() {
        let cfg = tiny();
        let model = build_model(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let loss = model.loss(&gen_batch(&cfg, &mut rng)).unwrap();
        assert!((loss - 7f64.log2()).abs() < 1e-12);
    }

    #[test]
    fn learned_rank_adds_a_table() {
        let sin = build_model(&tiny()).unwrap();
        let rank = build_model(&CopyTaskConfig {
            encoding: PosEncoding::LearnedRank,
            ..tiny()
        })
        .unwrap();
        assert_eq!(rank.num_parameters(), sin.num_parameters() + 9 * 8);
        assert_eq!(rank.param_names()[1], "pos_emb");
    }

    #[test]
    fn tiny_training_logs_each_step_and_final() {
        let out = train(&tiny()).unwrap();
        let steps: Vec<usize> = out.rows.iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![0, 1, 2, 3]);
        assert_eq!(out.rows.last().unwrap().bpc, out.final_bpc);
        assert!(out.rows.iter().all(|r| r.bpc >= 0.0));
    }

    #[test]
    fn report_marks_missing_runs() {
        let runs = vec![RunSummary {
            encoding: PosEncoding::Sinusoidal,
            seed: 42,
            final_bpc: 0.001,
            convergence_step: Some(900),
        }];
        let rep = ablation_report(&runs, &[PosEncoding::Sinusoidal, PosEncoding::FreqCompressed]);
        assert_eq!(rep.missing, vec![PosEncoding::FreqCompressed]);
        assert!(rep.markdown.contains("| freq_compressed | missing |"));
        assert_eq!(rep.csv.lines().count(), 2);
        assert!(rep.csv.contains("sinusoidal,42,0.001000,true,900"));
    }

    #[test]
    fn unconverged_run_reports_false() {
        let rows = [
            TrainLogRow {
                step: 0,
                bpc: 5.6,
                encoding: PosEncoding::Zero,
            },
            TrainLogRow {
                step: 100,
                bpc: 0.02,
                encoding: PosEncoding::Zero,
            },
        ];
        assert_eq!(first_convergence(&rows), None);
    }

    #[test]
    fn ordering_counts_complete_seeds() {
        let mk = |encoding, seed, final_bpc| RunSummary {
            encoding,
            seed,
            final_bpc,
            convergence_step: None,
        };
        let runs = vec![
            mk(PosEncoding::LearnedRank, 1, 0.001),
            mk(PosEncoding::Sinusoidal, 1, 0.002),
            mk(PosEncoding::FreqCompressed, 1, 0.1),
            mk(PosEncoding::LearnedRank, 2, 0.003),
            mk(PosEncoding::Sinusoidal, 2, 0.002),
            mk(PosEncoding::FreqCompressed, 2, 0.1),
            mk(PosEncoding::Sinusoidal, 3, 0.002),
        ];
        assert_eq!(ordering_holds(&runs), (1, 2));
    }
}
