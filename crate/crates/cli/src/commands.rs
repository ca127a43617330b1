use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spikeseq_core::burst::{
    dispersion_vs_connectivity, find_critical_threshold, input_burst, propagate, LayerNet, NetConfig, NeuronParams,
};
use spikeseq_core::codes::{info_bits_ordered, info_bits_unordered};
use spikeseq_core::posenc::{
    distance_profile, freq_compressed_pe, rank_invariance, sinusoidal_pe, spike_timing_pe,
    spike_timing_rank_invariance, verify_isomorphism, PosEncParams,
};
use spikeseq_core::seqmachine::{capacity_trial, Feedback, MachineConfig, SequenceMachine};
use spikeseq_core::spikeattn::compare_selection;
use spikeseq_core::CodeParams;
use spikeseq_nn::copytask::{ablation_report, train_with, CopyTaskConfig, PosEncoding, RunSummary};

use crate::manifest::{RunManifest, Table};
use crate::Common;

type Outcome = Result<(), String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn report(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

#[derive(Debug, Args)]
pub struct IsomorphismArgs {
    /// Sequence length.
    #[arg(long = "L", default_value_t = 128)]
    pub seq_len: usize,
    /// Encoding dimension (even).
    #[arg(long = "d", default_value_t = 128)]
    pub dim: usize,
    /// Spike-timing window.
    #[arg(long = "T", default_value_t = 1.0)]
    pub window: f64,
    #[arg(long, default_value_t = 10000.0)]
    pub base: f64,
    #[command(flatten)]
    pub common: Common,
}

pub fn isomorphism(a: IsomorphismArgs) -> Outcome {
    let p = PosEncParams::new(a.seq_len, a.dim, a.base, a.window)
        .map_err(|e| format!("{e} (flags --L >= 2, --d even and >= 2, --T > 0, --base > 1)"))?;
    let man = RunManifest::start("isomorphism", format!("{a:?}"), a.common.seed);
    let rep = verify_isomorphism(&p);
    let pe = sinusoidal_pe(&p);
    let st = spike_timing_pe(&p);
    let fc = freq_compressed_pe(&p);
    let timing = spike_timing_rank_invariance(&p);
    let compressed = rank_invariance(&pe, &fc).map_err(err)?;

    let l = p.seq_len();
    let (gp, gs) = (pe.gram(), st.gram());
    let mut gram = Table::new("isomorphism.csv", "p,q,pe_dot,stpe_dot");
    for i in 0..l {
        for j in 0..l {
            gram.push(format!("{i},{j},{:e},{:e}", gp[i * l + j], gs[i * l + j]));
        }
    }
    let mut profile = Table::new("profile.csv", "encoding,delta,mean_dot");
    for e in [&pe, &st, &fc] {
        for (delta, v) in distance_profile(e) {
            profile.push(format!("{},{delta},{v:e}", e.kind().label()));
        }
    }
    let mut summary = Table::new("isomorphism_report.csv", "metric,value");
    let metrics = [
        ("max_abs_residual", format!("{:e}", rep.max_abs_residual)),
        ("max_gram_rel_residual", format!("{:e}", rep.max_gram_rel_residual)),
        ("gram_scale", format!("{:e}", rep.gram_scale_checked)),
        ("pearson_r", format!("{:.6}", rep.pearson_r)),
        ("spearman_rho", format!("{:.6}", rep.spearman_rho)),
        ("spike_timing_rank_preserved", timing.preserved.to_string()),
        ("freq_compressed_rank_preserved", compressed.preserved.to_string()),
        (
            "freq_compressed_mismatched_queries",
            compressed.mismatched_queries.len().to_string(),
        ),
    ];
    for (k, v) in &metrics {
        println!("{k}={v}");
        summary.push(format!("{k},{v}"));
    }
    report(&man.finish(&a.common.out_dir, &[gram, profile, summary])?);
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    #[arg(long, default_value_t = 10000)]
    pub steps: usize,
    #[arg(long = "seq-len", default_value_t = 64)]
    pub seq_len: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 50)]
    pub vocab: usize,
    #[arg(long = "batch-size", default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long = "lr", default_value_t = 3e-4)]
    pub learning_rate: f64,
    #[arg(long = "log-every", default_value_t = 100)]
    pub log_every: usize,
}

impl TrainFlags {
    fn config(&self, encoding: PosEncoding, seed: u64) -> Result<CopyTaskConfig, String> {
        let cfg = CopyTaskConfig {
            seq_len: self.seq_len,
            dim: self.dim,
            vocab: self.vocab,
            steps: self.steps,
            seed,
            encoding,
            batch_size: self.batch_size,
            layers: self.layers,
            heads: self.heads,
            learning_rate: self.learning_rate,
            log_every: self.log_every,
            ..CopyTaskConfig::default()
        };
        cfg.validate().map_err(err)?;
        Ok(cfg)
    }
}

fn run_copy(cfg: &CopyTaskConfig) -> Result<(Table, RunSummary), String> {
    let mut log = Table::new(
        format!("copytask_{}_seed{}.csv", cfg.encoding, cfg.seed),
        "step,encoding,seed,bpc",
    );
    log.notes.push(format!("cfg: {}", cfg.manifest()));
    let outcome = train_with(cfg, |row| {
        eprintln!("[{}] step {} bpc {:.6}", row.encoding, row.step, row.bpc);
    })
    .map_err(err)?;
    for r in &outcome.rows {
        log.push(format!("{},{},{},{:.6}", r.step, r.encoding, cfg.seed, r.bpc));
    }
    Ok((log, RunSummary::from_outcome(cfg, &outcome)))
}

#[derive(Debug, Args)]
pub struct CopytaskArgs {
    /// sinusoidal, freq_compressed, learned_rank or zero.
    #[arg(long, default_value = "sinusoidal")]
    pub encoding: PosEncoding,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub common: Common,
}

pub fn copytask(a: CopytaskArgs) -> Outcome {
    let cfg = a.train.config(a.encoding, a.common.seed)?;
    let man = RunManifest::start("copytask", format!("{a:?}"), a.common.seed);
    let (log, summary) = run_copy(&cfg)?;
    println!(
        "encoding={} final_bpc={:.6} converged={} convergence_step={}",
        summary.encoding,
        summary.final_bpc,
        summary.converged(),
        summary.convergence_step.map_or("-".into(), |s| s.to_string())
    );
    report(&man.finish(&a.common.out_dir, &[log])?);
    Ok(())
}

#[derive(Debug, Args)]
pub struct AblationArgs {
    /// Comma-separated encodings.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "sinusoidal,freq_compressed,learned_rank,zero"
    )]
    pub encodings: Vec<PosEncoding>,
    /// Number of seeds, counting up from `--seed`.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    #[command(flatten)]
    pub train: TrainFlags,
    #[command(flatten)]
    pub common: Common,
}

pub fn ablation(a: AblationArgs) -> Outcome {
    if a.seeds == 0 || a.encodings.is_empty() {
        return Err("--seeds must be >= 1 and --encodings nonempty".into());
    }
    let seeds: Vec<u64> = (0..a.seeds).map(|k| a.common.seed + k).collect();
    let cfgs = seeds
        .iter()
        .flat_map(|&s| a.encodings.iter().map(move |&e| (e, s)))
        .map(|(e, s)| a.train.config(e, s))
        .collect::<Result<Vec<_>, _>>()?;
    let man = RunManifest::start("ablation", format!("{a:?}"), a.common.seed);
    let mut tables = Vec::new();
    let mut runs = Vec::new();
    for cfg in &cfgs {
        let (log, summary) = run_copy(cfg)?;
        tables.push(log);
        runs.push(summary);
    }
    let rep = ablation_report(&runs, &a.encodings);
    print!("{}", rep.markdown);
    let mut lines = rep.csv.lines();
    let mut summary = Table::new("ablation.csv", lines.next().unwrap_or_default());
    lines.for_each(|l| summary.push(l.to_string()));
    tables.push(summary);
    report(&man.finish(&a.common.out_dir, &tables)?);
    Ok(())
}

#[derive(Debug, Args)]
pub struct BurstArgs {
    /// Membrane threshold for a single run or a sweep.
    #[arg(long, default_value_t = 0.5)]
    pub theta: f64,
    #[arg(long, default_value_t = 200)]
    pub layers: usize,
    #[arg(long, default_value_t = 256)]
    pub neurons: usize,
    #[arg(long, default_value_t = 0.1)]
    pub connectivity: f64,
    #[arg(long = "n-code", default_value_t = 11)]
    pub n_code: usize,
    /// Keep only the first `n-code` spikes of every layer.
    #[arg(long)]
    pub inhibition: bool,
    /// Spread of the input burst in time.
    #[arg(long = "input-dispersion", default_value_t = 1.0)]
    pub input_dispersion: f64,
    #[arg(long = "weight-scale", default_value_t = 1.0)]
    pub weight_scale: f64,
    #[arg(long = "decay-tau", default_value_t = 2.0)]
    pub decay_tau: f64,
    #[arg(long = "activation-tau", default_value_t = 1.0)]
    pub activation_tau: f64,
    /// Bisect for the threshold where activity stops surviving.
    #[arg(long = "find-threshold", conflicts_with = "sweep")]
    pub find_threshold: bool,
    #[arg(long, default_value_t = 0.01, requires = "find_threshold")]
    pub lo: f64,
    #[arg(long, default_value_t = 100.0, requires = "find_threshold")]
    pub hi: f64,
    #[arg(long, default_value_t = 1e-6, requires = "find_threshold")]
    pub tol: f64,
    /// Stabilised dispersion against connectivity, reset inhibition on.
    #[arg(long)]
    pub sweep: bool,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.25,0.5,1.0", requires = "sweep")]
    pub connectivities: Vec<f64>,
    /// Number of seeds in a sweep, counting up from `--seed`.
    #[arg(long = "sweep-seeds", default_value_t = 20, requires = "sweep")]
    pub sweep_seeds: u64,
    #[command(flatten)]
    pub common: Common,
}

pub fn burst(a: BurstArgs) -> Outcome {
    let cfg = NetConfig {
        n_layers: a.layers,
        neurons_per_layer: a.neurons,
        connectivity: a.connectivity,
        n_code: a.n_code,
        reset_inhibition: a.inhibition,
        weight_scale: a.weight_scale,
        seed: a.common.seed,
    };
    cfg.validate()
        .map_err(|e| format!("{e} (flags --layers >= 1, --neurons >= 1, --connectivity in (0,1], --n-code in 1..=--neurons, --weight-scale > 0)"))?;
    let params = NeuronParams::new(a.theta, a.decay_tau, a.activation_tau)
        .map_err(|e| format!("{e} (flags --theta, --decay-tau, --activation-tau > 0 with distinct taus)"))?;
    if !(a.input_dispersion >= 0.0) {
        return Err("--input-dispersion must be >= 0".into());
    }
    let man = RunManifest::start("burst", format!("{a:?}"), a.common.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(a.common.seed ^ 0x5eed_b125);
    let input = input_burst(a.neurons, a.n_code, a.input_dispersion, &mut rng);

    let table = if a.find_threshold {
        let net = LayerNet::new(cfg).map_err(err)?;
        let r = find_critical_threshold(&net, &input, &params, a.lo, a.hi, a.tol).map_err(err)?;
        println!(
            "theta={:.9} lo={:.9} hi={:.9} iterations={}",
            r.theta, r.lo, r.hi, r.iterations
        );
        let mut t = Table::new("burst_threshold.csv", "iteration,lo,hi");
        for (k, (lo, hi)) in r.history.iter().enumerate() {
            t.push(format!("{k},{lo:.12},{hi:.12}"));
        }
        t
    } else if a.sweep {
        if a.connectivities.iter().any(|&c| !(c > 0.0 && c <= 1.0)) || a.sweep_seeds == 0 {
            return Err("--connectivities must lie in (0,1] and --sweep-seeds >= 1".into());
        }
        let seeds: Vec<u64> = (0..a.sweep_seeds).map(|k| a.common.seed + k).collect();
        let rows = dispersion_vs_connectivity(&cfg, &params, &a.connectivities, &seeds, a.input_dispersion, (10, 100))
            .map_err(err)?;
        let mut t = Table::new("burst_sweep.csv", "theta,connectivity,seed,regime,stable_dispersion");
        t.notes
            .push("stable_dispersion: mean over layers 10..=100, empty when the burst died".into());
        for r in &rows {
            let d = r.stable_dispersion.map_or(String::new(), |d| format!("{d:.9}"));
            t.push(format!(
                "{},{},{},{},{d}",
                a.theta,
                r.connectivity,
                r.seed,
                r.regime.label()
            ));
        }
        for &c in &a.connectivities {
            let ds: Vec<f64> = rows
                .iter()
                .filter(|r| r.connectivity == c)
                .filter_map(|r| r.stable_dispersion)
                .collect();
            let mean = ds.iter().sum::<f64>() / ds.len().max(1) as f64;
            println!(
                "connectivity={c} mean_dispersion={mean:.6} surviving={}/{}",
                ds.len(),
                seeds.len()
            );
        }
        t
    } else {
        let net = LayerNet::new(cfg).map_err(err)?;
        let trace = propagate(&net, &input, &params).map_err(err)?;
        println!(
            "regime={} layers_reached={}",
            trace.regime.label(),
            trace.layers.len() - 1
        );
        let mut t = Table::new("burst.csv", "layer,spike_count,dispersion");
        t.notes.push(format!("regime: {}", trace.regime.label()));
        for (l, act) in trace.layers.iter().enumerate() {
            t.push(format!("{l},{},{:.9}", act.spike_count, act.dispersion));
        }
        t
    };
    report(&man.finish(&a.common.out_dir, &[table])?);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FeedbackArg {
    Clean,
    Raw,
}

#[derive(Debug, Args)]
pub struct MachineFlags {
    #[arg(long, default_value_t = 26)]
    pub alphabet: usize,
    /// Neurons per code.
    #[arg(long = "m", default_value_t = 256)]
    pub m_total: usize,
    /// Spikes per code.
    #[arg(long = "n", default_value_t = 11)]
    pub n_active: usize,
    #[arg(long, default_value_t = 0.9)]
    pub alpha: f64,
    /// Memory locations.
    #[arg(long = "w", default_value_t = 512)]
    pub locations: usize,
    /// Context gate.
    #[arg(long, default_value_t = 0.7)]
    pub lambda: f64,
    /// Mean active locations the threshold calibration aims for.
    #[arg(long = "target-active", default_value_t = 16)]
    pub target_active: usize,
    #[arg(long, value_enum, default_value_t = FeedbackArg::Clean)]
    pub feedback: FeedbackArg,
}

impl MachineFlags {
    fn config(&self, seed: u64) -> Result<MachineConfig, String> {
        let code = CodeParams::new(self.m_total, self.n_active, self.alpha)
            .map_err(|e| format!("{e} (flags --n in 1..=--m, --alpha in (0,1))"))?;
        if self.alphabet == 0 || self.locations == 0 || !(0.0..=1.0).contains(&self.lambda) {
            return Err("--alphabet and --w must be >= 1, --lambda in [0,1]".into());
        }
        Ok(MachineConfig {
            alphabet_size: self.alphabet,
            code,
            locations: self.locations,
            lambda_gate: self.lambda,
            target_active: self.target_active,
            feedback: match self.feedback {
                FeedbackArg::Clean => Feedback::Clean,
                FeedbackArg::Raw => Feedback::Raw,
            },
            seed,
            ..MachineConfig::default()
        })
    }
}

#[derive(Debug, Args)]
pub struct SeqdemoArgs {
    /// Text file, one sequence per line, whitespace-separated tokens.
    #[arg(long)]
    pub input: PathBuf,
    /// Symbols used to prime recall.
    #[arg(long, default_value_t = 1)]
    pub prefix: usize,
    #[command(flatten)]
    pub machine: MachineFlags,
    #[command(flatten)]
    pub common: Common,
}

pub fn seqdemo(a: SeqdemoArgs) -> Outcome {
    let text = fs::read_to_string(&a.input).map_err(|e| format!("cannot read {}: {e}", a.input.display()))?;
    let cfg = a.machine.config(a.common.seed)?;
    if a.prefix == 0 {
        return Err("--prefix must be >= 1".into());
    }
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut tokens: Vec<String> = Vec::new();
    let mut seqs: Vec<Vec<usize>> = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let seq = line
            .split_whitespace()
            .map(|t| {
                *index.entry(t.to_string()).or_insert_with(|| {
                    tokens.push(t.to_string());
                    tokens.len() - 1
                })
            })
            .collect();
        seqs.push(seq);
    }
    if tokens.len() > cfg.alphabet_size {
        return Err(format!(
            "{} distinct tokens exceed --alphabet {}",
            tokens.len(),
            cfg.alphabet_size
        ));
    }
    let man = RunManifest::start("seqdemo", format!("{a:?}"), a.common.seed);
    let mut m = SequenceMachine::from_config(&cfg).map_err(err)?;
    for s in &seqs {
        m.learn_sequence(s).map_err(err)?;
    }
    let mut t = Table::new("seqdemo.csv", "sequence,step,predicted_symbol,margin,confidence");
    let (mut correct, mut total) = (0, 0);
    for (k, s) in seqs.iter().enumerate() {
        if s.len() <= a.prefix {
            continue;
        }
        let r = m.recall_sequence(&s[..a.prefix], s.len() - a.prefix).map_err(err)?;
        for (step, p) in r.predictions.iter().enumerate() {
            t.push(format!(
                "{k},{},{},{:.9},{:.9}",
                step + 1,
                tokens[p.symbol],
                p.margin,
                p.confidence
            ));
        }
        if let Some((step, reason)) = r.halted {
            t.notes.push(format!("sequence {k} halted at step {step}: {reason:?}"));
        }
        correct += r.symbols().iter().zip(&s[a.prefix..]).filter(|(x, y)| x == y).count();
        total += s.len() - a.prefix;
        let recalled: Vec<&str> = r.symbols().iter().map(|&i| tokens[i].as_str()).collect();
        println!("{k}: {}", recalled.join(" "));
    }
    println!("recalled {correct}/{total} symbols exactly");
    report(&man.finish(&a.common.out_dir, &[t])?);
    Ok(())
}

#[derive(Debug, Args)]
pub struct CapacityArgs {
    /// Comma-separated numbers of stored sequences.
    #[arg(long, value_delimiter = ',', default_value = "1,5,10,15,20")]
    pub sequences: Vec<usize>,
    #[arg(long, default_value_t = 8)]
    pub length: usize,
    /// Seeds per load level, counting up from `--seed`.
    #[arg(long, default_value_t = 30)]
    pub trials: u64,
    #[command(flatten)]
    pub machine: MachineFlags,
    #[command(flatten)]
    pub common: Common,
}

pub fn capacity(a: CapacityArgs) -> Outcome {
    let cfg = a.machine.config(a.common.seed)?;
    if a.trials == 0 || a.length < 2 || a.sequences.iter().any(|&s| s == 0 || s > cfg.alphabet_size) {
        return Err("--trials >= 1, --length >= 2 and every --sequences value in 1..=--alphabet".into());
    }
    let man = RunManifest::start("capacity", format!("{a:?}"), a.common.seed);
    let mut t = Table::new("capacity.csv", "sequences,seed,correct,total,accuracy");
    for &s in &a.sequences {
        let (mut c, mut n) = (0, 0);
        for k in 0..a.trials {
            let r = capacity_trial(&cfg, s, a.length, a.common.seed + k).map_err(err)?;
            t.push(format!("{s},{},{},{},{:.6}", r.seed, r.correct, r.total, r.accuracy()));
            c += r.correct;
            n += r.total;
        }
        println!("sequences={s} accuracy={:.4}", c as f64 / n as f64);
    }
    report(&man.finish(&a.common.out_dir, &[t])?);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KeyNorm {
    /// Keys projected to unit length.
    Unit,
    /// Key lengths spread over [0.25, 4).
    Varied,
}

#[derive(Debug, Args)]
pub struct AttncompareArgs {
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 32)]
    pub keys: usize,
    #[arg(long = "key-norm", value_enum, default_value_t = KeyNorm::Unit)]
    pub key_norm: KeyNorm,
    #[command(flatten)]
    pub common: Common,
}

pub fn attncompare(a: AttncompareArgs) -> Outcome {
    if a.trials == 0 || a.dim == 0 || a.keys == 0 {
        return Err("--trials, --dim and --keys must be >= 1".into());
    }
    let man = RunManifest::start("attncompare", format!("{a:?}"), a.common.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(a.common.seed);
    let trials = compare_selection(a.trials, a.dim, a.keys, a.key_norm == KeyNorm::Unit, &mut rng);
    let mut t = Table::new("attncompare.csv", "trial,softmax_argmax,wta_argmax,agree");
    for r in &trials {
        t.push(format!(
            "{},{},{},{}",
            r.trial,
            r.softmax_argmax,
            r.wta_argmax,
            r.agree()
        ));
    }
    let agree = trials.iter().filter(|r| r.agree()).count();
    println!(
        "key_norm={:?} agreement={agree}/{} ({:.1}%)",
        a.key_norm,
        trials.len(),
        100.0 * agree as f64 / trials.len() as f64
    );
    report(&man.finish(&a.common.out_dir, &[t])?);
    Ok(())
}

#[derive(Debug, Args)]
pub struct InfobitsArgs {
    /// Sweep every 1 <= N <= M <= max-m.
    #[arg(long = "max-m", default_value_t = 32)]
    pub max_m: usize,
    #[command(flatten)]
    pub common: Common,
}

pub fn infobits(a: InfobitsArgs) -> Outcome {
    if a.max_m == 0 {
        return Err("--max-m must be >= 1".into());
    }
    let man = RunManifest::start("infobits", format!("{a:?}"), a.common.seed);
    let mut t = Table::new("infobits.csv", "n,m,ordered_bits,unordered_bits,ratio");
    let mut violations = 0;
    let mut row = |n, m| -> Result<(f64, f64), String> {
        let o = info_bits_ordered(n, m).map_err(err)?;
        let u = info_bits_unordered(n, m).map_err(err)?;
        let ratio = if u > 0.0 {
            format!("{:.6}", o / u)
        } else {
            String::new()
        };
        t.push(format!("{n},{m},{o:.9},{u:.9},{ratio}"));
        Ok((o, u))
    };
    for m in 1..=a.max_m {
        for n in 1..=m {
            let (o, u) = row(n, m)?;
            if o < u {
                violations += 1;
            }
        }
    }
    let (o, u) = row(255, 256)?;
    println!(
        "ordered >= unordered for all n <= m <= {}: {}",
        a.max_m,
        violations == 0
    );
    println!(
        "n=255 m=256: ordered={o:.3} bits unordered={u:.3} bits ratio={:.1} (quoted factor 6.7)",
        o / u
    );
    t.notes.push(format!(
        "n=255 m=256 ratio {:.3}; a factor of 6.7 is sometimes quoted for this case and does not follow from the formulas",
        o / u
    ));
    report(&man.finish(&a.common.out_dir, &[t])?);
    Ok(())
}
