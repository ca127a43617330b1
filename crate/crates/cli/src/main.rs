//! `spikeseq`: every experiment as a subcommand, writing CSV.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub const OUT_DIR_ENV: &str = "SPIKESEQ_OUT_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "spikeseq",
    version,
    about = "Rank-order spike codes, sequence memory and positional-encoding experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, env = OUT_DIR_ENV, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Phase identity and gram matrices of sinusoidal vs spike-timing encodings.
    ///
    /// Writes isomorphism.csv `p,q,pe_dot,stpe_dot`, profile.csv
    /// `encoding,delta,mean_dot` and isomorphism_report.csv `metric,value`.
    Isomorphism(commands::IsomorphismArgs),
    /// Train the copy-task transformer with one positional encoding.
    ///
    /// Writes copytask_<encoding>_seed<seed>.csv `step,encoding,seed,bpc`.
    Copytask(commands::CopytaskArgs),
    /// Copy task under several encodings and seeds, with a summary table.
    ///
    /// Writes one training log per run plus ablation.csv
    /// `encoding,seed,final_bpc,converged,convergence_step`.
    Ablation(commands::AblationArgs),
    /// Burst propagation through deep spiking layers.
    ///
    /// Default: one run, burst.csv `layer,spike_count,dispersion`.
    /// `--find-threshold`: bisection, burst_threshold.csv `iteration,lo,hi`.
    /// `--sweep`: burst_sweep.csv `theta,connectivity,seed,regime,stable_dispersion`.
    Burst(commands::BurstArgs),
    /// Learn sequences from a text file in one pass and recall them.
    ///
    /// Writes seqdemo.csv `sequence,step,predicted_symbol,margin,confidence`.
    Seqdemo(commands::SeqdemoArgs),
    /// One-shot storage capacity of the sequence machine.
    ///
    /// Writes capacity.csv `sequences,seed,correct,total,accuracy`.
    Capacity(commands::CapacityArgs),
    /// Top-1 winner-take-all vs softmax argmax key selection.
    ///
    /// Writes attncompare.csv `trial,softmax_argmax,wta_argmax,agree`.
    Attncompare(commands::AttncompareArgs),
    /// Information carried by ordered vs unordered N-of-M codes.
    ///
    /// Writes infobits.csv `n,m,ordered_bits,unordered_bits,ratio`.
    Infobits(commands::InfobitsArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Isomorphism(a) => commands::isomorphism(a),
        Command::Copytask(a) => commands::copytask(a),
        Command::Ablation(a) => commands::ablation(a),
        Command::Burst(a) => commands::burst(a),
        Command::Seqdemo(a) => commands::seqdemo(a),
        Command::Capacity(a) => commands::capacity(a),
        Command::Attncompare(a) => commands::attncompare(a),
        Command::Infobits(a) => commands::infobits(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {}", msg.replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
