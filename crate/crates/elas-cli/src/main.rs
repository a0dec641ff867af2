//! `elas` command line: training, evaluation, ablation sweeps, the
//! activation-memory cost model, and kernel microbenchmarks.

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use elas_core::bench::{bench_pack, bench_sparsify, bench_spmm, BenchReport};
use elas_core::costmodel::{memory_table_csv, memory_table_text, preset};
use elas_core::sparsity::SparsifierKind;
use elas_core::train::{
    ablate, evaluate_checkpoint, resume_training, run_training, TrainConfig, TrainStatus,
};
use std::path::PathBuf;
use std::process::ExitCode;

/// Exit code reported when a training run diverges.
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "elas", version, about = "Desk-scale low-rank + 2:4 sparse training toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a key=value config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override config keys, e.g. --override n_total=500
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Continue from a checkpoint instead of a fresh initialization.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Report eval loss and perplexity for a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Sweep warmup lengths and report final perplexities.
    AblateWarmup {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated warmup step counts, e.g. --list 0,500,1000
        #[arg(long, value_delimiter = ',')]
        list: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep sparsifier variants and report final perplexities.
    AblateSparsifier {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated variants, e.g. naive,soft_weights,soft_activation
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate saved-activation memory for a model preset.
    Costmodel {
        /// Preset name: 60m, 130m, 350m, or 1b
        #[arg(long)]
        preset: String,
        #[arg(long, default_value_t = 2048)]
        seq: usize,
        /// Comma-separated batch sizes
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32,64,128")]
        batches: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run kernel microbenchmarks.
    Bench {
        /// One of: sparsify, spmm, pack
        #[arg(long)]
        op: String,
        /// Problem shape as MxN, e.g. --shape 4096x4096
        #[arg(long)]
        shape: String,
        /// Sparsifier variants for --op sparsify
        #[arg(long, value_delimiter = ',', default_value = "naive")]
        variants: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_overrides(raw: &[String]) -> anyhow::Result<Vec<(String, String)>> {
    raw.iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .with_context(|| format!("override '{s}' is not KEY=VALUE"))
        })
        .collect()
}

fn parse_kinds(raw: &[String]) -> anyhow::Result<Vec<SparsifierKind>> {
    raw.iter()
        .map(|s| SparsifierKind::parse(s).map_err(Into::into))
        .collect()
}

fn parse_shape(s: &str) -> anyhow::Result<(usize, usize)> {
    let (m, n) = s
        .split_once(['x', 'X'])
        .with_context(|| format!("shape '{s}' is not MxN"))?;
    Ok((m.trim().parse()?, n.trim().parse()?))
}

fn write_or_print(out: &Option<PathBuf>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
            println!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn finish_run(status: &TrainStatus, final_ppl: f64) -> ExitCode {
    match status {
        TrainStatus::Completed => {
            println!("status completed, final eval_ppl {final_ppl:.4}");
            ExitCode::SUCCESS
        }
        TrainStatus::Diverged { step } => {
            eprintln!("status diverged at step {step}");
            ExitCode::from(EXIT_DIVERGED)
        }
    }
}

fn bench_csv(reports: &[BenchReport]) -> String {
    let mut text = format!("{}\n", BenchReport::csv_header());
    for r in reports {
        text.push_str(&r.to_csv_line());
        text.push('\n');
    }
    text
}

fn run() -> anyhow::Result<ExitCode> {
    match Cli::parse().command {
        Command::Train { config, overrides, resume } => {
            let (cfg, outcome) = match resume {
                Some(ckpt) => {
                    if !overrides.is_empty() {
                        bail!("--override cannot be combined with --resume; the checkpoint fixes the config");
                    }
                    resume_training(&ckpt)?
                }
                None => {
                    let cfg = TrainConfig::from_file(&config, &parse_overrides(&overrides)?)?;
                    let outcome = run_training(&cfg)?;
                    (cfg, outcome)
                }
            };
            if !cfg.metrics_path.is_empty() {
                println!("metrics written to {}", cfg.metrics_path);
            }
            Ok(finish_run(&outcome.status, outcome.final_eval_ppl()))
        }
        Command::Eval { checkpoint } => {
            let (_, loss, ppl) = evaluate_checkpoint(&checkpoint)?;
            println!("eval_loss {loss:.6}");
            println!("eval_ppl {ppl:.6}");
            Ok(ExitCode::SUCCESS)
        }
        Command::AblateWarmup { config, list, out } => {
            if list.is_empty() {
                bail!("--list must name at least one warmup length");
            }
            let cfg = TrainConfig::from_file(&config, &[])?;
            let rows = ablate::run_warmup_ablation(&cfg, &list)?;
            for row in &rows {
                println!(
                    "warmup {:>6}  final_ppl {}",
                    row.setting,
                    if row.diverged { "NaN (diverged)".to_string() } else { format!("{:.4}", row.final_ppl) }
                );
            }
            if let Some(path) = out {
                ablate::write_warmup_csv(&path, &rows)?;
                println!("wrote {}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::AblateSparsifier { config, variants, out } => {
            let kinds = parse_kinds(&variants)?;
            if kinds.is_empty() {
                bail!("--variants must name at least one sparsifier");
            }
            let cfg = TrainConfig::from_file(&config, &[])?;
            let rows = ablate::run_sparsifier_ablation(&cfg, &kinds)?;
            for row in &rows {
                println!(
                    "{:<16} final_ppl {}",
                    row.setting,
                    if row.diverged { "NaN (diverged)".to_string() } else { format!("{:.4}", row.final_ppl) }
                );
            }
            if let Some(path) = out {
                ablate::write_sparsifier_csv(&path, &rows)?;
                println!("wrote {}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Costmodel { preset: name, seq, batches, out } => {
            let p = preset(&name)?;
            match out {
                Some(path) => {
                    std::fs::write(&path, memory_table_csv(&p, seq, &batches))?;
                    println!("wrote {}", path.display());
                }
                None => print!("{}", memory_table_text(&p, seq, &batches)),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Bench { op, shape, variants, seed, out } => {
            let shape = parse_shape(&shape)?;
            let reports = match op.as_str() {
                "sparsify" => bench_sparsify(&[shape], &parse_kinds(&variants)?, seed)?,
                "spmm" => bench_spmm(&[shape], seed)?,
                "pack" => bench_pack(&[shape], seed)?,
                other => bail!("unknown bench op '{other}' (expected sparsify, spmm, or pack)"),
            };
            write_or_print(&out, &bench_csv(&reports))?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
