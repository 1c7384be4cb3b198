use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tpa_core::attack::AttackKind;
use tpa_core::harness::{self, ExperimentConfig, Role};
use tpa_core::kv::KvFile;
use tpa_core::{Error, Result};

/// Transferable-adversarial-example lab: data, training, attacks, transfer
/// evaluation and bound checks.
#[derive(Parser, Debug)]
#[command(name = "tpa-lab", version)]
struct Cli {
    /// Flat key=value config file (pixel units for distances).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; overrides `seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,

    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Extra config entries, e.g. `--set attack.tpa.lambda=1`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the dataset and split manifest.
    GenData {
        #[arg(long)]
        n_per_class: Option<usize>,
    },
    /// Train the proxy or target model.
    Train {
        /// Directory holding dataset.csv and split.json.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        role: String,
    },
    /// Attack a checkpoint over the eval split.
    Attack {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        attack: String,
        #[arg(long)]
        lambda: Option<f64>,
        /// L∞ radius in pixel units.
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        targeted: bool,
    },
    /// Score attack results against target checkpoints.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        /// `attack_<kind>.json` files.
        #[arg(long = "results", required = true, num_args = 1..)]
        results: Vec<PathBuf>,
        #[arg(long = "target", required = true, num_args = 1..)]
        targets: Vec<PathBuf>,
    },
    /// Evaluate the transfer bound for one attack result.
    Bound {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        proxy: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        results: PathBuf,
    },
    /// Write the sin(x²) landscape CSV and print both argmins.
    DemoSin {
        #[arg(long, default_value_t = 0.5)]
        x_min: f64,
        #[arg(long, default_value_t = 3.0)]
        x_max: f64,
        #[arg(long, default_value_t = 10_000)]
        n_points: usize,
    },
    /// Run the whole pipeline into --out.
    Run,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config { .. } | Error::Argument(_) => 2,
        Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::Format(_) => 3,
        _ => 1,
    }
}

fn load_config(cli: &Cli, extra: &[(&str, String)]) -> Result<ExperimentConfig> {
    let mut kv = match &cli.config {
        Some(path) => KvFile::parse(&fs::read_to_string(path)?)?,
        None => KvFile::default(),
    };
    for entry in &cli.overrides {
        let (key, value) = entry.split_once('=').ok_or_else(|| Error::Config {
            line: 0,
            key: entry.clone(),
            message: "expected KEY=VALUE".into(),
        })?;
        kv.set(key.trim(), value.trim());
    }
    if let Some(seed) = cli.seed {
        kv.set("seed", seed);
    }
    for (key, value) in extra {
        kv.set(key, value);
    }
    ExperimentConfig::from_kv(&kv)
}

fn parse_kind(s: &str) -> Result<AttackKind> {
    s.parse().map_err(|_| Error::Config {
        line: 0,
        key: "attack".into(),
        message: format!("unknown attack kind `{s}`"),
    })
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn execute(cli: &Cli) -> Result<()> {
    let out: &Path = &cli.out;
    match &cli.command {
        Command::GenData { n_per_class } => {
            let extra: Vec<_> = n_per_class
                .iter()
                .map(|n| ("data.n_per_class", n.to_string()))
                .collect();
            let cfg = load_config(cli, &extra)?;
            let m = harness::gen_data(&cfg, out)?;
            println!(
                "{} examples, dim {}, {} classes",
                m.n_examples, m.dim, m.n_classes
            );
        }
        Command::Train { data, role } => {
            let role: Role = role.parse()?;
            let cfg = load_config(cli, &[])?;
            let t = harness::train_role(&cfg, data, role, out)?;
            print_json(&t.report)?;
        }
        Command::Attack {
            data,
            model,
            attack,
            lambda,
            epsilon,
            iterations,
            targeted,
        } => {
            let kind = parse_kind(attack)?;
            let mut extra = Vec::new();
            if let Some(l) = lambda {
                extra.push(("attack.tpa.lambda", l.to_string()));
            }
            if let Some(e) = epsilon {
                extra.push(("attack.epsilon", e.to_string()));
            }
            if let Some(n) = iterations {
                extra.push(("attack.iterations", n.to_string()));
            }
            if *targeted {
                extra.push(("attack.targeted", "true".into()));
            }
            let cfg = load_config(cli, &extra)?;
            let r = harness::attack_cmd(&cfg, data, model, kind, out)?;
            print_json(&r.summary)?;
        }
        Command::Evaluate {
            data,
            results,
            targets,
        } => {
            let report = harness::evaluate_cmd(data, results, targets, out)?;
            for e in &report.entries {
                let asr = e
                    .asr
                    .map(|a| format!("{a:.4}"))
                    .unwrap_or_else(|| "undefined".into());
                println!(
                    "{} -> {} [{}]: {}/{} ({asr})",
                    e.proxy, e.target, e.attack, e.successes, e.eligible
                );
            }
        }
        Command::Bound {
            data,
            proxy,
            target,
            results,
        } => {
            let cfg = load_config(cli, &[])?;
            let b = harness::bound_cmd(&cfg, data, proxy, target, results, out)?;
            let r = &b.report;
            println!(
                "lhs {:.6} rhs {:.6} holds {}; second claim on {}/{} A4 examples",
                r.mean_sq_transfer_gap,
                r.rhs_total,
                r.first_claim_holds,
                r.second_claim_holds_where_a4,
                r.a4_examples
            );
        }
        Command::DemoSin {
            x_min,
            x_max,
            n_points,
        } => {
            let d = harness::demo_sin_cmd(*x_min, *x_max, *n_points, out)?;
            println!("argmin y1: x = {}", d.x[d.argmin_y1]);
            println!("argmin y3: x = {}", d.x[d.argmin_y3]);
        }
        Command::Run => {
            let cfg = load_config(cli, &[])?;
            let p = harness::run_pipeline(&cfg, out)?;
            for e in &p.transfer.entries {
                let asr = e
                    .asr
                    .map(|a| format!("{a:.4}"))
                    .unwrap_or_else(|| "undefined".into());
                println!(
                    "{} -> {} [{}]: {}/{} ({asr})",
                    e.proxy, e.target, e.attack, e.successes, e.eligible
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match harness::with_threads(cli.threads, || execute(&cli)).and_then(|r| r) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("tpa-lab: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
