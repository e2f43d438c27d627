use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mixerkit::harness::{cmd_bench, cmd_materialize, cmd_train_toy, cmd_verify, CheckKind, Command, ExitStatus, RunConfig};
use mixerkit::{Family, Mode, MixerError};

#[derive(Parser)]
#[command(name = "mixerkit", version, about = "Verify, benchmark and dump structured sequence mixers")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    family: Option<Family>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long = "L", alias = "len", default_value_t = 16)]
    seq_len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file (directory for `materialize`).
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run verification suites and print a JSON report.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "all")]
        check: CheckKind,
        #[arg(long, default_value_t = 5)]
        instances: usize,
    },
    /// Time the fast paths over a power-of-two sweep and print CSV.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10)]
        min_log2: u32,
        #[arg(long, default_value_t = 16)]
        max_log2: u32,
        #[arg(long, default_value_t = 20)]
        reps: usize,
    },
    /// Write each head's L × L matrix as CSV.
    Materialize {
        #[command(flatten)]
        common: Common,
    },
    /// Train the bidirectional and causal encoders on the masked toy task.
    TrainToy {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 16)]
        vocab: usize,
        #[arg(long, default_value_t = 0.15)]
        mask_rate: f64,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
    },
}

fn config(kind: Command, c: Common) -> RunConfig {
    let mut cfg = RunConfig::new(kind);
    cfg.family = c.family;
    cfg.mode = c.mode;
    cfg.seq_len = c.seq_len;
    cfg.seed = c.seed;
    cfg.output = c.out;
    cfg
}

fn run(cli: Cli) -> Result<ExitStatus, MixerError> {
    match cli.command {
        Cmd::Verify { common, check, instances } => {
            let mut cfg = config(Command::Verify, common);
            cfg.check = check;
            cfg.instances = instances;
            let report = cmd_verify(&cfg)?;
            let json = report.to_json()?;
            match &cfg.output {
                Some(p) => std::fs::write(p, json)?,
                None => println!("{json}"),
            }
            eprint!("{report}");
            Ok(if report.pass { ExitStatus::Pass } else { ExitStatus::CheckFailure })
        }
        Cmd::Bench { common, min_log2, max_log2, reps } => {
            let mut cfg = config(Command::Bench, common);
            cfg.bench_lens = (min_log2..=max_log2).map(|k| 1usize << k).collect();
            cfg.reps = reps;
            let report = cmd_bench(&cfg)?;
            if cfg.output.is_none() {
                print!("{}", report.to_csv());
            }
            Ok(ExitStatus::Pass)
        }
        Cmd::Materialize { common } => {
            let cfg = config(Command::Materialize, common);
            for f in cmd_materialize(&cfg)?.files {
                println!("{}", f.display());
            }
            Ok(ExitStatus::Pass)
        }
        Cmd::TrainToy { common, vocab, mask_rate, steps, lr } => {
            let mut cfg = config(Command::TrainToy, common);
            cfg.toy.vocab = vocab;
            cfg.toy.mask_rate = mask_rate;
            cfg.toy.steps = steps;
            cfg.toy.lr = lr;
            let report = cmd_train_toy(&cfg)?;
            if cfg.output.is_none() {
                print!("{}", report.log_csv());
            }
            for o in [&report.hydra, &report.causal] {
                eprintln!("{}: {} parameters, final masked accuracy {:.4}", o.model, o.parameter_count, o.final_masked_accuracy);
            }
            eprintln!("gap: {:+.1} points", report.gap_points());
            Ok(ExitStatus::Pass)
        }
    }
}

fn main() -> ExitCode {
    let status = run(Cli::parse()).unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitStatus::from_error(&e)
    });
    ExitCode::from(status.code() as u8)
}
