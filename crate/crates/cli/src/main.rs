use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use itlm_cli::commands::{itlm_product, Reference, Stage};
use itlm_cli::{cmd_climo, cmd_eval, cmd_infer, cmd_synth, cmd_train, CliError, CliResult, Ctx, RunConfig};

#[derive(Parser)]
#[command(name = "itlm", version, about = "Transfer-learning cloud retrieval lab on synthetic thermal-infrared scenes")]
struct Cli {
    /// Run configuration (JSON); defaults apply to absent keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding io.out_dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Dataset seed, overriding scenegen.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Replace outputs that conflict with the configuration.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate train and test scenes.
    Synth,
    /// Train models: pretrain, finetune, suite (both) or rf.
    Train {
        #[arg(long, default_value = "suite")]
        stage: String,
    },
    /// Retrieve the test scenes.
    Infer {
        /// Weights to use: pretrain or finetune.
        #[arg(long, default_value = "finetune")]
        stage: String,
        /// Also run the random-forest baseline.
        #[arg(long)]
        with_rf: bool,
    },
    /// Score predictions against truth, source, target or track.
    Eval {
        #[arg(long, default_value = "truth")]
        reference: String,
    },
    /// Cloud climatology of the test-scene retrievals.
    Climo {
        /// Weights whose predictions to use: pretrain or finetune.
        #[arg(long, default_value = "finetune")]
        stage: String,
    },
    /// Print the default configuration.
    Defaults,
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads: must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.scenegen.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.io.out_dir = o.clone();
    }
    cfg.validate()?;
    let mut ctx = Ctx::new(cfg);
    ctx.force = cli.force;
    match cli.cmd {
        Cmd::Synth => {
            let idx = cmd_synth(&ctx)?;
            println!("wrote {} train and {} test scenes to {}", idx.train.len(), idx.test.len(), ctx.out.display());
        }
        Cmd::Train { stage } => cmd_train(&ctx, Stage::parse(&stage)?)?,
        Cmd::Infer { stage, with_rf } => {
            let t = cmd_infer(&ctx, Stage::parse(&stage)?, with_rf)?;
            println!("itlm_s {:.3}", t.itlm_s);
            if let (Some(r), Some(x)) = (t.rf_s, t.rf_over_itlm) {
                println!("rf_s {r:.3} (rf/itlm {x:.2})");
            }
        }
        Cmd::Eval { reference } => {
            let out = cmd_eval(&ctx, Reference::parse(&reference)?)?;
            println!("{}", serde_json::to_string_pretty(&summary(&out)).expect("serializes"));
        }
        Cmd::Climo { stage } => {
            let s = cmd_climo(&ctx, itlm_product(Stage::parse(&stage)?))?;
            println!("climatology of {} steps over {} region pixels", s.steps, s.region_pixels);
        }
        Cmd::Defaults => print!("{}", RunConfig::default().to_json()),
    }
    Ok(())
}

/// Per product, the variable scores without histograms.
fn summary(out: &itlm_cli::commands::EvalOutput) -> serde_json::Value {
    out.products
        .iter()
        .map(|p| (p.report.product.clone(), serde_json::to_value(&p.report.variables).expect("serializes")))
        .collect::<serde_json::Map<_, _>>()
        .into()
}

fn main() -> ExitCode {
    itlm_cli::tune_allocator();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ITLM_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
