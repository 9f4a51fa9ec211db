use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use reprl::config::{DriverKind, RunConfig};
use reprl::harness::{export_embeddings, oracle_check, run_to_file, sweep};
use reprl::Error;

const PRESETS: [(&str, &str); 4] = [
    ("gridworld-repes", include_str!("../presets/gridworld-repes.toml")),
    ("gridworld-es", include_str!("../presets/gridworld-es.toml")),
    ("sparseline-repes", include_str!("../presets/sparseline-repes.toml")),
    ("gridworld-reppg", include_str!("../presets/gridworld-reppg.toml")),
];

#[derive(Parser)]
#[command(name = "reprl", version, about = "Representation-driven policy search experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one (config, seed) and write its metrics file.
    Run(RunArgs),
    /// Train every seed listed in the config.
    Sweep(RunArgs),
    /// Verify the tabular value identities and the ridge solver.
    OracleCheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Train one run and dump the latent embedding of every stored sample.
    ExportEmbeddings(RunArgs),
    /// Print a shipped preset.
    ShowPreset { name: String },
}

#[derive(Args)]
struct RunArgs {
    /// TOML config file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Name of a shipped preset.
    #[arg(long)]
    preset: Option<String>,
    /// Seed for `run`; replaces the seed list for `sweep`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to `run.out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    driver: Option<String>,
}

enum Failure {
    Config(String),
    Oracle(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } | Error::Parse { .. } => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn preset_text(name: &str) -> Result<&'static str, Failure> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t).ok_or_else(|| {
        let known: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
        Failure::Config(format!("unknown preset `{name}` (known: {})", known.join(", ")))
    })
}

fn load(args: &RunArgs) -> Result<RunConfig, Failure> {
    let text = match (&args.config, &args.preset) {
        (Some(path), _) => std::fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?,
        (None, Some(name)) => preset_text(name)?.to_string(),
        (None, None) => String::new(),
    };
    let mut cfg = RunConfig::from_toml_with_overrides(&text, std::env::vars())?;
    if let Some(r) = args.rounds {
        cfg.run.rounds = r;
    }
    if let Some(d) = &args.driver {
        cfg.run.driver = DriverKind::parse(d)?;
    }
    if let Some(s) = args.seed {
        cfg.run.seeds = vec![s];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(args: &RunArgs, cfg: &RunConfig) -> PathBuf {
    args.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.run.out_dir))
}

fn first_seed(cfg: &RunConfig) -> Result<u64, Failure> {
    cfg.run.seeds.first().copied().ok_or_else(|| Failure::Config("config error at `run.seeds`: no seed given".into()))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    std::fs::write(path, text).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run(args) => {
            let cfg = load(&args)?;
            let (path, _) = run_to_file(&cfg, first_seed(&cfg)?, &out_dir(&args, &cfg))?;
            println!("{}", path.display());
        }
        Command::Sweep(args) => {
            let cfg = load(&args)?;
            for path in sweep(&cfg, &out_dir(&args, &cfg))? {
                println!("{}", path.display());
            }
        }
        Command::ExportEmbeddings(args) => {
            let cfg = load(&args)?;
            let seed = first_seed(&cfg)?;
            let dir = out_dir(&args, &cfg);
            let (_, out) = run_to_file(&cfg, seed, &dir)?;
            let path = dir.join(format!("{}_seed{seed}_embeddings.tsv", cfg.run.driver.name()));
            write_text(&path, &export_embeddings(&out)?)?;
            println!("{}", path.display());
        }
        Command::OracleCheck { seed } => {
            let checks = oracle_check(seed)?;
            let mut failed = 0;
            for c in &checks {
                let tag = if c.passed { "pass" } else { "FAIL" };
                println!("{tag}  {:<56} worst {:.3e} (tol {:.0e})", c.name, c.worst, c.tolerance);
                failed += usize::from(!c.passed);
            }
            if failed > 0 {
                return Err(Failure::Oracle(format!("{failed} of {} checks failed", checks.len())));
            }
        }
        Command::ShowPreset { name } => print!("{}", preset_text(&name)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage errors count as configuration errors, not oracle failures.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Oracle(m)) => {
            eprintln!("oracle check failed: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
