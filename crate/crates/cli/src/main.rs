use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fbe_cli::config::{RunConfig, Scenario};
use fbe_cli::{diagnostics, scenarios};

/// Exit code for configuration errors.
const EXIT_CONFIG: u8 = 2;
/// Exit code for runtime failures (solver errors, I/O).
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "fbe", version, about = "Fuzzy Boltzmann solver and structure audit")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Run the configured scenario (relax by default).
    Run(Common),
    /// Run with recorded fluxes and audit L_T.
    Audit(Common),
    /// Check structure identities, degeneracies and adjointness.
    StructureCheck(Common),
    /// Convert a diagnostics stream into per-quantity CSV tables.
    PlotData {
        /// Diagnostics stream (newline-delimited JSON).
        diagnostics: PathBuf,
        /// Output directory for the tables.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build or validate the cached DVM table.
    DvmTable(Common),
}

#[derive(Args)]
struct Common {
    /// TOML config file; omitted sections take desk-scale defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `solver.dt=0.005` (repeatable).
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self, scenario: Option<Scenario>) -> Result<RunConfig, String> {
        let mut overrides = self.overrides.clone();
        if let Some(s) = scenario {
            let name = match s {
                Scenario::Relax => "relax",
                Scenario::Audit => "audit",
                Scenario::StructureCheck => "structure-check",
            };
            overrides.push(format!("cli.scenario=\"{name}\""));
        }
        if let Some(out) = &self.out {
            overrides.push(format!("cli.out={}", toml::Value::String(out.display().to_string())));
        }
        if let Some(w) = self.workers {
            overrides.push(format!("cli.workers={w}"));
        }
        if let Some(seed) = self.seed {
            overrides.push(format!("cli.seed={seed}"));
        }
        RunConfig::load(self.config.as_deref(), &overrides).map_err(|e| e.to_string())
    }
}

fn init_pool(workers: usize) {
    if workers > 0 {
        // a second initialisation in the same process is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
    }
}

fn scenario(common: &Common, forced: Option<Scenario>) -> ExitCode {
    let cfg = match common.load(forced) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    init_pool(cfg.cli.workers);
    match scenarios::run_scenario(&cfg) {
        Ok(report) => {
            for c in &report.checks {
                println!("{}", c.line());
            }
            ExitCode::from(report.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.verb {
        Verb::Run(c) => scenario(c, None),
        Verb::Audit(c) => scenario(c, Some(Scenario::Audit)),
        Verb::StructureCheck(c) => scenario(c, Some(Scenario::StructureCheck)),
        Verb::PlotData { diagnostics: input, out } => {
            let dir = out.clone().unwrap_or_else(|| input.with_extension("tables"));
            let result = std::fs::File::open(input)
                .map_err(anyhow::Error::from)
                .and_then(|f| diagnostics::read_stream(std::io::BufReader::new(f)))
                .and_then(|records| diagnostics::write_tables(&records, &dir));
            match result {
                Ok(files) => {
                    for f in files {
                        println!("{}", dir.join(f).display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::from(EXIT_RUNTIME)
                }
            }
        }
        Verb::DvmTable(c) => {
            let cfg = match c.load(None) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            init_pool(cfg.cli.workers);
            match scenarios::dvm_table(&cfg) {
                Ok(s) => {
                    println!("{}", serde_json::to_string(&s).expect("summary serialises"));
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::from(EXIT_RUNTIME)
                }
            }
        }
    }
}
