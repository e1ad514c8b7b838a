use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;
use trilab_cli::{parse_config_with_overrides, run};

/// Numerical experiments on surfaces with flat two-dimensional leaves.
///
/// Subcommands: geometry check, extend, packets decompose, packets census, table build,
/// table census, counterexample run, recursion iterate, trend run, threshold.
/// Exit status: 0 on success, 2 when an invariant check fails, 1 on any other error.
#[derive(Debug, Parser)]
#[command(name = "trilab", version)]
struct Cli {
    /// Subcommand words, for example `counterexample run`.
    command: Vec<String>,
    /// Flat `key = value` configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Override any configuration key, as `KEY=VALUE`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    surface: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    half_width: Option<String>,
    /// Comma-separated list.
    #[arg(long)]
    epsilons: Option<String>,
    /// Comma-separated list.
    #[arg(long)]
    scales: Option<String>,
    /// Comma-separated list; `a/b` rationals are accepted.
    #[arg(long)]
    exponents: Option<String>,
    #[arg(long)]
    c: Option<String>,
    #[arg(long)]
    c_small: Option<String>,
    #[arg(long)]
    resolution: Option<String>,
    #[arg(long)]
    sample_resolution: Option<String>,
    #[arg(long)]
    samples: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    input: Option<String>,
    #[arg(long)]
    output: Option<String>,
    /// Caps the number of per-tube wave files written.
    #[arg(long)]
    max_tubes: Option<String>,
}

impl Cli {
    fn overrides(&self) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        if !self.command.is_empty() {
            out.push(("subcommand".to_string(), self.command.join(" ")));
        }
        let named = [
            ("surface", &self.surface),
            ("n", &self.n),
            ("k", &self.k),
            ("half_width", &self.half_width),
            ("epsilons", &self.epsilons),
            ("scales", &self.scales),
            ("exponents", &self.exponents),
            ("c", &self.c),
            ("c_small", &self.c_small),
            ("resolution", &self.resolution),
            ("sample_resolution", &self.sample_resolution),
            ("samples", &self.samples),
            ("seed", &self.seed),
            ("input", &self.input),
            ("output", &self.output),
            ("max_tubes", &self.max_tubes),
        ];
        for (key, value) in named {
            if let Some(v) = value {
                out.push((key.to_string(), v.clone()));
            }
        }
        for item in &self.set {
            let (k, v) = item.split_once('=').with_context(|| format!("`--set {item}` is not KEY=VALUE"))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }
}

fn execute(cli: &Cli) -> Result<u8> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().context("cannot size the worker pool")?;
    }
    let text = match &cli.config {
        Some(path) => std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?,
        None => String::new(),
    };
    let cfg = parse_config_with_overrides(&text, &cli.overrides()?)?;
    let outcome = run(&cfg)?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    print!("{}", outcome.stdout);
    for c in outcome.checks.iter().filter(|c| !c.pass) {
        eprintln!("check failed: {} ({})", c.name, c.detail);
    }
    Ok(outcome.exit_code())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match execute(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
