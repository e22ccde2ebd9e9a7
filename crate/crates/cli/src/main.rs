//! `otfs-squint`: run one experiment from a spec file, write its CSV table and
//! a JSON manifest next to it.
//!
//! Seed precedence: `--seed`, then `OTFS_SQUINT_SEED`, then the spec's `seed`,
//! then the built-in default.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use otfs_squint::harness::{metric_names, run_experiment, ResultTable};
use otfs_squint::spec::ExperimentSpec;
use otfs_squint::Error;
use serde_json::json;

pub const SEED_ENV: &str = "OTFS_SQUINT_SEED";

#[derive(Parser, Debug)]
#[command(name = "otfs-squint", version, about = "Wideband MIMO-OTFS doubly-squint experiments")]
struct Cli {
    /// Experiment spec (flat JSON), or a manifest from an earlier run.
    #[arg(long)]
    spec: PathBuf,
    /// CSV output path; the manifest goes to `<out>.manifest.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Worker threads; 0 = one per core.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Start from the full reference dimensions instead of desk scale.
    #[arg(long)]
    full_scale: bool,
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn resolve(cli: &Cli) -> Result<(ExperimentSpec, PathBuf), Error> {
    let mut spec = ExperimentSpec::from_file(&cli.spec, cli.full_scale)?;
    let env_seed = match std::env::var(SEED_ENV) {
        Ok(v) => Some(
            v.trim()
                .parse::<u64>()
                .map_err(|_| Error::Parse(format!("{SEED_ENV}={v} is not an unsigned integer")))?,
        ),
        Err(_) => None,
    };
    if let Some(s) = cli.seed.or(env_seed) {
        spec.seed = s;
    }
    if let Some(t) = cli.trials {
        spec.trials = t;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| spec.output.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(format!("{}.csv", spec.experiment.name())));
    spec.output = Some(out.display().to_string());
    Ok((spec, out))
}

fn log_points(spec: &ExperimentSpec, table: &ResultTable) {
    let names = metric_names(spec);
    for chunk in table.rows.chunks(names.len()) {
        let fields: Vec<String> = chunk
            .iter()
            .map(|r| format!("{}={:.4}", r.metric, r.mean))
            .collect();
        eprintln!(
            "[{}] {}={} trials={} {}",
            spec.experiment,
            spec.sweep.axis.key(),
            chunk[0].sweep_value,
            chunk[0].trials,
            fields.join(" ")
        );
    }
}

fn run(cli: &Cli) -> Result<(), Error> {
    let (spec, out) = resolve(cli)?;
    let table = run_experiment(&spec, cli.threads)?;
    log_points(&spec, &table);
    std::fs::write(&out, table.to_csv()).map_err(|e| Error::Io(format!("{}: {e}", out.display())))?;
    let manifest = json!({
        "spec": spec.to_json(),
        "config_hash": table.config_hash,
        "seed": spec.seed,
        "trials": spec.trials,
        "threads": cli.threads,
        "csv": out.display().to_string(),
        "rows": table.rows.len(),
        "versions": { "otfs-squint": env!("CARGO_PKG_VERSION") },
    });
    let mpath = manifest_path(&out);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&mpath, text + "\n").map_err(|e| Error::Io(format!("{}: {e}", mpath.display())))?;
    eprintln!("wrote {} and {}", out.display(), mpath.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
