//! `specsim`: runs sweep scenarios and writes their artifacts.
//!
//! A scenario is a TOML file (or a shipped preset) describing one experiment:
//! base hardware/model/deployment tables plus swept axes. `run` evaluates it
//! and writes the requested tables, heatmaps, curves, and a JSON summary into
//! the output directory; `validate` loads configurations and reports every
//! violation instead of stopping at the first; `list-presets` names the
//! scenarios compiled into the binary.
//!
//! Exit codes: 0 success, 1 invalid configuration, 2 runtime failure.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use specsim_core::sweep::{
    emit_heatmap, emit_occupancy_csv, emit_summary_json, emit_table, emit_timeline_csv,
    preset_names, run_scenario, validate_config, OutputKind, Scenario, SweepError, TableFormat,
};

/// Environment variable consulted for the artifact directory when `--out-dir`
/// is absent; the flag wins over the variable, the variable over `./out`.
const OUT_DIR_ENV: &str = "SPECSIM_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "out";

#[derive(Parser)]
#[command(name = "specsim", version, about = "Speculative-decoding performance simulator for RL post-training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its artifacts.
    Run {
        /// Shipped preset name, or path to a scenario TOML file.
        scenario: String,
        /// Override the seed stored in the scenario.
        #[arg(long)]
        seed: Option<u64>,
        /// Artifact directory [default: $SPECSIM_OUT_DIR or ./out].
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Worker threads for cell evaluation [default: all cores].
        #[arg(long)]
        threads: Option<usize>,
        /// Table artifact format.
        #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
        format: FormatArg,
    },
    /// Check scenario files and report every violation found.
    Validate {
        /// Preset names or paths to scenario TOML files.
        #[arg(required = true)]
        configs: Vec<String>,
    },
    /// List the scenario presets compiled into the binary.
    ListPresets,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    /// RFC-4180 CSV.
    Csv,
    /// Fixed-width aligned text.
    Text,
}

impl FormatArg {
    fn table_format(self) -> TableFormat {
        match self {
            FormatArg::Csv => TableFormat::Csv,
            FormatArg::Text => TableFormat::AlignedText,
        }
    }

    fn extension(self) -> &'static str {
        match self {
            FormatArg::Csv => "csv",
            FormatArg::Text => "txt",
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}

/// 1 for problems the user fixes in a configuration file, 2 for everything
/// else (I/O, internal failures).
fn classify(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<SweepError>() {
        Some(
            SweepError::Parse(_) | SweepError::UnknownPreset(_) | SweepError::InvalidConfig(_),
        ) => 1,
        _ => 2,
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run { scenario, seed, out_dir, threads, format } => {
            cmd_run(&scenario, seed, out_dir, threads, format)
        }
        Command::Validate { configs } => cmd_validate(&configs),
        Command::ListPresets => {
            for name in preset_names() {
                println!("{name}");
            }
            Ok(())
        }
    }
}

/// An existing file path wins; otherwise the argument is looked up among the
/// shipped presets.
fn load_scenario(arg: &str) -> Result<Scenario, SweepError> {
    let path = Path::new(arg);
    if path.exists() {
        let text = fs::read_to_string(path)?;
        Scenario::from_toml_str(&text)
    } else {
        Scenario::preset(arg)
    }
}

fn cmd_run(
    scenario_arg: &str,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    threads: Option<usize>,
    format: FormatArg,
) -> anyhow::Result<()> {
    let mut scenario =
        load_scenario(scenario_arg).with_context(|| format!("loading {scenario_arg:?}"))?;
    if let Some(seed) = seed {
        scenario.spec.seed = seed;
    }

    let result = match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .context("building thread pool")?;
            pool.install(|| run_scenario(&scenario))?
        }
        None => run_scenario(&scenario)?,
    };

    let out_dir = resolve_out_dir(out_dir);
    fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;

    let name = &result.scenario_name;
    write_artifact(&out_dir, &format!("{name}_summary.json"), |w| emit_summary_json(&result, w))?;
    for output in &scenario.spec.outputs {
        match output {
            OutputKind::Table => {
                let file_name = format!("{name}_table.{}", format.extension());
                write_artifact(&out_dir, &file_name, |w| {
                    emit_table(&result, format.table_format(), w)
                })?;
            }
            OutputKind::Heatmap => {
                // Presence and field validity are enforced by validation.
                let Some(heatmap) = scenario.spec.heatmap.as_ref() else { continue };
                for field in &heatmap.values {
                    let file_name = format!("{name}_heatmap_{field}.svg");
                    write_artifact(&out_dir, &file_name, |w| {
                        emit_heatmap(&result, &heatmap.x, &heatmap.y, field, w)
                    })?;
                }
            }
            OutputKind::Curve => {
                for curve in &result.occupancy_curves {
                    let file_name = format!("{name}_occupancy_{}.csv", curve.label);
                    write_artifact(&out_dir, &file_name, |w| {
                        emit_occupancy_csv(&curve.samples, w)
                    })?;
                }
                for timeline in &result.timelines {
                    let file_name = format!("{name}_timeline_{}.csv", timeline.label);
                    write_artifact(&out_dir, &file_name, |w| {
                        emit_timeline_csv(&timeline.spans, w)
                    })?;
                }
            }
        }
    }

    let feasible = result.cells.iter().filter(|c| c.feasible).count();
    println!(
        "{name}: {} cells, {feasible} feasible, seed {}, config {}",
        result.cells.len(),
        result.provenance.seed,
        &result.provenance.config_sha256[..12],
    );
    Ok(())
}

fn cmd_validate(configs: &[String]) -> anyhow::Result<()> {
    let mut violations = Vec::new();
    for arg in configs {
        match load_scenario(arg) {
            Ok(scenario) => {
                let found = validate_config(&scenario);
                if found.is_empty() {
                    println!("{arg}: ok");
                } else {
                    violations.extend(found.into_iter().map(|v| format!("{arg}: {v}")));
                }
            }
            Err(err) => violations.push(format!("{arg}: {err}")),
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(SweepError::InvalidConfig(violations).into())
    }
}

fn resolve_out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn write_artifact<F>(dir: &Path, file_name: &str, write: F) -> anyhow::Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<(), SweepError>,
{
    let path = dir.join(file_name);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    let mut writer = BufWriter::new(file);
    write(&mut writer)?;
    writer.flush().with_context(|| format!("flushing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}
