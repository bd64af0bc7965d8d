use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{info, warn};

use mirrorflow::config::{parse_config, RunConfig};
use mirrorflow::data::DataSpec;
use mirrorflow::diagnostics::{prune_eval, run_diagnostics, MetricsRecord, DEFAULT_PRUNE_FRACTIONS};
use mirrorflow::flow;
use mirrorflow::io::{read_metrics_csv, read_params_csv, write_metrics_csv};
use mirrorflow::network::Params;
use mirrorflow::sweep::{self, SweepGrid};
use mirrorflow::Error;

#[derive(Parser)]
#[command(name = "mirrorflow", version, about = "Mirror-descent training and implicit-bias diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset from a TOML generator spec.
    GenData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the teacher network as JSON (circle generator only).
        #[arg(long)]
        teacher_out: Option<PathBuf>,
    },
    /// Train one run and write config.toml, metrics.csv and params.csv.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to runs/<config hash>.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a grid of configs and write a summary table.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, default_value = "sweep")]
        out: PathBuf,
    },
    /// Print a JSON diagnostics report for a finished run.
    Diagnose {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
    },
    /// Print train accuracy after layerwise magnitude pruning.
    Prune {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.5,0.8,0.9")]
        fractions: Vec<f64>,
    },
    /// Render a sweep summary CSV as an aligned table.
    Report {
        #[arg(long)]
        summary: PathBuf,
        /// Also write the summary, with best-margin marks, to this CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

/// An error with the process exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { .. } => 4,
            Error::Divergence { .. } | Error::NonFinite { .. } | Error::RootFind { .. } => 3,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Error::Io { path: path.to_path_buf(), source: e }.into()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MIRRORFLOW_LOG", "warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::GenData { spec, out, teacher_out } => gen_data(&spec, &out, teacher_out.as_deref()),
        Command::Train { config, out } => train(&config, out),
        Command::Sweep { config, grid, jobs, out } => run_sweep(&config, &grid, jobs, &out),
        Command::Diagnose { run, fractions } => diagnose(&run, fractions.as_deref().unwrap_or(&DEFAULT_PRUNE_FRACTIONS)),
        Command::Prune { run, fractions } => prune(&run, &fractions),
        Command::Report { summary, csv } => report(&summary, csv.as_deref()),
    }
}

fn gen_data(spec_path: &Path, out: &Path, teacher_out: Option<&Path>) -> Result<(), Failure> {
    let text = std::fs::read_to_string(spec_path).map_err(|e| io_failure(spec_path, e))?;
    let spec: DataSpec = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", spec_path.display())))?;
    let data = spec.generate()?;
    data.write_csv(out)?;
    info!("wrote {} points to {}", data.len(), out.display());
    if let Some(path) = teacher_out {
        let teacher = spec
            .teacher()?
            .ok_or_else(|| Error::Config("--teacher-out needs the circle generator".into()))?;
        let json = serde_json::to_string_pretty(&teacher).expect("teacher serializes");
        std::fs::write(path, json + "\n").map_err(|e| io_failure(path, e))?;
    }
    Ok(())
}

fn train(config_path: &Path, out: Option<PathBuf>) -> Result<(), Failure> {
    let cfg = parse_config(config_path)?;
    let spec = cfg.run_spec()?;
    let out = out.unwrap_or_else(|| Path::new("runs").join(sweep::config_hash(&cfg)));
    std::fs::create_dir_all(&out).map_err(|e| io_failure(&out, e))?;
    let cfg_path = out.join("config.toml");
    std::fs::write(&cfg_path, cfg.to_toml()).map_err(|e| io_failure(&cfg_path, e))?;
    let traj = flow::run(&spec)?;
    sweep::write_run_artifacts(&out, &traj)?;
    if let Some(csv) = &cfg.output.csv_path {
        write_metrics_csv(csv, &traj.records)?;
    }
    let last = traj.last();
    println!(
        "{}: step {} time {:.6e} log_loss {:.6e} q_margin {:.6e}",
        out.display(),
        last.step,
        last.time,
        last.log_loss,
        last.q_margin
    );
    match traj.halt {
        Some(reason) => Err(Failure {
            code: 3,
            message: reason,
        }),
        None => Ok(()),
    }
}

fn run_sweep(config_path: &Path, grid_path: &Path, jobs: usize, out: &Path) -> Result<(), Failure> {
    let base = parse_config(config_path)?;
    let grid = SweepGrid::read(grid_path)?;
    let runs = sweep::plan(&base, &grid)?;
    info!("sweep of {} runs with {jobs} jobs", runs.len());
    std::fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
    let outcomes = sweep::run_all(runs, Some(out), jobs)?;
    let rows = sweep::summarize(&outcomes);
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    if failed > 0 {
        warn!("{failed} of {} runs did not finish cleanly", rows.len());
    }
    sweep::write_summary_csv(&out.join("summary.csv"), &rows)?;
    print!("{}", sweep::render_table(&rows));
    Ok(())
}

struct RunArtifacts {
    config: RunConfig,
    records: Vec<MetricsRecord>,
    theta: Params,
}

fn load_run(dir: &Path) -> Result<RunArtifacts, Failure> {
    Ok(RunArtifacts {
        config: parse_config(&dir.join("config.toml"))?,
        records: read_metrics_csv(&dir.join("metrics.csv"))?,
        theta: read_params_csv(&dir.join("params.csv"))?,
    })
}

fn diagnose(dir: &Path, fractions: &[f64]) -> Result<(), Failure> {
    let run = load_run(dir)?;
    let cfg = &run.config;
    let report = run_diagnostics(
        &cfg.network()?,
        &cfg.layer_potentials()?,
        &cfg.dataset()?,
        &cfg.margin_options(),
        &run.records,
        &run.theta,
        fractions,
    )?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(())
}

fn prune(dir: &Path, fractions: &[f64]) -> Result<(), Failure> {
    let run = load_run(dir)?;
    let curve = prune_eval(&run.config.network()?, &run.theta, &run.config.dataset()?, fractions)?;
    println!("fraction,train_accuracy");
    for p in curve {
        println!("{},{}", p.fraction, p.train_accuracy);
    }
    Ok(())
}

fn report(summary: &Path, csv: Option<&Path>) -> Result<(), Failure> {
    let rows = sweep::read_summary_csv(summary)?;
    print!("{}", sweep::render_table(&rows));
    if let Some(path) = csv {
        sweep::write_summary_csv(path, &rows)?;
    }
    Ok(())
}
