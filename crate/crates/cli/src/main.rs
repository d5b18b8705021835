use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};

use flocklab::controllers::Controller;
use flocklab::eval::{self, PerCell, Shared, SweepAxis, SweepSpec};
use flocklab::io::report::{self, ReportFile};
use flocklab::io::{plot, Checkpoint, ExperimentConfig, TrajectoryFile};
use flocklab::parallel::ExecMode;
use flocklab::training::{self, rollout, RolloutOptions};

#[derive(Parser)]
#[command(name = "flocklab", version, about = "Flocking experiments with graph neural controllers")]
struct Cli {
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect demonstrations, train with DAGGer, and write a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides training.seed.
        #[arg(long, env = "FLOCKLAB_SEED")]
        seed: Option<u64>,
        #[arg(long, env = "FLOCKLAB_OUT_DIR", default_value = ".")]
        out: PathBuf,
    },
    /// Simulate one initialization and write its trajectory and cost report.
    Rollout {
        #[arg(long)]
        config: PathBuf,
        /// `expert`, `position-based`, or a checkpoint path.
        #[arg(long)]
        controller: String,
        /// Initialization seed; defaults to the first of eval.seeds.
        #[arg(long, env = "FLOCKLAB_SEED")]
        seed: Option<u64>,
        #[arg(long, env = "FLOCKLAB_OUT_DIR", default_value = ".")]
        out: PathBuf,
    },
    /// Evaluate a controller across one axis and write a summary table.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        axis: Axis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// `expert`, `position-based`, or a checkpoint shared by all cells.
        #[arg(long, conflicts_with = "checkpoints")]
        controller: Option<String>,
        /// Directory holding one checkpoint per cell, named `<axis>=<value>.json`.
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        #[arg(long, env = "FLOCKLAB_OUT_DIR", default_value = ".")]
        out: PathBuf,
    },
    /// Render trajectory files or sweep tables as SVG.
    Plot {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Steps marked in trajectory panels; defaults to the first and last.
        #[arg(long, value_delimiter = ',')]
        steps: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print metadata of a config, checkpoint, trajectory, table, or log.
    Inspect { path: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Taps,
    Features,
    VInit,
    Radius,
    Knn,
    TeamSize,
}

impl From<Axis> for SweepAxis {
    fn from(a: Axis) -> Self {
        match a {
            Axis::Taps => SweepAxis::Taps,
            Axis::Features => SweepAxis::Features,
            Axis::VInit => SweepAxis::VInit,
            Axis::Radius => SweepAxis::Radius,
            Axis::Knn => SweepAxis::Knn,
            Axis::TeamSize => SweepAxis::TeamSize,
        }
    }
}

/// An error with the exit code it maps to: 2 for bad input, 1 otherwise.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn usage(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 2,
        error: error.into(),
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure { code: 1, error }
    }
}

impl From<flocklab::Error> for Failure {
    fn from(e: flocklab::Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let exec = if cli.sequential {
        ExecMode::Sequential
    } else {
        ExecMode::Parallel
    };
    let result = match cli.command {
        Command::Train { config, seed, out } => train(&config, seed, &out, exec),
        Command::Rollout {
            config,
            controller,
            seed,
            out,
        } => rollout_cmd(&config, &controller, seed, &out),
        Command::Sweep {
            config,
            axis,
            values,
            controller,
            checkpoints,
            out,
        } => sweep(&config, axis.into(), values, controller, checkpoints, &out, exec),
        Command::Plot { inputs, steps, out } => plot_cmd(&inputs, steps, &out),
        Command::Inspect { path } => inspect(&path),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    ExperimentConfig::load(path).map_err(usage)
}

fn train(config_path: &Path, seed: Option<u64>, out: &Path, exec: ExecMode) -> CmdResult {
    let mut cfg = load_config(config_path)?;
    if let Some(s) = seed {
        cfg.training.seed = s;
    }
    let hash = cfg.hash();
    let outcome = training::train(
        &cfg.training,
        &cfg.scenario(),
        cfg.controller.clone(),
        cfg.perception.clone(),
        exec,
        &mut |e| {
            eprintln!(
                "epoch {:>4}  phase {}  loss {:.5}  grad {:.4}  {:.1}s",
                e.epoch, e.phase, e.loss, e.grad_norm, e.wall_time
            )
        },
    )?;
    for x in &outcome.dataset.excluded {
        eprintln!("excluded rollout seed {} (phase {}): {}", x.seed, x.phase, x.reason);
    }
    let ck = Checkpoint::new(&outcome.network, &hash, &outcome.log);
    let ck_path = out.join("checkpoint.json");
    ck.save(&ck_path)?;
    flocklab::io::write_atomic(
        &out.join("train_log.jsonl"),
        report::training_log_jsonl(&outcome.log, &hash).as_bytes(),
    )?;
    println!("{}", ck_path.display());
    Ok(())
}

/// Resolves a controller argument; the flag is set when a checkpoint was
/// trained under a different config.
fn resolve_controller(arg: &str, cfg: &ExperimentConfig) -> Result<(Controller, bool), Failure> {
    match arg {
        "expert" => Ok((Controller::Expert(cfg.expert.clone()), false)),
        "position-based" => Ok((Controller::PositionBased(cfg.expert.clone()), false)),
        path => {
            let path = Path::new(path);
            let ck = Checkpoint::load(path)
                .with_context(|| format!("loading checkpoint {}", path.display()))
                .map_err(usage)?;
            let net = ck.network().map_err(usage)?;
            let mismatch = ck.config_hash != cfg.hash();
            if mismatch {
                eprintln!(
                    "warning: {} was trained under config {}, running under {}",
                    path.display(),
                    ck.config_hash,
                    cfg.hash()
                );
            }
            Ok((Controller::Learned(Arc::new(net)), mismatch))
        }
    }
}

fn rollout_cmd(config_path: &Path, controller: &str, seed: Option<u64>, out: &Path) -> CmdResult {
    let cfg = load_config(config_path)?;
    let (controller, mismatch) = resolve_controller(controller, &cfg)?;
    let seed = seed.unwrap_or(cfg.eval.seeds[0]);
    let hash = cfg.hash();
    let scenario = cfg.scenario();
    let report = eval::evaluate(&controller, &scenario, seed, cfg.eval.degradation, &hash)?;
    let options = RolloutOptions {
        degradation: cfg.eval.degradation,
        ..RolloutOptions::default()
    };
    let stem = format!("{}_{seed}", controller.name());
    match rollout(&controller, &scenario, seed, &options) {
        Ok(tr) => {
            let mut file = TrajectoryFile::from_trajectory(&tr, &hash);
            file.hash_mismatch = mismatch;
            let p = out.join(format!("trajectory_{stem}.txt"));
            file.save(&p)?;
            println!("{}", p.display());
        }
        Err(e) => eprintln!("rollout diverged, no trajectory written: {e}"),
    }
    let p = out.join(format!("report_{stem}.json"));
    ReportFile::new(vec![report.clone()], &hash).save(&p)?;
    println!("{}", p.display());
    println!(
        "controller {}  seed {}  normalized cost {}  success {}",
        report.controller, report.seed, report.normalized_cost, report.success
    );
    Ok(())
}

fn sweep(
    config_path: &Path,
    axis: SweepAxis,
    values: Vec<f64>,
    controller: Option<String>,
    checkpoints: Option<PathBuf>,
    out: &Path,
    exec: ExecMode,
) -> CmdResult {
    let cfg = load_config(config_path)?;
    let hash = cfg.hash();
    let spec = SweepSpec {
        axis,
        values: values.clone(),
        seeds: cfg.eval.seeds.clone(),
        degradation: cfg.eval.degradation,
    };
    let table = match (controller, checkpoints) {
        (Some(c), None) => {
            let (controller, _) = resolve_controller(&c, &cfg)?;
            eval::run_sweep(&spec, &cfg.scenario(), &Shared(controller), &hash, exec)?
        }
        (None, Some(dir)) => {
            let mut cells = BTreeMap::new();
            for v in &values {
                let key = format!("{}={v}", axis.name());
                let p = dir.join(format!("{key}.json"));
                if p.exists() {
                    let (c, _) = resolve_controller(&p.to_string_lossy(), &cfg)?;
                    cells.insert(key, c);
                }
            }
            eval::run_sweep(&spec, &cfg.scenario(), &PerCell(cells), &hash, exec)?
        }
        _ => return Err(usage(anyhow!("give exactly one of --controller or --checkpoints"))),
    };
    let stem = format!("sweep_{}_{}", axis.name(), table.controller);
    let tsv = out.join(format!("{stem}.tsv"));
    flocklab::io::write_atomic(&tsv, report::sweep_tsv(&table, &hash).as_bytes())?;
    let reports = table.rows.iter().flat_map(|r| r.reports.iter().cloned()).collect();
    ReportFile::new(reports, &hash).save(&out.join(format!("{stem}.json")))?;
    print!("{}", table.to_tsv());
    println!("{}", tsv.display());
    Ok(())
}

enum PlotInput {
    Trajectory(TrajectoryFile),
    Sweep(report::SweepSeries),
}

fn read_plot_input(path: &Path) -> Result<PlotInput, Failure> {
    let text = flocklab::io::read_text(path).map_err(usage)?;
    let ctx = || format!("reading {}", path.display());
    if text.starts_with(flocklab::io::trajectory::TRAJECTORY_MAGIC) {
        Ok(PlotInput::Trajectory(
            TrajectoryFile::parse(&text).with_context(ctx).map_err(usage)?,
        ))
    } else if text.starts_with(report::SWEEP_MAGIC) {
        Ok(PlotInput::Sweep(report::parse_sweep_tsv(&text).with_context(ctx).map_err(usage)?))
    } else {
        Err(usage(anyhow!("{} is neither a trajectory nor a sweep table", path.display())))
    }
}

fn plot_cmd(inputs: &[PathBuf], steps: Vec<usize>, out: &Path) -> CmdResult {
    let mut panels = Vec::new();
    let mut series = Vec::new();
    for p in inputs {
        match read_plot_input(p)? {
            PlotInput::Trajectory(t) => {
                let title = format!("{} (seed {})", t.controller, t.seed);
                panels.push((title, t));
            }
            PlotInput::Sweep(s) => series.push(s),
        }
    }
    let svg = match (panels.is_empty(), series.is_empty()) {
        (false, true) => {
            let steps = if steps.is_empty() {
                let last = panels.iter().map(|(_, t)| t.steps).max().unwrap_or(1).saturating_sub(1);
                vec![0, last]
            } else {
                steps
            };
            plot::trajectory_svg(&panels, &steps)?
        }
        (true, false) => plot::sweep_svg(&series)?,
        _ => return Err(usage(anyhow!("plot either trajectories or sweep tables, not both"))),
    };
    flocklab::io::write_atomic(out, svg.as_bytes())?;
    println!("{}", out.display());
    Ok(())
}

fn inspect(path: &Path) -> CmdResult {
    let text = flocklab::io::read_text(path).map_err(usage)?;
    if text.starts_with(flocklab::io::trajectory::TRAJECTORY_MAGIC) {
        let t = TrajectoryFile::parse(&text).map_err(usage)?;
        println!("kind          trajectory");
        println!("controller    {}", t.controller);
        println!("seed          {}", t.seed);
        println!("agents        {}", t.agents);
        println!("steps         {}", t.steps);
        println!("config_hash   {}", t.config_hash);
        println!("hash_mismatch {}", t.hash_mismatch);
        return Ok(());
    }
    if text.starts_with(report::SWEEP_MAGIC) {
        let s = report::parse_sweep_tsv(&text).map_err(usage)?;
        println!("kind          sweep");
        println!("axis          {}", s.axis);
        println!("controller    {}", s.controller);
        println!("cells         {}", s.points.len());
        println!("config_hash   {}", s.config_hash);
        return Ok(());
    }
    if let Ok(value) = serde_json::from_str::<serde_json::Value>(&text) {
        if value.get("params").is_some() {
            let ck = Checkpoint::from_json(&text).map_err(usage)?;
            let net = ck.network().map_err(usage)?;
            println!("kind          checkpoint v{}", ck.version);
            println!("controller    {}", ck.controller.kind);
            println!("taps          {}", ck.controller.taps);
            println!("features      {}", ck.perception.feature_dim());
            println!("parameters    {} tensors, {} scalars", net.params.len(), net.params.scalar_count());
            println!("epochs        {}", ck.epochs);
            if let Some(l) = ck.final_loss {
                println!("final_loss    {l}");
            }
            println!("config_hash   {}", ck.config_hash);
            return Ok(());
        }
        if let Some(reports) = value.get("reports").and_then(|r| r.as_array()) {
            println!("kind          report");
            println!("reports       {}", reports.len());
            println!("config_hash   {}", value["config_hash"].as_str().unwrap_or(""));
            return Ok(());
        }
    }
    if text.starts_with("{\"format\":\"flocklab-train-log\"") {
        let log = report::parse_training_log(&text).map_err(usage)?;
        println!("kind          training log");
        println!("epochs        {}", log.len());
        if let (Some(first), Some(last)) = (log.first(), log.last()) {
            println!("loss          {} -> {}", first.loss, last.loss);
            println!("wall_time     {:.1}s", last.wall_time);
        }
        return Ok(());
    }
    let cfg = ExperimentConfig::from_toml(&text).map_err(usage)?;
    println!("kind          config");
    println!("agents        {}", cfg.sim.n_agents);
    println!("controller    {}", cfg.controller.kind);
    println!("config_hash   {}", cfg.hash());
    Ok(())
}
