//! `nnpso`: PSO training, gain-schedule fitting, single episodes and
//! experiment sweeps for landing a multirotor on a moving boat.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use nnpso_core::config::{ControllerMode, RunConfig, ScenarioConfig};
use nnpso_core::controller::{ControllerParams, GainSource};
use nnpso_core::experiments::{self, assess, ExperimentId, ExperimentReport, Verdict};
use nnpso_core::mission::{run_episode, save_trajectory, Outcome};
use nnpso_core::mlp::{self, GainSchedule};
use nnpso_core::pso::write_history_csv;
use nnpso_core::training::{self, read_params_csv, read_table_csv, train_cell, train_descend, train_grid};

/// Highest normalised MSE and per-point relative error a schedule may keep.
const MAX_FIT_MSE: f64 = 1e-3;
const MAX_FIT_RELATIVE_ERROR: f64 = 0.05;

#[derive(Parser, Debug)]
#[command(name = "nnpso", version, about = "NN-PSO gain synthesis and landing experiments")]
struct Cli {
    /// Run configuration (TOML, dotted keys). Every key is optional.
    #[arg(long, short, global = true, env = "NNPSO_CONFIG")]
    config: Option<PathBuf>,

    /// Overrides `paths.out_dir`.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RegimeArg {
    Descend,
    Track,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ControllerArg {
    Scheduled,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ExperimentArg {
    AdaptiveVsConstant,
    RampDuration,
    MarkerMode,
    MaxSpeed,
}

impl From<ExperimentArg> for ExperimentId {
    fn from(e: ExperimentArg) -> Self {
        match e {
            ExperimentArg::AdaptiveVsConstant => ExperimentId::AdaptiveVsConstant,
            ExperimentArg::RampDuration => ExperimentId::RampDuration,
            ExperimentArg::MarkerMode => ExperimentId::MarkerMode,
            ExperimentArg::MaxSpeed => ExperimentId::MaxSpeed,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tune controller parameters with PSO.
    PsoTrain {
        /// descend: (K_P, K_I, K_D, alpha) on a static boat; track: (K_P, K_I, K_D, beta).
        #[arg(long, value_enum, default_value = "descend")]
        regime: RegimeArg,
        /// Train every (altitude, speed) cell of `training.altitudes` x `training.speeds`.
        #[arg(long)]
        grid: bool,
        /// Overrides `pso.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Spawn height above the deck for a single track cell, m.
        #[arg(long, default_value_t = 3.0)]
        altitude: f64,
        /// Boat speed for a single track cell, m/s.
        #[arg(long, default_value_t = 1.45)]
        speed: f64,
    },
    /// Fit the gain-schedule network to a grid table.
    NnTrain {
        /// Gain table; defaults to `paths.table`.
        #[arg(long)]
        table: Option<PathBuf>,
        /// Output schedule; defaults to `paths.schedule`.
        #[arg(long)]
        schedule: Option<PathBuf>,
        /// Overrides `nn.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fly one full mission and write its trajectory.
    Simulate {
        /// Scenario file (TOML); a static boat with the drone 3 m above it when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Overrides `controller.mode` from the scenario.
        #[arg(long, value_enum)]
        controller: Option<ControllerArg>,
        /// Overrides `controller.kp` (scenario default 1.0).
        #[arg(long)]
        kp: Option<f64>,
        /// Overrides `controller.ki` (scenario default 0.0).
        #[arg(long)]
        ki: Option<f64>,
        /// Overrides `controller.kd` (scenario default 0.0).
        #[arg(long)]
        kd: Option<f64>,
        /// Ramp duration in s; overrides `controller.beta` (scenario default 1.0).
        #[arg(long)]
        beta: Option<f64>,
        /// Descent slope; defaults to `training.alpha`, then the descending-regime result.
        #[arg(long)]
        alpha: Option<f64>,
        /// Observation noise seed; overrides the scenario's.
        #[arg(long)]
        seed: Option<u64>,
        /// Trajectory CSV; defaults to `<out_dir>/trajectory.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an experiment matrix over `experiment.seeds`.
    Sweep {
        #[arg(long, value_enum)]
        experiment: ExperimentArg,
        /// Overrides `pso.seed` for the tuning done inside the sweep.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check saved reports and the schedule fit against their thresholds.
    Eval {
        /// Experiments to check; all four when omitted.
        #[arg(long, value_enum)]
        experiment: Vec<ExperimentArg>,
    },
    /// Print the effective configuration with every default filled in.
    DumpConfig,
}

/// A run that completed but missed an acceptance threshold.
#[derive(Debug)]
struct ThresholdMissed;

impl std::fmt::Display for ThresholdMissed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("acceptance threshold not met")
    }
}

impl std::error::Error for ThresholdMissed {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<ThresholdMissed>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(dir) = &cli.out_dir {
        cfg.paths.out_dir = dir.clone();
    }
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::PsoTrain {
            regime,
            grid,
            seed,
            altitude,
            speed,
        } => {
            if let Some(s) = seed {
                cfg.pso.seed = s;
            }
            pso_train(&cfg, regime, grid, altitude, speed)
        }
        Command::NnTrain { table, schedule, seed } => {
            if let Some(s) = seed {
                cfg.nn.seed = s;
            }
            let table = table.unwrap_or_else(|| cfg.paths.table.clone());
            let schedule = schedule.unwrap_or_else(|| cfg.paths.schedule.clone());
            nn_train(&cfg, &table, &schedule)
        }
        Command::Simulate {
            scenario,
            controller,
            kp,
            ki,
            kd,
            beta,
            alpha,
            seed,
            out,
        } => {
            let mut sc = match &scenario {
                Some(path) => ScenarioConfig::load(path)?,
                None => ScenarioConfig::default(),
            };
            if let Some(c) = controller {
                sc.controller.mode = match c {
                    ControllerArg::Scheduled => ControllerMode::Scheduled,
                    ControllerArg::Constant => ControllerMode::Constant,
                };
            }
            let c = &mut sc.controller;
            for (slot, value) in [(&mut c.kp, kp), (&mut c.ki, ki), (&mut c.kd, kd), (&mut c.beta, beta)] {
                if let Some(v) = value {
                    *slot = v;
                }
            }
            if alpha.is_some() {
                c.alpha = alpha;
            }
            if seed.is_some() {
                sc.noise_seed = seed;
            }
            let out = out.unwrap_or_else(|| cfg.paths.out_dir.join("trajectory.csv"));
            simulate(&cfg, &sc, &out)
        }
        Command::Sweep { experiment, seed } => {
            if let Some(s) = seed {
                cfg.pso.seed = s;
            }
            sweep(&cfg, experiment.into())
        }
        Command::Eval { experiment } => {
            let ids: Vec<ExperimentId> = if experiment.is_empty() {
                ExperimentId::ALL.to_vec()
            } else {
                experiment.into_iter().map(Into::into).collect()
            };
            eval(&cfg, &ids)
        }
        Command::DumpConfig => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
    }
}

/// Alpha from the config, else the saved descending result, else a fresh
/// descending run.
fn resolve_alpha(cfg: &RunConfig) -> Result<f64> {
    if let Some(a) = cfg.training.alpha {
        return Ok(a);
    }
    let path = &cfg.paths.descend;
    if path.exists() {
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let (params, _) = read_params_csv(file, &path.display().to_string())?;
        info!("alpha {:.4} from {}", params.alpha, path.display());
        return Ok(params.alpha);
    }
    info!("{} not found; training the descending regime for alpha", path.display());
    Ok(train_descend(&cfg.settings(), &cfg.training, &cfg.pso)?.params.alpha)
}

fn load_schedule(cfg: &RunConfig) -> Result<Arc<GainSchedule>> {
    let path = &cfg.paths.schedule;
    if !path.exists() {
        bail!(
            "schedule file {} not found; run `nnpso pso-train --regime track --grid` and then `nnpso nn-train` first",
            path.display()
        );
    }
    Ok(Arc::new(GainSchedule::load(path)?))
}

fn pso_train(cfg: &RunConfig, regime: RegimeArg, grid: bool, altitude: f64, speed: f64) -> Result<()> {
    let settings = cfg.settings();
    let out_dir = &cfg.paths.out_dir;
    match (regime, grid) {
        (RegimeArg::Descend, true) => bail!("--grid applies to the track regime only"),
        (RegimeArg::Descend, false) => {
            let result = train_descend(&settings, &cfg.training, &cfg.pso)?;
            training::write_params_csv(&result.params, result.pso.gbest_cost, create(&cfg.paths.descend)?)?;
            let conv = out_dir.join("descend_convergence.csv");
            write_history_csv(&result.pso.history, create(&conv)?)?;
            let p = result.params;
            let c = &result.best_episode.cost;
            println!(
                "descend: K_P {:.4} K_I {:.4} K_D {:.4} alpha {:.4}  cost {:.4}",
                p.kp, p.ki, p.kd, p.alpha, result.pso.gbest_cost
            );
            println!(
                "best episode: {}  d {:.4} m  T_land {:.2} s  nu {:.4} m/s",
                result.best_episode.outcome, c.d, c.t_land, c.nu
            );
            println!("wrote {} and {}", cfg.paths.descend.display(), conv.display());
        }
        (RegimeArg::Track, false) => {
            let alpha = resolve_alpha(cfg)?;
            let cell = train_cell(&settings, &cfg.training, &cfg.pso, alpha, altitude, speed)?;
            let table = out_dir.join("track.csv");
            let conv = out_dir.join("track_convergence.csv");
            training::write_table_csv(&[cell.row], create(&table)?)?;
            write_history_csv(&cell.history, create(&conv)?)?;
            let r = cell.row;
            println!(
                "track h={} v={}: K_P {:.4} K_I {:.4} K_D {:.4} beta {:.4}  cost {:.4}  {}",
                r.h, r.v, r.kp, r.ki, r.kd, r.beta, r.cost, r.outcome
            );
            println!("wrote {} and {}", table.display(), conv.display());
        }
        (RegimeArg::Track, true) => {
            let mut tcfg = cfg.training.clone();
            tcfg.alpha = Some(resolve_alpha(cfg)?);
            let cells = train_grid(&settings, &tcfg, &cfg.pso)?;
            let rows: Vec<_> = cells.iter().map(|c| c.row).collect();
            training::write_table_csv(&rows, create(&cfg.paths.table)?)?;
            let conv = out_dir.join("grid_convergence.csv");
            training::write_grid_history_csv(&cells, create(&conv)?)?;
            let landed = rows.iter().filter(|r| r.outcome == Outcome::Landed).count();
            println!("grid: {landed} of {} cells landed", rows.len());
            println!("wrote {} and {}", cfg.paths.table.display(), conv.display());
        }
    }
    Ok(())
}

fn nn_train(cfg: &RunConfig, table: &Path, schedule_path: &Path) -> Result<()> {
    let file = File::open(table).with_context(|| format!("opening gain table {}", table.display()))?;
    let rows = read_table_csv(file, &table.display().to_string())?;
    if rows.is_empty() {
        bail!("{}: table has no rows", table.display());
    }
    let xs: Vec<Vec<f64>> = rows.iter().map(|r| r.input()).collect();
    let ys: Vec<Vec<f64>> = rows.iter().map(|r| r.output()).collect();
    let (schedule, report) = mlp::train(&xs, &ys, &cfg.nn)?;
    if let Some(parent) = schedule_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    schedule.save(schedule_path)?;
    let report_path = cfg.paths.out_dir.join("nn_report.csv");
    mlp::write_train_report_csv(&report, &xs, create(&report_path)?)?;
    let worst = report.max_relative_error();
    println!(
        "nn: {} epochs, normalised mse {:.3e}, max relative error {:.4}",
        report.epochs, report.final_mse, worst
    );
    println!("wrote {} and {}", schedule_path.display(), report_path.display());
    let verdict = fit_verdict(report.final_mse, worst);
    println!("{verdict}");
    if verdict.passed {
        Ok(())
    } else {
        Err(ThresholdMissed.into())
    }
}

fn fit_verdict(mse: f64, worst: f64) -> Verdict {
    Verdict {
        name: "schedule fit".into(),
        passed: mse <= MAX_FIT_MSE && worst <= MAX_FIT_RELATIVE_ERROR,
        detail: format!(
            "mse {mse:.3e} (need <= {MAX_FIT_MSE:e}), max relative error {worst:.4} (need <= {MAX_FIT_RELATIVE_ERROR})"
        ),
    }
}

fn simulate(cfg: &RunConfig, sc: &ScenarioConfig, out: &Path) -> Result<()> {
    let settings = cfg.settings();
    let alpha = match sc.controller.alpha {
        Some(a) => a,
        None => resolve_alpha(cfg)?,
    };
    let gains = match sc.controller.mode {
        ControllerMode::Constant => {
            let p = sc.constant_params(alpha);
            p.validate()?;
            GainSource::Constant(p)
        }
        ControllerMode::Scheduled => GainSource::Scheduled {
            schedule: load_schedule(cfg)?,
            alpha,
        },
    };
    let spec = sc.episode(&settings, gains)?;
    let result = run_episode(&spec);
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    save_trajectory(&result.log, out)?;
    let c = &result.cost;
    println!("outcome      {}", result.outcome);
    if let Some(f) = &result.fault {
        println!("fault        {f}");
    }
    println!("d            {:.4} m", c.d);
    println!("T_land       {:.3} s", c.t_land);
    println!("nu           {:.4} m/s", c.nu);
    println!("a_z          {:.4} m/s^2", c.a_z);
    println!("roll rate    {:.4}", c.roll_rate_integral);
    println!("pitch rate   {:.4}", c.pitch_rate_integral);
    println!("penalty      {:.1}", c.penalty);
    println!("F            {:.4}", c.total);
    println!("marker loss  {}", result.marker_loss_events);
    println!("wrote {}", out.display());
    Ok(())
}

fn report_paths(out_dir: &Path, id: ExperimentId) -> [PathBuf; 3] {
    [
        out_dir.join(format!("{id}.csv")),
        out_dir.join(format!("{id}_summary.csv")),
        out_dir.join(format!("{id}_metrics.csv")),
    ]
}

fn sweep(cfg: &RunConfig, id: ExperimentId) -> Result<()> {
    let settings = cfg.settings();
    let schedule = load_schedule(cfg)?;
    let alpha = resolve_alpha(cfg)?;
    let (tcfg, ecfg) = (&cfg.training, &cfg.experiment);
    let scheduled = GainSource::Scheduled {
        schedule: schedule.clone(),
        alpha,
    };
    let report = match id {
        ExperimentId::AdaptiveVsConstant => {
            let baselines = experiments::tune_baselines(&settings, tcfg, ecfg, &cfg.pso, alpha)?;
            experiments::adaptive_vs_constant(&settings, tcfg, ecfg, schedule, alpha, &baselines)?
        }
        ExperimentId::RampDuration => {
            let g = schedule.predict(ecfg.fast_boat_altitude, ecfg.fast_boat_speed);
            let base = ControllerParams::new(g[0], g[1], g[2], alpha, g[3]);
            let tuned = experiments::tune_ramp_beta(&settings, tcfg, ecfg, base, &cfg.pso)?;
            experiments::ramp_duration(&settings, tcfg, ecfg, base, tuned)?
        }
        ExperimentId::MarkerMode => experiments::marker_mode(&settings, tcfg, ecfg, scheduled)?,
        ExperimentId::MaxSpeed => experiments::max_speed(&settings, tcfg, ecfg, scheduled)?,
    };
    let [rows, summary, metrics] = report_paths(&cfg.paths.out_dir, id);
    experiments::write_report_csv(&report, create(&rows)?)?;
    experiments::write_summary_csv(&report, create(&summary)?)?;
    experiments::write_metrics_csv(&report, create(&metrics)?)?;
    print_summary(&report);
    for v in assess(&report) {
        println!("{v}");
    }
    println!("wrote {}, {} and {}", rows.display(), summary.display(), metrics.display());
    Ok(())
}

fn print_summary(report: &ExperimentReport) {
    println!(
        "{:<24} {:<16} {:>5} {:>8} {:>10} {:>10} {:>7}",
        "condition", "variant", "runs", "success", "median_d", "median_F", "losses"
    );
    for s in report.summary() {
        println!(
            "{:<24} {:<16} {:>5} {:>8.2} {:>10.4} {:>10.3} {:>7.1}",
            s.condition, s.variant, s.runs, s.success_rate, s.median_d, s.median_cost, s.median_losses
        );
    }
    for (k, v) in &report.metrics {
        println!("{k} = {v}");
    }
}

fn eval(cfg: &RunConfig, ids: &[ExperimentId]) -> Result<()> {
    let mut verdicts = Vec::new();
    let (table, schedule) = (&cfg.paths.table, &cfg.paths.schedule);
    if table.exists() && schedule.exists() {
        let rows = read_table_csv(File::open(table)?, &table.display().to_string())?;
        let sched = GainSchedule::load(schedule)?;
        let xs: Vec<Vec<f64>> = rows.iter().map(|r| r.input()).collect();
        let ys: Vec<Vec<f64>> = rows.iter().map(|r| r.output()).collect();
        let errors = sched.relative_errors(&xs, &ys);
        let worst = errors.iter().flatten().fold(0.0_f64, |a, &b| a.max(b));
        let landed = rows.iter().filter(|r| r.outcome == Outcome::Landed).count();
        verdicts.push(Verdict {
            name: "grid cells landed".into(),
            passed: landed == rows.len() && !rows.is_empty(),
            detail: format!("{landed} of {} cells", rows.len()),
        });
        verdicts.push(Verdict {
            name: "schedule fit".into(),
            passed: worst <= MAX_FIT_RELATIVE_ERROR,
            detail: format!("max relative error {worst:.4} (need <= {MAX_FIT_RELATIVE_ERROR})"),
        });
    }
    for &id in ids {
        let [rows, _, metrics] = report_paths(&cfg.paths.out_dir, id);
        if !rows.exists() {
            return Err(anyhow!("{} not found; run `nnpso sweep --experiment {id}` first", rows.display()));
        }
        let mut report = experiments::read_report_csv(File::open(&rows)?, &rows.display().to_string())?;
        if metrics.exists() {
            let (seeds, m) = experiments::read_metrics_csv(File::open(&metrics)?, &metrics.display().to_string())?;
            report.seeds = seeds;
            report.metrics = m;
        }
        verdicts.extend(assess(&report));
    }
    for v in &verdicts {
        println!("{v}");
    }
    if verdicts.iter().all(|v| v.passed) {
        Ok(())
    } else {
        Err(ThresholdMissed.into())
    }
}
