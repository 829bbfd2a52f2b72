//! `bwsynth`: bandwidth-optimal synthesis from the command line.
//!
//! Exit codes: 0 converged, 2 not converged, 3 input error or unstable
//! initial controller.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bwsynth::controller::{ControllerParams, ControllerStructure, DecentralizedController, LoopController, ZeroController};
use bwsynth::freq::{check_stability, compute_bandwidth, frequency_sweep, sensitivity_matrix, sensitivity_peaks_of, FrequencyGrid, SweepRow};
use bwsynth::io::{load_config, load_plant, parse_json, save_plant, ControllerBlock, RunConfig};
use bwsynth::lti::DecoupledPlant;
use bwsynth::nsopt::{synthesize_with_restarts, DirectionMode, Status, SynthesisReport};
use bwsynth::plants::{flexstage_initial, flexstage_structure, make_plant, FlexstageParams, PlantRecipe};
use bwsynth::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

const SCHEMA_VERSION: u32 = 1;
const THREADS_VAR: &str = "BWSYNTH_THREADS";

#[derive(Parser)]
#[command(name = "bwsynth", version, about = "Bandwidth-optimal decentralized controller synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Maximize the bandwidth subject to the sensitivity bound.
    Synthesize(SynthesizeArgs),
    /// Frequency responses, bandwidth and sensitivity peak of a fixed controller.
    Analyze(AnalyzeArgs),
    /// Parse and check the inputs without computing anything.
    Validate(InputArgs),
    /// Write a synthetic plant and a matching starting configuration.
    MakePlant(MakePlantArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Configuration file; repeat to layer files, later ones win.
    #[arg(long = "config", required = true)]
    configs: Vec<PathBuf>,
    /// Plant file, overriding the one named in the configuration.
    #[arg(long)]
    plant: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Raw,
    Qp,
}

#[derive(Args)]
struct SynthesizeArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    direction_mode: Option<ModeArg>,
    /// Bound on the sensitivity peak.
    #[arg(long)]
    smax: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Seed for the restart perturbations.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Experimental: extra runs from randomly perturbed starting points.
    #[arg(long, default_value_t = 0)]
    restarts: usize,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    out: PathBuf,
    /// Controller file as written by `synthesize`; defaults to the configured starting point.
    #[arg(long, conflicts_with = "zero_controller")]
    controller: Option<PathBuf>,
    /// Analyze the open loop (`C = 0`); an unstable plant is then reported but not an error.
    #[arg(long)]
    zero_controller: bool,
}

#[derive(Args)]
struct MakePlantArgs {
    /// Plant recipe (JSON); defaults to the FLEXSTAGE_LIKE plant.
    #[arg(long)]
    recipe: Option<PathBuf>,
    /// Output directory for `plant.json` and `config.json`.
    #[arg(long)]
    out: PathBuf,
    /// FLEXSTAGE_LIKE channels that get notches at their own resonances, e.g. `0,1,2,5`.
    #[arg(long, value_delimiter = ',')]
    notch_channels: Vec<usize>,
}

#[derive(Debug)]
enum CliError {
    Input(String),
    Unstable { abscissa: f64 },
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Unstable { abscissa } => Self::Unstable { abscissa },
            other => Self::Input(other.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(3);
    }
    let result = match cli.command {
        Command::Synthesize(a) => cmd_synthesize(&a),
        Command::Analyze(a) => cmd_analyze(&a),
        Command::Validate(a) => cmd_validate(&a),
        Command::MakePlant(a) => cmd_make_plant(&a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(CliError::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
        Err(CliError::Unstable { abscissa }) => {
            eprintln!("error: initial closed loop is unstable, spectral abscissa {abscissa:e} rad/s");
            ExitCode::from(3)
        }
    }
}

fn configure_threads() -> std::result::Result<(), String> {
    let Ok(value) = std::env::var(THREADS_VAR) else { return Ok(()) };
    let n: usize = value.trim().parse().map_err(|_| format!("{THREADS_VAR} must be a positive integer, got `{value}`"))?;
    if n == 0 {
        return Err(format!("{THREADS_VAR} must be positive"));
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

struct Inputs {
    config: RunConfig,
    plant: DecoupledPlant,
    structure: ControllerStructure,
    initial: ControllerParams,
    grid: FrequencyGrid,
}

fn load_inputs(args: &InputArgs) -> CliResult<Inputs> {
    let config = load_config(&args.configs)?;
    let plant_path = args
        .plant
        .clone()
        .or_else(|| config.plant.clone())
        .ok_or_else(|| CliError::Input("no plant given: pass --plant or set `plant` in the configuration".into()))?;
    let plant = load_plant(&plant_path)?;
    let structure = config.controller.structure()?;
    let initial = config.controller.initial(&structure)?;
    let grid = FrequencyGrid::from_spec(&config.grid)?;
    config.solver.validate()?;
    if plant.n_channels() != structure.n_channels() {
        return Err(CliError::Input(format!(
            "plant has {} channels but the controller block has {}",
            plant.n_channels(),
            structure.n_channels()
        )));
    }
    Ok(Inputs { config, plant, structure, initial, grid })
}

fn create_dir(out: &Path) -> CliResult<()> {
    std::fs::create_dir_all(out).map_err(|e| CliError::Input(format!("cannot create {}: {e}", out.display())))
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    write(path, &(serde_json::to_string_pretty(value).expect("report serializes") + "\n"))
}

fn hz(omega: f64) -> f64 {
    omega / (2.0 * std::f64::consts::PI)
}

#[derive(Serialize)]
struct Report<'a> {
    schema_version: u32,
    status: Status,
    direction_mode: DirectionMode,
    constraint_form: &'a str,
    s_max: f64,
    omega_bw_rad_s: f64,
    omega_bw_hz: f64,
    hinf: f64,
    initial_omega_bw_rad_s: f64,
    initial_hinf: f64,
    iterations: usize,
    function_evaluations: usize,
    final_mu: f64,
    mu_reductions: usize,
    stationarity: f64,
    violation: f64,
    params: &'a ControllerParams,
}

#[derive(Serialize)]
struct UnstableReport {
    schema_version: u32,
    status: Status,
    spectral_abscissa: f64,
    message: String,
}

fn cmd_synthesize(args: &SynthesizeArgs) -> CliResult<u8> {
    let mut inputs = load_inputs(&args.input)?;
    let solver = &mut inputs.config.solver;
    if let Some(m) = args.direction_mode {
        solver.direction_mode = match m {
            ModeArg::Raw => DirectionMode::RawSubgradient,
            ModeArg::Qp => DirectionMode::QpSteepest,
        };
    }
    if let Some(s) = args.smax {
        solver.s_max = s;
    }
    if let Some(n) = args.max_iter {
        solver.max_iter = n;
    }
    solver.validate()?;
    create_dir(&args.out)?;
    let Inputs { config, plant, structure, initial, grid } = &inputs;
    let report = match synthesize_with_restarts(plant, structure, initial, grid, &config.solver, args.restarts, args.seed) {
        Ok(r) => r,
        Err(Error::Unstable { abscissa }) => {
            let r = UnstableReport {
                schema_version: SCHEMA_VERSION,
                status: Status::InitialUnstable,
                spectral_abscissa: abscissa,
                message: format!("initial closed loop is unstable, spectral abscissa {abscissa:e} rad/s"),
            };
            write_json(&args.out.join("report.json"), &r)?;
            return Err(CliError::Unstable { abscissa });
        }
        Err(e) => return Err(e.into()),
    };
    write_synthesis_outputs(&args.out, &report, &inputs)?;
    eprintln!(
        "{}: omega_bw = {:.4} rad/s ({:.4} Hz), ||S||inf = {:.6}, {} iterations, {} evaluations",
        report.status.as_str(),
        report.omega_bw,
        hz(report.omega_bw),
        report.hinf,
        report.iterations,
        report.function_evaluations
    );
    Ok(if report.status == Status::Converged { 0 } else { 2 })
}

fn write_synthesis_outputs(out: &Path, r: &SynthesisReport, inputs: &Inputs) -> CliResult<()> {
    let report = Report {
        schema_version: SCHEMA_VERSION,
        status: r.status,
        direction_mode: r.direction_mode,
        constraint_form: &r.constraint_form,
        s_max: r.s_max,
        omega_bw_rad_s: r.omega_bw,
        omega_bw_hz: hz(r.omega_bw),
        hinf: r.hinf,
        initial_omega_bw_rad_s: r.initial_omega_bw,
        initial_hinf: r.initial_hinf,
        iterations: r.iterations,
        function_evaluations: r.function_evaluations,
        final_mu: r.final_mu,
        mu_reductions: r.mu_reductions,
        stationarity: r.stationarity,
        violation: r.violation,
        params: &r.params,
    };
    write_json(&out.join("report.json"), &report)?;

    let mut history = String::from("# iter [-], objective = -omega_bw [rad/s], violation [-], mu [-], step [-]\niter,objective,violation,mu,step\n");
    for h in &r.history {
        let _ = writeln!(history, "{},{},{},{},{}", h.iteration, h.f, h.v, h.mu, h.step);
    }
    write(&out.join("history.csv"), &history)?;

    let block = ControllerBlock {
        channels: inputs.structure.channels.clone(),
        notches: inputs.structure.notches.clone(),
        omega_c0: r.params.omega_c.clone(),
        beta0: r.params.beta.clone(),
        zeta0: r.params.zeta.clone(),
        scaling: Some(r.params.scaling.clone()),
    };
    write_json(&out.join("controller.json"), &block)?;

    let controller = DecentralizedController::new(inputs.structure.clone(), r.params.clone())?;
    let rows = frequency_sweep(&inputs.plant, &controller, &inputs.grid)?;
    write_sweep(out, &rows)
}

fn columns(prefix: &str, n: usize) -> String {
    (1..=n).map(|i| format!(",{prefix}{i}")).collect()
}

fn values(v: &[f64]) -> String {
    v.iter().map(|x| format!(",{x}")).collect()
}

fn write_sweep(out: &Path, rows: &[SweepRow]) -> CliResult<()> {
    let n = rows.first().map_or(0, |r| r.sv_loop.len());
    let mut loop_csv = format!(
        "# omega [rad/s], singular values of L descending [-], |L_ii| [-]\nomega{}{}\n",
        columns("sigma_", n),
        (1..=n).map(|i| format!(",l_{i}{i}")).collect::<String>()
    );
    let mut sens_csv = format!("# omega [rad/s], singular values of S descending [-]\nomega{}\n", columns("sigma_", n));
    for r in rows {
        let _ = writeln!(loop_csv, "{}{}{}", r.omega, values(&r.sv_loop), values(&r.diag_loop));
        match &r.sv_sensitivity {
            Some(sv) => {
                let _ = writeln!(sens_csv, "{}{}", r.omega, values(sv));
            }
            None => {
                let _ = writeln!(sens_csv, "{}{}", r.omega, ",".repeat(n));
            }
        }
    }
    write(&out.join("loopgain.csv"), &loop_csv)?;
    write(&out.join("sensitivity.csv"), &sens_csv)
}

#[derive(Serialize)]
struct AnalysisReport {
    schema_version: u32,
    stable: bool,
    spectral_abscissa: f64,
    omega_bw_rad_s: Option<f64>,
    omega_bw_hz: Option<f64>,
    /// Why no bandwidth is reported.
    bandwidth_error: Option<String>,
    /// Grid peak of `sigma_max(S)`; only a true H-infinity norm when the loop is stable.
    hinf: Option<f64>,
    hinf_omega_rad_s: Option<f64>,
}

fn cmd_analyze(args: &AnalyzeArgs) -> CliResult<u8> {
    let inputs = load_inputs(&args.input)?;
    let Inputs { config, plant, grid, .. } = &inputs;
    let zero = ZeroController { n: plant.n_channels() };
    let fixed;
    let controller: &dyn LoopController = if args.zero_controller {
        &zero
    } else {
        let (structure, params) = match &args.controller {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
                let block: ControllerBlock = parse_json(&text, &path.display().to_string())?;
                let structure = block.structure()?;
                let params = block.initial(&structure)?;
                (structure, params)
            }
            None => (inputs.structure.clone(), inputs.initial.clone()),
        };
        fixed = DecentralizedController::new(structure, params)?;
        &fixed
    };
    if controller.n_channels() != plant.n_channels() {
        return Err(CliError::Input(format!("plant has {} channels but the controller has {}", plant.n_channels(), controller.n_channels())));
    }
    create_dir(&args.out)?;
    let stability = check_stability(plant, controller)?;
    let (bw, bw_err) = match compute_bandwidth(plant, controller, grid, config.solver.delta_bw) {
        Ok(b) => (Some(b.omega_bw), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let peaks = sensitivity_peaks_of(|w| sensitivity_matrix(plant, controller, w), grid, config.solver.delta_h).ok();
    let hinf = peaks.as_ref().map(|p| p.hinf);
    let hinf_w = peaks.as_ref().and_then(|p| p.peaks.iter().max_by(|a, b| a.magnitude.total_cmp(&b.magnitude))).map(|p| p.omega);
    let report = AnalysisReport {
        schema_version: SCHEMA_VERSION,
        stable: stability.stable,
        spectral_abscissa: stability.abscissa,
        omega_bw_rad_s: bw,
        omega_bw_hz: bw.map(hz),
        bandwidth_error: bw_err,
        hinf,
        hinf_omega_rad_s: hinf_w,
    };
    write_json(&args.out.join("analysis.json"), &report)?;

    let rows = frequency_sweep(plant, controller, grid)?;
    let n = plant.n_channels();
    let mut plant_csv = format!(
        "# omega [rad/s], |G_ii| [output unit per input unit, SI], max off-diagonal |G_ij| [same]\nomega{},coupling_envelope\n",
        (1..=n).map(|i| format!(",g_{i}{i}")).collect::<String>()
    );
    for r in &rows {
        let _ = writeln!(plant_csv, "{}{},{}", r.omega, values(&r.diag_plant), r.coupling_envelope);
    }
    write(&args.out.join("plant.csv"), &plant_csv)?;
    write_sweep(&args.out, &rows)?;
    match (stability.stable || args.zero_controller, bw, hinf) {
        (false, _, _) => {
            eprintln!("closed loop is unstable, spectral abscissa {:e} rad/s", stability.abscissa);
            Ok(3)
        }
        (true, Some(w), Some(h)) => {
            eprintln!("omega_bw = {w:.4} rad/s ({:.4} Hz), ||S||inf = {h:.6}, stable = {}", hz(w), stability.stable);
            Ok(0)
        }
        (true, _, h) => {
            eprintln!("no bandwidth ({}), ||S||inf = {:.6}, stable = {}", report.bandwidth_error.as_deref().unwrap_or("-"), h.unwrap_or(f64::NAN), stability.stable);
            Ok(0)
        }
    }
}

fn cmd_validate(args: &InputArgs) -> CliResult<u8> {
    let inputs = load_inputs(args)?;
    println!(
        "ok: {} channels, {} notches, {} parameters, {} grid points",
        inputs.plant.n_channels(),
        inputs.structure.n_notches(),
        inputs.structure.n_params(),
        inputs.grid.len()
    );
    Ok(0)
}

fn cmd_make_plant(args: &MakePlantArgs) -> CliResult<u8> {
    let recipe = match &args.recipe {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
            parse_json::<PlantRecipe>(&text, &path.display().to_string())?
        }
        None => PlantRecipe::FlexstageLike(FlexstageParams::default()),
    };
    let plant = make_plant(&recipe)?;
    create_dir(&args.out)?;
    save_plant(&plant, &args.out.join("plant.json"))?;
    if let PlantRecipe::FlexstageLike(p) = &recipe {
        if let Some(c) = args.notch_channels.iter().find(|&&c| c >= 7) {
            return Err(CliError::Input(format!("notch channel {c} out of range 0..7")));
        }
        let structure = flexstage_structure(p, &args.notch_channels);
        let initial = flexstage_initial(&structure, 0.5, 0.3)?;
        let config = RunConfig {
            plant: Some("plant.json".into()),
            controller: ControllerBlock {
                channels: structure.channels,
                notches: structure.notches,
                omega_c0: initial.omega_c,
                beta0: initial.beta,
                zeta0: initial.zeta,
                scaling: None,
            },
            solver: Default::default(),
            grid: Default::default(),
        };
        write_json(&args.out.join("config.json"), &config)?;
    } else if !args.notch_channels.is_empty() {
        return Err(CliError::Input("--notch-channels applies to the FLEXSTAGE_LIKE plant only".into()));
    }
    Ok(0)
}
