use std::f64::consts::PI;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use penning_md::diagnostics::{crystal_extents, doppler_limit, gap_estimates, spheroid_extents, Extents, DEFAULT_GAP_CONSTANT};
use penning_md::harness::io::{read_snapshot, write_json, write_mode_table};
use penning_md::harness::pipeline::{equilibrate_stage, run_pipeline, OutputDir, PipelineInputs};
use penning_md::harness::scan::{run_scan, write_scan_table};
use penning_md::harness::{ExperimentSpec, Stage};
use penning_md::model::{derived_quantities, Frame, SystemState, Vec3};
use penning_md::modes::{build_linearization, solve_modes, Branch};
use penning_md::{Error, Result};

#[derive(Parser)]
#[command(name = "penning-md", version, about = "Laser cooling of ion crystals in a Penning trap")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment spec (TOML); defaults apply when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Override an experiment entry, e.g. --set trap.omega_r_hz=220e3
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Overrides sim.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value = "out")]
    output_dir: PathBuf,
}

#[derive(Args, Clone, Default)]
struct Inputs {
    /// Equilibrium snapshot (rotating frame) to start from.
    #[arg(long)]
    equilibrium: Option<PathBuf>,
    /// Thermal snapshot (rotating frame) to start cooling from.
    #[arg(long)]
    initial: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Find the crystal equilibrium.
    Equilibrate {
        #[command(flatten)]
        common: Common,
    },
    /// Equilibrate (or load) and thermalize.
    Thermalize {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Run the cooling pipeline.
    Cool {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
        /// Resume from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Normal modes of the equilibrium.
    Modes {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Cool over the experiment's perpendicular-beam grid.
    Scan {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Closed-form estimates for the experiment's trap.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: Inputs,
    },
}

fn load_spec(common: &Common) -> Result<ExperimentSpec> {
    let mut overrides = common.overrides.clone();
    if let Some(seed) = common.seed {
        overrides.push(format!("sim.seed={seed}"));
    }
    let file = match &common.spec {
        Some(path) => penning_md::harness::SpecFile::load(path, &overrides)?,
        None => penning_md::harness::SpecFile::parse("", &overrides)?,
    };
    ExperimentSpec::from_file(file)
}

fn rotating_snapshot(path: &Path) -> Result<SystemState> {
    let (state, _) = read_snapshot(path)?;
    state.expect_frame(Frame::Rotating)?;
    Ok(state)
}

fn load_inputs(inputs: &Inputs) -> Result<PipelineInputs> {
    Ok(PipelineInputs {
        equilibrium: inputs.equilibrium.as_deref().map(rotating_snapshot).transpose()?.map(|s| s.positions),
        initial: inputs.initial.as_deref().map(rotating_snapshot).transpose()?,
        resume: None,
    })
}

/// Stages still to run given what the inputs already provide.
fn stages_until(last: Stage, inputs: &PipelineInputs) -> Vec<Stage> {
    let first = if inputs.initial.is_some() {
        Stage::Cool
    } else if inputs.equilibrium.is_some() {
        Stage::Thermalize
    } else {
        Stage::Equilibrate
    };
    [Stage::Equilibrate, Stage::Thermalize, Stage::Cool]
        .into_iter()
        .filter(|s| *s >= first.min(last) && *s <= last)
        .collect()
}

fn equilibrium_positions(spec: &ExperimentSpec, inputs: &Inputs) -> Result<Vec<Vec3>> {
    match &inputs.equilibrium {
        Some(path) => Ok(rotating_snapshot(path)?.positions),
        None => Ok(equilibrate_stage(spec)?.positions),
    }
}

#[derive(Serialize)]
struct Estimates {
    omega_c_hz: f64,
    vortex_hz: f64,
    beta: f64,
    omega_c_dt: f64,
    doppler_limit_mk: f64,
    plasma_hz: f64,
    exb_max_hz: Option<f64>,
    axial_min_hz: f64,
    extents_from: &'static str,
    radius_um: f64,
    half_length_um: f64,
    wigner_seitz_um: f64,
    gap_estimates_valid: bool,
}

fn estimate(spec: &ExperimentSpec, inputs: &Inputs) -> Result<Estimates> {
    let (extents, source): (Extents, _) = match &inputs.equilibrium {
        Some(path) => (crystal_extents(&rotating_snapshot(path)?.positions), "equilibrium"),
        None => (spheroid_extents(spec.n_ions, &spec.field()), "cold-fluid spheroid"),
    };
    let d = derived_quantities(&spec.trap, &spec.ion);
    let g = gap_estimates(&spec.trap, &spec.ion, &extents, DEFAULT_GAP_CONSTANT);
    let hz = |w: f64| w / (2.0 * PI);
    Ok(Estimates {
        omega_c_hz: hz(d.omega_c),
        vortex_hz: hz(d.vortex),
        beta: d.beta,
        omega_c_dt: d.omega_c * spec.sim.dt,
        doppler_limit_mk: doppler_limit(&spec.ion) * 1e3,
        plasma_hz: hz(g.omega_p),
        exb_max_hz: g.omega_e_max.map(hz),
        axial_min_hz: hz(g.omega_par_min),
        extents_from: source,
        radius_um: extents.radius * 1e6,
        half_length_um: extents.half_length * 1e6,
        wigner_seitz_um: extents.wigner_seitz * 1e6,
        gap_estimates_valid: g.valid,
    })
}

fn run(cli: Cli) -> Result<()> {
    let common = match &cli.command {
        Command::Equilibrate { common }
        | Command::Thermalize { common, .. }
        | Command::Cool { common, .. }
        | Command::Modes { common, .. }
        | Command::Scan { common, .. }
        | Command::Estimate { common, .. } => common.clone(),
    };
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    }
    let mut spec = load_spec(&common)?;

    match cli.command {
        Command::Estimate { inputs, .. } => {
            println!("{}", serde_json::to_string_pretty(&estimate(&spec, &inputs)?)?);
            return Ok(());
        }
        Command::Modes { inputs, .. } => {
            let out = OutputDir::create(&common.output_dir)?;
            let positions = equilibrium_positions(&spec, &inputs)?;
            let modes = solve_modes(&build_linearization(&positions, &spec.field())?)?;
            write_mode_table(File::create(out.path("modes.csv"))?, &modes)?;
            let gap = |b: Branch| modes.branch_indices(b).iter().map(|&i| modes.frequencies[i]).fold(f64::NAN, f64::max);
            log::info!(
                "{} modes, max ExB {:.4} MHz, residual {:.2e}",
                modes.len(),
                gap(Branch::ExB) / (2.0 * PI * 1e6),
                modes.residual
            );
            return Ok(());
        }
        _ => {}
    }

    let out = OutputDir::create(&common.output_dir)?;
    write_json(&out.path("spec.json"), &spec.file)?;
    match cli.command {
        Command::Equilibrate { .. } => {
            spec.pipeline = vec![Stage::Equilibrate];
            run_pipeline(&spec, PipelineInputs::default(), Some(&out))?;
        }
        Command::Thermalize { inputs, .. } => {
            let inputs = load_inputs(&inputs)?;
            spec.pipeline = stages_until(Stage::Thermalize, &inputs);
            run_pipeline(&spec, inputs, Some(&out))?;
        }
        Command::Cool { inputs, resume, .. } => {
            let mut inputs = load_inputs(&inputs)?;
            spec.pipeline = if resume.is_some() { vec![Stage::Cool] } else { stages_until(Stage::Cool, &inputs) };
            inputs.resume = resume;
            let result = run_pipeline(&spec, inputs, Some(&out))?;
            if let Some(reason) = result.record.and_then(|r| r.failure) {
                return Err(Error::StageFailed {
                    stage: "cool".into(),
                    reason,
                });
            }
        }
        Command::Scan { inputs, .. } => {
            let inputs = load_inputs(&inputs)?;
            spec.pipeline = stages_until(Stage::Thermalize, &inputs);
            let (reference, initial) = match (inputs.equilibrium.clone(), inputs.initial.clone()) {
                (Some(eq), Some(init)) => (eq, init),
                _ => {
                    let pre = run_pipeline(&spec, inputs, Some(&out))?;
                    (pre.reference.expect("equilibrium stage ran"), pre.initial.expect("thermalize stage ran"))
                }
            };
            let rows = run_scan(&spec, &reference, &initial)?;
            write_scan_table(File::create(out.path("scan.csv"))?, &rows)?;
        }
        Command::Estimate { .. } | Command::Modes { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
