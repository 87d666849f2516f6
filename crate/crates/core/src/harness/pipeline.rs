//! Equilibrate, thermalize and cool.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cooling::{cooling_kick, BeamSet};
use crate::diagnostics::{doppler_limit, temperature_sample, ConfinementReport, RmsAccumulator, TemperatureSample};
use crate::equilibrium::{equilibrate, EquilibriumResult};
use crate::error::{Error, Result};
use crate::forces::ForceField;
use crate::harness::checkpoint::{load_checkpoint, save_checkpoint, CheckpointBody, CODE_VERSION};
use crate::harness::config::{ExperimentSpec, Stage};
use crate::harness::io::{write_json, write_snapshot, write_timeseries, SnapshotMeta};
use crate::integrator::Cyclotronic;
use crate::model::{Frame, SystemState, Vec3};
use crate::rng::{stage, stage_rng, IonStreams};
use crate::thermalize::thermalize;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordMetadata {
    pub spec_hash: String,
    pub seed: u64,
    pub code_version: String,
    pub n_ions: usize,
    /// s
    pub dt: f64,
    pub n_steps: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoolingRecord {
    pub metadata: RecordMetadata,
    /// Strictly increasing in time.
    pub samples: Vec<TemperatureSample>,
    /// Absent when the trailing window is too short.
    pub final_confinement: Option<ConfinementReport>,
    pub photons: u64,
    /// Whether T_pe settled over the last half of the run.
    pub equilibrated: bool,
    /// Set when the run stopped early; `samples` then ends at the failure.
    pub failure: Option<String>,
}

/// Compares the mean T_pe of the last two quarters of the run; they must
/// agree within 10% of the final level or one Doppler limit.
pub fn temperature_settled(samples: &[TemperatureSample], doppler: f64) -> bool {
    let n = samples.len();
    if n < 8 {
        return false;
    }
    let mean = |s: &[TemperatureSample]| s.iter().map(|x| x.t_pe).sum::<f64>() / s.len() as f64;
    let last = mean(&samples[3 * n / 4..]);
    let before = mean(&samples[n / 2..3 * n / 4]);
    (last - before).abs() <= (0.1 * last.abs()).max(doppler)
}

/// Lab-frame cyclotronic dynamics with photon recoils after every step.
pub struct CoolingRun {
    field: ForceField,
    beams: BeamSet,
    reference: Vec<Vec3>,
    state: SystemState,
    stepper: Cyclotronic,
    streams: IonStreams,
    step: u64,
    n_steps: u64,
    snapshot_interval: u64,
    rms_interval: u64,
    rms_start: u64,
    samples: Vec<TemperatureSample>,
    rms: RmsAccumulator,
    photons: u64,
    metadata: RecordMetadata,
}

impl CoolingRun {
    /// Starts from a rotating-frame state placed in the lab at t = 0.
    pub fn new(spec: &ExperimentSpec, beams: BeamSet, reference: &[Vec3], initial: &SystemState, n_steps: u64) -> Result<Self> {
        initial.expect_frame(Frame::Rotating)?;
        if initial.n_ions() != reference.len() {
            return Err(Error::InvalidConfig("initial state and reference differ in N".into()));
        }
        beams.validate()?;
        let field = spec.field();
        let state = initial.to_lab(&spec.trap, 0.0)?;
        let n = state.n_ions();
        let mut run = Self::assemble(spec, beams, reference.to_vec(), state, n_steps);
        run.streams = IonStreams::new(spec.seed(), stage::COOLING, n);
        run.samples.push(temperature_sample(&run.state, &run.reference, &field)?);
        run.push_rms()?;
        Ok(run)
    }

    fn assemble(spec: &ExperimentSpec, beams: BeamSet, reference: Vec<Vec3>, state: SystemState, n_steps: u64) -> Self {
        let n = state.n_ions();
        let window_steps = (spec.rms_window / spec.sim.dt).round() as u64;
        if let Some(w) = spec.sim.stability_warning(&spec.trap, &spec.ion) {
            log::warn!("{w}");
        }
        CoolingRun {
            field: spec.field(),
            beams,
            reference,
            state,
            stepper: Cyclotronic::new(spec.sim.dt),
            streams: IonStreams::new(spec.seed(), stage::COOLING, 0),
            step: 0,
            n_steps,
            snapshot_interval: spec.sim.snapshot_interval,
            rms_interval: spec.rms_interval,
            rms_start: n_steps.saturating_sub(window_steps),
            samples: Vec::new(),
            rms: RmsAccumulator::new(n),
            photons: 0,
            metadata: RecordMetadata {
                spec_hash: spec.hash.clone(),
                seed: spec.seed(),
                code_version: CODE_VERSION.to_string(),
                n_ions: n,
                dt: spec.sim.dt,
                n_steps,
            },
        }
    }

    pub fn from_checkpoint(spec: &ExperimentSpec, body: CheckpointBody) -> Result<Self> {
        if body.seed != spec.seed() {
            return Err(Error::CheckpointMismatch("seed differs".into()));
        }
        body.state.expect_frame(Frame::Lab)?;
        let mut run = Self::assemble(spec, body.beams, body.reference, body.state, body.n_steps);
        run.streams = IonStreams::restore(spec.seed(), stage::COOLING, &body.stream_positions);
        run.step = body.step;
        run.samples = body.samples;
        run.rms = body.rms;
        run.photons = body.photons;
        Ok(run)
    }

    pub fn checkpoint(&self) -> CheckpointBody {
        CheckpointBody {
            spec_hash: self.metadata.spec_hash.clone(),
            seed: self.metadata.seed,
            beams: self.beams.clone(),
            step: self.step,
            n_steps: self.n_steps,
            state: self.state.clone(),
            reference: self.reference.clone(),
            stream_positions: self.streams.word_positions(),
            samples: self.samples.clone(),
            rms: self.rms.clone(),
            photons: self.photons,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.n_steps
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    pub fn samples(&self) -> &[TemperatureSample] {
        &self.samples
    }

    fn push_rms(&mut self) -> Result<()> {
        if self.step >= self.rms_start && (self.step - self.rms_start).is_multiple_of(self.rms_interval) {
            self.rms.push(&self.state.to_rotating(&self.field.trap)?)?;
        }
        Ok(())
    }

    /// Advances up to `max_steps` steps, stopping at the end of the run.
    pub fn advance(&mut self, max_steps: u64) -> Result<()> {
        let stop = self.n_steps.min(self.step.saturating_add(max_steps));
        let dt = self.stepper.dt();
        let ion = self.field.ion;
        while self.step < stop {
            self.stepper.step(&mut self.state, &self.field)?;
            self.photons += cooling_kick(&mut self.state, &self.beams, &ion, dt, &mut self.streams)?;
            self.step += 1;
            if self.step.is_multiple_of(self.snapshot_interval) || self.step == self.n_steps {
                let s = temperature_sample(&self.state, &self.reference, &self.field)?;
                if !(s.t_pe.is_finite() && s.t_ke_perp.is_finite() && s.t_ke_par.is_finite()) {
                    return Err(Error::StageFailed {
                        stage: "cool".into(),
                        reason: format!("non-finite temperature at step {}", self.step),
                    });
                }
                self.samples.push(s);
            }
            self.push_rms()?;
        }
        Ok(())
    }

    pub fn into_record(self, failure: Option<String>) -> CoolingRecord {
        let final_confinement = if failure.is_none() {
            match self.rms.report(self.field.trap.omega_r) {
                Ok(r) => Some(r),
                Err(e) => {
                    log::warn!("no confinement report: {e}");
                    None
                }
            }
        } else {
            None
        };
        CoolingRecord {
            equilibrated: failure.is_none() && temperature_settled(&self.samples, doppler_limit(&self.field.ion)),
            metadata: self.metadata,
            samples: self.samples,
            final_confinement,
            photons: self.photons,
            failure,
        }
    }
}

/// Where a pipeline writes its artifacts.
#[derive(Clone, Debug)]
pub struct OutputDir {
    pub root: PathBuf,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(OutputDir { root: root.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn snapshot(&self, name: &str, state: &SystemState, spec: &ExperimentSpec) -> Result<()> {
        let meta = SnapshotMeta {
            n_ions: state.n_ions(),
            time: state.time,
            frame: state.frame,
            label: name.to_string(),
            spec_hash: spec.hash.clone(),
            seed: spec.seed(),
            code_version: CODE_VERSION.to_string(),
        };
        write_snapshot(&self.path(&format!("{name}.bin")), state, &meta)
    }

    pub fn record(&self, record: &CoolingRecord) -> Result<()> {
        write_timeseries(fs::File::create(self.path("timeseries.csv"))?, &record.samples)?;
        write_json(&self.path("record.json"), record)
    }
}

/// Runs the cooling stage to completion, checkpointing every
/// `spec.checkpoint_interval` steps when an output directory is given.
/// Failures end the run with a partial record.
pub fn run_cooling(mut run: CoolingRun, spec: &ExperimentSpec, out: Option<&OutputDir>) -> Result<(CoolingRecord, SystemState)> {
    let chunk = spec.checkpoint_interval.filter(|_| out.is_some()).unwrap_or(u64::MAX);
    let mut failure = None;
    while !run.is_done() {
        let to_boundary = chunk - run.step_count() % chunk;
        if let Err(e) = run.advance(to_boundary) {
            log::error!("cooling stopped at step {}: {e}", run.step_count());
            failure = Some(e.to_string());
            break;
        }
        if let (Some(dir), Some(_)) = (out, spec.checkpoint_interval) {
            save_checkpoint(&dir.path("checkpoint.json"), &run.checkpoint())?;
        }
    }
    let last = run.state().clone();
    Ok((run.into_record(failure), last))
}

/// Inputs that let a pipeline start after its first stage.
#[derive(Clone, Debug, Default)]
pub struct PipelineInputs {
    /// Rotating-frame equilibrium positions.
    pub equilibrium: Option<Vec<Vec3>>,
    /// Rotating-frame thermal state.
    pub initial: Option<SystemState>,
    /// Checkpoint to resume the cooling stage from.
    pub resume: Option<PathBuf>,
}

#[derive(Clone, Debug, Default)]
pub struct PipelineOutput {
    pub equilibrium: Option<EquilibriumResult>,
    pub reference: Option<Vec<Vec3>>,
    pub initial: Option<SystemState>,
    pub record: Option<CoolingRecord>,
    /// Lab-frame state at the end of cooling.
    pub final_state: Option<SystemState>,
}

pub fn equilibrate_stage(spec: &ExperimentSpec) -> Result<EquilibriumResult> {
    let field = spec.field();
    let mut rng = stage_rng(spec.seed(), stage::SEED_CLOUD);
    let eq = equilibrate(spec.n_ions, &field, &spec.equilibrium, &mut rng)?;
    if !eq.converged {
        log::warn!(
            "equilibrium not converged after {} iterations, residual force {:.3e} N",
            eq.iterations,
            eq.residual_force_max
        );
    }
    Ok(eq)
}

pub fn run_pipeline(spec: &ExperimentSpec, inputs: PipelineInputs, out: Option<&OutputDir>) -> Result<PipelineOutput> {
    let mut output = PipelineOutput::default();
    let mut reference = inputs.equilibrium;
    let mut initial = inputs.initial;
    for stage in &spec.pipeline {
        match stage {
            Stage::Equilibrate => {
                let eq = equilibrate_stage(spec)?;
                if let Some(dir) = out {
                    dir.snapshot("equilibrium", &SystemState::at_rest(eq.positions.clone(), Frame::Rotating)?, spec)?;
                }
                reference = Some(eq.positions.clone());
                output.equilibrium = Some(eq);
            }
            Stage::Thermalize => {
                let eq = reference
                    .as_ref()
                    .ok_or_else(|| Error::InvalidConfig("thermalize needs an equilibrium".into()))?;
                let state = thermalize(eq, &spec.thermalize, &spec.field(), spec.seed())?;
                if let Some(dir) = out {
                    dir.snapshot("initial", &state, spec)?;
                }
                initial = Some(state);
            }
            Stage::Cool => {
                let run = match &inputs.resume {
                    Some(path) => CoolingRun::from_checkpoint(spec, load_checkpoint(path, &spec.hash)?)?,
                    None => {
                        let eq = reference
                            .as_ref()
                            .ok_or_else(|| Error::InvalidConfig("cooling needs a reference equilibrium".into()))?;
                        let start = initial
                            .as_ref()
                            .ok_or_else(|| Error::InvalidConfig("cooling needs an initial state".into()))?;
                        CoolingRun::new(spec, spec.beams.clone(), eq, start, spec.sim.n_steps)?
                    }
                };
                let (record, last) = run_cooling(run, spec, out)?;
                if let Some(dir) = out {
                    dir.record(&record)?;
                    dir.snapshot("final", &last, spec)?;
                }
                output.record = Some(record);
                output.final_state = Some(last);
            }
        }
    }
    output.reference = reference;
    output.initial = initial;
    Ok(output)
}
