//! Experiment config files. TOML at the boundary with frequencies in
//! Hz and lengths in micrometres; [`ExperimentSpec`] holds the SI values.

use std::f64::consts::{PI, SQRT_2};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cooling::{BeamSet, AXIAL_SATURATION, PERP_DETUNING_HZ, PERP_OFFSET, PERP_SATURATION};
use crate::equilibrium::{DampingSettings, EquilibrateSettings, QuasiNewtonSettings};
use crate::error::{Error, Result};
use crate::forces::tree::{DEFAULT_ORDER, DEFAULT_THETA};
use crate::forces::ForceField;
use crate::model::{BeamConfig, CoulombMethod, IonSpecies, SimConfig, TrapConfig, Vec3};
use crate::thermalize::{PositionMethod, ThermalizeConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Equilibrate,
    Thermalize,
    Cool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrapSection {
    pub b_field_tesla: f64,
    pub omega_z_hz: f64,
    pub omega_r_hz: f64,
    pub delta: f64,
}

impl Default for TrapSection {
    fn default() -> Self {
        TrapSection {
            b_field_tesla: 4.4588,
            omega_z_hz: 1.59e6,
            omega_r_hz: 400e3,
            delta: 0.0104,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IonSection {
    pub mass_kg: f64,
    pub charge_c: f64,
    pub wavelength_nm: f64,
    /// Natural linewidth gamma_0 / 2 pi.
    pub linewidth_hz: f64,
}

impl Default for IonSection {
    fn default() -> Self {
        let be = IonSpecies::beryllium9();
        IonSection {
            mass_kg: be.mass,
            charge_c: be.charge,
            wavelength_nm: be.transition_wavelength * 1e9,
            linewidth_hz: be.linewidth / (2.0 * PI),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerpBeamSection {
    pub enabled: bool,
    pub detuning_hz: f64,
    pub offset_um: f64,
    pub waist_y_um: f64,
    pub waist_z_um: f64,
    pub saturation: f64,
}

impl Default for PerpBeamSection {
    fn default() -> Self {
        PerpBeamSection {
            enabled: true,
            detuning_hz: PERP_DETUNING_HZ,
            offset_um: PERP_OFFSET * 1e6,
            waist_y_um: 20.0 * SQRT_2,
            waist_z_um: 100.0 * SQRT_2,
            saturation: PERP_SATURATION,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamsSection {
    pub axial: bool,
    pub axial_saturation: f64,
    /// Defaults to half the natural linewidth to the red.
    pub axial_detuning_hz: Option<f64>,
    pub perp: PerpBeamSection,
}

impl Default for BeamsSection {
    fn default() -> Self {
        BeamsSection {
            axial: true,
            axial_saturation: AXIAL_SATURATION,
            axial_detuning_hz: None,
            perp: PerpBeamSection::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoulombChoice {
    Direct,
    Tree,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub dt_ns: f64,
    pub duration_us: f64,
    pub seed: u64,
    /// Steps between temperature samples.
    pub snapshot_interval: u64,
    /// Steps between confinement snapshots inside the rms window.
    pub rms_interval: u64,
    /// Trailing window for the rms displacements.
    pub rms_window_us: f64,
    pub coulomb: CoulombChoice,
    pub tree_theta: f64,
    pub tree_order: usize,
    /// Steps between checkpoints; none when absent.
    pub checkpoint_interval: Option<u64>,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            dt_ns: 1.0,
            duration_us: 5000.0,
            seed: 1,
            snapshot_interval: 1000,
            rms_interval: 100,
            rms_window_us: 1000.0,
            coulomb: CoulombChoice::Direct,
            tree_theta: DEFAULT_THETA,
            tree_order: DEFAULT_ORDER,
            checkpoint_interval: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EquilibriumSection {
    pub damping_fraction: f64,
    pub damping_dt_ns: f64,
    pub max_steps: usize,
    pub force_tol: f64,
    pub refine: bool,
    pub refine_max_ions: usize,
    pub grad_tol: f64,
}

impl Default for EquilibriumSection {
    fn default() -> Self {
        let d = DampingSettings::default();
        let q = QuasiNewtonSettings::default();
        EquilibriumSection {
            damping_fraction: d.damping_fraction,
            damping_dt_ns: d.dt * 1e9,
            max_steps: d.max_steps,
            force_tol: d.force_tol,
            refine: true,
            refine_max_ions: 2000,
            grad_tol: q.grad_tol,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThermalizeSection {
    pub temperature_mk: f64,
    pub method: PositionMethod,
    pub mh_step_um: f64,
    pub mh_scans: usize,
    /// Velocity relaxation time m / gamma of the thermostat.
    pub langevin_relaxation_us: f64,
    pub langevin_steps: usize,
}

impl Default for ThermalizeSection {
    fn default() -> Self {
        ThermalizeSection {
            temperature_mk: 10.0,
            method: PositionMethod::MetropolisHastings,
            mh_step_um: 0.5,
            mh_scans: 1000,
            langevin_relaxation_us: 10.0,
            langevin_steps: 100_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    pub perp_detuning_hz: Vec<f64>,
    pub perp_offset_um: Vec<f64>,
    pub duration_us: f64,
}

/// File-level view of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpecFile {
    pub n_ions: usize,
    pub pipeline: Vec<Stage>,
    pub trap: TrapSection,
    pub ion: IonSection,
    pub beams: BeamsSection,
    pub sim: SimSection,
    pub equilibrium: EquilibriumSection,
    pub thermalize: ThermalizeSection,
    pub scan: Option<ScanSection>,
}

impl Default for SpecFile {
    fn default() -> Self {
        SpecFile {
            n_ions: 100,
            pipeline: vec![Stage::Equilibrate, Stage::Thermalize, Stage::Cool],
            trap: TrapSection::default(),
            ion: IonSection::default(),
            beams: BeamsSection::default(),
            sim: SimSection::default(),
            equilibrium: EquilibriumSection::default(),
            thermalize: ThermalizeSection::default(),
            scan: None,
        }
    }
}

/// Sets `path` (dotted keys) in `table`, creating intermediate tables.
fn set_dotted(table: &mut toml::Table, path: &str, value: toml::Value) -> Result<()> {
    let mut keys = path.split('.').peekable();
    let mut current = table;
    while let Some(key) = keys.next() {
        if key.is_empty() {
            return Err(Error::InvalidConfig(format!("bad key `{path}`")));
        }
        if keys.peek().is_none() {
            current.insert(key.to_string(), value);
            return Ok(());
        }
        let entry = current
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        current = entry
            .as_table_mut()
            .ok_or_else(|| Error::InvalidConfig(format!("`{key}` in `{path}` is not a table")))?;
    }
    Ok(())
}

/// Parses the right-hand side of `key=value` as a TOML value, falling back
/// to a bare string.
fn parse_override_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or(toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl SpecFile {
    /// Parses TOML text and applies `key=value` overrides with dotted keys.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string()))?;
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("override `{item}` is not key=value")))?;
            set_dotted(&mut table, key.trim(), parse_override_value(raw.trim()))?;
        }
        SpecFile::deserialize(toml::Value::Table(table)).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, overrides)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanGrid {
    /// rad/s
    pub perp_detuning: Vec<f64>,
    /// m
    pub perp_offset: Vec<f64>,
    /// s
    pub duration: f64,
}

/// SI view of a validated [`SpecFile`].
#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    pub file: SpecFile,
    pub hash: String,
    pub n_ions: usize,
    pub trap: TrapConfig,
    pub ion: IonSpecies,
    pub beams: BeamSet,
    pub sim: SimConfig,
    pub equilibrium: EquilibrateSettings,
    pub thermalize: ThermalizeConfig,
    pub pipeline: Vec<Stage>,
    pub scan: Option<ScanGrid>,
    /// s
    pub rms_window: f64,
    pub rms_interval: u64,
    pub checkpoint_interval: Option<u64>,
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")))
    }
}

/// The +x Gaussian beam with the given detuning (rad/s) and offset (m).
pub fn perp_beam(section: &PerpBeamSection, detuning: f64, offset: f64) -> Result<BeamConfig> {
    BeamConfig::new(
        Vec3::x(),
        detuning,
        section.saturation,
        section.waist_y_um * 1e-6,
        section.waist_z_um * 1e-6,
        offset,
    )
}

impl ExperimentSpec {
    pub fn from_file(file: SpecFile) -> Result<Self> {
        if file.n_ions == 0 {
            return Err(Error::InvalidConfig("n_ions must be >= 1".into()));
        }
        if file.pipeline.is_empty() || !file.pipeline.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidConfig(
                "pipeline must list stages once, in the order equilibrate, thermalize, cool".into(),
            ));
        }
        let i = &file.ion;
        let ion = IonSpecies::new(i.mass_kg, i.charge_c, i.wavelength_nm * 1e-9, 2.0 * PI * i.linewidth_hz)?;
        let t = &file.trap;
        let trap = TrapConfig::from_hz(t.b_field_tesla, t.omega_z_hz, t.omega_r_hz, t.delta);
        trap.validate(&ion)?;

        let b = &file.beams;
        let mut beams = BeamSet::empty();
        if b.axial {
            let detuning = b.axial_detuning_hz.map_or(-0.5 * ion.linewidth, |hz| 2.0 * PI * hz);
            for dir in [Vec3::z(), -Vec3::z()] {
                beams.beams.push(BeamConfig::uniform(dir, detuning, b.axial_saturation)?);
            }
        }
        if b.perp.enabled {
            beams.beams.push(perp_beam(&b.perp, 2.0 * PI * b.perp.detuning_hz, b.perp.offset_um * 1e-6)?);
        }

        let s = &file.sim;
        let dt = positive("sim.dt_ns", s.dt_ns)? * 1e-9;
        let coulomb_method = match s.coulomb {
            CoulombChoice::Direct => CoulombMethod::Direct,
            CoulombChoice::Tree => CoulombMethod::Tree {
                theta: s.tree_theta,
                order: s.tree_order,
            },
        };
        let sim = SimConfig {
            dt,
            n_steps: (s.duration_us.max(0.0) * 1e-6 / dt).round() as u64,
            rng_seed: s.seed,
            coulomb_method,
            snapshot_interval: s.snapshot_interval,
        };
        sim.validate()?;
        if s.rms_interval == 0 {
            return Err(Error::InvalidConfig("sim.rms_interval must be >= 1".into()));
        }
        if s.checkpoint_interval == Some(0) {
            return Err(Error::InvalidConfig("sim.checkpoint_interval must be >= 1".into()));
        }

        let e = &file.equilibrium;
        let equilibrium = EquilibrateSettings {
            damping: DampingSettings {
                damping_fraction: e.damping_fraction,
                dt: positive("equilibrium.damping_dt_ns", e.damping_dt_ns)? * 1e-9,
                max_steps: e.max_steps,
                force_tol: e.force_tol,
            },
            refine: QuasiNewtonSettings {
                grad_tol: e.grad_tol,
                ..QuasiNewtonSettings::default()
            },
            refine_max_ions: Some(if e.refine { e.refine_max_ions } else { 0 }),
        };

        let th = &file.thermalize;
        let thermalize = ThermalizeConfig {
            target_temperature: th.temperature_mk * 1e-3,
            mh_step: th.mh_step_um * 1e-6,
            mh_scans: th.mh_scans,
            langevin_gamma: ion.mass / (positive("thermalize.langevin_relaxation_us", th.langevin_relaxation_us)? * 1e-6),
            langevin_steps: th.langevin_steps,
            langevin_dt: dt,
            method: th.method,
        };
        thermalize.validate()?;

        let scan = match &file.scan {
            None => None,
            Some(sc) => {
                if sc.perp_detuning_hz.is_empty() || sc.perp_offset_um.is_empty() {
                    return Err(Error::InvalidConfig("scan grids must be non-empty".into()));
                }
                Some(ScanGrid {
                    perp_detuning: sc.perp_detuning_hz.iter().map(|hz| 2.0 * PI * hz).collect(),
                    perp_offset: sc.perp_offset_um.iter().map(|um| um * 1e-6).collect(),
                    duration: positive("scan.duration_us", sc.duration_us)? * 1e-6,
                })
            }
        };

        Ok(ExperimentSpec {
            hash: file.hash(),
            n_ions: file.n_ions,
            trap,
            ion,
            beams,
            sim,
            equilibrium,
            thermalize,
            pipeline: file.pipeline.clone(),
            scan,
            rms_window: s.rms_window_us.max(0.0) * 1e-6,
            rms_interval: s.rms_interval,
            checkpoint_interval: s.checkpoint_interval,
            file,
        })
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        Self::from_file(SpecFile::load(path, overrides)?)
    }

    pub fn field(&self) -> ForceField {
        ForceField::new(self.trap, self.ion, self.sim.coulomb_method)
    }

    pub fn seed(&self) -> u64 {
        self.sim.rng_seed
    }
}
