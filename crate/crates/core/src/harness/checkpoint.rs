//! Resumable snapshots of a cooling run. The file is JSON with exact float
//! round-trips; a SHA-256 of the body guards against corruption and the
//! code version plus spec hash guard against resuming the wrong run.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cooling::BeamSet;
use crate::diagnostics::{RmsAccumulator, TemperatureSample};
use crate::error::{Error, Result};
use crate::model::{SystemState, Vec3};

pub const CHECKPOINT_FORMAT: u32 = 1;

/// Identifies the build that wrote a file.
pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), "-", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointBody {
    pub spec_hash: String,
    pub seed: u64,
    pub beams: BeamSet,
    pub step: u64,
    pub n_steps: u64,
    /// Lab-frame state after `step` steps.
    pub state: SystemState,
    /// Rotating-frame reference equilibrium.
    pub reference: Vec<Vec3>,
    pub stream_positions: Vec<u128>,
    pub samples: Vec<TemperatureSample>,
    pub rms: RmsAccumulator,
    pub photons: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CheckpointFile {
    format: u32,
    code_version: String,
    checksum: String,
    body: CheckpointBody,
}

fn checksum(body: &CheckpointBody) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(body)?)))
}

pub fn save_checkpoint(path: &Path, body: &CheckpointBody) -> Result<()> {
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT,
        code_version: CODE_VERSION.to_string(),
        checksum: checksum(body)?,
        body: body.clone(),
    };
    // write-then-rename keeps the previous checkpoint intact on failure
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, serde_json::to_vec(&file)?)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Loads a checkpoint written by this build for the experiment hashing to `spec_hash`.
pub fn load_checkpoint(path: &Path, spec_hash: &str) -> Result<CheckpointBody> {
    let bytes = fs::read(path)?;
    let file: CheckpointFile =
        serde_json::from_slice(&bytes).map_err(|e| Error::Corrupt(format!("checkpoint {}: {e}", path.display())))?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(Error::CheckpointMismatch(format!("format {} (expected {CHECKPOINT_FORMAT})", file.format)));
    }
    if file.code_version != CODE_VERSION {
        return Err(Error::CheckpointMismatch(format!(
            "written by {} (this is {CODE_VERSION})",
            file.code_version
        )));
    }
    if checksum(&file.body)? != file.checksum {
        return Err(Error::Corrupt(format!("checkpoint {} fails its checksum", path.display())));
    }
    if file.body.spec_hash != spec_hash {
        return Err(Error::CheckpointMismatch("spec hash differs".into()));
    }
    Ok(file.body)
}
