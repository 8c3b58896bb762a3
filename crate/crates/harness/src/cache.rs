//! Pseudo-GT reference endpoints, persisted under a content-addressed key.
//!
//! A cache file is one JSON header line followed by the endpoints as raw
//! little-endian `f64`. The header stores a SHA-256 of that payload and of the
//! initial noise the trajectories started from.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use dualfast_core::rng;
use dualfast_core::{Counting, GridScheme, SolverConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{canonical_hash, ExperimentConfig, MixtureSpec, OracleSpec, ScheduleSpec};
use crate::error::{HarnessError, Result};
use crate::run::run_batch;

const FORMAT: u32 = 1;

#[derive(Serialize)]
struct CacheKey<'a> {
    schedule: &'a ScheduleSpec,
    mixture: &'a MixtureSpec,
    oracle: &'a OracleSpec,
    seed: u64,
    batch: usize,
    n_ref: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format: u32,
    key: String,
    batch: usize,
    dim: usize,
    n_ref: usize,
    noise_hash: String,
    content_hash: String,
}

/// Reference endpoints plus the identity of the noise they started from.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub key: String,
    pub noise_hash: String,
    pub endpoints: Vec<Vec<f64>>,
    /// Oracle evaluations spent producing this value; 0 on a cache hit.
    pub nfe: u64,
}

impl Reference {
    pub fn batch(&self) -> usize {
        self.endpoints.len()
    }
}

#[derive(Debug, Clone)]
pub struct ReferenceCache {
    dir: PathBuf,
}

pub fn reference_key(config: &ExperimentConfig) -> String {
    canonical_hash(&CacheKey {
        schedule: &config.schedule,
        mixture: &config.mixture,
        oracle: &config.oracle,
        seed: config.seed,
        batch: config.batch,
        n_ref: config.reference_nfe,
    })
}

/// SHA-256 over the little-endian bytes of a batch of vectors.
pub fn batch_hash(xs: &[Vec<f64>]) -> String {
    let mut h = Sha256::new();
    for x in xs {
        for v in x {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// The initial noise batch every paired run of `config` starts from.
pub fn initial_noise(config: &ExperimentConfig, dim: usize) -> Vec<Vec<f64>> {
    rng::initial_noise_batch(config.seed, config.batch, dim)
}

impl ReferenceCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn for_config(config: &ExperimentConfig) -> Self {
        Self::new(config.cache_dir())
    }

    pub fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("reference-{key}.bin"))
    }

    /// Load the entry for `config`, computing and storing it on a miss.
    pub fn get_or_build(&self, config: &ExperimentConfig) -> Result<Reference> {
        let key = reference_key(config);
        let path = self.path_for(&key);
        if path.exists() {
            return read_entry(&path, &key);
        }
        fs::create_dir_all(&self.dir).map_err(|e| HarnessError::io(&self.dir, e))?;
        let lock_path = self.dir.join(format!("reference-{key}.lock"));
        let lock = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&lock_path)
            .map_err(|e| HarnessError::io(&lock_path, e))?;
        lock.lock().map_err(|e| HarnessError::io(&lock_path, e))?;
        // another writer may have finished while we waited
        if path.exists() {
            return read_entry(&path, &key);
        }
        let reference = build_reference(config, key)?;
        write_entry(&path, &reference, config.reference_nfe)?;
        lock.unlock().map_err(|e| HarnessError::io(&lock_path, e))?;
        Ok(reference)
    }
}

/// DDIM at `reference_nfe` steps on a uniform-logSNR grid with the configured
/// oracle, from the config's initial noise.
pub fn build_reference(config: &ExperimentConfig, key: String) -> Result<Reference> {
    let schedule = config.schedule()?;
    let oracle = Counting::new(config.oracle()?);
    let grid = schedule.make_grid(config.reference_nfe, GridScheme::UniformLogSnr)?;
    let noise = initial_noise(config, dualfast_core::NoiseOracle::dim(&oracle));
    let endpoints = run_batch(&schedule, &oracle, &SolverConfig::ddim(), &grid, &noise)?;
    Ok(Reference { key, noise_hash: batch_hash(&noise), endpoints, nfe: oracle.count() })
}

fn write_entry(path: &Path, r: &Reference, n_ref: usize) -> Result<()> {
    let dim = r.endpoints.first().map_or(0, Vec::len);
    let mut payload = Vec::with_capacity(r.endpoints.len() * dim * 8);
    for x in &r.endpoints {
        for v in x {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = Header {
        format: FORMAT,
        key: r.key.clone(),
        batch: r.endpoints.len(),
        dim,
        n_ref,
        noise_hash: r.noise_hash.clone(),
        content_hash: hex::encode(Sha256::digest(&payload)),
    };
    let tmp = path.with_extension("tmp");
    let io = |e| HarnessError::io(&tmp, e);
    let mut f = File::create(&tmp).map_err(io)?;
    let line = serde_json::to_string(&header).expect("header serializes");
    f.write_all(line.as_bytes()).map_err(io)?;
    f.write_all(b"\n").map_err(io)?;
    f.write_all(&payload).map_err(io)?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))
}

fn read_entry(path: &Path, key: &str) -> Result<Reference> {
    let io = |e| HarnessError::io(path, e);
    let mut reader = BufReader::new(File::open(path).map_err(io)?);
    let mut line = String::new();
    reader.read_line(&mut line).map_err(io)?;
    let header: Header =
        serde_json::from_str(line.trim_end()).map_err(|e| HarnessError::Cache(format!("{}: {e}", path.display())))?;
    if header.format != FORMAT || header.key != key {
        return Err(HarnessError::Cache(format!("{}: header does not match key", path.display())));
    }
    let mut payload = Vec::new();
    reader.read_to_end(&mut payload).map_err(io)?;
    if hex::encode(Sha256::digest(&payload)) != header.content_hash || payload.len() != header.batch * header.dim * 8 {
        return Err(HarnessError::Cache(format!("{}: content hash mismatch", path.display())));
    }
    let values: Vec<f64> = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let endpoints = values.chunks(header.dim.max(1)).map(<[f64]>::to_vec).collect();
    Ok(Reference { key: key.to_string(), noise_hash: header.noise_hash, endpoints, nfe: 0 })
}
