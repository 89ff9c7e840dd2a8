//! Binary checkpoints of a training run.
//!
//! Layout: the 8-byte magic `CWCFCKPT`, a little-endian `u32` version, a
//! `u64` header length, a JSON header, then four little-endian `f64` arrays
//! of `n_params` values each: online parameters, target parameters and the
//! two Adam moments.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::budget::LagrangeState;
use crate::net::{AdamState, Architecture, QNetwork};

const MAGIC: &[u8; 8] = b"CWCFCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("checkpoint inconsistent: {0}")]
    Inconsistent(String),
}

/// Position of a ChaCha8 generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Word position, stored as a decimal string (it is a `u128`).
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng, CheckpointError> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| CheckpointError::Inconsistent(format!("bad word position {:?}", self.word_pos)))?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub architecture: Architecture,
    pub online: Vec<f64>,
    pub target: Vec<f64>,
    pub adam: AdamState,
    pub step: u64,
    pub lambda: f64,
    pub lagrange: Option<LagrangeState>,
    pub rng: RngState,
    /// Free-form run metadata (configuration, budget).
    pub meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Header {
    architecture: Architecture,
    n_params: usize,
    step: u64,
    lambda: f64,
    lagrange: Option<LagrangeState>,
    rng: RngState,
    adam_beta1: f64,
    adam_beta2: f64,
    adam_epsilon: f64,
    adam_step: u64,
    meta: serde_json::Value,
}

impl Checkpoint {
    pub fn online_net(&self) -> Result<QNetwork, CheckpointError> {
        QNetwork::from_params(self.architecture.clone(), self.online.clone())
            .map_err(|e| CheckpointError::Inconsistent(e.to_string()))
    }

    pub fn target_net(&self) -> Result<QNetwork, CheckpointError> {
        QNetwork::from_params(self.architecture.clone(), self.target.clone())
            .map_err(|e| CheckpointError::Inconsistent(e.to_string()))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), CheckpointError> {
        let n = self.online.len();
        if [self.target.len(), self.adam.m.len(), self.adam.v.len()].iter().any(|&l| l != n) {
            return Err(CheckpointError::Inconsistent("parameter arrays differ in length".into()));
        }
        let header = serde_json::to_vec(&Header {
            architecture: self.architecture.clone(),
            n_params: n,
            step: self.step,
            lambda: self.lambda,
            lagrange: self.lagrange.clone(),
            rng: self.rng.clone(),
            adam_beta1: self.adam.beta1,
            adam_beta2: self.adam.beta2,
            adam_epsilon: self.adam.epsilon,
            adam_step: self.adam.step,
            meta: self.meta.clone(),
        })?;
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u64::<LittleEndian>(header.len() as u64)?;
        w.write_all(&header)?;
        for array in [&self.online, &self.target, &self.adam.m, &self.adam.v] {
            for &x in array.iter() {
                w.write_f64::<LittleEndian>(x)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let len = r.read_u64::<LittleEndian>()?;
        let mut buf = vec![0u8; len as usize];
        r.read_exact(&mut buf)?;
        let h: Header = serde_json::from_slice(&buf)?;
        let mut read_array = || -> Result<Vec<f64>, CheckpointError> {
            let mut v = vec![0.0; h.n_params];
            r.read_f64_into::<LittleEndian>(&mut v)?;
            Ok(v)
        };
        let online = read_array()?;
        let target = read_array()?;
        let m = read_array()?;
        let v = read_array()?;
        let ckpt = Self {
            architecture: h.architecture,
            online,
            target,
            adam: AdamState {
                beta1: h.adam_beta1,
                beta2: h.adam_beta2,
                epsilon: h.adam_epsilon,
                step: h.adam_step,
                m,
                v,
            },
            step: h.step,
            lambda: h.lambda,
            lagrange: h.lagrange,
            rng: h.rng,
            meta: h.meta,
        };
        ckpt.online_net()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}
