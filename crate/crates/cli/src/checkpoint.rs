//! Binary checkpoint: a JSON header followed by named little-endian tensors.
//!
//! ```text
//! b"GLMCKPT\0"  u32 version  u64 header_len  header (JSON)
//! u32 tensor_count
//! per tensor: u32 name_len, name, u8 bytes_per_value (4|8), u8 trainable,
//!             u32 ndim, u64 dims[ndim], data
//! ```
//!
//! Optimizer moments are stored as extra tensors named `adam.first/<name>`
//! and `adam.second/<name>`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use grouplm_core::lm::{ModelConfig, ParamEntry, Params, Tensor};
use grouplm_core::train::{Adam, SplitSpec, StepLog, TrainConfig, TrainerState};

use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 8] = b"GLMCKPT\0";
pub const VERSION: u32 = 1;

const FIRST: &str = "adam.first/";
const SECOND: &str = "adam.second/";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub version: u32,
    pub config: ModelConfig,
    pub target: ModelConfig,
    pub train: TrainConfig,
    pub split: SplitSpec,
    /// Checksums of the corpus and embedding files the run used.
    pub corpus_sha3: String,
    pub embeddings_sha3: Option<String>,
    pub step: usize,
    pub phase_start: usize,
    pub substituted_at: Option<usize>,
    pub adam_t: u64,
    pub curve: Vec<StepLog>,
    pub evals: Vec<(usize, f64)>,
    pub best_eval: Option<f64>,
    pub bad_evals: usize,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: Header,
    pub state: TrainerState,
}

impl Checkpoint {
    pub fn new(
        state: TrainerState,
        train: TrainConfig,
        split: SplitSpec,
        corpus_sha3: String,
        embeddings_sha3: Option<String>,
    ) -> Self {
        let header = Header {
            version: VERSION,
            config: state.config.clone(),
            target: state.target.clone(),
            train,
            split,
            corpus_sha3,
            embeddings_sha3,
            step: state.step,
            phase_start: state.phase_start,
            substituted_at: state.substituted_at,
            adam_t: state.adam.t,
            curve: state.curve.clone(),
            evals: state.evals.clone(),
            best_eval: state.best_eval,
            bad_evals: state.bad_evals,
            stopped_early: state.stopped_early,
        };
        Checkpoint { header, state }
    }

    pub fn to_bytes(&self) -> CliResult<Vec<u8>> {
        let header =
            serde_json::to_vec(&self.header).map_err(|e| CliError::Usage(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);

        let params = &self.state.params;
        let adam = &self.state.adam;
        let mut tensors: Vec<(String, bool, &Tensor<f32>)> = params
            .entries()
            .iter()
            .map(|e| (e.name.clone(), e.trainable, &e.tensor))
            .collect();
        for (i, e) in params.entries().iter().enumerate() {
            if let Some(m) = &adam.first[i] {
                tensors.push((format!("{FIRST}{}", e.name), false, m));
            }
            if let Some(v) = &adam.second[i] {
                tensors.push((format!("{SECOND}{}", e.name), false, v));
            }
        }
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, trainable, t) in tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(4);
            out.push(trainable as u8);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> CliResult<Self> {
        let bad =
            |m: &str| CliError::Data(format!("{}: corrupt checkpoint ({m})", origin.display()));
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8).ok_or_else(|| bad("truncated"))? != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = r.u32().ok_or_else(|| bad("truncated"))?;
        if version != VERSION {
            return Err(CliError::Data(format!(
                "{}: checkpoint version {version}, this build reads {VERSION}",
                origin.display()
            )));
        }
        let len = r.u64().ok_or_else(|| bad("truncated"))? as usize;
        let header: Header = serde_json::from_slice(r.take(len).ok_or_else(|| bad("truncated"))?)
            .map_err(|e| bad(&e.to_string()))?;
        let count = r.u32().ok_or_else(|| bad("truncated"))?;
        let mut entries = Vec::new();
        let mut moments = Vec::new();
        for _ in 0..count {
            let name_len = r.u32().ok_or_else(|| bad("truncated"))? as usize;
            let name = std::str::from_utf8(r.take(name_len).ok_or_else(|| bad("truncated"))?)
                .map_err(|_| bad("tensor name"))?
                .to_string();
            let width = r.u8().ok_or_else(|| bad("truncated"))?;
            let trainable = r.u8().ok_or_else(|| bad("truncated"))? != 0;
            let ndim = r.u32().ok_or_else(|| bad("truncated"))? as usize;
            let shape: Vec<usize> = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Option<_>>()
                .ok_or_else(|| bad("truncated"))?;
            let n: usize = shape.iter().product();
            let data: Vec<f32> = match width {
                4 => (0..n).map(|_| r.f32()).collect::<Option<_>>(),
                8 => (0..n)
                    .map(|_| r.f64().map(|x| x as f32))
                    .collect::<Option<_>>(),
                _ => return Err(bad("value width")),
            }
            .ok_or_else(|| bad("truncated"))?;
            let tensor = Tensor::from_vec(&shape, data);
            if name.starts_with(FIRST) || name.starts_with(SECOND) {
                moments.push((name, tensor));
            } else {
                entries.push(ParamEntry {
                    name,
                    tensor,
                    trainable,
                });
            }
        }
        let params = Params::from_entries(entries)?;
        params.check_against(&header.config)?;
        let mut adam = Adam::new(header.train.adam, params.entries().len());
        adam.t = header.adam_t;
        for (name, t) in moments {
            let (slot, base) = match name.strip_prefix(FIRST) {
                Some(base) => (&mut adam.first, base),
                None => (&mut adam.second, &name[SECOND.len()..]),
            };
            let i = params
                .index_of(base)
                .ok_or_else(|| bad("moment without tensor"))?;
            slot[i] = Some(t);
        }
        let state = TrainerState {
            config: header.config.clone(),
            target: header.target.clone(),
            params,
            adam,
            step: header.step,
            phase_start: header.phase_start,
            substituted_at: header.substituted_at,
            curve: header.curve.clone(),
            evals: header.evals.clone(),
            best_eval: header.best_eval,
            bad_evals: header.bad_evals,
            stopped_early: header.stopped_early,
        };
        Ok(Checkpoint { header, state })
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        let bytes = self.to_bytes()?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8)
            .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f32(&mut self) -> Option<f32> {
        self.take(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64(&mut self) -> Option<f64> {
        self.take(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
    }
}
