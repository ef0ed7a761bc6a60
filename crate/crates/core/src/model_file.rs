//! Binary model persistence.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"EARNNMDL"            magic
//! u32                    format version
//! u64                    header length in bytes
//! [u8; header length]    UTF-8 JSON header
//! f64 × Σ tensor sizes   tensors in manifest order
//! ```
//!
//! The JSON header carries the vocabulary, the variant, a configuration
//! snapshot and the tensor manifest (name and `[rows, cols]` per tensor).
//! Floats travel as raw bits, so a load reproduces every parameter exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingTable, Vocabulary};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::network::{ModelParams, ModelShape, VariantConfig, TENSOR_NAMES};
use crate::training::TrainConfig;

pub const MAGIC: &[u8; 8] = b"EARNNMDL";
pub const FORMAT_VERSION: u32 = 1;

/// Hyperparameters recorded alongside the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub head_dim: usize,
    pub decay_horizon: f64,
    pub margin: f64,
    pub init_seed: u64,
    /// Absent for models that were never trained.
    pub train: Option<TrainConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    vocabulary: Vocabulary,
    variant: VariantConfig,
    config: ConfigSnapshot,
    tensors: Vec<TensorEntry>,
}

/// A trained model with everything needed to score new text.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub vocab: Vocabulary,
    pub variant: VariantConfig,
    pub params: ModelParams,
    pub init_seed: u64,
    pub train: Option<TrainConfig>,
}

impl ModelFile {
    pub fn snapshot(&self) -> ConfigSnapshot {
        let s = self.params.shape();
        ConfigSnapshot {
            embed_dim: s.embed_dim,
            hidden_dim: s.hidden_dim,
            head_dim: s.head_dim,
            decay_horizon: self.params.decay_horizon,
            margin: self.params.margin,
            init_seed: self.init_seed,
            train: self.train,
        }
    }

    fn manifest(&self) -> Vec<TensorEntry> {
        let s = self.params.shape();
        let (k, h, u, v) = (s.embed_dim, s.hidden_dim, s.head_dim, self.params.embeddings.len());
        let shapes = [
            [4 * h, k + h],
            [4 * h, 1],
            [4 * h, k + h],
            [4 * h, 1],
            [k, k],
            [u, 2 * k],
            [u, 1],
            [u, 1],
            [1, 1],
            [v, k],
        ];
        TENSOR_NAMES
            .iter()
            .zip(shapes)
            .map(|(n, shape)| TensorEntry {
                name: n.to_string(),
                shape,
            })
            .collect()
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        self.params.validate()?;
        if self.vocab.len() != self.params.embeddings.len() {
            return Err(Error::ModelFile(format!(
                "vocabulary has {} words but the embedding table has {} rows",
                self.vocab.len(),
                self.params.embeddings.len()
            )));
        }
        let header = Header {
            vocabulary: self.vocab.clone(),
            variant: self.variant,
            config: self.snapshot(),
            tensors: self.manifest(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut buf = Vec::with_capacity(json.len() + 20);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&json);
        for t in self.params.tensors() {
            for v in t {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&buf).map_err(|e| Error::ModelFile(e.to_string()))
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let bad = |m: &str| Error::ModelFile(m.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("not a model file (bad magic)"));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word).map_err(|_| bad("truncated header"))?;
        let version = u32::from_le_bytes(word);
        if version != FORMAT_VERSION {
            return Err(Error::ModelFile(format!("unsupported format version {version}")));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len).map_err(|_| bad("truncated header"))?;
        let len = usize::try_from(u64::from_le_bytes(len)).map_err(|_| bad("header too large"))?;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json).map_err(|_| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&json)?;

        let c = &header.config;
        let shape = ModelShape {
            embed_dim: c.embed_dim,
            hidden_dim: c.hidden_dim,
            head_dim: c.head_dim,
        };
        let rows = header.vocabulary.len();
        let embeddings = EmbeddingTable::from_matrix(Matrix::zeros(rows, c.embed_dim))?;
        let mut params = ModelParams::zeros(shape, embeddings)?;
        params.decay_horizon = c.decay_horizon;
        params.margin = c.margin;
        let model = ModelFile {
            vocab: header.vocabulary,
            variant: header.variant,
            params,
            init_seed: c.init_seed,
            train: c.train,
        };
        if model.manifest() != header.tensors {
            return Err(bad("tensor manifest does not match the recorded shape"));
        }
        let mut model = model;
        let mut bytes = [0u8; 8];
        for t in model.params.tensors_mut() {
            for v in t.iter_mut() {
                r.read_exact(&mut bytes).map_err(|_| bad("truncated tensor data"))?;
                *v = f64::from_le_bytes(bytes);
            }
        }
        if r.read(&mut bytes).map_err(|e| Error::ModelFile(e.to_string()))? != 0 {
            return Err(bad("trailing bytes after tensor data"));
        }
        if model.params.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(bad("non-finite parameter"));
        }
        model.params.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(f))
    }
}
