//! Single-file checkpoints: an 8-byte magic, a little-endian `u32` manifest
//! length, a JSON manifest, then the parameters as little-endian `f32`
//! values concatenated in manifest order.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crafted_core::model::{Classifier, ClassifierArch, NoisePredictor, PredictorArch};
use crafted_core::nn::ParamLayout;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MAGIC: &[u8; 8] = b"CRAFTCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: not a checkpoint file (bad magic)")]
    BadMagic { path: PathBuf },
    #[error("{path}: unsupported format version {found} (expected {FORMAT_VERSION})")]
    Version { path: PathBuf, found: u32 },
    #[error("{path}: malformed manifest: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("{path}: payload hash mismatch (manifest {expected}, payload {found})")]
    Hash { path: PathBuf, expected: String, found: String },
    #[error("{path}: shape mismatch: {message}")]
    Shape { path: PathBuf, message: String },
    #[error("{path}: expected a {expected} checkpoint, found {found}")]
    Kind { path: PathBuf, expected: &'static str, found: &'static str },
}

/// Architecture descriptor stored in the manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    NoisePredictor(PredictorArch),
    Classifier(ClassifierArch),
}

impl Architecture {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::NoisePredictor(_) => "noise_predictor",
            Self::Classifier(_) => "classifier",
        }
    }

    pub fn layout(&self) -> ParamLayout {
        match self {
            Self::NoisePredictor(a) => a.layout(),
            Self::Classifier(a) => a.layout(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
}

impl TensorEntry {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Where the parameters came from.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed_base: u64,
    pub config_hash: String,
    /// Set for attacked models: the class whose generations were targeted.
    pub attack_target: Option<usize>,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub architecture: Architecture,
    pub tensors: Vec<TensorEntry>,
    pub provenance: Provenance,
    pub payload_sha256: String,
}

impl Manifest {
    pub fn payload_bytes(&self) -> usize {
        4 * self.tensors.iter().map(TensorEntry::numel).sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub params: Vec<f32>,
}

fn tensor_entries(layout: &ParamLayout) -> Vec<TensorEntry> {
    layout
        .specs()
        .iter()
        .map(|s| TensorEntry { name: s.name.clone(), shape: s.shape.clone(), dtype: "f32".into() })
        .collect()
}

fn payload(params: &[f32]) -> Vec<u8> {
    params.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Checkpoint {
    pub fn new(architecture: Architecture, params: Vec<f32>, provenance: Provenance) -> Self {
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            architecture,
            tensors: tensor_entries(&architecture.layout()),
            provenance,
            payload_sha256: sha256_hex(&payload(&params)),
        };
        Self { manifest, params }
    }

    pub fn from_predictor(model: &NoisePredictor<f32>, provenance: Provenance) -> Self {
        Self::new(Architecture::NoisePredictor(*model.arch()), model.params().to_vec(), provenance)
    }

    pub fn from_classifier(model: &Classifier<f32>, provenance: Provenance) -> Self {
        Self::new(Architecture::Classifier(*model.arch()), model.params().to_vec(), provenance)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = serde_json::to_vec(&self.manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(12 + manifest.len() + 4 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(&manifest);
        out.extend_from_slice(&payload(&self.params));
        out
    }

    /// Parses and verifies a checkpoint; `path` is only used for error context.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self, CheckpointError> {
        let path_buf = || path.to_path_buf();
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(CheckpointError::BadMagic { path: path_buf() });
        }
        let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = bytes.get(12..12 + len).ok_or_else(|| CheckpointError::Shape {
            path: path_buf(),
            message: format!("manifest length {len} exceeds file size {}", bytes.len()),
        })?;
        let raw: serde_json::Value = serde_json::from_slice(body)
            .map_err(|e| CheckpointError::Manifest { path: path_buf(), message: e.to_string() })?;
        // check the version before the rest of the schema, which may change with it
        let version = raw.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version { path: path_buf(), found: version });
        }
        let manifest: Manifest = serde_json::from_value(raw)
            .map_err(|e| CheckpointError::Manifest { path: path_buf(), message: e.to_string() })?;

        let expected_tensors = tensor_entries(&manifest.architecture.layout());
        if manifest.tensors != expected_tensors {
            return Err(CheckpointError::Shape {
                path: path_buf(),
                message: "tensor list does not match the declared architecture".into(),
            });
        }
        let data = &bytes[12 + len..];
        if data.len() != manifest.payload_bytes() {
            return Err(CheckpointError::Shape {
                path: path_buf(),
                message: format!("payload has {} bytes, manifest requires {}", data.len(), manifest.payload_bytes()),
            });
        }
        let found = sha256_hex(data);
        if found != manifest.payload_sha256 {
            return Err(CheckpointError::Hash { path: path_buf(), expected: manifest.payload_sha256, found });
        }
        let params = data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Self { manifest, params })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io = |source| CheckpointError::Io { path: path.to_path_buf(), source };
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io)?;
        }
        let mut f = fs::File::create(path).map_err(io)?;
        f.write_all(&self.to_bytes()).map_err(io)?;
        f.sync_all().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })?;
        Self::from_bytes(&bytes, path)
    }

    pub fn into_predictor(self, path: &Path) -> Result<NoisePredictor<f32>, CheckpointError> {
        match self.manifest.architecture {
            Architecture::NoisePredictor(arch) => NoisePredictor::from_params(arch, self.params)
                .map_err(|e| CheckpointError::Shape { path: path.to_path_buf(), message: e.to_string() }),
            other => Err(CheckpointError::Kind {
                path: path.to_path_buf(),
                expected: "noise_predictor",
                found: other.kind_name(),
            }),
        }
    }

    pub fn into_classifier(self, path: &Path) -> Result<Classifier<f32>, CheckpointError> {
        match self.manifest.architecture {
            Architecture::Classifier(arch) => Classifier::from_params(arch, self.params)
                .map_err(|e| CheckpointError::Shape { path: path.to_path_buf(), message: e.to_string() }),
            other => Err(CheckpointError::Kind {
                path: path.to_path_buf(),
                expected: "classifier",
                found: other.kind_name(),
            }),
        }
    }
}

pub fn load_predictor(path: &Path) -> Result<(NoisePredictor<f32>, Manifest), CheckpointError> {
    let ckpt = Checkpoint::load(path)?;
    let manifest = ckpt.manifest.clone();
    Ok((ckpt.into_predictor(path)?, manifest))
}

pub fn load_classifier(path: &Path) -> Result<(Classifier<f32>, Manifest), CheckpointError> {
    let ckpt = Checkpoint::load(path)?;
    let manifest = ckpt.manifest.clone();
    Ok((ckpt.into_classifier(path)?, manifest))
}
