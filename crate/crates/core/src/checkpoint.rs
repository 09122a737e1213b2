//! Checkpoints: parameter matrices as CSV (17 significant digits, one row per
//! vector) next to a JSON sidecar holding the run config and step counter.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sphere::{normalize, RawVector, UnitVector};
use crate::trainer::{Dataset, OptimizerState, TrainMode};

pub const SIDECAR_NAME: &str = "checkpoint.json";
pub const FORMAT_TAG: &str = "unpg-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

const MODEL_FILE_FREE: &str = "embeddings.csv";
const MODEL_FILE_ENCODER: &str = "encoder.csv";
const WEIGHTS_FILE: &str = "weights.csv";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixFile {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub version: u32,
    pub step: u64,
    pub mode: TrainMode,
    pub input_dim: usize,
    pub embed_dim: usize,
    pub num_classes: usize,
    pub model: MatrixFile,
    pub weights: MatrixFile,
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    /// Free embeddings or encoder rows, depending on `meta.mode`.
    pub model: Vec<Vec<f64>>,
    pub weights: Vec<Vec<f64>>,
}

impl Checkpoint {
    /// Unit embeddings of `dataset` under this checkpoint.
    pub fn embeddings(&self, dataset: &Dataset) -> Result<Vec<UnitVector>> {
        if dataset.dim() != self.meta.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.meta.input_dim,
                found: dataset.dim(),
            });
        }
        match self.meta.mode {
            TrainMode::FreeEmbedding => {
                if dataset.len() != self.model.len() {
                    return Err(Error::DimensionMismatch {
                        expected: self.model.len(),
                        found: dataset.len(),
                    });
                }
                self.model
                    .iter()
                    .map(|r| normalize(&RawVector::new(r.clone())?))
                    .collect()
            }
            TrainMode::LinearEncoder => dataset
                .features()
                .iter()
                .map(|x| {
                    let y = self
                        .model
                        .iter()
                        .map(|row| row.iter().zip(x.as_slice()).map(|(a, b)| a * b).sum())
                        .collect();
                    normalize(&RawVector::new(y)?)
                })
                .collect(),
        }
    }
}

fn to_csv(rows: &[Vec<f64>]) -> String {
    let mut s = String::new();
    for r in rows {
        for (k, x) in r.iter().enumerate() {
            if k > 0 {
                s.push(',');
            }
            let _ = write!(s, "{x:.16e}");
        }
        s.push('\n');
    }
    s
}

fn write_matrix(dir: &Path, name: &str, rows: &[Vec<f64>]) -> Result<MatrixFile> {
    let text = to_csv(rows);
    let path = dir.join(name);
    fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
    Ok(MatrixFile {
        name: name.to_owned(),
        rows: rows.len(),
        cols: rows.first().map_or(0, Vec::len),
        bytes: text.len() as u64,
    })
}

/// Writes the checkpoint into `dir` (created if missing) and returns the
/// sidecar path.
pub fn write_checkpoint<C: Serialize>(
    dir: &Path,
    state: &OptimizerState,
    input_dim: usize,
    config: &C,
) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let model_name = match state.mode {
        TrainMode::FreeEmbedding => MODEL_FILE_FREE,
        TrainMode::LinearEncoder => MODEL_FILE_ENCODER,
    };
    let model = write_matrix(dir, model_name, &state.model)?;
    let weights = write_matrix(dir, WEIGHTS_FILE, &state.weights)?;
    let sidecar = dir.join(SIDECAR_NAME);
    let meta = CheckpointMeta {
        format: FORMAT_TAG.to_owned(),
        version: FORMAT_VERSION,
        step: state.step,
        mode: state.mode,
        input_dim,
        embed_dim: state.embed_dim(),
        num_classes: state.weights.len(),
        model,
        weights,
        config: serde_json::to_value(config).map_err(|e| Error::Json {
            path: sidecar.clone(),
            source: e,
        })?,
    };
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Json {
        path: sidecar.clone(),
        source: e,
    })?;
    fs::write(&sidecar, text + "\n").map_err(|e| Error::io(&sidecar, e))?;
    Ok(sidecar)
}

fn read_matrix(dir: &Path, spec: &MatrixFile) -> Result<Vec<Vec<f64>>> {
    let path = dir.join(&spec.name);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if bytes.len() as u64 != spec.bytes {
        return Err(Error::corrupt(
            &path,
            format!("expected {} bytes, found {}", spec.bytes, bytes.len()),
        ));
    }
    let text = String::from_utf8(bytes).map_err(|_| Error::corrupt(&path, "not UTF-8"))?;
    if spec.rows > 0 && !text.ends_with('\n') {
        return Err(Error::corrupt(&path, "missing final newline"));
    }
    let rows = text
        .lines()
        .enumerate()
        .map(|(i, line)| {
            let row = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| Error::corrupt(&path, format!("line {}: {e}", i + 1)))?;
            if row.len() != spec.cols {
                return Err(Error::corrupt(
                    &path,
                    format!(
                        "line {}: {} columns, expected {}",
                        i + 1,
                        row.len(),
                        spec.cols
                    ),
                ));
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::corrupt(
                    &path,
                    format!("line {}: non-finite value", i + 1),
                ));
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    if rows.len() != spec.rows {
        return Err(Error::corrupt(
            &path,
            format!("{} rows, expected {}", rows.len(), spec.rows),
        ));
    }
    Ok(rows)
}

/// Loads a checkpoint from its sidecar file or the directory holding it.
pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let sidecar = if path.is_dir() {
        path.join(SIDECAR_NAME)
    } else {
        path.to_path_buf()
    };
    let dir = sidecar.parent().unwrap_or(Path::new(".")).to_path_buf();
    let text = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    let meta: CheckpointMeta =
        serde_json::from_str(&text).map_err(|e| Error::corrupt(&sidecar, e.to_string()))?;
    if meta.format != FORMAT_TAG || meta.version != FORMAT_VERSION {
        return Err(Error::corrupt(
            &sidecar,
            format!("unsupported format {} v{}", meta.format, meta.version),
        ));
    }
    let model = read_matrix(&dir, &meta.model)?;
    let weights = read_matrix(&dir, &meta.weights)?;
    let model_cols = match meta.mode {
        TrainMode::FreeEmbedding => meta.embed_dim,
        TrainMode::LinearEncoder => meta.input_dim,
    };
    if meta.model.cols != model_cols
        || meta.weights.cols != meta.embed_dim
        || meta.weights.rows != meta.num_classes
    {
        return Err(Error::corrupt(
            &sidecar,
            "matrix shapes disagree with the header",
        ));
    }
    Ok(Checkpoint {
        meta,
        model,
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::{gen_synthetic, SyntheticSpec, TrainConfig, Trainer};

    fn trained(mode: TrainMode) -> (Trainer, tempfile::TempDir, PathBuf) {
        let data = gen_synthetic(&SyntheticSpec {
            num_classes: 4,
            samples_per_class: 3,
            dim: 5,
            cluster_concentration: 2.0,
            seed: 3,
        })
        .unwrap();
        let cfg = TrainConfig {
            mode,
            batch_size: 4,
            classes_per_batch: 2,
            samples_per_class_per_batch: 2,
            warmup_epochs: 1,
            max_epochs: 2,
            steps_per_epoch: 3,
            embed_dim: (mode == TrainMode::LinearEncoder).then_some(3),
            ..TrainConfig::default()
        };
        let mut t = Trainer::new(cfg, data).unwrap();
        t.run().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let side = write_checkpoint(dir.path(), t.state(), 5, &cfg).unwrap();
        (t, dir, side)
    }

    #[test]
    fn round_trip_is_exact() {
        for mode in [TrainMode::FreeEmbedding, TrainMode::LinearEncoder] {
            let (t, dir, side) = trained(mode);
            let ck = read_checkpoint(dir.path()).unwrap();
            assert_eq!(ck, read_checkpoint(&side).unwrap());
            assert_eq!(ck.model, t.state().model);
            assert_eq!(ck.weights, t.state().weights);
            assert_eq!(ck.meta.step, 6);
            assert_eq!(ck.embeddings(t.dataset()).unwrap(), t.embeddings().unwrap());
        }
    }

    #[test]
    fn truncation_is_detected() {
        let (_, dir, _) = trained(TrainMode::FreeEmbedding);
        let p = dir.path().join(WEIGHTS_FILE);
        let text = fs::read_to_string(&p).unwrap();
        fs::write(&p, &text[..text.len() - 7]).unwrap();
        assert!(matches!(
            read_checkpoint(dir.path()),
            Err(Error::CheckpointCorrupt { .. })
        ));
    }

    #[test]
    fn truncated_sidecar_is_detected() {
        let (_, dir, side) = trained(TrainMode::LinearEncoder);
        let text = fs::read_to_string(&side).unwrap();
        fs::write(&side, &text[..text.len() / 2]).unwrap();
        assert!(matches!(
            read_checkpoint(dir.path()),
            Err(Error::CheckpointCorrupt { .. })
        ));
    }

    #[test]
    fn dimension_mismatch() {
        let (_, dir, _) = trained(TrainMode::LinearEncoder);
        let ck = read_checkpoint(dir.path()).unwrap();
        let other = gen_synthetic(&SyntheticSpec {
            num_classes: 4,
            samples_per_class: 3,
            dim: 6,
            cluster_concentration: 2.0,
            seed: 3,
        })
        .unwrap();
        assert!(matches!(
            ck.embeddings(&other),
            Err(Error::DimensionMismatch {
                expected: 5,
                found: 6
            })
        ));
    }
}
