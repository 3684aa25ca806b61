//! Dataset manifest ingestion and the HSPM binary matrix format.
//!
//! The manifest is newline-delimited JSON, one flat record per line, so
//! validation can stream and report exact line numbers. Feature matrices are
//! read lazily: opening a dataset touches only the manifest plus an
//! existence check per referenced file.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::model::{ModelError, PatientBag};

pub const MATRIX_MAGIC: [u8; 4] = *b"HSPM";
pub const MATRIX_VERSION: u32 = 1;
/// dtype tag for 32-bit float payloads (the only dtype defined so far).
pub const DTYPE_F32: u8 = 0;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: bad matrix magic {found:?}")]
    BadMagic { path: PathBuf, found: [u8; 4] },
    #[error("{path}: unsupported matrix version {0}", .version)]
    VersionMismatch { path: PathBuf, version: u32 },
    #[error("{path}: unknown dtype {0}", .dtype)]
    UnknownDtype { path: PathBuf, dtype: u8 },
    #[error("{path}: truncated matrix payload")]
    Truncated { path: PathBuf },
    #[error("{path}: non-finite matrix entry")]
    NonFinite { path: PathBuf },
    #[error("manifest {path} line {line}: {reason}")]
    ManifestLine {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("patient bag rejected: {0}")]
    Bag(#[from] ModelError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Write a matrix as HSPM: magic, version u32, rows u64, cols u64, dtype u8,
/// then the row-major f32 payload, all little-endian.
pub fn write_matrix(path: &Path, matrix: &Tensor) -> Result<(), DataError> {
    if !matrix.is_finite() {
        return Err(DataError::NonFinite {
            path: path.to_path_buf(),
        });
    }
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(io_err(path));
    write(&MATRIX_MAGIC)?;
    write(&MATRIX_VERSION.to_le_bytes())?;
    write(&(matrix.rows() as u64).to_le_bytes())?;
    write(&(matrix.cols() as u64).to_le_bytes())?;
    write(&[DTYPE_F32])?;
    for &v in matrix.data() {
        write(&(v as f32).to_le_bytes())?;
    }
    w.flush().map_err(io_err(path))
}

/// Read an HSPM matrix back; f32 payloads widen to f64.
pub fn read_matrix(path: &Path) -> Result<Tensor, DataError> {
    let mut r = BufReader::new(File::open(path).map_err(io_err(path))?);
    let read_exact = |r: &mut BufReader<File>, buf: &mut [u8]| -> Result<(), DataError> {
        r.read_exact(buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                DataError::Truncated {
                    path: path.to_path_buf(),
                }
            } else {
                io_err(path)(e)
            }
        })
    };

    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if magic != MATRIX_MAGIC {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            found: magic,
        });
    }
    let mut v4 = [0u8; 4];
    read_exact(&mut r, &mut v4)?;
    let version = u32::from_le_bytes(v4);
    if version != MATRIX_VERSION {
        return Err(DataError::VersionMismatch {
            path: path.to_path_buf(),
            version,
        });
    }
    let mut v8 = [0u8; 8];
    read_exact(&mut r, &mut v8)?;
    let rows = u64::from_le_bytes(v8) as usize;
    read_exact(&mut r, &mut v8)?;
    let cols = u64::from_le_bytes(v8) as usize;
    let mut dtype = [0u8; 1];
    read_exact(&mut r, &mut dtype)?;
    if dtype[0] != DTYPE_F32 {
        return Err(DataError::UnknownDtype {
            path: path.to_path_buf(),
            dtype: dtype[0],
        });
    }
    let mut data = vec![0.0f64; rows * cols];
    for v in data.iter_mut() {
        let mut b = [0u8; 4];
        read_exact(&mut r, &mut b)?;
        *v = f32::from_le_bytes(b) as f64;
    }
    Ok(Tensor::from_vec(rows, cols, data))
}

/// One manifest line.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestRecord {
    pub patient_id: String,
    pub time_months: f64,
    pub censor: u8,
    pub pathology_path: String,
    pub genomics_path: String,
}

/// Validated manifest; feature paths are resolved relative to `base_dir`.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        self.base_dir.join(relative)
    }
}

/// Parse and validate a manifest file. Violations name the offending line.
pub fn read_manifest(path: &Path) -> Result<Manifest, DataError> {
    let file = File::open(path).map_err(io_err(path))?;
    let base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut records: Vec<ManifestRecord> = Vec::new();
    let mut seen_ids: std::collections::BTreeSet<String> = std::collections::BTreeSet::new();

    let bad = |line: usize, reason: String| DataError::ManifestLine {
        path: path.to_path_buf(),
        line,
        reason,
    };

    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestRecord = serde_json::from_str(&line)
            .map_err(|e| bad(lineno, format!("unparseable record: {e}")))?;
        if record.censor > 1 {
            return Err(bad(
                lineno,
                format!("censor must be 0 or 1, got {}", record.censor),
            ));
        }
        if !(record.time_months > 0.0) || !record.time_months.is_finite() {
            return Err(bad(
                lineno,
                format!("time_months must be positive, got {}", record.time_months),
            ));
        }
        if !seen_ids.insert(record.patient_id.clone()) {
            return Err(bad(
                lineno,
                format!("duplicate patient_id {:?}", record.patient_id),
            ));
        }
        for rel in [&record.pathology_path, &record.genomics_path] {
            let p = base_dir.join(rel);
            if !p.exists() {
                return Err(bad(lineno, format!("feature file not found: {}", p.display())));
            }
        }
        records.push(record);
    }
    Ok(Manifest { records, base_dir })
}

/// Write manifest records as newline-delimited JSON.
pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for r in records {
        let line = serde_json::to_string(r).expect("manifest records serialize");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Manifest plus lazy bag loading.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
}

impl Dataset {
    pub fn open(manifest_path: &Path) -> Result<Self, DataError> {
        Ok(Dataset {
            manifest: read_manifest(manifest_path)?,
        })
    }

    pub fn len(&self) -> usize {
        self.manifest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.is_empty()
    }

    pub fn record(&self, idx: usize) -> &ManifestRecord {
        &self.manifest.records[idx]
    }

    /// Read both feature matrices for one patient.
    pub fn load_bag(&self, idx: usize) -> Result<PatientBag, DataError> {
        let r = &self.manifest.records[idx];
        let pathology = read_matrix(&self.manifest.resolve(&r.pathology_path))?;
        let genomics = read_matrix(&self.manifest.resolve(&r.genomics_path))?;
        Ok(PatientBag::new(
            r.patient_id.clone(),
            pathology,
            genomics,
            r.time_months,
            r.censor,
        )?)
    }
}
