//! JSON interchange documents and atomic file IO.
//!
//! One document carries one pipe: geometry, annotations, detections,
//! stitched spans, and a provenance block (tool version, seed, config hash)
//! that makes any output reproducible from inputs alone. Documents are
//! validated on load and before save: schema version, class codes (via the
//! strict enum), box bounds against the geometry, and id uniqueness.
//! Saves go through a temp file in the target directory plus a rename, so
//! readers never observe a half-written document.

use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{Annotation, CylindricalSpan, Detection, DomainError, MosaicGeometry, PixelBox};
use crate::tiler::{ExportConfig, TrainingPatches};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("parse error in {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("unsupported schema_version {found} (this build reads {supported})")]
    UnsupportedSchema { found: u32, supported: u32 },
    #[error("{kind} id {id:?} appears more than once")]
    DuplicateId { kind: &'static str, id: String },
    #[error("{kind} {id:?} box {bbox:?} lies outside the {width}x{height} mosaic")]
    OutOfBounds { kind: &'static str, id: String, bbox: PixelBox, width: i64, height: i64 },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Where an output came from: enough to re-run the exact command.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub seed: u64,
    /// SHA-256 hex of the canonical JSON of the config that produced this.
    pub config_hash: String,
}

impl Provenance {
    pub fn new(seed: u64, config_hash: String) -> Self {
        Provenance { tool_version: env!("CARGO_PKG_VERSION").to_string(), seed, config_hash }
    }
}

/// SHA-256 hex digest of a value's canonical JSON form. Struct fields
/// serialize in declaration order and maps in key order, so equal configs
/// hash equally.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config types serialize infallibly");
    let digest = Sha256::digest(&json);
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterchangeDocument {
    pub schema_version: u32,
    pub pipe: MosaicGeometry,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub annotations: Vec<Annotation>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub detections: Vec<Detection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub spans: Vec<CylindricalSpan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl InterchangeDocument {
    pub fn new(pipe: MosaicGeometry) -> Self {
        InterchangeDocument {
            schema_version: SCHEMA_VERSION,
            pipe,
            annotations: Vec::new(),
            detections: Vec::new(),
            spans: Vec::new(),
            provenance: None,
        }
    }

    pub fn validate(&self) -> Result<(), FormatError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(FormatError::UnsupportedSchema {
                found: self.schema_version,
                supported: SCHEMA_VERSION,
            });
        }
        self.pipe.validate()?;
        let in_bounds = |bbox: &PixelBox| {
            bbox.x >= 0
                && bbox.y >= 0
                && bbox.right() <= self.pipe.width_px
                && bbox.bottom() <= self.pipe.height_px
        };
        let mut seen = std::collections::BTreeSet::new();
        for a in &self.annotations {
            if !seen.insert(&a.id) {
                return Err(FormatError::DuplicateId { kind: "annotation", id: a.id.clone() });
            }
            if !in_bounds(&a.bbox) {
                return Err(FormatError::OutOfBounds {
                    kind: "annotation",
                    id: a.id.clone(),
                    bbox: a.bbox,
                    width: self.pipe.width_px,
                    height: self.pipe.height_px,
                });
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for d in &self.detections {
            d.validate()?;
            if !seen.insert(&d.id) {
                return Err(FormatError::DuplicateId { kind: "detection", id: d.id.clone() });
            }
            if !in_bounds(&d.bbox) {
                return Err(FormatError::OutOfBounds {
                    kind: "detection",
                    id: d.id.clone(),
                    bbox: d.bbox,
                    width: self.pipe.width_px,
                    height: self.pipe.height_px,
                });
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.spans {
            s.validate(&self.pipe)?;
            if !seen.insert(&s.id) {
                return Err(FormatError::DuplicateId { kind: "span", id: s.id.clone() });
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        let doc: InterchangeDocument = read_json(path)?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn save(&self, path: &Path) -> Result<(), FormatError> {
        self.validate()?;
        write_json_atomic(path, self)
    }
}

/// Tiling export for one or more pipes, ready for a training data loader.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingManifest {
    pub schema_version: u32,
    pub config: ExportConfig,
    pub pipes: Vec<TrainingPatches>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl TrainingManifest {
    pub fn new(config: ExportConfig, pipes: Vec<TrainingPatches>) -> Self {
        TrainingManifest { schema_version: SCHEMA_VERSION, config, pipes, provenance: None }
    }

    pub fn validate(&self) -> Result<(), FormatError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(FormatError::UnsupportedSchema {
                found: self.schema_version,
                supported: SCHEMA_VERSION,
            });
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        let doc: TrainingManifest = read_json(path)?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn save(&self, path: &Path) -> Result<(), FormatError> {
        self.validate()?;
        write_json_atomic(path, self)
    }
}

/// Reads and deserializes one JSON file, wrapping failures with the path.
pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, FormatError> {
    let bytes = std::fs::read(path)
        .map_err(|source| FormatError::Io { path: path.to_path_buf(), source })?;
    serde_json::from_slice(&bytes)
        .map_err(|source| FormatError::Parse { path: path.to_path_buf(), source })
}

/// Pretty JSON with a trailing newline, written to `<name>.tmp` in the same
/// directory and renamed into place.
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<(), FormatError> {
    let io_err = |source| FormatError::Io { path: path.to_path_buf(), source };
    let mut bytes = serde_json::to_vec_pretty(value).expect("document types serialize infallibly");
    bytes.push(b'\n');
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, &bytes).map_err(io_err)?;
    std::fs::rename(&tmp, path).map_err(io_err)
}
