//! Dataset manifests: UTF-8 CSV with header `image,label,saliency,split`.
//! Paths are resolved relative to the manifest's directory.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_HEADER: [&str; 4] = ["image", "label", "saliency", "split"];

/// Binary class label. `Typical` is class 0 (bona fide, real, healthy) and
/// `Atypical` is class 1, the positive class for metrics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Typical,
    Atypical,
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::Typical => 0,
            Label::Atypical => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Label::Typical),
            1 => Some(Label::Atypical),
            _ => None,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Atypical
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Typical => "typical",
            Label::Atypical => "atypical",
        })
    }
}

impl FromStr for Label {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "typical" => Ok(Label::Typical),
            "atypical" => Ok(Label::Atypical),
            other => Err(Error::SchemaError(format!("unknown label {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::SchemaError(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRecord {
    pub image: PathBuf,
    pub label: Label,
    pub saliency: Option<PathBuf>,
    pub split: Split,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ManifestOptions {
    /// Require a saliency path on every training row.
    pub strict_saliency: bool,
}

#[derive(Deserialize)]
struct RawRow {
    image: String,
    label: String,
    saliency: String,
    split: String,
}

pub fn load_manifest(path: &Path, opts: ManifestOptions) -> Result<Vec<ManifestRecord>> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(Error::SchemaError(format!(
            "{}: expected header {}, found {}",
            path.display(),
            MANIFEST_HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (line, row) in reader.deserialize::<RawRow>().enumerate() {
        let row = row.map_err(|e| Error::SchemaError(format!("row {}: {e}", line + 1)))?;
        let label: Label = row.label.trim().parse()?;
        let split: Split = row.split.trim().parse()?;
        let image_rel = row.image.trim();
        if image_rel.is_empty() {
            return Err(Error::SchemaError(format!(
                "row {}: empty image path",
                line + 1
            )));
        }
        if !seen.insert(image_rel.to_string()) {
            return Err(Error::SchemaError(format!(
                "row {}: duplicate image path {image_rel}",
                line + 1
            )));
        }
        let image = base.join(image_rel);
        if !image.is_file() {
            return Err(Error::DanglingPath(image));
        }
        let saliency = match row.saliency.trim() {
            "" => None,
            s => {
                let p = base.join(s);
                if !p.is_file() {
                    return Err(Error::DanglingPath(p));
                }
                Some(p)
            }
        };
        if opts.strict_saliency && split == Split::Train && saliency.is_none() {
            return Err(Error::SchemaError(format!(
                "row {}: training image {image_rel} has no saliency map",
                line + 1
            )));
        }
        records.push(ManifestRecord {
            image,
            label,
            saliency,
            split,
        });
    }
    Ok(records)
}

/// Row as written to disk; paths are taken verbatim.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRow {
    pub image: String,
    pub label: Label,
    pub saliency: Option<String>,
    pub split: Split,
}

pub fn write_manifest<W: std::io::Write>(rows: &[ManifestRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(MANIFEST_HEADER)?;
    for r in rows {
        w.write_record([
            r.image.as_str(),
            &r.label.to_string(),
            r.saliency.as_deref().unwrap_or(""),
            &r.split.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
