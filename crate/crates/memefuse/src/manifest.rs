//! CSV manifest ingestion: `id,image,caption,label,split`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use memefuse_core::corpus::{MemeRecord, Split, SplitCorpus};
use memefuse_core::Label;

use crate::imageio;

pub const COLUMNS: [&str; 5] = ["id", "image", "caption", "label", "split"];

/// Row numbers are file line numbers; the header is line 1.
#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV at row {row}: {message}")]
    Malformed { row: u64, message: String },
    #[error("manifest is missing column(s): {}", .0.join(", "))]
    MissingColumn(Vec<String>),
    #[error("duplicate id `{id}` on rows {rows:?}")]
    DuplicateId { id: String, rows: Vec<u64> },
    #[error("row {row}: unknown label `{value}` (expected troll, not-troll, or empty)")]
    UnknownLabel { row: u64, value: String },
    #[error("row {row}: unknown split `{value}` (expected train, valid or test)")]
    UnknownSplit { row: u64, value: String },
    #[error("row {row}: {split} record `{id}` has no label")]
    Unlabeled { row: u64, id: String, split: Split },
    #[error("row {row}: unreadable image {path}: {reason}")]
    UnreadableImage { row: u64, path: PathBuf, reason: String },
}

struct Row {
    line: u64,
    record: MemeRecord,
    split: Split,
}

fn parse_rows(manifest: &Path) -> Result<Vec<Row>, ManifestError> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(false)
        .from_path(manifest)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => ManifestError::Io {
                path: manifest.to_path_buf(),
                source,
            },
            other => ManifestError::Malformed {
                row: 1,
                message: format!("{other:?}"),
            },
        })?;
    let headers = reader
        .headers()
        .map_err(|e| ManifestError::Malformed {
            row: 1,
            message: e.to_string(),
        })?
        .clone();
    let position = |name: &str| headers.iter().position(|h| h.trim() == name);
    let missing: Vec<String> = COLUMNS
        .iter()
        .filter(|c| position(c).is_none())
        .map(|c| c.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(ManifestError::MissingColumn(missing));
    }
    let idx = COLUMNS.map(|c| position(c).expect("checked above"));

    let mut rows = Vec::new();
    for result in reader.records() {
        let rec = result.map_err(|e| ManifestError::Malformed {
            row: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| rec.get(idx[i]).unwrap_or("");
        let label = match field(3).trim() {
            "" => None,
            v => Some(v.parse::<Label>().map_err(|_| ManifestError::UnknownLabel {
                row: line,
                value: v.to_string(),
            })?),
        };
        let split = field(4)
            .trim()
            .parse::<Split>()
            .map_err(|_| ManifestError::UnknownSplit {
                row: line,
                value: field(4).to_string(),
            })?;
        let id = field(0).trim().to_string();
        if label.is_none() && split != Split::Test {
            return Err(ManifestError::Unlabeled { row: line, id, split });
        }
        rows.push(Row {
            line,
            record: MemeRecord {
                id,
                image_ref: field(1).trim().to_string(),
                caption: field(2).to_string(),
                label,
            },
            split,
        });
    }

    let mut by_id: BTreeMap<&str, Vec<u64>> = BTreeMap::new();
    for r in &rows {
        by_id.entry(r.record.id.as_str()).or_default().push(r.line);
    }
    // report the duplicate that appears first in the file
    if let Some((id, lines)) = by_id
        .iter()
        .filter(|(_, l)| l.len() > 1)
        .min_by_key(|(_, l)| l[1])
    {
        return Err(ManifestError::DuplicateId {
            id: id.to_string(),
            rows: lines.clone(),
        });
    }
    Ok(rows)
}

/// Reads and validates a manifest; every image must exist and decode.
///
/// Image paths are resolved against `image_root`.
pub fn load_manifest(manifest: &Path, image_root: &Path) -> Result<SplitCorpus, ManifestError> {
    let rows = parse_rows(manifest)?;
    for r in &rows {
        let path = image_root.join(&r.record.image_ref);
        imageio::probe(&path).map_err(|e| ManifestError::UnreadableImage {
            row: r.line,
            path: path.clone(),
            reason: e.to_string(),
        })?;
    }
    let mut splits: [Vec<MemeRecord>; 3] = Default::default();
    for r in rows {
        let i = Split::ALL.iter().position(|s| *s == r.split).expect("known split");
        splits[i].push(r.record);
    }
    let [train, valid, test] = splits;
    Ok(SplitCorpus::new(train, valid, test).expect("ids and labels validated above"))
}

/// Writes records as a manifest, in the given order.
pub fn write_manifest(path: &Path, rows: &[(Split, &MemeRecord)]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(COLUMNS)?;
    for (split, r) in rows {
        w.write_record([
            r.id.as_str(),
            r.image_ref.as_str(),
            r.caption.as_str(),
            r.label.map_or("", Label::as_str),
            split.as_str(),
        ])?;
    }
    w.flush()
}
