//! Manifest CSV reading and writing.
//!
//! The native schema is `image_path, view, split, <attribute>...` with a
//! mandatory header. External tables (CheXpert and friends) are adapted with
//! a [`SchemaMap`] naming which columns hold the path, view, split and
//! attributes, plus optional per-attribute value maps.

use std::collections::BTreeMap;
use std::path::Path;

use latentaudit_core::manifest::{CohortManifest, ManifestRow, Split, View, UNKNOWN};
use latentaudit_core::rng::fnv1a;
use serde::{Deserialize, Serialize};

use crate::error::{AuditError, IoContext, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemaMap {
    pub image_path: String,
    pub view: String,
    /// Split column; `None` assigns 80/10/10 splits by hashing the path.
    pub split: Option<String>,
    /// Attribute name to source column. Empty keeps every other column
    /// under its own name.
    pub attributes: BTreeMap<String, String>,
    /// Per-attribute value renames. Values missing from a map become
    /// `unknown`.
    pub values: BTreeMap<String, BTreeMap<String, String>>,
}

impl Default for SchemaMap {
    fn default() -> Self {
        Self {
            image_path: "image_path".into(),
            view: "view".into(),
            split: Some("split".into()),
            attributes: BTreeMap::new(),
            values: BTreeMap::new(),
        }
    }
}

impl SchemaMap {
    /// The CheXpert `train.csv` layout with race joined in as `race_column`.
    /// CheXpert ships no split column, so splits come from path hashes.
    pub fn chexpert(race_column: &str) -> Self {
        Self {
            image_path: "Path".into(),
            view: "Frontal/Lateral".into(),
            split: None,
            attributes: BTreeMap::from([("race".to_string(), race_column.to_string())]),
            values: BTreeMap::new(),
        }
    }
}

fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers.iter().position(|h| h == name).ok_or_else(|| {
        AuditError::validation(format!(
            "{}: missing mandatory column {name:?} (found {:?})",
            path.display(),
            headers.iter().collect::<Vec<_>>()
        ))
    })
}

fn csv_error(path: &Path, e: csv::Error) -> AuditError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => AuditError::io(path, io),
        other => AuditError::corrupt(path, format!("{other:?}")),
    }
}

/// Reads a manifest, keeping file row order.
pub fn load_manifest(path: &Path, schema: &SchemaMap) -> Result<CohortManifest> {
    let file = std::fs::File::open(path).at(path)?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(std::io::BufReader::new(file));
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let path_col = column(&headers, &schema.image_path, path)?;
    let view_col = column(&headers, &schema.view, path)?;
    let split_col = schema.split.as_deref().map(|s| column(&headers, s, path)).transpose()?;
    let attributes: Vec<(String, usize)> = if schema.attributes.is_empty() {
        headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != path_col && *i != view_col && Some(*i) != split_col)
            .map(|(i, h)| (h.to_string(), i))
            .collect()
    } else {
        schema
            .attributes
            .iter()
            .map(|(name, col)| Ok((name.clone(), column(&headers, col, path)?)))
            .collect::<Result<_>>()?
    };
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let cell = |i: usize| record.get(i).map(str::trim).unwrap_or("");
        let image_path = cell(path_col).to_string();
        if image_path.is_empty() {
            return Err(AuditError::validation(format!("{}: row {} has an empty image path", path.display(), line + 2)));
        }
        let split = match split_col {
            Some(i) => Split::parse(cell(i))
                .map_err(|e| AuditError::validation(format!("{}: row {}: {e}", path.display(), line + 2)))?,
            None => Split::from_hash(fnv1a(image_path.as_bytes())),
        };
        let attrs = attributes
            .iter()
            .map(|(name, i)| {
                let raw = cell(*i);
                let value = match schema.values.get(name) {
                    _ if raw.is_empty() => UNKNOWN.to_string(),
                    Some(map) => map.get(raw).cloned().unwrap_or_else(|| UNKNOWN.to_string()),
                    None => raw.to_string(),
                };
                (name.clone(), value)
            })
            .collect();
        rows.push(ManifestRow { image_path, view: View::parse(cell(view_col)), attributes: attrs, split });
    }
    Ok(CohortManifest::new(rows)?)
}

/// Writes the native schema; attribute columns are the sorted union over
/// rows, with `unknown` where a row lacks one.
pub fn write_manifest(manifest: &CohortManifest, path: &Path) -> Result<()> {
    let names = manifest.attribute_names();
    let file = std::fs::File::create(path).at(path)?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let mut header = vec!["image_path", "view", "split"];
    header.extend(names.iter().map(String::as_str));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for row in manifest.rows() {
        let mut rec = vec![row.image_path.as_str(), row.view.as_str(), row.split.as_str()];
        rec.extend(names.iter().map(|n| row.attribute(n)));
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().at(path)
}
