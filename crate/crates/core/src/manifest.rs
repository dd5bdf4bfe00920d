//! Cohort manifests and pairwise binary attribute tasks.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

/// Attribute value used for missing, uncertain or unmapped labels.
pub const UNKNOWN: &str = "unknown";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum View {
    Frontal,
    Lateral,
    Unknown,
}

impl View {
    /// Case-insensitive; anything other than frontal/lateral is `Unknown`.
    pub fn parse(s: &str) -> Self {
        let s = s.trim();
        if s.eq_ignore_ascii_case("frontal") {
            View::Frontal
        } else if s.eq_ignore_ascii_case("lateral") {
            View::Lateral
        } else {
            View::Unknown
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            View::Frontal => "frontal",
            View::Lateral => "lateral",
            View::Unknown => UNKNOWN,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(alloc::format!("unknown split {other:?}"))),
        }
    }

    /// 80/10/10 assignment from a 64-bit hash.
    pub fn from_hash(h: u64) -> Self {
        match h % 10 {
            0..=7 => Split::Train,
            8 => Split::Val,
            _ => Split::Test,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub image_path: String,
    pub view: View,
    pub attributes: BTreeMap<String, String>,
    pub split: Split,
}

impl ManifestRow {
    /// Attribute value, or [`UNKNOWN`] when the row does not carry it.
    pub fn attribute(&self, name: &str) -> &str {
        self.attributes.get(name).map(String::as_str).unwrap_or(UNKNOWN)
    }
}

/// Ordered manifest rows with unique image paths.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CohortManifest {
    rows: Vec<ManifestRow>,
}

impl CohortManifest {
    pub fn new(rows: Vec<ManifestRow>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut dups = BTreeSet::new();
        for row in &rows {
            if !seen.insert(row.image_path.as_str()) {
                dups.insert(row.image_path.clone());
            }
        }
        if !dups.is_empty() {
            return Err(Error::DuplicatePaths(dups.into_iter().collect()));
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[ManifestRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Attribute names present on any row, sorted.
    pub fn attribute_names(&self) -> Vec<String> {
        let names: BTreeSet<&String> = self.rows.iter().flat_map(|r| r.attributes.keys()).collect();
        names.into_iter().cloned().collect()
    }

    pub fn rows_in(&self, split: Split) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    pub fn find(&self, image_path: &str) -> Option<&ManifestRow> {
        self.rows.iter().find(|r| r.image_path == image_path)
    }
}

/// Keeps frontal rows, preserving order.
pub fn filter_frontal(manifest: &CohortManifest) -> CohortManifest {
    CohortManifest {
        rows: manifest.rows.iter().filter(|r| r.view == View::Frontal).cloned().collect(),
    }
}

/// A binary task between two values of one attribute. `class_a` is always
/// the lexicographically smaller value.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AttributeTask {
    pub attribute: String,
    pub class_a: String,
    pub class_b: String,
}

impl AttributeTask {
    pub fn new(attribute: &str, first: &str, second: &str) -> Result<Self> {
        if first == second {
            return Err(Error::invalid(alloc::format!(
                "task classes must differ, both are {first:?}"
            )));
        }
        let (class_a, class_b) = if first < second { (first, second) } else { (second, first) };
        Ok(Self {
            attribute: attribute.to_string(),
            class_a: class_a.to_string(),
            class_b: class_b.to_string(),
        })
    }

    /// Parses `attribute:class_a_vs_class_b`.
    pub fn parse(task_id: &str) -> Result<Self> {
        let (attribute, pair) = task_id
            .split_once(':')
            .ok_or_else(|| Error::invalid(alloc::format!("malformed task id {task_id:?}")))?;
        let (a, b) = pair
            .split_once("_vs_")
            .ok_or_else(|| Error::invalid(alloc::format!("malformed task id {task_id:?}")))?;
        Self::new(attribute, a, b)
    }

    pub fn task_id(&self) -> String {
        alloc::format!("{}:{}_vs_{}", self.attribute, self.class_a, self.class_b)
    }

    /// 0 for `class_a`, 1 for `class_b`, `None` for any other value.
    pub fn label_of(&self, value: &str) -> Option<u8> {
        if value == self.class_a {
            Some(0)
        } else if value == self.class_b {
            Some(1)
        } else {
            None
        }
    }

    pub fn class_name(&self, label: u8) -> &str {
        if label == 0 {
            &self.class_a
        } else {
            &self.class_b
        }
    }
}

impl fmt::Display for AttributeTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.task_id())
    }
}

/// One task per unordered pair of observed non-unknown values, sorted by task id.
pub fn derive_binary_tasks(manifest: &CohortManifest, attribute: &str) -> Result<Vec<AttributeTask>> {
    if !manifest.rows.iter().any(|r| r.attributes.contains_key(attribute)) {
        return Err(Error::UnknownAttribute {
            attribute: attribute.to_string(),
            available: manifest.attribute_names(),
        });
    }
    let values: BTreeSet<&str> = manifest
        .rows
        .iter()
        .map(|r| r.attribute(attribute))
        .filter(|v| *v != UNKNOWN && !v.is_empty())
        .collect();
    if values.len() < 2 {
        return Err(Error::InsufficientData(alloc::format!(
            "attribute {attribute:?} has {} distinct known value(s); a task needs 2",
            values.len()
        )));
    }
    let values: Vec<&str> = values.into_iter().collect();
    let mut tasks = Vec::with_capacity(values.len() * (values.len() - 1) / 2);
    for (i, a) in values.iter().enumerate() {
        for b in &values[i + 1..] {
            tasks.push(AttributeTask::new(attribute, a, b)?);
        }
    }
    tasks.sort_by_key(AttributeTask::task_id);
    Ok(tasks)
}
