//! Labeled/unlabeled bookkeeping persisted as JSON lines.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Labeled,
    Unlabeled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    GroundTruth,
    Pseudo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Initial,
    EdfDpc,
}

/// One line of a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: String,
    pub split: Split,
    pub image_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_kind: Option<LabelKind>,
    pub cycle_added: u32,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_local_entropy: Option<f64>,
}

impl SampleRecord {
    pub fn ground_truth(id: impl Into<String>, image_path: PathBuf, label_path: PathBuf) -> Self {
        Self {
            id: id.into(),
            split: Split::Labeled,
            image_path,
            label_path: Some(label_path),
            label_kind: Some(LabelKind::GroundTruth),
            cycle_added: 0,
            provenance: Provenance::Initial,
            mean_local_entropy: None,
        }
    }

    pub fn unlabeled(id: impl Into<String>, image_path: PathBuf) -> Self {
        Self {
            id: id.into(),
            split: Split::Unlabeled,
            image_path,
            label_path: None,
            label_kind: None,
            cycle_added: 0,
            provenance: Provenance::Initial,
            mean_local_entropy: None,
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        match self.split {
            Split::Labeled => {
                if self.label_path.is_none() {
                    return Err(format!("labeled record {} has no label_path", self.id));
                }
                match self.label_kind {
                    None => Err(format!("labeled record {} has no label_kind", self.id)),
                    Some(LabelKind::GroundTruth) if self.cycle_added != 0 => Err(format!(
                        "ground-truth record {} must have cycle_added = 0",
                        self.id
                    )),
                    Some(LabelKind::Pseudo) if self.mean_local_entropy.is_none() => {
                        Err(format!("pseudo record {} lacks mean_local_entropy", self.id))
                    }
                    _ => Ok(()),
                }
            }
            Split::Unlabeled if self.label_kind.is_some() => {
                Err(format!("unlabeled record {} carries a label_kind", self.id))
            }
            Split::Unlabeled => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub labeled: Vec<SampleRecord>,
    pub unlabeled: Vec<SampleRecord>,
    pub cycle: u32,
}

impl Manifest {
    pub fn total(&self) -> usize {
        self.labeled.len() + self.unlabeled.len()
    }

    /// Number of samples that started out unlabeled.
    pub fn initial_unlabeled(&self) -> usize {
        self.unlabeled.len()
            + self
                .labeled
                .iter()
                .filter(|r| r.label_kind == Some(LabelKind::Pseudo))
                .count()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (rec, split) in self
            .labeled
            .iter()
            .map(|r| (r, Split::Labeled))
            .chain(self.unlabeled.iter().map(|r| (r, Split::Unlabeled)))
        {
            if rec.split != split {
                return Err(Error::InvalidArgument(format!(
                    "record {} is filed under the wrong split",
                    rec.id
                )));
            }
            rec.validate().map_err(Error::InvalidArgument)?;
            if !seen.insert(rec.id.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate id {}", rec.id)));
            }
        }
        Ok(())
    }

    pub fn from_records(records: Vec<SampleRecord>, cycle: u32) -> Result<Self> {
        let (labeled, unlabeled) = records
            .into_iter()
            .partition(|r| r.split == Split::Labeled);
        let m = Self {
            labeled,
            unlabeled,
            cycle,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn records(&self) -> impl Iterator<Item = &SampleRecord> {
        self.labeled.iter().chain(&self.unlabeled)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for rec in self.records() {
            out.push_str(&serde_json::to_string(rec).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    /// Writes to a sibling temp file and renames it into place.
    pub fn write_atomic(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_jsonl().as_bytes())
    }

    pub fn read(path: &Path, cycle: u32) -> Result<Self> {
        Self::from_records(read_records(path)?, cycle)
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Reads a JSON-lines record file; blank lines are ignored.
pub fn read_records(path: &Path) -> Result<Vec<SampleRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut offset = 0u64;
    let mut out = Vec::new();
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if !trimmed.is_empty() {
            let rec: SampleRecord = serde_json::from_str(trimmed)
                .map_err(|e| Error::format(path, offset, e.to_string()))?;
            out.push(rec);
        }
        offset += line.len() as u64;
    }
    Ok(out)
}

pub fn write_records(path: &Path, records: &[SampleRecord]) -> Result<()> {
    let mut out = String::new();
    for rec in records {
        out.push_str(&serde_json::to_string(rec).expect("record serializes"));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Makes image and ground-truth label paths absolute, resolving relative
/// ones against `base`, so a manifest no longer depends on where it lives.
pub fn resolve_record_paths(records: &mut [SampleRecord], base: &Path) -> Result<()> {
    let resolve = |p: &Path| {
        let joined = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        fs::canonicalize(&joined).map_err(|e| Error::io(&joined, e))
    };
    for rec in records {
        rec.image_path = resolve(&rec.image_path)?;
        if rec.label_kind == Some(LabelKind::GroundTruth) || rec.split == Split::Unlabeled {
            if let Some(label) = &rec.label_path {
                rec.label_path = Some(resolve(label)?);
            }
        }
    }
    Ok(())
}

/// Seeded uniform split. Labeled records keep their label path as ground
/// truth; everything else becomes unlabeled.
pub fn split_dataset(records: &[SampleRecord], labeled_fraction: f64, seed: u64) -> Result<Manifest> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("empty record list".into()));
    }
    if !(labeled_fraction > 0.0 && labeled_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "labeled fraction must lie in (0,1], got {labeled_fraction}"
        )));
    }
    let mut order: Vec<&SampleRecord> = records.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = ((labeled_fraction * records.len() as f64).round() as usize).clamp(1, records.len());

    let mut labeled = Vec::with_capacity(k);
    for r in &order[..k] {
        let label = r.label_path.clone().ok_or_else(|| {
            Error::InvalidArgument(format!("record {} has no ground-truth label", r.id))
        })?;
        labeled.push(SampleRecord::ground_truth(
            r.id.clone(),
            r.image_path.clone(),
            label,
        ));
    }
    let mut unlabeled: Vec<SampleRecord> = order[k..]
        .iter()
        .map(|r| SampleRecord::unlabeled(r.id.clone(), r.image_path.clone()))
        .collect();
    labeled.sort_by(|a, b| a.id.cmp(&b.id));
    unlabeled.sort_by(|a, b| a.id.cmp(&b.id));
    let m = Manifest {
        labeled,
        unlabeled,
        cycle: 0,
    };
    m.validate()?;
    Ok(m)
}
