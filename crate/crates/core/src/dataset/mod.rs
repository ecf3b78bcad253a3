//! Dataset manifests, splits, synthetic distortions and map labels.

mod labels;
mod synth;

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use qmap_nn::SeedStream;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

pub use labels::{label_patches, materialize_labels, LabelEntry, LabelStore};
pub use synth::{
    apply_distortion, procedural_base, quantize, synthesize, DistortionKind, DistortionRecipe, SynthConfig,
};

pub const MANIFEST_HEADER: [&str; 7] = ["id", "distorted", "reference", "type", "level", "score", "score_kind"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScoreKind {
    #[serde(rename = "MOS")]
    Mos,
    #[serde(rename = "DMOS")]
    Dmos,
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreKind::Mos => "MOS",
            ScoreKind::Dmos => "DMOS",
        })
    }
}

impl FromStr for ScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "MOS" => Ok(ScoreKind::Mos),
            "DMOS" => Ok(ScoreKind::Dmos),
            _ => Err(Error::Config(format!("score kind {s:?} is not MOS or DMOS"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub id: String,
    /// Relative to the manifest directory unless absolute.
    pub distorted: PathBuf,
    pub reference: Option<PathBuf>,
    pub distortion: String,
    pub level: u32,
    pub score: f64,
    pub score_kind: ScoreKind,
}

impl Entry {
    /// Split unit: the reference path, or the id for reference-free entries.
    pub fn reference_identity(&self) -> String {
        match &self.reference {
            Some(r) => r.to_string_lossy().into_owned(),
            None => self.id.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    /// Directory that relative entry paths are resolved against.
    pub root: PathBuf,
    pub score_range: (f64, f64),
    pub entries: Vec<Entry>,
}

#[derive(Debug, Deserialize)]
struct Row {
    id: String,
    distorted: String,
    reference: String,
    #[serde(rename = "type")]
    distortion: String,
    level: u32,
    score: f64,
    score_kind: String,
}

fn parse_range(line: &str) -> Result<(f64, f64)> {
    let body = line
        .trim()
        .strip_prefix("#score_range=")
        .ok_or_else(|| Error::Load {
            row: 0,
            msg: format!("expected '#score_range=lo,hi', got {line:?}"),
        })?;
    let bad = || Error::Load {
        row: 0,
        msg: format!("malformed score range {body:?}"),
    };
    let (lo, hi) = body.split_once(',').ok_or_else(bad)?;
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    if !(lo.is_finite() && hi.is_finite()) || lo > hi {
        return Err(bad());
    }
    Ok((lo, hi))
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>, score_range: (f64, f64)) -> Self {
        Self {
            root: root.into(),
            score_range,
            entries: Vec::new(),
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.root.join(p)
    }

    pub fn distorted_path(&self, e: &Entry) -> PathBuf {
        self.resolve(&e.distorted)
    }

    pub fn reference_path(&self, e: &Entry) -> Option<PathBuf> {
        e.reference.as_deref().map(|r| self.resolve(r))
    }

    /// Unique ids, existing files and in-range scores.
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.score_range;
        let mut seen = HashSet::new();
        for (k, e) in self.entries.iter().enumerate() {
            let row = k + 1;
            if e.id.is_empty() || !seen.insert(e.id.as_str()) {
                return Err(Error::Load {
                    row,
                    msg: format!("duplicate or empty id {:?}", e.id),
                });
            }
            if !(e.score >= lo && e.score <= hi) {
                return Err(Error::Load {
                    row,
                    msg: format!("score {} outside declared range [{lo}, {hi}]", e.score),
                });
            }
            for p in std::iter::once(self.distorted_path(e)).chain(self.reference_path(e)) {
                if !p.is_file() {
                    return Err(Error::Load {
                        row,
                        msg: format!("missing file {}", p.display()),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
        let score_range = parse_range(first)?;
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(rest.as_bytes());
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if header != MANIFEST_HEADER {
            return Err(Error::Load {
                row: 0,
                msg: format!("header must be {}, got {}", MANIFEST_HEADER.join(","), header.join(",")),
            });
        }
        let mut entries = Vec::new();
        for (k, rec) in reader.deserialize::<Row>().enumerate() {
            let row = rec.map_err(|e| Error::Load {
                row: k + 1,
                msg: e.to_string(),
            })?;
            entries.push(Entry {
                id: row.id,
                distorted: PathBuf::from(row.distorted),
                reference: (!row.reference.is_empty()).then(|| PathBuf::from(row.reference)),
                distortion: row.distortion,
                level: row.level,
                score: row.score,
                score_kind: row.score_kind.parse().map_err(|e: Error| Error::Load {
                    row: k + 1,
                    msg: e.to_string(),
                })?,
            });
        }
        Ok(Self {
            root: root.into(),
            score_range,
            entries,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Self::parse(&text, root)?;
        m.validate()?;
        Ok(m)
    }

    pub fn render(&self) -> Result<String> {
        let mut out = Vec::new();
        writeln!(out, "#score_range={},{}", self.score_range.0, self.score_range.1).expect("vec write");
        let mut w = csv::Writer::from_writer(out);
        w.write_record(MANIFEST_HEADER)?;
        for e in &self.entries {
            w.write_record([
                e.id.clone(),
                e.distorted.to_string_lossy().into_owned(),
                e.reference.as_ref().map(|r| r.to_string_lossy().into_owned()).unwrap_or_default(),
                e.distortion.clone(),
                e.level.to_string(),
                e.score.to_string(),
                e.score_kind.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("utf-8 fields"))
    }

    /// Writes the CSV; entry paths are stored as they are held.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.render()?).map_err(io_err(path))
    }

    fn with_entries(&self, entries: Vec<Entry>) -> Self {
        Self {
            root: self.root.clone(),
            score_range: self.score_range,
            entries,
        }
    }
}

/// Affine rescaling of scores onto [0,100].
pub fn normalize_scores(m: &DatasetManifest) -> Result<DatasetManifest> {
    let (lo, hi) = m.score_range;
    if !(hi > lo) {
        return Err(Error::Domain(format!("degenerate score range [{lo}, {hi}]")));
    }
    if (lo, hi) == (0.0, 100.0) {
        return Ok(m.clone());
    }
    let mut out = m.clone();
    out.score_range = (0.0, 100.0);
    for e in &mut out.entries {
        e.score = ((e.score - lo) * 100.0 / (hi - lo)).clamp(0.0, 100.0);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            train_fraction: 0.8,
            seed,
        }
    }
}

/// Splits unit labels into train and test index sets. Items sharing a label
/// always land on the same side.
pub fn split_indices(labels: &[String], s: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    let units: BTreeSet<&str> = labels.iter().map(String::as_str).collect();
    let n = units.len();
    if n < 2 {
        return Err(Error::Split(format!("need at least 2 reference images, found {n}")));
    }
    if !(s.train_fraction > 0.0 && s.train_fraction < 1.0) {
        return Err(Error::Split(format!("train fraction {} not in (0,1)", s.train_fraction)));
    }
    let mut order: Vec<&str> = units.into_iter().collect();
    order.shuffle(&mut SeedStream::new(s.seed).rng("split"));
    let n_train = ((n as f64 * s.train_fraction).round() as usize).clamp(1, n - 1);
    let train_units: HashSet<&str> = order[..n_train].iter().copied().collect();
    Ok((0..labels.len()).partition(|&i| train_units.contains(labels[i].as_str())))
}

/// Partitions by reference identity so no content crosses the split.
pub fn split(m: &DatasetManifest, s: &SplitSpec) -> Result<(DatasetManifest, DatasetManifest)> {
    let labels: Vec<String> = m.entries.iter().map(Entry::reference_identity).collect();
    let (train, test) = split_indices(&labels, s)?;
    let pick = |idx: Vec<usize>| m.with_entries(idx.into_iter().map(|i| m.entries[i].clone()).collect());
    Ok((pick(train), pick(test)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, reference: Option<&str>, score: f64) -> Entry {
        Entry {
            id: id.into(),
            distorted: PathBuf::from(format!("{id}.png")),
            reference: reference.map(PathBuf::from),
            distortion: "white_noise".into(),
            level: 1,
            score,
            score_kind: ScoreKind::Mos,
        }
    }

    fn manifest(n_refs: usize, per_ref: usize) -> DatasetManifest {
        let mut m = DatasetManifest::new("/nonexistent", (0.0, 100.0));
        for r in 0..n_refs {
            for d in 0..per_ref {
                m.entries.push(entry(&format!("r{r}d{d}"), Some(&format!("ref{r}.png")), (r * per_ref + d) as f64));
            }
        }
        m
    }

    #[test]
    fn empty_manifest_parses() {
        let m = DatasetManifest::parse("#score_range=0,9\nid,distorted,reference,type,level,score,score_kind\n", ".")
            .unwrap();
        assert!(m.entries.is_empty());
        assert_eq!(m.score_range, (0.0, 9.0));
        m.validate().unwrap();
    }

    #[test]
    fn bad_headers_and_ranges() {
        assert!(DatasetManifest::parse("id,distorted\n", ".").is_err());
        assert!(DatasetManifest::parse("#score_range=5,1\nid,distorted,reference,type,level,score,score_kind\n", ".")
            .is_err());
        assert!(DatasetManifest::parse("#score_range=0,1\nid,x\n", ".").is_err());
    }

    #[test]
    fn normalization() {
        let mut m = DatasetManifest::new(".", (0.0, 9.0));
        m.entries.push(entry("a", None, 9.0));
        m.entries.push(entry("b", None, 4.5));
        let n = normalize_scores(&m).unwrap();
        assert_eq!(n.entries[0].score, 100.0);
        assert_eq!(n.entries[1].score, 50.0);
        assert_eq!(normalize_scores(&n).unwrap(), n);

        let mut u = DatasetManifest::new(".", (0.0, 1.0));
        u.entries.push(entry("a", None, 0.25));
        assert_eq!(normalize_scores(&u).unwrap().entries[0].score, 25.0);
        assert!(matches!(normalize_scores(&DatasetManifest::new(".", (3.0, 3.0))), Err(Error::Domain(_))));
    }

    #[test]
    fn split_arithmetic_and_determinism() {
        let m = manifest(10, 3);
        let (train, test) = split(&m, &SplitSpec::new(1)).unwrap();
        let refs = |x: &DatasetManifest| x.entries.iter().map(Entry::reference_identity).collect::<BTreeSet<_>>();
        assert_eq!((refs(&train).len(), refs(&test).len()), (8, 2));
        assert_eq!(train.entries.len() + test.entries.len(), 30);
        assert_eq!(split(&m, &SplitSpec::new(1)).unwrap(), (train.clone(), test));
        let differs = (2..10).any(|s| split(&m, &SplitSpec::new(s)).unwrap().0 != train);
        assert!(differs);
    }

    #[test]
    fn reference_free_entries_split_by_id() {
        let mut m = DatasetManifest::new(".", (0.0, 100.0));
        for k in 0..5 {
            m.entries.push(entry(&format!("e{k}"), None, 1.0));
        }
        let (train, test) = split(&m, &SplitSpec::new(3)).unwrap();
        assert_eq!((train.entries.len(), test.entries.len()), (4, 1));
        let mut one = DatasetManifest::new(".", (0.0, 100.0));
        one.entries.push(entry("only", None, 1.0));
        assert!(matches!(split(&one, &SplitSpec::new(0)), Err(Error::Split(_))));
    }
}
