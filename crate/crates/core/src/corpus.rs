//! Correctness logs and question-level cross-validation folds.
//!
//! Records are stored one JSON object per line:
//!
//! ```text
//! {"qid": "q1", "question": "how many dogs", "fidelity": "caption", "correct": 1}
//! ```
//!
//! Extra keys are ignored. A `(qid, fidelity)` pair may appear at most once.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One logged outcome: whether the answer to `qid` at `fidelity_id` was correct.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectnessRecord {
    pub qid: String,
    #[serde(rename = "question")]
    pub question_text: String,
    #[serde(rename = "fidelity")]
    pub fidelity_id: String,
    #[serde(with = "bit")]
    pub correct: bool,
}

mod bit {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(de::Error::custom(format!(
                "\"correct\" must be 0 or 1, got {other}"
            ))),
        }
    }
}

impl CorrectnessRecord {
    pub fn new(
        qid: impl Into<String>,
        question: impl Into<String>,
        fidelity: impl Into<String>,
        correct: bool,
    ) -> Self {
        Self {
            qid: qid.into(),
            question_text: question.into(),
            fidelity_id: fidelity.into(),
            correct,
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.qid.is_empty() {
            return Err("empty \"qid\"".into());
        }
        if self.question_text.is_empty() {
            return Err("empty \"question\"".into());
        }
        if self.fidelity_id.is_empty() {
            return Err("empty \"fidelity\"".into());
        }
        Ok(())
    }
}

/// Validated collection of records indexed by question id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    records: Vec<CorrectnessRecord>,
    index: BTreeMap<String, Vec<usize>>,
}

impl Dataset {
    /// Builds a dataset, rejecting duplicate `(qid, fidelity)` pairs and
    /// questions whose text differs between records.
    pub fn from_records(records: Vec<CorrectnessRecord>) -> Result<Self> {
        let mut ds = Dataset::default();
        for r in records {
            ds.push(r)?;
        }
        Ok(ds)
    }

    fn push(&mut self, record: CorrectnessRecord) -> Result<()> {
        let pos = self.records.len();
        if let Some(existing) = self.index.get(&record.qid) {
            let first = &self.records[existing[0]];
            if first.question_text != record.question_text {
                return Err(Error::ConflictingQuestion {
                    qid: record.qid.clone(),
                });
            }
            if existing
                .iter()
                .any(|&i| self.records[i].fidelity_id == record.fidelity_id)
            {
                return Err(Error::DuplicateRecord {
                    qid: record.qid.clone(),
                    fidelity: record.fidelity_id.clone(),
                });
            }
        }
        self.index.entry(record.qid.clone()).or_default().push(pos);
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[CorrectnessRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct question ids in lexicographic order.
    pub fn qids(&self) -> impl Iterator<Item = &str> {
        self.index.keys().map(String::as_str)
    }

    pub fn n_questions(&self) -> usize {
        self.index.len()
    }

    pub fn question_text(&self, qid: &str) -> Option<&str> {
        self.index
            .get(qid)
            .map(|ix| self.records[ix[0]].question_text.as_str())
    }

    pub fn records_for(&self, qid: &str) -> impl Iterator<Item = &CorrectnessRecord> {
        self.index
            .get(qid)
            .into_iter()
            .flatten()
            .map(move |&i| &self.records[i])
    }

    /// Logged label for `(qid, fidelity)`, if present.
    pub fn label(&self, qid: &str, fidelity: &str) -> Option<bool> {
        self.records_for(qid)
            .find(|r| r.fidelity_id == fidelity)
            .map(|r| r.correct)
    }

    /// Sub-dataset restricted to the given question ids (record order kept).
    pub fn subset<'a>(&self, qids: impl IntoIterator<Item = &'a str>) -> Dataset {
        let mut keep: Vec<usize> = qids
            .into_iter()
            .filter_map(|q| self.index.get(q))
            .flatten()
            .copied()
            .collect();
        keep.sort_unstable();
        keep.dedup();
        let records = keep.into_iter().map(|i| self.records[i].clone()).collect();
        Dataset::from_records(records).expect("subset of a valid dataset is valid")
    }
}

/// Reads a JSON-lines correctness log. Blank lines are skipped.
pub fn load_records(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_records(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn read_records(reader: impl BufRead) -> Result<Dataset> {
    let mut ds = Dataset::default();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io("<reader>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CorrectnessRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        record.validate().map_err(|message| Error::Parse {
            line: line_no,
            message,
        })?;
        ds.push(record)?;
    }
    Ok(ds)
}

pub fn write_records(path: impl AsRef<Path>, records: &[CorrectnessRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Assignment of every question id to one of `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    k: usize,
    assignment: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn fold_of(&self, qid: &str) -> Option<usize> {
        self.assignment.get(qid).copied()
    }

    /// Question ids in fold `fold`, lexicographically ordered.
    pub fn fold(&self, fold: usize) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(q, _)| q.as_str())
            .collect()
    }

    /// Question ids in every fold except `fold`.
    pub fn complement(&self, fold: usize) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, &f)| f != fold)
            .map(|(q, _)| q.as_str())
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignment.values() {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Sorts distinct qids, shuffles them with a seeded Fisher–Yates pass and
/// deals them round-robin into `k` folds.
pub fn assign_folds(dataset: &Dataset, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("fold count must be >= 2, got {k}")));
    }
    let mut qids: Vec<&str> = dataset.qids().collect();
    if qids.len() < k {
        return Err(Error::TooFewQuestions {
            needed: k,
            found: qids.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    qids.shuffle(&mut rng);
    let assignment = qids
        .into_iter()
        .enumerate()
        .map(|(i, q)| (q.to_owned(), i % k))
        .collect();
    Ok(FoldAssignment { k, assignment })
}
