//! Synthetic corpora with known per-fidelity success probabilities.
//!
//! Each question belongs to an archetype; its text is the archetype's marker
//! tokens followed by seeded filler words, and its correctness at each
//! fidelity is a Bernoulli draw from the archetype's true probability.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_records, CorrectnessRecord, Dataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Archetype {
    pub name: String,
    pub markers: Vec<String>,
    pub true_p: BTreeMap<String, f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub fidelities: Vec<String>,
    pub archetypes: Vec<Archetype>,
    pub n_questions: usize,
    #[serde(default)]
    pub seed: u64,
}

pub const CANNED_WORLDS: [&str; 3] = ["heterogeneous-mix", "monotone", "adversarial"];

const FILLER_WORDS: [&str; 50] = [
    "image",
    "scene",
    "photo",
    "picture",
    "object",
    "area",
    "person",
    "street",
    "table",
    "window",
    "building",
    "car",
    "tree",
    "sky",
    "field",
    "water",
    "road",
    "wall",
    "floor",
    "door",
    "sign",
    "box",
    "bag",
    "chair",
    "room",
    "light",
    "shadow",
    "corner",
    "background",
    "foreground",
    "large",
    "small",
    "old",
    "new",
    "bright",
    "dark",
    "near",
    "far",
    "side",
    "center",
    "middle",
    "edge",
    "grass",
    "cloud",
    "plate",
    "bottle",
    "fence",
    "roof",
    "bench",
    "path",
];

const LEVELS: [&str; 5] = ["caption", "resize_32", "jpeg_q1", "jpeg_q10", "full"];

fn archetype(name: &str, markers: &str, p: [f64; 5], weight: f64) -> Archetype {
    Archetype {
        name: name.to_owned(),
        markers: markers.split_whitespace().map(str::to_owned).collect(),
        true_p: LEVELS.iter().map(|l| l.to_string()).zip(p).collect(),
        weight,
    }
}

impl WorldSpec {
    /// One of the shipped worlds over the five standard levels.
    pub fn canned(name: &str, n_questions: usize, seed: u64) -> Result<Self> {
        let archetypes = match name {
            // no single level is utility-optimal for every archetype
            "heterogeneous-mix" => vec![
                archetype("yes_no", "is there a", [0.90, 0.91, 0.91, 0.92, 0.92], 0.40),
                archetype("color", "what color is the", [0.30, 0.88, 0.89, 0.90, 0.90], 0.20),
                archetype(
                    "spatial",
                    "what is behind the",
                    [0.20, 0.50, 0.88, 0.89, 0.90],
                    0.10,
                ),
                archetype("counting", "how many", [0.05, 0.35, 0.65, 0.92, 0.93], 0.15),
                archetype(
                    "text",
                    "what does the label read",
                    [0.02, 0.30, 0.55, 0.75, 0.97],
                    0.15,
                ),
            ],
            "monotone" => vec![
                archetype("easy", "is there a", [0.75, 0.78, 0.80, 0.82, 0.92], 0.3),
                archetype("medium", "what color is the", [0.40, 0.55, 0.68, 0.75, 0.88], 0.3),
                archetype("hard", "how many", [0.10, 0.20, 0.40, 0.60, 0.85], 0.2),
                archetype(
                    "ocr",
                    "what does the label read",
                    [0.02, 0.05, 0.15, 0.35, 0.85],
                    0.2,
                ),
            ],
            // "plateau" gains little at middle levels but a lot at full
            "adversarial" => vec![
                archetype("easy", "is there a", [0.85, 0.86, 0.87, 0.88, 0.89], 0.3),
                archetype(
                    "plateau",
                    "what does the label read",
                    [0.50, 0.51, 0.52, 0.53, 0.95],
                    0.3,
                ),
                archetype("dip", "how many", [0.60, 0.40, 0.45, 0.70, 0.90], 0.2),
                archetype("medium", "what color is the", [0.40, 0.60, 0.75, 0.80, 0.82], 0.2),
            ],
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown world {other:?} (canned worlds: {})",
                    CANNED_WORLDS.join(", ")
                )))
            }
        };
        let spec = Self {
            fidelities: LEVELS.iter().map(|s| s.to_string()).collect(),
            archetypes,
            n_questions,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: WorldSpec = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fidelities.is_empty() {
            return Err(Error::InvalidConfig("world has no fidelities".into()));
        }
        if self.archetypes.is_empty() {
            return Err(Error::InvalidConfig("world has no archetypes".into()));
        }
        let total: f64 = self.archetypes.iter().map(|a| a.weight).sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::InvalidConfig(
                "archetype weights must sum to a positive value".into(),
            ));
        }
        for (i, a) in self.archetypes.iter().enumerate() {
            if self.archetypes[..i].iter().any(|o| o.name == a.name) {
                return Err(Error::InvalidConfig(format!("duplicate archetype {:?}", a.name)));
            }
            if a.weight.is_nan() || a.weight < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "archetype {:?} has negative weight",
                    a.name
                )));
            }
            if a.markers.iter().all(|m| m.trim().is_empty()) {
                return Err(Error::InvalidConfig(format!(
                    "archetype {:?} has no marker tokens",
                    a.name
                )));
            }
            for f in &self.fidelities {
                match a.true_p.get(f) {
                    Some(p) if (0.0..=1.0).contains(p) => {}
                    Some(p) => {
                        return Err(Error::InvalidConfig(format!(
                            "archetype {:?} has probability {p} at {f:?}",
                            a.name
                        )))
                    }
                    None => {
                        return Err(Error::InvalidConfig(format!(
                            "archetype {:?} has no probability for {f:?}",
                            a.name
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    pub fn archetype(&self, name: &str) -> Option<&Archetype> {
        self.archetypes.iter().find(|a| a.name == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedCorpus {
    pub dataset: Dataset,
    pub truth: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct TruthLine {
    qid: String,
    archetype: String,
}

impl GeneratedCorpus {
    /// Writes the corpus as JSON lines and the `{qid, archetype}` sidecar.
    pub fn write(&self, corpus_path: impl AsRef<Path>, truth_path: impl AsRef<Path>) -> Result<()> {
        write_records(corpus_path, self.dataset.records())?;
        write_truth(truth_path, &self.truth)
    }
}

pub fn write_truth(path: impl AsRef<Path>, truth: &BTreeMap<String, String>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (qid, archetype) in truth {
        serde_json::to_writer(
            &mut w,
            &TruthLine {
                qid: qid.clone(),
                archetype: archetype.clone(),
            },
        )?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_truth(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let t: TruthLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.insert(t.qid, t.archetype);
    }
    Ok(out)
}

/// Samples a corpus; identical specs give identical corpora.
pub fn generate(spec: &WorldSpec) -> Result<GeneratedCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pick = WeightedIndex::new(spec.archetypes.iter().map(|a| a.weight))
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let width = spec.n_questions.max(1).to_string().len().max(6);
    let mut records = Vec::with_capacity(spec.n_questions * spec.fidelities.len());
    let mut truth = BTreeMap::new();
    for i in 0..spec.n_questions {
        let a = &spec.archetypes[pick.sample(&mut rng)];
        let n_fill = rng.gen_range(1..=3);
        let mut words: Vec<&str> = a.markers.iter().map(String::as_str).collect();
        for _ in 0..n_fill {
            words.push(FILLER_WORDS[rng.gen_range(0..FILLER_WORDS.len())]);
        }
        let text = words.join(" ");
        let qid = format!("q{i:0width$}");
        for f in &spec.fidelities {
            let correct = rng.gen::<f64>() < a.true_p[f];
            records.push(CorrectnessRecord::new(
                qid.clone(),
                text.clone(),
                f.clone(),
                correct,
            ));
        }
        truth.insert(qid, a.name.clone());
    }
    Ok(GeneratedCorpus {
        dataset: Dataset::from_records(records)?,
        truth,
    })
}

/// True success probability of `qid` at `fidelity`.
pub fn true_success(
    spec: &WorldSpec,
    truth: &BTreeMap<String, String>,
    qid: &str,
    fidelity: &str,
) -> Result<f64> {
    let name = truth
        .get(qid)
        .ok_or_else(|| Error::UnknownQuestion(qid.to_owned()))?;
    let a = spec
        .archetype(name)
        .ok_or_else(|| Error::InvalidConfig(format!("unknown archetype {name:?}")))?;
    a.true_p
        .get(fidelity)
        .copied()
        .ok_or_else(|| Error::UnknownFidelity(fidelity.to_owned()))
}

/// True probabilities of `qid` at every fidelity, in spec order.
pub fn true_vector(spec: &WorldSpec, truth: &BTreeMap<String, String>, qid: &str) -> Result<Vec<f64>> {
    spec.fidelities
        .iter()
        .map(|f| true_success(spec, truth, qid, f))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(p: f64, n: usize) -> WorldSpec {
        WorldSpec {
            fidelities: vec!["lo".into(), "hi".into()],
            archetypes: vec![Archetype {
                name: "only".into(),
                markers: vec!["what".into()],
                true_p: [("lo".to_string(), p), ("hi".to_string(), p)]
                    .into_iter()
                    .collect(),
                weight: 1.0,
            }],
            n_questions: n,
            seed: 4,
        }
    }

    #[test]
    fn degenerate_probabilities() {
        let c = generate(&single(1.0, 200)).unwrap();
        assert!(c.dataset.records().iter().all(|r| r.correct));
        let c = generate(&single(0.0, 200)).unwrap();
        assert!(c.dataset.records().iter().all(|r| !r.correct));
    }

    #[test]
    fn seeded_determinism() {
        let spec = WorldSpec::canned("heterogeneous-mix", 300, 8).unwrap();
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = WorldSpec {
            seed: 9,
            ..spec.clone()
        };
        assert_ne!(generate(&spec).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn empirical_rate_within_binomial_interval() {
        let n = 10_000;
        let c = generate(&single(0.7, n)).unwrap();
        let hits = c
            .dataset
            .records()
            .iter()
            .filter(|r| r.fidelity_id == "lo" && r.correct)
            .count();
        // 99.9% two-sided normal interval: z = 3.2905
        let sd = (n as f64 * 0.7 * 0.3).sqrt();
        assert!((hits as f64 - 0.7 * n as f64).abs() <= 3.2905 * sd, "{hits}");
    }

    #[test]
    fn one_record_per_fidelity_and_truth_covers_all() {
        let spec = WorldSpec::canned("monotone", 250, 1).unwrap();
        let c = generate(&spec).unwrap();
        assert_eq!(c.dataset.len(), 250 * 5);
        assert_eq!(c.truth.len(), 250);
        for q in c.dataset.qids() {
            assert_eq!(c.dataset.records_for(q).count(), 5);
            assert!(c.truth.contains_key(q));
        }
    }

    #[test]
    fn truth_lookup() {
        let spec = WorldSpec::canned("adversarial", 50, 2).unwrap();
        let c = generate(&spec).unwrap();
        let (qid, name) = c.truth.iter().next().unwrap();
        let a = spec.archetype(name).unwrap();
        assert_eq!(
            true_success(&spec, &c.truth, qid, "full").unwrap(),
            a.true_p["full"]
        );
        let all = true_vector(&spec, &c.truth, qid).unwrap();
        let want: Vec<f64> = spec.fidelities.iter().map(|f| a.true_p[f]).collect();
        assert_eq!(all, want);
        assert!(matches!(
            true_success(&spec, &c.truth, "missing", "full"),
            Err(Error::UnknownQuestion(_))
        ));
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = single(0.5, 10);
        s.archetypes[0].true_p.remove("hi");
        assert!(generate(&s).is_err());
        let mut s = single(0.5, 10);
        s.archetypes[0].weight = 0.0;
        assert!(generate(&s).is_err());
        let mut s = single(0.5, 10);
        s.archetypes[0].true_p.insert("hi".into(), 1.5);
        assert!(generate(&s).is_err());
        assert!(WorldSpec::canned("nowhere", 10, 0).is_err());
    }

    #[test]
    fn monotone_world_is_monotone() {
        let spec = WorldSpec::canned("monotone", 1, 0).unwrap();
        for a in &spec.archetypes {
            let v: Vec<f64> = spec.fidelities.iter().map(|f| a.true_p[f]).collect();
            assert!(v.windows(2).all(|w| w[0] <= w[1]), "{}", a.name);
        }
    }

    #[test]
    fn truth_file_roundtrip() {
        let spec = WorldSpec::canned("monotone", 20, 3).unwrap();
        let c = generate(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (cp, tp) = (dir.path().join("c.jsonl"), dir.path().join("t.jsonl"));
        c.write(&cp, &tp).unwrap();
        assert_eq!(load_truth(&tp).unwrap(), c.truth);
        assert_eq!(crate::corpus::load_records(&cp).unwrap(), c.dataset);
    }

    #[test]
    fn spec_json_roundtrip() {
        let spec = WorldSpec::canned("adversarial", 10, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.json");
        fs::write(&p, serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(WorldSpec::load(&p).unwrap(), spec);
    }
}
