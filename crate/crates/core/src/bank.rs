//! Per-fidelity predictor pipelines: shared vocabulary, one boosted scorer
//! and one calibrator per level.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boosted_trees::{self, BoostedModel, SparseMatrix, TrainConfig};
use crate::calibration::{fit_isotonic, fit_temperature, sigmoid, IsotonicCalibrator, TemperatureCalibrator};
use crate::corpus::Dataset;
use crate::cost_model::CostProfile;
use crate::error::{Error, Result};
use crate::features::{featurize, fit_vocabulary_capped, Vocabulary};
use crate::policy::PolicyConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationMethod {
    /// Raw scores clipped to `[0, 1]`.
    None,
    Isotonic,
    /// Isotonic regression on `sigmoid(score)`.
    IsotonicSigmoid,
    Temperature,
}

impl std::str::FromStr for CalibrationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "isotonic" => Ok(Self::Isotonic),
            "isotonic-sigmoid" => Ok(Self::IsotonicSigmoid),
            "temperature" => Ok(Self::Temperature),
            other => Err(Error::InvalidConfig(format!(
                "unknown calibration method {other:?} (none, isotonic, isotonic-sigmoid, temperature)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum Calibrator {
    None,
    Isotonic(IsotonicCalibrator),
    IsotonicSigmoid(IsotonicCalibrator),
    Temperature(TemperatureCalibrator),
}

impl Calibrator {
    pub fn fit(method: CalibrationMethod, scores: &[f64], labels: &[bool]) -> Result<Self> {
        Ok(match method {
            CalibrationMethod::None => Calibrator::None,
            CalibrationMethod::Isotonic => Calibrator::Isotonic(fit_isotonic(scores, labels)?),
            CalibrationMethod::IsotonicSigmoid => {
                let squashed: Vec<f64> = scores.iter().map(|&s| sigmoid(s)).collect();
                Calibrator::IsotonicSigmoid(fit_isotonic(&squashed, labels)?)
            }
            CalibrationMethod::Temperature => match fit_temperature(scores, labels) {
                Ok(t) => Calibrator::Temperature(t),
                // all-equal labels: the isotonic fit is the constant label
                Err(Error::DegenerateLabels) => Calibrator::Isotonic(fit_isotonic(scores, labels)?),
                Err(e) => return Err(e),
            },
        })
    }

    pub fn apply(&self, score: f64) -> f64 {
        match self {
            Calibrator::None => score.clamp(0.0, 1.0),
            Calibrator::Isotonic(c) => c.apply(score),
            Calibrator::IsotonicSigmoid(c) => c.apply(sigmoid(score)),
            Calibrator::Temperature(t) => t.apply(score),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeaturizerConfig {
    /// Keep at most this many terms (highest document frequency first).
    #[serde(default)]
    pub max_terms: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityPredictor {
    pub fidelity: String,
    pub model: BoostedModel,
    pub calibrator: Calibrator,
}

impl FidelityPredictor {
    pub fn raw_score(&self, row: &[(usize, f64)]) -> f64 {
        self.model.predict_row(row)
    }

    pub fn probability(&self, row: &[(usize, f64)]) -> f64 {
        self.calibrator.apply(self.raw_score(row))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorBank {
    vocabulary: Vocabulary,
    levels: Vec<String>,
    predictors: Vec<FidelityPredictor>,
}

impl PredictorBank {
    pub fn new(vocabulary: Vocabulary, predictors: Vec<FidelityPredictor>) -> Result<Self> {
        if predictors.is_empty() {
            return Err(Error::EmptyInput("predictor bank needs at least one fidelity"));
        }
        for p in &predictors {
            if p.model.n_features != vocabulary.n_features() {
                return Err(Error::DimensionMismatch {
                    expected: vocabulary.n_features(),
                    got: p.model.n_features,
                });
            }
        }
        let levels: Vec<String> = predictors.iter().map(|p| p.fidelity.clone()).collect();
        for (i, l) in levels.iter().enumerate() {
            if levels[..i].contains(l) {
                return Err(Error::InvalidConfig(format!("two predictors for fidelity {l:?}")));
            }
        }
        Ok(Self {
            vocabulary,
            levels,
            predictors,
        })
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn levels(&self) -> &[String] {
        &self.levels
    }

    pub fn predictors(&self) -> &[FidelityPredictor] {
        &self.predictors
    }

    /// Sparse feature row for a question under this bank's vocabulary.
    pub fn feature_row(&self, question: &str) -> Vec<(usize, f64)> {
        featurize(question, &self.vocabulary).nonzero_columns()
    }

    pub fn predict_row(&self, row: &[(usize, f64)]) -> Vec<f64> {
        self.predictors.iter().map(|p| p.probability(row)).collect()
    }

    /// Calibrated success probability for each level, in level order.
    /// Uses the question text only.
    pub fn predict_success(&self, question: &str) -> Vec<f64> {
        self.predict_row(&self.feature_row(question))
    }

    pub fn predict_success_map(&self, question: &str) -> BTreeMap<String, f64> {
        self.levels
            .iter()
            .cloned()
            .zip(self.predict_success(question))
            .collect()
    }
}

/// Fits the vocabulary on the training questions, then one boosted model and
/// calibrator per level on that level's records.
pub fn train_bank(
    train: &Dataset,
    levels: &[String],
    featurizer: &FeaturizerConfig,
    gbr: &TrainConfig,
    method: CalibrationMethod,
) -> Result<PredictorBank> {
    gbr.validate()?;
    if let Some(r) = train.records().iter().find(|r| !levels.contains(&r.fidelity_id)) {
        return Err(Error::UnknownFidelity(r.fidelity_id.clone()));
    }
    let qids: Vec<&str> = train.qids().collect();
    if qids.is_empty() {
        return Err(Error::EmptyInput("no training questions"));
    }
    let texts: Vec<&str> = qids
        .iter()
        .map(|q| train.question_text(q).expect("indexed qid"))
        .collect();
    let vocabulary = fit_vocabulary_capped(&texts, featurizer.max_terms)?;
    let rows: BTreeMap<&str, Vec<(usize, f64)>> = qids
        .iter()
        .zip(&texts)
        .map(|(q, t)| (*q, featurize(t, &vocabulary).nonzero_columns()))
        .collect();

    let predictors = levels
        .par_iter()
        .map(|level| {
            let mut x = SparseMatrix::new(vocabulary.n_features());
            let mut y = Vec::new();
            let mut labels = Vec::new();
            for r in train.records().iter().filter(|r| &r.fidelity_id == level) {
                x.push_row(rows[r.qid.as_str()].clone())?;
                y.push(if r.correct { 1.0 } else { 0.0 });
                labels.push(r.correct);
            }
            if labels.is_empty() {
                return Err(Error::NoTrainingRecords(level.clone()));
            }
            let model = boosted_trees::fit(&x, &y, gbr)?;
            let scores = model.predict_matrix(&x)?;
            let calibrator = Calibrator::fit(method, &scores, &labels)?;
            Ok(FidelityPredictor {
                fidelity: level.clone(),
                model,
                calibrator,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    PredictorBank::new(vocabulary, predictors)
}

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub levels: Vec<String>,
    pub vocabulary: String,
    pub predictors: Vec<String>,
    #[serde(default)]
    pub train_config: Option<TrainConfig>,
    #[serde(default)]
    pub calibration: Option<CalibrationMethod>,
    #[serde(default)]
    pub policy: Option<PolicyConfig>,
    #[serde(default)]
    pub profile: Option<CostProfile>,
}

/// A trained bank together with the settings it was selected under.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifacts {
    pub bank: PredictorBank,
    pub train_config: Option<TrainConfig>,
    pub calibration: Option<CalibrationMethod>,
    pub policy: Option<PolicyConfig>,
    pub profile: Option<CostProfile>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn file_stem_for(index: usize, id: &str) -> String {
    let safe: String = id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '_' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("fidelity_{index}_{safe}.json")
}

impl ModelArtifacts {
    /// Writes `manifest.json`, `vocabulary.json` and one file per fidelity.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(&dir.join("vocabulary.json"), self.bank.vocabulary())?;
        let mut files = Vec::new();
        for (i, p) in self.bank.predictors().iter().enumerate() {
            let name = file_stem_for(i, &p.fidelity);
            write_json(&dir.join(&name), p)?;
            files.push(name);
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            levels: self.bank.levels().to_vec(),
            vocabulary: "vocabulary.json".into(),
            predictors: files,
            train_config: self.train_config,
            calibration: self.calibration,
            policy: self.policy,
            profile: self.profile.clone(),
        };
        write_json(&dir.join("manifest.json"), &manifest)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported model format version {}",
                manifest.format_version
            )));
        }
        let vocabulary: Vocabulary = read_json(&dir.join(&manifest.vocabulary))?;
        let predictors = manifest
            .predictors
            .iter()
            .map(|f| read_json::<FidelityPredictor>(&dir.join(f)))
            .collect::<Result<Vec<_>>>()?;
        let bank = PredictorBank::new(vocabulary, predictors)?;
        if bank.levels() != manifest.levels.as_slice() {
            return Err(Error::LevelMismatch {
                bank: bank.levels().to_vec(),
                profile: manifest.levels,
            });
        }
        Ok(Self {
            bank,
            train_config: manifest.train_config,
            calibration: manifest.calibration,
            policy: manifest.policy,
            profile: manifest.profile,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CorrectnessRecord;

    fn levels() -> Vec<String> {
        vec!["low".into(), "high".into()]
    }

    fn toy() -> Dataset {
        let mut recs = Vec::new();
        for i in 0..40 {
            let (text, low) = if i % 2 == 0 {
                (format!("is it red {i}"), i % 4 == 0)
            } else {
                (format!("how many cats {i}"), false)
            };
            recs.push(CorrectnessRecord::new(format!("q{i:02}"), &text, "low", low));
            recs.push(CorrectnessRecord::new(format!("q{i:02}"), &text, "high", true));
        }
        Dataset::from_records(recs).unwrap()
    }

    #[test]
    fn all_positive_level_predicts_one() {
        let bank = train_bank(
            &toy(),
            &levels(),
            &FeaturizerConfig::default(),
            &TrainConfig::default(),
            CalibrationMethod::Isotonic,
        )
        .unwrap();
        for q in ["is it red", "how many cats", "something unseen"] {
            assert_eq!(bank.predict_success(q)[1], 1.0);
        }
        let p = bank.predict_success("how many cats 3");
        assert!(p[0] < 0.2, "{p:?}");
        assert_eq!(
            bank.predict_success("is it red"),
            bank.predict_success("is it red")
        );
    }

    #[test]
    fn no_calibration_clips() {
        assert_eq!(Calibrator::None.apply(1.7), 1.0);
        assert_eq!(Calibrator::None.apply(-0.2), 0.0);
        assert_eq!(Calibrator::None.apply(0.25), 0.25);
    }

    #[test]
    fn temperature_falls_back_on_constant_labels() {
        let c = Calibrator::fit(CalibrationMethod::Temperature, &[0.1, 0.9], &[true, true]).unwrap();
        assert_eq!(c.apply(0.5), 1.0);
    }

    #[test]
    fn constant_calibrators_give_constant_probs() {
        let bank = train_bank(
            &toy(),
            &levels(),
            &FeaturizerConfig::default(),
            &TrainConfig::default(),
            CalibrationMethod::Isotonic,
        )
        .unwrap();
        let predictors = bank
            .predictors()
            .iter()
            .map(|p| FidelityPredictor {
                calibrator: Calibrator::Isotonic(IsotonicCalibrator::constant(0.5).unwrap()),
                ..p.clone()
            })
            .collect();
        let flat = PredictorBank::new(bank.vocabulary().clone(), predictors).unwrap();
        assert_eq!(flat.predict_success("anything at all"), vec![0.5, 0.5]);
    }

    #[test]
    fn missing_level_and_unknown_level() {
        let ds = toy();
        let err = train_bank(
            &ds,
            &["low".into(), "high".into(), "mid".into()],
            &FeaturizerConfig::default(),
            &TrainConfig::default(),
            CalibrationMethod::Isotonic,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NoTrainingRecords(l) if l == "mid"));
        let err = train_bank(
            &ds,
            &["low".into()],
            &FeaturizerConfig::default(),
            &TrainConfig::default(),
            CalibrationMethod::Isotonic,
        )
        .unwrap_err();
        assert!(matches!(err, Error::UnknownFidelity(_)));
    }

    #[test]
    fn save_and_load_roundtrip() {
        let bank = train_bank(
            &toy(),
            &levels(),
            &FeaturizerConfig::default(),
            &TrainConfig::default(),
            CalibrationMethod::Isotonic,
        )
        .unwrap();
        let art = ModelArtifacts {
            bank,
            train_config: Some(TrainConfig::default()),
            calibration: Some(CalibrationMethod::Isotonic),
            policy: Some(PolicyConfig::new(0.002, 0.01).unwrap()),
            profile: None,
        };
        let dir = tempfile::tempdir().unwrap();
        art.save(dir.path()).unwrap();
        let back = ModelArtifacts::load(dir.path()).unwrap();
        assert_eq!(back, art);
        for q in ["is it red 4", "how many cats 7", "zebra"] {
            let a = art.bank.predict_success(q);
            let b = back.bank.predict_success(q);
            assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert!(ModelArtifacts::load(dir.path().join("nope")).is_err());
    }
}
