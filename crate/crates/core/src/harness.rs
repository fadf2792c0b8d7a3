//! Cross-validated evaluation: per-fold training and calibration, grid search
//! for `(lambda, tau)` on training folds only, policy evaluation on the
//! held-out fold, and Pareto export.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bank::{train_bank, CalibrationMethod, FeaturizerConfig, PredictorBank};
use crate::boosted_trees::TrainConfig;
use crate::calibration::brier;
use crate::corpus::{assign_folds, Dataset, FoldAssignment};
use crate::cost_model::{CostProfile, NORMALIZATION_TARGET};
use crate::error::{Error, Result};
use crate::features::Vocabulary;
use crate::policy::{self, PolicyConfig, Step};

/// Candidate settings for the per-fold grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lambda_values: Vec<f64>,
    pub tau_values: Vec<f64>,
    #[serde(default = "default_gbr_configs")]
    pub gbr_configs: Vec<TrainConfig>,
    /// Weight of normalized cost in the validation objective
    /// `accuracy - objective_lambda * avg_cost / 120`.
    #[serde(default = "default_objective_lambda")]
    pub objective_lambda: f64,
}

fn default_gbr_configs() -> Vec<TrainConfig> {
    let base = TrainConfig::default();
    vec![
        base,
        TrainConfig {
            n_estimators: 50,
            max_depth: 2,
            ..base
        },
        TrainConfig {
            n_estimators: 30,
            max_depth: 1,
            ..base
        },
    ]
}

fn default_objective_lambda() -> f64 {
    0.5
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            lambda_values: vec![0.0005, 0.001, 0.002, 0.004, 0.008],
            tau_values: vec![0.0, 0.01, 0.02, 0.05],
            gbr_configs: default_gbr_configs(),
            objective_lambda: default_objective_lambda(),
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_values.is_empty() || self.tau_values.is_empty() || self.gbr_configs.is_empty() {
            return Err(Error::InvalidConfig("grid has an empty axis".into()));
        }
        for &l in &self.lambda_values {
            for &t in &self.tau_values {
                PolicyConfig::new(l, t)?;
            }
        }
        for c in &self.gbr_configs {
            c.validate()?;
        }
        Ok(())
    }

    pub fn singleton(gbr: TrainConfig, policy: PolicyConfig) -> Self {
        Self {
            lambda_values: vec![policy.lambda],
            tau_values: vec![policy.tau],
            gbr_configs: vec![gbr],
            objective_lambda: default_objective_lambda(),
        }
    }
}

/// A selection rule evaluated by the harness.
#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    /// Greedy escalation with the grid-selected `(lambda, tau)`.
    Voi,
    /// Single-step utility argmax with the grid-selected `lambda`.
    ArgmaxUtility,
    AccuracyOnly,
    FixedThreshold {
        base: String,
        target: String,
        cutoff: f64,
    },
    Fixed(String),
    /// Argmax of true utility; needs known success probabilities.
    Oracle,
}

impl Policy {
    pub fn name(&self) -> String {
        match self {
            Policy::Voi => "voi".into(),
            Policy::ArgmaxUtility => "argmax".into(),
            Policy::AccuracyOnly => "accuracy-only".into(),
            Policy::FixedThreshold { .. } => "fixed-threshold".into(),
            Policy::Fixed(id) => format!("{id}-only"),
            Policy::Oracle => "oracle".into(),
        }
    }

    /// Parses a policy name against a profile. `fixed-threshold` escalates
    /// from the cheapest level to `jpeg_q10` (or the last level when the
    /// profile has no such level) below a 0.30 cutoff.
    pub fn parse(name: &str, profile: &CostProfile) -> Result<Self> {
        let ids = profile.ids();
        match name {
            "voi" => Ok(Policy::Voi),
            "argmax" => Ok(Policy::ArgmaxUtility),
            "accuracy-only" => Ok(Policy::AccuracyOnly),
            "oracle" => Ok(Policy::Oracle),
            "fixed-threshold" => Ok(Policy::FixedThreshold {
                base: ids[0].clone(),
                target: if ids.iter().any(|i| i == "jpeg_q10") {
                    "jpeg_q10".into()
                } else {
                    ids[ids.len() - 1].clone()
                },
                cutoff: policy::DEFAULT_CUTOFF,
            }),
            other => match other.strip_suffix("-only") {
                Some(id) if ids.iter().any(|i| i == id) => Ok(Policy::Fixed(id.to_owned())),
                _ => Err(Error::InvalidConfig(format!(
                    "unknown policy {other:?}; valid: {}",
                    Self::valid_names(profile).join(", ")
                ))),
            },
        }
    }

    pub fn valid_names(profile: &CostProfile) -> Vec<String> {
        let mut names: Vec<String> = ["voi", "argmax", "accuracy-only", "fixed-threshold", "oracle"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        names.extend(profile.ids().iter().map(|id| format!("{id}-only")));
        names
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// True success probabilities per question, aligned with the profile levels.
pub type TruthFn<'a> = &'a (dyn Fn(&str) -> Result<Vec<f64>> + Sync);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub n_queries: usize,
    pub accuracy: f64,
    pub avg_cost: f64,
    /// Pooled over every record of the fold, each scored by its own level's predictor.
    pub brier: f64,
    /// Scored only at the selected level.
    pub brier_selected: f64,
    pub fidelity_distribution: IndexMap<String, f64>,
    pub lambda: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy: String,
    pub accuracy: f64,
    pub avg_cost: f64,
    pub brier: f64,
    pub brier_selected: f64,
    pub fidelity_distribution: IndexMap<String, f64>,
    pub per_fold: Vec<FoldMetrics>,
}

impl EvalReport {
    fn aggregate(policy: String, per_fold: Vec<FoldMetrics>) -> Self {
        let n = per_fold.len() as f64;
        let mean = |f: &dyn Fn(&FoldMetrics) -> f64| per_fold.iter().map(f).sum::<f64>() / n;
        let mut dist: IndexMap<String, f64> = IndexMap::new();
        for m in &per_fold {
            for (k, v) in &m.fidelity_distribution {
                *dist.entry(k.clone()).or_default() += v / n;
            }
        }
        Self {
            policy,
            accuracy: mean(&|m| m.accuracy),
            avg_cost: mean(&|m| m.avg_cost),
            brier: mean(&|m| m.brier),
            brier_selected: mean(&|m| m.brier_selected),
            fidelity_distribution: dist,
            per_fold,
        }
    }

    /// Mean over folds of `accuracy - lambda * avg_cost`, using each fold's
    /// grid-selected `lambda`.
    pub fn utility(&self) -> f64 {
        self.per_fold
            .iter()
            .map(|m| m.accuracy - m.lambda * m.avg_cost)
            .sum::<f64>()
            / self.per_fold.len() as f64
    }
}

/// One routed test question.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub qid: String,
    pub selected: usize,
    pub probs: Vec<f64>,
    /// Escalation steps (greedy policy only).
    pub steps: Vec<Step>,
    pub correct: bool,
}

#[derive(Debug)]
pub struct PolicyEvaluation {
    pub metrics: FoldMetrics,
    pub outcomes: Vec<QueryOutcome>,
}

struct ScoredQuestion<'a> {
    qid: &'a str,
    probs: Vec<f64>,
}

fn score_questions<'a>(bank: &PredictorBank, test: &'a Dataset) -> Vec<ScoredQuestion<'a>> {
    test.qids()
        .map(|qid| ScoredQuestion {
            qid,
            probs: bank.predict_success(test.question_text(qid).expect("indexed qid")),
        })
        .collect()
}

fn pooled_brier(bank: &PredictorBank, test: &Dataset, scored: &[ScoredQuestion]) -> Result<f64> {
    let mut probs = Vec::with_capacity(test.len());
    let mut labels = Vec::with_capacity(test.len());
    for s in scored {
        for r in test.records_for(s.qid) {
            let i = bank
                .levels()
                .iter()
                .position(|l| *l == r.fidelity_id)
                .ok_or_else(|| Error::UnknownFidelity(r.fidelity_id.clone()))?;
            probs.push(s.probs[i]);
            labels.push(r.correct);
        }
    }
    brier(&probs, &labels)
}

#[allow(clippy::too_many_arguments)]
fn evaluate_scored(
    bank: &PredictorBank,
    policy: &Policy,
    cfg: &PolicyConfig,
    test: &Dataset,
    scored: &[ScoredQuestion],
    profile: &CostProfile,
    truth: Option<TruthFn>,
    pooled: f64,
    fold: usize,
) -> Result<PolicyEvaluation> {
    let ids = bank.levels();
    let costs = profile.normalized_costs();
    let index_of = |id: &str| {
        profile
            .position(id)
            .ok_or_else(|| Error::UnknownFidelity(id.to_owned()))
    };
    let mut outcomes = Vec::with_capacity(scored.len());
    for s in scored {
        let mut steps = Vec::new();
        let selected = match policy {
            Policy::Voi => {
                let (sel, st) = policy::greedy_select(&s.probs, &costs, cfg);
                steps = st;
                sel
            }
            Policy::ArgmaxUtility => policy::argmax_utility(&s.probs, &costs, cfg.lambda),
            Policy::AccuracyOnly => policy::accuracy_only(&s.probs),
            Policy::FixedThreshold { base, target, cutoff } => {
                policy::fixed_threshold(&s.probs, index_of(base)?, index_of(target)?, *cutoff)
            }
            Policy::Fixed(id) => index_of(id)?,
            Policy::Oracle => {
                let truth = truth.ok_or_else(|| {
                    Error::InvalidConfig("oracle policy needs known success probabilities".into())
                })?;
                policy::oracle_select(&truth(s.qid)?, &costs, cfg.lambda)
            }
        };
        let correct = test
            .label(s.qid, &ids[selected])
            .ok_or_else(|| Error::MissingLabel {
                qid: s.qid.to_owned(),
                fidelity: ids[selected].clone(),
            })?;
        outcomes.push(QueryOutcome {
            qid: s.qid.to_owned(),
            selected,
            probs: s.probs.clone(),
            steps,
            correct,
        });
    }
    let n = outcomes.len();
    if n == 0 {
        return Err(Error::EmptyInput("no test questions"));
    }
    let mut counts = vec![0usize; ids.len()];
    for o in &outcomes {
        counts[o.selected] += 1;
    }
    let sel_probs: Vec<f64> = outcomes.iter().map(|o| o.probs[o.selected]).collect();
    let sel_labels: Vec<bool> = outcomes.iter().map(|o| o.correct).collect();
    let metrics = FoldMetrics {
        fold,
        n_queries: n,
        accuracy: sel_labels.iter().filter(|&&c| c).count() as f64 / n as f64,
        avg_cost: outcomes.iter().map(|o| costs[o.selected]).sum::<f64>() / n as f64,
        brier: pooled,
        brier_selected: brier(&sel_probs, &sel_labels)?,
        fidelity_distribution: ids
            .iter()
            .cloned()
            .zip(counts.iter().map(|&c| c as f64 / n as f64))
            .collect(),
        lambda: cfg.lambda,
        tau: cfg.tau,
    };
    Ok(PolicyEvaluation { metrics, outcomes })
}

/// Routes every test question with `policy` and scores the logged label at
/// the selected level. A missing label is an error.
pub fn evaluate_policy(
    bank: &PredictorBank,
    policy: &Policy,
    cfg: &PolicyConfig,
    test: &Dataset,
    profile: &CostProfile,
    truth: Option<TruthFn>,
) -> Result<PolicyEvaluation> {
    check_levels(bank, profile)?;
    let scored = score_questions(bank, test);
    let pooled = pooled_brier(bank, test, &scored)?;
    evaluate_scored(bank, policy, cfg, test, &scored, profile, truth, pooled, 0)
}

fn check_levels(bank: &PredictorBank, profile: &CostProfile) -> Result<()> {
    let ids = profile.ids();
    if bank.levels() != ids.as_slice() {
        return Err(Error::LevelMismatch {
            bank: bank.levels().to_vec(),
            profile: ids,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridChoice {
    pub train_config: TrainConfig,
    pub policy: PolicyConfig,
    pub score: f64,
    pub val_accuracy: f64,
    pub val_cost: f64,
}

/// Settings shared by grid search and cross-validation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub featurizer: FeaturizerConfig,
    pub calibration: CalibrationMethod,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            featurizer: FeaturizerConfig::default(),
            calibration: CalibrationMethod::Isotonic,
        }
    }
}

pub struct GridOutcome {
    pub choice: GridChoice,
    pub vocabularies: Vec<Vocabulary>,
}

fn better(a: &GridChoice, b: &GridChoice) -> bool {
    if a.score != b.score {
        return a.score > b.score;
    }
    if a.val_cost != b.val_cost {
        return a.val_cost < b.val_cost;
    }
    if a.policy.lambda != b.policy.lambda {
        return a.policy.lambda < b.policy.lambda;
    }
    a.policy.tau < b.policy.tau
}

/// Grid search on the training folds: the last of `train_folds` is held out
/// for validation and the rest train the bank. Each grid point is scored by
/// `accuracy - objective_lambda * avg_cost / 120` of the greedy policy.
pub fn grid_search(
    dataset: &Dataset,
    folds: &FoldAssignment,
    train_folds: &[usize],
    grid: &GridSpec,
    profile: &CostProfile,
    settings: &TrainSettings,
) -> Result<GridOutcome> {
    grid.validate()?;
    let (&val_fold, inner) = train_folds
        .split_last()
        .ok_or(Error::EmptyInput("grid search needs training folds"))?;
    if inner.is_empty() {
        return Err(Error::InvalidConfig(
            "grid search needs at least two training folds".into(),
        ));
    }
    let inner_qids: Vec<&str> = inner.iter().flat_map(|&f| folds.fold(f)).collect();
    let train = dataset.subset(inner_qids);
    let val = dataset.subset(folds.fold(val_fold));
    let levels = profile.ids();
    let costs = profile.normalized_costs();

    let mut best: Option<GridChoice> = None;
    let mut vocabularies = Vec::new();
    for gbr in &grid.gbr_configs {
        let bank = train_bank(&train, &levels, &settings.featurizer, gbr, settings.calibration)?;
        let scored = score_questions(&bank, &val);
        let n = scored.len() as f64;
        for &lambda in &grid.lambda_values {
            for &tau in &grid.tau_values {
                let cfg = PolicyConfig::new(lambda, tau)?;
                let (mut hits, mut cost) = (0usize, 0.0);
                for s in &scored {
                    let (sel, _) = policy::greedy_select(&s.probs, &costs, &cfg);
                    let ok = val
                        .label(s.qid, &levels[sel])
                        .ok_or_else(|| Error::MissingLabel {
                            qid: s.qid.to_owned(),
                            fidelity: levels[sel].clone(),
                        })?;
                    hits += usize::from(ok);
                    cost += costs[sel];
                }
                let acc = hits as f64 / n;
                let avg_cost = cost / n;
                let cand = GridChoice {
                    train_config: *gbr,
                    policy: cfg,
                    score: acc - grid.objective_lambda * avg_cost / NORMALIZATION_TARGET,
                    val_accuracy: acc,
                    val_cost: avg_cost,
                };
                if best.as_ref().is_none_or(|b| better(&cand, b)) {
                    best = Some(cand);
                }
            }
        }
        vocabularies.push(bank.vocabulary().clone());
    }
    Ok(GridOutcome {
        choice: best.expect("validated grid is non-empty"),
        vocabularies,
    })
}

#[derive(Debug, Clone)]
pub struct CvOptions {
    pub k: usize,
    pub seed: u64,
    pub grid: GridSpec,
    pub settings: TrainSettings,
    pub policies: Vec<Policy>,
    /// Keep per-question routing outcomes in the result.
    pub keep_outcomes: bool,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            k: 5,
            seed: 0,
            grid: GridSpec::default(),
            settings: TrainSettings::default(),
            policies: vec![Policy::Voi],
            keep_outcomes: false,
        }
    }
}

pub struct FoldSummary {
    pub fold: usize,
    pub test_qids: Vec<String>,
    pub choice: GridChoice,
    /// Every vocabulary fitted while handling this fold (grid search and
    /// final bank).
    pub vocabularies: Vec<Vocabulary>,
    /// Outcomes per policy, in `CvOptions::policies` order.
    pub outcomes: Vec<Vec<QueryOutcome>>,
}

pub struct CvResult {
    pub reports: IndexMap<String, EvalReport>,
    pub folds: Vec<FoldSummary>,
}

fn validate_dataset(dataset: &Dataset, profile: &CostProfile) -> Result<()> {
    for r in dataset.records() {
        if profile.position(&r.fidelity_id).is_none() {
            return Err(Error::UnknownFidelity(r.fidelity_id.clone()));
        }
    }
    Ok(())
}

/// k-fold cross-validation over questions. For each held-out fold the grid
/// search, vocabulary, models and calibrators see only the other folds.
pub fn run_cv(
    dataset: &Dataset,
    profile: &CostProfile,
    opts: &CvOptions,
    truth: Option<TruthFn>,
) -> Result<CvResult> {
    if opts.policies.is_empty() {
        return Err(Error::InvalidConfig("no policies to evaluate".into()));
    }
    validate_dataset(dataset, profile)?;
    let folds = assign_folds(dataset, opts.k, opts.seed)?;
    let levels = profile.ids();

    let per_fold: Vec<(FoldSummary, Vec<FoldMetrics>)> = (0..opts.k)
        .into_par_iter()
        .map(|test_fold| {
            let train_folds: Vec<usize> = (0..opts.k).filter(|&f| f != test_fold).collect();
            let grid = grid_search(dataset, &folds, &train_folds, &opts.grid, profile, &opts.settings)?;
            let train = dataset.subset(folds.complement(test_fold));
            let test = dataset.subset(folds.fold(test_fold));
            let bank = train_bank(
                &train,
                &levels,
                &opts.settings.featurizer,
                &grid.choice.train_config,
                opts.settings.calibration,
            )?;
            let scored = score_questions(&bank, &test);
            let pooled = pooled_brier(&bank, &test, &scored)?;
            let mut metrics = Vec::with_capacity(opts.policies.len());
            let mut outcomes = Vec::new();
            for p in &opts.policies {
                let ev = evaluate_scored(
                    &bank,
                    p,
                    &grid.choice.policy,
                    &test,
                    &scored,
                    profile,
                    truth,
                    pooled,
                    test_fold,
                )?;
                metrics.push(ev.metrics);
                outcomes.push(if opts.keep_outcomes {
                    ev.outcomes
                } else {
                    Vec::new()
                });
            }
            let mut vocabularies = grid.vocabularies;
            vocabularies.push(bank.vocabulary().clone());
            Ok((
                FoldSummary {
                    fold: test_fold,
                    test_qids: test.qids().map(str::to_owned).collect(),
                    choice: grid.choice,
                    vocabularies,
                    outcomes,
                },
                metrics,
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut reports = IndexMap::new();
    for (i, p) in opts.policies.iter().enumerate() {
        let fold_metrics: Vec<FoldMetrics> = per_fold.iter().map(|(_, m)| m[i].clone()).collect();
        reports.insert(p.name(), EvalReport::aggregate(p.name(), fold_metrics));
    }
    Ok(CvResult {
        reports,
        folds: per_fold.into_iter().map(|(s, _)| s).collect(),
    })
}

/// Indices of the non-dominated `(accuracy, cost)` points, sorted by cost
/// (then accuracy, then index). A point dominates another when it is at
/// least as accurate and at most as costly, and strictly better in one.
pub fn pareto_frontier(points: &[(f64, f64)]) -> Vec<usize> {
    let dominates = |a: (f64, f64), b: (f64, f64)| a.0 >= b.0 && a.1 <= b.1 && (a.0 > b.0 || a.1 < b.1);
    let mut keep: Vec<usize> = (0..points.len())
        .filter(|&i| !points.iter().any(|&p| dominates(p, points[i])))
        .collect();
    keep.sort_by(|&a, &b| {
        points[a]
            .1
            .total_cmp(&points[b].1)
            .then(points[a].0.total_cmp(&points[b].0))
            .then(a.cmp(&b))
    });
    keep
}

/// Writes `policy,accuracy,avg_cost,on_frontier` rows in report order.
pub fn write_pareto_csv<W: Write>(mut w: W, reports: &IndexMap<String, EvalReport>) -> std::io::Result<()> {
    let points: Vec<(f64, f64)> = reports.values().map(|r| (r.accuracy, r.avg_cost)).collect();
    let front = pareto_frontier(&points);
    writeln!(w, "policy,accuracy,avg_cost,on_frontier")?;
    for (i, r) in reports.values().enumerate() {
        writeln!(
            w,
            "{},{},{},{}",
            r.policy,
            r.accuracy,
            r.avg_cost,
            front.contains(&i)
        )?;
    }
    Ok(())
}

impl FromStr for GridSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let g: GridSpec = serde_json::from_str(s)?;
        g.validate()?;
        Ok(g)
    }
}
