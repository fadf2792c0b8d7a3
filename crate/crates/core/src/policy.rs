//! Fidelity selection rules.
//!
//! All rules work on probability and cost slices aligned with the ascending
//! level order of a [`CostProfile`]. Every argmax breaks ties toward the
//! cheaper level.
//!
//! The greedy rule walks levels in cost order and escalates while
//!
//! ```text
//! VOI(f -> f') = p(f') - p(f) - lambda * c(f') > tau
//! ```
//!
//! stopping at the first rejected step. It can stop earlier than the
//! single-step argmax of `p(f) - lambda * c(f)` when a cheap intermediate
//! level offers little gain but a later one offers a lot.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::bank::PredictorBank;
use crate::cost_model::CostProfile;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub lambda: f64,
    pub tau: f64,
    /// Charge `lambda * (c(f') - c(f))` instead of `lambda * c(f')`.
    #[serde(default)]
    pub marginal_cost: bool,
}

impl PolicyConfig {
    pub fn new(lambda: f64, tau: f64) -> Result<Self> {
        let cfg = Self {
            lambda,
            tau,
            marginal_cost: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "tau must be >= 0, got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// Value of escalating from a level with success probability `p_cur` to one
/// with `p_next` and cost `cost_next`.
pub fn voi(p_next: f64, p_cur: f64, cost_next: f64, lambda: f64) -> f64 {
    (p_next - p_cur) - lambda * cost_next
}

pub fn utility(p: f64, cost: f64, lambda: f64) -> f64 {
    p - lambda * cost
}

/// One considered escalation, by level index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub from: usize,
    pub to: usize,
    pub voi: f64,
    pub accepted: bool,
}

/// Greedy escalation from the cheapest level. Returns the selected index and
/// the steps considered (accepted steps first, then at most one rejection).
pub fn greedy_select(probs: &[f64], costs: &[f64], cfg: &PolicyConfig) -> (usize, Vec<Step>) {
    debug_assert_eq!(probs.len(), costs.len());
    let mut cur = 0;
    let mut trace = Vec::new();
    for next in 1..probs.len() {
        let charged = if cfg.marginal_cost {
            costs[next] - costs[cur]
        } else {
            costs[next]
        };
        let v = voi(probs[next], probs[cur], charged, cfg.lambda);
        let accepted = v > cfg.tau;
        trace.push(Step {
            from: cur,
            to: next,
            voi: v,
            accepted,
        });
        if !accepted {
            break;
        }
        cur = next;
    }
    (cur, trace)
}

fn argmax_by(n: usize, score: impl Fn(usize) -> f64) -> usize {
    let mut best = 0;
    let mut best_score = score(0);
    for i in 1..n {
        let s = score(i);
        if s > best_score {
            best = i;
            best_score = s;
        }
    }
    best
}

/// Single-step selector: argmax of `p(f) - lambda * c(f)`.
pub fn argmax_utility(probs: &[f64], costs: &[f64], lambda: f64) -> usize {
    argmax_by(probs.len(), |i| utility(probs[i], costs[i], lambda))
}

/// Bayes-optimal choice given the true success probabilities.
pub fn oracle_select(true_probs: &[f64], costs: &[f64], lambda: f64) -> usize {
    argmax_utility(true_probs, costs, lambda)
}

/// Highest predicted success probability, ignoring cost.
pub fn accuracy_only(probs: &[f64]) -> usize {
    argmax_by(probs.len(), |i| probs[i])
}

pub const DEFAULT_CUTOFF: f64 = 0.30;

/// Escalate from `base` to `target` when `p(base) < cutoff`.
pub fn fixed_threshold(probs: &[f64], base: usize, target: usize, cutoff: f64) -> usize {
    if probs[base] < cutoff {
        target
    } else {
        base
    }
}

/// `U* - U(decision)` under the true probabilities; never negative.
pub fn regret(true_probs: &[f64], decision: usize, costs: &[f64], lambda: f64) -> f64 {
    let best = oracle_select(true_probs, costs, lambda);
    let gap = utility(true_probs[best], costs[best], lambda)
        - utility(true_probs[decision], costs[decision], lambda);
    gap.max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoiStep {
    pub from: String,
    pub to: String,
    pub voi: f64,
    pub accepted: bool,
}

/// Selected fidelity with the probabilities and escalation steps behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub selected: String,
    pub probs: IndexMap<String, f64>,
    pub voi_trace: Vec<VoiStep>,
    pub cost: f64,
}

impl RoutingDecision {
    fn build(ids: &[String], probs: &[f64], costs: &[f64], selected: usize, steps: &[Step]) -> Self {
        Self {
            selected: ids[selected].clone(),
            probs: ids.iter().cloned().zip(probs.iter().copied()).collect(),
            voi_trace: steps
                .iter()
                .map(|s| VoiStep {
                    from: ids[s.from].clone(),
                    to: ids[s.to].clone(),
                    voi: s.voi,
                    accepted: s.accepted,
                })
                .collect(),
            cost: costs[selected],
        }
    }
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

/// Predicts every level's success probability for `question` and runs the
/// greedy escalation.
pub fn route_greedy(
    bank: &PredictorBank,
    question: &str,
    cfg: &PolicyConfig,
    profile: &CostProfile,
) -> Result<RoutingDecision> {
    check_levels(bank, profile)?;
    let probs = bank.predict_success(question);
    let costs = profile.normalized_costs();
    let (selected, steps) = greedy_select(&probs, &costs, cfg);
    Ok(RoutingDecision::build(
        bank.levels(),
        &probs,
        &costs,
        selected,
        &steps,
    ))
}

/// Routes with precomputed probabilities and costs (aligned with `ids`).
pub fn route_greedy_probs(
    ids: &[String],
    probs: &[f64],
    costs: &[f64],
    cfg: &PolicyConfig,
) -> RoutingDecision {
    let (selected, steps) = greedy_select(probs, costs, cfg);
    RoutingDecision::build(ids, probs, costs, selected, &steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(lambda: f64, tau: f64) -> PolicyConfig {
        PolicyConfig::new(lambda, tau).unwrap()
    }

    #[test]
    fn voi_examples() {
        assert_eq!(voi(0.4, 0.4, 50.0, 0.01), -0.5);
        assert!((voi(0.8, 0.3, 63.9, 0.004) - 0.2444).abs() < 1e-12);
        assert_eq!(voi(0.8, 0.3, 63.9, 0.0), 0.5);
    }

    #[test]
    fn equal_probs_stay_cheapest() {
        let (sel, trace) = greedy_select(&[0.6; 5], &[9.1, 18.1, 45.4, 63.9, 120.0], &cfg(0.001, 0.0));
        assert_eq!(sel, 0);
        assert_eq!(trace.len(), 1);
        assert!(!trace[0].accepted);
    }

    #[test]
    fn two_level_escalation() {
        let (sel, trace) = greedy_select(&[0.3, 0.8], &[9.1, 63.9], &cfg(0.004, 0.0));
        assert_eq!(sel, 1);
        assert!(trace[0].accepted);
        assert!((trace[0].voi - 0.2444).abs() < 1e-12);
    }

    #[test]
    fn greedy_and_argmax_can_diverge() {
        let probs = [0.5, 0.52, 0.9];
        let costs = [9.1, 45.4, 63.9];
        let (sel, trace) = greedy_select(&probs, &costs, &cfg(0.004, 0.0));
        // 0.52 - 0.5 - 0.004 * 45.4 = 0.02 - 0.1816 < 0
        assert_eq!(sel, 0);
        assert!((trace[0].voi - (0.02 - 0.1816)).abs() < 1e-12);
        let u: Vec<f64> = (0..3).map(|i| utility(probs[i], costs[i], 0.004)).collect();
        for (a, b) in u.iter().zip([0.4636, 0.3384, 0.6444]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(argmax_utility(&probs, &costs, 0.004), 2);
    }

    #[test]
    fn argmax_examples() {
        assert_eq!(argmax_utility(&[0.5, 0.9], &[9.1, 120.0], 0.004), 0);
        assert_eq!(argmax_utility(&[0.2, 0.7, 0.5], &[1.0, 2.0, 3.0], 0.0), 1);
        // 0.5 - 0.01*10 = 0.4 = 0.6 - 0.01*20
        assert_eq!(argmax_utility(&[0.5, 0.6], &[10.0, 20.0], 0.01), 0);
    }

    #[test]
    fn accuracy_only_examples() {
        assert_eq!(accuracy_only(&[0.1, 0.2, 0.9]), 2);
        assert_eq!(accuracy_only(&[0.4; 4]), 0);
        let p = [0.3, 0.8, 0.5];
        assert_eq!(accuracy_only(&p), argmax_utility(&p, &[1.0, 2.0, 3.0], 0.0));
    }

    #[test]
    fn fixed_threshold_examples() {
        assert_eq!(fixed_threshold(&[0.29, 0.5], 0, 1, DEFAULT_CUTOFF), 1);
        assert_eq!(fixed_threshold(&[0.30, 0.5], 0, 1, DEFAULT_CUTOFF), 0);
        assert_eq!(fixed_threshold(&[0.99, 0.5], 0, 1, 1.0), 1);
        assert_eq!(fixed_threshold(&[1.0, 0.5], 0, 1, 1.0), 0);
    }

    #[test]
    fn oracle_examples() {
        assert_eq!(oracle_select(&[0.5, 0.9], &[9.1, 120.0], 0.004), 0);
        let costs = [9.1, 18.1, 45.4];
        assert_eq!(oracle_select(&[0.0, 0.5, 1.0], &costs, 1.0 / 9.1 + 1e-9), 0);
    }

    #[test]
    fn regret_examples() {
        let p = [0.5, 0.9];
        let c = [10.0, 120.0];
        assert_eq!(regret(&p, oracle_select(&p, &c, 0.001), &c, 0.001), 0.0);
        assert!((regret(&p, 0, &c, 0.001) - 0.29).abs() < 1e-12);
    }

    #[test]
    fn marginal_variant_charges_difference() {
        let mut c = cfg(0.004, 0.0);
        c.marginal_cost = true;
        let (_, trace) = greedy_select(&[0.5, 0.52, 0.9], &[9.1, 45.4, 63.9], &c);
        assert!((trace[0].voi - (0.02 - 0.004 * (45.4 - 9.1))).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(PolicyConfig::new(-0.1, 0.0).is_err());
        assert!(PolicyConfig::new(0.1, -0.5).is_err());
        assert!(PolicyConfig::new(f64::NAN, 0.0).is_err());
    }

    fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
        let k = rng.gen_range(2..=6);
        let p: Vec<f64> = (0..k).map(|_| rng.gen()).collect();
        let mut c = Vec::with_capacity(k);
        let mut acc = 0.0;
        for _ in 0..k {
            acc += rng.gen_range(0.5..40.0);
            c.push(acc);
        }
        (p, c)
    }

    #[test]
    fn greedy_chain_utility_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20_000 {
            let (p, c) = random_instance(&mut rng);
            let cfg = cfg(rng.gen_range(0.0..0.02), rng.gen_range(0.0..0.05));
            let (sel, trace) = greedy_select(&p, &c, &cfg);
            let accepted: Vec<&Step> = trace.iter().take_while(|s| s.accepted).collect();
            assert!(trace.iter().skip(accepted.len()).all(|s| !s.accepted));
            for s in &accepted {
                assert!(utility(p[s.to], c[s.to], cfg.lambda) > utility(p[s.from], c[s.from], cfg.lambda));
            }
            assert!(utility(p[sel], c[sel], cfg.lambda) >= utility(p[0], c[0], cfg.lambda));
        }
    }

    #[test]
    fn cost_scaling_leaves_decisions() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20_000 {
            let (p, c) = random_instance(&mut rng);
            let lambda = rng.gen_range(0.0..0.02);
            // powers of two keep lambda * cost bit-identical
            let s = [0.25, 2.0, 8.0][rng.gen_range(0..3)];
            let cs: Vec<f64> = c.iter().map(|x| x * s).collect();
            let ls = lambda / s;
            assert_eq!(argmax_utility(&p, &c, lambda), argmax_utility(&p, &cs, ls));
            assert_eq!(oracle_select(&p, &c, lambda), oracle_select(&p, &cs, ls));
            let a = greedy_select(&p, &c, &cfg(lambda, 0.0)).0;
            let b = greedy_select(&p, &cs, &cfg(ls, 0.0)).0;
            assert_eq!(a, b);
        }
    }

    #[test]
    fn lambda_domination_never_escalates() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..5_000 {
            let (p, c) = random_instance(&mut rng);
            let lambda = 1.0 / c[1] + rng.gen_range(0.0..0.1);
            assert_eq!(greedy_select(&p, &c, &cfg(lambda, 0.0)).0, 0);
        }
    }

    #[test]
    fn accuracy_only_is_zero_lambda_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10_000 {
            let (mut p, c) = random_instance(&mut rng);
            if rng.gen_bool(0.2) {
                p[1] = p[0];
            }
            assert_eq!(accuracy_only(&p), argmax_utility(&p, &c, 0.0));
        }
    }
}
