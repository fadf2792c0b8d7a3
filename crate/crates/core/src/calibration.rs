//! Score-to-probability calibration and calibration metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weighted least-squares projection onto non-decreasing sequences
/// (pool adjacent violators).
pub fn pava(values: &[f64], weights: &[f64]) -> Result<Vec<f64>> {
    if values.len() != weights.len() {
        return Err(Error::LengthMismatch {
            left: values.len(),
            right: weights.len(),
        });
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
        return Err(Error::InvalidConfig(format!("weights must be positive, got {w}")));
    }
    // blocks of (weighted mean, total weight, length)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        let mut cur = (v, w, 1usize);
        while let Some(&(pv, pw, pn)) = blocks.last() {
            if pv <= cur.0 {
                break;
            }
            blocks.pop();
            let tw = pw + cur.1;
            cur = ((pv * pw + cur.0 * cur.1) / tw, tw, pn + cur.2);
        }
        blocks.push(cur);
    }
    Ok(blocks
        .into_iter()
        .flat_map(|(v, _, n)| std::iter::repeat_n(v, n))
        .collect())
}

/// Monotone piecewise-linear map from raw scores to probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KnotsDoc")]
pub struct IsotonicCalibrator {
    knot_x: Vec<f64>,
    knot_y: Vec<f64>,
}

impl IsotonicCalibrator {
    pub fn new(knot_x: Vec<f64>, knot_y: Vec<f64>) -> Result<Self> {
        if knot_x.is_empty() {
            return Err(Error::EmptyInput("isotonic calibrator needs at least one knot"));
        }
        if knot_x.len() != knot_y.len() {
            return Err(Error::LengthMismatch {
                left: knot_x.len(),
                right: knot_y.len(),
            });
        }
        if !knot_x.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidConfig("knot_x must be strictly increasing".into()));
        }
        if !knot_y.windows(2).all(|w| w[0] <= w[1]) || knot_y.iter().any(|y| !(0.0..=1.0).contains(y)) {
            return Err(Error::InvalidConfig(
                "knot_y must be non-decreasing within [0, 1]".into(),
            ));
        }
        Ok(Self { knot_x, knot_y })
    }

    /// Constant calibrator mapping every score to `p`.
    pub fn constant(p: f64) -> Result<Self> {
        Self::new(vec![0.0], vec![p])
    }

    pub fn knots(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.knot_x.iter().copied().zip(self.knot_y.iter().copied())
    }

    /// Linear interpolation between bracketing knots, clipped outside the
    /// knot range.
    pub fn apply(&self, score: f64) -> f64 {
        let xs = &self.knot_x;
        let ys = &self.knot_y;
        let last = xs.len() - 1;
        if score.is_nan() || score <= xs[0] {
            return ys[0];
        }
        if score >= xs[last] {
            return ys[last];
        }
        let hi = xs.partition_point(|&x| x <= score);
        let lo = hi - 1;
        if xs[lo] == score {
            return ys[lo];
        }
        let t = (score - xs[lo]) / (xs[hi] - xs[lo]);
        ys[lo] + t * (ys[hi] - ys[lo])
    }
}

#[derive(Deserialize)]
struct KnotsDoc {
    knot_x: Vec<f64>,
    knot_y: Vec<f64>,
}

impl TryFrom<KnotsDoc> for IsotonicCalibrator {
    type Error = Error;

    fn try_from(doc: KnotsDoc) -> Result<Self> {
        IsotonicCalibrator::new(doc.knot_x, doc.knot_y)
    }
}

/// Sorts by score, merges tied scores into one weighted point, runs PAVA and
/// keeps only the endpoints of each constant segment as knots.
pub fn fit_isotonic(scores: &[f64], labels: &[bool]) -> Result<IsotonicCalibrator> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(Error::EmptyInput("isotonic fit needs at least one sample"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidConfig("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut xs: Vec<f64> = Vec::new();
    let mut ws: Vec<f64> = Vec::new();
    let mut sums: Vec<f64> = Vec::new();
    for i in order {
        let y = if labels[i] { 1.0 } else { 0.0 };
        match xs.last() {
            Some(&x) if x == scores[i] => {
                *ws.last_mut().unwrap() += 1.0;
                *sums.last_mut().unwrap() += y;
            }
            _ => {
                xs.push(scores[i]);
                ws.push(1.0);
                sums.push(y);
            }
        }
    }
    let means: Vec<f64> = sums.iter().zip(&ws).map(|(s, w)| s / w).collect();
    let fitted = pava(&means, &ws)?;

    let mut knot_x = Vec::new();
    let mut knot_y = Vec::new();
    let mut i = 0;
    while i < xs.len() {
        let mut j = i;
        while j + 1 < xs.len() && fitted[j + 1] == fitted[i] {
            j += 1;
        }
        let y = fitted[i].clamp(0.0, 1.0);
        knot_x.push(xs[i]);
        knot_y.push(y);
        if j > i {
            knot_x.push(xs[j]);
            knot_y.push(y);
        }
        i = j + 1;
    }
    IsotonicCalibrator::new(knot_x, knot_y)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `p = sigmoid(score / T)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureCalibrator {
    temperature: f64,
}

impl TemperatureCalibrator {
    pub fn new(temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        Ok(Self { temperature })
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn apply(&self, score: f64) -> f64 {
        sigmoid(score / self.temperature)
    }
}

const LN_T_RANGE: (f64, f64) = (-5.0, 5.0);
const LN_T_TOL: f64 = 1e-6;

fn nll(scores: &[f64], labels: &[bool], temperature: f64) -> f64 {
    let eps = 1e-15;
    scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            let p = sigmoid(s / temperature).clamp(eps, 1.0 - eps);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum::<f64>()
        / scores.len() as f64
}

/// Golden-section search for the temperature minimizing mean negative
/// log-likelihood, over `ln T` in `[-5, 5]`.
pub fn fit_temperature(scores: &[f64], labels: &[bool]) -> Result<TemperatureCalibrator> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(Error::EmptyInput("temperature fit needs at least one sample"));
    }
    if labels.iter().all(|&y| y == labels[0]) {
        return Err(Error::DegenerateLabels);
    }
    let f = |ln_t: f64| nll(scores, labels, ln_t.exp());
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = LN_T_RANGE;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > LN_T_TOL {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    TemperatureCalibrator::new(((a + b) / 2.0).exp())
}

fn check_probs(probs: &[f64], labels: &[bool]) -> Result<()> {
    if probs.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: probs.len(),
            right: labels.len(),
        });
    }
    if probs.is_empty() {
        return Err(Error::EmptyInput("metric needs at least one sample"));
    }
    Ok(())
}

/// Mean squared error between probabilities and 0/1 outcomes.
pub fn brier(probs: &[f64], labels: &[bool]) -> Result<f64> {
    check_probs(probs, labels)?;
    let sum: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let d = p - if y { 1.0 } else { 0.0 };
            d * d
        })
        .sum();
    Ok(sum / probs.len() as f64)
}

pub const ECE_BINS: usize = 10;

/// Expected calibration error over ten equal-width bins on `[0, 1]`.
pub fn ece(probs: &[f64], labels: &[bool]) -> Result<f64> {
    check_probs(probs, labels)?;
    let mut count = [0usize; ECE_BINS];
    let mut p_sum = [0.0f64; ECE_BINS];
    let mut y_sum = [0.0f64; ECE_BINS];
    for (&p, &y) in probs.iter().zip(labels) {
        let bin = ((p * ECE_BINS as f64).floor().max(0.0) as usize).min(ECE_BINS - 1);
        count[bin] += 1;
        p_sum[bin] += p;
        y_sum[bin] += if y { 1.0 } else { 0.0 };
    }
    let n = probs.len() as f64;
    Ok((0..ECE_BINS)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let c = count[b] as f64;
            (c / n) * (p_sum[b] / c - y_sum[b] / c).abs()
        })
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub brier: f64,
    pub ece: f64,
    pub n: usize,
}

impl CalibrationReport {
    pub fn compute(probs: &[f64], labels: &[bool]) -> Result<Self> {
        Ok(Self {
            brier: brier(probs, labels)?,
            ece: ece(probs, labels)?,
            n: probs.len(),
        })
    }
}
