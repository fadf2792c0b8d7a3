//! Tier-aware acquisition costs.
//!
//! ```text
//! r(f) = size(f) / size(full)
//! c~(f) = b_tier(f) + w_bw * r(f)
//! c(f) = 120 * c~(f) / c~(full)
//! ```
//!
//! The last level of a profile is the reference (`full`) level.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NORMALIZATION_TARGET: f64 = 120.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityLevel {
    pub id: String,
    #[serde(rename = "size_kb")]
    pub avg_size_kb: f64,
    #[serde(rename = "tier_base")]
    pub tier_base_cost: f64,
}

impl FidelityLevel {
    pub fn new(id: impl Into<String>, avg_size_kb: f64, tier_base_cost: f64) -> Self {
        Self {
            id: id.into(),
            avg_size_kb,
            tier_base_cost,
        }
    }
}

/// Ordered fidelity levels with their cost parameters. Construction checks
/// that normalized costs strictly increase along the level order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProfileDoc")]
pub struct CostProfile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub w_bw: f64,
    pub levels: Vec<FidelityLevel>,
}

#[derive(Deserialize)]
struct ProfileDoc {
    #[serde(default)]
    name: Option<String>,
    w_bw: f64,
    levels: Vec<FidelityLevel>,
}

impl TryFrom<ProfileDoc> for CostProfile {
    type Error = Error;

    fn try_from(doc: ProfileDoc) -> Result<Self> {
        CostProfile::new(doc.name, doc.w_bw, doc.levels)
    }
}

pub const BUILTIN_PROFILES: [&str; 3] = ["edge-cloud", "agentic-memory", "cps-iot"];

/// Average payload sizes (KB) for caption, 32x32 resize, JPEG q1, JPEG q10
/// and full resolution.
const LEVEL_SIZES_KB: [(&str, f64); 5] = [
    ("caption", 0.05),
    ("resize_32", 1.0),
    ("jpeg_q1", 12.0),
    ("jpeg_q10", 45.0),
    ("full", 650.0),
];

impl CostProfile {
    pub fn new(name: Option<String>, w_bw: f64, levels: Vec<FidelityLevel>) -> Result<Self> {
        let profile = Self { name, w_bw, levels };
        profile.validate()?;
        Ok(profile)
    }

    fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::InvalidConfig("cost profile has no levels".into()));
        }
        if !(self.w_bw >= 0.0 && self.w_bw.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "w_bw must be non-negative, got {}",
                self.w_bw
            )));
        }
        for (i, l) in self.levels.iter().enumerate() {
            if l.id.is_empty() {
                return Err(Error::InvalidConfig("empty fidelity id".into()));
            }
            if !(l.avg_size_kb > 0.0 && l.avg_size_kb.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "level {:?} has non-positive size {}",
                    l.id, l.avg_size_kb
                )));
            }
            if !(l.tier_base_cost >= 0.0 && l.tier_base_cost.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "level {:?} has negative tier base cost",
                    l.id
                )));
            }
            if self.levels[..i].iter().any(|o| o.id == l.id) {
                return Err(Error::InvalidConfig(format!("duplicate fidelity id {:?}", l.id)));
            }
        }
        if self.raw_cost_of(self.full()) <= 0.0 {
            return Err(Error::InvalidConfig("reference level has zero raw cost".into()));
        }
        let costs = self.normalized_costs();
        for (w, c) in self.levels.windows(2).zip(costs.windows(2)) {
            if c[0] >= c[1] {
                return Err(Error::NonMonotoneCosts {
                    prev: w[0].id.clone(),
                    prev_cost: c[0],
                    next: w[1].id.clone(),
                    next_cost: c[1],
                });
            }
        }
        Ok(())
    }

    /// One of the shipped deployment profiles.
    pub fn builtin(name: &str) -> Result<Self> {
        let (bases, w_bw) = match name {
            "edge-cloud" => ([0.08, 0.16, 0.40, 0.56], 0.06),
            "agentic-memory" => ([0.06, 0.12, 0.36, 0.52], 0.06),
            "cps-iot" => ([0.04, 0.10, 0.30, 0.46], 0.12),
            other => return Err(Error::UnknownProfile(other.to_owned())),
        };
        let levels = LEVEL_SIZES_KB
            .iter()
            .zip(bases.iter().chain(std::iter::once(&1.0)))
            .map(|(&(id, kb), &b)| FidelityLevel::new(id, kb, b))
            .collect();
        Self::new(Some(name.to_owned()), w_bw, levels)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut p: CostProfile = serde_json::from_str(&text)?;
        if p.name.is_none() {
            p.name = path.file_stem().map(|s| s.to_string_lossy().into_owned());
        }
        Ok(p)
    }

    /// A built-in profile name or a path to a profile JSON file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if BUILTIN_PROFILES.contains(&name_or_path) {
            Self::builtin(name_or_path)
        } else if Path::new(name_or_path).exists() {
            Self::load(name_or_path)
        } else {
            Err(Error::UnknownProfile(name_or_path.to_owned()))
        }
    }

    pub fn full(&self) -> &FidelityLevel {
        self.levels.last().expect("validated profile has levels")
    }

    pub fn ids(&self) -> Vec<String> {
        self.levels.iter().map(|l| l.id.clone()).collect()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.levels.iter().position(|l| l.id == id)
    }

    pub fn level(&self, id: &str) -> Result<&FidelityLevel> {
        self.levels
            .iter()
            .find(|l| l.id == id)
            .ok_or_else(|| Error::UnknownFidelity(id.to_owned()))
    }

    fn raw_cost_of(&self, level: &FidelityLevel) -> f64 {
        level.tier_base_cost + self.w_bw * level.avg_size_kb / self.full().avg_size_kb
    }

    /// Unnormalized cost `b_tier(f) + w_bw * r(f)` of a level in this profile.
    pub fn raw_cost(&self, id: &str) -> Result<f64> {
        Ok(self.raw_cost_of(self.level(id)?))
    }

    /// Costs scaled so the reference level costs exactly 120, in level order.
    pub fn normalized_costs(&self) -> Vec<f64> {
        let full = self.raw_cost_of(self.full());
        self.levels
            .iter()
            .map(|l| NORMALIZATION_TARGET * (self.raw_cost_of(l) / full))
            .collect()
    }

    pub fn cost_table(&self) -> Vec<(String, f64)> {
        self.ids().into_iter().zip(self.normalized_costs()).collect()
    }
}

/// Bandwidth ratio `size(f) / size(full)`.
pub fn size_ratio(level: &FidelityLevel, full: &FidelityLevel) -> Result<f64> {
    if [level.avg_size_kb, full.avg_size_kb]
        .iter()
        .any(|s| s.is_nan() || *s <= 0.0)
    {
        return Err(Error::InvalidConfig("sizes must be positive".into()));
    }
    Ok(level.avg_size_kb / full.avg_size_kb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_ratios() {
        let p = CostProfile::builtin("edge-cloud").unwrap();
        let r = size_ratio(p.level("caption").unwrap(), p.full()).unwrap();
        assert!((r - 7.6923e-5).abs() < 1e-8);
        assert_eq!(size_ratio(p.full(), p.full()).unwrap(), 1.0);
        let a = FidelityLevel::new("a", 3.0, 0.1);
        let b = FidelityLevel::new("b", 12.0, 0.2);
        let a2 = FidelityLevel::new("a", 6.0, 0.1);
        let b2 = FidelityLevel::new("b", 24.0, 0.2);
        assert_eq!(size_ratio(&a, &b).unwrap(), size_ratio(&a2, &b2).unwrap());
        assert!(size_ratio(&FidelityLevel::new("z", 0.0, 0.1), &b).is_err());
    }

    #[test]
    fn raw_costs_match_table() {
        let p = CostProfile::builtin("edge-cloud").unwrap();
        // the table lists r(jpeg_q1)=0.02 rounded; from sizes it is 12/650
        assert!((p.raw_cost("jpeg_q1").unwrap() - 0.4012).abs() < 1e-4);
        assert!((p.raw_cost("full").unwrap() - 1.06).abs() < 1e-15);
        assert!(matches!(p.raw_cost("nope"), Err(Error::UnknownFidelity(_))));

        let mut zero = p.clone();
        zero.w_bw = 0.0;
        assert_eq!(zero.raw_cost("jpeg_q10").unwrap(), 0.56);
    }

    #[test]
    fn edge_cloud_normalized_costs() {
        let p = CostProfile::builtin("edge-cloud").unwrap();
        let costs = p.normalized_costs();
        for (c, want) in costs.iter().zip([9.1, 18.1, 45.4, 63.9, 120.0]) {
            assert!((c - want).abs() <= 0.1, "{c} vs {want}");
        }
        assert_eq!(costs[4], 120.0);
    }

    #[test]
    fn uniform_size_scaling_leaves_costs() {
        let p = CostProfile::builtin("cps-iot").unwrap();
        let mut scaled = p.clone();
        for l in &mut scaled.levels {
            l.avg_size_kb *= 3.0;
        }
        for (a, b) in p.normalized_costs().iter().zip(scaled.normalized_costs()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn all_builtins_are_strictly_increasing() {
        for name in BUILTIN_PROFILES {
            let c = CostProfile::builtin(name).unwrap().normalized_costs();
            assert!(c.windows(2).all(|w| w[0] < w[1]), "{name}: {c:?}");
            assert_eq!(*c.last().unwrap(), 120.0);
        }
        assert!(CostProfile::builtin("moon").is_err());
    }

    #[test]
    fn non_monotone_profile_rejected() {
        let levels = vec![
            FidelityLevel::new("a", 10.0, 0.5),
            FidelityLevel::new("b", 1.0, 0.1),
            FidelityLevel::new("full", 100.0, 1.0),
        ];
        assert!(matches!(
            CostProfile::new(None, 0.06, levels),
            Err(Error::NonMonotoneCosts { .. })
        ));
    }

    #[test]
    fn profile_json() {
        let json = r#"{"w_bw": 0.06, "levels": [
            {"id": "caption", "size_kb": 0.05, "tier_base": 0.08},
            {"id": "full", "size_kb": 650, "tier_base": 1.0}]}"#;
        let p: CostProfile = serde_json::from_str(json).unwrap();
        let c = p.normalized_costs();
        assert_eq!(c.len(), 2);
        assert_eq!(c[1], 120.0);
        let bad = r#"{"w_bw": 0.06, "levels": [
            {"id": "full", "size_kb": 650, "tier_base": 1.0},
            {"id": "caption", "size_kb": 0.05, "tier_base": 0.08}]}"#;
        assert!(serde_json::from_str::<CostProfile>(bad).is_err());
    }
}
