//! Redistribution algebra.
//!
//! A [`WeightMatrix`] holds temporal weights `w[t]` (summing to one over
//! time) and agent weights `w'[t][i]` (summing to one over agents at every
//! step). Redistributing an episodic return `R` gives
//! `r[t][i] = w'[t][i] * w[t] * R`, which sums back to `R` exactly when both
//! simplex constraints hold.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the simplex sums and on entry bounds.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Default floor used when normalising contributions.
pub const DEFAULT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMatrix {
    /// `w[t]`, length T.
    pub temporal: Vec<f64>,
    /// `w'[t][i]`, shape T x N.
    pub agent: Vec<Vec<f64>>,
}

impl WeightMatrix {
    pub fn new(temporal: Vec<f64>, agent: Vec<Vec<f64>>) -> Self {
        Self { temporal, agent }
    }

    pub fn uniform(t: usize, n: usize) -> Self {
        Self {
            temporal: vec![1.0 / t as f64; t],
            agent: vec![vec![1.0 / n as f64; n]; t],
        }
    }

    pub fn horizon(&self) -> usize {
        self.temporal.len()
    }

    pub fn n_agents(&self) -> usize {
        self.agent.first().map_or(0, Vec::len)
    }

    /// Agent `k`'s column `w'[.][k]`.
    pub fn agent_column(&self, k: usize) -> Vec<f64> {
        self.agent.iter().map(|row| row[k]).collect()
    }
}

/// One broken constraint found by [`validate_weights`].
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    TemporalSum { sum: f64 },
    AgentSum { t: usize, sum: f64 },
    TemporalEntry { t: usize, value: f64 },
    AgentEntry { t: usize, i: usize, value: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TemporalSum { sum } => write!(f, "Σw_t={sum}≠1"),
            Violation::AgentSum { t, sum } => write!(f, "Σ_i w'[{t}][i]={sum}≠1"),
            Violation::TemporalEntry { t, value } => write!(f, "w[{t}]={value}∉[0,1]"),
            Violation::AgentEntry { t, i, value } => write!(f, "w'[{t}][{i}]={value}∉[0,1]"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "ok");
        }
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", parts.join("; "))
    }
}

fn in_unit_interval(x: f64) -> bool {
    x.is_finite() && x >= -SIMPLEX_TOL && x <= 1.0 + SIMPLEX_TOL
}

/// Checks both simplex constraints and the entry bounds, listing every
/// violation. Shape problems are errors rather than violations.
pub fn validate_weights(w: &WeightMatrix) -> Result<ValidationReport> {
    let t_len = w.temporal.len();
    if t_len == 0 || w.agent.len() != t_len {
        return Err(Error::Dimension(format!(
            "temporal has {} entries, agent has {} rows",
            t_len,
            w.agent.len()
        )));
    }
    let n = w.agent[0].len();
    if n == 0 || w.agent.iter().any(|row| row.len() != n) {
        return Err(Error::Dimension("agent rows must share a nonzero width".into()));
    }

    let mut report = ValidationReport::default();
    let sum: f64 = w.temporal.iter().sum();
    if !((sum - 1.0).abs() <= SIMPLEX_TOL) {
        report.violations.push(Violation::TemporalSum { sum });
    }
    for (t, &value) in w.temporal.iter().enumerate() {
        if !in_unit_interval(value) {
            report.violations.push(Violation::TemporalEntry { t, value });
        }
    }
    for (t, row) in w.agent.iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if !((sum - 1.0).abs() <= SIMPLEX_TOL) {
            report.violations.push(Violation::AgentSum { t, sum });
        }
        for (i, &value) in row.iter().enumerate() {
            if !in_unit_interval(value) {
                report.violations.push(Violation::AgentEntry { t, i, value });
            }
        }
    }
    Ok(report)
}

/// Per-agent, per-step rewards `rewards[t][i]` plus the return they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct RedistributionMatrix {
    pub rewards: Vec<Vec<f64>>,
    pub source_return: f64,
    /// False only for broadcast-style signals that hand every agent the full
    /// per-step global reward.
    pub conserving: bool,
}

impl RedistributionMatrix {
    pub fn zeros(t: usize, n: usize, source_return: f64) -> Self {
        Self {
            rewards: vec![vec![0.0; n]; t],
            source_return,
            conserving: true,
        }
    }

    pub fn horizon(&self) -> usize {
        self.rewards.len()
    }

    pub fn n_agents(&self) -> usize {
        self.rewards.first().map_or(0, Vec::len)
    }

    pub fn total(&self) -> f64 {
        self.rewards.iter().flatten().sum()
    }

    /// `r_global,t = Σ_i r[t][i]`.
    pub fn global_per_step(&self) -> Vec<f64> {
        self.rewards.iter().map(|row| row.iter().sum()).collect()
    }

    /// `G_k = Σ_t r[t][k]`.
    pub fn agent_total(&self, k: usize) -> f64 {
        self.rewards.iter().map(|row| row[k]).sum()
    }

    pub fn agent_totals(&self) -> Vec<f64> {
        (0..self.n_agents()).map(|k| self.agent_total(k)).collect()
    }

    /// Return-to-go of agent `k`'s redistributed rewards, one entry per step.
    pub fn agent_return_to_go(&self, k: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.horizon()];
        let mut acc = 0.0;
        for t in (0..self.horizon()).rev() {
            acc += self.rewards[t][k];
            out[t] = acc;
        }
        out
    }

    pub fn conservation_error(&self) -> f64 {
        (self.total() - self.source_return).abs()
    }

    /// `|Σr − R| ≤ 1e-9·max(1,|R|)`.
    pub fn conserves(&self) -> bool {
        self.conservation_error() <= SIMPLEX_TOL * self.source_return.abs().max(1.0)
    }
}

#[derive(Serialize, Deserialize)]
struct RedistributionJson {
    #[serde(rename = "T")]
    t: usize,
    #[serde(rename = "N")]
    n: usize,
    source_return: f64,
    rewards: Vec<Vec<f64>>,
}

impl Serialize for RedistributionMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        RedistributionJson {
            t: self.horizon(),
            n: self.n_agents(),
            source_return: self.source_return,
            rewards: self.rewards.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RedistributionMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = RedistributionJson::deserialize(d)?;
        if raw.rewards.len() != raw.t || raw.rewards.iter().any(|r| r.len() != raw.n) {
            return Err(D::Error::custom("rewards shape does not match T and N"));
        }
        let mut m = RedistributionMatrix {
            rewards: raw.rewards,
            source_return: raw.source_return,
            conserving: true,
        };
        m.conserving = m.conserves();
        Ok(m)
    }
}

/// `r[t][i] = w'[t][i] · w[t] · R`; rejects weights that fail validation.
pub fn redistribute_with_weights(w: &WeightMatrix, ret: f64) -> Result<RedistributionMatrix> {
    let report = validate_weights(w)?;
    if !report.is_ok() {
        return Err(Error::Constraint(report.to_string()));
    }
    if !ret.is_finite() {
        return Err(Error::Numeric(format!("episodic return {ret} is not finite")));
    }
    let rewards = w
        .agent
        .iter()
        .zip(&w.temporal)
        .map(|(row, &wt)| row.iter().map(|&wa| wa * wt * ret).collect())
        .collect();
    Ok(RedistributionMatrix {
        rewards,
        source_return: ret,
        conserving: true,
    })
}

/// Raw nonnegative per-agent per-step credit, before normalisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContributionMatrix {
    pub values: Vec<Vec<f64>>,
}

impl ContributionMatrix {
    pub fn new(values: Vec<Vec<f64>>) -> Result<Self> {
        let m = Self { values };
        m.check()?;
        Ok(m)
    }

    pub fn zeros(t: usize, n: usize) -> Self {
        Self {
            values: vec![vec![0.0; n]; t],
        }
    }

    pub fn horizon(&self) -> usize {
        self.values.len()
    }

    pub fn n_agents(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn total(&self) -> f64 {
        self.values.iter().flatten().sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: self
                .values
                .iter()
                .map(|r| r.iter().map(|v| v * factor).collect())
                .collect(),
        }
    }

    fn check(&self) -> Result<()> {
        let t = self.values.len();
        if t == 0 {
            return Err(Error::Dimension("contribution matrix has no rows".into()));
        }
        let n = self.values[0].len();
        if n == 0 || self.values.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension("contribution rows must share a nonzero width".into()));
        }
        for (ti, row) in self.values.iter().enumerate() {
            for (i, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::Numeric(format!("contribution[{ti}][{i}]={v}")));
                }
                if v < 0.0 {
                    return Err(Error::Domain(format!("negative contribution[{ti}][{i}]={v}")));
                }
            }
        }
        Ok(())
    }
}

/// Normalises raw credit into simplex weights.
///
/// `v = c / Σc`, `w[t] = Σ_i v[t][i]`, `w'[t][i] = v[t][i] / w[t]`. When the
/// total credit is at most `eps` the result is uniform; a row whose temporal
/// weight is at most `eps` gets uniform agent weights (its rewards are zero
/// either way).
pub fn weights_from_contributions(c: &ContributionMatrix, eps: f64) -> Result<WeightMatrix> {
    c.check()?;
    if !(eps > 0.0) {
        return Err(Error::Domain(format!("eps must be positive, got {eps}")));
    }
    let (t_len, n) = (c.horizon(), c.n_agents());
    let total = c.total();
    if total <= eps {
        return Ok(WeightMatrix::uniform(t_len, n));
    }
    let mut temporal = Vec::with_capacity(t_len);
    let mut agent = Vec::with_capacity(t_len);
    for row in &c.values {
        let v: Vec<f64> = row.iter().map(|x| x / total).collect();
        let wt: f64 = v.iter().sum();
        temporal.push(wt);
        if wt <= eps {
            agent.push(vec![1.0 / n as f64; n]);
        } else {
            agent.push(v.iter().map(|x| x / wt).collect());
        }
    }
    Ok(WeightMatrix { temporal, agent })
}
