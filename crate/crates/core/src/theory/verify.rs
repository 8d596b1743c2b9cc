//! Seeded property suites behind the `verify` command.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::Serialize;
use serde_json::json;

use super::{
    advantage_decomposition, delta_k, delta_k_sum, pathwise_identity_check, pg_equivalence_report, random_weights,
    shaping_check, variance_vs_agents, MicroDecPomdp, WeightGenerator, DELTA_RANGE_TOL, IDENTITY_TOL,
};
use crate::error::{Error, Result};
use crate::redistribution::{
    redistribute_with_weights, validate_weights, weights_from_contributions, ContributionMatrix, DEFAULT_EPS,
};
use crate::reward_model::{RewardModel, RewardModelConfig};
use crate::rng::derive_seed;
use crate::trajectory::TokenGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub check: String,
    pub status: Status,
    pub max_abs_err: f64,
    pub details: serde_json::Value,
}

impl CheckReport {
    fn new(check: &str, passed: bool, max_abs_err: f64, details: serde_json::Value) -> Self {
        Self {
            check: check.into(),
            status: if passed { Status::Pass } else { Status::Fail },
            max_abs_err,
            details,
        }
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Algebra,
    Shaping,
    Gradients,
    Variance,
    All,
}

impl Suite {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Algebra => "algebra",
            Self::Shaping => "shaping",
            Self::Gradients => "gradients",
            Self::Variance => "variance",
            Self::All => "all",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Self::Algebra, Self::Shaping, Self::Gradients, Self::Variance, Self::All]
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown suite '{s}' (algebra|shaping|gradients|variance|all)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    /// Random draws per algebraic property.
    pub draws: usize,
    pub seed: u64,
    /// Perturbs one weight after validation so the simplex check must fail.
    pub inject_fault: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            draws: 1000,
            seed: 0,
            inject_fault: false,
        }
    }
}

pub fn run_suite(suite: Suite, opts: &VerifyOptions) -> Result<Vec<CheckReport>> {
    match suite {
        Suite::Algebra => algebra(opts),
        Suite::Shaping => Ok(vec![shaping(opts)?]),
        Suite::Gradients => Ok(vec![gradients(opts)?]),
        Suite::Variance => variance(opts),
        Suite::All => {
            let mut out = algebra(opts)?;
            out.push(shaping(opts)?);
            out.push(gradients(opts)?);
            out.extend(variance(opts)?);
            Ok(out)
        }
    }
}

fn rng(opts: &VerifyOptions, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, stream))
}

fn random_return(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(-100.0..100.0)
}

pub fn conservation(opts: &VerifyOptions) -> Result<CheckReport> {
    let mut rng = rng(opts, 1);
    let (mut worst, mut failures) = (0.0f64, 0usize);
    for _ in 0..opts.draws {
        let w = random_weights(&mut rng, 32, 8);
        let ret = random_return(&mut rng);
        let r = redistribute_with_weights(&w, ret)?;
        worst = worst.max(r.conservation_error() / ret.abs().max(1.0));
        failures += usize::from(!r.conserves());
    }
    Ok(CheckReport::new(
        "conservation",
        failures == 0,
        worst,
        json!({"draws": opts.draws, "failures": failures, "max_rel_err": worst, "max_t": 32, "max_n": 8}),
    ))
}

pub fn simplex(opts: &VerifyOptions) -> Result<CheckReport> {
    let mut rng = rng(opts, 2);
    let mut violations = Vec::new();
    let mut worst = 0.0f64;
    let mut record = |source: &str, draw: usize, w: &crate::WeightMatrix| -> Result<()> {
        let rep = validate_weights(w)?;
        let sum_err = (w.temporal.iter().sum::<f64>() - 1.0).abs();
        let row_err = w
            .agent
            .iter()
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max);
        worst = worst.max(sum_err).max(row_err);
        if !rep.is_ok() && violations.len() < 10 {
            violations.push(json!({"source": source, "draw": draw, "violations": rep.to_string()}));
        }
        Ok(())
    };
    let mut count = 0;
    for d in 0..opts.draws {
        let t = rng.random_range(1..=32);
        let n = rng.random_range(1..=8);
        let zeros = rng.random_bool(0.2);
        let values = (0..t)
            .map(|_| {
                (0..n)
                    .map(|_| if zeros && rng.random_bool(0.5) { 0.0 } else { Exp1.sample(&mut rng) })
                    .collect()
            })
            .collect();
        let mut w = weights_from_contributions(&ContributionMatrix { values }, DEFAULT_EPS)?;
        if opts.inject_fault && d == 0 {
            w.temporal[0] += 1e-3;
        }
        record("weights_from_contributions", d, &w)?;
        count += 1;
    }
    let cfg = RewardModelConfig {
        d_model: 8,
        n_heads: 2,
        n_blocks: 1,
        ..Default::default()
    };
    let dim = 4;
    for d in 0..opts.draws {
        let model = RewardModel::new(
            RewardModelConfig {
                init_seed: derive_seed(opts.seed, d as u64),
                ..cfg.clone()
            },
            dim,
        )?;
        let (t, n) = (rng.random_range(1..=8), rng.random_range(1..=4));
        let tokens = TokenGrid {
            horizon: t,
            n_agents: n,
            dim,
            data: (0..t * n * dim).map(|_| rng.random_range(-2.0..2.0)).collect(),
        };
        record("extract_weights", d, &model.extract_weights(&tokens)?)?;
        count += 1;
    }
    let failures = violations.len();
    Ok(CheckReport::new(
        "simplex",
        failures == 0,
        worst,
        json!({"draws": count, "violating_draws": violations}),
    ))
}

pub fn delta_identity(opts: &VerifyOptions) -> Result<CheckReport> {
    let mut rng = rng(opts, 3);
    let (mut worst, mut out_of_range, mut mismatches) = (0.0f64, 0usize, 0usize);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..opts.draws {
        let w = random_weights(&mut rng, 32, 8);
        for k in 0..w.n_agents() {
            let (a, b) = (delta_k(&w, k)?, delta_k_sum(&w, k)?);
            let err = (a - b).abs();
            worst = worst.max(err);
            mismatches += usize::from(err > 1e-12);
            out_of_range += usize::from(!(-DELTA_RANGE_TOL..=1.0 + DELTA_RANGE_TOL).contains(&a));
            lo = lo.min(a);
            hi = hi.max(a);
        }
    }
    Ok(CheckReport::new(
        "delta_identity",
        mismatches == 0 && out_of_range == 0,
        worst,
        json!({"draws": opts.draws, "mismatches": mismatches, "out_of_range": out_of_range, "delta_min": lo, "delta_max": hi}),
    ))
}

pub fn pathwise_scaling(opts: &VerifyOptions) -> Result<CheckReport> {
    let mut rng = rng(opts, 4);
    let (mut worst, mut failures) = (0.0f64, 0usize);
    for _ in 0..opts.draws {
        let w = random_weights(&mut rng, 32, 8);
        let ret = random_return(&mut rng);
        let r = redistribute_with_weights(&w, ret)?;
        for k in 0..w.n_agents() {
            let rep = pathwise_identity_check(&r, &w, k)?;
            worst = worst.max(rep.abs_err / ret.abs().max(1.0));
            failures += usize::from(!rep.passed);
        }
    }
    Ok(CheckReport::new(
        "pathwise_scaling",
        failures == 0,
        worst,
        json!({"draws": opts.draws, "failures": failures, "max_rel_err": worst}),
    ))
}

fn algebra(opts: &VerifyOptions) -> Result<Vec<CheckReport>> {
    Ok(vec![
        conservation(opts)?,
        simplex(opts)?,
        delta_identity(opts)?,
        pathwise_scaling(opts)?,
    ])
}

pub fn shaping(opts: &VerifyOptions) -> Result<CheckReport> {
    let mut rng = rng(opts, 5);
    let (mut worst, mut failures, mut total_worst) = (0.0f64, 0usize, 0.0f64);
    for _ in 0..opts.draws {
        let w = random_weights(&mut rng, 32, 8);
        let ret = random_return(&mut rng);
        let rep = shaping_check(&w, ret)?;
        worst = worst.max(rep.max_abs_err / ret.abs().max(1.0));
        total_worst = total_worst.max(rep.total_err);
        failures += usize::from(!rep.passed());
    }
    Ok(CheckReport::new(
        "shaping_telescoping",
        failures == 0,
        worst,
        json!({"draws": opts.draws, "failures": failures, "max_total_err": total_worst, "tolerance": IDENTITY_TOL}),
    ))
}

pub fn gradients(opts: &VerifyOptions) -> Result<CheckReport> {
    let tol = 1e-9;
    let cfg = RewardModelConfig {
        d_model: 8,
        n_heads: 2,
        n_blocks: 1,
        init_seed: opts.seed,
        ..Default::default()
    };
    let mut rows = Vec::new();
    let (mut worst, mut failures) = (0.0f64, 0usize);
    let mut trajectories = 0;
    for m in MicroDecPomdp::suite(opts.seed) {
        trajectories += m.trajectory_count() as usize;
        let model = RewardModel::new(cfg.clone(), m.n_obs + m.n_actions)?;
        let gens = [
            WeightGenerator::Oracle,
            WeightGenerator::Uniform,
            WeightGenerator::HashedRandom(opts.seed),
            WeightGenerator::Model(&model),
        ];
        for gen in gens {
            for k in 0..m.n_agents {
                let rep = pg_equivalence_report(&m, gen, k)?;
                worst = worst.max(rep.conservation_err).max(rep.scaling_err);
                let ok = rep.passed(tol);
                failures += usize::from(!ok);
                rows.push(json!({
                    "mdp": rep.mdp,
                    "generator": rep.generator,
                    "agent": k,
                    "trajectories": rep.trajectories,
                    "conservation_err": rep.conservation_err,
                    "scaling_err": rep.scaling_err,
                    "delta_min": rep.delta_min,
                    "delta_max": rep.delta_max,
                    "angle_deg": rep.angle_deg,
                    "pass": ok,
                }));
            }
        }
    }
    Ok(CheckReport::new(
        "pg_equivalence",
        failures == 0,
        worst,
        json!({"tolerance": tol, "enumerated_trajectories": trajectories, "failures": failures, "cases": rows}),
    ))
}

/// Cauchy–Schwarz bound on random, independent and adversarially
/// correlated `(A_i, A_¬i)` sample sets.
pub fn cauchy_schwarz(opts: &VerifyOptions) -> Result<CheckReport> {
    let mut rng = rng(opts, 6);
    let n = 10_000;
    let base: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let other: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut sets: Vec<(String, Vec<(f64, f64)>)> = vec![
        ("independent".into(), base.iter().zip(&other).map(|(&a, &b)| (a, b)).collect()),
        ("identical".into(), base.iter().map(|&a| (a, a)).collect()),
        ("scaled_copy".into(), base.iter().map(|&a| (a, 3.7 * a)).collect()),
        ("anti_correlated".into(), base.iter().map(|&a| (a, -a)).collect()),
        ("rest_zero".into(), base.iter().map(|&a| (a, 0.0)).collect()),
        ("large_offset".into(), base.iter().map(|&a| (1e6 + a, 1e6 + 2.0 * a)).collect()),
    ];
    for j in 0..20 {
        let rho: f64 = rng.random_range(-1.0..1.0);
        let scale: f64 = rng.random_range(0.01..100.0);
        let set = base
            .iter()
            .zip(&other)
            .map(|(&a, &b)| (a, scale * (rho * a + (1.0 - rho * rho).sqrt() * b)))
            .collect();
        sets.push((format!("mixed_{j}"), set));
    }
    let mut rows = Vec::new();
    let (mut failures, mut worst_excess) = (0usize, f64::NEG_INFINITY);
    for (name, s) in &sets {
        let st = advantage_decomposition(s)?;
        let excess = st.var_total - st.bound;
        worst_excess = worst_excess.max(excess);
        failures += usize::from(!st.bound_holds());
        rows.push(json!({"set": name, "var_total": st.var_total, "bound": st.bound, "cov": st.cov, "holds": st.bound_holds()}));
    }
    Ok(CheckReport::new(
        "cauchy_schwarz",
        failures == 0,
        worst_excess.max(0.0),
        json!({"sets": rows, "failures": failures, "max_excess": worst_excess}),
    ))
}

pub fn variance_scaling(opts: &VerifyOptions) -> Result<CheckReport> {
    let rows = variance_vs_agents(&[2, 4, 8], 100_000, 1.0, derive_seed(opts.seed, 7))?;
    let in_band = rows.iter().all(|r| (0.8..=1.2).contains(&r.var_per_agent));
    let monotone = super::is_nondecreasing(&rows);
    let worst = rows.iter().map(|r| (r.var_per_agent - 1.0).abs()).fold(0.0, f64::max);
    Ok(CheckReport::new(
        "variance_scaling",
        in_band && monotone,
        worst,
        json!({"rows": rows, "band": [0.8, 1.2], "nondecreasing": monotone, "samples": 100_000}),
    ))
}

fn variance(opts: &VerifyOptions) -> Result<Vec<CheckReport>> {
    Ok(vec![cauchy_schwarz(opts)?, variance_scaling(opts)?])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> VerifyOptions {
        VerifyOptions {
            draws: 100,
            seed: 3,
            inject_fault: false,
        }
    }

    #[test]
    fn every_suite_passes() {
        let reports = run_suite(Suite::All, &quick()).unwrap();
        let names: Vec<&str> = reports.iter().map(|r| r.check.as_str()).collect();
        assert_eq!(
            names,
            [
                "conservation",
                "simplex",
                "delta_identity",
                "pathwise_scaling",
                "shaping_telescoping",
                "pg_equivalence",
                "cauchy_schwarz",
                "variance_scaling"
            ]
        );
        for r in &reports {
            assert!(r.passed(), "{}: {}", r.check, r.details);
        }
    }

    #[test]
    fn injected_fault_is_pinpointed() {
        let opts = VerifyOptions {
            inject_fault: true,
            ..quick()
        };
        let reports = run_suite(Suite::Algebra, &opts).unwrap();
        let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.check.as_str()).collect();
        assert_eq!(failed, ["simplex"]);
    }

    #[test]
    fn report_json_shape() {
        let r = conservation(&quick()).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        for key in ["check", "status", "max_abs_err", "details"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["status"], "pass");
    }

    #[test]
    fn suite_names_parse() {
        for s in ["algebra", "shaping", "gradients", "variance", "all"] {
            assert_eq!(s.parse::<Suite>().unwrap().as_str(), s);
        }
        assert!("everything".parse::<Suite>().is_err());
    }
}
