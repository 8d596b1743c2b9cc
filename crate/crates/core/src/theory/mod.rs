//! Executable checks of the identities behind agent-temporal redistribution:
//! potential-based shaping, per-agent gradient scaling by `δ_k`, and the
//! Cauchy–Schwarz bound on the joint advantage variance.

pub mod micro;
pub mod verify;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::redistribution::{
    redistribute_with_weights, validate_weights, weights_from_contributions, ContributionMatrix, RedistributionMatrix,
    WeightMatrix, DEFAULT_EPS,
};
use crate::reward_model::RewardModel;
use crate::rng::{derive_seed, rng_for};
use crate::trajectory::{ConcatOneHot, TokenGrid};
pub use micro::{
    enumerate_exact_gradient, exact_gradient, reinforce_estimate, weighted_gradient, McEstimate, MicroDecPomdp, Path,
};

/// Tolerance of the pathwise and telescoping identities, relative to `max(1, |R|)`.
pub const IDENTITY_TOL: f64 = 1e-9;

/// Rounding allowance when checking `δ_k ∈ [0, 1]`.
pub const DELTA_RANGE_TOL: f64 = 1e-12;

fn check_valid(w: &WeightMatrix) -> Result<()> {
    let report = validate_weights(w)?;
    if report.is_ok() {
        Ok(())
    } else {
        Err(Error::Constraint(report.to_string()))
    }
}

fn check_agent(w: &WeightMatrix, k: usize) -> Result<()> {
    if k >= w.n_agents() {
        return Err(Error::Dimension(format!("agent {k} out of range for N={}", w.n_agents())));
    }
    Ok(())
}

/// `φ_i(t) = R · Σ_{t' < t} w'[t'][i] · w[t']` for `t = 0..=T`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PotentialSequence {
    pub agent: usize,
    pub values: Vec<f64>,
}

pub fn potential_sequence(w: &WeightMatrix, ret: f64, i: usize) -> Result<PotentialSequence> {
    check_valid(w)?;
    check_agent(w, i)?;
    let mut values = Vec::with_capacity(w.horizon() + 1);
    let mut acc = 0.0;
    values.push(0.0);
    for (wt, row) in w.temporal.iter().zip(&w.agent) {
        acc += row[i] * wt;
        values.push(ret * acc);
    }
    Ok(PotentialSequence { agent: i, values })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellViolation {
    pub t: usize,
    pub agent: usize,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShapingReport {
    pub violations: Vec<CellViolation>,
    pub max_abs_err: f64,
    /// `Σ_i (φ_i(T) - φ_i(0))`
    pub telescoped_total: f64,
    pub total_err: f64,
}

impl ShapingReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty() && self.total_err <= IDENTITY_TOL * self.telescoped_total.abs().max(1.0)
    }
}

/// Telescoping check of the rewards produced from `w` and `ret`.
pub fn shaping_check(w: &WeightMatrix, ret: f64) -> Result<ShapingReport> {
    let r = redistribute_with_weights(w, ret)?;
    shaping_check_rewards(&r, w)
}

/// Checks `r[t][i] = φ_i(t+1) - φ_i(t)` for an arbitrary reward matrix
/// against the potentials implied by `w` and `r.source_return`.
pub fn shaping_check_rewards(r: &RedistributionMatrix, w: &WeightMatrix) -> Result<ShapingReport> {
    if r.horizon() != w.horizon() || r.n_agents() != w.n_agents() {
        return Err(Error::Dimension("reward and weight matrices differ in shape".into()));
    }
    let ret = r.source_return;
    let tol = IDENTITY_TOL * ret.abs().max(1.0);
    let mut violations = Vec::new();
    let mut max_abs_err: f64 = 0.0;
    let mut telescoped_total = 0.0;
    for i in 0..w.n_agents() {
        let phi = potential_sequence(w, ret, i)?;
        for t in 0..w.horizon() {
            let err = (r.rewards[t][i] - (phi.values[t + 1] - phi.values[t])).abs();
            max_abs_err = max_abs_err.max(err);
            if err > tol {
                violations.push(CellViolation { t, agent: i, error: err });
            }
        }
        telescoped_total += phi.values[w.horizon()] - phi.values[0];
    }
    let total_err = (telescoped_total - ret).abs();
    Ok(ShapingReport {
        violations,
        max_abs_err: max_abs_err.max(total_err),
        telescoped_total,
        total_err,
    })
}

/// `δ_k = 1 - Σ_t w[t] (1 - w'[t][k])`.
pub fn delta_k(w: &WeightMatrix, k: usize) -> Result<f64> {
    check_valid(w)?;
    check_agent(w, k)?;
    let m: f64 = w.temporal.iter().zip(&w.agent).map(|(wt, row)| wt * (1.0 - row[k])).sum();
    Ok(1.0 - m)
}

/// `δ_k = Σ_t w[t] w'[t][k]`, the same quantity written as a weighted sum.
pub fn delta_k_sum(w: &WeightMatrix, k: usize) -> Result<f64> {
    check_valid(w)?;
    check_agent(w, k)?;
    Ok(w.temporal.iter().zip(&w.agent).map(|(wt, row)| wt * row[k]).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathwiseReport {
    pub agent: usize,
    /// `Σ_t r[t][k]`
    pub agent_return: f64,
    /// `δ_k · R`
    pub scaled_return: f64,
    pub delta: f64,
    pub abs_err: f64,
    pub passed: bool,
}

pub fn pathwise_identity_check(r: &RedistributionMatrix, w: &WeightMatrix, k: usize) -> Result<PathwiseReport> {
    if r.horizon() != w.horizon() || r.n_agents() != w.n_agents() {
        return Err(Error::Dimension("reward and weight matrices differ in shape".into()));
    }
    let delta = delta_k(w, k)?;
    let agent_return = r.agent_total(k);
    let scaled_return = delta * r.source_return;
    let abs_err = (agent_return - scaled_return).abs();
    Ok(PathwiseReport {
        agent: k,
        agent_return,
        scaled_return,
        delta,
        abs_err,
        passed: abs_err <= IDENTITY_TOL * r.source_return.abs().max(1.0),
    })
}

/// A random simplex weight matrix with `T ≤ max_t`, `N ≤ max_n`; about a
/// fifth of the draws contain exact zeros.
pub fn random_weights(rng: &mut impl Rng, max_t: usize, max_n: usize) -> WeightMatrix {
    let t = rng.random_range(1..=max_t);
    let n = rng.random_range(1..=max_n);
    let sparse = rng.random_bool(0.2);
    let values: Vec<Vec<f64>> = (0..t)
        .map(|_| {
            (0..n)
                .map(|_| {
                    if sparse && rng.random_bool(0.4) {
                        0.0
                    } else {
                        Exp1.sample(rng)
                    }
                })
                .collect()
        })
        .collect();
    weights_from_contributions(&ContributionMatrix { values }, DEFAULT_EPS).expect("finite nonnegative draws")
}

/// Source of frozen per-trajectory weights for the gradient checks.
#[derive(Debug, Clone, Copy)]
pub enum WeightGenerator<'a> {
    /// Normalised ground-truth credit.
    Oracle,
    Uniform,
    /// Weights drawn from a hash of the trajectory, so they vary with `τ`
    /// but not with the policy.
    HashedRandom(u64),
    /// A frozen reward model over one-hot observation and action tokens.
    Model(&'a RewardModel),
}

impl WeightGenerator<'_> {
    pub fn name(&self) -> String {
        match self {
            Self::Oracle => "oracle".into(),
            Self::Uniform => "uniform".into(),
            Self::HashedRandom(s) => format!("hashed-random({s})"),
            Self::Model(_) => "frozen-model".into(),
        }
    }

    pub fn weights(&self, m: &MicroDecPomdp, p: &Path) -> Result<WeightMatrix> {
        match self {
            Self::Oracle => weights_from_contributions(&p.credit, DEFAULT_EPS),
            Self::Uniform => Ok(WeightMatrix::uniform(m.horizon, m.n_agents)),
            Self::HashedRandom(seed) => {
                let key = p
                    .states
                    .iter()
                    .chain(p.actions.iter().flatten())
                    .fold(*seed, |acc, &x| derive_seed(acc, x as u64));
                let mut rng = rng_for(key, 0);
                let values = (0..m.horizon)
                    .map(|_| {
                        (0..m.n_agents)
                            .map(|_| if rng.random_bool(0.25) { 0.0 } else { Exp1.sample(&mut rng) })
                            .collect()
                    })
                    .collect();
                weights_from_contributions(&ContributionMatrix { values }, DEFAULT_EPS)
            }
            Self::Model(model) => {
                let enc = ConcatOneHot {
                    obs_dim: m.n_obs,
                    n_actions: m.n_actions,
                };
                let tokens = TokenGrid::encode(&enc, &p.trajectory(m.n_obs))?;
                model.extract_weights(&tokens)
            }
        }
    }
}

/// Results of the exact-enumeration gradient checks for one agent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PgEquivalenceReport {
    pub mdp: String,
    pub generator: String,
    pub agent: usize,
    pub trajectories: usize,
    /// max |∇E[Σ_i Σ_t r] - ∇E[R]|
    pub conservation_err: f64,
    /// max |∇E[Σ_t r_k] - ∇E[δ_k R]|
    pub scaling_err: f64,
    pub delta_min: f64,
    pub delta_max: f64,
    /// Angle in degrees between ∇E[Σ_t r_k] and ∇E[R]; reported, not asserted.
    pub angle_deg: f64,
    pub agent_grad: Vec<f64>,
    pub env_grad: Vec<f64>,
}

impl PgEquivalenceReport {
    pub fn delta_in_range(&self) -> bool {
        self.delta_min >= -DELTA_RANGE_TOL && self.delta_max <= 1.0 + DELTA_RANGE_TOL
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.conservation_err <= tol && self.scaling_err <= tol && self.delta_in_range()
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Angle in degrees; zero-length vectors give NaN.
pub fn angle_deg(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return f64::NAN;
    }
    let c = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
    c.clamp(-1.0, 1.0).acos().to_degrees()
}

struct Signals {
    w: WeightMatrix,
    r: RedistributionMatrix,
}

pub fn pg_equivalence_report(m: &MicroDecPomdp, gen: WeightGenerator<'_>, k: usize) -> Result<PgEquivalenceReport> {
    if k >= m.n_agents {
        return Err(Error::Dimension(format!("agent {k} of {}", m.n_agents)));
    }
    let paths = m.enumerate()?;
    let signals: Vec<Signals> = paths
        .iter()
        .map(|p| {
            let w = gen.weights(m, p)?;
            let r = redistribute_with_weights(&w, p.ret)?;
            Ok(Signals { w, r })
        })
        .collect::<Result<_>>()?;
    let rets: Vec<f64> = paths.iter().map(|p| p.ret).collect();
    let totals: Vec<f64> = signals.iter().map(|s| s.r.total()).collect();
    let agent_totals: Vec<f64> = signals.iter().map(|s| s.r.agent_total(k)).collect();
    let deltas: Vec<f64> = signals.iter().map(|s| delta_k(&s.w, k)).collect::<Result<_>>()?;
    let scaled: Vec<f64> = deltas.iter().zip(&rets).map(|(d, r)| d * r).collect();

    let env_grad = weighted_gradient(m, &paths, k, &rets);
    let total_grad = weighted_gradient(m, &paths, k, &totals);
    let agent_grad = weighted_gradient(m, &paths, k, &agent_totals);
    let scaled_grad = weighted_gradient(m, &paths, k, &scaled);

    Ok(PgEquivalenceReport {
        mdp: m.name.clone(),
        generator: gen.name(),
        agent: k,
        trajectories: paths.len(),
        conservation_err: max_abs_diff(&total_grad, &env_grad),
        scaling_err: max_abs_diff(&agent_grad, &scaled_grad),
        delta_min: deltas.iter().copied().fold(f64::INFINITY, f64::min),
        delta_max: deltas.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        angle_deg: angle_deg(&agent_grad, &env_grad),
        agent_grad,
        env_grad,
    })
}

/// Sample moments of a joint advantage split into agent `i`'s part and the
/// rest, with the Cauchy–Schwarz bound on the joint variance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdvantageStats {
    pub var_total: f64,
    pub var_agent: f64,
    pub var_rest: f64,
    pub cov: f64,
    /// `(√Var(A_i) + √Var(A_¬i))²`
    pub bound: f64,
    pub samples: usize,
}

impl AdvantageStats {
    pub fn slack(&self) -> f64 {
        IDENTITY_TOL * self.bound.max(1.0)
    }

    pub fn bound_holds(&self) -> bool {
        self.var_total <= self.bound + self.slack()
    }
}

fn variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
}

/// Unbiased sample moments of `(A_i, A_¬i)` pairs.
pub fn advantage_decomposition(samples: &[(f64, f64)]) -> Result<AdvantageStats> {
    if samples.len() < 2 {
        return Err(Error::Domain(format!("need at least 2 samples, got {}", samples.len())));
    }
    if samples.iter().any(|(a, b)| !(a.is_finite() && b.is_finite())) {
        return Err(Error::Numeric("non-finite advantage sample".into()));
    }
    let a: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let b: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let total: Vec<f64> = samples.iter().map(|s| s.0 + s.1).collect();
    let n = samples.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1.0);
    let (var_agent, var_rest) = (variance(&a), variance(&b));
    let bound = (var_agent.sqrt() + var_rest.sqrt()).powi(2);
    Ok(AdvantageStats {
        var_total: variance(&total),
        var_agent,
        var_rest,
        cov,
        bound,
        samples: samples.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceRow {
    pub n_agents: usize,
    pub var_total: f64,
    pub var_per_agent: f64,
}

/// Variance of `A = Σ_i c_i` for iid `c_i ~ N(0, σ²)`, one row per agent
/// count. Each count draws from its own stream of `seed`.
pub fn variance_vs_agents(ns: &[usize], trials: usize, sigma: f64, seed: u64) -> Result<Vec<VarianceRow>> {
    if trials < 2 {
        return Err(Error::Domain("need at least 2 trials".into()));
    }
    if let Some(&n) = ns.iter().find(|&&n| n < 2) {
        return Err(Error::Domain(format!("agent count {n} is below 2")));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Domain(format!("sigma must be nonnegative, got {sigma}")));
    }
    ns.iter()
        .map(|&n| {
            let mut rng = ChaCha8Rng::seed_from_u64(crate::rng::derive_seed(seed, n as u64));
            let totals: Vec<f64> = (0..trials)
                .map(|_| (0..n).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).sum())
                .collect();
            let var_total = variance(&totals);
            Ok(VarianceRow {
                n_agents: n,
                var_total,
                var_per_agent: var_total / n as f64,
            })
        })
        .collect()
}

/// Whether `var_total` never decreases as the agent count grows.
pub fn is_nondecreasing(rows: &[VarianceRow]) -> bool {
    let mut sorted: Vec<&VarianceRow> = rows.iter().collect();
    sorted.sort_by_key(|r| r.n_agents);
    sorted.windows(2).all(|w| w[1].var_total >= w[0].var_total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reward_model::RewardModelConfig;
    use proptest::prelude::*;

    fn core_example() -> WeightMatrix {
        WeightMatrix::new(vec![0.5, 0.5], vec![vec![0.25, 0.75], vec![1.0, 0.0]])
    }

    #[test]
    fn potential_examples() {
        let phi = potential_sequence(&core_example(), 8.0, 0).unwrap();
        assert_eq!(phi.values, vec![0.0, 1.0, 5.0]);
        let zero = potential_sequence(&core_example(), 0.0, 1).unwrap();
        assert!(zero.values.iter().all(|&v| v == 0.0));
        let (t, n, r) = (4, 3, 6.0);
        let u = potential_sequence(&WeightMatrix::uniform(t, n), r, 2).unwrap();
        for (step, v) in u.values.iter().enumerate() {
            assert!((v - r * step as f64 / (t * n) as f64).abs() < 1e-12);
        }
        assert!(matches!(potential_sequence(&core_example(), 1.0, 2), Err(Error::Dimension(_))));
    }

    #[test]
    fn shaping_examples() {
        let rep = shaping_check(&core_example(), 8.0).unwrap();
        assert!(rep.passed());
        assert_eq!(rep.telescoped_total, 8.0);

        let mut r = redistribute_with_weights(&core_example(), 8.0).unwrap();
        r.rewards[1][0] += 1e-3;
        let rep = shaping_check_rewards(&r, &core_example()).unwrap();
        assert!(!rep.passed());
        assert_eq!(rep.violations.len(), 1);
        assert_eq!((rep.violations[0].t, rep.violations[0].agent), (1, 0));
    }

    #[test]
    fn delta_examples() {
        let w = core_example();
        // agent 0's column is [0.25, 1.0]
        assert!((delta_k(&w, 0).unwrap() - 0.625).abs() < 1e-15);
        let sole = WeightMatrix::new(vec![0.3, 0.7], vec![vec![1.0, 0.0], vec![1.0, 0.0]]);
        assert!((delta_k(&sole, 0).unwrap() - 1.0).abs() < 1e-15);
        assert!(delta_k(&sole, 1).unwrap().abs() < 1e-15);
        assert!(matches!(delta_k(&w, 5), Err(Error::Dimension(_))));
    }

    #[test]
    fn pathwise_examples() {
        let w = core_example();
        let r = redistribute_with_weights(&w, 8.0).unwrap();
        let rep = pathwise_identity_check(&r, &w, 0).unwrap();
        assert_eq!(rep.agent_return, 5.0);
        assert!(rep.passed);
        let r0 = redistribute_with_weights(&w, 0.0).unwrap();
        let rep = pathwise_identity_check(&r0, &w, 1).unwrap();
        assert_eq!((rep.agent_return, rep.scaled_return), (0.0, 0.0));
        let other = RedistributionMatrix::zeros(3, 2, 0.0);
        assert!(pathwise_identity_check(&other, &w, 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]

        #[test]
        fn identities_hold_on_random_weights(seed in any::<u64>(), ret in -100.0f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = random_weights(&mut rng, 32, 8);
            prop_assert!(validate_weights(&w).unwrap().is_ok());
            let r = redistribute_with_weights(&w, ret).unwrap();
            prop_assert!(shaping_check(&w, ret).unwrap().passed());
            for k in 0..w.n_agents() {
                let a = delta_k(&w, k).unwrap();
                let b = delta_k_sum(&w, k).unwrap();
                prop_assert!((a - b).abs() <= 1e-12);
                prop_assert!((-DELTA_RANGE_TOL..=1.0 + DELTA_RANGE_TOL).contains(&a));
                prop_assert!(pathwise_identity_check(&r, &w, k).unwrap().passed);
            }
        }
    }

    #[test]
    fn gradient_checks_pass_for_every_fixture_and_generator() {
        let cfg = RewardModelConfig {
            d_model: 8,
            n_blocks: 1,
            ..Default::default()
        };
        for m in MicroDecPomdp::suite(3) {
            let model = RewardModel::new(cfg.clone(), m.n_obs + m.n_actions).unwrap();
            let gens = [
                WeightGenerator::Oracle,
                WeightGenerator::Uniform,
                WeightGenerator::HashedRandom(17),
                WeightGenerator::Model(&model),
            ];
            for gen in gens {
                for k in 0..m.n_agents {
                    let rep = pg_equivalence_report(&m, gen, k).unwrap();
                    assert!(rep.passed(1e-9), "{} / {} / agent {k}: {rep:?}", m.name, rep.generator);
                }
            }
        }
    }

    #[test]
    fn uniform_weights_scale_gradient_by_one_over_n() {
        let m = MicroDecPomdp::three_agents(4);
        let rep = pg_equivalence_report(&m, WeightGenerator::Uniform, 2).unwrap();
        for (a, e) in rep.agent_grad.iter().zip(&rep.env_grad) {
            assert!((a - e / 3.0).abs() < 1e-12);
        }
        assert!(rep.angle_deg.abs() < 1e-6 || rep.angle_deg.is_nan());
    }

    #[test]
    fn varying_delta_can_tilt_the_gradient() {
        // reported, not asserted to be zero
        let m = MicroDecPomdp::random_stochastic(8);
        let rep = pg_equivalence_report(&m, WeightGenerator::HashedRandom(2), 0).unwrap();
        assert!(rep.angle_deg.is_finite());
        assert!(rep.delta_min < rep.delta_max);
    }

    #[test]
    fn advantage_examples() {
        let xs: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let s = advantage_decomposition(&xs.iter().map(|&x| (x, 0.0)).collect::<Vec<_>>()).unwrap();
        assert!((s.var_total - s.var_agent).abs() < 1e-12);
        assert!((s.bound - s.var_agent).abs() < 1e-12);
        let s = advantage_decomposition(&xs.iter().map(|&x| (x, x)).collect::<Vec<_>>()).unwrap();
        assert!((s.var_total - 4.0 * s.var_agent).abs() < 1e-12);
        assert!((s.var_total - s.bound).abs() < 1e-12);
        assert!(s.bound_holds());
        let s = advantage_decomposition(&xs.iter().map(|&x| (x, -x)).collect::<Vec<_>>()).unwrap();
        assert!(s.var_total.abs() < 1e-12 && s.bound_holds());
        assert!(matches!(advantage_decomposition(&[(1.0, 2.0)]), Err(Error::Domain(_))));
    }

    #[test]
    fn independent_normals_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<(f64, f64)> = (0..100_000)
            .map(|_| (StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)))
            .collect();
        let s = advantage_decomposition(&samples).unwrap();
        assert!((s.var_total - 2.0).abs() < 0.05);
        assert!((s.bound - 4.0).abs() < 0.1);
        assert!(s.bound_holds());
    }

    #[test]
    fn variance_grows_with_agents() {
        let rows = variance_vs_agents(&[2, 4, 8], 100_000, 1.0, 5).unwrap();
        for r in &rows {
            assert!((0.8..=1.2).contains(&r.var_per_agent), "{r:?}");
        }
        assert!(is_nondecreasing(&rows));
        let ratio = rows[2].var_total / rows[0].var_total;
        assert!((ratio - 4.0).abs() <= 0.8, "ratio {ratio}");
        let flat = variance_vs_agents(&[2, 4], 100, 0.0, 1).unwrap();
        assert!(flat.iter().all(|r| r.var_total == 0.0));
        assert!(variance_vs_agents(&[1], 10, 1.0, 0).is_err());
    }
}
