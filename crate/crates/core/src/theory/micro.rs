//! Enumerable micro Dec-POMDPs with tabular softmax policies and an exact
//! policy-gradient oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::redistribution::{ContributionMatrix, RedistributionMatrix};
use crate::trajectory::Trajectory;

pub const MAX_STATES: usize = 8;
pub const MAX_ACTIONS: usize = 3;
pub const MAX_HORIZON: usize = 4;
pub const MAX_TRAJECTORIES: usize = 100_000;

const ROW_TOL: f64 = 1e-12;

/// A finite-horizon Dec-POMDP small enough to enumerate.
///
/// The hidden return is the sum of per-agent credit earned along the way
/// plus a bonus that depends on the final state. Agent `k` acts on its
/// current observation through `softmax(theta[k][obs])`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MicroDecPomdp {
    pub name: String,
    pub n_states: usize,
    pub n_agents: usize,
    pub n_actions: usize,
    pub n_obs: usize,
    pub horizon: usize,
    pub initial: Vec<f64>,
    /// `observe[s][i]`
    pub observe: Vec<Vec<usize>>,
    /// `transition[s][joint][s']`
    pub transition: Vec<Vec<Vec<f64>>>,
    /// `credit[s][joint][i] >= 0`
    pub credit: Vec<Vec<Vec<f64>>>,
    /// `terminal_bonus[s_T]`
    pub terminal_bonus: Vec<f64>,
    /// `theta[k][obs][action]`
    pub theta: Vec<Vec<Vec<f64>>>,
}

/// One enumerated (or sampled) trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub prob: f64,
    /// `T + 1` states including the final one.
    pub states: Vec<usize>,
    /// `obs[t][i]` as observation indices.
    pub obs: Vec<Vec<usize>>,
    pub actions: Vec<Vec<usize>>,
    pub credit: ContributionMatrix,
    pub ret: f64,
}

impl Path {
    /// Trajectory view with one-hot observations.
    pub fn trajectory(&self, n_obs: usize) -> Trajectory {
        Trajectory {
            obs: self
                .obs
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|&o| (0..n_obs).map(|j| if j == o { 1.0 } else { 0.0 }).collect())
                        .collect()
                })
                .collect(),
            actions: self.actions.clone(),
            episodic_return: self.ret,
        }
    }
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn random_theta(rng: &mut ChaCha8Rng, n_agents: usize, n_obs: usize, n_actions: usize) -> Vec<Vec<Vec<f64>>> {
    (0..n_agents)
        .map(|_| {
            (0..n_obs)
                .map(|_| (0..n_actions).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
                .collect()
        })
        .collect()
}

fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

impl MicroDecPomdp {
    pub fn n_joint(&self) -> usize {
        self.n_actions.pow(self.n_agents as u32)
    }

    pub fn joint_index(&self, actions: &[usize]) -> usize {
        actions.iter().rev().fold(0, |acc, &a| acc * self.n_actions + a)
    }

    pub fn joint_actions(&self, mut j: usize) -> Vec<usize> {
        (0..self.n_agents)
            .map(|_| {
                let a = j % self.n_actions;
                j /= self.n_actions;
                a
            })
            .collect()
    }

    pub fn policy(&self, k: usize, obs: usize) -> Vec<f64> {
        softmax(&self.theta[k][obs])
    }

    /// Length of agent `k`'s parameter vector.
    pub fn n_params(&self) -> usize {
        self.n_obs * self.n_actions
    }

    pub fn validate(&self) -> Result<()> {
        let (s, n, a) = (self.n_states, self.n_agents, self.n_actions);
        if s == 0 || s > MAX_STATES {
            return Err(Error::Capacity(format!("{s} states (limit {MAX_STATES})")));
        }
        if a == 0 || a > MAX_ACTIONS {
            return Err(Error::Capacity(format!("{a} actions (limit {MAX_ACTIONS})")));
        }
        if self.horizon == 0 || self.horizon > MAX_HORIZON {
            return Err(Error::Capacity(format!("horizon {} (limit {MAX_HORIZON})", self.horizon)));
        }
        if n == 0 || self.n_obs == 0 {
            return Err(Error::Dimension("need at least one agent and one observation".into()));
        }
        let j = self.n_joint();
        let dist_ok = |d: &[f64], len: usize| {
            d.len() == len && d.iter().all(|&p| (0.0..=1.0).contains(&p)) && (d.iter().sum::<f64>() - 1.0).abs() <= ROW_TOL
        };
        if !dist_ok(&self.initial, s) {
            return Err(Error::Constraint("initial distribution is not a distribution".into()));
        }
        if self.transition.len() != s || self.credit.len() != s || self.observe.len() != s {
            return Err(Error::Dimension("per-state tables must have one row per state".into()));
        }
        for st in 0..s {
            if self.observe[st].len() != n || self.observe[st].iter().any(|&o| o >= self.n_obs) {
                return Err(Error::Dimension(format!("observation row {st} is malformed")));
            }
            if self.transition[st].len() != j || self.credit[st].len() != j {
                return Err(Error::Dimension(format!("state {st} needs {j} joint-action rows")));
            }
            for (ja, row) in self.transition[st].iter().enumerate() {
                if !dist_ok(row, s) {
                    return Err(Error::Constraint(format!("transition row ({st}, {ja}) does not sum to 1")));
                }
            }
            for row in &self.credit[st] {
                if row.len() != n || row.iter().any(|&c| !(c >= 0.0 && c.is_finite())) {
                    return Err(Error::Domain(format!("credit rows of state {st} must be {n} nonnegative values")));
                }
            }
        }
        if self.terminal_bonus.len() != s || self.terminal_bonus.iter().any(|b| !b.is_finite()) {
            return Err(Error::Dimension("terminal bonus needs one finite value per state".into()));
        }
        if self.theta.len() != n
            || self
                .theta
                .iter()
                .any(|t| t.len() != self.n_obs || t.iter().any(|r| r.len() != a || r.iter().any(|x| !x.is_finite())))
        {
            return Err(Error::Dimension("theta must be [agent][obs][action] and finite".into()));
        }
        Ok(())
    }

    /// Number of branches with nonzero transition probability.
    pub fn trajectory_count(&self) -> f64 {
        // count[s] = trajectories from state s with `h` steps left
        let mut count = vec![1.0; self.n_states];
        for _ in 0..self.horizon {
            count = (0..self.n_states)
                .map(|s| {
                    self.transition[s]
                        .iter()
                        .map(|row| row.iter().zip(&count).filter(|(p, _)| **p > 0.0).map(|(_, c)| c).sum::<f64>())
                        .sum::<f64>()
                })
                .collect();
        }
        self.initial.iter().zip(&count).filter(|(p, _)| **p > 0.0).map(|(_, c)| c).sum()
    }

    /// Every trajectory with nonzero probability under the current policy.
    pub fn enumerate(&self) -> Result<Vec<Path>> {
        self.validate()?;
        let count = self.trajectory_count();
        if count > MAX_TRAJECTORIES as f64 {
            return Err(Error::Capacity(format!(
                "{} has {count} trajectories (limit {MAX_TRAJECTORIES})",
                self.name
            )));
        }
        let policies: Vec<Vec<Vec<f64>>> = (0..self.n_agents)
            .map(|k| (0..self.n_obs).map(|o| self.policy(k, o)).collect())
            .collect();
        let mut out = Vec::with_capacity(count as usize);
        for s0 in 0..self.n_states {
            if self.initial[s0] > 0.0 {
                let mut p = Partial {
                    prob: self.initial[s0],
                    states: vec![s0],
                    obs: Vec::new(),
                    actions: Vec::new(),
                    credit: Vec::new(),
                };
                self.expand(&policies, &mut p, &mut out);
            }
        }
        Ok(out)
    }

    fn expand(&self, policies: &[Vec<Vec<f64>>], p: &mut Partial, out: &mut Vec<Path>) {
        if p.actions.len() == self.horizon {
            let last = *p.states.last().expect("nonempty");
            let credit = ContributionMatrix {
                values: p.credit.clone(),
            };
            let ret = credit.total() + self.terminal_bonus[last];
            out.push(Path {
                prob: p.prob,
                states: p.states.clone(),
                obs: p.obs.clone(),
                actions: p.actions.clone(),
                credit,
                ret,
            });
            return;
        }
        let s = *p.states.last().expect("nonempty");
        let obs = self.observe[s].clone();
        for ja in 0..self.n_joint() {
            let acts = self.joint_actions(ja);
            let pa: f64 = acts.iter().enumerate().map(|(k, &a)| policies[k][obs[k]][a]).product();
            for s_next in 0..self.n_states {
                let pt = self.transition[s][ja][s_next];
                if pt <= 0.0 {
                    continue;
                }
                let saved = p.prob;
                p.prob *= pa * pt;
                p.states.push(s_next);
                p.obs.push(obs.clone());
                p.actions.push(acts.clone());
                p.credit.push(self.credit[s][ja].clone());
                self.expand(policies, p, out);
                p.credit.pop();
                p.actions.pop();
                p.obs.pop();
                p.states.pop();
                p.prob = saved;
            }
        }
    }

    /// Draws one trajectory from the current policy.
    pub fn sample(&self, rng: &mut impl Rng) -> Path {
        fn draw(rng: &mut impl Rng, dist: &[f64]) -> usize {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (i, &p) in dist.iter().enumerate() {
                acc += p;
                if u < acc {
                    return i;
                }
            }
            dist.iter().rposition(|&p| p > 0.0).unwrap_or(0)
        }
        let mut s = draw(rng, &self.initial);
        let mut path = Path {
            prob: 1.0,
            states: vec![s],
            obs: Vec::with_capacity(self.horizon),
            actions: Vec::with_capacity(self.horizon),
            credit: ContributionMatrix { values: Vec::new() },
            ret: 0.0,
        };
        for _ in 0..self.horizon {
            let obs = self.observe[s].clone();
            let acts: Vec<usize> = (0..self.n_agents).map(|k| draw(rng, &self.policy(k, obs[k]))).collect();
            let ja = self.joint_index(&acts);
            path.credit.values.push(self.credit[s][ja].clone());
            s = draw(rng, &self.transition[s][ja]);
            path.states.push(s);
            path.obs.push(obs);
            path.actions.push(acts);
        }
        path.ret = path.credit.total() + self.terminal_bonus[s];
        path
    }

    /// `∂ log P(τ) / ∂ theta[k]`, flattened as `obs * n_actions + action`.
    pub fn score(&self, path: &Path, k: usize) -> Vec<f64> {
        let mut g = vec![0.0; self.n_params()];
        for (obs, acts) in path.obs.iter().zip(&path.actions) {
            let o = obs[k];
            let pi = self.policy(k, o);
            for (a2, p) in pi.iter().enumerate() {
                let ind = if a2 == acts[k] { 1.0 } else { 0.0 };
                g[o * self.n_actions + a2] += ind - p;
            }
        }
        g
    }

    /// `CoordGrid` with a two-cell corridor: two agents start at cell 0,
    /// credit 1 for stepping onto the flag, payout 10 when both arrive and
    /// 2.5 when one does.
    pub fn coordgrid(seed: u64) -> Self {
        let (n, a, cells) = (2, 3, 2);
        let s_count = cells * cells;
        let mut m = Self::empty("coordgrid-micro", s_count, n, a, cells, 3);
        m.initial[0] = 1.0;
        for s in 0..s_count {
            let pos = [s % cells, s / cells];
            m.observe[s] = pos.to_vec();
            for ja in 0..m.n_joint() {
                let acts = m.joint_actions(ja);
                let mut next = pos;
                let mut credit = vec![0.0; n];
                for i in 0..n {
                    if pos[i] == cells - 1 {
                        continue;
                    }
                    next[i] = match acts[i] {
                        0 => pos[i].saturating_sub(1),
                        2 => pos[i] + 1,
                        _ => pos[i],
                    };
                    if next[i] > pos[i] {
                        credit[i] = 1.0;
                    }
                }
                m.transition[s][ja][next[0] + cells * next[1]] = 1.0;
                m.credit[s][ja] = credit;
            }
            let reached = pos.iter().filter(|&&p| p == cells - 1).count() as f64;
            let payout = if reached == n as f64 { 10.0 } else { 5.0 * reached / n as f64 };
            m.terminal_bonus[s] = payout - reached;
        }
        m.theta = random_theta(&mut ChaCha8Rng::seed_from_u64(seed), n, cells, a);
        m
    }

    /// Four hidden states with dense random dynamics; each agent sees one
    /// bit of the state.
    pub fn random_stochastic(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Self::empty("random-stochastic", 4, 2, 2, 2, 3);
        m.initial = random_simplex(&mut rng, 4);
        for s in 0..4 {
            m.observe[s] = vec![s % 2, s / 2];
            for ja in 0..m.n_joint() {
                m.transition[s][ja] = random_simplex(&mut rng, 4);
                m.credit[s][ja] = (0..2).map(|_| rng.random_range(0.0..1.0)).collect();
            }
            m.terminal_bonus[s] = rng.random_range(-1.0..2.0);
        }
        m.theta = random_theta(&mut rng, 2, 2, 2);
        m
    }

    /// States 0 and 1 look identical to both agents; only state 2 is
    /// distinguishable.
    pub fn aliased(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Self::empty("aliased-observation", 3, 2, 3, 2, 3);
        m.initial = vec![0.5, 0.5, 0.0];
        for s in 0..3 {
            let o = usize::from(s == 2);
            m.observe[s] = vec![o, o];
            for ja in 0..m.n_joint() {
                let acts = m.joint_actions(ja);
                // coordinated action 2 heads for the distinguishable state
                let target = if acts == [2, 2] { 2 } else { rng.random_range(0..2) };
                let other = (target + 1 + rng.random_range(0..2)) % 3;
                let p = rng.random_range(0.6..0.95);
                m.transition[s][ja][target] += p;
                m.transition[s][ja][other] += 1.0 - p;
                m.credit[s][ja] = acts.iter().map(|&a| if s == 1 && a == 1 { 1.0 } else { 0.1 * a as f64 }).collect();
            }
            m.terminal_bonus[s] = if s == 2 { 3.0 } else { 0.0 };
        }
        m.theta = random_theta(&mut rng, 2, 2, 3);
        m
    }

    /// Three agents, two states, fully observed, random dynamics.
    pub fn three_agents(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Self::empty("three-agents", 2, 3, 2, 2, 3);
        m.initial = vec![1.0, 0.0];
        for s in 0..2 {
            m.observe[s] = vec![s; 3];
            for ja in 0..m.n_joint() {
                m.transition[s][ja] = random_simplex(&mut rng, 2);
                m.credit[s][ja] = (0..3)
                    .map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..1.0) })
                    .collect();
            }
            m.terminal_bonus[s] = rng.random_range(0.0..1.0);
        }
        m.theta = random_theta(&mut rng, 3, 2, 2);
        m
    }

    /// The fixtures exercised by the gradient suite.
    pub fn suite(seed: u64) -> Vec<Self> {
        vec![
            Self::coordgrid(seed),
            Self::random_stochastic(seed.wrapping_add(1)),
            Self::aliased(seed.wrapping_add(2)),
            Self::three_agents(seed.wrapping_add(3)),
        ]
    }

    fn empty(name: &str, s: usize, n: usize, a: usize, n_obs: usize, horizon: usize) -> Self {
        let j = a.pow(n as u32);
        Self {
            name: name.into(),
            n_states: s,
            n_agents: n,
            n_actions: a,
            n_obs,
            horizon,
            initial: vec![0.0; s],
            observe: vec![vec![0; n]; s],
            transition: vec![vec![vec![0.0; s]; j]; s],
            credit: vec![vec![vec![0.0; n]; j]; s],
            terminal_bonus: vec![0.0; s],
            theta: vec![vec![vec![0.0; a]; n_obs]; n],
        }
    }
}

struct Partial {
    prob: f64,
    states: Vec<usize>,
    obs: Vec<Vec<usize>>,
    actions: Vec<Vec<usize>>,
    credit: Vec<Vec<f64>>,
}

/// `∇_{θ_k} Σ_τ P(τ) f(τ)` for a θ-independent `f`.
pub fn exact_gradient<F>(m: &MicroDecPomdp, paths: &[Path], k: usize, f: F) -> Result<Vec<f64>>
where
    F: FnMut(&Path) -> Result<f64>,
{
    if k >= m.n_agents {
        return Err(Error::Dimension(format!("agent {k} of {}", m.n_agents)));
    }
    let values: Vec<f64> = paths.iter().map(f).collect::<Result<_>>()?;
    Ok(weighted_gradient(m, paths, k, &values))
}

/// `Σ_τ P(τ) values[τ] ∇_{θ_k} log P(τ)` with `values` aligned to `paths`.
pub fn weighted_gradient(m: &MicroDecPomdp, paths: &[Path], k: usize, values: &[f64]) -> Vec<f64> {
    assert_eq!(paths.len(), values.len(), "one value per path");
    let mut g = vec![0.0; m.n_params()];
    for (p, &v) in paths.iter().zip(values) {
        if v == 0.0 {
            continue;
        }
        for (gi, s) in g.iter_mut().zip(m.score(p, k)) {
            *gi += p.prob * v * s;
        }
    }
    g
}

/// Exact gradient of agent `k`'s expected redistributed return
/// `E[Σ_t r[t][k]]` under a frozen reward map.
pub fn enumerate_exact_gradient<F>(m: &MicroDecPomdp, mut reward_map: F, k: usize) -> Result<Vec<f64>>
where
    F: FnMut(&Path) -> Result<RedistributionMatrix>,
{
    let paths = m.enumerate()?;
    exact_gradient(m, &paths, k, |p| {
        let r = reward_map(p)?;
        if r.horizon() != m.horizon || r.n_agents() != m.n_agents {
            return Err(Error::Dimension("reward map returned the wrong shape".into()));
        }
        Ok(r.agent_total(k))
    })
}

/// Monte-Carlo REINFORCE estimate with per-coordinate standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate {
    pub mean: Vec<f64>,
    pub std_err: Vec<f64>,
    pub samples: usize,
}

pub fn reinforce_estimate<F>(m: &MicroDecPomdp, k: usize, samples: usize, seed: u64, mut f: F) -> Result<McEstimate>
where
    F: FnMut(&Path) -> Result<f64>,
{
    m.validate()?;
    if samples < 2 {
        return Err(Error::Domain("need at least two samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = m.n_params();
    let (mut sum, mut sum_sq) = (vec![0.0; d], vec![0.0; d]);
    for _ in 0..samples {
        let p = m.sample(&mut rng);
        let v = f(&p)?;
        for (j, s) in m.score(&p, k).into_iter().enumerate() {
            let x = v * s;
            sum[j] += x;
            sum_sq[j] += x * x;
        }
    }
    let n = samples as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std_err = sum_sq
        .iter()
        .zip(&mean)
        .map(|(sq, mu)| ((sq / n - mu * mu).max(0.0) * n / (n - 1.0) / n).sqrt())
        .collect();
    Ok(McEstimate { mean, std_err, samples })
}
