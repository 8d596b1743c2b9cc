//! Independent learners over redistributed rewards, with a reward-model
//! warm-up schedule.

mod policy;

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use policy::{AgentPolicy, Featurizer, Identity, PolicyConfig, PolicyKind, PolicyParams};

use crate::envs::{run_episode, EnvSpec, EpisodeResult};
use crate::error::{Error, Result};
use crate::redistribution::RedistributionMatrix;
use crate::redistributors::{Redistributor, RedistributorKind, SplitMode};
use crate::reward_model::{FitReport, RewardModel, RewardModelConfig, Sample};
use crate::rng::{derive_seed, rng_for};
use crate::trajectory::{TokenEncoder, Trajectory};

const ROLLOUT_STREAM: u64 = 1 << 40;
const FIT_STREAM: u64 = 2 << 40;
const POLICY_STREAM: u64 = 3;
const MODEL_STREAM: u64 = 4;

/// Window of the trailing success rate used in summaries.
pub const SUCCESS_WINDOW: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Reinforce,
    Ppo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub clip: f64,
    /// Full-batch passes over each rollout buffer.
    pub epochs: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self { clip: 0.2, epochs: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub env: EnvSpec,
    pub redistributor: RedistributorKind,
    pub split: SplitMode,
    pub algorithm: Algorithm,
    pub episodes: usize,
    pub warmup_episodes: usize,
    pub refit_period: usize,
    pub model_buffer: usize,
    pub model_epochs: usize,
    pub freeze_model: bool,
    pub lr_policy: f64,
    /// Episodes per policy update.
    pub batch_size: usize,
    pub baseline_rate: f64,
    pub ppo: PpoConfig,
    pub policy: PolicyConfig,
    pub model: RewardModelConfig,
    /// Episodes between progress log lines.
    pub eval_period: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            env: EnvSpec::coordgrid(2, 3, 8),
            redistributor: RedistributorKind::Tar2,
            split: SplitMode::Conserving,
            algorithm: Algorithm::Reinforce,
            episodes: 5000,
            warmup_episodes: 200,
            refit_period: 100,
            model_buffer: 500,
            model_epochs: 5,
            freeze_model: false,
            lr_policy: 0.05,
            batch_size: 10,
            baseline_rate: 0.05,
            ppo: PpoConfig::default(),
            policy: PolicyConfig::default(),
            model: RewardModelConfig::default(),
            eval_period: 500,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.policy.validate()?;
        self.model.validate()?;
        if self.episodes == 0 {
            return Err(Error::Config("episodes must be positive".into()));
        }
        if self.warmup_episodes > self.episodes {
            return Err(Error::Config(format!(
                "warmup_episodes {} exceeds episodes {}",
                self.warmup_episodes, self.episodes
            )));
        }
        if self.batch_size == 0 || self.refit_period == 0 || self.model_buffer == 0 || self.eval_period == 0 {
            return Err(Error::Config(
                "batch_size, refit_period, model_buffer and eval_period must be positive".into(),
            ));
        }
        if !(self.lr_policy.is_finite() && self.lr_policy > 0.0) {
            return Err(Error::Config(format!("lr_policy must be positive, got {}", self.lr_policy)));
        }
        if !(0.0..=1.0).contains(&self.baseline_rate) {
            return Err(Error::Config(format!("baseline_rate must be in [0,1], got {}", self.baseline_rate)));
        }
        if !(self.ppo.clip > 0.0 && self.ppo.clip < 1.0) {
            return Err(Error::Config(format!("ppo.clip must be in (0,1), got {}", self.ppo.clip)));
        }
        if self.ppo.epochs == 0 {
            return Err(Error::Config("ppo.epochs must be positive".into()));
        }
        if self.env.horizon > self.model.max_len && self.redistributor.uses_model() {
            return Err(Error::Config(format!(
                "env horizon {} exceeds model.max_len {}",
                self.env.horizon, self.model.max_len
            )));
        }
        Ok(())
    }
}

/// Samples `n` episodes under `policy`; episode `i` draws its actions from
/// stream `i` of `seed`, so the buffer does not depend on thread count.
pub fn collect_rollouts(policy: &PolicyParams, spec: &EnvSpec, n: usize, seed: u64) -> Result<Vec<EpisodeResult>> {
    if n == 0 {
        return Err(Error::Domain("collect_rollouts needs n >= 1".into()));
    }
    spec.validate()?;
    if policy.n_agents() != spec.n_agents {
        return Err(Error::Dimension(format!(
            "policy has {} agents, env has {}",
            policy.n_agents(),
            spec.n_agents
        )));
    }
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, i as u64);
            let mut x = Vec::with_capacity(spec.feature_dim());
            run_episode(spec, |jo| {
                policy
                    .agents
                    .iter()
                    .zip(&jo.obs)
                    .map(|(a, o)| {
                        x.clear();
                        spec.features(o, &mut x);
                        a.sample(&x, &mut rng)
                    })
                    .collect()
            })
        })
        .collect()
}

/// Mean per-step policy entropy across agents along one trajectory.
pub fn mean_entropy<F: Featurizer + ?Sized>(policy: &PolicyParams, feat: &F, traj: &Trajectory) -> f64 {
    let mut x = Vec::with_capacity(feat.feature_dim());
    let mut total = 0.0;
    let mut count = 0usize;
    for obs_t in &traj.obs {
        for (a, o) in policy.agents.iter().zip(obs_t) {
            x.clear();
            feat.featurize(o, &mut x);
            total += a.entropy(&x);
            count += 1;
        }
    }
    total / count.max(1) as f64
}

/// `Σ_t ∇ log π_k(a_{k,t} | o_{k,t})` scaled by `signal[t]`.
pub fn episode_score<F: Featurizer + ?Sized>(
    agent: &AgentPolicy,
    feat: &F,
    traj: &Trajectory,
    k: usize,
    signal: &[f64],
) -> Vec<f64> {
    let mut g = vec![0.0; agent.n_params()];
    let mut x = Vec::with_capacity(feat.feature_dim());
    for (t, (obs_t, act_t)) in traj.obs.iter().zip(&traj.actions).enumerate() {
        if signal[t] == 0.0 {
            continue;
        }
        x.clear();
        feat.featurize(&obs_t[k], &mut x);
        agent.accumulate_log_prob_grad(&x, act_t[k], signal[t], &mut g);
    }
    g
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateStats {
    pub grad_norms: Vec<f64>,
    /// Batch mean of each agent's summed redistributed reward.
    pub mean_signal: Vec<f64>,
}

impl UpdateStats {
    pub fn mean_grad_norm(&self) -> f64 {
        self.grad_norms.iter().sum::<f64>() / self.grad_norms.len().max(1) as f64
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_buffer(policy: &PolicyParams, buffer: &[EpisodeResult], baseline: &[f64]) -> Result<()> {
    if buffer.is_empty() {
        return Err(Error::Domain("update needs a nonempty buffer".into()));
    }
    if baseline.len() != policy.n_agents() {
        return Err(Error::Dimension("baseline length must match agent count".into()));
    }
    if let Some(ep) = buffer.iter().find(|e| e.trajectory.n_agents() != policy.n_agents()) {
        return Err(Error::Dimension(format!(
            "episode has {} agents, policy has {}",
            ep.trajectory.n_agents(),
            policy.n_agents()
        )));
    }
    Ok(())
}

fn redistribute_all(buffer: &[EpisodeResult], redistributor: &Redistributor) -> Result<Vec<RedistributionMatrix>> {
    buffer.par_iter().map(|ep| redistributor.redistribute(ep)).collect()
}

/// Per-agent REINFORCE direction `mean_e Σ_t ∇ log π_k · (G_k − b_k)`.
pub fn reinforce_gradients<F: Featurizer + ?Sized>(
    policy: &PolicyParams,
    feat: &F,
    trajectories: &[&Trajectory],
    rewards: &[RedistributionMatrix],
    baseline: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let n_ep = trajectories.len() as f64;
    let grads: Vec<Vec<f64>> = policy
        .agents
        .par_iter()
        .enumerate()
        .map(|(k, agent)| {
            let mut g = vec![0.0; agent.n_params()];
            for (traj, r) in trajectories.iter().zip(rewards) {
                let signal = vec![r.agent_total(k) - baseline[k]; traj.horizon()];
                for (gj, sj) in g.iter_mut().zip(episode_score(agent, feat, traj, k, &signal)) {
                    *gj += sj / n_ep;
                }
            }
            g
        })
        .collect();
    for (k, g) in grads.iter().enumerate() {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite policy gradient for agent {k}")));
        }
    }
    Ok(grads)
}

/// One REINFORCE step per agent on that agent's redistributed return.
pub fn reinforce_update(
    policy: &mut PolicyParams,
    buffer: &[EpisodeResult],
    redistributor: &Redistributor,
    lr: f64,
    baseline: &[f64],
) -> Result<UpdateStats> {
    check_buffer(policy, buffer, baseline)?;
    let rewards = redistribute_all(buffer, redistributor)?;
    reinforce_step(policy, buffer, &rewards, lr, baseline)
}

fn reinforce_step(
    policy: &mut PolicyParams,
    buffer: &[EpisodeResult],
    rewards: &[RedistributionMatrix],
    lr: f64,
    baseline: &[f64],
) -> Result<UpdateStats> {
    let spec = &buffer[0].spec;
    let trajs: Vec<&Trajectory> = buffer.iter().map(|e| &e.trajectory).collect();
    let grads = reinforce_gradients(policy, spec, &trajs, rewards, baseline)?;
    for (agent, g) in policy.agents.iter_mut().zip(&grads) {
        for (p, gj) in agent.params.iter_mut().zip(g) {
            *p += lr * gj;
        }
    }
    Ok(UpdateStats {
        grad_norms: grads.iter().map(|g| norm(g)).collect(),
        mean_signal: mean_signals(rewards, policy.n_agents()),
    })
}

fn mean_signals(rewards: &[RedistributionMatrix], n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| rewards.iter().map(|r| r.agent_total(k)).sum::<f64>() / rewards.len() as f64)
        .collect()
}

/// Clipped surrogate `min(ρA, clip(ρ, 1−ε, 1+ε)A)` and whether the
/// unclipped branch is the active one (i.e. the gradient flows).
pub fn clipped_surrogate(ratio: f64, advantage: f64, eps: f64) -> (f64, bool) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * advantage;
    if unclipped <= clipped {
        (unclipped, true)
    } else {
        (clipped, false)
    }
}

struct PpoStep {
    x: Vec<f64>,
    action: usize,
    advantage: f64,
    old_logp: f64,
}

/// Clipped-surrogate ascent per agent with advantage
/// `return-to-go of r[·][k]` minus `baseline[k]`. Returns the gradient norm of
/// the first pass together with the mean summed signal.
pub fn ppo_clip_update(
    policy: &mut PolicyParams,
    buffer: &[EpisodeResult],
    redistributor: &Redistributor,
    cfg: &PpoConfig,
    lr: f64,
    baseline: &[f64],
) -> Result<UpdateStats> {
    check_buffer(policy, buffer, baseline)?;
    if !(cfg.clip > 0.0 && cfg.clip < 1.0) || cfg.epochs == 0 {
        return Err(Error::Config("ppo needs clip in (0,1) and epochs >= 1".into()));
    }
    let rewards = redistribute_all(buffer, redistributor)?;
    ppo_step(policy, buffer, &rewards, cfg, lr, baseline)
}

fn ppo_step(
    policy: &mut PolicyParams,
    buffer: &[EpisodeResult],
    rewards: &[RedistributionMatrix],
    cfg: &PpoConfig,
    lr: f64,
    baseline: &[f64],
) -> Result<UpdateStats> {
    let spec = &buffer[0].spec;
    let mut grad_norms = Vec::with_capacity(policy.n_agents());
    for (k, agent) in policy.agents.iter_mut().enumerate() {
        let mut steps = Vec::new();
        for (ep, r) in buffer.iter().zip(rewards) {
            let rtg = r.agent_return_to_go(k);
            for (t, (obs_t, act_t)) in ep.trajectory.obs.iter().zip(&ep.trajectory.actions).enumerate() {
                let x = spec.feature_vec(&obs_t[k]);
                let old_logp = agent.log_prob(&x, act_t[k]);
                steps.push(PpoStep {
                    x,
                    action: act_t[k],
                    advantage: rtg[t] - baseline[k],
                    old_logp,
                });
            }
        }
        let n = steps.len() as f64;
        let mut first_norm = None;
        for _ in 0..cfg.epochs {
            let mut g = vec![0.0; agent.n_params()];
            let mut surrogate = 0.0;
            for s in &steps {
                let ratio = (agent.log_prob(&s.x, s.action) - s.old_logp).exp();
                let (value, active) = clipped_surrogate(ratio, s.advantage, cfg.clip);
                surrogate += value / n;
                if active && s.advantage != 0.0 {
                    // ∇ρ = ρ ∇ log π
                    agent.accumulate_log_prob_grad(&s.x, s.action, ratio * s.advantage / n, &mut g);
                }
            }
            if !surrogate.is_finite() || g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite ppo loss for agent {k}")));
            }
            first_norm.get_or_insert(norm(&g));
            for (p, gj) in agent.params.iter_mut().zip(&g) {
                *p += lr * gj;
            }
        }
        grad_norms.push(first_norm.unwrap_or(0.0));
    }
    Ok(UpdateStats {
        grad_norms,
        mean_signal: mean_signals(rewards, policy.n_agents()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Warmup,
    Main,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Warmup => "warmup",
            Phase::Main => "main",
        }
    }
}

/// One row of the per-episode metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub episode: usize,
    pub phase: Phase,
    pub return_env: f64,
    pub success: u8,
    /// Mean over agents of `Σ_t r[t][k] / R`; NaN when `R = 0`.
    pub delta_mean: f64,
    /// Loss of the most recent reward-model fit; NaN before any fit.
    pub model_loss: f64,
    pub policy_grad_norm: f64,
    pub entropy: f64,
}

impl MetricsRow {
    pub const HEADER: [&'static str; 8] = [
        "episode",
        "phase",
        "return_env",
        "success",
        "delta_mean",
        "model_loss",
        "policy_grad_norm",
        "entropy",
    ];
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: PolicyParams,
    /// Present for every arm; only model arms ever fit it.
    pub model: RewardModel,
    pub model_fits: usize,
    pub last_fit: Option<FitReport>,
    pub successes: Vec<bool>,
}

impl TrainOutcome {
    pub fn final_success_rate(&self) -> f64 {
        trailing_mean(&self.successes, SUCCESS_WINDOW)
    }

    pub fn episodes_to(&self, threshold: f64) -> Option<usize> {
        episodes_to_threshold(&self.successes, SUCCESS_WINDOW, threshold)
    }
}

/// Mean of the last `window` flags (all of them if fewer).
pub fn trailing_mean(flags: &[bool], window: usize) -> f64 {
    let tail = &flags[flags.len().saturating_sub(window)..];
    if tail.is_empty() {
        return f64::NAN;
    }
    tail.iter().filter(|&&s| s).count() as f64 / tail.len() as f64
}

/// Number of episodes after which the trailing `window` success rate first
/// reaches `threshold`; needs a full window.
pub fn episodes_to_threshold(flags: &[bool], window: usize, threshold: f64) -> Option<usize> {
    if window == 0 || flags.len() < window {
        return None;
    }
    let mut hits = flags[..window].iter().filter(|&&s| s).count();
    let need = threshold * window as f64;
    if hits as f64 >= need {
        return Some(window);
    }
    for end in window..flags.len() {
        hits += usize::from(flags[end]);
        hits -= usize::from(flags[end - window]);
        if hits as f64 >= need {
            return Some(end + 1);
        }
    }
    None
}

fn fit_model(
    model: &mut RewardModel,
    buffer: &VecDeque<Sample>,
    cfg: &TrainConfig,
    fit_index: usize,
) -> Result<FitReport> {
    let data: Vec<Sample> = buffer.iter().cloned().collect();
    model.fit(
        &data,
        cfg.model_epochs,
        cfg.model.lr,
        cfg.model.batch_size,
        derive_seed(cfg.seed, FIT_STREAM + fit_index as u64),
    )
}

/// The reward model a run with `cfg` starts from.
pub fn initial_model(cfg: &TrainConfig) -> Result<RewardModel> {
    let mut model_cfg = cfg.model.clone();
    model_cfg.init_seed = derive_seed(cfg.seed ^ cfg.model.init_seed, MODEL_STREAM);
    RewardModel::new(model_cfg, cfg.env.token_dim())
}

/// Runs the two-phase schedule, handing each metrics row to `sink` as soon
/// as its batch is done. On error the rows already emitted stand.
pub fn run_training<S>(cfg: &TrainConfig, mut sink: S) -> Result<TrainOutcome>
where
    S: FnMut(&MetricsRow) -> Result<()>,
{
    cfg.validate()?;
    let spec = &cfg.env;
    let n = spec.n_agents;
    let mut policy = PolicyParams::new(
        &cfg.policy,
        n,
        spec.feature_dim(),
        spec.n_actions(),
        derive_seed(cfg.seed, POLICY_STREAM),
    )?;
    let mut model = initial_model(cfg)?;
    let uses_model = cfg.redistributor.uses_model();

    let mut fifo: VecDeque<Sample> = VecDeque::with_capacity(cfg.model_buffer);
    let mut since_fit = 0usize;
    let mut model_fits = 0usize;
    let mut last_fit: Option<FitReport> = None;
    let mut model_loss = f64::NAN;
    let mut baseline = vec![0.0; n];
    let mut successes = Vec::with_capacity(cfg.episodes);

    let mut ep = 0usize;
    while ep < cfg.episodes {
        // a batch never straddles the warm-up boundary
        let limit = if ep < cfg.warmup_episodes { cfg.warmup_episodes } else { cfg.episodes };
        let b = cfg.batch_size.min(limit - ep);
        let phase = if ep < cfg.warmup_episodes { Phase::Warmup } else { Phase::Main };
        let buffer = collect_rollouts(&policy, spec, b, derive_seed(cfg.seed, ROLLOUT_STREAM + ep as u64))?;

        if uses_model {
            for e in &buffer {
                if fifo.len() == cfg.model_buffer {
                    fifo.pop_front();
                }
                fifo.push_back(Sample::encode(spec, &e.trajectory)?);
            }
            since_fit += b;
            let warmup_end = phase == Phase::Warmup && ep + b == cfg.warmup_episodes;
            let may_refit = phase == Phase::Warmup || !cfg.freeze_model;
            let due = since_fit >= cfg.refit_period || warmup_end;
            if model_fits == 0 || (may_refit && due) {
                let report = fit_model(&mut model, &fifo, cfg, model_fits)?;
                model_loss = report.final_loss().unwrap_or(f64::NAN);
                last_fit = Some(report);
                model_fits += 1;
                since_fit = 0;
            }
        }

        let redistributor = match phase {
            Phase::Warmup => Redistributor::Episodic(SplitMode::Conserving),
            Phase::Main => Redistributor::new(cfg.redistributor, cfg.split, Some(&model))?,
        };
        let rewards = redistribute_all(&buffer, &redistributor)?;
        let entropies: Vec<f64> = buffer.iter().map(|e| mean_entropy(&policy, spec, &e.trajectory)).collect();
        let stats = match cfg.algorithm {
            Algorithm::Reinforce => reinforce_step(&mut policy, &buffer, &rewards, cfg.lr_policy, &baseline)?,
            Algorithm::Ppo => ppo_step(&mut policy, &buffer, &rewards, &cfg.ppo, cfg.lr_policy, &baseline)?,
        };
        policy.check_finite()?;
        for (bk, s) in baseline.iter_mut().zip(&stats.mean_signal) {
            let target = match cfg.algorithm {
                Algorithm::Reinforce => *s,
                // mean return-to-go over steps is what the ppo advantage centres on
                Algorithm::Ppo => *s / spec.horizon as f64,
            };
            *bk += cfg.baseline_rate * (target - *bk);
        }

        let grad_norm = stats.mean_grad_norm();
        for (i, (e, r)) in buffer.iter().zip(&rewards).enumerate() {
            let ret = e.episodic_return;
            let delta_mean = if ret == 0.0 { f64::NAN } else { r.total() / n as f64 / ret };
            successes.push(e.success);
            sink(&MetricsRow {
                episode: ep + i,
                phase,
                return_env: ret,
                success: u8::from(e.success),
                delta_mean,
                model_loss,
                policy_grad_norm: grad_norm,
                entropy: entropies[i],
            })?;
        }
        let done = ep + b;
        if done / cfg.eval_period != ep / cfg.eval_period {
            log::info!(
                "{} seed {}: episode {done}, trailing success {:.3}, model loss {model_loss:.4}",
                cfg.redistributor,
                cfg.seed,
                trailing_mean(&successes, SUCCESS_WINDOW)
            );
        }
        ep = done;
    }
    Ok(TrainOutcome {
        policy,
        model,
        model_fits,
        last_fit,
        successes,
    })
}
