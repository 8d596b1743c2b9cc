//! The experimental arms: every arm turns a finished episode into a `T x N`
//! reward matrix.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::envs::EpisodeResult;
use crate::error::{Error, Result};
use crate::redistribution::{
    redistribute_with_weights, weights_from_contributions, ContributionMatrix, RedistributionMatrix, WeightMatrix,
    DEFAULT_EPS,
};
use crate::reward_model::RewardModel;
use crate::trajectory::{TokenEncoder, TokenGrid, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RedistributorKind {
    Episodic,
    Ircr,
    Temporal,
    Oracle,
    Tar2,
}

impl RedistributorKind {
    pub const ALL: [RedistributorKind; 5] = [Self::Episodic, Self::Ircr, Self::Temporal, Self::Oracle, Self::Tar2];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Episodic => "episodic",
            Self::Ircr => "ircr",
            Self::Temporal => "temporal",
            Self::Oracle => "oracle",
            Self::Tar2 => "tar2",
        }
    }

    /// Arms whose signal comes from the learned reward model.
    pub fn uses_model(self) -> bool {
        matches!(self, Self::Temporal | Self::Tar2)
    }
}

impl fmt::Display for RedistributorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RedistributorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown redistributor '{s}' (episodic|ircr|temporal|oracle|tar2)")))
    }
}

/// How a per-step global reward reaches the agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    /// Equal split across agents; the matrix sums to the return.
    #[default]
    Conserving,
    /// Every agent sees the full global reward; sums to `N · R`.
    Broadcast,
}

fn shape(traj: &Trajectory) -> Result<(usize, usize)> {
    traj.validate()?;
    Ok((traj.horizon(), traj.n_agents()))
}

fn spread(mut m: RedistributionMatrix, mode: SplitMode) -> RedistributionMatrix {
    if mode == SplitMode::Broadcast {
        let n = m.n_agents() as f64;
        for v in m.rewards.iter_mut().flatten() {
            *v *= n;
        }
        m.conserving = false;
    }
    m
}

/// Whole return on the final step, split equally across agents.
pub fn redistribute_episodic(traj: &Trajectory, mode: SplitMode) -> Result<RedistributionMatrix> {
    let (t, n) = shape(traj)?;
    let ret = traj.episodic_return;
    let mut m = RedistributionMatrix::zeros(t, n, ret);
    m.rewards[t - 1].fill(ret / n as f64);
    Ok(spread(m, mode))
}

/// Uniform over time: `r_global,t = R / T`.
pub fn redistribute_ircr(traj: &Trajectory, mode: SplitMode) -> Result<RedistributionMatrix> {
    let (t, n) = shape(traj)?;
    let ret = traj.episodic_return;
    let cell = ret / t as f64 / n as f64;
    let m = RedistributionMatrix {
        rewards: vec![vec![cell; n]; t],
        source_return: ret,
        conserving: true,
    };
    Ok(spread(m, mode))
}

fn check_grid(tokens: &TokenGrid, traj: &Trajectory) -> Result<()> {
    let (t, n) = shape(traj)?;
    if tokens.horizon != t || tokens.n_agents != n {
        return Err(Error::Dimension(format!(
            "tokens are {}x{} but the trajectory is {t}x{n}",
            tokens.horizon, tokens.n_agents
        )));
    }
    Ok(())
}

/// Temporal weights only: the model's per-step share of its predicted
/// return, with the agent split forced uniform.
pub fn temporal_weights(model: &RewardModel, tokens: &TokenGrid) -> Result<WeightMatrix> {
    let out = model.forward(tokens)?;
    let w = weights_from_contributions(&out.contributions, DEFAULT_EPS)?;
    let n = tokens.n_agents;
    Ok(WeightMatrix {
        temporal: w.temporal,
        agent: vec![vec![1.0 / n as f64; n]; tokens.horizon],
    })
}

pub fn redistribute_temporal_only(
    traj: &Trajectory,
    tokens: &TokenGrid,
    model: &RewardModel,
) -> Result<RedistributionMatrix> {
    check_grid(tokens, traj)?;
    redistribute_with_weights(&temporal_weights(model, tokens)?, traj.episodic_return)
}

/// Ground-truth credit normalised onto the simplex.
pub fn redistribute_oracle(traj: &Trajectory, oracle: &ContributionMatrix) -> Result<RedistributionMatrix> {
    let (t, n) = shape(traj)?;
    if oracle.horizon() != t || oracle.n_agents() != n {
        return Err(Error::Dimension(format!(
            "oracle is {}x{} but the trajectory is {t}x{n}",
            oracle.horizon(),
            oracle.n_agents()
        )));
    }
    let w = weights_from_contributions(oracle, DEFAULT_EPS)?;
    redistribute_with_weights(&w, traj.episodic_return)
}

pub fn redistribute_tar2(traj: &Trajectory, tokens: &TokenGrid, model: &RewardModel) -> Result<RedistributionMatrix> {
    check_grid(tokens, traj)?;
    redistribute_with_weights(&model.extract_weights(tokens)?, traj.episodic_return)
}

/// One arm, holding a model reference where the arm needs one.
#[derive(Debug, Clone, Copy)]
pub enum Redistributor<'a> {
    Episodic(SplitMode),
    Ircr(SplitMode),
    Temporal(&'a RewardModel),
    Oracle,
    Tar2(&'a RewardModel),
}

impl<'a> Redistributor<'a> {
    /// Builds the arm for `kind`; model arms fail without a model.
    pub fn new(kind: RedistributorKind, mode: SplitMode, model: Option<&'a RewardModel>) -> Result<Self> {
        let need = || Error::State(format!("the {kind} arm needs a reward model"));
        Ok(match kind {
            RedistributorKind::Episodic => Self::Episodic(mode),
            RedistributorKind::Ircr => Self::Ircr(mode),
            RedistributorKind::Oracle => Self::Oracle,
            RedistributorKind::Temporal => Self::Temporal(model.ok_or_else(need)?),
            RedistributorKind::Tar2 => Self::Tar2(model.ok_or_else(need)?),
        })
    }

    pub fn kind(&self) -> RedistributorKind {
        match self {
            Self::Episodic(_) => RedistributorKind::Episodic,
            Self::Ircr(_) => RedistributorKind::Ircr,
            Self::Temporal(_) => RedistributorKind::Temporal,
            Self::Oracle => RedistributorKind::Oracle,
            Self::Tar2(_) => RedistributorKind::Tar2,
        }
    }

    pub fn redistribute(&self, ep: &EpisodeResult) -> Result<RedistributionMatrix> {
        let traj = &ep.trajectory;
        match self {
            Self::Episodic(mode) => redistribute_episodic(traj, *mode),
            Self::Ircr(mode) => redistribute_ircr(traj, *mode),
            Self::Oracle => redistribute_oracle(traj, &ep.oracle),
            Self::Temporal(model) => redistribute_temporal_only(traj, &encode(&ep.spec, traj)?, model),
            Self::Tar2(model) => redistribute_tar2(traj, &encode(&ep.spec, traj)?, model),
        }
    }
}

fn encode<E: TokenEncoder + ?Sized>(encoder: &E, traj: &Trajectory) -> Result<TokenGrid> {
    TokenGrid::encode(encoder, traj)
}
