use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A multi-agent trajectory: local observations and actions for each agent at
/// each step, plus the episodic return revealed at termination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// `obs[t][i]`: agent `i`'s local observation when acting at step `t`.
    pub obs: Vec<Vec<Vec<f64>>>,
    /// `actions[t][i]`.
    pub actions: Vec<Vec<usize>>,
    pub episodic_return: f64,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn n_agents(&self) -> usize {
        self.actions.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.horizon();
        if t == 0 {
            return Err(Error::Dimension("trajectory has no steps".into()));
        }
        let n = self.n_agents();
        if n == 0 {
            return Err(Error::Dimension("trajectory has no agents".into()));
        }
        if self.obs.len() != t {
            return Err(Error::Dimension(format!(
                "{} observation steps for {} action steps",
                self.obs.len(),
                t
            )));
        }
        if self.actions.iter().any(|a| a.len() != n) || self.obs.iter().any(|o| o.len() != n) {
            return Err(Error::Dimension("every step must carry N agents".into()));
        }
        Ok(())
    }
}

/// Maps a (local observation, action) pair to the token fed to the reward
/// model. Implemented per environment so the model has a fixed vocabulary.
pub trait TokenEncoder {
    fn token_dim(&self) -> usize;
    fn encode_token(&self, obs: &[f64], action: usize, out: &mut Vec<f64>);
}

/// Tokens for every (t, i) cell, stored row-major with row index `t * N + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    pub horizon: usize,
    pub n_agents: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl TokenGrid {
    pub fn encode<E: TokenEncoder + ?Sized>(encoder: &E, traj: &Trajectory) -> Result<Self> {
        traj.validate()?;
        let (t, n, dim) = (traj.horizon(), traj.n_agents(), encoder.token_dim());
        let mut data = Vec::with_capacity(t * n * dim);
        let mut buf = Vec::with_capacity(dim);
        for step in 0..t {
            for i in 0..n {
                buf.clear();
                encoder.encode_token(&traj.obs[step][i], traj.actions[step][i], &mut buf);
                if buf.len() != dim {
                    return Err(Error::Dimension(format!(
                        "encoder produced {} features, expected {}",
                        buf.len(),
                        dim
                    )));
                }
                data.extend_from_slice(&buf);
            }
        }
        Ok(Self {
            horizon: t,
            n_agents: n,
            dim,
            data,
        })
    }

    pub fn token(&self, t: usize, i: usize) -> &[f64] {
        let r = t * self.n_agents + i;
        &self.data[r * self.dim..(r + 1) * self.dim]
    }
}

/// Encodes `obs` verbatim followed by a one-hot action.
#[derive(Debug, Clone, Copy)]
pub struct ConcatOneHot {
    pub obs_dim: usize,
    pub n_actions: usize,
}

impl TokenEncoder for ConcatOneHot {
    fn token_dim(&self) -> usize {
        self.obs_dim + self.n_actions
    }

    fn encode_token(&self, obs: &[f64], action: usize, out: &mut Vec<f64>) {
        out.extend_from_slice(obs);
        for a in 0..self.n_actions {
            out.push(if a == action { 1.0 } else { 0.0 });
        }
    }
}
