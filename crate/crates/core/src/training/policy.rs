//! Per-agent softmax policies over local observation features.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::persist;
use crate::rng::rng_for;

const FORMAT: &str = "tar2-policy";

/// Maps a raw local observation to the policy's input features.
pub trait Featurizer: Sync {
    fn feature_dim(&self) -> usize;
    fn featurize(&self, obs: &[f64], out: &mut Vec<f64>);
}

impl Featurizer for EnvSpec {
    fn feature_dim(&self) -> usize {
        EnvSpec::feature_dim(self)
    }

    fn featurize(&self, obs: &[f64], out: &mut Vec<f64>) {
        self.features(obs, out);
    }
}

/// Uses the observation verbatim.
#[derive(Debug, Clone, Copy)]
pub struct Identity(pub usize);

impl Featurizer for Identity {
    fn feature_dim(&self) -> usize {
        self.0
    }

    fn featurize(&self, obs: &[f64], out: &mut Vec<f64>) {
        out.extend_from_slice(obs);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    /// Softmax over `xᵀW`; tabular when `x` is one-hot.
    Linear,
    /// One tanh hidden layer.
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    pub hidden: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            kind: PolicyKind::Linear,
            hidden: 16,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kind == PolicyKind::Mlp && self.hidden == 0 {
            return Err(Error::Config("policy.hidden must be positive for an mlp policy".into()));
        }
        Ok(())
    }
}

/// One agent's parameters. Linear: `W[in][A]`. Mlp: `W1[in][H]`, `b1[H]`,
/// `W2[H][A]`, `b2[A]`, in that order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentPolicy {
    pub kind: PolicyKind,
    pub in_dim: usize,
    pub hidden: usize,
    pub n_actions: usize,
    #[serde(skip)]
    pub params: Vec<f64>,
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
}

impl AgentPolicy {
    fn n_params_for(kind: PolicyKind, in_dim: usize, hidden: usize, n_actions: usize) -> usize {
        match kind {
            PolicyKind::Linear => in_dim * n_actions,
            PolicyKind::Mlp => in_dim * hidden + hidden + hidden * n_actions + n_actions,
        }
    }

    /// Zero output weights, so the initial policy is uniform.
    pub fn new(cfg: &PolicyConfig, in_dim: usize, n_actions: usize, rng: &mut impl Rng) -> Self {
        let hidden = if cfg.kind == PolicyKind::Mlp { cfg.hidden } else { 0 };
        let mut params = vec![0.0; Self::n_params_for(cfg.kind, in_dim, hidden, n_actions)];
        if cfg.kind == PolicyKind::Mlp {
            let dist = Normal::new(0.0, 1.0 / (in_dim as f64).sqrt()).expect("positive std");
            params[..in_dim * hidden].iter_mut().for_each(|v| *v = dist.sample(rng));
        }
        Self {
            kind: cfg.kind,
            in_dim,
            hidden,
            n_actions,
            params,
        }
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn hidden_layer(&self, x: &[f64]) -> Vec<f64> {
        let h = self.hidden;
        let w1 = &self.params[..self.in_dim * h];
        let b1 = &self.params[self.in_dim * h..self.in_dim * h + h];
        (0..h)
            .map(|j| (b1[j] + x.iter().enumerate().map(|(i, xi)| xi * w1[i * h + j]).sum::<f64>()).tanh())
            .collect()
    }

    pub fn probs(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        let a = self.n_actions;
        let mut z = vec![0.0; a];
        match self.kind {
            PolicyKind::Linear => {
                for (i, &xi) in x.iter().enumerate() {
                    if xi == 0.0 {
                        continue;
                    }
                    for (b, zb) in z.iter_mut().enumerate() {
                        *zb += xi * self.params[i * a + b];
                    }
                }
            }
            PolicyKind::Mlp => {
                let hv = self.hidden_layer(x);
                let off = self.in_dim * self.hidden + self.hidden;
                let w2 = &self.params[off..off + self.hidden * a];
                let b2 = &self.params[off + self.hidden * a..];
                for (b, zb) in z.iter_mut().enumerate() {
                    *zb = b2[b] + hv.iter().enumerate().map(|(j, hj)| hj * w2[j * a + b]).sum::<f64>();
                }
            }
        }
        softmax_in_place(&mut z);
        z
    }

    pub fn log_prob(&self, x: &[f64], action: usize) -> f64 {
        self.probs(x)[action].ln()
    }

    pub fn entropy(&self, x: &[f64]) -> f64 {
        -self.probs(x).iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
    }

    pub fn sample(&self, x: &[f64], rng: &mut impl Rng) -> usize {
        let p = self.probs(x);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (a, &pa) in p.iter().enumerate() {
            acc += pa;
            if u < acc {
                return a;
            }
        }
        p.iter().rposition(|&q| q > 0.0).unwrap_or(0)
    }

    /// Adds `scale · ∇ log π(action | x)` to `grad`.
    pub fn accumulate_log_prob_grad(&self, x: &[f64], action: usize, scale: f64, grad: &mut [f64]) {
        let a = self.n_actions;
        let mut dz = self.probs(x);
        for v in dz.iter_mut() {
            *v = -*v;
        }
        dz[action] += 1.0;
        match self.kind {
            PolicyKind::Linear => {
                for (i, &xi) in x.iter().enumerate() {
                    if xi == 0.0 {
                        continue;
                    }
                    for b in 0..a {
                        grad[i * a + b] += scale * xi * dz[b];
                    }
                }
            }
            PolicyKind::Mlp => {
                let h = self.hidden;
                let hv = self.hidden_layer(x);
                let off = self.in_dim * h + h;
                for j in 0..h {
                    for b in 0..a {
                        grad[off + j * a + b] += scale * hv[j] * dz[b];
                    }
                }
                for b in 0..a {
                    grad[off + h * a + b] += scale * dz[b];
                }
                let w2 = &self.params[off..off + h * a];
                for j in 0..h {
                    let dh: f64 = (0..a).map(|b| w2[j * a + b] * dz[b]).sum::<f64>() * (1.0 - hv[j] * hv[j]);
                    if dh == 0.0 {
                        continue;
                    }
                    for (i, &xi) in x.iter().enumerate() {
                        grad[i * h + j] += scale * xi * dh;
                    }
                    grad[self.in_dim * h + j] += scale * dh;
                }
            }
        }
    }
}

/// Independent per-agent policies; no parameter is shared across agents.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub agents: Vec<AgentPolicy>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    agents: Vec<AgentPolicy>,
}

impl PolicyParams {
    /// Agent `k` draws its initial parameters from stream `k` of `seed`.
    pub fn new(cfg: &PolicyConfig, n_agents: usize, in_dim: usize, n_actions: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if n_agents == 0 || in_dim == 0 || n_actions == 0 {
            return Err(Error::Dimension("policy needs agents, features and actions".into()));
        }
        Ok(Self {
            agents: (0..n_agents)
                .map(|k| AgentPolicy::new(cfg, in_dim, n_actions, &mut rng_for(seed, k as u64)))
                .collect(),
        })
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn check_finite(&self) -> Result<()> {
        for (k, a) in self.agents.iter().enumerate() {
            if a.params.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("agent {k} has non-finite policy parameters")));
            }
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let header = Header {
            format: FORMAT.into(),
            agents: self.agents.clone(),
        };
        let flat: Vec<f64> = self.agents.iter().flat_map(|a| a.params.iter().copied()).collect();
        persist::write_flat(out, &header, &flat)
    }

    pub fn read<R: Read>(input: R) -> Result<Self> {
        let (header, flat): (Header, Vec<f64>) = persist::read_flat(input)?;
        if header.format != FORMAT {
            return Err(Error::Domain(format!("not a policy file ({})", header.format)));
        }
        let mut agents = header.agents;
        let mut off = 0;
        for a in &mut agents {
            let n = AgentPolicy::n_params_for(a.kind, a.in_dim, a.hidden, a.n_actions);
            if off + n > flat.len() {
                return Err(Error::Dimension("policy file is truncated".into()));
            }
            a.params = flat[off..off + n].to_vec();
            off += n;
        }
        if off != flat.len() {
            return Err(Error::Dimension("policy file has trailing parameters".into()));
        }
        let p = Self { agents };
        p.check_finite()?;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        persist::write_atomic(path, &buf)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fd_check(cfg: PolicyConfig) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = AgentPolicy::new(&cfg, 4, 3, &mut rng);
        for v in p.params.iter_mut() {
            *v += rng.random_range(-0.5..0.5);
        }
        let x = [0.3, -1.2, 0.0, 0.8];
        let mut g = vec![0.0; p.n_params()];
        p.accumulate_log_prob_grad(&x, 2, 1.0, &mut g);
        let h = 1e-6;
        for j in 0..p.n_params() {
            let orig = p.params[j];
            p.params[j] = orig + h;
            let up = p.log_prob(&x, 2);
            p.params[j] = orig - h;
            let down = p.log_prob(&x, 2);
            p.params[j] = orig;
            let num = (up - down) / (2.0 * h);
            assert!((num - g[j]).abs() < 1e-7, "param {j}: {num} vs {}", g[j]);
        }
    }

    #[test]
    fn log_prob_gradients_match_finite_differences() {
        fd_check(PolicyConfig::default());
        fd_check(PolicyConfig {
            kind: PolicyKind::Mlp,
            hidden: 5,
        });
    }

    #[test]
    fn initial_policy_is_uniform() {
        for kind in [PolicyKind::Linear, PolicyKind::Mlp] {
            let p = PolicyParams::new(&PolicyConfig { kind, hidden: 4 }, 2, 3, 3, 0).unwrap();
            for a in &p.agents {
                for &q in &a.probs(&[1.0, 0.0, 0.0]) {
                    assert!((q - 1.0 / 3.0).abs() < 1e-15);
                }
                assert!((a.entropy(&[0.0, 1.0, 0.0]) - 3f64.ln()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn save_load_round_trip() {
        let mut p = PolicyParams::new(
            &PolicyConfig {
                kind: PolicyKind::Mlp,
                hidden: 3,
            },
            2,
            4,
            3,
            9,
        )
        .unwrap();
        p.agents[1].params[0] = -0.25;
        let mut buf = Vec::new();
        p.write(&mut buf).unwrap();
        assert_eq!(PolicyParams::read(buf.as_slice()).unwrap(), p);
        buf.truncate(buf.len() - 8);
        assert!(PolicyParams::read(buf.as_slice()).is_err());
    }
}
