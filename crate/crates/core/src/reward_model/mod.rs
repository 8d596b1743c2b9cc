//! Temporal/agent attention return-decomposition model.
//!
//! Tokens are the encoded `(observation, action)` pairs of every agent at
//! every step, stored in row `t * N + i`. Each block applies pre-norm
//! multi-head attention across the time axis of every agent (full,
//! non-causal), then across the agents of every step, then a tanh
//! feed-forward layer, each with a residual connection. A softplus head
//! maps every token to a non-negative contribution and the predicted return
//! is their sum. Agent identity is never encoded, so permuting agents
//! permutes the output columns.

pub mod tape;

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::persist;
use crate::redistribution::{weights_from_contributions, ContributionMatrix, WeightMatrix, DEFAULT_EPS};
use crate::rng::rng_for;
use crate::trajectory::{TokenEncoder, TokenGrid, Trajectory};
use tape::{Matrix, Tape, Var};

/// Training loss above which a fit is aborted as divergent.
pub const DIVERGENCE_LOSS: f64 = 1e12;

const FORMAT: &str = "tar2-reward-model";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Positional {
    Sinusoidal,
    Learned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_blocks: usize,
    /// Hidden width of the feed-forward layer as a multiple of `d_model`.
    pub ff_mult: usize,
    pub positional: Positional,
    /// Longest episode the learned positional table covers.
    pub max_len: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub init_seed: u64,
}

impl Default for RewardModelConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            n_heads: 2,
            n_blocks: 2,
            ff_mult: 2,
            positional: Positional::Sinusoidal,
            max_len: 64,
            lr: 1e-3,
            batch_size: 16,
            init_seed: 0,
        }
    }
}

impl RewardModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.ff_mult == 0 {
            return Err(Error::Config("d_model, n_heads and ff_mult must be positive".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSlot {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    #[serde(skip)]
    pub offset: usize,
}

#[derive(Debug, Clone, Copy)]
struct Attn {
    ln_g: usize,
    ln_b: usize,
    q: usize,
    k: usize,
    v: usize,
    o: usize,
}

#[derive(Debug, Clone, Copy)]
struct Block {
    time: Attn,
    agent: Attn,
    ln_g: usize,
    ln_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone)]
struct Ids {
    emb_w: usize,
    emb_b: usize,
    pos: Option<usize>,
    blocks: Vec<Block>,
    out_g: usize,
    out_b: usize,
    head_w: usize,
    head_b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    Zero,
    One,
    Normal(f64),
}

fn layout(cfg: &RewardModelConfig, input_dim: usize) -> (Vec<ParamSlot>, Vec<Init>, Ids) {
    let mut slots = Vec::new();
    let mut inits = Vec::new();
    let mut offset = 0;
    let mut add = |name: String, rows: usize, cols: usize, init: Init| {
        slots.push(ParamSlot { name, rows, cols, offset });
        inits.push(init);
        offset += rows * cols;
        slots.len() - 1
    };
    let d = cfg.d_model;
    let ff = d * cfg.ff_mult;
    let fan = |n: usize| Init::Normal(1.0 / (n as f64).sqrt());
    let emb_w = add("embed.w".into(), input_dim, d, fan(input_dim));
    let emb_b = add("embed.b".into(), 1, d, Init::Zero);
    let pos = match cfg.positional {
        Positional::Learned => Some(add("embed.pos".into(), cfg.max_len, d, Init::Normal(0.1))),
        Positional::Sinusoidal => None,
    };
    let mut blocks = Vec::with_capacity(cfg.n_blocks);
    for b in 0..cfg.n_blocks {
        let mut attn = |axis: &str| Attn {
            ln_g: add(format!("block{b}.{axis}.ln.g"), 1, d, Init::One),
            ln_b: add(format!("block{b}.{axis}.ln.b"), 1, d, Init::Zero),
            q: add(format!("block{b}.{axis}.q"), d, d, fan(d)),
            k: add(format!("block{b}.{axis}.k"), d, d, fan(d)),
            v: add(format!("block{b}.{axis}.v"), d, d, fan(d)),
            o: add(format!("block{b}.{axis}.o"), d, d, fan(d)),
        };
        let time = attn("time");
        let agent = attn("agent");
        blocks.push(Block {
            time,
            agent,
            ln_g: add(format!("block{b}.ff.ln.g"), 1, d, Init::One),
            ln_b: add(format!("block{b}.ff.ln.b"), 1, d, Init::Zero),
            w1: add(format!("block{b}.ff.w1"), d, ff, fan(d)),
            b1: add(format!("block{b}.ff.b1"), 1, ff, Init::Zero),
            w2: add(format!("block{b}.ff.w2"), ff, d, fan(ff)),
            b2: add(format!("block{b}.ff.b2"), 1, d, Init::Zero),
        });
    }
    let out_g = add("out.ln.g".into(), 1, d, Init::One);
    let out_b = add("out.ln.b".into(), 1, d, Init::Zero);
    let head_w = add("head.w".into(), d, 1, Init::Normal(0.1 / (d as f64).sqrt()));
    let head_b = add("head.b".into(), 1, 1, Init::Zero);
    let ids = Ids {
        emb_w,
        emb_b,
        pos,
        blocks,
        out_g,
        out_b,
        head_w,
        head_b,
    };
    (slots, inits, ids)
}

/// Contributions for one trajectory and their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub contributions: ContributionMatrix,
    pub predicted_return: f64,
}

/// Per-epoch mean training loss of a fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

impl FitReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "epoch,loss")?;
        for (e, l) in self.epoch_losses.iter().enumerate() {
            writeln!(out, "{},{}", e + 1, l)?;
        }
        Ok(())
    }
}

/// A training example: encoded trajectory and its episodic return.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub tokens: TokenGrid,
    pub ret: f64,
}

impl Sample {
    pub fn encode<E: TokenEncoder + ?Sized>(encoder: &E, traj: &Trajectory) -> Result<Self> {
        Ok(Self {
            tokens: TokenGrid::encode(encoder, traj)?,
            ret: traj.episodic_return,
        })
    }
}

#[derive(Debug, Clone)]
pub struct RewardModel {
    config: RewardModelConfig,
    input_dim: usize,
    slots: Vec<ParamSlot>,
    ids: Ids,
    values: Vec<f64>,
    grads: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    config: RewardModelConfig,
    input_dim: usize,
    tensors: Vec<ParamSlot>,
}

fn sinusoid(t: usize, d: usize) -> Vec<f64> {
    (0..d)
        .map(|c| {
            let k = (c / 2) as f64;
            let angle = t as f64 / 10000f64.powf(2.0 * k / d as f64);
            if c % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

impl RewardModel {
    /// Fresh parameters drawn from `config.init_seed`.
    pub fn new(config: RewardModelConfig, input_dim: usize) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 {
            return Err(Error::Dimension("token width must be positive".into()));
        }
        let (slots, inits, ids) = layout(&config, input_dim);
        let total = slots.last().map_or(0, |s| s.offset + s.rows * s.cols);
        let mut values = vec![0.0; total];
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        for (slot, init) in slots.iter().zip(&inits) {
            let dst = &mut values[slot.offset..slot.offset + slot.rows * slot.cols];
            match *init {
                Init::Zero => {}
                Init::One => dst.fill(1.0),
                Init::Normal(std) => {
                    let dist = Normal::new(0.0, std).expect("positive std");
                    dst.iter_mut().for_each(|v| *v = dist.sample(&mut rng));
                }
            }
        }
        Ok(Self {
            config,
            input_dim,
            slots,
            ids,
            grads: vec![0.0; total],
            values,
        })
    }

    pub fn config(&self) -> &RewardModelConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn slots(&self) -> &[ParamSlot] {
        &self.slots
    }

    pub fn n_params(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Gradient buffer filled by the last [`RewardModel::loss_grad`].
    pub fn grads(&self) -> &[f64] {
        &self.grads
    }

    /// Sets the contribution head to zero so every contribution is `ln 2`.
    pub fn zero_head(&mut self) {
        for id in [self.ids.head_w, self.ids.head_b] {
            let s = &self.slots[id];
            self.values[s.offset..s.offset + s.rows * s.cols].fill(0.0);
        }
    }

    fn slot_matrix(&self, id: usize) -> Matrix {
        let s = &self.slots[id];
        Matrix::from_vec(s.rows, s.cols, self.values[s.offset..s.offset + s.rows * s.cols].to_vec())
    }

    fn check_tokens(&self, tokens: &TokenGrid) -> Result<()> {
        if tokens.horizon == 0 || tokens.n_agents == 0 {
            return Err(Error::Dimension("empty token grid".into()));
        }
        if tokens.dim != self.input_dim {
            return Err(Error::Dimension(format!(
                "token width {} but the model expects {}",
                tokens.dim, self.input_dim
            )));
        }
        if tokens.data.len() != tokens.horizon * tokens.n_agents * tokens.dim {
            return Err(Error::Dimension("token grid data length mismatch".into()));
        }
        if self.config.positional == Positional::Learned && tokens.horizon > self.config.max_len {
            return Err(Error::Dimension(format!(
                "episode of length {} exceeds the positional table ({})",
                tokens.horizon, self.config.max_len
            )));
        }
        Ok(())
    }

    fn attention(&self, tape: &mut Tape, leaves: &[Var], h: Var, a: &Attn, groups: &[Vec<usize>]) -> Var {
        let z = tape.layer_norm(h, leaves[a.ln_g], leaves[a.ln_b]);
        let q = tape.matmul(z, leaves[a.q]);
        let k = tape.matmul(z, leaves[a.k]);
        let v = tape.matmul(z, leaves[a.v]);
        let heads = self.config.n_heads;
        let dh = self.config.d_model / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(groups.len());
        for g in groups {
            let (qg, kg, vg) = (tape.gather_rows(q, g), tape.gather_rows(k, g), tape.gather_rows(v, g));
            let mut per_head = Vec::with_capacity(heads);
            for hd in 0..heads {
                let qh = tape.slice_cols(qg, hd * dh, dh);
                let kh = tape.slice_cols(kg, hd * dh, dh);
                let vh = tape.slice_cols(vg, hd * dh, dh);
                let s = tape.matmul_t(qh, kh);
                let s = tape.scale(s, scale);
                let p = tape.softmax_rows(s);
                per_head.push(tape.matmul(p, vh));
            }
            outs.push(if heads == 1 { per_head[0] } else { tape.concat_cols(&per_head) });
        }
        let mut mixed = tape.concat_rows(&outs);
        let order: Vec<usize> = groups.iter().flatten().copied().collect();
        if order.iter().enumerate().any(|(k, &r)| k != r) {
            let mut inverse = vec![0; order.len()];
            for (k, &r) in order.iter().enumerate() {
                inverse[r] = k;
            }
            mixed = tape.gather_rows(mixed, &inverse);
        }
        let o = tape.matmul(mixed, leaves[a.o]);
        tape.add(h, o)
    }

    /// Records the forward pass; returns parameter leaves and the `TN x 1`
    /// contribution column.
    fn record(&self, tape: &mut Tape, tokens: &TokenGrid) -> Result<(Vec<Var>, Var)> {
        self.check_tokens(tokens)?;
        let (t_len, n) = (tokens.horizon, tokens.n_agents);
        let d = self.config.d_model;
        let leaves: Vec<Var> = (0..self.slots.len()).map(|id| tape.leaf(self.slot_matrix(id))).collect();
        let ids = &self.ids;

        let x = tape.leaf(Matrix::from_vec(t_len * n, tokens.dim, tokens.data.clone()));
        let h = tape.matmul(x, leaves[ids.emb_w]);
        let h = tape.add_row(h, leaves[ids.emb_b]);
        let pos = match ids.pos {
            Some(p) => {
                let rows: Vec<usize> = (0..t_len * n).map(|r| r / n).collect();
                tape.gather_rows(leaves[p], &rows)
            }
            None => {
                let mut data = Vec::with_capacity(t_len * n * d);
                for t in 0..t_len {
                    let row = sinusoid(t, d);
                    for _ in 0..n {
                        data.extend_from_slice(&row);
                    }
                }
                tape.leaf(Matrix::from_vec(t_len * n, d, data))
            }
        };
        let mut h = tape.add(h, pos);

        let time_groups: Vec<Vec<usize>> = (0..n).map(|i| (0..t_len).map(|t| t * n + i).collect()).collect();
        let agent_groups: Vec<Vec<usize>> = (0..t_len).map(|t| (t * n..(t + 1) * n).collect()).collect();
        for b in &ids.blocks {
            h = self.attention(tape, &leaves, h, &b.time, &time_groups);
            h = self.attention(tape, &leaves, h, &b.agent, &agent_groups);
            let z = tape.layer_norm(h, leaves[b.ln_g], leaves[b.ln_b]);
            let f = tape.matmul(z, leaves[b.w1]);
            let f = tape.add_row(f, leaves[b.b1]);
            let f = tape.tanh(f);
            let f = tape.matmul(f, leaves[b.w2]);
            let f = tape.add_row(f, leaves[b.b2]);
            h = tape.add(h, f);
        }
        let z = tape.layer_norm(h, leaves[ids.out_g], leaves[ids.out_b]);
        let s = tape.matmul(z, leaves[ids.head_w]);
        let s = tape.add_row(s, leaves[ids.head_b]);
        let c = tape.softplus(s);
        Ok((leaves, c))
    }

    pub fn forward(&self, tokens: &TokenGrid) -> Result<ModelOutput> {
        let mut tape = Tape::new();
        let (_, c) = self.record(&mut tape, tokens)?;
        let cv = tape.value(c);
        if cv.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite contribution".into()));
        }
        let values: Vec<Vec<f64>> = cv.data.chunks(tokens.n_agents).map(<[f64]>::to_vec).collect();
        let predicted_return = cv.sum();
        Ok(ModelOutput {
            contributions: ContributionMatrix::new(values)?,
            predicted_return,
        })
    }

    pub fn forward_traj<E: TokenEncoder + ?Sized>(&self, encoder: &E, traj: &Trajectory) -> Result<ModelOutput> {
        self.forward(&TokenGrid::encode(encoder, traj)?)
    }

    /// Mean squared error `(ŷ - R)²` over `batch`, without gradients.
    pub fn loss(&self, batch: &[Sample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Dimension("empty batch".into()));
        }
        let mut total = 0.0;
        for s in batch {
            let out = self.forward(&s.tokens)?;
            total += (out.predicted_return - s.ret).powi(2);
        }
        let loss = total / batch.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("loss is {loss}")));
        }
        Ok(loss)
    }

    /// Mean squared error over `batch`; the gradient is left in
    /// [`RewardModel::grads`].
    pub fn loss_grad(&mut self, batch: &[Sample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Dimension("empty batch".into()));
        }
        self.grads.fill(0.0);
        let inv_b = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for s in batch {
            let mut tape = Tape::new();
            let (leaves, c) = self.record(&mut tape, &s.tokens)?;
            let y = tape.sum_all(c);
            let resid = tape.value(y).data[0] - s.ret;
            loss += resid * resid * inv_b;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("loss is {loss}")));
            }
            let adj = tape.backward(y, 2.0 * resid * inv_b);
            for (slot, leaf) in self.slots.iter().zip(&leaves) {
                if let Some(g) = &adj[leaf.0] {
                    let dst = &mut self.grads[slot.offset..slot.offset + slot.rows * slot.cols];
                    for (a, b) in dst.iter_mut().zip(&g.data) {
                        *a += b;
                    }
                }
            }
        }
        Ok(loss)
    }

    /// Plain minibatch SGD with a fixed learning rate; minibatch order is
    /// drawn from `seed` and the epoch index.
    pub fn fit(&mut self, data: &[Sample], epochs: usize, lr: f64, batch_size: usize, seed: u64) -> Result<FitReport> {
        if data.is_empty() {
            return Err(Error::Dimension("empty training buffer".into()));
        }
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        let mut report = FitReport {
            epoch_losses: Vec::with_capacity(epochs),
            steps: 0,
        };
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut batch = Vec::with_capacity(batch_size);
        for epoch in 0..epochs {
            order.sort_unstable();
            order.shuffle(&mut rng_for(seed, epoch as u64));
            let mut weighted = 0.0;
            for chunk in order.chunks(batch_size) {
                batch.clear();
                batch.extend(chunk.iter().map(|&k| data[k].clone()));
                let loss = self.loss_grad(&batch)?;
                if loss > DIVERGENCE_LOSS {
                    return Err(Error::Numeric(format!(
                        "reward model diverged: loss {loss:.3e} at epoch {epoch}, step {} (lr {lr})",
                        report.steps
                    )));
                }
                weighted += loss * chunk.len() as f64;
                for (v, g) in self.values.iter_mut().zip(&self.grads) {
                    *v -= lr * g;
                }
                report.steps += 1;
            }
            report.epoch_losses.push(weighted / data.len() as f64);
        }
        Ok(report)
    }

    /// Largest relative gap between the analytic loss gradient and a central
    /// difference of step `h`, over `indices`. The denominator is
    /// `max(|analytic|, |numeric|, rel_floor * max(1, max|analytic|))`, so
    /// entries far below the gradient's own scale, where the difference
    /// quotient is mostly round-off, are judged in absolute terms.
    /// Parameters are restored.
    pub fn gradient_check(&mut self, batch: &[Sample], indices: &[usize], h: f64, rel_floor: f64) -> Result<f64> {
        if !(h > 0.0) || !(rel_floor > 0.0) {
            return Err(Error::Domain("step and floor must be positive".into()));
        }
        if let Some(&k) = indices.iter().find(|&&k| k >= self.values.len()) {
            return Err(Error::Dimension(format!("parameter index {k} out of range")));
        }
        self.loss_grad(batch)?;
        let analytic = self.grads.clone();
        let floor = rel_floor * analytic.iter().fold(1.0f64, |m, g| m.max(g.abs()));
        let mut worst: f64 = 0.0;
        for &k in indices {
            let orig = self.values[k];
            self.values[k] = orig + h;
            let plus = self.loss(batch);
            self.values[k] = orig - h;
            let minus = self.loss(batch);
            self.values[k] = orig;
            let num = (plus? - minus?) / (2.0 * h);
            let denom = analytic[k].abs().max(num.abs()).max(floor);
            worst = worst.max((analytic[k] - num).abs() / denom);
        }
        Ok(worst)
    }

    /// Normalised contributions as simplex weights.
    pub fn extract_weights(&self, tokens: &TokenGrid) -> Result<WeightMatrix> {
        let out = self.forward(tokens)?;
        weights_from_contributions(&out.contributions, DEFAULT_EPS)
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let header = Header {
            format: FORMAT.into(),
            config: self.config.clone(),
            input_dim: self.input_dim,
            tensors: self.slots.clone(),
        };
        persist::write_flat(out, &header, &self.values)
    }

    pub fn read<R: Read>(input: R) -> Result<Self> {
        let (header, values): (Header, Vec<f64>) = persist::read_flat(input)?;
        if header.format != FORMAT {
            return Err(Error::Domain(format!("not a reward model file ({})", header.format)));
        }
        let mut model = Self::new(header.config, header.input_dim)?;
        let names_match = model.slots.len() == header.tensors.len()
            && model
                .slots
                .iter()
                .zip(&header.tensors)
                .all(|(a, b)| a.name == b.name && a.rows == b.rows && a.cols == b.cols);
        if !names_match || values.len() != model.values.len() {
            return Err(Error::Dimension("parameter layout does not match the header".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite parameter in file".into()));
        }
        model.values = values;
        Ok(model)
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
    use rand::Rng;

    fn random_grid(t: usize, n: usize, dim: usize, seed: u64) -> TokenGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        TokenGrid {
            horizon: t,
            n_agents: n,
            dim,
            data: (0..t * n * dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    fn small_config(seed: u64) -> RewardModelConfig {
        RewardModelConfig {
            d_model: 8,
            n_heads: 2,
            n_blocks: 2,
            init_seed: seed,
            ..Default::default()
        }
    }

    fn fd_max_rel_err(model: &mut RewardModel, batch: &[Sample], indices: &[usize], floor: f64) -> f64 {
        model.gradient_check(batch, indices, 1e-5, floor).unwrap()
    }

    #[test]
    fn zero_head_gives_ln2() {
        let mut m = RewardModel::new(RewardModelConfig::default(), 5).unwrap();
        m.zero_head();
        let g = random_grid(3, 2, 5, 1);
        let out = m.forward(&g).unwrap();
        for row in &out.contributions.values {
            for &c in row {
                assert!((c - 2f64.ln()).abs() < 1e-15);
            }
        }
        assert!((out.predicted_return - 6.0 * 2f64.ln()).abs() < 1e-12);
        let w = m.extract_weights(&g).unwrap();
        for &wt in &w.temporal {
            assert!((wt - 1.0 / 3.0).abs() < 1e-12);
        }
        for row in &w.agent {
            for &a in row {
                assert!((a - 0.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn predicted_return_is_sum_of_contributions() {
        let m = RewardModel::new(RewardModelConfig::default(), 4).unwrap();
        for seed in 0..5 {
            let g = random_grid(1 + seed as usize, 3, 4, seed);
            let out = m.forward(&g).unwrap();
            assert!((out.predicted_return - out.contributions.total()).abs() < 1e-9);
            assert_eq!(out.contributions.horizon(), g.horizon);
            assert_eq!(out.contributions.n_agents(), 3);
        }
    }

    #[test]
    fn single_cell_trajectory() {
        let m = RewardModel::new(RewardModelConfig::default(), 4).unwrap();
        let out = m.forward(&random_grid(1, 1, 4, 3)).unwrap();
        assert_eq!(out.contributions.values.len(), 1);
        assert!(out.contributions.values[0][0] >= 0.0);
    }

    #[test]
    fn permuting_agents_permutes_columns() {
        for positional in [Positional::Sinusoidal, Positional::Learned] {
            let cfg = RewardModelConfig {
                positional,
                init_seed: 9,
                ..Default::default()
            };
            let m = RewardModel::new(cfg, 4).unwrap();
            let (t, n, dim) = (4, 3, 4);
            let g = random_grid(t, n, dim, 5);
            let perm = [2, 0, 1];
            let mut pg = g.clone();
            for step in 0..t {
                for i in 0..n {
                    let src = g.token(step, perm[i]).to_vec();
                    let r = step * n + i;
                    pg.data[r * dim..(r + 1) * dim].copy_from_slice(&src);
                }
            }
            let a = m.forward(&g).unwrap().contributions;
            let b = m.forward(&pg).unwrap().contributions;
            for step in 0..t {
                for i in 0..n {
                    assert!((b.values[step][i] - a.values[step][perm[i]]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn shape_errors() {
        let m = RewardModel::new(RewardModelConfig::default(), 4).unwrap();
        assert!(matches!(m.forward(&random_grid(2, 2, 5, 0)), Err(Error::Dimension(_))));
        let cfg = RewardModelConfig {
            positional: Positional::Learned,
            max_len: 3,
            ..Default::default()
        };
        let m = RewardModel::new(cfg, 4).unwrap();
        assert!(matches!(m.forward(&random_grid(4, 2, 4, 0)), Err(Error::Dimension(_))));
        let bad = RewardModelConfig {
            d_model: 10,
            n_heads: 3,
            ..Default::default()
        };
        assert!(matches!(RewardModel::new(bad, 4), Err(Error::Config(_))));
    }

    #[test]
    fn loss_grad_at_exact_fit_is_zero() {
        let mut m = RewardModel::new(RewardModelConfig::default(), 4).unwrap();
        let g = random_grid(3, 2, 4, 1);
        let y = m.forward(&g).unwrap().predicted_return;
        let loss = m.loss_grad(&[Sample { tokens: g, ret: y }]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(m.grads().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn head_bias_gradient_is_twice_residual_times_sigmoid_sum() {
        // d loss / d ŷ = 2(ŷ - R); ŷ depends on head.b through Σ softplus'
        let mut m = RewardModel::new(RewardModelConfig::default(), 4).unwrap();
        m.zero_head();
        let g = random_grid(2, 2, 4, 7);
        let loss = m
            .loss_grad(&[Sample {
                tokens: g,
                ret: 1.0,
            }])
            .unwrap();
        let yhat = 4.0 * 2f64.ln();
        assert!((loss - (yhat - 1.0).powi(2)).abs() < 1e-12);
        let hb = m.slots.iter().find(|s| s.name == "head.b").unwrap().offset;
        assert!((m.grads()[hb] - 2.0 * (yhat - 1.0) * 4.0 * 0.5).abs() < 1e-12);
    }

    #[test]
    fn finite_difference_small_model_all_params() {
        let mut m = RewardModel::new(small_config(3), 5).unwrap();
        let batch: Vec<Sample> = (0..2)
            .map(|s| Sample {
                tokens: random_grid(3 + s, 2, 5, 40 + s as u64),
                ret: 2.0 + s as f64,
            })
            .collect();
        let idx: Vec<usize> = (0..m.n_params()).collect();
        let err = fd_max_rel_err(&mut m, &batch, &idx, 1e-6);
        assert!(err <= 1e-4, "max relative error {err}");
    }

    #[test]
    fn gradient_check_is_not_vacuous() {
        let mut m = RewardModel::new(small_config(4), 5).unwrap();
        let batch = vec![Sample {
            tokens: random_grid(3, 2, 5, 8),
            ret: 1.5,
        }];
        let idx: Vec<usize> = (0..m.n_params()).collect();
        let before = m.values().to_vec();
        // a coarse step leaves visible curvature error
        assert!(m.gradient_check(&batch, &idx, 0.5, 1e-6).unwrap() > 1e-3);
        assert_eq!(m.values(), &before[..]);
        assert!(m.gradient_check(&batch, &[m.n_params()], 1e-5, 1e-6).is_err());
    }

    #[test]
    fn finite_difference_default_model_sampled_params() {
        let cfg = RewardModelConfig {
            positional: Positional::Learned,
            init_seed: 11,
            ..Default::default()
        };
        let mut m = RewardModel::new(cfg, 5).unwrap();
        let batch = vec![Sample {
            tokens: random_grid(4, 2, 5, 12),
            ret: 3.0,
        }];
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let idx: Vec<usize> = (0..300).map(|_| rng.random_range(0..m.n_params())).collect();
        let err = fd_max_rel_err(&mut m, &batch, &idx, 1e-6);
        assert!(err <= 1e-4, "max relative error {err}");
    }

    #[test]
    fn fit_is_deterministic_and_epochs_zero_is_noop() {
        let data: Vec<Sample> = (0..12)
            .map(|s| Sample {
                tokens: random_grid(3, 2, 4, s),
                ret: (s % 3) as f64,
            })
            .collect();
        let base = RewardModel::new(small_config(1), 4).unwrap();
        let mut a = base.clone();
        let mut b = base.clone();
        let ra = a.fit(&data, 3, 1e-2, 4, 99).unwrap();
        let rb = b.fit(&data, 3, 1e-2, 4, 99).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a.values(), b.values());
        assert_eq!(ra.steps, 9);

        let mut c = base.clone();
        let rc = c.fit(&data, 0, 1e-2, 4, 99).unwrap();
        assert!(rc.epoch_losses.is_empty());
        assert_eq!(c.values(), base.values());
    }

    #[test]
    fn constant_return_fit_descends_monotonically() {
        let data: Vec<Sample> = (0..32)
            .map(|s| Sample {
                tokens: random_grid(3, 2, 4, 100 + s),
                ret: 10.0,
            })
            .collect();
        let mut m = RewardModel::new(small_config(2), 4).unwrap();
        let report = m.fit(&data, 30, 1e-3, 8, 5).unwrap();
        let l = &report.epoch_losses;
        for w in l.windows(2) {
            assert!(w[1] <= w[0] * 1.05, "loss rose: {:?}", l);
        }
        assert!(report.final_loss().unwrap() < 0.05 * l[0], "{:?}", l);
    }

    #[test]
    fn divergence_is_reported() {
        let data = vec![Sample {
            tokens: random_grid(3, 2, 4, 1),
            ret: 1e9,
        }];
        let mut m = RewardModel::new(small_config(2), 4).unwrap();
        let err = m.fit(&data, 1, 1e-3, 1, 0).unwrap_err();
        assert!(matches!(err, Error::Numeric(msg) if msg.contains("diverged")));
    }

    #[test]
    fn save_load_round_trip() {
        let m = RewardModel::new(RewardModelConfig::default(), 6).unwrap();
        let mut buf = Vec::new();
        m.write(&mut buf).unwrap();
        let back = RewardModel::read(buf.as_slice()).unwrap();
        assert_eq!(back.values(), m.values());
        assert_eq!(back.config(), m.config());
        let g = random_grid(2, 2, 6, 0);
        assert_eq!(back.forward(&g).unwrap(), m.forward(&g).unwrap());

        let mut other = Vec::new();
        persist::write_flat(&mut other, &serde_json::json!({"format": "x"}), &[1.0]).unwrap();
        assert!(RewardModel::read(other.as_slice()).is_err());
    }

    #[test]
    fn extract_weights_is_on_simplex_for_random_params() {
        for seed in 0..100 {
            let cfg = RewardModelConfig {
                d_model: 8,
                init_seed: seed,
                ..Default::default()
            };
            let m = RewardModel::new(cfg, 3).unwrap();
            let g = random_grid(1 + (seed as usize % 6), 1 + (seed as usize % 4), 3, seed);
            let w = m.extract_weights(&g).unwrap();
            assert!(crate::validate_weights(&w).unwrap().is_ok());
        }
    }
}
