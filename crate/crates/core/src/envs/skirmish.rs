//! Simplified squad combat with withheld rewards.
//!
//! `N` agents face `E` scripted enemies, all starting with `HP` hit points.
//! Action 0 holds; action `j + 1` attacks enemy `j` for up to `D` damage.
//! Agents resolve in index order, then every surviving enemy hits the
//! nearest living agent (by lane index, ties to the lower index) for one
//! point. Hidden reward: hit points removed, plus 10 per kill, plus
//! `200 / N` per surviving agent when the enemy team is wiped. The total is
//! rescaled so that the best achievable group return is exactly 20.

use super::{EnvSpec, JointObservation};

pub const HOLD: usize = 0;
pub const KILL_REWARD: f64 = 10.0;
pub const WIPE_BONUS: f64 = 200.0;
pub const MAX_GROUP_RETURN: f64 = 20.0;

#[derive(Debug, Clone)]
pub struct Skirmish {
    spec: EnvSpec,
    agent_hp: Vec<u32>,
    enemy_hp: Vec<u32>,
    t: usize,
    raw: f64,
    credit: Vec<Vec<f64>>,
}

impl Skirmish {
    pub(super) fn new(spec: EnvSpec) -> Self {
        let (n, e, hp) = (spec.n_agents, spec.enemies, spec.hit_points);
        Self {
            spec,
            agent_hp: vec![hp; n],
            enemy_hp: vec![hp; e],
            t: 0,
            raw: 0.0,
            credit: Vec::new(),
        }
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    /// Largest reachable raw return: every enemy HP removed, every enemy
    /// killed, every agent alive for the wipe bonus.
    pub fn max_raw_return(&self) -> f64 {
        let e = self.spec.enemies as f64;
        e * self.spec.hit_points as f64 + KILL_REWARD * e + WIPE_BONUS
    }

    pub fn scale(&self) -> f64 {
        MAX_GROUP_RETURN / self.max_raw_return()
    }

    pub fn raw_return(&self) -> f64 {
        self.raw
    }

    fn observe(&self) -> JointObservation {
        JointObservation {
            t: self.t,
            obs: self
                .agent_hp
                .iter()
                .map(|&hp| {
                    let mut o = Vec::with_capacity(1 + self.enemy_hp.len());
                    o.push(hp as f64);
                    o.extend(self.enemy_hp.iter().map(|&e| e as f64));
                    o
                })
                .collect(),
        }
    }

    pub(super) fn reset(&mut self) -> JointObservation {
        *self = Self::new(self.spec.clone());
        self.observe()
    }

    pub(super) fn advance(&mut self, actions: &[usize]) -> (JointObservation, bool) {
        let mut row = vec![0.0; self.spec.n_agents];
        for (i, &a) in actions.iter().enumerate() {
            if self.agent_hp[i] == 0 || a == HOLD {
                continue;
            }
            let target = a - 1;
            let hp = self.enemy_hp[target];
            if hp == 0 {
                continue;
            }
            let dealt = hp.min(self.spec.damage);
            self.enemy_hp[target] = hp - dealt;
            let mut gain = dealt as f64;
            if self.enemy_hp[target] == 0 {
                gain += KILL_REWARD;
            }
            row[i] += gain;
            self.raw += gain;
        }

        for j in 0..self.enemy_hp.len() {
            if self.enemy_hp[j] == 0 {
                continue;
            }
            let target = (0..self.agent_hp.len())
                .filter(|&i| self.agent_hp[i] > 0)
                .min_by_key(|&i| (i.abs_diff(j), i));
            if let Some(i) = target {
                self.agent_hp[i] -= 1;
            }
        }

        self.t += 1;
        if self.success() {
            let survivors = self.agent_hp.iter().filter(|&&hp| hp > 0).count() as f64;
            self.raw += WIPE_BONUS / self.spec.n_agents as f64 * survivors;
        }
        self.credit.push(row);
        (self.observe(), self.is_done())
    }

    fn team_dead(&self) -> bool {
        self.agent_hp.iter().all(|&hp| hp == 0)
    }

    pub(super) fn success(&self) -> bool {
        self.enemy_hp.iter().all(|&hp| hp == 0)
    }

    pub(super) fn is_done(&self) -> bool {
        self.t >= self.spec.horizon || self.success() || self.team_dead()
    }

    pub(super) fn payout(&self) -> f64 {
        self.raw * MAX_GROUP_RETURN / self.max_raw_return()
    }

    pub(super) fn credit(&self) -> &[Vec<f64>] {
        &self.credit
    }
}
