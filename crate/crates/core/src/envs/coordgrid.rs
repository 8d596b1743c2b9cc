//! One-dimensional coordination corridor.
//!
//! Every agent starts at cell 0 of a corridor of length `L` and must reach
//! its flag at cell `L - 1`. An agent that reaches its flag stays parked
//! there. The episode ends when all agents are parked or the horizon runs
//! out. Payout: 10 if every agent reached its flag, otherwise
//! `5 * fraction reached`.

use super::{EnvSpec, JointObservation};

pub const LEFT: usize = 0;
pub const STAY: usize = 1;
pub const RIGHT: usize = 2;

const FULL_PAYOUT: f64 = 10.0;
const PARTIAL_PAYOUT: f64 = 5.0;

#[derive(Debug, Clone)]
pub struct CoordGrid {
    spec: EnvSpec,
    positions: Vec<usize>,
    t: usize,
    credit: Vec<Vec<f64>>,
}

impl CoordGrid {
    pub(super) fn new(spec: EnvSpec) -> Self {
        let n = spec.n_agents;
        Self {
            spec,
            positions: vec![0; n],
            t: 0,
            credit: Vec::new(),
        }
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn flag(&self) -> usize {
        self.spec.corridor_length - 1
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    fn observe(&self) -> JointObservation {
        let flag = self.flag() as f64;
        JointObservation {
            t: self.t,
            obs: self.positions.iter().map(|&p| vec![p as f64, flag]).collect(),
        }
    }

    pub(super) fn reset(&mut self) -> JointObservation {
        self.positions.iter_mut().for_each(|p| *p = 0);
        self.t = 0;
        self.credit.clear();
        self.observe()
    }

    pub(super) fn advance(&mut self, actions: &[usize]) -> (JointObservation, bool) {
        let flag = self.flag();
        let mut row = vec![0.0; self.spec.n_agents];
        for (i, &a) in actions.iter().enumerate() {
            let p = self.positions[i];
            if p == flag {
                continue;
            }
            let next = match a {
                LEFT => p.saturating_sub(1),
                RIGHT => p + 1,
                _ => p,
            };
            if next > p {
                row[i] = 1.0;
            }
            self.positions[i] = next;
        }
        self.credit.push(row);
        self.t += 1;
        (self.observe(), self.is_done())
    }

    fn reached(&self) -> usize {
        let flag = self.flag();
        self.positions.iter().filter(|&&p| p == flag).count()
    }

    pub(super) fn is_done(&self) -> bool {
        self.t >= self.spec.horizon || self.success()
    }

    pub(super) fn success(&self) -> bool {
        self.reached() == self.spec.n_agents
    }

    pub(super) fn payout(&self) -> f64 {
        if self.success() {
            FULL_PAYOUT
        } else {
            PARTIAL_PAYOUT * self.reached() as f64 / self.spec.n_agents as f64
        }
    }

    pub(super) fn credit(&self) -> &[Vec<f64>] {
        &self.credit
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{run_scripted, EnvSpec};

    #[test]
    fn reset_observation() {
        let spec = EnvSpec::coordgrid(2, 3, 8);
        let mut env = spec.make().unwrap();
        let obs = env.reset();
        assert_eq!(obs.t, 0);
        assert_eq!(obs.obs, vec![vec![0.0, 2.0], vec![0.0, 2.0]]);
        let mut again = spec.make().unwrap();
        assert_eq!(again.reset(), obs);
    }

    #[test]
    fn moves_and_termination() {
        let spec = EnvSpec::coordgrid(2, 3, 8);
        let mut env = spec.make().unwrap();
        env.reset();
        let (obs, done, _) = env.step(&[RIGHT, RIGHT]).unwrap();
        assert_eq!(obs.obs[0][0], 1.0);
        assert_eq!(obs.obs[1][0], 1.0);
        assert!(!done);
        let (_, done, info) = env.step(&[RIGHT, RIGHT]).unwrap();
        assert!(done);
        assert_eq!(info.reward, 10.0);
        assert_eq!(env.episodic_return().unwrap(), 10.0);
        assert!(env.success());
    }

    #[test]
    fn left_at_wall_stays() {
        let spec = EnvSpec::coordgrid(2, 3, 8);
        let mut env = spec.make().unwrap();
        env.reset();
        let (obs, _, _) = env.step(&[LEFT, STAY]).unwrap();
        assert_eq!(obs.obs[0][0], 0.0);
    }

    #[test]
    fn partial_payout_and_idle_agent_column() {
        let spec = EnvSpec::coordgrid(2, 3, 4);
        let ep = run_scripted(&spec, &vec![vec![RIGHT, STAY]; 4]).unwrap();
        assert!(!ep.success);
        assert_eq!(ep.trajectory.horizon(), 4);
        assert_eq!(ep.episodic_return, 2.5);
        assert!(ep.oracle.values.iter().all(|row| row[1] == 0.0));
        assert_eq!(ep.oracle.values[0][0], 1.0);
        assert_eq!(ep.oracle.values[1][0], 1.0);
        // parked after reaching the flag
        assert_eq!(ep.oracle.values[2][0], 0.0);
    }

    #[test]
    fn credit_only_for_distance_reduction() {
        let spec = EnvSpec::coordgrid(2, 3, 8);
        let ep = run_scripted(
            &spec,
            &[vec![RIGHT, RIGHT], vec![LEFT, RIGHT], vec![RIGHT, STAY], vec![RIGHT, STAY]],
        )
        .unwrap();
        assert!(ep.success);
        assert_eq!(ep.trajectory.horizon(), 4);
        assert_eq!(
            ep.oracle.values,
            vec![vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 0.0]]
        );
    }
}
