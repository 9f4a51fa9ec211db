//! Desk-scale environments, rollouts, discounted returns and the exact
//! tabular oracle for values and discounted occupancy.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, solve_dense, RngStream};
use crate::policy::{sample_categorical, Action, PolicyArch, PolicyParams};

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    /// Index of the tabular state or grid cell visited at each step, when
    /// the environment has one.
    pub cells: Vec<usize>,
    /// The goal cell was entered at some step.
    pub reached_goal: bool,
    pub stream: RngStream,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn total_return(&self, gamma: f64) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            discounted_return(self, 0, gamma).expect("start in range")
        }
    }
}

/// `Σ_{t ≥ start} γ^{t-start} r_t`.
pub fn discounted_return(traj: &Trajectory, start: usize, gamma: f64) -> Result<f64> {
    if start >= traj.len() {
        return Err(Error::IndexOutOfRange { index: start, len: traj.len() });
    }
    let mut total = 0.0;
    let mut discount = 1.0;
    for r in &traj.rewards[start..] {
        total += discount * r;
        discount *= gamma;
    }
    Ok(total)
}

/// Return-to-go for every step, accumulated backwards.
pub fn returns_to_go(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (t, r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Draws a start index uniformly along the trajectory and returns the
/// discounted return from there.
pub fn sample_inner(traj: &Trajectory, gamma: f64, stream: RngStream) -> Result<(usize, f64)> {
    if traj.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    let start = stream.rng().random_range(0..traj.len());
    Ok((start, discounted_return(traj, start, gamma)?))
}

trait Dynamics {
    type State: Clone;
    fn reset(&self, rng: &mut dyn rand::RngCore) -> Self::State;
    fn observe(&self, state: &Self::State) -> Vec<f64>;
    fn cell(&self, _state: &Self::State) -> usize {
        0
    }
    /// Returns `(next, reward, at_goal)`.
    fn step(&self, state: &Self::State, action: &Action, rng: &mut dyn rand::RngCore) -> Result<(Self::State, f64, bool)>;
    fn horizon(&self) -> usize;
    fn stops_at_goal(&self) -> bool {
        true
    }
}

fn run_episode<D: Dynamics>(env: &D, policy: &PolicyParams, stream: RngStream) -> Result<Trajectory> {
    let mut rng = stream.rng();
    let mut state = env.reset(&mut rng);
    let horizon = env.horizon();
    let mut traj = Trajectory {
        observations: Vec::with_capacity(horizon),
        actions: Vec::with_capacity(horizon),
        rewards: Vec::with_capacity(horizon),
        cells: Vec::with_capacity(horizon),
        reached_goal: false,
        stream,
    };
    for _ in 0..horizon {
        let obs = env.observe(&state);
        let (action, _) = policy.act(&obs, &mut rng)?;
        let (next, reward, done) = env.step(&state, &action, &mut rng)?;
        traj.cells.push(env.cell(&state));
        traj.observations.push(obs);
        traj.actions.push(action);
        traj.rewards.push(reward);
        state = next;
        if done {
            traj.reached_goal = true;
            if env.stops_at_goal() {
                break;
            }
        }
    }
    Ok(traj)
}

fn normal(rng: &mut dyn rand::RngCore) -> f64 {
    StandardNormal.sample(rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridWorldEnv {
    pub width: usize,
    pub height: usize,
    pub horizon: usize,
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub noise_sigma: f64,
    pub a1: f64,
    pub a2: f64,
    pub center1: [f64; 2],
    pub center2: [f64; 2],
    pub goal: [usize; 2],
    pub start: [usize; 2],
    pub terminate_at_goal: bool,
}

impl Default for GridWorldEnv {
    fn default() -> Self {
        Self {
            width: 8,
            height: 8,
            horizon: 20,
            r1: 2.5,
            r2: 0.3,
            r3: 13.0,
            noise_sigma: 3.0,
            a1: 0.125,
            a2: 8.0,
            center1: [4.0, 2.0],
            center2: [4.0, 7.0],
            goal: [8, 8],
            start: [1, 1],
            terminate_at_goal: true,
        }
    }
}

pub mod grid_action {
    pub const UP: usize = 0;
    pub const DOWN: usize = 1;
    pub const LEFT: usize = 2;
    pub const RIGHT: usize = 3;
}

impl GridWorldEnv {
    pub const N_ACTIONS: usize = 4;

    pub fn n_cells(&self) -> usize {
        self.width * self.height
    }

    /// Cell index of 1-based coordinates.
    pub fn cell_index(&self, x: usize, y: usize) -> usize {
        (y - 1) * self.width + (x - 1)
    }

    pub fn cell_coords(&self, index: usize) -> (usize, usize) {
        (index % self.width + 1, index / self.width + 1)
    }

    pub fn mean_reward(&self, x: usize, y: usize) -> f64 {
        let (xf, yf) = (x as f64, y as f64);
        let d1 = (xf - self.center1[0]).powi(2) + (yf - self.center1[1]).powi(2);
        let d2 = (xf - self.center2[0]).powi(2) + (yf - self.center2[1]).powi(2);
        let goal = if [x, y] == self.goal { self.r3 } else { 0.0 };
        self.r1 * (-d1 / self.a1).exp() + self.r2 * (-d2 / self.a2).exp() + goal
    }

    pub fn validate(&self) -> Result<()> {
        let in_grid = |p: [usize; 2]| p[0] >= 1 && p[0] <= self.width && p[1] >= 1 && p[1] <= self.height;
        if self.width == 0 || self.height == 0 {
            return Err(Error::config("env.width", "grid must be nonempty"));
        }
        if self.horizon == 0 {
            return Err(Error::config("env.horizon", "must be positive"));
        }
        if !in_grid(self.goal) {
            return Err(Error::config("env.goal", "goal outside grid"));
        }
        if !in_grid(self.start) {
            return Err(Error::config("env.start", "start outside grid"));
        }
        if !(self.a1 > 0.0 && self.a2 > 0.0) {
            return Err(Error::config("env.a1", "widths must be positive"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::config("env.noise_sigma", "must be nonnegative"));
        }
        Ok(())
    }

    pub fn policy_arch(&self, hidden: &[usize]) -> PolicyArch {
        PolicyArch::SoftmaxMlp { obs_dim: self.n_cells(), hidden: hidden.to_vec(), n_actions: Self::N_ACTIONS }
    }
}

impl Dynamics for GridWorldEnv {
    type State = (usize, usize);

    fn reset(&self, _rng: &mut dyn rand::RngCore) -> Self::State {
        (self.start[0], self.start[1])
    }

    fn observe(&self, &(x, y): &Self::State) -> Vec<f64> {
        let mut obs = vec![0.0; self.n_cells()];
        obs[self.cell_index(x, y)] = 1.0;
        obs
    }

    fn cell(&self, &(x, y): &Self::State) -> usize {
        self.cell_index(x, y)
    }

    fn step(&self, &(x, y): &Self::State, action: &Action, rng: &mut dyn rand::RngCore) -> Result<(Self::State, f64, bool)> {
        let a = action.discrete().ok_or(Error::InvalidCount("gridworld needs a discrete action"))?;
        let next = match a {
            grid_action::UP => (x, (y + 1).min(self.height)),
            grid_action::DOWN => (x, y.saturating_sub(1).max(1)),
            grid_action::LEFT => (x.saturating_sub(1).max(1), y),
            grid_action::RIGHT => ((x + 1).min(self.width), y),
            _ => return Err(Error::IndexOutOfRange { index: a, len: Self::N_ACTIONS }),
        };
        let reward = self.mean_reward(next.0, next.1) + self.noise_sigma * normal(rng);
        Ok((next, reward, [next.0, next.1] == self.goal))
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn stops_at_goal(&self) -> bool {
        self.terminate_at_goal
    }
}

/// One-dimensional point mass rewarded for passing evenly spaced milestones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SparseLineEnv {
    pub horizon: usize,
    /// Distance between milestones.
    pub interval: f64,
    pub control_cost: f64,
    pub milestone_reward: f64,
    pub step_scale: f64,
}

impl Default for SparseLineEnv {
    fn default() -> Self {
        Self { horizon: 200, interval: 1.0, control_cost: 0.05, milestone_reward: 10.0, step_scale: 0.1 }
    }
}

impl SparseLineEnv {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::config("env.horizon", "must be positive"));
        }
        if !(self.interval > 0.0) {
            return Err(Error::config("env.interval", "must be positive"));
        }
        if !(self.control_cost >= 0.0) {
            return Err(Error::config("env.control_cost", "must be nonnegative"));
        }
        Ok(())
    }

    /// Observation is `[x, 1]` so a linear policy has a bias term.
    pub fn policy_arch(&self) -> PolicyArch {
        PolicyArch::Linear { obs_dim: 2, act_dim: 1 }
    }

    /// Number of milestones passed moving from `from` to `to`; the start
    /// point is excluded and the end point included.
    pub fn milestones_crossed(&self, from: f64, to: f64) -> usize {
        const EPS: f64 = 1e-9;
        let (a, b) = (from / self.interval, to / self.interval);
        let n = if to >= from {
            (b + EPS).floor() - (a + EPS).floor()
        } else {
            (a - EPS).ceil() - (b - EPS).ceil()
        };
        n.max(0.0) as usize
    }
}

impl Dynamics for SparseLineEnv {
    type State = f64;

    fn reset(&self, _rng: &mut dyn rand::RngCore) -> f64 {
        0.0
    }

    fn observe(&self, x: &f64) -> Vec<f64> {
        vec![*x, 1.0]
    }

    fn step(&self, x: &f64, action: &Action, _rng: &mut dyn rand::RngCore) -> Result<(f64, f64, bool)> {
        let a = match action {
            Action::Continuous(v) if v.len() == 1 => v[0],
            _ => return Err(Error::InvalidCount("sparse line needs a 1-d continuous action")),
        };
        let a = if a.is_finite() { a.clamp(-1.0, 1.0) } else { 0.0 };
        let next = x + self.step_scale * a;
        let cost = self.control_cost * a * a;
        let reward = if self.milestones_crossed(*x, next) > 0 { self.milestone_reward - cost } else { -cost };
        Ok((next, reward, false))
    }

    fn horizon(&self) -> usize {
        self.horizon
    }
}

/// Single-step environment whose reward is `cᵀθ` for a linear policy
/// observing `c`; used to check zero-order gradient estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearObjectiveEnv {
    pub direction: Vec<f64>,
    #[serde(default)]
    pub noise_sigma: f64,
}

impl LinearObjectiveEnv {
    pub fn policy_arch(&self) -> PolicyArch {
        PolicyArch::Linear { obs_dim: self.direction.len(), act_dim: 1 }
    }
}

impl Dynamics for LinearObjectiveEnv {
    type State = ();

    fn reset(&self, _rng: &mut dyn rand::RngCore) {}

    fn observe(&self, _: &()) -> Vec<f64> {
        self.direction.clone()
    }

    fn step(&self, _: &(), action: &Action, rng: &mut dyn rand::RngCore) -> Result<((), f64, bool)> {
        let a = match action {
            Action::Continuous(v) if v.len() == 1 => v[0],
            _ => return Err(Error::InvalidCount("linear objective needs a 1-d continuous action")),
        };
        let noise = if self.noise_sigma > 0.0 { self.noise_sigma * normal(rng) } else { 0.0 };
        Ok(((), a + noise, false))
    }

    fn horizon(&self) -> usize {
        1
    }
}

/// Finite MDP `(S, A, r, T, β, γ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// `T(s'|s,a)` at `[(s * A + a) * S + s']`.
    pub transitions: Vec<f64>,
    /// `r(s,a)` at `[s * A + a]`.
    pub rewards: Vec<f64>,
    pub initial: Vec<f64>,
    pub gamma: f64,
}

/// Row-stochastic `π(a|s)` stored at `[s * A + a]`.
pub type TabularPolicy = Vec<f64>;

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transitions: Vec<f64>,
        rewards: Vec<f64>,
        initial: Vec<f64>,
        gamma: f64,
    ) -> Result<Self> {
        let mdp = Self { n_states, n_actions, transitions, rewards, initial, gamma };
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn validate(&self) -> Result<()> {
        let (s, a) = (self.n_states, self.n_actions);
        if s == 0 || a == 0 {
            return Err(Error::InvalidCount("tabular MDP needs states and actions"));
        }
        if self.transitions.len() != s * a * s {
            return Err(Error::dims("TabularMdp transitions", s * a * s, self.transitions.len()));
        }
        if self.rewards.len() != s * a {
            return Err(Error::dims("TabularMdp rewards", s * a, self.rewards.len()));
        }
        if self.initial.len() != s {
            return Err(Error::dims("TabularMdp initial", s, self.initial.len()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidCount("discount must lie in [0, 1)"));
        }
        let stochastic = |row: &[f64]| row.iter().all(|p| *p >= 0.0) && (row.iter().sum::<f64>() - 1.0).abs() <= 1e-12;
        if !self.transitions.chunks(s).all(stochastic) || !stochastic(&self.initial) {
            return Err(Error::InvalidCount("transition rows and initial distribution must be stochastic"));
        }
        Ok(())
    }

    /// Random MDP with rewards in `[0, 1]` and dense random kernels.
    pub fn random(n_states: usize, n_actions: usize, gamma: f64, stream: RngStream) -> Result<Self> {
        let mut rng = stream.rng();
        let mut simplex = |n: usize| {
            let w: Vec<f64> = (0..n).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
            let t: f64 = w.iter().sum();
            w.into_iter().map(|v| v / t).collect::<Vec<f64>>()
        };
        let mut transitions = Vec::with_capacity(n_states * n_actions * n_states);
        for _ in 0..n_states * n_actions {
            transitions.extend(simplex(n_states));
        }
        let initial = simplex(n_states);
        let mut rng = stream.derive(1).rng();
        let rewards = (0..n_states * n_actions).map(|_| rng.random::<f64>()).collect();
        Self::new(n_states, n_actions, transitions, rewards, initial, gamma)
    }

    pub fn random_policy(&self, stream: RngStream) -> TabularPolicy {
        let mut rng = stream.rng();
        let mut pi = Vec::with_capacity(self.n_states * self.n_actions);
        for _ in 0..self.n_states {
            let w: Vec<f64> = (0..self.n_actions).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
            let t: f64 = w.iter().sum();
            pi.extend(w.into_iter().map(|v| v / t));
        }
        pi
    }

    fn check_policy(&self, pi: &[f64]) -> Result<()> {
        if pi.len() != self.n_states * self.n_actions {
            return Err(Error::dims("tabular policy", self.n_states * self.n_actions, pi.len()));
        }
        if pi.chunks(self.n_actions).any(|row| (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 || row.iter().any(|p| *p < 0.0)) {
            return Err(Error::InvalidCount("policy rows must be probability vectors"));
        }
        Ok(())
    }

    /// `P_π(s'|s)` row-major.
    pub fn policy_kernel(&self, pi: &[f64]) -> Vec<f64> {
        let (ns, na) = (self.n_states, self.n_actions);
        let mut p = vec![0.0; ns * ns];
        for s in 0..ns {
            for a in 0..na {
                let w = pi[s * na + a];
                let row = &self.transitions[(s * na + a) * ns..(s * na + a + 1) * ns];
                for (dst, t) in p[s * ns..(s + 1) * ns].iter_mut().zip(row) {
                    *dst += w * t;
                }
            }
        }
        p
    }

    pub fn policy_reward(&self, pi: &[f64]) -> Vec<f64> {
        let na = self.n_actions;
        (0..self.n_states)
            .map(|s| dot(&pi[s * na..(s + 1) * na], &self.rewards[s * na..(s + 1) * na]))
            .collect()
    }

    /// Samples one trajectory of length `horizon` under a tabular policy.
    pub fn sample_trajectory(&self, pi: &[f64], horizon: usize, stream: RngStream) -> Result<Trajectory> {
        self.check_policy(pi)?;
        let (ns, na) = (self.n_states, self.n_actions);
        let mut rng = stream.rng();
        let mut s = sample_categorical(&self.initial, rng.random::<f64>());
        let mut traj = Trajectory {
            observations: Vec::new(),
            actions: Vec::with_capacity(horizon),
            rewards: Vec::with_capacity(horizon),
            cells: Vec::with_capacity(horizon),
            reached_goal: false,
            stream,
        };
        for _ in 0..horizon {
            let a = sample_categorical(&pi[s * na..(s + 1) * na], rng.random::<f64>());
            traj.cells.push(s);
            traj.actions.push(Action::Discrete(a));
            traj.rewards.push(self.rewards[s * na + a]);
            s = sample_categorical(&self.transitions[(s * na + a) * ns..(s * na + a + 1) * ns], rng.random::<f64>());
        }
        Ok(traj)
    }
}

fn identity_minus_scaled(n: usize, gamma: f64, p: &[f64], transpose: bool) -> Vec<f64> {
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let pij = if transpose { p[j * n + i] } else { p[i * n + j] };
            a[i * n + j] = if i == j { 1.0 } else { 0.0 } - gamma * pij;
        }
    }
    a
}

/// Per-state value `v(π, ·)` from `(I − γ P_π) v = r_π`.
pub fn tabular_value(m: &TabularMdp, pi: &[f64]) -> Result<Vec<f64>> {
    m.check_policy(pi)?;
    let n = m.n_states;
    let a = identity_minus_scaled(n, m.gamma, &m.policy_kernel(pi), false);
    solve_dense(n, &a, &m.policy_reward(pi))
}

/// Normalized discounted state occupancy `(1 − γ) βᵀ (I − γ P_π)⁻¹`.
pub fn tabular_state_occupancy(m: &TabularMdp, pi: &[f64]) -> Result<Vec<f64>> {
    m.check_policy(pi)?;
    let n = m.n_states;
    let a = identity_minus_scaled(n, m.gamma, &m.policy_kernel(pi), true);
    let d = solve_dense(n, &a, &m.initial)?;
    Ok(d.into_iter().map(|v| (1.0 - m.gamma) * v).collect())
}

/// Normalized discounted state-action occupancy `ρ^π(s, a)` at `[s * A + a]`.
pub fn tabular_rho(m: &TabularMdp, pi: &[f64]) -> Result<Vec<f64>> {
    let occ = tabular_state_occupancy(m, pi)?;
    let na = m.n_actions;
    Ok((0..m.n_states * na).map(|i| occ[i / na] * pi[i]).collect())
}

/// Start-state value `v(π) = Σ_s β(s) v(π, s)`.
pub fn tabular_start_value(m: &TabularMdp, pi: &[f64]) -> Result<f64> {
    Ok(dot(&m.initial, &tabular_value(m, pi)?))
}

/// Returns `(v, ṽ)` with `v = Σ_s β(s) v(π,s)` and
/// `ṽ = Σ_s ρ^π(s) v(π,s)`, the value seen from occupancy-distributed starts.
pub fn prop1_check(m: &TabularMdp, pi: &[f64]) -> Result<(f64, f64)> {
    let v_states = tabular_value(m, pi)?;
    let occ = tabular_state_occupancy(m, pi)?;
    Ok((dot(&m.initial, &v_states), dot(&occ, &v_states)))
}

/// Tabular MDP exposed to parameterized policies through one-hot states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularEnv {
    pub mdp: TabularMdp,
    pub horizon: usize,
}

impl TabularEnv {
    pub fn policy_arch(&self, hidden: &[usize]) -> PolicyArch {
        PolicyArch::SoftmaxMlp { obs_dim: self.mdp.n_states, hidden: hidden.to_vec(), n_actions: self.mdp.n_actions }
    }
}

impl Dynamics for TabularEnv {
    type State = usize;

    fn reset(&self, rng: &mut dyn rand::RngCore) -> usize {
        sample_categorical(&self.mdp.initial, rng.random::<f64>())
    }

    fn observe(&self, s: &usize) -> Vec<f64> {
        let mut o = vec![0.0; self.mdp.n_states];
        o[*s] = 1.0;
        o
    }

    fn cell(&self, s: &usize) -> usize {
        *s
    }

    fn step(&self, s: &usize, action: &Action, rng: &mut dyn rand::RngCore) -> Result<(usize, f64, bool)> {
        let (ns, na) = (self.mdp.n_states, self.mdp.n_actions);
        let a = action.discrete().ok_or(Error::InvalidCount("tabular env needs a discrete action"))?;
        if a >= na {
            return Err(Error::IndexOutOfRange { index: a, len: na });
        }
        let row = &self.mdp.transitions[(s * na + a) * ns..(s * na + a + 1) * ns];
        let next = sample_categorical(row, rng.random::<f64>());
        Ok((next, self.mdp.rewards[s * na + a], false))
    }

    fn horizon(&self) -> usize {
        self.horizon
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Environment {
    GridWorld(GridWorldEnv),
    SparseLine(SparseLineEnv),
    Tabular(TabularEnv),
    LinearObjective(LinearObjectiveEnv),
}

impl Environment {
    /// Rollout with all stochasticity drawn from `stream`.
    pub fn rollout(&self, policy: &PolicyParams, stream: RngStream) -> Result<Trajectory> {
        match self {
            Environment::GridWorld(e) => run_episode(e, policy, stream),
            Environment::SparseLine(e) => run_episode(e, policy, stream),
            Environment::Tabular(e) => run_episode(e, policy, stream),
            Environment::LinearObjective(e) => run_episode(e, policy, stream),
        }
    }

    /// Default policy architecture for this environment.
    pub fn policy_arch(&self, hidden: &[usize]) -> PolicyArch {
        match self {
            Environment::GridWorld(e) => e.policy_arch(hidden),
            Environment::SparseLine(e) => e.policy_arch(),
            Environment::Tabular(e) => e.policy_arch(hidden),
            Environment::LinearObjective(e) => e.policy_arch(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Environment::GridWorld(e) => e.validate(),
            Environment::SparseLine(e) => e.validate(),
            Environment::Tabular(e) => e.mdp.validate(),
            Environment::LinearObjective(e) if e.direction.is_empty() => {
                Err(Error::config("env.direction", "must be nonempty"))
            }
            Environment::LinearObjective(_) => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{mean, std_dev};
    use crate::policy::PolicyArch;
    use proptest::prelude::*;

    fn traj_from_rewards(rewards: Vec<f64>) -> Trajectory {
        Trajectory {
            observations: vec![],
            actions: vec![],
            cells: vec![],
            rewards,
            reached_goal: false,
            stream: RngStream::new(0, 0),
        }
    }

    // A softmax policy with hugely favoured `action` in every state.
    fn always(arch: PolicyArch, action: usize) -> PolicyParams {
        let n = arch.param_count();
        let n_actions = match &arch {
            PolicyArch::SoftmaxMlp { n_actions, .. } => *n_actions,
            _ => unreachable!(),
        };
        let mut theta = vec![0.0; n];
        theta[n - n_actions + action] = 60.0;
        PolicyParams::new(arch, theta).unwrap()
    }

    fn single_state(r: f64, gamma: f64) -> TabularMdp {
        TabularMdp::new(1, 1, vec![1.0], vec![r], vec![1.0], gamma).unwrap()
    }

    #[test]
    fn discounted_return_cases() {
        let t = traj_from_rewards(vec![1.0, 1.0, 1.0]);
        assert_eq!(discounted_return(&t, 0, 0.5).unwrap(), 1.75);
        assert_eq!(discounted_return(&t, 2, 0.5).unwrap(), 1.0);
        assert!(matches!(discounted_return(&t, 3, 0.5), Err(Error::IndexOutOfRange { .. })));
        let rtg = returns_to_go(&t.rewards, 0.5);
        assert_eq!(rtg, vec![1.75, 1.5, 1.0]);
    }

    #[test]
    fn inner_sampling_singleton_and_empty() {
        let t = traj_from_rewards(vec![3.0]);
        for i in 0..10 {
            assert_eq!(sample_inner(&t, 0.9, RngStream::new(i, 0)).unwrap(), (0, 3.0));
        }
        assert_eq!(sample_inner(&traj_from_rewards(vec![]), 0.9, RngStream::new(0, 0)), Err(Error::EmptyTrajectory));
    }

    #[test]
    fn inner_sampling_is_uniform() {
        let t = traj_from_rewards(vec![1.0, 2.0, 3.0, 4.0]);
        let n = 100_000;
        let mut counts = [0usize; 4];
        let root = RngStream::new(9, 9);
        for i in 0..n {
            counts[sample_inner(&t, 1.0, root.derive(i)).unwrap().0] += 1;
        }
        for c in counts {
            let f = c as f64 / n as f64;
            assert!((0.24..=0.26).contains(&f), "frequency {f}");
        }
    }

    #[test]
    fn gridworld_always_right_hits_wall() {
        let env = GridWorldEnv::default();
        let p = always(env.policy_arch(&[32, 32]), grid_action::RIGHT);
        let t = Environment::GridWorld(env.clone()).rollout(&p, RngStream::new(1, 1)).unwrap();
        assert_eq!(t.len(), 20);
        let xs: Vec<usize> = t.cells.iter().map(|c| env.cell_coords(*c).0).collect();
        assert_eq!(&xs[..8], &[1, 2, 3, 4, 5, 6, 7, 8]);
        assert!(xs[8..].iter().all(|x| *x == 8));
        assert!(!t.reached_goal);
    }

    #[test]
    fn gridworld_goal_terminates() {
        let env = GridWorldEnv { start: [8, 7], ..GridWorldEnv::default() };
        let p = always(env.policy_arch(&[4]), grid_action::UP);
        let t = Environment::GridWorld(env).rollout(&p, RngStream::new(1, 2)).unwrap();
        assert_eq!(t.len(), 1);
        assert!(t.reached_goal);
    }

    #[test]
    fn gridworld_goal_without_termination_runs_to_horizon() {
        let env = GridWorldEnv { start: [8, 7], terminate_at_goal: false, ..GridWorldEnv::default() };
        let p = always(env.policy_arch(&[4]), grid_action::UP);
        let t = Environment::GridWorld(env).rollout(&p, RngStream::new(1, 2)).unwrap();
        assert_eq!(t.len(), 20);
        assert!(t.reached_goal);
    }

    #[test]
    fn gridworld_goal_dominates_mean_reward() {
        let env = GridWorldEnv::default();
        let goal = env.mean_reward(8, 8);
        for x in 1..=8 {
            for y in 1..=8 {
                if (x, y) != (8, 8) {
                    assert!(env.mean_reward(x, y) < goal);
                }
            }
        }
    }

    #[test]
    fn rollouts_replay() {
        let env = Environment::GridWorld(GridWorldEnv::default());
        let p = PolicyParams::init(env.policy_arch(&[8]), RngStream::new(3, 0)).unwrap();
        let a = env.rollout(&p, RngStream::new(5, 1)).unwrap();
        let b = env.rollout(&p, RngStream::new(5, 1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sparse_line_first_milestone_at_step_five() {
        let env = SparseLineEnv { interval: 0.5, control_cost: 0.0, ..SparseLineEnv::default() };
        let p = PolicyParams::new(env.policy_arch(), vec![0.0, 1.0]).unwrap();
        let t = Environment::SparseLine(env).rollout(&p, RngStream::new(0, 0)).unwrap();
        assert_eq!(&t.rewards[..5], &[0.0, 0.0, 0.0, 0.0, 10.0]);
        assert_eq!(&t.rewards[5..10], &[0.0, 0.0, 0.0, 0.0, 10.0]);
    }

    #[test]
    fn sparse_line_control_cost_and_clipping() {
        let env = SparseLineEnv::default();
        let p = PolicyParams::new(env.policy_arch(), vec![0.0, -3.0]).unwrap();
        let t = Environment::SparseLine(env).rollout(&p, RngStream::new(0, 0)).unwrap();
        assert!((t.rewards[0] + 0.05).abs() < 1e-15);
        assert!((t.rewards[9] - 9.95).abs() < 1e-12);
        assert_eq!(t.len(), 200);
    }

    #[test]
    fn linear_objective_rewards_inner_product() {
        let env = LinearObjectiveEnv { direction: vec![1.0, -2.0], noise_sigma: 0.0 };
        let p = PolicyParams::new(env.policy_arch(), vec![3.0, 0.5]).unwrap();
        let t = Environment::LinearObjective(env).rollout(&p, RngStream::new(0, 0)).unwrap();
        assert_eq!(t.rewards, vec![2.0]);
    }

    #[test]
    fn tabular_single_state_closed_forms() {
        let m = single_state(1.0, 0.5);
        assert_eq!(tabular_value(&m, &[1.0]).unwrap(), vec![2.0]);
        assert_eq!(tabular_rho(&m, &[1.0]).unwrap(), vec![1.0]);
        let zero = single_state(0.0, 0.5);
        assert_eq!(tabular_value(&zero, &[1.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn tabular_value_matches_value_iteration() {
        let m = TabularMdp::random(6, 3, 0.9, RngStream::new(17, 0)).unwrap();
        let pi = m.random_policy(RngStream::new(17, 1));
        let exact = tabular_value(&m, &pi).unwrap();
        let (ns, na) = (m.n_states, m.n_actions);
        let mut v = vec![0.0; ns];
        for _ in 0..10_000 {
            v = (0..ns)
                .map(|s| {
                    (0..na)
                        .map(|a| {
                            let row = &m.transitions[(s * na + a) * ns..(s * na + a + 1) * ns];
                            pi[s * na + a] * (m.rewards[s * na + a] + m.gamma * dot(row, &v))
                        })
                        .sum()
                })
                .collect();
        }
        for (a, b) in exact.iter().zip(&v) {
            assert!((a - b).abs() <= 1e-8);
        }
    }

    #[test]
    fn rho_is_a_distribution_and_weights_rewards() {
        for seed in 0..20 {
            let m = TabularMdp::random(6, 2, 0.9, RngStream::new(seed, 0)).unwrap();
            let pi = m.random_policy(RngStream::new(seed, 1));
            let rho = tabular_rho(&m, &pi).unwrap();
            assert!(rho.iter().all(|p| *p >= 0.0));
            assert!((rho.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
            // normalized occupancy carries the (1 − γ) factor
            let v = tabular_start_value(&m, &pi).unwrap();
            assert!((dot(&rho, &m.rewards) - (1.0 - m.gamma) * v).abs() <= 1e-10);
        }
    }

    #[test]
    fn rho_small_discount_limit() {
        let mut m = TabularMdp::random(4, 3, 0.5, RngStream::new(4, 0)).unwrap();
        m.gamma = 1e-12;
        let pi = m.random_policy(RngStream::new(4, 1));
        let rho = tabular_rho(&m, &pi).unwrap();
        for i in 0..rho.len() {
            assert!((rho[i] - m.initial[i / m.n_actions] * pi[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn prop1_at_zero_discount() {
        let m = TabularMdp::random(5, 2, 0.0, RngStream::new(1, 0)).unwrap();
        let pi = m.random_policy(RngStream::new(1, 1));
        let (v, vt) = prop1_check(&m, &pi).unwrap();
        assert!((v - vt).abs() < 1e-12);
    }

    #[test]
    fn bad_tabular_inputs() {
        assert!(TabularMdp::new(1, 1, vec![0.5], vec![1.0], vec![1.0], 0.5).is_err());
        assert!(TabularMdp::new(1, 1, vec![1.0], vec![1.0], vec![1.0], 1.0).is_err());
        let m = single_state(1.0, 0.5);
        assert!(tabular_value(&m, &[0.5]).is_err());
    }

    #[test]
    fn monte_carlo_matches_tabular_value() {
        let m = TabularMdp::random(4, 2, 0.8, RngStream::new(99, 0)).unwrap();
        let pi = m.random_policy(RngStream::new(99, 1));
        let exact = tabular_start_value(&m, &pi).unwrap();
        let root = RngStream::new(99, 2);
        let returns: Vec<f64> = (0..10_000)
            .map(|i| m.sample_trajectory(&pi, 150, root.derive(i)).unwrap().total_return(m.gamma))
            .collect();
        let se = std_dev(&returns) / (returns.len() as f64).sqrt();
        assert!((mean(&returns) - exact).abs() <= 3.0 * se, "mc {} exact {exact} se {se}", mean(&returns));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn discounted_return_matches_naive_sum(rewards in prop::collection::vec(-5.0f64..5.0, 1..40), gamma in 0.0f64..1.0, start_frac in 0.0f64..1.0) {
            let t = traj_from_rewards(rewards.clone());
            let start = ((rewards.len() as f64 * start_frac) as usize).min(rewards.len() - 1);
            let naive: f64 = (start..rewards.len()).map(|k| gamma.powi((k - start) as i32) * rewards[k]).sum();
            let got = discounted_return(&t, start, gamma).unwrap();
            prop_assert!((got - naive).abs() <= 1e-12 * naive.abs().max(1.0));
            prop_assert!((returns_to_go(&rewards, gamma)[start] - naive).abs() <= 1e-12 * naive.abs().max(1.0));
        }

        #[test]
        fn value_equals_normalized_linear_form(seed in any::<u64>(), ns in 1usize..=8, na in 1usize..=3, gi in 0usize..3) {
            let gamma = [0.5, 0.9, 0.99][gi];
            let m = TabularMdp::random(ns, na, gamma, RngStream::new(seed, 0)).unwrap();
            let pi = m.random_policy(RngStream::new(seed, 1));
            let v = tabular_start_value(&m, &pi).unwrap();
            let rho = tabular_rho(&m, &pi).unwrap();
            prop_assert!((dot(&rho, &m.rewards) / (1.0 - gamma) - v).abs() <= 1e-10 * v.abs().max(1.0));
        }
    }
}
