//! Training loops: antithetic evolution strategies, the bandit-guided RepES
//! variant, REINFORCE with a learned baseline, and the bandit-regularized
//! RepPG variant.

use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::config::{BanditConfig, DriverKind, RunConfig};
use crate::decision_set::{history_set, latent_choice, policy_space_set, Provenance};
use crate::environments::{returns_to_go, sample_inner, Environment, Trajectory};
use crate::error::{Error, Result};
use crate::linear_bandit::BanditState;
use crate::metrics::{MetricsLog, MetricsRow};
use crate::neuralnet::{Activation, AdamState, DenseNet};
use crate::numerics::{fill_gaussian, mean, norm2, std_dev, RngStream};
use crate::policy::{Action, PolicyParams};
use crate::representation::{train_representation, History, Representation};

const SIGMA_FLOOR: f64 = 1e-8;

// Sub-stream tags. Sharing them between drivers is what makes the
// reductions (RepES at m = 1, RepPG at ζ = 0) replay their baselines exactly.
const TAG_INIT_POLICY: u64 = 1;
const TAG_INIT_REPR: u64 = 2;
const TAG_INIT_BASELINE: u64 = 3;
const TAG_ROUND: u64 = 10;
const TAG_EVAL_DELTAS: u64 = 11;
const TAG_ROLLOUT: u64 = 12;
const TAG_INNER: u64 = 13;
const TAG_TRAIN: u64 = 14;
const TAG_DECISION: u64 = 15;
const TAG_BANDIT: u64 = 16;
const TAG_FEATURES: u64 = 17;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EsConfig {
    /// Perturbation standard deviation ν.
    pub nu: f64,
    /// Step size α.
    pub step_size: f64,
    /// Antithetic evaluation pairs K per round.
    pub eval_pairs: usize,
    /// Antithetic decision pairs N scored by the bandit per round.
    pub decision_size: usize,
    /// Weight m of the plain ES gradient in the RepES update.
    pub mixing: f64,
    pub gamma: f64,
    /// Inner-trajectory return samples recorded per rollout.
    pub inner_samples: usize,
}

impl Default for EsConfig {
    fn default() -> Self {
        Self {
            nu: 0.1,
            step_size: 0.1,
            eval_pairs: 50,
            decision_size: 2048,
            mixing: 0.2,
            gamma: 0.995,
            inner_samples: 4,
        }
    }
}

impl EsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::config("es.nu", "must be positive"));
        }
        if !self.step_size.is_finite() {
            return Err(Error::config("es.step_size", "must be finite"));
        }
        if self.eval_pairs == 0 {
            return Err(Error::config("es.eval_pairs", "must be at least 1"));
        }
        if self.decision_size == 0 {
            return Err(Error::config("es.decision_size", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.mixing) {
            return Err(Error::config("es.mixing", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config("es.gamma", "must lie in [0, 1]"));
        }
        if self.inner_samples == 0 {
            return Err(Error::config("es.inner_samples", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PgConfig {
    /// Weight ζ of `‖θ − θ̃‖₂`.
    pub zeta: f64,
    /// Rollouts collected per round.
    pub collect: usize,
    /// Gradient steps per round.
    pub grad_steps: usize,
    pub baseline_hidden: Vec<usize>,
    pub learning_rate: f64,
    pub baseline_learning_rate: f64,
    pub gamma: f64,
    pub inner_samples: usize,
}

impl Default for PgConfig {
    fn default() -> Self {
        Self {
            zeta: 1.0,
            collect: 16,
            grad_steps: 4,
            baseline_hidden: vec![32],
            learning_rate: 1e-2,
            baseline_learning_rate: 1e-2,
            gamma: 0.99,
            inner_samples: 4,
        }
    }
}

impl PgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.zeta >= 0.0 && self.zeta.is_finite()) {
            return Err(Error::config("pg.zeta", "must be nonnegative"));
        }
        if self.collect == 0 {
            return Err(Error::config("pg.collect", "must be at least 1"));
        }
        if self.grad_steps == 0 {
            return Err(Error::config("pg.grad_steps", "must be at least 1"));
        }
        if self.baseline_hidden.contains(&0) {
            return Err(Error::config("pg.baseline_hidden", "layer sizes must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("pg.learning_rate", "must be positive"));
        }
        if !(self.baseline_learning_rate > 0.0) {
            return Err(Error::config("pg.baseline_learning_rate", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config("pg.gamma", "must lie in [0, 1]"));
        }
        if self.inner_samples == 0 {
            return Err(Error::config("pg.inner_samples", "must be at least 1"));
        }
        Ok(())
    }
}

/// Antithetic rollouts around a center policy.
#[derive(Debug, Clone)]
pub struct EvalBatch {
    /// Rows are the perturbations `δᵢ` (already scaled by ν).
    pub deltas: Array2<f64>,
    pub plus: Vec<Trajectory>,
    pub minus: Vec<Trajectory>,
    pub returns_plus: Vec<f64>,
    pub returns_minus: Vec<f64>,
}

impl EvalBatch {
    pub fn trajectories(&self) -> impl Iterator<Item = &Trajectory> {
        self.plus.iter().chain(&self.minus)
    }

    pub fn returns(&self) -> Vec<f64> {
        self.returns_plus.iter().chain(&self.returns_minus).copied().collect()
    }
}

fn gaussian_matrix(rows: usize, cols: usize, scale: f64, stream: RngStream) -> Array2<f64> {
    let mut rng = stream.rng();
    let data: Vec<f64> = fill_gaussian(&mut rng, rows * cols).into_iter().map(|v| v * scale).collect();
    Array2::from_shape_vec((rows, cols), data).expect("matrix shape")
}

fn shifted(theta: &[f64], delta: ndarray::ArrayView1<'_, f64>, sign: f64) -> Vec<f64> {
    theta.iter().zip(delta).map(|(t, d)| t + sign * d).collect()
}

/// Rolls out `θ ± δᵢ` for `i < pairs`.
pub fn evaluate_pairs(
    theta: &PolicyParams,
    env: &Environment,
    nu: f64,
    pairs: usize,
    gamma: f64,
    stream: RngStream,
) -> Result<EvalBatch> {
    let deltas = gaussian_matrix(pairs, theta.theta().len(), nu, stream.derive(TAG_EVAL_DELTAS));
    let mut plus = Vec::with_capacity(pairs);
    let mut minus = Vec::with_capacity(pairs);
    for (i, d) in deltas.axis_iter(Axis(0)).enumerate() {
        let p = theta.with_theta(shifted(theta.theta(), d, 1.0))?;
        let m = theta.with_theta(shifted(theta.theta(), d, -1.0))?;
        plus.push(env.rollout(&p, stream.derive2(TAG_ROLLOUT, 2 * i as u64))?);
        minus.push(env.rollout(&m, stream.derive2(TAG_ROLLOUT, 2 * i as u64 + 1))?);
    }
    let ret = |t: &Trajectory| t.total_return(gamma);
    let returns_plus = plus.iter().map(ret).collect();
    let returns_minus = minus.iter().map(ret).collect();
    Ok(EvalBatch { deltas, plus, minus, returns_plus, returns_minus })
}

/// `(1 / (K σ)) Σ (s⁺ᵢ − s⁻ᵢ) δᵢ` with `σ` the floored std of all `2K` scores.
pub fn antithetic_gradient(deltas: &Array2<f64>, plus: &[f64], minus: &[f64]) -> Vec<f64> {
    let k = plus.len();
    let all: Vec<f64> = plus.iter().chain(minus).copied().collect();
    let sigma = std_dev(&all).max(SIGMA_FLOOR);
    let diffs = Array1::from_iter(plus.iter().zip(minus).map(|(p, m)| p - m));
    let g = deltas.t().dot(&diffs);
    let scale = 1.0 / (sigma * k as f64);
    g.iter().map(|v| v * scale).collect()
}

/// Plain ES gradient of an evaluation batch.
pub fn es_gradient(batch: &EvalBatch) -> Vec<f64> {
    antithetic_gradient(&batch.deltas, &batch.returns_plus, &batch.returns_minus)
}

fn apply_step(theta: &PolicyParams, step_size: f64, grad: &[f64]) -> Result<PolicyParams> {
    theta.with_theta(theta.theta().iter().zip(grad).map(|(t, g)| t + step_size * g).collect())
}

/// One antithetic ES update.
pub fn es_step(
    theta: &PolicyParams,
    env: &Environment,
    cfg: &EsConfig,
    stream: RngStream,
) -> Result<(PolicyParams, EvalBatch)> {
    let batch = evaluate_pairs(theta, env, cfg.nu, cfg.eval_pairs, cfg.gamma, stream)?;
    let next = apply_step(theta, cfg.step_size, &es_gradient(&batch))?;
    Ok((next, batch))
}

/// Representation, bandit and history carried across rounds.
#[derive(Debug, Clone)]
pub struct RepState {
    pub rep: Representation,
    pub bandit: BanditState,
    pub history: History,
    pub bandit_cfg: BanditConfig,
    /// Centers visited so far, most recent last (history decision sets).
    pub centers: Vec<Vec<f64>>,
    /// Rollouts recorded so far.
    pub episodes: usize,
}

impl RepState {
    pub fn new(rep: Representation, bandit_cfg: BanditConfig) -> Result<Self> {
        let bandit = BanditState::new(rep.latent_dim(), bandit_cfg.lambda)?;
        Ok(Self { rep, bandit, history: History::new(), bandit_cfg, centers: Vec::new(), episodes: 0 })
    }

    fn record(&mut self, theta: &[f64], trajs: &[&Trajectory], gamma: f64, inner: usize, round: usize, stream: RngStream) -> Result<()> {
        let id = self.history.add_theta(theta.to_vec(), round);
        self.rep.norm.observe_theta(theta)?;
        for (r, traj) in trajs.iter().enumerate() {
            for j in 0..inner {
                let (_, g) = sample_inner(traj, gamma, stream.derive2(r as u64, j as u64))?;
                self.history.add_entry(id, g, self.episodes)?;
                self.rep.norm.observe_target(g)?;
            }
            self.episodes += 1;
        }
        Ok(())
    }

    /// Retrains the representation on the training window, drops history no
    /// longer needed and rebuilds the bandit over the bandit window.
    fn refit(&mut self, round: usize, stream: RngStream) -> Result<Option<f64>> {
        let train_from = round.saturating_sub(self.rep.config.train_window);
        let epochs = self.rep.config.epochs;
        let loss = train_representation(&mut self.rep, &self.history, train_from, epochs, stream.derive(TAG_TRAIN))?;
        let bandit_from = match self.bandit_cfg.history_window {
            0 => 0,
            w => (round + 1).saturating_sub(w),
        };
        if self.bandit_cfg.history_window > 0 {
            self.history.prune_before(bandit_from.min(train_from));
        }
        self.rep.refresh_features(&mut self.history, bandit_from, stream.derive(TAG_FEATURES))?;
        let pairs: Vec<(&[f64], f64)> = self
            .history
            .entries_since(bandit_from)
            .map(|e| {
                let rec = self.history.theta(e.theta_id)?;
                Ok((rec.feature.as_slice(), self.rep.norm.normalize_target(e.g_tilde)))
            })
            .collect::<Result<_>>()?;
        self.bandit = BanditState::rebuild(self.rep.latent_dim(), self.bandit_cfg.lambda, pairs)?;
        Ok(loss)
    }
}

/// Per-round numbers reported by every driver.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundStats {
    pub mean_return: f64,
    pub best_return: f64,
    pub goal_rate: f64,
    pub repr_loss: Option<f64>,
}

fn rollout_stats<'a>(trajs: impl Iterator<Item = &'a Trajectory>) -> RoundStats {
    let mut returns = Vec::new();
    let mut goals = 0usize;
    for t in trajs {
        returns.push(t.rewards.iter().sum::<f64>());
        goals += usize::from(t.reached_goal);
    }
    RoundStats {
        mean_return: mean(&returns),
        best_return: returns.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        goal_rate: goals as f64 / returns.len().max(1) as f64,
        repr_loss: None,
    }
}

/// One RepES round: evaluate, record, refit, score decision pairs with the
/// bandit and mix the resulting gradient with the plain ES gradient.
pub fn repes_step(
    theta: &PolicyParams,
    env: &Environment,
    state: &mut RepState,
    cfg: &EsConfig,
    round: usize,
    stream: RngStream,
) -> Result<(PolicyParams, RoundStats)> {
    let batch = evaluate_pairs(theta, env, cfg.nu, cfg.eval_pairs, cfg.gamma, stream)?;
    let g_es = es_gradient(&batch);

    for (i, d) in batch.deltas.axis_iter(Axis(0)).enumerate() {
        for (sign, traj, slot) in [(1.0, &batch.plus[i], 2 * i), (-1.0, &batch.minus[i], 2 * i + 1)] {
            let inner = stream.derive2(TAG_INNER, slot as u64);
            state.record(&shifted(theta.theta(), d, sign), &[traj], cfg.gamma, cfg.inner_samples, round, inner)?;
        }
    }
    let repr_loss = state.refit(round, stream)?;

    let deltas = gaussian_matrix(cfg.decision_size, theta.theta().len(), cfg.nu, stream.derive(TAG_DECISION));
    let (fp, fm) = state.rep.features_antithetic(theta.theta(), &deltas, stream.derive(TAG_FEATURES))?;
    let rows: Vec<ndarray::ArrayView1<'_, f64>> = fp.axis_iter(Axis(0)).chain(fm.axis_iter(Axis(0))).collect();
    let features: Vec<&[f64]> = rows.iter().map(|r| r.to_slice().expect("contiguous rows")).collect();
    let scores = state.bandit.scores(&features, &state.bandit_cfg.rule(), stream.derive(TAG_BANDIT))?;
    let (sp, sm) = scores.split_at(cfg.decision_size);
    let g_t = antithetic_gradient(&deltas, sp, sm);

    let m = cfg.mixing;
    let mixed: Vec<f64> = g_t.iter().zip(&g_es).map(|(gt, ge)| (1.0 - m) * gt + m * ge).collect();
    let next = apply_step(theta, cfg.step_size, &mixed)?;
    let mut stats = rollout_stats(batch.trajectories());
    stats.repr_loss = repr_loss;
    Ok((next, stats))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReinforceGrads {
    /// Gradient of the surrogate `−(1/T) Σ ln π(a|s) (G − b(s))`.
    pub policy: Vec<f64>,
    /// Gradient of `(1/T) Σ ½ (b(s) − G)²`.
    pub baseline: Vec<f64>,
    pub surrogate: f64,
}

/// REINFORCE with a state-value baseline, averaged over all time steps.
pub fn reinforce_loss(trajs: &[Trajectory], p: &PolicyParams, baseline: &DenseNet, gamma: f64) -> Result<ReinforceGrads> {
    if !p.is_discrete() {
        return Err(Error::UnsupportedForLinear);
    }
    let steps: usize = trajs.iter().map(Trajectory::len).sum();
    if steps == 0 {
        return Err(Error::EmptyTrajectory);
    }
    let mut policy = vec![0.0; p.theta().len()];
    let mut baseline_grad = vec![0.0; baseline.param_count()];
    let mut surrogate = 0.0;
    let scale = 1.0 / steps as f64;
    for traj in trajs {
        let g = returns_to_go(&traj.rewards, gamma);
        for (t, (obs, action)) in traj.observations.iter().zip(&traj.actions).enumerate() {
            let a = match action {
                Action::Discrete(a) => *a,
                Action::Continuous(_) => return Err(Error::UnsupportedForLinear),
            };
            let (b, cache) = baseline.forward(obs)?;
            let adv = g[t] - b[0];
            let probs = p.probabilities(obs)?;
            surrogate -= scale * probs[a].ln() * adv;
            let lg = p.logprob_grad(obs, a)?;
            policy.iter_mut().zip(&lg).for_each(|(acc, v)| *acc -= scale * v * adv);
            let bg = baseline.backward(&cache, &[scale * (b[0] - g[t])])?;
            baseline_grad.iter_mut().zip(&bg).for_each(|(acc, v)| *acc += v);
        }
    }
    Ok(ReinforceGrads { policy, baseline: baseline_grad, surrogate })
}

/// Learner state for the policy-gradient drivers.
#[derive(Debug, Clone)]
pub struct PgLearner {
    pub theta: PolicyParams,
    pub baseline: DenseNet,
    pub policy_adam: AdamState,
    pub baseline_adam: AdamState,
}

impl PgLearner {
    pub fn new(theta: PolicyParams, cfg: &PgConfig, stream: RngStream) -> Result<Self> {
        let mut dims = vec![theta.arch().obs_dim()];
        dims.extend_from_slice(&cfg.baseline_hidden);
        dims.push(1);
        let baseline = DenseNet::init(&dims, Activation::Tanh, Activation::None, stream)?;
        let policy_adam = AdamState::new(theta.theta().len(), cfg.learning_rate);
        let baseline_adam = AdamState::new(baseline.param_count(), cfg.baseline_learning_rate);
        Ok(Self { theta, baseline, policy_adam, baseline_adam })
    }
}

fn collect(learner: &PgLearner, env: &Environment, cfg: &PgConfig, stream: RngStream) -> Result<Vec<Trajectory>> {
    (0..cfg.collect)
        .map(|i| env.rollout(&learner.theta, stream.derive2(TAG_ROLLOUT, i as u64)))
        .collect()
}

fn pg_descend(learner: &mut PgLearner, trajs: &[Trajectory], gamma: f64, extra: Option<Vec<f64>>) -> Result<()> {
    let mut grads = reinforce_loss(trajs, &learner.theta, &learner.baseline, gamma)?;
    if let Some(extra) = extra {
        grads.policy.iter_mut().zip(&extra).for_each(|(g, e)| *g += e);
    }
    let mut theta = learner.theta.theta().to_vec();
    learner.policy_adam.update(&mut theta, &grads.policy)?;
    learner.theta = learner.theta.with_theta(theta)?;
    learner.baseline_adam.update(learner.baseline.params_mut(), &grads.baseline)?;
    Ok(())
}

/// One round of standalone REINFORCE: collect, then `grad_steps` updates.
pub fn reinforce_step(learner: &mut PgLearner, env: &Environment, cfg: &PgConfig, stream: RngStream) -> Result<RoundStats> {
    let trajs = collect(learner, env, cfg, stream)?;
    for _ in 0..cfg.grad_steps {
        pg_descend(learner, &trajs, cfg.gamma, None)?;
    }
    Ok(rollout_stats(trajs.iter()))
}

/// Subgradient of `ζ‖θ − θ̃‖₂`, zero at `θ = θ̃`.
pub fn distance_subgradient(theta: &[f64], target: &[f64], zeta: f64) -> Vec<f64> {
    let diff: Vec<f64> = theta.iter().zip(target).map(|(a, b)| a - b).collect();
    let n = norm2(&diff);
    if n == 0.0 {
        return vec![0.0; diff.len()];
    }
    diff.into_iter().map(|d| zeta * d / n).collect()
}

/// Bandit choice `θ̃` from a freshly built decision set around `theta`.
pub fn select_target(
    theta: &PolicyParams,
    state: &RepState,
    ds: &crate::decision_set::DecisionSetConfig,
    stream: RngStream,
) -> Result<Vec<f64>> {
    let rule = state.bandit_cfg.rule();
    let pick = |features: &[Vec<f64>]| state.bandit.select(features, &rule, stream.derive(TAG_BANDIT));
    match ds.kind {
        Provenance::PolicySpace => {
            let set = policy_space_set(&state.rep, theta, ds.nu, ds.size, stream.derive(TAG_DECISION))?;
            let i = pick(&set.feature_rows())?;
            Ok(set.candidates[i].clone())
        }
        Provenance::History => {
            let n_per = ds.size.div_ceil(ds.history_window.min(state.centers.len()).max(1));
            let set = history_set(&state.rep, &state.centers, ds.nu, n_per, ds.history_window, stream.derive(TAG_DECISION))?;
            let i = pick(&set.feature_rows())?;
            Ok(set.candidates[i].clone())
        }
        Provenance::LatentSpace => {
            let (_, inv) = latent_choice(&state.rep, theta, ds, pick, stream.derive(TAG_DECISION))?;
            Ok(inv.params.theta().to_vec())
        }
    }
}

/// One RepPG round: REINFORCE pulled toward the bandit's preferred policy.
pub fn reppg_step(
    learner: &mut PgLearner,
    env: &Environment,
    state: &mut RepState,
    cfg: &PgConfig,
    ds: &crate::decision_set::DecisionSetConfig,
    round: usize,
    stream: RngStream,
) -> Result<RoundStats> {
    let trajs = collect(learner, env, cfg, stream)?;
    let refs: Vec<&Trajectory> = trajs.iter().collect();
    state.centers.push(learner.theta.theta().to_vec());
    state.record(learner.theta.theta(), &refs, cfg.gamma, cfg.inner_samples, round, stream.derive(TAG_INNER))?;
    let repr_loss = state.refit(round, stream)?;
    for step in 0..cfg.grad_steps {
        let target = select_target(&learner.theta, state, ds, stream.derive2(TAG_DECISION, step as u64))?;
        let extra = (cfg.zeta > 0.0).then(|| distance_subgradient(learner.theta.theta(), &target, cfg.zeta));
        pg_descend(learner, &trajs, cfg.gamma, extra)?;
    }
    let mut stats = rollout_stats(trajs.iter());
    stats.repr_loss = repr_loss;
    Ok(stats)
}

/// Final state of a training run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub log: MetricsLog,
    pub theta: PolicyParams,
    pub state: Option<RepState>,
}

pub fn round_stream(seed: u64, round: usize) -> RngStream {
    RngStream::new(seed, 0).derive2(TAG_ROUND, round as u64)
}

pub fn initial_policy(config: &RunConfig, seed: u64) -> Result<PolicyParams> {
    let arch = config.env.policy_arch(&config.policy.hidden);
    PolicyParams::init(arch, RngStream::new(seed, 0).derive(TAG_INIT_POLICY))
}

/// Runs `config.run.rounds` rounds of the configured driver.
pub fn run_training(config: &RunConfig, seed: u64) -> Result<RunOutput> {
    config.validate()?;
    let root = RngStream::new(seed, 0);
    let env = &config.env;
    let mut theta = initial_policy(config, seed)?;
    let mut log = MetricsLog::new(config, seed)?;
    let started = Instant::now();
    let elapsed = |t: &Instant| if config.run.wall_clock { t.elapsed().as_secs_f64() } else { 0.0 };

    let needs_rep = matches!(config.run.driver, DriverKind::Repes | DriverKind::Reppg);
    let mut state = if needs_rep {
        let rep = Representation::new(theta.theta().len(), config.representation.clone(), root.derive(TAG_INIT_REPR))?;
        Some(RepState::new(rep, config.bandit.clone())?)
    } else {
        None
    };
    let mut learner = match config.run.driver {
        DriverKind::Reppg | DriverKind::Reinforce => {
            Some(PgLearner::new(theta.clone(), &config.pg, root.derive(TAG_INIT_BASELINE))?)
        }
        _ => None,
    };

    for round in 0..config.run.rounds {
        let stream = round_stream(seed, round);
        let stats = match config.run.driver {
            DriverKind::Es => {
                let (next, batch) = es_step(&theta, env, &config.es, stream)?;
                theta = next;
                rollout_stats(batch.trajectories())
            }
            DriverKind::Repes => {
                let st = state.as_mut().expect("representation state");
                let (next, stats) = repes_step(&theta, env, st, &config.es, round, stream)?;
                theta = next;
                stats
            }
            DriverKind::Reinforce => {
                let l = learner.as_mut().expect("learner");
                let stats = reinforce_step(l, env, &config.pg, stream)?;
                theta = l.theta.clone();
                stats
            }
            DriverKind::Reppg => {
                let l = learner.as_mut().expect("learner");
                let st = state.as_mut().expect("representation state");
                let stats = reppg_step(l, env, st, &config.pg, &config.decision_set, round, stream)?;
                theta = l.theta.clone();
                stats
            }
        };
        let (w_norm, logdet_v) = match &state {
            Some(s) => (Some(s.bandit.estimate_norm()), Some(s.bandit.log_det_design())),
            None => (None, None),
        };
        log.push(MetricsRow {
            round,
            mean_return: stats.mean_return,
            best_return: stats.best_return,
            goal_rate: stats.goal_rate,
            w_norm,
            logdet_v,
            repr_loss: stats.repr_loss,
            elapsed: elapsed(&started),
        })?;
    }
    Ok(RunOutput { log, theta, state })
}
