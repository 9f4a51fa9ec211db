//! Candidate policy sets offered to the bandit: perturbations in policy
//! space, in latent space (with gradient-based inversion), or around
//! recently visited policies.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{fill_gaussian, RngStream};
use crate::policy::PolicyParams;
use crate::representation::{FeatureMode, Representation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    #[default]
    PolicySpace,
    LatentSpace,
    History,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InversionConfig {
    pub steps: usize,
    pub lr: f64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self { steps: 200, lr: 1e-2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecisionSetConfig {
    pub kind: Provenance,
    pub nu: f64,
    pub size: usize,
    /// Number of recent policies perturbed by the history constructor.
    pub history_window: usize,
    pub inversion: InversionConfig,
}

impl Default for DecisionSetConfig {
    fn default() -> Self {
        Self { kind: Provenance::PolicySpace, nu: 0.02, size: 2048, history_window: 20, inversion: InversionConfig::default() }
    }
}

impl DecisionSetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::config("decision_set.nu", "must be positive"));
        }
        if self.size == 0 {
            return Err(Error::config("decision_set.size", "must be at least 1"));
        }
        if self.history_window == 0 {
            return Err(Error::config("decision_set.history_window", "must be at least 1"));
        }
        if !(self.inversion.lr > 0.0 && self.inversion.lr.is_finite()) {
            return Err(Error::config("decision_set.inversion.lr", "must be positive"));
        }
        Ok(())
    }
}

/// Aligned candidate parameter vectors and their latent features.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionSet {
    pub candidates: Vec<Vec<f64>>,
    pub features: Array2<f64>,
    pub provenance: Provenance,
}

impl DecisionSet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn feature_rows(&self) -> Vec<Vec<f64>> {
        self.features.axis_iter(Axis(0)).map(|r| r.to_vec()).collect()
    }

    pub fn candidate(&self, index: usize, like: &PolicyParams) -> Result<PolicyParams> {
        let theta = self
            .candidates
            .get(index)
            .ok_or(Error::IndexOutOfRange { index, len: self.len() })?;
        like.with_theta(theta.clone())
    }
}

fn check_noise(nu: f64, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidCount("decision set size must be at least 1"));
    }
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::InvalidCount("perturbation scale must be positive"));
    }
    Ok(())
}

fn perturb(center: &[f64], nu: f64, rng: &mut impl rand::Rng) -> Vec<f64> {
    fill_gaussian(rng, center.len()).into_iter().zip(center).map(|(e, c)| c + nu * e).collect()
}

fn features_of(rep: &Representation, candidates: &[Vec<f64>], stream: RngStream) -> Result<Array2<f64>> {
    match rep.config.features {
        FeatureMode::Mean => {
            let refs: Vec<&[f64]> = candidates.iter().map(Vec::as_slice).collect();
            rep.feature_means(&refs)
        }
        FeatureMode::Sample => {
            let mut out = Array2::zeros((candidates.len(), rep.latent_dim()));
            for (i, (mut row, c)) in out.axis_iter_mut(Axis(0)).zip(candidates).enumerate() {
                let f = rep.feature(c, stream.derive(i as u64))?;
                row.iter_mut().zip(f).for_each(|(d, v)| *d = v);
            }
            Ok(out)
        }
    }
}

/// `θ + εᵢ`, `εᵢ ~ N(0, ν²I)`.
pub fn policy_space_set(
    rep: &Representation,
    theta: &PolicyParams,
    nu: f64,
    n: usize,
    stream: RngStream,
) -> Result<DecisionSet> {
    check_noise(nu, n)?;
    let mut rng = stream.derive(0).rng();
    let candidates: Vec<Vec<f64>> = (0..n).map(|_| perturb(theta.theta(), nu, &mut rng)).collect();
    let features = features_of(rep, &candidates, stream.derive(1))?;
    Ok(DecisionSet { candidates, features, provenance: Provenance::PolicySpace })
}

/// `z + εᵢ`, `εᵢ ~ N(0, ν²I)`.
pub fn latent_space_set(z: &[f64], nu: f64, n: usize, stream: RngStream) -> Result<Vec<Vec<f64>>> {
    check_noise(nu, n)?;
    if z.is_empty() {
        return Err(Error::InvalidCount("latent vector must be nonempty"));
    }
    let mut rng = stream.rng();
    Ok((0..n).map(|_| perturb(z, nu, &mut rng)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inversion {
    pub params: PolicyParams,
    /// `‖μ(θ) − z*‖²` at the returned point.
    pub objective: f64,
    pub initial_objective: f64,
}

/// Gradient descent on `‖μ(θ) − z*‖²` from `theta_init`, returning the best
/// iterate seen.
pub fn invert_latent(
    rep: &Representation,
    z_target: &[f64],
    theta_init: &PolicyParams,
    steps: usize,
    lr: f64,
) -> Result<Inversion> {
    let std = rep.norm.theta_std().to_vec();
    let objective_and_grad = |theta: &[f64]| -> Result<(f64, Vec<f64>)> {
        let x = rep.norm.normalize_theta(theta)?;
        let (half, dx) = rep.encoder.mean_input_grad(&x, z_target)?;
        // chain through the normalization and undo the ½
        Ok((2.0 * half, dx.iter().zip(&std).map(|(g, s)| 2.0 * g / s).collect()))
    };
    let mut theta = theta_init.theta().to_vec();
    let (initial_objective, mut grad) = objective_and_grad(&theta)?;
    let mut best = (initial_objective, theta.clone());
    for _ in 0..steps {
        theta.iter_mut().zip(&grad).for_each(|(t, g)| *t -= lr * g);
        let (obj, g) = objective_and_grad(&theta)?;
        if !obj.is_finite() {
            break;
        }
        if obj < best.0 {
            best = (obj, theta.clone());
        }
        grad = g;
    }
    Ok(Inversion { params: theta_init.with_theta(best.1)?, objective: best.0, initial_objective })
}

/// Latent candidates around the encoding of `theta`, the bandit-preferred
/// latent, and the inverted policy.
pub fn latent_choice(
    rep: &Representation,
    theta: &PolicyParams,
    cfg: &DecisionSetConfig,
    pick: impl FnOnce(&[Vec<f64>]) -> Result<usize>,
    stream: RngStream,
) -> Result<(Vec<f64>, Inversion)> {
    let z = rep.feature(theta.theta(), stream.derive(0))?;
    let latents = latent_space_set(&z, cfg.nu, cfg.size, stream.derive(1))?;
    let best = latents[pick(&latents)?].clone();
    let inv = invert_latent(rep, &best, theta, cfg.inversion.steps, cfg.inversion.lr)?;
    Ok((best, inv))
}

/// `n_per` perturbations of each of the last `window` policies.
pub fn history_set(
    rep: &Representation,
    history: &[Vec<f64>],
    nu: f64,
    n_per: usize,
    window: usize,
    stream: RngStream,
) -> Result<DecisionSet> {
    if history.is_empty() {
        return Err(Error::EmptyHistory);
    }
    check_noise(nu, n_per)?;
    if window == 0 {
        return Err(Error::InvalidCount("history window must be at least 1"));
    }
    let recent = &history[history.len().saturating_sub(window)..];
    let mut rng = stream.derive(0).rng();
    let candidates: Vec<Vec<f64>> = recent
        .iter()
        .flat_map(|center| (0..n_per).map(|_| perturb(center, nu, &mut rng)).collect::<Vec<_>>())
        .collect();
    let features = features_of(rep, &candidates, stream.derive(1))?;
    Ok(DecisionSet { candidates, features, provenance: Provenance::History })
}
