//! Policies over flat parameter vectors.
//!
//! Continuous control uses a deterministic linear map `a = Θ s`; all
//! exploration comes from perturbing `θ`. Discrete control uses an MLP with
//! a softmax head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuralnet::{param_count, Activation, DenseNet};
use crate::numerics::RngStream;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyArch {
    Linear { obs_dim: usize, act_dim: usize },
    SoftmaxMlp { obs_dim: usize, hidden: Vec<usize>, n_actions: usize },
}

impl PolicyArch {
    pub fn param_count(&self) -> usize {
        match self {
            PolicyArch::Linear { obs_dim, act_dim } => obs_dim * act_dim,
            PolicyArch::SoftmaxMlp { .. } => param_count(&self.layer_dims()),
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            PolicyArch::Linear { obs_dim, .. } | PolicyArch::SoftmaxMlp { obs_dim, .. } => *obs_dim,
        }
    }

    /// Number of discrete actions, or `None` for continuous policies.
    pub fn n_actions(&self) -> Option<usize> {
        match self {
            PolicyArch::Linear { .. } => None,
            PolicyArch::SoftmaxMlp { n_actions, .. } => Some(*n_actions),
        }
    }

    fn layer_dims(&self) -> Vec<usize> {
        match self {
            PolicyArch::Linear { obs_dim, act_dim } => vec![*obs_dim, *act_dim],
            PolicyArch::SoftmaxMlp { obs_dim, hidden, n_actions } => {
                let mut dims = vec![*obs_dim];
                dims.extend_from_slice(hidden);
                dims.push(*n_actions);
                dims
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl Action {
    pub fn discrete(&self) -> Option<usize> {
        match self {
            Action::Discrete(a) => Some(*a),
            Action::Continuous(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Model {
    Linear(Vec<f64>),
    Softmax(DenseNet),
}

/// Parameter vector `θ` together with the architecture that interprets it.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    arch: PolicyArch,
    model: Model,
}

impl PolicyParams {
    pub fn new(arch: PolicyArch, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != arch.param_count() {
            return Err(Error::dims("PolicyParams::new", arch.param_count(), theta.len()));
        }
        let model = match &arch {
            PolicyArch::Linear { .. } => Model::Linear(theta),
            PolicyArch::SoftmaxMlp { .. } => Model::Softmax(DenseNet::from_params(
                &arch.layer_dims(),
                Activation::Tanh,
                Activation::None,
                theta,
            )?),
        };
        Ok(Self { arch, model })
    }

    pub fn zeros(arch: PolicyArch) -> Self {
        let n = arch.param_count();
        Self::new(arch, vec![0.0; n]).expect("length matches")
    }

    /// Linear policies start at zero; MLPs get a scaled Gaussian init.
    pub fn init(arch: PolicyArch, stream: RngStream) -> Result<Self> {
        match &arch {
            PolicyArch::Linear { .. } => Ok(Self::zeros(arch)),
            PolicyArch::SoftmaxMlp { .. } => {
                let net = DenseNet::init(&arch.layer_dims(), Activation::Tanh, Activation::None, stream)?;
                Ok(Self { arch, model: Model::Softmax(net) })
            }
        }
    }

    pub fn arch(&self) -> &PolicyArch {
        &self.arch
    }

    pub fn theta(&self) -> &[f64] {
        match &self.model {
            Model::Linear(t) => t,
            Model::Softmax(net) => net.params(),
        }
    }

    pub fn with_theta(&self, theta: Vec<f64>) -> Result<Self> {
        Self::new(self.arch.clone(), theta)
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self.model, Model::Softmax(_))
    }

    fn check_obs(&self, obs: &[f64]) -> Result<()> {
        if obs.len() != self.arch.obs_dim() {
            return Err(Error::dims("policy observation", self.arch.obs_dim(), obs.len()));
        }
        Ok(())
    }

    /// Action probabilities of a softmax policy.
    pub fn probabilities(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.check_obs(obs)?;
        match &self.model {
            Model::Linear(_) => Err(Error::UnsupportedForLinear),
            Model::Softmax(net) => Ok(softmax(&net.predict(obs)?)),
        }
    }

    /// Continuous action `Θ s` of a linear policy.
    pub fn linear_action(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.check_obs(obs)?;
        match (&self.model, &self.arch) {
            (Model::Linear(theta), PolicyArch::Linear { obs_dim, .. }) => Ok(theta
                .chunks_exact(*obs_dim)
                .map(|row| row.iter().zip(obs).map(|(w, s)| w * s).sum())
                .collect()),
            _ => Err(Error::InvalidCount("linear_action on a softmax policy")),
        }
    }

    /// Acts in `obs`. Softmax policies also return `ln π(a|s)`.
    pub fn act<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<(Action, Option<f64>)> {
        match &self.model {
            Model::Linear(_) => Ok((Action::Continuous(self.linear_action(obs)?), None)),
            Model::Softmax(_) => {
                let probs = self.probabilities(obs)?;
                let a = sample_categorical(&probs, rng.random::<f64>());
                Ok((Action::Discrete(a), Some(probs[a].ln())))
            }
        }
    }

    /// `∇_θ ln π_θ(a|s)`.
    pub fn logprob_grad(&self, obs: &[f64], action: usize) -> Result<Vec<f64>> {
        self.check_obs(obs)?;
        let net = match &self.model {
            Model::Linear(_) => return Err(Error::UnsupportedForLinear),
            Model::Softmax(net) => net,
        };
        let (logits, cache) = net.forward(obs)?;
        if action >= logits.len() {
            return Err(Error::IndexOutOfRange { index: action, len: logits.len() });
        }
        let mut g = softmax(&logits);
        g.iter_mut().for_each(|p| *p = -*p);
        g[action] += 1.0;
        net.backward(&cache, &g)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Inverse-CDF draw with a uniform `u ∈ [0, 1)`.
pub fn sample_categorical(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}
