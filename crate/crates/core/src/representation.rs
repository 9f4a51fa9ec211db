//! Variational policy embedding: a Gaussian encoder over normalized policy
//! parameters and a linear-Gaussian return decoder trained on the ELBO.

use std::collections::VecDeque;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuralnet::{Activation, AdamState, DenseNet, ForwardCache};
use crate::numerics::{dot, fill_gaussian, RngStream};

const STD_FLOOR: f64 = 1e-8;

/// Gaussian posterior `f_φ(z|θ) = N(μ(θ), diag σ²(θ))`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    /// `None` means the heads read the normalized parameters directly.
    pub trunk: Option<DenseNet>,
    pub mean_head: DenseNet,
    pub logvar_head: DenseNet,
    /// Delta posterior at `μ`: no sampling noise and no KL term.
    pub deterministic: bool,
}

impl EncoderModel {
    pub fn init(
        input_dim: usize,
        hidden: &[usize],
        latent_dim: usize,
        activation: Activation,
        deterministic: bool,
        stream: RngStream,
    ) -> Result<Self> {
        if input_dim == 0 || latent_dim == 0 {
            return Err(Error::InvalidCount("encoder needs positive input and latent dims"));
        }
        let trunk = if hidden.is_empty() {
            None
        } else {
            let mut dims = vec![input_dim];
            dims.extend_from_slice(hidden);
            Some(DenseNet::init(&dims, activation, activation, stream.derive(0))?)
        };
        let feat = hidden.last().copied().unwrap_or(input_dim);
        let head = |tag| DenseNet::init(&[feat, latent_dim], Activation::None, Activation::None, stream.derive(tag));
        Ok(Self { trunk, mean_head: head(1)?, logvar_head: head(2)?, deterministic })
    }

    pub fn input_dim(&self) -> usize {
        match &self.trunk {
            Some(t) => t.input_dim(),
            None => self.mean_head.input_dim(),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.mean_head.output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.trunk.as_ref().map_or(0, DenseNet::param_count)
            + self.mean_head.param_count()
            + self.logvar_head.param_count()
    }

    /// Flat parameters in the order trunk, mean head, log-variance head.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        if let Some(t) = &self.trunk {
            out.extend_from_slice(t.params());
        }
        out.extend_from_slice(self.mean_head.params());
        out.extend_from_slice(self.logvar_head.params());
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::dims("EncoderModel::set_params", self.param_count(), flat.len()));
        }
        let mut rest = flat;
        if let Some(t) = &mut self.trunk {
            let (a, b) = rest.split_at(t.param_count());
            t.params_mut().copy_from_slice(a);
            rest = b;
        }
        let (a, b) = rest.split_at(self.mean_head.param_count());
        self.mean_head.params_mut().copy_from_slice(a);
        self.logvar_head.params_mut().copy_from_slice(b);
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::dims("encoder input", self.input_dim(), x.len()));
        }
        Ok(())
    }

    /// Posterior mean and standard deviation for a normalized input.
    pub fn encode(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_input(x)?;
        let h = match &self.trunk {
            Some(t) => t.predict(x)?,
            None => x.to_vec(),
        };
        let mu = self.mean_head.predict(&h)?;
        let sigma = if self.deterministic {
            vec![0.0; mu.len()]
        } else {
            self.logvar_head.predict(&h)?.into_iter().map(|lv| (0.5 * lv).exp()).collect()
        };
        Ok((mu, sigma))
    }

    /// Posterior means for a batch of normalized inputs `[n, input_dim]`.
    pub fn encode_mean_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let h = match &self.trunk {
            Some(t) => t.forward_batch(x)?.0,
            None => x.to_owned(),
        };
        Ok(self.mean_head.forward_batch(h.view())?.0)
    }

    /// Posterior means at `x + offsets[i]` and `x − offsets[i]` for every row,
    /// computing the first affine map of `x` once.
    pub fn encode_mean_antithetic(
        &self,
        x: &[f64],
        offsets: ArrayView2<'_, f64>,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        self.check_input(x)?;
        if offsets.ncols() != x.len() {
            return Err(Error::dims("encoder offsets", x.len(), offsets.ncols()));
        }
        let first = self.trunk.as_ref().unwrap_or(&self.mean_head);
        let w = first.weights(0);
        let mut center = w.dot(&ndarray::ArrayView1::from(x));
        center += &first.bias(0);
        let shift = offsets.dot(&w.t());
        let plus = &shift + &center;
        let minus = center - shift;
        let finish = |pre: Array2<f64>| -> Result<Array2<f64>> {
            match &self.trunk {
                Some(t) => Ok(self.mean_head.forward_batch(t.forward_from_first_preactivation(pre).view())?.0),
                None => Ok(pre),
            }
        };
        Ok((finish(plus)?, finish(minus)?))
    }

    /// Gradient of `½‖μ(x) − target‖²` with respect to the normalized input.
    pub fn mean_input_grad(&self, x: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_input(x)?;
        if target.len() != self.latent_dim() {
            return Err(Error::dims("latent target", self.latent_dim(), target.len()));
        }
        let (h, tcache) = match &self.trunk {
            Some(t) => {
                let (h, c) = t.forward(x)?;
                (h, Some(c))
            }
            None => (x.to_vec(), None),
        };
        let (mu, mcache) = self.mean_head.forward(&h)?;
        let resid: Vec<f64> = mu.iter().zip(target).map(|(m, t)| m - t).collect();
        let objective = 0.5 * dot(&resid, &resid);
        let (_, dh) = self.mean_head.backward_with_input(&mcache, &resid)?;
        let dx = match (&self.trunk, tcache) {
            (Some(t), Some(c)) => t.backward_with_input(&c, &dh)?.1,
            _ => dh,
        };
        Ok((objective, dx))
    }
}

/// Linear-Gaussian likelihood `p_κ(G|z) = N(κᵀz, σ²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnDecoder {
    pub kappa: Vec<f64>,
    pub noise_var: f64,
}

impl ReturnDecoder {
    pub fn new(kappa: Vec<f64>, noise_var: f64) -> Result<Self> {
        if !(noise_var > 0.0 && noise_var.is_finite()) {
            return Err(Error::InvalidCount("decoder noise variance must be positive"));
        }
        Ok(Self { kappa, noise_var })
    }

    pub fn init(latent_dim: usize, stream: RngStream) -> Self {
        let scale = 1.0 / (latent_dim as f64).sqrt();
        let mut rng = stream.rng();
        let kappa = fill_gaussian(&mut rng, latent_dim).into_iter().map(|k| k * scale).collect();
        Self { kappa, noise_var: 1.0 }
    }
}

/// `κᵀz` on the normalized return scale.
pub fn predict_value(dec: &ReturnDecoder, z: &[f64]) -> Result<f64> {
    if z.len() != dec.kappa.len() {
        return Err(Error::dims("predict_value", dec.kappa.len(), z.len()));
    }
    Ok(dot(&dec.kappa, z))
}

/// `KL(N(μ, diag σ²) ‖ N(0, I))`.
pub fn kl_gauss(mu: &[f64], sigma: &[f64]) -> Result<f64> {
    if mu.len() != sigma.len() {
        return Err(Error::dims("kl_gauss", mu.len(), sigma.len()));
    }
    let mut total = 0.0;
    for (i, (m, s)) in mu.iter().zip(sigma).enumerate() {
        if !(*s > 0.0) {
            return Err(Error::NonPositiveSigma(i));
        }
        let s2 = s * s;
        total += s2 + m * m - 1.0 - s2.ln();
    }
    Ok(0.5 * total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElboOutput {
    pub loss: f64,
    pub encoder_grad: Vec<f64>,
    pub kappa_grad: Vec<f64>,
}

/// Single-example ELBO loss with `ξ ~ N(0, I)` drawn from `stream`.
pub fn elbo_loss(enc: &EncoderModel, dec: &ReturnDecoder, x: &[f64], g: f64, stream: RngStream) -> Result<ElboOutput> {
    let xi = fill_gaussian(&mut stream.rng(), enc.latent_dim());
    elbo_loss_with_noise(enc, dec, x, g, &xi)
}

/// Single-example ELBO loss for a fixed reparameterization noise `ξ`.
pub fn elbo_loss_with_noise(
    enc: &EncoderModel,
    dec: &ReturnDecoder,
    x: &[f64],
    g: f64,
    xi: &[f64],
) -> Result<ElboOutput> {
    enc.check_input(x)?;
    let xs = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
    let xi = ArrayView2::from_shape((1, xi.len()), xi).expect("row vector");
    elbo_batch(enc, dec, xs, &[g], xi)
}

/// Summed loss and summed gradients over the rows of a batch.
pub fn elbo_batch(
    enc: &EncoderModel,
    dec: &ReturnDecoder,
    x: ArrayView2<'_, f64>,
    targets: &[f64],
    xi: ArrayView2<'_, f64>,
) -> Result<ElboOutput> {
    let d = enc.latent_dim();
    let n = x.nrows();
    if x.ncols() != enc.input_dim() {
        return Err(Error::dims("elbo input", enc.input_dim(), x.ncols()));
    }
    if dec.kappa.len() != d {
        return Err(Error::dims("elbo decoder", d, dec.kappa.len()));
    }
    if targets.len() != n {
        return Err(Error::dims("elbo targets", n, targets.len()));
    }
    if xi.nrows() != n || xi.ncols() != d {
        return Err(Error::dims("elbo noise", n * d, xi.len()));
    }
    if targets.iter().any(|g| !g.is_finite()) || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("elbo_loss"));
    }
    let s2 = dec.noise_var;

    let (h, tcache): (Array2<f64>, Option<ForwardCache>) = match &enc.trunk {
        Some(t) => {
            let (h, c) = t.forward_batch(x)?;
            (h, Some(c))
        }
        None => (x.to_owned(), None),
    };
    let (mu, mcache) = enc.mean_head.forward_batch(h.view())?;
    let lv = if enc.deterministic { None } else { Some(enc.logvar_head.forward_batch(h.view())?) };

    let mut loss = 0.5 * (2.0 * std::f64::consts::PI * s2).ln() * n as f64;
    let mut kappa_grad = vec![0.0; d];
    let mut dmu = Array2::<f64>::zeros((n, d));
    let mut dlv = Array2::<f64>::zeros((n, d));
    for i in 0..n {
        let mu_i = mu.row(i);
        let z: Vec<f64> = match &lv {
            Some((lv, _)) => (0..d).map(|k| mu_i[k] + (0.5 * lv[[i, k]]).exp() * xi[[i, k]]).collect(),
            None => mu_i.to_vec(),
        };
        let resid = dot(&dec.kappa, &z) - targets[i];
        loss += resid * resid / (2.0 * s2);
        let e = resid / s2;
        for k in 0..d {
            kappa_grad[k] += e * z[k];
            dmu[[i, k]] = e * dec.kappa[k];
        }
        if let Some((lv, _)) = &lv {
            for k in 0..d {
                let (m, l) = (mu_i[k], lv[[i, k]]);
                let sigma = (0.5 * l).exp();
                let s2k = sigma * sigma;
                loss += 0.5 * (s2k + m * m - 1.0 - l);
                dmu[[i, k]] += m;
                dlv[[i, k]] = 0.5 * e * dec.kappa[k] * xi[[i, k]] * sigma + 0.5 * (s2k - 1.0);
            }
        }
    }

    let need_dh = enc.trunk.is_some();
    let (gm, dh_mean) = enc.mean_head.backward_batch(&mcache, dmu.view(), need_dh)?;
    let (gl, dh_lv) = match &lv {
        Some((_, lcache)) => {
            let (g, dh) = enc.logvar_head.backward_batch(lcache, dlv.view(), need_dh)?;
            (g, dh)
        }
        None => (vec![0.0; enc.logvar_head.param_count()], None),
    };
    let mut encoder_grad = Vec::with_capacity(enc.param_count());
    if let (Some(t), Some(c)) = (&enc.trunk, &tcache) {
        let mut dh = dh_mean.expect("requested");
        if let Some(extra) = dh_lv {
            dh += &extra;
        }
        encoder_grad.extend(t.backward_batch(c, dh.view(), false)?.0);
    }
    encoder_grad.extend(gm);
    encoder_grad.extend(gl);
    Ok(ElboOutput { loss, encoder_grad, kappa_grad })
}

/// Welford running moments with a floored standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub count: u64,
    pub mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningStats {
    pub fn new(dim: usize) -> Self {
        Self { count: 0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn push(&mut self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::dims("RunningStats::push", self.dim(), x.len()));
        }
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let delta = v - *m;
            *m += delta / n;
            *s += delta * (v - *m);
        }
        Ok(())
    }

    /// Population standard deviation, or 1 until two samples are seen.
    pub fn std(&self) -> Vec<f64> {
        if self.count < 2 {
            return vec![1.0; self.dim()];
        }
        let n = self.count as f64;
        self.m2.iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub theta: RunningStats,
    pub target: RunningStats,
    theta_std: Vec<f64>,
}

impl NormStats {
    pub fn new(theta_dim: usize) -> Self {
        Self { theta: RunningStats::new(theta_dim), target: RunningStats::new(1), theta_std: vec![1.0; theta_dim] }
    }

    pub fn observe_theta(&mut self, theta: &[f64]) -> Result<()> {
        self.theta.push(theta)?;
        self.theta_std = self.theta.std();
        Ok(())
    }

    pub fn observe_target(&mut self, g: f64) -> Result<()> {
        self.target.push(&[g])
    }

    pub fn theta_std(&self) -> &[f64] {
        &self.theta_std
    }

    pub fn normalize_theta(&self, theta: &[f64]) -> Result<Vec<f64>> {
        if theta.len() != self.theta.dim() {
            return Err(Error::dims("normalize_theta", self.theta.dim(), theta.len()));
        }
        Ok(theta
            .iter()
            .zip(&self.theta.mean)
            .zip(&self.theta_std)
            .map(|((t, m), s)| (t - m) / s)
            .collect())
    }

    /// Scales raw parameter offsets into normalized-input offsets.
    pub fn scale_offsets(&self, offsets: &mut Array2<f64>) {
        for mut row in offsets.axis_iter_mut(Axis(0)) {
            row.iter_mut().zip(&self.theta_std).for_each(|(v, s)| *v /= s);
        }
    }

    pub fn normalize_target(&self, g: f64) -> f64 {
        (g - self.target.mean[0]) / self.target.std()[0]
    }

    pub fn denormalize_target(&self, g: f64) -> f64 {
        g * self.target.std()[0] + self.target.mean[0]
    }
}

/// Which latent coordinates the bandit sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    #[default]
    Mean,
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RepresentationConfig {
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub activation: Activation,
    pub deterministic: bool,
    pub learning_rate: f64,
    /// Passes over the training window per round.
    pub epochs: usize,
    pub batch_size: usize,
    pub features: FeatureMode,
    /// Rounds of history used for training; 0 trains on the current round only.
    pub train_window: usize,
}

impl Default for RepresentationConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            latent_dim: 32,
            activation: Activation::Relu,
            deterministic: false,
            learning_rate: AdamState::DEFAULT_LEARNING_RATE,
            epochs: 3,
            batch_size: 32,
            features: FeatureMode::Mean,
            train_window: 0,
        }
    }
}

impl RepresentationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::config("representation.latent_dim", "must be positive"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("representation.hidden", "layer sizes must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("representation.learning_rate", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("representation.batch_size", "must be positive"));
        }
        Ok(())
    }
}

/// Policy evaluation record: a parameter vector and one sampled return.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    pub theta_id: usize,
    pub g_tilde: f64,
    pub episode: usize,
    pub round: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaRecord {
    pub id: usize,
    pub round: usize,
    pub theta: Vec<f64>,
    /// Latent feature under the most recent encoder.
    pub feature: Vec<f64>,
}

/// Append-only record of evaluated policies and sampled returns. Older
/// rounds can be dropped to bound memory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    thetas: VecDeque<ThetaRecord>,
    entries: VecDeque<HistoryEntry>,
    next_id: usize,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn add_theta(&mut self, theta: Vec<f64>, round: usize) -> usize {
        let id = self.next_id;
        self.next_id += 1;
        self.thetas.push_back(ThetaRecord { id, round, theta, feature: Vec::new() });
        id
    }

    pub fn add_entry(&mut self, theta_id: usize, g_tilde: f64, episode: usize) -> Result<()> {
        let round = self.theta(theta_id)?.round;
        self.entries.push_back(HistoryEntry { theta_id, g_tilde, episode, round });
        Ok(())
    }

    pub fn theta(&self, id: usize) -> Result<&ThetaRecord> {
        let base = self.thetas.front().map_or(self.next_id, |t| t.id);
        if id < base || id >= self.next_id {
            return Err(Error::IndexOutOfRange { index: id, len: self.next_id });
        }
        Ok(&self.thetas[id - base])
    }

    pub fn thetas(&self) -> impl Iterator<Item = &ThetaRecord> {
        self.thetas.iter()
    }

    pub fn entries(&self) -> impl Iterator<Item = &HistoryEntry> {
        self.entries.iter()
    }

    /// Entries from rounds `≥ first_round`.
    pub fn entries_since(&self, first_round: usize) -> impl Iterator<Item = &HistoryEntry> {
        self.entries.iter().filter(move |e| e.round >= first_round)
    }

    pub fn thetas_since(&self, first_round: usize) -> impl Iterator<Item = &ThetaRecord> {
        self.thetas.iter().filter(move |t| t.round >= first_round)
    }

    pub fn set_feature(&mut self, id: usize, feature: Vec<f64>) -> Result<()> {
        let base = self.thetas.front().map_or(self.next_id, |t| t.id);
        if id < base || id >= self.next_id {
            return Err(Error::IndexOutOfRange { index: id, len: self.next_id });
        }
        self.thetas[id - base].feature = feature;
        Ok(())
    }

    /// Drops everything recorded before `first_round`.
    pub fn prune_before(&mut self, first_round: usize) {
        while self.thetas.front().is_some_and(|t| t.round < first_round) {
            self.thetas.pop_front();
        }
        while self.entries.front().is_some_and(|e| e.round < first_round) {
            self.entries.pop_front();
        }
    }
}

/// Encoder, decoder, normalization statistics and optimizer state.
#[derive(Debug, Clone)]
pub struct Representation {
    pub encoder: EncoderModel,
    pub decoder: ReturnDecoder,
    pub norm: NormStats,
    pub config: RepresentationConfig,
    adam: AdamState,
}

impl Representation {
    pub fn new(theta_dim: usize, config: RepresentationConfig, stream: RngStream) -> Result<Self> {
        config.validate()?;
        let encoder = EncoderModel::init(
            theta_dim,
            &config.hidden,
            config.latent_dim,
            config.activation,
            config.deterministic,
            stream.derive(0),
        )?;
        let decoder = ReturnDecoder::init(config.latent_dim, stream.derive(1));
        Ok(Self::from_parts(encoder, decoder, config))
    }

    pub fn from_parts(encoder: EncoderModel, decoder: ReturnDecoder, config: RepresentationConfig) -> Self {
        let adam = AdamState::new(encoder.param_count() + decoder.kappa.len(), config.learning_rate);
        let norm = NormStats::new(encoder.input_dim());
        Self { encoder, decoder, norm, config, adam }
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.latent_dim()
    }

    /// Bandit feature of a raw parameter vector.
    pub fn feature(&self, theta: &[f64], stream: RngStream) -> Result<Vec<f64>> {
        let (mu, sigma) = self.encoder.encode(&self.norm.normalize_theta(theta)?)?;
        Ok(match self.config.features {
            FeatureMode::Mean => mu,
            FeatureMode::Sample => {
                let xi = fill_gaussian(&mut stream.rng(), mu.len());
                mu.iter().zip(&sigma).zip(&xi).map(|((m, s), e)| m + s * e).collect()
            }
        })
    }

    /// Posterior means of raw parameter vectors.
    pub fn feature_means(&self, thetas: &[&[f64]]) -> Result<Array2<f64>> {
        let dim = self.encoder.input_dim();
        let mut x = Array2::zeros((thetas.len(), dim));
        for (mut row, t) in x.axis_iter_mut(Axis(0)).zip(thetas) {
            let n = self.norm.normalize_theta(t)?;
            row.iter_mut().zip(n).for_each(|(dst, v)| *dst = v);
        }
        self.encoder.encode_mean_batch(x.view())
    }

    /// Bandit features at `θ ± δᵢ` for raw offsets `δ` (rows).
    pub fn features_antithetic(
        &self,
        theta: &[f64],
        deltas: &Array2<f64>,
        stream: RngStream,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        let mut scaled = deltas.clone();
        self.norm.scale_offsets(&mut scaled);
        let x = self.norm.normalize_theta(theta)?;
        let (mut plus, mut minus) = self.encoder.encode_mean_antithetic(&x, scaled.view())?;
        if self.config.features == FeatureMode::Sample && !self.encoder.deterministic {
            // Only the means enjoy the linear shortcut; sample on top.
            let rows: Vec<Vec<f64>> = deltas
                .axis_iter(Axis(0))
                .flat_map(|d| {
                    let p: Vec<f64> = theta.iter().zip(d).map(|(t, v)| t + v).collect();
                    let m: Vec<f64> = theta.iter().zip(d).map(|(t, v)| t - v).collect();
                    [p, m]
                })
                .collect();
            for (i, r) in rows.iter().enumerate() {
                let f = self.feature(r, stream.derive(i as u64))?;
                let target = if i % 2 == 0 { plus.row_mut(i / 2) } else { minus.row_mut(i / 2) };
                target.into_iter().zip(f).for_each(|(dst, v)| *dst = v);
            }
        }
        Ok((plus, minus))
    }

    /// Recomputes the stored feature of every retained parameter vector.
    pub fn refresh_features(&self, history: &mut History, first_round: usize, stream: RngStream) -> Result<()> {
        let records: Vec<(usize, Vec<f64>)> =
            history.thetas_since(first_round).map(|t| (t.id, t.theta.clone())).collect();
        if records.is_empty() {
            return Ok(());
        }
        let feats: Vec<Vec<f64>> = match self.config.features {
            FeatureMode::Mean => {
                let refs: Vec<&[f64]> = records.iter().map(|(_, t)| t.as_slice()).collect();
                self.feature_means(&refs)?.axis_iter(Axis(0)).map(|r| r.to_vec()).collect()
            }
            FeatureMode::Sample => records
                .iter()
                .map(|(id, t)| self.feature(t, stream.derive(*id as u64)))
                .collect::<Result<_>>()?,
        };
        for ((id, _), f) in records.into_iter().zip(feats) {
            history.set_feature(id, f)?;
        }
        Ok(())
    }
}

/// Shuffled minibatch Adam on the ELBO over history entries from rounds
/// `≥ first_round`. Returns the mean loss of the final epoch, or `None`
/// when `epochs == 0`.
pub fn train_representation(
    rep: &mut Representation,
    history: &History,
    first_round: usize,
    epochs: usize,
    stream: RngStream,
) -> Result<Option<f64>> {
    let entries: Vec<&HistoryEntry> = history.entries_since(first_round).collect();
    if entries.is_empty() {
        return Err(Error::EmptyHistory);
    }
    if epochs == 0 {
        return Ok(None);
    }
    let dim = rep.encoder.input_dim();
    let d = rep.latent_dim();
    let mut x = Array2::<f64>::zeros((entries.len(), dim));
    let mut targets = Vec::with_capacity(entries.len());
    for (mut row, e) in x.axis_iter_mut(Axis(0)).zip(&entries) {
        let n = rep.norm.normalize_theta(&history.theta(e.theta_id)?.theta)?;
        row.iter_mut().zip(n).for_each(|(dst, v)| *dst = v);
        targets.push(rep.norm.normalize_target(e.g_tilde));
    }

    let mut rng = stream.rng();
    let mut order: Vec<usize> = (0..entries.len()).collect();
    let enc_len = rep.encoder.param_count();
    let mut params = rep.encoder.params();
    params.extend_from_slice(&rep.decoder.kappa);
    let mut last_mean = 0.0;
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(rep.config.batch_size) {
            let xb = x.select(Axis(0), batch);
            let gb: Vec<f64> = batch.iter().map(|&i| targets[i]).collect();
            let xi = Array2::from_shape_vec((batch.len(), d), fill_gaussian(&mut rng, batch.len() * d))
                .expect("noise shape");
            let out = elbo_batch(&rep.encoder, &rep.decoder, xb.view(), &gb, xi.view())?;
            epoch_loss += out.loss;
            let scale = 1.0 / batch.len() as f64;
            let grads: Vec<f64> =
                out.encoder_grad.iter().chain(&out.kappa_grad).map(|g| g * scale).collect();
            rep.adam.update(&mut params, &grads)?;
            rep.encoder.set_params(&params[..enc_len])?;
            rep.decoder.kappa.copy_from_slice(&params[enc_len..]);
        }
        last_mean = epoch_loss / entries.len() as f64;
    }
    Ok(Some(last_mean))
}

/// `(episode, latent mean, sampled return)` for every retained entry.
pub fn embedding_table(rep: &Representation, history: &History) -> Result<Vec<(usize, Vec<f64>, f64)>> {
    let entries: Vec<&HistoryEntry> = history.entries().collect();
    let mut rows = Vec::with_capacity(entries.len());
    for e in entries {
        let theta = &history.theta(e.theta_id)?.theta;
        let (mu, _) = rep.encoder.encode(&rep.norm.normalize_theta(theta)?)?;
        rows.push((e.episode, mu, e.g_tilde));
    }
    Ok(rows)
}
