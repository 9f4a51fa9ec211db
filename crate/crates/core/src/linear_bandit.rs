//! Online ridge regression with OFUL and linear Thompson sampling selection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{cholesky, dot, gaussian_vector, norm2, Cholesky, RngStream, SpdMatrix};

pub const DEFAULT_LAMBDA: f64 = 0.1;

/// Ridge state `V = λI + Σ x xᵀ`, `b = Σ x y`, `ŵ = V⁻¹ b`.
///
/// `V` is kept explicitly and re-factored after every update; the cached
/// factor serves the confidence widths and Thompson draws.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditState {
    lambda: f64,
    design: SpdMatrix,
    response: Vec<f64>,
    estimate: Vec<f64>,
    factor: Cholesky,
    updates: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMethod {
    Greedy,
    Oful,
    Ts,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionRule {
    pub method: SelectionMethod,
    /// Optimism level for OFUL.
    pub alpha: f64,
    /// Posterior scale for Thompson sampling.
    pub sigma: f64,
    /// Draw a separate parameter vector per candidate instead of one per call.
    #[serde(default)]
    pub ts_per_candidate: bool,
}

impl SelectionRule {
    pub fn greedy() -> Self {
        Self { method: SelectionMethod::Greedy, alpha: 0.0, sigma: 0.0, ts_per_candidate: false }
    }

    pub fn oful(alpha: f64) -> Self {
        Self { method: SelectionMethod::Oful, alpha, sigma: 0.0, ts_per_candidate: false }
    }

    pub fn ts(sigma: f64) -> Self {
        Self { method: SelectionMethod::Ts, alpha: 0.0, sigma, ts_per_candidate: false }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::config("bandit.alpha", "must be a finite nonnegative number"));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::config("bandit.sigma", "must be a finite nonnegative number"));
        }
        Ok(())
    }
}

impl Default for SelectionRule {
    fn default() -> Self {
        Self { method: SelectionMethod::Ts, alpha: 1.0, sigma: 1.0, ts_per_candidate: false }
    }
}

impl BanditState {
    pub fn new(dim: usize, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidLambda(lambda));
        }
        if dim == 0 {
            return Err(Error::InvalidCount("bandit dimension must be positive"));
        }
        let design = SpdMatrix::scaled_identity(dim, lambda);
        let factor = cholesky(&design)?;
        Ok(Self {
            lambda,
            design,
            response: vec![0.0; dim],
            estimate: vec![0.0; dim],
            factor,
            updates: 0,
        })
    }

    /// Rebuilds from scratch over `(feature, response)` pairs.
    pub fn rebuild<'a, I>(dim: usize, lambda: f64, history: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a [f64], f64)>,
    {
        let mut state = Self::new(dim, lambda)?;
        for (x, y) in history {
            state.accumulate(x, y)?;
        }
        state.refresh()?;
        Ok(state)
    }

    fn accumulate(&mut self, x: &[f64], y: f64) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::dims("bandit update", self.dim(), x.len()));
        }
        if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("bandit update"));
        }
        self.design.add_outer(x);
        for (b, xi) in self.response.iter_mut().zip(x) {
            *b += xi * y;
        }
        self.updates += 1;
        Ok(())
    }

    fn refresh(&mut self) -> Result<()> {
        self.factor = cholesky(&self.design)?;
        self.estimate = self.factor.solve(&self.response)?;
        Ok(())
    }

    pub fn update(mut self, x: &[f64], y: f64) -> Result<Self> {
        self.accumulate(x, y)?;
        self.refresh()?;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.response.len()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn design(&self) -> &SpdMatrix {
        &self.design
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn estimate(&self) -> &[f64] {
        &self.estimate
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    pub fn estimate_norm(&self) -> f64 {
        norm2(&self.estimate)
    }

    pub fn log_det_design(&self) -> f64 {
        self.factor.log_det()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::dims("bandit feature", self.dim(), x.len()));
        }
        Ok(())
    }

    pub fn mean_score(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(dot(x, &self.estimate))
    }

    /// `⟨x, ŵ⟩ + α √(xᵀ V⁻¹ x)`.
    pub fn ucb_score(&self, x: &[f64], alpha: f64) -> Result<f64> {
        self.check_dim(x)?;
        let width = self.factor.inverse_quadratic_form(x).sqrt();
        Ok(dot(x, &self.estimate) + alpha * width)
    }

    /// `w̃ = ŵ + σ L⁻ᵀ ξ`, distributed as `N(ŵ, σ² V⁻¹)`.
    pub fn ts_draw(&self, sigma: f64, stream: RngStream) -> Result<Vec<f64>> {
        if !(sigma >= 0.0) {
            return Err(Error::InvalidCount("TS scale must be nonnegative"));
        }
        if sigma == 0.0 {
            return Ok(self.estimate.clone());
        }
        let xi = gaussian_vector(stream, self.dim());
        let offset = self.factor.solve_upper(&xi);
        Ok(self.estimate.iter().zip(&offset).map(|(w, o)| w + sigma * o).collect())
    }

    /// Bandit value of each candidate under `rule`.
    pub fn scores<F: AsRef<[f64]>>(
        &self,
        features: &[F],
        rule: &SelectionRule,
        stream: RngStream,
    ) -> Result<Vec<f64>> {
        if features.is_empty() {
            return Err(Error::EmptyDecisionSet);
        }
        for f in features {
            self.check_dim(f.as_ref())?;
        }
        match rule.method {
            SelectionMethod::Greedy => Ok(features.iter().map(|f| dot(f.as_ref(), &self.estimate)).collect()),
            SelectionMethod::Oful => features.iter().map(|f| self.ucb_score(f.as_ref(), rule.alpha)).collect(),
            SelectionMethod::Ts if rule.ts_per_candidate => features
                .iter()
                .enumerate()
                .map(|(i, f)| Ok(dot(f.as_ref(), &self.ts_draw(rule.sigma, stream.derive(i as u64))?)))
                .collect(),
            SelectionMethod::Ts => {
                let w = self.ts_draw(rule.sigma, stream)?;
                Ok(features.iter().map(|f| dot(f.as_ref(), &w)).collect())
            }
        }
    }

    /// Index of the best candidate; ties go to the lowest index.
    pub fn select<F: AsRef<[f64]>>(
        &self,
        features: &[F],
        rule: &SelectionRule,
        stream: RngStream,
    ) -> Result<usize> {
        Ok(argmax(&self.scores(features, rule, stream)?))
    }
}

/// First index of the maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{solve_dense, RngStream};
    use proptest::prelude::*;

    // Closed-form ridge through a general dense solve, independent of the
    // incremental Cholesky path.
    fn ridge_oracle(xs: &[Vec<f64>], ys: &[f64], lambda: f64) -> Vec<f64> {
        let d = xs[0].len();
        let mut a = vec![0.0; d * d];
        let mut b = vec![0.0; d];
        for i in 0..d {
            a[i * d + i] = lambda;
        }
        for (x, y) in xs.iter().zip(ys) {
            for i in 0..d {
                b[i] += x[i] * y;
                for j in 0..d {
                    a[i * d + j] += x[i] * x[j];
                }
            }
        }
        solve_dense(d, &a, &b).unwrap()
    }

    fn random_data(n: usize, d: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let s = RngStream::new(seed, 0);
        let xs: Vec<Vec<f64>> = (0..n).map(|i| gaussian_vector(s.derive2(1, i as u64), d)).collect();
        let ys = gaussian_vector(s.derive(2), n);
        (xs, ys)
    }

    #[test]
    fn init_is_scaled_identity() {
        let s = BanditState::new(3, 0.1).unwrap();
        assert_eq!(s.design(), &SpdMatrix::scaled_identity(3, 0.1));
        assert_eq!(s.response(), &[0.0; 3]);
        assert_eq!(s.estimate(), &[0.0; 3]);
        assert!(matches!(BanditState::new(3, 0.0), Err(Error::InvalidLambda(_))));
        assert!(matches!(BanditState::new(3, -1.0), Err(Error::InvalidLambda(_))));
    }

    #[test]
    fn scalar_ridge() {
        let s = BanditState::new(1, 2.0).unwrap().update(&[1.0], 1.0).unwrap();
        assert!((s.estimate()[0] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rank_one_update() {
        let s = BanditState::new(3, 0.1).unwrap().update(&[1.0, 0.0, 0.0], 1.0).unwrap();
        assert!((s.estimate()[0] - 1.0 / 1.1).abs() < 1e-15);
        assert_eq!(&s.estimate()[1..], &[0.0, 0.0]);
    }

    #[test]
    fn zero_response_keeps_b_and_shrinks_estimate() {
        let s = BanditState::new(2, 0.5).unwrap().update(&[1.0, 0.5], 2.0).unwrap();
        let b = s.response().to_vec();
        let before = dot(&b, s.estimate());
        let s = s.update(&[0.3, -1.0], 0.0).unwrap();
        assert_eq!(s.response(), b.as_slice());
        // bᵀV⁻¹b can only shrink as V grows
        assert!(dot(&b, s.estimate()) <= before + 1e-15);
    }

    #[test]
    fn update_errors() {
        let s = BanditState::new(2, 1.0).unwrap();
        assert!(matches!(s.clone().update(&[1.0], 1.0), Err(Error::DimMismatch { .. })));
        assert!(matches!(s.clone().update(&[1.0, f64::NAN], 1.0), Err(Error::NonFiniteInput(_))));
        assert!(matches!(s.update(&[1.0, 1.0], f64::INFINITY), Err(Error::NonFiniteInput(_))));
    }

    #[test]
    fn two_hundred_updates_match_ridge_oracle() {
        let (xs, ys) = random_data(200, 8, 5);
        let mut s = BanditState::new(8, 0.1).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            s = s.update(x, *y).unwrap();
        }
        let oracle = ridge_oracle(&xs, &ys, 0.1);
        for (a, b) in s.estimate().iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-8);
        }
    }

    #[test]
    fn ucb_reductions() {
        let (xs, ys) = random_data(20, 3, 8);
        let s = BanditState::rebuild(3, 0.5, xs.iter().map(Vec::as_slice).zip(ys.iter().copied())).unwrap();
        let x = [0.3, -0.2, 1.1];
        assert_eq!(s.ucb_score(&x, 0.0).unwrap(), dot(&x, s.estimate()));
        let fresh = BanditState::new(3, 1.0).unwrap();
        assert_eq!(fresh.ucb_score(&[1.0, 0.0, 0.0], 1.0).unwrap(), 1.0);
        assert!(matches!(fresh.ucb_score(&[1.0], 1.0), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn ucb_matches_explicit_inverse() {
        let (xs, ys) = random_data(30, 4, 13);
        let s = BanditState::rebuild(4, 0.1, xs.iter().map(Vec::as_slice).zip(ys.iter().copied())).unwrap();
        let x = gaussian_vector(RngStream::new(13, 99), 4);
        let vinv_x = solve_dense(4, s.design().entries(), &x).unwrap();
        let oracle = dot(&x, s.estimate()) + 0.7 * dot(&x, &vinv_x).sqrt();
        assert!((s.ucb_score(&x, 0.7).unwrap() - oracle).abs() <= 1e-9);
    }

    #[test]
    fn ts_draw_degenerate_and_deterministic() {
        let (xs, ys) = random_data(10, 3, 1);
        let s = BanditState::rebuild(3, 0.1, xs.iter().map(Vec::as_slice).zip(ys.iter().copied())).unwrap();
        assert_eq!(s.ts_draw(0.0, RngStream::new(1, 1)).unwrap(), s.estimate());
        let st = RngStream::new(4, 4);
        assert_eq!(s.ts_draw(1.0, st).unwrap(), s.ts_draw(1.0, st).unwrap());
    }

    #[test]
    fn ts_draw_covariance_on_fresh_state() {
        let s = BanditState::new(3, 1.0).unwrap();
        let n = 100_000;
        let root = RngStream::new(77, 0);
        let mut sums = [0.0; 3];
        let mut sq = [0.0; 3];
        for i in 0..n {
            let w = s.ts_draw(1.0, root.derive(i)).unwrap();
            for k in 0..3 {
                sums[k] += w[k];
                sq[k] += w[k] * w[k];
            }
        }
        for k in 0..3 {
            let m = sums[k] / n as f64;
            let var = sq[k] / n as f64 - m * m;
            assert!((0.97..=1.03).contains(&var), "coordinate {k} variance {var}");
        }
    }

    #[test]
    fn select_basics() {
        let mut s = BanditState::new(2, 1.0).unwrap();
        // force ŵ = (1, 2) by solving backwards: b = V ŵ with V = I
        s.response = vec![1.0, 2.0];
        s.refresh().unwrap();
        let feats = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let st = RngStream::new(0, 0);
        assert_eq!(s.select(&feats, &SelectionRule::greedy(), st).unwrap(), 1);
        let dup = vec![vec![0.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]];
        assert_eq!(s.select(&dup, &SelectionRule::greedy(), st).unwrap(), 0);
        let empty: Vec<Vec<f64>> = Vec::new();
        assert_eq!(s.select(&empty, &SelectionRule::greedy(), st), Err(Error::EmptyDecisionSet));
    }

    #[test]
    fn reductions_to_greedy() {
        let (xs, ys) = random_data(15, 4, 21);
        let s = BanditState::rebuild(4, 0.1, xs.iter().map(Vec::as_slice).zip(ys.iter().copied())).unwrap();
        let (cands, _) = random_data(40, 4, 22);
        let st = RngStream::new(5, 5);
        let g = s.select(&cands, &SelectionRule::greedy(), st).unwrap();
        assert_eq!(s.select(&cands, &SelectionRule::ts(0.0), st).unwrap(), g);
        assert_eq!(s.select(&cands, &SelectionRule::oful(0.0), st).unwrap(), g);
    }

    #[test]
    fn rebuild_empty_and_order_free() {
        assert_eq!(
            BanditState::rebuild(3, 0.1, std::iter::empty()).unwrap(),
            BanditState::new(3, 0.1).unwrap()
        );
        let (xs, ys) = random_data(50, 5, 31);
        let pairs: Vec<(&[f64], f64)> = xs.iter().map(Vec::as_slice).zip(ys.iter().copied()).collect();
        let fwd = BanditState::rebuild(5, 0.1, pairs.iter().copied()).unwrap();
        let rev = BanditState::rebuild(5, 0.1, pairs.iter().rev().copied()).unwrap();
        for (a, b) in fwd.design().entries().iter().zip(rev.design().entries()) {
            assert!((a - b).abs() <= 1e-12);
        }
        for (a, b) in fwd.response().iter().zip(rev.response()) {
            assert!((a - b).abs() <= 1e-12);
        }
        let mut inc = BanditState::new(5, 0.1).unwrap();
        for (x, y) in &pairs {
            inc = inc.update(x, *y).unwrap();
        }
        for (a, b) in fwd.estimate().iter().zip(inc.estimate()) {
            assert!((a - b).abs() <= 1e-10);
        }
        let bad = [(&[1.0][..], 1.0)];
        assert!(matches!(BanditState::rebuild(5, 0.1, bad), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn thompson_regret_is_sublinear() {
        let d = 4;
        let root = RngStream::new(2024, 0);
        let w_true = gaussian_vector(root.derive(1), d);
        let arms: Vec<Vec<f64>> = (0..50).map(|i| gaussian_vector(root.derive2(2, i), d)).collect();
        let means: Vec<f64> = arms.iter().map(|a| dot(a, &w_true)).collect();
        let best = means.iter().cloned().fold(f64::MIN, f64::max);
        let mut s = BanditState::new(d, 1.0).unwrap();
        let rounds = 2000;
        let mut regret = Vec::with_capacity(rounds);
        let rule = SelectionRule::ts(1.0);
        for t in 0..rounds {
            let k = s.select(&arms, &rule, root.derive2(3, t as u64)).unwrap();
            let noise = gaussian_vector(root.derive2(4, t as u64), 1)[0];
            s = s.update(&arms[k], means[k] + noise).unwrap();
            regret.push(best - means[k]);
        }
        let q = rounds / 4;
        let first: f64 = regret[..q].iter().sum::<f64>() / q as f64;
        let last: f64 = regret[rounds - q..].iter().sum::<f64>() / q as f64;
        assert!(last < first, "first quarter {first}, last quarter {last}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn estimate_matches_ridge_closed_form(n in 1usize..=120, d in 1usize..=12, seed in any::<u64>(), lambda in 0.01f64..5.0) {
            let (xs, ys) = random_data(n, d, seed);
            let mut s = BanditState::new(d, lambda).unwrap();
            for (x, y) in xs.iter().zip(&ys) {
                s = s.update(x, *y).unwrap();
            }
            let oracle = ridge_oracle(&xs, &ys, lambda);
            for (a, b) in s.estimate().iter().zip(&oracle) {
                prop_assert!((a - b).abs() <= 1e-8);
            }
        }

        #[test]
        fn ucb_monotone_in_alpha(seed in any::<u64>(), a in 0.0f64..10.0, b in 0.0f64..10.0) {
            let (xs, ys) = random_data(10, 3, seed);
            let s = BanditState::rebuild(3, 0.1, xs.iter().map(Vec::as_slice).zip(ys.iter().copied())).unwrap();
            let x = gaussian_vector(RngStream::new(seed, 7), 3);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(s.ucb_score(&x, lo).unwrap() <= s.ucb_score(&x, hi).unwrap());
        }

        #[test]
        fn select_ignores_appended_duplicate(seed in any::<u64>(), method in 0u8..3) {
            let (xs, ys) = random_data(10, 3, seed);
            let s = BanditState::rebuild(3, 0.1, xs.iter().map(Vec::as_slice).zip(ys.iter().copied())).unwrap();
            let (mut cands, _) = random_data(12, 3, seed ^ 1);
            let rule = match method {
                0 => SelectionRule::greedy(),
                1 => SelectionRule::oful(1.0),
                _ => SelectionRule::ts(1.0),
            };
            let st = RngStream::new(seed, 3);
            let k = s.select(&cands, &rule, st).unwrap();
            cands.push(cands[k].clone());
            prop_assert_eq!(s.select(&cands, &rule, st).unwrap(), k);
        }
    }
}
