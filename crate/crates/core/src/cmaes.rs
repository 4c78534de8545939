//! Covariance Matrix Adaptation Evolution Strategy.
//!
//! Positive recombination weights only, cumulative step-size adaptation,
//! rank-one plus rank-mu covariance update. The eigendecomposition of the
//! covariance is refreshed lazily and repaired (symmetrized, eigenvalues
//! floored) on each refresh.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Eigenvalue floor relative to the largest eigenvalue.
const EIGEN_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct CmaParams {
    pub n: usize,
    pub lambda: usize,
    pub mu: usize,
    pub weights: Vec<f64>,
    pub mu_eff: f64,
    pub c_sigma: f64,
    pub d_sigma: f64,
    pub c_c: f64,
    pub c_1: f64,
    pub c_mu: f64,
    pub chi_n: f64,
    /// Generations between eigendecompositions.
    pub eigen_interval: usize,
}

/// Standard strategy parameters for dimension `n`.
pub fn default_params(n: usize) -> Result<CmaParams> {
    if n == 0 {
        return Err(Error::InvalidValue(
            "CMA-ES dimension must be at least 1".into(),
        ));
    }
    let lambda = 4 + (3.0 * (n as f64).ln()).floor() as usize;
    params_with_lambda(n, lambda)
}

/// Strategy parameters for dimension `n` with population `lambda`.
pub fn params_with_lambda(n: usize, lambda: usize) -> Result<CmaParams> {
    if n == 0 {
        return Err(Error::InvalidValue(
            "CMA-ES dimension must be at least 1".into(),
        ));
    }
    if lambda < 4 {
        return Err(Error::InvalidValue(
            "population size must be at least 4".into(),
        ));
    }
    let nf = n as f64;
    let mu = lambda / 2;
    let raw: Vec<f64> = (1..=mu)
        .map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - (i as f64).ln())
        .collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();

    let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
    let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
    let c_c = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
    let c_1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
    let c_mu = (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff));
    let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
    let eigen_interval = ((1.0 / (10.0 * nf * (c_1 + c_mu))).floor() as usize).max(1);

    Ok(CmaParams {
        n,
        lambda,
        mu,
        weights,
        mu_eff,
        c_sigma,
        d_sigma,
        c_c,
        c_1,
        c_mu,
        chi_n,
        eigen_interval,
    })
}

/// Cumulative step-size adaptation.
pub fn adapt_step_size(sigma: f64, p_sigma_norm: f64, params: &CmaParams) -> f64 {
    sigma * ((params.c_sigma / params.d_sigma) * (p_sigma_norm / params.chi_n - 1.0)).exp()
}

#[derive(Debug, Clone)]
pub struct CmaState {
    pub mean: DVector<f64>,
    pub sigma: f64,
    pub cov: DMatrix<f64>,
    pub p_sigma: DVector<f64>,
    pub p_c: DVector<f64>,
    pub generation: usize,
    pub evals: usize,
    pub best: Option<(DVector<f64>, f64)>,
    basis: DMatrix<f64>,
    scales: DVector<f64>,
    inv_sqrt: DMatrix<f64>,
    eigen_generation: Option<usize>,
    /// Last asked candidates and their normalized steps `(x - m) / sigma`.
    pending: Vec<(DVector<f64>, DVector<f64>)>,
}

impl CmaState {
    pub fn new(x0: &[f64], sigma0: f64) -> Result<Self> {
        let n = x0.len();
        if n == 0 {
            return Err(Error::InvalidValue("empty start vector".into()));
        }
        if !(sigma0 > 0.0 && sigma0.is_finite()) || x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(
                "start point and step size must be finite, sigma > 0".into(),
            ));
        }
        Ok(Self {
            mean: DVector::from_column_slice(x0),
            sigma: sigma0,
            cov: DMatrix::identity(n, n),
            p_sigma: DVector::zeros(n),
            p_c: DVector::zeros(n),
            generation: 0,
            evals: 0,
            best: None,
            basis: DMatrix::identity(n, n),
            scales: DVector::from_element(n, 1.0),
            inv_sqrt: DMatrix::identity(n, n),
            eigen_generation: None,
            pending: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn best_value(&self) -> f64 {
        self.best.as_ref().map_or(f64::INFINITY, |b| b.1)
    }

    fn refresh_eigen(&mut self, params: &CmaParams) -> Result<()> {
        let due = match self.eigen_generation {
            None => true,
            Some(g) => self.generation - g >= params.eigen_interval,
        };
        if !due {
            return Ok(());
        }
        let sym = (&self.cov + self.cov.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let max = eig.eigenvalues.max();
        if !(max.is_finite() && max > 0.0) || eig.eigenvalues.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(
                "covariance lost positive definiteness".into(),
            ));
        }
        let floor = EIGEN_FLOOR * max;
        let values = eig.eigenvalues.map(|v| v.max(floor));
        let basis = eig.eigenvectors;
        self.cov = &basis * DMatrix::from_diagonal(&values) * basis.transpose();
        self.scales = values.map(f64::sqrt);
        self.inv_sqrt =
            &basis * DMatrix::from_diagonal(&self.scales.map(|d| 1.0 / d)) * basis.transpose();
        self.basis = basis;
        self.eigen_generation = Some(self.generation);
        Ok(())
    }

    /// Draw `lambda` candidates from `N(mean, sigma^2 C)`.
    pub fn ask<R: Rng + ?Sized>(
        &mut self,
        params: &CmaParams,
        rng: &mut R,
    ) -> Result<Vec<DVector<f64>>> {
        if params.n != self.dim() {
            return Err(Error::InvalidValue("parameter dimension mismatch".into()));
        }
        self.refresh_eigen(params)?;
        let n = self.dim();
        self.pending.clear();
        for _ in 0..params.lambda {
            let z = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let y = &self.basis * z.component_mul(&self.scales);
            let x = &self.mean + &y * self.sigma;
            self.pending.push((x, y));
        }
        Ok(self.pending.iter().map(|(x, _)| x.clone()).collect())
    }

    /// Update the distribution from evaluated candidates.
    ///
    /// Values may be `+inf` (infeasible) but not NaN. Ties keep input order.
    pub fn tell(
        &mut self,
        params: &CmaParams,
        candidates: &[DVector<f64>],
        values: &[f64],
    ) -> Result<()> {
        if candidates.len() != params.lambda || values.len() != params.lambda {
            return Err(Error::InvalidValue(format!(
                "expected {} candidates and values, got {} and {}",
                params.lambda,
                candidates.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::InvalidValue("objective returned NaN".into()));
        }
        let n = self.dim();
        if candidates.iter().any(|c| c.len() != n) {
            return Err(Error::InvalidValue("candidate dimension mismatch".into()));
        }

        let steps: Vec<DVector<f64>> = candidates
            .iter()
            .enumerate()
            .map(|(i, x)| match self.pending.get(i) {
                Some((px, py)) if px == x => py.clone(),
                _ => (x - &self.mean) / self.sigma,
            })
            .collect();

        let mut order: Vec<usize> = (0..params.lambda).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));

        let best_i = order[0];
        if values[best_i] < self.best_value() || self.best.is_none() {
            self.best = Some((candidates[best_i].clone(), values[best_i]));
        }

        let mut y_w = DVector::zeros(n);
        for (w, &i) in params.weights.iter().zip(&order) {
            y_w += &steps[i] * *w;
        }
        self.mean += &y_w * self.sigma;

        let cs = params.c_sigma;
        self.p_sigma = &self.p_sigma * (1.0 - cs)
            + (&self.inv_sqrt * &y_w) * (cs * (2.0 - cs) * params.mu_eff).sqrt();
        let ps_norm = self.p_sigma.norm();
        let denom = (1.0 - (1.0 - cs).powi(2 * (self.generation as i32 + 1))).sqrt();
        let h_sigma = if ps_norm / denom < (1.4 + 2.0 / (n as f64 + 1.0)) * params.chi_n {
            1.0
        } else {
            0.0
        };
        let cc = params.c_c;
        self.p_c =
            &self.p_c * (1.0 - cc) + &y_w * (h_sigma * (cc * (2.0 - cc) * params.mu_eff).sqrt());

        let mut rank_mu = DMatrix::zeros(n, n);
        for (w, &i) in params.weights.iter().zip(&order) {
            rank_mu += (&steps[i] * steps[i].transpose()) * *w;
        }
        let decay = 1.0 - params.c_1 - params.c_mu + (1.0 - h_sigma) * params.c_1 * cc * (2.0 - cc);
        let cov = &self.cov * decay
            + (&self.p_c * self.p_c.transpose()) * params.c_1
            + rank_mu * params.c_mu;
        self.cov = (&cov + cov.transpose()) * 0.5;

        self.sigma = adapt_step_size(self.sigma, ps_norm, params);
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::Numerical(format!(
                "step size degenerated to {}",
                self.sigma
            )));
        }
        self.generation += 1;
        self.evals += params.lambda;
        self.pending.clear();
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimizeOptions {
    /// Stop once the best value reaches this.
    pub f_target: Option<f64>,
    /// Stop once `sigma * max_i sqrt(C_ii)` falls below this.
    pub tol_x: f64,
    /// Population override; `None` uses the default.
    pub lambda: Option<usize>,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self {
            f_target: None,
            tol_x: 1e-12,
            lambda: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimizeResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub generations: usize,
}

/// Minimize `objective` from `x0` with at most `budget` evaluations.
///
/// A final partial generation is evaluated (but not told) when the budget
/// is not a multiple of the population size, so `evals == budget` unless a
/// stopping tolerance fires first.
pub fn minimize<F>(
    mut objective: F,
    x0: &[f64],
    sigma0: f64,
    budget: usize,
    seed: u64,
    options: &MinimizeOptions,
) -> Result<MinimizeResult>
where
    F: FnMut(&[f64]) -> f64,
{
    let params = match options.lambda {
        Some(l) => params_with_lambda(x0.len(), l)?,
        None => default_params(x0.len())?,
    };
    if budget < params.lambda {
        return Err(Error::Config(format!(
            "budget {budget} is below population size {}",
            params.lambda
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = CmaState::new(x0, sigma0)?;
    let mut evals = 0;
    let mut best: Option<(Vec<f64>, f64)> = None;
    let consider = |x: &DVector<f64>, v: f64, best: &mut Option<(Vec<f64>, f64)>| {
        if best.as_ref().is_none_or(|b| v < b.1) {
            *best = Some((x.as_slice().to_vec(), v));
        }
    };

    while evals < budget {
        let candidates = state.ask(&params, &mut rng)?;
        let remaining = budget - evals;
        if remaining < params.lambda {
            for x in candidates.iter().take(remaining) {
                let v = objective(x.as_slice());
                if v.is_nan() {
                    return Err(Error::InvalidValue("objective returned NaN".into()));
                }
                consider(x, v, &mut best);
            }
            evals += remaining;
            break;
        }
        let values: Vec<f64> = candidates.iter().map(|x| objective(x.as_slice())).collect();
        for (x, &v) in candidates.iter().zip(&values) {
            if !v.is_nan() {
                consider(x, v, &mut best);
            }
        }
        state.tell(&params, &candidates, &values)?;
        evals += params.lambda;

        if let (Some(target), Some(b)) = (options.f_target, &best) {
            if b.1 <= target {
                break;
            }
        }
        let spread = state.sigma * state.cov.diagonal().max().sqrt();
        if spread < options.tol_x {
            break;
        }
    }

    let (x, value) = best.ok_or_else(|| Error::Numerical("no candidate evaluated".into()))?;
    Ok(MinimizeResult {
        x,
        value,
        evals,
        generations: state.generation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    #[test]
    fn default_params_examples() {
        let p = default_params(10).unwrap();
        assert_eq!(p.lambda, 10);
        assert_eq!(p.mu, 5);
        let p2 = default_params(2).unwrap();
        assert!((p2.chi_n - 1.2543).abs() < 1e-4);
        for n in 1..40 {
            let p = default_params(n).unwrap();
            assert!((p.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.weights.windows(2).all(|w| w[0] > w[1]));
            assert!(p.lambda >= 4 && p.mu >= 1 && p.mu < p.lambda);
            for r in [p.c_sigma, p.c_c, p.c_1, p.c_mu] {
                assert!(r > 0.0 && r <= 1.0);
            }
            assert!(p.c_1 + p.c_mu <= 1.0);
        }
        assert!(default_params(0).is_err());
    }

    #[test]
    fn sigma_fixed_point() {
        let p = default_params(5).unwrap();
        assert_eq!(adapt_step_size(0.7, p.chi_n, &p), 0.7);
    }

    #[test]
    fn tiny_sigma_collapses_candidates_to_mean() {
        let p = default_params(3).unwrap();
        let mut s = CmaState::new(&[1.0, -2.0, 3.5], 1e-300).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for c in s.ask(&p, &mut rng).unwrap() {
            assert_eq!(c, s.mean);
        }
    }

    #[test]
    fn same_seed_same_candidates() {
        let p = default_params(4).unwrap();
        let draw = || {
            let mut s = CmaState::new(&[0.0; 4], 1.0).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            s.ask(&p, &mut rng).unwrap()
        };
        assert_eq!(draw(), draw());
    }

    #[test]
    fn isotropic_sample_covariance() {
        let n = 3;
        let p = params_with_lambda(n, 10_000).unwrap();
        let sigma = 2.0;
        let mut s = CmaState::new(&[0.0; 3], sigma).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs = s.ask(&p, &mut rng).unwrap();
        let mut cov = DMatrix::<f64>::zeros(n, n);
        for x in &xs {
            cov += x * x.transpose();
        }
        cov /= xs.len() as f64;
        for i in 0..n {
            for j in 0..n {
                let expect = if i == j { sigma * sigma } else { 0.0 };
                assert!((cov[(i, j)] - expect).abs() < 0.05 * sigma * sigma, "{cov}");
            }
        }
    }

    #[test]
    fn tie_moves_mean_to_weighted_leaders() {
        let p = default_params(2).unwrap();
        let mut s = CmaState::new(&[0.0, 0.0], 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xs = s.ask(&p, &mut rng).unwrap();
        let vals = vec![1.0; p.lambda];
        s.tell(&p, &xs, &vals).unwrap();
        let mut expect = DVector::zeros(2);
        for (w, x) in p.weights.iter().zip(&xs) {
            expect += x * *w;
        }
        assert!((s.mean - expect).norm() < 1e-12);
    }

    #[test]
    fn tell_validates_inputs() {
        let p = default_params(2).unwrap();
        let mut s = CmaState::new(&[0.0, 0.0], 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xs = s.ask(&p, &mut rng).unwrap();
        let mut vals = vec![1.0; p.lambda];
        assert!(s.tell(&p, &xs[1..], &vals[1..]).is_err());
        vals[2] = f64::NAN;
        assert!(s.tell(&p, &xs, &vals).is_err());
        vals[2] = f64::INFINITY;
        assert!(s.tell(&p, &xs, &vals).is_ok());
    }

    #[test]
    fn sphere_converges() {
        let r = minimize(
            sphere,
            &[3.0, 3.0],
            1.0,
            2000,
            1,
            &MinimizeOptions::default(),
        )
        .unwrap();
        assert!(r.value < 1e-10, "{r:?}");
        assert!(r.evals <= 2000);
    }

    #[test]
    fn one_dimensional_quadratic() {
        let r = minimize(
            |x| (x[0] - 7.0).powi(2),
            &[0.0],
            1.0,
            500,
            4,
            &MinimizeOptions::default(),
        )
        .unwrap();
        assert!((r.x[0] - 7.0).abs() < 1e-4, "{r:?}");
    }

    #[test]
    fn constant_objective_spends_budget() {
        let r = minimize(
            |_| 3.0,
            &[1.0, 2.0],
            0.5,
            103,
            2,
            &MinimizeOptions::default(),
        )
        .unwrap();
        assert_eq!(r.value, 3.0);
        assert_eq!(r.evals, 103);
    }

    #[test]
    fn budget_below_population_is_rejected() {
        assert!(matches!(
            minimize(sphere, &[1.0; 10], 1.0, 5, 1, &MinimizeOptions::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn covariance_stays_positive_definite() {
        let p = default_params(4).unwrap();
        let mut s = CmaState::new(&[0.0; 4], 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut vrng = ChaCha8Rng::seed_from_u64(22);
        let mut last_best = f64::INFINITY;
        for _ in 0..10_000 {
            let xs = s.ask(&p, &mut rng).unwrap();
            let vals: Vec<f64> = (0..p.lambda).map(|_| vrng.gen::<f64>()).collect();
            s.tell(&p, &xs, &vals).unwrap();
            assert!(s.best_value() <= last_best);
            last_best = s.best_value();
        }
        let sym_err = (&s.cov - s.cov.transpose()).abs().max();
        assert!(sym_err < 1e-10);
        let eig = SymmetricEigen::new(s.cov.clone());
        assert!(eig.eigenvalues.iter().all(|v| *v > 0.0));
        assert!(s.sigma > 0.0);
    }
}
