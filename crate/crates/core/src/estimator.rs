//! Gaussian pseudo maximum likelihood estimation of the k-factor model.
//!
//! The estimator maximizes `-log|Sigma| - Tr(Vy Sigma^{-1})` over
//! `Sigma = F F' + V_eps` with diagonal `V_eps`, under the normalization that
//! `F' V_eps^{-1} F` is diagonal with decreasing entries. The first-order
//! conditions are the diagonal-matching condition on `Vy` and the eigenvector
//! characterization of `F` in the metric `V_eps^{-1}`; the solver alternates
//! between the two and falls back to a quasi-Newton pass on the profile
//! objective over `log diag(V_eps)` when the alternation stalls.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::{sym_eig_dense, SymMat};
use crate::panel::Panel;

#[derive(Debug, Error)]
pub enum FaError {
    #[error("k = {k} is too large for T = {t}: df = {df} < 0")]
    KTooLarge { t: usize, k: usize, df: i64 },
    #[error("sample covariance is not positive definite (min eigenvalue {min_eig:.3e})")]
    NotPositiveDefinite { min_eig: f64 },
}

/// Degrees of freedom of the k-factor test: ((T-k)^2 - T - k) / 2.
pub fn df(t: usize, k: usize) -> i64 {
    let t = t as i64;
    let k = k as i64;
    ((t - k) * (t - k) - t - k) / 2
}

/// Largest k with df >= 0 (estimation is possible).
pub fn max_k_estimable(t: usize) -> usize {
    (0..t).rev().find(|&k| df(t, k) >= 0).unwrap_or(0)
}

/// Largest k with df > 0 (the k-factor hypothesis is testable).
pub fn max_k_testable(t: usize) -> usize {
    (0..t).rev().find(|&k| df(t, k) > 0).unwrap_or(0)
}

/// Solver options.
#[derive(Debug, Clone)]
pub struct FaOptions {
    /// Convergence threshold on the max relative change of diag(V_eps).
    pub tol_veps: f64,
    /// Threshold on the relative FA1 residual.
    pub tol_fa1: f64,
    pub max_iter: usize,
    /// Variance floor as a fraction of mean(diag(Vy)).
    pub floor_factor: f64,
}

impl Default for FaOptions {
    fn default() -> Self {
        FaOptions { tol_veps: 1e-9, tol_fa1: 1e-8, max_iter: 10_000, floor_factor: 1e-8 }
    }
}

/// Fitted k-factor model.
#[derive(Debug, Clone)]
pub struct FaEstimate {
    pub k: usize,
    pub t: usize,
    /// Cross-sectional sample size the fit was computed from.
    pub n: usize,
    pub mu_hat: DVector<f64>,
    /// T x k factor values.
    pub f_hat: DMatrix<f64>,
    /// Diagonal of the idiosyncratic variance matrix.
    pub v_eps_hat: DVector<f64>,
    /// All T eigenvalues of Vy V_eps^{-1} minus one, in decreasing order.
    pub gamma_hat: DVector<f64>,
    /// T x (T-k) matrix with F'V_eps^{-1}G = 0 and G'V_eps^{-1}G = I.
    pub g_hat: DMatrix<f64>,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Some idiosyncratic variances hit the floor.
    pub heywood: bool,
    /// Some of the first k eigenvalues needed the positive-part adjustment.
    pub boundary_gamma: bool,
    /// The first k eigenvalues are nearly tied; factor-level inference is
    /// fragile (the LR test itself is unaffected).
    pub close_eigenvalues: bool,
    /// Fitted under the sphericity constraint V_eps = sigma^2 I.
    pub spherical: bool,
    /// Sample covariance the fit was computed from.
    pub v_y: SymMat,
}

impl FaEstimate {
    /// GLS projection matrix orthogonal to the fitted factors,
    /// `M = I - F (F'V^{-1}F)^{-1} F'V^{-1}`.
    pub fn gls_projection(&self) -> DMatrix<f64> {
        let t = self.t;
        if self.k == 0 {
            return DMatrix::identity(t, t);
        }
        let vinv_f = DMatrix::from_fn(t, self.k, |i, j| self.f_hat[(i, j)] / self.v_eps_hat[i]);
        let gram = self.f_hat.transpose() * &vinv_f;
        let gram_inv = gram.try_inverse().expect("F'V^-1F invertible at a valid fit");
        DMatrix::identity(t, t) - &self.f_hat * gram_inv * vinv_f.transpose()
    }

    /// GLS loadings of each demeaned unit on the fitted factors (k x n).
    pub fn gls_loadings(&self, ytilde: &DMatrix<f64>) -> DMatrix<f64> {
        let vinv_f =
            DMatrix::from_fn(self.t, self.k, |i, j| self.f_hat[(i, j)] / self.v_eps_hat[i]);
        let gram = self.f_hat.transpose() * &vinv_f;
        let gram_inv = gram.try_inverse().expect("F'V^-1F invertible at a valid fit");
        gram_inv * vinv_f.transpose() * ytilde
    }

    /// Relative FA1 residual: max_t |Vy_tt - (FF' + V_eps)_tt| / mean diag Vy.
    pub fn fa1_residual(&self) -> f64 {
        let scale = self.v_y.diagonal().mean().max(f64::MIN_POSITIVE);
        let mut worst: f64 = 0.0;
        for t in 0..self.t {
            let ff = self.f_hat.row(t).norm_squared();
            worst = worst.max((self.v_y.get(t, t) - ff - self.v_eps_hat[t]).abs());
        }
        worst / scale
    }
}

/// Fits the k-factor model on a panel.
pub fn estimate(panel: &Panel, k: usize) -> Result<FaEstimate, FaError> {
    estimate_with(panel, k, &FaOptions::default())
}

pub fn estimate_with(panel: &Panel, k: usize, opts: &FaOptions) -> Result<FaEstimate, FaError> {
    let (ybar, _, vy) = panel.sample_covariance();
    estimate_from_cov(&vy, &ybar, panel.n(), k, opts)
}

/// Fits from a precomputed sample covariance (mu_hat supplied separately).
pub fn estimate_from_cov(
    vy: &SymMat,
    ybar: &DVector<f64>,
    n: usize,
    k: usize,
    opts: &FaOptions,
) -> Result<FaEstimate, FaError> {
    let t = vy.dim();
    let dfree = df(t, k);
    if dfree < 0 {
        return Err(FaError::KTooLarge { t, k, df: dfree });
    }
    let vy_dense = vy.to_dense();
    let (vy_eigs, _) = sym_eig_dense(&vy_dense);
    if vy_eigs[t - 1] <= 0.0 {
        return Err(FaError::NotPositiveDefinite { min_eig: vy_eigs[t - 1] });
    }

    let diag_vy = vy.diagonal();
    let floor = opts.floor_factor * diag_vy.mean();

    let mut v: DVector<f64> = if k == 0 {
        diag_vy.clone()
    } else {
        (&diag_vy * (1.0 - k as f64 / t as f64)).map(|x| x.max(floor))
    };

    let mut iterations = 0;
    let mut converged = k == 0;
    if k > 0 {
        for it in 1..=opts.max_iter {
            iterations = it;
            let (d, u) = whitened_eig(&vy_dense, &v);
            let mut vnew = DVector::zeros(t);
            for ti in 0..t {
                let mut ff = 0.0;
                for j in 0..k {
                    let gam = (d[j] - 1.0).max(0.0);
                    ff += gam * u[(ti, j)] * u[(ti, j)];
                }
                vnew[ti] = (diag_vy[ti] - v[ti] * ff).max(floor);
            }
            let mut rel = 0.0f64;
            for ti in 0..t {
                rel = rel.max((vnew[ti] - v[ti]).abs() / v[ti]);
            }
            v = vnew;
            if rel < opts.tol_veps {
                converged = true;
                break;
            }
        }
        if !converged {
            // quasi-Newton pass on the profile objective over log v
            let (vb, ok) = bfgs_profile(&vy_dense, &diag_vy, v.clone(), k, floor, 500);
            v = vb;
            converged = ok;
        }
    }

    let est = finalize(vy, &vy_dense, ybar, n, k, v, iterations, converged, floor, opts);
    Ok(est)
}

#[allow(clippy::too_many_arguments)]
fn finalize(
    vy: &SymMat,
    vy_dense: &DMatrix<f64>,
    ybar: &DVector<f64>,
    n: usize,
    k: usize,
    v: DVector<f64>,
    iterations: usize,
    converged_iter: bool,
    floor: f64,
    opts: &FaOptions,
) -> FaEstimate {
    let t = vy.dim();
    let (d, u) = whitened_eig(vy_dense, &v);
    let gamma_hat = DVector::from_fn(t, |j, _| d[j] - 1.0);
    let boundary_gamma = (0..k).any(|j| d[j] < 1.0);

    let mut f_hat = DMatrix::zeros(t, k);
    for j in 0..k {
        let gam = (d[j] - 1.0).max(0.0);
        let scale = gam.sqrt();
        for ti in 0..t {
            f_hat[(ti, j)] = v[ti].sqrt() * u[(ti, j)] * scale;
        }
    }
    let mut g_hat = DMatrix::zeros(t, t - k);
    for j in 0..(t - k) {
        for ti in 0..t {
            g_hat[(ti, j)] = v[ti].sqrt() * u[(ti, k + j)];
        }
    }

    let heywood = (0..t).any(|ti| v[ti] <= floor * (1.0 + 1e-12));
    let close_eigenvalues = k >= 2 && {
        let g0 = (d[0] - 1.0).max(0.0);
        (0..k - 1).any(|j| (d[j] - d[j + 1]).abs() < 1e-6 * g0.max(f64::MIN_POSITIVE))
    };
    let loglik = -0.5 * profile_objective(&d, &v, k);

    let mut est = FaEstimate {
        k,
        t,
        n,
        mu_hat: ybar.clone(),
        f_hat,
        v_eps_hat: v,
        gamma_hat,
        g_hat,
        loglik,
        iterations,
        converged: converged_iter,
        heywood,
        boundary_gamma,
        close_eigenvalues,
        spherical: false,
        v_y: vy.clone(),
    };
    if est.converged && est.fa1_residual() > opts.tol_fa1 && !heywood {
        est.converged = false;
    }
    est
}

/// Eigendecomposition of `V^{-1/2} Vy V^{-1/2}`, eigenvalues decreasing.
fn whitened_eig(vy: &DMatrix<f64>, v: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let t = vy.nrows();
    let s = DVector::from_fn(t, |i, _| v[i].sqrt().recip());
    let b = DMatrix::from_fn(t, t, |i, j| vy[(i, j)] * s[i] * s[j]);
    sym_eig_dense(&b)
}

/// Minus twice the concentrated log-likelihood, up to constants.
fn profile_objective(d: &DVector<f64>, v: &DVector<f64>, k: usize) -> f64 {
    let t = v.len();
    let mut phi: f64 = v.iter().map(|x| x.ln()).sum();
    for j in 0..t {
        if j < k && d[j] > 1.0 {
            phi += d[j].ln() + 1.0;
        } else {
            phi += d[j];
        }
    }
    phi
}

fn profile_grad(vy: &DMatrix<f64>, v: &DVector<f64>, k: usize) -> (f64, DVector<f64>) {
    let t = v.len();
    let (d, u) = whitened_eig(vy, v);
    let phi = profile_objective(&d, v, k);
    let mut g = DVector::from_element(t, 1.0);
    for j in 0..t {
        let w = if j < k && d[j] > 1.0 { 1.0 } else { d[j] };
        for ti in 0..t {
            g[ti] -= w * u[(ti, j)] * u[(ti, j)];
        }
    }
    (phi, g)
}

/// BFGS on theta = log v with Armijo backtracking. Returns the best point and
/// whether a stationary point was reached.
fn bfgs_profile(
    vy: &DMatrix<f64>,
    diag_vy: &DVector<f64>,
    v0: DVector<f64>,
    k: usize,
    floor: f64,
    max_iter: usize,
) -> (DVector<f64>, bool) {
    let t = v0.len();
    let lo = floor.ln();
    let hi = (diag_vy.max() * 4.0).ln();
    let clamp = |th: &DVector<f64>| th.map(|x| x.clamp(lo, hi));
    let mut theta = clamp(&v0.map(|x| x.ln()));
    let mut hinv = DMatrix::identity(t, t);
    let (mut phi, mut grad) = profile_grad(vy, &theta.map(f64::exp), k);
    let mut ok = false;
    for _ in 0..max_iter {
        if grad.norm() < 1e-10 {
            ok = true;
            break;
        }
        let dir = -(&hinv * &grad);
        let slope = grad.dot(&dir);
        let dir = if slope < 0.0 { dir } else { -grad.clone() };
        let slope = grad.dot(&dir).min(-1e-16);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = clamp(&(&theta + step * &dir));
            let (phic, gc) = profile_grad(vy, &cand.map(f64::exp), k);
            if phic <= phi + 1e-4 * step * slope {
                let s = &cand - &theta;
                let yv = &gc - &grad;
                let sy = s.dot(&yv);
                if sy > 1e-12 {
                    let rho = 1.0 / sy;
                    let i = DMatrix::identity(t, t);
                    let left = &i - rho * &s * yv.transpose();
                    hinv = &left * hinv * left.transpose() + rho * &s * s.transpose();
                }
                theta = cand;
                phi = phic;
                grad = gc;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if grad.norm() < 1e-7 {
        ok = true;
    }
    (theta.map(f64::exp), ok)
}

/// Fits the k-factor model under the sphericity constraint
/// `V_eps = sigma^2 I`; the factor estimate reduces to principal components
/// of `Vy`.
pub fn constrained_estimate_spherical(panel: &Panel, k: usize) -> Result<FaEstimate, FaError> {
    let (ybar, _, vy) = panel.sample_covariance();
    spherical_from_cov(&vy, &ybar, panel.n(), k)
}

pub fn spherical_from_cov(
    vy: &SymMat,
    ybar: &DVector<f64>,
    n: usize,
    k: usize,
) -> Result<FaEstimate, FaError> {
    let t = vy.dim();
    let dfree = df(t, k);
    if dfree < 0 {
        return Err(FaError::KTooLarge { t, k, df: dfree });
    }
    let dense = vy.to_dense();
    let (delta, u) = sym_eig_dense(&dense);
    if delta[t - 1] <= 0.0 {
        return Err(FaError::NotPositiveDefinite { min_eig: delta[t - 1] });
    }
    let sigma2 = delta.rows(k, t - k).sum() / (t - k) as f64;
    let gamma_hat = DVector::from_fn(t, |j, _| delta[j] / sigma2 - 1.0);
    let boundary_gamma = (0..k).any(|j| delta[j] < sigma2);

    let mut f_hat = DMatrix::zeros(t, k);
    for j in 0..k {
        let scale = (delta[j] - sigma2).max(0.0).sqrt();
        for ti in 0..t {
            f_hat[(ti, j)] = u[(ti, j)] * scale;
        }
    }
    let sigma = sigma2.sqrt();
    let mut g_hat = DMatrix::zeros(t, t - k);
    for j in 0..(t - k) {
        for ti in 0..t {
            g_hat[(ti, j)] = sigma * u[(ti, k + j)];
        }
    }

    // -2L = sum_{j<=k} (log delta_j + 1) + (T-k) log sigma^2 + sum_{j>k} delta_j / sigma^2
    let mut m2l = (t - k) as f64 * sigma2.ln();
    for j in 0..t {
        if j < k && delta[j] > sigma2 {
            m2l += delta[j].ln() + 1.0;
        } else {
            m2l += delta[j] / sigma2;
        }
    }

    Ok(FaEstimate {
        k,
        t,
        n,
        mu_hat: ybar.clone(),
        f_hat,
        v_eps_hat: DVector::from_element(t, sigma2),
        gamma_hat,
        g_hat,
        loglik: -0.5 * m2l,
        iterations: 0,
        converged: true,
        heywood: false,
        boundary_gamma,
        close_eigenvalues: false,
        spherical: true,
        v_y: vy.clone(),
    })
}
