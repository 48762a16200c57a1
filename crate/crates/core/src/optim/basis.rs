//! Shared rank-1 basis fitting with a nuclear-norm penalty.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{solve_right_spd, spd_max_eigenvalue, SortedSvd};
use crate::lowrank::Scheme1Layer;
use crate::optim::svt::{nuclear_norm, svt};
use crate::scalar::Scalar;
use crate::tensor::{BasisBank, CoeffTensor, FilterBank};

/// Settings for [`scheme1_filter_recon`].
#[derive(Debug, Clone, PartialEq)]
pub struct Scheme1ReconConfig {
    /// Weight of the nuclear-norm penalty on each basis filter.
    pub lambda: f64,
    /// Proximal step as a fraction of `1 / L`, `L` the Lipschitz constant of
    /// the basis gradient. Values in `(0, 1]` guarantee descent.
    pub step: f64,
    /// Proximal-gradient steps per outer iteration.
    pub inner_steps: usize,
    pub max_iters: usize,
    /// Stop when the relative objective decrease falls below this.
    pub tol: f64,
    /// Seeds the basis rows that PCA cannot supply.
    pub seed: u64,
    /// Fit one basis per input channel instead of a shared one.
    pub per_channel: bool,
}

impl Default for Scheme1ReconConfig {
    fn default() -> Self {
        Self { lambda: 0.0, step: 1.0, inner_steps: 5, max_iters: 300, tol: 1e-9, seed: 0, per_channel: false }
    }
}

impl Scheme1ReconConfig {
    fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !(self.step > 0.0) || !(self.tol > 0.0) || self.inner_steps == 0 {
            return Err(Error::InvalidArgument("need lambda >= 0, step > 0, tol > 0, inner_steps > 0".into()));
        }
        Ok(())
    }
}

/// Outcome of a Scheme-1 filter reconstruction.
#[derive(Debug, Clone)]
pub struct Scheme1Recon<T> {
    pub layer: Scheme1Layer<T>,
    /// Penalized objective after initialization and after every outer
    /// iteration (summed over channels for per-channel bases).
    pub trace: Vec<f64>,
    /// Filter residual `||W - W~||_F` before the final rank-1 projection.
    pub pre_projection_residual: f64,
    /// Filter residual of the returned, exactly separable layer.
    pub residual: f64,
    pub iterations: usize,
    /// False when `max_iters` was reached first; the best iterate is still returned.
    pub converged: bool,
    pub lambda: f64,
}

struct Fit {
    vertical: Vec<f64>,
    horizontal: Vec<f64>,
    coeffs: DMatrix<f64>,
    trace: Vec<f64>,
    pre: f64,
    post: f64,
    iterations: usize,
    converged: bool,
}

fn penalized(f: &DMatrix<f64>, a: &DMatrix<f64>, s: &DMatrix<f64>, lambda: f64, d: usize) -> f64 {
    let fit = (f - a * s).norm_squared();
    if lambda == 0.0 {
        return fit;
    }
    let nuc: f64 = (0..s.nrows()).map(|m| nuclear_norm(&row_as_kernel(s, m, d))).sum();
    fit + lambda * nuc
}

fn row_as_kernel(s: &DMatrix<f64>, m: usize, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |i, j| s[(m, i * d + j)])
}

fn coefficients(f: &DMatrix<f64>, s: &DMatrix<f64>) -> DMatrix<f64> {
    solve_right_spd(&(f * s.transpose()), &(s * s.transpose()), 1e-8)
}

/// Fits `F ~= A S` with `S` rows penalized by their nuclear norm, then makes
/// every row exactly rank 1.
fn fit_basis(f: &DMatrix<f64>, m: usize, d: usize, cfg: &Scheme1ReconConfig, rng: &mut ChaCha8Rng) -> Fit {
    let dd = d * d;
    let svd = SortedSvd::new(f);
    let mut s = DMatrix::zeros(m, dd);
    for r in 0..m {
        if r < svd.v_t.nrows() && svd.sigma[r] > 1e-12 * svd.sigma[0].max(1e-300) {
            s.row_mut(r).copy_from(&svd.v_t.row(r));
        } else {
            let row: Vec<f64> = (0..dd).map(|_| StandardNormal.sample(rng)).collect();
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            for (j, x) in row.iter().enumerate() {
                s[(r, j)] = x / n;
            }
        }
    }
    let mut a = coefficients(f, &s);
    let mut obj = penalized(f, &a, &s, cfg.lambda, d);
    let mut trace = vec![obj];
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..cfg.max_iters {
        iterations += 1;
        let prev = obj;
        let a_new = coefficients(f, &s);
        let o = penalized(f, &a_new, &s, cfg.lambda, d);
        if o <= obj {
            a = a_new;
            obj = o;
        }
        let ata = a.transpose() * &a;
        let atf = a.transpose() * f;
        let lip = 2.0 * spd_max_eigenvalue(&ata);
        if lip > 0.0 {
            let eta = cfg.step / lip;
            for _ in 0..cfg.inner_steps {
                let grad = (&ata * &s - &atf) * 2.0;
                let moved = &s - grad * eta;
                let mut next = moved.clone();
                if cfg.lambda > 0.0 {
                    for r in 0..m {
                        let k = svt(&row_as_kernel(&moved, r, d), eta * cfg.lambda);
                        for i in 0..d {
                            for j in 0..d {
                                next[(r, i * d + j)] = k[(i, j)];
                            }
                        }
                    }
                }
                let o = penalized(f, &a, &next, cfg.lambda, d);
                if o > obj {
                    break;
                }
                s = next;
                obj = o;
            }
        }
        trace.push(obj);
        if prev - obj <= cfg.tol * prev.max(1e-300) {
            converged = true;
            break;
        }
    }
    let pre = (f - &a * &s).norm();

    let mut vertical = vec![0.0; m * d];
    let mut horizontal = vec![0.0; m * d];
    let mut proj = DMatrix::zeros(m, dd);
    for r in 0..m {
        let k = SortedSvd::new(&row_as_kernel(&s, r, d));
        let root = k.sigma[0].sqrt();
        for i in 0..d {
            vertical[r * d + i] = k.u[(i, 0)] * root;
            horizontal[r * d + i] = k.v_t[(0, i)] * root;
        }
        for i in 0..d {
            for j in 0..d {
                proj[(r, i * d + j)] = vertical[r * d + i] * horizontal[r * d + j];
            }
        }
    }
    let coeffs = coefficients(f, &proj);
    let post = (f - &coeffs * &proj).norm();
    Fit { vertical, horizontal, coeffs, trace, pre, post, iterations, converged }
}

/// Filter reconstruction with `M` separable basis filters: alternates exact
/// least squares for the coefficients with proximal-gradient steps on the
/// nuclear-norm-penalized basis, then projects each basis filter onto its
/// top singular pair and refits the coefficients. The bias is copied.
pub fn scheme1_filter_recon<T: Scalar>(bank: &FilterBank<T>, m: usize, cfg: &Scheme1ReconConfig) -> Result<Scheme1Recon<T>> {
    cfg.validate()?;
    if !bank.is_square() {
        return Err(Error::NonSquareKernel { kh: bank.kh(), kw: bank.kw() });
    }
    if m == 0 {
        return Err(Error::InvalidArgument("basis size must be at least 1".into()));
    }
    let (n, c, d) = (bank.filters(), bank.channels(), bank.kh());
    let dd = d * d;
    let w = bank.weights();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut coeffs = vec![T::zero(); n * c * m];
    let (bases, trace, pre, post, iterations, converged) = if cfg.per_channel {
        let mut bases = Vec::with_capacity(c);
        let mut trace: Vec<f64> = Vec::new();
        let (mut pre, mut post, mut iters, mut conv) = (0.0, 0.0, 0, true);
        for ci in 0..c {
            let f = DMatrix::from_fn(n, dd, |ni, k| w[(ni * c + ci) * dd + k].to_f64());
            let fit = fit_basis(&f, m, d, cfg, &mut rng);
            for ni in 0..n {
                for mi in 0..m {
                    coeffs[(ni * c + ci) * m + mi] = T::of(fit.coeffs[(ni, mi)]);
                }
            }
            // Channels converge at different rates; pad each with its final value.
            let last = *fit.trace.last().expect("initial objective");
            let prev_last = trace.last().copied().unwrap_or(0.0);
            let len = trace.len().max(fit.trace.len());
            trace = (0..len)
                .map(|k| trace.get(k).copied().unwrap_or(prev_last) + fit.trace.get(k).copied().unwrap_or(last))
                .collect();
            pre += fit.pre * fit.pre;
            post += fit.post * fit.post;
            iters = iters.max(fit.iterations);
            conv &= fit.converged;
            bases.push(to_basis::<T>(d, &fit)?);
        }
        (bases, trace, pre.sqrt(), post.sqrt(), iters, conv)
    } else {
        let f = DMatrix::from_fn(n * c, dd, |r, k| w[r * dd + k].to_f64());
        let fit = fit_basis(&f, m, d, cfg, &mut rng);
        for r in 0..n * c {
            for mi in 0..m {
                coeffs[r * m + mi] = T::of(fit.coeffs[(r, mi)]);
            }
        }
        (vec![to_basis::<T>(d, &fit)?], fit.trace.clone(), fit.pre, fit.post, fit.iterations, fit.converged)
    };
    let layer = Scheme1Layer::new(bases, CoeffTensor::new(n, c, m, coeffs)?, bank.bias().to_vec())?;
    Ok(Scheme1Recon {
        layer,
        trace,
        pre_projection_residual: pre,
        residual: post,
        iterations,
        converged,
        lambda: cfg.lambda,
    })
}

fn to_basis<T: Scalar>(d: usize, fit: &Fit) -> Result<BasisBank<T>> {
    BasisBank::new(
        d,
        fit.vertical.iter().map(|&x| T::of(x)).collect(),
        fit.horizontal.iter().map(|&x| T::of(x)).collect(),
    )
}

/// Multipliers of the mean filter norm tried by [`scheme1_filter_recon_auto`].
pub const LAMBDA_GRID: [f64; 4] = [1e-3, 1e-2, 1e-1, 1.0];

/// Runs [`scheme1_filter_recon`] for every `lambda` in [`LAMBDA_GRID`] times
/// the mean Frobenius norm of the filters and keeps the smallest residual.
pub fn scheme1_filter_recon_auto<T: Scalar>(bank: &FilterBank<T>, m: usize, cfg: &Scheme1ReconConfig) -> Result<Scheme1Recon<T>> {
    let n = bank.filters();
    let per = bank.fan_in();
    let mean_norm = (0..n)
        .map(|ni| bank.weights()[ni * per..(ni + 1) * per].iter().map(|&x| x.to_f64().powi(2)).sum::<f64>().sqrt())
        .sum::<f64>()
        / n as f64;
    let mut best: Option<Scheme1Recon<T>> = None;
    for g in LAMBDA_GRID {
        let r = scheme1_filter_recon(bank, m, &Scheme1ReconConfig { lambda: g * mean_norm, ..cfg.clone() })?;
        if best.as_ref().map_or(true, |b| r.residual < b.residual) {
            best = Some(r);
        }
    }
    Ok(best.expect("grid is non-empty"))
}
