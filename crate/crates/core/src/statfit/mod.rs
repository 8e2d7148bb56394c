//! Empirical densities and maximum-likelihood fits of normal and
//! t location-scale distributions to singular-vector entries.
//!
//! The t location-scale density is
//!
//! ```text
//! p(x) = G((b+1)/2) / (s sqrt(b pi) G(b/2)) * [(b + ((x-u)/s)^2)/b]^(-(b+1)/2)
//! ```
//!
//! with location u, scale s > 0 and shape b > 0. Small b means heavy
//! tails; as b grows the density approaches the normal.

mod optim;
mod special;

pub use special::{digamma, ln_gamma};

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SvdResult;

/// Shape values above this are indistinguishable from the normal limit;
/// fits are capped here and flagged.
pub const BETA_CAP: f64 = 1e6;

/// Fitted t location-scale parameters with fit diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TlsParams {
    pub mu: f64,
    pub sigma: f64,
    pub beta: f64,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Set when the fit hit the shape cap; the sample is normal for all
    /// practical purposes.
    pub effectively_normal: bool,
}

impl TlsParams {
    pub fn new(mu: f64, sigma: f64, beta: f64) -> Result<Self> {
        check_scale_shape(sigma, beta)?;
        Ok(Self {
            mu,
            sigma,
            beta,
            loglik: f64::NAN,
            converged: true,
            iterations: 0,
            effectively_normal: beta >= BETA_CAP,
        })
    }
}

fn check_scale_shape(sigma: f64, beta: f64) -> Result<()> {
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(Error::Domain(format!("scale must be > 0, got {sigma}")));
    }
    if !beta.is_finite() || beta <= 0.0 {
        return Err(Error::Domain(format!("shape must be > 0, got {beta}")));
    }
    Ok(())
}

/// t location-scale density at `x`.
pub fn tls_pdf(x: f64, p: &TlsParams) -> Result<f64> {
    check_scale_shape(p.sigma, p.beta)?;
    Ok(tls_log_pdf(x, p.mu, p.sigma, p.beta).exp())
}

/// Log-density; assumes valid parameters.
fn tls_log_pdf(x: f64, mu: f64, sigma: f64, beta: f64) -> f64 {
    let z = (x - mu) / sigma;
    ln_gamma((beta + 1.0) / 2.0)
        - ln_gamma(beta / 2.0)
        - 0.5 * (beta * std::f64::consts::PI).ln()
        - sigma.ln()
        - 0.5 * (beta + 1.0) * (z * z / beta).ln_1p()
}

/// Normal density, used for fit-vs-fit comparisons and plot exports.
pub fn normal_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

/// Mean log-likelihood and its gradient in (mu, ln sigma, ln beta).
///
/// The per-sample terms, with z = (x - mu)/sigma, w = z^2/beta, A = 1 + w:
///   d/d mu       = (beta+1)/(sigma beta) * z / A
///   d/d ln sigma = -1 + (beta+1)/beta * z^2 / A
///   d/d ln beta  = beta * { [psi((beta+1)/2) - psi(beta/2) - 1/beta]/2
///                           - ln(A)/2 + (beta+1)/(2 beta) * w/A }
fn mean_loglik_and_grad(data: &[f64], theta: &[f64]) -> (f64, Vec<f64>) {
    let mu = theta[0];
    let sigma = theta[1].exp();
    let beta = theta[2].exp();
    if !sigma.is_finite() || !beta.is_finite() || sigma <= 0.0 || beta <= 0.0 {
        return (f64::NEG_INFINITY, vec![0.0; 3]);
    }
    let n = data.len() as f64;
    let const_term = ln_gamma((beta + 1.0) / 2.0)
        - ln_gamma(beta / 2.0)
        - 0.5 * (beta * std::f64::consts::PI).ln()
        - sigma.ln();
    let psi_term = 0.5 * (digamma((beta + 1.0) / 2.0) - digamma(beta / 2.0) - 1.0 / beta);

    let mut sum_ll = 0.0;
    let mut g_mu = 0.0;
    let mut g_lsigma = 0.0;
    let mut g_lbeta = 0.0;
    for &x in data {
        let z = (x - mu) / sigma;
        let w = z * z / beta;
        let ln_a = w.ln_1p();
        let a = 1.0 + w;
        sum_ll += const_term - 0.5 * (beta + 1.0) * ln_a;
        g_mu += (beta + 1.0) / (sigma * beta) * z / a;
        g_lsigma += -1.0 + (beta + 1.0) / beta * (z * z) / a;
        g_lbeta += beta * (psi_term - 0.5 * ln_a + (beta + 1.0) / (2.0 * beta) * w / a);
    }
    (
        sum_ll / n,
        vec![g_mu / n, g_lsigma / n, g_lbeta / n],
    )
}

/// Maximum-likelihood fit of the t location-scale density.
///
/// Maximizes the exact log-likelihood over (mu, ln sigma, ln beta) with
/// the analytic gradient; if the quasi-Newton line search stalls, a
/// Nelder-Mead pass restarts it. Convergence means the mean-log-likelihood
/// gradient norm reached 1e-8 in the transformed coordinates.
pub fn fit_tls(data: &[f64]) -> Result<TlsParams> {
    if data.len() < 50 {
        return Err(Error::Degenerate(format!(
            "t location-scale fit needs at least 50 observations, got {}",
            data.len()
        )));
    }
    if data.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("sample contains non-finite values".into()));
    }

    let mut sorted = data.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = quantile_sorted(&sorted, 0.5);
    let mut abs_dev: Vec<f64> = sorted.iter().map(|x| (x - median).abs()).collect();
    abs_dev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mad = quantile_sorted(&abs_dev, 0.5);
    let sigma0 = if mad > 0.0 {
        mad * 1.4826
    } else {
        // Ties at the median; fall back to the spread of the sample.
        let mean = data.iter().sum::<f64>() / data.len() as f64;
        let std =
            (data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / data.len() as f64).sqrt();
        if std == 0.0 {
            return Err(Error::Degenerate("sample is constant".into()));
        }
        std
    };

    let objective = |theta: &[f64]| {
        let (ll, grad) = mean_loglik_and_grad(data, theta);
        (-ll, grad.iter().map(|g| -g).collect::<Vec<f64>>())
    };

    let theta0 = vec![median, sigma0.ln(), 3.0f64.ln()];
    let tol = 1e-8;
    let grad_only = |theta: &[f64]| objective(theta).1;
    let mut result = optim::bfgs(&objective, &theta0, tol, 200);
    let mut iterations = result.iterations;
    if !result.converged {
        let (x, g_norm, polish_iters) = optim::newton_polish(&grad_only, &result.x, 1e-10, 40);
        iterations += polish_iters;
        result.converged = g_norm <= tol;
        result.x = x;
        if !result.converged {
            // Far from the optimum: simplex restart, then the same polish.
            let value_only = |theta: &[f64]| objective(theta).0;
            let nm = optim::nelder_mead(&value_only, &result.x, 0.25, 2000);
            let retry = optim::bfgs(&objective, &nm, tol, 200);
            iterations += retry.iterations;
            let (x, g_norm, polish_iters) = optim::newton_polish(&grad_only, &retry.x, 1e-10, 40);
            iterations += polish_iters;
            result.converged = g_norm <= tol;
            result.x = x;
        }
    }

    let mu = result.x[0];
    let mut sigma = result.x[1].exp();
    let mut beta = result.x[2].exp();
    let mut effectively_normal = false;
    let mut converged = result.converged;
    if beta >= BETA_CAP {
        beta = BETA_CAP;
        effectively_normal = true;
        // The likelihood is flat in beta here; the usual gradient test no
        // longer applies.
        converged = true;
        // Re-estimate the scale at the cap: in the normal limit the MLE
        // scale is the population standard deviation about mu.
        let var = data.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / data.len() as f64;
        sigma = var.sqrt().max(f64::MIN_POSITIVE);
    }
    check_scale_shape(sigma, beta)?;
    let loglik: f64 = data.iter().map(|&x| tls_log_pdf(x, mu, sigma, beta)).sum();

    Ok(TlsParams {
        mu,
        sigma,
        beta,
        loglik,
        converged,
        iterations,
        effectively_normal,
    })
}

/// Fitted normal parameters: sample mean and population (1/n) standard
/// deviation, the normal MLE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalParams {
    pub mu: f64,
    pub sigma: f64,
}

pub fn fit_normal(data: &[f64]) -> Result<NormalParams> {
    if data.len() < 2 {
        return Err(Error::Degenerate(format!(
            "normal fit needs at least 2 observations, got {}",
            data.len()
        )));
    }
    let n = data.len() as f64;
    let mu = data.iter().sum::<f64>() / n;
    let sigma = (data.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n).sqrt();
    if sigma == 0.0 || !sigma.is_finite() {
        return Err(Error::Degenerate("sample is constant".into()));
    }
    Ok(NormalParams { mu, sigma })
}

/// Binning rule for [`empirical_density`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinRule {
    /// 2 IQR n^(-1/3) bin width; falls back to Sturges when the IQR is 0.
    #[default]
    FreedmanDiaconis,
    /// ceil(log2 n) + 1 bins.
    Sturges,
    /// Fixed number of equal-width bins.
    Count(usize),
}

/// Normalized histogram: sum(density * width) = 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub bin_edges: Vec<f64>,
    pub densities: Vec<f64>,
    pub sample_count: usize,
}

impl DensityEstimate {
    pub fn bin_width(&self) -> f64 {
        self.bin_edges[1] - self.bin_edges[0]
    }

    pub fn bin_centers(&self) -> Vec<f64> {
        self.bin_edges
            .windows(2)
            .map(|w| 0.5 * (w[0] + w[1]))
            .collect()
    }
}

/// Equal-width histogram density of a sample.
pub fn empirical_density(data: &[f64], rule: BinRule) -> Result<DensityEstimate> {
    if data.is_empty() {
        return Err(Error::EmptyResult("cannot bin an empty sample".into()));
    }
    if data.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("sample contains non-finite values".into()));
    }
    let mut sorted = data.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
    let n = data.len();

    if min == max {
        // Degenerate support: one unit-width bin centered on the value.
        return Ok(DensityEstimate {
            bin_edges: vec![min - 0.5, min + 0.5],
            densities: vec![1.0],
            sample_count: n,
        });
    }

    let sturges_bins = (n as f64).log2().ceil() as usize + 1;
    let bins = match rule {
        BinRule::FreedmanDiaconis => {
            let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
            let width = 2.0 * iqr / (n as f64).cbrt();
            if width > 0.0 {
                (((max - min) / width).ceil() as usize).clamp(1, 100_000)
            } else {
                sturges_bins
            }
        }
        BinRule::Sturges => sturges_bins,
        BinRule::Count(k) => {
            if k == 0 {
                return Err(Error::Config("bin count must be positive".into()));
            }
            k
        }
    };

    let width = (max - min) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &x in data {
        let idx = (((x - min) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    let densities = counts
        .iter()
        .map(|&c| c as f64 / (n as f64 * width))
        .collect();
    let bin_edges = (0..=bins).map(|i| min + i as f64 * width).collect();
    Ok(DensityEstimate {
        bin_edges,
        densities,
        sample_count: n,
    })
}

/// Which factor of a decomposition to pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VectorSide {
    Left,
    Right,
}

/// Flatten all N^2 entries of the chosen singular-vector matrix.
pub fn collect_entries(d: &SvdResult, side: VectorSide) -> Vec<f64> {
    let m = match side {
        VectorSide::Left => &d.u,
        VectorSide::Right => &d.v,
    };
    m.data().to_vec()
}

/// Seeded sampler of the t location-scale distribution; the reference
/// implementation the fitter is validated against.
pub fn sample_tls(mu: f64, sigma: f64, beta: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    check_scale_shape(sigma, beta)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let t = StudentT::new(beta)
        .map_err(|e| Error::Domain(format!("student t sampler rejected shape {beta}: {e}")))?;
    Ok((0..n).map(|_| mu + sigma * t.sample(&mut rng)).collect())
}

/// Interpolated quantile of pre-sorted data (linear between order
/// statistics).
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 < n {
        sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac
    } else {
        sorted[n - 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;
    use rand_distr::Normal;

    fn params(mu: f64, sigma: f64, beta: f64) -> TlsParams {
        TlsParams::new(mu, sigma, beta).unwrap()
    }

    /// Simpson quadrature of the density over the whole line via the
    /// substitution x = mu + sigma sinh(u): the transformed integrand
    /// decays like exp(-beta u), so one wide grid covers every shape.
    fn integral_full_line(p: &TlsParams, panels: usize) -> f64 {
        let a = -80.0f64;
        let b = 80.0f64;
        let h = (b - a) / panels as f64;
        let g = |u: f64| {
            let x = p.mu + p.sigma * u.sinh();
            tls_pdf(x, p).unwrap() * p.sigma * u.cosh()
        };
        let mut sum = g(a) + g(b);
        for i in 1..panels {
            let u = a + i as f64 * h;
            sum += if i % 2 == 1 { 4.0 } else { 2.0 } * g(u);
        }
        sum * h / 3.0
    }

    /// Simpson quadrature over a finite interval.
    fn integral_range(p: &TlsParams, lo: f64, hi: f64, panels: usize) -> f64 {
        let h = (hi - lo) / panels as f64;
        let g = |x: f64| tls_pdf(x, p).unwrap();
        let mut sum = g(lo) + g(hi);
        for i in 1..panels {
            sum += if i % 2 == 1 { 4.0 } else { 2.0 } * g(lo + i as f64 * h);
        }
        sum * h / 3.0
    }

    #[test]
    fn cauchy_peak_closed_form() {
        // beta = 1 at x = mu is 1 / (pi sigma).
        let p = params(0.3, 0.01, 1.0);
        let expected = 1.0 / (std::f64::consts::PI * 0.01);
        let got = tls_pdf(0.3, &p).unwrap();
        assert!((got - expected).abs() < 1e-9 * expected);
    }

    #[test]
    fn large_shape_approaches_the_normal() {
        let p = params(0.5, 2.0, 1e6);
        for x in [0.5 - 2.0, 0.5 + 2.0] {
            let t = tls_pdf(x, &p).unwrap();
            let n = normal_pdf(x, 0.5, 2.0);
            assert!((t - n).abs() / n < 1e-4);
        }
    }

    #[test]
    fn density_normalizes_for_all_shapes() {
        for beta in [0.5, 1.0, 2.0, 5.0, 20.0, 1e6] {
            let p = params(-0.2, 0.7, beta);
            let integral = integral_full_line(&p, 40_000);
            assert!(
                (integral - 1.0).abs() < 1e-6,
                "integral {integral} for beta {beta}"
            );
        }
    }

    #[test]
    fn truncated_integral_matches_closed_form_tail() {
        // For beta = 2 the standardized CDF is F(z) = 1/2 + z/(2 sqrt(2+z^2)),
        // so the mass inside +-50 sigma is 50/sqrt(2502), not 1.
        let p = params(0.0, 1.0, 2.0);
        let got = integral_range(&p, -50.0, 50.0, 400_000);
        let expected = 50.0 / 2502.0f64.sqrt();
        assert!((got - expected).abs() < 1e-9, "got {got}, want {expected}");
        assert!((got - 1.0).abs() > 1e-4); // visibly short of 1
    }

    #[test]
    fn pdf_is_symmetric_about_mu() {
        let p = params(1.25, 0.3, 2.7);
        for d in [0.0, 0.1, 1.0, 7.5] {
            assert_eq!(
                tls_pdf(1.25 + d, &p).unwrap(),
                tls_pdf(1.25 - d, &p).unwrap()
            );
        }
    }

    #[test]
    fn invalid_scale_or_shape_rejected() {
        assert!(TlsParams::new(0.0, 0.0, 1.0).is_err());
        assert!(TlsParams::new(0.0, -1.0, 1.0).is_err());
        assert!(TlsParams::new(0.0, 1.0, 0.0).is_err());
        assert!(TlsParams::new(0.0, 1.0, -2.0).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let data = sample_tls(0.1, 0.5, 3.0, 2000, 99).unwrap();
        let thetas = [
            [0.05, 0.4f64.ln(), 2.0f64.ln()],
            [0.2, 0.6f64.ln(), 5.0f64.ln()],
            [-0.1, 0.5f64.ln(), 0.8f64.ln()],
        ];
        for theta in &thetas {
            let (_, grad) = mean_loglik_and_grad(&data, theta);
            for k in 0..3 {
                let h = 1e-6;
                let mut tp = theta.to_vec();
                let mut tm = theta.to_vec();
                tp[k] += h;
                tm[k] -= h;
                let (lp, _) = mean_loglik_and_grad(&data, &tp);
                let (lm, _) = mean_loglik_and_grad(&data, &tm);
                let fd = (lp - lm) / (2.0 * h);
                assert!(
                    (grad[k] - fd).abs() < 1e-6 * fd.abs().max(1.0),
                    "component {k}: analytic {} vs fd {fd}",
                    grad[k]
                );
            }
        }
    }

    #[test]
    fn fit_recovers_heavy_tail_parameters() {
        let data = sample_tls(0.0, 0.01, 1.0, 30_000, 12345).unwrap();
        let fit = fit_tls(&data).unwrap();
        assert!(fit.converged, "fit did not converge: {fit:?}");
        assert!(fit.mu.abs() < 1e-3, "mu {}", fit.mu);
        assert!((fit.sigma - 0.01).abs() < 0.05 * 0.01, "sigma {}", fit.sigma);
        assert!((fit.beta - 1.0).abs() < 0.1, "beta {}", fit.beta);

        // Quantile cross-check: for the Cauchy case the quartiles sit at
        // mu +- sigma, so IQR/2 re-estimates the scale.
        let mut sorted = data.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
        assert!((iqr / 2.0 - fit.sigma).abs() < 0.05 * fit.sigma);
    }

    #[test]
    fn gaussian_sample_fits_as_effectively_normal() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let data: Vec<f64> = (0..50_000).map(|_| normal.sample(&mut rng)).collect();
        let fit = fit_tls(&data).unwrap();
        assert!(fit.beta >= 50.0, "beta {}", fit.beta);
        for x in [-3.0f64, -1.5, 0.0, 1.5, 3.0] {
            let t = tls_pdf(x, &fit).unwrap();
            let n = normal_pdf(x, 0.0, 1.0);
            assert!((t - n).abs() / n < 0.02, "pdf mismatch at {x}");
        }
    }

    #[test]
    fn fitted_likelihood_is_a_local_maximum() {
        let data = sample_tls(0.5, 0.2, 2.0, 5_000, 31).unwrap();
        let fit = fit_tls(&data).unwrap();
        let base: f64 = fit.loglik;
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        for _ in 0..100 {
            let d_mu = (rng.random::<f64>() - 0.5) * 0.02;
            let d_sig = 1.0 + (rng.random::<f64>() - 0.5) * 0.05;
            let d_beta = 1.0 + (rng.random::<f64>() - 0.5) * 0.05;
            let perturbed: f64 = data
                .iter()
                .map(|&x| tls_log_pdf(x, fit.mu + d_mu, fit.sigma * d_sig, fit.beta * d_beta))
                .sum();
            assert!(perturbed <= base + 1e-6 * base.abs());
        }
    }

    #[test]
    fn fit_is_affine_equivariant() {
        let data = sample_tls(0.0, 0.05, 1.5, 20_000, 55).unwrap();
        let fit = fit_tls(&data).unwrap();
        let scaled: Vec<f64> = data.iter().map(|x| 10.0 * x).collect();
        let fit10 = fit_tls(&scaled).unwrap();
        assert!((fit10.mu - 10.0 * fit.mu).abs() < 0.01 * fit.sigma * 10.0 + 1e-6);
        assert!((fit10.sigma - 10.0 * fit.sigma).abs() < 0.02 * 10.0 * fit.sigma);
        assert!((fit10.beta - fit.beta).abs() < 0.05 * fit.beta);
    }

    #[test]
    fn small_or_constant_samples_rejected() {
        assert!(fit_tls(&[1.0; 10]).is_err());
        assert!(fit_tls(&[2.5; 100]).is_err());
        assert!(fit_normal(&[3.0]).is_err());
        assert!(fit_normal(&[3.0, 3.0, 3.0]).is_err());
    }

    #[test]
    fn normal_fit_closed_forms() {
        let p = fit_normal(&[-1.0, 1.0]).unwrap();
        assert_eq!(p.mu, 0.0);
        assert_eq!(p.sigma, 1.0);
    }

    #[test]
    fn normal_fit_recovers_moments() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let normal = Normal::new(2.0, 3.0).unwrap();
        let data: Vec<f64> = (0..100_000).map(|_| normal.sample(&mut rng)).collect();
        let p = fit_normal(&data).unwrap();
        assert!((p.mu - 2.0).abs() < 0.03);
        assert!((p.sigma - 3.0).abs() < 0.03);
    }

    #[test]
    fn uniform_histogram_is_flat() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let data: Vec<f64> = (0..100_000).map(|_| rng.random::<f64>()).collect();
        let d = empirical_density(&data, BinRule::Count(10)).unwrap();
        for &density in &d.densities {
            assert!((density - 1.0).abs() < 0.05, "density {density}");
        }
    }

    #[test]
    fn single_point_gets_unit_mass() {
        let d = empirical_density(&[4.25], BinRule::FreedmanDiaconis).unwrap();
        assert_eq!(d.densities, vec![1.0]);
        assert_eq!(d.bin_edges, vec![3.75, 4.75]);
    }

    #[test]
    fn histogram_integrates_to_one() {
        let data = sample_tls(0.0, 1.0, 3.0, 20_000, 21).unwrap();
        for rule in [BinRule::FreedmanDiaconis, BinRule::Sturges, BinRule::Count(37)] {
            let d = empirical_density(&data, rule).unwrap();
            let integral: f64 = d.densities.iter().map(|&den| den * d.bin_width()).sum();
            assert!((integral - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn collect_entries_flattens_the_chosen_side() {
        use crate::matrix::Matrix;
        let d = crate::linalg::svd(&Matrix::identity(2)).unwrap();
        assert_eq!(collect_entries(&d, VectorSide::Left), vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(collect_entries(&d, VectorSide::Right).len(), 4);
    }

    #[test]
    fn pooled_orthogonal_entries_have_haar_moments() {
        use crate::matrix::Matrix;
        // QR of a Gaussian matrix gives a Haar-like orthogonal matrix whose
        // pooled entries have mean ~0 and variance ~1/N.
        let n = 96;
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut cols: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| normal.sample(&mut rng)).collect())
            .collect();
        for j in 0..n {
            for k in 0..j {
                let proj: f64 = cols[j].iter().zip(&cols[k]).map(|(a, b)| a * b).sum();
                let prev = cols[k].clone();
                for (x, p) in cols[j].iter_mut().zip(&prev) {
                    *x -= proj * p;
                }
            }
            let len: f64 = cols[j].iter().map(|x| x * x).sum::<f64>().sqrt();
            for x in &mut cols[j] {
                *x /= len;
            }
        }
        let mut q = Matrix::zeros(n, n);
        for j in 0..n {
            for i in 0..n {
                q[(i, j)] = cols[j][i];
            }
        }
        let d = crate::linalg::svd(&q).unwrap();
        let entries = collect_entries(&d, VectorSide::Left);
        assert_eq!(entries.len(), n * n);
        let mean = entries.iter().sum::<f64>() / entries.len() as f64;
        let var = entries.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / entries.len() as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0 / n as f64).abs() < 0.1 / n as f64, "var {var}");
    }

    #[test]
    fn sampler_is_deterministic_per_seed() {
        let a = sample_tls(0.0, 1.0, 2.0, 100, 5).unwrap();
        let b = sample_tls(0.0, 1.0, 2.0, 100, 5).unwrap();
        let c = sample_tls(0.0, 1.0, 2.0, 100, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

}
