//! Goodness of fit between a reference and a simulated `|m|` series: the
//! Wasserstein-1 distance between their value distributions and the relative
//! discrepancy of their autocorrelation times.

use std::io::Write;

use crate::order_parameter::PolarizationSeries;
use crate::{Error, Result};

/// Exact 1-D Wasserstein-1 distance between two empirical distributions.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("sample"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sample value".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    if a.len() == b.len() {
        let sum: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        return Ok(sum / a.len() as f64);
    }
    // Integral of |F_a - F_b| over the merged breakpoints.
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut x = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (next - x);
        x = next;
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
    }
    Ok(total)
}

/// Sample autocorrelation at lags `0..=max_lag`.
pub fn acf(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    acf_pooled(&[series], max_lag)
}

/// Autocorrelation of several gap-free pieces of one signal: lag products
/// are taken within each piece, the mean and variance over all of them.
pub fn acf_pooled(pieces: &[&[f64]], max_lag: usize) -> Result<Vec<f64>> {
    let n: usize = pieces.iter().map(|p| p.len()).sum();
    if pieces.iter().all(|p| p.len() <= max_lag) {
        return Err(Error::InsufficientData(format!(
            "series of length {n} is too short for max_lag {max_lag}"
        )));
    }
    let mean = pieces.iter().flat_map(|p| p.iter()).sum::<f64>() / n as f64;
    let centered: Vec<Vec<f64>> = pieces
        .iter()
        .map(|p| p.iter().map(|x| x - mean).collect())
        .collect();
    let var: f64 = centered.iter().flatten().map(|x| x * x).sum();
    if var.is_nan() || var <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((0..=max_lag)
        .map(|k| {
            let s: f64 = centered
                .iter()
                .filter(|c| c.len() > k)
                .map(|c| c.iter().zip(&c[k..]).map(|(x, y)| x * y).sum::<f64>())
                .sum();
            s / var
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TauMethod {
    /// First lag at which the ACF drops below `1/e`, interpolated linearly.
    #[default]
    EFold,
    /// `dt · (1/2 + Σ_{k≥1} acf[k])`, summed up to the first non-positive
    /// value.
    Integrated,
}

/// Autocorrelation time from ACF values at lags `0, 1, …` spaced `dt` apart.
pub fn autocorr_time(acf_values: &[f64], dt: f64) -> Result<f64> {
    autocorr_time_with(acf_values, dt, TauMethod::EFold)
}

pub fn autocorr_time_with(acf_values: &[f64], dt: f64, method: TauMethod) -> Result<f64> {
    if acf_values.is_empty() {
        return Err(Error::Empty("autocorrelation"));
    }
    let max_lag = acf_values.len() - 1;
    match method {
        TauMethod::EFold => {
            let level = (-1.0f64).exp();
            for k in 1..acf_values.len() {
                let (a, b) = (acf_values[k - 1], acf_values[k]);
                if b < level {
                    let frac = if a > b { (a - level) / (a - b) } else { 1.0 };
                    return Ok(((k - 1) as f64 + frac.clamp(0.0, 1.0)) * dt);
                }
            }
            Err(Error::NoCrossing { max_lag })
        }
        TauMethod::Integrated => {
            let mut sum = 0.5;
            for &v in &acf_values[1..] {
                if v <= 0.0 {
                    return Ok(sum * dt);
                }
                sum += v;
            }
            Err(Error::NoCrossing { max_lag })
        }
    }
}

pub fn t_rel(tau_real: f64, tau_sim: f64) -> Result<f64> {
    if tau_real.is_nan() || tau_real <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "reference autocorrelation time must be positive, got {tau_real}"
        )));
    }
    Ok((tau_real - tau_sim).abs() / tau_real)
}

/// `min(len / 5, 2000)`.
pub fn default_max_lag(len: usize) -> usize {
    (len / 5).min(2000)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitReport {
    pub w1: f64,
    pub tau_real: f64,
    pub tau_sim: f64,
    pub t_rel: f64,
}

impl FitReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "w1,tau_real,tau_sim,t_rel")?;
        writeln!(w, "{},{},{},{}", self.w1, self.tau_real, self.tau_sim, self.t_rel)?;
        w.flush()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Defaults to [`default_max_lag`] of the shorter series.
    pub max_lag: Option<usize>,
    pub tau: TauMethod,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_lag: None,
            tau: TauMethod::EFold,
        }
    }
}

/// Norm pieces of a series, split at missing frames.
pub fn norm_runs(series: &PolarizationSeries) -> Vec<Vec<f64>> {
    let norms = series.norms();
    series.runs().into_iter().map(|r| norms[r].to_vec()).collect()
}

/// ACF of `|m|`, respecting gaps.
pub fn norm_acf(series: &PolarizationSeries, max_lag: usize) -> Result<Vec<f64>> {
    let runs = norm_runs(series);
    let pieces: Vec<&[f64]> = runs.iter().map(Vec::as_slice).collect();
    acf_pooled(&pieces, max_lag)
}

pub fn fit_report(real: &PolarizationSeries, sim: &PolarizationSeries) -> Result<FitReport> {
    fit_report_with(real, sim, FitOptions::default())
}

pub fn fit_report_with(
    real: &PolarizationSeries,
    sim: &PolarizationSeries,
    options: FitOptions,
) -> Result<FitReport> {
    if real.is_empty() || sim.is_empty() {
        return Err(Error::Empty("series"));
    }
    let w1 = wasserstein1(&real.norms(), &sim.norms())?;
    let max_lag = options
        .max_lag
        .unwrap_or_else(|| default_max_lag(real.len().min(sim.len())));
    let tau_real = autocorr_time_with(&norm_acf(real, max_lag)?, real.dt(), options.tau)?;
    let tau_sim = autocorr_time_with(&norm_acf(sim, max_lag)?, sim.dt(), options.tau)?;
    Ok(FitReport {
        w1,
        tau_real,
        tau_sim,
        t_rel: t_rel(tau_real, tau_sim)?,
    })
}

/// Normalised histogram (a density) of `values` on `bins` equal bins over
/// `[lo, hi]`; values outside are ignored. Returns `(bin centres, density)`.
pub fn histogram(values: &[f64], bins: usize, lo: f64, hi: f64) -> (Vec<f64>, Vec<f64>) {
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        if v >= lo && v <= hi {
            let k = (((v - lo) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
    }
    let total = values.len().max(1) as f64;
    let centres = (0..bins).map(|k| lo + (k as f64 + 0.5) * width).collect();
    let density = counts.iter().map(|&c| c as f64 / (total * width)).collect();
    (centres, density)
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn w1_examples() {
        assert_eq!(wasserstein1(&[0.3, 0.1], &[0.1, 0.3]).unwrap(), 0.0);
        assert_eq!(wasserstein1(&[0.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(wasserstein1(&[0.0, 1.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert!(wasserstein1(&[], &[1.0]).is_err());
    }

    #[test]
    fn w1_unequal_sizes() {
        // {0} vs {0, 1}: half the mass moves distance 1
        assert_abs_diff_eq!(wasserstein1(&[0.0], &[0.0, 1.0]).unwrap(), 0.5, epsilon = 1e-15);
        // {0, 0, 1} vs {0, 1}: CDFs differ by 1/6 on [0, 1)
        assert_abs_diff_eq!(wasserstein1(&[0.0, 0.0, 1.0], &[0.0, 1.0]).unwrap(), 1.0 / 6.0, epsilon = 1e-15);
        // replicating every sample leaves the distribution unchanged
        let a = [0.1, 0.5, 0.7];
        let b = [0.2, 0.3];
        let bb = [0.2, 0.3, 0.2, 0.3, 0.2, 0.3];
        assert_abs_diff_eq!(
            wasserstein1(&a, &b).unwrap(),
            wasserstein1(&[a, a].concat(), &bb).unwrap(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn acf_examples() {
        let alt: Vec<f64> = (0..1000).map(|t| if t % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let r = acf(&alt, 3).unwrap();
        assert_eq!(r[0], 1.0);
        assert_abs_diff_eq!(r[1], -1.0, epsilon = 2e-3);
        assert!(matches!(acf(&[1.0; 10], 2), Err(Error::ZeroVariance)));
        assert!(acf(&[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn white_noise_acf_is_small() {
        let mut rng = stream_rng(3, 0);
        let x: Vec<f64> = (0..100_000).map(|_| rng.sample(StandardNormal)).collect();
        let r = acf(&x, 10).unwrap();
        let band = 3.0 / (x.len() as f64).sqrt();
        assert!(r[1..].iter().all(|v| v.abs() < band), "{r:?}");
    }

    #[test]
    fn tau_examples() {
        let e: Vec<f64> = (0..50).map(|k| (-(k as f64) / 10.0).exp()).collect();
        assert_abs_diff_eq!(autocorr_time(&e, 1.0).unwrap(), 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(autocorr_time(&e, 0.12).unwrap(), 1.2, epsilon = 1e-12);
        let interp = autocorr_time(&[1.0, 0.2, 0.1], 1.0).unwrap();
        assert_abs_diff_eq!(interp, (1.0 - (-1.0f64).exp()) / 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(interp, 0.790, epsilon = 1e-3);
        assert!(matches!(autocorr_time(&e[..5], 1.0), Err(Error::NoCrossing { max_lag: 4 })));
        let msg = autocorr_time(&e[..5], 1.0).unwrap_err().to_string();
        assert!(msg.contains("increase max_lag"), "{msg}");
    }

    #[test]
    fn integrated_tau_of_geometric_acf() {
        // Σ_{k≥1} ρ^k = ρ / (1 - ρ)
        let rho: f64 = 0.9;
        let mut e: Vec<f64> = (0..2000).map(|k| rho.powi(k)).collect();
        e.push(-0.1);
        let tau = autocorr_time_with(&e, 1.0, TauMethod::Integrated).unwrap();
        assert_abs_diff_eq!(tau, 0.5 + rho / (1.0 - rho), epsilon = 1e-9);
    }

    #[test]
    fn t_rel_examples() {
        assert_eq!(t_rel(5.0, 5.0).unwrap(), 0.0);
        assert_eq!(t_rel(10.0, 5.0).unwrap(), 0.5);
        assert_eq!(t_rel(2.0, 3.0).unwrap(), 0.5);
        assert!(t_rel(0.0, 1.0).is_err());
    }

    #[test]
    fn self_comparison_is_zero() {
        let m: Vec<[f64; 2]> = (0..500).map(|t| [0.3 + 0.2 * (t as f64 * 0.05).sin(), 0.0]).collect();
        let s = PolarizationSeries::new(0.1, m).unwrap();
        let r = fit_report(&s, &s).unwrap();
        assert_eq!(r.w1, 0.0);
        assert_eq!(r.t_rel, 0.0);
        assert!(r.tau_real > 0.0);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("w1,tau_real,tau_sim,t_rel"));
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn histogram_integrates_to_one() {
        let v = [0.05, 0.15, 0.15, 0.95, 1.0];
        let (c, d) = histogram(&v, 10, 0.0, 1.0);
        assert_abs_diff_eq!(c[0], 0.05, epsilon = 1e-15);
        assert_abs_diff_eq!(d.iter().sum::<f64>() * 0.1, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d[9], 2.0 / 5.0 / 0.1, epsilon = 1e-12);
    }

    fn brute_force(a: &[f64], b: &[f64]) -> f64 {
        fn perms(rest: &mut Vec<usize>, k: usize, a: &[f64], b: &[f64], best: &mut f64) {
            if k == rest.len() {
                let c: f64 = rest.iter().enumerate().map(|(i, &j)| (a[i] - b[j]).abs()).sum();
                *best = best.min(c);
                return;
            }
            for i in k..rest.len() {
                rest.swap(k, i);
                perms(rest, k + 1, a, b, best);
                rest.swap(k, i);
            }
        }
        let mut best = f64::INFINITY;
        perms(&mut (0..b.len()).collect(), 0, a, b, &mut best);
        best / a.len() as f64
    }

    proptest! {
        #[test]
        fn w1_matches_brute_force(a in prop::collection::vec(0.0..1.0f64, 1..7)) {
            let b: Vec<f64> = a.iter().map(|x| (x * 7.3).fract()).collect();
            prop_assert!((wasserstein1(&a, &b).unwrap() - brute_force(&a, &b)).abs() < 1e-12);
        }

        #[test]
        fn w1_is_a_metric(
            a in prop::collection::vec(0.0..1.0f64, 1..20),
            b in prop::collection::vec(0.0..1.0f64, 1..20),
            c in prop::collection::vec(0.0..1.0f64, 1..20),
        ) {
            let ab = wasserstein1(&a, &b).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - wasserstein1(&b, &a).unwrap()).abs() < 1e-12);
            let ac = wasserstein1(&a, &c).unwrap();
            let cb = wasserstein1(&c, &b).unwrap();
            prop_assert!(ab <= ac + cb + 1e-12);
        }

        #[test]
        fn w1_translation(a in prop::collection::vec(0.0..1.0f64, 1..20), b in prop::collection::vec(0.0..1.0f64, 1..20), c in -1.0..1.0f64) {
            let shift = |v: &[f64]| v.iter().map(|x| x + c).collect::<Vec<_>>();
            let ab = wasserstein1(&a, &b).unwrap();
            prop_assert!((wasserstein1(&shift(&a), &shift(&b)).unwrap() - ab).abs() < 1e-9);
            prop_assert!((wasserstein1(&shift(&a), &b).unwrap() - ab).abs() <= c.abs() + 1e-9);
        }

        #[test]
        fn tau_recovers_exponential_scale(k0 in 1usize..40, dt in 0.01..2.0f64) {
            let tau0 = k0 as f64 * dt;
            let e: Vec<f64> = (0..=4 * k0).map(|k| (-(k as f64) * dt / tau0).exp()).collect();
            prop_assert!((autocorr_time(&e, dt).unwrap() - tau0).abs() < 1e-9 * tau0);
        }
    }
}
