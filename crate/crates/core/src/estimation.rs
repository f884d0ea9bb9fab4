//! Observable estimates from calibrated shot values: soft averaging,
//! thresholding with bias correction, analytic variance models and
//! shot-by-shot correlation.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{invalid, Error, Result};
use crate::readout::shot_rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub mean: f64,
    /// Variance of `mean`.
    pub variance: f64,
    pub shots_used: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorMode {
    Soft,
    Threshold,
}

/// The number of shots is the length of the value list passed in.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub mode: EstimatorMode,
    pub threshold: f64,
    pub bias_factor: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            mode: EstimatorMode::Soft,
            threshold: 0.0,
            bias_factor: 1.0,
        }
    }
}

impl EstimatorConfig {
    pub fn threshold(bias_factor: f64) -> Self {
        Self {
            mode: EstimatorMode::Threshold,
            threshold: 0.0,
            bias_factor,
        }
    }
}

pub fn estimate(values: &[f64], cfg: &EstimatorConfig) -> Result<EstimateResult> {
    match cfg.mode {
        EstimatorMode::Soft => soft_average(values),
        EstimatorMode::Threshold => threshold_estimate(values, cfg),
    }
}

pub fn soft_average(values: &[f64]) -> Result<EstimateResult> {
    if values.is_empty() {
        return Err(Error::Empty("shot values"));
    }
    let r = values.len();
    let mean = values.iter().sum::<f64>() / r as f64;
    let variance = if r > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1) as f64 / r as f64
    } else {
        0.0
    };
    Ok(EstimateResult {
        mean,
        variance,
        shots_used: r,
    })
}

/// Values at or above the threshold count as +1.
pub fn raw_threshold_mean(values: &[f64], threshold: f64) -> f64 {
    let above = values.iter().filter(|&&v| v >= threshold).count() as f64;
    (2.0 * above - values.len() as f64) / values.len() as f64
}

pub fn threshold_estimate(values: &[f64], cfg: &EstimatorConfig) -> Result<EstimateResult> {
    if values.is_empty() {
        return Err(Error::Empty("shot values"));
    }
    let f = cfg.bias_factor;
    if !(f > 0.0 && f <= 1.0) {
        return Err(invalid("bias_factor", "must lie in (0, 1]"));
    }
    let r = values.len();
    let raw = raw_threshold_mean(values, cfg.threshold);
    Ok(EstimateResult {
        mean: raw / f,
        variance: (1.0 - raw * raw) / (f * f * r as f64),
        shots_used: r,
    })
}

/// `F(ν) = 2Φ(1/ν) − 1 = erf(1/(ν√2))`: the thresholded mean of a ±1
/// eigenstate with Gaussian noise of deviation ν.
pub fn bias_factor(nu: f64) -> f64 {
    if nu <= 0.0 {
        return 1.0;
    }
    erf(1.0 / (nu * std::f64::consts::SQRT_2))
}

/// `(ν² + 1 − ⟨σ_z⟩²)/R`
pub fn predicted_soft_variance(mean_sz: f64, nu2: f64, r: usize) -> f64 {
    (nu2 + 1.0 - mean_sz * mean_sz) / r as f64
}

/// `1/(R F²) − ⟨σ_z⟩²/R`
pub fn predicted_threshold_variance(mean_sz: f64, nu: f64, r: usize) -> f64 {
    let f = bias_factor(nu);
    (1.0 / (f * f) - mean_sz * mean_sz) / r as f64
}

/// Root of `1/F(ν)² = ν² + 1`, returned as `(SNR = 1/ν², F)`.
pub fn crossover_snr() -> (f64, f64) {
    let g = |nu: f64| {
        let f = bias_factor(nu);
        1.0 / (f * f) - nu * nu - 1.0
    };
    let (mut lo, mut hi) = (0.1, 10.0);
    debug_assert!(g(lo) < 0.0 && g(hi) > 0.0);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let nu = 0.5 * (lo + hi);
    (1.0 / (nu * nu), bias_factor(nu))
}

/// Shot-by-shot products across channels and their soft average.
pub fn correlate<V: AsRef<[f64]>>(channels: &[V]) -> Result<(Vec<f64>, EstimateResult)> {
    let first = channels
        .first()
        .ok_or(Error::Empty("channel list"))?
        .as_ref();
    let r = first.len();
    for (c, ch) in channels.iter().enumerate() {
        if ch.as_ref().len() != r {
            return Err(Error::ShotMisalignment {
                channel: c,
                expected: r,
                got: ch.as_ref().len(),
            });
        }
    }
    let mut products = first.to_vec();
    for ch in &channels[1..] {
        for (p, v) in products.iter_mut().zip(ch.as_ref()) {
            *p *= v;
        }
    }
    let est = soft_average(&products)?;
    Ok((products, est))
}

/// `Π_k(ν_k² + 1) − Π_k⟨σ_z,k⟩²` for independent product-state records.
pub fn goodman_variance(nu2s: &[f64], means: &[f64]) -> Result<f64> {
    if nu2s.len() != means.len() {
        return Err(Error::DimensionMismatch {
            expected: nu2s.len(),
            got: means.len(),
        });
    }
    if nu2s.is_empty() {
        return Err(Error::Empty("channel list"));
    }
    let second: f64 = nu2s.iter().map(|v| v + 1.0).product();
    let mean2: f64 = means.iter().map(|m| m * m).product();
    Ok(second - mean2)
}

/// `N/SNR`, the leading-order correlator variance for eigenstates when
/// `1/SNR ≪ 1`.
pub fn goodman_approx(n: usize, snr: f64) -> f64 {
    n as f64 / snr
}

/// Shot values for a two-outcome measurement: eigenvalue ±1 drawn with
/// mean `mean_sz`, plus Gaussian noise of deviation `nu`.
pub fn sample_mixture<R: Rng + ?Sized>(
    rng: &mut R,
    mean_sz: f64,
    nu: f64,
    shots: usize,
) -> Vec<f64> {
    let p_up = 0.5 * (1.0 + mean_sz);
    (0..shots)
        .map(|_| {
            let s = if rng.random::<f64>() < p_up {
                1.0
            } else {
                -1.0
            };
            s + nu * rng.sample::<f64, _>(StandardNormal)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub snr: f64,
    /// Predicted per-shot variances at `⟨σ_z⟩ = 0`.
    pub soft_var: f64,
    pub thresh_var: f64,
    /// Simulated per-shot variances pooled over experiments.
    pub soft_mc_var: f64,
    pub thresh_mc_var: f64,
    /// Monte-Carlo mean squared error scaled by the shot count.
    pub soft_mse: f64,
    pub thresh_mse: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub snr_min: f64,
    pub snr_max: f64,
    pub points: usize,
    pub shots: usize,
    pub reps: usize,
    pub calibration_shots: usize,
    pub seed: u64,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.snr_min > 0.0 && self.snr_max >= self.snr_min) {
            return Err(invalid("snr_min", "need 0 < snr_min <= snr_max"));
        }
        if self.points == 0 || self.shots == 0 || self.reps == 0 || self.calibration_shots == 0 {
            return Err(invalid(
                "points",
                "points, shots, reps and calibration_shots must be positive",
            ));
        }
        Ok(())
    }

    /// Log-spaced grid.
    pub fn grid(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.snr_min];
        }
        let (a, b) = (self.snr_min.ln(), self.snr_max.ln());
        (0..self.points)
            .map(|i| (a + (b - a) * i as f64 / (self.points - 1) as f64).exp())
            .collect()
    }
}

/// Bias factor measured the way an experiment would: thresholded mean of
/// simulated +1 eigenstate calibration shots.
pub fn calibrated_bias_factor(nu: f64, shots: usize, seed: u64, stream: u64) -> f64 {
    let mut rng = shot_rng(seed, stream, u64::MAX);
    raw_threshold_mean(&sample_mixture(&mut rng, 1.0, nu, shots), 0.0).max(f64::MIN_POSITIVE)
}

/// Both estimators fed the same simulated shots.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloStats {
    /// Mean squared error of the estimate across experiments.
    pub soft_mse: f64,
    pub thresh_mse: f64,
    /// Per-shot variance within each experiment, averaged over experiments.
    pub soft_var: f64,
    pub thresh_var: f64,
}

/// `reps` experiments of `shots` shots at `⟨σ_z⟩ = mean_sz`.
pub fn monte_carlo_stats(
    mean_sz: f64,
    nu: f64,
    bias: f64,
    shots: usize,
    reps: usize,
    seed: u64,
    stream: u64,
) -> MonteCarloStats {
    let cfg = EstimatorConfig::threshold(bias);
    let per_rep: Vec<[f64; 4]> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = shot_rng(seed, stream, rep as u64);
            let v = sample_mixture(&mut rng, mean_sz, nu, shots);
            let soft = soft_average(&v).expect("non-empty");
            let thr = threshold_estimate(&v, &cfg).expect("valid bias");
            [
                (soft.mean - mean_sz).powi(2),
                (thr.mean - mean_sz).powi(2),
                soft.variance * shots as f64,
                thr.variance * shots as f64,
            ]
        })
        .collect();
    // Sequential sum keeps the result independent of thread scheduling.
    let mut acc = [0.0; 4];
    for r in &per_rep {
        for k in 0..4 {
            acc[k] += r[k];
        }
    }
    let n = reps as f64;
    MonteCarloStats {
        soft_mse: acc[0] / n,
        thresh_mse: acc[1] / n,
        soft_var: acc[2] / n,
        thresh_var: acc[3] / n,
    }
}

/// `(soft MSE, threshold MSE)`.
pub fn monte_carlo_mse(
    mean_sz: f64,
    nu: f64,
    bias: f64,
    shots: usize,
    reps: usize,
    seed: u64,
    stream: u64,
) -> (f64, f64) {
    let m = monte_carlo_stats(mean_sz, nu, bias, shots, reps, seed, stream);
    (m.soft_mse, m.thresh_mse)
}

pub fn crossover_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    Ok(cfg
        .grid()
        .into_iter()
        .enumerate()
        .map(|(i, snr)| {
            let nu = 1.0 / snr.sqrt();
            let bias =
                calibrated_bias_factor(nu, cfg.calibration_shots, cfg.seed, 2 * i as u64 + 1);
            let m = monte_carlo_stats(0.0, nu, bias, cfg.shots, cfg.reps, cfg.seed, 2 * i as u64);
            SweepRow {
                snr,
                soft_var: predicted_soft_variance(0.0, nu * nu, 1),
                thresh_var: predicted_threshold_variance(0.0, nu, 1),
                soft_mc_var: m.soft_var,
                thresh_mc_var: m.thresh_var,
                soft_mse: m.soft_mse * cfg.shots as f64,
                thresh_mse: m.thresh_mse * cfg.shots as f64,
            }
        })
        .collect())
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out =
        String::from("snr,soft_var,thresh_var,soft_mc_var,thresh_mc_var,soft_mse,thresh_mse\n");
    for r in rows {
        out.push_str(&format!(
            "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            r.snr,
            r.soft_var,
            r.thresh_var,
            r.soft_mc_var,
            r.thresh_mc_var,
            r.soft_mse,
            r.thresh_mse
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn phi(x: f64) -> f64 {
        // Independent route via the complementary error function.
        0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
    }

    #[test]
    fn soft_average_basics() {
        let r = soft_average(&[1.0; 10]).unwrap();
        assert_eq!((r.mean, r.variance, r.shots_used), (1.0, 0.0, 10));
        assert!(soft_average(&[]).is_err());
    }

    #[test]
    fn soft_average_mixture_variance() {
        let mut rng = shot_rng(1, 0, 0);
        let v = sample_mixture(&mut rng, 0.0, 1.0, 10_000);
        let r = soft_average(&v).unwrap();
        assert!(r.mean.abs() < 3.0 * (2.0f64 / 1e4).sqrt());
        assert!((r.variance / 2e-4 - 1.0).abs() < 0.1);

        let v = sample_mixture(&mut rng, 1.0, 0.5f64.sqrt(), 10_000);
        let r = soft_average(&v).unwrap();
        assert!((r.variance / 0.5e-4 - 1.0).abs() < 0.1);
    }

    #[test]
    fn soft_average_unbiased_across_means() {
        for (i, m) in [-1.0, -0.5, 0.0, 0.5, 1.0].into_iter().enumerate() {
            let means: Vec<f64> = (0..200)
                .into_par_iter()
                .map(|rep| {
                    let mut rng = shot_rng(2, i as u64, rep);
                    soft_average(&sample_mixture(&mut rng, m, 1.0, 10_000))
                        .unwrap()
                        .mean
                })
                .collect();
            let grand = means.iter().sum::<f64>() / 200.0;
            let se = (predicted_soft_variance(m, 1.0, 10_000) / 200.0).sqrt();
            assert!((grand - m).abs() < 4.0 * se, "m={m} grand={grand}");
        }
    }

    #[test]
    fn threshold_bias_and_correction() {
        let nu = 0.842;
        let f = bias_factor(nu);
        assert!((f - 0.765).abs() < 0.001);
        let mut rng = shot_rng(3, 0, 0);
        let v = sample_mixture(&mut rng, 1.0, nu, 100_000);
        let raw = raw_threshold_mean(&v, 0.0);
        assert!((raw - 0.765).abs() < 0.005);
        let r = threshold_estimate(&v, &EstimatorConfig::threshold(0.765)).unwrap();
        assert!((r.mean - 1.0).abs() < 0.01);

        let v = sample_mixture(&mut rng, 0.0, nu, 100_000);
        assert!(raw_threshold_mean(&v, 0.0).abs() < 0.01);
        assert!(threshold_estimate(&v, &EstimatorConfig::threshold(0.0)).is_err());
        assert!((bias_factor(1e-6) - 1.0).abs() < 1e-12);
        assert_eq!(bias_factor(0.0), 1.0);
    }

    #[test]
    fn threshold_bias_matches_tail_formula() {
        for (i, (m, nu)) in [(0.5, 1.0), (-0.3, 0.6), (1.0, 1.5)]
            .into_iter()
            .enumerate()
        {
            let mut rng = shot_rng(4, i as u64, 0);
            let v = sample_mixture(&mut rng, m, nu, 200_000);
            let bias = raw_threshold_mean(&v, 0.0) - m;
            let expected = -2.0 * m * (1.0 - phi(1.0 / nu));
            assert!((bias - expected).abs() < 0.01, "{bias} vs {expected}");
        }
    }

    #[test]
    fn variance_formulas() {
        assert_eq!(predicted_soft_variance(0.0, 1.0, 1), 2.0);
        assert_eq!(predicted_soft_variance(1.0, 0.0, 7), 0.0);
        assert!((predicted_soft_variance(0.0, 0.709, 1) - 1.709).abs() < 1e-12);
        assert!(
            (predicted_threshold_variance(0.0, 0.842, 1) - 1.0 / 0.765f64.powi(2)).abs() < 0.01
        );
        assert!(predicted_threshold_variance(1.0, 1e-6, 3).abs() < 1e-12);
        let oracle = 1.0 / (2.0 * phi(0.5) - 1.0).powi(2);
        assert!((predicted_threshold_variance(0.0, 2.0, 1) - oracle).abs() < 1e-9);
        assert!((oracle - 6.8198).abs() < 1e-3);
    }

    #[test]
    fn crossover_root() {
        let (snr, f) = crossover_snr();
        assert!((snr - 1.41).abs() < 0.01, "{snr}");
        assert!((f - 0.76).abs() < 0.005, "{f}");
        let nu = 1.0 / snr.sqrt();
        let diff =
            predicted_soft_variance(0.0, nu * nu, 1) - predicted_threshold_variance(0.0, nu, 1);
        assert!(diff.abs() < 1e-8);
    }

    #[test]
    fn correlate_basics() {
        let (p, e) = correlate(&[vec![1.0, 1.0, -1.0, -1.0], vec![1.0, -1.0, 1.0, -1.0]]).unwrap();
        assert_eq!(p, vec![1.0, -1.0, -1.0, 1.0]);
        assert_eq!(e.mean, 0.0);
        let v = vec![0.3, -0.2, 1.5];
        let (_, single) = correlate(&[v.clone()]).unwrap();
        assert_eq!(single, soft_average(&v).unwrap());
        match correlate(&[vec![1.0; 3], vec![1.0; 2]]) {
            Err(Error::ShotMisalignment {
                channel: 1,
                expected: 3,
                got: 2,
            }) => {}
            other => panic!("{other:?}"),
        }
        let none: [Vec<f64>; 0] = [];
        assert!(correlate(&none).is_err());
    }

    #[test]
    fn correlated_variance_matches_product_formula() {
        let mut rng = shot_rng(5, 0, 0);
        let a = sample_mixture(&mut rng, 1.0, 0.42f64.sqrt(), 100_000);
        let b = sample_mixture(&mut rng, 1.0, 1.36f64.sqrt(), 100_000);
        let (p, _) = correlate(&[a, b]).unwrap();
        let var = soft_average(&p).unwrap().variance * p.len() as f64;
        assert!((var / 2.35 - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn goodman_values() {
        assert!((goodman_variance(&[0.42, 1.36], &[1.0, 1.0]).unwrap() - 2.3512).abs() < 1e-9);
        assert!((goodman_variance(&[0.77, 1.84], &[1.0, 1.0]).unwrap() - 4.0268).abs() < 1e-9);
        assert_eq!(goodman_variance(&[0.0], &[-1.0]).unwrap(), 0.0);
        assert!(goodman_variance(&[0.1, 0.2], &[1.0]).is_err());
    }

    #[test]
    fn goodman_approximation() {
        assert!((goodman_approx(2, 10.0) - 0.2).abs() < 1e-12);
        assert!((goodman_variance(&[0.1, 0.1], &[1.0, 1.0]).unwrap() - 0.21).abs() < 1e-12);
        assert!((goodman_approx(5, 100.0) - 0.05).abs() < 1e-12);
        assert!(
            (goodman_variance(&[0.01; 5], &[1.0; 5]).unwrap() - (1.01f64.powi(5) - 1.0)).abs()
                < 1e-12
        );
        // Single channel: exact and approximate agree identically.
        for snr in [0.5, 3.0, 40.0] {
            assert!(
                (goodman_variance(&[1.0 / snr], &[1.0]).unwrap() - goodman_approx(1, snr)).abs()
                    < 1e-12
            );
        }
    }

    proptest! {
        #[test]
        fn goodman_is_nonnegative_for_valid_means(
            nus in proptest::collection::vec(0.0f64..3.0, 1..5),
            seed in proptest::collection::vec(-1.0f64..1.0, 5),
        ) {
            let means = &seed[..nus.len()];
            prop_assert!(goodman_variance(&nus, means).unwrap() >= -1e-12);
        }

        #[test]
        fn threshold_variance_never_negative(vals in proptest::collection::vec(-3.0f64..3.0, 1..200), f in 0.05f64..1.0) {
            let r = threshold_estimate(&vals, &EstimatorConfig::threshold(f)).unwrap();
            prop_assert!(r.variance >= 0.0);
        }

        #[test]
        fn bias_factor_is_a_fraction(nu in 0.01f64..20.0) {
            let f = bias_factor(nu);
            prop_assert!(f > 0.0 && f <= 1.0);
            prop_assert!((f - (2.0 * phi(1.0 / nu) - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn regime_ordering_win_rates() {
        // Each repetition estimates both MSEs from 1000 experiments of 100
        // shots; soft must win at low SNR and lose at high SNR.
        for (k, (snr, soft_wins)) in [(0.5, true), (4.0, false)].into_iter().enumerate() {
            let nu = 1.0 / f64::sqrt(snr);
            let bias = calibrated_bias_factor(nu, 200_000, 6, 1000 + k as u64);
            let wins = (0..100)
                .filter(|&rep| {
                    let (s, t) = monte_carlo_mse(0.0, nu, bias, 100, 1000, 6 + rep, k as u64);
                    (s < t) == soft_wins
                })
                .count();
            assert!(wins >= 95, "snr {snr}: {wins}/100");
        }
    }

    #[test]
    fn sweep_output() {
        let cfg = SweepConfig {
            snr_min: 0.5,
            snr_max: 4.0,
            points: 4,
            shots: 100,
            reps: 400,
            calibration_shots: 10_000,
            seed: 7,
        };
        let rows = crossover_sweep(&cfg).unwrap();
        assert_eq!(rows.len(), 4);
        assert!((rows[0].snr - 0.5).abs() < 1e-12 && (rows[3].snr - 4.0).abs() < 1e-9);
        for r in &rows {
            assert!((r.soft_mse / r.soft_var - 1.0).abs() < 0.25);
            assert!((r.thresh_mse / r.thresh_var - 1.0).abs() < 0.25);
            assert!((r.soft_mc_var / r.soft_var - 1.0).abs() < 0.02);
            assert!((r.thresh_mc_var / r.thresh_var - 1.0).abs() < 0.03);
        }
        let csv = sweep_csv(&rows);
        assert!(csv.starts_with(
            "snr,soft_var,thresh_var,soft_mc_var,thresh_mc_var,soft_mse,thresh_mse\n"
        ));
        assert_eq!(csv.lines().count(), 5);
        assert_eq!(crossover_sweep(&cfg).unwrap(), rows);
    }
}
