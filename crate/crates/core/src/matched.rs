//! Matched-filter kernels estimated from calibration records.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quantum::C64;
use crate::readout::ShotRecord;

pub const MIN_CALIBRATION_SHOTS: usize = 100;

/// Shots recorded with the qubit prepared in each `σ_z` eigenstate.
#[derive(Clone, Debug)]
pub struct CalibrationSet {
    ground: Vec<ShotRecord>,
    excited: Vec<ShotRecord>,
    len: usize,
}

impl CalibrationSet {
    pub fn new(ground: Vec<ShotRecord>, excited: Vec<ShotRecord>) -> Result<Self> {
        for (name, set) in [("ground", &ground), ("excited", &excited)] {
            if set.len() < MIN_CALIBRATION_SHOTS {
                return Err(invalid(
                    "calibration",
                    format!(
                        "{name} set has {} shots, need at least {MIN_CALIBRATION_SHOTS}",
                        set.len()
                    ),
                ));
            }
        }
        let len = ground[0].len();
        for shot in ground.iter().chain(&excited) {
            if shot.len() != len {
                return Err(Error::DimensionMismatch {
                    expected: len,
                    got: shot.len(),
                });
            }
        }
        Ok(Self {
            ground,
            excited,
            len,
        })
    }

    pub fn ground(&self) -> &[ShotRecord] {
        &self.ground
    }

    pub fn excited(&self) -> &[ShotRecord] {
        &self.excited
    }

    pub fn record_len(&self) -> usize {
        self.len
    }

    pub fn mean_ground(&self) -> Vec<C64> {
        mean_trace(&self.ground, self.len)
    }

    pub fn mean_excited(&self) -> Vec<C64> {
        mean_trace(&self.excited, self.len)
    }
}

fn mean_trace(shots: &[ShotRecord], len: usize) -> Vec<C64> {
    let mut acc = vec![C64::default(); len];
    for s in shots {
        for (a, z) in acc.iter_mut().zip(&s.samples) {
            *a += z;
        }
    }
    let n = shots.len() as f64;
    acc.iter().map(|a| a / n).collect()
}

/// Linear filter `S = scale·Re Σ_{j<window_end} K_j (ψ_j − μ_j) + offset`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub weights: Vec<C64>,
    pub baseline: Vec<C64>,
    pub window_end: usize,
    pub scale: f64,
    pub offset: f64,
}

impl Kernel {
    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.baseline.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                got: self.baseline.len(),
            });
        }
        if self.window_end == 0 || self.window_end > self.weights.len() {
            return Err(invalid("window_end", "must lie in 1..=len"));
        }
        if self
            .weights
            .iter()
            .any(|w| !w.re.is_finite() || !w.im.is_finite())
        {
            return Err(Error::NonFinite("kernel weights"));
        }
        if !(self.scale.is_finite() && self.scale != 0.0 && self.offset.is_finite()) {
            return Err(invalid("scale", "must be finite and non-zero"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Uncalibrated projection over the current window.
    pub fn raw(&self, samples: &[C64]) -> f64 {
        self.weights[..self.window_end]
            .iter()
            .zip(&self.baseline)
            .zip(samples)
            .map(|((k, mu), psi)| (k * (psi - mu)).re)
            .sum()
    }

    pub fn apply(&self, shot: &ShotRecord) -> Result<f64> {
        if shot.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: shot.len(),
            });
        }
        Ok(self.scale * self.raw(&shot.samples) + self.offset)
    }

    pub fn apply_all(&self, shots: &[ShotRecord]) -> Result<Vec<f64>> {
        shots.par_iter().map(|s| self.apply(s)).collect()
    }

    /// Re-anchor scale and offset so the calibration means map to ±1.
    pub fn recalibrated(mut self, mean_ground: &[C64], mean_excited: &[C64]) -> Result<Self> {
        let m0 = self.raw(mean_ground);
        let m1 = self.raw(mean_excited);
        if !((m0 - m1).abs() > 0.0) || !(m0 - m1).is_finite() {
            return Err(invalid(
                "calibration",
                "ground and excited responses are indistinguishable",
            ));
        }
        self.scale = 2.0 / (m0 - m1);
        self.offset = -self.scale * 0.5 * (m0 + m1);
        Ok(self)
    }

    pub fn with_window(mut self, window_end: usize, cal: &CalibrationSet) -> Result<Self> {
        if window_end == 0 || window_end > self.len() {
            return Err(invalid("window_end", "must lie in 1..=len"));
        }
        self.window_end = window_end;
        self.recalibrated(&cal.mean_ground(), &cal.mean_excited())
    }

    /// Same calibration, arbitrary weights: used to compare against
    /// simpler integrators.
    pub fn from_weights(weights: Vec<C64>, cal: &CalibrationSet) -> Result<Self> {
        let g = cal.mean_ground();
        let e = cal.mean_excited();
        if weights.len() != g.len() {
            return Err(Error::DimensionMismatch {
                expected: g.len(),
                got: weights.len(),
            });
        }
        let baseline = g.iter().zip(&e).map(|(a, b)| (a + b) * 0.5).collect();
        Kernel {
            window_end: weights.len(),
            weights,
            baseline,
            scale: 1.0,
            offset: 0.0,
        }
        .recalibrated(&g, &e)
    }
}

/// `K_j = conj(D_j)/ν_j²` with `D` the ground-minus-excited mean response
/// and `ν_j²` the pooled residual variance of both ensembles.
pub fn estimate_kernel(cal: &CalibrationSet) -> Result<Kernel> {
    let g = cal.mean_ground();
    let e = cal.mean_excited();
    let len = cal.record_len();
    let mut nu2 = vec![0.0; len];
    for (shots, mean) in [(cal.ground(), &g), (cal.excited(), &e)] {
        for s in shots {
            for ((v, z), m) in nu2.iter_mut().zip(&s.samples).zip(mean) {
                *v += (z - m).norm_sqr();
            }
        }
    }
    let dof = (cal.ground().len() + cal.excited().len() - 2) as f64;
    for v in &mut nu2 {
        *v /= dof;
    }
    let d: Vec<C64> = g.iter().zip(&e).map(|(a, b)| a - b).collect();
    let degenerate = d
        .iter()
        .zip(&nu2)
        .any(|(dj, &v)| v <= 0.0 && dj.norm() > 0.0);
    let weights = d
        .iter()
        .zip(&nu2)
        .map(|(dj, &v)| {
            if degenerate {
                dj.conj()
            } else if v > 0.0 {
                dj.conj() / v
            } else {
                C64::default()
            }
        })
        .collect();
    let baseline = g.iter().zip(&e).map(|(a, b)| (a + b) * 0.5).collect();
    Kernel {
        weights,
        baseline,
        window_end: len,
        scale: 1.0,
        offset: 0.0,
    }
    .recalibrated(&g, &e)
}

/// Empirical Kolmogorov separation `max_t |CDF₀(t) − CDF₁(t)|`.
pub fn single_shot_fidelity(values0: &[f64], values1: &[f64]) -> f64 {
    if values0.is_empty() || values1.is_empty() {
        return 0.0;
    }
    let mut a = values0.to_vec();
    let mut b = values1.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    ks_sorted(&a, &b)
}

fn ks_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut best: f64 = 0.0;
    while i < a.len() || j < b.len() {
        let t = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < b.len() && b[j] <= t {
            j += 1;
        }
        best = best.max((i as f64 / na - j as f64 / nb).abs());
    }
    best
}

/// Window end (exclusive sample index) maximizing single-shot fidelity.
/// Candidates are every `stride`-th end plus the full record; ties go to
/// the earliest.
pub fn optimize_window(cal: &CalibrationSet, kernel: &Kernel, stride: usize) -> usize {
    let (end, _) = fidelity_curve(cal, kernel, stride).into_iter().fold(
        (kernel.len(), -1.0),
        |best, (e, f)| if f > best.1 { (e, f) } else { best },
    );
    end
}

/// `(window_end, fidelity)` for every candidate end.
pub fn fidelity_curve(cal: &CalibrationSet, kernel: &Kernel, stride: usize) -> Vec<(usize, f64)> {
    let len = kernel.len();
    let stride = stride.max(1);
    let mut ends: Vec<usize> = (stride..=len).step_by(stride).collect();
    if ends.first() != Some(&1) {
        ends.insert(0, 1);
    }
    if ends.last() != Some(&len) {
        ends.push(len);
    }
    let cumulative = |shots: &[ShotRecord]| -> Vec<Vec<f64>> {
        shots
            .par_iter()
            .map(|s| {
                let mut acc = 0.0;
                let mut out = Vec::with_capacity(ends.len());
                let mut next = 0;
                for (j, ((k, mu), psi)) in kernel
                    .weights
                    .iter()
                    .zip(&kernel.baseline)
                    .zip(&s.samples)
                    .enumerate()
                {
                    acc += (k * (psi - mu)).re;
                    if ends[next] == j + 1 {
                        out.push(acc);
                        next += 1;
                        if next == ends.len() {
                            break;
                        }
                    }
                }
                out
            })
            .collect()
    };
    let c0 = cumulative(cal.ground());
    let c1 = cumulative(cal.excited());
    ends.par_iter()
        .enumerate()
        .map(|(i, &e)| {
            let v0: Vec<f64> = c0.iter().map(|c| c[i]).collect();
            let v1: Vec<f64> = c1.iter().map(|c| c[i]).collect();
            (e, single_shot_fidelity(&v0, &v1))
        })
        .collect()
}

/// Kernel estimation followed by window optimization and re-anchoring.
pub fn calibrate(cal: &CalibrationSet, stride: usize) -> Result<(Kernel, f64)> {
    let k = estimate_kernel(cal)?;
    let end = optimize_window(cal, &k, stride);
    let k = k.with_window(end, cal)?;
    let v0 = k.apply_all(cal.ground())?;
    let v1 = k.apply_all(cal.excited())?;
    Ok((k, single_shot_fidelity(&v0, &v1)))
}

/// `(m₀ − m₁)² / (Var₀ + Var₁)` of the uncalibrated filter outputs.
pub fn output_snr(kernel: &Kernel, cal: &CalibrationSet) -> f64 {
    let stats = |shots: &[ShotRecord]| {
        let v: Vec<f64> = shots.iter().map(|s| kernel.raw(&s.samples)).collect();
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, var)
    };
    let (m0, v0) = stats(cal.ground());
    let (m1, v1) = stats(cal.excited());
    (m0 - m1).powi(2) / (v0 + v1)
}

/// Analytic optimum `Σ_j |D_j|²/ν_j²` for white noise with per-quadrature
/// deviation `sigma`.
pub fn optimal_snr(d: &[C64], sigma: f64) -> f64 {
    d.iter().map(|z| z.norm_sqr()).sum::<f64>() / (2.0 * sigma * sigma)
}

/// Per-quadrature noise that gives calibrated output variance `nu2` for a
/// white-noise matched filter over difference trace `d`: `ν² = 4σ²/Σ|D|²`.
pub fn noise_sigma_for_variance(d: &[C64], nu2: f64) -> f64 {
    (nu2 * d.iter().map(|z| z.norm_sqr()).sum::<f64>() / 4.0).sqrt()
}
