//! Synthetic single-shot readout records.
//!
//! A linear dispersive cavity driven by `ε(t)` responds with
//! `dα/dt = −i(Δ ± χ)α − (κ/2)α + ε(t)`, the sign selecting the qubit state.
//! Shots are built from the two noiseless responses, an optional single
//! downward T1 jump and white complex Gaussian noise, then frequency
//! multiplexed onto a quantized real digitizer stream.

use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quantum::C64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QubitState {
    Ground,
    Excited,
}

impl QubitState {
    pub fn from_bit(bit: usize) -> Self {
        if bit == 0 {
            QubitState::Ground
        } else {
            QubitState::Excited
        }
    }

    /// `(−1)^s`
    pub fn sign(self) -> f64 {
        match self {
            QubitState::Ground => 1.0,
            QubitState::Excited => -1.0,
        }
    }
}

/// Drive envelope `ε(t)` in rad/s (amplitude units of `α` per second).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Envelope {
    Rectangular {
        amplitude: C64,
    },
    /// `sin²` ramp over `rise_time`, flat afterwards.
    RaisedCosine {
        amplitude: C64,
        rise_time: f64,
    },
    /// Piecewise-constant samples with the given spacing; zero past the end.
    Samples {
        values: Vec<C64>,
        period: f64,
    },
}

impl Envelope {
    pub fn at(&self, t: f64) -> C64 {
        match self {
            Envelope::Rectangular { amplitude } => {
                if t >= 0.0 {
                    *amplitude
                } else {
                    C64::default()
                }
            }
            Envelope::RaisedCosine {
                amplitude,
                rise_time,
            } => {
                if t < 0.0 {
                    C64::default()
                } else if t >= *rise_time {
                    *amplitude
                } else {
                    amplitude * (0.5 * PI * t / rise_time).sin().powi(2)
                }
            }
            Envelope::Samples { values, period } => {
                if t < 0.0 {
                    return C64::default();
                }
                let idx = (t / period).floor() as usize;
                values.get(idx).copied().unwrap_or_default()
            }
        }
    }

    fn peak(&self) -> f64 {
        match self {
            Envelope::Rectangular { amplitude } | Envelope::RaisedCosine { amplitude, .. } => {
                amplitude.norm()
            }
            Envelope::Samples { values, .. } => values.iter().map(|v| v.norm()).fold(0.0, f64::max),
        }
    }
}

/// Cavity parameters; all rates in rad/s.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavityParams {
    pub kappa: f64,
    pub chi: f64,
    pub detuning: f64,
    pub envelope: Envelope,
    pub sample_period: f64,
}

impl CavityParams {
    /// κ/2π = χ/2π = 1 MHz, 2 ns sampling, rectangular drive at the
    /// excited-state dressed frequency (Δ = χ) with unit excited steady-state
    /// amplitude. The detuned drive makes `α₀ − α₁` rotate during the rising
    /// edge.
    pub fn desk_default() -> Self {
        let kappa = 2.0 * PI * 1e6;
        let chi = 2.0 * PI * 1e6;
        let amp = 0.5 * kappa;
        Self {
            kappa,
            chi,
            detuning: chi,
            envelope: Envelope::Rectangular {
                amplitude: C64::new(amp, 0.0),
            },
            sample_period: 2e-9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(invalid("kappa", "must be positive"));
        }
        if !(self.sample_period > 0.0 && self.sample_period.is_finite()) {
            return Err(invalid("sample_period", "must be positive"));
        }
        if !self.chi.is_finite() || !self.detuning.is_finite() {
            return Err(Error::NonFinite("cavity frequencies"));
        }
        if !self.envelope.peak().is_finite() {
            return Err(Error::NonFinite("drive envelope"));
        }
        Ok(())
    }

    /// Readout bandwidth `(2χ + κ)/2π` in Hz.
    pub fn bandwidth_hz(&self) -> f64 {
        (2.0 * self.chi.abs() + self.kappa) / (2.0 * PI)
    }

    /// Steady state `ε / (κ/2 + i(Δ ± χ))` for a constant drive `ε`.
    pub fn steady_state(&self, drive: C64, state: QubitState) -> C64 {
        drive / C64::new(0.5 * self.kappa, self.detuning + state.sign() * self.chi)
    }
}

/// Noiseless cavity response sampled every `sample_period`, starting empty
/// at `t = 0`; fixed-step RK4 with the sample period as step.
pub fn cavity_response(
    params: &CavityParams,
    state: QubitState,
    duration: f64,
) -> Result<Vec<C64>> {
    params.validate()?;
    let dt = params.sample_period;
    if !(duration >= dt * (1.0 - 1e-9)) {
        return Err(invalid("duration", "must be at least one sample period"));
    }
    let n = (duration / dt).round() as usize;
    let rate = C64::new(
        -0.5 * params.kappa,
        -(params.detuning + state.sign() * params.chi),
    );
    let f = |t: f64, a: C64| rate * a + params.envelope.at(t);

    let mut out = Vec::with_capacity(n);
    let mut a = C64::default();
    for j in 0..n {
        out.push(a);
        let t = j as f64 * dt;
        let k1 = f(t, a);
        let k2 = f(t + 0.5 * dt, a + k1 * (0.5 * dt));
        let k3 = f(t + 0.5 * dt, a + k2 * (0.5 * dt));
        let k4 = f(t + dt, a + k3 * dt);
        a += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    }
    if out.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite("cavity response"));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    /// Standard deviation per quadrature per sample.
    pub sigma: f64,
    /// Seconds; `f64::INFINITY` disables relaxation.
    pub t1: f64,
}

impl NoiseParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(invalid("sigma", "must be finite and non-negative"));
        }
        if !(self.t1 > 0.0) {
            return Err(invalid("t1", "must be positive"));
        }
        Ok(())
    }
}

/// One shot of one channel: complex baseband samples.
#[derive(Clone, Debug, PartialEq)]
pub struct ShotRecord {
    pub samples: Vec<C64>,
    pub sample_period: f64,
    pub channel_id: usize,
}

impl ShotRecord {
    pub fn new(samples: Vec<C64>, sample_period: f64, channel_id: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("shot record"));
        }
        if samples
            .iter()
            .any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(Error::NonFinite("shot record"));
        }
        if !(sample_period > 0.0) {
            return Err(invalid("sample_period", "must be positive"));
        }
        Ok(Self {
            samples,
            sample_period,
            channel_id,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// RNG for one shot, derived from a run seed and a (stream, shot) pair so
/// that shots can be generated in any order or in parallel.
pub fn shot_rng(seed: u64, stream: u64, shot: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(shot);
    rng
}

/// Number of leading samples that still show the excited response.
///
/// Ground preparations never jump (index 0); excited preparations relax at
/// `τ ~ Exp(mean T1)` and sample `j` is excited iff `j·dt < τ`.
pub fn excited_sample_count<R: Rng + ?Sized>(
    prepared: QubitState,
    t1: f64,
    dt: f64,
    n: usize,
    rng: &mut R,
) -> usize {
    match prepared {
        QubitState::Ground => 0,
        QubitState::Excited if t1.is_infinite() => n,
        QubitState::Excited => {
            let tau: f64 = Exp::new(1.0 / t1)
                .expect("t1 validated positive")
                .sample(rng);
            let k = (tau / dt).ceil();
            if k >= n as f64 {
                n
            } else {
                k as usize
            }
        }
    }
}

/// Draw one noisy shot from the two noiseless traces.
pub fn generate_shot<R: Rng + ?Sized>(
    alpha0: &[C64],
    alpha1: &[C64],
    sample_period: f64,
    prepared: QubitState,
    noise: &NoiseParams,
    channel_id: usize,
    rng: &mut R,
) -> Result<ShotRecord> {
    if alpha0.len() != alpha1.len() {
        return Err(Error::DimensionMismatch {
            expected: alpha0.len(),
            got: alpha1.len(),
        });
    }
    noise.validate()?;
    let n = alpha0.len();
    let k = excited_sample_count(prepared, noise.t1, sample_period, n, rng);
    let mut samples = Vec::with_capacity(n);
    samples.extend_from_slice(&alpha1[..k]);
    samples.extend_from_slice(&alpha0[k..]);
    if noise.sigma > 0.0 {
        for s in &mut samples {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *s += C64::new(re, im) * noise.sigma;
        }
    }
    ShotRecord::new(samples, sample_period, channel_id)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamConfig {
    pub sample_rate: f64,
    pub quantization_bits: u8,
    /// Peak amplitude mapped to the extreme quantizer codes.
    pub full_scale: f64,
    /// Per-channel bandwidth in Hz used for band-overlap checks.
    pub channel_bandwidth: f64,
    /// Reject streams with clipped samples instead of counting them.
    #[serde(default)]
    pub fail_on_clip: bool,
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0) {
            return Err(invalid("sample_rate", "must be positive"));
        }
        if !(8..=16).contains(&self.quantization_bits) {
            return Err(invalid("quantization_bits", "must lie in 8..=16"));
        }
        if !(self.full_scale > 0.0) {
            return Err(invalid("full_scale", "must be positive"));
        }
        if !(self.channel_bandwidth > 0.0) {
            return Err(invalid("channel_bandwidth", "must be positive"));
        }
        Ok(())
    }

    /// Quantizer step.
    pub fn lsb(&self) -> f64 {
        2.0 * self.full_scale / f64::powi(2.0, self.quantization_bits as i32)
    }
}

/// Real digitizer stream carrying several heterodyne channels.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiplexedStream {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
    pub quantization_bits: u8,
    pub full_scale: f64,
    pub if_freqs: Vec<f64>,
    /// Samples that exceeded full scale and were clamped.
    pub clipped: usize,
}

/// Uniform mid-tread quantizer; returns the value and whether it clipped.
pub fn quantize(v: f64, lsb: f64, bits: u8) -> (f64, bool) {
    let top = f64::powi(2.0, bits as i32 - 1);
    let code = (v / lsb).round();
    let clipped = code > top - 1.0 || code < -top;
    (code.clamp(-top, top - 1.0) * lsb, clipped)
}

/// Cached modulation tables for a fixed record geometry.
#[derive(Clone, Debug)]
pub struct Multiplexer {
    cfg: StreamConfig,
    ifs: Vec<f64>,
    upsample: usize,
    record_len: usize,
    phasors: Vec<Vec<C64>>,
}

impl Multiplexer {
    pub fn new(
        ifs: &[f64],
        cfg: &StreamConfig,
        record_len: usize,
        record_period: f64,
    ) -> Result<Self> {
        cfg.validate()?;
        if ifs.is_empty() {
            return Err(Error::Empty("channel IF list"));
        }
        for (a, &fa) in ifs.iter().enumerate() {
            for &fb in &ifs[a + 1..] {
                if (fa - fb).abs() <= cfg.channel_bandwidth {
                    return Err(Error::OverlappingBands { a_hz: fa, b_hz: fb });
                }
            }
            if fa - 0.5 * cfg.channel_bandwidth <= 0.0 {
                return Err(invalid("if_freq", format!("{fa} Hz band reaches DC")));
            }
        }
        let max_if = ifs.iter().cloned().fold(0.0, f64::max);
        if cfg.sample_rate <= 2.0 * (max_if + cfg.channel_bandwidth) {
            return Err(invalid(
                "sample_rate",
                format!(
                    "{} Hz does not resolve IF {} Hz plus bandwidth",
                    cfg.sample_rate, max_if
                ),
            ));
        }
        let ratio = record_period * cfg.sample_rate;
        let upsample = ratio.round() as usize;
        if upsample == 0 || (ratio - upsample as f64).abs() > 1e-6 {
            return Err(invalid(
                "sample_period",
                "record sample period must be an integer multiple of the digitizer period",
            ));
        }
        let len = record_len * upsample;
        let phasors = ifs
            .iter()
            .map(|f| {
                (0..len)
                    .map(|n| C64::from_polar(1.0, 2.0 * PI * f * n as f64 / cfg.sample_rate))
                    .collect()
            })
            .collect();
        Ok(Self {
            cfg: cfg.clone(),
            ifs: ifs.to_vec(),
            upsample,
            record_len,
            phasors,
        })
    }

    pub fn stream_len(&self) -> usize {
        self.record_len * self.upsample
    }

    pub fn upsample(&self) -> usize {
        self.upsample
    }

    pub fn phasors(&self, channel: usize) -> &[C64] {
        &self.phasors[channel]
    }

    /// `Σ_c Re[x_c(t) e^{i2π IF_c t}]` before quantization. Records are
    /// linearly interpolated up to the digitizer rate.
    pub fn analog(&self, records: &[ShotRecord]) -> Result<Vec<f64>> {
        if records.len() != self.ifs.len() {
            return Err(Error::DimensionMismatch {
                expected: self.ifs.len(),
                got: records.len(),
            });
        }
        let len = self.stream_len();
        let mut out = vec![0.0; len];
        for (c, rec) in records.iter().enumerate() {
            if rec.len() != self.record_len {
                return Err(Error::DimensionMismatch {
                    expected: self.record_len,
                    got: rec.len(),
                });
            }
            let ph = &self.phasors[c];
            if self.upsample == 1 {
                for ((o, x), p) in out.iter_mut().zip(&rec.samples).zip(ph) {
                    *o += x.re * p.re - x.im * p.im;
                }
            } else {
                let l = self.upsample as f64;
                for (n, o) in out.iter_mut().enumerate() {
                    let j = n / self.upsample;
                    let frac = (n % self.upsample) as f64 / l;
                    let next = rec.samples.get(j + 1).copied().unwrap_or(rec.samples[j]);
                    let x = rec.samples[j] * (1.0 - frac) + next * frac;
                    *o += (x * ph[n]).re;
                }
            }
        }
        Ok(out)
    }

    pub fn synthesize(&self, records: &[ShotRecord]) -> Result<MultiplexedStream> {
        let analog = self.analog(records)?;
        let lsb = self.cfg.lsb();
        let mut clipped = 0;
        let samples = analog
            .into_iter()
            .map(|v| {
                let (q, c) = quantize(v, lsb, self.cfg.quantization_bits);
                clipped += c as usize;
                q
            })
            .collect();
        if clipped > 0 && self.cfg.fail_on_clip {
            return Err(Error::Clipping {
                count: clipped,
                full_scale: self.cfg.full_scale,
            });
        }
        Ok(MultiplexedStream {
            samples,
            sample_rate: self.cfg.sample_rate,
            quantization_bits: self.cfg.quantization_bits,
            full_scale: self.cfg.full_scale,
            if_freqs: self.ifs.clone(),
            clipped,
        })
    }
}

/// One-off synthesis; see [`Multiplexer`] to amortize the modulation tables.
pub fn synthesize_multiplexed(
    records: &[ShotRecord],
    ifs: &[f64],
    cfg: &StreamConfig,
) -> Result<MultiplexedStream> {
    let first = records.first().ok_or(Error::Empty("records"))?;
    Multiplexer::new(ifs, cfg, first.len(), first.sample_period)?.synthesize(records)
}
