//! Multi-qubit readout chain: cavity traces, relaxation, multiplexing onto
//! one digitizer stream, channelization and matched filtering. Also an
//! equivalent linear-Gaussian model of the same chain for large shot
//! budgets, and the shot samplers used by tomography experiments.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::{ChannelConfig, Channelizer, ChannelizerOptions};
use crate::error::{invalid, Error, Result};
use crate::estimation::correlate;
use crate::matched::{
    estimate_kernel, optimize_window, single_shot_fidelity, CalibrationSet, Kernel,
};
use crate::quantum::{index_tuples, kron_all, zx_gate, CVector, Operator, PureState, C64};
use crate::readout::{
    cavity_response, excited_sample_count, quantize, shot_rng, CavityParams, Envelope,
    MultiplexedStream, Multiplexer, QubitState, ShotRecord, StreamConfig,
};
use crate::tomography::{
    all_correlators, measurement_tomography_with_errors, preparation_states, ConfigurationValues,
    MeasurementOperator, TomographySetup,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QubitReadout {
    pub cavity: CavityParams,
    /// Seconds; `inf` disables relaxation.
    pub t1: f64,
    pub if_freq: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadoutConfig {
    pub qubits: Vec<QubitReadout>,
    /// Record length in seconds.
    pub duration: f64,
    pub stream: StreamConfig,
    /// Amplifier noise per digitizer sample, shared by all channels.
    pub stream_noise: f64,
    /// Second-stage decimation per channel.
    pub decimation: usize,
    pub channelizer: ChannelizerOptions,
    /// Candidate spacing for the integration-window search.
    pub window_stride: usize,
}

impl ReadoutConfig {
    /// Two transmons at IFs of 10 and 20 MHz, 2 µs records at 500 MS/s,
    /// 12-bit digitizer and 25 MS/s channel output.
    pub fn desk_default() -> Self {
        let qubit = |if_freq: f64, t1: f64, level: f64| {
            let mut cavity = CavityParams::desk_default();
            cavity.envelope = scaled_envelope(&cavity.envelope, level);
            QubitReadout {
                cavity,
                t1,
                if_freq,
            }
        };
        Self {
            qubits: vec![qubit(10e6, 8e-6, 0.05), qubit(20e6, 12e-6, 0.02)],
            duration: 2e-6,
            stream: StreamConfig {
                sample_rate: 500e6,
                quantization_bits: 12,
                full_scale: 1.0,
                channel_bandwidth: 3e6,
                fail_on_clip: false,
            },
            stream_noise: 0.15,
            decimation: 4,
            channelizer: ChannelizerOptions::default(),
            window_stride: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.qubits.is_empty() {
            return Err(Error::Empty("qubit list"));
        }
        for q in &self.qubits {
            q.cavity.validate()?;
            if !(q.t1 > 0.0) {
                return Err(invalid("t1", "must be positive"));
            }
        }
        self.stream.validate()?;
        if !(self.stream_noise >= 0.0 && self.stream_noise.is_finite()) {
            return Err(invalid("stream_noise", "must be finite and non-negative"));
        }
        if !(self.duration > 0.0) {
            return Err(invalid("duration", "must be positive"));
        }
        if self.decimation == 0 || self.window_stride == 0 {
            return Err(invalid(
                "decimation",
                "decimation and window_stride must be positive",
            ));
        }
        let dt = self.qubits[0].cavity.sample_period;
        if self
            .qubits
            .iter()
            .any(|q| (q.cavity.sample_period - dt).abs() > 1e-15)
        {
            return Err(invalid(
                "sample_period",
                "all qubits must share the record sample period",
            ));
        }
        Ok(())
    }

    pub fn n_qubits(&self) -> usize {
        self.qubits.len()
    }
}

pub fn scaled_envelope(env: &Envelope, factor: f64) -> Envelope {
    match env {
        Envelope::Rectangular { amplitude } => Envelope::Rectangular {
            amplitude: amplitude * factor,
        },
        Envelope::RaisedCosine {
            amplitude,
            rise_time,
        } => Envelope::RaisedCosine {
            amplitude: amplitude * factor,
            rise_time: *rise_time,
        },
        Envelope::Samples { values, period } => Envelope::Samples {
            values: values.iter().map(|v| v * factor).collect(),
            period: *period,
        },
    }
}

/// Bit of qubit `q` in basis index `b` (qubit 0 most significant).
pub fn qubit_bit(b: usize, q: usize, n: usize) -> usize {
    b >> (n - 1 - q) & 1
}

/// Waveform-level simulator of the full readout chain.
#[derive(Clone, Debug)]
pub struct ReadoutChain {
    cfg: ReadoutConfig,
    traces: Vec<(Vec<C64>, Vec<C64>)>,
    mux: Multiplexer,
    chan: Channelizer,
}

impl ReadoutChain {
    pub fn new(cfg: ReadoutConfig) -> Result<Self> {
        cfg.validate()?;
        let traces = cfg
            .qubits
            .iter()
            .map(|q| {
                Ok((
                    cavity_response(&q.cavity, QubitState::Ground, cfg.duration)?,
                    cavity_response(&q.cavity, QubitState::Excited, cfg.duration)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let dt = cfg.qubits[0].cavity.sample_period;
        let ifs: Vec<f64> = cfg.qubits.iter().map(|q| q.if_freq).collect();
        let mux = Multiplexer::new(&ifs, &cfg.stream, traces[0].0.len(), dt)?;
        let channels = ifs
            .iter()
            .map(|&f| ChannelConfig {
                if_freq: f,
                bandwidth: cfg.stream.channel_bandwidth,
                decimation: cfg.decimation,
            })
            .collect();
        let chan = Channelizer::new(cfg.stream.sample_rate, channels, cfg.channelizer)?
            .with_stream_len(mux.stream_len());
        Ok(Self {
            cfg,
            traces,
            mux,
            chan,
        })
    }

    pub fn config(&self) -> &ReadoutConfig {
        &self.cfg
    }

    pub fn n_qubits(&self) -> usize {
        self.cfg.n_qubits()
    }

    pub fn record_len(&self) -> usize {
        self.traces[0].0.len()
    }

    pub fn record_period(&self) -> f64 {
        self.cfg.qubits[0].cavity.sample_period
    }

    pub fn traces(&self, qubit: usize) -> (&[C64], &[C64]) {
        (&self.traces[qubit].0, &self.traces[qubit].1)
    }

    pub fn channelizer(&self) -> &Channelizer {
        &self.chan
    }

    pub fn multiplexer(&self) -> &Multiplexer {
        &self.mux
    }

    /// Noiseless record of `qubit` with the first `k` samples excited.
    pub fn record(&self, qubit: usize, k: usize) -> ShotRecord {
        let (a0, a1) = &self.traces[qubit];
        let mut s = Vec::with_capacity(a0.len());
        s.extend_from_slice(&a1[..k]);
        s.extend_from_slice(&a0[k..]);
        ShotRecord {
            samples: s,
            sample_period: self.record_period(),
            channel_id: qubit,
        }
    }

    pub fn jump_indices<R: Rng + ?Sized>(&self, bits: usize, rng: &mut R) -> Vec<usize> {
        let n = self.n_qubits();
        (0..n)
            .map(|q| {
                excited_sample_count(
                    QubitState::from_bit(qubit_bit(bits, q, n)),
                    self.cfg.qubits[q].t1,
                    self.record_period(),
                    self.record_len(),
                    rng,
                )
            })
            .collect()
    }

    /// Digitized stream for one shot with qubits in basis state `bits`.
    pub fn stream<R: Rng + ?Sized>(&self, bits: usize, rng: &mut R) -> Result<MultiplexedStream> {
        let ks = self.jump_indices(bits, rng);
        let records: Vec<ShotRecord> = ks
            .iter()
            .enumerate()
            .map(|(q, &k)| self.record(q, k))
            .collect();
        let analog = self.mux.analog(&records)?;
        let lsb = self.cfg.stream.lsb();
        let bits_q = self.cfg.stream.quantization_bits;
        let sigma = self.cfg.stream_noise;
        let mut clipped = 0;
        let samples = analog
            .into_iter()
            .map(|v| {
                let noisy = if sigma > 0.0 {
                    v + sigma * rng.sample::<f64, _>(StandardNormal)
                } else {
                    v
                };
                let (q, c) = quantize(noisy, lsb, bits_q);
                clipped += c as usize;
                q
            })
            .collect();
        if clipped > 0 && self.cfg.stream.fail_on_clip {
            return Err(Error::Clipping {
                count: clipped,
                full_scale: self.cfg.stream.full_scale,
            });
        }
        Ok(MultiplexedStream {
            samples,
            sample_rate: self.cfg.stream.sample_rate,
            quantization_bits: bits_q,
            full_scale: self.cfg.stream.full_scale,
            if_freqs: self.cfg.qubits.iter().map(|q| q.if_freq).collect(),
            clipped,
        })
    }

    /// Channelized baseband records, one per qubit.
    pub fn acquire<R: Rng + ?Sized>(&self, bits: usize, rng: &mut R) -> Result<Vec<ShotRecord>> {
        let s = self.stream(bits, rng)?;
        self.chan.process(&s)
    }

    /// Channel-`q` records with qubit `q` prepared in each eigenstate and
    /// every other qubit in the ground state.
    pub fn calibration_set(&self, qubit: usize, shots: usize, seed: u64) -> Result<CalibrationSet> {
        let n = self.n_qubits();
        let excited_bits = 1 << (n - 1 - qubit);
        let take = |bits: usize, stream: u64| -> Result<Vec<ShotRecord>> {
            (0..shots)
                .into_par_iter()
                .map(|i| {
                    let mut rng = shot_rng(seed, stream, i as u64);
                    Ok(self.acquire(bits, &mut rng)?.swap_remove(qubit))
                })
                .collect()
        };
        CalibrationSet::new(
            take(0, 2 * qubit as u64)?,
            take(excited_bits, 2 * qubit as u64 + 1)?,
        )
    }

    /// Matched-filter kernels with optimized windows for every channel.
    pub fn calibrate(&self, shots: usize, seed: u64) -> Result<Calibration> {
        let mut kernels = Vec::new();
        let mut fidelities = Vec::new();
        for q in 0..self.n_qubits() {
            let cal = self.calibration_set(q, shots, seed)?;
            let k = estimate_kernel(&cal)?;
            let end = optimize_window(&cal, &k, self.cfg.window_stride);
            let k = k.with_window(end, &cal)?;
            let v0 = k.apply_all(cal.ground())?;
            let v1 = k.apply_all(cal.excited())?;
            fidelities.push(single_shot_fidelity(&v0, &v1));
            kernels.push(k);
        }
        Ok(Calibration {
            kernels,
            fidelities,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub kernels: Vec<Kernel>,
    pub fidelities: Vec<f64>,
}

/// Anything that turns a basis outcome into one filtered value per channel.
pub trait ShotSource: Sync {
    fn n_channels(&self) -> usize;
    fn sample(&self, bits: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>>;
}

/// Full waveform simulation followed by the calibrated kernels.
pub struct WaveformSource<'a> {
    pub chain: &'a ReadoutChain,
    pub kernels: &'a [Kernel],
}

impl ShotSource for WaveformSource<'_> {
    fn n_channels(&self) -> usize {
        self.kernels.len()
    }

    fn sample(&self, bits: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let recs = self.chain.acquire(bits, rng)?;
        recs.iter()
            .zip(self.kernels)
            .map(|(r, k)| k.apply(r))
            .collect()
    }
}

/// The readout chain reduced to what the filtered values depend on. Every
/// stage after the analog sum is linear, so each channel's value is a sum
/// of per-qubit responses indexed by the relaxation sample, plus jointly
/// Gaussian noise. Quantization enters as uniform noise of variance
/// `LSB²/12`.
#[derive(Clone, Debug)]
pub struct LinearModel {
    /// `responses[c][q][k]`: raw filter output of channel `c` for qubit
    /// `q`'s noiseless record with `k` excited samples.
    responses: Vec<Vec<Vec<f64>>>,
    baseline: Vec<f64>,
    scale: Vec<f64>,
    offset: Vec<f64>,
    /// Lower Cholesky factor of the raw-output noise covariance.
    noise_factor: Vec<Vec<f64>>,
    t1: Vec<f64>,
    record_period: f64,
    record_len: usize,
}

impl LinearModel {
    pub fn new(chain: &ReadoutChain, kernels: &[Kernel]) -> Result<Self> {
        let n = chain.n_qubits();
        if kernels.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: kernels.len(),
            });
        }
        let len = chain.record_len();
        let zero = |q: usize| ShotRecord {
            samples: vec![C64::default(); len],
            sample_period: chain.record_period(),
            channel_id: q,
        };
        let raw_of = |records: &[ShotRecord]| -> Result<Vec<f64>> {
            let analog = chain.multiplexer().analog(records)?;
            let out = chain.channelizer().process_samples(&analog)?;
            Ok(out
                .iter()
                .zip(kernels)
                .map(|(r, k)| linear_raw(k, &r.samples))
                .collect())
        };
        // responses[q][k][c], transposed afterwards.
        let per_qubit: Vec<Vec<Vec<f64>>> = (0..n)
            .map(|q| {
                (0..=len)
                    .into_par_iter()
                    .map(|k| {
                        let records: Vec<ShotRecord> = (0..n)
                            .map(|p| if p == q { chain.record(q, k) } else { zero(p) })
                            .collect();
                        raw_of(&records)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let responses = (0..n)
            .map(|c| {
                (0..n)
                    .map(|q| per_qubit[q].iter().map(|v| v[c]).collect())
                    .collect()
            })
            .collect();
        // Impulse responses of the stream-to-output functionals.
        let stream_len = chain.multiplexer().stream_len();
        let g: Vec<Vec<f64>> = (0..stream_len)
            .into_par_iter()
            .map(|i| {
                let mut x = vec![0.0; stream_len];
                x[i] = 1.0;
                let out = chain.channelizer().process_samples(&x)?;
                Ok(out
                    .iter()
                    .zip(kernels)
                    .map(|(r, k)| linear_raw(k, &r.samples))
                    .collect())
            })
            .collect::<Result<_>>()?;
        let lsb = chain.config().stream.lsb();
        let white = chain.config().stream_noise.powi(2) + lsb * lsb / 12.0;
        let cov: Vec<Vec<f64>> = (0..n)
            .map(|a| {
                (0..n)
                    .map(|b| white * g.iter().map(|v| v[a] * v[b]).sum::<f64>())
                    .collect()
            })
            .collect();
        Ok(Self {
            responses,
            baseline: kernels.iter().map(|k| linear_raw(k, &k.baseline)).collect(),
            scale: kernels.iter().map(|k| k.scale).collect(),
            offset: kernels.iter().map(|k| k.offset).collect(),
            noise_factor: cholesky(&cov)?,
            t1: chain.config().qubits.iter().map(|q| q.t1).collect(),
            record_period: chain.record_period(),
            record_len: len,
        })
    }

    /// Calibrated-output noise covariance.
    pub fn noise_covariance(&self) -> Vec<Vec<f64>> {
        let n = self.scale.len();
        (0..n)
            .map(|a| {
                (0..n)
                    .map(|b| {
                        let raw: f64 = (0..n)
                            .map(|k| self.noise_factor[a][k] * self.noise_factor[b][k])
                            .sum();
                        raw * self.scale[a] * self.scale[b]
                    })
                    .collect()
            })
            .collect()
    }
}

/// `Re Σ_{j<window} K_j ψ_j` without the baseline.
fn linear_raw(k: &Kernel, samples: &[C64]) -> f64 {
    k.weights[..k.window_end]
        .iter()
        .zip(samples)
        .map(|(w, z)| (w * z).re)
        .sum()
}

fn cholesky(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = a.len();
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| a[i][j]);
    let l = m
        .cholesky()
        .ok_or_else(|| invalid("stream_noise", "noise covariance is not positive definite"))?
        .l();
    Ok((0..n)
        .map(|i| (0..n).map(|j| l[(i, j)]).collect())
        .collect())
}

impl ShotSource for LinearModel {
    fn n_channels(&self) -> usize {
        self.scale.len()
    }

    fn sample(&self, bits: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let n = self.scale.len();
        let ks: Vec<usize> = (0..n)
            .map(|q| {
                excited_sample_count(
                    QubitState::from_bit(qubit_bit(bits, q, n)),
                    self.t1[q],
                    self.record_period,
                    self.record_len,
                    rng,
                )
            })
            .collect();
        let z: Vec<f64> = (0..n)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        Ok((0..n)
            .map(|c| {
                let signal: f64 = (0..n).map(|q| self.responses[c][q][ks[q]]).sum();
                let noise: f64 = (0..=c).map(|k| self.noise_factor[c][k] * z[k]).sum();
                self.scale[c] * (signal + noise - self.baseline[c]) + self.offset[c]
            })
            .collect())
    }
}

/// Filtered values drawn directly from a per-basis-state Gaussian law.
/// Channel means and pairwise covariances can encode any set of single and
/// two-channel measurement operators.
#[derive(Clone, Debug)]
pub struct ValueModel {
    means: Vec<Vec<f64>>,
    factors: Vec<Vec<Vec<f64>>>,
}

impl ValueModel {
    /// `means[b][c]`, `covariances[b][c][c']`.
    pub fn new(means: Vec<Vec<f64>>, covariances: &[Vec<Vec<f64>>]) -> Result<Self> {
        if means.is_empty() || !means.len().is_power_of_two() {
            return Err(Error::NotPowerOfTwo(means.len()));
        }
        let n = means[0].len();
        if covariances.len() != means.len() || means.iter().any(|m| m.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: means.len(),
                got: covariances.len(),
            });
        }
        let factors = covariances
            .iter()
            .map(|c| cholesky(c))
            .collect::<Result<_>>()?;
        Ok(Self { means, factors })
    }

    /// Two channels reading out `m1`, `m2` with joint correlator `m12`
    /// and single-shot variances `variances[b] = [ν₁², ν₂²]`.
    pub fn two_channel(
        m1: &MeasurementOperator,
        m2: &MeasurementOperator,
        m12: &MeasurementOperator,
        variances: &[[f64; 2]],
    ) -> Result<Self> {
        let (e1, e2, e12) = (m1.eigenvalues(), m2.eigenvalues(), m12.eigenvalues());
        if variances.len() != e1.len() {
            return Err(Error::DimensionMismatch {
                expected: e1.len(),
                got: variances.len(),
            });
        }
        let means = (0..e1.len()).map(|b| vec![e1[b], e2[b]]).collect();
        let cov: Vec<Vec<Vec<f64>>> = (0..e1.len())
            .map(|b| {
                let c = e12[b] - e1[b] * e2[b];
                vec![vec![variances[b][0], c], vec![c, variances[b][1]]]
            })
            .collect();
        Self::new(means, &cov)
    }
}

impl ShotSource for ValueModel {
    fn n_channels(&self) -> usize {
        self.means[0].len()
    }

    fn sample(&self, bits: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let l = &self.factors[bits];
        let z: Vec<f64> = (0..l.len())
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        Ok((0..l.len())
            .map(|c| self.means[bits][c] + (0..=c).map(|k| l[c][k] * z[k]).sum::<f64>())
            .collect())
    }
}

/// Draw `shots` outcomes from `probs` and read them out.
pub fn sample_outcomes<S: ShotSource + ?Sized>(
    source: &S,
    probs: &[f64],
    shots: usize,
    seed: u64,
    stream: u64,
) -> Result<Vec<Vec<f64>>> {
    let total: f64 = probs.iter().sum();
    let rows: Vec<Vec<f64>> = (0..shots)
        .into_par_iter()
        .map(|i| {
            let mut rng = shot_rng(seed, stream, i as u64);
            let mut x = rng.random::<f64>() * total;
            let mut b = probs.len() - 1;
            for (j, p) in probs.iter().enumerate() {
                if x < *p {
                    b = j;
                    break;
                }
                x -= p;
            }
            source.sample(b, &mut rng)
        })
        .collect::<Result<_>>()?;
    let n = source.n_channels();
    Ok((0..n)
        .map(|c| rows.iter().map(|r| r[c]).collect())
        .collect())
}

fn basis_probs(rho: &Operator) -> Vec<f64> {
    rho.matrix()
        .diagonal()
        .iter()
        .map(|z| z.re.max(0.0))
        .collect()
}

/// Per-basis-state statistics of every correlator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisStatistics {
    pub correlators: Vec<Vec<usize>>,
    /// `means[b][k]` for basis state `b` and correlator `k`.
    pub means: Vec<Vec<f64>>,
    /// Single-shot variances.
    pub variances: Vec<Vec<f64>>,
    pub shots: usize,
}

impl BasisStatistics {
    /// Calibrated operator for each correlator, with standard errors.
    pub fn operators(&self) -> Result<Vec<MeasurementOperator>> {
        (0..self.correlators.len())
            .map(|k| {
                let m: Vec<f64> = self.means.iter().map(|r| r[k]).collect();
                let v: Vec<f64> = self
                    .variances
                    .iter()
                    .map(|r| r[k] / self.shots as f64)
                    .collect();
                measurement_tomography_with_errors(&m, &v)
            })
            .collect()
    }
}

pub fn basis_statistics<S: ShotSource + ?Sized>(
    source: &S,
    shots: usize,
    seed: u64,
) -> Result<BasisStatistics> {
    let n = source.n_channels();
    let d = 1usize << n;
    let correlators = all_correlators(n);
    let mut means = Vec::new();
    let mut variances = Vec::new();
    for b in 0..d {
        let mut probs = vec![0.0; d];
        probs[b] = 1.0;
        let values = sample_outcomes(source, &probs, shots, seed, 1000 + b as u64)?;
        let (m, v): (Vec<f64>, Vec<f64>) = correlators
            .iter()
            .map(|s| {
                let chans: Vec<&[f64]> = s.iter().map(|&c| values[c].as_slice()).collect();
                let (_, e) = correlate(&chans)?;
                Ok((e.mean, e.variance * shots as f64))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        means.push(m);
        variances.push(v);
    }
    Ok(BasisStatistics {
        correlators,
        means,
        variances,
        shots,
    })
}

/// Adjust the shared stream noise and the per-qubit drive amplitudes until
/// the ground-state filtered variance of each channel matches `targets`.
/// Each pass calibrates kernels exactly as `ReadoutChain::calibrate(shots,
/// seed)` would, so the returned configuration reproduces the targets for
/// that calibration. Ground shots never relax, so their variance is the
/// diagonal of the linear model's noise covariance.
pub fn tune_noise(
    cfg: &ReadoutConfig,
    targets: &[f64],
    shots: usize,
    iterations: usize,
    seed: u64,
) -> Result<ReadoutConfig> {
    if targets.len() != cfg.n_qubits() {
        return Err(Error::DimensionMismatch {
            expected: cfg.n_qubits(),
            got: targets.len(),
        });
    }
    if targets.iter().any(|t| !(*t > 0.0)) {
        return Err(invalid("targets", "variances must be positive"));
    }
    let mut cfg = cfg.clone();
    for _ in 0..iterations {
        let chain = ReadoutChain::new(cfg.clone())?;
        let cal = chain.calibrate(shots, seed)?;
        let cov = LinearModel::new(&chain, &cal.kernels)?.noise_covariance();
        // Output variance scales as noise² / amplitude². Channel 0 sets the
        // shared noise; the others follow through their drive amplitude.
        let noise_factor = (targets[0] / cov[0][0]).sqrt();
        cfg.stream_noise *= noise_factor;
        for q in 1..cfg.n_qubits() {
            let amp = (cov[q][q] / targets[q]).sqrt() * noise_factor;
            cfg.qubits[q].cavity.envelope = scaled_envelope(&cfg.qubits[q].cavity.envelope, amp);
        }
    }
    Ok(cfg)
}

/// `ZX_{−π/2}` applied to `|−i⟩ ⊗ |0⟩`, the input `(I−Y)⊗(I+Z)/4`.
pub fn zx_entangled_state() -> PureState {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let amps = CVector::from_vec(vec![
        C64::new(s, 0.0),
        C64::default(),
        C64::new(0.0, -s),
        C64::default(),
    ]);
    PureState::new(amps)
        .expect("unit norm")
        .apply(&zx_gate(-std::f64::consts::FRAC_PI_2))
}

/// Shots for state tomography of `rho` with the given readout.
pub fn state_tomography_shots<S: ShotSource + ?Sized>(
    source: &S,
    setup: &TomographySetup,
    rho: &Operator,
    shots: usize,
    seed: u64,
) -> Result<Vec<ConfigurationValues>> {
    index_tuples(setup.rotations.len(), setup.n_qubits)
        .into_iter()
        .enumerate()
        .map(|(i, t)| {
            let ops: Vec<&Operator> = t.iter().map(|&k| &setup.rotations[k]).collect();
            let u = kron_all(&ops);
            let probs = basis_probs(&rho.conjugated_by(&u));
            Ok(ConfigurationValues {
                prep: None,
                rotation: t,
                channels: sample_outcomes(source, &probs, shots, seed, i as u64)?,
            })
        })
        .collect()
}

/// Shots for process tomography of the unitary `gate`: every preparation
/// from the setup's rotation set, then every measurement rotation.
pub fn process_tomography_shots<S: ShotSource + ?Sized>(
    source: &S,
    setup: &TomographySetup,
    gate: &Operator,
    shots: usize,
    seed: u64,
) -> Result<Vec<ConfigurationValues>> {
    let preps = preparation_states(&setup.rotations, setup.n_qubits);
    let rots = index_tuples(setup.rotations.len(), setup.n_qubits);
    let mut out = Vec::with_capacity(preps.len() * rots.len());
    for (pi, (pt, rho)) in preps.iter().enumerate() {
        let after = rho.conjugated_by(gate);
        for (ri, t) in rots.iter().enumerate() {
            let ops: Vec<&Operator> = t.iter().map(|&k| &setup.rotations[k]).collect();
            let probs = basis_probs(&after.conjugated_by(&kron_all(&ops)));
            let stream = (pi * rots.len() + ri) as u64;
            out.push(ConfigurationValues {
                prep: Some(pt.clone()),
                rotation: t.clone(),
                channels: sample_outcomes(source, &probs, shots, seed, stream)?,
            });
        }
    }
    Ok(out)
}
