//! Software channelizer: windowed-sinc FIR design, group-delay compensated
//! decimation and frequency-shifting channel extraction.
//!
//! The two-stage chain mirrors a digitizer front end: a real low-pass that
//! decimates the raw stream right away, then per channel a complex mix to
//! baseband followed by a narrower low-pass and a second decimation.

use std::f64::consts::PI;
use std::ops::{Add, Mul};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quantum::C64;
use crate::readout::{MultiplexedStream, ShotRecord};

/// Approximate Hamming transition width in units of `fs / num_taps`.
pub const HAMMING_TRANSITION: f64 = 3.3;

pub const DEFAULT_TAPS: usize = 127;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Hamming,
    Blackman,
}

impl Window {
    fn coefficient(self, n: usize, len: usize) -> f64 {
        let x = 2.0 * PI * n as f64 / (len - 1) as f64;
        match self {
            Window::Hamming => 0.54 - 0.46 * x.cos(),
            Window::Blackman => 0.42 - 0.5 * x.cos() + 0.08 * (2.0 * x).cos(),
        }
    }
}

/// Linear-phase FIR low-pass with unit DC gain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirFilter {
    pub taps: Vec<f64>,
    pub cutoff: f64,
    pub sample_rate: f64,
    pub window: Window,
}

pub fn design_lowpass(cutoff: f64, sample_rate: f64, num_taps: usize) -> Result<FirFilter> {
    design_lowpass_with(Window::Hamming, cutoff, sample_rate, num_taps)
}

pub fn design_lowpass_with(
    window: Window,
    cutoff: f64,
    sample_rate: f64,
    num_taps: usize,
) -> Result<FirFilter> {
    if !(sample_rate > 0.0) {
        return Err(invalid("sample_rate", "must be positive"));
    }
    if !(cutoff > 0.0 && cutoff < 0.5 * sample_rate) {
        return Err(invalid(
            "cutoff",
            format!("{cutoff} Hz outside (0, {})", 0.5 * sample_rate),
        ));
    }
    if num_taps < 11 || num_taps % 2 == 0 {
        return Err(invalid("num_taps", "must be odd and at least 11"));
    }
    let fc = cutoff / sample_rate;
    let mid = (num_taps - 1) / 2;
    let mut taps: Vec<f64> = (0..num_taps)
        .map(|n| {
            let k = n as f64 - mid as f64;
            let sinc = if n == mid {
                2.0 * fc
            } else {
                (2.0 * PI * fc * k).sin() / (PI * k)
            };
            sinc * window.coefficient(n, num_taps)
        })
        .collect();
    let dc: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= dc;
    }
    // Enforce exact symmetry after normalization.
    for n in 0..mid {
        let avg = 0.5 * (taps[n] + taps[num_taps - 1 - n]);
        taps[n] = avg;
        taps[num_taps - 1 - n] = avg;
    }
    Ok(FirFilter {
        taps,
        cutoff,
        sample_rate,
        window,
    })
}

impl FirFilter {
    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    /// Samples of delay introduced by the symmetric taps.
    pub fn group_delay(&self) -> usize {
        (self.taps.len() - 1) / 2
    }

    pub fn dc_gain(&self) -> f64 {
        self.taps.iter().sum()
    }

    pub fn frequency_response(&self, freq: f64) -> C64 {
        let w = -2.0 * PI * freq / self.sample_rate;
        self.taps
            .iter()
            .enumerate()
            .map(|(k, &h)| C64::from_polar(h, w * k as f64))
            .sum()
    }

    pub fn gain_db(&self, freq: f64) -> f64 {
        20.0 * self.frequency_response(freq).norm().log10()
    }

    /// Worst-case attenuation (positive dB) over `[from, fs/2]`.
    pub fn stopband_attenuation_db(&self, from: f64) -> f64 {
        let nyq = 0.5 * self.sample_rate;
        let steps = 2000;
        (0..=steps)
            .map(|i| from + (nyq - from) * i as f64 / steps as f64)
            .map(|f| -self.gain_db(f))
            .fold(f64::INFINITY, f64::min)
    }

    /// Output samples at each end of a decimated record that see the
    /// zero padding.
    pub fn transient_len(&self, factor: usize) -> usize {
        self.taps.len().div_ceil(2).div_ceil(factor.max(1))
    }
}

/// Anything the FIR can filter: real stream samples or complex baseband.
pub trait Sample:
    Copy + Default + Add<Output = Self> + Mul<f64, Output = Self> + Send + Sync
{
}
impl Sample for f64 {}
impl Sample for C64 {}

/// Zero-padded convolution evaluated only at the kept outputs. Output `m`
/// is centred on input `m·factor`, so the filter delay is compensated.
pub fn decimate<T: Sample>(input: &[T], filter: &FirFilter, factor: usize) -> Result<Vec<T>> {
    if factor < 1 {
        return Err(invalid("factor", "must be at least 1"));
    }
    Ok(decimate_unchecked(input, &filter.taps, factor))
}

fn decimate_unchecked<T: Sample>(input: &[T], taps: &[f64], factor: usize) -> Vec<T> {
    let n = input.len();
    let len = taps.len();
    let delay = (len - 1) / 2;
    let out_len = n.div_ceil(factor);
    let mut out = Vec::with_capacity(out_len);
    for m in 0..out_len {
        // y[m] = Σ_k h[k] x[m·factor + delay − k]
        let centre = m * factor + delay;
        let k_lo = centre.saturating_sub(n - 1);
        let k_hi = len.min(centre + 1);
        let mut acc = T::default();
        for k in k_lo..k_hi {
            acc = acc + input[centre - k] * taps[k];
        }
        out.push(acc);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub if_freq: f64,
    pub bandwidth: f64,
    pub decimation: usize,
}

impl ChannelConfig {
    pub fn validate(&self, input_rate: f64) -> Result<()> {
        if self.decimation < 1 {
            return Err(invalid("decimation", "must be at least 1"));
        }
        if !(self.bandwidth > 0.0) {
            return Err(invalid("bandwidth", "must be positive"));
        }
        let out_nyquist = 0.5 * input_rate / self.decimation as f64;
        if self.bandwidth > out_nyquist {
            return Err(invalid(
                "bandwidth",
                format!(
                    "{} Hz exceeds output Nyquist {out_nyquist} Hz",
                    self.bandwidth
                ),
            ));
        }
        if !(self.if_freq > 0.0 && self.if_freq + 0.5 * self.bandwidth < 0.5 * input_rate) {
            return Err(invalid(
                "if_freq",
                format!("{} Hz outside the stream band", self.if_freq),
            ));
        }
        Ok(())
    }
}

/// `<if_hz>:<bw_hz>:<decim>`
impl FromStr for ChannelConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || {
            invalid(
                "channel",
                format!("expected <if_hz>:<bw_hz>:<decim>, got `{s}`"),
            )
        };
        if parts.len() != 3 {
            return Err(bad());
        }
        Ok(ChannelConfig {
            if_freq: parts[0].trim().parse().map_err(|_| bad())?,
            bandwidth: parts[1].trim().parse().map_err(|_| bad())?,
            decimation: parts[2].trim().parse().map_err(|_| bad())?,
        })
    }
}

fn mix_down(samples: &[f64], rate: f64, if_freq: f64) -> Vec<C64> {
    samples
        .iter()
        .enumerate()
        .map(|(n, &x)| C64::from_polar(x, -2.0 * PI * if_freq * n as f64 / rate))
        .collect()
}

/// Single-stage extraction straight from the digitizer stream: mix by
/// `e^{−i2π·IF·t}`, low-pass, decimate and restore the factor 2 lost to
/// the real-valued carrier.
pub fn extract_channel(
    stream: &MultiplexedStream,
    cfg: &ChannelConfig,
    filter: &FirFilter,
) -> Result<ShotRecord> {
    cfg.validate(stream.sample_rate)?;
    if (filter.sample_rate - stream.sample_rate).abs() > 1e-9 * stream.sample_rate {
        return Err(invalid("filter", "designed for a different sample rate"));
    }
    if filter.cutoff > 0.5 * stream.sample_rate / cfg.decimation as f64 {
        return Err(invalid(
            "filter",
            "cutoff exceeds the decimated Nyquist frequency",
        ));
    }
    let mixed = mix_down(&stream.samples, stream.sample_rate, cfg.if_freq);
    let mut out = decimate(&mixed, filter, cfg.decimation)?;
    for z in &mut out {
        *z *= 2.0;
    }
    ShotRecord::new(out, cfg.decimation as f64 / stream.sample_rate, 0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelizerOptions {
    pub stage1_decimation: usize,
    pub num_taps: usize,
}

impl Default for ChannelizerOptions {
    fn default() -> Self {
        Self {
            stage1_decimation: 5,
            num_taps: DEFAULT_TAPS,
        }
    }
}

/// Two-stage channelizer for a fixed set of channels.
#[derive(Clone, Debug)]
pub struct Channelizer {
    input_rate: f64,
    stage1_decimation: usize,
    stage1: FirFilter,
    channels: Vec<ChannelConfig>,
    stage2: Vec<FirFilter>,
    stream_len: usize,
    phasors: Vec<Vec<C64>>,
}

impl Channelizer {
    /// Stage 1 keeps everything up to the top channel edge plus half a
    /// transition band; stage 2 cuts at one channel bandwidth so the whole
    /// channel sits in the flat passband while neighbours spaced two
    /// bandwidths away fall in the stopband.
    pub fn new(
        input_rate: f64,
        channels: Vec<ChannelConfig>,
        opts: ChannelizerOptions,
    ) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::Empty("channel list"));
        }
        if opts.stage1_decimation < 1 {
            return Err(invalid("stage1_decimation", "must be at least 1"));
        }
        let mid_rate = input_rate / opts.stage1_decimation as f64;
        for ch in &channels {
            ch.validate(mid_rate)?;
        }
        let top = channels
            .iter()
            .map(|c| c.if_freq + 0.5 * c.bandwidth)
            .fold(0.0, f64::max);
        let transition = HAMMING_TRANSITION * input_rate / opts.num_taps as f64;
        let cutoff1 = top + 0.5 * transition;
        if cutoff1 >= 0.5 * mid_rate {
            return Err(invalid(
                "stage1_decimation",
                format!(
                    "stage-1 cutoff {cutoff1} Hz exceeds intermediate Nyquist {} Hz",
                    0.5 * mid_rate
                ),
            ));
        }
        let stage1 = design_lowpass(cutoff1, input_rate, opts.num_taps)?;
        let stage2 = channels
            .iter()
            .map(|c| design_lowpass(c.bandwidth, mid_rate, opts.num_taps))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            input_rate,
            stage1_decimation: opts.stage1_decimation,
            stage1,
            channels,
            stage2,
            stream_len: 0,
            phasors: Vec::new(),
        })
    }

    /// Precompute mixing tables for streams of `len` samples.
    pub fn with_stream_len(mut self, len: usize) -> Self {
        self.phasors = self.mixing_tables(len);
        self.stream_len = len;
        self
    }

    fn mid_rate(&self) -> f64 {
        self.input_rate / self.stage1_decimation as f64
    }

    fn mixing_tables(&self, stream_len: usize) -> Vec<Vec<C64>> {
        let mid_len = stream_len.div_ceil(self.stage1_decimation);
        let rate = self.mid_rate();
        self.channels
            .iter()
            .map(|c| {
                (0..mid_len)
                    .map(|m| C64::from_polar(2.0, -2.0 * PI * c.if_freq * m as f64 / rate))
                    .collect()
            })
            .collect()
    }

    pub fn channels(&self) -> &[ChannelConfig] {
        &self.channels
    }

    pub fn stage1(&self) -> &FirFilter {
        &self.stage1
    }

    pub fn stage2(&self, channel: usize) -> &FirFilter {
        &self.stage2[channel]
    }

    pub fn output_period(&self, channel: usize) -> f64 {
        (self.stage1_decimation * self.channels[channel].decimation) as f64 / self.input_rate
    }

    /// Output samples at each record edge affected by zero padding.
    pub fn transient_len(&self, channel: usize) -> usize {
        let d2 = self.channels[channel].decimation;
        self.stage1.transient_len(self.stage1_decimation * d2)
            + self.stage2[channel].transient_len(d2)
    }

    pub fn process_samples(&self, samples: &[f64]) -> Result<Vec<ShotRecord>> {
        let mid = decimate_unchecked(samples, &self.stage1.taps, self.stage1_decimation);
        let owned;
        let tables = if self.stream_len == samples.len() {
            &self.phasors
        } else {
            owned = self.mixing_tables(samples.len());
            &owned
        };
        self.channels
            .iter()
            .enumerate()
            .map(|(c, cfg)| {
                let mixed: Vec<C64> = mid.iter().zip(&tables[c]).map(|(&x, p)| p * x).collect();
                let out = decimate_unchecked(&mixed, &self.stage2[c].taps, cfg.decimation);
                ShotRecord::new(out, self.output_period(c), c)
            })
            .collect()
    }

    pub fn process(&self, stream: &MultiplexedStream) -> Result<Vec<ShotRecord>> {
        if (stream.sample_rate - self.input_rate).abs() > 1e-9 * self.input_rate {
            return Err(invalid(
                "sample_rate",
                "stream rate does not match the channelizer",
            ));
        }
        self.process_samples(&stream.samples)
    }
}

/// Worst-case stopband attenuation of Hamming designs beyond
/// `multiple × cutoff`, for a cutoff at `cutoff_ratio × fs`.
pub fn attenuation_table(
    tap_counts: &[usize],
    cutoff_ratio: f64,
    multiples: &[f64],
) -> Result<Vec<(usize, Vec<f64>)>> {
    tap_counts
        .iter()
        .map(|&n| {
            let f = design_lowpass(cutoff_ratio, 1.0, n)?;
            let att = multiples
                .iter()
                .map(|m| f.stopband_attenuation_db((m * cutoff_ratio).min(0.5)))
                .collect();
            Ok((n, att))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::readout::{synthesize_multiplexed, StreamConfig};
    use proptest::prelude::*;
    use rustfft::FftPlanner;

    fn tone(freq: f64, rate: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|k| (2.0 * PI * freq * k as f64 / rate).cos())
            .collect()
    }

    #[test]
    fn design_invariants() {
        for taps in [11, 31, 127, 255] {
            let f = design_lowpass(0.1, 1.0, taps).unwrap();
            assert!((f.dc_gain() - 1.0).abs() < 1e-12);
            for k in 0..taps {
                assert_eq!(f.taps[k], f.taps[taps - 1 - k]);
            }
        }
    }

    #[test]
    fn design_rejects_bad_inputs() {
        assert!(design_lowpass(0.6, 1.0, 31).is_err());
        assert!(design_lowpass(0.0, 1.0, 31).is_err());
        assert!(design_lowpass(0.1, 1.0, 32).is_err());
        assert!(design_lowpass(0.1, 1.0, 9).is_err());
    }

    #[test]
    fn dc_passes_unchanged() {
        let f = design_lowpass(3e6, 100e6, 127).unwrap();
        let out = decimate(&vec![0.7; 1000], &f, 1).unwrap();
        let edge = f.group_delay();
        for v in &out[edge..1000 - edge] {
            assert!((v - 0.7).abs() < 1e-6);
        }
    }

    #[test]
    fn passband_and_stopband() {
        let f = design_lowpass(0.1, 1.0, 127).unwrap();
        assert!(f.gain_db(0.01).abs() < 0.5);
        // Ripple over the flat part of the passband.
        for i in 0..=50 {
            assert!(f.gain_db(0.05 * i as f64 / 50.0).abs() < 0.5);
        }
        assert!(f.gain_db(0.3) < -50.0);
        assert!(f.stopband_attenuation_db(0.15) >= 50.0);
        let narrow = design_lowpass(3e6, 100e6, 127).unwrap();
        assert!(narrow.stopband_attenuation_db(4.5e6) >= 50.0);
        assert!(narrow.gain_db(1.5e6).abs() < 0.05);
    }

    #[test]
    fn tone_through_filter_by_simulation() {
        let f = design_lowpass(0.1, 1.0, 127).unwrap();
        let n = 4000;
        let amp = |freq: f64| {
            let out = decimate(&tone(freq, 1.0, n), &f, 1).unwrap();
            let body = &out[200..n - 200];
            (2.0 * body.iter().map(|v| v * v).sum::<f64>() / body.len() as f64).sqrt()
        };
        assert!((20.0 * amp(0.01).log10()).abs() < 0.5);
        assert!(20.0 * amp(0.3).log10() < -50.0);
    }

    #[test]
    fn constant_and_unit_factor() {
        let f = design_lowpass(0.05, 1.0, 31).unwrap();
        let out = decimate(&vec![2.0; 300], &f, 5).unwrap();
        assert_eq!(out.len(), 60);
        for v in &out[4..56] {
            assert!((v - 2.0).abs() < 1e-12);
        }
        let x = tone(0.01, 1.0, 200);
        assert_eq!(decimate(&x, &f, 1).unwrap().len(), 200);
        assert!(decimate(&x, &f, 0).is_err());
    }

    #[test]
    fn in_band_tone_keeps_amplitude_and_frequency() {
        let rate = 500e6;
        let f = design_lowpass(20e6, rate, 127).unwrap();
        let n = 8192;
        let freq = 5e6 * 8192.0 / 8192.0;
        let out = decimate(&tone(freq, rate, n), &f, 4).unwrap();
        let body: Vec<_> = out[64..out.len() - 64].to_vec();
        let m = body.len();
        let mut buf: Vec<rustfft::num_complex::Complex<f64>> = body
            .iter()
            .map(|&v| rustfft::num_complex::Complex::new(v, 0.0))
            .collect();
        FftPlanner::new().plan_fft_forward(m).process(&mut buf);
        let (peak, _) = buf[..m / 2]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm().partial_cmp(&b.1.norm()).unwrap())
            .unwrap();
        let peak_freq = peak as f64 * (rate / 4.0) / m as f64;
        assert!((peak_freq - freq).abs() <= rate / 4.0 / m as f64);
        let amplitude = (2.0 * body.iter().map(|v| v * v).sum::<f64>() / m as f64).sqrt();
        assert!((20.0 * amplitude.log10()).abs() < 0.5);
    }

    proptest! {
        #[test]
        fn impulse_lands_at_decimated_index(k in 0usize..600, factor in 1usize..8) {
            let f = design_lowpass(0.4 / factor as f64, 1.0, 31).unwrap();
            let mut x = vec![0.0; 600];
            x[k] = 1.0;
            let out = decimate(&x, &f, factor).unwrap();
            let (peak, _) = out.iter().enumerate()
                .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap()).unwrap();
            prop_assert!((peak as i64 - (k / factor) as i64).abs() <= 1);
        }

        #[test]
        fn extraction_is_linear(a in -2.0f64..2.0, b in -2.0f64..2.0, seed in 0u64..1000) {
            let n = 400;
            let s1: Vec<f64> = (0..n).map(|k| ((k as u64 * 31 + seed) % 17) as f64 - 8.0).collect();
            let s2: Vec<f64> = (0..n).map(|k| ((k as u64 * 7 + seed * 3) % 13) as f64 - 6.0).collect();
            let mk = |samples: Vec<f64>| MultiplexedStream {
                samples, sample_rate: 500e6, quantization_bits: 16, full_scale: 1.0,
                if_freqs: vec![10e6], clipped: 0,
            };
            let cfg = ChannelConfig { if_freq: 10e6, bandwidth: 3e6, decimation: 20 };
            let f = design_lowpass(3e6, 500e6, 127).unwrap();
            let mix: Vec<f64> = s1.iter().zip(&s2).map(|(x, y)| a * x + b * y).collect();
            let e1 = extract_channel(&mk(s1), &cfg, &f).unwrap();
            let e2 = extract_channel(&mk(s2), &cfg, &f).unwrap();
            let e = extract_channel(&mk(mix), &cfg, &f).unwrap();
            for ((z, z1), z2) in e.samples.iter().zip(&e1.samples).zip(&e2.samples) {
                prop_assert!((z - (z1 * a + z2 * b)).norm() < 1e-9);
            }
        }
    }

    fn smooth_record(n: usize, dt: f64, f1: f64, f2: f64) -> Vec<C64> {
        (0..n)
            .map(|k| {
                let t = k as f64 * dt;
                C64::from_polar(0.5, 2.0 * PI * f1 * t)
                    + C64::from_polar(0.3, -2.0 * PI * f2 * t + 0.4)
            })
            .collect()
    }

    fn stream_cfg() -> StreamConfig {
        StreamConfig {
            sample_rate: 500e6,
            quantization_bits: 16,
            full_scale: 2.0,
            channel_bandwidth: 3e6,
            fail_on_clip: true,
        }
    }

    fn channels(ifs: &[f64]) -> Vec<ChannelConfig> {
        ifs.iter()
            .map(|&f| ChannelConfig {
                if_freq: f,
                bandwidth: 3e6,
                decimation: 4,
            })
            .collect()
    }

    #[test]
    fn single_stage_round_trip() {
        let dt = 2e-9;
        let n = 3000;
        let x = smooth_record(n, dt, 0.3e6, 0.8e6);
        let rec = ShotRecord::new(x.clone(), dt, 0).unwrap();
        let stream = synthesize_multiplexed(&[rec], &[10e6], &stream_cfg()).unwrap();
        let f = design_lowpass(3e6, 500e6, 511).unwrap();
        let cfg = ChannelConfig {
            if_freq: 10e6,
            bandwidth: 3e6,
            decimation: 20,
        };
        let out = extract_channel(&stream, &cfg, &f).unwrap();
        let skip = f.transient_len(20);
        let (mut err, mut pow) = (0.0, 0.0);
        for m in skip..out.len() - skip {
            err += (out.samples[m] - x[m * 20]).norm_sqr();
            pow += x[m * 20].norm_sqr();
        }
        assert!((err / pow).sqrt() < 0.01);
    }

    #[test]
    fn two_stage_round_trip_and_crosstalk() {
        let dt = 2e-9;
        let n = 3000;
        let ifs = [10e6, 16e6];
        let xa = smooth_record(n, dt, 0.3e6, 0.8e6);
        let xb = smooth_record(n, dt, -0.5e6, 0.2e6);
        let ch = Channelizer::new(500e6, channels(&ifs), ChannelizerOptions::default())
            .unwrap()
            .with_stream_len(n);
        let recs = [
            ShotRecord::new(xa.clone(), dt, 0).unwrap(),
            ShotRecord::new(xb.clone(), dt, 1).unwrap(),
        ];
        let stream = synthesize_multiplexed(&recs, &ifs, &stream_cfg()).unwrap();
        let out = ch.process(&stream).unwrap();
        for (c, x) in [&xa, &xb].iter().enumerate() {
            let skip = ch.transient_len(c);
            let (mut err, mut pow) = (0.0, 0.0);
            for m in skip..out[c].len() - skip {
                err += (out[c].samples[m] - x[m * 20]).norm_sqr();
                pow += x[m * 20].norm_sqr();
            }
            let rel = (err / pow).sqrt();
            assert!(rel < 0.01, "channel {c}: {rel}");
        }

        // Only the neighbour active.
        let zeros = ShotRecord::new(vec![C64::default(); n], dt, 0).unwrap();
        let stream =
            synthesize_multiplexed(&[zeros, recs[1].clone()], &ifs, &stream_cfg()).unwrap();
        let out = ch.process(&stream).unwrap();
        let skip = ch.transient_len(0);
        let leak: f64 = out[0].samples[skip..out[0].len() - skip]
            .iter()
            .map(|z| z.norm_sqr())
            .sum();
        let neigh: f64 = out[1].samples[skip..out[1].len() - skip]
            .iter()
            .map(|z| z.norm_sqr())
            .sum();
        assert!(10.0 * (leak / neigh).log10() <= -40.0);
    }

    #[test]
    fn zero_stream_gives_zero_records() {
        let ch = Channelizer::new(
            500e6,
            channels(&[10e6, 20e6]),
            ChannelizerOptions::default(),
        )
        .unwrap();
        let out = ch.process_samples(&vec![0.0; 1000]).unwrap();
        assert_eq!(out.len(), 2);
        for rec in out {
            assert_eq!(rec.len(), 50);
            assert!(rec.samples.iter().all(|z| z.norm() == 0.0));
            assert!((rec.sample_period - 40e-9).abs() < 1e-18);
        }
    }

    #[test]
    fn channel_spec_parsing() {
        let c: ChannelConfig = "10e6:3e6:4".parse().unwrap();
        assert_eq!(
            c,
            ChannelConfig {
                if_freq: 10e6,
                bandwidth: 3e6,
                decimation: 4
            }
        );
        assert!("10e6:3e6".parse::<ChannelConfig>().is_err());
        assert!("a:b:c".parse::<ChannelConfig>().is_err());
    }

    #[test]
    fn channel_band_checks() {
        let bad = ChannelConfig {
            if_freq: 60e6,
            bandwidth: 3e6,
            decimation: 4,
        };
        assert!(Channelizer::new(500e6, vec![bad], ChannelizerOptions::default()).is_err());
        let wide = ChannelConfig {
            if_freq: 10e6,
            bandwidth: 30e6,
            decimation: 4,
        };
        assert!(wide.validate(100e6).is_err());
    }

    #[test]
    fn filter_json_fields() {
        let f = design_lowpass(0.1, 1.0, 11).unwrap();
        let v: serde_json::Value = serde_json::to_value(&f).unwrap();
        assert_eq!(v["window"], "hamming");
        assert_eq!(v["taps"].as_array().unwrap().len(), 11);
        let back: FirFilter = serde_json::from_value(v).unwrap();
        assert_eq!(back, f);
    }
}
