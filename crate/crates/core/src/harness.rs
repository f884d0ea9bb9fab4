//! Scenario runner: versioned JSON configuration, seeded execution and
//! deterministic output files plus a metrics map.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsp::attenuation_table;
use crate::error::{Error, Result};
use crate::estimation::{
    crossover_snr, crossover_sweep, estimate, goodman_variance, soft_average, sweep_csv,
    EstimatorConfig, EstimatorMode, SweepConfig, SweepRow,
};
use crate::pipeline::{
    basis_statistics, process_tomography_shots, sample_outcomes, state_tomography_shots,
    tune_noise, zx_entangled_state, Calibration, LinearModel, ReadoutChain, ReadoutConfig,
    ShotSource, WaveformSource,
};
use crate::quantum::{
    gate_fidelities, state_fidelity, tomography_rotations, zx_gate, PauliTransferMatrix,
};
use crate::readout::shot_rng;
use crate::records::{persist_records, RecordSet};
use crate::tomography::{
    correlator_label, diagonal_labels, pauli_csv, project_to_physical, reconstruct_process,
    reconstruct_state, MeasurementOperator, TomographySetup,
};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    CrossoverSweep,
    CorrVariance,
    Calibrate,
    StateTomo,
    ProcessTomo,
    ChannelizerBench,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::CrossoverSweep,
        Scenario::CorrVariance,
        Scenario::Calibrate,
        Scenario::StateTomo,
        Scenario::ProcessTomo,
        Scenario::ChannelizerBench,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::CrossoverSweep => "crossover-sweep",
            Scenario::CorrVariance => "corr-variance",
            Scenario::Calibrate => "calibrate",
            Scenario::StateTomo => "state-tomo",
            Scenario::ProcessTomo => "process-tomo",
            Scenario::ChannelizerBench => "channelizer-bench",
        }
    }

    fn uses_readout(self) -> bool {
        matches!(
            self,
            Scenario::Calibrate
                | Scenario::StateTomo
                | Scenario::ProcessTomo
                | Scenario::ChannelizerBench
        )
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::UnknownScenario(s.to_string()))
    }
}

/// How filtered values are produced for large experiments.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShotModel {
    /// Every shot simulated as a digitized waveform.
    #[default]
    Waveform,
    /// The exact linear-Gaussian reduction of the same chain.
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseTargets {
    pub enabled: bool,
    /// Ground-state filtered variance per channel.
    pub variances: Vec<f64>,
    /// Tuning passes, each a full kernel calibration.
    pub iterations: usize,
}

impl Default for NoiseTargets {
    fn default() -> Self {
        Self {
            enabled: true,
            variances: vec![0.42, 1.36],
            iterations: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShotCounts {
    /// Per eigenstate and channel for kernel estimation.
    pub calibration: usize,
    /// Per basis state for measurement-operator tomography.
    pub basis: usize,
    /// Per tomography configuration.
    pub per_configuration: usize,
}

impl Default for ShotCounts {
    fn default() -> Self {
        Self {
            calibration: 2000,
            basis: 20_000,
            per_configuration: 50_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSettings {
    pub snr_min: f64,
    pub snr_max: f64,
    pub points: usize,
    pub shots: usize,
    pub reps: usize,
    pub calibration_shots: usize,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            snr_min: 0.25,
            snr_max: 8.0,
            points: 20,
            shots: 10_000,
            reps: 100,
            calibration_shots: 100_000,
        }
    }
}

impl SweepSettings {
    pub fn to_config(&self, seed: u64) -> SweepConfig {
        SweepConfig {
            snr_min: self.snr_min,
            snr_max: self.snr_max,
            points: self.points,
            shots: self.shots,
            reps: self.reps,
            calibration_shots: self.calibration_shots,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrVarianceSettings {
    /// `(ν₁², ν₂²)` per basis state.
    pub table: Vec<[f64; 2]>,
    pub shots: usize,
}

impl Default for CorrVarianceSettings {
    fn default() -> Self {
        Self {
            table: vec![[0.42, 1.36], [0.44, 1.67], [0.85, 1.37], [0.77, 1.84]],
            shots: 1_000_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSettings {
    pub shots: usize,
    pub persist_records: bool,
    pub tap_counts: Vec<usize>,
    /// Stopband edges as multiples of the cutoff.
    pub attenuation_multiples: Vec<f64>,
    pub cutoff_ratio: f64,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            shots: 200,
            persist_records: false,
            tap_counts: vec![31, 63, 127, 255],
            attenuation_multiples: vec![1.5, 2.0, 3.0],
            cutoff_ratio: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub version: u32,
    pub scenario: Scenario,
    pub seed: u64,
    /// Not part of the configuration hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "ReadoutConfig::desk_default")]
    pub readout: ReadoutConfig,
    #[serde(default)]
    pub noise_targets: NoiseTargets,
    #[serde(default)]
    pub shots: ShotCounts,
    #[serde(default)]
    pub shot_model: ShotModel,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub sweep: SweepSettings,
    #[serde(default)]
    pub corr_variance: CorrVarianceSettings,
    #[serde(default)]
    pub bench: BenchSettings,
}

fn config_err(path: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        reason: reason.into(),
    }
}

/// Re-anchor a component error under a configuration field path.
fn at(prefix: &str, e: Error) -> Error {
    match e {
        Error::InvalidParameter { name, reason } => config_err(format!("{prefix}.{name}"), reason),
        Error::Config { path, reason } => config_err(format!("{prefix}.{path}"), reason),
        other => config_err(prefix, other.to_string()),
    }
}

impl ScenarioConfig {
    pub fn new(scenario: Scenario, seed: u64) -> Self {
        Self {
            version: CONFIG_VERSION,
            scenario,
            seed,
            output_dir: None,
            readout: ReadoutConfig::desk_default(),
            noise_targets: NoiseTargets::default(),
            shots: ShotCounts::default(),
            shot_model: ShotModel::default(),
            estimator: EstimatorConfig::default(),
            sweep: SweepSettings::default(),
            corr_variance: CorrVarianceSettings::default(),
            bench: BenchSettings::default(),
        }
    }

    /// Parse and validate. Errors carry the offending field path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_err(
                if path == "." { String::new() } else { path },
                e.into_inner().to_string(),
            )
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(config_err(
                "version",
                format!(
                    "unsupported version {}, expected {CONFIG_VERSION}",
                    self.version
                ),
            ));
        }
        match self.scenario {
            Scenario::CrossoverSweep => self
                .sweep
                .to_config(self.seed)
                .validate()
                .map_err(|e| at("sweep", e))?,
            Scenario::CorrVariance => {
                let cv = &self.corr_variance;
                if cv.table.is_empty() {
                    return Err(config_err("corr_variance.table", "must not be empty"));
                }
                for (i, row) in cv.table.iter().enumerate() {
                    if row.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                        return Err(config_err(
                            format!("corr_variance.table[{i}]"),
                            "variances must be finite and non-negative",
                        ));
                    }
                }
                if cv.shots < 2 {
                    return Err(config_err("corr_variance.shots", "need at least 2 shots"));
                }
            }
            _ => {}
        }
        if self.scenario.uses_readout() {
            self.validate_readout()?;
        }
        if self.estimator.mode == EstimatorMode::Threshold
            && !(self.estimator.bias_factor > 0.0 && self.estimator.bias_factor <= 1.0)
        {
            return Err(config_err("estimator.bias_factor", "must lie in (0, 1]"));
        }
        Ok(())
    }

    fn validate_readout(&self) -> Result<()> {
        for (i, q) in self.readout.qubits.iter().enumerate() {
            q.cavity
                .validate()
                .map_err(|e| at(&format!("readout.qubits[{i}].cavity"), e))?;
            if !(q.t1 > 0.0) {
                return Err(config_err(
                    format!("readout.qubits[{i}].t1"),
                    "must be positive",
                ));
            }
        }
        self.readout.validate().map_err(|e| at("readout", e))?;
        ReadoutChain::new(self.readout.clone()).map_err(|e| at("readout", e))?;
        let n = self.readout.n_qubits();
        if matches!(self.scenario, Scenario::StateTomo | Scenario::ProcessTomo) && n != 2 {
            return Err(config_err(
                "readout.qubits",
                "tomography scenarios need exactly two qubits",
            ));
        }
        let t = &self.noise_targets;
        if t.enabled && self.scenario != Scenario::ChannelizerBench {
            if t.variances.len() != n {
                return Err(config_err(
                    "noise_targets.variances",
                    format!("need one target per qubit ({n})"),
                ));
            }
            if t.variances.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(config_err("noise_targets.variances", "must be positive"));
            }
        }
        if self.shots.calibration < 100 {
            return Err(config_err(
                "shots.calibration",
                "need at least 100 shots per eigenstate",
            ));
        }
        if self.shots.basis < 2 || self.shots.per_configuration < 2 {
            return Err(config_err(
                "shots",
                "basis and per_configuration need at least 2 shots",
            ));
        }
        if self.scenario == Scenario::ChannelizerBench {
            let b = &self.bench;
            if b.shots == 0 {
                return Err(config_err("bench.shots", "must be positive"));
            }
            if let Some(n) = b.tap_counts.iter().find(|n| **n < 11 || **n % 2 == 0) {
                return Err(config_err(
                    "bench.tap_counts",
                    format!("{n} taps: need an odd count of at least 11"),
                ));
            }
            if !(b.cutoff_ratio > 0.0 && b.cutoff_ratio < 0.5) {
                return Err(config_err("bench.cutoff_ratio", "must lie in (0, 0.5)"));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON with the output directory removed.
    pub fn config_hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(m) = v.as_object_mut() {
            m.remove("output_dir");
        }
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub scenario: Scenario,
    pub wall_time_s: f64,
    pub config_hash: String,
    pub outputs: Vec<PathBuf>,
    pub metrics: BTreeMap<String, f64>,
    /// Wall-clock derived figures; never written to the output tree.
    pub timing: BTreeMap<String, f64>,
}

impl RunReport {
    /// Two aligned columns, one metric per line.
    pub fn table(&self) -> String {
        metrics_table(&self.metrics)
    }
}

pub fn metrics_table(metrics: &BTreeMap<String, f64>) -> String {
    let w = metrics.keys().map(|k| k.len()).max().unwrap_or(0);
    metrics
        .iter()
        .map(|(k, v)| format!("{k:<w$}  {v:>14.6}\n"))
        .collect()
}

struct Outputs {
    dir: PathBuf,
    files: Vec<PathBuf>,
    metrics: BTreeMap<String, f64>,
    timing: BTreeMap<String, f64>,
}

impl Outputs {
    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let p = self.dir.join(name);
        fs::write(&p, contents)?;
        self.files.push(p);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, s)
    }

    fn metric(&mut self, name: impl Into<String>, v: f64) {
        self.metrics.insert(name.into(), v);
    }
}

/// Independent stream seed for a pipeline stage.
fn stage_seed(seed: u64, stage: u64) -> u64 {
    seed ^ stage.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunReport> {
    let start = Instant::now();
    cfg.validate()?;
    let dir = cfg
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir)?;
    let mut out = Outputs {
        dir,
        files: Vec::new(),
        metrics: BTreeMap::new(),
        timing: BTreeMap::new(),
    };
    let resolved = ScenarioConfig {
        output_dir: None,
        ..cfg.clone()
    };
    out.write("config.json", resolved.to_json() + "\n")?;
    match cfg.scenario {
        Scenario::CrossoverSweep => run_crossover_sweep(cfg, &mut out)?,
        Scenario::CorrVariance => run_corr_variance(cfg, &mut out)?,
        Scenario::Calibrate => run_calibrate(cfg, &mut out)?,
        Scenario::StateTomo => run_state_tomo(cfg, &mut out)?,
        Scenario::ProcessTomo => run_process_tomo(cfg, &mut out)?,
        Scenario::ChannelizerBench => run_channelizer_bench(cfg, &mut out)?,
    }
    let hash = cfg.config_hash();
    let summary = serde_json::json!({
        "scenario": cfg.scenario,
        "config_hash": hash,
        "metrics": out.metrics,
    });
    out.json("metrics.json", &summary)?;
    let table = metrics_table(&out.metrics);
    out.write("metrics.txt", table)?;
    Ok(RunReport {
        scenario: cfg.scenario,
        wall_time_s: start.elapsed().as_secs_f64(),
        config_hash: hash,
        outputs: out.files,
        metrics: out.metrics,
        timing: out.timing,
    })
}

/// SNR where `a − b` changes sign, interpolated in log SNR.
pub fn crossing(snr: &[f64], a: &[f64], b: &[f64]) -> Option<f64> {
    (1..snr.len()).find_map(|i| {
        let (d0, d1) = (a[i - 1] - b[i - 1], a[i] - b[i]);
        if d0 == 0.0 {
            return Some(snr[i - 1]);
        }
        if d0.signum() != d1.signum() {
            let t = d0 / (d0 - d1);
            let (l0, l1) = (snr[i - 1].ln(), snr[i].ln());
            return Some((l0 + t * (l1 - l0)).exp());
        }
        None
    })
}

fn run_crossover_sweep(cfg: &ScenarioConfig, out: &mut Outputs) -> Result<()> {
    let rows: Vec<SweepRow> = crossover_sweep(&cfg.sweep.to_config(cfg.seed))?;
    out.write("sweep.csv", sweep_csv(&rows))?;
    let (snr, f) = crossover_snr();
    out.metric("crossover_snr", snr);
    out.metric("crossover_fidelity", f);
    let x: Vec<f64> = rows.iter().map(|r| r.snr).collect();
    let col = |g: fn(&SweepRow) -> f64| rows.iter().map(g).collect::<Vec<f64>>();
    let nan = f64::NAN;
    out.metric(
        "predicted_curve_crossing_snr",
        crossing(&x, &col(|r| r.soft_var), &col(|r| r.thresh_var)).unwrap_or(nan),
    );
    out.metric(
        "monte_carlo_crossing_snr",
        crossing(&x, &col(|r| r.soft_mc_var), &col(|r| r.thresh_mc_var)).unwrap_or(nan),
    );
    out.metric(
        "mse_crossing_snr",
        crossing(&x, &col(|r| r.soft_mse), &col(|r| r.thresh_mse)).unwrap_or(nan),
    );
    let rel = |m: f64, p: f64| (m / p - 1.0).abs();
    out.metric(
        "max_soft_rel_err",
        rows.iter()
            .map(|r| rel(r.soft_mc_var, r.soft_var))
            .fold(0.0, f64::max),
    );
    out.metric(
        "max_thresh_rel_err",
        rows.iter()
            .map(|r| rel(r.thresh_mc_var, r.thresh_var))
            .fold(0.0, f64::max),
    );
    out.metric(
        "max_soft_mse_rel_err",
        rows.iter()
            .map(|r| rel(r.soft_mse, r.soft_var))
            .fold(0.0, f64::max),
    );
    out.metric(
        "max_thresh_mse_rel_err",
        rows.iter()
            .map(|r| rel(r.thresh_mse, r.thresh_var))
            .fold(0.0, f64::max),
    );
    Ok(())
}

fn basis_label(i: usize, len: usize) -> String {
    if len.is_power_of_two() && len > 1 {
        format!("{i:0w$b}", w = len.trailing_zeros() as usize)
    } else {
        i.to_string()
    }
}

/// Sample variance of the product of two independent unit-mean Gaussian
/// channels.
pub fn empirical_product_variance(nu2: [f64; 2], shots: usize, seed: u64, stream: u64) -> f64 {
    let mut rng = shot_rng(seed, stream, 0);
    let (s1, s2) = (nu2[0].sqrt(), nu2[1].sqrt());
    let v: Vec<f64> = (0..shots)
        .map(|_| {
            let a = 1.0 + s1 * rng.sample::<f64, _>(StandardNormal);
            let b = 1.0 + s2 * rng.sample::<f64, _>(StandardNormal);
            a * b
        })
        .collect();
    soft_average(&v)
        .map(|e| e.variance * shots as f64)
        .unwrap_or(f64::NAN)
}

fn run_corr_variance(cfg: &ScenarioConfig, out: &mut Outputs) -> Result<()> {
    let cv = &cfg.corr_variance;
    let mut csv = String::from("state,nu1_sq,nu2_sq,nu_corr_sq,empirical,rel_err\n");
    let mut worst: f64 = 0.0;
    for (i, row) in cv.table.iter().enumerate() {
        let label = basis_label(i, cv.table.len());
        let exact = goodman_variance(row, &[1.0, 1.0])?;
        let emp = empirical_product_variance(*row, cv.shots, cfg.seed, i as u64);
        let rel = (emp / exact - 1.0).abs();
        worst = worst.max(rel);
        csv.push_str(&format!(
            "{label},{},{},{exact:.6},{emp:.6},{rel:.6}\n",
            row[0], row[1]
        ));
        out.metric(format!("nu_corr_sq_{label}"), exact);
        out.metric(format!("empirical_nu_corr_sq_{label}"), emp);
    }
    out.metric("max_rel_err", worst);
    out.write("corr_variance.csv", csv)
}

/// Tuned, calibrated readout chain.
pub struct PreparedReadout {
    pub chain: ReadoutChain,
    pub calibration: Calibration,
}

impl PreparedReadout {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self> {
        let t = &cfg.noise_targets;
        let readout = if t.enabled {
            tune_noise(
                &cfg.readout,
                &t.variances,
                cfg.shots.calibration,
                t.iterations,
                stage_seed(cfg.seed, 2),
            )?
        } else {
            cfg.readout.clone()
        };
        let chain = ReadoutChain::new(readout)?;
        let calibration = chain.calibrate(cfg.shots.calibration, stage_seed(cfg.seed, 2))?;
        Ok(Self { chain, calibration })
    }

    /// Run `f` against the configured shot model.
    pub fn with_source<T>(
        &self,
        model: ShotModel,
        f: impl FnOnce(&dyn ShotSource) -> Result<T>,
    ) -> Result<T> {
        match model {
            ShotModel::Waveform => f(&WaveformSource {
                chain: &self.chain,
                kernels: &self.calibration.kernels,
            }),
            ShotModel::Linear => f(&LinearModel::new(&self.chain, &self.calibration.kernels)?),
        }
    }
}

fn operators_csv(ops: &[MeasurementOperator], correlators: &[Vec<usize>]) -> String {
    let mut s = String::from("operator,pauli,value,std_error\n");
    for (op, c) in ops.iter().zip(correlators) {
        let labels = diagonal_labels(op.n_qubits);
        for (i, l) in labels.iter().enumerate() {
            let se = op.standard_errors.as_ref().map_or(f64::NAN, |e| e[i]);
            s.push_str(&format!(
                "{},{l},{:.8},{:.8}\n",
                correlator_label(c),
                op.pauli_coefficients[i],
                se
            ));
        }
    }
    s
}

/// Calibrated operators from basis-state preparations; writes the
/// per-state statistics and operator table.
fn measured_operators(
    cfg: &ScenarioConfig,
    prep: &PreparedReadout,
    out: &mut Outputs,
) -> Result<TomographySetup> {
    let n = prep.chain.n_qubits();
    let stats = prep.with_source(cfg.shot_model, |s| {
        basis_statistics(s, cfg.shots.basis, stage_seed(cfg.seed, 3))
    })?;
    let ops = stats.operators()?;
    let labels: Vec<String> = stats
        .correlators
        .iter()
        .map(|c| correlator_label(c))
        .collect();
    let mut csv = String::from("state");
    for l in &labels {
        csv.push_str(&format!(",mean_{l},var_{l}"));
    }
    csv.push('\n');
    for (b, (m, v)) in stats.means.iter().zip(&stats.variances).enumerate() {
        let bl = basis_label(b, 1 << n);
        csv.push_str(&bl);
        for k in 0..labels.len() {
            csv.push_str(&format!(",{:.6},{:.6}", m[k], v[k]));
            out.metric(format!("var_{}_{bl}", labels[k]), v[k]);
        }
        csv.push('\n');
    }
    let last = labels.len() - 1;
    out.metric(
        "corr_to_single_variance_ratio",
        stats.variances[0][last] / stats.variances[0][0],
    );
    out.write("basis.csv", csv)?;
    out.write("operators.csv", operators_csv(&ops, &stats.correlators))?;
    for (q, (f, k)) in prep
        .calibration
        .fidelities
        .iter()
        .zip(&prep.calibration.kernels)
        .enumerate()
    {
        out.metric(format!("fidelity_ch{}", q + 1), *f);
        out.metric(format!("window_end_ch{}", q + 1), k.window_end as f64);
    }
    out.metric("stream_noise", prep.chain.config().stream_noise);
    TomographySetup::new(n, tomography_rotations(), stats.correlators, ops)
}

fn run_calibrate(cfg: &ScenarioConfig, out: &mut Outputs) -> Result<()> {
    let prep = PreparedReadout::new(cfg)?;
    out.json("readout.json", prep.chain.config())?;
    out.json("kernels.json", &prep.calibration)?;
    measured_operators(cfg, &prep, out)?;
    // Configured estimator on ground-state shots of every channel.
    let d = 1usize << prep.chain.n_qubits();
    let mut probs = vec![0.0; d];
    probs[0] = 1.0;
    let values = prep.with_source(cfg.shot_model, |s| {
        sample_outcomes(s, &probs, cfg.shots.basis, stage_seed(cfg.seed, 4), 0)
    })?;
    for (c, v) in values.iter().enumerate() {
        let e = estimate(v, &cfg.estimator)?;
        out.metric(format!("ground_estimate_ch{}", c + 1), e.mean);
        out.metric(format!("ground_estimate_var_ch{}", c + 1), e.variance);
    }
    Ok(())
}

fn is_weight_one(label: &str) -> bool {
    label.chars().filter(|c| *c != 'I').count() == 1
}

fn run_state_tomo(cfg: &ScenarioConfig, out: &mut Outputs) -> Result<()> {
    let prep = PreparedReadout::new(cfg)?;
    let setup = measured_operators(cfg, &prep, out)?;
    let psi = zx_entangled_state();
    let rho = crate::quantum::DensityMatrix::from_pure(&psi);
    let configs = prep.with_source(cfg.shot_model, |s| {
        state_tomography_shots(
            s,
            &setup,
            rho.operator(),
            cfg.shots.per_configuration,
            stage_seed(cfg.seed, 5),
        )
    })?;
    let tomo = reconstruct_state(&setup, &configs)?;
    out.json("rho.json", &tomo.rho)?;
    out.write("paulis.csv", pauli_csv(&tomo.paulis))?;
    out.metric("fidelity", state_fidelity(&psi, &tomo.rho)?);
    out.metric(
        "fidelity_projected",
        state_fidelity(&psi, &project_to_physical(&tomo.rho)?)?,
    );
    out.metric("residual_norm", tomo.residual_norm);
    out.metric("condition_number", tomo.condition_number);
    let worst = tomo
        .paulis
        .iter()
        .filter(|p| is_weight_one(&p.label))
        .map(|p| (p.value / p.std_error).abs())
        .fold(0.0, f64::max);
    out.metric("max_weight_one_z", worst);
    Ok(())
}

fn run_process_tomo(cfg: &ScenarioConfig, out: &mut Outputs) -> Result<()> {
    let prep = PreparedReadout::new(cfg)?;
    let setup = measured_operators(cfg, &prep, out)?;
    let gate = zx_gate(-std::f64::consts::FRAC_PI_2);
    let configs = prep.with_source(cfg.shot_model, |s| {
        process_tomography_shots(
            s,
            &setup,
            &gate,
            cfg.shots.per_configuration,
            stage_seed(cfg.seed, 6),
        )
    })?;
    let tomo = reconstruct_process(&setup, &configs)?;
    out.write("ptm.csv", tomo.ptm.to_csv())?;
    let f = gate_fidelities(&PauliTransferMatrix::of_unitary(&gate)?, &tomo.ptm)?;
    out.metric("average_gate_fidelity", f.average);
    out.metric("process_fidelity", f.process);
    out.metric(
        "trace_preservation_deviation",
        tomo.trace_preservation_deviation,
    );
    out.metric("residual_norm", tomo.residual_norm);
    out.metric("condition_number", tomo.condition_number);
    Ok(())
}

fn run_channelizer_bench(cfg: &ScenarioConfig, out: &mut Outputs) -> Result<()> {
    let b = &cfg.bench;
    let chain = ReadoutChain::new(cfg.readout.clone())?;
    let n = chain.n_qubits();
    let chan = chain.channelizer();

    // Noiseless round trip of every channel against its baseband record.
    let records: Vec<_> = (0..n).map(|q| chain.record(q, 0)).collect();
    let analog = chain.multiplexer().analog(&records)?;
    let outs = chan.process_samples(&analog)?;
    let factor = records[0].len() / outs[0].len();
    let mut worst_rms: f64 = 0.0;
    for (q, o) in outs.iter().enumerate() {
        let t = chan.transient_len(q);
        let (mut err, mut sig) = (0.0, 0.0);
        for (m, z) in o
            .samples
            .iter()
            .enumerate()
            .skip(t)
            .take(o.len().saturating_sub(2 * t))
        {
            let want = records[q].samples[m * factor];
            err += (z - want).norm_sqr();
            sig += want.norm_sqr();
        }
        let rms = (err / sig).sqrt();
        worst_rms = worst_rms.max(rms);
        out.metric(format!("round_trip_rel_rms_ch{}", q + 1), rms);
    }
    // Leakage from each channel into all others, away from record edges.
    let mut worst_leak = f64::NEG_INFINITY;
    for q in 0..n {
        let only: Vec<_> = (0..n)
            .map(|p| {
                let mut r = chain.record(p, 0);
                if p != q {
                    r.samples.iter_mut().for_each(|z| *z = Default::default());
                }
                r
            })
            .collect();
        let o = chan.process_samples(&chain.multiplexer().analog(&only)?)?;
        let power = |c: usize| {
            let t = chan.transient_len(c);
            let len = o[c].len().saturating_sub(2 * t);
            o[c].samples
                .iter()
                .skip(t)
                .take(len)
                .map(|z| z.norm_sqr())
                .sum::<f64>()
        };
        for c in (0..n).filter(|&c| c != q) {
            worst_leak = worst_leak.max(10.0 * (power(c) / power(q)).log10());
        }
    }
    if n > 1 {
        out.metric("worst_crosstalk_db", worst_leak);
    }
    out.metric("worst_round_trip_rel_rms", worst_rms);

    let table = attenuation_table(&b.tap_counts, b.cutoff_ratio, &b.attenuation_multiples)?;
    let mut csv = String::from("taps");
    for m in &b.attenuation_multiples {
        csv.push_str(&format!(",atten_db_at_{m}x"));
    }
    csv.push('\n');
    for (taps, att) in &table {
        csv.push_str(&taps.to_string());
        for a in att {
            csv.push_str(&format!(",{a:.2}"));
        }
        csv.push('\n');
    }
    out.write("attenuation.csv", csv)?;

    let d = 1usize << n;
    let streams: Vec<_> = (0..b.shots)
        .map(|i| chain.stream(i % d, &mut shot_rng(cfg.seed, 0, i as u64)))
        .collect::<Result<_>>()?;
    let clipped: usize = streams.iter().map(|s| s.clipped).sum();
    let t0 = Instant::now();
    let shots: Vec<_> = streams
        .iter()
        .map(|s| chan.process(s))
        .collect::<Result<_>>()?;
    let secs = t0.elapsed().as_secs_f64();
    let samples = b.shots * chain.multiplexer().stream_len();
    out.metric("samples_processed", samples as f64);
    out.metric("clipped_samples", clipped as f64);
    out.timing.insert("channelize_seconds".into(), secs);
    out.timing.insert(
        "input_msamples_per_second".into(),
        samples as f64 / secs / 1e6,
    );
    if b.persist_records {
        let rate = 1.0 / chan.output_period(0);
        let set = RecordSet::new(rate, shots)?;
        let p = out.dir.join("records.bin");
        persist_records(&set, &p)?;
        out.files.push(p);
    }
    Ok(())
}
