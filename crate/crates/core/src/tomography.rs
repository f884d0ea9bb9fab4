//! Measurement-operator tomography, predictor matrices for state and
//! process tomography, and generalized least squares inversion.

use std::collections::HashMap;
use std::fmt;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimation::correlate;
use crate::quantum::{
    check_qubits, index_tuples, kron_all, pauli_basis, pauli_labels, ptm_from_liouville,
    tomography_rotations, vec_op, CMatrix, CVector, DensityMatrix, Operator, PauliTransferMatrix,
    ProcessMap, C64, TOMOGRAPHY_ROTATION_LABELS,
};

/// Variance assigned to exact trace-constraint rows.
pub const TRACE_VARIANCE: f64 = 1e-12;
/// Lower bound on empirical row variances.
pub const VARIANCE_FLOOR: f64 = 1e-12;

const RANK_TOL: f64 = 1e-10;

fn qubits_of_dim(dim: usize) -> Result<usize> {
    if dim == 0 || !dim.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(dim));
    }
    let n = dim.trailing_zeros() as usize;
    check_qubits(n)?;
    Ok(n)
}

/// `±1` eigenvalue of the diagonal Pauli string `mask` (bit set ⇒ Z on
/// that qubit, qubit 1 most significant) on basis state `b`.
fn z_sign(mask: usize, b: usize) -> f64 {
    if (mask & b).count_ones() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Labels of the diagonal Pauli strings in lexicographic order
/// (`II, IZ, ZI, ZZ` for two qubits).
pub fn diagonal_labels(n_qubits: usize) -> Vec<String> {
    (0..1usize << n_qubits)
        .map(|mask| {
            (0..n_qubits)
                .map(|q| {
                    if mask >> (n_qubits - 1 - q) & 1 == 1 {
                        'Z'
                    } else {
                        'I'
                    }
                })
                .collect()
        })
        .collect()
}

/// Diagonal observable written in the `{I, Z}` Pauli strings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementOperator {
    pub n_qubits: usize,
    pub pauli_coefficients: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standard_errors: Option<Vec<f64>>,
}

impl MeasurementOperator {
    pub fn new(n_qubits: usize, pauli_coefficients: Vec<f64>) -> Result<Self> {
        check_qubits(n_qubits)?;
        if pauli_coefficients.len() != 1 << n_qubits {
            return Err(Error::DimensionMismatch {
                expected: 1 << n_qubits,
                got: pauli_coefficients.len(),
            });
        }
        Ok(Self {
            n_qubits,
            pauli_coefficients,
            standard_errors: None,
        })
    }

    /// From `(label, coefficient)` pairs such as `("ZI", 1.011)`.
    pub fn from_terms(n_qubits: usize, terms: &[(&str, f64)]) -> Result<Self> {
        let labels = diagonal_labels(n_qubits);
        let mut c = vec![0.0; labels.len()];
        for (l, v) in terms {
            let i = labels.iter().position(|x| x == l).ok_or_else(|| {
                invalid(
                    "pauli",
                    format!("`{l}` is not a diagonal {n_qubits}-qubit string"),
                )
            })?;
            c[i] += v;
        }
        Self::new(n_qubits, c)
    }

    /// `Π_{q∈S} Z_q` for the qubit subset `S` (0-based).
    pub fn ideal(n_qubits: usize, subset: &[usize]) -> Result<Self> {
        let mask = subset.iter().fold(0, |m, &q| m | 1 << (n_qubits - 1 - q));
        let mut c = vec![0.0; 1 << n_qubits];
        c[mask] = 1.0;
        Self::new(n_qubits, c)
    }

    pub fn coefficient(&self, label: &str) -> Option<f64> {
        diagonal_labels(self.n_qubits)
            .iter()
            .position(|l| l == label)
            .map(|i| self.pauli_coefficients[i])
    }

    /// Expected filtered value for computational basis state `b`.
    pub fn eigenvalue(&self, b: usize) -> f64 {
        self.pauli_coefficients
            .iter()
            .enumerate()
            .map(|(mask, c)| c * z_sign(mask, b))
            .sum()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        (0..1 << self.n_qubits)
            .map(|b| self.eigenvalue(b))
            .collect()
    }

    pub fn operator(&self) -> Operator {
        Operator::diagonal(&self.eigenvalues()).expect("dimension is a power of two")
    }
}

/// Exact inversion `c_P = Σ_b means[b]·P(b,b) / 2ⁿ` from one calibrated
/// mean per computational basis state.
pub fn measurement_tomography(basis_means: &[f64]) -> Result<MeasurementOperator> {
    let n = qubits_of_dim(basis_means.len())?;
    let d = basis_means.len() as f64;
    let c = (0..basis_means.len())
        .map(|mask| {
            basis_means
                .iter()
                .enumerate()
                .map(|(b, m)| m * z_sign(mask, b))
                .sum::<f64>()
                / d
        })
        .collect();
    MeasurementOperator::new(n, c)
}

/// As [`measurement_tomography`], propagating the variance of each mean.
pub fn measurement_tomography_with_errors(
    basis_means: &[f64],
    variances: &[f64],
) -> Result<MeasurementOperator> {
    if variances.len() != basis_means.len() {
        return Err(Error::DimensionMismatch {
            expected: basis_means.len(),
            got: variances.len(),
        });
    }
    let mut op = measurement_tomography(basis_means)?;
    let d = basis_means.len() as f64;
    let se = (variances.iter().sum::<f64>()).sqrt() / d;
    op.standard_errors = Some(vec![se; basis_means.len()]);
    Ok(op)
}

/// Every non-empty channel subset, singles first: `{0}, {1}, {0,1}`.
pub fn all_correlators(n_channels: usize) -> Vec<Vec<usize>> {
    let mut subsets: Vec<Vec<usize>> = (1..1usize << n_channels)
        .map(|m| (0..n_channels).filter(|c| m >> c & 1 == 1).collect())
        .collect();
    subsets.sort_by(|a, b| a.len().cmp(&b.len()).then(a.cmp(b)));
    subsets
}

pub fn correlator_label(subset: &[usize]) -> String {
    let mut s = String::from("M");
    for c in subset {
        s.push_str(&(c + 1).to_string());
    }
    s
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RowLabel {
    Measurement {
        prep: Option<Vec<usize>>,
        rotation: Vec<usize>,
        operator: usize,
    },
    Trace {
        prep: Option<Vec<usize>>,
    },
}

fn tuple_label(t: &[usize]) -> String {
    t.iter()
        .map(|&i| TOMOGRAPHY_ROTATION_LABELS.get(i).copied().unwrap_or("?"))
        .collect::<Vec<_>>()
        .join("-")
}

impl fmt::Display for RowLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prep = |p: &Option<Vec<usize>>| {
            p.as_ref()
                .map(|p| format!("prep {} ", tuple_label(p)))
                .unwrap_or_default()
        };
        match self {
            RowLabel::Measurement {
                prep: p,
                rotation,
                operator,
            } => {
                write!(
                    f,
                    "{}rot {} op {}",
                    prep(p),
                    tuple_label(rotation),
                    operator
                )
            }
            RowLabel::Trace { prep: p } => write!(f, "{}trace", prep(p)),
        }
    }
}

/// Linear map from the vectorized state (or process) to expectation values.
#[derive(Clone, Debug)]
pub struct PredictorMatrix {
    pub rows: CMatrix,
    pub labels: Vec<RowLabel>,
}

impl PredictorMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.rows.ncols()
    }

    pub fn singular_values(&self) -> Vec<f64> {
        singular_values(&self.rows)
    }

    pub fn rank(&self) -> usize {
        numerical_rank(&self.singular_values())
    }

    pub fn check_rank(&self) -> Result<()> {
        let rank = self.rank();
        if rank < self.n_cols() {
            return Err(Error::RankDeficient {
                rank,
                cols: self.n_cols(),
                deficiency: self.n_cols() - rank,
            });
        }
        Ok(())
    }

    /// Real parts of `P x`.
    pub fn predict(&self, x: &CVector) -> Vec<f64> {
        (&self.rows * x).iter().map(|z| z.re).collect()
    }

    /// Indices of the measurement rows by label.
    pub fn index(&self) -> HashMap<&RowLabel, usize> {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l, i))
            .collect()
    }
}

fn rotation_unitaries(rotations: &[Operator], n: usize) -> Vec<(Vec<usize>, Operator)> {
    index_tuples(rotations.len(), n)
        .into_iter()
        .map(|t| {
            let ops: Vec<&Operator> = t.iter().map(|&i| &rotations[i]).collect();
            let u = kron_all(&ops);
            (t, u)
        })
        .collect()
}

/// Rows `vec(U†MU)†` per (rotation tuple × operator), operator index
/// fastest, then one trace row `vec(I)†`.
pub fn build_state_predictor(
    meas_ops: &[MeasurementOperator],
    rotations: &[Operator],
) -> Result<PredictorMatrix> {
    let p = state_predictor_unchecked(meas_ops, rotations)?;
    p.check_rank()?;
    Ok(p)
}

fn state_predictor_unchecked(
    meas_ops: &[MeasurementOperator],
    rotations: &[Operator],
) -> Result<PredictorMatrix> {
    let n = meas_ops
        .first()
        .ok_or(Error::Empty("measurement operators"))?
        .n_qubits;
    if meas_ops.iter().any(|m| m.n_qubits != n) {
        return Err(invalid("measurement operators", "mixed qubit counts"));
    }
    if rotations.is_empty() {
        return Err(Error::Empty("rotation set"));
    }
    let d = 1usize << n;
    let ops: Vec<Operator> = meas_ops.iter().map(|m| m.operator()).collect();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (t, u) in rotation_unitaries(rotations, n) {
        for (k, m) in ops.iter().enumerate() {
            rows.push(vec_op(&m.heisenberg(&u)).adjoint());
            labels.push(RowLabel::Measurement {
                prep: None,
                rotation: t.clone(),
                operator: k,
            });
        }
    }
    rows.push(vec_op(&Operator::identity(d)).adjoint());
    labels.push(RowLabel::Trace { prep: None });
    Ok(PredictorMatrix {
        rows: CMatrix::from_rows(&rows),
        labels,
    })
}

/// Preparations `U|0…0⟩⟨0…0|U†` for every per-qubit rotation tuple.
pub fn preparation_states(preps: &[Operator], n: usize) -> Vec<(Vec<usize>, Operator)> {
    let d = 1usize << n;
    let mut ground = Operator::zeros(d);
    let mut m = ground.clone().into_matrix();
    m[(0, 0)] = C64::new(1.0, 0.0);
    ground = Operator::new(m).expect("square");
    rotation_unitaries(preps, n)
        .into_iter()
        .map(|(t, u)| (t, ground.conjugated_by(&u)))
        .collect()
}

/// Rows `vec(ρ_α)ᵀ ⊗ vec(M_β)†` so that `row·vec(ℰ) = Tr(M_β ℰ(ρ_α))`.
/// Measurement rows vary fastest within each preparation, followed by that
/// preparation's trace row `vec(ρ_α)ᵀ ⊗ vec(I)†`.
pub fn build_process_predictor(
    preps: &[Operator],
    meas_ops: &[MeasurementOperator],
    rotations: &[Operator],
) -> Result<PredictorMatrix> {
    let state = state_predictor_unchecked(meas_ops, rotations)?;
    let n = meas_ops[0].n_qubits;
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (t, rho) in preparation_states(preps, n) {
        let v = vec_op(&rho).transpose();
        for (r, label) in state.rows.row_iter().zip(&state.labels) {
            rows.push(v.kronecker(&r));
            labels.push(match label {
                RowLabel::Measurement {
                    rotation, operator, ..
                } => RowLabel::Measurement {
                    prep: Some(t.clone()),
                    rotation: rotation.clone(),
                    operator: *operator,
                },
                RowLabel::Trace { .. } => RowLabel::Trace {
                    prep: Some(t.clone()),
                },
            });
        }
    }
    let p = PredictorMatrix {
        rows: CMatrix::from_rows(&rows),
        labels,
    };
    p.check_rank()?;
    Ok(p)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceDiagonal {
    variances: Vec<f64>,
}

impl CovarianceDiagonal {
    pub fn new(variances: Vec<f64>) -> Result<Self> {
        if let Some(v) = variances.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(invalid(
                "covariance",
                format!("variance {v} is not strictly positive"),
            ));
        }
        Ok(Self { variances })
    }

    pub fn uniform(n: usize, variance: f64) -> Result<Self> {
        Self::new(vec![variance; n])
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }
}

#[derive(Clone, Debug)]
pub struct GlsSolution {
    pub estimate: CVector,
    /// `‖C^{-1/2}(m − P x)‖`
    pub residual_norm: f64,
    pub condition_number: f64,
    /// `(P† C⁻¹ P)⁻¹`
    pub covariance: CMatrix,
}

/// Singular values from a Householder QR followed by the Hermitian
/// eigenproblem of `R†R`. The direct SVD iteration is avoided: it loses
/// accuracy on the sparse, highly structured predictor matrices.
pub fn singular_values(a: &CMatrix) -> Vec<f64> {
    let gram = if a.nrows() >= a.ncols() {
        let r = a.clone().qr().r();
        r.adjoint() * r
    } else {
        a * a.adjoint()
    };
    let mut s: Vec<f64> = gram
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .map(|l| l.max(0.0).sqrt())
        .collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

fn numerical_rank(s: &[f64]) -> usize {
    let max = s.first().copied().unwrap_or(0.0);
    s.iter().filter(|&&v| v > RANK_TOL * max).count()
}

/// `argmin Σ_r |m_r − (P x)_r|² / C_r` via a QR factorization of the
/// whitened system `C^{-1/2} P`.
pub fn gls_solve(p: &PredictorMatrix, c: &CovarianceDiagonal, m: &[f64]) -> Result<GlsSolution> {
    let rows = p.n_rows();
    if m.len() != rows {
        return Err(Error::DimensionMismatch {
            expected: rows,
            got: m.len(),
        });
    }
    if c.variances.len() != rows {
        return Err(Error::DimensionMismatch {
            expected: rows,
            got: c.variances.len(),
        });
    }
    let cols = p.n_cols();
    if rows < cols {
        return Err(Error::RankDeficient {
            rank: rows,
            cols,
            deficiency: cols - rows,
        });
    }
    let w: Vec<f64> = c.variances.iter().map(|v| 1.0 / v.sqrt()).collect();
    let mut a = p.rows.clone();
    for (i, wi) in w.iter().enumerate() {
        a.row_mut(i).scale_mut(*wi);
    }
    let b = CVector::from_iterator(rows, m.iter().zip(&w).map(|(v, wi)| C64::new(v * wi, 0.0)));
    let qr = a.clone().qr();
    let (q, r) = (qr.q(), qr.r());
    let mut s: Vec<f64> = (r.adjoint() * &r)
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .map(|l| l.max(0.0).sqrt())
        .collect();
    s.sort_by(|x, y| y.total_cmp(x));
    let rank = numerical_rank(&s);
    if rank < cols {
        return Err(Error::RankDeficient {
            rank,
            cols,
            deficiency: cols - rank,
        });
    }
    let estimate = r
        .solve_upper_triangular(&(q.adjoint() * &b))
        .ok_or(Error::RankDeficient {
            rank,
            cols,
            deficiency: 0,
        })?;
    let residual_norm = (&a * &estimate - &b).norm();
    let r_inv = r
        .solve_upper_triangular(&CMatrix::identity(cols, cols))
        .ok_or(Error::RankDeficient {
            rank,
            cols,
            deficiency: 0,
        })?;
    let covariance = &r_inv * r_inv.adjoint();
    Ok(GlsSolution {
        estimate,
        residual_norm,
        condition_number: s[0] / s[cols - 1],
        covariance,
    })
}

/// Rotations, correlators and calibrated measurement operators for one
/// tomography experiment. `operators[k]` describes `correlators[k]`.
#[derive(Clone, Debug)]
pub struct TomographySetup {
    pub n_qubits: usize,
    pub rotations: Vec<Operator>,
    pub correlators: Vec<Vec<usize>>,
    pub operators: Vec<MeasurementOperator>,
}

impl TomographySetup {
    /// Ideal `Z`-product readout with the standard rotation set.
    pub fn ideal(n_qubits: usize) -> Result<Self> {
        let correlators = all_correlators(n_qubits);
        let operators = correlators
            .iter()
            .map(|s| MeasurementOperator::ideal(n_qubits, s))
            .collect::<Result<_>>()?;
        Self::new(n_qubits, tomography_rotations(), correlators, operators)
    }

    pub fn new(
        n_qubits: usize,
        rotations: Vec<Operator>,
        correlators: Vec<Vec<usize>>,
        operators: Vec<MeasurementOperator>,
    ) -> Result<Self> {
        check_qubits(n_qubits)?;
        if correlators.len() != operators.len() {
            return Err(Error::DimensionMismatch {
                expected: correlators.len(),
                got: operators.len(),
            });
        }
        if correlators.iter().flatten().any(|&c| c >= n_qubits) {
            return Err(invalid("correlators", "channel index out of range"));
        }
        Ok(Self {
            n_qubits,
            rotations,
            correlators,
            operators,
        })
    }

    pub fn state_predictor(&self) -> Result<PredictorMatrix> {
        build_state_predictor(&self.operators, &self.rotations)
    }

    /// Preparations use the same rotation set applied to `|0…0⟩`.
    pub fn process_predictor(&self) -> Result<PredictorMatrix> {
        build_process_predictor(&self.rotations, &self.operators, &self.rotations)
    }
}

/// Filtered shot values of every channel for one configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigurationValues {
    pub prep: Option<Vec<usize>>,
    pub rotation: Vec<usize>,
    pub channels: Vec<Vec<f64>>,
}

/// Per-row means and variances of the mean for every predictor row.
pub fn row_statistics(
    setup: &TomographySetup,
    predictor: &PredictorMatrix,
    configs: &[ConfigurationValues],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let lookup: HashMap<(&Option<Vec<usize>>, &Vec<usize>), &ConfigurationValues> = configs
        .iter()
        .map(|c| ((&c.prep, &c.rotation), c))
        .collect();
    predictor
        .labels
        .par_iter()
        .map(|label| match label {
            RowLabel::Trace { .. } => Ok((1.0, TRACE_VARIANCE)),
            RowLabel::Measurement {
                prep,
                rotation,
                operator,
            } => {
                let cfg = lookup
                    .get(&(prep, rotation))
                    .ok_or_else(|| Error::MissingConfiguration(label.to_string()))?;
                let chans: Vec<&[f64]> = setup.correlators[*operator]
                    .iter()
                    .map(|&c| {
                        cfg.channels.get(c).map(|v| v.as_slice()).ok_or_else(|| {
                            Error::MissingConfiguration(format!("{label} channel {c}"))
                        })
                    })
                    .collect::<Result<_>>()?;
                let (_, est) = correlate(&chans)?;
                Ok((est.mean, est.variance.max(VARIANCE_FLOOR)))
            }
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().unzip())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PauliEstimate {
    pub label: String,
    pub value: f64,
    pub std_error: f64,
}

#[derive(Clone, Debug)]
pub struct StateTomography {
    pub rho: DensityMatrix,
    pub residual_norm: f64,
    pub condition_number: f64,
    /// Expectation values `Tr(P ρ)` with propagated standard errors.
    pub paulis: Vec<PauliEstimate>,
}

pub fn reconstruct_state_from_rows(
    setup: &TomographySetup,
    predictor: &PredictorMatrix,
    means: &[f64],
    variances: &[f64],
) -> Result<StateTomography> {
    let cov = CovarianceDiagonal::new(variances.iter().map(|v| v.max(VARIANCE_FLOOR)).collect())?;
    let sol = gls_solve(predictor, &cov, means)?;
    let d = 1usize << setup.n_qubits;
    let raw = Operator::new(CMatrix::from_column_slice(d, d, sol.estimate.as_slice()))?;
    let rho = DensityMatrix::hermitized(&raw)?;
    let paulis = pauli_basis(setup.n_qubits)?
        .iter()
        .zip(pauli_labels(setup.n_qubits))
        .map(|(p, label)| {
            let v = vec_op(p);
            let var = (v.adjoint() * &sol.covariance * &v)[(0, 0)].re;
            PauliEstimate {
                label,
                value: p.expectation(rho.operator()).re,
                std_error: var.max(0.0).sqrt(),
            }
        })
        .collect();
    Ok(StateTomography {
        rho,
        residual_norm: sol.residual_norm,
        condition_number: sol.condition_number,
        paulis,
    })
}

pub fn reconstruct_state(
    setup: &TomographySetup,
    configs: &[ConfigurationValues],
) -> Result<StateTomography> {
    let p = setup.state_predictor()?;
    let (m, v) = row_statistics(setup, &p, configs)?;
    reconstruct_state_from_rows(setup, &p, &m, &v)
}

#[derive(Clone, Debug)]
pub struct ProcessTomography {
    pub map: ProcessMap,
    pub ptm: PauliTransferMatrix,
    pub residual_norm: f64,
    pub condition_number: f64,
    pub trace_preservation_deviation: f64,
}

pub fn reconstruct_process_from_rows(
    predictor: &PredictorMatrix,
    means: &[f64],
    variances: &[f64],
) -> Result<ProcessTomography> {
    let cov = CovarianceDiagonal::new(variances.iter().map(|v| v.max(VARIANCE_FLOOR)).collect())?;
    let sol = gls_solve(predictor, &cov, means)?;
    let map = ProcessMap::from_vec(&sol.estimate)?;
    let ptm = ptm_from_liouville(&map)?;
    Ok(ProcessTomography {
        trace_preservation_deviation: map.trace_preservation_deviation(),
        map,
        ptm,
        residual_norm: sol.residual_norm,
        condition_number: sol.condition_number,
    })
}

pub fn reconstruct_process(
    setup: &TomographySetup,
    configs: &[ConfigurationValues],
) -> Result<ProcessTomography> {
    let p = setup.process_predictor()?;
    let (m, v) = row_statistics(setup, &p, configs)?;
    reconstruct_process_from_rows(&p, &m, &v)
}

/// Clip negative eigenvalues and renormalize. A heuristic, not the
/// closest physical state in any norm.
pub fn project_to_physical(rho: &DensityMatrix) -> Result<DensityMatrix> {
    let m = rho.operator().matrix().clone();
    let d = m.nrows();
    let eig = m.symmetric_eigen();
    let clipped: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidDensityMatrix(
            "no positive eigenvalues".into(),
        ));
    }
    let diag = DMatrix::from_diagonal(&CVector::from_iterator(
        d,
        clipped.iter().map(|&l| C64::new(l / total, 0.0)),
    ));
    let out = &eig.eigenvectors * diag * eig.eigenvectors.adjoint();
    DensityMatrix::hermitized(&Operator::new(out)?)
}

pub fn pauli_csv(paulis: &[PauliEstimate]) -> String {
    let mut out = String::from("pauli,value,std_error\n");
    for p in paulis {
        out.push_str(&format!("{},{:.8},{:.8}\n", p.label, p.value, p.std_error));
    }
    out
}

/// Ideal projective readout: sample a basis outcome of `U ρ U†` per shot
/// and report `±1` per qubit plus Gaussian noise of deviation `nus[q]`.
pub fn simulate_shots<R: Rng + ?Sized>(
    rho: &Operator,
    u: &Operator,
    nus: &[f64],
    shots: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let n = nus.len();
    let probs: Vec<f64> = rho
        .conjugated_by(u)
        .matrix()
        .diagonal()
        .iter()
        .map(|z| z.re.max(0.0))
        .collect();
    let total: f64 = probs.iter().sum();
    let mut out = vec![Vec::with_capacity(shots); n];
    for _ in 0..shots {
        let mut x = rng.random::<f64>() * total;
        let mut b = probs.len() - 1;
        for (i, p) in probs.iter().enumerate() {
            if x < *p {
                b = i;
                break;
            }
            x -= p;
        }
        for (q, ch) in out.iter_mut().enumerate() {
            let bit = b >> (n - 1 - q) & 1;
            let s = if bit == 0 { 1.0 } else { -1.0 };
            ch.push(s + nus[q] * rng.sample::<f64, _>(StandardNormal));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::{
        gate_fidelities, liouville_of_unitary, random_density, random_unitary, rotation,
        state_fidelity, zx_gate, Pauli, PureState,
    };
    use crate::readout::shot_rng;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn measurement_tomography_basics() {
        let m = measurement_tomography(&[1.0, 1.0, -1.0, -1.0]).unwrap();
        assert_eq!(m.pauli_coefficients, vec![0.0, 0.0, 1.0, 0.0]);
        let m = measurement_tomography(&[1.0, -1.0, -1.0, 1.0]).unwrap();
        assert_eq!(m.pauli_coefficients, vec![0.0, 0.0, 0.0, 1.0]);
        assert!(measurement_tomography(&[1.0, 2.0, 3.0]).is_err());
        assert_eq!(diagonal_labels(2), vec!["II", "IZ", "ZI", "ZZ"]);
    }

    #[test]
    fn measurement_tomography_recovers_coefficients() {
        let truth =
            MeasurementOperator::from_terms(2, &[("ZI", 1.0110), ("IZ", 0.0164), ("ZZ", -0.0106)])
                .unwrap();
        let back = measurement_tomography(&truth.eigenvalues()).unwrap();
        for (a, b) in back
            .pauli_coefficients
            .iter()
            .zip(&truth.pauli_coefficients)
        {
            assert!((a - b).abs() < 1e-12);
        }
        // Diagonal of the operator equals the eigenvalues.
        let op = truth.operator();
        for b in 0..4 {
            assert!((op.matrix()[(b, b)].re - truth.eigenvalue(b)).abs() < 1e-15);
        }
    }

    #[test]
    fn injected_leakage_recovered_from_shots() {
        let truth =
            MeasurementOperator::from_terms(2, &[("ZI", 1.0110), ("IZ", 0.0164), ("ZZ", -0.0106)])
                .unwrap();
        let mut rng = shot_rng(1, 0, 0);
        let shots = 100_000;
        let (means, vars): (Vec<f64>, Vec<f64>) = (0..4)
            .map(|b| {
                let v: Vec<f64> = (0..shots)
                    .map(|_| truth.eigenvalue(b) + 0.65 * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let e = crate::estimation::soft_average(&v).unwrap();
                (e.mean, e.variance)
            })
            .unzip();
        let est = measurement_tomography_with_errors(&means, &vars).unwrap();
        let se = est.standard_errors.as_ref().unwrap();
        for i in 0..4 {
            assert!((est.pauli_coefficients[i] - truth.pauli_coefficients[i]).abs() < 4.0 * se[i]);
        }
    }

    #[test]
    fn single_qubit_rows_measure_expected_paulis() {
        let p = build_state_predictor(
            &[MeasurementOperator::ideal(1, &[0]).unwrap()],
            &tomography_rotations(),
        )
        .unwrap();
        assert_eq!(p.n_rows(), 5);
        assert_eq!(p.rank(), 4);
        let expected = [
            (Pauli::Z, 1.0),
            (Pauli::Y, 1.0),
            (Pauli::X, -1.0),
            (Pauli::Z, -1.0),
        ];
        for (r, (pauli, sign)) in expected.iter().enumerate() {
            // Oracle: the row's observable via direct conjugation.
            let u = &tomography_rotations()[r];
            let obs = Pauli::Z.matrix().heisenberg(u);
            assert!(obs.max_abs_diff(&pauli.matrix().scale(c(*sign))) < 1e-12);
            let row = p.rows.row(r);
            let coeff = (row * vec_op(&pauli.matrix()))[(0, 0)] / 2.0;
            assert!((coeff - c(*sign)).norm() < 1e-12);
        }
    }

    #[test]
    fn two_qubit_state_predictor_rank() {
        let setup = TomographySetup::ideal(2).unwrap();
        let p = setup.state_predictor().unwrap();
        assert_eq!(p.n_rows(), 16 * 3 + 1);
        assert_eq!(p.rank(), 16);
    }

    #[test]
    fn rank_deficiency_reported() {
        let ops = [MeasurementOperator::ideal(2, &[0]).unwrap()];
        match build_state_predictor(&ops, &tomography_rotations()) {
            Err(Error::RankDeficient {
                cols: 16,
                deficiency,
                ..
            }) => assert!(deficiency > 0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn state_rows_match_trace_oracle() {
        let setup = TomographySetup::ideal(2).unwrap();
        let p = setup.state_predictor().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tuples = index_tuples(4, 2);
        for _ in 0..100 {
            let rho = random_density(4, &mut rng);
            let pred = &p.rows * vec_op(rho.operator());
            for (i, label) in p.labels.iter().enumerate() {
                let direct = match label {
                    RowLabel::Trace { .. } => rho.operator().trace(),
                    RowLabel::Measurement {
                        rotation, operator, ..
                    } => {
                        let t = tuples.iter().position(|t| t == rotation).unwrap();
                        let r = &tomography_rotations();
                        let u = kron_all(&[&r[tuples[t][0]], &r[tuples[t][1]]]);
                        setup.operators[*operator]
                            .operator()
                            .expectation(&rho.operator().conjugated_by(&u))
                    }
                };
                assert!((pred[i] - direct).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn process_rows_match_conjugation_oracle() {
        let setup = TomographySetup::ideal(1).unwrap();
        let p = setup.process_predictor().unwrap();
        assert_eq!(p.n_rows(), 4 * 5);
        let x = Pauli::X.matrix();
        let e = liouville_of_unitary(&x).unwrap();
        let pred = &p.rows * CVector::from_column_slice(e.matrix().as_slice());
        let preps = preparation_states(&setup.rotations, 1);
        let mut i = 0;
        for (_, rho) in &preps {
            for u in &setup.rotations {
                let direct = setup.operators[0]
                    .operator()
                    .expectation(&rho.conjugated_by(&x).conjugated_by(u));
                assert!((pred[i] - direct).norm() < 1e-12);
                i += 1;
            }
            assert!((pred[i] - c(1.0)).norm() < 1e-12);
            i += 1;
        }
    }

    #[test]
    fn identity_process_predicts_state_rows() {
        let setup = TomographySetup::ideal(1).unwrap();
        let pp = setup.process_predictor().unwrap();
        let ps = setup.state_predictor().unwrap();
        let id = ProcessMap::identity(2);
        let pred = &pp.rows * CVector::from_column_slice(id.matrix().as_slice());
        for (k, (_, rho)) in preparation_states(&setup.rotations, 1).iter().enumerate() {
            let ms = &ps.rows * vec_op(rho);
            for r in 0..ps.n_rows() {
                assert!((pred[k * ps.n_rows() + r] - ms[r]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn process_rows_match_oracle_on_random_processes() {
        let setup = TomographySetup::ideal(2).unwrap();
        let p = setup.process_predictor().unwrap();
        assert_eq!(p.rank(), 256);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let preps = preparation_states(&setup.rotations, 2);
        let tuples = index_tuples(4, 2);
        let r = &setup.rotations;
        for _ in 0..100 {
            // Random unitary channels mixed with a random Liouville matrix:
            // the rows are linear, so any matrix is a valid test vector.
            let u = random_unitary(4, &mut rng);
            let e = liouville_of_unitary(&u).unwrap();
            let pred = &p.rows * CVector::from_column_slice(e.matrix().as_slice());
            for (i, label) in p.labels.iter().enumerate() {
                let (prep, direct) = match label {
                    RowLabel::Trace { prep } => (prep, None),
                    RowLabel::Measurement {
                        prep,
                        rotation,
                        operator,
                    } => (prep, Some((rotation, operator))),
                };
                let pi = tuples
                    .iter()
                    .position(|t| Some(t) == prep.as_ref())
                    .unwrap();
                let out = preps[pi].1.conjugated_by(&u);
                let expect = match direct {
                    None => out.trace(),
                    Some((rot, op)) => {
                        let v = kron_all(&[&r[rot[0]], &r[rot[1]]]);
                        setup.operators[*op]
                            .operator()
                            .expectation(&out.conjugated_by(&v))
                    }
                };
                assert!((pred[i] - expect).norm() < 1e-12);
            }
        }
    }

    fn noiseless_rows(p: &PredictorMatrix, x: &CVector) -> Vec<f64> {
        p.predict(x)
    }

    #[test]
    fn gls_recovers_noiseless_state() {
        let setup = TomographySetup::ideal(2).unwrap();
        let p = setup.state_predictor().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rho = random_density(4, &mut rng);
        let m = noiseless_rows(&p, &vec_op(rho.operator()));
        let sol = gls_solve(
            &p,
            &CovarianceDiagonal::uniform(p.n_rows(), 1.0).unwrap(),
            &m,
        )
        .unwrap();
        for (a, b) in sol.estimate.iter().zip(vec_op(rho.operator()).iter()) {
            assert!((a - b).norm() < 1e-10);
        }
        assert!(sol.residual_norm < 1e-10);
    }

    #[test]
    fn gls_with_uniform_covariance_is_ordinary_least_squares() {
        let setup = TomographySetup::ideal(2).unwrap();
        let p = setup.state_predictor().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m: Vec<f64> = (0..p.n_rows())
            .map(|_| rng.random::<f64>() * 2.0 - 1.0)
            .collect();
        let sol = gls_solve(
            &p,
            &CovarianceDiagonal::uniform(p.n_rows(), 0.3).unwrap(),
            &m,
        )
        .unwrap();
        // Normal equations through Cholesky: an independent route.
        let mv = CVector::from_iterator(m.len(), m.iter().map(|&v| c(v)));
        let ols = (p.rows.adjoint() * &p.rows)
            .cholesky()
            .unwrap()
            .solve(&(p.rows.adjoint() * mv));
        for (a, b) in sol.estimate.iter().zip(ols.iter()) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn huge_variance_row_is_deleted() {
        let setup = TomographySetup::ideal(1).unwrap();
        let p = setup.state_predictor().unwrap();
        // Duplicate rows so one can be removed without losing rank.
        let mut rows: Vec<_> = p.rows.row_iter().map(|r| r.into_owned()).collect();
        rows.extend(p.rows.rows(0, 4).row_iter().map(|r| r.into_owned()));
        let full = PredictorMatrix {
            rows: CMatrix::from_rows(&rows),
            labels: [p.labels.clone(), p.labels[..4].to_vec()].concat(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m: Vec<f64> = (0..full.n_rows())
            .map(|_| rng.random::<f64>() - 0.5)
            .collect();
        let mut var: Vec<f64> = (0..full.n_rows()).map(|i| 0.5 + 0.1 * i as f64).collect();
        var[2] = 1e12;
        let sol = gls_solve(&full, &CovarianceDiagonal::new(var.clone()).unwrap(), &m).unwrap();
        let keep: Vec<usize> = (0..full.n_rows()).filter(|&i| i != 2).collect();
        let reduced = PredictorMatrix {
            rows: full.rows.select_rows(&keep),
            labels: keep.iter().map(|&i| full.labels[i].clone()).collect(),
        };
        let sol2 = gls_solve(
            &reduced,
            &CovarianceDiagonal::new(keep.iter().map(|&i| var[i]).collect()).unwrap(),
            &keep.iter().map(|&i| m[i]).collect::<Vec<_>>(),
        )
        .unwrap();
        for (a, b) in sol.estimate.iter().zip(sol2.estimate.iter()) {
            assert!((a - b).norm() < 1e-6);
        }
    }

    #[test]
    fn gls_errors() {
        let setup = TomographySetup::ideal(1).unwrap();
        let p = setup.state_predictor().unwrap();
        assert!(CovarianceDiagonal::new(vec![1.0, 0.0]).is_err());
        assert!(CovarianceDiagonal::new(vec![1.0, -1.0]).is_err());
        let c = CovarianceDiagonal::uniform(p.n_rows(), 1.0).unwrap();
        assert!(gls_solve(&p, &c, &[0.0; 3]).is_err());
        let thin = PredictorMatrix {
            rows: p.rows.rows(0, 2).into_owned(),
            labels: p.labels[..2].to_vec(),
        };
        match gls_solve(
            &thin,
            &CovarianceDiagonal::uniform(2, 1.0).unwrap(),
            &[0.0, 0.0],
        ) {
            Err(Error::RankDeficient {
                rank: 2,
                cols: 4,
                deficiency: 2,
            }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn gls_is_unbiased_and_beats_ols_with_unequal_noise() {
        let setup = TomographySetup::ideal(1).unwrap();
        let p = setup.state_predictor().unwrap();
        let truth = vec_op(
            &Operator::new(CMatrix::from_row_slice(
                2,
                2,
                &[c(0.7), C64::new(0.2, -0.1), C64::new(0.2, 0.1), c(0.3)],
            ))
            .unwrap(),
        );
        let clean = p.predict(&truth);
        let var: Vec<f64> = (0..p.n_rows())
            .map(|i| match p.labels[i] {
                RowLabel::Trace { .. } => TRACE_VARIANCE,
                _ if i % 2 == 0 => 0.01,
                _ => 0.1,
            })
            .collect();
        let cov = CovarianceDiagonal::new(var.clone()).unwrap();
        let uni = CovarianceDiagonal::uniform(p.n_rows(), 1.0).unwrap();
        let mut sum = CVector::zeros(4);
        let mut sum2 = vec![0.0; 4];
        let (mut gls_mse, mut ols_mse) = (0.0, 0.0);
        let trials = 500;
        for t in 0..trials {
            let mut rng = shot_rng(7, 0, t);
            let m: Vec<f64> = clean
                .iter()
                .zip(&var)
                .map(|(v, s)| v + s.sqrt() * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let g = gls_solve(&p, &cov, &m).unwrap().estimate;
            for k in 0..4 {
                sum2[k] += (g[k] - truth[k]).norm_sqr();
            }
            sum += &g;
            if t < 200 {
                let o = gls_solve(&p, &uni, &m).unwrap().estimate;
                gls_mse += (&g - &truth).norm_squared();
                ols_mse += (&o - &truth).norm_squared();
            }
        }
        let mean = sum / C64::new(trials as f64, 0.0);
        for k in 0..4 {
            let se = (sum2[k] / trials as f64 / trials as f64).sqrt();
            assert!(
                (mean[k] - truth[k]).norm() < 4.0 * se.max(1e-15),
                "component {k}"
            );
        }
        assert!(gls_mse <= ols_mse, "{gls_mse} > {ols_mse}");
    }

    fn noiseless_configs(
        setup: &TomographySetup,
        rho: &Operator,
    ) -> (PredictorMatrix, Vec<f64>, Vec<f64>) {
        let p = setup.state_predictor().unwrap();
        let m = p.predict(&vec_op(rho));
        let v = vec![1e-6; m.len()];
        (p, m, v)
    }

    #[test]
    fn noiseless_ground_state_reconstruction() {
        let setup = TomographySetup::ideal(2).unwrap();
        let psi = PureState::basis(4, 0).unwrap();
        let rho = DensityMatrix::from_pure(&psi);
        let (p, m, v) = noiseless_configs(&setup, rho.operator());
        let out = reconstruct_state_from_rows(&setup, &p, &m, &v).unwrap();
        assert!(out.rho.operator().max_abs_diff(rho.operator()) < 1e-10);
    }

    fn zx_state() -> PureState {
        // (I−Y)⊗(I+Z)/4 is |−i⟩⟨−i| ⊗ |0⟩⟨0|.
        let s = 0.5f64.sqrt();
        let minus_i = PureState::new(CVector::from_vec(vec![c(s), C64::new(0.0, -s)])).unwrap();
        let zero = PureState::basis(2, 0).unwrap();
        let input = PureState::new(minus_i.amplitudes().kronecker(zero.amplitudes())).unwrap();
        input.apply(&zx_gate(-std::f64::consts::FRAC_PI_2))
    }

    fn sampled_configs(
        setup: &TomographySetup,
        rho: &Operator,
        prep: Option<Vec<usize>>,
        shots: usize,
        seed: u64,
        nus: &[f64],
    ) -> Vec<ConfigurationValues> {
        let tuples = index_tuples(setup.rotations.len(), setup.n_qubits);
        tuples
            .par_iter()
            .enumerate()
            .map(|(i, t)| {
                let ops: Vec<&Operator> = t.iter().map(|&k| &setup.rotations[k]).collect();
                let u = kron_all(&ops);
                let mut rng = shot_rng(seed, i as u64, 0);
                ConfigurationValues {
                    prep: prep.clone(),
                    rotation: t.clone(),
                    channels: simulate_shots(rho, &u, nus, shots, &mut rng),
                }
            })
            .collect()
    }

    #[test]
    fn entangled_state_with_shot_noise() {
        let setup = TomographySetup::ideal(2).unwrap();
        let psi = zx_state();
        let rho = DensityMatrix::from_pure(&psi);
        let configs = sampled_configs(
            &setup,
            rho.operator(),
            None,
            50_000,
            8,
            &[0.42f64.sqrt(), 1.36f64.sqrt()],
        );
        let out = reconstruct_state(&setup, &configs).unwrap();
        let f = state_fidelity(&psi, &out.rho).unwrap();
        assert!(f >= 0.98, "{f}");
        for p in &out.paulis {
            if p.label.chars().filter(|&c| c != 'I').count() == 1 {
                assert!(p.value.abs() < 4.0 * p.std_error, "{p:?}");
            }
        }
        let csv = pauli_csv(&out.paulis);
        assert!(csv.starts_with("pauli,value,std_error\nII,"));
        assert_eq!(csv.lines().count(), 17);
    }

    #[test]
    fn missing_configuration_is_an_error() {
        let setup = TomographySetup::ideal(1).unwrap();
        let rho = DensityMatrix::maximally_mixed(2);
        let mut configs = sampled_configs(&setup, rho.operator(), None, 10, 9, &[0.1]);
        configs.pop();
        assert!(matches!(
            reconstruct_state(&setup, &configs),
            Err(Error::MissingConfiguration(_))
        ));
    }

    #[test]
    fn noiseless_processes() {
        let setup = TomographySetup::ideal(2).unwrap();
        let p = setup.process_predictor().unwrap();
        for u in [Operator::identity(4), zx_gate(-std::f64::consts::FRAC_PI_2)] {
            let e = liouville_of_unitary(&u).unwrap();
            let x = CVector::from_column_slice(e.matrix().as_slice());
            let m = p.predict(&x);
            let out = reconstruct_process_from_rows(&p, &m, &vec![1e-6; m.len()]).unwrap();
            let ideal = PauliTransferMatrix::of_unitary(&u).unwrap();
            assert!((out.ptm.matrix() - ideal.matrix()).amax() < 1e-10);
            let f = gate_fidelities(&ideal, &out.ptm).unwrap();
            assert!((f.average - 1.0).abs() < 1e-8);
            assert!(out.trace_preservation_deviation < 1e-10);
        }
    }

    #[test]
    fn projection_examples() {
        let rho = DensityMatrix::hermitized(&Operator::diagonal(&[1.2, -0.2]).unwrap()).unwrap();
        let out = project_to_physical(&rho).unwrap();
        assert!(
            out.operator()
                .max_abs_diff(&Operator::diagonal(&[1.0, 0.0]).unwrap())
                < 1e-12
        );
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let psd = random_density(4, &mut rng);
        assert!(
            project_to_physical(&psd)
                .unwrap()
                .operator()
                .max_abs_diff(psd.operator())
                < 1e-12
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn projection_is_physical_and_no_worse(seed in 0u64..10_000, eps in 0.01f64..0.3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let psi = PureState::normalized(CVector::from_iterator(4, (0..4).map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)))).unwrap();
            let h = CMatrix::from_fn(4, 4, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
            let h = (&h + h.adjoint()) * c(0.5 * eps);
            let noisy = DensityMatrix::hermitized(&Operator::new(DensityMatrix::from_pure(&psi).operator().matrix() + h).unwrap()).unwrap();
            let out = project_to_physical(&noisy).unwrap();
            let eig = out.operator().matrix().clone().symmetric_eigen();
            prop_assert!(eig.eigenvalues.iter().all(|&l| l > -1e-12));
            prop_assert!((out.operator().trace().re - 1.0).abs() < 1e-12);
            // Renormalizing by the positive-eigenvalue mass 1 + N can only
            // scale the fidelity down by that factor.
            let raw = noisy.operator().matrix().clone().symmetric_eigen();
            let neg: f64 = raw.eigenvalues.iter().filter(|&&l| l < 0.0).map(|l| -l).sum();
            let f_in = state_fidelity(&psi, &noisy).unwrap();
            prop_assert!(state_fidelity(&psi, &out).unwrap() >= f_in / (1.0 + neg) - 1e-12);
        }
    }

    #[test]
    fn singular_values_of_structured_predictor() {
        let p = TomographySetup::ideal(2)
            .unwrap()
            .process_predictor()
            .unwrap();
        let s = p.singular_values();
        let frob2: f64 = p.rows.iter().map(|z| z.norm_sqr()).sum();
        let sum2: f64 = s.iter().map(|v| v * v).sum();
        assert!((sum2 / frob2 - 1.0).abs() < 1e-10);
        assert!(s.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn correlators_and_labels() {
        assert_eq!(all_correlators(2), vec![vec![0], vec![1], vec![0, 1]]);
        assert_eq!(all_correlators(3).len(), 7);
        assert_eq!(correlator_label(&[0, 1]), "M12");
        let r = rotation(Pauli::X, 0.3);
        assert!(TomographySetup::new(
            1,
            vec![r],
            vec![vec![1]],
            vec![MeasurementOperator::ideal(1, &[0]).unwrap()]
        )
        .is_err());
    }
}
