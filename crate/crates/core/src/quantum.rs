//! Dense few-qubit linear algebra: operators, Pauli strings, column-major
//! vectorization, Liouville superoperators and Pauli transfer matrices.
//!
//! Conventions used throughout the crate:
//!
//! * qubit 1 is the most significant bit of a computational-basis index, so
//!   the Pauli label `"ZI"` is `Z ⊗ I` and `diag(1, 1, -1, -1)`;
//! * Pauli strings are ordered lexicographically over `I < X < Y < Z`;
//! * `vec` stacks columns, hence `vec(U ρ U†) = (conj(U) ⊗ U) vec(ρ)`;
//! * single-qubit rotations are `R_a(θ) = exp(-i θ σ_a / 2)`.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::ops::Mul;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const MAX_QUBITS: usize = 4;

const HERMITIAN_TOL: f64 = 1e-12;
const UNITARY_TOL: f64 = 1e-10;

#[inline]
pub(crate) fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn log2_exact(dim: usize) -> Result<usize> {
    if dim == 0 || !dim.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(dim));
    }
    Ok(dim.trailing_zeros() as usize)
}

/// A square complex matrix acting on `n` qubits.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    m: CMatrix,
}

impl Operator {
    pub fn new(m: CMatrix) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                got: m.ncols(),
            });
        }
        log2_exact(m.nrows())?;
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("operator entries"));
        }
        Ok(Self { m })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            m: CMatrix::identity(dim, dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            m: CMatrix::zeros(dim, dim),
        }
    }

    /// Diagonal operator from real entries.
    pub fn diagonal(entries: &[f64]) -> Result<Self> {
        let d = entries.len();
        let m = CMatrix::from_fn(d, d, |i, j| {
            if i == j {
                c(entries[i], 0.0)
            } else {
                C64::default()
            }
        });
        Self::new(m)
    }

    /// Row-major constructor, mostly for literals in tests.
    pub fn from_rows(dim: usize, entries: &[C64]) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                got: entries.len(),
            });
        }
        Self::new(CMatrix::from_row_slice(dim, dim, entries))
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn n_qubits(&self) -> usize {
        self.dim().trailing_zeros() as usize
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.m
    }

    pub fn into_matrix(self) -> CMatrix {
        self.m
    }

    pub fn kron(&self, other: &Operator) -> Operator {
        Operator {
            m: self.m.kronecker(&other.m),
        }
    }

    pub fn adjoint(&self) -> Operator {
        Operator {
            m: self.m.adjoint(),
        }
    }

    pub fn trace(&self) -> C64 {
        self.m.trace()
    }

    pub fn scale(&self, s: C64) -> Operator {
        Operator { m: &self.m * s }
    }

    pub fn add(&self, other: &Operator) -> Operator {
        Operator {
            m: &self.m + &other.m,
        }
    }

    /// `U · self · U†`
    pub fn conjugated_by(&self, u: &Operator) -> Operator {
        Operator {
            m: &u.m * &self.m * u.m.adjoint(),
        }
    }

    /// `U† · self · U`, the Heisenberg-picture observable measured after `U`.
    pub fn heisenberg(&self, u: &Operator) -> Operator {
        Operator {
            m: u.m.adjoint() * &self.m * &u.m,
        }
    }

    /// `Tr(self · rho)`
    pub fn expectation(&self, rho: &Operator) -> C64 {
        // Tr(AB) = Σ_ij A_ij B_ji without forming the product.
        let d = self.dim();
        let mut acc = C64::default();
        for i in 0..d {
            for j in 0..d {
                acc += self.m[(i, j)] * rho.m[(j, i)];
            }
        }
        acc
    }

    pub fn hermiticity_deviation(&self) -> f64 {
        (&self.m - self.m.adjoint())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_deviation() <= tol
    }

    pub fn unitarity_deviation(&self) -> f64 {
        let d = self.dim();
        (self.m.adjoint() * &self.m - CMatrix::identity(d, d))
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Operator) -> f64 {
        (&self.m - &other.m)
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    /// Integer matrix power.
    pub fn pow(&self, k: u32) -> Operator {
        let mut out = Operator::identity(self.dim());
        for _ in 0..k {
            out = &out * self;
        }
        out
    }

    fn to_nested(&self) -> Vec<Vec<[f64; 2]>> {
        (0..self.dim())
            .map(|i| {
                (0..self.dim())
                    .map(|j| [self.m[(i, j)].re, self.m[(i, j)].im])
                    .collect()
            })
            .collect()
    }

    fn from_nested(rows: Vec<Vec<[f64; 2]>>) -> Result<Self> {
        let d = rows.len();
        let mut entries = Vec::with_capacity(d * d);
        for row in rows {
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: row.len(),
                });
            }
            entries.extend(row.into_iter().map(|[re, im]| c(re, im)));
        }
        Self::from_rows(d, &entries)
    }
}

impl Mul<&Operator> for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        Operator {
            m: &self.m * &rhs.m,
        }
    }
}

/// Nested arrays of `[re, im]` pairs, row by row.
impl Serialize for Operator {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_nested().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Operator {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<[f64; 2]>>::deserialize(d)?;
        Operator::from_nested(rows).map_err(serde::de::Error::custom)
    }
}

// ---------------------------------------------------------------------------
// Pauli algebra

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub const ALL: [Pauli; 4] = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];

    pub fn matrix(self) -> Operator {
        let o = C64::new(0.0, 0.0);
        let l = C64::new(1.0, 0.0);
        let i = C64::new(0.0, 1.0);
        let entries = match self {
            Pauli::I => [l, o, o, l],
            Pauli::X => [o, l, l, o],
            Pauli::Y => [o, -i, i, o],
            Pauli::Z => [l, o, o, -l],
        };
        Operator {
            m: CMatrix::from_row_slice(2, 2, &entries),
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }
}

/// A tensor product of single-qubit Paulis, qubit 1 first.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PauliString(pub Vec<Pauli>);

impl PauliString {
    /// The `index`-th string in lexicographic order for `n` qubits.
    pub fn from_index(n: usize, index: usize) -> Self {
        let mut digits = vec![Pauli::I; n];
        let mut rest = index;
        for q in (0..n).rev() {
            digits[q] = Pauli::ALL[rest % 4];
            rest /= 4;
        }
        PauliString(digits)
    }

    pub fn parse(label: &str) -> Option<Self> {
        label
            .chars()
            .map(|ch| match ch {
                'I' => Some(Pauli::I),
                'X' => Some(Pauli::X),
                'Y' => Some(Pauli::Y),
                'Z' => Some(Pauli::Z),
                _ => None,
            })
            .collect::<Option<Vec<_>>>()
            .map(PauliString)
    }

    pub fn index(&self) -> usize {
        self.0.iter().fold(0, |acc, p| {
            acc * 4 + Pauli::ALL.iter().position(|q| q == p).unwrap()
        })
    }

    pub fn weight(&self) -> usize {
        self.0.iter().filter(|p| **p != Pauli::I).count()
    }

    pub fn is_diagonal(&self) -> bool {
        self.0.iter().all(|p| matches!(p, Pauli::I | Pauli::Z))
    }

    pub fn operator(&self) -> Operator {
        self.0
            .iter()
            .skip(1)
            .fold(self.0[0].matrix(), |acc, p| acc.kron(&p.matrix()))
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.0 {
            write!(f, "{}", p.symbol())?;
        }
        Ok(())
    }
}

pub fn check_qubits(n: usize) -> Result<()> {
    if n == 0 || n > MAX_QUBITS {
        return Err(Error::QubitCount(n));
    }
    Ok(())
}

/// All `4^n` Pauli strings in lexicographic order (II, IX, IY, IZ, XI, ...).
pub fn pauli_basis(n_qubits: usize) -> Result<Vec<Operator>> {
    check_qubits(n_qubits)?;
    Ok((0..4usize.pow(n_qubits as u32))
        .map(|a| PauliString::from_index(n_qubits, a).operator())
        .collect())
}

pub fn pauli_labels(n_qubits: usize) -> Vec<String> {
    (0..4usize.pow(n_qubits as u32))
        .map(|a| PauliString::from_index(n_qubits, a).to_string())
        .collect()
}

/// Coefficients `c_a = Tr(P_a op) / 2^n`, so that `op = Σ_a c_a P_a`.
pub fn pauli_decompose(op: &Operator) -> Result<Vec<C64>> {
    let n = log2_exact(op.dim())?;
    let d = op.dim() as f64;
    Ok(pauli_basis(n)?
        .iter()
        .map(|p| p.expectation(op) / d)
        .collect())
}

pub fn from_pauli_coefficients(n_qubits: usize, coeffs: &[C64]) -> Result<Operator> {
    let basis = pauli_basis(n_qubits)?;
    if coeffs.len() != basis.len() {
        return Err(Error::DimensionMismatch {
            expected: basis.len(),
            got: coeffs.len(),
        });
    }
    let d = 1 << n_qubits;
    Ok(basis
        .iter()
        .zip(coeffs)
        .fold(Operator::zeros(d), |acc, (p, &a)| acc.add(&p.scale(a))))
}

// ---------------------------------------------------------------------------
// Vectorization

/// Column-major stacking.
pub fn vec_op(op: &Operator) -> CVector {
    CVector::from_column_slice(op.m.as_slice())
}

pub fn unvec(v: &CVector) -> Result<Operator> {
    let len = v.len();
    let d = (len as f64).sqrt().round() as usize;
    if d * d != len {
        return Err(Error::NotSquare(len));
    }
    Operator::new(CMatrix::from_column_slice(d, d, v.as_slice()))
}

// ---------------------------------------------------------------------------
// States

/// Hermitian, unit-trace operator. Positivity is not enforced.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    op: Operator,
}

impl DensityMatrix {
    pub fn new(op: Operator) -> Result<Self> {
        let herm = op.hermiticity_deviation();
        if herm > HERMITIAN_TOL {
            return Err(Error::InvalidDensityMatrix(format!(
                "not Hermitian (deviation {herm:.3e})"
            )));
        }
        let tr = op.trace();
        if (tr - C64::new(1.0, 0.0)).norm() > HERMITIAN_TOL {
            return Err(Error::InvalidDensityMatrix(format!("trace {tr} != 1")));
        }
        Ok(Self { op })
    }

    /// `(A + A†)/2` normalized to unit trace.
    pub fn hermitized(op: &Operator) -> Result<Self> {
        let h = Operator {
            m: (&op.m + op.m.adjoint()) * C64::new(0.5, 0.0),
        };
        let tr = h.trace().re;
        if tr.abs() < 1e-300 || !tr.is_finite() {
            return Err(Error::InvalidDensityMatrix(format!(
                "cannot normalize trace {tr}"
            )));
        }
        Ok(Self {
            op: h.scale(C64::new(1.0 / tr, 0.0)),
        })
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self {
            op: Operator::identity(dim).scale(c(1.0 / dim as f64, 0.0)),
        }
    }

    pub fn from_pure(psi: &PureState) -> Self {
        Self {
            op: Operator {
                m: &psi.amps * psi.amps.adjoint(),
            },
        }
    }

    pub fn operator(&self) -> &Operator {
        &self.op
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    pub fn purity(&self) -> f64 {
        self.op.expectation(&self.op).re
    }

    /// `U ρ U†`
    pub fn evolve(&self, u: &Operator) -> DensityMatrix {
        let out = self.op.conjugated_by(u);
        // Conjugation keeps Hermiticity up to rounding; re-symmetrize.
        DensityMatrix::hermitized(&out).expect("unitary evolution preserves trace")
    }

    /// Populations of the computational basis states.
    pub fn populations(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.op.m[(i, i)].re).collect()
    }
}

impl Serialize for DensityMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.op.serialize(s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PureState {
    amps: CVector,
}

impl PureState {
    pub fn new(amps: CVector) -> Result<Self> {
        log2_exact(amps.len())?;
        let norm = amps.norm();
        if (norm - 1.0).abs() > HERMITIAN_TOL {
            return Err(invalid_state(norm));
        }
        Ok(Self { amps })
    }

    pub fn normalized(amps: CVector) -> Result<Self> {
        let norm = amps.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(invalid_state(norm));
        }
        Self::new(amps / C64::new(norm, 0.0))
    }

    pub fn basis(dim: usize, index: usize) -> Result<Self> {
        let mut v = CVector::zeros(dim);
        if index >= dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: index,
            });
        }
        v[index] = C64::new(1.0, 0.0);
        Self::new(v)
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amps
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn apply(&self, u: &Operator) -> PureState {
        PureState {
            amps: &u.m * &self.amps,
        }
    }
}

fn invalid_state(norm: f64) -> Error {
    crate::error::invalid("amplitudes", format!("norm {norm} is not 1"))
}

/// `Re ⟨ψ|ρ|ψ⟩`
pub fn state_fidelity(psi: &PureState, rho: &DensityMatrix) -> Result<f64> {
    if psi.dim() != rho.dim() {
        return Err(Error::DimensionMismatch {
            expected: rho.dim(),
            got: psi.dim(),
        });
    }
    let v = psi.amps.adjoint() * &rho.op.m * &psi.amps;
    Ok(v[(0, 0)].re)
}

// ---------------------------------------------------------------------------
// Processes

/// Superoperator acting on column-major vectorized operators.
#[derive(Clone, Debug, PartialEq)]
pub struct ProcessMap {
    dim: usize,
    m: CMatrix,
}

impl ProcessMap {
    pub fn new(m: CMatrix) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                got: m.ncols(),
            });
        }
        let d = (m.nrows() as f64).sqrt().round() as usize;
        if d * d != m.nrows() {
            return Err(Error::NotSquare(m.nrows()));
        }
        log2_exact(d)?;
        Ok(Self { dim: d, m })
    }

    pub fn from_vec(v: &CVector) -> Result<Self> {
        let side = (v.len() as f64).sqrt().round() as usize;
        if side * side != v.len() {
            return Err(Error::NotSquare(v.len()));
        }
        Self::new(CMatrix::from_column_slice(side, side, v.as_slice()))
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            m: CMatrix::identity(dim * dim, dim * dim),
        }
    }

    /// Hilbert-space dimension the map acts on.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.m
    }

    pub fn apply(&self, rho: &Operator) -> Result<Operator> {
        if rho.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: rho.dim(),
            });
        }
        unvec(&(&self.m * vec_op(rho)))
    }

    /// Largest entry of `vec(I)† E − vec(I)†`; zero for trace-preserving maps.
    pub fn trace_preservation_deviation(&self) -> f64 {
        let id = vec_op(&Operator::identity(self.dim));
        let row = id.adjoint() * &self.m;
        row.iter()
            .zip(id.iter())
            .map(|(a, b)| (a - b.conj()).norm())
            .fold(0.0, f64::max)
    }
}

/// `E = conj(U) ⊗ U`, so that `vec(U ρ U†) = E vec(ρ)`.
pub fn liouville_of_unitary(u: &Operator) -> Result<ProcessMap> {
    let dev = u.unitarity_deviation();
    if dev > UNITARY_TOL {
        return Err(Error::NotUnitary(dev));
    }
    ProcessMap::new(u.m.conjugate().kronecker(&u.m))
}

/// Real `4^n × 4^n` matrix `R_ab = Tr(P_a E(P_b)) / 2^n`.
#[derive(Clone, Debug, PartialEq)]
pub struct PauliTransferMatrix {
    n_qubits: usize,
    r: DMatrix<f64>,
}

impl PauliTransferMatrix {
    pub fn new(n_qubits: usize, r: DMatrix<f64>) -> Result<Self> {
        check_qubits(n_qubits)?;
        let side = 4usize.pow(n_qubits as u32);
        if r.nrows() != side || r.ncols() != side {
            return Err(Error::DimensionMismatch {
                expected: side,
                got: r.nrows(),
            });
        }
        Ok(Self { n_qubits, r })
    }

    pub fn identity(n_qubits: usize) -> Result<Self> {
        let side = 4usize.pow(n_qubits as u32);
        Self::new(n_qubits, DMatrix::identity(side, side))
    }

    pub fn of_unitary(u: &Operator) -> Result<Self> {
        ptm_from_liouville(&liouville_of_unitary(u)?)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.r
    }

    /// CSV with Pauli-string row and column headers.
    pub fn to_csv(&self) -> String {
        let labels = pauli_labels(self.n_qubits);
        let mut out = String::from("pauli");
        for l in &labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (i, l) in labels.iter().enumerate() {
            out.push_str(l);
            for j in 0..labels.len() {
                out.push_str(&format!(",{:.10}", self.r[(i, j)]));
            }
            out.push('\n');
        }
        out
    }
}

pub fn ptm_from_liouville(e: &ProcessMap) -> Result<PauliTransferMatrix> {
    let n = log2_exact(e.dim)?;
    let basis: Vec<CVector> = pauli_basis(n)?.iter().map(vec_op).collect();
    let side = basis.len();
    let d = e.dim as f64;
    // E applied to every Pauli once, then projected.
    let images: Vec<CVector> = basis.iter().map(|b| &e.m * b).collect();
    let r = DMatrix::from_fn(side, side, |a, b| basis[a].dotc(&images[b]).re / d);
    PauliTransferMatrix::new(n, r)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GateFidelity {
    pub process: f64,
    pub average: f64,
}

/// Process fidelity `Tr(R_idealᵀ R_meas) / 4^n` and average gate fidelity
/// `(d F_pro + 1) / (d + 1)`.
pub fn gate_fidelities(
    ideal: &PauliTransferMatrix,
    measured: &PauliTransferMatrix,
) -> Result<GateFidelity> {
    if ideal.n_qubits != measured.n_qubits {
        return Err(Error::DimensionMismatch {
            expected: ideal.n_qubits,
            got: measured.n_qubits,
        });
    }
    let d = (1usize << ideal.n_qubits) as f64;
    let process = ideal.r.component_mul(&measured.r).sum() / (d * d);
    Ok(GateFidelity {
        process,
        average: (d * process + 1.0) / (d + 1.0),
    })
}

// ---------------------------------------------------------------------------
// Gates

/// `exp(-i θ σ / 2)` for a single-qubit Pauli axis.
pub fn rotation(axis: Pauli, angle: f64) -> Operator {
    let cos = C64::new((angle / 2.0).cos(), 0.0);
    let msin = C64::new(0.0, -(angle / 2.0).sin());
    Operator::identity(2)
        .scale(cos)
        .add(&axis.matrix().scale(msin))
}

/// `exp(-i θ/2 Z⊗X)`; θ = −π/2 is the entangling gate characterised in the
/// process-tomography scenario.
pub fn zx_gate(angle: f64) -> Operator {
    let zx = Pauli::Z.matrix().kron(&Pauli::X.matrix());
    Operator::identity(4)
        .scale(C64::new((angle / 2.0).cos(), 0.0))
        .add(&zx.scale(C64::new(0.0, -(angle / 2.0).sin())))
}

pub const TOMOGRAPHY_ROTATION_LABELS: [&str; 4] = ["Id", "X90", "Y90", "X180"];

/// Per-qubit pre-measurement rotations `{I, R_x(π/2), R_y(π/2), R_x(π)}`.
///
/// With a Z-type readout these measure `Z`, `Y`, `−X` and `−Z` respectively
/// (Heisenberg picture `U† Z U`).
pub fn tomography_rotations() -> Vec<Operator> {
    vec![
        Operator::identity(2),
        rotation(Pauli::X, FRAC_PI_2),
        rotation(Pauli::Y, FRAC_PI_2),
        rotation(Pauli::X, 2.0 * FRAC_PI_2),
    ]
}

/// Tensor product of per-qubit operators, qubit 1 first.
pub fn kron_all(ops: &[&Operator]) -> Operator {
    ops.iter()
        .skip(1)
        .fold(ops[0].clone(), |acc, o| acc.kron(o))
}

/// Every `n`-tuple of indices into a set of `k` items, first qubit slowest.
pub fn index_tuples(k: usize, n: usize) -> Vec<Vec<usize>> {
    (0..k.pow(n as u32))
        .map(|mut idx| {
            let mut t = vec![0; n];
            for q in (0..n).rev() {
                t[q] = idx % k;
                idx /= k;
            }
            t
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Random ensembles

fn ginibre<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CMatrix {
    CMatrix::from_fn(dim, dim, |_, _| {
        C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    })
}

/// Haar-random unitary (QR of a Ginibre matrix with phase fix).
pub fn random_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Operator {
    let qr = ginibre(dim, rng).qr();
    let q = qr.q();
    let r = qr.r();
    let mut u = q;
    for j in 0..dim {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 {
            d / d.norm()
        } else {
            C64::new(1.0, 0.0)
        };
        for i in 0..dim {
            u[(i, j)] *= phase;
        }
    }
    Operator { m: u }
}

/// Random full-rank density matrix `G G† / Tr(G G†)`.
pub fn random_density<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DensityMatrix {
    let g = ginibre(dim, rng);
    let m = &g * g.adjoint();
    DensityMatrix::hermitized(&Operator { m }).expect("Ginibre product has positive trace")
}

pub fn random_pure<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> PureState {
    let v = CVector::from_fn(dim, |_, _| {
        C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    PureState::normalized(v).expect("Gaussian vector is nonzero")
}
