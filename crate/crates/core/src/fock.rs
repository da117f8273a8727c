//! Truncated qubit ⊗ Fock space.
//!
//! Basis ordering is fixed: the qubit index is major and the Fock index
//! minor, so amplitude `q * n_fock + n` belongs to `|q>|n>` with `q = 0`
//! the `σz = +1` state `|↑>` and `q = 1` the state `|↓>`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{self, C0, C1, CI};

/// Dense operators on the truncated space, all `2N × 2N`.
#[derive(Debug, Clone)]
pub struct OperatorSet {
    pub n_fock: usize,
    pub dim: usize,
    pub a: DMatrix<Complex64>,
    pub a_dag: DMatrix<Complex64>,
    pub num: DMatrix<Complex64>,
    /// Dimensionless position `a + a†`.
    pub x: DMatrix<Complex64>,
    /// Dimensionless momentum `i(a† - a)/2`.
    pub p: DMatrix<Complex64>,
    pub sx: DMatrix<Complex64>,
    pub sy: DMatrix<Complex64>,
    pub sz: DMatrix<Complex64>,
    pub sp: DMatrix<Complex64>,
    pub sm: DMatrix<Complex64>,
    pub identity: DMatrix<Complex64>,
}

/// Pauli axis label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Pauli {
    X,
    Y,
    Z,
}

impl Pauli {
    pub fn matrix(self) -> DMatrix<Complex64> {
        match self {
            Pauli::X => DMatrix::from_row_slice(2, 2, &[C0, C1, C1, C0]),
            Pauli::Y => DMatrix::from_row_slice(2, 2, &[C0, -CI, CI, C0]),
            Pauli::Z => DMatrix::from_row_slice(2, 2, &[C1, C0, C0, -C1]),
        }
    }

    /// Qubit amplitudes `(c_↑, c_↓)` of the `±1` eigenvector.
    pub fn eigenvector(self, positive: bool) -> [Complex64; 2] {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let s = if positive { 1.0 } else { -1.0 };
        match self {
            Pauli::Z if positive => [C1, C0],
            Pauli::Z => [C0, C1],
            Pauli::X => [Complex64::new(h, 0.0), Complex64::new(s * h, 0.0)],
            Pauli::Y => [Complex64::new(h, 0.0), Complex64::new(0.0, s * h)],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Pauli::X => "x",
            Pauli::Y => "y",
            Pauli::Z => "z",
        }
    }
}

impl std::str::FromStr for Pauli {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "x" | "sx" | "sigma_x" => Ok(Pauli::X),
            "y" | "sy" | "sigma_y" => Ok(Pauli::Y),
            "z" | "sz" | "sigma_z" => Ok(Pauli::Z),
            other => Err(Error::invalid(format!("unknown Pauli axis {other:?}"))),
        }
    }
}

/// Annihilation operator on the mode alone (`N × N`).
pub fn mode_annihilation(n_fock: usize) -> DMatrix<Complex64> {
    let mut a = DMatrix::zeros(n_fock, n_fock);
    for n in 1..n_fock {
        a[(n - 1, n)] = Complex64::new((n as f64).sqrt(), 0.0);
    }
    a
}

/// Position `a + a†` on the mode alone; real symmetric tridiagonal.
pub fn mode_position(n_fock: usize) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(n_fock, n_fock);
    for n in 1..n_fock {
        let s = (n as f64).sqrt();
        x[(n - 1, n)] = s;
        x[(n, n - 1)] = s;
    }
    x
}

pub fn build_operator_set(n_fock: usize) -> Result<OperatorSet> {
    if n_fock < 2 {
        return Err(Error::invalid(format!("n_fock must be >= 2, got {n_fock}")));
    }
    let id_q = DMatrix::<Complex64>::identity(2, 2);
    let id_m = DMatrix::<Complex64>::identity(n_fock, n_fock);
    let am = mode_annihilation(n_fock);
    let adm = am.adjoint();
    let nm = &adm * &am;
    let xm = &am + &adm;
    let pm = (&adm - &am) * Complex64::new(0.0, 0.5);
    let on_mode = |m: &DMatrix<Complex64>| id_q.kronecker(m);
    let on_qubit = |q: &DMatrix<Complex64>| q.kronecker(&id_m);
    let sp = DMatrix::from_row_slice(2, 2, &[C0, C1, C0, C0]);
    let sm = sp.adjoint();
    Ok(OperatorSet {
        n_fock,
        dim: 2 * n_fock,
        a: on_mode(&am),
        a_dag: on_mode(&adm),
        num: on_mode(&nm),
        x: on_mode(&xm),
        p: on_mode(&pm),
        sx: on_qubit(&Pauli::X.matrix()),
        sy: on_qubit(&Pauli::Y.matrix()),
        sz: on_qubit(&Pauli::Z.matrix()),
        sp: on_qubit(&sp),
        sm: on_qubit(&sm),
        identity: DMatrix::identity(2 * n_fock, 2 * n_fock),
    })
}

impl OperatorSet {
    pub fn pauli(&self, axis: Pauli) -> &DMatrix<Complex64> {
        match axis {
            Pauli::X => &self.sx,
            Pauli::Y => &self.sy,
            Pauli::Z => &self.sz,
        }
    }
}

/// Pure state on the qubit ⊗ Fock space.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumState {
    pub n_fock: usize,
    pub amplitudes: DVector<Complex64>,
}

impl QuantumState {
    pub fn new(n_fock: usize, amplitudes: DVector<Complex64>) -> Result<Self> {
        if amplitudes.len() != 2 * n_fock {
            return Err(Error::DimensionMismatch { expected: 2 * n_fock, got: amplitudes.len() });
        }
        Ok(Self { n_fock, amplitudes })
    }

    /// `(c_↑ |↑> + c_↓ |↓>) ⊗ |n>`.
    pub fn product(n_fock: usize, qubit: [Complex64; 2], fock_level: usize) -> Result<Self> {
        if fock_level >= n_fock {
            return Err(Error::invalid(format!("Fock level {fock_level} outside truncation {n_fock}")));
        }
        let mut amps = DVector::zeros(2 * n_fock);
        amps[fock_level] = qubit[0];
        amps[n_fock + fock_level] = qubit[1];
        Self::new(n_fock, amps)
    }

    /// `qubit ⊗ mode` for an arbitrary mode vector of length `N`.
    pub fn from_parts(qubit: [Complex64; 2], mode: &DVector<Complex64>) -> Self {
        let n = mode.len();
        let mut amps = DVector::zeros(2 * n);
        for k in 0..n {
            amps[k] = qubit[0] * mode[k];
            amps[n + k] = qubit[1] * mode[k];
        }
        Self { n_fock: n, amplitudes: amps }
    }

    /// Vacuum times the `±1` eigenstate of a Pauli axis.
    pub fn vacuum_with(n_fock: usize, axis: Pauli, positive: bool) -> Result<Self> {
        Self::product(n_fock, axis.eigenvector(positive), 0)
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    pub fn normalize(&mut self) {
        let n = self.norm();
        if n > 0.0 {
            self.amplitudes /= Complex64::new(n, 0.0);
        }
    }

    pub fn apply(&self, op: &DMatrix<Complex64>) -> Result<Self> {
        if op.ncols() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: op.ncols() });
        }
        Ok(Self { n_fock: self.n_fock, amplitudes: op * &self.amplitudes })
    }

    /// Population of Fock level `n` summed over the qubit.
    pub fn fock_population(&self, n: usize) -> f64 {
        self.amplitudes[n].norm_sqr() + self.amplitudes[self.n_fock + n].norm_sqr()
    }

    /// Copy into a larger truncation (new levels are empty).
    pub fn embed(&self, n_fock: usize) -> Result<Self> {
        if n_fock < self.n_fock {
            return Err(Error::invalid("cannot embed into a smaller truncation"));
        }
        let mut amps = DVector::zeros(2 * n_fock);
        for k in 0..self.n_fock {
            amps[k] = self.amplitudes[k];
            amps[n_fock + k] = self.amplitudes[self.n_fock + k];
        }
        Self::new(n_fock, amps)
    }
}

/// Total population in the top `k` Fock levels, both qubit states included.
pub fn truncation_tail(state: &QuantumState, k: usize) -> Result<f64> {
    if k == 0 || k >= state.n_fock {
        return Err(Error::invalid(format!("tail width must satisfy 0 < k < {}, got {k}", state.n_fock)));
    }
    Ok((state.n_fock - k..state.n_fock).map(|n| state.fock_population(n)).sum())
}

/// Displacement `exp(α a† - α* a)` on the truncated mode, by exact
/// exponentiation of the truncated generator. Unitary on the truncated space.
pub fn displacement_matrix(alpha: Complex64, n_fock: usize) -> Result<DMatrix<Complex64>> {
    check_displacement(alpha, n_fock)?;
    // α a† - α* a = -i G with G = i(α a† - α* a) Hermitian.
    let am = mode_annihilation(n_fock);
    let g = (am.adjoint() * alpha - &am * alpha.conj()) * CI;
    linalg::hermitian_exp(&g, -1.0)
}

/// Displacement matrix elements of the untruncated operator, from the
/// associated-Laguerre closed form. Agrees with [`displacement_matrix`]
/// away from the truncation edge.
pub fn displacement_matrix_laguerre(alpha: Complex64, n_fock: usize) -> DMatrix<Complex64> {
    let x = alpha.norm_sqr();
    let gauss = (-0.5 * x).exp();
    let mut d = DMatrix::zeros(n_fock, n_fock);
    for m in 0..n_fock {
        for n in 0..n_fock {
            let (lo, hi) = (m.min(n), m.max(n));
            let k = hi - lo;
            // sqrt(lo!/hi!)
            let ratio: f64 = (lo + 1..=hi).map(|j| (j as f64).sqrt().recip()).product();
            let lag = laguerre(lo, k as f64, x);
            let phase = if m >= n { alpha } else { -alpha.conj() };
            d[(m, n)] = phase.powu(k as u32) * (ratio * gauss * lag);
        }
    }
    d
}

fn check_displacement(alpha: Complex64, n_fock: usize) -> Result<()> {
    if !(alpha.re.is_finite() && alpha.im.is_finite()) {
        return Err(Error::NonFinite("displacement amplitude"));
    }
    if n_fock < 2 {
        return Err(Error::invalid("n_fock must be >= 2"));
    }
    if alpha.norm_sqr() > n_fock as f64 / 4.0 {
        return Err(Error::Truncation {
            what: format!("|alpha|^2 = {:.3} exceeds n_fock/4", alpha.norm_sqr()),
            time: 0.0,
            tail: f64::NAN,
            n_fock,
        });
    }
    Ok(())
}

/// Generalized Laguerre polynomial `L_n^{(k)}(x)` by three-term recurrence.
fn laguerre(n: usize, k: f64, x: f64) -> f64 {
    let mut prev = 1.0;
    if n == 0 {
        return prev;
    }
    let mut cur = 1.0 + k - x;
    for j in 1..n {
        let jf = j as f64;
        let next = ((2.0 * jf + 1.0 + k - x) * cur - (jf + k) * prev) / (jf + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}
