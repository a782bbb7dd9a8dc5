//! Truncated Fock-space kernel: sparse operators on one or two bosonic modes,
//! coherent states, partial trace, von Neumann entropy, and displaced frames.
//!
//! Conventions: hbar = 1, a|n> = sqrt(n)|n-1>, q = (a + a^dag)/sqrt(2),
//! p = -i(a - a^dag)/sqrt(2), entropies in nats. Basis indices are row-major
//! with subsystem 0 slowest: idx = n_0 * n_levels + n_1 for two modes.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::{Error, Result};

/// Tail / leakage mass above which a state no longer fits the truncated basis.
pub const DEFAULT_LEAKAGE_THRESHOLD: f64 = 1e-6;

/// Norm tolerance for states after any public operation.
pub const NORM_TOLERANCE: f64 = 1e-9;

/// Reduced-density eigenvalues below this are a numerical fault, not noise.
pub const EIGENVALUE_FAULT: f64 = -1e-8;

/// Tensor product of `n_subsystems` truncated Fock ladders.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct FockSpace {
    n_levels: usize,
    n_subsystems: usize,
}

impl FockSpace {
    pub fn new(n_levels: usize, n_subsystems: usize) -> Result<Self> {
        if n_levels < 2 {
            return Err(Error::Dimension(format!(
                "n_levels must be at least 2, got {n_levels}"
            )));
        }
        if !(1..=2).contains(&n_subsystems) {
            return Err(Error::Dimension(format!(
                "n_subsystems must be 1 or 2, got {n_subsystems}"
            )));
        }
        Ok(FockSpace {
            n_levels,
            n_subsystems,
        })
    }

    pub fn n_levels(&self) -> usize {
        self.n_levels
    }

    pub fn n_subsystems(&self) -> usize {
        self.n_subsystems
    }

    pub fn dim(&self) -> usize {
        self.n_levels.pow(self.n_subsystems as u32)
    }

    /// Column stride of subsystem `k` in the row-major index.
    fn stride(&self, k: usize) -> usize {
        self.n_levels.pow((self.n_subsystems - 1 - k) as u32)
    }

    /// Fock occupation of subsystem `k` at flat index `idx`.
    pub fn digit(&self, idx: usize, k: usize) -> usize {
        (idx / self.stride(k)) % self.n_levels
    }

    /// Indices with any subsystem occupation in the top two levels; the
    /// leakage monitor sums probability over these.
    pub fn boundary_indices(&self) -> Vec<usize> {
        let cut = self.n_levels - 2;
        (0..self.dim())
            .filter(|&idx| (0..self.n_subsystems).any(|k| self.digit(idx, k) >= cut))
            .collect()
    }
}

/// Compressed sparse row matrix over Complex64, rows sorted by column.
#[derive(Clone, Debug)]
pub struct Csr {
    n: usize,
    row_ptr: Vec<usize>,
    col: Vec<usize>,
    val: Vec<Complex64>,
}

impl Csr {
    pub fn zeros(n: usize) -> Self {
        Csr {
            n,
            row_ptr: vec![0; n + 1],
            col: Vec::new(),
            val: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.val.len()
    }

    /// Build from triplets; duplicates are summed, exact zeros dropped.
    pub fn from_triplets(n: usize, mut t: Vec<(usize, usize, Complex64)>) -> Self {
        t.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col: Vec<usize> = Vec::with_capacity(t.len());
        let mut val: Vec<Complex64> = Vec::with_capacity(t.len());
        let mut last = None;
        for (r, c, v) in t {
            if last == Some((r, c)) {
                *val.last_mut().unwrap() += v;
            } else {
                col.push(c);
                val.push(v);
                last = Some((r, c));
            }
            row_ptr[r + 1] = col.len();
        }
        for r in 0..n {
            row_ptr[r + 1] = row_ptr[r + 1].max(row_ptr[r]);
        }
        let mut out = Csr {
            n,
            row_ptr,
            col,
            val,
        };
        out.prune();
        out
    }

    fn prune(&mut self) {
        let mut col = Vec::with_capacity(self.col.len());
        let mut val = Vec::with_capacity(self.val.len());
        let mut row_ptr = vec![0usize; self.n + 1];
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.val[k] != Complex64::new(0.0, 0.0) {
                    col.push(self.col[k]);
                    val.push(self.val[k]);
                }
            }
            row_ptr[r + 1] = col.len();
        }
        self.col = col;
        self.val = val;
        self.row_ptr = row_ptr;
    }

    pub fn from_dense(m: &DMatrix<Complex64>) -> Self {
        let n = m.nrows();
        assert_eq!(n, m.ncols());
        let mut t = Vec::new();
        for r in 0..n {
            for c in 0..n {
                let v = m[(r, c)];
                if v != Complex64::new(0.0, 0.0) {
                    t.push((r, c, v));
                }
            }
        }
        Csr::from_triplets(n, t)
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                m[(r, self.col[k])] += self.val[k];
            }
        }
        m
    }

    /// y = A x.
    pub fn apply(&self, x: &[Complex64], y: &mut [Complex64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        for r in 0..self.n {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.val[k] * x[self.col[k]];
            }
            y[r] = acc;
        }
    }

    /// y += alpha * A x.
    pub fn apply_scaled_add(&self, alpha: Complex64, x: &[Complex64], y: &mut [Complex64]) {
        for r in 0..self.n {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.val[k] * x[self.col[k]];
            }
            y[r] += alpha * acc;
        }
    }

    /// <x|A|x> without materializing A x.
    pub fn expectation(&self, x: &[Complex64]) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for r in 0..self.n {
            let mut row = Complex64::new(0.0, 0.0);
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                row += self.val[k] * x[self.col[k]];
            }
            acc += x[r].conj() * row;
        }
        acc
    }

    pub fn dagger(&self) -> Csr {
        let mut t = Vec::with_capacity(self.nnz());
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                t.push((self.col[k], r, self.val[k].conj()));
            }
        }
        Csr::from_triplets(self.n, t)
    }

    /// self + alpha * other, merged per row.
    pub fn add_scaled(&self, other: &Csr, alpha: Complex64) -> Csr {
        assert_eq!(self.n, other.n);
        let mut t = Vec::with_capacity(self.nnz() + other.nnz());
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                t.push((r, self.col[k], self.val[k]));
            }
            for k in other.row_ptr[r]..other.row_ptr[r + 1] {
                t.push((r, other.col[k], alpha * other.val[k]));
            }
        }
        Csr::from_triplets(self.n, t)
    }

    pub fn scaled(&self, alpha: Complex64) -> Csr {
        let mut out = self.clone();
        for v in &mut out.val {
            *v *= alpha;
        }
        out
    }

    /// A B, used at assembly time only.
    pub fn matmul(&self, other: &Csr) -> Csr {
        assert_eq!(self.n, other.n);
        let mut t = Vec::new();
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let m = self.col[k];
                let v = self.val[k];
                for k2 in other.row_ptr[m]..other.row_ptr[m + 1] {
                    t.push((r, other.col[k2], v * other.val[k2]));
                }
            }
        }
        Csr::from_triplets(self.n, t)
    }

    /// out = A B for dense B, columns processed independently.
    pub fn apply_dense_left(&self, b: &DMatrix<Complex64>, out: &mut DMatrix<Complex64>) {
        assert_eq!(b.nrows(), self.n);
        assert_eq!(out.shape(), b.shape());
        for (bc, oc) in b
            .as_slice()
            .chunks_exact(self.n)
            .zip(out.as_mut_slice().chunks_exact_mut(self.n))
        {
            self.apply(bc, oc);
        }
    }

    /// out = B A for dense B.
    pub fn apply_dense_right(&self, b: &DMatrix<Complex64>, out: &mut DMatrix<Complex64>) {
        assert_eq!(b.ncols(), self.n);
        assert_eq!(out.shape(), b.shape());
        out.fill(Complex64::new(0.0, 0.0));
        let rows = b.nrows();
        let bs = b.as_slice();
        let os = out.as_mut_slice();
        for k in 0..self.n {
            for e in self.row_ptr[k]..self.row_ptr[k + 1] {
                let (j, v) = (self.col[e], self.val[e]);
                let src = &bs[k * rows..(k + 1) * rows];
                let dst = &mut os[j * rows..(j + 1) * rows];
                for i in 0..rows {
                    dst[i] += v * src[i];
                }
            }
        }
    }

    /// Max absolute row sum; bounds the spectral radius (Gershgorin).
    pub fn gershgorin_bound(&self) -> f64 {
        let mut best: f64 = 0.0;
        for r in 0..self.n {
            let s: f64 = (self.row_ptr[r]..self.row_ptr[r + 1])
                .map(|k| self.val[k].norm())
                .sum();
            best = best.max(s);
        }
        best
    }

    /// max |A - A^dag| over entries.
    pub fn hermiticity_error(&self) -> f64 {
        let diff = self.add_scaled(&self.dagger(), Complex64::new(-1.0, 0.0));
        diff.val.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// Sparse operator bound to a specific Fock space.
#[derive(Clone, Debug)]
pub struct Operator {
    space: FockSpace,
    csr: Csr,
}

impl Operator {
    pub fn new(space: FockSpace, csr: Csr) -> Self {
        assert_eq!(space.dim(), csr.dim());
        Operator { space, csr }
    }

    pub fn zeros(space: FockSpace) -> Self {
        Operator {
            space,
            csr: Csr::zeros(space.dim()),
        }
    }

    pub fn space(&self) -> FockSpace {
        self.space
    }

    pub fn csr(&self) -> &Csr {
        &self.csr
    }

    pub fn dim(&self) -> usize {
        self.csr.dim()
    }

    pub fn apply(&self, x: &StateVector, y: &mut StateVector) {
        debug_assert_eq!(x.space, self.space);
        self.csr.apply(x.amps.as_slice(), y.amps_mut_slice());
    }

    pub fn expectation(&self, x: &StateVector) -> Complex64 {
        debug_assert_eq!(x.space, self.space);
        self.csr.expectation(x.amps.as_slice())
    }

    pub fn dagger(&self) -> Operator {
        Operator {
            space: self.space,
            csr: self.csr.dagger(),
        }
    }

    pub fn add_scaled(&self, other: &Operator, alpha: Complex64) -> Operator {
        assert_eq!(self.space, other.space);
        Operator {
            space: self.space,
            csr: self.csr.add_scaled(&other.csr, alpha),
        }
    }

    pub fn scaled(&self, alpha: Complex64) -> Operator {
        Operator {
            space: self.space,
            csr: self.csr.scaled(alpha),
        }
    }

    pub fn matmul(&self, other: &Operator) -> Operator {
        assert_eq!(self.space, other.space);
        Operator {
            space: self.space,
            csr: self.csr.matmul(&other.csr),
        }
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        self.csr.to_dense()
    }

    pub fn hermiticity_error(&self) -> f64 {
        self.csr.hermiticity_error()
    }

    pub fn gershgorin_bound(&self) -> f64 {
        self.csr.gershgorin_bound()
    }
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Single-mode ladder operator as a dense n x n block: a|n> = sqrt(n)|n-1>.
pub fn annihilation_block(n_levels: usize) -> DMatrix<Complex64> {
    let mut m = DMatrix::zeros(n_levels, n_levels);
    for n in 1..n_levels {
        m[(n - 1, n)] = c((n as f64).sqrt(), 0.0);
    }
    m
}

/// q = (a + a^dag)/sqrt(2) as a dense single-mode block.
pub fn position_block(n_levels: usize) -> DMatrix<Complex64> {
    let a = annihilation_block(n_levels);
    (&a + a.adjoint()) / c(2f64.sqrt(), 0.0)
}

/// p = -i(a - a^dag)/sqrt(2) as a dense single-mode block.
pub fn momentum_block(n_levels: usize) -> DMatrix<Complex64> {
    let a = annihilation_block(n_levels);
    let d = &a - a.adjoint();
    d * (c(0.0, -1.0) / c(2f64.sqrt(), 0.0))
}

/// Embed a single-mode block at subsystem `sub` (identity elsewhere).
pub fn embed(space: FockSpace, sub: usize, block: &DMatrix<Complex64>) -> Operator {
    assert!(sub < space.n_subsystems());
    assert_eq!(block.nrows(), space.n_levels());
    let stride = space.stride(sub);
    let n = space.n_levels();
    let mut t = Vec::new();
    for idx in 0..space.dim() {
        let d = space.digit(idx, sub);
        for cdig in 0..n {
            let v = block[(d, cdig)];
            if v != c(0.0, 0.0) {
                let col = (idx as isize + (cdig as isize - d as isize) * stride as isize) as usize;
                t.push((idx, col, v));
            }
        }
    }
    Operator::new(space, Csr::from_triplets(space.dim(), t))
}

/// A on subsystem 0 times B on subsystem 1 (two-mode spaces only).
pub fn embed_product(
    space: FockSpace,
    block0: &DMatrix<Complex64>,
    block1: &DMatrix<Complex64>,
) -> Operator {
    assert_eq!(space.n_subsystems(), 2);
    let n = space.n_levels();
    assert_eq!(block0.nrows(), n);
    assert_eq!(block1.nrows(), n);
    let mut t = Vec::new();
    for i0 in 0..n {
        for i1 in 0..n {
            let row = i0 * n + i1;
            for j0 in 0..n {
                let v0 = block0[(i0, j0)];
                if v0 == c(0.0, 0.0) {
                    continue;
                }
                for j1 in 0..n {
                    let v1 = block1[(i1, j1)];
                    if v1 != c(0.0, 0.0) {
                        t.push((row, j0 * n + j1, v0 * v1));
                    }
                }
            }
        }
    }
    Operator::new(space, Csr::from_triplets(space.dim(), t))
}

pub fn annihilation(space: FockSpace, sub: usize) -> Operator {
    embed(space, sub, &annihilation_block(space.n_levels()))
}

pub fn creation(space: FockSpace, sub: usize) -> Operator {
    embed(space, sub, &annihilation_block(space.n_levels()).adjoint())
}

pub fn position(space: FockSpace, sub: usize) -> Operator {
    embed(space, sub, &position_block(space.n_levels()))
}

pub fn momentum(space: FockSpace, sub: usize) -> Operator {
    embed(space, sub, &momentum_block(space.n_levels()))
}

pub fn number(space: FockSpace, sub: usize) -> Operator {
    let a = annihilation_block(space.n_levels());
    embed(space, sub, &(a.adjoint() * &a))
}

/// Pure state on a Fock space. Public operations keep the norm within
/// [`NORM_TOLERANCE`] of one.
#[derive(Clone, Debug)]
pub struct StateVector {
    space: FockSpace,
    amps: DVector<Complex64>,
}

impl StateVector {
    pub fn new(space: FockSpace, amps: DVector<Complex64>) -> Result<Self> {
        if amps.len() != space.dim() {
            return Err(Error::Dimension(format!(
                "state length {} does not match space dimension {}",
                amps.len(),
                space.dim()
            )));
        }
        Ok(StateVector { space, amps })
    }

    pub fn zeros(space: FockSpace) -> Self {
        StateVector {
            space,
            amps: DVector::zeros(space.dim()),
        }
    }

    /// Fock basis state |n_0, n_1, ...>.
    pub fn basis_state(space: FockSpace, digits: &[usize]) -> Result<Self> {
        if digits.len() != space.n_subsystems() {
            return Err(Error::Dimension(
                "one occupation per subsystem required".into(),
            ));
        }
        let mut idx = 0;
        for (k, &d) in digits.iter().enumerate() {
            if d >= space.n_levels() {
                return Err(Error::Dimension(format!(
                    "occupation {d} outside {} levels",
                    space.n_levels()
                )));
            }
            idx += d * space.stride(k);
        }
        let mut v = StateVector::zeros(space);
        v.amps[idx] = c(1.0, 0.0);
        Ok(v)
    }

    pub fn space(&self) -> FockSpace {
        self.space
    }

    pub fn amps(&self) -> &DVector<Complex64> {
        &self.amps
    }

    pub fn amps_mut(&mut self) -> &mut DVector<Complex64> {
        &mut self.amps
    }

    fn amps_mut_slice(&mut self) -> &mut [Complex64] {
        self.amps.as_mut_slice()
    }

    pub fn norm(&self) -> f64 {
        self.amps.norm()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Rescale to unit norm; returns the norm prior to rescaling.
    pub fn renormalize(&mut self) -> f64 {
        let n = self.norm();
        if n > 0.0 {
            self.amps /= c(n, 0.0);
        }
        n
    }

    pub fn inner(&self, other: &StateVector) -> Complex64 {
        debug_assert_eq!(self.space, other.space);
        self.amps
            .iter()
            .zip(other.amps.iter())
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// Probability mass with any subsystem occupation in the top two levels.
    pub fn leakage(&self) -> f64 {
        let n = self.space.n_levels();
        let cut = n - 2;
        let mut acc = 0.0;
        for (idx, amp) in self.amps.iter().enumerate() {
            for k in 0..self.space.n_subsystems() {
                if self.space.digit(idx, k) >= cut {
                    acc += amp.norm_sqr();
                    break;
                }
            }
        }
        acc
    }

    /// <a_k> computed directly from the ladder structure.
    pub fn mode_annihilation_expectation(&self, k: usize) -> Complex64 {
        let stride = self.space.stride(k);
        let mut acc = c(0.0, 0.0);
        for (idx, amp) in self.amps.iter().enumerate() {
            let d = self.space.digit(idx, k);
            if d >= 1 {
                acc += self.amps[idx - stride].conj() * (d as f64).sqrt() * amp;
            }
        }
        acc
    }
}

/// Tensor product of single-mode coherent states |alpha_k>, renormalized on
/// the truncated basis. The truncation tail must stay below
/// [`DEFAULT_LEAKAGE_THRESHOLD`]; as a rule of thumb that needs
/// |alpha|^2 + 4|alpha| + 4 comfortably below n_levels for every mode.
pub fn coherent_state(space: FockSpace, alphas: &[Complex64]) -> Result<StateVector> {
    if alphas.len() != space.n_subsystems() {
        return Err(Error::Dimension(
            "one coherent amplitude per subsystem required".into(),
        ));
    }
    let n = space.n_levels();
    let mut modes: Vec<Vec<Complex64>> = Vec::with_capacity(alphas.len());
    for (k, &alpha) in alphas.iter().enumerate() {
        let mut v = vec![c(0.0, 0.0); n];
        let mut cur = c((-alpha.norm_sqr() / 2.0).exp(), 0.0);
        v[0] = cur;
        for m in 1..n {
            cur *= alpha / c((m as f64).sqrt(), 0.0);
            v[m] = cur;
        }
        let mass: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        let tail = (1.0 - mass).max(0.0);
        if tail > DEFAULT_LEAKAGE_THRESHOLD {
            return Err(Error::Truncation {
                tail,
                threshold: DEFAULT_LEAKAGE_THRESHOLD,
                time: None,
            });
        }
        let scale = c(1.0 / mass.sqrt(), 0.0);
        for z in &mut v {
            *z *= scale;
        }
        let _ = k;
        modes.push(v);
    }
    let mut amps = DVector::zeros(space.dim());
    match space.n_subsystems() {
        1 => {
            for (i, z) in modes[0].iter().enumerate() {
                amps[i] = *z;
            }
        }
        2 => {
            for i0 in 0..n {
                for i1 in 0..n {
                    amps[i0 * n + i1] = modes[0][i0] * modes[1][i1];
                }
            }
        }
        _ => unreachable!(),
    }
    StateVector::new(space, amps)
}

/// Hermitian, unit-trace matrix with spectrum validation for entropies.
#[derive(Clone, Debug)]
pub struct DensityMatrix {
    m: DMatrix<Complex64>,
}

impl DensityMatrix {
    pub fn new(m: DMatrix<Complex64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::Dimension("density matrix must be square".into()));
        }
        let herm = (&m - m.adjoint())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        if herm > 1e-10 {
            return Err(Error::Numerical(format!(
                "density matrix hermiticity error {herm:.3e}"
            )));
        }
        let tr: Complex64 = m.diagonal().iter().sum();
        if (tr.re - 1.0).abs() > 1e-8 || tr.im.abs() > 1e-8 {
            return Err(Error::Numerical(format!(
                "density matrix trace {tr} deviates from one"
            )));
        }
        Ok(DensityMatrix { m })
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.m
    }

    pub fn trace(&self) -> f64 {
        self.m.diagonal().iter().map(|z| z.re).sum()
    }

    /// Real spectrum in descending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self
            .m
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
        ev
    }

    /// S = -Tr rho ln rho in nats. Eigenvalues in [-1e-8, 0) are clamped to
    /// zero; anything lower is a numerical fault.
    pub fn von_neumann_entropy(&self) -> Result<f64> {
        let mut s = 0.0;
        for lam in self.eigenvalues() {
            if lam < EIGENVALUE_FAULT {
                return Err(Error::Numerical(format!(
                    "density matrix eigenvalue {lam:.3e} below {EIGENVALUE_FAULT:.0e}"
                )));
            }
            if lam > 0.0 {
                s -= lam * lam.ln();
            }
        }
        Ok(s)
    }
}

/// Reduced density matrix of one mode of a two-mode pure state.
pub fn partial_trace(psi: &StateVector, keep: usize) -> Result<DensityMatrix> {
    let space = psi.space();
    if space.n_subsystems() != 2 {
        return Err(Error::Dimension(
            "partial trace needs a two-mode state".into(),
        ));
    }
    if keep > 1 {
        return Err(Error::Dimension("keep must be 0 or 1".into()));
    }
    let n = space.n_levels();
    let a = psi.amps();
    let mut rho = DMatrix::zeros(n, n);
    for i in 0..n {
        for ip in 0..n {
            let mut acc = c(0.0, 0.0);
            for j in 0..n {
                let (x, y) = if keep == 0 {
                    (a[i * n + j], a[ip * n + j])
                } else {
                    (a[j * n + i], a[j * n + ip])
                };
                acc += x * y.conj();
            }
            rho[(i, ip)] = acc;
        }
    }
    DensityMatrix::new(rho)
}

/// Reduced density matrix of one mode of a two-mode mixed state.
pub fn partial_trace_mixed(
    rho: &DMatrix<Complex64>,
    space: FockSpace,
    keep: usize,
) -> Result<DMatrix<Complex64>> {
    if space.n_subsystems() != 2 || rho.nrows() != space.dim() {
        return Err(Error::Dimension(
            "partial trace needs a two-mode density matrix".into(),
        ));
    }
    let n = space.n_levels();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for ip in 0..n {
            let mut acc = c(0.0, 0.0);
            for j in 0..n {
                acc += if keep == 0 {
                    rho[(i * n + j, ip * n + j)]
                } else {
                    rho[(j * n + i, j * n + ip)]
                };
            }
            out[(i, ip)] = acc;
        }
    }
    Ok(out)
}

/// E = S(rho_1) + S(rho_2) for a pure two-mode state, in nats.
pub fn entanglement_entropy(psi: &StateVector) -> Result<f64> {
    let s0 = partial_trace(psi, 0)?.von_neumann_entropy()?;
    let s1 = partial_trace(psi, 1)?.von_neumann_entropy()?;
    Ok(s0 + s1)
}

/// Displaced-frame bookkeeping: the physical state is D(f_0) x D(f_1) |psi>,
/// so physical <a_k> = f_k + <a_k> of the stored state.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    offsets: Vec<Complex64>,
}

impl Frame {
    pub fn zero(n_subsystems: usize) -> Self {
        Frame {
            offsets: vec![c(0.0, 0.0); n_subsystems],
        }
    }

    pub fn new(offsets: Vec<Complex64>) -> Self {
        Frame { offsets }
    }

    pub fn offsets(&self) -> &[Complex64] {
        &self.offsets
    }

    pub fn offset(&self, k: usize) -> Complex64 {
        self.offsets[k]
    }

    pub fn is_zero(&self) -> bool {
        self.offsets.iter().all(|z| *z == c(0.0, 0.0))
    }

    /// Frame contribution to <q_k>.
    pub fn q_shift(&self, k: usize) -> f64 {
        2f64.sqrt() * self.offsets[k].re
    }

    /// Frame contribution to <p_k>.
    pub fn p_shift(&self, k: usize) -> f64 {
        2f64.sqrt() * self.offsets[k].im
    }
}

/// Apply exp(d a^dag - d* a) on subsystem `sub` of the raw amplitude vector.
/// Taylor series with argument scaling; exactly unitary up to roundoff.
fn displace_mode(space: FockSpace, sub: usize, d: Complex64, amps: &mut DVector<Complex64>) {
    if d == c(0.0, 0.0) {
        return;
    }
    let n = space.n_levels();
    let stride = space.stride(sub);
    // ||d a^dag - d* a|| <= 2 |d| sqrt(n); halve until the series is short.
    let bound = 2.0 * d.norm() * (n as f64).sqrt();
    let mut halvings = 0u32;
    while bound / 2f64.powi(halvings as i32) > 0.5 {
        halvings += 1;
    }
    let dd = d / c(2f64.powi(halvings as i32), 0.0);
    let reps = 1u64 << halvings;

    let dim = space.dim();
    let mut term = DVector::zeros(dim);
    let mut next = DVector::zeros(dim);
    for _ in 0..reps {
        term.copy_from(amps);
        let mut k = 1.0;
        loop {
            // next = (dd a^dag - dd* a) term / k
            for idx in 0..dim {
                let dig = space.digit(idx, sub);
                let mut acc = c(0.0, 0.0);
                if dig >= 1 {
                    acc += dd * c((dig as f64).sqrt(), 0.0) * term[idx - stride];
                }
                if dig + 1 < n {
                    acc -= dd.conj() * c(((dig + 1) as f64).sqrt(), 0.0) * term[idx + stride];
                }
                next[idx] = acc / c(k, 0.0);
            }
            std::mem::swap(&mut term, &mut next);
            *amps += &term;
            if term.norm() < 1e-18 {
                break;
            }
            k += 1.0;
        }
    }
}

/// Displace every mode of `psi` by `d`, i.e. apply the tensor product of
/// D(d_k) = exp(d_k a_k^dag - d_k* a_k).
pub fn displace(psi: &StateVector, d: &[Complex64]) -> Result<StateVector> {
    if d.len() != psi.space().n_subsystems() {
        return Err(Error::Dimension(
            "one displacement per subsystem required".into(),
        ));
    }
    let mut out = psi.clone();
    for (k, &dk) in d.iter().enumerate() {
        displace_mode(out.space, k, dk, &mut out.amps);
    }
    Ok(out)
}

/// Move the frame onto the state centroid: returns (psi', frame') with
/// <a_k> = 0 for psi' and frame'_k = frame_k + old <a_k>. Physical
/// expectation values and the entanglement entropy are unchanged. Errors if
/// the displacement pushes tail mass above `leakage_threshold`.
pub fn recenter(
    psi: &StateVector,
    frame: &Frame,
    leakage_threshold: f64,
) -> Result<(StateVector, Frame)> {
    let nsub = psi.space().n_subsystems();
    let mut d = Vec::with_capacity(nsub);
    let mut offsets = frame.offsets.clone();
    for k in 0..nsub {
        let a = psi.mode_annihilation_expectation(k);
        d.push(-a);
        offsets[k] += a;
    }
    let shifted = displace(psi, &d)?;
    let tail = shifted.leakage();
    if tail > leakage_threshold {
        return Err(Error::Truncation {
            tail,
            threshold: leakage_threshold,
            time: None,
        });
    }
    Ok((shifted, Frame::new(offsets)))
}
