//! Operator-space kernel.
//!
//! Dense complex matrices viewed as vectors of a real inner-product space
//! with `(F|G) = ½ Tr(F†G + G†F)`. Everything the dynamics needs is built on
//! top of this: spectral utilities for density operators, covariances, Gram
//! determinants and orthogonal projections onto constraint manifolds.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Result, SeaError};

/// Dense complex square matrix.
pub type OperatorMatrix = DMatrix<Complex64>;

/// Largest supported Hilbert-space dimension.
pub const MAX_DIM: usize = 64;

const HERMITIAN_TOL: f64 = 1e-10;
const TRACE_TOL: f64 = 1e-10;

/// Physical constants.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct UnitSystem {
    pub hbar: f64,
    pub k_b: f64,
}

impl Default for UnitSystem {
    fn default() -> Self {
        Self { hbar: 1.0, k_b: 1.0 }
    }
}

impl UnitSystem {
    pub fn new(hbar: f64, k_b: f64) -> Result<Self> {
        if !(hbar > 0.0 && hbar.is_finite()) {
            return Err(SeaError::InvalidConfig(format!("hbar must be positive, got {hbar}")));
        }
        if !(k_b > 0.0 && k_b.is_finite()) {
            return Err(SeaError::InvalidConfig(format!("k_B must be positive, got {k_b}")));
        }
        Ok(Self { hbar, k_b })
    }
}

/// Numerical thresholds shared by all modules.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ToleranceSet {
    /// Eigenvalues of magnitude below this are treated as exact zeros.
    pub rank_epsilon: f64,
    /// Residual norm below which a vector is dropped from a manifold basis.
    pub manifold_epsilon: f64,
    /// `(D|D)` below this marks a nondissipative state.
    pub equilibrium_epsilon: f64,
    pub drift_epsilon: f64,
}

impl ToleranceSet {
    pub fn for_dim(dim: usize) -> Self {
        Self {
            rank_epsilon: 1e-12 * dim.max(1) as f64,
            manifold_epsilon: 1e-10,
            equilibrium_epsilon: 1e-14,
            drift_epsilon: 1e-9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("rank_epsilon", self.rank_epsilon),
            ("manifold_epsilon", self.manifold_epsilon),
            ("equilibrium_epsilon", self.equilibrium_epsilon),
            ("drift_epsilon", self.drift_epsilon),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SeaError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// elementary helpers

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn identity(dim: usize) -> OperatorMatrix {
    OperatorMatrix::identity(dim, dim)
}

pub fn zeros(dim: usize) -> OperatorMatrix {
    OperatorMatrix::zeros(dim, dim)
}

/// Real diagonal matrix.
pub fn diag(values: &[f64]) -> OperatorMatrix {
    let n = values.len();
    OperatorMatrix::from_fn(n, n, |i, j| if i == j { c(values[i], 0.0) } else { c(0.0, 0.0) })
}

/// Builds a matrix from real row-major entries.
pub fn real_matrix(dim: usize, entries: &[f64]) -> OperatorMatrix {
    assert_eq!(entries.len(), dim * dim);
    OperatorMatrix::from_fn(dim, dim, |i, j| c(entries[i * dim + j], 0.0))
}

pub fn trace(m: &OperatorMatrix) -> Complex64 {
    m.diagonal().iter().sum()
}

pub fn commutator(a: &OperatorMatrix, b: &OperatorMatrix) -> OperatorMatrix {
    a * b - b * a
}

pub fn anticommutator(a: &OperatorMatrix, b: &OperatorMatrix) -> OperatorMatrix {
    a * b + b * a
}

pub fn kron(a: &OperatorMatrix, b: &OperatorMatrix) -> OperatorMatrix {
    a.kronecker(b)
}

pub fn hermitian_part(m: &OperatorMatrix) -> OperatorMatrix {
    (m + m.adjoint()) * c(0.5, 0.0)
}

/// Largest entry modulus.
pub fn max_abs(m: &OperatorMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Spectral (operator) norm.
pub fn op_norm(m: &OperatorMatrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    // largest eigenvalue of m†m; nalgebra's SVD can lose accuracy on
    // matrices with exactly zero singular values
    let g = hermitian_part(&(m.adjoint() * m));
    hermitian_eigen(&g).0.first().copied().unwrap_or(0.0).max(0.0).sqrt()
}

pub fn hermiticity_deviation(m: &OperatorMatrix) -> f64 {
    max_abs(&(m - m.adjoint()))
}

pub fn ensure_square(m: &OperatorMatrix) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(SeaError::NotSquare { rows: m.nrows(), cols: m.ncols() });
    }
    Ok(m.nrows())
}

pub fn ensure_same_dim(a: &OperatorMatrix, b: &OperatorMatrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(SeaError::DimensionMismatch { expected: a.nrows(), found: b.nrows() });
    }
    Ok(())
}

pub fn ensure_hermitian(m: &OperatorMatrix) -> Result<()> {
    ensure_square(m)?;
    let dev = hermiticity_deviation(m);
    if dev > HERMITIAN_TOL * max_abs(m).max(1.0) {
        return Err(SeaError::NotHermitian { deviation: dev });
    }
    Ok(())
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues in descending order.
pub fn hermitian_eigen(m: &OperatorMatrix) -> (Vec<f64>, OperatorMatrix) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(hermitian_part(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = OperatorMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    (values, vectors)
}

/// `V diag(values) V†`.
pub fn from_spectrum(vectors: &OperatorMatrix, values: &[f64]) -> OperatorMatrix {
    let n = vectors.nrows();
    let mut scaled = vectors.clone();
    for (j, &v) in values.iter().enumerate() {
        for i in 0..n {
            scaled[(i, j)] *= v;
        }
    }
    scaled * vectors.adjoint()
}

/// Applies a real function to the spectrum of a Hermitian matrix.
pub fn spectral_map(m: &OperatorMatrix, f: impl Fn(f64) -> f64) -> OperatorMatrix {
    let (values, vectors) = hermitian_eigen(m);
    let mapped: Vec<f64> = values.into_iter().map(f).collect();
    from_spectrum(&vectors, &mapped)
}

/// `exp(-i t H / ħ)` for Hermitian `H`.
pub fn unitary_propagator(h: &OperatorMatrix, t: f64, hbar: f64) -> OperatorMatrix {
    let (values, vectors) = hermitian_eigen(h);
    let n = h.nrows();
    let mut scaled = vectors.clone();
    for (j, &e) in values.iter().enumerate() {
        let phase = Complex64::from_polar(1.0, -t * e / hbar);
        for i in 0..n {
            scaled[(i, j)] *= phase;
        }
    }
    scaled * vectors.adjoint()
}

// ---------------------------------------------------------------------------
// real inner-product geometry

/// `(F|G) = ½ Tr(F†G + G†F)` without dimension checks.
pub fn inner(f: &OperatorMatrix, g: &OperatorMatrix) -> f64 {
    f.iter().zip(g.iter()).map(|(a, b)| a.re * b.re + a.im * b.im).sum()
}

/// The real scalar product `½ Tr(F†G + G†F)`.
pub fn real_inner(f: &OperatorMatrix, g: &OperatorMatrix) -> Result<f64> {
    ensure_same_dim(f, g)?;
    Ok(inner(f, g))
}

pub fn norm(f: &OperatorMatrix) -> f64 {
    inner(f, f).sqrt()
}

/// Matrix of pairwise scalar products.
pub fn gram_matrix(vectors: &[OperatorMatrix]) -> DMatrix<f64> {
    let n = vectors.len();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = inner(&vectors[i], &vectors[j]);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

fn check_family(vectors: &[OperatorMatrix]) -> Result<()> {
    let first = vectors.first().ok_or_else(|| SeaError::InvalidConfig("empty operator list".into()))?;
    for v in vectors {
        ensure_same_dim(first, v)?;
    }
    Ok(())
}

/// Gram determinant of a family of operators. Nonnegative.
pub fn gram_det(vectors: &[OperatorMatrix]) -> Result<f64> {
    check_family(vectors)?;
    Ok(gram_matrix(vectors).determinant().max(0.0))
}

/// Orthonormal family together with the indices of the inputs that were kept.
#[derive(Debug, Clone)]
pub struct Orthonormalized {
    pub basis: Vec<OperatorMatrix>,
    pub retained: Vec<usize>,
}

/// Rank-revealing modified Gram–Schmidt under the real scalar product.
///
/// Each output has positive overlap with the input it came from. Inputs whose
/// residual norm falls below `tol.manifold_epsilon` are dropped.
pub fn orthonormalize(vectors: &[OperatorMatrix], tol: &ToleranceSet) -> Orthonormalized {
    let mut basis: Vec<OperatorMatrix> = Vec::with_capacity(vectors.len());
    let mut retained = Vec::with_capacity(vectors.len());
    for (idx, v) in vectors.iter().enumerate() {
        let mut w = v.clone();
        // two sweeps keep orthogonality at machine precision
        for _ in 0..2 {
            for a in &basis {
                let coef = inner(a, &w);
                w -= a * c(coef, 0.0);
            }
        }
        let n = norm(&w);
        if n < tol.manifold_epsilon {
            continue;
        }
        w /= c(n, 0.0);
        basis.push(w);
        retained.push(idx);
    }
    Orthonormalized { basis, retained }
}

/// Removes from `t` an already orthonormal basis' components.
pub fn remove_components(t: &OperatorMatrix, orthonormal: &[OperatorMatrix]) -> OperatorMatrix {
    let mut r = t.clone();
    for _ in 0..2 {
        for a in orthonormal {
            let coef = inner(a, &r);
            r -= a * c(coef, 0.0);
        }
    }
    r
}

/// Component of `t` orthogonal to the real span of `basis`.
pub fn project_orthogonal(t: &OperatorMatrix, basis: &[OperatorMatrix], tol: &ToleranceSet) -> OperatorMatrix {
    let ortho = orthonormalize(basis, tol);
    remove_components(t, &ortho.basis)
}

/// Determinant expansion of the orthogonal component:
///
/// ```text
///        | t          b_0        ...  b_n        |
///        | (t|b_0)    (b_0|b_0)  ...  (b_n|b_0)  |
///  det   |   ...                                 |  /  Γ(b_0..b_n)
/// ```
///
/// expanded along the operator row. Requires a linearly independent basis.
pub fn gram_expansion(t: &OperatorMatrix, basis: &[OperatorMatrix]) -> Result<OperatorMatrix> {
    ensure_square(t)?;
    for b in basis {
        ensure_same_dim(t, b)?;
    }
    let n = basis.len();
    if n == 0 {
        return Ok(t.clone());
    }
    let gamma = gram_matrix(basis).determinant();
    if gamma <= 0.0 || !gamma.is_finite() {
        return Err(SeaError::DegenerateGram(format!("Γ = {gamma:.3e}")));
    }
    // numeric block: rows i = 0..n, columns: 0 -> (t|b_i), k+1 -> (b_k|b_i)
    let mut numeric = DMatrix::<f64>::zeros(n, n + 1);
    for i in 0..n {
        numeric[(i, 0)] = inner(t, &basis[i]);
        for k in 0..n {
            numeric[(i, k + 1)] = inner(&basis[k], &basis[i]);
        }
    }
    let mut out = t * c(1.0, 0.0);
    for col in 1..=n {
        let minor = numeric.clone().remove_column(col);
        let cof = minor.determinant();
        let sign = if col % 2 == 0 { 1.0 } else { -1.0 };
        out += &basis[col - 1] * c(sign * cof / gamma, 0.0);
    }
    Ok(out)
}

/// `Γ(t, basis) / Γ(basis)`, the squared norm of the orthogonal component.
pub fn gram_ratio(t: &OperatorMatrix, basis: &[OperatorMatrix]) -> Result<f64> {
    let denom = gram_matrix(basis).determinant();
    if basis.is_empty() {
        return Ok(inner(t, t));
    }
    if denom <= 0.0 || !denom.is_finite() {
        return Err(SeaError::DegenerateGram(format!("Γ = {denom:.3e}")));
    }
    let mut all = Vec::with_capacity(basis.len() + 1);
    all.push(t.clone());
    all.extend(basis.iter().cloned());
    Ok(gram_matrix(&all).determinant() / denom)
}

/// Real vectorization `[Re F_00, Im F_00, Re F_01, ...]` (row-major).
/// Euclidean dot products of these vectors reproduce [`inner`].
pub fn real_vectorize(f: &OperatorMatrix) -> DVector<f64> {
    let n = f.nrows();
    let mut v = DVector::zeros(2 * n * f.ncols());
    let mut k = 0;
    for i in 0..n {
        for j in 0..f.ncols() {
            v[k] = f[(i, j)].re;
            v[k + 1] = f[(i, j)].im;
            k += 2;
        }
    }
    v
}

/// Minimum-norm least-squares fit of `target` by real combinations of `columns`.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub coefficients: Vec<f64>,
    pub residual: f64,
    pub rank: usize,
}

/// Thin SVD `a = U diag(s) Vᵀ`, checked by reconstruction. nalgebra's
/// bidiagonal iteration occasionally fails to converge on matrices with
/// exactly zero singular values; the transpose is tried next, then the
/// eigendecomposition of `aᵀa`.
pub fn real_svd(a: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let scale = a.norm().max(f64::MIN_POSITIVE);
    let accurate = |u: &DMatrix<f64>, s: &DVector<f64>, v: &DMatrix<f64>| {
        (u * DMatrix::from_diagonal(s) * v.transpose() - a).norm() <= 1e-12 * scale
    };
    let svd = a.clone().svd(true, true);
    let (u, v) = (svd.u.expect("u requested"), svd.v_t.expect("v requested").transpose());
    if accurate(&u, &svd.singular_values, &v) {
        return (u, svd.singular_values, v);
    }
    let svd = a.transpose().svd(true, true);
    let (u, v) = (svd.v_t.expect("v requested").transpose(), svd.u.expect("u requested"));
    if accurate(&u, &svd.singular_values, &v) {
        return (u, svd.singular_values, v);
    }
    let eig = nalgebra::SymmetricEigen::new(a.transpose() * a);
    let s = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let smax = s.max();
    let mut u = DMatrix::zeros(a.nrows(), s.len());
    for k in 0..s.len() {
        if s[k] > 1e-14 * smax {
            u.set_column(k, &(a * eig.eigenvectors.column(k) / s[k]));
        }
    }
    (u, s, eig.eigenvectors)
}

/// Minimum-norm solution of the symmetric system `m x = b`, discarding
/// eigenvalues below `rel_cut` times the largest magnitude.
pub fn symmetric_solve(m: &DMatrix<f64>, b: &DVector<f64>, rel_cut: f64) -> DVector<f64> {
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    let lmax = eig.eigenvalues.amax();
    let mut x = DVector::zeros(b.len());
    for k in 0..eig.eigenvalues.len() {
        let l = eig.eigenvalues[k];
        if l.abs() > rel_cut * lmax {
            let v = eig.eigenvectors.column(k);
            x += v * (v.dot(b) / l);
        }
    }
    x
}

pub fn real_least_squares(columns: &[OperatorMatrix], target: &OperatorMatrix) -> LeastSquares {
    if columns.is_empty() {
        return LeastSquares { coefficients: vec![], residual: norm(target), rank: 0 };
    }
    let rows = 2 * target.nrows() * target.ncols();
    let mut a = DMatrix::<f64>::zeros(rows, columns.len());
    for (j, col) in columns.iter().enumerate() {
        a.set_column(j, &real_vectorize(col));
    }
    let b = real_vectorize(target);
    let (u, sv, v) = real_svd(&a);
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let cut = smax * 1e-12 * (rows.max(columns.len()) as f64);
    let rank = sv.iter().filter(|&&s| s > cut).count();
    let mut x = DVector::zeros(columns.len());
    for k in 0..sv.len() {
        if sv[k] > cut {
            x += v.column(k) * (u.column(k).dot(&b) / sv[k]);
        }
    }
    let residual = (&a * &x - &b).norm();
    LeastSquares { coefficients: x.iter().cloned().collect(), residual, rank }
}

// ---------------------------------------------------------------------------
// density operators

/// A density operator with its cached spectral data.
#[derive(Debug, Clone)]
pub struct SpectralState {
    rho: OperatorMatrix,
    eigenvalues: Vec<f64>,
    eigenvectors: OperatorMatrix,
    sqrt_rho: OperatorMatrix,
    range_projector: OperatorMatrix,
    log_on_range: OperatorMatrix,
    entropy_op: OperatorMatrix,
    rank_epsilon: f64,
    k_b: f64,
}

/// Validates and decomposes a density operator.
pub fn spectral_decompose(rho: &OperatorMatrix, units: &UnitSystem, tol: &ToleranceSet) -> Result<SpectralState> {
    SpectralState::new(rho, units, tol)
}

impl SpectralState {
    /// Strict constructor: Hermitian, unit trace, no eigenvalue below `-rank_epsilon`.
    pub fn new(rho: &OperatorMatrix, units: &UnitSystem, tol: &ToleranceSet) -> Result<Self> {
        let dim = ensure_square(rho)?;
        if dim == 0 || dim > MAX_DIM {
            return Err(SeaError::Unsupported(format!("dimension {dim} outside 1..={MAX_DIM}")));
        }
        ensure_hermitian(rho)?;
        let tr = trace(rho);
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(SeaError::TraceNotUnit { trace: tr.re });
        }
        let (values, vectors) = hermitian_eigen(rho);
        let min = values.last().copied().unwrap_or(0.0);
        if min < -tol.rank_epsilon {
            return Err(SeaError::NegativeEigenvalue { value: min, threshold: tol.rank_epsilon });
        }
        Ok(Self::assemble(hermitian_part(rho), values, vectors, tol.rank_epsilon, units.k_b))
    }

    /// Lenient constructor for intermediate integrator stages: negative
    /// eigenvalues are clipped to zero and the trace is not checked.
    pub fn clipped(rho: &OperatorMatrix, units: &UnitSystem, tol: &ToleranceSet) -> Result<Self> {
        ensure_square(rho)?;
        let herm = hermitian_part(rho);
        let (values, vectors) = hermitian_eigen(&herm);
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SeaError::Overflow("non-finite eigenvalue in state".into()));
        }
        Ok(Self::assemble(herm, values, vectors, tol.rank_epsilon, units.k_b))
    }

    fn assemble(
        rho: OperatorMatrix,
        mut values: Vec<f64>,
        vectors: OperatorMatrix,
        rank_epsilon: f64,
        k_b: f64,
    ) -> Self {
        for v in values.iter_mut() {
            if *v < rank_epsilon {
                *v = 0.0;
            }
        }
        let sqrt: Vec<f64> = values.iter().map(|&p| p.sqrt()).collect();
        let proj: Vec<f64> = values.iter().map(|&p| if p > 0.0 { 1.0 } else { 0.0 }).collect();
        let logs: Vec<f64> = values.iter().map(|&p| if p > 0.0 { p.ln() } else { 0.0 }).collect();
        let sqrt_rho = from_spectrum(&vectors, &sqrt);
        let range_projector = from_spectrum(&vectors, &proj);
        let log_on_range = from_spectrum(&vectors, &logs);
        let entropy_op = &log_on_range * c(-k_b, 0.0);
        Self {
            rho,
            eigenvalues: values,
            eigenvectors: vectors,
            sqrt_rho,
            range_projector,
            log_on_range,
            entropy_op,
            rank_epsilon,
            k_b,
        }
    }

    pub fn rho(&self) -> &OperatorMatrix {
        &self.rho
    }
    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }
    /// Eigenvalues in descending order, thresholded.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }
    pub fn eigenvectors(&self) -> &OperatorMatrix {
        &self.eigenvectors
    }
    pub fn sqrt_rho(&self) -> &OperatorMatrix {
        &self.sqrt_rho
    }
    /// Projector `B` onto the range of ρ.
    pub fn range_projector(&self) -> &OperatorMatrix {
        &self.range_projector
    }
    /// `B ln ρ`: the logarithm on the range, zero on the kernel.
    pub fn log_on_range(&self) -> &OperatorMatrix {
        &self.log_on_range
    }
    /// `S = -k_B B ln ρ`.
    pub fn entropy_op(&self) -> &OperatorMatrix {
        &self.entropy_op
    }
    pub fn rank_epsilon(&self) -> f64 {
        self.rank_epsilon
    }
    pub fn k_b(&self) -> f64 {
        self.k_b
    }
    pub fn rank(&self) -> usize {
        self.eigenvalues.iter().filter(|&&p| p > 0.0).count()
    }
    pub fn is_full_rank(&self) -> bool {
        self.rank() == self.dim()
    }
    pub fn purity(&self) -> f64 {
        self.eigenvalues.iter().map(|p| p * p).sum()
    }

    /// `s(ρ) = -k_B Tr(ρ ln ρ)`.
    pub fn entropy(&self) -> f64 {
        -self.k_b * self.eigenvalues.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
    }

    /// `Tr(ρF)`.
    pub fn mean(&self, f: &OperatorMatrix) -> f64 {
        (&self.rho * f).trace().re
    }

    /// `√ρ F`.
    pub fn weighted(&self, f: &OperatorMatrix) -> OperatorMatrix {
        &self.sqrt_rho * f
    }

    /// `ΔF = F - Tr(ρF) I`.
    pub fn deviation(&self, f: &OperatorMatrix) -> OperatorMatrix {
        let m = self.mean(f);
        f - identity(f.nrows()) * c(m, 0.0)
    }

    /// `⟨ΔF,ΔG⟩ = ½ Tr(ρ{ΔF,ΔG})`.
    pub fn cov(&self, f: &OperatorMatrix, g: &OperatorMatrix) -> f64 {
        let df = self.deviation(f);
        let dg = self.deviation(g);
        0.5 * (&self.rho * anticommutator(&df, &dg)).trace().re
    }
}

/// `Tr(ρF)`.
pub fn mean_value(state: &SpectralState, f: &OperatorMatrix) -> Result<f64> {
    ensure_same_dim(state.rho(), f)?;
    Ok(state.mean(f))
}

/// `½ Tr(ρ{ΔF,ΔG})`.
pub fn covariance(state: &SpectralState, f: &OperatorMatrix, g: &OperatorMatrix) -> Result<f64> {
    ensure_same_dim(state.rho(), f)?;
    ensure_same_dim(state.rho(), g)?;
    Ok(state.cov(f, g))
}

/// Trace norm `Tr|A - B|` of the difference of two Hermitian operators.
pub fn trace_norm_distance(a: &OperatorMatrix, b: &OperatorMatrix) -> f64 {
    let (values, _) = hermitian_eigen(&(a - b));
    values.iter().map(|v| v.abs()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pauli_x() -> OperatorMatrix {
        real_matrix(2, &[0.0, 1.0, 1.0, 0.0])
    }
    fn pauli_y() -> OperatorMatrix {
        OperatorMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(0.0, 0.0)])
    }
    fn units() -> UnitSystem {
        UnitSystem::default()
    }

    #[test]
    fn inner_product_examples() {
        assert_eq!(real_inner(&identity(2), &identity(2)).unwrap(), 2.0);
        assert_eq!(real_inner(&pauli_x(), &pauli_y()).unwrap(), 0.0);
        let f = real_matrix(2, &[1.0, 2.0, 2.0, 1.0]);
        assert_eq!(real_inner(&f, &f).unwrap(), 10.0);
        assert!(matches!(real_inner(&identity(2), &identity(3)), Err(SeaError::DimensionMismatch { .. })));
    }

    #[test]
    fn decompose_pure_state() {
        let s = spectral_decompose(&diag(&[1.0, 0.0]), &units(), &ToleranceSet::for_dim(2)).unwrap();
        assert_abs_diff_eq!(max_abs(&(s.sqrt_rho() - diag(&[1.0, 0.0]))), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(max_abs(&(s.range_projector() - diag(&[1.0, 0.0]))), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(max_abs(s.entropy_op()), 0.0, epsilon = 1e-14);
        assert_eq!(s.rank(), 1);
    }

    #[test]
    fn decompose_maximally_mixed() {
        let u = UnitSystem::new(1.0, 2.0).unwrap();
        let s = spectral_decompose(&diag(&[0.5, 0.5]), &u, &ToleranceSet::for_dim(2)).unwrap();
        let expected = identity(2) * c(2.0 * 2f64.ln(), 0.0);
        assert_abs_diff_eq!(max_abs(&(s.entropy_op() - expected)), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn decompose_analytic_logarithm() {
        let s = spectral_decompose(&diag(&[0.9, 0.1]), &units(), &ToleranceSet::for_dim(2)).unwrap();
        let (vals, _) = hermitian_eigen(s.entropy_op());
        assert_abs_diff_eq!(vals[0], -(0.1f64).ln(), epsilon = 1e-13);
        assert_abs_diff_eq!(vals[1], -(0.9f64).ln(), epsilon = 1e-13);
    }

    #[test]
    fn decompose_rejects_invalid_states() {
        let tol = ToleranceSet::for_dim(2);
        let non_herm = OperatorMatrix::from_row_slice(2, 2, &[c(0.5, 0.0), c(0.1, 0.0), c(0.2, 0.0), c(0.5, 0.0)]);
        assert!(matches!(spectral_decompose(&non_herm, &units(), &tol), Err(SeaError::NotHermitian { .. })));
        assert!(matches!(spectral_decompose(&diag(&[0.7, 0.7]), &units(), &tol), Err(SeaError::TraceNotUnit { .. })));
        assert!(matches!(
            spectral_decompose(&diag(&[1.1, -0.1]), &units(), &tol),
            Err(SeaError::NegativeEigenvalue { .. })
        ));
    }

    #[test]
    fn mean_and_covariance_examples() {
        let tol = ToleranceSet::for_dim(3);
        let s = spectral_decompose(&diag(&[0.5, 0.1, 0.4]), &units(), &tol).unwrap();
        assert_abs_diff_eq!(mean_value(&s, &identity(3)).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(mean_value(&s, &diag(&[0.0, 1.0, 2.0])).unwrap(), 0.9, epsilon = 1e-15);
        assert_abs_diff_eq!(covariance(&s, &identity(3), &diag(&[3.0, 1.0, 0.0])).unwrap(), 0.0, epsilon = 1e-15);

        let qubit_a = real_matrix(2, &[0.7, 0.2, 0.2, 0.3]);
        let h = diag(&[0.0, 1.0]);
        let q = spectral_decompose(&qubit_a, &units(), &ToleranceSet::for_dim(2)).unwrap();
        assert_abs_diff_eq!(q.mean(&h), 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(q.cov(&h, &h), 0.21, epsilon = 1e-14);

        let eig = spectral_decompose(&diag(&[0.0, 1.0]), &units(), &ToleranceSet::for_dim(2)).unwrap();
        assert_abs_diff_eq!(eig.cov(&h, &h), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn gram_det_examples() {
        let a = diag(&[1.0, 0.0]);
        let b = diag(&[0.0, 1.0]);
        assert_abs_diff_eq!(gram_det(&[a.clone(), b.clone()]).unwrap(), 1.0, epsilon = 1e-15);
        let v = real_matrix(2, &[1.0, 2.0, 0.5, -1.0]);
        assert_abs_diff_eq!(gram_det(&[v.clone(), &v * c(2.0, 0.0)]).unwrap(), 0.0, epsilon = 1e-12);
        let w = pauli_x() + diag(&[0.3, 0.0]);
        let expected = inner(&v, &v) * inner(&w, &w) - inner(&v, &w).powi(2);
        assert_abs_diff_eq!(gram_det(&[v, w]).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn orthonormalize_detects_dependence() {
        let tol = ToleranceSet::for_dim(2);
        let v = real_matrix(2, &[1.0, 2.0, 0.5, -1.0]);
        let w = pauli_y();
        let out = orthonormalize(&[v.clone(), &v * c(2.0, 0.0), w], &tol);
        assert_eq!(out.retained, vec![0, 2]);
        assert_eq!(out.basis.len(), 2);
        let g = gram_matrix(&out.basis);
        assert_abs_diff_eq!((g - DMatrix::identity(2, 2)).abs().max(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn orthonormalize_keeps_orthonormal_input() {
        let tol = ToleranceSet::for_dim(2);
        let s = 0.5f64.sqrt();
        let input = vec![identity(2) * c(s, 0.0), pauli_x() * c(s, 0.0), pauli_y() * c(s, 0.0)];
        let out = orthonormalize(&input, &tol);
        for (a, b) in out.basis.iter().zip(&input) {
            assert_abs_diff_eq!(max_abs(&(a - b)), 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn orthonormalize_reproduces_delta_h_direction() {
        // A_2 = ΔH / sqrt⟨ΔH,ΔH⟩ for the pair {√ρ I, √ρ H}
        let tol = ToleranceSet::for_dim(2);
        let s = spectral_decompose(&real_matrix(2, &[0.7, 0.2, 0.2, 0.3]), &units(), &tol).unwrap();
        let h = diag(&[0.0, 1.0]);
        let out = orthonormalize(&[s.sqrt_rho().clone(), s.weighted(&h)], &tol);
        assert_eq!(out.basis.len(), 2);
        let expected = s.weighted(&s.deviation(&h)) / c(s.cov(&h, &h).sqrt(), 0.0);
        assert_abs_diff_eq!(max_abs(&(&out.basis[1] - expected)), 0.0, epsilon = 1e-13);
        assert_abs_diff_eq!(max_abs(&(&out.basis[0] - s.sqrt_rho())), 0.0, epsilon = 1e-13);
    }

    #[test]
    fn projection_trivial_cases() {
        let tol = ToleranceSet::for_dim(2);
        let basis = vec![identity(2), pauli_x()];
        let t = identity(2) * c(2.0, 0.0) - pauli_x() * c(0.5, 0.0);
        assert_abs_diff_eq!(max_abs(&project_orthogonal(&t, &basis, &tol)), 0.0, epsilon = 1e-14);
        let z = pauli_y();
        assert_abs_diff_eq!(max_abs(&(project_orthogonal(&z, &basis, &tol) - &z)), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn gram_expansion_matches_projection() {
        let tol = ToleranceSet::for_dim(2);
        let basis = vec![identity(2), real_matrix(2, &[1.0, 0.3, 0.3, -0.2])];
        let t = pauli_y() + real_matrix(2, &[0.4, 1.0, 0.0, 2.0]);
        let p = project_orthogonal(&t, &basis, &tol);
        let g = gram_expansion(&t, &basis).unwrap();
        assert_abs_diff_eq!(max_abs(&(p.clone() - g)), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(gram_ratio(&t, &basis).unwrap(), inner(&p, &p), epsilon = 1e-12);
        assert!(matches!(gram_expansion(&t, &[identity(2), identity(2)]), Err(SeaError::DegenerateGram(_))));
    }

    #[test]
    fn trace_distance_examples() {
        assert_abs_diff_eq!(trace_norm_distance(&diag(&[0.9, 0.1]), &diag(&[0.5, 0.5])), 0.8, epsilon = 1e-14);
        assert_abs_diff_eq!(trace_norm_distance(&diag(&[1.0, 0.0]), &diag(&[0.0, 1.0])), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn least_squares_reports_rank() {
        let cols = vec![identity(2), identity(2) * c(3.0, 0.0), pauli_x()];
        let target = identity(2) * c(2.0, 0.0) + pauli_x();
        let ls = real_least_squares(&cols, &target);
        assert_eq!(ls.rank, 2);
        assert!(ls.residual < 1e-12);
    }
}
