//! Affinities, conductivities and reciprocity.
//!
//! Every state is written as `ρ = B exp(-f_0 I - Σ f_j X_j) / Tr(...)` over an
//! observable basis `X_j`. The dissipative rates of the mean values are then
//! linear in the affinities `f_j`, with a symmetric nonnegative conductivity
//! matrix `L_ij = (1/τ) ([√ρ X_i]⊥ | [√ρ X_j]⊥)`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::composite::{self, CompositeGenerators, CompositionStructure};
use crate::error::{Result, SeaError};
use crate::op_space::{
    c, gram_matrix, identity, inner, real_least_squares, remove_components, OperatorMatrix, SpectralState,
    ToleranceSet, UnitSystem,
};
use crate::single::{self, GeneratorSet, TauPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    Generic,
    OrthogonalExtension,
}

/// Hermitian observables which, together with `I`, span the operator space.
#[derive(Debug, Clone)]
pub struct ObservableBasis {
    pub x: Vec<OperatorMatrix>,
    pub kind: BasisKind,
    /// Leading elements of `x` lying inside the constraint manifold
    /// (only meaningful for orthogonal extensions).
    pub manifold_count: usize,
}

/// Generalized Gell-Mann matrices, normalized to `Tr(X_i X_j) = 2 δ_ij`.
pub fn gell_mann(dim: usize) -> Vec<OperatorMatrix> {
    let mut out = Vec::with_capacity(dim * dim - 1);
    for j in 0..dim {
        for k in j + 1..dim {
            let mut s = OperatorMatrix::zeros(dim, dim);
            s[(j, k)] = c(1.0, 0.0);
            s[(k, j)] = c(1.0, 0.0);
            out.push(s);
            let mut a = OperatorMatrix::zeros(dim, dim);
            a[(j, k)] = c(0.0, -1.0);
            a[(k, j)] = c(0.0, 1.0);
            out.push(a);
        }
    }
    for l in 1..dim {
        let scale = (2.0 / (l * (l + 1)) as f64).sqrt();
        let mut d = OperatorMatrix::zeros(dim, dim);
        for m in 0..l {
            d[(m, m)] = c(scale, 0.0);
        }
        d[(l, l)] = c(-(l as f64) * scale, 0.0);
        out.push(d);
    }
    out
}

impl ObservableBasis {
    pub fn gell_mann(dim: usize) -> Self {
        Self { x: gell_mann(dim), kind: BasisKind::Generic, manifold_count: 0 }
    }

    pub fn generic(x: Vec<OperatorMatrix>) -> Self {
        Self { x, kind: BasisKind::Generic, manifold_count: 0 }
    }
}

/// Gram–Schmidt of `{I, H, G_i}` followed by the Gell-Mann matrices under
/// `⟨⟨X,Y⟩⟩ = ½ Tr(ρ{X,Y}) = (√ρX|√ρY)`; the identity is dropped from the
/// returned list. Needs a full-rank state for the form to be definite.
pub fn orthogonal_extension_basis(
    state: &SpectralState,
    gen: &GeneratorSet,
    tol: &ToleranceSet,
) -> Result<ObservableBasis> {
    if !state.is_full_rank() {
        return Err(SeaError::Unsupported("orthogonal extension basis requires a full-rank state".into()));
    }
    let dim = state.dim();
    let mut candidates = gen.generators();
    let manifold_len = candidates.len();
    candidates.extend(gell_mann(dim));
    let mut basis: Vec<OperatorMatrix> = Vec::with_capacity(dim * dim);
    let mut weighted: Vec<OperatorMatrix> = Vec::with_capacity(dim * dim);
    let mut manifold_kept = 0;
    for (idx, cand) in candidates.iter().enumerate() {
        let mut x = cand.clone();
        for _ in 0..2 {
            for (b, wb) in basis.iter().zip(&weighted) {
                let coef = inner(wb, &state.weighted(&x));
                x -= b * c(coef, 0.0);
            }
        }
        let wx = state.weighted(&x);
        let n = inner(&wx, &wx).sqrt();
        if n < tol.manifold_epsilon {
            continue;
        }
        x /= c(n, 0.0);
        weighted.push(&wx / c(n, 0.0));
        basis.push(crate::op_space::hermitian_part(&x));
        if idx < manifold_len {
            manifold_kept += 1;
        }
        if basis.len() == dim * dim {
            break;
        }
    }
    if basis.len() != dim * dim {
        return Err(SeaError::RankDeficientBasis(format!(
            "extension spans {} of {} dimensions",
            basis.len(),
            dim * dim
        )));
    }
    basis.remove(0);
    Ok(ObservableBasis { x: basis, kind: BasisKind::OrthogonalExtension, manifold_count: manifold_kept - 1 })
}

/// Affinities of a state with respect to an observable basis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AffinityVector {
    pub f0: f64,
    pub f: Vec<f64>,
    pub residual: f64,
    /// Number of coefficient directions not fixed by the state (kernel
    /// components of a rank-deficient ρ); the minimum-norm choice is reported.
    pub unidentified: usize,
}

/// Solves `B ln ρ = -f_0 B - Σ f_j B X_j` in the least-squares sense.
///
/// `k_B f_j` is the partial derivative of the entropy with respect to the
/// mean value `x_j = Tr(ρ X_j)` at fixed values of the others, and the
/// entropy itself is `k_B f_0 + k_B Σ f_j x_j`.
pub fn affinities_from_state(
    state: &SpectralState,
    basis: &ObservableBasis,
    _units: &UnitSystem,
) -> Result<AffinityVector> {
    let b = state.range_projector();
    let mut columns = Vec::with_capacity(basis.x.len() + 1);
    columns.push(-b.clone());
    for x in &basis.x {
        crate::op_space::ensure_same_dim(state.rho(), x)?;
        columns.push(-(b * x));
    }
    let ls = real_least_squares(&columns, state.log_on_range());
    let scale = crate::op_space::norm(state.log_on_range()).max(1.0);
    if ls.residual > 1e-9 * scale {
        return Err(SeaError::RankDeficientBasis(format!(
            "expansion residual {:.3e}; basis of {} elements has rank {} on the range",
            ls.residual,
            basis.x.len(),
            ls.rank
        )));
    }
    Ok(AffinityVector {
        f0: ls.coefficients[0],
        f: ls.coefficients[1..].to_vec(),
        residual: ls.residual,
        unidentified: columns.len() - ls.rank,
    })
}

/// Conductivity matrix with the cross-checks of its equivalent forms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConductivityMatrix {
    pub l: Vec<Vec<f64>>,
    pub tau: f64,
    /// `max |L_ij - L_ji|` with both entries computed independently.
    pub reciprocity_defect: f64,
    pub min_eigenvalue: f64,
    /// Largest relative disagreement of the covariance form.
    pub covariance_form_defect: f64,
    /// Largest relative disagreement of the Gram-determinant form.
    pub gram_form_defect: f64,
    pub per_subsystem: Option<Vec<Vec<Vec<f64>>>>,
}

impl ConductivityMatrix {
    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.l.len();
        DMatrix::from_fn(n, n, |i, j| self.l[i][j])
    }
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}

fn min_eig(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    SymmetricEigen::new(m.clone()).eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

fn relative_defect(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = a.abs().max().max(1e-300);
    (a - b).abs().max() / scale
}

/// Inner-product form over an orthonormal manifold basis:
/// `L_ij = (1/τ) ([v_i]⊥ | [v_j]⊥)`.
pub(crate) fn projected_gram(vectors: &[OperatorMatrix], manifold: &[OperatorMatrix], tau: f64) -> DMatrix<f64> {
    let perp: Vec<OperatorMatrix> = vectors.iter().map(|v| remove_components(v, manifold)).collect();
    let n = perp.len();
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = inner(&perp[i], &perp[j]) / tau;
            l[(i, j)] = v;
            l[(j, i)] = v;
        }
    }
    l
}

/// Bordered-determinant form `Γ(v_i, v_j; R) / Γ(R)`.
fn gram_form(vectors: &[OperatorMatrix], manifold: &[OperatorMatrix], tau: f64) -> DMatrix<f64> {
    let n = vectors.len();
    let m = manifold.len();
    let gr = gram_matrix(manifold);
    let gamma = if m == 0 { 1.0 } else { gr.determinant() };
    let cross: Vec<Vec<f64>> = vectors.iter().map(|v| manifold.iter().map(|a| inner(v, a)).collect()).collect();
    let mut l = DMatrix::zeros(n, n);
    let mut bordered = DMatrix::<f64>::zeros(m + 1, m + 1);
    bordered.view_mut((1, 1), (m, m)).copy_from(&gr);
    for i in 0..n {
        for j in 0..n {
            bordered[(0, 0)] = inner(&vectors[i], &vectors[j]);
            for k in 0..m {
                bordered[(0, k + 1)] = cross[i][k];
                bordered[(k + 1, 0)] = cross[j][k];
            }
            l[(i, j)] = bordered.clone().determinant() / gamma / tau;
        }
    }
    l
}

/// Covariance form: `⟨ΔX_i,ΔX_j⟩ - Σ_k ⟨ΔX_i,ΔA_k⟩⟨ΔA_k,ΔX_j⟩` with `A_k` the
/// generators orthonormalized under the covariance.
fn covariance_form(
    state: &SpectralState,
    xs: &[OperatorMatrix],
    generators: &[OperatorMatrix],
    tau: f64,
    eps: f64,
) -> DMatrix<f64> {
    let cov = |a: &OperatorMatrix, b: &OperatorMatrix| state.cov(a, b);
    let mut a: Vec<OperatorMatrix> = Vec::new();
    for g in generators {
        let mut v = g.clone();
        for _ in 0..2 {
            for b in &a {
                let coef = cov(b, &v);
                v -= b * c(coef, 0.0);
            }
        }
        let n = cov(&v, &v).max(0.0).sqrt();
        if n > eps {
            a.push(v / c(n, 0.0));
        }
    }
    let n = xs.len();
    let proj: Vec<Vec<f64>> = xs.iter().map(|x| a.iter().map(|b| cov(x, b)).collect()).collect();
    // ⟨ΔX_i,ΔX_j⟩ = Re Tr(ρ ΔX_i ΔX_j) from precomputed factors
    let dev: Vec<OperatorMatrix> = xs.iter().map(|x| state.deviation(x)).collect();
    let weighted: Vec<OperatorMatrix> = dev.iter().map(|d| state.rho() * d).collect();
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let sub: f64 = proj[i].iter().zip(&proj[j]).map(|(p, q)| p * q).sum();
            let cij: f64 = weighted[i].iter().zip(dev[j].transpose().iter()).map(|(x, y)| (x * y).re).sum();
            l[(i, j)] = (cij - sub) / tau;
        }
    }
    l
}

pub fn conductivity_matrix(
    state: &SpectralState,
    gen: &GeneratorSet,
    basis: &ObservableBasis,
    policy: &TauPolicy,
    units: &UnitSystem,
    tol: &ToleranceSet,
) -> Result<ConductivityMatrix> {
    let ev = single::evaluate(state, gen, policy, units, tol)?;
    let tau = ev.tau;
    let vectors: Vec<OperatorMatrix> = basis.x.iter().map(|x| state.weighted(x)).collect();
    let manifold = &ev.direction.manifold_basis;
    let l = projected_gram(&vectors, manifold, tau);
    let n = vectors.len();
    let mut reciprocity_defect: f64 = 0.0;
    let perp: Vec<OperatorMatrix> = vectors.iter().map(|v| remove_components(v, manifold)).collect();
    for i in 0..n {
        for j in 0..i {
            let lji = inner(&perp[j], &perp[i]) / tau;
            reciprocity_defect = reciprocity_defect.max((l[(i, j)] - lji).abs());
        }
    }
    let raw = single::manifold_vectors(state, gen);
    let kept: Vec<OperatorMatrix> = ev.direction.retained.iter().map(|&i| raw[i].clone()).collect();
    let lg = gram_form(&vectors, &kept, tau);
    let lc = covariance_form(state, &basis.x, &gen.observables(), tau, tol.manifold_epsilon);
    Ok(ConductivityMatrix {
        min_eigenvalue: min_eig(&l),
        covariance_form_defect: relative_defect(&l, &lc),
        gram_form_defect: relative_defect(&l, &lg),
        l: to_rows(&l),
        tau,
        reciprocity_defect,
        per_subsystem: None,
    })
}

/// `Tr(ρ̇_D X_i)` for every basis element.
pub fn dissipative_rates(
    state: &SpectralState,
    gen: &GeneratorSet,
    basis: &ObservableBasis,
    policy: &TauPolicy,
    units: &UnitSystem,
    tol: &ToleranceSet,
) -> Result<Vec<f64>> {
    let ev = single::evaluate(state, gen, policy, units, tol)?;
    Ok(basis.x.iter().map(|x| (&ev.dissipator * x).trace().re).collect())
}

/// Entropy rate as the quadratic form of the affinities, with the inverse
/// (rate-based) form when available.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadraticEntropyRate {
    /// `k_B Σ f_i f_j L_ij`.
    pub from_affinities: f64,
    /// `k_B Σ ṙ_i (L⁻¹)_ij ṙ_j` over the block outside the manifold.
    pub from_rates: Option<f64>,
    /// Set when the inverse form was skipped or used a pseudo-inverse.
    pub notice: Option<String>,
    /// `max_i |Tr(ρ̇_D X_i) - Σ_j f_j L_ij|`.
    pub rate_relation_defect: f64,
}

pub(crate) fn quadratic_rate(
    l: &DMatrix<f64>,
    f: &[f64],
    rates: &[f64],
    manifold_count: usize,
    k_b: f64,
) -> QuadraticEntropyRate {
    let n = f.len();
    let fv = nalgebra::DVector::from_column_slice(f);
    let from_affinities = k_b * fv.dot(&(l * &fv));
    let predicted = l * &fv;
    let rate_relation_defect = (0..n).map(|i| (predicted[i] - rates[i]).abs()).fold(0.0, f64::max);
    let block: Vec<usize> = (manifold_count..n).collect();
    let m = block.len();
    let sub = DMatrix::from_fn(m, m, |i, j| l[(block[i], block[j])]);
    let r = nalgebra::DVector::from_iterator(m, block.iter().map(|&i| rates[i]));
    let eig = SymmetricEigen::new(sub.clone());
    let smax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let smin = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if m == 0 || smax <= 0.0 {
        return QuadraticEntropyRate {
            from_affinities,
            from_rates: None,
            notice: Some("conductivity block vanishes; inverse form skipped".into()),
            rate_relation_defect,
        };
    }
    let (from_rates, notice) = if smin > 1e-10 * smax {
        (Some(k_b * r.dot(&crate::op_space::symmetric_solve(&sub, &r, 0.0))), None)
    } else {
        (
            Some(k_b * r.dot(&crate::op_space::symmetric_solve(&sub, &r, 1e-10))),
            Some("conductivity block singular; inverse form uses the pseudo-inverse".into()),
        )
    };
    QuadraticEntropyRate { from_affinities, from_rates, notice, rate_relation_defect }
}

pub fn entropy_rate_quadratic(
    state: &SpectralState,
    gen: &GeneratorSet,
    basis: &ObservableBasis,
    policy: &TauPolicy,
    units: &UnitSystem,
    tol: &ToleranceSet,
) -> Result<QuadraticEntropyRate> {
    let aff = affinities_from_state(state, basis, units)?;
    let cond = conductivity_matrix(state, gen, basis, policy, units, tol)?;
    let rates = dissipative_rates(state, gen, basis, policy, units, tol)?;
    let ev = single::evaluate(state, gen, policy, units, tol)?;
    let l = if ev.dissipation_active { cond.matrix() } else { DMatrix::zeros(basis.x.len(), basis.x.len()) };
    Ok(quadratic_rate(&l, &aff.f, &rates, basis.manifold_count, units.k_b))
}

/// Per-subsystem conductivities `L^J` of a composite system; the total is
/// their sum. Requires a full-rank state.
pub fn composite_conductivities(
    state: &SpectralState,
    comp: &CompositionStructure,
    gens: &CompositeGenerators,
    basis: &ObservableBasis,
    policies: &[TauPolicy],
    units: &UnitSystem,
    tol: &ToleranceSet,
) -> Result<ConductivityMatrix> {
    if !state.is_full_rank() {
        return Err(SeaError::Unsupported("composite conductivities require a full-rank state".into()));
    }
    let eval = composite::evaluate(
        state,
        comp,
        gens,
        policies,
        composite::DissipatorModel::SteepestEntropyAscent,
        units,
        tol,
    )?;
    let n = basis.x.len();
    let mut total = DMatrix::zeros(n, n);
    let mut parts = Vec::with_capacity(comp.len());
    let mut worst_cov: f64 = 0.0;
    let mut worst_gram: f64 = 0.0;
    let mut min_eigenvalue = f64::INFINITY;
    for (j, local) in eval.local.iter().enumerate() {
        let frame = &local.frame;
        let perceived: Vec<OperatorMatrix> =
            basis.x.iter().map(|x| composite::perceive(comp, j, &frame.rho_jbar, x)).collect();
        let vectors: Vec<OperatorMatrix> = perceived.iter().map(|x| frame.rho_j.weighted(x)).collect();
        let lj = if local.active {
            projected_gram(&vectors, &local.direction.manifold_basis, local.tau)
        } else {
            DMatrix::zeros(n, n)
        };
        if local.active {
            let raw = frame.manifold_vectors();
            let kept: Vec<OperatorMatrix> = local.direction.retained.iter().map(|&i| raw[i].clone()).collect();
            worst_gram = worst_gram.max(relative_defect(&lj, &gram_form(&vectors, &kept, local.tau)));
            let mut gens_j = vec![frame.perceived_h.clone()];
            gens_j.extend(frame.perceived_extras.iter().cloned());
            let lc = covariance_form(&frame.rho_j, &perceived, &gens_j, local.tau, tol.manifold_epsilon);
            worst_cov = worst_cov.max(relative_defect(&lj, &lc));
        }
        min_eigenvalue = min_eigenvalue.min(min_eig(&lj));
        total += &lj;
        parts.push(to_rows(&lj));
    }
    Ok(ConductivityMatrix {
        min_eigenvalue: min_eigenvalue.min(min_eig(&total)),
        l: to_rows(&total),
        tau: f64::NAN,
        reciprocity_defect: (&total - total.transpose()).abs().max(),
        covariance_form_defect: worst_cov,
        gram_form_defect: worst_gram,
        per_subsystem: Some(parts),
    })
}

/// Dissipative rates of the composite dissipator, `Tr(ρ̇_D X_i)`.
pub fn composite_dissipative_rates(
    state: &SpectralState,
    comp: &CompositionStructure,
    gens: &CompositeGenerators,
    basis: &ObservableBasis,
    policies: &[TauPolicy],
    units: &UnitSystem,
    tol: &ToleranceSet,
) -> Result<Vec<f64>> {
    let eval = composite::evaluate(
        state,
        comp,
        gens,
        policies,
        composite::DissipatorModel::SteepestEntropyAscent,
        units,
        tol,
    )?;
    Ok(basis.x.iter().map(|x| (&eval.dissipator * x).trace().re).collect())
}

/// `Tr(X_i X_j)`-orthonormality defect of a basis; used in tests.
pub fn trace_orthogonality_defect(x: &[OperatorMatrix]) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        for j in 0..x.len() {
            let v = (&x[i] * &x[j]).trace().re;
            let target = if i == j { 2.0 } else { 0.0 };
            worst = worst.max((v - target).abs());
        }
        worst = worst.max((x[i].trace()).norm());
    }
    worst
}

/// Identity helper kept next to the bases for callers building custom lists.
pub fn with_identity(basis: &ObservableBasis) -> Vec<OperatorMatrix> {
    let dim = basis.x.first().map(|x| x.nrows()).unwrap_or(1);
    let mut out = vec![identity(dim)];
    out.extend(basis.x.iter().cloned());
    out
}

/// Orthonormality check of an extension basis under `⟨⟨·,·⟩⟩`.
pub fn extension_orthonormality_defect(state: &SpectralState, basis: &ObservableBasis) -> f64 {
    let w: Vec<OperatorMatrix> = with_identity(basis).iter().map(|x| state.weighted(x)).collect();
    let g = gram_matrix(&w);
    (g - DMatrix::identity(w.len(), w.len())).abs().max()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::op_space::diag;
    use approx::assert_abs_diff_eq;

    fn units() -> UnitSystem {
        UnitSystem::default()
    }

    fn qutrit() -> (SpectralState, GeneratorSet, ToleranceSet) {
        let tol = ToleranceSet::for_dim(3);
        let s = SpectralState::new(&diag(&[0.5, 0.1, 0.4]), &units(), &tol).unwrap();
        (s, GeneratorSet::hamiltonian(diag(&[0.0, 1.0, 2.0])).unwrap(), tol)
    }

    #[test]
    fn gell_mann_is_trace_orthonormal() {
        for d in 2..6 {
            let g = gell_mann(d);
            assert_eq!(g.len(), d * d - 1);
            assert!(trace_orthogonality_defect(&g) < 1e-14);
        }
    }

    #[test]
    fn gibbs_affinities() {
        let (_, gen, tol) = qutrit();
        let beta = 0.8;
        let g = single::gibbs_state(&gen, beta, &[], &units(), &tol).unwrap();
        let basis = ObservableBasis::generic(vec![gen.h.clone(), diag(&[1.0, -1.0, 0.0])]);
        let aff = affinities_from_state(&g, &basis, &units()).unwrap();
        let z: f64 = [0.0, 1.0, 2.0].iter().map(|e: &f64| (-beta * e).exp()).sum();
        assert_abs_diff_eq!(aff.f[0], beta, epsilon = 1e-12);
        assert_abs_diff_eq!(aff.f[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(aff.f0, z.ln(), epsilon = 1e-12);
    }

    #[test]
    fn maximally_mixed_affinities() {
        let tol = ToleranceSet::for_dim(3);
        let s = SpectralState::new(&(identity(3) / c(3.0, 0.0)), &units(), &tol).unwrap();
        let aff = affinities_from_state(&s, &ObservableBasis::gell_mann(3), &units()).unwrap();
        assert!(aff.f.iter().all(|v| v.abs() < 1e-12));
        assert_abs_diff_eq!(aff.f0, 3f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn qutrit_affinities_oracle() {
        // diagonal Gell-Mann: λ3 = diag(1,-1,0), λ8 = diag(1,1,-2)/√3
        let (s, _, _) = qutrit();
        let basis = ObservableBasis::gell_mann(3);
        let aff = affinities_from_state(&s, &basis, &units()).unwrap();
        let l = [0.5f64.ln(), 0.1f64.ln(), 0.4f64.ln()];
        let f0 = -(l[0] + l[1] + l[2]) / 3.0;
        let f3 = -(l[0] - l[1]) / 2.0;
        let f8 = -(l[0] + l[1] - 2.0 * l[2]) / 6.0 * 3f64.sqrt();
        assert_abs_diff_eq!(aff.f0, f0, epsilon = 1e-12);
        assert_abs_diff_eq!(aff.f[6], f3, epsilon = 1e-12);
        assert_abs_diff_eq!(aff.f[7], f8, epsilon = 1e-12);
        for k in 0..6 {
            assert_abs_diff_eq!(aff.f[k], 0.0, epsilon = 1e-12);
        }
        let s_val = aff.f0 + aff.f.iter().zip(&basis.x).map(|(f, x)| f * s.mean(x)).sum::<f64>();
        assert_abs_diff_eq!(s_val, s.entropy(), epsilon = 1e-12);
    }

    #[test]
    fn conductivity_forms_and_rates_on_qutrit() {
        let (s, gen, tol) = qutrit();
        let policy = TauPolicy::constant(1.0);
        let basis = ObservableBasis::gell_mann(3);
        let cond = conductivity_matrix(&s, &gen, &basis, &policy, &units(), &tol).unwrap();
        assert!(cond.covariance_form_defect < 1e-10, "{}", cond.covariance_form_defect);
        assert!(cond.gram_form_defect < 1e-10, "{}", cond.gram_form_defect);
        assert!(cond.min_eigenvalue > -1e-12);
        let q = entropy_rate_quadratic(&s, &gen, &basis, &policy, &units(), &tol).unwrap();
        let direct = single::entropy_rate(&s, &gen, &policy, &units(), &tol).unwrap();
        assert_abs_diff_eq!(q.from_affinities, direct, epsilon = 1e-12);
        assert_abs_diff_eq!(q.from_rates.unwrap(), direct, epsilon = 1e-10);
        assert!(q.rate_relation_defect < 1e-12);
        // H lies in the manifold: its row vanishes
        let hb = ObservableBasis::generic(vec![gen.h.clone()]);
        let ch = conductivity_matrix(&s, &gen, &hb, &policy, &units(), &tol).unwrap();
        assert!(ch.l[0][0].abs() < 1e-14);
        let rates = dissipative_rates(&s, &gen, &hb, &policy, &units(), &tol).unwrap();
        assert!(rates[0].abs() < 1e-14);
    }

    #[test]
    fn orthogonal_extension_block_is_identity_over_tau() {
        let (s, gen, tol) = qutrit();
        let policy = TauPolicy::constant(2.0);
        let basis = orthogonal_extension_basis(&s, &gen, &tol).unwrap();
        assert_eq!(basis.x.len(), 8);
        assert_eq!(basis.manifold_count, 1);
        assert!(extension_orthonormality_defect(&s, &basis) < 1e-12);
        let cond = conductivity_matrix(&s, &gen, &basis, &policy, &units(), &tol).unwrap();
        let l = cond.matrix();
        for i in 1..8 {
            for j in 1..8 {
                let expected = s.cov(&basis.x[i], &basis.x[j]) / 2.0;
                assert_abs_diff_eq!(l[(i, j)], expected, epsilon = 1e-12);
                assert_abs_diff_eq!(l[(i, j)], if i == j { 0.5 } else { 0.0 }, epsilon = 1e-12);
            }
        }
        let q = entropy_rate_quadratic(&s, &gen, &basis, &policy, &units(), &tol).unwrap();
        assert!(q.notice.is_none());
        assert_abs_diff_eq!(q.from_rates.unwrap(), q.from_affinities, epsilon = 1e-12);
    }
}
