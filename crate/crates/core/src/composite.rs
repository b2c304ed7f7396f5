//! Composite systems of distinguishable subsystems.
//!
//! Each subsystem `J` follows the steepest ascent of the entropy it perceives,
//! `(F)^J = Tr_J̄[(I_J ⊗ ρ_J̄) F]`, subject to the perceived generators:
//!
//! ```text
//! dρ/dt = -(i/ħ)[H, ρ] - Σ_J (1/2τ_J) [√ρ_J D_J + D_J† √ρ_J] ⊗ ρ_J̄
//! D_J   = [√ρ_J (B ln ρ)^J]⊥ span{√ρ_J I_J, √ρ_J (H)^J, √ρ_J (G_i)^J}
//! ```
//!
//! Factors are ordered as in `kron(A_0, kron(A_1, ...))`; the complement `J̄`
//! keeps the remaining factors in their original order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SeaError};
use crate::op_space::{
    c, ensure_hermitian, ensure_square, hermitian_eigen, hermitian_part, identity, inner, kron, max_abs,
    OperatorMatrix, SpectralState, ToleranceSet, UnitSystem,
};
use crate::random;
use crate::single::{self, direction_from, DissipativeDirection, GeneratorSet, TauPolicy};

/// Subsystem dimensions and labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionStructure {
    pub dims: Vec<usize>,
    pub labels: Vec<String>,
}

impl CompositionStructure {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        let labels = (0..dims.len()).map(|j| format!("S{j}")).collect();
        Self::with_labels(dims, labels)
    }

    pub fn with_labels(dims: Vec<usize>, labels: Vec<String>) -> Result<Self> {
        if dims.is_empty() {
            return Err(SeaError::InvalidConfig("composition needs at least one subsystem".into()));
        }
        if dims.contains(&0) {
            return Err(SeaError::InvalidConfig(format!("subsystem dimensions must be positive: {dims:?}")));
        }
        if labels.len() != dims.len() {
            return Err(SeaError::InvalidConfig("one label per subsystem required".into()));
        }
        Ok(Self { dims, labels })
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn total_dim(&self) -> usize {
        self.dims.iter().product()
    }

    fn digits(&self, mut i: usize) -> Vec<usize> {
        let mut out = vec![0; self.dims.len()];
        for k in (0..self.dims.len()).rev() {
            out[k] = i % self.dims[k];
            i /= self.dims[k];
        }
        out
    }

    fn compose(&self, factors: &[usize], digits: &[usize]) -> usize {
        factors.iter().fold(0, |acc, &k| acc * self.dims[k] + digits[k])
    }

    fn dim_of(&self, factors: &[usize]) -> usize {
        factors.iter().map(|&k| self.dims[k]).product()
    }

    fn complement(&self, keep: &[usize]) -> Vec<usize> {
        (0..self.dims.len()).filter(|k| !keep.contains(k)).collect()
    }

    /// Split of each global index into (index on `J`, index on `J̄`).
    fn split_map(&self, j: usize) -> Vec<(usize, usize)> {
        let rest = self.complement(&[j]);
        (0..self.total_dim())
            .map(|i| {
                let d = self.digits(i);
                (d[j], self.compose(&rest, &d))
            })
            .collect()
    }

    /// Structure of a contiguous block of factors.
    pub fn block(&self, range: std::ops::Range<usize>) -> Result<Self> {
        Self::with_labels(self.dims[range.clone()].to_vec(), self.labels[range].to_vec())
    }

    pub fn check(&self, m: &OperatorMatrix) -> Result<()> {
        let n = ensure_square(m)?;
        if n != self.total_dim() {
            return Err(SeaError::DimensionMismatch { expected: self.total_dim(), found: n });
        }
        Ok(())
    }
}

/// `Tr` over all factors not listed in `keep`.
pub fn partial_trace(rho: &OperatorMatrix, comp: &CompositionStructure, keep: &[usize]) -> Result<OperatorMatrix> {
    comp.check(rho)?;
    let mut keep_sorted = keep.to_vec();
    keep_sorted.sort_unstable();
    keep_sorted.dedup();
    if keep_sorted.len() != keep.len() || keep_sorted.iter().any(|&k| k >= comp.len()) {
        return Err(SeaError::InvalidConfig(format!("bad subsystem index set {keep:?}")));
    }
    let rest = comp.complement(&keep_sorted);
    let n = comp.total_dim();
    let dk = comp.dim_of(&keep_sorted);
    let idx: Vec<(usize, usize)> = (0..n)
        .map(|i| {
            let d = comp.digits(i);
            (comp.compose(&keep_sorted, &d), comp.compose(&rest, &d))
        })
        .collect();
    let mut out = OperatorMatrix::zeros(dk, dk);
    for i in 0..n {
        for j in 0..n {
            if idx[i].1 == idx[j].1 {
                out[(idx[i].0, idx[j].0)] += rho[(i, j)];
            }
        }
    }
    Ok(out)
}

/// `A ⊗ Y` with `A` on factor `J` and `Y` on the complement.
pub fn tensor_with_complement(
    comp: &CompositionStructure,
    j: usize,
    a: &OperatorMatrix,
    y: &OperatorMatrix,
) -> OperatorMatrix {
    let map = comp.split_map(j);
    let n = comp.total_dim();
    OperatorMatrix::from_fn(n, n, |r, s| a[(map[r].0, map[s].0)] * y[(map[r].1, map[s].1)])
}

/// `A_J ⊗ I_J̄`.
pub fn embed(comp: &CompositionStructure, j: usize, a: &OperatorMatrix) -> OperatorMatrix {
    let rest = comp.total_dim() / comp.dims[j];
    tensor_with_complement(comp, j, a, &identity(rest))
}

/// `Tr_J̄[(I_J ⊗ W) F]` for any operator `W` on the complement.
pub fn perceive(comp: &CompositionStructure, j: usize, w: &OperatorMatrix, f: &OperatorMatrix) -> OperatorMatrix {
    let map = comp.split_map(j);
    let dj = comp.dims[j];
    let n = comp.total_dim();
    let mut out = OperatorMatrix::zeros(dj, dj);
    // (I⊗W)F at ((a,x),(b,y)) = Σ_z W[x,z] F[(a,z),(b,y)], traced over x = y
    for r in 0..n {
        let (a, z) = map[r];
        for s in 0..n {
            let (b, x) = map[s];
            let wxz = w[(x, z)];
            if wxz.re != 0.0 || wxz.im != 0.0 {
                out[(a, b)] += wxz * f[(r, s)];
            }
        }
    }
    out
}

/// Perception operator `(F)^J` for the given overall state.
pub fn perception_operator(
    state: &SpectralState,
    comp: &CompositionStructure,
    j: usize,
    f: &OperatorMatrix,
) -> Result<OperatorMatrix> {
    comp.check(f)?;
    let rho_jbar = partial_trace(state.rho(), comp, &comp.complement(&[j]))?;
    Ok(perceive(comp, j, &rho_jbar, f))
}

/// Generators of a composite system.
#[derive(Debug, Clone)]
pub struct CompositeGenerators {
    /// `H_J` on each factor; empty when only the assembled `H` is known.
    pub local_hamiltonians: Vec<OperatorMatrix>,
    pub interaction: OperatorMatrix,
    pub set: GeneratorSet,
}

impl CompositeGenerators {
    /// `H = Σ_J H_J ⊗ I_J̄ + V`.
    pub fn new(
        comp: &CompositionStructure,
        local_hamiltonians: Vec<OperatorMatrix>,
        interaction: Option<OperatorMatrix>,
        extras: Vec<OperatorMatrix>,
    ) -> Result<Self> {
        if local_hamiltonians.len() != comp.len() {
            return Err(SeaError::DimensionMismatch { expected: comp.len(), found: local_hamiltonians.len() });
        }
        let n = comp.total_dim();
        let mut h = OperatorMatrix::zeros(n, n);
        for (j, hj) in local_hamiltonians.iter().enumerate() {
            if hj.nrows() != comp.dims[j] {
                return Err(SeaError::DimensionMismatch { expected: comp.dims[j], found: hj.nrows() });
            }
            ensure_hermitian(hj)?;
            h += embed(comp, j, hj);
        }
        let interaction = interaction.unwrap_or_else(|| OperatorMatrix::zeros(n, n));
        comp.check(&interaction)?;
        ensure_hermitian(&interaction)?;
        h += &interaction;
        for g in &extras {
            comp.check(g)?;
        }
        Ok(Self { local_hamiltonians, interaction, set: GeneratorSet::new(h, extras)? })
    }

    /// Noninteracting sum of local Hamiltonians.
    pub fn noninteracting(comp: &CompositionStructure, local_hamiltonians: Vec<OperatorMatrix>) -> Result<Self> {
        Self::new(comp, local_hamiltonians, None, Vec::new())
    }

    /// From an assembled Hamiltonian only.
    pub fn from_total(comp: &CompositionStructure, h: OperatorMatrix, extras: Vec<OperatorMatrix>) -> Result<Self> {
        comp.check(&h)?;
        let n = h.nrows();
        Ok(Self {
            local_hamiltonians: Vec::new(),
            interaction: OperatorMatrix::zeros(n, n),
            set: GeneratorSet::new(h, extras)?,
        })
    }

    /// Separately conserved number-like operators `N_J ⊗ I` on each factor.
    pub fn separated_extras(comp: &CompositionStructure, locals: &[(usize, OperatorMatrix)]) -> Vec<OperatorMatrix> {
        locals.iter().map(|(j, n)| embed(comp, *j, n)).collect()
    }

    pub fn h(&self) -> &OperatorMatrix {
        &self.set.h
    }
}

/// Perceived quantities of one subsystem.
#[derive(Debug, Clone)]
pub struct LocalFrame {
    pub index: usize,
    pub rho_j: SpectralState,
    pub rho_jbar: OperatorMatrix,
    pub perceived_h: OperatorMatrix,
    /// `(B ln ρ)^J`.
    pub perceived_log: OperatorMatrix,
    /// `(S)^J = -k_B (B ln ρ)^J`.
    pub perceived_s: OperatorMatrix,
    pub perceived_extras: Vec<OperatorMatrix>,
    /// Global mean values `Tr(ρH)` and `Tr(ρG_i)`, used by local covariances.
    pub global_means: Vec<f64>,
}

impl LocalFrame {
    /// `[√ρ_J I_J, √ρ_J (H)^J, √ρ_J (G_i)^J]`.
    pub fn manifold_vectors(&self) -> Vec<OperatorMatrix> {
        let mut out = vec![self.rho_j.sqrt_rho().clone(), self.rho_j.weighted(&self.perceived_h)];
        out.extend(self.perceived_extras.iter().map(|g| self.rho_j.weighted(g)));
        out
    }

    /// `⟨F,G⟩^J = ½ Tr_J(ρ_J {(ΔF)^J, (ΔG)^J})` from perceived operators and
    /// the global means of `F` and `G`.
    pub fn covariance(&self, pf: &OperatorMatrix, mean_f: f64, pg: &OperatorMatrix, mean_g: f64) -> f64 {
        let d = pf.nrows();
        let df = pf - identity(d) * c(mean_f, 0.0);
        let dg = pg - identity(d) * c(mean_g, 0.0);
        0.5 * (self.rho_j.rho() * crate::op_space::anticommutator(&df, &dg)).trace().re
    }

    /// `⟨H,H⟩^J`.
    pub fn energy_covariance(&self) -> f64 {
        self.covariance(&self.perceived_h, self.global_means[0], &self.perceived_h, self.global_means[0]).max(0.0)
    }
}

pub fn local_frame(
    state: &SpectralState,
    comp: &CompositionStructure,
    gens: &CompositeGenerators,
    j: usize,
    units: &UnitSystem,
    tol: &ToleranceSet,
) -> Result<LocalFrame> {
    comp.check(state.rho())?;
    if j >= comp.len() {
        return Err(SeaError::InvalidConfig(format!("subsystem index {j} out of range")));
    }
    let rho_j = hermitian_part(&partial_trace(state.rho(), comp, &[j])?);
    let rho_jbar = hermitian_part(&partial_trace(state.rho(), comp, &comp.complement(&[j]))?);
    let local_tol = ToleranceSet { rank_epsilon: tol.rank_epsilon, ..*tol };
    let rho_j = SpectralState::clipped(&rho_j, units, &local_tol)?;
    let perceived_h = hermitian_part(&perceive(comp, j, &rho_jbar, &gens.set.h));
    let perceived_log = hermitian_part(&perceive(comp, j, &rho_jbar, state.log_on_range()));
    let perceived_s = &perceived_log * c(-units.k_b, 0.0);
    let perceived_extras = gens.set.extras.iter().map(|g| hermitian_part(&perceive(comp, j, &rho_jbar, g))).collect();
    let global_means = gens.set.observables().iter().map(|o| state.mean(o)).collect();
    Ok(LocalFrame {
        index: j,
        rho_j,
        rho_jbar,
        perceived_h,
        perceived_log,
        perceived_s,
        perceived_extras,
        global_means,
    })
}

/// `D_J` on factor `J` together with its frame.
pub fn local_dissipative_direction(
    state: &SpectralState,
    comp: &CompositionStructure,
    gens: &CompositeGenerators,
    j: usize,
    units: &UnitSystem,
    tol: &ToleranceSet,
) -> Result<(LocalFrame, DissipativeDirection)> {
    let frame = local_frame(state, comp, gens, j, units, tol)?;
    let target = frame.rho_j.weighted(&frame.perceived_log);
    let dir = direction_from(&target, &frame.manifold_vectors(), tol);
    Ok((frame, dir))
}

/// Which dissipator is attached to the Hamiltonian motion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DissipatorModel {
    SteepestEntropyAscent,
    /// Perceptions built from `√ρ` with `√ρ_J̄` weights; conserves the global
    /// invariants but not the separate energies of noninteracting subsystems.
    SqrtPerceptionVariant,
    UnitaryOnly,
}

#[derive(Debug, Clone)]
pub struct LocalContribution {
    pub frame: LocalFrame,
    pub direction: DissipativeDirection,
    pub tau: f64,
    pub tau_fallback: bool,
    pub active: bool,
    pub local_variance: f64,
    /// This subsystem's share of the dissipator on the full space.
    pub term: OperatorMatrix,
    /// `k_B (D_J|D_J) / τ_J`.
    pub entropy_rate: f64,
    /// `-(1/2τ_J)(√ρ_J D_J + D_J†√ρ_J)` on factor `J` (zero for the variant).
    pub local_dissipator: OperatorMatrix,
}

#[derive(Debug, Clone)]
pub struct CompositeEvaluation {
    pub hamiltonian: OperatorMatrix,
    pub dissipator: OperatorMatrix,
    pub rhs: OperatorMatrix,
    pub local: Vec<LocalContribution>,
    /// `-k_B Tr(ρ̇_D B ln ρ)`.
    pub entropy_rate: f64,
}

impl CompositeEvaluation {
    pub fn dissipation_norm_sq(&self) -> f64 {
        self.local.iter().map(|l| l.direction.d_norm_sq).sum()
    }
}

fn policy_for(policies: &[TauPolicy], j: usize) -> Result<&TauPolicy> {
    match policies.len() {
        1 => Ok(&policies[0]),
        n if j < n => Ok(&policies[j]),
        n => Err(SeaError::DimensionMismatch { expected: j + 1, found: n }),
    }
}

/// `(√ρ F)^J_√ = Tr_J̄[(I ⊗ √ρ_J̄) √ρ F]`.
fn sqrt_perception(
    comp: &CompositionStructure,
    j: usize,
    sqrt_jbar: &OperatorMatrix,
    state: &SpectralState,
    f: &OperatorMatrix,
) -> OperatorMatrix {
    perceive(comp, j, sqrt_jbar, &state.weighted(f))
}

fn contribution(
    state: &SpectralState,
    comp: &CompositionStructure,
    gens: &CompositeGenerators,
    policies: &[TauPolicy],
    model: DissipatorModel,
    j: usize,
    units: &UnitSystem,
    tol: &ToleranceSet,
) -> Result<LocalContribution> {
    let policy = policy_for(policies, j)?;
    let frame = local_frame(state, comp, gens, j, units, tol)?;
    let n = comp.total_dim();
    let dj = comp.dims[j];
    let local_variance = frame.energy_covariance();
    let (direction, sqrt_jbar) = match model {
        DissipatorModel::SqrtPerceptionVariant => {
            let sqrt_jbar = crate::op_space::spectral_map(&frame.rho_jbar, |p| p.max(0.0).sqrt());
            let target = sqrt_perception(comp, j, &sqrt_jbar, state, state.log_on_range());
            let mut vectors = vec![sqrt_perception(comp, j, &sqrt_jbar, state, &identity(n))];
            for g in gens.set.generators().iter().skip(1) {
                vectors.push(sqrt_perception(comp, j, &sqrt_jbar, state, g));
            }
            (direction_from(&target, &vectors, tol), Some(sqrt_jbar))
        }
        _ => {
            let target = frame.rho_j.weighted(&frame.perceived_log);
            (direction_from(&target, &frame.manifold_vectors(), tol), None)
        }
    };
    let tv = single::tau_from_parts(
        policy,
        direction.d_norm_sq,
        local_variance,
        frame.rho_j.purity(),
        tol.equilibrium_epsilon,
        units,
    )?;
    let active = model != DissipatorModel::UnitaryOnly
        && !(policy.vanishes_at_equilibrium() && direction.d_norm_sq < tol.equilibrium_epsilon);
    let (term, local_dissipator, entropy_rate) = if !active {
        (OperatorMatrix::zeros(n, n), OperatorMatrix::zeros(dj, dj), 0.0)
    } else if let Some(sq) = sqrt_jbar {
        let e = tensor_with_complement(comp, j, &direction.d, &sq) * c(-0.5 / tv.tau, 0.0);
        let term = state.sqrt_rho() * &e + e.adjoint() * state.sqrt_rho();
        let rate = single::entropy_rate_of(state, &term);
        (term, OperatorMatrix::zeros(dj, dj), rate)
    } else {
        let local = single::dissipator_from(frame.rho_j.sqrt_rho(), &direction.d, tv.tau);
        let term = tensor_with_complement(comp, j, &local, &frame.rho_jbar);
        (term, local, units.k_b * direction.d_norm_sq / tv.tau)
    };
    Ok(LocalContribution {
        frame,
        direction,
        tau: tv.tau,
        tau_fallback: tv.fallback,
        active,
        local_variance,
        term,
        entropy_rate,
        local_dissipator,
    })
}

pub fn evaluate(
    state: &SpectralState,
    comp: &CompositionStructure,
    gens: &CompositeGenerators,
    policies: &[TauPolicy],
    model: DissipatorModel,
    units: &UnitSystem,
    tol: &ToleranceSet,
) -> Result<CompositeEvaluation> {
    comp.check(state.rho())?;
    comp.check(&gens.set.h)?;
    for p in policies {
        p.validate()?;
    }
    let n = comp.total_dim();
    let hamiltonian = single::hamiltonian_term(state, &gens.set, units);
    let local: Vec<LocalContribution> = if comp.len() > 1 {
        (0..comp.len())
            .into_par_iter()
            .map(|j| contribution(state, comp, gens, policies, model, j, units, tol))
            .collect::<Result<_>>()?
    } else {
        vec![contribution(state, comp, gens, policies, model, 0, units, tol)?]
    };
    let mut dissipator = OperatorMatrix::zeros(n, n);
    for l in &local {
        dissipator += &l.term;
    }
    let entropy_rate = match model {
        DissipatorModel::SteepestEntropyAscent => local.iter().map(|l| l.entropy_rate).sum(),
        _ => single::entropy_rate_of(state, &dissipator),
    };
    let rhs = &hamiltonian + &dissipator;
    Ok(CompositeEvaluation { hamiltonian, dissipator, rhs, local, entropy_rate })
}

/// The full right-hand side for a composite system.
pub fn composite_rhs(
    state: &SpectralState,
    comp: &CompositionStructure,
    gens: &CompositeGenerators,
    policies: &[TauPolicy],
    units: &UnitSystem,
    tol: &ToleranceSet,
) -> Result<OperatorMatrix> {
    Ok(evaluate(state, comp, gens, policies, DissipatorModel::SteepestEntropyAscent, units, tol)?.rhs)
}

/// Right-hand side with the `√ρ`-perception dissipator.
pub fn flawed_variant_rhs(
    state: &SpectralState,
    comp: &CompositionStructure,
    gens: &CompositeGenerators,
    policies: &[TauPolicy],
    units: &UnitSystem,
    tol: &ToleranceSet,
) -> Result<OperatorMatrix> {
    Ok(evaluate(state, comp, gens, policies, DissipatorModel::SqrtPerceptionVariant, units, tol)?.rhs)
}

/// τ_J for subsystem `J`, using the perceived energy covariance `⟨H,H⟩^J`.
pub fn tau_j_value(
    policy: &TauPolicy,
    frame: &LocalFrame,
    dir_j: &DissipativeDirection,
    units: &UnitSystem,
    tol: &ToleranceSet,
) -> Result<f64> {
    Ok(single::tau_from_parts(
        policy,
        dir_j.d_norm_sq,
        frame.energy_covariance(),
        frame.rho_j.purity(),
        tol.equilibrium_epsilon,
        units,
    )?
    .tau)
}

/// Reduced equation of motion of subsystem `J` when it does not interact:
/// `-(i/ħ)[H_J, ρ_J] - (1/2τ_J)(√ρ_J D_J + D_J†√ρ_J)`.
pub fn reduced_rhs(
    eval: &CompositeEvaluation,
    gens: &CompositeGenerators,
    j: usize,
    units: &UnitSystem,
) -> Result<OperatorMatrix> {
    let hj =
        gens.local_hamiltonians.get(j).ok_or_else(|| SeaError::InvalidConfig("local Hamiltonians unknown".into()))?;
    let l = &eval.local[j];
    let rho_j = l.frame.rho_j.rho();
    Ok(crate::op_space::commutator(hj, rho_j) * c(0.0, -1.0 / units.hbar) + &l.local_dissipator)
}

/// Permutes the factors of an operator: output factor `k` is input factor `order[k]`.
pub fn permute_factors(
    m: &OperatorMatrix,
    comp: &CompositionStructure,
    order: &[usize],
) -> Result<(OperatorMatrix, CompositionStructure)> {
    comp.check(m)?;
    let mut sorted = order.to_vec();
    sorted.sort_unstable();
    if sorted != (0..comp.len()).collect::<Vec<_>>() {
        return Err(SeaError::InvalidConfig(format!("{order:?} is not a permutation")));
    }
    let new = CompositionStructure::with_labels(
        order.iter().map(|&k| comp.dims[k]).collect(),
        order.iter().map(|&k| comp.labels[k].clone()).collect(),
    )?;
    let n = comp.total_dim();
    let target: Vec<usize> = (0..n)
        .map(|i| {
            let d = comp.digits(i);
            order.iter().fold(0, |acc, &k| acc * comp.dims[k] + d[k])
        })
        .collect();
    let mut out = OperatorMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out[(target[i], target[j])] = m[(i, j)];
        }
    }
    Ok((out, new))
}

fn von_neumann_sum(m: &OperatorMatrix) -> f64 {
    let (vals, _) = hermitian_eigen(m);
    vals.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum()
}

/// `σ_AB = Tr ρ ln ρ - Tr ρ_A ln ρ_A - Tr ρ_B ln ρ_B` with `A` the first
/// `split` factors.
pub fn correlation_functional(rho: &OperatorMatrix, comp: &CompositionStructure, split: usize) -> Result<f64> {
    let (a, b) = bipartition(comp, split)?;
    let rho_a = partial_trace(rho, comp, &a)?;
    let rho_b = partial_trace(rho, comp, &b)?;
    Ok(von_neumann_sum(rho) - von_neumann_sum(&rho_a) - von_neumann_sum(&rho_b))
}

fn bipartition(comp: &CompositionStructure, split: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    if split == 0 || split >= comp.len() {
        return Err(SeaError::InvalidConfig(format!(
            "split {split} does not define a bipartition of {} subsystems",
            comp.len()
        )));
    }
    Ok(((0..split).collect(), (split..comp.len()).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeMethod {
    Analytic,
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRates {
    pub sigma: f64,
    /// Contribution of the Hamiltonian term to `dσ/dt`.
    pub sigma_dot_h: f64,
    /// Minus the contribution of the dissipator, so that
    /// `dσ/dt = σ̇_H - σ̇_D`; positive when dissipation destroys correlations.
    pub sigma_dot_d: f64,
    pub method: DerivativeMethod,
}

/// Splits `dσ_AB/dt` into Hamiltonian and dissipative contributions.
pub fn correlation_rate_split(
    state: &SpectralState,
    comp: &CompositionStructure,
    split: usize,
    eval: &CompositeEvaluation,
    tol: &ToleranceSet,
) -> Result<CorrelationRates> {
    let (a, b) = bipartition(comp, split)?;
    let rho = state.rho();
    let rho_a = partial_trace(rho, comp, &a)?;
    let rho_b = partial_trace(rho, comp, &b)?;
    let sigma = correlation_functional(rho, comp, split)?;
    let full_rank =
        |m: &OperatorMatrix| hermitian_eigen(m).0.last().map(|&v| v > tol.rank_epsilon.max(1e-9)).unwrap_or(false);
    if full_rank(rho) && full_rank(&rho_a) && full_rank(&rho_b) {
        let la = crate::op_space::spectral_map(&rho_a, f64::ln);
        let lb = crate::op_space::spectral_map(&rho_b, f64::ln);
        let lr = state.log_on_range();
        let rate = |x: &OperatorMatrix| -> Result<f64> {
            let xa = partial_trace(x, comp, &a)?;
            let xb = partial_trace(x, comp, &b)?;
            Ok((x * lr).trace().re - (&xa * &la).trace().re - (&xb * &lb).trace().re)
        };
        return Ok(CorrelationRates {
            sigma,
            sigma_dot_h: rate(&eval.hamiltonian)?,
            sigma_dot_d: -rate(&eval.dissipator)?,
            method: DerivativeMethod::Analytic,
        });
    }
    let sig = |m: &OperatorMatrix| correlation_functional(&hermitian_part(m), comp, split);
    let central = |x: &OperatorMatrix, h: f64| -> Result<f64> {
        Ok((sig(&(rho + x * c(h, 0.0)))? - sig(&(rho - x * c(h, 0.0)))?) / (2.0 * h))
    };
    let richardson = |x: &OperatorMatrix| -> Result<f64> {
        let h = 1e-6;
        Ok((4.0 * central(x, h / 2.0)? - central(x, h)?) / 3.0)
    };
    Ok(CorrelationRates {
        sigma,
        sigma_dot_h: richardson(&eval.hamiltonian)?,
        sigma_dot_d: -richardson(&eval.dissipator)?,
        method: DerivativeMethod::FiniteDifference,
    })
}

/// Inputs of a separability audit on a noninteracting bipartition.
#[derive(Debug, Clone)]
pub struct BipartiteSystem {
    pub comp: CompositionStructure,
    /// Subsystem `A` is factors `0..split`, `B` the rest.
    pub split: usize,
    pub h_a: OperatorMatrix,
    pub h_b: OperatorMatrix,
}

impl BipartiteSystem {
    pub fn new(comp: CompositionStructure, split: usize, h_a: OperatorMatrix, h_b: OperatorMatrix) -> Result<Self> {
        let (a, b) = bipartition(&comp, split)?;
        if h_a.nrows() != comp.dim_of(&a) || h_b.nrows() != comp.dim_of(&b) {
            return Err(SeaError::DimensionMismatch { expected: comp.dim_of(&a), found: h_a.nrows() });
        }
        ensure_hermitian(&h_a)?;
        ensure_hermitian(&h_b)?;
        Ok(Self { comp, split, h_a, h_b })
    }

    fn dims(&self) -> (usize, usize) {
        let n = self.comp.total_dim();
        let da: usize = self.comp.dims[..self.split].iter().product();
        (da, n / da)
    }

    pub fn generators_with(&self, h_b: &OperatorMatrix) -> Result<CompositeGenerators> {
        let (da, db) = self.dims();
        let h = kron(&self.h_a, &identity(db)) + kron(&identity(da), h_b);
        if self.comp.len() == 2 {
            CompositeGenerators::new(&self.comp, vec![self.h_a.clone(), h_b.clone()], None, Vec::new())
        } else {
            CompositeGenerators::from_total(&self.comp, h, Vec::new())
        }
    }

    pub fn generators(&self) -> Result<CompositeGenerators> {
        self.generators_with(&self.h_b)
    }
}

/// Measured margins of the separability conditions.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SeparabilityReport {
    pub product_states: usize,
    pub correlated_states: usize,
    /// Product states: `‖ρ̇_D - (ρ̇_D^A ⊗ ρ_B + ρ_A ⊗ ρ̇_D^B)‖` with each part
    /// computed from the subsystem alone.
    pub factorization_residual: f64,
    /// `‖Tr_B ρ̇_D(H_B) - Tr_B ρ̇_D(H_B')‖` over random replacements `H_B'`
    /// (and the mirror statement for `A`).
    pub locality_residual: f64,
    /// `max |Tr[(H_A ⊗ I) ρ̇_D]|` and `max |Tr[(I ⊗ H_B) ρ̇_D]|`.
    pub energy_rate_a: f64,
    pub energy_rate_b: f64,
    /// Minimum subsystem entropy rate on product states.
    pub min_subsystem_entropy_rate: f64,
    /// Global `max |Tr(ρ̇_D R)|` over `I` and `H`.
    pub global_conservation: f64,
    /// Relative disagreement of `τ_J` between the composite and the isolated
    /// subsystem (product states) and under `H_B` replacement.
    pub tau_separability_residual: f64,
}

fn product_residual(rho: &OperatorMatrix, rho_a: &OperatorMatrix, rho_b: &OperatorMatrix) -> f64 {
    max_abs(&(rho - kron(rho_a, rho_b)))
}

/// Checks the strong-separability conditions on a set of states.
pub fn separability_report(
    system: &BipartiteSystem,
    model: DissipatorModel,
    policies: &[TauPolicy],
    states: &[OperatorMatrix],
    replacements: usize,
    seed: u64,
    units: &UnitSystem,
    tol: &ToleranceSet,
) -> Result<SeparabilityReport> {
    let comp = &system.comp;
    let (a, b) = bipartition(comp, system.split)?;
    let (da, db) = system.dims();
    let gens = system.generators()?;
    let comp_a = comp.block(0..system.split)?;
    let comp_b = comp.block(system.split..comp.len())?;
    let pol_a: Vec<TauPolicy> = if policies.len() == 1 { policies.to_vec() } else { policies[..system.split].to_vec() };
    let pol_b: Vec<TauPolicy> = if policies.len() == 1 { policies.to_vec() } else { policies[system.split..].to_vec() };
    let gens_a = CompositeGenerators::from_total(&comp_a, system.h_a.clone(), Vec::new())?;
    let gens_b = CompositeGenerators::from_total(&comp_b, system.h_b.clone(), Vec::new())?;
    let mut rng = random::rng(seed);
    let alt_b: Vec<OperatorMatrix> = (0..replacements).map(|_| random::hermitian(&mut rng, db)).collect();
    let alt_a: Vec<OperatorMatrix> = (0..replacements).map(|_| random::hermitian(&mut rng, da)).collect();
    let ha_full = kron(&system.h_a, &identity(db));
    let hb_full = kron(&identity(da), &system.h_b);

    let mut rep = SeparabilityReport { min_subsystem_entropy_rate: f64::INFINITY, ..Default::default() };
    for rho in states {
        let state = SpectralState::new(rho, units, tol)?;
        let ev = evaluate(&state, comp, &gens, policies, model, units, tol)?;
        let diss = &ev.dissipator;
        rep.energy_rate_a = rep.energy_rate_a.max((diss * &ha_full).trace().re.abs());
        rep.energy_rate_b = rep.energy_rate_b.max((diss * &hb_full).trace().re.abs());
        rep.global_conservation =
            rep.global_conservation.max(diss.trace().re.abs()).max((diss * gens.h()).trace().re.abs());

        let tr_b = partial_trace(diss, comp, &a)?;
        let tr_a = partial_trace(diss, comp, &b)?;
        for hb in &alt_b {
            let g = system.generators_with(hb)?;
            let alt = evaluate(&state, comp, &g, policies, model, units, tol)?;
            rep.locality_residual =
                rep.locality_residual.max(max_abs(&(partial_trace(&alt.dissipator, comp, &a)? - &tr_b)));
            for j in 0..system.split {
                rep.tau_separability_residual =
                    rep.tau_separability_residual.max(rel(alt.local[j].tau, ev.local[j].tau));
            }
        }
        for ha in &alt_a {
            let h = kron(ha, &identity(db)) + &hb_full;
            let g = CompositeGenerators::from_total(comp, h, Vec::new())?;
            let alt = evaluate(&state, comp, &g, policies, model, units, tol)?;
            rep.locality_residual =
                rep.locality_residual.max(max_abs(&(partial_trace(&alt.dissipator, comp, &b)? - &tr_a)));
        }

        let rho_a = hermitian_part(&partial_trace(rho, comp, &a)?);
        let rho_b = hermitian_part(&partial_trace(rho, comp, &b)?);
        if product_residual(rho, &rho_a, &rho_b) < 1e-12 {
            rep.product_states += 1;
            let sa = SpectralState::new(&rho_a, units, &ToleranceSet::for_dim(da))?;
            let sb = SpectralState::new(&rho_b, units, &ToleranceSet::for_dim(db))?;
            let ea = evaluate(&sa, &comp_a, &gens_a, &pol_a, model, units, tol)?;
            let eb = evaluate(&sb, &comp_b, &gens_b, &pol_b, model, units, tol)?;
            let expected = kron(&ea.dissipator, &rho_b) + kron(&rho_a, &eb.dissipator);
            rep.factorization_residual = rep.factorization_residual.max(max_abs(&(diss - expected)));
            rep.min_subsystem_entropy_rate = rep
                .min_subsystem_entropy_rate
                .min(single::entropy_rate_of(&sa, &tr_b))
                .min(single::entropy_rate_of(&sb, &tr_a));
            for (j, l) in ea.local.iter().enumerate() {
                rep.tau_separability_residual = rep.tau_separability_residual.max(rel(l.tau, ev.local[j].tau));
            }
            for (j, l) in eb.local.iter().enumerate() {
                rep.tau_separability_residual =
                    rep.tau_separability_residual.max(rel(l.tau, ev.local[system.split + j].tau));
            }
        } else {
            rep.correlated_states += 1;
        }
    }
    if rep.min_subsystem_entropy_rate == f64::INFINITY {
        rep.min_subsystem_entropy_rate = 0.0;
    }
    Ok(rep)
}

fn rel(x: f64, y: f64) -> f64 {
    (x - y).abs() / x.abs().max(y.abs()).max(1e-300)
}

/// `Tr(ρ̇ (B ln ρ))`-free global entropy check used by tests.
pub fn global_entropy_rate(state: &SpectralState, rho_dot: &OperatorMatrix) -> f64 {
    single::entropy_rate_of(state, rho_dot)
}

/// Sum of the local `(D_J|D_J)` of an evaluation.
pub fn total_dissipation(eval: &CompositeEvaluation) -> f64 {
    eval.local.iter().map(|l| inner(&l.direction.d, &l.direction.d)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::op_space::{diag, real_matrix, trace};
    use approx::assert_abs_diff_eq;

    fn units() -> UnitSystem {
        UnitSystem::default()
    }

    fn bell_mixture(p: f64) -> OperatorMatrix {
        let s = 0.5f64.sqrt();
        let psi = [s, 0.0, 0.0, s];
        OperatorMatrix::from_fn(4, 4, |i, j| c(p * psi[i] * psi[j], 0.0)) + identity(4) * c((1.0 - p) / 4.0, 0.0)
    }

    #[test]
    fn partial_trace_examples() {
        let comp = CompositionStructure::new(vec![2, 2]).unwrap();
        let ra = real_matrix(2, &[0.7, 0.2, 0.2, 0.3]);
        let rb = diag(&[0.4, 0.6]);
        let prod = kron(&ra, &rb);
        assert!(max_abs(&(partial_trace(&prod, &comp, &[0]).unwrap() - &ra)) < 1e-15);
        assert!(max_abs(&(partial_trace(&prod, &comp, &[1]).unwrap() - &rb)) < 1e-15);
        let half = identity(2) * c(0.5, 0.0);
        assert!(max_abs(&(partial_trace(&bell_mixture(1.0), &comp, &[0]).unwrap() - &half)) < 1e-15);
        assert!(max_abs(&(partial_trace(&bell_mixture(0.6), &comp, &[0]).unwrap() - &half)) < 1e-15);
        assert!(partial_trace(&prod, &comp, &[2]).is_err());
    }

    #[test]
    fn partial_trace_three_factors() {
        let comp = CompositionStructure::new(vec![2, 3, 2]).unwrap();
        let mut r = random::rng(5);
        let a = random::full_rank_state(&mut r, 2);
        let b = random::full_rank_state(&mut r, 3);
        let cst = random::full_rank_state(&mut r, 2);
        let rho = kron(&kron(&a, &b), &cst);
        assert!(max_abs(&(partial_trace(&rho, &comp, &[1]).unwrap() - &b)) < 1e-14);
        assert!(max_abs(&(partial_trace(&rho, &comp, &[0, 2]).unwrap() - kron(&a, &cst))) < 1e-14);
    }

    #[test]
    fn perception_examples() {
        let comp = CompositionStructure::new(vec![2, 2]).unwrap();
        let tol = ToleranceSet::for_dim(4);
        let ra = real_matrix(2, &[0.7, 0.2, 0.2, 0.3]);
        let rb = diag(&[0.4, 0.6]);
        let s = SpectralState::new(&kron(&ra, &rb), &units(), &tol).unwrap();
        assert!(max_abs(&(perception_operator(&s, &comp, 0, &identity(4)).unwrap() - identity(2))) < 1e-15);
        let ha = diag(&[0.0, 1.0]);
        let hb = real_matrix(2, &[0.5, 0.3, 0.3, -1.0]);
        let h = kron(&ha, &identity(2)) + kron(&identity(2), &hb);
        let p = perception_operator(&s, &comp, 0, &h).unwrap();
        let eb = (&rb * &hb).trace().re;
        assert!(max_abs(&(p - (&ha + identity(2) * c(eb, 0.0)))) < 1e-15);

        // σz⊗σz on the Bell mixture: ρ_B = I/2 so the perception is Tr(σz)/2 σz = 0
        let z = diag(&[1.0, -1.0]);
        let t = SpectralState::new(&bell_mixture(0.6), &units(), &tol).unwrap();
        let pz = perception_operator(&t, &comp, 0, &kron(&z, &z)).unwrap();
        assert!(max_abs(&pz) < 1e-15);
        // and for a product of non-uniform marginals it is ⟨σz⟩_B σz
        let pz2 = perception_operator(&s, &comp, 0, &kron(&z, &z)).unwrap();
        assert!(max_abs(&(pz2 - &z * c(-0.2, 0.0))) < 1e-15);
    }

    #[test]
    fn single_factor_reduces_exactly() {
        let comp = CompositionStructure::new(vec![3]).unwrap();
        let tol = ToleranceSet::for_dim(3);
        let s = SpectralState::new(&diag(&[0.5, 0.1, 0.4]), &units(), &tol).unwrap();
        let gens = CompositeGenerators::from_total(&comp, diag(&[0.0, 1.0, 2.0]), vec![]).unwrap();
        for policy in [TauPolicy::constant(1.0), TauPolicy::max_epr(1.0)] {
            let comp_r = composite_rhs(&s, &comp, &gens, &[policy.clone()], &units(), &tol).unwrap();
            let single_r = single::rhs(&s, &gens.set, &policy, &units(), &tol).unwrap();
            assert!(max_abs(&(comp_r - single_r)) < 1e-14);
        }
    }

    #[test]
    fn symmetric_fixture_has_no_local_dissipation() {
        let comp = CompositionStructure::new(vec![2, 2]).unwrap();
        let tol = ToleranceSet::for_dim(4);
        let z = diag(&[1.0, -1.0]);
        let gens = CompositeGenerators::noninteracting(&comp, vec![z.clone(), z]).unwrap();
        let s = SpectralState::new(&bell_mixture(0.6), &units(), &tol).unwrap();
        for j in 0..2 {
            let (_, d) = local_dissipative_direction(&s, &comp, &gens, j, &units(), &tol).unwrap();
            assert!(d.d_norm_sq < 1e-24);
        }
    }

    #[test]
    fn gibbs_is_stationary_with_interaction() {
        let comp = CompositionStructure::new(vec![2, 2]).unwrap();
        let tol = ToleranceSet::for_dim(4);
        let mut r = random::rng(11);
        let v = random::hermitian(&mut r, 4) * c(0.3, 0.0);
        let gens =
            CompositeGenerators::new(&comp, vec![diag(&[0.0, 1.0]), diag(&[0.0, 0.7])], Some(v), vec![]).unwrap();
        let g = single::gibbs_state(&gens.set, 0.9, &[], &units(), &tol).unwrap();
        for model in [DissipatorModel::SteepestEntropyAscent, DissipatorModel::SqrtPerceptionVariant] {
            let ev = evaluate(&g, &comp, &gens, &[TauPolicy::constant(1.0)], model, &units(), &tol).unwrap();
            assert!(max_abs(&ev.rhs) < 1e-10, "{model:?}");
        }
    }

    #[test]
    fn correlation_functional_examples() {
        let comp = CompositionStructure::new(vec![2, 2]).unwrap();
        let prod = kron(&diag(&[0.3, 0.7]), &real_matrix(2, &[0.6, 0.1, 0.1, 0.4]));
        assert_abs_diff_eq!(correlation_functional(&prod, &comp, 1).unwrap(), 0.0, epsilon = 1e-13);
        assert_abs_diff_eq!(
            correlation_functional(&bell_mixture(1.0), &comp, 1).unwrap(),
            2.0 * 2f64.ln(),
            epsilon = 1e-13
        );
        // Bell mixture: eigenvalues (1+3p)/4 and (1-p)/4 (three times), marginals I/2
        let p: f64 = 0.6;
        let l1 = (1.0 + 3.0 * p) / 4.0;
        let l2 = (1.0 - p) / 4.0;
        let expected = l1 * l1.ln() + 3.0 * l2 * l2.ln() + 2.0 * 2f64.ln();
        assert_abs_diff_eq!(correlation_functional(&bell_mixture(p), &comp, 1).unwrap(), expected, epsilon = 1e-13);
    }

    #[test]
    fn permutation_swaps_factors() {
        let comp = CompositionStructure::new(vec![2, 3]).unwrap();
        let mut r = random::rng(2);
        let a = random::full_rank_state(&mut r, 2);
        let b = random::full_rank_state(&mut r, 3);
        let (swapped, new) = permute_factors(&kron(&a, &b), &comp, &[1, 0]).unwrap();
        assert_eq!(new.dims, vec![3, 2]);
        assert!(max_abs(&(swapped - kron(&b, &a))) < 1e-15);
    }

    #[test]
    fn reduced_dynamics_of_noninteracting_pair() {
        let comp = CompositionStructure::new(vec![2, 2]).unwrap();
        let tol = ToleranceSet::for_dim(4);
        let gens = CompositeGenerators::noninteracting(&comp, vec![diag(&[0.0, 1.0]), diag(&[0.0, 1.3])]).unwrap();
        let mut r = random::rng(4);
        let rho = random::full_rank_state(&mut r, 4);
        let s = SpectralState::new(&rho, &units(), &tol).unwrap();
        let ev = evaluate(
            &s,
            &comp,
            &gens,
            &[TauPolicy::constant(1.0)],
            DissipatorModel::SteepestEntropyAscent,
            &units(),
            &tol,
        )
        .unwrap();
        for j in 0..2 {
            let lhs = partial_trace(&ev.rhs, &comp, &[j]).unwrap();
            let red = reduced_rhs(&ev, &gens, j, &units()).unwrap();
            assert!(max_abs(&(lhs - red)) < 1e-12);
        }
        assert!(trace(&ev.rhs).norm() < 1e-12);
    }
}
