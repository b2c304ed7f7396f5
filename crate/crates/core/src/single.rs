//! Dynamics of a single indivisible constituent.
//!
//! The equation of motion is
//!
//! ```text
//! dρ/dt = -(i/ħ)[H, ρ] - (1/2τ)(√ρ D + D†√ρ),   D = [√ρ B ln ρ]⊥ span{√ρ I, √ρ H, √ρ G_i}
//! ```
//!
//! where the projection is taken in the real operator inner-product space.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SeaError};
use crate::op_space::{
    c, commutator, ensure_hermitian, ensure_same_dim, from_spectrum, gram_expansion, gram_matrix, hermitian_eigen,
    hermitian_part, identity, inner, max_abs, norm, op_norm, orthonormalize, real_least_squares, remove_components,
    OperatorMatrix, SpectralState, ToleranceSet, UnitSystem,
};

/// Generators of the motion besides the identity: `H` and the extra
/// conserved observables `G_i`.
#[derive(Debug, Clone)]
pub struct GeneratorSet {
    pub h: OperatorMatrix,
    pub extras: Vec<OperatorMatrix>,
    pub commutation_tolerance: f64,
}

impl GeneratorSet {
    pub fn new(h: OperatorMatrix, extras: Vec<OperatorMatrix>) -> Result<Self> {
        Self::with_tolerance(h, extras, 1e-9)
    }

    pub fn with_tolerance(h: OperatorMatrix, extras: Vec<OperatorMatrix>, commutation_tolerance: f64) -> Result<Self> {
        ensure_hermitian(&h)?;
        for (index, g) in extras.iter().enumerate() {
            ensure_same_dim(&h, g)?;
            ensure_hermitian(g)?;
            let n = op_norm(&commutator(g, &h));
            if n > commutation_tolerance {
                return Err(SeaError::NonCommutingGenerator { index, norm: n });
            }
        }
        Ok(Self { h: hermitian_part(&h), extras: extras.iter().map(hermitian_part).collect(), commutation_tolerance })
    }

    pub fn hamiltonian(h: OperatorMatrix) -> Result<Self> {
        Self::new(h, Vec::new())
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    /// `[I, H, G_1, ...]`.
    pub fn generators(&self) -> Vec<OperatorMatrix> {
        let mut out = Vec::with_capacity(self.extras.len() + 2);
        out.push(identity(self.dim()));
        out.push(self.h.clone());
        out.extend(self.extras.iter().cloned());
        out
    }

    /// `[H, G_1, ...]`: the generators whose mean values are tracked.
    pub fn observables(&self) -> Vec<OperatorMatrix> {
        let mut out = Vec::with_capacity(self.extras.len() + 1);
        out.push(self.h.clone());
        out.extend(self.extras.iter().cloned());
        out
    }
}

/// Closure for the internal relaxation time `τ(ρ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TauPolicy {
    Constant {
        value: f64,
    },
    /// τ at the time–energy uncertainty bound, i.e. maximal entropy production.
    MaxEpr {
        fallback: f64,
        #[serde(default = "default_variance_epsilon")]
        variance_epsilon: f64,
    },
    /// Tagged user functional. Supported tags:
    /// - `scaled_max_epr` with params `[factor, fallback]`: `factor · τ_min`, factor ≥ 1;
    /// - `purity` with params `[a, b]`: `a + b Tr ρ²`, a > 0, b ≥ 0.
    Custom {
        tag: String,
        params: Vec<f64>,
    },
}

fn default_variance_epsilon() -> f64 {
    1e-12
}

impl TauPolicy {
    pub fn constant(value: f64) -> Self {
        TauPolicy::Constant { value }
    }

    pub fn max_epr(fallback: f64) -> Self {
        TauPolicy::MaxEpr { fallback, variance_epsilon: default_variance_epsilon() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SeaError::InvalidConfig(msg));
        match self {
            TauPolicy::Constant { value } if !(*value > 0.0 && value.is_finite()) => {
                bad(format!("constant tau must be positive, got {value}"))
            }
            TauPolicy::MaxEpr { fallback, variance_epsilon } => {
                if !(*fallback > 0.0 && fallback.is_finite()) {
                    return bad(format!("fallback tau must be positive, got {fallback}"));
                }
                if !(*variance_epsilon > 0.0) {
                    return bad(format!("variance_epsilon must be positive, got {variance_epsilon}"));
                }
                Ok(())
            }
            TauPolicy::Custom { tag, params } => match (tag.as_str(), params.as_slice()) {
                ("scaled_max_epr", [factor, fallback]) if *factor >= 1.0 && *fallback > 0.0 => Ok(()),
                ("purity", [a, b]) if *a > 0.0 && *b >= 0.0 => Ok(()),
                _ => bad(format!("unsupported custom tau functional {tag:?} with params {params:?}")),
            },
            _ => Ok(()),
        }
    }

    /// Whether the closure drives τ to zero together with (D|D).
    pub fn vanishes_at_equilibrium(&self) -> bool {
        match self {
            TauPolicy::MaxEpr { .. } => true,
            TauPolicy::Custom { tag, .. } => tag == "scaled_max_epr",
            TauPolicy::Constant { .. } => false,
        }
    }
}

/// The projected entropy gradient `D` and its manifold.
#[derive(Debug, Clone)]
pub struct DissipativeDirection {
    pub d: OperatorMatrix,
    pub d_norm_sq: f64,
    /// Orthonormal basis of the constraint manifold.
    pub manifold_basis: Vec<OperatorMatrix>,
    /// Indices into `[√ρI, √ρH, √ρG_i]` that survived the rank-revealing pass.
    pub retained: Vec<usize>,
    /// `(√ρ ln ρ | A_i)` for each manifold basis element.
    pub multipliers: Vec<f64>,
}

/// `[√ρ R_i]` for the generators `[I, H, G_i]`.
pub fn manifold_vectors(state: &SpectralState, gen: &GeneratorSet) -> Vec<OperatorMatrix> {
    gen.generators().iter().map(|r| state.weighted(r)).collect()
}

/// Projects `target` off the span of `vectors` and packages the result.
pub(crate) fn direction_from(
    target: &OperatorMatrix,
    vectors: &[OperatorMatrix],
    tol: &ToleranceSet,
) -> DissipativeDirection {
    let ortho = orthonormalize(vectors, tol);
    let multipliers = ortho.basis.iter().map(|a| inner(target, a)).collect();
    let d = remove_components(target, &ortho.basis);
    let d_norm_sq = inner(&d, &d);
    DissipativeDirection { d, d_norm_sq, manifold_basis: ortho.basis, retained: ortho.retained, multipliers }
}

pub fn dissipative_direction(
    state: &SpectralState,
    gen: &GeneratorSet,
    tol: &ToleranceSet,
) -> Result<DissipativeDirection> {
    ensure_same_dim(state.rho(), &gen.h)?;
    let target = state.weighted(state.log_on_range());
    Ok(direction_from(&target, &manifold_vectors(state, gen), tol))
}

/// `D` from the Gram-determinant expansion over the retained manifold vectors.
pub fn dissipative_direction_gram(
    state: &SpectralState,
    gen: &GeneratorSet,
    tol: &ToleranceSet,
) -> Result<OperatorMatrix> {
    let vectors = manifold_vectors(state, gen);
    let kept: Vec<OperatorMatrix> =
        orthonormalize(&vectors, tol).retained.iter().map(|&i| vectors[i].clone()).collect();
    gram_expansion(&state.weighted(state.log_on_range()), &kept)
}

/// `-(i/ħ)[H, ρ]`.
pub fn hamiltonian_term(state: &SpectralState, gen: &GeneratorSet, units: &UnitSystem) -> OperatorMatrix {
    commutator(&gen.h, state.rho()) * c(0.0, -1.0 / units.hbar)
}

/// `E_H = (i/ħ) √ρ ΔH`, so that `√ρ E_H + E_H† √ρ = -(i/ħ)[H, ρ]`.
pub fn hamiltonian_e_operator(state: &SpectralState, gen: &GeneratorSet, units: &UnitSystem) -> OperatorMatrix {
    state.weighted(&state.deviation(&gen.h)) * c(0.0, 1.0 / units.hbar)
}

/// `⟨ΔH, ΔH⟩`.
pub fn energy_variance(state: &SpectralState, gen: &GeneratorSet) -> f64 {
    state.cov(&gen.h, &gen.h).max(0.0)
}

/// `ħ / (2 √⟨ΔH,ΔH⟩)`; infinite for zero variance.
pub fn tau_h(state: &SpectralState, gen: &GeneratorSet, units: &UnitSystem) -> f64 {
    let var = energy_variance(state, gen);
    if var <= 0.0 {
        f64::INFINITY
    } else {
        units.hbar / (2.0 * var.sqrt())
    }
}

/// Smallest τ compatible with the uncertainty relation: `(ħ/2) √((D|D)/⟨ΔH,ΔH⟩)`.
pub fn tau_min(d_norm_sq: f64, variance: f64, units: &UnitSystem) -> f64 {
    0.5 * units.hbar * (d_norm_sq / variance).sqrt()
}

/// Value of τ together with whether the closure fell back to its default.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauValue {
    pub tau: f64,
    pub fallback: bool,
}

pub(crate) fn tau_from_parts(
    policy: &TauPolicy,
    d_norm_sq: f64,
    variance: f64,
    purity: f64,
    equilibrium_epsilon: f64,
    units: &UnitSystem,
) -> Result<TauValue> {
    policy.validate()?;
    let min_or = |fallback: f64, variance_epsilon: f64, factor: f64| {
        if variance < variance_epsilon || d_norm_sq < equilibrium_epsilon {
            TauValue { tau: fallback, fallback: true }
        } else {
            TauValue { tau: factor * tau_min(d_norm_sq, variance, units), fallback: false }
        }
    };
    Ok(match policy {
        TauPolicy::Constant { value } => TauValue { tau: *value, fallback: false },
        TauPolicy::MaxEpr { fallback, variance_epsilon } => min_or(*fallback, *variance_epsilon, 1.0),
        TauPolicy::Custom { tag, params } => match tag.as_str() {
            "scaled_max_epr" => min_or(params[1], 1e-12, params[0]),
            _ => TauValue { tau: params[0] + params[1] * purity, fallback: false },
        },
    })
}

pub fn tau_value(
    policy: &TauPolicy,
    state: &SpectralState,
    gen: &GeneratorSet,
    dir: &DissipativeDirection,
    units: &UnitSystem,
) -> Result<f64> {
    let eq = ToleranceSet::for_dim(state.dim()).equilibrium_epsilon;
    Ok(tau_from_parts(policy, dir.d_norm_sq, energy_variance(state, gen), state.purity(), eq, units)?.tau)
}

/// `-(1/2τ)(√ρ D + D† √ρ)`.
pub fn dissipator_from(sqrt_rho: &OperatorMatrix, d: &OperatorMatrix, tau: f64) -> OperatorMatrix {
    (sqrt_rho * d + d.adjoint() * sqrt_rho) * c(-0.5 / tau, 0.0)
}

/// Everything computed in one evaluation of the equation of motion.
#[derive(Debug, Clone)]
pub struct SingleEvaluation {
    pub hamiltonian: OperatorMatrix,
    pub dissipator: OperatorMatrix,
    pub rhs: OperatorMatrix,
    pub direction: DissipativeDirection,
    pub tau: f64,
    pub tau_fallback: bool,
    /// False when the dissipator was switched off at a nondissipative state.
    pub dissipation_active: bool,
    /// `k_B (D|D) / τ`.
    pub entropy_rate: f64,
    pub energy_variance: f64,
}

pub fn evaluate(
    state: &SpectralState,
    gen: &GeneratorSet,
    policy: &TauPolicy,
    units: &UnitSystem,
    tol: &ToleranceSet,
) -> Result<SingleEvaluation> {
    let direction = dissipative_direction(state, gen, tol)?;
    let variance = energy_variance(state, gen);
    let tv = tau_from_parts(policy, direction.d_norm_sq, variance, state.purity(), tol.equilibrium_epsilon, units)?;
    let hamiltonian = hamiltonian_term(state, gen, units);
    let active = !(policy.vanishes_at_equilibrium() && direction.d_norm_sq < tol.equilibrium_epsilon);
    let (dissipator, entropy_rate) = if active {
        (dissipator_from(state.sqrt_rho(), &direction.d, tv.tau), units.k_b * direction.d_norm_sq / tv.tau)
    } else {
        (OperatorMatrix::zeros(state.dim(), state.dim()), 0.0)
    };
    let rhs = &hamiltonian + &dissipator;
    Ok(SingleEvaluation {
        hamiltonian,
        dissipator,
        rhs,
        direction,
        tau: tv.tau,
        tau_fallback: tv.fallback,
        dissipation_active: active,
        entropy_rate,
        energy_variance: variance,
    })
}

/// The full right-hand side `dρ/dt`.
pub fn rhs(
    state: &SpectralState,
    gen: &GeneratorSet,
    policy: &TauPolicy,
    units: &UnitSystem,
    tol: &ToleranceSet,
) -> Result<OperatorMatrix> {
    Ok(evaluate(state, gen, policy, units, tol)?.rhs)
}

/// `k_B (D|D) / τ`.
pub fn entropy_rate(
    state: &SpectralState,
    gen: &GeneratorSet,
    policy: &TauPolicy,
    units: &UnitSystem,
    tol: &ToleranceSet,
) -> Result<f64> {
    Ok(evaluate(state, gen, policy, units, tol)?.entropy_rate)
}

/// `-k_B Tr(ρ̇ B ln ρ)` for any trace-free rate `ρ̇`.
pub fn entropy_rate_of(state: &SpectralState, rho_dot: &OperatorMatrix) -> f64 {
    -state.k_b() * (rho_dot * state.log_on_range()).trace().re
}

/// `(k_B/τ) Γ(√ρ ln ρ, {√ρ R_i}) / Γ({√ρ R_i})` over the retained generators.
pub fn entropy_rate_gram(state: &SpectralState, gen: &GeneratorSet, tau: f64, tol: &ToleranceSet) -> Result<f64> {
    let vectors = manifold_vectors(state, gen);
    let kept: Vec<OperatorMatrix> =
        orthonormalize(&vectors, tol).retained.iter().map(|&i| vectors[i].clone()).collect();
    let target = state.weighted(state.log_on_range());
    Ok(state.k_b() * crate::op_space::gram_ratio(&target, &kept)? / tau)
}

/// `(2/ħ) k_B √(⟨ΔH,ΔH⟩ (D|D))`, the largest entropy rate any τ allows.
pub fn entropy_rate_upper_bound(variance: f64, d_norm_sq: f64, units: &UnitSystem) -> f64 {
    2.0 / units.hbar * units.k_b * (variance * d_norm_sq).sqrt()
}

/// `τ_D = τ / √(D|D)`; `None` when `D = 0`.
pub fn tau_d(dir: &DissipativeDirection, tau: f64) -> Option<f64> {
    if dir.d_norm_sq > 0.0 {
        Some(tau / dir.d_norm_sq.sqrt())
    } else {
        None
    }
}

/// `E_D = -D / (2τ)`.
pub fn dissipative_e_operator(dir: &DissipativeDirection, tau: f64) -> OperatorMatrix {
    &dir.d * c(-0.5 / tau, 0.0)
}

/// Entropy gradient with respect to √ρ: `-2 k_B (√ρ B ln ρ + √ρ)`.
pub fn entropy_gradient(state: &SpectralState) -> OperatorMatrix {
    (state.weighted(state.log_on_range()) + state.sqrt_rho()) * c(-2.0 * state.k_b(), 0.0)
}

/// Entropy rate produced by `ρ̇ = √ρ E + E† √ρ`: `(E | ∇s)`.
pub fn entropy_rate_along(state: &SpectralState, e: &OperatorMatrix) -> f64 {
    inner(e, &entropy_gradient(state))
}

/// Which part of the motion a characteristic time refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RatePart {
    Hamiltonian,
    Dissipative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharacteristicTime {
    /// `√⟨ΔF,ΔF⟩ / |df/dt|`, infinite when `f` is stationary.
    pub tau_f: f64,
    /// `τ_H` or `τ_D`.
    pub bound: f64,
    pub holds: bool,
}

/// Characteristic time of the mean value of `F` under one part of the motion.
pub fn characteristic_time_bound(
    state: &SpectralState,
    gen: &GeneratorSet,
    f: &OperatorMatrix,
    which: RatePart,
    policy: &TauPolicy,
    units: &UnitSystem,
    tol: &ToleranceSet,
) -> Result<CharacteristicTime> {
    ensure_same_dim(state.rho(), f)?;
    let ev = evaluate(state, gen, policy, units, tol)?;
    let var_f = state.cov(f, f);
    if var_f <= 0.0 {
        return Err(SeaError::Undefined("observable has zero variance".into()));
    }
    let (rate_op, bound) = match which {
        RatePart::Hamiltonian => (&ev.hamiltonian, tau_h(state, gen, units)),
        RatePart::Dissipative => (
            &ev.dissipator,
            if ev.dissipation_active { tau_d(&ev.direction, ev.tau).unwrap_or(f64::INFINITY) } else { f64::INFINITY },
        ),
    };
    let rate = (rate_op * f).trace().re.abs();
    let tau_f = if rate > 0.0 { var_f.sqrt() / rate } else { f64::INFINITY };
    let holds = tau_f.is_infinite() || tau_f >= bound * (1.0 - 1e-9) - 1e-12;
    Ok(CharacteristicTime { tau_f, bound, holds })
}

/// Residual of the Lagrange condition for constrained maximal entropy rate:
/// `‖∇s - Σ λ_i 2√ρR_i - λ_0 E_D‖` minimized over the multipliers.
pub fn variational_residual(state: &SpectralState, gen: &GeneratorSet, dir: &DissipativeDirection, tau: f64) -> f64 {
    let vectors = manifold_vectors(state, gen);
    let mut columns: Vec<OperatorMatrix> = dir.retained.iter().map(|&i| &vectors[i] * c(2.0, 0.0)).collect();
    let e_d = dissipative_e_operator(dir, tau);
    if norm(&e_d) > 0.0 {
        columns.push(e_d);
    }
    real_least_squares(&columns, &entropy_gradient(state)).residual
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateClass {
    Equilibrium,
    LimitCycle,
    Dissipative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NondissipativeReport {
    pub nondissipative: bool,
    pub class: StateClass,
    pub d_norm_sq: f64,
    /// `‖[B, H]‖` in operator norm.
    pub range_commutator: f64,
}

pub fn nondissipative_test(
    state: &SpectralState,
    gen: &GeneratorSet,
    tol: &ToleranceSet,
) -> Result<NondissipativeReport> {
    let dir = dissipative_direction(state, gen, tol)?;
    let range_commutator = op_norm(&commutator(state.range_projector(), &gen.h));
    let nondissipative = dir.d_norm_sq < tol.equilibrium_epsilon;
    let class = if !nondissipative {
        StateClass::Dissipative
    } else if range_commutator < tol.manifold_epsilon.max(1e-9) {
        StateClass::Equilibrium
    } else {
        StateClass::LimitCycle
    };
    Ok(NondissipativeReport { nondissipative, class, d_norm_sq: dir.d_norm_sq, range_commutator })
}

/// Normalized `exp(X)` for Hermitian `X`, shifted for overflow safety.
pub fn normalized_exponential(x: &OperatorMatrix) -> Result<OperatorMatrix> {
    let (values, vectors) = hermitian_eigen(x);
    let top = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(SeaError::Overflow("non-finite exponent".into()));
    }
    let weights: Vec<f64> = values.iter().map(|v| (v - top).exp()).collect();
    let z: f64 = weights.iter().sum();
    let probs: Vec<f64> = weights.iter().map(|w| w / z).collect();
    Ok(hermitian_part(&from_spectrum(&vectors, &probs)))
}

/// `exp(-βH + Σ ν_i G_i) / Tr(...)`.
pub fn gibbs_state(
    gen: &GeneratorSet,
    beta: f64,
    nus: &[f64],
    units: &UnitSystem,
    tol: &ToleranceSet,
) -> Result<SpectralState> {
    if nus.len() != gen.extras.len() {
        return Err(SeaError::DimensionMismatch { expected: gen.extras.len(), found: nus.len() });
    }
    if !beta.is_finite() || nus.iter().any(|v| !v.is_finite()) {
        return Err(SeaError::Overflow(format!("non-finite Gibbs parameter (β = {beta})")));
    }
    let mut x = &gen.h * c(-beta, 0.0);
    for (g, nu) in gen.extras.iter().zip(nus) {
        x += g * c(*nu, 0.0);
    }
    let rho = normalized_exponential(&x)?;
    SpectralState::new(&rho, units, tol)
}

/// Canonical exponent `β` with `Tr(ρ_β H) = energy`, by bisection.
pub fn solve_beta_for_energy(h: &OperatorMatrix, energy: f64) -> Result<f64> {
    let (values, _) = hermitian_eigen(h);
    let (emax, emin) = (values[0], *values.last().unwrap());
    let spread = emax - emin;
    if spread <= 0.0 {
        return Ok(0.0);
    }
    if !(energy > emin && energy < emax) {
        return Err(SeaError::Undefined(format!(
            "energy {energy} outside the open spectral interval ({emin}, {emax})"
        )));
    }
    let mean = |beta: f64| {
        let w: Vec<f64> = values.iter().map(|e| (-beta * (e - emin)).exp()).collect();
        let w_neg: Vec<f64> = values.iter().map(|e| (-beta * (e - emax)).exp()).collect();
        let w = if beta >= 0.0 { w } else { w_neg };
        let z: f64 = w.iter().sum();
        values.iter().zip(&w).map(|(e, p)| e * p).sum::<f64>() / z
    };
    // mean(β) is strictly decreasing
    let mut lo = -1.0 / spread;
    let mut hi = 1.0 / spread;
    while mean(lo) < energy {
        lo *= 2.0;
        if lo < -1e8 {
            return Err(SeaError::Overflow("β bracket diverged".into()));
        }
    }
    while mean(hi) > energy {
        hi *= 2.0;
        if hi > 1e8 {
            return Err(SeaError::Overflow("β bracket diverged".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean(mid) > energy {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-16 * hi.abs().max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Maximum-entropy state `exp(-Σ λ_k O_k)/Z` with `Tr(ρ O_k) = targets[k]`,
/// found by damped Newton iteration on the convex dual `ln Z(λ) + Σ λ_k t_k`.
pub fn max_entropy_state(ops: &[OperatorMatrix], targets: &[f64]) -> Result<(OperatorMatrix, Vec<f64>)> {
    let n = ops.len();
    let dim = ops.first().map(|o| o.nrows()).unwrap_or(0);
    if n == 0 {
        return Ok((identity(dim) / c(dim as f64, 0.0), vec![]));
    }
    let state_of = |lambda: &[f64]| -> Result<OperatorMatrix> {
        let mut x = OperatorMatrix::zeros(dim, dim);
        for (o, l) in ops.iter().zip(lambda) {
            x -= o * c(*l, 0.0);
        }
        normalized_exponential(&x)
    };
    let dual = |lambda: &[f64]| -> f64 {
        let mut x = OperatorMatrix::zeros(dim, dim);
        for (o, l) in ops.iter().zip(lambda) {
            x -= o * c(*l, 0.0);
        }
        let (values, _) = hermitian_eigen(&x);
        let top = values[0];
        let lz = top + values.iter().map(|v| (v - top).exp()).sum::<f64>().ln();
        lz + lambda.iter().zip(targets).map(|(l, t)| l * t).sum::<f64>()
    };
    let mut lambda = vec![0.0; n];
    for _ in 0..500 {
        let rho = state_of(&lambda)?;
        let means: Vec<f64> = ops.iter().map(|o| (&rho * o).trace().re).collect();
        let grad: Vec<f64> = targets.iter().zip(&means).map(|(t, m)| t - m).collect();
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gnorm < 1e-14 {
            break;
        }
        let mut hess = nalgebra::DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let dij = &ops[i] - identity(dim) * c(means[i], 0.0);
                let dj = &ops[j] - identity(dim) * c(means[j], 0.0);
                hess[(i, j)] = 0.5 * (&rho * crate::op_space::anticommutator(&dij, &dj)).trace().re;
            }
        }
        let step = crate::op_space::symmetric_solve(&hess, &nalgebra::DVector::from_vec(grad.clone()), 1e-14);
        // descent direction for the dual is -H⁻¹ grad
        let f0 = dual(&lambda);
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-12 {
            let trial: Vec<f64> = lambda.iter().zip(step.iter()).map(|(l, s)| l - t * s).collect();
            if dual(&trial) <= f0 + 1e-15 * f0.abs().max(1.0) {
                lambda = trial;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let rho = state_of(&lambda)?;
    let worst = ops.iter().zip(targets).map(|(o, t)| ((&rho * o).trace().re - t).abs()).fold(0.0, f64::max);
    if worst > 1e-9 {
        return Err(SeaError::Undefined(format!("mean values not reachable by a Gibbs state (mismatch {worst:.3e})")));
    }
    Ok((rho, lambda))
}

/// Gibbs state sharing the conserved mean values of `state`. When the range
/// projector of `state` commutes with H the result is restricted to that
/// range, which is where the flow from `state` must end.
pub fn matching_equilibrium(
    state: &SpectralState,
    gen: &GeneratorSet,
    units: &UnitSystem,
    tol: &ToleranceSet,
) -> Result<SpectralState> {
    let b = state.range_projector();
    let restricted = !state.is_full_rank() && op_norm(&commutator(b, &gen.h)) < 1e-8;
    let obs = gen.observables();
    let targets: Vec<f64> = obs.iter().map(|o| state.mean(o)).collect();
    if !restricted {
        if gen.extras.is_empty() {
            let beta = solve_beta_for_energy(&gen.h, targets[0]).or_else(|e| {
                // energy at a spectral edge: ground or top projector is the limit
                if energy_variance(state, gen) < 1e-14 {
                    Ok(f64::NAN)
                } else {
                    Err(e)
                }
            })?;
            if beta.is_nan() {
                return Ok(state.clone());
            }
            return gibbs_state(gen, beta, &[], units, tol);
        }
        let (rho, _) = max_entropy_state(&obs, &targets)?;
        return SpectralState::new(&rho, units, tol);
    }
    // compress to the range of B
    let r = state.rank();
    let v = state.eigenvectors().columns(0, r).into_owned();
    let comp: Vec<OperatorMatrix> = obs.iter().map(|o| hermitian_part(&(v.adjoint() * o * &v))).collect();
    let (small, _) = max_entropy_state(&comp, &targets)?;
    let rho = hermitian_part(&(&v * small * v.adjoint()));
    SpectralState::new(&rho, units, tol)
}

/// Result of the apparently linear rewrite of the dissipator.
#[derive(Debug, Clone)]
pub struct SpecialForm {
    pub rhs: OperatorMatrix,
    /// `f_j` for the basis elements beyond the manifold.
    pub f: Vec<f64>,
    /// Number of leading basis elements inside the manifold (identity excluded).
    pub manifold_count: usize,
    pub basis: Vec<OperatorMatrix>,
    pub entropy_rate: f64,
    /// `ħ √(Σ f²) / (2 √⟨ΔH,ΔH⟩)`.
    pub tau_min: f64,
}

/// `-(i/ħ)[H,ρ] + (1/2τ) Σ_{j>a} f_j {X_j, ρ}` over an orthogonal extension
/// `X_j` of the manifold; full-rank states only.
pub fn special_form_rhs(
    state: &SpectralState,
    gen: &GeneratorSet,
    policy: &TauPolicy,
    units: &UnitSystem,
    tol: &ToleranceSet,
) -> Result<SpecialForm> {
    if !state.is_full_rank() {
        return Err(SeaError::Unsupported("special form requires a full-rank state".into()));
    }
    let basis = crate::onsager::orthogonal_extension_basis(state, gen, tol)?;
    let a = basis.manifold_count;
    let weighted_log = state.weighted(state.log_on_range());
    let extension = &basis.x[a..];
    let f: Vec<f64> = extension.iter().map(|x| -inner(&weighted_log, &state.weighted(x))).collect();
    let ev = evaluate(state, gen, policy, units, tol)?;
    let mut dissipator = OperatorMatrix::zeros(state.dim(), state.dim());
    if ev.dissipation_active {
        for (fj, x) in f.iter().zip(extension) {
            dissipator += crate::op_space::anticommutator(x, state.rho()) * c(fj / (2.0 * ev.tau), 0.0);
        }
    }
    let sum_f2: f64 = f.iter().map(|v| v * v).sum();
    let entropy_rate = if ev.dissipation_active { units.k_b * sum_f2 / ev.tau } else { 0.0 };
    let variance = energy_variance(state, gen);
    let tau_min = units.hbar * sum_f2.sqrt() / (2.0 * variance.sqrt());
    Ok(SpecialForm { rhs: ev.hamiltonian + dissipator, f, manifold_count: a, basis: basis.x, entropy_rate, tau_min })
}

/// Dissipative direction extended to impose rates `ṙ_j` on the non-identity
/// generators.
#[derive(Debug, Clone)]
pub struct DrivenDirection {
    pub d: OperatorMatrix,
    pub alphas: Vec<f64>,
    pub tau: f64,
    pub dissipator: OperatorMatrix,
}

pub fn driven_direction(
    state: &SpectralState,
    gen: &GeneratorSet,
    imposed_rates: &[f64],
    policy: &TauPolicy,
    units: &UnitSystem,
    tol: &ToleranceSet,
) -> Result<DrivenDirection> {
    let vectors = manifold_vectors(state, gen);
    let m = vectors.len() - 1;
    if imposed_rates.len() != m {
        return Err(SeaError::DimensionMismatch { expected: m, found: imposed_rates.len() });
    }
    let target = state.weighted(state.log_on_range());
    let mut all = vec![target.clone()];
    all.extend(vectors.iter().cloned());
    let g = gram_matrix(&all);
    let scale: f64 = (0..all.len()).map(|i| g[(i, i)]).product();
    if g.determinant() <= 1e-20 * scale.max(1e-300) {
        return Err(SeaError::DegenerateGram("entropy gradient and generators are linearly dependent".into()));
    }
    let base = dissipative_direction(state, gen, tol)?;
    let tau = tau_value(policy, state, gen, &base, units)?;
    let mut d = base.d.clone();
    let mut alphas = Vec::with_capacity(m);
    for j in 1..=m {
        let mut others = vec![target.clone()];
        others.extend(vectors.iter().enumerate().filter(|(i, _)| *i != j).map(|(_, v)| v.clone()));
        let w = crate::op_space::project_orthogonal(&vectors[j], &others, tol);
        let wn = inner(&w, &w);
        let alpha = -tau * imposed_rates[j - 1] / wn;
        d += &w * c(alpha, 0.0);
        alphas.push(alpha);
    }
    let dissipator = dissipator_from(state.sqrt_rho(), &d, tau);
    Ok(DrivenDirection { d, alphas, tau, dissipator })
}

/// Maximum entry of `|Tr(ρ̇ R)|` over the generators; used by conservation checks.
pub fn conservation_defect(rho_dot: &OperatorMatrix, gen: &GeneratorSet) -> f64 {
    gen.generators().iter().map(|r| (rho_dot * r).trace().re.abs()).fold(0.0, f64::max)
}

/// Convenience for tests: deviation between two operators.
pub fn distance(a: &OperatorMatrix, b: &OperatorMatrix) -> f64 {
    max_abs(&(a - b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::op_space::{diag, real_matrix, trace};
    use approx::assert_abs_diff_eq;

    fn units() -> UnitSystem {
        UnitSystem::default()
    }
    fn qutrit_d() -> (SpectralState, GeneratorSet, ToleranceSet) {
        let tol = ToleranceSet::for_dim(3);
        let s = SpectralState::new(&diag(&[0.5, 0.1, 0.4]), &units(), &tol).unwrap();
        (s, GeneratorSet::hamiltonian(diag(&[0.0, 1.0, 2.0])).unwrap(), tol)
    }

    /// Oracle for diagonal states with diagonal H: the projection lives in the
    /// 3-dimensional space of real diagonals with weights √p_k, and reduces to
    /// a weighted least-squares fit of ln p_k by a + b E_k.
    fn diagonal_oracle(p: &[f64], e: &[f64]) -> Vec<f64> {
        let (mut s00, mut s01, mut s11, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for k in 0..p.len() {
            s00 += p[k];
            s01 += p[k] * e[k];
            s11 += p[k] * e[k] * e[k];
            t0 += p[k] * p[k].ln();
            t1 += p[k] * e[k] * p[k].ln();
        }
        let det = s00 * s11 - s01 * s01;
        let a = (t0 * s11 - t1 * s01) / det;
        let b = (s00 * t1 - s01 * t0) / det;
        (0..p.len()).map(|k| p[k].sqrt() * (p[k].ln() - a - b * e[k])).collect()
    }

    #[test]
    fn hamiltonian_term_on_qubit_a() {
        let tol = ToleranceSet::for_dim(2);
        let s = SpectralState::new(&real_matrix(2, &[0.7, 0.2, 0.2, 0.3]), &units(), &tol).unwrap();
        let gen = GeneratorSet::hamiltonian(diag(&[0.0, 1.0])).unwrap();
        let t = hamiltonian_term(&s, &gen, &units());
        assert_abs_diff_eq!(t[(0, 1)].im, 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(t[(1, 0)].im, -0.2, epsilon = 1e-15);
        let eh = hamiltonian_e_operator(&s, &gen, &units());
        let rebuilt = s.sqrt_rho() * &eh + eh.adjoint() * s.sqrt_rho();
        assert!(distance(&rebuilt, &t) < 1e-12);
        assert_abs_diff_eq!(tau_h(&s, &gen, &units()), 1.0 / (2.0 * 0.21f64.sqrt()), epsilon = 1e-12);
    }

    #[test]
    fn tau_h_limits() {
        let tol = ToleranceSet::for_dim(2);
        let gen = GeneratorSet::hamiltonian(diag(&[1.0, -1.0])).unwrap();
        let mixed = SpectralState::new(&diag(&[0.5, 0.5]), &units(), &tol).unwrap();
        assert_abs_diff_eq!(tau_h(&mixed, &gen, &units()), 0.5, epsilon = 1e-14);
        let eig = SpectralState::new(&diag(&[1.0, 0.0]), &units(), &tol).unwrap();
        assert!(tau_h(&eig, &gen, &units()).is_infinite());
    }

    #[test]
    fn qutrit_direction_matches_oracle() {
        let (s, gen, tol) = qutrit_d();
        let dir = dissipative_direction(&s, &gen, &tol).unwrap();
        let oracle = diagonal_oracle(&[0.5, 0.1, 0.4], &[0.0, 1.0, 2.0]);
        for k in 0..3 {
            assert_abs_diff_eq!(dir.d[(k, k)].re, oracle[k], epsilon = 1e-12);
        }
        assert!(dir.d_norm_sq > 1e-3);
        let ev = evaluate(&s, &gen, &TauPolicy::constant(1.0), &units(), &tol).unwrap();
        let oracle_sq: f64 = oracle.iter().map(|v| v * v).sum();
        assert_abs_diff_eq!(ev.entropy_rate, oracle_sq, epsilon = 1e-12);
        assert_abs_diff_eq!(entropy_rate_of(&s, &ev.rhs), oracle_sq, epsilon = 1e-12);
        assert_abs_diff_eq!(entropy_rate_gram(&s, &gen, 1.0, &tol).unwrap(), oracle_sq, epsilon = 1e-10);
        assert_abs_diff_eq!(tau_d(&dir, 1.0).unwrap(), 1.0 / oracle_sq.sqrt(), epsilon = 1e-12);
        let var = 0.1 + 4.0 * 0.4 - 0.81;
        let t = tau_value(&TauPolicy::max_epr(1.0), &s, &gen, &dir, &units()).unwrap();
        assert_abs_diff_eq!(t, 0.5 * (oracle_sq / var).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn gibbs_and_pure_states_are_nondissipative() {
        let (_, gen, tol) = qutrit_d();
        let g = gibbs_state(&gen, 0.7, &[], &units(), &tol).unwrap();
        let rep = nondissipative_test(&g, &gen, &tol).unwrap();
        assert_eq!(rep.class, StateClass::Equilibrium);
        assert!(
            distance(&rhs(&g, &gen, &TauPolicy::constant(1.0), &units(), &tol).unwrap(), &OperatorMatrix::zeros(3, 3))
                < 1e-10
        );

        let psi = [0.6f64.sqrt(), 0.0, 0.4f64.sqrt()];
        let pure = OperatorMatrix::from_fn(3, 3, |i, j| c(psi[i] * psi[j], 0.0));
        let s = SpectralState::new(&pure, &units(), &tol).unwrap();
        let rep = nondissipative_test(&s, &gen, &tol).unwrap();
        assert_eq!(rep.class, StateClass::LimitCycle);
        let r = rhs(&s, &gen, &TauPolicy::constant(1.0), &units(), &tol).unwrap();
        assert!(distance(&r, &hamiltonian_term(&s, &gen, &units())) < 1e-10);

        let (q, _, _) = qutrit_d();
        assert_eq!(nondissipative_test(&q, &gen, &tol).unwrap().class, StateClass::Dissipative);
    }

    #[test]
    fn gibbs_examples() {
        let tol = ToleranceSet::for_dim(2);
        let gen = GeneratorSet::hamiltonian(diag(&[0.0, 1.0])).unwrap();
        let g = gibbs_state(&gen, 2f64.ln(), &[], &units(), &tol).unwrap();
        assert!(distance(g.rho(), &diag(&[2.0 / 3.0, 1.0 / 3.0])) < 1e-14);
        let g0 = gibbs_state(&gen, 0.0, &[], &units(), &tol).unwrap();
        assert!(distance(g0.rho(), &diag(&[0.5, 0.5])) < 1e-15);
        assert!(matches!(gibbs_state(&gen, f64::INFINITY, &[], &units(), &tol), Err(SeaError::Overflow(_))));
    }

    #[test]
    fn beta_root_matches_energy() {
        let h = diag(&[0.0, 1.0, 2.0]);
        let beta = solve_beta_for_energy(&h, 0.9).unwrap();
        let w: Vec<f64> = [0.0, 1.0, 2.0].iter().map(|e: &f64| (-beta * e).exp()).collect();
        let z: f64 = w.iter().sum();
        assert_abs_diff_eq!((w[1] + 2.0 * w[2]) / z, 0.9, epsilon = 1e-13);
        assert!(beta > 0.0);
        let hot = solve_beta_for_energy(&h, 1.5).unwrap();
        assert!(hot < 0.0);
    }

    #[test]
    fn max_epr_closure_identities() {
        let (s, gen, tol) = qutrit_d();
        let ev = evaluate(&s, &gen, &TauPolicy::max_epr(1.0), &units(), &tol).unwrap();
        let td = tau_d(&ev.direction, ev.tau).unwrap();
        assert_abs_diff_eq!(td * td * ev.energy_variance, 0.25, epsilon = 1e-12);
        let bound = entropy_rate_upper_bound(ev.energy_variance, ev.direction.d_norm_sq, &units());
        assert_abs_diff_eq!(ev.entropy_rate, bound, epsilon = 1e-12);
    }

    #[test]
    fn max_epr_on_equilibrium_uses_fallback() {
        let (_, gen, tol) = qutrit_d();
        let g = gibbs_state(&gen, 0.3, &[], &units(), &tol).unwrap();
        let ev = evaluate(&g, &gen, &TauPolicy::max_epr(2.0), &units(), &tol).unwrap();
        assert_eq!(ev.tau, 2.0);
        assert!(ev.tau_fallback);
        assert!(!ev.dissipation_active);
        assert!(matches!(TauPolicy::constant(0.0).validate(), Err(SeaError::InvalidConfig(_))));
    }

    #[test]
    fn gram_and_projection_directions_agree() {
        let (s, gen, tol) = qutrit_d();
        let p = dissipative_direction(&s, &gen, &tol).unwrap().d;
        let g = dissipative_direction_gram(&s, &gen, &tol).unwrap();
        assert!(distance(&p, &g) < 1e-12);
    }

    #[test]
    fn variational_residual_vanishes() {
        let (s, gen, tol) = qutrit_d();
        let dir = dissipative_direction(&s, &gen, &tol).unwrap();
        assert!(variational_residual(&s, &gen, &dir, 1.0) < 1e-10);
        let g = gibbs_state(&gen, 0.5, &[], &units(), &tol).unwrap();
        let gd = dissipative_direction(&g, &gen, &tol).unwrap();
        assert!(variational_residual(&g, &gen, &gd, 1.0) < 1e-10);
    }

    #[test]
    fn characteristic_times_respect_bounds() {
        let tol = ToleranceSet::for_dim(2);
        let s = SpectralState::new(&real_matrix(2, &[0.7, 0.2, 0.2, 0.3]), &units(), &tol).unwrap();
        let gen = GeneratorSet::hamiltonian(diag(&[0.0, 1.0])).unwrap();
        let policy = TauPolicy::constant(1.0);
        let h = characteristic_time_bound(&s, &gen, &gen.h, RatePart::Hamiltonian, &policy, &units(), &tol).unwrap();
        assert!(h.tau_f.is_infinite());
        let sx = real_matrix(2, &[0.0, 1.0, 1.0, 0.0]);
        for part in [RatePart::Hamiltonian, RatePart::Dissipative] {
            let r = characteristic_time_bound(&s, &gen, &sx, part, &policy, &units(), &tol).unwrap();
            assert!(r.holds, "{part:?}: {r:?}");
        }
    }

    #[test]
    fn special_form_agrees_on_qutrit() {
        let (s, gen, tol) = qutrit_d();
        let policy = TauPolicy::constant(1.0);
        let sf = special_form_rhs(&s, &gen, &policy, &units(), &tol).unwrap();
        let r = rhs(&s, &gen, &policy, &units(), &tol).unwrap();
        assert!(distance(&sf.rhs, &r) < 1e-12);
        assert_abs_diff_eq!(sf.entropy_rate, entropy_rate(&s, &gen, &policy, &units(), &tol).unwrap(), epsilon = 1e-12);
        let pure = SpectralState::new(&diag(&[1.0, 0.0, 0.0]), &units(), &tol).unwrap();
        assert!(matches!(special_form_rhs(&pure, &gen, &policy, &units(), &tol), Err(SeaError::Unsupported(_))));
    }

    #[test]
    fn driven_direction_imposes_rate() {
        let (s, gen, tol) = qutrit_d();
        let policy = TauPolicy::constant(1.0);
        let zero = driven_direction(&s, &gen, &[0.0], &policy, &units(), &tol).unwrap();
        let base = dissipative_direction(&s, &gen, &tol).unwrap();
        assert!(distance(&zero.d, &base.d) < 1e-15);
        let driven = driven_direction(&s, &gen, &[0.1], &policy, &units(), &tol).unwrap();
        assert_abs_diff_eq!((&driven.dissipator * &gen.h).trace().re, 0.1, epsilon = 1e-10);
        assert_abs_diff_eq!(trace(&driven.dissipator).re, 0.0, epsilon = 1e-12);
        let extra = &driven.d - &base.d;
        assert_abs_diff_eq!(inner(&extra, &s.weighted(s.log_on_range())), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn matching_equilibrium_on_rank_two_state() {
        let tol = ToleranceSet::for_dim(3);
        let rho = real_matrix(3, &[0.6, 0.2, 0.0, 0.2, 0.4, 0.0, 0.0, 0.0, 0.0]);
        let s = SpectralState::new(&rho, &units(), &tol).unwrap();
        let gen = GeneratorSet::hamiltonian(diag(&[0.0, 1.0, 2.0])).unwrap();
        let eq = matching_equilibrium(&s, &gen, &units(), &tol).unwrap();
        assert!(distance(eq.rho(), &diag(&[0.6, 0.4, 0.0])) < 1e-12);
    }
}
