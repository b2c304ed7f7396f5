//! Time integration of the nonlinear equation of motion.
//!
//! The state operator itself is the integration variable. Every stage
//! re-decomposes ρ (negative round-off eigenvalues clipped), and after each
//! accepted step the configured projection restores positivity and unit trace.

use serde::{Deserialize, Serialize};

use crate::composite::{self, CompositeGenerators, CompositionStructure, DissipatorModel};
use crate::error::{Result, SeaError};
use crate::op_space::{
    c, commutator, from_spectrum, hermitian_eigen, hermitian_part, max_abs, op_norm, trace, trace_norm_distance,
    unitary_propagator, OperatorMatrix, SpectralState, ToleranceSet, UnitSystem,
};
use crate::single::{self, GeneratorSet, TauPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rk4,
    AdaptiveRk45,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionPolicy {
    RenormalizeTrace,
    PsdClipThenRenormalize,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub method: Method,
    /// Step for RK4, initial step for the adaptive method.
    pub dt: f64,
    pub t_end: f64,
    pub projection: ProjectionPolicy,
    /// Halting threshold for both `(D|D)` and `‖[H,ρ]‖`.
    pub equilibrium_epsilon: f64,
    pub halt_at_equilibrium: bool,
    /// Invariant drift beyond which integration aborts.
    pub max_drift: f64,
    pub rtol: f64,
    pub atol: f64,
    /// Time between recorded samples; 0 records every step.
    pub sample_interval: f64,
    pub min_dt: f64,
    pub max_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            method: Method::Rk4,
            dt: 0.01,
            t_end: 10.0,
            projection: ProjectionPolicy::PsdClipThenRenormalize,
            equilibrium_epsilon: 1e-14,
            halt_at_equilibrium: true,
            max_drift: 1e-6,
            rtol: 1e-8,
            atol: 1e-10,
            sample_interval: 0.0,
            min_dt: 1e-12,
            max_steps: 10_000_000,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(SeaError::InvalidConfig(format!("{name} must be positive, got {v}")))
            }
        };
        positive("dt", self.dt)?;
        positive("t_end", self.t_end)?;
        positive("equilibrium_epsilon", self.equilibrium_epsilon)?;
        positive("max_drift", self.max_drift)?;
        positive("rtol", self.rtol)?;
        positive("atol", self.atol)?;
        positive("min_dt", self.min_dt)?;
        if self.sample_interval < 0.0 {
            return Err(SeaError::InvalidConfig("sample_interval must be nonnegative".into()));
        }
        Ok(())
    }
}

/// One evaluation of the right-hand side with its diagnostics.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub rhs: OperatorMatrix,
    pub entropy_rate: f64,
    /// `(D|D)`, or `Σ_J (D_J|D_J)` for composite systems.
    pub dissipation: f64,
    pub taus: Vec<f64>,
    pub tau_fallback: bool,
    /// Largest entropy rate the uncertainty relation allows at this state.
    pub entropy_rate_bound: f64,
}

/// A system whose state can be advanced in time.
pub trait Dynamics: Sync {
    fn dim(&self) -> usize;
    fn generators(&self) -> &GeneratorSet;
    fn units(&self) -> &UnitSystem;
    fn tolerances(&self) -> &ToleranceSet;
    fn evaluate(&self, state: &SpectralState) -> Result<Evaluation>;
    /// Whether the exact flow keeps the rank of ρ fixed. When it does, the
    /// integrator discards round-off outside the initial range.
    fn preserves_rank(&self) -> bool {
        true
    }
    /// Correlation between the two halves of a bipartition, if any.
    fn correlation(&self, _rho: &OperatorMatrix) -> Option<f64> {
        None
    }
}

/// Single-constituent dynamics.
#[derive(Debug, Clone)]
pub struct SingleSystem {
    pub gen: GeneratorSet,
    pub policy: TauPolicy,
    pub units: UnitSystem,
    pub tol: ToleranceSet,
    /// Drop the dissipator and keep only the Hamiltonian motion.
    pub unitary_only: bool,
}

impl SingleSystem {
    pub fn new(gen: GeneratorSet, policy: TauPolicy, units: UnitSystem) -> Result<Self> {
        policy.validate()?;
        let tol = ToleranceSet::for_dim(gen.dim());
        Ok(Self { gen, policy, units, tol, unitary_only: false })
    }
}

impl Dynamics for SingleSystem {
    fn dim(&self) -> usize {
        self.gen.dim()
    }
    fn generators(&self) -> &GeneratorSet {
        &self.gen
    }
    fn units(&self) -> &UnitSystem {
        &self.units
    }
    fn tolerances(&self) -> &ToleranceSet {
        &self.tol
    }
    fn evaluate(&self, state: &SpectralState) -> Result<Evaluation> {
        let ev = single::evaluate(state, &self.gen, &self.policy, &self.units, &self.tol)?;
        let bound = single::entropy_rate_upper_bound(ev.energy_variance, ev.direction.d_norm_sq, &self.units);
        if self.unitary_only {
            return Ok(Evaluation {
                rhs: ev.hamiltonian,
                entropy_rate: 0.0,
                dissipation: ev.direction.d_norm_sq,
                taus: vec![ev.tau],
                tau_fallback: ev.tau_fallback,
                entropy_rate_bound: bound,
            });
        }
        Ok(Evaluation {
            rhs: ev.rhs,
            entropy_rate: ev.entropy_rate,
            dissipation: ev.direction.d_norm_sq,
            taus: vec![ev.tau],
            tau_fallback: ev.tau_fallback,
            entropy_rate_bound: bound,
        })
    }
}

/// Composite dynamics.
#[derive(Debug, Clone)]
pub struct CompositeSystem {
    pub comp: CompositionStructure,
    pub gens: CompositeGenerators,
    pub policies: Vec<TauPolicy>,
    pub model: DissipatorModel,
    pub units: UnitSystem,
    pub tol: ToleranceSet,
    /// Bipartition (first `split` factors) used for the correlation diagnostic.
    pub split: Option<usize>,
}

impl CompositeSystem {
    pub fn new(
        comp: CompositionStructure,
        gens: CompositeGenerators,
        policies: Vec<TauPolicy>,
        model: DissipatorModel,
        units: UnitSystem,
    ) -> Result<Self> {
        for p in &policies {
            p.validate()?;
        }
        if policies.len() != 1 && policies.len() != comp.len() {
            return Err(SeaError::DimensionMismatch { expected: comp.len(), found: policies.len() });
        }
        let tol = ToleranceSet::for_dim(comp.total_dim());
        let split = if comp.len() > 1 { Some(comp.len() / 2) } else { None };
        Ok(Self { comp, gens, policies, model, units, tol, split })
    }
}

impl Dynamics for CompositeSystem {
    fn dim(&self) -> usize {
        self.comp.total_dim()
    }
    fn generators(&self) -> &GeneratorSet {
        &self.gens.set
    }
    fn units(&self) -> &UnitSystem {
        &self.units
    }
    fn tolerances(&self) -> &ToleranceSet {
        &self.tol
    }
    fn evaluate(&self, state: &SpectralState) -> Result<Evaluation> {
        let ev =
            composite::evaluate(state, &self.comp, &self.gens, &self.policies, self.model, &self.units, &self.tol)?;
        let bound = ev
            .local
            .iter()
            .map(|l| single::entropy_rate_upper_bound(l.local_variance, l.direction.d_norm_sq, &self.units))
            .sum();
        Ok(Evaluation {
            dissipation: ev.dissipation_norm_sq(),
            taus: ev.local.iter().map(|l| l.tau).collect(),
            tau_fallback: ev.local.iter().any(|l| l.tau_fallback),
            entropy_rate: ev.entropy_rate,
            rhs: ev.rhs,
            entropy_rate_bound: bound,
        })
    }
    // each local term is tensored with ρ_J̄, which need not vanish on the
    // kernel of the global state
    fn preserves_rank(&self) -> bool {
        false
    }
    fn correlation(&self, rho: &OperatorMatrix) -> Option<f64> {
        self.split.and_then(|s| composite::correlation_functional(rho, &self.comp, s).ok())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    EquilibriumReached,
    ProjectionApplied,
    DriftWarning,
    TauFallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub t: f64,
    pub rho: OperatorMatrix,
    pub entropy: f64,
    pub energy: f64,
    pub extra_means: Vec<f64>,
    /// Descending.
    pub eigenvalues: Vec<f64>,
    pub dissipation: f64,
    pub entropy_rate: f64,
    pub entropy_rate_bound: f64,
    pub taus: Vec<f64>,
    pub correlation: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DriftSummary {
    pub max_trace_drift: f64,
    pub max_energy_drift: f64,
    pub max_extra_drift: f64,
    /// Largest single-step decrease of the entropy.
    pub max_entropy_decrease: f64,
    pub min_eigenvalue: f64,
    /// Largest negative eigenvalue magnitude removed by projection.
    pub max_clipped: f64,
    /// Largest eigenvalue removed beyond the initial rank.
    pub max_dropped: f64,
    /// Steps on which projection removed more than 1e-12.
    pub projection_activations: usize,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub events: Vec<Event>,
    pub drift: DriftSummary,
    pub steps: usize,
    pub rejected_steps: usize,
    pub halted_at_equilibrium: bool,
}

impl Trajectory {
    pub fn last(&self) -> &Sample {
        self.samples.last().expect("trajectory has at least one sample")
    }
    pub fn first(&self) -> &Sample {
        &self.samples[0]
    }
}

/// Decomposes a stage value, keeping at most `rank` eigenvalues so that
/// round-off outside the initial range does not switch on dissipation there.
fn stage_state(rho: &OperatorMatrix, dynamics: &dyn Dynamics, rank: usize) -> Result<SpectralState> {
    if rank < rho.nrows() {
        let (values, vectors) = hermitian_eigen(&hermitian_part(rho));
        let kept: Vec<f64> = values.iter().enumerate().map(|(i, &p)| if i < rank { p } else { 0.0 }).collect();
        return SpectralState::clipped(&from_spectrum(&vectors, &kept), dynamics.units(), dynamics.tolerances());
    }
    SpectralState::clipped(rho, dynamics.units(), dynamics.tolerances())
}

fn rhs_at(rho: &OperatorMatrix, dynamics: &dyn Dynamics, rank: usize) -> Result<OperatorMatrix> {
    Ok(dynamics.evaluate(&stage_state(rho, dynamics, rank)?)?.rhs)
}

fn axpy(y: &OperatorMatrix, terms: &[(f64, &OperatorMatrix)]) -> OperatorMatrix {
    let mut out = y.clone();
    for (a, k) in terms {
        if *a != 0.0 {
            out += *k * c(*a, 0.0);
        }
    }
    out
}

fn rk4_step(rho: &OperatorMatrix, dt: f64, dynamics: &dyn Dynamics, rank: usize) -> Result<OperatorMatrix> {
    let k1 = rhs_at(rho, dynamics, rank)?;
    let k2 = rhs_at(&axpy(rho, &[(0.5 * dt, &k1)]), dynamics, rank)?;
    let k3 = rhs_at(&axpy(rho, &[(0.5 * dt, &k2)]), dynamics, rank)?;
    let k4 = rhs_at(&axpy(rho, &[(dt, &k3)]), dynamics, rank)?;
    Ok(axpy(rho, &[(dt / 6.0, &k1), (dt / 3.0, &k2), (dt / 3.0, &k3), (dt / 6.0, &k4)]))
}

// Dormand–Prince 5(4) tableau
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] =
    [5179.0 / 57600.0, 0.0, 7571.0 / 16695.0, 393.0 / 640.0, -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0];

/// One Dormand–Prince attempt: (5th-order solution, scaled error norm).
fn dopri_step(
    rho: &OperatorMatrix,
    dt: f64,
    dynamics: &dyn Dynamics,
    rtol: f64,
    atol: f64,
    rank: usize,
) -> Result<(OperatorMatrix, f64)> {
    let mut k: Vec<OperatorMatrix> = Vec::with_capacity(7);
    for s in 0..7 {
        let terms: Vec<(f64, &OperatorMatrix)> = (0..s).map(|j| (dt * A[s][j], &k[j])).collect();
        let y = axpy(rho, &terms);
        k.push(rhs_at(&y, dynamics, rank)?);
    }
    let y5 = axpy(rho, &(0..7).map(|j| (dt * B5[j], &k[j])).collect::<Vec<_>>());
    let err_terms: Vec<(f64, &OperatorMatrix)> = (0..7).map(|j| (dt * (B5[j] - B4[j]), &k[j])).collect();
    let err = axpy(&OperatorMatrix::zeros(rho.nrows(), rho.ncols()), &err_terms);
    let mut worst: f64 = 0.0;
    for ((e, a), b) in err.iter().zip(rho.iter()).zip(y5.iter()) {
        let scale = atol + rtol * a.norm().max(b.norm());
        worst = worst.max(e.norm() / scale);
    }
    Ok((y5, worst))
}

/// Post-step projection. The exact flow preserves rank, so under the
/// clipping policy eigenvalues beyond `rank` are dropped along with negative
/// round-off. Returns the state, the largest clipped negative magnitude and
/// the largest dropped eigenvalue.
fn project(rho: &OperatorMatrix, policy: ProjectionPolicy, rank: usize) -> (OperatorMatrix, f64, f64) {
    let herm = hermitian_part(rho);
    match policy {
        ProjectionPolicy::None => (herm, 0.0, 0.0),
        ProjectionPolicy::RenormalizeTrace => {
            let tr = trace(&herm).re;
            (herm / c(tr, 0.0), 0.0, 0.0)
        }
        ProjectionPolicy::PsdClipThenRenormalize => {
            let (values, vectors) = hermitian_eigen(&herm);
            let clipped = -values.iter().copied().fold(0.0, f64::min);
            let dropped = values.iter().skip(rank).copied().fold(0.0, f64::max);
            let out = if clipped > 0.0 || dropped > 0.0 {
                let v: Vec<f64> =
                    values.iter().enumerate().map(|(i, &p)| if i < rank { p.max(0.0) } else { 0.0 }).collect();
                hermitian_part(&from_spectrum(&vectors, &v))
            } else {
                herm
            };
            let tr = trace(&out).re;
            (out / c(tr, 0.0), clipped, dropped)
        }
    }
}

fn record(t: f64, state: &SpectralState, dynamics: &dyn Dynamics, ev: &Evaluation) -> Sample {
    let gen = dynamics.generators();
    Sample {
        t,
        rho: state.rho().clone(),
        entropy: state.entropy(),
        energy: state.mean(&gen.h),
        extra_means: gen.extras.iter().map(|g| state.mean(g)).collect(),
        eigenvalues: hermitian_eigen(state.rho()).0,
        dissipation: ev.dissipation,
        entropy_rate: ev.entropy_rate,
        entropy_rate_bound: ev.entropy_rate_bound,
        taus: ev.taus.clone(),
        correlation: dynamics.correlation(state.rho()),
    }
}

/// Integrates from `initial` to `config.t_end` (or until equilibrium).
pub fn integrate(initial: &SpectralState, dynamics: &dyn Dynamics, config: &IntegratorConfig) -> Result<Trajectory> {
    config.validate()?;
    if initial.dim() != dynamics.dim() {
        return Err(SeaError::DimensionMismatch { expected: dynamics.dim(), found: initial.dim() });
    }
    let units = *dynamics.units();
    let gen = dynamics.generators().clone();
    let h_scale = op_norm(&gen.h).max(1e-300);
    let e0 = initial.mean(&gen.h);
    let extras0: Vec<f64> = gen.extras.iter().map(|g| initial.mean(g)).collect();
    let extra_scales: Vec<f64> = gen.extras.iter().map(|g| op_norm(g).max(1e-300)).collect();

    let mut events = Vec::new();
    let mut drift =
        DriftSummary { min_eigenvalue: *initial.eigenvalues().last().unwrap_or(&0.0), ..Default::default() };
    let mut rho = initial.rho().clone();
    let rank = if dynamics.preserves_rank() { initial.rank() } else { initial.dim() };
    let mut t = 0.0;
    let ev0 = dynamics.evaluate(initial)?;
    if ev0.tau_fallback {
        events.push(Event {
            t,
            kind: EventKind::TauFallback,
            detail: "relaxation time fell back to its default".into(),
        });
    }
    let mut samples = vec![record(0.0, initial, dynamics, &ev0)];
    let mut next_sample = config.sample_interval;
    let mut entropy_prev = initial.entropy();
    let mut dt = config.dt;
    let mut steps = 0usize;
    let mut rejected = 0usize;
    let mut halted = false;
    let mut fallback_reported = ev0.tau_fallback;
    let t_tol = 1e-12 * config.t_end;

    if config.halt_at_equilibrium && at_equilibrium(initial, &gen, &ev0, config) {
        events.push(Event {
            t,
            kind: EventKind::EquilibriumReached,
            detail: format!("(D|D) = {:.3e}", ev0.dissipation),
        });
        return Ok(Trajectory { samples, events, drift, steps, rejected_steps: rejected, halted_at_equilibrium: true });
    }

    while t < config.t_end - t_tol {
        if steps >= config.max_steps {
            return Err(SeaError::StepUnderflow { t, dt });
        }
        let h = dt.min(config.t_end - t);
        let next = match config.method {
            Method::Rk4 => rk4_step(&rho, h, dynamics, rank)?,
            Method::AdaptiveRk45 => {
                let (y, err) = dopri_step(&rho, h, dynamics, config.rtol, config.atol, rank)?;
                let factor = if err > 0.0 { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) } else { 5.0 };
                if err > 1.0 || !err.is_finite() {
                    rejected += 1;
                    dt = h * if err.is_finite() { factor.min(0.9) } else { 0.2 };
                    if dt < config.min_dt {
                        return Err(SeaError::StepUnderflow { t, dt });
                    }
                    continue;
                }
                dt = h * factor;
                y
            }
        };
        if next.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(SeaError::Overflow(format!("non-finite state at t = {:.6e}", t + h)));
        }
        t += h;
        steps += 1;
        let (projected, clipped, dropped) = project(&next, config.projection, rank);
        drift.max_clipped = drift.max_clipped.max(clipped);
        drift.max_dropped = drift.max_dropped.max(dropped);
        let activation = clipped.max(dropped);
        if activation > 1e-9 {
            events.push(Event {
                t,
                kind: EventKind::DriftWarning,
                detail: format!("projection removed {activation:.3e}"),
            });
        } else if activation > 1e-12 {
            drift.projection_activations += 1;
            if drift.projection_activations == 1 {
                events.push(Event {
                    t,
                    kind: EventKind::ProjectionApplied,
                    detail: format!("projection removed {activation:.3e}"),
                });
            }
        }
        rho = projected;
        let state = stage_state(&rho, dynamics, rank)?;

        // invariant audit
        let trace_drift = (trace(&rho).re - 1.0).abs();
        let energy_drift = (state.mean(&gen.h) - e0).abs() / e0.abs().max(h_scale);
        let extra_drift = gen
            .extras
            .iter()
            .zip(&extras0)
            .zip(&extra_scales)
            .map(|((g, m0), s)| (state.mean(g) - m0).abs() / m0.abs().max(*s))
            .fold(0.0, f64::max);
        let entropy = state.entropy();
        let decrease = (entropy_prev - entropy).max(0.0);
        entropy_prev = entropy;
        let min_eig = *hermitian_eigen(&next).0.last().unwrap_or(&0.0);
        // what survives projection; zero under the clipping policy
        let negativity = match config.projection {
            ProjectionPolicy::PsdClipThenRenormalize => 0.0,
            _ => (-*hermitian_eigen(&rho).0.last().unwrap_or(&0.0)).max(0.0),
        };
        drift.max_trace_drift = drift.max_trace_drift.max(trace_drift);
        drift.max_energy_drift = drift.max_energy_drift.max(energy_drift);
        drift.max_extra_drift = drift.max_extra_drift.max(extra_drift);
        drift.max_entropy_decrease = drift.max_entropy_decrease.max(decrease);
        drift.min_eigenvalue = drift.min_eigenvalue.min(min_eig);
        for (name, value, warn) in [
            ("trace", trace_drift, 1e-9),
            ("energy", energy_drift, 1e-8),
            ("extra mean values", extra_drift, 1e-8),
            ("entropy decrease", decrease * units.k_b.recip(), 1e-10),
            ("positivity", negativity, 1e-12),
        ] {
            if value > config.max_drift {
                return Err(SeaError::DriftExceeded { quantity: name.into(), value, limit: config.max_drift, t });
            }
            if value > warn {
                events.push(Event { t, kind: EventKind::DriftWarning, detail: format!("{name} drift {value:.3e}") });
            }
        }

        let ev = dynamics.evaluate(&state)?;
        if ev.tau_fallback && !fallback_reported {
            events.push(Event {
                t,
                kind: EventKind::TauFallback,
                detail: "relaxation time fell back to its default".into(),
            });
        }
        fallback_reported = ev.tau_fallback;
        let done = t >= config.t_end - t_tol;
        let equilibrium = config.halt_at_equilibrium && at_equilibrium(&state, &gen, &ev, config);
        if config.sample_interval == 0.0 || t >= next_sample - t_tol || done || equilibrium {
            samples.push(record(t, &state, dynamics, &ev));
            while next_sample <= t + t_tol && config.sample_interval > 0.0 {
                next_sample += config.sample_interval;
            }
        }
        if equilibrium {
            events.push(Event {
                t,
                kind: EventKind::EquilibriumReached,
                detail: format!("(D|D) = {:.3e}", ev.dissipation),
            });
            halted = true;
            break;
        }
    }
    Ok(Trajectory { samples, events, drift, steps, rejected_steps: rejected, halted_at_equilibrium: halted })
}

fn at_equilibrium(state: &SpectralState, gen: &GeneratorSet, ev: &Evaluation, config: &IntegratorConfig) -> bool {
    ev.dissipation < config.equilibrium_epsilon
        && op_norm(&commutator(&gen.h, state.rho())) < config.equilibrium_epsilon
}

/// `e^{-t/τ} U ρ_0 U† + (1 - e^{-t/τ}) ρ_e` with `U = exp(-itH/ħ)`.
pub fn bloch_reference(
    rho0: &OperatorMatrix,
    rho_e: &OperatorMatrix,
    tau_e: f64,
    h: &OperatorMatrix,
    t: f64,
    units: &UnitSystem,
) -> OperatorMatrix {
    let u = unitary_propagator(h, t, units.hbar);
    let decay = (-t / tau_e).exp();
    (&u * rho0 * u.adjoint()) * c(decay, 0.0) + rho_e * c(1.0 - decay, 0.0)
}

/// `Tr|ρ_1 - ρ_2|`.
pub fn trace_distance(a: &SpectralState, b: &SpectralState) -> Result<f64> {
    crate::op_space::ensure_same_dim(a.rho(), b.rho())?;
    Ok(trace_norm_distance(a.rho(), b.rho()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttractorReport {
    /// Trace distance from the final state to the matching equilibrium.
    pub terminal_distance: f64,
    /// Whether the equilibrium was restricted to the range of the initial state.
    pub restricted_to_range: bool,
    pub entropy_monotone: bool,
    pub max_entropy_decrease: f64,
    /// Number of initially zero eigenvalues.
    pub initial_nullity: usize,
    /// Largest value reached by any initially zero eigenvalue.
    pub max_kernel_eigenvalue: f64,
    pub equilibrium_entropy: f64,
}

/// Compares a trajectory with the equilibrium matching its conserved means.
pub fn attractor_summary(traj: &Trajectory, gen: &GeneratorSet, units: &UnitSystem) -> Result<AttractorReport> {
    let first = traj.first();
    let tol = ToleranceSet::for_dim(gen.dim());
    let init = SpectralState::clipped(&first.rho, units, &tol)?;
    let init = SpectralState::new(&(init.rho() / c(trace(init.rho()).re, 0.0)), units, &tol)?;
    let eq = single::matching_equilibrium(&init, gen, units, &tol)?;
    let last = traj.last();
    let terminal_distance = trace_norm_distance(&last.rho, eq.rho());
    let mut max_decrease: f64 = traj.drift.max_entropy_decrease;
    for w in traj.samples.windows(2) {
        max_decrease = max_decrease.max(w[0].entropy - w[1].entropy);
    }
    let nullity = init.dim() - init.rank();
    let kernel = init.eigenvectors().columns(init.rank(), nullity).into_owned();
    let mut max_kernel: f64 = traj.drift.max_dropped;
    if nullity > 0 {
        for s in &traj.samples {
            let block = kernel.adjoint() * &s.rho * &kernel;
            max_kernel = max_kernel.max(op_norm(&block));
        }
    }
    let restricted = !init.is_full_rank() && max_abs(&commutator(init.range_projector(), &gen.h)) < 1e-8;
    Ok(AttractorReport {
        terminal_distance,
        restricted_to_range: restricted,
        entropy_monotone: max_decrease <= 1e-10,
        max_entropy_decrease: max_decrease.max(0.0),
        initial_nullity: nullity,
        max_kernel_eigenvalue: max_kernel,
        equilibrium_entropy: eq.entropy(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::op_space::{diag, real_matrix};

    fn qutrit_system(policy: TauPolicy) -> SingleSystem {
        SingleSystem::new(GeneratorSet::hamiltonian(diag(&[0.0, 1.0, 2.0])).unwrap(), policy, UnitSystem::default())
            .unwrap()
    }

    #[test]
    fn gibbs_start_is_constant() {
        let sys = qutrit_system(TauPolicy::constant(1.0));
        let g = single::gibbs_state(&sys.gen, 0.4, &[], &sys.units, &sys.tol).unwrap();
        let cfg = IntegratorConfig { t_end: 1.0, halt_at_equilibrium: false, ..Default::default() };
        let traj = integrate(&g, &sys, &cfg).unwrap();
        assert!(trace_norm_distance(&traj.last().rho, g.rho()) < 1e-12);
        let halted = integrate(&g, &sys, &IntegratorConfig { t_end: 1.0, ..Default::default() }).unwrap();
        assert!(halted.halted_at_equilibrium);
        let rep = attractor_summary(&traj, &sys.gen, &sys.units).unwrap();
        assert!(rep.terminal_distance < 1e-10);
    }

    #[test]
    fn pure_state_orbit_is_unitary() {
        let sys = qutrit_system(TauPolicy::constant(1.0));
        let psi = [0.6f64.sqrt(), 0.3f64.sqrt(), 0.1f64.sqrt()];
        let rho = OperatorMatrix::from_fn(3, 3, |i, j| c(psi[i] * psi[j], 0.0));
        let s = SpectralState::new(&rho, &sys.units, &sys.tol).unwrap();
        let cfg = IntegratorConfig { t_end: 5.0, dt: 0.005, sample_interval: 0.5, ..Default::default() };
        let traj = integrate(&s, &sys, &cfg).unwrap();
        assert!(!traj.halted_at_equilibrium);
        for smp in &traj.samples {
            assert!(smp.entropy.abs() < 1e-12);
            let purity = (&smp.rho * &smp.rho).trace().re;
            assert!((purity - 1.0).abs() < 1e-9);
            let u = unitary_propagator(&sys.gen.h, smp.t, 1.0);
            let unitary = &u * &rho * u.adjoint();
            assert!(trace_norm_distance(&smp.rho, &unitary) < 1e-8);
        }
    }

    #[test]
    fn adaptive_matches_rk4() {
        let sys = qutrit_system(TauPolicy::constant(1.0));
        let s =
            SpectralState::new(&real_matrix(3, &[0.5, 0.1, 0.0, 0.1, 0.1, 0.05, 0.0, 0.05, 0.4]), &sys.units, &sys.tol)
                .unwrap();
        let a = integrate(&s, &sys, &IntegratorConfig { t_end: 2.0, dt: 0.002, ..Default::default() }).unwrap();
        let b = integrate(
            &s,
            &sys,
            &IntegratorConfig { t_end: 2.0, dt: 0.1, method: Method::AdaptiveRk45, ..Default::default() },
        )
        .unwrap();
        assert!(trace_norm_distance(&a.last().rho, &b.last().rho) < 1e-7);
        assert!(b.steps < 1000);
    }

    #[test]
    fn bloch_reference_limits() {
        let h = diag(&[0.0, 1.0]);
        let r0 = real_matrix(2, &[0.7, 0.2, 0.2, 0.3]);
        let re = diag(&[0.6, 0.4]);
        let u = UnitSystem::default();
        assert!(max_abs(&(bloch_reference(&r0, &re, 1.0, &h, 0.0, &u) - &r0)) < 1e-15);
        assert!(max_abs(&(bloch_reference(&r0, &re, 1.0, &h, 80.0, &u) - &re)) < 1e-15);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = IntegratorConfig { dt: 0.0, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(SeaError::InvalidConfig(_))));
    }
}
