//! Relaxation time at the time-energy uncertainty bound.
//!
//! With `τ = (ħ/2) √((D|D)/⟨ΔH,ΔH⟩)` the entropy production equals its
//! largest admissible value `(2/ħ) k_B √(⟨ΔH,ΔH⟩ (D|D))` at every
//! nonequilibrium state. A constant τ stays below the bound by the factor
//! `τ_min / τ`.

use sea_thermo::integrator::{self, IntegratorConfig, Method, SingleSystem};
use sea_thermo::op_space::{diag, SpectralState, ToleranceSet, UnitSystem};
use sea_thermo::random;
use sea_thermo::single::{self, GeneratorSet, TauPolicy};

fn main() -> sea_thermo::Result<()> {
    let units = UnitSystem::default();
    let tol = ToleranceSet::for_dim(3);
    let gen = GeneratorSet::hamiltonian(diag(&[0.0, 1.0, 2.0]))?;
    let mut rng = random::rng(7);
    let state = SpectralState::new(&random::full_rank_state(&mut rng, 3), &units, &tol)?;

    let dir = single::dissipative_direction(&state, &gen, &tol)?;
    let var = single::energy_variance(&state, &gen);
    let bound = single::entropy_rate_upper_bound(var, dir.d_norm_sq, &units);
    for policy in [TauPolicy::max_epr(1.0), TauPolicy::constant(1.0), TauPolicy::constant(5.0)] {
        let ev = single::evaluate(&state, &gen, &policy, &units, &tol)?;
        let tau_d = single::tau_d(&ev.direction, ev.tau).unwrap_or(f64::INFINITY);
        println!(
            "{policy:?}\n  tau = {:.6}  tau_D^2 <dH,dH> = {:.12}  s_dot = {:.9}  bound = {:.9}",
            ev.tau,
            tau_d * tau_d * var,
            ev.entropy_rate,
            bound
        );
    }

    // the closure drives τ to zero near equilibrium; the run stops at the threshold
    let system = SingleSystem::new(gen, TauPolicy::max_epr(1.0), units)?;
    let cfg = IntegratorConfig {
        method: Method::AdaptiveRk45,
        dt: 0.01,
        t_end: 20.0,
        equilibrium_epsilon: 1e-12,
        sample_interval: 2.0,
        ..Default::default()
    };
    let traj = integrator::integrate(&state, &system, &cfg)?;
    for s in &traj.samples {
        println!(
            "t = {:8.4}  s = {:.9}  s_dot/bound = {:.12}",
            s.t,
            s.entropy,
            s.entropy_rate / s.entropy_rate_bound.max(1e-300)
        );
    }
    for e in &traj.events {
        println!("event at t = {:.4}: {:?} {}", e.t, e.kind, e.detail);
    }
    Ok(())
}
