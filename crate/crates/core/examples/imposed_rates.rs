//! The dissipator written as a sum of anticommutators, and imposed rates.
//!
//! At a full-rank state the dissipative term equals
//! `(1/2τ) Σ_j f_j {X_j, ρ}` over an extension of the conserved generators
//! that is orthonormal in the state's covariance metric. Adding components
//! along the generators gives a direction that changes the energy at a
//! prescribed rate while otherwise still ascending the entropy.

use sea_thermo::op_space::{diag, max_abs, SpectralState, ToleranceSet, UnitSystem};
use sea_thermo::random;
use sea_thermo::single::{self, GeneratorSet, TauPolicy};

fn main() -> sea_thermo::Result<()> {
    let units = UnitSystem::default();
    let tol = ToleranceSet::for_dim(3);
    let gen = GeneratorSet::hamiltonian(diag(&[0.0, 1.0, 2.0]))?;
    let policy = TauPolicy::constant(2.0);
    let mut rng = random::rng(21);
    let state = SpectralState::new(&random::full_rank_state(&mut rng, 3), &units, &tol)?;

    let ev = single::evaluate(&state, &gen, &policy, &units, &tol)?;
    let special = single::special_form_rhs(&state, &gen, &policy, &units, &tol)?;
    println!("f_j = {:?}", special.f.iter().map(|f| format!("{f:+.5}")).collect::<Vec<_>>());
    println!("max |rhs - special form| = {:.2e}", max_abs(&(&ev.rhs - &special.rhs)));
    println!("s_dot = {:.12} (equation of motion) {:.12} (k_B Σ f² / τ)", ev.entropy_rate, special.entropy_rate);
    println!("tau_min = {:.6}", special.tau_min);

    for rate in [0.0, 0.05, -0.05] {
        let driven = single::driven_direction(&state, &gen, &[rate], &policy, &units, &tol)?;
        let de = (&driven.dissipator * &gen.h).trace().re;
        let s_dot = single::entropy_rate_of(&state, &driven.dissipator);
        println!(
            "imposed dE/dt = {rate:+.3}: measured {de:+.3e}, trace rate {:+.1e}, s_dot {s_dot:.6}",
            driven.dissipator.trace().re
        );
    }
    Ok(())
}
