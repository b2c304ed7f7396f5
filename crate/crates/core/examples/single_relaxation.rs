//! Relaxation of a qubit with initial coherence.
//!
//! The energy stays fixed while the entropy climbs to the value of the
//! Gibbs state that has the same mean energy; the coherence decays and
//! precesses at the same time.
//!
//!     cargo run --example single_relaxation

use sea_thermo::integrator::{self, IntegratorConfig, SingleSystem};
use sea_thermo::op_space::{diag, real_matrix, trace_norm_distance, SpectralState, ToleranceSet, UnitSystem};
use sea_thermo::single::{self, GeneratorSet, TauPolicy};

fn main() -> sea_thermo::Result<()> {
    let units = UnitSystem::default();
    let gen = GeneratorSet::hamiltonian(diag(&[0.0, 1.0]))?;
    let tol = ToleranceSet::for_dim(2);
    let rho0 = SpectralState::new(&real_matrix(2, &[0.7, 0.2, 0.2, 0.3]), &units, &tol)?;
    let system = SingleSystem::new(gen.clone(), TauPolicy::constant(1.0), units)?;

    let gibbs = single::matching_equilibrium(&rho0, &gen, &units, &tol)?;
    let beta = single::solve_beta_for_energy(&gen.h, rho0.mean(&gen.h))?;
    println!("target: beta = {beta:.6}, entropy = {:.6}", gibbs.entropy());

    let cfg = IntegratorConfig { dt: 0.01, t_end: 12.0, sample_interval: 1.0, ..Default::default() };
    let traj = integrator::integrate(&rho0, &system, &cfg)?;
    println!("{:>5} {:>10} {:>10} {:>10} {:>12}", "t", "entropy", "energy", "|rho_01|", "d(rho,gibbs)");
    for s in &traj.samples {
        println!(
            "{:5.1} {:10.6} {:10.6} {:10.6} {:12.3e}",
            s.t,
            s.entropy,
            s.energy,
            s.rho[(0, 1)].norm(),
            trace_norm_distance(&s.rho, gibbs.rho())
        );
    }
    println!(
        "max energy drift {:.2e}, max trace drift {:.2e}",
        traj.drift.max_energy_drift, traj.drift.max_trace_drift
    );
    Ok(())
}
