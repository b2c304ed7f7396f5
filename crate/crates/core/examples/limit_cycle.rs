//! Nondissipative states and rank preservation.
//!
//! A pure superposition of energy eigenstates is a limit cycle: the
//! dissipator vanishes and the state rotates at zero entropy. A rank-2 state
//! of a qutrit keeps its zero eigenvalue and relaxes to the Gibbs form
//! restricted to its range.

use sea_thermo::integrator::{self, IntegratorConfig, SingleSystem};
use sea_thermo::op_space::{c, diag, real_matrix, OperatorMatrix, SpectralState, ToleranceSet, UnitSystem};
use sea_thermo::single::{self, GeneratorSet, TauPolicy};

fn main() -> sea_thermo::Result<()> {
    let units = UnitSystem::default();
    let tol = ToleranceSet::for_dim(3);
    let gen = GeneratorSet::hamiltonian(diag(&[0.0, 1.0, 2.0]))?;
    let system = SingleSystem::new(gen.clone(), TauPolicy::constant(1.0), units)?;

    let amp = [0.6f64.sqrt(), 0.3f64.sqrt(), 0.1f64.sqrt()];
    let pure = SpectralState::new(&OperatorMatrix::from_fn(3, 3, |i, j| c(amp[i] * amp[j], 0.0)), &units, &tol)?;
    println!("pure superposition: {:?}", single::nondissipative_test(&pure, &gen, &tol)?);
    let cfg =
        IntegratorConfig { dt: 0.005, t_end: 2.0 * std::f64::consts::PI, sample_interval: 1.0, ..Default::default() };
    let traj = integrator::integrate(&pure, &system, &cfg)?;
    for s in &traj.samples {
        let purity = (&s.rho * &s.rho).trace().re;
        println!(
            "  t = {:5.2}  entropy = {:.1e}  purity - 1 = {:+.1e}  rho_01 = {:.4}",
            s.t,
            s.entropy,
            purity - 1.0,
            s.rho[(0, 1)]
        );
    }

    let rank2 = SpectralState::new(&real_matrix(3, &[0.6, 0.2, 0.0, 0.2, 0.4, 0.0, 0.0, 0.0, 0.0]), &units, &tol)?;
    println!("rank-2 state: {:?}", single::nondissipative_test(&rank2, &gen, &tol)?);
    let cfg = IntegratorConfig { dt: 0.01, t_end: 30.0, sample_interval: 5.0, ..Default::default() };
    let traj = integrator::integrate(&rank2, &system, &cfg)?;
    let report = integrator::attractor_summary(&traj, &gen, &units)?;
    let limit = single::matching_equilibrium(&rank2, &gen, &units, &tol)?;
    println!("  limit eigenvalues {:?}", limit.eigenvalues());
    println!("  {report:?}");
    Ok(())
}
