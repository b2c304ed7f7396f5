//! Correlations between two noninteracting subsystems over time.
//!
//! `σ_AB` is the mutual-information-like functional. Its rate splits into a
//! Hamiltonian part (zero without interaction) and a dissipative part.

use sea_thermo::composite::{self, CompositeGenerators, CompositionStructure, DissipatorModel};
use sea_thermo::integrator::{self, CompositeSystem, IntegratorConfig};
use sea_thermo::op_space::{c, diag, kron, real_matrix, OperatorMatrix, SpectralState, ToleranceSet, UnitSystem};
use sea_thermo::single::TauPolicy;

fn main() -> sea_thermo::Result<()> {
    let units = UnitSystem::default();
    let tol = ToleranceSet::for_dim(4);
    let comp = CompositionStructure::new(vec![2, 2])?;
    let gens = CompositeGenerators::noninteracting(&comp, vec![diag(&[0.0, 1.0]), diag(&[0.0, 1.7])])?;
    let psi = [0.6f64.cos(), 0.0, 0.0, 0.6f64.sin()];
    let pure = OperatorMatrix::from_fn(4, 4, |i, j| c(psi[i] * psi[j], 0.0));
    let product = kron(&real_matrix(2, &[0.7, 0.1, 0.1, 0.3]), &diag(&[0.35, 0.65]));
    let rho0 = SpectralState::new(&(pure * c(0.6, 0.0) + product * c(0.4, 0.0)), &units, &tol)?;

    let policies = vec![TauPolicy::constant(1.0)];
    let system = CompositeSystem::new(
        comp.clone(),
        gens.clone(),
        policies.clone(),
        DissipatorModel::SteepestEntropyAscent,
        units,
    )?;
    let cfg = IntegratorConfig { dt: 0.01, t_end: 6.0, sample_interval: 0.5, ..Default::default() };
    let traj = integrator::integrate(&rho0, &system, &cfg)?;
    println!("{:>5} {:>10} {:>12} {:>12} {:>10}", "t", "sigma_AB", "sigma_dot_H", "sigma_dot_D", "entropy");
    for s in &traj.samples {
        let st = SpectralState::new(&s.rho, &units, &tol)?;
        let ev =
            composite::evaluate(&st, &comp, &gens, &policies, DissipatorModel::SteepestEntropyAscent, &units, &tol)?;
        let r = composite::correlation_rate_split(&st, &comp, 1, &ev, &tol)?;
        println!("{:5.1} {:10.6} {:12.3e} {:12.3e} {:10.6}", s.t, r.sigma, r.sigma_dot_h, r.sigma_dot_d, s.entropy);
    }
    Ok(())
}
