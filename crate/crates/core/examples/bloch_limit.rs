//! Near-equilibrium linear limit.
//!
//! Close to a Gibbs state with constant τ the motion approaches
//! `ρ(t) = e^{-t/τ} U ρ_0 U† + (1 - e^{-t/τ}) ρ_e`. The largest deviation
//! from that reference shrinks quadratically with the perturbation size.

use sea_thermo::integrator::{self, IntegratorConfig, SingleSystem};
use sea_thermo::op_space::{c, diag, max_abs, SpectralState, ToleranceSet, UnitSystem};
use sea_thermo::single::{self, GeneratorSet, TauPolicy};

fn main() -> sea_thermo::Result<()> {
    let units = UnitSystem::default();
    let tol = ToleranceSet::for_dim(3);
    let gen = GeneratorSet::hamiltonian(diag(&[0.0, 1.0, 2.0]))?;
    let tau = 1.0;
    let system = SingleSystem::new(gen.clone(), TauPolicy::constant(tau), units)?;
    let rho_e = single::gibbs_state(&gen, 0.7, &[], &units, &tol)?;
    // traceless and energy-neutral; coherent perturbations relax at
    // different rates and do not reach the quadratic regime
    let delta = diag(&[1.0, -2.0, 1.0]);
    let cfg = IntegratorConfig {
        dt: 0.005,
        t_end: 5.0,
        sample_interval: 0.05,
        halt_at_equilibrium: false,
        ..Default::default()
    };

    let mut previous: Option<f64> = None;
    for delta_size in [0.04, 0.02, 0.01, 0.005] {
        let rho0 = rho_e.rho() + &delta * c(delta_size, 0.0);
        let start = SpectralState::new(&rho0, &units, &tol)?;
        let traj = integrator::integrate(&start, &system, &cfg)?;
        let worst = traj
            .samples
            .iter()
            .map(|s| max_abs(&(&s.rho - integrator::bloch_reference(&rho0, rho_e.rho(), tau, &gen.h, s.t, &units))))
            .fold(0.0, f64::max);
        let ratio = previous.map(|p| format!("{:.2}", p / worst)).unwrap_or_else(|| "-".into());
        println!("delta = {delta_size:<5} sup deviation = {worst:.3e}  ratio = {ratio}");
        previous = Some(worst);
    }
    Ok(())
}
