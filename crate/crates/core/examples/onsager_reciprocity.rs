//! Affinities, conductivities and the quadratic entropy-production form.
//!
//! The conductivity matrix is built three ways (projected Gram matrix,
//! covariances, bordered Gram determinants); all three agree and the matrix
//! is symmetric and positive semidefinite far from equilibrium.

use sea_thermo::onsager::{self, ObservableBasis};
use sea_thermo::op_space::{diag, SpectralState, ToleranceSet, UnitSystem};
use sea_thermo::random;
use sea_thermo::single::{self, GeneratorSet, TauPolicy};

fn main() -> sea_thermo::Result<()> {
    let units = UnitSystem::default();
    let tol = ToleranceSet::for_dim(3);
    let gen = GeneratorSet::hamiltonian(diag(&[0.0, 1.0, 2.0]))?;
    let mut rng = random::rng(11);
    let state = SpectralState::new(&random::full_rank_state(&mut rng, 3), &units, &tol)?;
    let policy = TauPolicy::constant(1.0);

    for basis in [ObservableBasis::gell_mann(3), onsager::orthogonal_extension_basis(&state, &gen, &tol)?] {
        println!("basis {:?} ({} elements, {} in the manifold)", basis.kind, basis.x.len(), basis.manifold_count);
        let aff = onsager::affinities_from_state(&state, &basis, &units)?;
        let cond = onsager::conductivity_matrix(&state, &gen, &basis, &policy, &units, &tol)?;
        let quad = onsager::entropy_rate_quadratic(&state, &gen, &basis, &policy, &units, &tol)?;
        println!("  affinities {:?}", aff.f.iter().map(|f| format!("{f:+.4}")).collect::<Vec<_>>());
        println!("  L =\n{:.6}", cond.matrix());
        println!(
            "  reciprocity {:.1e}, min eigenvalue {:+.1e}, covariance form {:.1e}, Gram form {:.1e}",
            cond.reciprocity_defect, cond.min_eigenvalue, cond.covariance_form_defect, cond.gram_form_defect
        );
        println!(
            "  s_dot: equation of motion {:.12}, affinities {:.12}, rates {:?}",
            single::entropy_rate(&state, &gen, &policy, &units, &tol)?,
            quad.from_affinities,
            quad.from_rates
        );
    }
    Ok(())
}
