//! Seeded generators of random operators and states for fuzzing and probes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::op_space::{c, hermitian_part, identity, kron, trace, OperatorMatrix};

/// Deterministic RNG used throughout the crate.
pub type SeaRng = ChaCha8Rng;

pub fn rng(seed: u64) -> SeaRng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian(rng: &mut SeaRng) -> f64 {
    rng.sample(StandardNormal)
}

/// Complex Ginibre matrix with standard normal entries.
pub fn ginibre(rng: &mut SeaRng, rows: usize, cols: usize) -> OperatorMatrix {
    OperatorMatrix::from_fn(rows, cols, |_, _| c(gaussian(rng), gaussian(rng)))
}

/// Random Hermitian matrix (GUE-like, unit scale).
pub fn hermitian(rng: &mut SeaRng, dim: usize) -> OperatorMatrix {
    hermitian_part(&ginibre(rng, dim, dim))
}

/// Random real diagonal matrix with entries uniform in `[lo, hi)`.
pub fn real_diagonal(rng: &mut SeaRng, dim: usize, lo: f64, hi: f64) -> OperatorMatrix {
    let mut m = OperatorMatrix::zeros(dim, dim);
    for i in 0..dim {
        m[(i, i)] = c(rng.gen_range(lo..hi), 0.0);
    }
    m
}

/// Random density operator of the given rank (`G G† / Tr`).
pub fn density_matrix(rng: &mut SeaRng, dim: usize, rank: usize) -> OperatorMatrix {
    let g = ginibre(rng, dim, rank.clamp(1, dim));
    let m = &g * g.adjoint();
    let tr = trace(&m).re;
    hermitian_part(&(m / c(tr, 0.0)))
}

/// Random full-rank density operator, mixed with the identity so the
/// smallest eigenvalue stays away from zero.
pub fn full_rank_state(rng: &mut SeaRng, dim: usize) -> OperatorMatrix {
    let mix: f64 = rng.gen_range(0.05..0.3);
    density_matrix(rng, dim, dim) * c(1.0 - mix, 0.0) + identity(dim) * c(mix / dim as f64, 0.0)
}

/// Random pure state `|ψ⟩⟨ψ|`.
pub fn pure_state(rng: &mut SeaRng, dim: usize) -> OperatorMatrix {
    density_matrix(rng, dim, 1)
}

/// Random Haar-like unitary from the QR factor of a Ginibre matrix.
pub fn unitary(rng: &mut SeaRng, dim: usize) -> OperatorMatrix {
    let qr = ginibre(rng, dim, dim).qr();
    let q = qr.q();
    let r = qr.r();
    let mut out = q.clone();
    for j in 0..dim {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { c(1.0, 0.0) };
        for i in 0..dim {
            out[(i, j)] *= phase;
        }
    }
    out
}

/// Product of independent full-rank factor states.
pub fn product_state(rng: &mut SeaRng, dims: &[usize]) -> OperatorMatrix {
    let mut out = identity(1);
    for &d in dims {
        out = kron(&out, &full_rank_state(rng, d));
    }
    out
}
