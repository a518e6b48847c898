//! Strain-space POD: orthonormal global modes of the snapshot fluctuations,
//! per-point slices, and reduced snapshot coordinates.

use crate::error::{Error, Result};
use crate::sampling::SnapshotSet;
use crate::voigt::VoigtVec9;
use nalgebra::{DMatrix, DMatrixView, DVector};

/// Relative singular-value floor below which modes count as numerically null.
pub const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct ModeBasis {
    /// 9|G| x d, orthonormal columns.
    pub psi: DMatrix<f64>,
    /// Leading singular values of the fluctuation matrix.
    pub sigmas: Vec<f64>,
    pub n_gauss: usize,
}

impl ModeBasis {
    pub fn d(&self) -> usize {
        self.psi.ncols()
    }

    /// 9 x d slice of the basis at Gauss point `g`.
    pub fn slice(&self, g: usize) -> DMatrixView<'_, f64> {
        self.psi.view((9 * g, 0), (9, self.d()))
    }

    pub fn to_container(&self) -> crate::store::Container {
        let mut c = crate::store::Container::new("POD");
        c.push("psi", self.psi.clone());
        c.push_vector("sigmas", &DVector::from_column_slice(&self.sigmas));
        c.push_scalar("n_gauss", self.n_gauss as f64);
        c
    }

    pub fn from_container(c: &crate::store::Container) -> Result<Self> {
        Ok(Self {
            psi: c.get("psi")?.clone(),
            sigmas: c.get_vector("sigmas")?.iter().copied().collect(),
            n_gauss: c.get_scalar("n_gauss")? as usize,
        })
    }
}

/// Left singular directions of the fluctuation matrix through the s x s Gram
/// eigenproblem. The Gram route resolves eigenvalues only to ~sqrt(eps)
/// relative, so each singular value is refined as the directly computed norm
/// of `flucts * v_i`, which is accurate to ~eps and makes the 1e-12 rank
/// threshold meaningful.
struct GramFactors {
    /// Unnormalized left vectors `flucts * v_i`, sorted by sigma descending.
    lefts: DMatrix<f64>,
    sigmas: Vec<f64>,
}

fn gram_factors(flucts: &DMatrix<f64>) -> GramFactors {
    let s = flucts.ncols();
    let gram = flucts.transpose() * flucts;
    let eig = nalgebra::SymmetricEigen::new(gram);
    let lefts_raw = flucts * &eig.eigenvectors;
    let mut order: Vec<usize> = (0..s).collect();
    let norms: Vec<f64> = (0..s).map(|i| lefts_raw.column(i).norm()).collect();
    order.sort_by(|&a, &b| norms[b].partial_cmp(&norms[a]).unwrap().then(a.cmp(&b)));
    let mut lefts = DMatrix::zeros(flucts.nrows(), s);
    let mut sigmas = Vec::with_capacity(s);
    for (j, &i) in order.iter().enumerate() {
        lefts.set_column(j, &lefts_raw.column(i));
        sigmas.push(norms[i]);
    }
    GramFactors { lefts, sigmas }
}

fn rank_of(sigmas: &[f64]) -> usize {
    let s0 = sigmas.first().copied().unwrap_or(0.0);
    sigmas
        .iter()
        .filter(|&&s| s >= RANK_TOL * s0 && s > 0.0)
        .count()
}

/// Numerical rank of the fluctuation matrix under [`RANK_TOL`].
pub fn numerical_rank(set: &SnapshotSet) -> usize {
    rank_of(&gram_factors(&set.fluctuations()).sigmas)
}

/// Leading left singular vectors of the fluctuation matrix, computed through
/// the s x s Gram eigenproblem and re-orthonormalized. Column signs are fixed
/// so the largest-magnitude entry of each mode is positive.
pub fn compute_basis(set: &SnapshotSet, d: usize) -> Result<ModeBasis> {
    let flucts = set.fluctuations();
    let s = flucts.ncols();
    if d == 0 || d > s {
        return Err(Error::RankDeficient {
            requested: d,
            rank: s,
        });
    }

    let factors = gram_factors(&flucts);
    let sigmas = factors.sigmas;
    let rank = rank_of(&sigmas);
    if d > rank {
        return Err(Error::RankDeficient { requested: d, rank });
    }

    let mut psi = DMatrix::zeros(flucts.nrows(), d);
    for j in 0..d {
        psi.set_column(j, &(factors.lefts.column(j) / sigmas[j]));
    }

    // Two Gram-Schmidt passes restore orthonormality lost in the Gram route
    // for trailing modes with small singular values.
    for _ in 0..2 {
        for j in 0..d {
            for k in 0..j {
                let prev = psi.column(k).clone_owned();
                let proj = psi.column(j).dot(&prev);
                let mut col = psi.column_mut(j);
                col.axpy(-proj, &prev, 1.0);
            }
            let n = psi.column(j).norm();
            psi.column_mut(j).scale_mut(1.0 / n);
        }
    }

    // Deterministic sign: largest-magnitude entry positive, first index on ties.
    for j in 0..d {
        let col = psi.column(j);
        let mut best = 0usize;
        for i in 1..col.len() {
            if col[i].abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            psi.column_mut(j).neg_mut();
        }
    }

    Ok(ModeBasis {
        psi,
        sigmas: sigmas.into_iter().take(d).collect(),
        n_gauss: set.n_gauss(),
    })
}

/// Reduced snapshot coordinates `Y = psi^T (strains - macro part)`.
pub fn reduced_coords(basis: &ModeBasis, set: &SnapshotSet) -> Result<DMatrix<f64>> {
    if basis.psi.nrows() != set.strains.nrows() {
        return Err(Error::DimensionMismatch {
            expected: basis.psi.nrows(),
            got: set.strains.nrows(),
        });
    }
    Ok(basis.psi.transpose() * set.fluctuations())
}

/// Reconstruct per-point deformation gradients `F^g = F_bar + psi^g y`.
pub fn reconstruct_field(basis: &ModeBasis, y: &DVector<f64>, f_bar: &VoigtVec9) -> Vec<VoigtVec9> {
    assert_eq!(y.len(), basis.d());
    let fluct = &basis.psi * y;
    (0..basis.n_gauss)
        .map(|g| {
            let mut f = *f_bar;
            for k in 0..9 {
                f[k] += fluct[9 * g + k];
            }
            f
        })
        .collect()
}

/// Project a full strain-fluctuation vector onto the basis.
pub fn project(basis: &ModeBasis, fluct: &DVector<f64>) -> DVector<f64> {
    basis.psi.transpose() * fluct
}
