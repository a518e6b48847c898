//! E3C training: cluster-initialized reduced-point bases, empirically
//! corrected by minimizing snapshot virtual work, homogenised-stress
//! deviation, and a volume-weighted mean-fluctuation penalty.

use crate::error::{Error, Result};
use crate::lbfgs::{lbfgs_minimize, LbfgsOptions, LbfgsResult};
use crate::material::Constitutive;
use crate::pod::{reduced_coords, ModeBasis};
use crate::rom::{weighted_kmeans, ClusterPartition, CubatureModel};
use crate::sampling::SnapshotSet;
use crate::voigt::VoigtVec9;
use nalgebra::{DMatrix, DVector};

/// Fixed data of the correction objective; the design vector stacks the
/// cluster bases psi^c (cluster-major, column-major within a cluster).
pub struct E3cObjective<'a, M: Constitutive> {
    pub material: &'a M,
    /// Cluster volumes, held fixed during the optimization.
    pub xis: Vec<f64>,
    /// Reduced snapshot coordinates, d x s.
    pub y_snap: DMatrix<f64>,
    /// Macroscopic strains per snapshot, 9 x s.
    pub f_bar_snap: DMatrix<f64>,
    /// Homogenisation targets V * P_bar^j, 9 x s.
    pub homog_target: DMatrix<f64>,
    /// Volume-integrated fluctuation targets per snapshot, 9 x s.
    pub strain_target: DMatrix<f64>,
    pub p_strain: f64,
    pub cell_volume: f64,
}

impl<'a, M: Constitutive> E3cObjective<'a, M> {
    pub fn new(
        material: &'a M,
        basis: &ModeBasis,
        set: &SnapshotSet,
        partition: &ClusterPartition,
        p_strain: Option<f64>,
    ) -> Result<Self> {
        let y_snap = reduced_coords(basis, set)?;
        let s = set.n_snapshots();
        let homog_target = &set.homog_stresses * set.cell_volume;
        let flucts = set.fluctuations();
        let mut strain_target = DMatrix::zeros(9, s);
        for j in 0..s {
            for g in 0..set.n_gauss() {
                let vg = set.gauss_volumes[g];
                for k in 0..9 {
                    strain_target[(k, j)] += flucts[(9 * g + k, j)] * vg;
                }
            }
        }
        Ok(Self {
            material,
            xis: partition.volumes.clone(),
            y_snap,
            f_bar_snap: set.params.clone(),
            homog_target,
            strain_target,
            p_strain: p_strain.unwrap_or_else(|| material.stiffness_scale().powi(2)),
            cell_volume: set.cell_volume,
        })
    }

    pub fn m(&self) -> usize {
        self.xis.len()
    }

    pub fn d(&self) -> usize {
        self.y_snap.nrows()
    }

    pub fn design_len(&self) -> usize {
        self.m() * 9 * self.d()
    }

    fn psi_entry(design: &DVector<f64>, d: usize, c: usize, k: usize, col: usize) -> f64 {
        design[c * 9 * d + col * 9 + k]
    }

    /// Raw objective blocks (virtual work, homogenisation deviation, strain
    /// penalty without its coefficient), before the 1/V^2 scaling.
    pub fn components(&self, design: &DVector<f64>) -> Result<(f64, f64, f64)> {
        let (w, h, s, _) = self.accumulate(design, false)?;
        Ok((w, h, s))
    }

    /// Objective value and analytic gradient.
    pub fn value_and_grad(&self, design: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let (work, homog, strain, grad) = self.accumulate(design, true)?;
        let v2 = self.cell_volume * self.cell_volume;
        let value = (work + homog + self.p_strain * strain) / v2;
        Ok((value, grad.expect("gradient requested")))
    }

    fn accumulate(
        &self,
        design: &DVector<f64>,
        with_grad: bool,
    ) -> Result<(f64, f64, f64, Option<DVector<f64>>)> {
        let m = self.m();
        let d = self.d();
        let s = self.y_snap.ncols();
        if design.len() != self.design_len() {
            return Err(Error::DimensionMismatch {
                expected: self.design_len(),
                got: design.len(),
            });
        }

        let mut work = 0.0;
        let mut homog = 0.0;
        let mut strain = 0.0;
        let mut grad = if with_grad {
            Some(DVector::zeros(design.len()))
        } else {
            None
        };

        // Per-snapshot state reused across clusters.
        let mut stresses = vec![VoigtVec9::zeros(); m];
        let mut tangents = Vec::with_capacity(if with_grad { m } else { 0 });

        for j in 0..s {
            let yj = self.y_snap.column(j);
            let fbar = self.f_bar_snap.column(j);

            let mut w_j = DVector::<f64>::zeros(d);
            let mut h_j = VoigtVec9::from_fn(|k, _| -self.homog_target[(k, j)]);
            let mut s_j = VoigtVec9::from_fn(|k, _| -self.strain_target[(k, j)]);
            tangents.clear();

            for c in 0..m {
                let xi = self.xis[c];
                // F^{cj} = F_bar^j + psi^c y^j
                let mut f = VoigtVec9::from_fn(|k, _| fbar[k]);
                let mut fluct = VoigtVec9::zeros();
                for col in 0..d {
                    let yv = yj[col];
                    for k in 0..9 {
                        fluct[k] += Self::psi_entry(design, d, c, k, col) * yv;
                    }
                }
                f += fluct;
                let det = crate::voigt::voigt_decode(&f).determinant();
                if det <= 0.0 {
                    return Err(Error::ObjectiveInadmissible {
                        cluster: c,
                        snapshot: j,
                        det,
                    });
                }

                if with_grad {
                    let (p, a) = self.material.pk1_and_tangent(&f)?;
                    stresses[c] = p;
                    tangents.push(a);
                } else {
                    stresses[c] = self.material.pk1(&f)?;
                }

                let p = &stresses[c];
                for col in 0..d {
                    let mut acc = 0.0;
                    for k in 0..9 {
                        acc += Self::psi_entry(design, d, c, k, col) * p[k];
                    }
                    w_j[col] += acc * xi;
                }
                h_j += p * xi;
                s_j += fluct * xi;
            }

            work += w_j.norm_squared();
            homog += h_j.norm_squared();
            strain += s_j.norm_squared();

            if let Some(grad) = grad.as_mut() {
                for c in 0..m {
                    let xi = self.xis[c];
                    let a = &tangents[c];
                    let p = &stresses[c];
                    // psi^c w_j (9-vector)
                    let mut psi_w = VoigtVec9::zeros();
                    for col in 0..d {
                        let wv = w_j[col];
                        for k in 0..9 {
                            psi_w[k] += Self::psi_entry(design, d, c, k, col) * wv;
                        }
                    }
                    // A^T contributions from the work and homogenisation terms.
                    let at_work = a.transpose() * psi_w;
                    let at_homog = a.transpose() * h_j;
                    let base = c * 9 * d;
                    for col in 0..d {
                        let yv = yj[col];
                        for k in 0..9 {
                            let g_work = p[k] * w_j[col] + at_work[k] * yv;
                            let g_homog = at_homog[k] * yv;
                            let g_strain = s_j[k] * yv;
                            grad[base + col * 9 + k] +=
                                2.0 * xi * (g_work + g_homog + self.p_strain * g_strain);
                        }
                    }
                }
            }
        }

        if let Some(grad) = grad.as_mut() {
            let v2 = self.cell_volume * self.cell_volume;
            grad.scale_mut(1.0 / v2);
        }
        Ok((work, homog, strain, grad))
    }
}

/// Flatten stacked cluster bases into an optimization design vector.
pub fn flatten_bases(stacked: &DMatrix<f64>) -> DVector<f64> {
    let d = stacked.ncols();
    let m = stacked.nrows() / 9;
    let mut out = DVector::zeros(m * 9 * d);
    for c in 0..m {
        for col in 0..d {
            for k in 0..9 {
                out[c * 9 * d + col * 9 + k] = stacked[(9 * c + k, col)];
            }
        }
    }
    out
}

/// Inverse of [`flatten_bases`].
pub fn unflatten_bases(design: &DVector<f64>, m: usize, d: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(9 * m, d);
    for c in 0..m {
        for col in 0..d {
            for k in 0..9 {
                out[(9 * c + k, col)] = design[c * 9 * d + col * 9 + k];
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct E3cTrainReport {
    pub initial_value: f64,
    pub final_value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub line_search_failed: bool,
}

/// Full E3C training: cluster, then correct the cluster bases by L-BFGS.
/// Microscale stress snapshots are not needed; only homogenised stresses.
pub fn build_e3c_model<M: Constitutive>(
    material: &M,
    basis: &ModeBasis,
    set: &SnapshotSet,
    m: usize,
    seed: u64,
    p_strain: Option<f64>,
    lbfgs: LbfgsOptions,
) -> Result<(CubatureModel, E3cTrainReport)> {
    let partition = weighted_kmeans(basis, &set.gauss_volumes, m, seed)?;
    let objective = E3cObjective::new(material, basis, set, &partition, p_strain)?;
    let x0 = flatten_bases(&partition.centroids);
    let (initial_value, _) = objective.value_and_grad(&x0)?;

    let LbfgsResult {
        x,
        value,
        iterations,
        converged,
        line_search_failed,
        ..
    } = lbfgs_minimize(|x| objective.value_and_grad(x), x0, lbfgs)?;

    // The line search is monotone, so the correction never hurts.
    let (design, final_value) = if value <= initial_value {
        (x, value)
    } else {
        (flatten_bases(&partition.centroids), initial_value)
    };

    let model = CubatureModel {
        psis: unflatten_bases(&design, m, basis.d()),
        weights: partition.volumes.clone(),
        hom_weights: None,
        cell_volume: set.cell_volume,
    };
    Ok((
        model,
        E3cTrainReport {
            initial_value,
            final_value,
            iterations,
            converged,
            line_search_failed,
        },
    ))
}
