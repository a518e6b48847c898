//! ECM training: a penalized nonnegative least-squares selection of Gauss
//! points and weights, solved with a Lawson-Hanson active-set method.
//!
//! The system stacks, per snapshot, the mode-projected virtual-work rows and
//! the homogenised-stress rows, plus one volume-penalty row; the unknowns are
//! nonnegative effective volumes over all Gauss points.

use crate::error::{Error, Result};
use crate::pod::ModeBasis;
use crate::rom::CubatureModel;
use crate::sampling::SnapshotSet;
use nalgebra::{DMatrix, DVector};

pub struct NnlsSystem {
    /// (d s + 1 + 9 s) x |G|.
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub p_vol: f64,
    pub n_work_rows: usize,
    pub n_homog_rows: usize,
}

impl NnlsSystem {
    /// Row index of the volume-penalty row.
    pub fn volume_row(&self) -> usize {
        self.n_work_rows
    }
}

/// Assemble the penalized NNLS system from stress-carrying snapshots.
/// `p_vol = None` applies the default scaling that makes the volume row
/// comparable in magnitude to the stress rows.
pub fn assemble_nnls_system(
    set: &SnapshotSet,
    basis: &ModeBasis,
    p_vol: Option<f64>,
) -> Result<NnlsSystem> {
    let stresses = set.stresses.as_ref().ok_or(Error::MissingStressSnapshots)?;
    let s = set.n_snapshots();
    let n_gauss = set.n_gauss();
    let d = basis.d();
    let n_work = d * s;
    let n_homog = 9 * s;
    let rows = n_work + 1 + n_homog;

    let mut matrix = DMatrix::zeros(rows, n_gauss);
    let mut rhs = DVector::zeros(rows);

    for g in 0..n_gauss {
        let psi_t = basis.slice(g).transpose();
        let vg = set.gauss_volumes[g];
        let mut col = matrix.column_mut(g);
        for j in 0..s {
            let p = stresses.fixed_view::<9, 1>(9 * g, j);
            let work = &psi_t * p;
            for k in 0..d {
                col[j * d + k] = work[k];
                rhs[j * d + k] += work[k] * vg;
            }
            for k in 0..9 {
                col[n_work + 1 + 9 * j + k] = p[k];
            }
        }
    }
    // Homogenisation targets: V * P_bar^j.
    for j in 0..s {
        for k in 0..9 {
            rhs[n_work + 1 + 9 * j + k] = set.homog_stresses[(k, j)] * set.cell_volume;
        }
    }

    let matrix_volume: f64 = set.gauss_volumes.iter().sum();
    let p_vol = p_vol.unwrap_or_else(|| {
        let b_nonvol = rhs.norm();
        (b_nonvol / matrix_volume).powi(2)
    });
    let sqrt_pvol = p_vol.sqrt();
    for g in 0..n_gauss {
        matrix[(n_work, g)] = sqrt_pvol;
    }
    rhs[n_work] = sqrt_pvol * matrix_volume;

    Ok(NnlsSystem {
        matrix,
        rhs,
        p_vol,
        n_work_rows: n_work,
        n_homog_rows: n_homog,
    })
}

struct ActiveSetOutcome {
    x: DVector<f64>,
    stalled: bool,
}

/// Least-squares solve on the passive set through incrementally maintained
/// normal equations.
struct PassiveSet {
    indices: Vec<usize>,
    gram: DMatrix<f64>,
    proj: DVector<f64>,
}

impl PassiveSet {
    fn new() -> Self {
        Self {
            indices: Vec::new(),
            gram: DMatrix::zeros(0, 0),
            proj: DVector::zeros(0),
        }
    }

    fn len(&self) -> usize {
        self.indices.len()
    }

    fn push(&mut self, a: &DMatrix<f64>, rhs: &DVector<f64>, j: usize) {
        let k = self.len();
        let mut gram = DMatrix::zeros(k + 1, k + 1);
        gram.view_mut((0, 0), (k, k)).copy_from(&self.gram);
        for (i, &g) in self.indices.iter().enumerate() {
            let dot = a.column(g).dot(&a.column(j));
            gram[(i, k)] = dot;
            gram[(k, i)] = dot;
        }
        gram[(k, k)] = a.column(j).norm_squared();
        let mut proj = DVector::zeros(k + 1);
        proj.rows_mut(0, k).copy_from(&self.proj);
        proj[k] = a.column(j).dot(rhs);
        self.indices.push(j);
        self.gram = gram;
        self.proj = proj;
    }

    fn remove(&mut self, k: usize) {
        let n = self.len();
        self.indices.remove(k);
        self.gram = self.gram.clone().remove_row(k).remove_column(k);
        let mut proj = DVector::zeros(n - 1);
        let mut t = 0;
        for i in 0..n {
            if i != k {
                proj[t] = self.proj[i];
                t += 1;
            }
        }
        self.proj = proj;
    }

    fn solve(&self) -> DVector<f64> {
        if let Some(chol) = self.gram.clone().cholesky() {
            chol.solve(&self.proj)
        } else {
            self.gram
                .clone()
                .col_piv_qr()
                .solve(&self.proj)
                .unwrap_or_else(|| DVector::zeros(self.len()))
        }
    }
}

/// Core active-set iteration on a column-normalized copy. Terminates at the
/// residual tolerance, the target support size, or the constrained (KKT)
/// optimum, whichever comes first. A column that fails to enter the passive
/// set marks a stall.
fn active_set(
    matrix: &DMatrix<f64>,
    rhs: &DVector<f64>,
    m_target: usize,
    tol: f64,
) -> ActiveSetOutcome {
    let n = matrix.ncols();
    let mut a = matrix.clone();
    let mut scale = vec![1.0f64; n];
    let mut zero_col = vec![false; n];
    for g in 0..n {
        let nrm = a.column(g).norm();
        if nrm > 0.0 {
            scale[g] = nrm;
            a.column_mut(g).scale_mut(1.0 / nrm);
        } else {
            zero_col[g] = true;
        }
    }

    let mut x = DVector::<f64>::zeros(n);
    let mut passive = PassiveSet::new();
    let mut r = rhs.clone();
    let rhs_norm = rhs.norm();
    let grad0 = (a.transpose() * &r).amax().max(1e-300);
    let kkt_eps = 1e-12 * grad0;

    let mut stalled = false;
    while passive.len() < m_target && r.norm() > tol * rhs_norm {
        let w = a.transpose() * &r;
        let mut best: Option<(usize, f64)> = None;
        for g in 0..n {
            if zero_col[g] || passive.indices.contains(&g) {
                continue;
            }
            if w[g] > best.map_or(kkt_eps, |(_, bw)| bw) {
                best = Some((g, w[g]));
            }
        }
        let Some((j, _)) = best else {
            break; // constrained optimum
        };
        passive.push(&a, rhs, j);

        // Inner feasibility loop: step toward the unconstrained optimum on
        // the passive set, dropping variables driven to zero.
        loop {
            let z = passive.solve();
            if z.iter().all(|&v| v > 0.0) {
                for (k, &g) in passive.indices.iter().enumerate() {
                    x[g] = z[k];
                }
                break;
            }
            let mut alpha = 1.0f64;
            for (k, &g) in passive.indices.iter().enumerate() {
                if z[k] <= 0.0 {
                    let denom = x[g] - z[k];
                    if denom > 0.0 {
                        alpha = alpha.min(x[g] / denom);
                    }
                }
            }
            for (k, &g) in passive.indices.iter().enumerate() {
                x[g] += alpha * (z[k] - x[g]);
            }
            let mut removed = false;
            let mut k = 0;
            while k < passive.len() {
                let g = passive.indices[k];
                if x[g] <= 1e-12 {
                    x[g] = 0.0;
                    passive.remove(k);
                    removed = true;
                } else {
                    k += 1;
                }
            }
            if !removed || passive.len() == 0 {
                break;
            }
        }

        if !passive.indices.contains(&j) {
            // The selected descent column was ejected again: no progress.
            stalled = true;
            break;
        }

        let mut ax = DVector::zeros(a.nrows());
        for &g in &passive.indices {
            ax.axpy(x[g], &a.column(g), 1.0);
        }
        r = rhs - ax;
    }

    // Undo the column normalization and drop numerically-zero weights.
    for g in 0..n {
        x[g] /= scale[g];
    }
    let wmax = x.amax();
    for g in 0..n {
        if x[g] < 1e-12 * wmax {
            x[g] = 0.0;
        }
    }
    ActiveSetOutcome { x, stalled }
}

/// Lawson-Hanson NNLS: iterate until the residual tolerance `tol * ||b||`
/// holds, `m_target` nonzero weights are selected, or the constrained
/// optimum is reached. A descent column that cannot enter the passive set
/// (cycling) is reported as a stall.
pub fn lawson_hanson_nnls(sys: &NnlsSystem, m_target: usize, tol: f64) -> Result<DVector<f64>> {
    if m_target == 0 {
        return Err(Error::Config("m_target must be at least 1".into()));
    }
    let out = active_set(&sys.matrix, &sys.rhs, m_target, tol);
    if out.stalled {
        let nonzeros = out.x.iter().filter(|&&v| v > 0.0).count();
        return Err(Error::StalledActiveSet { nonzeros });
    }
    Ok(out.x)
}

/// Build the reduced model from the selected weights: model points are the
/// selected Gauss points with their basis slices.
pub fn build_ecm_model(
    weights: &DVector<f64>,
    basis: &ModeBasis,
    set: &SnapshotSet,
    separate_homog_weights: bool,
) -> Result<CubatureModel> {
    let selected: Vec<usize> = (0..weights.len()).filter(|&g| weights[g] > 0.0).collect();
    if selected.is_empty() {
        return Err(Error::EmptySelection);
    }
    let d = basis.d();
    let mut psis = DMatrix::zeros(9 * selected.len(), d);
    for (c, &g) in selected.iter().enumerate() {
        psis.view_mut((9 * c, 0), (9, d)).copy_from(&basis.slice(g));
    }
    let xi: Vec<f64> = selected.iter().map(|&g| weights[g]).collect();

    let hom_weights = if separate_homog_weights {
        Some(homogenisation_weights(&selected, set)?)
    } else {
        None
    };

    Ok(CubatureModel {
        psis,
        weights: xi,
        hom_weights,
        cell_volume: set.cell_volume,
    })
}

/// Separate homogenisation weights: NNLS of the homogenised-stress block
/// (plus the volume row) restricted to the already-selected points.
fn homogenisation_weights(selected: &[usize], set: &SnapshotSet) -> Result<Vec<f64>> {
    let stresses = set.stresses.as_ref().ok_or(Error::MissingStressSnapshots)?;
    let s = set.n_snapshots();
    let rows = 9 * s + 1;
    let matrix_volume: f64 = set.gauss_volumes.iter().sum();
    let mut matrix = DMatrix::zeros(rows, selected.len());
    let mut rhs = DVector::zeros(rows);
    for j in 0..s {
        for k in 0..9 {
            rhs[9 * j + k] = set.homog_stresses[(k, j)] * set.cell_volume;
        }
    }
    let p_vol = (rhs.norm() / matrix_volume).powi(2);
    for (c, &g) in selected.iter().enumerate() {
        for j in 0..s {
            for k in 0..9 {
                matrix[(9 * j + k, c)] = stresses[(9 * g + k, j)];
            }
        }
        matrix[(rows - 1, c)] = p_vol.sqrt();
    }
    rhs[rows - 1] = p_vol.sqrt() * matrix_volume;
    let out = active_set(&matrix, &rhs, selected.len(), 0.0);
    Ok(out.x.iter().copied().collect())
}
