//! EMSL: cluster-wise linearisation of the material law around empirically
//! predicted reference strains, yielding one affine reduced solve per load
//! step with no Newton iterations.
//!
//! Offline, a linear inference map from the macroscopic strain to reduced
//! coordinates is fitted by least squares, Gauss points are clustered, and
//! the volume-integrated bases plus the fourth-order Gram operators are
//! precomputed. Online, the material is sampled once per cluster per load
//! step, at the predicted reference strains.

use crate::error::{Error, Result};
use crate::material::Constitutive;
use crate::pod::ModeBasis;
use crate::rom::ClusterPartition;
use crate::store::Container;
use crate::voigt::{voigt_decode, VoigtMat9, VoigtVec9};
use nalgebra::{DMatrix, DMatrixView, DVector};

#[derive(Debug, Clone)]
pub struct EmslModel {
    /// Stacked centroid bases psi^c, (9m) x d.
    pub psis: DMatrix<f64>,
    /// Cluster volumes xi^c.
    pub weights: Vec<f64>,
    /// Stacked volume-integrated bases psi_bar^c = sum_g psi^g V^g, (9m) x d.
    pub psi_bars: DMatrix<f64>,
    /// Per cluster, the Gram operator D^c_{gadb} = sum_g psi_{ga} psi_{db} V^g
    /// stored as a (d^2) x 81 matrix: row a*d+b, column g*9+d.
    pub gram_ops: Vec<DMatrix<f64>>,
    /// Inference map M, d x 9.
    pub inference: DMatrix<f64>,
    pub cell_volume: f64,
}

impl EmslModel {
    pub fn m(&self) -> usize {
        self.weights.len()
    }

    pub fn d(&self) -> usize {
        self.psis.ncols()
    }

    pub fn psi(&self, c: usize) -> DMatrixView<'_, f64> {
        self.psis.view((9 * c, 0), (9, self.d()))
    }

    pub fn psi_bar(&self, c: usize) -> DMatrixView<'_, f64> {
        self.psi_bars.view((9 * c, 0), (9, self.d()))
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new("EMSL");
        c.push("psis", self.psis.clone());
        c.push_vector("weights", &DVector::from_column_slice(&self.weights));
        c.push("psi_bars", self.psi_bars.clone());
        let d = self.d();
        let mut stacked = DMatrix::zeros(self.m() * d * d, 81);
        for (i, op) in self.gram_ops.iter().enumerate() {
            stacked.view_mut((i * d * d, 0), (d * d, 81)).copy_from(op);
        }
        c.push("gram_ops", stacked);
        c.push("inference", self.inference.clone());
        c.push_scalar("cell_volume", self.cell_volume);
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let psis = c.get("psis")?.clone();
        let weights: Vec<f64> = c.get_vector("weights")?.iter().copied().collect();
        let psi_bars = c.get("psi_bars")?.clone();
        let inference = c.get("inference")?.clone();
        let d = psis.ncols();
        let m = weights.len();
        let stacked = c.get("gram_ops")?;
        if stacked.nrows() != m * d * d || stacked.ncols() != 81 {
            return Err(Error::DimensionMismatch {
                expected: m * d * d,
                got: stacked.nrows(),
            });
        }
        let gram_ops = (0..m)
            .map(|i| stacked.view((i * d * d, 0), (d * d, 81)).clone_owned())
            .collect();
        Ok(Self {
            psis,
            weights,
            psi_bars,
            gram_ops,
            inference,
            cell_volume: c.get_scalar("cell_volume")?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct InferenceFit {
    /// d x 9 least-squares map from macroscopic strain to reduced coordinates.
    pub map: DMatrix<f64>,
    /// Frobenius residual of the fit.
    pub residual: f64,
    /// Set when the normal equations needed Tikhonov stabilization.
    pub tikhonov: bool,
}

/// Least-squares fit of the linear inference map from snapshots:
/// minimizes the Frobenius misfit of `Y ~ M P` over M.
pub fn fit_linear_map(y_snap: &DMatrix<f64>, params: &DMatrix<f64>) -> Result<InferenceFit> {
    let s = params.ncols();
    if y_snap.ncols() != s {
        return Err(Error::DimensionMismatch {
            expected: s,
            got: y_snap.ncols(),
        });
    }
    if s < 9 {
        return Err(Error::RankDeficientParameters);
    }
    let pt = params.transpose(); // s x 9
    let svd = pt.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > smax * 1e-14) {
        return Err(Error::RankDeficientParameters);
    }
    let (map, tikhonov) = if (smax / smin).powi(2) > 1e12 {
        // Ill-conditioned parameter Gram: stabilized normal equations.
        let gram = params * &pt;
        let lambda = 1e-12 * gram.trace();
        let reg = &gram + DMatrix::identity(9, 9) * lambda;
        let rhs = y_snap * &pt; // d x 9
        let chol = reg.cholesky().ok_or(Error::RankDeficientParameters)?;
        let mt = chol.solve(&rhs.transpose());
        (mt.transpose(), true)
    } else {
        let mt = svd
            .solve(&y_snap.transpose(), 1e-14)
            .map_err(|_| Error::RankDeficientParameters)?;
        (mt.transpose(), false)
    };
    let residual = (y_snap - &map * params).norm();
    Ok(InferenceFit {
        map,
        residual,
        tikhonov,
    })
}

/// Precompute the cluster operators from the partition: volume-integrated
/// bases and the fourth-order Gram operators.
pub fn emsl_offline(
    basis: &ModeBasis,
    partition: &ClusterPartition,
    volumes: &DVector<f64>,
    inference: DMatrix<f64>,
    cell_volume: f64,
) -> EmslModel {
    let d = basis.d();
    let m = partition.m();
    let mut gram_ops = vec![DMatrix::zeros(d * d, 81); m];
    for (g, &c) in partition.assignment.iter().enumerate() {
        let sl = basis.slice(g);
        let vg = volumes[g];
        let op = &mut gram_ops[c];
        // Products formed as (psi psi) * V so the swap symmetry
        // D_{gadb} = D_{dbga} holds bitwise.
        for gamma in 0..9 {
            for alpha in 0..d {
                let left = sl[(gamma, alpha)];
                if left == 0.0 {
                    continue;
                }
                for delta in 0..9 {
                    for beta in 0..d {
                        op[(alpha * d + beta, gamma * 9 + delta)] +=
                            (left * sl[(delta, beta)]) * vg;
                    }
                }
            }
        }
    }
    EmslModel {
        psis: partition.centroids.clone(),
        weights: partition.volumes.clone(),
        psi_bars: partition.integrated.clone(),
        gram_ops,
        inference,
        cell_volume,
    }
}

/// Empirical reference prediction: `y_bar = M F_bar`, `F^c = F_bar + psi^c y_bar`.
pub fn predict_reference(
    model: &EmslModel,
    f_bar: &VoigtVec9,
) -> Result<(DVector<f64>, Vec<VoigtVec9>)> {
    let y_bar = &model.inference * f_bar;
    let refs = reference_strains(model, &y_bar, f_bar)?;
    Ok((y_bar, refs))
}

fn reference_strains(
    model: &EmslModel,
    y: &DVector<f64>,
    f_bar: &VoigtVec9,
) -> Result<Vec<VoigtVec9>> {
    (0..model.m())
        .map(|c| {
            let mut f = *f_bar;
            let fluct = model.psi(c) * y;
            for k in 0..9 {
                f[k] += fluct[k];
            }
            if voigt_decode(&f).determinant() <= 0.0 {
                return Err(Error::ReferenceInverted { cluster: c });
            }
            Ok(f)
        })
        .collect()
}

/// Affine system pieces of one load step.
#[derive(Debug, Clone)]
pub struct EmslSystem {
    pub a: DVector<f64>,
    pub b: DMatrix<f64>,
    pub c_vec: VoigtVec9,
    pub d_mat: DMatrix<f64>,
    pub a_voigt: VoigtMat9,
}

/// Assemble the affine reduced system from per-cluster samples
/// `(P(F^c), A(F^c))` linearised around the reference fluctuations
/// `psi^c y_ref`.
pub fn emsl_assemble(
    model: &EmslModel,
    samples: &[(VoigtVec9, VoigtMat9)],
    y_ref: &DVector<f64>,
) -> Result<EmslSystem> {
    let d = model.d();
    if samples.len() != model.m() {
        return Err(Error::DimensionMismatch {
            expected: model.m(),
            got: samples.len(),
        });
    }
    let mut a = DVector::zeros(d);
    let mut b = DMatrix::zeros(d, d);
    let mut c_vec = VoigtVec9::zeros();
    let mut d_mat = DMatrix::zeros(9, d);
    let mut a_voigt = VoigtMat9::zeros();

    for (c, (p, amat)) in samples.iter().enumerate() {
        let xi = model.weights[c];
        let fluct = model.psi(c) * y_ref;
        let mut fluct9 = VoigtVec9::zeros();
        for k in 0..9 {
            fluct9[k] = fluct[k];
        }
        let p_hat = p - amat * fluct9;

        a += model.psi_bar(c).transpose() * p_hat;
        c_vec += p_hat * xi;
        // D += A psi_bar
        d_mat += amat * model.psi_bar(c);
        a_voigt += amat * xi;
        // B += D^c : A via the permuted Gram operator.
        let avec = DVector::from_fn(81, |idx, _| amat[(idx / 9, idx % 9)]);
        let bvec = &model.gram_ops[c] * avec;
        for alpha in 0..d {
            for beta in 0..d {
                b[(alpha, beta)] += bvec[alpha * d + beta];
            }
        }
    }
    Ok(EmslSystem {
        a,
        b,
        c_vec,
        d_mat,
        a_voigt,
    })
}

#[derive(Debug, Clone)]
pub struct EmslStepResult {
    /// Predicted reduced coordinates (reference for the linearisation).
    pub y_bar: DVector<f64>,
    /// Solution of the affine step.
    pub y: DVector<f64>,
    pub p_bar: VoigtVec9,
    /// Approximate algorithmic tangent (curvature terms neglected).
    pub a_bar: VoigtMat9,
    /// Plain volume average of the sampled stiffnesses, for comparison.
    pub a_bar_voigt: VoigtMat9,
    /// Reference strains the material was sampled at.
    pub f_refs: Vec<VoigtVec9>,
    /// Affine solves performed (1 for the plain step).
    pub passes: usize,
    /// Fixed-point variant ran out of passes before the tolerance held.
    pub stalled: bool,
    pub elapsed_s: f64,
}

fn solve_system<M: Constitutive>(
    model: &EmslModel,
    material: &M,
    y_ref: &DVector<f64>,
    refs: &[VoigtVec9],
    y_prev: &DVector<f64>,
) -> Result<(
    DVector<f64>,
    EmslSystem,
    nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
)> {
    let samples: Vec<(VoigtVec9, VoigtMat9)> = refs
        .iter()
        .map(|f| material.pk1_and_tangent(f))
        .collect::<Result<_>>()?;
    let sys = emsl_assemble(model, &samples, y_ref)?;
    let lu = sys.b.clone().lu();
    let rhs = -(&sys.a + &sys.b * y_prev);
    let dy = lu.solve(&rhs).ok_or(Error::SingularReducedSystem)?;
    Ok((y_prev + dy, sys, lu))
}

fn finish_step(
    model: &EmslModel,
    y_bar: DVector<f64>,
    y: DVector<f64>,
    sys: &EmslSystem,
    lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    refs: Vec<VoigtVec9>,
    passes: usize,
    stalled: bool,
    started: std::time::Instant,
) -> Result<EmslStepResult> {
    let v = model.cell_volume;
    let p_bar = (sys.c_vec + {
        let dv = &sys.d_mat * &y;
        VoigtVec9::from_fn(|k, _| dv[k])
    }) / v;
    // X = -B^-1 D^T with the already factorized B.
    let x = lu
        .solve(&(-sys.d_mat.transpose()))
        .ok_or(Error::SingularReducedSystem)?;
    let dx = &sys.d_mat * &x; // 9 x 9
    let mut a_bar = sys.a_voigt;
    for r in 0..9 {
        for cc in 0..9 {
            a_bar[(r, cc)] += dx[(r, cc)];
        }
    }
    a_bar /= v;
    Ok(EmslStepResult {
        y_bar,
        y,
        p_bar,
        a_bar,
        a_bar_voigt: sys.a_voigt / v,
        f_refs: refs,
        passes,
        stalled,
        elapsed_s: started.elapsed().as_secs_f64(),
    })
}

/// One EMSL load step: predict the reference, sample the material once per
/// cluster, solve the affine system, homogenise, and form the approximate
/// tangent. No Newton iterations.
pub fn emsl_step<M: Constitutive>(
    model: &EmslModel,
    material: &M,
    f_bar: &VoigtVec9,
    y_prev: &DVector<f64>,
) -> Result<EmslStepResult> {
    let started = std::time::Instant::now();
    let (y_bar, refs) = predict_reference(model, f_bar)?;
    let (y, sys, lu) = solve_system(model, material, &y_bar, &refs, y_prev)?;
    finish_step(model, y_bar.clone(), y, &sys, &lu, refs, 1, false, started)
}

/// Fixed-point variant: after the first (plain) pass, re-linearise around the
/// current solution and repeat until the update stagnates or the pass budget
/// runs out (then the last iterate is returned, flagged).
pub fn emsl_fixed_point<M: Constitutive>(
    model: &EmslModel,
    material: &M,
    f_bar: &VoigtVec9,
    y_prev: &DVector<f64>,
    max_passes: usize,
    tol: f64,
) -> Result<EmslStepResult> {
    let started = std::time::Instant::now();
    let (y_bar, refs) = predict_reference(model, f_bar)?;
    let (mut y, mut sys, mut lu) = solve_system(model, material, &y_bar, &refs, y_prev)?;
    let mut last_refs = refs;
    if max_passes <= 1 {
        return finish_step(model, y_bar, y, &sys, &lu, last_refs, 1, false, started);
    }
    let mut stalled = true;
    let mut passes = 1;
    for _ in 1..max_passes {
        let refs = reference_strains(model, &y, f_bar)?;
        let (y_next, sys_next, lu_next) = solve_system(model, material, &y, &refs, &y)?;
        passes += 1;
        let delta = (&y_next - &y).norm();
        let done = delta <= tol * y_next.norm().max(1e-300);
        y = y_next;
        sys = sys_next;
        lu = lu_next;
        last_refs = refs;
        if done {
            stalled = false;
            break;
        }
    }
    finish_step(
        model, y_bar, y, &sys, &lu, last_refs, passes, stalled, started,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::FomSolver;
    use crate::material::{CountingMaterial, Material, MaterialKind};
    use crate::mesh::{build_rve, Pore};
    use crate::pod::{compute_basis, numerical_rank, reduced_coords};
    use crate::rom::{
        newton_solve, rom_homogenize, rom_macro_tangent, weighted_kmeans, CubatureModel,
    };
    use crate::sampling::{collect_snapshots, generate_load_paths, SnapshotSet};
    use crate::voigt::voigt_identity;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn fixture(kind: MaterialKind) -> (FomSolver<Material>, SnapshotSet) {
        let mesh = build_rve(
            3,
            &[Pore {
                center: [1.0, 1.0, 1.0],
                radius: 0.7,
            }],
            2.0,
        )
        .unwrap();
        let mat = Material::new(kind, 1000.0, 0.25).unwrap();
        let solver = FomSolver::new(mesh, mat).unwrap();
        let paths = generate_load_paths(29, 3, 6, 0.025, 0.015);
        let set = collect_snapshots(&solver, &paths, false, 29, 1).unwrap();
        (solver, set)
    }

    fn trained_model(set: &SnapshotSet, d: usize, m: usize, seed: u64) -> EmslModel {
        let basis = compute_basis(set, d).unwrap();
        let y = reduced_coords(&basis, set).unwrap();
        let fit = fit_linear_map(&y, &set.params).unwrap();
        let part = weighted_kmeans(&basis, &set.gauss_volumes, m, seed).unwrap();
        emsl_offline(&basis, &part, &set.gauss_volumes, fit.map, set.cell_volume)
    }

    #[test]
    fn exactly_linear_data_is_fit_with_zero_residual() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let m_true = DMatrix::from_fn(4, 9, |_, _| rng.random::<f64>() - 0.5);
        let params = DMatrix::from_fn(9, 30, |_, _| rng.random::<f64>() - 0.5);
        let y = &m_true * &params;
        let fit = fit_linear_map(&y, &params).unwrap();
        assert!(fit.residual < 1e-10);
        assert!((&fit.map - &m_true).norm() < 1e-10);
        assert!(!fit.tikhonov);
    }

    #[test]
    fn zero_coordinates_give_zero_map() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let params = DMatrix::from_fn(9, 20, |_, _| rng.random::<f64>() - 0.5);
        let fit = fit_linear_map(&DMatrix::zeros(3, 20), &params).unwrap();
        assert_eq!(fit.map.norm(), 0.0);
    }

    #[test]
    fn least_squares_matches_normal_equations_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let params = DMatrix::from_fn(9, 40, |_, _| rng.random::<f64>() - 0.5);
        let y = DMatrix::from_fn(5, 40, |_, _| rng.random::<f64>() - 0.5);
        let fit = fit_linear_map(&y, &params).unwrap();
        let gram = &params * params.transpose();
        let oracle = (&y * params.transpose()) * gram.try_inverse().expect("full rank");
        assert!((&fit.map - &oracle).norm() / oracle.norm() < 1e-10);
    }

    #[test]
    fn rank_deficient_parameters_are_rejected() {
        let mut params = DMatrix::zeros(9, 20);
        for j in 0..20 {
            params[(0, j)] = 1.0 + j as f64; // single direction only
        }
        let y = DMatrix::zeros(3, 20);
        assert!(matches!(
            fit_linear_map(&y, &params),
            Err(Error::RankDeficientParameters)
        ));
    }

    #[test]
    fn single_point_clusters_store_outer_products() {
        let (_, set) = fixture(MaterialKind::NeoHooke);
        let basis = compute_basis(&set, 3).unwrap();
        let n = basis.n_gauss;
        let part = weighted_kmeans(&basis, &set.gauss_volumes, n, 0).unwrap();
        let model = emsl_offline(
            &basis,
            &part,
            &set.gauss_volumes,
            DMatrix::zeros(3, 9),
            set.cell_volume,
        );
        let g = 5;
        let sl = basis.slice(g);
        let vg = set.gauss_volumes[g];
        let op = &model.gram_ops[g];
        for gamma in 0..9 {
            for alpha in 0..3 {
                for delta in 0..9 {
                    for beta in 0..3 {
                        let expect = sl[(gamma, alpha)] * sl[(delta, beta)] * vg;
                        let got = op[(alpha * 3 + beta, gamma * 9 + delta)];
                        assert!((got - expect).abs() <= 1e-15 * expect.abs().max(1e-30));
                    }
                }
            }
        }
    }

    #[test]
    fn gram_operator_contractions_match_direct_assembly() {
        let (_, set) = fixture(MaterialKind::NeoHooke);
        let basis = compute_basis(&set, 4).unwrap();
        let part = weighted_kmeans(&basis, &set.gauss_volumes, 3, 1).unwrap();
        let model = emsl_offline(
            &basis,
            &part,
            &set.gauss_volumes,
            DMatrix::zeros(4, 9),
            set.cell_volume,
        );

        // Identity-stiffness contraction reproduces sum psi^T psi V^g.
        let mut direct = DMatrix::<f64>::zeros(4, 4);
        for g in 0..basis.n_gauss {
            let sl = basis.slice(g);
            direct += sl.transpose() * sl * set.gauss_volumes[g];
        }
        let eye = VoigtMat9::identity();
        let samples: Vec<(VoigtVec9, VoigtMat9)> =
            (0..model.m()).map(|_| (VoigtVec9::zeros(), eye)).collect();
        let sys = emsl_assemble(&model, &samples, &DVector::zeros(4)).unwrap();
        assert!((&sys.b - &direct).norm() / direct.norm() < 1e-13);

        // Swap symmetry of the Gram operator.
        let op = &model.gram_ops[0];
        for gamma in 0..9 {
            for alpha in 0..4 {
                for delta in 0..9 {
                    for beta in 0..4 {
                        let a = op[(alpha * 4 + beta, gamma * 9 + delta)];
                        let b = op[(beta * 4 + alpha, delta * 9 + gamma)];
                        assert_eq!(a, b);
                    }
                }
            }
        }
    }

    #[test]
    fn constant_stiffness_reduces_to_full_reduced_stiffness() {
        let (_, set) = fixture(MaterialKind::LinearElastic);
        let basis = compute_basis(&set, 5).unwrap();
        let part = weighted_kmeans(&basis, &set.gauss_volumes, 4, 2).unwrap();
        let model = emsl_offline(
            &basis,
            &part,
            &set.gauss_volumes,
            DMatrix::zeros(5, 9),
            set.cell_volume,
        );
        let mat = Material::linear_elastic(1000.0, 0.25).unwrap();
        let c = mat.tangent(&voigt_identity()).unwrap();
        let samples: Vec<(VoigtVec9, VoigtMat9)> =
            (0..model.m()).map(|_| (VoigtVec9::zeros(), c)).collect();
        let sys = emsl_assemble(&model, &samples, &DVector::zeros(5)).unwrap();
        let mut direct = DMatrix::<f64>::zeros(5, 5);
        for g in 0..basis.n_gauss {
            let sl = basis.slice(g);
            direct += sl.transpose() * c * sl * set.gauss_volumes[g];
        }
        assert!((&sys.b - &direct).norm() / direct.norm() < 1e-12);
    }

    #[test]
    fn zero_samples_give_zero_system() {
        let (_, set) = fixture(MaterialKind::NeoHooke);
        let model = trained_model(&set, 3, 4, 0);
        let samples = vec![(VoigtVec9::zeros(), VoigtMat9::zeros()); 4];
        let sys = emsl_assemble(&model, &samples, &DVector::from_element(3, 0.1)).unwrap();
        assert_eq!(sys.a.norm(), 0.0);
        assert_eq!(sys.b.norm(), 0.0);
        assert_eq!(sys.c_vec.norm(), 0.0);
        assert_eq!(sys.d_mat.norm(), 0.0);
    }

    #[test]
    fn zero_inference_map_samples_at_macro_strain() {
        let (_, set) = fixture(MaterialKind::NeoHooke);
        let basis = compute_basis(&set, 3).unwrap();
        let part = weighted_kmeans(&basis, &set.gauss_volumes, 4, 0).unwrap();
        let model = emsl_offline(
            &basis,
            &part,
            &set.gauss_volumes,
            DMatrix::zeros(3, 9),
            set.cell_volume,
        );
        let mut f_bar = voigt_identity();
        f_bar[1] = 0.07;
        let (y_bar, refs) = predict_reference(&model, &f_bar).unwrap();
        assert_eq!(y_bar.norm(), 0.0);
        for f in refs {
            assert_eq!(f, f_bar);
        }
    }

    #[test]
    fn inverted_reference_is_reported_with_cluster() {
        let (_, set) = fixture(MaterialKind::NeoHooke);
        let basis = compute_basis(&set, 3).unwrap();
        let part = weighted_kmeans(&basis, &set.gauss_volumes, 2, 0).unwrap();
        let huge = DMatrix::from_element(3, 9, 1e6);
        let model = emsl_offline(&basis, &part, &set.gauss_volumes, huge, set.cell_volume);
        let mut f_bar = voigt_identity();
        f_bar[0] = 1.05;
        assert!(matches!(
            predict_reference(&model, &f_bar),
            Err(Error::ReferenceInverted { .. })
        ));
    }

    #[test]
    fn residual_affinity_is_exact_by_construction() {
        let (solver, set) = fixture(MaterialKind::NeoHooke);
        let model = trained_model(&set, 4, 5, 1);
        let mut f_bar = voigt_identity();
        f_bar[1] = 0.05;
        let (y_bar, refs) = predict_reference(&model, &f_bar).unwrap();
        let samples: Vec<(VoigtVec9, VoigtMat9)> = refs
            .iter()
            .map(|f| solver.material.pk1_and_tangent(f).unwrap())
            .collect();
        let sys = emsl_assemble(&model, &samples, &y_bar).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let y1 = DVector::from_fn(4, |_, _| rng.random::<f64>() - 0.5);
        let y2 = DVector::from_fn(4, |_, _| rng.random::<f64>() - 0.5);
        let r1 = &sys.a + &sys.b * &y1;
        let r2 = &sys.a + &sys.b * &y2;
        let direct = &sys.b * (&y1 - &y2);
        let scale = r1.norm().max(r2.norm()).max(1e-300);
        assert!(((r1 - r2) - direct).norm() <= 1e-14 * scale);
    }

    #[test]
    fn identity_step_stays_at_rest() {
        let (solver, set) = fixture(MaterialKind::NeoHooke);
        let model = trained_model(&set, 4, 5, 1);
        let res = emsl_step(
            &model,
            &solver.material,
            &voigt_identity(),
            &DVector::zeros(4),
        )
        .unwrap();
        // The inference map is linear (not affine), so y_bar(I) is only
        // approximately zero; the equilibrium correction must return to rest.
        assert!(res.p_bar.norm() < 1e-6 * solver.material.e);
        assert!(res.passes == 1);
    }

    #[test]
    fn material_is_sampled_exactly_once_per_cluster() {
        let (solver, set) = fixture(MaterialKind::NeoHooke);
        let m = 7;
        let model = trained_model(&set, 4, m, 3);
        let counting = CountingMaterial::new(&solver.material);
        let mut f_bar = voigt_identity();
        f_bar[1] = 0.04;
        let res = emsl_step(&model, &counting, &f_bar, &DVector::zeros(4)).unwrap();
        assert_eq!(counting.calls(), m as u64);
        assert_eq!(res.f_refs.len(), m);
    }

    #[test]
    fn linear_material_matches_full_integration_pod_galerkin() {
        let (solver, set) = fixture(MaterialKind::LinearElastic);
        let rank = numerical_rank(&set);
        let d = rank.min(8);
        let basis = compute_basis(&set, d).unwrap();
        let full = CubatureModel::full_integration(&basis, &set.gauss_volumes, set.cell_volume);
        let mat = solver.material;

        for (m, seed) in [(1usize, 0u64), (5, 4), (20, 9)] {
            let y_snap = reduced_coords(&basis, &set).unwrap();
            let fit = fit_linear_map(&y_snap, &set.params).unwrap();
            let part = weighted_kmeans(&basis, &set.gauss_volumes, m, seed).unwrap();
            let model = emsl_offline(&basis, &part, &set.gauss_volumes, fit.map, set.cell_volume);

            let mut f_bar = voigt_identity();
            f_bar[1] = 0.06;
            f_bar[0] = 1.02;
            let res = emsl_step(&model, &mat, &f_bar, &DVector::zeros(d)).unwrap();
            let sol = newton_solve(&full, &mat, &f_bar, &DVector::zeros(d)).unwrap();
            let p_full = rom_homogenize(&full, &mat, &sol.y, &f_bar).unwrap();
            let a_full = rom_macro_tangent(&full, &mat, &sol.y, &f_bar).unwrap();

            assert!(
                (&res.y - &sol.y).norm() <= 1e-10 * sol.y.norm().max(1e-12),
                "m={m}"
            );
            assert!(
                (res.p_bar - p_full).norm() <= 1e-10 * p_full.norm(),
                "m={m}"
            );
            assert!(
                (res.a_bar - a_full).norm() <= 1e-10 * a_full.norm(),
                "m={m}"
            );
        }
    }

    #[test]
    fn fixed_point_on_linear_material_converges_immediately() {
        let (solver, set) = fixture(MaterialKind::LinearElastic);
        let model = trained_model(&set, 5, 6, 2);
        let mut f_bar = voigt_identity();
        f_bar[2] = 0.05;
        let step = emsl_step(&model, &solver.material, &f_bar, &DVector::zeros(5)).unwrap();
        let fp = emsl_fixed_point(
            &model,
            &solver.material,
            &f_bar,
            &DVector::zeros(5),
            10,
            1e-12,
        )
        .unwrap();
        assert!(!fp.stalled);
        assert!(fp.passes <= 2);
        assert!((&fp.y - &step.y).norm() <= 1e-10 * step.y.norm());
    }

    #[test]
    fn single_pass_fixed_point_is_bit_identical_to_step() {
        let (solver, set) = fixture(MaterialKind::NeoHooke);
        let model = trained_model(&set, 4, 5, 1);
        let mut f_bar = voigt_identity();
        f_bar[1] = 0.05;
        let a = emsl_step(&model, &solver.material, &f_bar, &DVector::zeros(4)).unwrap();
        let b = emsl_fixed_point(
            &model,
            &solver.material,
            &f_bar,
            &DVector::zeros(4),
            1,
            1e-10,
        )
        .unwrap();
        assert_eq!(a.y, b.y);
        assert_eq!(a.p_bar, b.p_bar);
        assert_eq!(a.a_bar, b.a_bar);
    }

    #[test]
    fn model_container_round_trips() {
        let (_, set) = fixture(MaterialKind::NeoHooke);
        let model = trained_model(&set, 3, 4, 5);
        let dir = std::env::temp_dir().join(format!("strainmor-emsl-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.bin");
        model.to_container().write(&path).unwrap();
        let container = Container::read(&path).unwrap();
        assert_eq!(container.tag, "EMSL");
        let back = EmslModel::from_container(&container).unwrap();
        assert_eq!(model.psis, back.psis);
        assert_eq!(model.weights, back.weights);
        assert_eq!(model.psi_bars, back.psi_bars);
        assert_eq!(model.inference, back.inference);
        for (a, b) in model.gram_ops.iter().zip(&back.gram_ops) {
            assert_eq!(a, b);
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn prediction_at_training_points_is_within_fit_residual() {
        let (_, set) = fixture(MaterialKind::NeoHooke);
        let basis = compute_basis(&set, 5).unwrap();
        let y_snap = reduced_coords(&basis, &set).unwrap();
        let fit = fit_linear_map(&y_snap, &set.params).unwrap();
        let part = weighted_kmeans(&basis, &set.gauss_volumes, 4, 1).unwrap();
        let model = emsl_offline(&basis, &part, &set.gauss_volumes, fit.map, set.cell_volume);
        for j in [0usize, 3, 7] {
            let f_bar = VoigtVec9::from_column_slice(set.params.column(j).as_slice());
            let (y_bar, _) = predict_reference(&model, &f_bar).unwrap();
            let y_true = y_snap.column(j);
            assert!((y_bar - y_true).norm() <= fit.residual + 1e-12);
        }
    }
}
