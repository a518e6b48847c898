//! Machinery shared by the hyperreduced online phases: cluster partitions of
//! Gauss points (volume-weighted k-means), cubature models, the reduced
//! Newton solve, homogenisation, and the consistent macroscopic tangent.

use crate::error::{Error, Result};
use crate::material::Constitutive;
use crate::pod::ModeBasis;
use crate::voigt::{VoigtMat9, VoigtVec9};
use nalgebra::{DMatrix, DMatrixView, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

const MAX_LLOYD: usize = 300;
const NEWTON_MAX_ITER: usize = 25;
const NEWTON_TOL_REL: f64 = 1e-9;

/// Assignment of Gauss points to clusters with volumes and centroid bases.
#[derive(Debug, Clone)]
pub struct ClusterPartition {
    pub assignment: Vec<usize>,
    /// Cluster volumes xi^c.
    pub volumes: Vec<f64>,
    /// Stacked centroid bases psi^c, (9m) x d.
    pub centroids: DMatrix<f64>,
    /// Stacked volume-integrated bases psi_bar^c = sum_g psi^g V^g, (9m) x d.
    pub integrated: DMatrix<f64>,
    /// Volume-weighted within-cluster sum of squares per Lloyd iteration.
    pub wcss_history: Vec<f64>,
}

impl ClusterPartition {
    pub fn m(&self) -> usize {
        self.volumes.len()
    }

    pub fn d(&self) -> usize {
        self.centroids.ncols()
    }

    pub fn centroid(&self, c: usize) -> DMatrixView<'_, f64> {
        self.centroids.view((9 * c, 0), (9, self.d()))
    }

    pub fn integrated(&self, c: usize) -> DMatrixView<'_, f64> {
        self.integrated.view((9 * c, 0), (9, self.d()))
    }
}

/// Volume-weighted k-means over the per-point basis slices (flattened to
/// 9d-vectors), k-means++ seeding, Lloyd iterations until assignments are
/// stable. Deterministic for a given seed.
pub fn weighted_kmeans(
    basis: &ModeBasis,
    volumes: &DVector<f64>,
    m: usize,
    seed: u64,
) -> Result<ClusterPartition> {
    let n = basis.n_gauss;
    let d = basis.d();
    if m == 0 || m > n {
        return Err(Error::Config(format!("cluster count {m} outside 1..={n}")));
    }
    let dim = 9 * d;

    // Flatten psi^g column-major into point vectors.
    let mut points = DMatrix::zeros(dim, n);
    for g in 0..n {
        let sl = basis.slice(g);
        for j in 0..d {
            for k in 0..9 {
                points[(j * 9 + k, g)] = sl[(k, j)];
            }
        }
    }

    let mut assignment = vec![0usize; n];
    let mut centers: Vec<usize> = Vec::with_capacity(m);
    if m == n {
        // Every point its own cluster; centroids equal the points.
        centers.extend(0..n);
        for (g, a) in assignment.iter_mut().enumerate() {
            *a = g;
        }
    } else {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut dist2 = vec![0.0f64; n];
        // First center: volume-weighted draw.
        centers.push(weighted_pick(&mut rng, volumes.as_slice(), &centers));
        for _ in 1..m {
            let mut weights = vec![0.0f64; n];
            for g in 0..n {
                let mut best = f64::INFINITY;
                for &c in &centers {
                    let dd = (points.column(g) - points.column(c)).norm_squared();
                    if dd < best {
                        best = dd;
                    }
                }
                dist2[g] = best;
                weights[g] = best * volumes[g];
            }
            centers.push(weighted_pick(&mut rng, &weights, &centers));
        }
        let mut centroids: Vec<DVector<f64>> = centers
            .iter()
            .map(|&c| points.column(c).clone_owned())
            .collect();

        let mut wcss_history = Vec::new();
        for _ in 0..MAX_LLOYD {
            // Assign.
            let mut changed = false;
            let mut wcss = 0.0;
            for g in 0..n {
                let mut best = 0usize;
                let mut best_d = f64::INFINITY;
                for (c, cen) in centroids.iter().enumerate() {
                    let dd = (points.column(g) - cen).norm_squared();
                    if dd < best_d {
                        best_d = dd;
                        best = c;
                    }
                }
                wcss += volumes[g] * best_d;
                if assignment[g] != best {
                    assignment[g] = best;
                    changed = true;
                }
            }
            wcss_history.push(wcss);

            // Re-seed empty clusters from the farthest point.
            let mut counts = vec![0usize; m];
            for &a in &assignment {
                counts[a] += 1;
            }
            let mut reseeded = false;
            for c in 0..m {
                if counts[c] > 0 {
                    continue;
                }
                let far = (0..n)
                    .filter(|&g| counts[assignment[g]] > 1)
                    .max_by(|&a, &b| {
                        let da = (points.column(a) - &centroids[assignment[a]]).norm_squared();
                        let db = (points.column(b) - &centroids[assignment[b]]).norm_squared();
                        da.partial_cmp(&db).unwrap().then(b.cmp(&a))
                    })
                    .expect("m <= n leaves a donor cluster");
                counts[assignment[far]] -= 1;
                assignment[far] = c;
                counts[c] = 1;
                centroids[c] = points.column(far).clone_owned();
                reseeded = true;
            }

            // Update centroids (volume-weighted means).
            let mut sums = vec![DVector::zeros(dim); m];
            let mut mass = vec![0.0f64; m];
            for g in 0..n {
                sums[assignment[g]].axpy(volumes[g], &points.column(g), 1.0);
                mass[assignment[g]] += volumes[g];
            }
            for c in 0..m {
                centroids[c] = &sums[c] / mass[c];
            }

            if !changed && !reseeded {
                break;
            }
        }
        return Ok(finish_partition(
            basis,
            volumes,
            m,
            assignment_with_history(assignment, wcss_history),
        ));
    }

    finish_partition_ok(basis, volumes, m, assignment, Vec::new())
}

fn assignment_with_history(assignment: Vec<usize>, wcss: Vec<f64>) -> (Vec<usize>, Vec<f64>) {
    (assignment, wcss)
}

fn finish_partition(
    basis: &ModeBasis,
    volumes: &DVector<f64>,
    m: usize,
    (assignment, wcss_history): (Vec<usize>, Vec<f64>),
) -> ClusterPartition {
    finish_partition_ok(basis, volumes, m, assignment, wcss_history).expect("sizes checked")
}

fn finish_partition_ok(
    basis: &ModeBasis,
    volumes: &DVector<f64>,
    m: usize,
    assignment: Vec<usize>,
    wcss_history: Vec<f64>,
) -> Result<ClusterPartition> {
    let d = basis.d();
    let mut cluster_volumes = vec![0.0f64; m];
    let mut integrated = DMatrix::zeros(9 * m, d);
    for (g, &c) in assignment.iter().enumerate() {
        cluster_volumes[c] += volumes[g];
        let sl = basis.slice(g);
        let mut block = integrated.view_mut((9 * c, 0), (9, d));
        for j in 0..d {
            for k in 0..9 {
                block[(k, j)] += sl[(k, j)] * volumes[g];
            }
        }
    }
    let mut centroids = integrated.clone();
    for c in 0..m {
        let mut block = centroids.view_mut((9 * c, 0), (9, d));
        block /= cluster_volumes[c];
    }
    Ok(ClusterPartition {
        assignment,
        volumes: cluster_volumes,
        centroids,
        integrated,
        wcss_history,
    })
}

fn weighted_pick(rng: &mut ChaCha12Rng, weights: &[f64], taken: &[usize]) -> usize {
    let total: f64 = weights
        .iter()
        .enumerate()
        .filter(|(i, _)| !taken.contains(i))
        .map(|(_, w)| w.max(0.0))
        .sum();
    if total > 0.0 {
        let r = rng.random::<f64>() * total;
        let mut acc = 0.0;
        for (i, &w) in weights.iter().enumerate() {
            if taken.contains(&i) {
                continue;
            }
            acc += w.max(0.0);
            if r <= acc {
                return i;
            }
        }
    }
    // Degenerate weights: first untaken index.
    (0..weights.len())
        .find(|i| !taken.contains(i))
        .expect("fewer centers than points")
}

/// Reduced integration points shared by the ECM and E3C online solvers.
#[derive(Debug, Clone)]
pub struct CubatureModel {
    /// Stacked bases psi^c, (9m) x d.
    pub psis: DMatrix<f64>,
    /// Integration weights xi^c (mm^3).
    pub weights: Vec<f64>,
    /// Separate homogenisation weights, if trained that way.
    pub hom_weights: Option<Vec<f64>>,
    /// Full cell volume including pores.
    pub cell_volume: f64,
}

impl CubatureModel {
    pub fn m(&self) -> usize {
        self.weights.len()
    }

    pub fn d(&self) -> usize {
        self.psis.ncols()
    }

    pub fn psi(&self, c: usize) -> DMatrixView<'_, f64> {
        self.psis.view((9 * c, 0), (9, self.d()))
    }

    /// Exact full integration: one point per Gauss point with xi = V^g.
    pub fn full_integration(basis: &ModeBasis, volumes: &DVector<f64>, cell_volume: f64) -> Self {
        Self {
            psis: basis.psi.clone(),
            weights: volumes.iter().copied().collect(),
            hom_weights: None,
            cell_volume,
        }
    }

    /// Model from a cluster partition (centroid bases, cluster volumes).
    pub fn from_partition(partition: &ClusterPartition, cell_volume: f64) -> Self {
        Self {
            psis: partition.centroids.clone(),
            weights: partition.volumes.clone(),
            hom_weights: None,
            cell_volume,
        }
    }

    /// Serialize with a type tag ("ECM" or "E3C").
    pub fn to_container(&self, tag: &str) -> crate::store::Container {
        let mut c = crate::store::Container::new(tag);
        c.push("psis", self.psis.clone());
        c.push_vector("weights", &DVector::from_column_slice(&self.weights));
        if let Some(hom) = &self.hom_weights {
            c.push_vector("hom_weights", &DVector::from_column_slice(hom));
        }
        c.push_scalar("cell_volume", self.cell_volume);
        c
    }

    pub fn from_container(c: &crate::store::Container) -> crate::error::Result<Self> {
        Ok(Self {
            psis: c.get("psis")?.clone(),
            weights: c.get_vector("weights")?.iter().copied().collect(),
            hom_weights: c
                .get_vector("hom_weights")
                .ok()
                .map(|v| v.iter().copied().collect()),
            cell_volume: c.get_scalar("cell_volume")?,
        })
    }

    fn strain_at(&self, c: usize, y: &DVector<f64>, f_bar: &VoigtVec9) -> VoigtVec9 {
        let mut f = *f_bar;
        let fluct = self.psi(c) * y;
        for k in 0..9 {
            f[k] += fluct[k];
        }
        f
    }
}

/// Reduced residual `r = sum_c psi^cT P(F^c) xi^c`.
pub fn reduced_residual<M: Constitutive>(
    model: &CubatureModel,
    material: &M,
    y: &DVector<f64>,
    f_bar: &VoigtVec9,
) -> Result<DVector<f64>> {
    let mut r = DVector::zeros(model.d());
    for c in 0..model.m() {
        let f = model.strain_at(c, y, f_bar);
        let p = material.pk1(&f)?;
        r += model.psi(c).transpose() * p * model.weights[c];
    }
    Ok(r)
}

/// Reduced tangent `K = sum_c psi^cT A(F^c) psi^c xi^c`.
pub fn reduced_tangent<M: Constitutive>(
    model: &CubatureModel,
    material: &M,
    y: &DVector<f64>,
    f_bar: &VoigtVec9,
) -> Result<DMatrix<f64>> {
    let mut k = DMatrix::zeros(model.d(), model.d());
    for c in 0..model.m() {
        let f = model.strain_at(c, y, f_bar);
        let a = material.tangent(&f)?;
        let psi = model.psi(c);
        k += psi.transpose() * a * psi * model.weights[c];
    }
    Ok(k)
}

fn residual_and_tangent<M: Constitutive>(
    model: &CubatureModel,
    material: &M,
    y: &DVector<f64>,
    f_bar: &VoigtVec9,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let d = model.d();
    let mut r = DVector::zeros(d);
    let mut k = DMatrix::zeros(d, d);
    for c in 0..model.m() {
        let f = model.strain_at(c, y, f_bar);
        let (p, a) = material.pk1_and_tangent(&f)?;
        let psi = model.psi(c);
        r += psi.transpose() * p * model.weights[c];
        k += psi.transpose() * a * psi * model.weights[c];
    }
    Ok((r, k))
}

#[derive(Debug, Clone)]
pub struct RomSolution {
    pub y: DVector<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
}

/// Newton iteration on the reduced equilibrium, warm-started from `y0`.
/// Any failure inside an iterate (non-positive Jacobian, singular tangent,
/// iteration cap) is reported as divergence.
pub fn newton_solve<M: Constitutive>(
    model: &CubatureModel,
    material: &M,
    f_bar: &VoigtVec9,
    y0: &DVector<f64>,
) -> Result<RomSolution> {
    let mut y = y0.clone();
    let tol_abs = 1e-12 * material.stiffness_scale() * model.cell_volume;
    let mut tol = tol_abs;
    let mut iterations = 0usize;
    let diverged = |reason: String| Error::RomDivergence { reason };

    loop {
        let (r, k) = residual_and_tangent(model, material, &y, f_bar).map_err(|e| match e {
            Error::NonPositiveJacobian { det } => diverged(format!(
                "non-positive Jacobian (det {det:.3e}) at iterate {iterations}"
            )),
            other => other,
        })?;
        let rn = r.norm();
        if iterations == 0 {
            tol = tol_abs.max(NEWTON_TOL_REL * rn);
        }
        if rn <= tol {
            return Ok(RomSolution {
                y,
                iterations,
                residual_norm: rn,
            });
        }
        if iterations >= NEWTON_MAX_ITER {
            return Err(diverged(format!(
                "no convergence after {iterations} iterations (residual {rn:.3e})"
            )));
        }
        let lu = k.lu();
        let dy = lu
            .solve(&(-&r))
            .ok_or_else(|| diverged("singular reduced tangent".into()))?;
        y += dy;
        iterations += 1;
    }
}

/// Homogenised stress from the reduced solution, using separate
/// homogenisation weights when the model carries them.
pub fn rom_homogenize<M: Constitutive>(
    model: &CubatureModel,
    material: &M,
    y: &DVector<f64>,
    f_bar: &VoigtVec9,
) -> Result<VoigtVec9> {
    let weights = model.hom_weights.as_ref().unwrap_or(&model.weights);
    let mut p_bar = VoigtVec9::zeros();
    for c in 0..model.m() {
        let f = model.strain_at(c, y, f_bar);
        p_bar += material.pk1(&f)? * weights[c];
    }
    Ok(p_bar / model.cell_volume)
}

/// Algorithmically consistent macroscopic tangent of the reduced model:
/// `A_bar = (1/V) (sum_c xi A + sum_c xi A psi X)` with `K X = -L`,
/// `L = sum_c psi^T A xi`.
pub fn rom_macro_tangent<M: Constitutive>(
    model: &CubatureModel,
    material: &M,
    y: &DVector<f64>,
    f_bar: &VoigtVec9,
) -> Result<VoigtMat9> {
    let d = model.d();
    let m = model.m();
    let mut k = DMatrix::zeros(d, d);
    let mut l = DMatrix::zeros(d, 9);
    let mut a_voigt = VoigtMat9::zeros();
    let mut tangents = Vec::with_capacity(m);
    for c in 0..m {
        let f = model.strain_at(c, y, f_bar);
        let a = material.tangent(&f)?;
        let psi = model.psi(c);
        let xi = model.weights[c];
        k += psi.transpose() * a * psi * xi;
        for row in 0..d {
            for col in 0..9 {
                let mut s = 0.0;
                for q in 0..9 {
                    s += psi[(q, row)] * a[(q, col)];
                }
                l[(row, col)] += s * xi;
            }
        }
        a_voigt += a * xi;
        tangents.push(a);
    }

    let lu = k.lu();
    let x = lu.solve(&(-&l)).ok_or(Error::SingularTangent)?;

    let mut a_bar = a_voigt;
    for c in 0..m {
        let psi_x = model.psi(c) * &x; // 9 x 9
        let a = &tangents[c];
        let xi = model.weights[c];
        for row in 0..9 {
            for col in 0..9 {
                let mut s = 0.0;
                for q in 0..9 {
                    s += a[(row, q)] * psi_x[(q, col)];
                }
                a_bar[(row, col)] += s * xi;
            }
        }
    }
    Ok(a_bar / model.cell_volume)
}
