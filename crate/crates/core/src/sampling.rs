//! Randomized load-path generation and snapshot collection.
//!
//! Every path starts at the undeformed state. Each increment adds a fixed
//! component along a path-constant random direction and a smaller component
//! along a per-step random direction, both unit Frobenius norm.

use crate::error::{Error, Result};
use crate::fem::{FomSolver, FomState};
use crate::material::Constitutive;
use crate::store::{read_matrix, read_vector, write_matrix, write_vector, Manifest};
use crate::voigt::{voigt_identity, VoigtVec9};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct LoadPath {
    /// Path-constant direction, unit Frobenius norm.
    pub dir_path: VoigtVec9,
    /// Per-step directions, unit Frobenius norm.
    pub dir_steps: Vec<VoigtVec9>,
    pub step_path: f64,
    pub step_perturb: f64,
    /// Macroscopic deformation gradients after each increment.
    pub f_bars: Vec<VoigtVec9>,
}

impl LoadPath {
    pub fn n_steps(&self) -> usize {
        self.f_bars.len()
    }
}

fn gaussian(rng: &mut ChaCha12Rng) -> f64 {
    // Box-Muller on open-interval uniforms.
    let u1: f64 = loop {
        let u = rng.random::<f64>();
        if u > 0.0 {
            break u;
        }
    };
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn unit_direction(rng: &mut ChaCha12Rng) -> VoigtVec9 {
    loop {
        let v = VoigtVec9::from_fn(|_, _| gaussian(rng));
        let n = v.norm();
        if n > 1e-8 {
            return v / n;
        }
    }
}

/// Deterministic load paths for a given seed.
pub fn generate_load_paths(
    seed: u64,
    n_paths: usize,
    n_steps: usize,
    step_path: f64,
    step_perturb: f64,
) -> Vec<LoadPath> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    (0..n_paths)
        .map(|_| {
            let dir_path = unit_direction(&mut rng);
            let mut f = voigt_identity();
            let mut dir_steps = Vec::with_capacity(n_steps);
            let mut f_bars = Vec::with_capacity(n_steps);
            for _ in 0..n_steps {
                let dir_step = unit_direction(&mut rng);
                f += step_path * dir_path + step_perturb * dir_step;
                dir_steps.push(dir_step);
                f_bars.push(f);
            }
            LoadPath {
                dir_path,
                dir_steps,
                step_path,
                step_perturb,
                f_bars,
            }
        })
        .collect()
}

/// Snapshot matrices collected from converged full-order solutions, one
/// column per load step in (path, step) order.
#[derive(Debug, Clone)]
pub struct SnapshotSet {
    /// 9|G| x s deformation gradients.
    pub strains: DMatrix<f64>,
    /// 9 x s macroscopic deformation gradients.
    pub params: DMatrix<f64>,
    /// 9|G| x s stresses, stored only on request (needed by ECM training).
    pub stresses: Option<DMatrix<f64>>,
    /// 9 x s homogenised stresses.
    pub homog_stresses: DMatrix<f64>,
    /// Per-point volumes V^g.
    pub gauss_volumes: DVector<f64>,
    pub cell_volume: f64,
    pub seed: u64,
    pub mesh_hash: u32,
    /// (path, step) provenance per column.
    pub columns: Vec<(u32, u32)>,
    /// Paths dropped because a step failed to converge.
    pub warnings: Vec<String>,
}

impl SnapshotSet {
    pub fn n_snapshots(&self) -> usize {
        self.strains.ncols()
    }

    pub fn n_gauss(&self) -> usize {
        self.gauss_volumes.len()
    }

    /// Fluctuation matrix: strains with the macroscopic part removed from
    /// every Gauss block of each column.
    pub fn fluctuations(&self) -> DMatrix<f64> {
        let mut out = self.strains.clone();
        for j in 0..out.ncols() {
            let fbar = self.params.column(j);
            let mut col = out.column_mut(j);
            for g in 0..self.n_gauss() {
                for k in 0..9 {
                    col[9 * g + k] -= fbar[k];
                }
            }
        }
        out
    }

    /// Columns grouped per path, preserving step order.
    pub fn paths(&self) -> Vec<Vec<usize>> {
        let mut by_path: std::collections::BTreeMap<u32, Vec<usize>> = Default::default();
        for (col, &(p, _)) in self.columns.iter().enumerate() {
            by_path.entry(p).or_default().push(col);
        }
        by_path.into_values().collect()
    }
}

struct PathResult {
    strains: Vec<DVector<f64>>,
    stresses: Vec<DVector<f64>>,
    params: Vec<VoigtVec9>,
    homog: Vec<VoigtVec9>,
    failed: Option<(usize, Error)>,
}

fn solve_path<M: Constitutive>(
    solver: &FomSolver<M>,
    path: &LoadPath,
    with_stresses: bool,
) -> PathResult {
    let mut out = PathResult {
        strains: Vec::new(),
        stresses: Vec::new(),
        params: Vec::new(),
        homog: Vec::new(),
        failed: None,
    };
    let mut state: FomState = solver.reference_state();
    for (k, f_bar) in path.f_bars.iter().enumerate() {
        match solver.solve_increment(f_bar, &state) {
            Ok(next) => {
                out.strains.push(solver.gauss_strains(&next));
                if with_stresses {
                    out.stresses.push(solver.gauss_stresses(&next));
                }
                out.params.push(*f_bar);
                out.homog.push(solver.homogenize_stress(&next));
                state = next;
            }
            Err(err) => {
                out.failed = Some((k, err));
                break;
            }
        }
    }
    out
}

/// Drive the full-order solver along every path and collect snapshot columns.
/// Paths with a non-converged step are dropped with a warning. `threads > 1`
/// distributes whole paths over that many workers; column order stays fixed
/// by (path, step).
pub fn collect_snapshots<M: Constitutive + Sync>(
    solver: &FomSolver<M>,
    paths: &[LoadPath],
    with_stresses: bool,
    seed: u64,
    threads: usize,
) -> Result<SnapshotSet> {
    let n_paths = paths.len();
    let results: Vec<PathResult> = if threads <= 1 || n_paths <= 1 {
        paths
            .iter()
            .map(|p| solve_path(solver, p, with_stresses))
            .collect()
    } else {
        let mut slots: Vec<Option<PathResult>> = (0..n_paths).map(|_| None).collect();
        let next = std::sync::atomic::AtomicUsize::new(0);
        let slots_mutex = std::sync::Mutex::new(&mut slots);
        std::thread::scope(|scope| {
            for _ in 0..threads.min(n_paths) {
                scope.spawn(|| loop {
                    let idx = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if idx >= n_paths {
                        break;
                    }
                    let res = solve_path(solver, &paths[idx], with_stresses);
                    slots_mutex.lock().unwrap()[idx] = Some(res);
                });
            }
        });
        slots
            .into_iter()
            .map(|s| s.expect("all paths solved"))
            .collect()
    };

    let mut warnings = Vec::new();
    let mut strain_cols = Vec::new();
    let mut stress_cols = Vec::new();
    let mut param_cols = Vec::new();
    let mut homog_cols = Vec::new();
    let mut columns = Vec::new();
    for (p, res) in results.into_iter().enumerate() {
        if let Some((step, err)) = res.failed {
            warnings.push(format!("path {p} dropped: step {step} failed: {err}"));
            continue;
        }
        for (k, strain) in res.strains.into_iter().enumerate() {
            strain_cols.push(strain);
            param_cols.push(res.params[k]);
            homog_cols.push(res.homog[k]);
            columns.push((p as u32, k as u32));
        }
        if with_stresses {
            stress_cols.extend(res.stresses);
        }
    }
    if strain_cols.is_empty() {
        return Err(Error::Config("every load path failed to converge".into()));
    }

    let s = strain_cols.len();
    let rows = strain_cols[0].len();
    let mut strains = DMatrix::zeros(rows, s);
    let mut params = DMatrix::zeros(9, s);
    let mut homog = DMatrix::zeros(9, s);
    for j in 0..s {
        strains.set_column(j, &strain_cols[j]);
        params.column_mut(j).copy_from(&param_cols[j]);
        homog.column_mut(j).copy_from(&homog_cols[j]);
    }
    let stresses = if with_stresses {
        let mut m = DMatrix::zeros(rows, s);
        for j in 0..s {
            m.set_column(j, &stress_cols[j]);
        }
        Some(m)
    } else {
        None
    };

    Ok(SnapshotSet {
        strains,
        params,
        stresses,
        homog_stresses: homog,
        gauss_volumes: DVector::from_iterator(
            solver.gauss.n_points(),
            solver.gauss.points.iter().map(|p| p.weight),
        ),
        cell_volume: solver.gauss.cell_volume,
        seed,
        mesh_hash: solver.mesh.content_hash(),
        columns,
        warnings,
    })
}

/// Persist a snapshot set: manifest plus one binary record per matrix.
pub fn write_store(set: &SnapshotSet, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = Manifest::default();
    manifest.set("format", "emsl-snapshot-store");
    manifest.set("version", 1u32);
    manifest.set("seed", set.seed);
    manifest.set("mesh_hash", set.mesh_hash);
    manifest.set("s", set.n_snapshots());
    manifest.set("n_gauss", set.n_gauss());
    manifest.set("with_stresses", u8::from(set.stresses.is_some()));
    manifest.set_f64("cell_volume", set.cell_volume);
    manifest.set("warnings", set.warnings.len());
    for (i, w) in set.warnings.iter().enumerate() {
        manifest.set(&format!("warning.{i}"), w.replace('\n', " "));
    }
    manifest.write(&dir.join("manifest.txt"))?;

    write_matrix(&dir.join("strains.bin"), &set.strains)?;
    write_matrix(&dir.join("params.bin"), &set.params)?;
    write_matrix(&dir.join("homog_stresses.bin"), &set.homog_stresses)?;
    write_vector(&dir.join("volumes.bin"), &set.gauss_volumes)?;
    if let Some(stresses) = &set.stresses {
        write_matrix(&dir.join("stresses.bin"), stresses)?;
    }
    let cols = DMatrix::from_fn(2, set.columns.len(), |i, j| {
        if i == 0 {
            set.columns[j].0 as f64
        } else {
            set.columns[j].1 as f64
        }
    });
    write_matrix(&dir.join("columns.bin"), &cols)?;
    Ok(())
}

/// Load a snapshot set written by [`write_store`]; floats round-trip
/// bit-identically.
pub fn read_store(dir: &Path) -> Result<SnapshotSet> {
    let manifest = Manifest::read(&dir.join("manifest.txt"))?;
    let version: u32 = manifest.get_parsed("version")?;
    if version != 1 {
        return Err(Error::FormatVersionMismatch { found: version });
    }
    let with_stresses: u8 = manifest.get_parsed("with_stresses")?;
    let strains = read_matrix(&dir.join("strains.bin"))?;
    let params = read_matrix(&dir.join("params.bin"))?;
    let homog_stresses = read_matrix(&dir.join("homog_stresses.bin"))?;
    let gauss_volumes = read_vector(&dir.join("volumes.bin"))?;
    let stresses = if with_stresses == 1 {
        Some(read_matrix(&dir.join("stresses.bin"))?)
    } else {
        None
    };
    let cols = read_matrix(&dir.join("columns.bin"))?;
    let columns = (0..cols.ncols())
        .map(|j| (cols[(0, j)] as u32, cols[(1, j)] as u32))
        .collect();
    let n_warn: usize = manifest.get_parsed("warnings").unwrap_or(0);
    let warnings = (0..n_warn)
        .filter_map(|i| {
            manifest
                .get(&format!("warning.{i}"))
                .ok()
                .map(str::to_string)
        })
        .collect();

    Ok(SnapshotSet {
        strains,
        params,
        stresses,
        homog_stresses,
        gauss_volumes,
        cell_volume: manifest.get_f64("cell_volume")?,
        seed: manifest.get_parsed("seed")?,
        mesh_hash: manifest.get_parsed("mesh_hash")?,
        columns,
        warnings,
    })
}
