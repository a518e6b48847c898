//! Full-order periodic hyperelastic FE solver: the snapshot oracle and the
//! validation ground truth.
//!
//! The primary unknown is the nodal displacement fluctuation on the
//! independent periodic node classes; the applied macroscopic deformation
//! gradient enters through `F = F_bar + grad(u_fluct)` at every Gauss point,
//! so compatibility and periodicity hold by construction. The tangent systems
//! are solved with a cached-symbolic sparse LU.

use crate::error::{Error, Result};
use crate::material::Constitutive;
use crate::mesh::{gauss_table, periodic_pairs, GaussTable, Mesh, PeriodicMap};
use crate::voigt::{voigt_identity, voigt_index, VoigtMat9, VoigtVec9};
use faer::prelude::*;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMat};
use nalgebra::{DMatrix, DVector};

const MAX_ITER: usize = 25;
const TOL_REL: f64 = 1e-9;

/// Converged (or reference) state of the periodic cell.
#[derive(Debug, Clone)]
pub struct FomState {
    pub f_bar: VoigtVec9,
    /// Displacement fluctuation on independent DOFs.
    pub u: DVector<f64>,
    pub gauss_f: Vec<VoigtVec9>,
    pub gauss_p: Vec<VoigtVec9>,
    pub gauss_a: Vec<VoigtMat9>,
    pub converged: bool,
    pub iterations: usize,
    pub residual_norm: f64,
    pub residual_history: Vec<f64>,
}

pub struct FomSolver<M: Constitutive> {
    pub mesh: Mesh,
    pub gauss: GaussTable,
    pub map: PeriodicMap,
    pub material: M,
    n_dofs: usize,
    /// DOF per (element-local node, component); None for the pinned anchor.
    elem_dofs: Vec<[Option<usize>; 24]>,
    symbolic: SymbolicSparseColMat<usize>,
    symbolic_lu: SymbolicLu<usize>,
    /// Value-array position of each free (row, col) pair per element.
    elem_pos: Vec<Box<[[u32; 24]; 24]>>,
}

struct Assembly {
    residual: DVector<f64>,
    values: Vec<f64>,
    gauss_f: Vec<VoigtVec9>,
    gauss_p: Vec<VoigtVec9>,
    gauss_a: Vec<VoigtMat9>,
}

impl<M: Constitutive> FomSolver<M> {
    pub fn new(mesh: Mesh, material: M) -> Result<Self> {
        let gauss = gauss_table(&mesh)?;
        let map = periodic_pairs(&mesh)?;
        let n_dofs = map.independent_dofs();

        let elem_dofs: Vec<[Option<usize>; 24]> = mesh
            .elements
            .iter()
            .map(|conn| {
                std::array::from_fn(|loc| {
                    let class = map.class_of_node[conn[loc / 3]];
                    map.dof(class, loc % 3)
                })
            })
            .collect();

        // Sparsity pattern over all element DOF pairs.
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for dofs in &elem_dofs {
            for &c in dofs.iter().flatten() {
                for &r in dofs.iter().flatten() {
                    pairs.push((c, r));
                }
            }
        }
        pairs.sort_unstable();
        pairs.dedup();
        let nnz = pairs.len();
        let mut col_ptr = vec![0usize; n_dofs + 1];
        for &(c, _) in &pairs {
            col_ptr[c + 1] += 1;
        }
        for c in 0..n_dofs {
            col_ptr[c + 1] += col_ptr[c];
        }
        let row_idx: Vec<usize> = pairs.iter().map(|&(_, r)| r).collect();
        let symbolic = SymbolicSparseColMat::new_checked(
            n_dofs,
            n_dofs,
            col_ptr.clone(),
            None,
            row_idx.clone(),
        );
        let symbolic_lu = SymbolicLu::try_new(symbolic.rb()).map_err(|_| Error::SingularTangent)?;

        // Position of each element-local pair in the value array.
        let pos_of = |r: usize, c: usize| -> u32 {
            let lo = col_ptr[c];
            let hi = col_ptr[c + 1];
            let k = row_idx[lo..hi].binary_search(&r).expect("pair in pattern");
            (lo + k) as u32
        };
        let elem_pos: Vec<Box<[[u32; 24]; 24]>> = elem_dofs
            .iter()
            .map(|dofs| {
                let mut table = Box::new([[u32::MAX; 24]; 24]);
                for (lr, rd) in dofs.iter().enumerate() {
                    for (lc, cd) in dofs.iter().enumerate() {
                        if let (Some(r), Some(c)) = (rd, cd) {
                            table[lr][lc] = pos_of(*r, *c);
                        }
                    }
                }
                table
            })
            .collect();

        let _ = nnz;
        Ok(Self {
            mesh,
            gauss,
            map,
            material,
            n_dofs,
            elem_dofs,
            symbolic,
            symbolic_lu,
            elem_pos,
        })
    }

    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }

    /// Undeformed reference state at `F_bar = I`.
    pub fn reference_state(&self) -> FomState {
        let f_bar = voigt_identity();
        let n_gauss = self.gauss.n_points();
        let p = self.material.pk1(&f_bar).expect("identity is admissible");
        let a = self
            .material
            .tangent(&f_bar)
            .expect("identity is admissible");
        FomState {
            f_bar,
            u: DVector::zeros(self.n_dofs),
            gauss_f: vec![f_bar; n_gauss],
            gauss_p: vec![p; n_gauss],
            gauss_a: vec![a; n_gauss],
            converged: true,
            iterations: 0,
            residual_norm: 0.0,
            residual_history: Vec::new(),
        }
    }

    fn assemble(&self, f_bar: &VoigtVec9, u: &DVector<f64>) -> Result<Assembly> {
        let n_gauss = self.gauss.n_points();
        let mut residual = DVector::zeros(self.n_dofs);
        let mut values = vec![0.0f64; self.symbolic.row_idx().len()];
        let mut gauss_f = Vec::with_capacity(n_gauss);
        let mut gauss_p = Vec::with_capacity(n_gauss);
        let mut gauss_a = Vec::with_capacity(n_gauss);

        for gp in &self.gauss.points {
            let e = gp.elem;
            let dofs = &self.elem_dofs[e];
            let pos = &self.elem_pos[e];
            let w = gp.weight;

            // Nodal fluctuations of this element.
            let mut ue = [0.0f64; 24];
            for (loc, d) in dofs.iter().enumerate() {
                if let Some(d) = d {
                    ue[loc] = u[*d];
                }
            }

            // F = F_bar + sum_a u_a (x) gradN_a
            let mut f = *f_bar;
            for a in 0..8 {
                for i in 0..3 {
                    let uai = ue[3 * a + i];
                    if uai != 0.0 {
                        for j in 0..3 {
                            f[voigt_index(i, j)] += uai * gp.grad[a][j];
                        }
                    }
                }
            }

            let (p, amat) = self.material.pk1_and_tangent(&f)?;

            // Residual: r[a,i] += P_iJ gradN_a[J] w
            for a in 0..8 {
                for i in 0..3 {
                    if let Some(d) = dofs[3 * a + i] {
                        let mut s = 0.0;
                        for j in 0..3 {
                            s += p[voigt_index(i, j)] * gp.grad[a][j];
                        }
                        residual[d] += s * w;
                    }
                }
            }

            // Stiffness: K[(a,i),(b,k)] += gradN_a[J] A[(iJ),(kL)] gradN_b[L] w.
            // First contract A with the column directions (b,k).
            let mut ab = [[0.0f64; 24]; 9];
            for b in 0..8 {
                for k in 0..3 {
                    let col = 3 * b + k;
                    for row in 0..9 {
                        let mut s = 0.0;
                        for l in 0..3 {
                            s += amat[(row, voigt_index(k, l))] * gp.grad[b][l];
                        }
                        ab[row][col] = s;
                    }
                }
            }
            for a in 0..8 {
                for i in 0..3 {
                    let lr = 3 * a + i;
                    if dofs[lr].is_none() {
                        continue;
                    }
                    for lc in 0..24 {
                        let idx = pos[lr][lc];
                        if idx == u32::MAX {
                            continue;
                        }
                        let mut s = 0.0;
                        for j in 0..3 {
                            s += gp.grad[a][j] * ab[voigt_index(i, j)][lc];
                        }
                        values[idx as usize] += s * w;
                    }
                }
            }

            gauss_f.push(f);
            gauss_p.push(p);
            gauss_a.push(amat);
        }

        Ok(Assembly {
            residual,
            values,
            gauss_f,
            gauss_p,
            gauss_a,
        })
    }

    fn factorize(&self, values: &[f64]) -> Result<Lu<usize, f64>> {
        let mat = SparseColMatRef::new(self.symbolic.rb(), values);
        Lu::try_new_with_symbolic(self.symbolic_lu.clone(), mat).map_err(|_| Error::SingularTangent)
    }

    /// Newton-Raphson on the periodic-reduced system, warm-started from `prev`.
    pub fn solve_increment(&self, f_bar: &VoigtVec9, prev: &FomState) -> Result<FomState> {
        let tol_abs = 1e-11 * self.material.stiffness_scale() * self.gauss.cell_volume;
        let mut u = prev.u.clone();

        let divergence = |iterations: usize, residual: f64| Error::NewtonDivergence {
            iterations,
            residual,
        };
        let to_divergence = |err: Error, iterations: usize| match err {
            Error::NonPositiveJacobian { det } => Error::NewtonDivergence {
                iterations,
                residual: det,
            },
            other => other,
        };

        let mut asm = self.assemble(f_bar, &u).map_err(|e| to_divergence(e, 0))?;
        let r0 = asm.residual.norm();
        let tol = tol_abs.max(TOL_REL * r0);
        let mut history = vec![r0];
        let mut iterations = 0usize;

        loop {
            if iterations >= MAX_ITER {
                return Err(divergence(
                    iterations,
                    history.last().copied().unwrap_or(r0),
                ));
            }
            let lu = self.factorize(&asm.values)?;
            let rhs = Mat::from_fn(self.n_dofs, 1, |i, _| -asm.residual[i]);
            let du = lu.solve(&rhs);
            for i in 0..self.n_dofs {
                u[i] += du[(i, 0)];
            }
            iterations += 1;
            asm = self
                .assemble(f_bar, &u)
                .map_err(|e| to_divergence(e, iterations))?;
            let rn = asm.residual.norm();
            history.push(rn);
            if rn <= tol {
                break;
            }
        }

        Ok(FomState {
            f_bar: *f_bar,
            u,
            gauss_f: asm.gauss_f,
            gauss_p: asm.gauss_p,
            gauss_a: asm.gauss_a,
            converged: true,
            iterations,
            residual_norm: *history.last().unwrap(),
            residual_history: history,
        })
    }

    /// Volume average of the stress over the full cell (pores included).
    pub fn homogenize_stress(&self, state: &FomState) -> VoigtVec9 {
        let mut p_bar = VoigtVec9::zeros();
        for (gp, p) in self.gauss.points.iter().zip(&state.gauss_p) {
            p_bar += p * gp.weight;
        }
        p_bar / self.gauss.cell_volume
    }

    /// Consistent macroscopic tangent via 9 sensitivity solves of the
    /// converged tangent system.
    pub fn macro_tangent(&self, state: &FomState) -> Result<VoigtMat9> {
        let asm = self.assemble(&state.f_bar, &state.u)?;
        let lu = self.factorize(&asm.values)?;

        // dr/dF_bar, one column per Voigt component.
        let mut l_full = Mat::<f64>::zeros(self.n_dofs, 9);
        for (g, gp) in self.gauss.points.iter().enumerate() {
            let amat = &asm.gauss_a[g];
            let dofs = &self.elem_dofs[gp.elem];
            for a in 0..8 {
                for i in 0..3 {
                    let Some(d) = dofs[3 * a + i] else { continue };
                    for col in 0..9 {
                        let mut s = 0.0;
                        for j in 0..3 {
                            s += gp.grad[a][j] * amat[(voigt_index(i, j), col)];
                        }
                        l_full[(d, col)] -= s * gp.weight;
                    }
                }
            }
        }
        let x = lu.solve(&l_full);

        let v = self.gauss.cell_volume;
        let mut a_bar = VoigtMat9::zeros();
        for (g, gp) in self.gauss.points.iter().enumerate() {
            let amat = &asm.gauss_a[g];
            let dofs = &self.elem_dofs[gp.elem];
            // Per-column fluctuation-gradient increment at this point.
            let mut df = [[0.0f64; 9]; 9]; // [voigt row][column]
            for a in 0..8 {
                for i in 0..3 {
                    let Some(d) = dofs[3 * a + i] else { continue };
                    for j in 0..3 {
                        let row = voigt_index(i, j);
                        for col in 0..9 {
                            df[row][col] += x[(d, col)] * gp.grad[a][j];
                        }
                    }
                }
            }
            for row in 0..9 {
                for col in 0..9 {
                    let mut s = amat[(row, col)];
                    for q in 0..9 {
                        s += amat[(row, q)] * df[q][col];
                    }
                    a_bar[(row, col)] += s * gp.weight / v;
                }
            }
        }
        Ok(a_bar)
    }

    /// Concatenated per-point deformation gradients in fixed Gauss order.
    pub fn gauss_strains(&self, state: &FomState) -> DVector<f64> {
        let mut out = DVector::zeros(9 * state.gauss_f.len());
        for (g, f) in state.gauss_f.iter().enumerate() {
            out.rows_mut(9 * g, 9).copy_from(f);
        }
        out
    }

    /// Per-point stresses in fixed Gauss order.
    pub fn gauss_stresses(&self, state: &FomState) -> DVector<f64> {
        let mut out = DVector::zeros(9 * state.gauss_p.len());
        for (g, p) in state.gauss_p.iter().enumerate() {
            out.rows_mut(9 * g, 9).copy_from(p);
        }
        out
    }

    /// Total stored energy of the current state.
    pub fn total_energy(&self, state: &FomState) -> Result<f64>
    where
        M: EnergyDensity,
    {
        let mut w = 0.0;
        for (gp, f) in self.gauss.points.iter().zip(&state.gauss_f) {
            w += self.material.energy_density(f)? * gp.weight;
        }
        Ok(w)
    }
}

/// Stored-energy access for materials that have one (used by energy-route
/// cross checks).
pub trait EnergyDensity {
    fn energy_density(&self, f: &VoigtVec9) -> Result<f64>;
}

impl EnergyDensity for crate::material::Material {
    fn energy_density(&self, f: &VoigtVec9) -> Result<f64> {
        self.stored_energy(f)
    }
}

/// Dense helper for small reduced systems built on the FOM pattern.
pub fn dense_from_columns(cols: &[DVector<f64>]) -> DMatrix<f64> {
    let rows = cols.first().map_or(0, |c| c.len());
    let mut m = DMatrix::zeros(rows, cols.len());
    for (j, c) in cols.iter().enumerate() {
        m.set_column(j, c);
    }
    m
}
