//! Periodic voxel RVE generation and quadrature data.
//!
//! The cell `[0, L]^3` is split into `n^3` voxels; voxels whose centroid falls
//! inside a pore (minimum-image distance, so the pore pattern itself is
//! periodic) are removed and act as traction-free voids. Remaining voxels
//! become 8-node hexahedra with full 2x2x2 Gauss quadrature.

use crate::error::{Error, Result};
use std::collections::HashMap;

#[derive(Debug, Clone, Copy)]
pub struct Pore {
    pub center: [f64; 3],
    pub radius: f64,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub n_voxels: usize,
    pub edge_length: f64,
    /// Reference coordinates (mm).
    pub nodes: Vec<[f64; 3]>,
    /// 8-node hexahedra, corner ordering (0,0,0) (1,0,0) (1,1,0) (0,1,0)
    /// then the same square shifted by +z.
    pub elements: Vec<[usize; 8]>,
    pub pores: Vec<Pore>,
}

/// Local corner offsets matching the element node ordering.
const CORNER: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

/// Reference corner signs of the trilinear hexahedron.
const XI: [[f64; 3]; 8] = [
    [-1.0, -1.0, -1.0],
    [1.0, -1.0, -1.0],
    [1.0, 1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, -1.0, 1.0],
    [1.0, -1.0, 1.0],
    [1.0, 1.0, 1.0],
    [-1.0, 1.0, 1.0],
];

fn shape_values(xi: &[f64; 3]) -> [f64; 8] {
    std::array::from_fn(|a| {
        0.125 * (1.0 + xi[0] * XI[a][0]) * (1.0 + xi[1] * XI[a][1]) * (1.0 + xi[2] * XI[a][2])
    })
}

fn shape_gradients(xi: &[f64; 3]) -> [[f64; 3]; 8] {
    std::array::from_fn(|a| {
        [
            0.125 * XI[a][0] * (1.0 + xi[1] * XI[a][1]) * (1.0 + xi[2] * XI[a][2]),
            0.125 * (1.0 + xi[0] * XI[a][0]) * XI[a][1] * (1.0 + xi[2] * XI[a][2]),
            0.125 * (1.0 + xi[0] * XI[a][0]) * (1.0 + xi[1] * XI[a][1]) * XI[a][2],
        ]
    })
}

/// Minimum-image distance squared on the periodic cell.
fn min_image_dist2(a: &[f64; 3], b: &[f64; 3], period: f64) -> f64 {
    let mut d2 = 0.0;
    for k in 0..3 {
        let mut d = (a[k] - b[k]).rem_euclid(period);
        if d > 0.5 * period {
            d = period - d;
        }
        d2 += d * d;
    }
    d2
}

/// Build the periodic voxel RVE.
pub fn build_rve(n_voxels: usize, pores: &[Pore], edge_length: f64) -> Result<Mesh> {
    if n_voxels < 2 {
        return Err(Error::Config(format!(
            "need at least 2 voxels per edge, got {n_voxels}"
        )));
    }
    if !(edge_length > 0.0) {
        return Err(Error::Config(format!(
            "edge length must be positive, got {edge_length}"
        )));
    }
    let n = n_voxels;
    let h = edge_length / n as f64;

    let mut keep = vec![true; n * n * n];
    let vox = |i: usize, j: usize, k: usize| (k * n + j) * n + i;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let c = [
                    (i as f64 + 0.5) * h,
                    (j as f64 + 0.5) * h,
                    (k as f64 + 0.5) * h,
                ];
                let inside = pores
                    .iter()
                    .any(|p| min_image_dist2(&c, &p.center, edge_length) < p.radius * p.radius);
                if inside {
                    keep[vox(i, j, k)] = false;
                }
            }
        }
    }
    let n_kept = keep.iter().filter(|&&k| k).count();
    if n_kept == 0 {
        return Err(Error::EmptyMatrix);
    }

    // Face-connectivity of the matrix phase under periodic wrap.
    let mut seen = vec![false; n * n * n];
    let start = keep.iter().position(|&k| k).unwrap();
    let mut stack = vec![start];
    seen[start] = true;
    let mut reached = 0usize;
    while let Some(v) = stack.pop() {
        reached += 1;
        let (i, j, k) = (v % n, (v / n) % n, v / (n * n));
        let neighbors = [
            vox((i + 1) % n, j, k),
            vox((i + n - 1) % n, j, k),
            vox(i, (j + 1) % n, k),
            vox(i, (j + n - 1) % n, k),
            vox(i, j, (k + 1) % n),
            vox(i, j, (k + n - 1) % n),
        ];
        for &w in &neighbors {
            if keep[w] && !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    if reached != n_kept {
        return Err(Error::DisconnectedMatrix);
    }

    // Emit nodes touched by kept voxels, grid order.
    let np = n + 1;
    let gid = |i: usize, j: usize, k: usize| (k * np + j) * np + i;
    let mut node_id = vec![usize::MAX; np * np * np];
    let mut nodes = Vec::new();
    let mut elements = Vec::new();
    let push_node = |node_id: &mut Vec<usize>,
                     nodes: &mut Vec<[f64; 3]>,
                     i: usize,
                     j: usize,
                     k: usize|
     -> usize {
        let g = gid(i, j, k);
        if node_id[g] == usize::MAX {
            node_id[g] = nodes.len();
            nodes.push([i as f64 * h, j as f64 * h, k as f64 * h]);
        }
        node_id[g]
    };
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                if !keep[vox(i, j, k)] {
                    continue;
                }
                let mut conn = [0usize; 8];
                for (a, c) in CORNER.iter().enumerate() {
                    conn[a] = push_node(&mut node_id, &mut nodes, i + c[0], j + c[1], k + c[2]);
                }
                elements.push(conn);
            }
        }
    }

    // Periodic closure: when a boundary node exists, all its translates by L
    // must exist too, so opposite faces pair node-for-node even where pores
    // cut a face on one side only.
    let translates = |idx: usize| -> Vec<usize> {
        if idx == 0 || idx == n {
            vec![0, n]
        } else {
            vec![idx]
        }
    };
    for k in 0..=n {
        for j in 0..=n {
            for i in 0..=n {
                if node_id[gid(i, j, k)] == usize::MAX {
                    continue;
                }
                for &ti in &translates(i) {
                    for &tj in &translates(j) {
                        for &tk in &translates(k) {
                            push_node(&mut node_id, &mut nodes, ti, tj, tk);
                        }
                    }
                }
            }
        }
    }

    Ok(Mesh {
        n_voxels,
        edge_length,
        nodes,
        elements,
        pores: pores.to_vec(),
    })
}

impl Mesh {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    /// Full cell volume including pores.
    pub fn cell_volume(&self) -> f64 {
        self.edge_length.powi(3)
    }

    /// Content hash for provenance metadata in snapshot stores.
    pub fn content_hash(&self) -> u32 {
        let mut hasher = crc32fast::Hasher::new();
        hasher.update(&(self.n_voxels as u64).to_le_bytes());
        hasher.update(&self.edge_length.to_le_bytes());
        hasher.update(&(self.nodes.len() as u64).to_le_bytes());
        for x in &self.nodes {
            for c in x {
                hasher.update(&c.to_le_bytes());
            }
        }
        hasher.update(&(self.elements.len() as u64).to_le_bytes());
        for e in &self.elements {
            for &v in e {
                hasher.update(&(v as u64).to_le_bytes());
            }
        }
        hasher.finalize()
    }

    /// Plain-text export: node table then element table.
    pub fn export_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "# periodic voxel RVE, n={} L={} nodes={} elements={}\n",
            self.n_voxels,
            self.edge_length,
            self.n_nodes(),
            self.n_elements()
        ));
        out.push_str(&format!("nodes {}\n", self.n_nodes()));
        for (i, x) in self.nodes.iter().enumerate() {
            out.push_str(&format!(
                "{} {:.17e} {:.17e} {:.17e}\n",
                i, x[0], x[1], x[2]
            ));
        }
        out.push_str(&format!("elements {}\n", self.n_elements()));
        for (i, e) in self.elements.iter().enumerate() {
            out.push_str(&format!(
                "{} {} {} {} {} {} {} {} {}\n",
                i, e[0], e[1], e[2], e[3], e[4], e[5], e[6], e[7]
            ));
        }
        out
    }
}

/// One quadrature point of the assembled mesh.
#[derive(Debug, Clone)]
pub struct GaussPoint {
    pub elem: usize,
    /// Reference coordinate of the point (mm).
    pub coord: [f64; 3],
    /// Volume weight V^g (mm^3).
    pub weight: f64,
    /// Shape-function gradients dN_a/dX at the point, one row per node.
    pub grad: [[f64; 3]; 8],
}

#[derive(Debug, Clone)]
pub struct GaussTable {
    pub points: Vec<GaussPoint>,
    /// Meshed (matrix) volume, the sum of all weights.
    pub matrix_volume: f64,
    /// Full cell volume including pores; homogenisation divides by this.
    pub cell_volume: f64,
}

impl GaussTable {
    pub fn n_points(&self) -> usize {
        self.points.len()
    }
}

/// Full 2x2x2 Gauss quadrature for every hexahedron.
pub fn gauss_table(mesh: &Mesh) -> Result<GaussTable> {
    let g = 1.0 / 3.0f64.sqrt();
    let mut points = Vec::with_capacity(8 * mesh.n_elements());
    let mut matrix_volume = 0.0;
    for (e, conn) in mesh.elements.iter().enumerate() {
        for kz in 0..2 {
            for ky in 0..2 {
                for kx in 0..2 {
                    let xi = [
                        if kx == 0 { -g } else { g },
                        if ky == 0 { -g } else { g },
                        if kz == 0 { -g } else { g },
                    ];
                    let nval = shape_values(&xi);
                    let dxi = shape_gradients(&xi);
                    // Jacobian J_pq = dx_p/dxi_q
                    let mut jac = [[0.0f64; 3]; 3];
                    let mut coord = [0.0f64; 3];
                    for a in 0..8 {
                        let x = &mesh.nodes[conn[a]];
                        for p in 0..3 {
                            coord[p] += nval[a] * x[p];
                            for q in 0..3 {
                                jac[p][q] += x[p] * dxi[a][q];
                            }
                        }
                    }
                    let det = jac[0][0] * (jac[1][1] * jac[2][2] - jac[1][2] * jac[2][1])
                        - jac[0][1] * (jac[1][0] * jac[2][2] - jac[1][2] * jac[2][0])
                        + jac[0][2] * (jac[1][0] * jac[2][1] - jac[1][1] * jac[2][0]);
                    if det <= 0.0 {
                        return Err(Error::NonPositiveJacobian { det });
                    }
                    let inv = invert3(&jac, det);
                    let mut grad = [[0.0f64; 3]; 8];
                    for a in 0..8 {
                        // dN/dX = J^-T dN/dxi
                        for p in 0..3 {
                            grad[a][p] = inv[0][p] * dxi[a][0]
                                + inv[1][p] * dxi[a][1]
                                + inv[2][p] * dxi[a][2];
                        }
                    }
                    matrix_volume += det;
                    points.push(GaussPoint {
                        elem: e,
                        coord,
                        weight: det,
                        grad,
                    });
                }
            }
        }
    }
    Ok(GaussTable {
        points,
        matrix_volume,
        cell_volume: mesh.cell_volume(),
    })
}

fn invert3(m: &[[f64; 3]; 3], det: f64) -> [[f64; 3]; 3] {
    let c = 1.0 / det;
    [
        [
            c * (m[1][1] * m[2][2] - m[1][2] * m[2][1]),
            c * (m[0][2] * m[2][1] - m[0][1] * m[2][2]),
            c * (m[0][1] * m[1][2] - m[0][2] * m[1][1]),
        ],
        [
            c * (m[1][2] * m[2][0] - m[1][0] * m[2][2]),
            c * (m[0][0] * m[2][2] - m[0][2] * m[2][0]),
            c * (m[0][2] * m[1][0] - m[0][0] * m[1][2]),
        ],
        [
            c * (m[1][0] * m[2][1] - m[1][1] * m[2][0]),
            c * (m[0][1] * m[2][0] - m[0][0] * m[2][1]),
            c * (m[0][0] * m[1][1] - m[0][1] * m[1][0]),
        ],
    ]
}

/// Periodic master/slave pairing: every node is mapped to the class of its
/// wrapped lattice position; the class containing the lowest node index is
/// the pinned anchor that removes the rigid-translation nullspace.
#[derive(Debug, Clone)]
pub struct PeriodicMap {
    pub class_of_node: Vec<usize>,
    /// Representative node per class, ascending node index; class 0 is the anchor.
    pub representatives: Vec<usize>,
}

impl PeriodicMap {
    pub fn n_classes(&self) -> usize {
        self.representatives.len()
    }

    /// Independent displacement DOFs after pinning the anchor class.
    pub fn independent_dofs(&self) -> usize {
        3 * (self.n_classes() - 1)
    }

    /// DOF index of (class, component), or None for the anchor.
    #[inline]
    pub fn dof(&self, class: usize, comp: usize) -> Option<usize> {
        if class == 0 {
            None
        } else {
            Some(3 * (class - 1) + comp)
        }
    }
}

/// Pair periodic boundary nodes with tolerance `1e-9 * L`.
pub fn periodic_pairs(mesh: &Mesh) -> Result<PeriodicMap> {
    let n = mesh.n_voxels;
    let h = mesh.edge_length / n as f64;
    let tol = 1e-9 * mesh.edge_length;

    let lattice = |node: usize| -> Result<[usize; 3]> {
        let x = &mesh.nodes[node];
        let mut idx = [0usize; 3];
        for k in 0..3 {
            let r = (x[k] / h).round();
            if (x[k] - r * h).abs() > tol || r < 0.0 || r > n as f64 {
                return Err(Error::UnmatchedBoundaryNode { node });
            }
            idx[k] = r as usize;
        }
        Ok(idx)
    };

    // Group nodes by wrapped lattice position; the lowest node index in each
    // group is its representative.
    let mut rep_at: HashMap<[usize; 3], usize> = HashMap::new();
    let mut wrapped_keys = Vec::with_capacity(mesh.n_nodes());
    for node in 0..mesh.n_nodes() {
        let idx = lattice(node)?;
        let wrapped = [idx[0] % n, idx[1] % n, idx[2] % n];
        let rep = rep_at.entry(wrapped).or_insert(node);
        *rep = (*rep).min(node);
        wrapped_keys.push(wrapped);
    }

    let mut representatives: Vec<usize> = rep_at.values().copied().collect();
    representatives.sort_unstable();
    let class_index: HashMap<usize, usize> = representatives
        .iter()
        .enumerate()
        .map(|(c, &r)| (r, c))
        .collect();
    let class_of_node = wrapped_keys
        .iter()
        .map(|key| class_index[&rep_at[key]])
        .collect();

    Ok(PeriodicMap {
        class_of_node,
        representatives,
    })
}
