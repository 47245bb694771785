//! Uniform mesh hierarchy on the unit interval / unit square and assembly of
//! the P1 stiffness and mass matrices with homogeneous Dirichlet conditions.
//!
//! Coefficients are sampled once per element at the centroid; the basis
//! products are integrated exactly. Boundary nodes carry no degree of freedom.

use std::io::Write;

use crate::banded::SymBandMatrix;
use crate::coeff::{Coefficient, CoefficientExpansion, ParamPoint};
use crate::{Error, Result};

/// One uniform mesh of `D = (0,1)^dim`.
#[derive(Clone, Debug)]
pub struct MeshLevel {
    pub dim: usize,
    /// Intervals per side.
    pub n: usize,
    /// Maximum element diameter.
    pub h: f64,
    nodes: Vec<[f64; 2]>,
    cells: Vec<usize>,
    /// Node index of every degree of freedom.
    pub interior_dof: Vec<usize>,
    dof_of_node: Vec<Option<usize>>,
    bandwidth: usize,
    phi_integrals: Vec<f64>,
}

impl MeshLevel {
    /// Uniform mesh with `n` intervals per side; in 2D each square is cut
    /// along its lower-left to upper-right diagonal.
    pub fn uniform(dim: usize, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid(format!(
                "{n} interval(s) per side leaves no interior degrees of freedom"
            )));
        }
        let hn = 1.0 / n as f64;
        let mut mesh = match dim {
            1 => {
                let nodes = (0..=n).map(|i| [i as f64 * hn, 0.0]).collect();
                let cells = (0..n).flat_map(|i| [i, i + 1]).collect();
                let dof_of_node = (0..=n)
                    .map(|i| (i > 0 && i < n).then(|| i - 1))
                    .collect();
                MeshLevel {
                    dim,
                    n,
                    h: hn,
                    nodes,
                    cells,
                    interior_dof: (1..n).collect(),
                    dof_of_node,
                    bandwidth: 1,
                    phi_integrals: Vec::new(),
                }
            }
            2 => {
                let node = |i: usize, j: usize| j * (n + 1) + i;
                let mut nodes = Vec::with_capacity((n + 1) * (n + 1));
                let mut dof_of_node = Vec::with_capacity((n + 1) * (n + 1));
                let mut interior = Vec::with_capacity((n - 1) * (n - 1));
                for j in 0..=n {
                    for i in 0..=n {
                        nodes.push([i as f64 * hn, j as f64 * hn]);
                        if i > 0 && i < n && j > 0 && j < n {
                            dof_of_node.push(Some(interior.len()));
                            interior.push(node(i, j));
                        } else {
                            dof_of_node.push(None);
                        }
                    }
                }
                let mut cells = Vec::with_capacity(6 * n * n);
                for j in 0..n {
                    for i in 0..n {
                        let (v00, v10) = (node(i, j), node(i + 1, j));
                        let (v01, v11) = (node(i, j + 1), node(i + 1, j + 1));
                        cells.extend_from_slice(&[v00, v10, v11, v00, v11, v01]);
                    }
                }
                MeshLevel {
                    dim,
                    n,
                    h: std::f64::consts::SQRT_2 * hn,
                    nodes,
                    cells,
                    interior_dof: interior,
                    dof_of_node,
                    bandwidth: n,
                    phi_integrals: Vec::new(),
                }
            }
            _ => return Err(Error::invalid(format!("spatial dimension {dim} not in {{1, 2}}"))),
        };
        mesh.phi_integrals = mesh.basis_integrals();
        Ok(mesh)
    }

    /// Number of degrees of freedom `M_h`.
    pub fn num_dofs(&self) -> usize {
        self.interior_dof.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len() / (self.dim + 1)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.nodes.iter().map(move |p| &p[..self.dim])
    }

    pub fn cell(&self, e: usize) -> &[usize] {
        let k = self.dim + 1;
        &self.cells[e * k..(e + 1) * k]
    }

    pub fn dof_of_node(&self, node: usize) -> Option<usize> {
        self.dof_of_node[node]
    }

    /// `int_D phi_i dx` for every degree of freedom.
    pub fn phi_integrals(&self) -> &[f64] {
        &self.phi_integrals
    }

    fn cell_geometry(&self, e: usize) -> CellGeometry {
        let c = self.cell(e);
        match self.dim {
            1 => {
                let (x0, x1) = (self.nodes[c[0]][0], self.nodes[c[1]][0]);
                CellGeometry {
                    measure: x1 - x0,
                    centroid: [0.5 * (x0 + x1), 0.0],
                }
            }
            _ => {
                let [p0, p1, p2] = [self.nodes[c[0]], self.nodes[c[1]], self.nodes[c[2]]];
                let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
                CellGeometry {
                    measure: 0.5 * det.abs(),
                    centroid: [(p0[0] + p1[0] + p2[0]) / 3.0, (p0[1] + p1[1] + p2[1]) / 3.0],
                }
            }
        }
    }

    fn basis_integrals(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.num_dofs()];
        let k = self.dim + 1;
        for e in 0..self.num_cells() {
            let share = self.cell_geometry(e).measure / k as f64;
            for &v in self.cell(e) {
                if let Some(d) = self.dof_of_node[v] {
                    out[d] += share;
                }
            }
        }
        out
    }

    /// Writes `node,x[,y]` rows.
    pub fn write_nodes_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        if self.dim == 1 {
            writeln!(w, "node,x")?;
        } else {
            writeln!(w, "node,x,y")?;
        }
        for (i, p) in self.nodes().enumerate() {
            let coords: Vec<String> = p.iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{i},{}", coords.join(","))?;
        }
        Ok(())
    }

    /// Writes `cell,v0,v1[,v2]` rows.
    pub fn write_cells_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let cols: Vec<String> = (0..=self.dim).map(|i| format!("v{i}")).collect();
        writeln!(w, "cell,{}", cols.join(","))?;
        for e in 0..self.num_cells() {
            let vs: Vec<String> = self.cell(e).iter().map(|v| v.to_string()).collect();
            writeln!(w, "{e},{}", vs.join(","))?;
        }
        Ok(())
    }
}

struct CellGeometry {
    measure: f64,
    centroid: [f64; 2],
}

/// `L + 1` nested uniform meshes with `h_l = h_0 2^{-l}`.
///
/// The coarsest mesh uses the smallest number of intervals per side whose
/// meshwidth does not exceed `h0`; the actual `h_0` may therefore be slightly
/// below the request when `h0` is not attainable exactly.
pub fn build_hierarchy(dim: usize, h0: f64, levels: usize) -> Result<Vec<MeshLevel>> {
    if !(h0 > 0.0 && h0 < 1.0) {
        return Err(Error::invalid(format!("h0 = {h0} not in (0, 1)")));
    }
    let diam = match dim {
        1 => 1.0,
        2 => std::f64::consts::SQRT_2,
        _ => return Err(Error::invalid(format!("spatial dimension {dim} not in {{1, 2}}"))),
    };
    let n0 = (diam / h0 * (1.0 - 1e-12)).ceil() as usize;
    (0..=levels)
        .map(|l| MeshLevel::uniform(dim, n0 << l))
        .collect()
}

/// Stiffness-plus-reaction and mass matrices for one parameter point.
#[derive(Clone, Debug)]
pub struct AssembledPair {
    /// `A_ij = int a^s grad phi_i . grad phi_j + int b^s phi_i phi_j`.
    pub a: SymBandMatrix,
    /// `M_ij = int c phi_i phi_j`.
    pub m: SymBandMatrix,
    /// `int c phi_i`, so that `M(u_h, 1) = load . u`.
    pub load: Vec<f64>,
}

impl AssembledPair {
    /// Wraps matrices that did not come from a mesh. The load vector is `M 1`.
    pub fn from_matrices(a: SymBandMatrix, m: SymBandMatrix) -> Result<Self> {
        if a.dim() != m.dim() {
            return Err(Error::invalid("stiffness and mass dimensions differ"));
        }
        let load = m.apply(&vec![1.0; m.dim()]);
        Ok(AssembledPair { a, m, load })
    }

    pub fn dim(&self) -> usize {
        self.a.dim()
    }
}

/// Assembles the discrete eigenproblem at `y`; the truncation dimension is `y.dim()`.
pub fn assemble(level: &MeshLevel, exp: &CoefficientExpansion, y: &ParamPoint) -> Result<AssembledPair> {
    if level.dim != exp.dim {
        return Err(Error::invalid(format!(
            "mesh dimension {} does not match coefficient dimension {}",
            level.dim, exp.dim
        )));
    }
    if y.dim() > exp.s_max {
        return Err(Error::invalid(format!(
            "parameter dimension {} exceeds s_max = {}",
            y.dim(),
            exp.s_max
        )));
    }
    let ys = y.as_slice();
    let nd = level.num_dofs();
    let mut a = SymBandMatrix::zeros(nd, level.bandwidth);
    let mut m = SymBandMatrix::zeros(nd, level.bandwidth);
    let mut load = vec![0.0; nd];
    let k = level.dim + 1;
    let mut local_k = [[0.0; 3]; 3];
    let mut local_m = [[0.0; 3]; 3];
    for e in 0..level.num_cells() {
        let geo = level.cell_geometry(e);
        let x = &geo.centroid[..level.dim];
        let av = exp.eval_unchecked(Coefficient::A, x, ys);
        if !(av > 0.0) {
            return Err(Error::NonPositiveCoefficient { x: x.to_vec(), value: av });
        }
        let bv = exp.eval_unchecked(Coefficient::B, x, ys);
        let cv = exp.eval_unchecked(Coefficient::C, x, ys);
        let cell = level.cell(e);
        local_matrices(level, cell, geo.measure, &mut local_k, &mut local_m);
        for p in 0..k {
            let Some(dp) = level.dof_of_node[cell[p]] else { continue };
            load[dp] += cv * geo.measure / k as f64;
            for q in 0..=p {
                let Some(dq) = level.dof_of_node[cell[q]] else { continue };
                let kv = av * local_k[p][q] + bv * local_m[p][q];
                let mv = cv * local_m[p][q];
                if p == q {
                    a.add(dp, dp, kv);
                    m.add(dp, dp, mv);
                } else {
                    // off-diagonal pair (p, q) and (q, p) share one stored slot
                    a.add(dp, dq, kv);
                    m.add(dp, dq, mv);
                }
            }
        }
    }
    Ok(AssembledPair { a, m, load })
}

/// Mass matrix over all nodes, boundary included, with band layout in node numbering.
pub fn assemble_full_mass(level: &MeshLevel, exp: &CoefficientExpansion) -> SymBandMatrix {
    let nn = level.nodes.len();
    let bw = if level.dim == 1 { 1 } else { level.n + 2 };
    let mut m = SymBandMatrix::zeros(nn, bw);
    let k = level.dim + 1;
    let mut local_k = [[0.0; 3]; 3];
    let mut local_m = [[0.0; 3]; 3];
    for e in 0..level.num_cells() {
        let geo = level.cell_geometry(e);
        let cv = exp.eval_unchecked(Coefficient::C, &geo.centroid[..level.dim], &[]);
        let cell = level.cell(e);
        local_matrices(level, cell, geo.measure, &mut local_k, &mut local_m);
        for p in 0..k {
            for q in 0..=p {
                m.add(cell[p], cell[q], cv * local_m[p][q]);
            }
        }
    }
    m
}

/// Exact P1 element matrices for unit coefficients.
fn local_matrices(
    level: &MeshLevel,
    cell: &[usize],
    measure: f64,
    stiff: &mut [[f64; 3]; 3],
    mass: &mut [[f64; 3]; 3],
) {
    match level.dim {
        1 => {
            let inv = 1.0 / measure;
            *stiff = [[inv, -inv, 0.0], [-inv, inv, 0.0], [0.0; 3]];
            let d = measure / 3.0;
            let o = measure / 6.0;
            *mass = [[d, o, 0.0], [o, d, 0.0], [0.0; 3]];
        }
        _ => {
            let p: Vec<[f64; 2]> = cell.iter().map(|&v| level.nodes[v]).collect();
            let mut bx = [0.0; 3];
            let mut cy = [0.0; 3];
            for i in 0..3 {
                let (j, k) = ((i + 1) % 3, (i + 2) % 3);
                bx[i] = p[j][1] - p[k][1];
                cy[i] = p[k][0] - p[j][0];
            }
            let f = 1.0 / (4.0 * measure);
            for i in 0..3 {
                for j in 0..3 {
                    stiff[i][j] = f * (bx[i] * bx[j] + cy[i] * cy[j]);
                    mass[i][j] = measure / 12.0 * if i == j { 2.0 } else { 1.0 };
                }
            }
        }
    }
}
