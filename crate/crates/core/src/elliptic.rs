//! Locally conservative `Q^r` finite elements for `−∇·(Λ∇p) = q`.
//!
//! The usual energy minimization is constrained so that the outward Darcy flux
//! `∫∂V −Λ∇p·n` of every dual control volume `V` equals `∫V q`. The resulting
//! KKT system `[A Bᵀ; B 0][p; λ] = [f; g]` is solved directly.

use faer::linalg::solvers::Solve;
use faer::prelude::*;
use faer::Side;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{gauss_legendre, CvLayout, DofMap, DualMesh, FaceDir, PrimalMesh, QrBasis};
use crate::sparse::{self, Csr};

/// Scalar source or coefficient function of position.
pub type ScalarFn<'a> = &'a (dyn Fn(f64, f64) -> f64 + Sync);
/// Exact solution returning value and gradient.
pub type ExactFn<'a> = &'a (dyn Fn(f64, f64) -> (f64, [f64; 2]) + Sync);

/// Piecewise-constant isotropic mobility, one value per primal element.
#[derive(Clone, Debug, PartialEq)]
pub struct MobilityField {
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f64>,
}

impl MobilityField {
    pub fn uniform(mesh: &PrimalMesh, value: f64) -> Self {
        Self { nx: mesh.nx, ny: mesh.ny, values: vec![value; mesh.n_elements()] }
    }

    pub fn from_values(mesh: &PrimalMesh, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.n_elements() {
            return Err(Error::Model(format!(
                "mobility has {} values for {} elements",
                values.len(),
                mesh.n_elements()
            )));
        }
        let field = Self { nx: mesh.nx, ny: mesh.ny, values };
        field.validate()?;
        Ok(field)
    }

    pub fn validate(&self) -> Result<()> {
        for (e, v) in self.values.iter().enumerate() {
            if !(*v > 0.0 && v.is_finite()) {
                return Err(Error::Model(format!(
                    "mobility must be positive and finite, element ({}, {}) has {v}",
                    e % self.nx,
                    e / self.nx
                )));
            }
        }
        Ok(())
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.nx + i]
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { nx: self.nx, ny: self.ny, values: self.values.iter().map(|v| v * c).collect() }
    }
}

/// Everything needed to assemble on one mesh/degree/boundary layout.
#[derive(Clone, Debug)]
pub struct FemSpace {
    pub mesh: PrimalMesh,
    pub basis: QrBasis,
    pub dofs: DofMap,
    pub dual: DualMesh,
    /// Node indices of the free (non-Dirichlet) dofs.
    pub free: Vec<usize>,
    /// Free-dof index of every node.
    pub active: Vec<Option<usize>>,
    kxx: Vec<f64>,
    kyy: Vec<f64>,
    /// ∫ ∂ξφ along ξ = ½ for η in [0,½] and [½,1].
    face_x: [Vec<f64>; 2],
    /// ∫ ∂ηφ along η = ½ for ξ in [0,½] and [½,1].
    face_y: [Vec<f64>; 2],
}

impl FemSpace {
    /// `Interior` layout eliminates the whole boundary (homogeneous Dirichlet);
    /// `SlabOutletDirichlet` eliminates only the column `x = lx`.
    pub fn new(mesh: PrimalMesh, r: usize, layout: CvLayout) -> Result<Self> {
        let basis = QrBasis::new(r)?;
        let dofs = DofMap::new(&mesh, r);
        let dual = DualMesh::new(&mesh, layout);
        let mut free = Vec::new();
        let mut active = vec![None; dofs.n_nodes()];
        for gj in 0..dofs.nny {
            for gi in 0..dofs.nnx {
                let dirichlet = match layout {
                    CvLayout::Interior => gi == 0 || gj == 0 || gi + 1 == dofs.nnx || gj + 1 == dofs.nny,
                    CvLayout::SlabOutletDirichlet => gi + 1 == dofs.nnx,
                };
                if !dirichlet {
                    let node = dofs.node(gi, gj);
                    active[node] = Some(free.len());
                    free.push(node);
                }
            }
        }
        let n = basis.n_local();
        let (qp, qw) = gauss_legendre(r + 1);
        let mut kxx = vec![0.0; n * n];
        let mut kyy = vec![0.0; n * n];
        for (x, wx) in qp.iter().zip(&qw) {
            for (y, wy) in qp.iter().zip(&qw) {
                let (_, g) = basis.eval(*x, *y);
                for a in 0..n {
                    for b in 0..n {
                        kxx[a * n + b] += wx * wy * g[a][0] * g[b][0];
                        kyy[a * n + b] += wx * wy * g[a][1] * g[b][1];
                    }
                }
            }
        }
        let half = |dir: FaceDir, t0: f64| -> Vec<f64> {
            let mut out = vec![0.0; n];
            for (t, w) in qp.iter().zip(&qw) {
                let s = t0 + 0.5 * t;
                let (xi, eta) = match dir {
                    FaceDir::X => (0.5, s),
                    FaceDir::Y => (s, 0.5),
                };
                let (_, g) = basis.eval(xi, eta);
                let k = if dir == FaceDir::X { 0 } else { 1 };
                for a in 0..n {
                    out[a] += 0.5 * w * g[a][k];
                }
            }
            out
        };
        let face_x = [half(FaceDir::X, 0.0), half(FaceDir::X, 0.5)];
        let face_y = [half(FaceDir::Y, 0.0), half(FaceDir::Y, 0.5)];
        Ok(Self { mesh, basis, dofs, dual, free, active, kxx, kyy, face_x, face_y })
    }

    pub fn degree(&self) -> usize {
        self.basis.r
    }

    pub fn n_free(&self) -> usize {
        self.free.len()
    }

    /// Free-dof vector to full nodal vector (Dirichlet nodes are zero).
    pub fn expand(&self, p: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.dofs.n_nodes()];
        for (k, &node) in self.free.iter().enumerate() {
            full[node] = p[k];
        }
        full
    }

    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&n| full[n]).collect()
    }

    /// Element stiffness matrix for unit mobility.
    pub fn local_stiffness(&self) -> Vec<f64> {
        let (ax, ay) = (self.mesh.hy / self.mesh.hx, self.mesh.hx / self.mesh.hy);
        self.kxx.iter().zip(&self.kyy).map(|(x, y)| ax * x + ay * y).collect()
    }

    fn check(&self, lam: &MobilityField) -> Result<()> {
        if lam.nx != self.mesh.nx || lam.ny != self.mesh.ny {
            return Err(Error::Model(format!(
                "mobility is {}x{}, mesh is {}x{}",
                lam.nx, lam.ny, self.mesh.nx, self.mesh.ny
            )));
        }
        lam.validate()
    }

    fn restrict_cols(&self, m: &Csr, restrict_rows: bool) -> Csr {
        let mut t = Vec::with_capacity(m.nnz());
        for (i, j, v) in m.triplets() {
            let row = if restrict_rows { self.active[i] } else { Some(i) };
            if let (Some(r), Some(c)) = (row, self.active[j]) {
                t.push((r, c, v));
            }
        }
        let nrows = if restrict_rows { self.n_free() } else { m.nrows };
        Csr::from_triplets(nrows, self.n_free(), &t)
    }
}

/// Stiffness matrix on the full nodal space (no boundary elimination).
pub fn assemble_stiffness_full(space: &FemSpace, lam: &MobilityField) -> Result<Csr> {
    space.check(lam)?;
    let kref = space.local_stiffness();
    let n = space.basis.n_local();
    let mesh = &space.mesh;
    let mut t = Vec::with_capacity(mesh.n_elements() * n * n);
    for j in 0..mesh.ny {
        for i in 0..mesh.nx {
            let nodes = space.dofs.element_nodes(i, j);
            let l = lam.at(i, j);
            for a in 0..n {
                for b in 0..n {
                    t.push((nodes[a], nodes[b], l * kref[a * n + b]));
                }
            }
        }
    }
    Ok(Csr::from_triplets(space.dofs.n_nodes(), space.dofs.n_nodes(), &t))
}

/// `A_ij = ∫ Λ ∇φ_i·∇φ_j` on the free dofs.
pub fn assemble_stiffness(space: &FemSpace, lam: &MobilityField) -> Result<Csr> {
    Ok(space.restrict_cols(&assemble_stiffness_full(space, lam)?, true))
}

/// Flux functional of every dual face on the full nodal space: row `e` applied
/// to nodal values gives `∫_e −Λ∇p·n` with `n` the face's positive normal.
pub fn face_flux_operator(space: &FemSpace, lam: &MobilityField) -> Result<Csr> {
    space.check(lam)?;
    let mesh = &space.mesh;
    let n = space.basis.n_local();
    let mut t = Vec::new();
    for (e, face) in space.dual.faces.iter().enumerate() {
        for h in &face.halves {
            let (i, j) = h.element;
            let which = if h.t0 < 0.25 { 0 } else { 1 };
            let (table, scale) = match face.dir {
                FaceDir::X => (&space.face_x[which], mesh.hy / mesh.hx),
                FaceDir::Y => (&space.face_y[which], mesh.hx / mesh.hy),
            };
            let l = lam.at(i, j);
            let nodes = space.dofs.element_nodes(i, j);
            for a in 0..n {
                t.push((e, nodes[a], -l * scale * table[a]));
            }
        }
    }
    Ok(Csr::from_triplets(space.dual.faces.len(), space.dofs.n_nodes(), &t))
}

/// Outward Darcy flux of every CV on the full nodal space.
pub fn assemble_constraints_full(space: &FemSpace, lam: &MobilityField) -> Result<Csr> {
    let faces = face_flux_operator(space, lam)?;
    let mut t = Vec::new();
    for (k, list) in space.dual.cv_faces.iter().enumerate() {
        for &(e, sign) in list {
            for (c, v) in faces.row(e) {
                t.push((k, c, sign * v));
            }
        }
    }
    Ok(Csr::from_triplets(space.dual.n_cvs(), space.dofs.n_nodes(), &t))
}

/// `B_kj = ∫∂V_k −Λ∇φ_j·n` on the free dofs.
pub fn assemble_constraints(space: &FemSpace, lam: &MobilityField) -> Result<Csr> {
    Ok(space.restrict_cols(&assemble_constraints_full(space, lam)?, false))
}

/// Points per direction used for loads, energies and error norms.
pub fn rich_order(r: usize) -> usize {
    (2 * r + 2).max(8)
}

/// Integral of `f` over a rectangle with an `n×n` Gauss rule.
pub fn integrate_rect(f: ScalarFn, x0: f64, x1: f64, y0: f64, y1: f64, n: usize) -> f64 {
    let (p, w) = gauss_legendre(n);
    let (dx, dy) = (x1 - x0, y1 - y0);
    let mut s = 0.0;
    for (yj, wj) in p.iter().zip(&w) {
        for (xi, wi) in p.iter().zip(&w) {
            s += wi * wj * f(x0 + dx * xi, y0 + dy * yj);
        }
    }
    s * dx * dy
}

/// `f_i = ∫ q φ_i` on free dofs and `g_k = ∫_{V_k} q`.
pub fn assemble_loads(space: &FemSpace, q: ScalarFn) -> (Vec<f64>, Vec<f64>) {
    let mesh = &space.mesh;
    let nq = rich_order(space.degree());
    let (p, w) = gauss_legendre(nq);
    let mut table = Vec::with_capacity(nq * nq);
    for (y, wy) in p.iter().zip(&w) {
        for (x, wx) in p.iter().zip(&w) {
            table.push((*x, *y, wx * wy, space.basis.eval(*x, *y).0));
        }
    }
    let n = space.basis.n_local();
    let locals: Vec<Vec<f64>> = (0..mesh.n_elements())
        .into_par_iter()
        .map(|e| {
            let (i, j) = (e % mesh.nx, e / mesh.nx);
            let (x0, y0) = mesh.element_origin(i, j);
            let mut loc = vec![0.0; n];
            for (xi, eta, wt, vals) in &table {
                let qv = q(x0 + xi * mesh.hx, y0 + eta * mesh.hy) * wt * mesh.hx * mesh.hy;
                for a in 0..n {
                    loc[a] += qv * vals[a];
                }
            }
            loc
        })
        .collect();
    let mut full = vec![0.0; space.dofs.n_nodes()];
    for (e, loc) in locals.iter().enumerate() {
        let nodes = space.dofs.element_nodes(e % mesh.nx, e / mesh.nx);
        for a in 0..n {
            full[nodes[a]] += loc[a];
        }
    }
    let f = space.restrict(&full);
    let g = space
        .dual
        .cvs
        .par_iter()
        .map(|cv| {
            // split at the vertex lines so each piece lies in one element
            let (vx, vy) = mesh.vertex_xy(cv.vertex.0, cv.vertex.1);
            let xs = [cv.x0, vx.clamp(cv.x0, cv.x1), cv.x1];
            let ys = [cv.y0, vy.clamp(cv.y0, cv.y1), cv.y1];
            let mut s = 0.0;
            for a in 0..2 {
                for b in 0..2 {
                    if xs[a + 1] > xs[a] && ys[b + 1] > ys[b] {
                        s += integrate_rect(q, xs[a], xs[a + 1], ys[b], ys[b + 1], nq);
                    }
                }
            }
            s
        })
        .collect();
    (f, g)
}

/// KKT blocks on the free dofs.
#[derive(Clone, Debug)]
pub struct SaddleSystem {
    pub a: Csr,
    pub b: Csr,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
}

impl SaddleSystem {
    pub fn assemble(space: &FemSpace, lam: &MobilityField, q: ScalarFn) -> Result<Self> {
        let a = assemble_stiffness(space, lam)?;
        let b = assemble_constraints(space, lam)?;
        let (f, g) = assemble_loads(space, q);
        Ok(Self { a, b, f, g })
    }
}

/// Adds the slab inflow `v·n = −rate` on `x = 0` to the load (as a Neumann
/// term) and to the clipped CVs touching the inlet. The outlet `x = lx` is
/// already eliminated by the `SlabOutletDirichlet` layout; top and bottom are
/// natural no-flow boundaries.
pub fn apply_slab_bcs(space: &FemSpace, sys: &mut SaddleSystem, rate: f64) -> Result<()> {
    if space.dual.layout != CvLayout::SlabOutletDirichlet {
        return Err(Error::Config("slab boundary conditions need the slab CV layout".into()));
    }
    let mesh = &space.mesh;
    let r = space.degree();
    let (p, w) = gauss_legendre(r + 1);
    let line = space.basis.line();
    for j in 0..mesh.ny {
        for ay in 0..=r {
            let s: f64 = p.iter().zip(&w).map(|(t, wt)| wt * line.value(ay, *t)).sum();
            let node = space.dofs.node(0, r * j + ay);
            if let Some(k) = space.active[node] {
                sys.f[k] += rate * mesh.hy * s;
            }
        }
    }
    for (k, cv) in space.dual.cvs.iter().enumerate() {
        if cv.vertex.0 == 0 {
            sys.g[k] += rate * (cv.y1 - cv.y0);
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct PressureSolution {
    /// Free-dof coefficients.
    pub p: Vec<f64>,
    /// One multiplier per control volume.
    pub lambda: Vec<f64>,
    /// `‖A p + Bᵀλ − f‖∞`.
    pub residual_primal: f64,
    /// `‖B p − g‖∞`.
    pub residual_constraint: f64,
}

/// Relative tolerance on both KKT block residuals.
pub const TOL_LIN: f64 = 1e-12;

fn kkt_residual(sys: &SaddleSystem, p: &[f64], l: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let ap = sys.a.matvec(p);
    let btl = sys.b.matvec_t(l);
    let r1 = (0..p.len()).map(|i| sys.f[i] - ap[i] - btl[i]).collect();
    let bp = sys.b.matvec(p);
    let r2 = (0..l.len()).map(|k| sys.g[k] - bp[k]).collect();
    (r1, r2)
}

/// Scale used to judge the residuals: the largest term entering each block.
fn residual_scale(sys: &SaddleSystem, p: &[f64], l: &[f64]) -> (f64, f64) {
    let s1 = sparse::norm_inf(&sys.f)
        .max(sys.a.max_abs() * sparse::norm_inf(p))
        .max(sys.b.max_abs() * sparse::norm_inf(l));
    let s2 = sparse::norm_inf(&sys.g).max(sys.b.max_abs() * sparse::norm_inf(p));
    (s1.max(f64::MIN_POSITIVE), s2.max(f64::MIN_POSITIVE))
}

/// Solves the KKT system by sparse LU with iterative refinement.
pub fn solve_saddle(sys: &SaddleSystem) -> Result<PressureSolution> {
    let (n, m) = (sys.a.nrows, sys.b.nrows);
    if sys.b.ncols != n || sys.f.len() != n || sys.g.len() != m {
        return Err(Error::Solver("inconsistent KKT block dimensions".into()));
    }
    if m > n {
        return Err(rank_error(sys).unwrap_or_else(|| {
            Error::Solver(format!("{m} constraints for {n} unknowns"))
        }));
    }
    let mut t: Vec<(usize, usize, f64)> = sys.a.triplets().collect();
    for (k, j, v) in sys.b.triplets() {
        t.push((n + k, j, v));
        t.push((j, n + k, v));
    }
    let kkt = Csr::from_triplets(n + m, n + m, &t).to_faer();
    let lu = kkt.sp_lu().map_err(|e| rank_error(sys).unwrap_or(Error::Solver(format!("{e:?}"))))?;
    let mut x = Col::<f64>::from_fn(n + m, |i| if i < n { sys.f[i] } else { sys.g[i - n] });
    lu.solve_in_place(x.as_mat_mut());
    let mut p: Vec<f64> = (0..n).map(|i| x[i]).collect();
    let mut l: Vec<f64> = (0..m).map(|k| x[n + k]).collect();
    let mut best = f64::INFINITY;
    for _ in 0..4 {
        let (r1, r2) = kkt_residual(sys, &p, &l);
        let (s1, s2) = residual_scale(sys, &p, &l);
        let rel = (sparse::norm_inf(&r1) / s1).max(sparse::norm_inf(&r2) / s2);
        if !rel.is_finite() || rel >= best || rel <= 0.25 * f64::EPSILON {
            break;
        }
        best = rel;
        let mut dx = Col::<f64>::from_fn(n + m, |i| if i < n { r1[i] } else { r2[i - n] });
        lu.solve_in_place(dx.as_mat_mut());
        let (pn, ln): (Vec<f64>, Vec<f64>) =
            ((0..n).map(|i| p[i] + dx[i]).collect(), (0..m).map(|k| l[k] + dx[n + k]).collect());
        let (q1, q2) = kkt_residual(sys, &pn, &ln);
        let (u1, u2) = residual_scale(sys, &pn, &ln);
        let rel_new = (sparse::norm_inf(&q1) / u1).max(sparse::norm_inf(&q2) / u2);
        if rel_new < rel {
            p = pn;
            l = ln;
        } else {
            break;
        }
    }
    if p.iter().chain(&l).any(|v| !v.is_finite()) {
        return Err(rank_error(sys).unwrap_or_else(|| Error::Solver("non-finite KKT solution".into())));
    }
    let (r1, r2) = kkt_residual(sys, &p, &l);
    let (s1, s2) = residual_scale(sys, &p, &l);
    let (e1, e2) = (sparse::norm_inf(&r1), sparse::norm_inf(&r2));
    if !(e1 / s1 <= TOL_LIN && e2 / s2 <= TOL_LIN) {
        if let Some(err) = rank_error(sys) {
            return Err(err);
        }
        return Err(Error::Solver(format!(
            "KKT residuals too large: primal {e1:.3e} (scale {s1:.3e}), constraint {e2:.3e} (scale {s2:.3e})"
        )));
    }
    Ok(PressureSolution { p, lambda: l, residual_primal: e1, residual_constraint: e2 })
}

fn rank_error(sys: &SaddleSystem) -> Option<Error> {
    let cvs = sparse::redundant_rows(&sys.b, 1e-10);
    (!cvs.is_empty()).then_some(Error::RankDeficient { cvs })
}

/// Control volumes whose constraint rows are linearly dependent on earlier rows.
pub fn check_constraint_rank(b: &Csr) -> Result<()> {
    match sparse::redundant_rows(b, 1e-10) {
        v if v.is_empty() => Ok(()),
        cvs => Err(Error::RankDeficient { cvs }),
    }
}

/// Plain Galerkin solution of `A p = f` (sparse Cholesky).
pub fn solve_fem(sys: &SaddleSystem) -> Result<Vec<f64>> {
    let a = sys.a.to_faer();
    let llt = a.sp_cholesky(Side::Lower).map_err(|e| Error::Solver(format!("Cholesky: {e:?}")))?;
    let mut x = Col::<f64>::from_fn(sys.f.len(), |i| sys.f[i]);
    llt.solve_in_place(x.as_mat_mut());
    let p: Vec<f64> = (0..sys.f.len()).map(|i| x[i]).collect();
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::Solver("non-finite FEM solution".into()));
    }
    Ok(p)
}

/// Values and gradients of a nodal field at reference points of one element.
struct PointTable {
    pts: Vec<(f64, f64, f64)>,
    vals: Vec<Vec<f64>>,
    grads: Vec<Vec<[f64; 2]>>,
}

impl PointTable {
    /// `n×n` Gauss points on each quarter of the reference square, so that
    /// integrands that jump on the CV boundaries are integrated piecewise.
    fn quarters(basis: &QrBasis, n: usize) -> Self {
        let (p, w) = gauss_legendre(n);
        let mut pts = Vec::new();
        let mut vals = Vec::new();
        let mut grads = Vec::new();
        for (oy, ox) in [(0.0, 0.0), (0.0, 0.5), (0.5, 0.0), (0.5, 0.5)] {
            for (y, wy) in p.iter().zip(&w) {
                for (x, wx) in p.iter().zip(&w) {
                    let (xi, eta) = (ox + 0.5 * x, oy + 0.5 * y);
                    let (v, g) = basis.eval(xi, eta);
                    pts.push((xi, eta, 0.25 * wx * wy));
                    vals.push(v);
                    grads.push(g);
                }
            }
        }
        Self { pts, vals, grads }
    }
}

/// `E(p) = ½∫Λ|∇p|² − ∫q p` for a full nodal vector.
pub fn energy_indicator(space: &FemSpace, lam: &MobilityField, q: ScalarFn, p_full: &[f64]) -> f64 {
    let mesh = &space.mesh;
    let table = PointTable::quarters(&space.basis, rich_order(space.degree()));
    let parts: Vec<f64> = (0..mesh.n_elements())
        .into_par_iter()
        .map(|e| {
            let (i, j) = (e % mesh.nx, e / mesh.nx);
            let nodes = space.dofs.element_nodes(i, j);
            let (x0, y0) = mesh.element_origin(i, j);
            let l = lam.at(i, j);
            let mut s = 0.0;
            for (k, &(xi, eta, w)) in table.pts.iter().enumerate() {
                let (mut v, mut gx, mut gy) = (0.0, 0.0, 0.0);
                for (a, &nd) in nodes.iter().enumerate() {
                    v += p_full[nd] * table.vals[k][a];
                    gx += p_full[nd] * table.grads[k][a][0];
                    gy += p_full[nd] * table.grads[k][a][1];
                }
                let (gx, gy) = (gx / mesh.hx, gy / mesh.hy);
                let qv = q(x0 + xi * mesh.hx, y0 + eta * mesh.hy);
                s += w * (0.5 * l * (gx * gx + gy * gy) - qv * v);
            }
            s * mesh.hx * mesh.hy
        })
        .collect();
    parts.iter().sum()
}

/// `∫_e −Λ∇p·n` for every dual face (positive normal), full nodal input.
/// Shared faces are evaluated once.
pub fn recover_cv_fluxes(space: &FemSpace, lam: &MobilityField, p_full: &[f64]) -> Result<Vec<f64>> {
    Ok(face_flux_operator(space, lam)?.matvec(p_full))
}

/// Outward flux of every CV from face fluxes.
pub fn cv_outflow(space: &FemSpace, face_fluxes: &[f64]) -> Vec<f64> {
    space
        .dual
        .cv_faces
        .iter()
        .map(|list| list.iter().map(|&(e, s)| s * face_fluxes[e]).sum())
        .collect()
}

/// `J = sqrt(Σ_V (∫∂V −Λ∇p·n − g_V)²)`, where `g_V` is the CV source
/// (plus any boundary inflow for clipped CVs).
pub fn mass_indicator(space: &FemSpace, lam: &MobilityField, p_full: &[f64], g: &[f64]) -> Result<f64> {
    let out = cv_outflow(space, &recover_cv_fluxes(space, lam, p_full)?);
    Ok(out.iter().zip(g).map(|(o, g)| (o - g) * (o - g)).sum::<f64>().sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorNorms {
    pub l2: f64,
    pub h1: f64,
    pub l2_corrected: f64,
}

/// L² and H¹-seminorm errors of `p^h`, and the L² error of `p^h + λ^h` where
/// `λ^h` is constant on each CV (points outside every CV use `p^h`).
pub fn error_norms(space: &FemSpace, p_full: &[f64], lambda: Option<&[f64]>, exact: ExactFn) -> ErrorNorms {
    let mesh = &space.mesh;
    let nq = rich_order(space.degree());
    let table = PointTable::quarters(&space.basis, nq);
    let per_quarter = nq * nq;
    let parts: Vec<[f64; 3]> = (0..mesh.n_elements())
        .into_par_iter()
        .map(|e| {
            let (i, j) = (e % mesh.nx, e / mesh.nx);
            let nodes = space.dofs.element_nodes(i, j);
            let (x0, y0) = mesh.element_origin(i, j);
            let mut acc = [0.0; 3];
            for quarter in 0..4 {
                let (cx, cy) = (
                    x0 + (0.25 + 0.5 * (quarter % 2) as f64) * mesh.hx,
                    y0 + (0.25 + 0.5 * (quarter / 2) as f64) * mesh.hy,
                );
                let shift = match (lambda, space.dual.locate(mesh, cx, cy)) {
                    (Some(l), Some(k)) => l[k],
                    _ => 0.0,
                };
                for k in quarter * per_quarter..(quarter + 1) * per_quarter {
                    let (xi, eta, w) = table.pts[k];
                    let (mut v, mut gx, mut gy) = (0.0, 0.0, 0.0);
                    for (a, &nd) in nodes.iter().enumerate() {
                        v += p_full[nd] * table.vals[k][a];
                        gx += p_full[nd] * table.grads[k][a][0];
                        gy += p_full[nd] * table.grads[k][a][1];
                    }
                    let (ev, eg) = exact(x0 + xi * mesh.hx, y0 + eta * mesh.hy);
                    let (dx, dy) = (gx / mesh.hx - eg[0], gy / mesh.hy - eg[1]);
                    acc[0] += w * (v - ev) * (v - ev);
                    acc[1] += w * (dx * dx + dy * dy);
                    acc[2] += w * (v + shift - ev) * (v + shift - ev);
                }
            }
            acc.map(|a| a * mesh.hx * mesh.hy)
        })
        .collect();
    let mut tot = [0.0; 3];
    for p in &parts {
        for k in 0..3 {
            tot[k] += p[k];
        }
    }
    ErrorNorms { l2: tot[0].sqrt(), h1: tot[1].sqrt(), l2_corrected: tot[2].sqrt() }
}

/// Value and gradient of the finite element function `p_full` at `(x, y)`.
pub fn evaluate(space: &FemSpace, p_full: &[f64], x: f64, y: f64) -> (f64, [f64; 2]) {
    let mesh = &space.mesh;
    let (i, j) = mesh.locate(x, y);
    let (x0, y0) = mesh.element_origin(i, j);
    let (vals, grads) = space.basis.eval((x - x0) / mesh.hx, (y - y0) / mesh.hy);
    let (mut v, mut g) = (0.0, [0.0; 2]);
    for (a, nd) in space.dofs.element_nodes(i, j).into_iter().enumerate() {
        v += p_full[nd] * vals[a];
        g[0] += p_full[nd] * grads[a][0] / mesh.hx;
        g[1] += p_full[nd] * grads[a][1] / mesh.hy;
    }
    (v, g)
}

/// The manufactured problem on the unit square with homogeneous Dirichlet data:
/// `p = sin(πx)sin(πy)(3y − x)` and the matching source for `Λ ≡ 1`.
pub mod manufactured {
    use std::f64::consts::PI;

    pub fn source(x: f64, y: f64) -> f64 {
        let (sx, cx, sy, cy) = ((PI * x).sin(), (PI * x).cos(), (PI * y).sin(), (PI * y).cos());
        2.0 * PI * (cx * sy - 3.0 * sx * cy + PI * sx * sy * (-x + 3.0 * y))
    }

    pub fn exact(x: f64, y: f64) -> (f64, [f64; 2]) {
        let (sx, cx, sy, cy) = ((PI * x).sin(), (PI * x).cos(), (PI * y).sin(), (PI * y).cos());
        let l = -x + 3.0 * y;
        (sx * sy * l, [PI * cx * sy * l - sx * sy, PI * sx * cy * l + 3.0 * sx * sy])
    }

    /// `½∫|∇p|² − ∫qp` of the exact solution.
    pub const EXACT_ENERGY: f64 = -4.52356868383262;
}

/// Indicators of one FEM/HOCFEM comparison on a fixed mesh and degree.
#[derive(Clone, Debug, PartialEq)]
pub struct IndicatorRow {
    pub degree: usize,
    pub h: f64,
    pub e_fem: f64,
    pub e_hocfem: f64,
    pub j_fem: f64,
    pub j_hocfem: f64,
    pub err: Option<ErrorNorms>,
}

/// Solves one problem with both methods and evaluates the indicators.
pub fn compare_methods(
    space: &FemSpace,
    lam: &MobilityField,
    q: ScalarFn,
    exact: Option<ExactFn>,
) -> Result<(IndicatorRow, PressureSolution)> {
    let sys = SaddleSystem::assemble(space, lam, q)?;
    let fem = space.expand(&solve_fem(&sys)?);
    let sol = solve_saddle(&sys)?;
    let hoc = space.expand(&sol.p);
    let row = IndicatorRow {
        degree: space.degree(),
        h: space.mesh.hx,
        e_fem: energy_indicator(space, lam, q, &fem),
        e_hocfem: energy_indicator(space, lam, q, &hoc),
        j_fem: mass_indicator(space, lam, &fem, &sys.g)?,
        j_hocfem: mass_indicator(space, lam, &hoc, &sys.g)?,
        err: exact.map(|ex| error_norms(space, &hoc, Some(&sol.lambda), ex)),
    };
    Ok((row, sol))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_space(n: usize, r: usize) -> FemSpace {
        FemSpace::new(PrimalMesh::new(n, n, 1.0, 1.0).unwrap(), r, CvLayout::Interior).unwrap()
    }

    /// Brute-force ∫∇φ_a·∇φ_b on one element with a fine midpoint rule.
    fn stiffness_oracle(basis: &QrBasis, a: usize, b: usize) -> f64 {
        let n = 400;
        let mut s = 0.0;
        for iy in 0..n {
            for ix in 0..n {
                let (x, y) = ((ix as f64 + 0.5) / n as f64, (iy as f64 + 0.5) / n as f64);
                let (_, g) = basis.eval(x, y);
                s += g[a][0] * g[b][0] + g[a][1] * g[b][1];
            }
        }
        s / (n * n) as f64
    }

    #[test]
    fn q1_stiffness_stencil() {
        let space = unit_space(2, 1);
        let k = space.local_stiffness();
        // local order: (0,0), (1,0), (0,1), (1,1)
        assert!((k[0] - 2.0 / 3.0).abs() < 1e-14);
        assert!((k[3] + 1.0 / 3.0).abs() < 1e-14);
        assert!((k[1] + 1.0 / 6.0).abs() < 1e-14);
        for a in 0..4 {
            for b in 0..4 {
                assert!((k[a * 4 + b] - stiffness_oracle(&space.basis, a, b)).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn higher_degree_stiffness_matches_oracle() {
        let space = unit_space(2, 3);
        let k = space.local_stiffness();
        let n = space.basis.n_local();
        for &(a, b) in &[(0, 0), (0, 5), (5, 10), (3, 12), (15, 15)] {
            assert!((k[a * n + b] - stiffness_oracle(&space.basis, a, b)).abs() < 1e-4);
        }
    }

    #[test]
    fn stiffness_symmetric_and_linear_in_mobility() {
        let space = unit_space(5, 2);
        let vals: Vec<f64> = (0..25).map(|e| 1.0 + (e as f64 * 0.7).sin().abs() * 10.0).collect();
        let lam = MobilityField::from_values(&space.mesh, vals).unwrap();
        let a = assemble_stiffness(&space, &lam).unwrap();
        assert!(a.asymmetry() <= 1e-14 * a.max_abs());
        let a3 = assemble_stiffness(&space, &lam.scaled(3.0)).unwrap();
        for (x, y) in a.values.iter().zip(&a3.values) {
            assert!((3.0 * x - y).abs() <= 1e-14 * y.abs().max(1.0));
        }
    }

    #[test]
    fn non_positive_mobility_rejected() {
        let mesh = PrimalMesh::new(2, 2, 1.0, 1.0).unwrap();
        assert!(MobilityField::from_values(&mesh, vec![1.0, 0.0, 1.0, 1.0]).is_err());
        assert!(MobilityField::from_values(&mesh, vec![1.0, f64::NAN, 1.0, 1.0]).is_err());
    }

    #[test]
    fn constraints_annihilate_constants_and_linears() {
        for r in 1..=4 {
            let space = unit_space(4, r);
            let lam = MobilityField::uniform(&space.mesh, 1.0);
            let b = assemble_constraints_full(&space, &lam).unwrap();
            let ones = vec![1.0; space.dofs.n_nodes()];
            assert!(sparse::norm_inf(&b.matvec(&ones)) < 1e-13);
            let px = space.dofs.interpolate(&space.mesh, |x, _| x);
            assert!(sparse::norm_inf(&b.matvec(&px)) < 1e-13);
        }
    }

    /// Independent line quadrature of ∫∂V −∇p·n for a nodal field.
    fn cv_flux_oracle(space: &FemSpace, p_full: &[f64], k: usize) -> f64 {
        let cv = &space.dual.cvs[k];
        let mesh = &space.mesh;
        let grad = |x: f64, y: f64| -> [f64; 2] {
            let (i, j) = mesh.locate(x, y);
            let (x0, y0) = mesh.element_origin(i, j);
            let (_, g) = space.basis.eval((x - x0) / mesh.hx, (y - y0) / mesh.hy);
            let nodes = space.dofs.element_nodes(i, j);
            let mut out = [0.0; 2];
            for (a, nd) in nodes.iter().enumerate() {
                out[0] += p_full[*nd] * g[a][0] / mesh.hx;
                out[1] += p_full[*nd] * g[a][1] / mesh.hy;
            }
            out
        };
        let n = 2000;
        let mut s = 0.0;
        for t in 0..n {
            let u = (t as f64 + 0.5) / n as f64;
            let (y, x) = (cv.y0 + u * (cv.y1 - cv.y0), cv.x0 + u * (cv.x1 - cv.x0));
            s += -grad(cv.x1, y)[0] * (cv.y1 - cv.y0) / n as f64;
            s += grad(cv.x0, y)[0] * (cv.y1 - cv.y0) / n as f64;
            s += -grad(x, cv.y1)[1] * (cv.x1 - cv.x0) / n as f64;
            s += grad(x, cv.y0)[1] * (cv.x1 - cv.x0) / n as f64;
        }
        s
    }

    #[test]
    fn quadratic_flux_matches_line_quadrature() {
        let space = unit_space(6, 2);
        let lam = MobilityField::uniform(&space.mesh, 1.0);
        let b = assemble_constraints_full(&space, &lam).unwrap();
        let p = space.dofs.interpolate(&space.mesh, |x, _| x * x);
        let flux = b.matvec(&p);
        let area = space.mesh.hx * space.mesh.hy;
        for k in 0..space.dual.n_cvs() {
            assert!((flux[k] + 2.0 * area).abs() < 1e-13);
            let oracle = cv_flux_oracle(&space, &p, k);
            assert!((flux[k] - oracle).abs() < 1e-8, "{} vs {oracle}", flux[k]);
        }
        // a cubic-in-y, quadratic-in-x field in Q3
        let space = unit_space(4, 3);
        let b = assemble_constraints_full(&space, &MobilityField::uniform(&space.mesh, 1.0)).unwrap();
        let p = space.dofs.interpolate(&space.mesh, |x, y| x * x * y - y * y * y + 0.3 * x * y);
        let flux = b.matvec(&p);
        for k in 0..space.dual.n_cvs() {
            assert!((flux[k] - cv_flux_oracle(&space, &p, k)).abs() < 1e-8);
        }
    }

    #[test]
    fn loads_trivial_cases() {
        let space = unit_space(8, 2);
        let (f, g) = assemble_loads(&space, &|_, _| 0.0);
        assert!(f.iter().chain(&g).all(|v| *v == 0.0));
        let (_, g) = assemble_loads(&space, &|_, _| 1.0);
        for v in g {
            assert!((v - space.mesh.hx * space.mesh.hy).abs() < 1e-15);
        }
    }

    #[test]
    fn loads_match_refined_quadrature() {
        for r in 1..=3 {
            let space = unit_space(8, r);
            let q = manufactured::source;
            let (f, g) = assemble_loads(&space, &q);
            let h = space.mesh.hx;
            // refined oracle: 4×4 sub-cells per CV, 20 points each
            for (k, cv) in space.dual.cvs.iter().enumerate() {
                let mut s = 0.0;
                for a in 0..4 {
                    for b in 0..4 {
                        let (x0, y0) = (cv.x0 + a as f64 * h / 4.0, cv.y0 + b as f64 * h / 4.0);
                        s += integrate_rect(&q, x0, x0 + h / 4.0, y0, y0 + h / 4.0, 20);
                    }
                }
                assert!((g[k] - s).abs() <= 1e-10 * s.abs().max(1e-3 * h * h), "r={r} k={k}");
            }
            // f against sub-element refined quadrature of q·φ
            let line = space.basis.line();
            for (idx, &node) in space.free.iter().enumerate().step_by(7) {
                let (gi, gj) = (node % space.dofs.nnx, node / space.dofs.nnx);
                let mut s = 0.0;
                for ei in gi.saturating_sub(1) / r..=(gi / r).min(space.mesh.nx - 1) {
                    for ej in gj.saturating_sub(1) / r..=(gj / r).min(space.mesh.ny - 1) {
                        let (x0, y0) = space.mesh.element_origin(ei, ej);
                        let (ax, ay) = (gi as i64 - (r * ei) as i64, gj as i64 - (r * ej) as i64);
                        if !(0..=r as i64).contains(&ax) || !(0..=r as i64).contains(&ay) {
                            continue;
                        }
                        let phi = |x: f64, y: f64| {
                            line.value(ax as usize, (x - x0) / h) * line.value(ay as usize, (y - y0) / h)
                        };
                        for a in 0..3 {
                            for b in 0..3 {
                                let (sx, sy) = (x0 + a as f64 * h / 3.0, y0 + b as f64 * h / 3.0);
                                s += integrate_rect(&|x, y| q(x, y) * phi(x, y), sx, sx + h / 3.0, sy, sy + h / 3.0, 20);
                            }
                        }
                    }
                }
                assert!((f[idx] - s).abs() <= 1e-10 * s.abs().max(1e-3 * h * h), "r={r} node={node}");
            }
        }
    }

    #[test]
    fn constructed_consistency() {
        let space = unit_space(6, 2);
        let vals: Vec<f64> = (0..36).map(|e| 0.5 + (e % 5) as f64).collect();
        let lam = MobilityField::from_values(&space.mesh, vals).unwrap();
        let a = assemble_stiffness(&space, &lam).unwrap();
        let b = assemble_constraints(&space, &lam).unwrap();
        let pstar: Vec<f64> = (0..space.n_free()).map(|i| (i as f64 * 0.37).cos()).collect();
        let sys = SaddleSystem { f: a.matvec(&pstar), g: b.matvec(&pstar), a, b };
        let sol = solve_saddle(&sys).unwrap();
        for (u, v) in sol.p.iter().zip(&pstar) {
            assert!((u - v).abs() < 1e-10);
        }
        assert!(sparse::norm_inf(&sol.lambda) < 1e-10);
    }

    #[test]
    fn duplicate_constraint_is_reported() {
        let space = unit_space(4, 2);
        let lam = MobilityField::uniform(&space.mesh, 1.0);
        let mut sys = SaddleSystem::assemble(&space, &lam, &|_, _| 1.0).unwrap();
        let mut t: Vec<_> = sys.b.triplets().collect();
        let m = sys.b.nrows;
        t.extend(sys.b.row(4).map(|(j, v)| (m, j, v)));
        sys.b = Csr::from_triplets(m + 1, sys.b.ncols, &t);
        sys.g.push(sys.g[4]);
        match solve_saddle(&sys) {
            Err(Error::RankDeficient { cvs }) => assert_eq!(cvs, vec![m]),
            other => panic!("expected rank error, got {other:?}"),
        }
        assert!(check_constraint_rank(&sys.b).is_err());
    }

    #[test]
    fn conservation_and_linearity() {
        let space = unit_space(8, 2);
        let lam = MobilityField::uniform(&space.mesh, 1.0);
        let q = manufactured::source;
        let sys = SaddleSystem::assemble(&space, &lam, &q).unwrap();
        let sol = solve_saddle(&sys).unwrap();
        let p = space.expand(&sol.p);
        let fluxes = recover_cv_fluxes(&space, &lam, &p).unwrap();
        let out = cv_outflow(&space, &fluxes);
        for (o, g) in out.iter().zip(&sys.g) {
            assert!((o - g).abs() <= 1e-10);
        }
        let q2 = |x: f64, y: f64| 2.5 * manufactured::source(x, y);
        let sol2 = solve_saddle(&SaddleSystem::assemble(&space, &lam, &q2).unwrap()).unwrap();
        for (a, b) in sol.p.iter().zip(&sol2.p) {
            assert!((2.5 * a - b).abs() <= 1e-11 * b.abs().max(1.0));
        }
        for (a, b) in sol.lambda.iter().zip(&sol2.lambda) {
            assert!((2.5 * a - b).abs() <= 1e-11 * b.abs().max(1.0));
        }
    }

    #[test]
    fn unconstrained_path_matches_cg() {
        let space = unit_space(12, 2);
        let lam = MobilityField::uniform(&space.mesh, 1.0);
        let sys = SaddleSystem::assemble(&space, &lam, &manufactured::source).unwrap();
        let chol = solve_fem(&sys).unwrap();
        let (cg, rep) = sparse::conjugate_gradient(&sys.a, &sys.f, 1e-15, 10_000);
        assert!(rep.relative_residual < 1e-13);
        let scale = sparse::norm_inf(&chol);
        for (a, b) in chol.iter().zip(&cg) {
            assert!((a - b).abs() <= 1e-12 * scale);
        }
        // an empty constraint block degenerates to the same solve
        let empty = SaddleSystem {
            b: Csr::from_triplets(0, sys.a.nrows, &[]),
            g: vec![],
            ..sys.clone()
        };
        let sol = solve_saddle(&empty).unwrap();
        for (a, b) in chol.iter().zip(&sol.p) {
            assert!((a - b).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn face_fluxes_of_linear_field() {
        let space = unit_space(4, 1);
        let lam = MobilityField::uniform(&space.mesh, 1.0);
        let p = space.dofs.interpolate(&space.mesh, |x, _| x);
        let fl = recover_cv_fluxes(&space, &lam, &p).unwrap();
        for (face, v) in space.dual.faces.iter().zip(&fl) {
            match face.dir {
                FaceDir::X => assert!((v + face.length()).abs() < 1e-14),
                FaceDir::Y => assert!(v.abs() < 1e-14),
            }
        }
    }

    #[test]
    fn polynomial_in_constraint_set_is_reproduced() {
        // p = x(1−x)y(1−y) ∈ Q2 with q = −Δp; it satisfies the CV constraints exactly
        let space = unit_space(4, 2);
        let lam = MobilityField::uniform(&space.mesh, 1.0);
        let q = |x: f64, y: f64| 2.0 * y * (1.0 - y) + 2.0 * x * (1.0 - x);
        let exact = |x: f64, y: f64| {
            (x * (1.0 - x) * y * (1.0 - y), [(1.0 - 2.0 * x) * y * (1.0 - y), x * (1.0 - x) * (1.0 - 2.0 * y)])
        };
        let sys = SaddleSystem::assemble(&space, &lam, &q).unwrap();
        let sol = solve_saddle(&sys).unwrap();
        let err = error_norms(&space, &space.expand(&sol.p), Some(&sol.lambda), &exact);
        assert!(err.l2 < 1e-11 && err.h1 < 1e-11 && err.l2_corrected < 1e-11, "{err:?}");
        assert!(energy_indicator(&space, &lam, &q, &vec![0.0; space.dofs.n_nodes()]) == 0.0);
    }

    #[test]
    fn manufactured_indicators_small_mesh() {
        let space = unit_space(16, 1);
        let lam = MobilityField::uniform(&space.mesh, 1.0);
        let (row, _) =
            compare_methods(&space, &lam, &manufactured::source, Some(&manufactured::exact)).unwrap();
        assert!(row.j_hocfem < 1e-12);
        assert!(row.j_fem > 1e-4);
        assert!((row.e_fem - manufactured::EXACT_ENERGY).abs() < 0.2);
    }

    #[test]
    fn evaluate_reproduces_interpolated_polynomials() {
        let space = unit_space(3, 2);
        let p = space.dofs.interpolate(&space.mesh, |x, y| x * x - 2.0 * x * y + 0.5 * y);
        for &(x, y) in &[(0.1, 0.2), (0.5, 0.5), (0.99, 0.01), (1.0, 1.0)] {
            let (v, g) = evaluate(&space, &p, x, y);
            assert!((v - (x * x - 2.0 * x * y + 0.5 * y)).abs() < 1e-13);
            assert!((g[0] - (2.0 * x - 2.0 * y)).abs() < 1e-12 && (g[1] - (-2.0 * x + 0.5)).abs() < 1e-12);
        }
    }

    // Reference indicator values on a 32×32 mesh.
    #[test]
    fn indicator_table_q1_on_32() {
        let space = unit_space(32, 1);
        let lam = MobilityField::uniform(&space.mesh, 1.0);
        let (row, _) = compare_methods(&space, &lam, &manufactured::source, None).unwrap();
        assert!((row.j_fem / 3.304137047e-4 - 1.0).abs() < 1e-8, "{}", row.j_fem);
        assert!((row.e_fem - -4.514912976).abs() < 1e-8, "{}", row.e_fem);
        assert!((row.e_hocfem - -4.514911724).abs() < 1e-8, "{}", row.e_hocfem);
        assert!(row.j_hocfem < 1e-13);
    }

    #[test]
    fn slab_bcs_give_uniform_velocity() {
        let mesh = PrimalMesh::new(8, 4, 8.0, 4.0).unwrap();
        let space = FemSpace::new(mesh, 1, CvLayout::SlabOutletDirichlet).unwrap();
        let lam = MobilityField::uniform(&space.mesh, 2.0);
        let mut sys = SaddleSystem::assemble(&space, &lam, &|_, _| 0.0).unwrap();
        apply_slab_bcs(&space, &mut sys, 0.5).unwrap();
        let sol = solve_saddle(&sys).unwrap();
        let p = space.expand(&sol.p);
        let fl = recover_cv_fluxes(&space, &lam, &p).unwrap();
        for (face, v) in space.dual.faces.iter().zip(&fl) {
            match face.dir {
                FaceDir::X => assert!((v / face.length() - 0.5).abs() < 1e-8),
                FaceDir::Y => assert!(v.abs() < 1e-8),
            }
        }
        // q = 0: nothing moves
        let mut sys0 = SaddleSystem::assemble(&space, &lam, &|_, _| 0.0).unwrap();
        apply_slab_bcs(&space, &mut sys0, 0.0).unwrap();
        let sol0 = solve_saddle(&sys0).unwrap();
        assert!(sparse::norm_inf(&sol0.p) == 0.0);
    }
}
