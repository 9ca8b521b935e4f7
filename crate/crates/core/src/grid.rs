//! Cartesian primal mesh, vertex-centred dual control volumes, tensor-product
//! Lagrange bases and Gauss-Legendre rules.

use crate::error::{Error, Result};

pub const MAX_DEGREE: usize = 6;

/// Uniform rectangular mesh of `nx × ny` elements on `[0,lx]×[0,ly]`.
///
/// Elements and vertices are numbered row-major: element `(i,j)` is
/// `j*nx + i`, vertex `(i,j)` is `j*(nx+1) + i`.
#[derive(Clone, Debug, PartialEq)]
pub struct PrimalMesh {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub hx: f64,
    pub hy: f64,
}

impl PrimalMesh {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::Config(format!("mesh needs at least 2x2 elements, got {nx}x{ny}")));
        }
        if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
            return Err(Error::Config(format!("domain lengths must be positive, got {lx}x{ly}")));
        }
        Ok(Self { nx, ny, lx, ly, hx: lx / nx as f64, hy: ly / ny as f64 })
    }

    pub fn n_elements(&self) -> usize {
        self.nx * self.ny
    }

    pub fn n_vertices(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn element(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn vertex(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    pub fn vertex_xy(&self, i: usize, j: usize) -> (f64, f64) {
        (i as f64 * self.hx, j as f64 * self.hy)
    }

    /// Lower-left corner of element `(i,j)`.
    pub fn element_origin(&self, i: usize, j: usize) -> (f64, f64) {
        (i as f64 * self.hx, j as f64 * self.hy)
    }

    pub fn element_center(&self, i: usize, j: usize) -> (f64, f64) {
        ((i as f64 + 0.5) * self.hx, (j as f64 + 0.5) * self.hy)
    }

    /// Element containing a point; points on shared edges go to the upper/right element.
    pub fn locate(&self, x: f64, y: f64) -> (usize, usize) {
        let i = ((x / self.hx).floor().max(0.0) as usize).min(self.nx - 1);
        let j = ((y / self.hy).floor().max(0.0) as usize).min(self.ny - 1);
        (i, j)
    }
}

/// Which primal vertices carry a control volume.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CvLayout {
    /// One CV per interior vertex (full Dirichlet boundary).
    Interior,
    /// One CV per vertex except the Dirichlet column `x = lx`; CVs touching the
    /// boundary are clipped to the domain.
    SlabOutletDirichlet,
}

/// Axis-aligned control volume around a primal vertex.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlVolume {
    pub vertex: (usize, usize),
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl ControlVolume {
    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }
}

/// Orientation of a dual face: `X` faces are vertical segments crossed by the
/// x-direction flux, `Y` faces horizontal ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaceDir {
    X,
    Y,
}

/// Half of a dual face lying inside one primal element.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HalfFace {
    pub element: (usize, usize),
    /// Lower and upper reference coordinate of the half along the face, within the element.
    pub t0: f64,
    pub t1: f64,
}

/// Segment of the dual mesh between two vertex-adjacent positions.
///
/// An `X` face with index `(i,j)` sits at `x = (i+½)hx` between vertices
/// `(i,j)` and `(i+1,j)`; the positive normal is `+x`. A `Y` face `(i,j)` sits
/// at `y = (j+½)hy` between `(i,j)` and `(i,j+1)` with normal `+y`.
#[derive(Clone, Debug, PartialEq)]
pub struct DualFace {
    pub dir: FaceDir,
    pub index: (usize, usize),
    /// Position of the face line (x for X faces, y for Y faces).
    pub at: f64,
    /// Extent along the face.
    pub s0: f64,
    pub s1: f64,
    pub halves: Vec<HalfFace>,
    /// CV on the negative and positive side, if any.
    pub minus: Option<usize>,
    pub plus: Option<usize>,
}

impl DualFace {
    pub fn length(&self) -> f64 {
        self.s1 - self.s0
    }
}

/// Control volumes plus the faces bounding them inside the domain.
#[derive(Clone, Debug)]
pub struct DualMesh {
    pub layout: CvLayout,
    pub cvs: Vec<ControlVolume>,
    /// CV index by primal vertex index.
    pub cv_of_vertex: Vec<Option<usize>>,
    pub faces: Vec<DualFace>,
    /// For every CV, its faces with the sign (+1/-1) turning the face flux into an outward flux.
    pub cv_faces: Vec<Vec<(usize, f64)>>,
}

impl DualMesh {
    pub fn new(mesh: &PrimalMesh, layout: CvLayout) -> Self {
        let (nx, ny) = (mesh.nx, mesh.ny);
        let has_cv = |i: usize, j: usize| match layout {
            CvLayout::Interior => i > 0 && i < nx && j > 0 && j < ny,
            CvLayout::SlabOutletDirichlet => i < nx,
        };
        let mut cvs = Vec::new();
        let mut cv_of_vertex = vec![None; mesh.n_vertices()];
        for j in 0..=ny {
            for i in 0..=nx {
                if has_cv(i, j) {
                    let (x, y) = mesh.vertex_xy(i, j);
                    cv_of_vertex[mesh.vertex(i, j)] = Some(cvs.len());
                    cvs.push(ControlVolume {
                        vertex: (i, j),
                        x0: (x - 0.5 * mesh.hx).max(0.0),
                        x1: (x + 0.5 * mesh.hx).min(mesh.lx),
                        y0: (y - 0.5 * mesh.hy).max(0.0),
                        y1: (y + 0.5 * mesh.hy).min(mesh.ly),
                    });
                }
            }
        }
        let cv_at = |i: usize, j: usize| -> Option<usize> {
            if i <= nx && j <= ny {
                cv_of_vertex[mesh.vertex(i, j)]
            } else {
                None
            }
        };

        let mut faces = Vec::new();
        let mut cv_faces = vec![Vec::new(); cvs.len()];
        let mut push = |face: DualFace, faces: &mut Vec<DualFace>| {
            let id = faces.len();
            if let Some(c) = face.minus {
                cv_faces[c].push((id, 1.0));
            }
            if let Some(c) = face.plus {
                cv_faces[c].push((id, -1.0));
            }
            faces.push(face);
        };
        // X faces: between vertex columns i and i+1 on vertex row j.
        for j in 0..=ny {
            for i in 0..nx {
                let minus = cv_at(i, j);
                let plus = cv_at(i + 1, j);
                if minus.is_none() && plus.is_none() {
                    continue;
                }
                let mut halves = Vec::new();
                if j > 0 {
                    halves.push(HalfFace { element: (i, j - 1), t0: 0.5, t1: 1.0 });
                }
                if j < ny {
                    halves.push(HalfFace { element: (i, j), t0: 0.0, t1: 0.5 });
                }
                let y = j as f64 * mesh.hy;
                let face = DualFace {
                    dir: FaceDir::X,
                    index: (i, j),
                    at: (i as f64 + 0.5) * mesh.hx,
                    s0: (y - 0.5 * mesh.hy).max(0.0),
                    s1: (y + 0.5 * mesh.hy).min(mesh.ly),
                    halves,
                    minus,
                    plus,
                };
                push(face, &mut faces);
            }
        }
        // Y faces: between vertex rows j and j+1 on vertex column i.
        for j in 0..ny {
            for i in 0..=nx {
                let minus = cv_at(i, j);
                let plus = cv_at(i, j + 1);
                if minus.is_none() && plus.is_none() {
                    continue;
                }
                let mut halves = Vec::new();
                if i > 0 {
                    halves.push(HalfFace { element: (i - 1, j), t0: 0.5, t1: 1.0 });
                }
                if i < nx {
                    halves.push(HalfFace { element: (i, j), t0: 0.0, t1: 0.5 });
                }
                let x = i as f64 * mesh.hx;
                let face = DualFace {
                    dir: FaceDir::Y,
                    index: (i, j),
                    at: (j as f64 + 0.5) * mesh.hy,
                    s0: (x - 0.5 * mesh.hx).max(0.0),
                    s1: (x + 0.5 * mesh.hx).min(mesh.lx),
                    halves,
                    minus,
                    plus,
                };
                push(face, &mut faces);
            }
        }
        Self { layout, cvs, cv_of_vertex, faces, cv_faces }
    }

    pub fn n_cvs(&self) -> usize {
        self.cvs.len()
    }

    /// CV containing a point, if any (boundary frame points return `None`
    /// for the interior layout).
    pub fn locate(&self, mesh: &PrimalMesh, x: f64, y: f64) -> Option<usize> {
        let i = (x / mesh.hx + 0.5).floor().max(0.0) as usize;
        let j = (y / mesh.hy + 0.5).floor().max(0.0) as usize;
        if i > mesh.nx || j > mesh.ny {
            return None;
        }
        self.cv_of_vertex[mesh.vertex(i, j)]
    }
}

/// Gauss-Legendre points and weights on `[0,1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut pts = vec![0.0; n];
    let mut wts = vec![0.0; n];
    let m = n.div_ceil(2);
    for k in 0..m {
        // Chebyshev-like initial guess, refined by Newton on P_n.
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        pts[k] = 0.5 * (1.0 - x);
        pts[n - 1 - k] = 0.5 * (1.0 + x);
        wts[k] = 0.5 * w;
        wts[n - 1 - k] = 0.5 * w;
    }
    (pts, wts)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// 1D Lagrange polynomials on `r+1` equispaced nodes of `[0,1]`.
#[derive(Clone, Debug)]
pub struct Lagrange1d {
    pub nodes: Vec<f64>,
}

impl Lagrange1d {
    pub fn new(r: usize) -> Self {
        Self { nodes: (0..=r).map(|a| a as f64 / r as f64).collect() }
    }

    pub fn value(&self, a: usize, t: f64) -> f64 {
        let ta = self.nodes[a];
        self.nodes
            .iter()
            .enumerate()
            .filter(|&(b, _)| b != a)
            .map(|(_, &tb)| (t - tb) / (ta - tb))
            .product()
    }

    pub fn derivative(&self, a: usize, t: f64) -> f64 {
        let ta = self.nodes[a];
        let mut sum = 0.0;
        for (m, &tm) in self.nodes.iter().enumerate() {
            if m == a {
                continue;
            }
            let mut term = 1.0 / (ta - tm);
            for (b, &tb) in self.nodes.iter().enumerate() {
                if b != a && b != m {
                    term *= (t - tb) / (ta - tb);
                }
            }
            sum += term;
        }
        sum
    }
}

/// Tensor-product `Q^r` Lagrange basis on the reference square `[0,1]²` with
/// equispaced nodes. Local function `a = ay*(r+1) + ax`.
#[derive(Clone, Debug)]
pub struct QrBasis {
    pub r: usize,
    line: Lagrange1d,
}

impl QrBasis {
    pub fn new(r: usize) -> Result<Self> {
        if !(1..=MAX_DEGREE).contains(&r) {
            return Err(Error::Config(format!("unsupported degree {r}, expected 1..={MAX_DEGREE}")));
        }
        Ok(Self { r, line: Lagrange1d::new(r) })
    }

    pub fn n_local(&self) -> usize {
        (self.r + 1) * (self.r + 1)
    }

    pub fn node(&self, a: usize) -> (f64, f64) {
        let n = self.r + 1;
        (self.line.nodes[a % n], self.line.nodes[a / n])
    }

    pub fn line(&self) -> &Lagrange1d {
        &self.line
    }

    /// Values and reference gradients of all local functions at `(xi, eta)`.
    pub fn eval(&self, xi: f64, eta: f64) -> (Vec<f64>, Vec<[f64; 2]>) {
        let n = self.r + 1;
        let vx: Vec<f64> = (0..n).map(|a| self.line.value(a, xi)).collect();
        let vy: Vec<f64> = (0..n).map(|a| self.line.value(a, eta)).collect();
        let dx: Vec<f64> = (0..n).map(|a| self.line.derivative(a, xi)).collect();
        let dy: Vec<f64> = (0..n).map(|a| self.line.derivative(a, eta)).collect();
        let mut vals = Vec::with_capacity(n * n);
        let mut grads = Vec::with_capacity(n * n);
        for ay in 0..n {
            for ax in 0..n {
                vals.push(vx[ax] * vy[ay]);
                grads.push([dx[ax] * vy[ay], vx[ax] * dy[ay]]);
            }
        }
        (vals, grads)
    }
}

/// Checked wrapper for [`QrBasis::eval`].
pub fn basis_eval(r: usize, xi: f64, eta: f64) -> Result<(Vec<f64>, Vec<[f64; 2]>)> {
    if !(0.0..=1.0).contains(&xi) || !(0.0..=1.0).contains(&eta) {
        return Err(Error::Config(format!("point ({xi},{eta}) outside the reference square")));
    }
    Ok(QrBasis::new(r)?.eval(xi, eta))
}

/// Global nodal numbering of the continuous `Q^r` space on a primal mesh.
///
/// Node `(I,J)` with `I ∈ 0..=r·nx`, `J ∈ 0..=r·ny` has index `J*(r·nx+1) + I`.
#[derive(Clone, Debug)]
pub struct DofMap {
    pub r: usize,
    pub nnx: usize,
    pub nny: usize,
}

impl DofMap {
    pub fn new(mesh: &PrimalMesh, r: usize) -> Self {
        Self { r, nnx: r * mesh.nx + 1, nny: r * mesh.ny + 1 }
    }

    pub fn n_nodes(&self) -> usize {
        self.nnx * self.nny
    }

    pub fn node(&self, gi: usize, gj: usize) -> usize {
        gj * self.nnx + gi
    }

    /// Global node indices of element `(i,j)` in local order.
    pub fn element_nodes(&self, i: usize, j: usize) -> Vec<usize> {
        let n = self.r + 1;
        let mut out = Vec::with_capacity(n * n);
        for ay in 0..n {
            for ax in 0..n {
                out.push(self.node(self.r * i + ax, self.r * j + ay));
            }
        }
        out
    }

    pub fn node_xy(&self, mesh: &PrimalMesh, node: usize) -> (f64, f64) {
        let (gi, gj) = (node % self.nnx, node / self.nnx);
        (gi as f64 * mesh.hx / self.r as f64, gj as f64 * mesh.hy / self.r as f64)
    }

    /// Nodal interpolant of a function.
    pub fn interpolate(&self, mesh: &PrimalMesh, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        (0..self.n_nodes())
            .map(|k| {
                let (x, y) = self.node_xy(mesh, k);
                f(x, y)
            })
            .collect()
    }
}
