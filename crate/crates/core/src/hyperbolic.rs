//! Lagrangian-Eulerian finite-volume scheme for `u_t + f(u)_x + g(u)_y = 0`
//! on uniform square cells.
//!
//! Each step first lets every cell's edges travel with the local speed
//! `f(u)/u` (the no-flow region, inside which the cell's mass is unchanged),
//! then projects the evolved rectangles back onto the fixed grid by overlap.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Below this magnitude `f(u)/u` is replaced by `f′(0)`.
pub const EPS_RATIO: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FluxKind {
    /// `f = g = u`
    Linear,
    /// `f = g = u²/2`
    Burgers,
    /// `f = g = S²/(S² + M(1−S)²)`; with `printed_cg` the denominator is
    /// `S² + M(1 − Cg(1−S)²)` instead.
    BuckleyLeverett { m: f64, printed_cg: Option<f64> },
    /// `f` Buckley-Leverett, `g = f·(1 − Cg(1−S)²)`.
    BuckleyLeverettGravity { m: f64, cg: f64 },
}

/// Flux pair `(f, g)` with derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FluxModel {
    pub kind: FluxKind,
}

impl FluxModel {
    pub fn linear() -> Self {
        Self { kind: FluxKind::Linear }
    }

    pub fn burgers() -> Self {
        Self { kind: FluxKind::Burgers }
    }

    pub fn buckley_leverett(m: f64) -> Self {
        Self { kind: FluxKind::BuckleyLeverett { m, printed_cg: None } }
    }

    pub fn buckley_leverett_gravity(m: f64, cg: f64) -> Self {
        Self { kind: FluxKind::BuckleyLeverettGravity { m, cg } }
    }

    fn bl(s: f64, m: f64, cg: Option<f64>) -> (f64, f64) {
        let (d, dd) = match cg {
            None => (s * s + m * (1.0 - s) * (1.0 - s), 2.0 * s - 2.0 * m * (1.0 - s)),
            Some(c) => (
                s * s + m * (1.0 - c * (1.0 - s) * (1.0 - s)),
                2.0 * s + 2.0 * m * c * (1.0 - s),
            ),
        };
        (s * s / d, (2.0 * s * d - s * s * dd) / (d * d))
    }

    /// `(f(u), f′(u))`
    pub fn fx(&self, u: f64) -> (f64, f64) {
        match self.kind {
            FluxKind::Linear => (u, 1.0),
            FluxKind::Burgers => (0.5 * u * u, u),
            FluxKind::BuckleyLeverett { m, printed_cg } => Self::bl(u, m, printed_cg),
            FluxKind::BuckleyLeverettGravity { m, .. } => Self::bl(u, m, None),
        }
    }

    /// `(g(u), g′(u))`
    pub fn fy(&self, u: f64) -> (f64, f64) {
        match self.kind {
            FluxKind::BuckleyLeverettGravity { m, cg } => {
                let (f, df) = Self::bl(u, m, None);
                let k = 1.0 - cg * (1.0 - u) * (1.0 - u);
                (f * k, df * k + f * 2.0 * cg * (1.0 - u))
            }
            _ => self.fx(u),
        }
    }

    fn ratio(u: f64, eval: impl Fn(f64) -> (f64, f64)) -> Result<f64> {
        if u.abs() <= EPS_RATIO {
            let (f0, d0) = eval(0.0);
            if f0 != 0.0 {
                return Err(Error::SingularRatio { u, f0 });
            }
            return Ok(d0);
        }
        Ok(eval(u).0 / u)
    }

    /// `f(u)/u`, continuous through `u = 0` via `f′(0)`.
    pub fn ratio_x(&self, u: f64) -> Result<f64> {
        Self::ratio(u, |v| self.fx(v))
    }

    /// `g(u)/u`
    pub fn ratio_y(&self, u: f64) -> Result<f64> {
        Self::ratio(u, |v| self.fy(v))
    }
}

/// Edge speed for a given face state and velocity multiplier.
pub fn edge_ratio(model: &FluxModel, dir: Axis, u_face: f64, multiplier: f64) -> Result<f64> {
    let r = match dir {
        Axis::X => model.ratio_x(u_face)?,
        Axis::Y => model.ratio_y(u_face)?,
    };
    Ok(r * multiplier)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

/// Cell averages on a uniform grid of square cells with lower-left corner
/// `(x0, y0)`, row-major (`j*nx + i`).
#[derive(Clone, Debug, PartialEq)]
pub struct CellField {
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
    pub x0: f64,
    pub y0: f64,
    pub data: Vec<f64>,
}

impl CellField {
    pub fn new(nx: usize, ny: usize, h: f64, x0: f64, y0: f64, value: f64) -> Self {
        Self { nx, ny, h, x0, y0, data: vec![value; nx * ny] }
    }

    pub fn from_fn(nx: usize, ny: usize, h: f64, x0: f64, y0: f64, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut out = Self::new(nx, ny, h, x0, y0, 0.0);
        for j in 0..ny {
            for i in 0..nx {
                let (x, y) = out.center(i, j);
                out.data[j * nx + i] = f(x, y);
            }
        }
        out
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.nx + i]
    }

    pub fn center(&self, i: usize, j: usize) -> (f64, f64) {
        (self.x0 + (i as f64 + 0.5) * self.h, self.y0 + (j as f64 + 0.5) * self.h)
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum::<f64>() * self.h * self.h
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)))
    }
}

/// Boundary value function `(x_center, y_center, t) -> ghost value`.
pub type GhostFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// Ghost-cell policy of one side of the domain.
#[derive(Clone)]
pub enum Ghost {
    Periodic,
    /// Prescribed ghost values (fixed inflow / exact boundary data).
    Dirichlet(GhostFn),
    /// Zero-order extrapolation (outflow).
    Extrapolate,
    /// Mirror of the adjacent cell; the wall edge also gets zero speed.
    Reflective,
}

impl std::fmt::Debug for Ghost {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Ghost::Periodic => "Periodic",
            Ghost::Dirichlet(_) => "Dirichlet",
            Ghost::Extrapolate => "Extrapolate",
            Ghost::Reflective => "Reflective",
        })
    }
}

#[derive(Clone, Debug)]
pub struct Boundary {
    pub west: Ghost,
    pub east: Ghost,
    pub south: Ghost,
    pub north: Ghost,
}

impl Boundary {
    pub fn all(g: Ghost) -> Self {
        Self { west: g.clone(), east: g.clone(), south: g.clone(), north: g }
    }
}

/// Per-edge velocity multipliers: `vx` on the `(nx+1)×ny` vertical edges
/// (index `j*(nx+1) + i`, edge `i` is the west edge of cell `i`), `vy` on the
/// `nx×(ny+1)` horizontal edges (index `j*nx + i`).
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeVelocity {
    pub vx: Vec<f64>,
    pub vy: Vec<f64>,
}

impl EdgeVelocity {
    pub fn uniform(nx: usize, ny: usize, vx: f64, vy: f64) -> Self {
        Self { vx: vec![vx; (nx + 1) * ny], vy: vec![vy; nx * (ny + 1)] }
    }

    pub fn max_abs(&self) -> f64 {
        self.vx.iter().chain(&self.vy).fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Minmod-type slope limiters for the MUSCL face states.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Limiter {
    Minmod,
    Superbee,
    VanLeer,
    McLimiter,
}

impl std::str::FromStr for Limiter {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minmod" => Ok(Self::Minmod),
            "superbee" => Ok(Self::Superbee),
            "vanleer" | "van_leer" => Ok(Self::VanLeer),
            "mc" => Ok(Self::McLimiter),
            other => Err(Error::Config(format!("unknown limiter '{other}'"))),
        }
    }
}

impl Limiter {
    /// Limited undivided slope from the backward and forward differences.
    pub fn slope(&self, a: f64, b: f64) -> f64 {
        if a * b <= 0.0 {
            return 0.0;
        }
        let s = a.signum();
        let (a, b) = (a.abs(), b.abs());
        s * match self {
            Limiter::Minmod => a.min(b),
            Limiter::Superbee => (2.0 * a).min(b).max(a.min(2.0 * b)),
            Limiter::VanLeer => 2.0 * a * b / (a + b),
            Limiter::McLimiter => (2.0 * a).min(2.0 * b).min(0.5 * (a + b)),
        }
    }
}

/// How the speed of each cell's edges is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FaceMethod {
    /// Every cell's edges move with the cell's own ratio `f(U_ij)/U_ij`.
    DonorCell,
    /// Shared edge speed from the arithmetic mean of the two adjacent cells.
    Mean,
    /// Shared edge speed from the MUSCL midpoint state.
    Muscl(Limiter),
    /// Shared edge speed from the quadratic Lagrange interpolant.
    LagrangeP2,
}

impl std::str::FromStr for FaceMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "donor-cell" | "donor_cell" => Ok(Self::DonorCell),
            "mean" => Ok(Self::Mean),
            "muscl" => Ok(Self::Muscl(Limiter::Minmod)),
            "lagrange_p2" | "lagrange-p2" => Ok(Self::LagrangeP2),
            other => match other.strip_prefix("muscl:") {
                Some(l) => Ok(Self::Muscl(l.parse()?)),
                None => Err(Error::Config(format!("unknown face method '{other}'"))),
            },
        }
    }
}

/// How evolved regions are projected back onto the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Projection {
    /// Evolved rectangles overlap up to nine cells (corner transport).
    Tensor,
    /// Transfers only across edges, in strips of width `|a|` (first-order area).
    EdgeStrip,
}

impl std::str::FromStr for Projection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tensor" => Ok(Self::Tensor),
            "edge-strip" | "edge_strip" => Ok(Self::EdgeStrip),
            other => Err(Error::Config(format!("unknown projection '{other}'"))),
        }
    }
}

/// Static description of a transport run.
#[derive(Clone, Debug)]
pub struct Scheme {
    pub model: FluxModel,
    pub face: FaceMethod,
    pub projection: Projection,
    pub boundary: Boundary,
    pub velocity: Option<EdgeVelocity>,
}

impl Scheme {
    pub fn new(model: FluxModel, boundary: Boundary) -> Self {
        Self { model, face: FaceMethod::DonorCell, projection: Projection::Tensor, boundary, velocity: None }
    }
}

/// Field padded with one ghost layer, `(nx+2)×(ny+2)`, row-major.
#[derive(Clone, Debug)]
pub struct Padded {
    pub nx: usize,
    pub ny: usize,
    pub data: Vec<f64>,
}

impl Padded {
    fn w(&self) -> usize {
        self.nx + 2
    }

    /// Value at padded index (`0` and `n+1` are ghosts).
    pub fn get(&self, pi: usize, pj: usize) -> f64 {
        self.data[pj * self.w() + pi]
    }
}

/// Fills one ghost layer around `u` at time `t`.
pub fn fill_ghosts(u: &CellField, bc: &Boundary, t: f64) -> Padded {
    let (nx, ny) = (u.nx, u.ny);
    let w = nx + 2;
    let mut d = vec![0.0; w * (ny + 2)];
    for j in 0..ny {
        d[(j + 1) * w + 1..(j + 1) * w + 1 + nx].copy_from_slice(&u.data[j * nx..(j + 1) * nx]);
    }
    let h = u.h;
    let xc = |pi: usize| u.x0 + (pi as f64 - 0.5) * h;
    let yc = |pj: usize| u.y0 + (pj as f64 - 0.5) * h;
    for pj in 1..=ny {
        d[pj * w] = match &bc.west {
            Ghost::Periodic => d[pj * w + nx],
            Ghost::Dirichlet(f) => f(xc(0), yc(pj), t),
            Ghost::Extrapolate | Ghost::Reflective => d[pj * w + 1],
        };
        d[pj * w + nx + 1] = match &bc.east {
            Ghost::Periodic => d[pj * w + 1],
            Ghost::Dirichlet(f) => f(xc(nx + 1), yc(pj), t),
            Ghost::Extrapolate | Ghost::Reflective => d[pj * w + nx],
        };
    }
    for pi in 0..w {
        d[pi] = match &bc.south {
            Ghost::Periodic => d[ny * w + pi],
            Ghost::Dirichlet(f) => f(xc(pi), yc(0), t),
            Ghost::Extrapolate | Ghost::Reflective => d[w + pi],
        };
        d[(ny + 1) * w + pi] = match &bc.north {
            Ghost::Periodic => d[w + pi],
            Ghost::Dirichlet(f) => f(xc(pi), yc(ny + 1), t),
            Ghost::Extrapolate | Ghost::Reflective => d[ny * w + pi],
        };
    }
    Padded { nx, ny, data: d }
}

/// Displacements `Δt·speed` of the west, east, south and north edges of every
/// padded cell.
#[derive(Clone, Debug)]
pub struct EdgeMotion {
    pub a_w: Vec<f64>,
    pub a_e: Vec<f64>,
    pub a_s: Vec<f64>,
    pub a_n: Vec<f64>,
}

/// Velocity multipliers of the four edges of every padded cell; ghost cells
/// reuse the nearest boundary edge, reflective walls get zero.
fn padded_multipliers(nx: usize, ny: usize, scheme: &Scheme) -> [Vec<f64>; 4] {
    let w = nx + 2;
    let n = w * (ny + 2);
    let (mut mw, mut me, mut ms, mut mn) = (vec![1.0; n], vec![1.0; n], vec![1.0; n], vec![1.0; n]);
    let clampi = |v: i64, hi: usize| v.clamp(0, hi as i64) as usize;
    for pj in 0..ny + 2 {
        for pi in 0..w {
            let (i, j) = (pi as i64 - 1, pj as i64 - 1);
            let k = pj * w + pi;
            let (jc, ic) = (clampi(j, ny - 1), clampi(i, nx - 1));
            let (xw, xe) = (clampi(i, nx), clampi(i + 1, nx));
            let (ys, yn) = (clampi(j, ny), clampi(j + 1, ny));
            if let Some(v) = &scheme.velocity {
                mw[k] = v.vx[jc * (nx + 1) + xw];
                me[k] = v.vx[jc * (nx + 1) + xe];
                ms[k] = v.vy[ys * nx + ic];
                mn[k] = v.vy[yn * nx + ic];
            }
            let wall = |g: &Ghost| matches!(g, Ghost::Reflective);
            if wall(&scheme.boundary.west) && xw == 0 {
                mw[k] = 0.0;
            }
            if wall(&scheme.boundary.west) && xe == 0 {
                me[k] = 0.0;
            }
            if wall(&scheme.boundary.east) && xe == nx {
                me[k] = 0.0;
            }
            if wall(&scheme.boundary.east) && xw == nx {
                mw[k] = 0.0;
            }
            if wall(&scheme.boundary.south) && ys == 0 {
                ms[k] = 0.0;
            }
            if wall(&scheme.boundary.south) && yn == 0 {
                mn[k] = 0.0;
            }
            if wall(&scheme.boundary.north) && yn == ny {
                mn[k] = 0.0;
            }
            if wall(&scheme.boundary.north) && ys == ny {
                ms[k] = 0.0;
            }
        }
    }
    [mw, me, ms, mn]
}

/// Face states of every interior edge of the padded array for the shared-edge
/// methods: `x_faces[pj*(nx+1) + c]` lies between padded columns `c` and
/// `c+1`, `y_faces[r*(nx+2) + pi]` between padded rows `r` and `r+1`.
pub fn face_states(p: &Padded, method: FaceMethod) -> (Vec<f64>, Vec<f64>) {
    let (nx, ny) = (p.nx, p.ny);
    let w = nx + 2;
    let mut xf = vec![0.0; (nx + 1) * (ny + 2)];
    let mut yf = vec![0.0; w * (ny + 1)];
    let g = |pi: usize, pj: usize| p.get(pi, pj);
    // undivided limited slopes; ghost slopes are zero (single ghost layer)
    let (sx, sy) = match method {
        FaceMethod::Muscl(lim) => {
            let mut sx = vec![0.0; w * (ny + 2)];
            let mut sy = vec![0.0; w * (ny + 2)];
            for pj in 1..=ny {
                for pi in 1..=nx {
                    sx[pj * w + pi] = lim.slope(g(pi, pj) - g(pi - 1, pj), g(pi + 1, pj) - g(pi, pj));
                    sy[pj * w + pi] = lim.slope(g(pi, pj) - g(pi, pj - 1), g(pi, pj + 1) - g(pi, pj));
                }
            }
            (sx, sy)
        }
        _ => (Vec::new(), Vec::new()),
    };
    for pj in 0..ny + 2 {
        for c in 0..=nx {
            let (l, r) = (g(c, pj), g(c + 1, pj));
            xf[pj * (nx + 1) + c] = match method {
                FaceMethod::DonorCell | FaceMethod::Mean => 0.5 * (l + r),
                FaceMethod::Muscl(_) => muscl_face(l, r, sx[pj * w + c], sx[pj * w + c + 1]),
                FaceMethod::LagrangeP2 => {
                    if c >= 1 {
                        lagrange_p2_face(g(c - 1, pj), l, r)
                    } else {
                        lagrange_p2_face(g(c + 2, pj), r, l)
                    }
                }
            };
        }
    }
    for r in 0..=ny {
        for pi in 0..w {
            let (b, t) = (g(pi, r), g(pi, r + 1));
            yf[r * w + pi] = match method {
                FaceMethod::DonorCell | FaceMethod::Mean => 0.5 * (b + t),
                FaceMethod::Muscl(_) => muscl_face(b, t, sy[r * w + pi], sy[(r + 1) * w + pi]),
                FaceMethod::LagrangeP2 => {
                    if r >= 1 {
                        lagrange_p2_face(g(pi, r - 1), b, t)
                    } else {
                        lagrange_p2_face(g(pi, r + 2), t, b)
                    }
                }
            };
        }
    }
    (xf, yf)
}

/// Midpoint state `½(U_L+U_R) + ⅛(U′_R − U′_L)` with undivided slopes.
pub fn muscl_face(ul: f64, ur: f64, sl: f64, sr: f64) -> f64 {
    0.5 * (ul + ur) + 0.125 * (sr - sl)
}

/// Value at `x = h/2` of the quadratic through point values at `−h, 0, h`,
/// with shape functions `L₋₁ = ½[(x/h − ½)² − ¼]`, `L₀ = 1 − (x/h)²`,
/// `L₊₁ = ½[(x/h + ½)² − ¼]`.
pub fn lagrange_p2_face(um: f64, u0: f64, up: f64) -> f64 {
    let s: f64 = 0.5;
    let lm = 0.5 * ((s - 0.5).powi(2) - 0.25);
    let l0 = 1.0 - s * s;
    let lp = 0.5 * ((s + 0.5).powi(2) - 0.25);
    lm * um + l0 * u0 + lp * up
}

/// Increasing and decreasing parts of a flux, `g⁺(u) = ∫₀ᵘ max(g′, 0)` and
/// `g⁻(u) = ∫₀ᵘ min(g′, 0)`, evaluated piecewise between the turning points
/// of `g` found on an interval that contains `0` and every state.
struct FluxSplit {
    turns: Vec<f64>,
}

const SPLIT_SAMPLES: usize = 256;

impl FluxSplit {
    fn new(eval: impl Fn(f64) -> (f64, f64), lo: f64, hi: f64) -> Self {
        let (lo, hi) = (lo.min(0.0), hi.max(0.0));
        let mut turns = Vec::new();
        if hi > lo {
            let at = |k: usize| lo + (hi - lo) * k as f64 / SPLIT_SAMPLES as f64;
            for k in 0..SPLIT_SAMPLES {
                let (mut a, mut b) = (at(k), at(k + 1));
                let (da, db) = (eval(a).1, eval(b).1);
                if da * db >= 0.0 {
                    continue;
                }
                for _ in 0..60 {
                    let c = 0.5 * (a + b);
                    if eval(c).1 * da > 0.0 {
                        a = c;
                    } else {
                        b = c;
                    }
                }
                turns.push(0.5 * (a + b));
            }
        }
        Self { turns }
    }

    fn parts(&self, eval: impl Fn(f64) -> f64, u: f64) -> (f64, f64) {
        let (a, b) = if u >= 0.0 { (0.0, u) } else { (u, 0.0) };
        let (mut up, mut down) = (0.0, 0.0);
        let mut x0 = a;
        let mut g0 = eval(a);
        for x in self.turns.iter().copied().filter(|&x| x > a && x < b).chain(std::iter::once(b)) {
            let g1 = eval(x);
            let d = g1 - g0;
            if d > 0.0 {
                up += d;
            } else {
                down += d;
            }
            x0 = x;
            g0 = g1;
        }
        debug_assert_eq!(x0, b);
        if u >= 0.0 {
            (up, down)
        } else {
            (-up, -down)
        }
    }

    /// `(g⁺(u)/u, g⁻(u)/u)`: the rates at which a cell at state `u` pushes
    /// its high and low edges outward, nonnegative and nonpositive.
    fn rates(&self, eval: impl Fn(f64) -> (f64, f64), own: f64, u: f64) -> (f64, f64) {
        if u.abs() <= EPS_RATIO {
            return (own.max(0.0), own.min(0.0));
        }
        let (gp, gm) = self.parts(|v| eval(v).0, u);
        (gp / u, gm / u)
    }
}

/// Outward rates of the low and high edge for edge multipliers `m_lo`,
/// `m_hi` and split rates `(r⁺, r⁻)`.
fn outward(m_lo: f64, m_hi: f64, (rp, rm): (f64, f64)) -> (f64, f64) {
    let lo = if m_lo >= 0.0 { m_lo * rm } else { m_lo * rp };
    let hi = if m_hi >= 0.0 { m_hi * rp } else { m_hi * rm };
    (lo, hi)
}

/// Edge speeds of every padded cell, the displacements per unit time.
///
/// Donor-cell regions translate with the cell's own ratio `f(U)/U` when the
/// whole cell moves one way. Where the flux turns inside `[0, U]` the cell is
/// split into its increasing and decreasing parts, which leave through
/// opposite edges; plain translation there lets regions of neighbours that
/// move toward each other pile up. Edge-strip projection always uses the
/// outward split rates, inward edges stay put.
pub fn edge_rates(p: &Padded, scheme: &Scheme) -> Result<EdgeMotion> {
    Ok(rates_and_splits(p, scheme)?.0)
}

/// Edge rates plus, per padded cell, whether the x and y motion is split.
fn rates_and_splits(p: &Padded, scheme: &Scheme) -> Result<(EdgeMotion, Vec<[bool; 2]>)> {
    let (nx, ny) = (p.nx, p.ny);
    let w = nx + 2;
    let n = w * (ny + 2);
    let [mw, me, ms, mn] = padded_multipliers(nx, ny, scheme);
    let model = &scheme.model;
    let mut own_x = vec![0.0; n];
    let mut own_y = vec![0.0; n];
    for k in 0..n {
        own_x[k] = model.ratio_x(p.data[k])?;
        own_y[k] = model.ratio_y(p.data[k])?;
    }
    let mut m = EdgeMotion { a_w: vec![0.0; n], a_e: vec![0.0; n], a_s: vec![0.0; n], a_n: vec![0.0; n] };
    let mut split = vec![[false; 2]; n];
    match scheme.face {
        FaceMethod::DonorCell => {
            let (lo, hi) = p.data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            let fx = |v: f64| model.fx(v);
            let fy = |v: f64| model.fy(v);
            let split_x = FluxSplit::new(fx, lo, hi);
            let split_y = FluxSplit::new(fy, lo, hi);
            for k in 0..n {
                let u = p.data[k];
                let rx = split_x.rates(fx, own_x[k], u);
                let ry = split_y.rates(fy, own_y[k], u);
                let one_way = |(rp, rm): (f64, f64)| rp == 0.0 || rm == 0.0;
                split[k] = [!one_way(rx), !one_way(ry)];
                match scheme.projection {
                    Projection::EdgeStrip => {
                        (m.a_w[k], m.a_e[k]) = outward(mw[k], me[k], rx);
                        (m.a_s[k], m.a_n[k]) = outward(ms[k], mn[k], ry);
                    }
                    Projection::Tensor => {
                        (m.a_w[k], m.a_e[k]) = if one_way(rx) {
                            (mw[k] * own_x[k], me[k] * own_x[k])
                        } else {
                            outward(mw[k], me[k], rx)
                        };
                        (m.a_s[k], m.a_n[k]) = if one_way(ry) {
                            (ms[k] * own_y[k], mn[k] * own_y[k])
                        } else {
                            outward(ms[k], mn[k], ry)
                        };
                    }
                }
            }
        }
        method => {
            let (xf, yf) = face_states(p, method);
            for pj in 0..ny + 2 {
                for pi in 0..w {
                    let k = pj * w + pi;
                    let rw = if pi >= 1 { model.ratio_x(xf[pj * (nx + 1) + pi - 1])? } else { own_x[k] };
                    let re = if pi <= nx { model.ratio_x(xf[pj * (nx + 1) + pi])? } else { own_x[k] };
                    let rs = if pj >= 1 { model.ratio_y(yf[(pj - 1) * w + pi])? } else { own_y[k] };
                    let rn = if pj <= ny { model.ratio_y(yf[pj * w + pi])? } else { own_y[k] };
                    m.a_w[k] = mw[k] * rw;
                    m.a_e[k] = me[k] * re;
                    m.a_s[k] = ms[k] * rs;
                    m.a_n[k] = mn[k] * rn;
                }
            }
        }
    }
    Ok((m, split))
}

fn is_ghost(p: &Padded, k: usize) -> bool {
    let w = p.nx + 2;
    let (pi, pj) = (k % w, k / w);
    pi == 0 || pj == 0 || pi == p.nx + 1 || pj == p.ny + 1
}

/// Edge displacements over `dt`, and the largest unscaled displacement.
///
/// Split donor-cell regions are stretched by `U/Ū` so that each outward
/// strip carries exactly `Δt` times its part of the flux once the region
/// average `Ū` has been diluted by the expansion. Edge strips dilute by the
/// total outward length, tensor regions per axis.
fn motion_over(p: &Padded, scheme: &Scheme, dt: f64, h: f64) -> Result<(EdgeMotion, f64)> {
    let (mut m, split) = rates_and_splits(p, scheme)?;
    let mut worst: f64 = 0.0;
    for v in m.a_w.iter_mut().chain(m.a_e.iter_mut()).chain(m.a_s.iter_mut()).chain(m.a_n.iter_mut()) {
        *v *= dt;
        worst = worst.max(v.abs());
    }
    if scheme.face != FaceMethod::DonorCell {
        return Ok((m, worst));
    }
    for k in 0..p.data.len() {
        let (sx, sy) = (m.a_e[k] - m.a_w[k], m.a_n[k] - m.a_s[k]);
        let (kx, ky) = match scheme.projection {
            Projection::EdgeStrip if is_ghost(p, k) => continue,
            Projection::EdgeStrip => {
                let keep = 1.0 - (sx + sy) / h;
                (keep, keep)
            }
            Projection::Tensor => (
                if split[k][0] { 1.0 - sx / h } else { 1.0 },
                if split[k][1] { 1.0 - sy / h } else { 1.0 },
            ),
        };
        if kx <= 0.0 || ky <= 0.0 {
            return Err(Error::Cfl { md: sx.max(sy), half_h: 0.5 * h });
        }
        m.a_w[k] /= kx;
        m.a_e[k] /= kx;
        m.a_s[k] /= ky;
        m.a_n[k] /= ky;
    }
    Ok((m, worst))
}

/// Edge displacements over `dt` for every padded cell of a field with cell
/// size `h`.
pub fn edge_motion(p: &Padded, scheme: &Scheme, dt: f64, h: f64) -> Result<EdgeMotion> {
    Ok(motion_over(p, scheme, dt, h)?.0)
}

const RANGE_SAMPLES: usize = 128;

/// Largest characteristic speed `M` over the padded field: `|f′|`, `|g′|` and
/// the edge speeds, each scaled by the local velocity multiplier, plus
/// `|f′|`, `|g′|` sampled between the smallest and largest state. Donor-cell
/// edge strips count the combined outward speed of both edges of an axis.
pub fn max_speed(p: &Padded, scheme: &Scheme) -> Result<f64> {
    let [mw, me, ms, mn] = padded_multipliers(p.nx, p.ny, scheme);
    let mut mx: f64 = 0.0;
    for (k, &u) in p.data.iter().enumerate() {
        let vx = mw[k].abs().max(me[k].abs());
        let vy = ms[k].abs().max(mn[k].abs());
        mx = mx
            .max(scheme.model.fx(u).1.abs() * vx)
            .max(scheme.model.fy(u).1.abs() * vy);
    }
    // f′ over the whole range of present states, so that intermediate states
    // created by the step are covered too
    let (lo, hi) = p.data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let vmax = mw.iter().chain(&me).chain(&ms).chain(&mn).fold(0.0f64, |m, v| m.max(v.abs()));
    if hi > lo {
        for k in 0..=RANGE_SAMPLES {
            let u = lo + (hi - lo) * k as f64 / RANGE_SAMPLES as f64;
            mx = mx.max(scheme.model.fx(u).1.abs() * vmax).max(scheme.model.fy(u).1.abs() * vmax);
        }
    }
    let rates = edge_rates(p, scheme)?;
    let strips = scheme.face == FaceMethod::DonorCell && scheme.projection == Projection::EdgeStrip;
    for k in 0..p.data.len() {
        let (aw, ae, as_, an) = (rates.a_w[k], rates.a_e[k], rates.a_s[k], rates.a_n[k]);
        mx = mx.max(aw.abs()).max(ae.abs()).max(as_.abs()).max(an.abs());
        if strips {
            mx = mx.max(ae - aw).max(an - as_);
        }
    }
    Ok(mx)
}

/// `Δt = min(θ·(h/2)/M, t_remaining)`; `t_remaining` when nothing moves.
pub fn cfl_dt(u: &CellField, scheme: &Scheme, theta: f64, t: f64, t_remaining: f64) -> Result<f64> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::Config(format!("CFL number must lie in (0,1), got {theta}")));
    }
    let m = max_speed(&fill_ghosts(u, &scheme.boundary, t), scheme)?;
    if m == 0.0 {
        return Ok(t_remaining);
    }
    Ok((theta * 0.5 * u.h / m).min(t_remaining))
}

/// Mass moved by one step, per source cell.
struct Transfers {
    /// Evolved-region average `Ū` of every padded cell.
    ubar: Vec<f64>,
    motion: EdgeMotion,
}

fn prepare(p: &Padded, scheme: &Scheme, dt: f64, h: f64) -> Result<Transfers> {
    let (motion, worst) = motion_over(p, scheme, dt, h)?;
    let n = p.data.len();
    if worst > 0.5 * h * (1.0 + 1e-12) {
        return Err(Error::Cfl { md: worst, half_h: 0.5 * h });
    }
    let mut ubar = vec![0.0; n];
    for k in 0..n {
        let (aw, ae, as_, an) = (motion.a_w[k], motion.a_e[k], motion.a_s[k], motion.a_n[k]);
        let area = match scheme.projection {
            Projection::Tensor => (h + ae - aw) * (h + an - as_),
            Projection::EdgeStrip => {
                if is_ghost(p, k) {
                    // ghost states are boundary data, not evolved regions
                    ubar[k] = p.data[k];
                    continue;
                }
                let keep = h * h - h * (aw.max(0.0) + (-ae).max(0.0) + as_.max(0.0) + (-an).max(0.0));
                if keep < -1e-12 * h * h {
                    return Err(Error::Cfl { md: worst, half_h: 0.5 * h });
                }
                h * h + h * (ae - aw + an - as_)
            }
        };
        if area <= 0.0 {
            return Err(Error::Cfl { md: worst, half_h: 0.5 * h });
        }
        ubar[k] = p.data[k] * h * h / area;
    }
    Ok(Transfers { ubar, motion })
}

fn pos(v: f64) -> f64 {
    v.max(0.0)
}

/// Overlap of source `k`'s evolved interval with the cell `d ∈ {-1,0,1}` away
/// (x or y). `lo`/`hi` are the displacements of the low and high edges.
fn overlap(h: f64, lo: f64, hi: f64, d: i64) -> f64 {
    match d {
        -1 => pos(-lo),
        1 => pos(hi),
        _ => h - pos(lo) - pos(-hi),
    }
}

/// Mass sent from padded source `k` to the neighbour offset `(dx, dy)`.
fn transfer(tr: &Transfers, projection: Projection, h: f64, k: usize, dx: i64, dy: i64) -> f64 {
    let m = &tr.motion;
    match projection {
        Projection::Tensor => {
            overlap(h, m.a_w[k], m.a_e[k], dx) * overlap(h, m.a_s[k], m.a_n[k], dy) * tr.ubar[k]
        }
        Projection::EdgeStrip => {
            let len = match (dx, dy) {
                (0, 0) => {
                    h - pos(m.a_w[k]) - pos(-m.a_e[k]) - pos(m.a_s[k]) - pos(-m.a_n[k])
                }
                (-1, 0) => pos(-m.a_w[k]),
                (1, 0) => pos(m.a_e[k]),
                (0, -1) => pos(-m.a_s[k]),
                (0, 1) => pos(m.a_n[k]),
                _ => 0.0,
            };
            len * h * tr.ubar[k]
        }
    }
}

/// One Lagrangian-Eulerian step at time `t`.
pub fn le_step(u: &CellField, scheme: &Scheme, dt: f64, t: f64) -> Result<CellField> {
    let p = fill_ghosts(u, &scheme.boundary, t);
    let h = u.h;
    let tr = prepare(&p, scheme, dt, h)?;
    let (nx, ny) = (u.nx, u.ny);
    let w = nx + 2;
    let mut out = u.clone();
    out.data
        .par_chunks_mut(nx)
        .enumerate()
        .for_each(|(j, row)| {
            for (i, cell) in row.iter_mut().enumerate() {
                let (pi, pj) = (i + 1, j + 1);
                let mut s = 0.0;
                for sy in -1i64..=1 {
                    for sx in -1i64..=1 {
                        let k = (pj as i64 + sy) as usize * w + (pi as i64 + sx) as usize;
                        s += transfer(&tr, scheme.projection, h, k, -sx, -sy);
                    }
                }
                *cell = s / (h * h);
            }
        });
    for j in 0..ny {
        for i in 0..nx {
            if !out.data[j * nx + i].is_finite() {
                return Err(Error::NonFinite { i, j });
            }
        }
    }
    Ok(out)
}

/// Numerical fluxes per unit length and time: `fx` on the `(nx+1)×ny`
/// vertical edges (`j*(nx+1) + i`), `gy` on the `nx×(ny+1)` horizontal edges
/// (`j*nx + i`), positive in `+x`/`+y`.
#[derive(Clone, Debug, PartialEq)]
pub struct FluxForm {
    pub fx: Vec<f64>,
    pub gy: Vec<f64>,
}

impl FluxForm {
    /// `U − (Δt/h)(Δ₊F + Δ₊G)`.
    pub fn apply(&self, u: &CellField, dt: f64) -> CellField {
        let (nx, ny) = (u.nx, u.ny);
        let mut out = u.clone();
        let c = dt / u.h;
        for j in 0..ny {
            for i in 0..nx {
                let df = self.fx[j * (nx + 1) + i + 1] - self.fx[j * (nx + 1) + i];
                let dg = self.gy[(j + 1) * nx + i] - self.gy[j * nx + i];
                out.data[j * nx + i] -= c * (df + dg);
            }
        }
        out
    }
}

/// Conservative flux form of one step. Diagonal transfers are routed across
/// the source row's vertical edge first, then the destination column's
/// horizontal edge.
pub fn flux_form(u: &CellField, scheme: &Scheme, dt: f64, t: f64) -> Result<FluxForm> {
    let p = fill_ghosts(u, &scheme.boundary, t);
    let h = u.h;
    let tr = prepare(&p, scheme, dt, h)?;
    let (nx, ny) = (u.nx, u.ny);
    let w = nx + 2;
    let mut fx = vec![0.0; (nx + 1) * ny];
    let mut gy = vec![0.0; nx * (ny + 1)];
    // padded coordinates; vertical edge between padded columns c and c+1 is edge index c
    let mut add_x = |pj: usize, c: usize, v: f64| {
        if (1..=ny).contains(&pj) && c <= nx {
            fx[(pj - 1) * (nx + 1) + c] += v;
        }
    };
    let mut ylist = Vec::new();
    for pj in 0..ny + 2 {
        for pi in 0..w {
            let k = pj * w + pi;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (ti, tj) = (pi as i64 + dx, pj as i64 + dy);
                    if ti < 0 || tj < 0 || ti > nx as i64 + 1 || tj > ny as i64 + 1 {
                        continue;
                    }
                    let m = transfer(&tr, scheme.projection, h, k, dx, dy);
                    if m == 0.0 {
                        continue;
                    }
                    if dx != 0 {
                        let c = if dx > 0 { pi } else { pi - 1 };
                        add_x(pj, c, dx as f64 * m);
                    }
                    if dy != 0 {
                        let r = if dy > 0 { pj } else { pj - 1 };
                        ylist.push((ti as usize, r, dy as f64 * m));
                    }
                }
            }
        }
    }
    for (pi, r, v) in ylist {
        if (1..=nx).contains(&pi) && r <= ny {
            gy[r * nx + pi - 1] += v;
        }
    }
    let scale = 1.0 / (dt * h);
    if dt > 0.0 {
        fx.iter_mut().chain(gy.iter_mut()).for_each(|v| *v *= scale);
    }
    Ok(FluxForm { fx, gy })
}

/// Net mass leaving the domain in one step (through ghost cells).
pub fn boundary_outflow(u: &CellField, scheme: &Scheme, dt: f64, t: f64) -> Result<f64> {
    let ff = flux_form(u, scheme, dt, t)?;
    let (nx, ny) = (u.nx, u.ny);
    let mut out = 0.0;
    for j in 0..ny {
        out += ff.fx[j * (nx + 1) + nx] - ff.fx[j * (nx + 1)];
    }
    for i in 0..nx {
        out += ff.gy[ny * nx + i] - ff.gy[i];
    }
    Ok(out * dt * u.h)
}

/// Discrete `l¹`, `l²`, `l∞` norms `(h²Σ|e|^p)^{1/p}` of a cell-wise error.
pub fn error_norms(u: &CellField, exact: &CellField) -> [f64; 3] {
    let h2 = u.h * u.h;
    let mut n = [0.0f64; 3];
    for (a, b) in u.data.iter().zip(&exact.data) {
        let e = (a - b).abs();
        n[0] += e;
        n[1] += e * e;
        n[2] = n[2].max(e);
    }
    [n[0] * h2, (n[1] * h2).sqrt(), n[2]]
}

/// Snapshot of a run.
#[derive(Clone, Debug)]
pub struct Frame {
    pub t: f64,
    pub field: CellField,
}

/// Advances to `t_end` with CFL-limited steps, clipping the last one.
/// `on_step` sees every new state; frames are recorded at `frame_times`.
pub fn advance(
    u0: &CellField,
    scheme: &Scheme,
    theta: f64,
    t0: f64,
    t_end: f64,
    frame_times: &[f64],
    mut on_step: impl FnMut(&CellField, f64, f64) -> Result<()>,
) -> Result<(CellField, Vec<Frame>, usize)> {
    let mut u = u0.clone();
    let mut t = t0;
    let mut frames = Vec::new();
    let mut pending: Vec<f64> = frame_times.iter().copied().filter(|&f| f > t0 && f <= t_end).collect();
    pending.sort_by(f64::total_cmp);
    let mut steps = 0;
    while t < t_end {
        let next_stop = pending.first().copied().unwrap_or(t_end).min(t_end);
        let dt = cfl_dt(&u, scheme, theta, t, next_stop - t)?;
        let next = le_step(&u, scheme, dt, t)?;
        let t_new = if dt >= next_stop - t { next_stop } else { t + dt };
        on_step(&next, t_new, dt)?;
        u = next;
        t = t_new;
        steps += 1;
        while let Some(&f) = pending.first() {
            if f <= t {
                frames.push(Frame { t, field: u.clone() });
                pending.remove(0);
            } else {
                break;
            }
        }
    }
    Ok((u, frames, steps))
}

/// Least-squares fit `E ≈ C·h^p`, returns `(C, p)`.
pub fn fit_power_law(h: &[f64], e: &[f64]) -> (f64, f64) {
    let n = h.len() as f64;
    let xs: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = e.iter().map(|v| v.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let p = sxy / sxx;
    ((my - p * mx).exp(), p)
}

/// One row of a convergence table.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub cells: usize,
    pub h: f64,
    pub err: [f64; 3],
    pub order: [Option<f64>; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    /// `(C, p)` of the least-squares fit per norm.
    pub fit: [(f64, f64); 3],
}

impl ConvergenceTable {
    pub fn from_errors(cells: &[usize], h: &[f64], errs: &[[f64; 3]]) -> Result<Self> {
        if errs.len() < 2 {
            return Err(Error::Config("a convergence table needs at least two grids".into()));
        }
        let mut rows = Vec::new();
        for k in 0..errs.len() {
            let order = if k == 0 {
                [None; 3]
            } else {
                let r = (h[k - 1] / h[k]).ln();
                [0, 1, 2].map(|n| Some((errs[k - 1][n] / errs[k][n]).ln() / r))
            };
            rows.push(ConvergenceRow { cells: cells[k], h: h[k], err: errs[k], order });
        }
        let fit = [0, 1, 2].map(|n| fit_power_law(h, &errs.iter().map(|e| e[n]).collect::<Vec<_>>()));
        Ok(Self { rows, fit })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("Cells,h,err_l1,order_l1,err_l2,order_l2,err_linf,order_linf\n");
        for r in &self.rows {
            let o = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "--".into());
            s.push_str(&format!(
                "{},{:.6e},{:.6e},{},{:.6e},{},{:.6e},{}\n",
                r.cells,
                r.h,
                r.err[0],
                o(r.order[0]),
                r.err[1],
                o(r.order[1]),
                r.err[2],
                o(r.order[2])
            ));
        }
        s
    }
}

/// Built-in test problems.
pub mod problems {
    use std::f64::consts::PI;
    use std::sync::Arc;

    use super::*;

    #[derive(Clone, Copy, Debug, PartialEq, Eq)]
    pub enum Problem {
        LinearAdvection,
        BurgersOblique,
        BlGravity,
        BlRadialVerification,
    }

    impl std::str::FromStr for Problem {
        type Err = Error;
        fn from_str(s: &str) -> Result<Self> {
            match s {
                "advection" | "linear_advection" => Ok(Self::LinearAdvection),
                "burgers" | "burgers_oblique" => Ok(Self::BurgersOblique),
                "bl_gravity" => Ok(Self::BlGravity),
                "bl" | "bl_radial" | "bl_radial_verification" => Ok(Self::BlRadialVerification),
                other => Err(Error::Config(format!("unknown problem '{other}'"))),
            }
        }
    }

    impl Problem {
        pub fn name(&self) -> &'static str {
            match self {
                Self::LinearAdvection => "linear_advection",
                Self::BurgersOblique => "burgers_oblique",
                Self::BlGravity => "bl_gravity",
                Self::BlRadialVerification => "bl_radial_verification",
            }
        }

        pub fn default_t_end(&self) -> f64 {
            match self {
                Self::LinearAdvection => 1.0,
                Self::BurgersOblique => 1.0 / 12.0,
                Self::BlGravity => 0.5,
                Self::BlRadialVerification => 0.5,
            }
        }

        pub fn has_exact(&self) -> bool {
            matches!(self, Self::LinearAdvection | Self::BlRadialVerification)
        }
    }

    /// Cell average of `sin(π(x+y−2t))` over a cell of side `h` centred at `(x,y)`.
    pub fn advection_cell_average(x: f64, y: f64, t: f64, h: f64) -> f64 {
        let a = 0.5 * PI * h;
        let k = (a.sin() / a).powi(2);
        (PI * (x + y - 2.0 * t)).sin() * k
    }

    pub fn linear_advection(n: usize) -> (CellField, Scheme) {
        let h = 1.0 / n as f64;
        let u0 = CellField::from_fn(n, n, h, 0.0, 0.0, |x, y| advection_cell_average(x, y, 0.0, h));
        let exact: GhostFn = Arc::new(move |x, y, t| advection_cell_average(x, y, t, h));
        (u0, Scheme::new(FluxModel::linear(), Boundary::all(Ghost::Dirichlet(exact))))
    }

    /// Initial quadrant data of the oblique Burgers problem.
    pub fn burgers_quadrants(x: f64, y: f64) -> f64 {
        match (x > 0.5, y > 0.5) {
            (true, true) => -1.0,
            (false, true) => -0.2,
            (false, false) => 0.5,
            (true, false) => 0.8,
        }
    }

    /// Entropy solution of the 1D Burgers Riemann problem at `ξ = (x − x0)/t`.
    pub fn burgers_riemann(ul: f64, ur: f64, xi: f64) -> f64 {
        if ul > ur {
            if xi < 0.5 * (ul + ur) {
                ul
            } else {
                ur
            }
        } else if xi <= ul {
            ul
        } else if xi >= ur {
            ur
        } else {
            xi
        }
    }

    /// Exact data outside the unit square for `t` small enough that the
    /// corner interaction has not reached the boundary: 1D Riemann solutions
    /// along each side, constant quadrant values in the corners.
    pub fn burgers_boundary(x: f64, y: f64, t: f64) -> f64 {
        let inside_x = (0.0..=1.0).contains(&x);
        let inside_y = (0.0..=1.0).contains(&y);
        if t <= 0.0 || (!inside_x && !inside_y) {
            return burgers_quadrants(x, y);
        }
        if !inside_x {
            // vertical sides: Riemann problem in y
            let (lo, hi) = (burgers_quadrants(x, 0.25), burgers_quadrants(x, 0.75));
            burgers_riemann(lo, hi, (y - 0.5) / t)
        } else {
            let (lo, hi) = (burgers_quadrants(0.25, y), burgers_quadrants(0.75, y));
            burgers_riemann(lo, hi, (x - 0.5) / t)
        }
    }

    pub fn burgers_oblique(n: usize) -> (CellField, Scheme) {
        let h = 1.0 / n as f64;
        let u0 = CellField::from_fn(n, n, h, 0.0, 0.0, burgers_quadrants);
        let bc: GhostFn = Arc::new(burgers_boundary);
        (u0, Scheme::new(FluxModel::burgers(), Boundary::all(Ghost::Dirichlet(bc))))
    }

    pub fn bl_gravity(n: usize, m: f64, cg: f64) -> (CellField, Scheme) {
        let h = 3.0 / n as f64;
        let u0 = CellField::from_fn(n, n, h, -1.5, -1.5, |x, y| if x * x + y * y < 0.5 { 1.0 } else { 0.0 });
        let mut s = Scheme::new(FluxModel::buckley_leverett_gravity(m, cg), Boundary::all(Ghost::Reflective));
        // the corner transfers of the tensor projection are not monotone for
        // S²/(S² + M(1−S)²) near S = 1
        s.projection = Projection::EdgeStrip;
        (u0, s)
    }

    /// Quarter five-spot: water injected at the origin corner of `[0,1]²` at
    /// rate `rate` (volume per time through the quarter plane) into `S = 0`.
    /// The radial velocity `2·rate/(π r)` is integrated exactly over every edge.
    pub struct RadialBl {
        pub rate: f64,
        pub m: f64,
    }

    impl RadialBl {
        pub fn velocity(&self, n: usize) -> EdgeVelocity {
            let h = 1.0 / n as f64;
            let c = 2.0 * self.rate / PI;
            let mut v = EdgeVelocity::uniform(n, n, 0.0, 0.0);
            for j in 0..n {
                for i in 0..=n {
                    let a = i as f64 * h;
                    let (y0, y1) = (j as f64 * h, (j + 1) as f64 * h);
                    let flux = if a == 0.0 { 0.0 } else { c * ((y1 / a).atan() - (y0 / a).atan()) };
                    v.vx[j * (n + 1) + i] = flux / h;
                }
            }
            for j in 0..=n {
                for i in 0..n {
                    let b = j as f64 * h;
                    let (x0, x1) = (i as f64 * h, (i + 1) as f64 * h);
                    let flux = if b == 0.0 { 0.0 } else { c * ((x1 / b).atan() - (x0 / b).atan()) };
                    v.vy[j * n + i] = flux / h;
                }
            }
            v
        }

        /// Exact saturation at radius `r`: the rarefaction branch
        /// `f′(S) = π r²/(4·rate·t)` above the Welge shock, zero beyond.
        pub fn exact(&self, r: f64, t: f64) -> f64 {
            let model = FluxModel::buckley_leverett(self.m);
            let w = crate::coupling::welge(&model);
            let speed = PI * r * r / (4.0 * self.rate * t);
            if speed >= w.shock_speed {
                return 0.0;
            }
            crate::coupling::invert_df_upper(&model, speed, w.s_front)
        }

        pub fn front_radius(&self, t: f64) -> f64 {
            let w = crate::coupling::welge(&FluxModel::buckley_leverett(self.m));
            (4.0 * self.rate * t * w.shock_speed / PI).sqrt()
        }

        pub fn setup(&self, n: usize) -> (CellField, Scheme) {
            let h = 1.0 / n as f64;
            let mut u0 = CellField::new(n, n, h, 0.0, 0.0, 0.0);
            u0.data[0] = 1.0;
            let mut s = Scheme::new(
                FluxModel::buckley_leverett(self.m),
                Boundary {
                    west: Ghost::Reflective,
                    south: Ghost::Reflective,
                    east: Ghost::Extrapolate,
                    north: Ghost::Extrapolate,
                },
            );
            s.velocity = Some(self.velocity(n));
            s.projection = Projection::EdgeStrip;
            (u0, s)
        }
    }

    /// Result of one run of a built-in problem.
    #[derive(Clone, Debug)]
    pub struct RunReport {
        pub problem: Problem,
        pub n: usize,
        pub final_field: CellField,
        pub frames: Vec<Frame>,
        pub steps: usize,
        /// `[l¹, l², l∞]` against the exact solution, when known.
        pub errors: Option<[f64; 3]>,
        /// Extreme values over all steps.
        pub min_seen: f64,
        pub max_seen: f64,
        /// Largest `|U(x,y) − U(y,x)|` over all steps.
        pub transpose_asymmetry: f64,
        /// Largest `|U(x,y) − U(−x,y)|` over all steps.
        pub x_reflection_asymmetry: f64,
    }

    #[derive(Clone, Debug)]
    pub struct RunOptions {
        pub theta: f64,
        pub t_end: Option<f64>,
        pub frame_times: Vec<f64>,
        pub face: FaceMethod,
        pub projection: Option<Projection>,
        pub bl_m: f64,
        pub bl_cg: f64,
    }

    impl Default for RunOptions {
        fn default() -> Self {
            Self {
                theta: 0.67,
                t_end: None,
                frame_times: Vec::new(),
                face: FaceMethod::DonorCell,
                projection: None,
                bl_m: 1.0,
                bl_cg: 5.0,
            }
        }
    }

    fn asymmetries(u: &CellField) -> (f64, f64) {
        let n = u.nx;
        let (mut t, mut r): (f64, f64) = (0.0, 0.0);
        if u.nx == u.ny {
            for j in 0..n {
                for i in 0..n {
                    t = t.max((u.at(i, j) - u.at(j, i)).abs());
                    r = r.max((u.at(i, j) - u.at(n - 1 - i, j)).abs());
                }
            }
        }
        (t, r)
    }

    /// Initial data and scheme of a built-in problem (before option overrides).
    pub fn setup(problem: Problem, n: usize, opts: &RunOptions) -> (CellField, Scheme) {
        match problem {
            Problem::LinearAdvection => linear_advection(n),
            Problem::BurgersOblique => burgers_oblique(n),
            Problem::BlGravity => bl_gravity(n, opts.bl_m, opts.bl_cg),
            Problem::BlRadialVerification => RadialBl { rate: 0.5, m: opts.bl_m }.setup(n),
        }
    }

    pub fn run_problem(problem: Problem, n: usize, opts: &RunOptions) -> Result<RunReport> {
        if !(2..=4096).contains(&n) {
            return Err(Error::Config(format!("grid size {n} out of range")));
        }
        let (u0, mut scheme) = setup(problem, n, opts);
        scheme.face = opts.face;
        if let Some(p) = opts.projection {
            scheme.projection = p;
        }
        let t_end = opts.t_end.unwrap_or(problem.default_t_end());
        let (mut lo, mut hi) = u0.min_max();
        let (mut ta, mut ra) = asymmetries(&u0);
        let well = problem == Problem::BlRadialVerification;
        let mut u = u0.clone();
        let mut t = 0.0;
        let mut frames = Vec::new();
        let mut pending: Vec<f64> = opts.frame_times.iter().copied().filter(|&f| f > 0.0 && f <= t_end).collect();
        pending.sort_by(f64::total_cmp);
        let mut steps = 0;
        while t < t_end {
            let stop = pending.first().copied().unwrap_or(t_end);
            let dt = cfl_dt(&u, &scheme, opts.theta, t, stop - t)?;
            let mut next = le_step(&u, &scheme, dt, t)?;
            if well {
                next.data[0] = 1.0;
            }
            t = if dt >= stop - t { stop } else { t + dt };
            let (a, b) = next.min_max();
            lo = lo.min(a);
            hi = hi.max(b);
            let (x, y) = asymmetries(&next);
            ta = ta.max(x);
            ra = ra.max(y);
            u = next;
            steps += 1;
            while pending.first().is_some_and(|&f| f <= t) {
                frames.push(Frame { t, field: u.clone() });
                pending.remove(0);
            }
        }
        let errors = match problem {
            Problem::LinearAdvection => {
                let h = u.h;
                let ex = CellField::from_fn(n, n, h, 0.0, 0.0, |x, y| advection_cell_average(x, y, t_end, h));
                Some(error_norms(&u, &ex))
            }
            Problem::BlRadialVerification => {
                let radial = RadialBl { rate: 0.5, m: opts.bl_m };
                let ex = CellField::from_fn(n, n, u.h, 0.0, 0.0, |x, y| radial.exact((x * x + y * y).sqrt(), t_end));
                Some(error_norms(&u, &ex))
            }
            _ => None,
        };
        Ok(RunReport {
            problem,
            n,
            final_field: u,
            frames,
            steps,
            errors,
            min_seen: lo,
            max_seen: hi,
            transpose_asymmetry: ta,
            x_reflection_asymmetry: ra,
        })
    }

    /// Errors on a ladder of grids plus per-refinement and fitted orders.
    pub fn convergence_table(problem: Problem, grids: &[usize], opts: &RunOptions) -> Result<ConvergenceTable> {
        if grids.len() < 2 {
            return Err(Error::Config("a convergence table needs at least two grids".into()));
        }
        if !problem.has_exact() {
            return Err(Error::Config(format!("{} has no exact solution", problem.name())));
        }
        let mut errs = Vec::new();
        let mut hs = Vec::new();
        for &n in grids {
            let rep = run_problem(problem, n, opts)?;
            errs.push(rep.errors.expect("exact solution available"));
            hs.push(rep.final_field.h);
        }
        ConvergenceTable::from_errors(grids, &hs, &errs)
    }

    /// Averages a `2n×2n` field onto the `n×n` grid.
    pub fn coarsen2(u: &CellField) -> CellField {
        let (nx, ny) = (u.nx / 2, u.ny / 2);
        let mut out = CellField::new(nx, ny, 2.0 * u.h, u.x0, u.y0, 0.0);
        for j in 0..ny {
            for i in 0..nx {
                out.data[j * nx + i] = 0.25
                    * (u.at(2 * i, 2 * j) + u.at(2 * i + 1, 2 * j) + u.at(2 * i, 2 * j + 1) + u.at(2 * i + 1, 2 * j + 1));
            }
        }
        out
    }
}
