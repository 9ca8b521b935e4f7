//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
//!
//! `SPE10_PERM` may point at a permeability raster (see `fields_io::load_raster`)
//! for the high-contrast case; a synthetic channelized field is used otherwise.

use std::time::Instant;

use hocle_core::coupling::{
    impes_run, l1_difference, mass_balance_report, restrict_saturation, welge, SimulationConfig, Slab, TwoPhaseState,
};
use hocle_core::elliptic::{compare_methods, manufactured, FemSpace, IndicatorRow, MobilityField};
use hocle_core::fields_io::MediumSpec;
use hocle_core::grid::{CvLayout, PrimalMesh};
use hocle_core::hyperbolic::problems::{coarsen2, convergence_table, run_problem, Problem, RunOptions};
use hocle_core::hyperbolic::{
    cfl_dt, edge_motion, fill_ghosts, fit_power_law, flux_form, le_step, Boundary, CellField, FluxModel, Ghost,
    Projection, Scheme,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn sci(v: &[f64], digits: usize) -> String {
    let s: Vec<String> = v.iter().map(|x| format!("{x:.digits$e}")).collect();
    format!("[{}]", s.join(", "))
}

fn space(n: usize, r: usize) -> FemSpace {
    FemSpace::new(PrimalMesh::new(n, n, 1.0, 1.0).unwrap(), r, CvLayout::Interior).unwrap()
}

fn manufactured_row(n: usize, r: usize) -> IndicatorRow {
    let sp = space(n, r);
    let lam = MobilityField::uniform(&sp.mesh, 1.0);
    compare_methods(&sp, &lam, &manufactured::source, Some(&manufactured::exact)).unwrap().0
}

fn rows_at(rows: &[IndicatorRow], r: usize, n: usize) -> &IndicatorRow {
    rows.iter().find(|x| x.degree == r && (x.h - 1.0 / n as f64).abs() < 1e-15).expect("computed")
}

fn c1_conservation(rows: &[IndicatorRow]) -> Outcome {
    let mut pass = true;
    let mut d = Vec::new();
    for r in 1..=3 {
        let row = rows_at(rows, r, 128);
        let ok = row.j_hocfem <= 1e-10 && row.j_fem >= 1e-6;
        pass &= ok;
        d.push(format!("Q{r} J_FEM {:.3e} J_HOCFEM {:.3e}{}", row.j_fem, row.j_hocfem, if ok { "" } else { " (fails)" }));
    }
    outcome(pass, format!("128²: {}", d.join("; ")))
}

fn c2_energy(rows: &[IndicatorRow]) -> Outcome {
    let mut pass = true;
    let mut d = Vec::new();
    for r in 1..=3 {
        let row = rows_at(rows, r, 128);
        let rel = (row.e_fem - row.e_hocfem).abs() / row.e_fem.abs();
        pass &= rel <= 1e-5;
        d.push(format!("Q{r} E_FEM {:.9} E_HOCFEM {:.9} rel {rel:.2e}", row.e_fem, row.e_hocfem));
    }
    outcome(pass, d.join("; "))
}

fn c3_orders(rows: &[IndicatorRow]) -> Outcome {
    let mut pass = true;
    let mut d = Vec::new();
    for r in 1..=2 {
        let rs: Vec<&IndicatorRow> = [16, 32, 64, 128].iter().map(|&n| rows_at(rows, r, n)).collect();
        let h: Vec<f64> = rs.iter().map(|x| x.h).collect();
        let h1: Vec<f64> = rs.iter().map(|x| x.err.unwrap().h1).collect();
        let l2c: Vec<f64> = rs.iter().map(|x| x.err.unwrap().l2_corrected).collect();
        let p_h1 = fit_power_law(&h, &h1).1;
        let p_l2 = fit_power_law(&h, &l2c).1;
        let rf = r as f64;
        pass &= (p_h1 - rf).abs() <= 0.3 && (p_l2 - (rf + 1.0)).abs() <= 0.3;
        d.push(format!("Q{r} H1 {p_h1:.3} (want {rf}±0.3), L2(p+λ) {p_l2:.3} (want {}±0.3)", r + 1));
    }
    outcome(pass, d.join("; "))
}

fn c4_high_contrast() -> Outcome {
    let (medium, label) = match std::env::var("SPE10_PERM") {
        Ok(p) => (MediumSpec::Raster { path: p.clone().into(), layout: None, scale: None }, format!("raster {p}")),
        Err(_) => (MediumSpec::Synthetic { nx: 64, ny: 64, seed: 10 }, "synthetic stand-in (seed 10)".to_string()),
    };
    let sp = space(256, 1);
    let k = match medium.element_permeability(&sp.mesh) {
        Ok(k) => k,
        Err(e) => return outcome(false, format!("{label}: {e}")),
    };
    let lam = MobilityField::from_values(&sp.mesh, k).unwrap();
    let (row, _) = compare_methods(&sp, &lam, &|_: f64, _: f64| 1.0, None).unwrap();
    outcome(
        row.j_hocfem <= 1e-9 && row.j_fem >= 1e-2,
        format!("{label}, 256² Q1: J_FEM {:.3e} (≥ 1e-2), J_HOCFEM {:.3e} (≤ 1e-9)", row.j_fem, row.j_hocfem),
    )
}

fn c5_advection() -> Outcome {
    let opts = RunOptions { theta: 0.67, t_end: Some(1.0), ..Default::default() };
    let t = convergence_table(Problem::LinearAdvection, &[64, 128, 256, 512], &opts).unwrap();
    let e64 = t.rows[0].err[0];
    let order = t.fit[0].1;
    let mag = (e64 - 5.156e-2).abs() <= 0.2 * 5.156e-2;
    let ord = (0.84..=1.14).contains(&order);
    let errs: Vec<String> = t.rows.iter().map(|r| format!("{:.4e}", r.err[0])).collect();
    outcome(
        mag && ord,
        format!(
            "l1 64..512 [{}], 64² within ±20% of 5.156e-2: {}, fitted order {order:.3} in [0.84,1.14]: {}",
            errs.join(", "),
            mag,
            ord
        ),
    )
}

fn random_field(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> CellField {
    let mut u = CellField::new(n, n, 1.0 / n as f64, 0.0, 0.0, 0.0);
    let spiky = rng.random_bool(0.5);
    for v in u.data.iter_mut() {
        *v = if spiky {
            if rng.random_bool(0.5) { hi } else { lo }
        } else {
            rng.random_range(lo..=hi)
        };
    }
    u
}

/// Default projection and admissible range of each built-in model.
fn models() -> Vec<(FluxModel, Projection, f64, f64)> {
    vec![
        (FluxModel::linear(), Projection::Tensor, -1.0, 1.0),
        (FluxModel::burgers(), Projection::Tensor, -1.0, 0.8),
        (FluxModel::buckley_leverett(1.0), Projection::EdgeStrip, 0.0, 1.0),
        (FluxModel::buckley_leverett_gravity(1.0, 5.0), Projection::EdgeStrip, 0.0, 1.0),
    ]
}

fn scheme(m: FluxModel, proj: Projection) -> Scheme {
    let mut s = Scheme::new(m, Boundary::all(Ghost::Periodic));
    s.projection = proj;
    s
}

/// Mass of every padded cell spread uniformly over its evolved rectangle and
/// intersected with the grid cells.
fn overlap_oracle(u: &CellField, s: &Scheme, dt: f64) -> CellField {
    let p = fill_ghosts(u, &s.boundary, 0.0);
    let h = u.h;
    let mo = edge_motion(&p, s, dt, h).unwrap();
    let w = u.nx + 2;
    let mut out = CellField::new(u.nx, u.ny, h, u.x0, u.y0, 0.0);
    let seg = |a0: f64, a1: f64, b0: f64, b1: f64| (a1.min(b1) - a0.max(b0)).max(0.0);
    for pj in 0..u.ny + 2 {
        for pi in 0..w {
            let k = pj * w + pi;
            let (xl, yb) = ((pi as f64 - 1.0) * h, (pj as f64 - 1.0) * h);
            let (x0, x1) = (xl + mo.a_w[k], xl + h + mo.a_e[k]);
            let (y0, y1) = (yb + mo.a_s[k], yb + h + mo.a_n[k]);
            let area = (x1 - x0) * (y1 - y0);
            let density = p.data[k] * h * h / area;
            for j in 0..u.ny {
                for i in 0..u.nx {
                    let (cx, cy) = (i as f64 * h, j as f64 * h);
                    let a = seg(x0, x1, cx, cx + h) * seg(y0, y1, cy, cy + h);
                    out.data[j * u.nx + i] += density * a / (h * h);
                }
            }
        }
    }
    out
}

fn c6_conservation_monotonicity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    // per-step mass drift on periodic advection and Burgers
    let mut drift: f64 = 0.0;
    for m in [FluxModel::linear(), FluxModel::burgers()] {
        let s = scheme(m, Projection::Tensor);
        let mut u = CellField::from_fn(64, 64, 1.0 / 64.0, 0.0, 0.0, |x, y| {
            0.5 + 0.4 * (2.0 * std::f64::consts::PI * (x + 2.0 * y)).sin()
        });
        let mut t = 0.0;
        for _ in 0..200 {
            let dt = cfl_dt(&u, &s, 0.67, t, 1.0).unwrap();
            let v = le_step(&u, &s, dt, t).unwrap();
            let scale: f64 = u.data.iter().map(|x| x.abs()).sum();
            drift = drift.max((v.data.iter().sum::<f64>() - u.data.iter().sum::<f64>()).abs() / scale);
            u = v;
            t += dt;
        }
    }
    // maximum principle on random CFL-compliant states
    let mut worst: f64 = 0.0;
    let mut states = 0;
    let ms = models();
    while states < 1000 {
        let (m, proj, lo, hi) = ms[states % ms.len()];
        let n = rng.random_range(3..=12);
        let u = random_field(&mut rng, n, lo, hi);
        let s = scheme(m, proj);
        let theta = rng.random_range(0.05..0.99);
        let dt = cfl_dt(&u, &s, theta, 0.0, 1.0).unwrap();
        let v = le_step(&u, &s, dt, 0.0).unwrap();
        let (a, b) = u.min_max();
        let (c, d) = v.min_max();
        worst = worst.max(a - c).max(d - b);
        states += 1;
    }
    // geometric overlap oracle
    let mut oracle: f64 = 0.0;
    for (m, _, lo, hi) in ms {
        for _ in 0..5 {
            let u = random_field(&mut rng, 16, lo, hi);
            let s = scheme(m, Projection::Tensor);
            let dt = cfl_dt(&u, &s, 0.67, 0.0, 1.0).unwrap();
            let a = le_step(&u, &s, dt, 0.0).unwrap();
            let b = overlap_oracle(&u, &s, dt);
            for (x, y) in a.data.iter().zip(&b.data) {
                oracle = oracle.max((x - y).abs());
            }
        }
    }
    outcome(
        drift <= 1e-12 && worst <= 1e-12 && oracle <= 1e-12,
        format!(
            "mass drift {drift:.2e} (≤ 1e-12), worst bound excess over {states} states {worst:.2e}, oracle difference {oracle:.2e} (≤ 1e-12)"
        ),
    )
}

fn c7_burgers() -> Outcome {
    let opts = RunOptions { theta: 0.67, t_end: Some(1.0 / 12.0), ..Default::default() };
    let reps: Vec<_> = [128, 256, 512].iter().map(|&n| run_problem(Problem::BurgersOblique, n, &opts).unwrap()).collect();
    let lo = reps.iter().map(|r| r.min_seen).fold(f64::INFINITY, f64::min);
    let hi = reps.iter().map(|r| r.max_seen).fold(f64::NEG_INFINITY, f64::max);
    let bounds = lo >= -1.0 - 1e-12 && hi <= 0.8 + 1e-12;
    let diffs: Vec<f64> = reps
        .windows(2)
        .map(|w| {
            let (c, f) = (&w[0].final_field, coarsen2(&w[1].final_field));
            c.data.iter().zip(&f.data).map(|(a, b)| (a - b).abs()).sum::<f64>() * c.h * c.h
        })
        .collect();
    let decreasing = diffs.windows(2).all(|w| w[1] < w[0]);
    outcome(
        bounds && decreasing,
        format!("range [{lo:.15}, {hi:.15}], l1 self-differences {}", sci(&diffs, 3)),
    )
}

struct SlabRun {
    slab: Slab,
    last: TwoPhaseState,
    mass_err: f64,
}

fn slab_run(medium: MediumSpec, h: f64) -> SlabRun {
    let slab = Slab::new(SimulationConfig { h, medium, ..Default::default() }).unwrap();
    let hist = impes_run(&slab, |_| Ok(())).unwrap();
    let mass = mass_balance_report(&slab, &hist).unwrap();
    let last = hist.last().unwrap().clone();
    SlabRun { slab, last, mass_err: mass.last().unwrap().rel_mass_err }
}

fn c8_welge(run: &SlabRun) -> Outcome {
    let w = welge(&run.slab.model);
    let cfg = &run.slab.cfg;
    let exact = w.shock_speed * cfg.q * run.last.t;
    let front = run.slab.front_position(&run.last.s, 0.5 * (w.s_front + cfg.s0));
    let cells = (front - exact).abs() / cfg.h;
    outcome(
        cells <= 2.0,
        format!("h = 1, t = {}: front {front:.3}, similarity solution {exact:.3}, {cells:.2} cells (≤ 2)", run.last.t),
    )
}

fn c9_refinement(runs: &[(&str, Vec<SlabRun>)]) -> Outcome {
    let mut pass = true;
    let mut d = Vec::new();
    for (name, rs) in runs {
        let errs: Vec<f64> = rs.iter().map(|r| r.mass_err).collect();
        let mass_ok = errs.windows(2).all(|w| w[1] <= w[0] + 1e-12);
        let diffs: Vec<f64> = rs
            .windows(2)
            .map(|w| {
                let restricted = restrict_saturation(&w[1].slab, &w[1].last.s, &w[0].slab);
                l1_difference(&w[0].slab, &restricted, &w[0].last.s)
            })
            .collect();
        let diff_ok = diffs.windows(2).all(|w| w[1] < w[0]);
        pass &= mass_ok && diff_ok;
        d.push(format!("{name}: mass errors {}, l1 differences {}", sci(&errs, 1), sci(&diffs, 3)));
    }
    outcome(pass, d.join("; "))
}

fn c10_flux_form() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (mut step, mut consistency, mut constant): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for (m, proj, lo, hi) in models() {
        for p in [proj, Projection::Tensor, Projection::EdgeStrip] {
            let s = scheme(m, p);
            for _ in 0..5 {
                let u = random_field(&mut rng, 16, lo, hi);
                let dt = cfl_dt(&u, &s, 0.67, 0.0, 1.0).unwrap();
                let a = le_step(&u, &s, dt, 0.0).unwrap();
                let b = flux_form(&u, &s, dt, 0.0).unwrap().apply(&u, dt);
                for (x, y) in a.data.iter().zip(&b.data) {
                    step = step.max((x - y).abs());
                }
            }
            for k in 0..=10 {
                let c = lo + (hi - lo) * k as f64 / 10.0;
                let u = CellField::new(8, 8, 1.0 / 8.0, 0.0, 0.0, c);
                let dt = cfl_dt(&u, &s, 0.67, 0.0, 1.0).unwrap().min(0.05);
                let ff = flux_form(&u, &s, dt, 0.0).unwrap();
                for v in &ff.fx {
                    consistency = consistency.max((v - m.fx(c).0).abs());
                }
                for v in &ff.gy {
                    consistency = consistency.max((v - m.fy(c).0).abs());
                }
                for x in ff.apply(&u, dt).data {
                    constant = constant.max((x - c).abs());
                }
            }
        }
    }
    outcome(
        step <= 1e-12 && consistency <= 1e-12 && constant <= 1e-12,
        format!("flux form vs step {step:.2e}, |F(u,..,u) − f(u)| {consistency:.2e}, constant-state change {constant:.2e}"),
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |id: u32, name: &str, start: Instant, o: Outcome| {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        if !o.pass {
            failed += 1;
        }
        println!("{tag} [{id}] {name}: {} ({:.1} s)", o.detail, start.elapsed().as_secs_f64());
    };

    let t = Instant::now();
    let mut rows = Vec::new();
    for r in 1..=3 {
        rows.push(manufactured_row(128, r));
    }
    for r in 1..=2 {
        for n in [16, 32, 64] {
            rows.push(manufactured_row(n, r));
        }
    }
    report(1, "elliptic local conservation", t, c1_conservation(&rows));
    report(2, "energy agreement", t, c2_energy(&rows));
    report(3, "elliptic convergence orders", t, c3_orders(&rows));

    let t = Instant::now();
    report(4, "high-contrast conservation", t, c4_high_contrast());
    let t = Instant::now();
    report(5, "advection l1 table", t, c5_advection());
    let t = Instant::now();
    report(6, "transport conservation and monotonicity", t, c6_conservation_monotonicity());
    let t = Instant::now();
    report(7, "Burgers oblique Riemann", t, c7_burgers());

    let t = Instant::now();
    let ladder = [8.0, 4.0, 2.0, 1.0];
    let homogeneous: Vec<SlabRun> = ladder.iter().map(|&h| slab_run(MediumSpec::Homogeneous, h)).collect();
    report(8, "Welge front", t, c8_welge(homogeneous.last().unwrap()));
    let barrier: Vec<SlabRun> =
        ladder.iter().map(|&h| slab_run(MediumSpec::Barrier { contrast: 1e4, rect: None }, h)).collect();
    report(9, "coupled refinement", t, c9_refinement(&[("homogeneous", homogeneous), ("barrier", barrier)]));

    let t = Instant::now();
    report(10, "flux-form consistency", t, c10_flux_form());

    println!("{} of 10 criteria passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
