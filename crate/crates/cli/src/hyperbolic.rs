use std::fmt::Write;

use hocle_core::fields_io::{snapshot_csv, vtk_rectilinear, OutputDir};
use hocle_core::hyperbolic::problems::{coarsen2, run_problem, setup, Problem, RunOptions, RunReport};
use hocle_core::hyperbolic::{CellField, ConvergenceTable};

use crate::config::HyperbolicConfig;
use crate::manifest::RunManifest;
use crate::Failure;

/// Slack on the maximum principle.
pub const BOUND_SLACK: f64 = 1e-12;

/// Values the exact solution can take.
pub fn admissible_range(problem: Problem) -> (f64, f64) {
    match problem {
        Problem::LinearAdvection => (-1.0, 1.0),
        Problem::BurgersOblique => (-1.0, 0.8),
        Problem::BlGravity | Problem::BlRadialVerification => (0.0, 1.0),
    }
}

fn frame_name(n: usize, t: f64) -> String {
    format!("n{n}/u_t{t:.6}.csv")
}

fn write_field(out: &mut OutputDir, n: usize, t: f64, u: &CellField) -> Result<(), Failure> {
    out.write_str(&frame_name(n, t), &snapshot_csv(u.nx, u.ny, u.h, t, &u.data))?;
    Ok(())
}

pub fn run(cfg: &HyperbolicConfig, out: &mut OutputDir, man: &mut RunManifest) -> Result<(), Failure> {
    let problem = cfg.problem();
    let t_end = cfg.t_end.expect("resolved");
    let opts = RunOptions {
        theta: cfg.cfl,
        t_end: Some(t_end),
        frame_times: cfg.frame_times.clone(),
        face: cfg.face_method(),
        projection: cfg.projection_choice(),
        bl_m: cfg.bl_m,
        bl_cg: cfg.bl_cg,
    };
    let (lo, hi) = admissible_range(problem);
    man.tolerance("maximum_principle_slack", BOUND_SLACK);
    let mut reports: Vec<RunReport> = Vec::new();
    for &n in &cfg.mesh_ladder {
        let (u0, _) = setup(problem, n, &opts);
        let rep = man.time(format!("{} n={n}", problem.name()), || run_problem(problem, n, &opts))?;
        eprintln!(
            "{} n={n}: {} steps, range [{:.6}, {:.6}]{}",
            problem.name(),
            rep.steps,
            rep.min_seen,
            rep.max_seen,
            rep.errors.map(|e| format!(", l1 error {:.4e}", e[0])).unwrap_or_default()
        );
        man.check(format!("lower bound n={n}"), lo - rep.min_seen, BOUND_SLACK);
        man.check(format!("upper bound n={n}"), rep.max_seen - hi, BOUND_SLACK);
        write_field(out, n, 0.0, &u0)?;
        for f in rep.frames.iter().filter(|f| f.t < t_end) {
            write_field(out, n, f.t, &f.field)?;
        }
        let u = &rep.final_field;
        write_field(out, n, t_end, u)?;
        let xs: Vec<f64> = (0..=u.nx).map(|i| u.x0 + i as f64 * u.h).collect();
        let ys: Vec<f64> = (0..=u.ny).map(|j| u.y0 + j as f64 * u.h).collect();
        out.write_str(&format!("n{n}/u_final.vtk"), &vtk_rectilinear(&xs, &ys, &[("u", &u.data)]))?;
        reports.push(rep);
    }
    out.write_str("summary.csv", &summary_csv(&reports))?;
    if problem.has_exact() && reports.len() >= 2 {
        let cells: Vec<usize> = reports.iter().map(|r| r.n).collect();
        let h: Vec<f64> = reports.iter().map(|r| r.final_field.h).collect();
        let errs: Vec<[f64; 3]> = reports.iter().map(|r| r.errors.expect("exact solution known")).collect();
        let table = ConvergenceTable::from_errors(&cells, &h, &errs)?;
        let mut s = table.to_csv();
        let _ = writeln!(s, "\nnorm,C,p");
        for (name, (c, p)) in ["l1", "l2", "linf"].iter().zip(table.fit) {
            let _ = writeln!(s, "{name},{c:.4},{p:.4}");
        }
        out.write_str("convergence.csv", &s)?;
    }
    if let Some(s) = self_convergence_csv(&reports) {
        out.write_str("self_convergence.csv", &s)?;
    }
    Ok(())
}

fn summary_csv(reports: &[RunReport]) -> String {
    let mut s = String::from("n,h,steps,min,max,transpose_asymmetry,x_reflection_asymmetry,err_l1,err_l2,err_linf\n");
    for r in reports {
        let e = r.errors.map(|e| format!("{:e},{:e},{:e}", e[0], e[1], e[2])).unwrap_or_else(|| ",,".into());
        let _ = writeln!(
            s,
            "{},{:e},{},{:e},{:e},{:e},{:e},{e}",
            r.n, r.final_field.h, r.steps, r.min_seen, r.max_seen, r.transpose_asymmetry, r.x_reflection_asymmetry
        );
    }
    s
}

/// `‖coarsen(U_{2n}) − U_n‖₁` for successive grids that differ by a factor of two.
pub fn self_convergence(reports: &[RunReport]) -> Vec<(usize, usize, f64)> {
    reports
        .windows(2)
        .filter(|w| w[1].n == 2 * w[0].n)
        .map(|w| {
            let (c, f) = (&w[0].final_field, coarsen2(&w[1].final_field));
            let l1 = c.data.iter().zip(&f.data).map(|(a, b)| (a - b).abs()).sum::<f64>() * c.h * c.h;
            (w[0].n, w[1].n, l1)
        })
        .collect()
}

fn self_convergence_csv(reports: &[RunReport]) -> Option<String> {
    let rows = self_convergence(reports);
    if rows.is_empty() {
        return None;
    }
    let mut s = String::from("coarse,fine,l1_difference\n");
    for (a, b, d) in rows {
        let _ = writeln!(s, "{a},{b},{d:e}");
    }
    Some(s)
}
