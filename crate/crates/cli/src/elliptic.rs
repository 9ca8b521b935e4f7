use hocle_core::elliptic::{
    compare_methods, evaluate, manufactured, solve_saddle, FemSpace, IndicatorRow, MobilityField, SaddleSystem,
};
use hocle_core::fields_io::{indicator_csv, matrix_csv, vtk_rectilinear, OutputDir};
use hocle_core::grid::{CvLayout, PrimalMesh};
use hocle_core::hyperbolic::fit_power_law;
use std::fmt::Write;

use crate::config::EllipticConfig;
use crate::manifest::RunManifest;
use crate::Failure;

/// `J_HOCFEM` bound per problem.
pub const J_HOCFEM_MANUFACTURED: f64 = 1e-10;
pub const J_HOCFEM_HETEROGENEOUS: f64 = 1e-9;

fn space(n: usize, r: usize) -> Result<FemSpace, Failure> {
    Ok(FemSpace::new(PrimalMesh::new(n, n, 1.0, 1.0)?, r, CvLayout::Interior)?)
}

pub fn run(cfg: &EllipticConfig, out: &mut OutputDir, man: &mut RunManifest) -> Result<(), Failure> {
    let spe10 = cfg.is_spe10();
    let limit = if spe10 { J_HOCFEM_HETEROGENEOUS } else { J_HOCFEM_MANUFACTURED };
    man.tolerance("kkt_relative_residual", hocle_core::elliptic::TOL_LIN);
    man.tolerance("j_hocfem", limit);
    let medium = cfg.medium.clone().expect("resolved");
    let q_const = cfg.source;
    let q_spe = move |_: f64, _: f64| q_const;
    let q: &(dyn Fn(f64, f64) -> f64 + Sync) = if spe10 { &q_spe } else { &manufactured::source };
    let mobility = |space: &FemSpace| -> Result<MobilityField, Failure> {
        Ok(MobilityField::from_values(&space.mesh, medium.element_permeability(&space.mesh)?)?)
    };

    // heterogeneous media have no closed form: compare with a high-degree
    // solution on the finest mesh
    let finest = *cfg.mesh_ladder.last().expect("resolved");
    let reference = if spe10 {
        let rs = space(finest, cfg.reference_degree)?;
        let lam = mobility(&rs)?;
        let sol = man.time(format!("reference Q{} n={finest}", cfg.reference_degree), || {
            solve_saddle(&SaddleSystem::assemble(&rs, &lam, q)?)
        })?;
        let p = rs.expand(&sol.p);
        Some((rs, p))
    } else {
        None
    };
    let ref_fn = reference.as_ref().map(|(rs, p)| move |x: f64, y: f64| evaluate(rs, p, x, y));

    let mut rows: Vec<IndicatorRow> = Vec::new();
    for &r in &cfg.degrees {
        for &n in &cfg.mesh_ladder {
            let sp = space(n, r)?;
            let lam = mobility(&sp)?;
            let (row, sol) = man.time(format!("Q{r} n={n}"), || match &ref_fn {
                Some(f) => compare_methods(&sp, &lam, q, Some(f)),
                None => compare_methods(&sp, &lam, q, Some(&manufactured::exact)),
            })?;
            eprintln!(
                "Q{r} n={n}: J_FEM {:.3e}  J_HOCFEM {:.3e}  E_FEM {:.10}  E_HOCFEM {:.10}",
                row.j_fem, row.j_hocfem, row.e_fem, row.e_hocfem
            );
            man.check(format!("J_HOCFEM Q{r} n={n}"), row.j_hocfem, limit);
            if n == finest {
                write_pressure(out, &sp, &sp.expand(&sol.p), &sol.lambda, r)?;
            }
            rows.push(row);
        }
    }
    out.write_str("indicators.csv", &indicator_csv(&rows))?;
    out.write_str("convergence.csv", &convergence_csv(&rows))?;
    Ok(())
}

/// Per-degree errors with successive and least-squares orders.
fn convergence_csv(rows: &[IndicatorRow]) -> String {
    let mut s = String::from("degree,h,errL2,order_L2,errH1,order_H1,errL2corr,order_L2corr\n");
    let mut fits = String::from("degree,fit_L2,fit_H1,fit_L2corr\n");
    let mut degrees: Vec<usize> = rows.iter().map(|r| r.degree).collect();
    degrees.dedup();
    for d in degrees {
        let rs: Vec<&IndicatorRow> = rows.iter().filter(|r| r.degree == d && r.err.is_some()).collect();
        let errs = |r: &IndicatorRow| {
            let e = r.err.expect("filtered");
            [e.l2, e.h1, e.l2_corrected]
        };
        for (k, r) in rs.iter().enumerate() {
            let _ = write!(s, "{d},{:e}", r.h);
            for m in 0..3 {
                let order = match k {
                    0 => String::new(),
                    _ => format!("{:.4}", (errs(rs[k - 1])[m] / errs(r)[m]).ln() / (rs[k - 1].h / r.h).ln()),
                };
                let _ = write!(s, ",{:e},{order}", errs(r)[m]);
            }
            s.push('\n');
        }
        if rs.len() >= 2 {
            let h: Vec<f64> = rs.iter().map(|r| r.h).collect();
            let p: Vec<String> =
                (0..3).map(|m| format!("{:.4}", fit_power_law(&h, &rs.iter().map(|r| errs(r)[m]).collect::<Vec<_>>()).1)).collect();
            let _ = writeln!(fits, "{d},{}", p.join(","));
        }
    }
    format!("{s}\n{fits}")
}

/// Vertex values of `p^h` and element-centre values of `p^h` and `p^h + λ^h`.
fn write_pressure(out: &mut OutputDir, sp: &FemSpace, p: &[f64], lambda: &[f64], r: usize) -> Result<(), Failure> {
    let mesh = &sp.mesh;
    let (nx, ny) = (mesh.nx, mesh.ny);
    let mut vert = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            vert.push(p[sp.dofs.node(r * i, r * j)]);
        }
    }
    out.write_str(&format!("pressure_q{r}_n{nx}.csv"), &matrix_csv(nx + 1, ny + 1, &vert))?;
    let mut centre = Vec::with_capacity(nx * ny);
    let mut corrected = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (x, y) = mesh.element_center(i, j);
            let v = evaluate(sp, p, x, y).0;
            centre.push(v);
            // element centres sit on CV corners; take the CV of the nearest lower-left vertex
            let shift = sp.dual.locate(mesh, x - 0.25 * mesh.hx, y - 0.25 * mesh.hy).map_or(0.0, |k| lambda[k]);
            corrected.push(v + shift);
        }
    }
    let xs: Vec<f64> = (0..=nx).map(|i| i as f64 * mesh.hx).collect();
    let ys: Vec<f64> = (0..=ny).map(|j| j as f64 * mesh.hy).collect();
    out.write_str(
        &format!("pressure_q{r}_n{nx}.vtk"),
        &vtk_rectilinear(&xs, &ys, &[("pressure", &centre), ("pressure_corrected", &corrected)]),
    )?;
    Ok(())
}
