use std::fmt::Write;

use hocle_core::coupling::{
    impes_run, l1_difference, mass_balance_report, restrict_saturation, welge, MassErrorPoint, SimulationConfig, Slab,
    TwoPhaseState,
};
use hocle_core::fields_io::{mass_error_csv, snapshot_csv, vtk_rectilinear, OutputDir};

use crate::config::CoupledConfig;
use crate::manifest::RunManifest;
use crate::Failure;

/// Bound on the relative mass error of every recorded state.
pub const MASS_ERROR_LIMIT: f64 = 1e-10;

/// Values on the `nx × (ny+1)` grid of transport cells (every vertex column
/// except the outlet), row by row from the bottom.
fn on_cv_grid(slab: &Slab, per_cv: impl Fn(usize, usize, usize) -> f64) -> Vec<f64> {
    let mesh = slab.mesh();
    let mut v = Vec::with_capacity(mesh.nx * (mesh.ny + 1));
    for j in 0..=mesh.ny {
        for i in 0..mesh.nx {
            let k = slab.space.dual.cv_of_vertex[mesh.vertex(i, j)].expect("slab CV");
            v.push(per_cv(k, i, j));
        }
    }
    v
}

fn write_frame(out: &mut OutputDir, slab: &Slab, st: &TwoPhaseState) -> Result<(), Failure> {
    let mesh = slab.mesh();
    let (nx, ny, h) = (mesh.nx, mesh.ny, mesh.hx);
    let dir = format!("h{}", slab.cfg.h);
    let s = on_cv_grid(slab, |k, _, _| st.s[k]);
    out.write_str(&format!("{dir}/saturation_t{:06.2}.csv", st.t), &snapshot_csv(nx, ny + 1, h, st.t, &s))?;
    let r = slab.space.degree();
    let p = on_cv_grid(slab, |_, i, j| st.p_full[slab.space.dofs.node(r * i, r * j)]);
    let vel = slab.cell_velocity(&st.face_flux);
    let vx = on_cv_grid(slab, |k, _, _| vel[k][0]);
    let vy = on_cv_grid(slab, |k, _, _| vel[k][1]);
    let xs: Vec<f64> = std::iter::once(0.0).chain((0..nx).map(|i| (i as f64 + 0.5) * h)).collect();
    let ys: Vec<f64> = std::iter::once(0.0).chain((0..ny).map(|j| (j as f64 + 0.5) * h)).chain([mesh.ly]).collect();
    out.write_str(
        &format!("{dir}/frame_t{:06.2}.vtk", st.t),
        &vtk_rectilinear(&xs, &ys, &[("saturation", &s), ("pressure", &p), ("velocity_x", &vx), ("velocity_y", &vy)]),
    )?;
    Ok(())
}

struct MeshRun {
    slab: Slab,
    last: TwoPhaseState,
    mass: Vec<MassErrorPoint>,
}

pub fn run(cfg: &CoupledConfig, out: &mut OutputDir, man: &mut RunManifest) -> Result<(), Failure> {
    man.tolerance("relative_mass_error", MASS_ERROR_LIMIT);
    man.tolerance("cv_flux_imbalance_relative", 1e-10);
    man.tolerance("kkt_relative_residual", hocle_core::elliptic::TOL_LIN);
    let mut runs: Vec<MeshRun> = Vec::new();
    for &h in &cfg.mesh_ladder {
        let slab = Slab::new(SimulationConfig { h, ..cfg.slab.clone() })?;
        let mut written = Ok(());
        let history = man.time(format!("impes h={h}"), || {
            impes_run(&slab, |st| {
                if written.is_ok() {
                    written = write_frame(out, &slab, st);
                }
                Ok(())
            })
        })?;
        written?;
        let mass = mass_balance_report(&slab, &history)?;
        for p in &mass {
            man.check(format!("mass error h={h} t={}", p.t), p.rel_mass_err, MASS_ERROR_LIMIT);
        }
        let last = history.last().expect("at least the final state").clone();
        eprintln!(
            "h={h}: front {:.2} at t={}, relative mass error {:.2e}",
            slab.front_position(&last.s, front_level(&slab)),
            last.t,
            mass.last().map_or(0.0, |p| p.rel_mass_err)
        );
        runs.push(MeshRun { slab, last, mass });
    }
    let all: Vec<MassErrorPoint> = runs.iter().flat_map(|r| r.mass.iter().copied()).collect();
    out.write_str("mass_error.csv", &mass_error_csv(&all))?;
    out.write_str("summary.csv", &summary_csv(&runs))?;
    if runs.len() >= 2 {
        let mut s = String::from("h_coarse,h_fine,l1_difference\n");
        for w in runs.windows(2) {
            let (c, f) = (&w[0], &w[1]);
            let restricted = restrict_saturation(&f.slab, &f.last.s, &c.slab);
            let d = l1_difference(&c.slab, &restricted, &c.last.s);
            let _ = writeln!(s, "{},{},{d:e}", c.slab.cfg.h, f.slab.cfg.h);
        }
        out.write_str("l1_differences.csv", &s)?;
    }
    Ok(())
}

/// Midpoint of the Welge shock (the front sits between `S_f` and `S₀`).
fn front_level(slab: &Slab) -> f64 {
    0.5 * (welge(&slab.model).s_front + slab.cfg.s0)
}

fn summary_csv(runs: &[MeshRun]) -> String {
    let mut s = String::from("h,t,front_position,welge_front,barrier_leakage,water_in,water_out,rel_mass_err\n");
    for r in runs {
        let cfg = &r.slab.cfg;
        // similarity solution: homogeneous slab from S = 0, Darcy velocity q, unit porosity
        let exact = match (&cfg.medium, cfg.s0) {
            (hocle_core::fields_io::MediumSpec::Homogeneous, s0) if s0 == 0.0 => {
                format!("{:.4}", welge(&r.slab.model).shock_speed * cfg.q * r.last.t)
            }
            _ => String::new(),
        };
        let leak = r.slab.barrier_leakage(&r.last.face_flux).map(|l| format!("{l:e}")).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{:.4},{exact},{leak},{:e},{:e},{:e}",
            cfg.h,
            r.last.t,
            r.slab.front_position(&r.last.s, front_level(&r.slab)),
            r.last.inflow,
            r.last.outflow,
            r.mass.last().map_or(0.0, |p| p.rel_mass_err)
        );
    }
    s
}
