//! Permeability rasters, synthetic media and output files (CSV matrices,
//! legacy VTK rectilinear grids, hashed manifests).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::PrimalMesh;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    /// `x` varies fastest, rows from `y = 0` upwards.
    RowMajor,
    /// `y` varies fastest.
    ColumnMajor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    Linear,
    /// Values stored as `log10(K)`.
    Log10,
}

impl std::str::FromStr for Layout {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "row-major" | "row_major" => Ok(Self::RowMajor),
            "column-major" | "column_major" | "col-major" => Ok(Self::ColumnMajor),
            o => Err(Error::Config(format!("unknown raster layout '{o}'"))),
        }
    }
}

impl std::str::FromStr for Scale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "log10" => Ok(Self::Log10),
            o => Err(Error::Config(format!("unknown raster scale '{o}'"))),
        }
    }
}

/// Positive cell values on an `nx × ny` raster covering the whole domain,
/// stored row-major (`j*nx + i`).
#[derive(Clone, Debug, PartialEq)]
pub struct PermeabilityRaster {
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f64>,
    pub provenance: String,
}

impl PermeabilityRaster {
    pub fn new(nx: usize, ny: usize, values: Vec<f64>, provenance: impl Into<String>) -> Result<Self> {
        if values.len() != nx * ny || nx == 0 || ny == 0 {
            return Err(Error::Parse {
                context: "raster".into(),
                message: format!("expected {}×{} = {} values, got {}", nx, ny, nx * ny, values.len()),
            });
        }
        if let Some((k, v)) = values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::Parse {
                context: "raster".into(),
                message: format!("value {v} at index {k} is not positive and finite"),
            });
        }
        Ok(Self { nx, ny, values, provenance: provenance.into() })
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.nx + i]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values.iter().fold((f64::INFINITY, 0.0), |(a, b), &v| (a.min(v), b.max(v)))
    }

    pub fn contrast(&self) -> f64 {
        let (a, b) = self.min_max();
        b / a
    }

    /// Block-constant resampling onto the elements of `mesh` (value of the
    /// raster cell containing each element centre).
    pub fn resample(&self, mesh: &PrimalMesh) -> Vec<f64> {
        let mut out = Vec::with_capacity(mesh.n_elements());
        for j in 0..mesh.ny {
            for i in 0..mesh.nx {
                let (x, y) = mesh.element_center(i, j);
                let ri = ((x / mesh.lx * self.nx as f64) as usize).min(self.nx - 1);
                let rj = ((y / mesh.ly * self.ny as f64) as usize).min(self.ny - 1);
                out.push(self.at(ri, rj));
            }
        }
        out
    }
}

/// Decodes `nx·ny` whitespace-separated numbers.
pub fn parse_values(text: &str, nx: usize, ny: usize, layout: Layout, scale: Scale, provenance: &str) -> Result<PermeabilityRaster> {
    let mut raw = Vec::with_capacity(nx * ny);
    for (k, tok) in text.split_whitespace().enumerate() {
        let v: f64 = tok.parse().map_err(|_| Error::Parse {
            context: provenance.into(),
            message: format!("token {k} '{tok}' is not a number"),
        })?;
        raw.push(v);
    }
    if raw.len() != nx * ny {
        return Err(Error::Parse {
            context: provenance.into(),
            message: format!("declared {nx}×{ny} = {} values, found {}", nx * ny, raw.len()),
        });
    }
    let decode = |v: f64| match scale {
        Scale::Linear => v,
        Scale::Log10 => 10f64.powf(v),
    };
    let values = match layout {
        Layout::RowMajor => raw.into_iter().map(decode).collect(),
        Layout::ColumnMajor => {
            let mut v = vec![0.0; nx * ny];
            for i in 0..nx {
                for j in 0..ny {
                    v[j * nx + i] = decode(raw[i * ny + j]);
                }
            }
            v
        }
    };
    PermeabilityRaster::new(nx, ny, values, provenance).map_err(|e| match e {
        Error::Parse { message, .. } => Error::Parse { context: provenance.into(), message },
        other => other,
    })
}

/// Reads a raster file: four header lines `nx`, `ny`, layout, scale, then
/// the values. `layout`/`scale` override the header when given.
pub fn load_raster(path: &Path, layout: Option<Layout>, scale: Option<Scale>) -> Result<PermeabilityRaster> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let ctx = path.display().to_string();
    let mut lines = text.lines();
    let mut header = |what: &str| -> Result<String> {
        lines
            .next()
            .map(|l| l.trim().to_string())
            .ok_or_else(|| Error::Parse { context: ctx.clone(), message: format!("missing header line '{what}'") })
    };
    let dim = |s: String, what: &str| -> Result<usize> {
        s.parse::<usize>().map_err(|_| Error::Parse { context: ctx.clone(), message: format!("bad {what} '{s}'") })
    };
    let nx = dim(header("nx")?, "nx")?;
    let ny = dim(header("ny")?, "ny")?;
    let file_layout: Layout = header("layout")?.parse()?;
    let file_scale: Scale = header("scale")?.parse()?;
    let body: Vec<&str> = lines.collect();
    parse_values(&body.join("\n"), nx, ny, layout.unwrap_or(file_layout), scale.unwrap_or(file_scale), &ctx)
}

/// Writes the raster in the header format with round-trip precision.
pub fn save_raster(path: &Path, raster: &PermeabilityRaster, layout: Layout, scale: Scale) -> Result<()> {
    let mut s = format!(
        "{}\n{}\n{}\n{}\n",
        raster.nx,
        raster.ny,
        match layout {
            Layout::RowMajor => "row-major",
            Layout::ColumnMajor => "column-major",
        },
        match scale {
            Scale::Linear => "linear",
            Scale::Log10 => "log10",
        }
    );
    let enc = |v: f64| match scale {
        Scale::Linear => v,
        Scale::Log10 => v.log10(),
    };
    let mut push = |v: f64| {
        let _ = writeln!(s, "{:e}", enc(v));
    };
    match layout {
        Layout::RowMajor => raster.values.iter().for_each(|&v| push(v)),
        Layout::ColumnMajor => {
            for i in 0..raster.nx {
                for j in 0..raster.ny {
                    push(raster.at(i, j));
                }
            }
        }
    }
    fs::write(path, s).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Low-permeability rectangle `[x0, x1] × [y0, y1]` as fractions of the domain.
pub const DEFAULT_BARRIER: [f64; 4] = [0.4, 0.6, 0.375, 0.625];

/// Element permeability with `1/contrast` on elements whose centre lies in
/// the rectangle (given in domain fractions), 1 elsewhere.
pub fn barrier_field(mesh: &PrimalMesh, rect: [f64; 4], contrast: f64) -> Result<Vec<f64>> {
    if !(contrast >= 1.0 && contrast.is_finite()) {
        return Err(Error::Config(format!("barrier contrast must be ≥ 1, got {contrast}")));
    }
    let [x0, x1, y0, y1] = rect;
    if !(0.0..=1.0).contains(&x0) || !(0.0..=1.0).contains(&x1) || !(0.0..=1.0).contains(&y0) || !(0.0..=1.0).contains(&y1) || x0 > x1 || y0 > y1 {
        return Err(Error::Config(format!("barrier strip {rect:?} is not inside the domain")));
    }
    let mut k = Vec::with_capacity(mesh.n_elements());
    for j in 0..mesh.ny {
        for i in 0..mesh.nx {
            let (x, y) = mesh.element_center(i, j);
            let (u, v) = (x / mesh.lx, y / mesh.ly);
            let inside = u > x0 && u < x1 && v > y0 && v < y1;
            k.push(if inside { 1.0 / contrast } else { 1.0 });
        }
    }
    Ok(k)
}

/// Deterministic stand-in for a fluvial SPE10 layer: a smooth log-normal
/// background (log10 K around 0, σ ≈ 1) cut by sinuous high-permeability
/// channels (log10 K ≈ 3.5). Values are in the same loose "millidarcy" range
/// as the benchmark.
pub fn synthetic_channelized(nx: usize, ny: usize, seed: u64) -> PermeabilityRaster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // smooth background: sum of random Fourier modes
    let modes: Vec<(f64, f64, f64, f64)> = (0..24)
        .map(|_| {
            (
                rng.random_range(0.5..6.0),
                rng.random_range(0.5..6.0),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(-1.0..1.0),
            )
        })
        .collect();
    let channels: Vec<(f64, f64, f64, f64, f64)> = (0..5)
        .map(|_| {
            (
                rng.random_range(0.1..0.9),
                rng.random_range(0.05..0.15),
                rng.random_range(1.0..3.0),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.03..0.06),
            )
        })
        .collect();
    let mut values = Vec::with_capacity(nx * ny);
    let norm = (modes.len() as f64 / 2.0).sqrt();
    for j in 0..ny {
        for i in 0..nx {
            let (x, y) = ((i as f64 + 0.5) / nx as f64, (j as f64 + 0.5) / ny as f64);
            let mut g: f64 = modes
                .iter()
                .map(|&(kx, ky, ph, a)| a * (std::f64::consts::TAU * (kx * x + ky * y) + ph).sin())
                .sum::<f64>()
                / norm;
            g += 0.3 * rng.random_range(-1.0..1.0);
            let mut lk = 1.2 * g;
            for &(c, amp, freq, ph, width) in &channels {
                let centre = c + amp * (std::f64::consts::TAU * freq * x + ph).sin();
                if (y - centre).abs() < width {
                    lk = 3.5 + 0.3 * g;
                }
            }
            values.push(10f64.powf(lk.clamp(-3.0, 4.3)));
        }
    }
    PermeabilityRaster::new(nx, ny, values, format!("synthetic channelized log-normal, ChaCha8 seed {seed}"))
        .expect("synthetic values are positive")
}

/// Permeability description used by configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MediumSpec {
    Homogeneous,
    Barrier {
        contrast: f64,
        /// Domain fractions `[x0, x1, y0, y1]`; the default strip when absent.
        #[serde(default)]
        rect: Option<[f64; 4]>,
    },
    Raster {
        path: PathBuf,
        #[serde(default)]
        layout: Option<Layout>,
        #[serde(default)]
        scale: Option<Scale>,
    },
    Synthetic {
        nx: usize,
        ny: usize,
        seed: u64,
    },
}

impl MediumSpec {
    pub fn element_permeability(&self, mesh: &PrimalMesh) -> Result<Vec<f64>> {
        match self {
            Self::Homogeneous => Ok(vec![1.0; mesh.n_elements()]),
            Self::Barrier { contrast, rect } => barrier_field(mesh, rect.unwrap_or(DEFAULT_BARRIER), *contrast),
            Self::Raster { path, layout, scale } => Ok(load_raster(path, *layout, *scale)?.resample(mesh)),
            Self::Synthetic { nx, ny, seed } => Ok(synthetic_channelized(*nx, *ny, *seed).resample(mesh)),
        }
    }

    /// Barrier rectangle in domain coordinates `[x0, x1, y0, y1]`.
    pub fn barrier_rect(&self, lx: f64, ly: f64) -> Option<[f64; 4]> {
        match self {
            Self::Barrier { rect, .. } => {
                let r = rect.unwrap_or(DEFAULT_BARRIER);
                Some([r[0] * lx, r[1] * lx, r[2] * ly, r[3] * ly])
            }
            _ => None,
        }
    }
}

/// CSV matrix, one line per row `j` from the bottom (`values[j*nx + i]`).
pub fn matrix_csv(nx: usize, ny: usize, values: &[f64]) -> String {
    let mut s = String::new();
    for j in 0..ny {
        let row: Vec<String> = (0..nx).map(|i| format!("{:e}", values[j * nx + i])).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// [`matrix_csv`] behind a `# nx=.. ny=.. h=.. t=..` comment line.
pub fn snapshot_csv(nx: usize, ny: usize, h: f64, t: f64, values: &[f64]) -> String {
    format!("# nx={nx} ny={ny} h={h} t={t}\n{}", matrix_csv(nx, ny, values))
}

/// Parses a CSV matrix written by [`matrix_csv`]; returns `(nx, ny, values)`.
pub fn parse_matrix_csv(text: &str) -> Result<(usize, usize, Vec<f64>)> {
    let mut values = Vec::new();
    let mut nx = None;
    let mut ny = 0;
    for (j, line) in text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#')).enumerate() {
        let row: Vec<f64> = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse { context: "csv matrix".into(), message: format!("row {j}: {e}") })?;
        match nx {
            None => nx = Some(row.len()),
            Some(n) if n != row.len() => {
                return Err(Error::Parse { context: "csv matrix".into(), message: format!("row {j} has {} columns, expected {n}", row.len()) })
            }
            _ => {}
        }
        values.extend(row);
        ny += 1;
    }
    Ok((nx.unwrap_or(0), ny, values))
}

/// Legacy-VTK rectilinear grid with cell data.
pub fn vtk_rectilinear(xs: &[f64], ys: &[f64], fields: &[(&str, &[f64])]) -> String {
    let mut s = String::from("# vtk DataFile Version 3.0\nhocle output\nASCII\nDATASET RECTILINEAR_GRID\n");
    let _ = writeln!(s, "DIMENSIONS {} {} 1", xs.len(), ys.len());
    let coords = |v: &[f64]| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(" ");
    let _ = writeln!(s, "X_COORDINATES {} double\n{}", xs.len(), coords(xs));
    let _ = writeln!(s, "Y_COORDINATES {} double\n{}", ys.len(), coords(ys));
    let _ = writeln!(s, "Z_COORDINATES 1 double\n0");
    let ncells = (xs.len() - 1) * (ys.len() - 1);
    let _ = writeln!(s, "CELL_DATA {ncells}");
    for (name, vals) in fields {
        let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
        for v in vals.iter() {
            let _ = writeln!(s, "{v:e}");
        }
    }
    s
}

/// One file of a run's output inventory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Collects written files under an output directory.
#[derive(Debug)]
pub struct OutputDir {
    pub root: PathBuf,
    pub files: Vec<FileEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root.display().to_string(), e))?;
        Ok(Self { root: root.to_path_buf(), files: Vec::new() })
    }

    /// Writes `rel` (relative to the root) and records it; rewriting a path
    /// replaces its entry.
    pub fn write(&mut self, rel: &str, contents: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
        fs::write(&path, contents).map_err(|e| Error::io(path.display().to_string(), e))?;
        let entry = FileEntry { path: rel.to_string(), bytes: contents.len() as u64, sha256: sha256_hex(contents) };
        match self.files.iter_mut().find(|f| f.path == rel) {
            Some(f) => *f = entry,
            None => self.files.push(entry),
        }
        Ok(())
    }

    pub fn write_str(&mut self, rel: &str, contents: &str) -> Result<()> {
        self.write(rel, contents.as_bytes())
    }
}

/// `t,h,rel_mass_err` series.
pub fn mass_error_csv(points: &[crate::coupling::MassErrorPoint]) -> String {
    let mut s = String::from("t,h,rel_mass_err\n");
    for p in points {
        let _ = writeln!(s, "{},{},{:e}", p.t, p.h, p.rel_mass_err);
    }
    s
}

/// Indicator table with columns
/// `degree,h,E_FEM,E_HOCFEM,J_FEM,J_HOCFEM,errL2,errH1,errL2corr`.
pub fn indicator_csv(rows: &[crate::elliptic::IndicatorRow]) -> String {
    let mut s = String::from("degree,h,E_FEM,E_HOCFEM,J_FEM,J_HOCFEM,errL2,errH1,errL2corr\n");
    for r in rows {
        let (a, b, c) = match &r.err {
            Some(e) => (format!("{:e}", e.l2), format!("{:e}", e.h1), format!("{:e}", e.l2_corrected)),
            None => ("".into(), "".into(), "".into()),
        };
        let _ = writeln!(s, "{},{:e},{:.12e},{:.12e},{:e},{:e},{a},{b},{c}", r.degree, r.h, r.e_fem, r.e_hocfem, r.j_fem, r.j_hocfem);
    }
    s
}
