//! Run configuration: a TOML file, then command-line overrides, then
//! per-problem defaults filled in by [`Config::resolve`].

use std::path::{Path, PathBuf};

use hocle_core::coupling::SimulationConfig;
use hocle_core::fields_io::MediumSpec;
use hocle_core::hyperbolic::problems::Problem;
use hocle_core::hyperbolic::{FaceMethod, Projection};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Worker threads; all cores when absent.
    pub threads: Option<usize>,
    pub elliptic: EllipticConfig,
    pub hyperbolic: HyperbolicConfig,
    pub coupled: CoupledConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EllipticConfig {
    /// `manufactured` or `spe10`.
    pub problem: String,
    pub degrees: Vec<usize>,
    /// Elements per side.
    pub mesh_ladder: Vec<usize>,
    /// Permeability for `spe10`; the manufactured problem is homogeneous.
    pub medium: Option<MediumSpec>,
    /// Constant forcing of the `spe10` problem.
    pub source: f64,
    /// Degree of the `spe10` reference solution on the finest mesh.
    pub reference_degree: usize,
}

impl Default for EllipticConfig {
    fn default() -> Self {
        Self {
            problem: "manufactured".into(),
            degrees: vec![1, 2, 3],
            mesh_ladder: vec![16, 32, 64],
            medium: None,
            source: 1.0,
            reference_degree: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperbolicConfig {
    /// `advection`, `burgers`, `bl_gravity` or `bl`.
    pub problem: String,
    /// Cells per side.
    pub mesh_ladder: Vec<usize>,
    pub cfl: f64,
    pub t_end: Option<f64>,
    /// Snapshot times besides `t = 0` and `t_end`.
    pub frame_times: Vec<f64>,
    pub face: String,
    /// `tensor` or `edge-strip`; the problem's own choice when absent.
    pub projection: Option<String>,
    pub bl_m: f64,
    pub bl_cg: f64,
}

impl Default for HyperbolicConfig {
    fn default() -> Self {
        Self {
            problem: "advection".into(),
            mesh_ladder: vec![64, 128, 256, 512],
            cfl: 0.67,
            t_end: None,
            frame_times: Vec::new(),
            face: "donor-cell".into(),
            projection: None,
            bl_m: 1.0,
            bl_cg: 5.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoupledConfig {
    /// Mesh sizes `h`; each run replaces `slab.h`.
    pub mesh_ladder: Vec<f64>,
    pub slab: SimulationConfig,
}

impl Default for CoupledConfig {
    fn default() -> Self {
        Self { mesh_ladder: vec![32.0, 16.0, 8.0], slab: SimulationConfig::default() }
    }
}

/// A rejected configuration, naming the offending key.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn bad(key: &str, msg: impl std::fmt::Display) -> ConfigError {
    ConfigError(format!("{key}: {msg}"))
}

/// Command-line values that replace config entries of the active subcommand.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub threads: Option<usize>,
    pub cfl: Option<f64>,
    pub degree: Option<Vec<usize>>,
    pub mesh_ladder: Option<Vec<f64>>,
    pub problem: Option<String>,
    pub medium: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Section {
    Elliptic,
    Hyperbolic,
    Coupled,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError(e.to_string()))
    }

    pub fn apply(&mut self, o: &Overrides, section: Section) -> Result<(), ConfigError> {
        if o.threads.is_some() {
            self.threads = o.threads;
        }
        let integers = |key: &str, v: &[f64]| -> Result<Vec<usize>, ConfigError> {
            v.iter()
                .map(|x| if x.fract() == 0.0 && *x >= 1.0 { Ok(*x as usize) } else { Err(bad(key, format!("expected a positive integer, got {x}"))) })
                .collect()
        };
        match section {
            Section::Elliptic => {
                if let Some(d) = &o.degree {
                    self.elliptic.degrees = d.clone();
                }
                if let Some(m) = &o.mesh_ladder {
                    self.elliptic.mesh_ladder = integers("--mesh-ladder", m)?;
                }
                if let Some(p) = &o.problem {
                    self.elliptic.problem = p.clone();
                }
                if let Some(m) = &o.medium {
                    self.elliptic.medium = Some(parse_medium(m).map_err(|e| bad("--medium", e))?);
                }
                if o.cfl.is_some() {
                    return Err(bad("--cfl", "not used by the elliptic solver"));
                }
            }
            Section::Hyperbolic => {
                if let Some(c) = o.cfl {
                    self.hyperbolic.cfl = c;
                }
                if let Some(m) = &o.mesh_ladder {
                    self.hyperbolic.mesh_ladder = integers("--mesh-ladder", m)?;
                }
                if let Some(p) = &o.problem {
                    self.hyperbolic.problem = p.clone();
                }
                if o.degree.is_some() {
                    return Err(bad("--degree", "not used by the transport solver"));
                }
                if o.medium.is_some() {
                    return Err(bad("--medium", "not used by the transport solver"));
                }
            }
            Section::Coupled => {
                if let Some(c) = o.cfl {
                    self.coupled.slab.cfl = c;
                }
                if let Some(m) = &o.mesh_ladder {
                    self.coupled.mesh_ladder = m.clone();
                }
                if let Some(d) = &o.degree {
                    match d.as_slice() {
                        [r] => self.coupled.slab.degree = *r,
                        _ => return Err(bad("--degree", "coupled runs take a single degree")),
                    }
                }
                if let Some(m) = &o.medium {
                    self.coupled.slab.medium = parse_medium(m).map_err(|e| bad("--medium", e))?;
                }
                if o.problem.is_some() {
                    return Err(bad("--problem", "coupled runs are selected by --medium"));
                }
            }
        }
        Ok(())
    }

    /// Validates the active section and fills in problem-dependent defaults.
    pub fn resolve(&mut self, section: Section) -> Result<(), ConfigError> {
        if self.threads == Some(0) {
            return Err(bad("threads", "must be at least 1"));
        }
        match section {
            Section::Elliptic => self.elliptic.resolve(),
            Section::Hyperbolic => self.hyperbolic.resolve(),
            Section::Coupled => self.coupled.resolve(),
        }
    }
}

impl EllipticConfig {
    pub fn is_spe10(&self) -> bool {
        self.problem == "spe10"
    }

    fn resolve(&mut self) -> Result<(), ConfigError> {
        match self.problem.as_str() {
            "manufactured" => match &self.medium {
                None => self.medium = Some(MediumSpec::Homogeneous),
                Some(MediumSpec::Homogeneous) => {}
                Some(_) => return Err(bad("elliptic.medium", "the manufactured problem is defined for a homogeneous medium")),
            },
            "spe10" => match &self.medium {
                None => self.medium = Some(MediumSpec::Synthetic { nx: 64, ny: 64, seed: 10 }),
                Some(MediumSpec::Raster { path, .. }) if !path.exists() => {
                    return Err(bad("elliptic.medium.path", format!("raster file {} not found", path.display())))
                }
                Some(_) => {}
            },
            other => return Err(bad("elliptic.problem", format!("unknown problem '{other}' (manufactured | spe10)"))),
        }
        if self.degrees.is_empty() {
            return Err(bad("elliptic.degrees", "empty"));
        }
        if let Some(r) = self.degrees.iter().find(|r| !(1..=hocle_core::grid::MAX_DEGREE).contains(*r)) {
            return Err(bad("elliptic.degrees", format!("degree {r} outside 1..={}", hocle_core::grid::MAX_DEGREE)));
        }
        if self.mesh_ladder.is_empty() || self.mesh_ladder.iter().any(|&n| n < 2) {
            return Err(bad("elliptic.mesh_ladder", "needs at least one mesh with 2 or more elements per side"));
        }
        if !(1..=hocle_core::grid::MAX_DEGREE).contains(&self.reference_degree) {
            return Err(bad("elliptic.reference_degree", format!("degree {} not supported", self.reference_degree)));
        }
        if !self.source.is_finite() {
            return Err(bad("elliptic.source", "must be finite"));
        }
        self.mesh_ladder.sort_unstable();
        self.mesh_ladder.dedup();
        Ok(())
    }
}

impl HyperbolicConfig {
    pub fn problem(&self) -> Problem {
        self.problem.parse().expect("validated by resolve")
    }

    pub fn face_method(&self) -> FaceMethod {
        self.face.parse().expect("validated by resolve")
    }

    pub fn projection_choice(&self) -> Option<Projection> {
        self.projection.as_ref().map(|p| p.parse().expect("validated by resolve"))
    }

    fn resolve(&mut self) -> Result<(), ConfigError> {
        let problem: Problem = self.problem.parse().map_err(|e| bad("hyperbolic.problem", e))?;
        self.problem = problem.name().into();
        self.face.parse::<FaceMethod>().map_err(|e| bad("hyperbolic.face", e))?;
        if let Some(p) = &self.projection {
            p.parse::<Projection>().map_err(|e| bad("hyperbolic.projection", e))?;
        }
        if !(self.cfl > 0.0 && self.cfl < 1.0) {
            return Err(bad("hyperbolic.cfl", format!("must lie in (0,1), got {}", self.cfl)));
        }
        if self.mesh_ladder.is_empty() || self.mesh_ladder.iter().any(|&n| !(2..=4096).contains(&n)) {
            return Err(bad("hyperbolic.mesh_ladder", "grid sizes must lie in 2..=4096"));
        }
        let t_end = *self.t_end.get_or_insert(problem.default_t_end());
        if !(t_end > 0.0 && t_end.is_finite()) {
            return Err(bad("hyperbolic.t_end", "must be positive"));
        }
        if let Some(t) = self.frame_times.iter().find(|t| !(**t > 0.0 && **t <= t_end)) {
            return Err(bad("hyperbolic.frame_times", format!("{t} outside (0, t_end]")));
        }
        if !(self.bl_m > 0.0) {
            return Err(bad("hyperbolic.bl_m", "viscosity ratio must be positive"));
        }
        if !self.bl_cg.is_finite() {
            return Err(bad("hyperbolic.bl_cg", "must be finite"));
        }
        self.frame_times.sort_by(f64::total_cmp);
        self.frame_times.dedup();
        Ok(())
    }
}

impl CoupledConfig {
    fn resolve(&mut self) -> Result<(), ConfigError> {
        if self.mesh_ladder.is_empty() {
            self.mesh_ladder = vec![self.slab.h];
        }
        if self.mesh_ladder.iter().any(|h| !(*h > 0.0)) {
            return Err(bad("coupled.mesh_ladder", "mesh sizes must be positive"));
        }
        // coarse to fine
        self.mesh_ladder.sort_by(|a, b| b.total_cmp(a));
        self.mesh_ladder.dedup();
        if let MediumSpec::Raster { path, .. } = &self.slab.medium {
            if !path.exists() {
                return Err(bad("coupled.slab.medium.path", format!("raster file {} not found", path.display())));
            }
        }
        for &h in &self.mesh_ladder {
            let cfg = SimulationConfig { h, ..self.slab.clone() };
            cfg.validate().map_err(|e| bad("coupled.slab", format!("{e} (h = {h})")))?;
        }
        self.slab.h = self.mesh_ladder[0];
        Ok(())
    }
}

/// `homogeneous`, `barrier[:contrast]`, `synthetic[:seed]` or `raster:<path>`.
pub fn parse_medium(s: &str) -> Result<MediumSpec, String> {
    let (kind, arg) = match s.split_once(':') {
        Some((k, a)) => (k, Some(a)),
        None => (s, None),
    };
    match (kind, arg) {
        ("homogeneous", None) => Ok(MediumSpec::Homogeneous),
        ("barrier", a) => {
            let contrast = match a {
                Some(a) => a.parse::<f64>().map_err(|e| format!("barrier contrast '{a}': {e}"))?,
                None => 1e4,
            };
            Ok(MediumSpec::Barrier { contrast, rect: None })
        }
        ("synthetic", a) => {
            let seed = match a {
                Some(a) => a.parse::<u64>().map_err(|e| format!("synthetic seed '{a}': {e}"))?,
                None => 10,
            };
            Ok(MediumSpec::Synthetic { nx: 64, ny: 64, seed })
        }
        ("raster", Some(p)) if !p.is_empty() => Ok(MediumSpec::Raster { path: PathBuf::from(p), layout: None, scale: None }),
        _ => Err(format!("unknown medium '{s}' (homogeneous | barrier[:contrast] | synthetic[:seed] | raster:<path>)")),
    }
}

/// Comma-separated list of numbers.
pub fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    s.split(',').map(|t| t.trim().parse::<T>().map_err(|e| format!("'{t}': {e}"))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        assert_eq!(Config::parse("").unwrap(), Config::default());
    }

    #[test]
    fn unknown_keys_are_named() {
        let e = Config::parse("[hyperbolic]\nproblm = \"burgers\"\n").unwrap_err();
        assert!(e.0.contains("problm"), "{e}");
        let e = Config::parse("[coupled.slab]\nq = \"fast\"\n").unwrap_err();
        assert!(e.0.contains("q = \"fast\""), "{e}");
    }

    #[test]
    fn semantic_errors_name_the_key() {
        let mut c = Config::parse("[hyperbolic]\ncfl = 1.5\n").unwrap();
        assert!(c.resolve(Section::Hyperbolic).unwrap_err().0.starts_with("hyperbolic.cfl"));
        let mut c = Config::parse("[elliptic]\ndegrees = [1, 9]\n").unwrap();
        assert!(c.resolve(Section::Elliptic).unwrap_err().0.starts_with("elliptic.degrees"));
        let mut c = Config::parse("[coupled.slab]\nmu_w = -1.0\n").unwrap();
        assert!(c.resolve(Section::Coupled).unwrap_err().0.starts_with("coupled.slab"));
        let mut c = Config::parse("[elliptic]\nproblem = \"spe10\"\nmedium = { kind = \"raster\", path = \"/nonexistent/k.txt\" }\n").unwrap();
        assert!(c.resolve(Section::Elliptic).unwrap_err().0.starts_with("elliptic.medium.path"));
    }

    #[test]
    fn defaults_are_filled_in() {
        let mut c = Config::default();
        c.resolve(Section::Hyperbolic).unwrap();
        assert_eq!(c.hyperbolic.t_end, Some(1.0));
        assert_eq!(c.hyperbolic.problem, "linear_advection");
        c.elliptic.problem = "spe10".into();
        c.resolve(Section::Elliptic).unwrap();
        assert_eq!(c.elliptic.medium, Some(MediumSpec::Synthetic { nx: 64, ny: 64, seed: 10 }));
    }

    #[test]
    fn overrides() {
        let mut c = Config::default();
        let o = Overrides { cfl: Some(0.4), mesh_ladder: Some(vec![8.0, 4.0]), medium: Some("barrier:100".into()), degree: Some(vec![2]), ..Default::default() };
        c.apply(&o, Section::Coupled).unwrap();
        c.resolve(Section::Coupled).unwrap();
        assert_eq!(c.coupled.slab.cfl, 0.4);
        assert_eq!(c.coupled.slab.degree, 2);
        assert_eq!(c.coupled.mesh_ladder, vec![8.0, 4.0]);
        assert_eq!(c.coupled.slab.medium, MediumSpec::Barrier { contrast: 100.0, rect: None });
        let o = Overrides { mesh_ladder: Some(vec![1.5]), ..Default::default() };
        assert!(c.apply(&o, Section::Hyperbolic).unwrap_err().0.starts_with("--mesh-ladder"));
        assert!(parse_medium("granite").is_err());
        assert_eq!(parse_list::<f64>("8, 4,2").unwrap(), vec![8.0, 4.0, 2.0]);
    }
}
