//! Configuration files, design files, CSV/SVG writers and the command-line
//! front end of the `mssmpc` binary.
//!
//! Exit codes: 0 success, 1 configuration error, 2 infeasible design,
//! 3 controller infeasibility at run time.

use std::io;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::baseline::{IsController, IsOptions};
use crate::controller::{MsOptions, OcpSolution, Strategy};
use crate::error::{Error, Result};
use crate::linalg::{self, dmatrix_from_rows, dmatrix_to_rows, vec_to_std};
use crate::lqr::LqrResult;
use crate::model::{LinearSystem, Polytope};
use crate::offline::{self, Certificate, DesignArtifacts, DesignSpec, NoiseFamily, ValidationReport};
use crate::sim::{self, BoundRow, Controller, ControllerSpec, McOptions, McSummary};
use crate::socp::SolverStatus;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DESIGN: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;

/// Tag written into every design file.
pub const DESIGN_FORMAT: &str = "mssmpc-design/1";

const DEFAULT_EPISODES: usize = 1000;
const DEFAULT_LAMBDA_GRID: usize = 200;

// ---------------------------------------------------------------------------
// run configuration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "Gamma_w")]
    pub gamma_w: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSection {
    #[serde(rename = "Hx")]
    pub h_x: Vec<Vec<f64>>,
    pub hx: Vec<f64>,
    #[serde(rename = "Hu")]
    pub h_u: Vec<Vec<f64>>,
    pub hu: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSection {
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSection {
    #[serde(default)]
    pub lambda: Option<f64>,
    pub eps: f64,
    pub eta: f64,
    #[serde(rename = "N")]
    pub horizon: usize,
    #[serde(default = "default_family")]
    pub family: String,
    #[serde(rename = "W_x", default)]
    pub w_x: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_strategy")]
    pub strategy: String,
    #[serde(default)]
    pub lambda_grid: Option<usize>,
}

fn default_family() -> String {
    "gaussian".into()
}

fn default_strategy() -> String {
    "A".into()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default)]
    pub episodes: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub x0: Vec<Vec<f64>>,
}

/// The JSON run configuration. Build with [`RunConfig::from_json`] or
/// [`RunConfig::load`], which validate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSection,
    pub constraints: ConstraintSection,
    pub weights: WeightSection,
    pub design: DesignSection,
    #[serde(default)]
    pub sim: SimSection,
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

fn matrix(rows: &[Vec<f64>], name: &str, shape: (usize, usize)) -> Result<DMatrix<f64>> {
    let m = dmatrix_from_rows(rows).map_err(|e| Error::Config(format!("{name}: {e}")))?;
    if (m.nrows(), m.ncols()) != shape {
        return Err(Error::Config(format!(
            "{name} is {}x{}, expected {}x{}",
            m.nrows(),
            m.ncols(),
            shape.0,
            shape.1
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config(format!("{name} has non-finite entries")));
    }
    Ok(m)
}

fn rows_of(rows: &[Vec<f64>]) -> usize {
    rows.len()
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn state_dim(&self) -> usize {
        rows_of(&self.system.a)
    }

    pub fn input_dim(&self) -> usize {
        self.system.b.first().map_or(0, |r| r.len())
    }

    /// Checks shapes and ranges; every failure is [`Error::Config`].
    pub fn validate(&self) -> Result<()> {
        self.design_spec().map(|_| ())?;
        let d = &self.design;
        if !(d.eps > 0.0 && d.eps < 1.0) {
            return Err(Error::Config(format!("design.eps = {} must lie in (0, 1)", d.eps)));
        }
        if d.horizon < 1 {
            return Err(Error::Config("design.N must be at least 1".into()));
        }
        if !(d.eta > 0.0 && d.eta.is_finite()) {
            return Err(Error::Config(format!("design.eta = {} must be positive", d.eta)));
        }
        if let Some(l) = d.lambda {
            if !(l > 0.0 && l < 1.0) {
                return Err(Error::Config(format!("design.lambda = {l} must lie in (0, 1)")));
            }
        }
        if d.lambda_grid == Some(0) {
            return Err(Error::Config("design.lambda_grid must be at least 1".into()));
        }
        self.strategy()?;
        let s = &self.sim;
        if s.horizon == Some(0) {
            return Err(Error::Config("sim.horizon must be at least 1".into()));
        }
        if s.episodes == Some(0) {
            return Err(Error::Config("sim.episodes must be at least 1".into()));
        }
        let n = self.state_dim();
        if let Some(x) = s.x0.iter().find(|x| x.len() != n || x.iter().any(|v| !v.is_finite())) {
            return Err(Error::Config(format!("sim.x0 entry {x:?} is not a finite {n}-vector")));
        }
        Ok(())
    }

    pub fn strategy(&self) -> Result<Strategy> {
        self.design.strategy.parse().map_err(config_err)
    }

    /// Inputs of the offline pipeline.
    pub fn design_spec(&self) -> Result<DesignSpec> {
        let n = self.state_dim();
        let m = self.input_dim();
        if n == 0 || m == 0 {
            return Err(Error::Config("A and B must be non-empty".into()));
        }
        let a = matrix(&self.system.a, "A", (n, n))?;
        let b = matrix(&self.system.b, "B", (n, m))?;
        let g = matrix(&self.system.gamma_w, "Gamma_w", (n, n))?;
        let c = &self.constraints;
        let hx = matrix(&c.h_x, "Hx", (rows_of(&c.h_x), n))?;
        let hu = matrix(&c.h_u, "Hu", (rows_of(&c.h_u), m))?;
        if c.hx.len() != hx.nrows() || c.hu.len() != hu.nrows() {
            return Err(Error::Config("hx/hu lengths must match the rows of Hx/Hu".into()));
        }
        let q = matrix(&self.weights.q, "Q", (n, n))?;
        let r = matrix(&self.weights.r, "R", (m, m))?;
        let w_x = self.design.w_x.as_ref().map(|w| matrix(w, "W_x", (n, n))).transpose()?;
        let family: NoiseFamily = self.design.family.parse().map_err(config_err)?;
        let system = LinearSystem::new(a, b, g).map_err(config_err)?;
        let state_constraints = Polytope::new(hx, DVector::from_vec(c.hx.clone())).map_err(config_err)?;
        let input_constraints = Polytope::new(hu, DVector::from_vec(c.hu.clone())).map_err(config_err)?;
        Ok(DesignSpec {
            system,
            state_constraints,
            input_constraints,
            q,
            r,
            eps: self.design.eps,
            eta: self.design.eta,
            horizon: self.design.horizon,
            family,
            lambda: self.design.lambda,
            w_x,
            lambda_grid: self.design.lambda_grid.unwrap_or(DEFAULT_LAMBDA_GRID),
        })
    }
}

// ---------------------------------------------------------------------------
// design files

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateFile {
    pub mu: f64,
    pub beta: f64,
}

/// Serialized [`DesignArtifacts`]; matrices are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignFile {
    pub format: String,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "Gamma_w")]
    pub gamma_w: Vec<Vec<f64>>,
    #[serde(rename = "Hx")]
    pub h_x: Vec<Vec<f64>>,
    pub hx: Vec<f64>,
    #[serde(rename = "Hu")]
    pub h_u: Vec<Vec<f64>>,
    pub hu: Vec<f64>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
    #[serde(rename = "K")]
    pub k: Vec<Vec<f64>>,
    #[serde(rename = "P")]
    pub p: Vec<Vec<f64>>,
    #[serde(rename = "A_K")]
    pub a_k: Vec<Vec<f64>>,
    #[serde(rename = "W_x")]
    pub w_x: Vec<Vec<f64>>,
    #[serde(rename = "W_u")]
    pub w_u: Vec<Vec<f64>>,
    pub lambda: f64,
    pub rho: f64,
    pub r_x: f64,
    pub r_u: f64,
    pub r_xu: f64,
    pub eps: f64,
    pub eta: f64,
    #[serde(rename = "N")]
    pub horizon: usize,
    pub family: String,
    pub certificate: Option<CertificateFile>,
}

impl DesignFile {
    pub fn from_artifacts(d: &DesignArtifacts) -> Self {
        let rows = dmatrix_to_rows;
        Self {
            format: DESIGN_FORMAT.into(),
            a: rows(d.system.a()),
            b: rows(d.system.b()),
            gamma_w: rows(d.system.gamma_w()),
            h_x: rows(d.state_constraints.h()),
            hx: vec_to_std(d.state_constraints.offsets()),
            h_u: rows(d.input_constraints.h()),
            hu: vec_to_std(d.input_constraints.offsets()),
            q: rows(&d.q),
            r: rows(&d.r),
            k: rows(&d.lqr.k),
            p: rows(&d.lqr.p),
            a_k: rows(&d.lqr.a_k),
            w_x: rows(&d.w_x),
            w_u: rows(&d.w_u),
            lambda: d.lambda,
            rho: d.rho,
            r_x: d.r_x,
            r_u: d.r_u,
            r_xu: d.r_xu,
            eps: d.eps,
            eta: d.eta,
            horizon: d.horizon,
            family: d.family.to_string(),
            certificate: d.certificate.map(|c| CertificateFile { mu: c.mu, beta: c.beta }),
        }
    }

    pub fn to_artifacts(&self) -> Result<DesignArtifacts> {
        if self.format != DESIGN_FORMAT {
            return Err(Error::Config(format!("unknown design format '{}'", self.format)));
        }
        let n = rows_of(&self.a);
        let m = self.b.first().map_or(0, |r| r.len());
        let system = LinearSystem::new(
            matrix(&self.a, "A", (n, n))?,
            matrix(&self.b, "B", (n, m))?,
            matrix(&self.gamma_w, "Gamma_w", (n, n))?,
        )
        .map_err(config_err)?;
        let state_constraints =
            Polytope::new(matrix(&self.h_x, "Hx", (rows_of(&self.h_x), n))?, DVector::from_vec(self.hx.clone()))
                .map_err(config_err)?;
        let input_constraints =
            Polytope::new(matrix(&self.h_u, "Hu", (rows_of(&self.h_u), m))?, DVector::from_vec(self.hu.clone()))
                .map_err(config_err)?;
        Ok(DesignArtifacts {
            system,
            state_constraints,
            input_constraints,
            q: matrix(&self.q, "Q", (n, n))?,
            r: matrix(&self.r, "R", (m, m))?,
            lqr: LqrResult {
                k: matrix(&self.k, "K", (m, n))?,
                p: matrix(&self.p, "P", (n, n))?,
                a_k: matrix(&self.a_k, "A_K", (n, n))?,
            },
            w_x: matrix(&self.w_x, "W_x", (n, n))?,
            w_u: matrix(&self.w_u, "W_u", (m, m))?,
            lambda: self.lambda,
            rho: self.rho,
            r_x: self.r_x,
            r_u: self.r_u,
            r_xu: self.r_xu,
            eps: self.eps,
            eta: self.eta,
            horizon: self.horizon,
            family: self.family.parse().map_err(config_err)?,
            certificate: self.certificate.as_ref().map(|c| Certificate { mu: c.mu, beta: c.beta }),
        })
    }
}

/// Writes every float with 17 significant digits on top of the pretty layout.
struct Digits17(serde_json::ser::PrettyFormatter<'static>);

impl serde_json::ser::Formatter for Digits17 {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }
    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Pretty JSON with 17-significant-digit floats.
pub fn to_json_17<T: Serialize>(value: &T) -> Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, Digits17(serde_json::ser::PrettyFormatter::new()));
    value.serialize(&mut ser).map_err(config_err)?;
    out.push(b'\n');
    String::from_utf8(out).map_err(config_err)
}

pub fn design_to_json(d: &DesignArtifacts) -> Result<String> {
    if let Some(bad) = [d.lambda, d.rho, d.r_x, d.r_u, d.r_xu, d.eps, d.eta].iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("design has a non-finite scalar {bad}")));
    }
    to_json_17(&DesignFile::from_artifacts(d))
}

pub fn design_from_json(text: &str) -> Result<DesignArtifacts> {
    let file: DesignFile = serde_json::from_str(text).map_err(config_err)?;
    file.to_artifacts()
}

pub fn save_design(d: &DesignArtifacts, path: &Path) -> Result<()> {
    write_file(path, design_to_json(d)?.as_bytes())
}

pub fn load_design(path: &Path) -> Result<DesignArtifacts> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    design_from_json(&text)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// CSV and SVG

fn csv_bytes(header: Vec<String>, rows: Vec<Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).map_err(|e| Error::Io(e.to_string()))?;
    for r in rows {
        w.write_record(&r).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Io(e.to_string()))
}

fn num(v: f64) -> String {
    format!("{v}")
}

/// `episode,k,x1..xn,u1..um,gamma_x,gamma_u,mode,stage_cost`. The row at
/// `k = horizon` carries the final state and leaves the other fields empty.
pub fn trajectories_csv(summary: &McSummary) -> Result<Vec<u8>> {
    let n = summary.x0.len();
    let m = summary.traces.first().and_then(|t| t.steps.first()).map_or(0, |s| s.u.len());
    let mut header: Vec<String> = vec!["episode".into(), "k".into()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=m).map(|i| format!("u{i}")));
    header.extend(["gamma_x", "gamma_u", "mode", "stage_cost"].map(String::from));
    let mut rows = Vec::new();
    for t in &summary.traces {
        for (k, x) in t.states.iter().enumerate() {
            let mut r = vec![t.episode.to_string(), k.to_string()];
            r.extend(x.iter().map(|v| num(*v)));
            match t.steps.get(k) {
                Some(s) => {
                    r.extend(s.u.iter().map(|v| num(*v)));
                    r.extend([num(s.gamma_x), num(s.gamma_u), s.mode.to_string(), num(s.stage_cost)]);
                }
                None => r.extend(std::iter::repeat_n(String::new(), m + 4)),
            }
            rows.push(r);
        }
    }
    csv_bytes(header, rows)
}

/// `controller,x0_1..x0_n,horizon,episodes,seed,successes,failures,j_mean,j_std`.
pub fn summary_csv(summary: &McSummary) -> Result<Vec<u8>> {
    let mut header: Vec<String> = vec!["controller".into()];
    header.extend((1..=summary.x0.len()).map(|i| format!("x0_{i}")));
    header.extend(["horizon", "episodes", "seed", "successes", "failures", "j_mean", "j_std"].map(String::from));
    let mut row = vec![summary.controller.clone()];
    row.extend(summary.x0.iter().map(|v| num(*v)));
    row.extend([
        summary.horizon.to_string(),
        summary.episodes.to_string(),
        summary.seed.to_string(),
        summary.n_sim().to_string(),
        summary.failures.len().to_string(),
        num(summary.j_mean),
        num(summary.j_std),
    ]);
    csv_bytes(header, vec![row])
}

/// `k,f_x,f_u,f_x_polytope,f_u_polytope,mean_gamma_x,mean_gamma_u`; input
/// columns are empty at `k = horizon`.
pub fn frequencies_csv(summary: &McSummary) -> Result<Vec<u8>> {
    let header = ["k", "f_x", "f_u", "f_x_polytope", "f_u_polytope", "mean_gamma_x", "mean_gamma_u"]
        .map(String::from)
        .to_vec();
    let n = summary.n_sim();
    let freq = |bad: usize| if n == 0 { 0.0 } else { (n - bad) as f64 / n as f64 };
    let rows = (0..=summary.horizon)
        .map(|k| {
            let mut r = vec![k.to_string(), num(freq(summary.state_violations[k]))];
            let input = |v: &[usize]| v.get(k).map_or(String::new(), |b| num(freq(*b)));
            r.push(input(&summary.input_violations));
            r.push(num(freq(summary.state_polytope_violations[k])));
            r.push(input(&summary.input_polytope_violations));
            r.push(summary.mean_gamma_x.get(k).map_or(String::new(), |g| num(*g)));
            r.push(summary.mean_gamma_u.get(k).map_or(String::new(), |g| num(*g)));
            r
        })
        .collect();
    csv_bytes(header, rows)
}

/// `ell,p_x,p_u,f_x,f_u`.
pub fn bounds_csv(rows: &[BoundRow]) -> Result<Vec<u8>> {
    let header = ["ell", "p_x", "p_u", "f_x", "f_u"].map(String::from).to_vec();
    let body = rows
        .iter()
        .map(|r| vec![r.ell.to_string(), num(r.p_x), num(r.p_u), num(r.f_x), num(r.f_u)])
        .collect();
    csv_bytes(header, body)
}

/// `bin_left,bin_right,count`.
pub fn histogram_csv(h: &sim::Histogram) -> Result<Vec<u8>> {
    let header = ["bin_left", "bin_right", "count"].map(String::from).to_vec();
    let body = h
        .counts
        .iter()
        .enumerate()
        .map(|(i, c)| vec![num(h.edges[i]), num(h.edges[i + 1]), c.to_string()])
        .collect();
    csv_bytes(header, body)
}

/// Paired costs of a comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub ms: McSummary,
    pub is: McSummary,
}

impl Comparison {
    /// Episodes where both controllers succeeded: `(episode, J_ms, J_is)`.
    pub fn pairs(&self) -> Vec<(usize, f64, f64)> {
        let a = self.ms.costs_by_episode();
        let b = self.is.costs_by_episode();
        a.iter()
            .zip(&b)
            .enumerate()
            .filter_map(|(e, (x, y))| Some((e, (*x)?, (*y)?)))
            .collect()
    }

    /// `mean(J_ms) / mean(J_is)` over the paired episodes.
    pub fn mean_ratio(&self) -> f64 {
        let p = self.pairs();
        let ms: f64 = p.iter().map(|t| t.1).sum();
        let is: f64 = p.iter().map(|t| t.2).sum();
        ms / is
    }
}

/// `episode,j_ms,j_is,ratio`; a failed side leaves its cells empty.
pub fn compare_csv(c: &Comparison) -> Result<Vec<u8>> {
    let header = ["episode", "j_ms", "j_is", "ratio"].map(String::from).to_vec();
    let a = c.ms.costs_by_episode();
    let b = c.is.costs_by_episode();
    let cell = |v: Option<f64>| v.map_or(String::new(), num);
    let rows = a
        .iter()
        .zip(&b)
        .enumerate()
        .map(|(e, (x, y))| {
            let ratio = x.zip(*y).map(|(x, y)| x / y);
            vec![e.to_string(), cell(*x), cell(*y), cell(ratio)]
        })
        .collect();
    csv_bytes(header, rows)
}

/// Cost histogram and, for planar states, up to 50 trajectories over the
/// outlines of `E_{W_x}(r_x)` and `E_{W_x}(r_xu)`.
pub fn report_svg(summary: &McSummary, design: &DesignArtifacts) -> String {
    let (w, h, pad) = (420.0, 320.0, 40.0);
    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"11\">\n",
        2.0 * w
    ));
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");

    // histogram
    let hist = &summary.histogram;
    let max_count = hist.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let bins = hist.counts.len() as f64;
    let bar_w = (w - 2.0 * pad) / bins;
    s.push_str(&format!(
        "<text x=\"{pad}\" y=\"20\">J_MPC histogram ({}, {} episodes, mean {:.1})</text>\n",
        summary.controller,
        summary.n_sim(),
        summary.j_mean
    ));
    for (i, c) in hist.counts.iter().enumerate() {
        let bh = (h - 2.0 * pad) * *c as f64 / max_count;
        s.push_str(&format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"steelblue\" stroke=\"white\"/>\n",
            pad + bar_w * i as f64,
            h - pad - bh,
            bar_w,
            bh
        ));
    }
    s.push_str(&format!(
        "<text x=\"{pad}\" y=\"{}\">{:.1}</text><text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.1}</text>\n",
        h - pad + 14.0,
        hist.edges[0],
        w - pad,
        h - pad + 14.0,
        hist.edges[hist.edges.len() - 1]
    ));

    if design.state_dim() == 2 {
        let outline = |radius: f64| -> Vec<(f64, f64)> {
            let l = linalg::psd_factor(&design.w_x);
            (0..=96)
                .map(|i| {
                    let th = std::f64::consts::TAU * i as f64 / 96.0;
                    let p = &l * DVector::from_column_slice(&[th.cos(), th.sin()]) * radius;
                    (p[0], p[1])
                })
                .collect()
        };
        let ellipses = [(outline(design.r_x), "gray"), (outline(design.r_xu), "seagreen")];
        let paths: Vec<Vec<(f64, f64)>> = summary
            .traces
            .iter()
            .take(50)
            .map(|t| t.states.iter().map(|x| (x[0], x[1])).collect())
            .collect();
        let all = ellipses.iter().flat_map(|e| e.0.iter()).chain(paths.iter().flatten());
        let (mut lo, mut hi) = ((f64::INFINITY, f64::INFINITY), (f64::NEG_INFINITY, f64::NEG_INFINITY));
        for &(a, b) in all {
            lo = (lo.0.min(a), lo.1.min(b));
            hi = (hi.0.max(a), hi.1.max(b));
        }
        let scale = ((w - 2.0 * pad) / (hi.0 - lo.0)).min((h - 2.0 * pad) / (hi.1 - lo.1));
        let map = |(a, b): (f64, f64)| (w + pad + (a - lo.0) * scale, h - pad - (b - lo.1) * scale);
        let polyline = |pts: &[(f64, f64)], color: &str, width: f64| {
            let body: Vec<String> = pts
                .iter()
                .map(|p| {
                    let (x, y) = map(*p);
                    format!("{x:.2},{y:.2}")
                })
                .collect();
            format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"{width}\"/>\n",
                body.join(" ")
            )
        };
        s.push_str(&format!("<text x=\"{}\" y=\"20\">state trajectories (x1, x2)</text>\n", w + pad));
        for (e, color) in &ellipses {
            s.push_str(&polyline(e, color, 1.5));
        }
        for p in &paths {
            s.push_str(&polyline(p, "crimson", 0.6));
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Writes the simulation bundle into `dir`.
pub fn write_bundle(dir: &Path, summary: &McSummary, design: &DesignArtifacts) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_file(&dir.join("trajectories.csv"), &trajectories_csv(summary)?)?;
    write_file(&dir.join("summary.csv"), &summary_csv(summary)?)?;
    write_file(&dir.join("frequencies.csv"), &frequencies_csv(summary)?)?;
    write_file(&dir.join("histogram.csv"), &histogram_csv(&summary.histogram)?)?;
    if let Some(sol0) = summary.first_solution() {
        write_file(&dir.join("bounds.csv"), &bounds_csv(&sim::bound_table(&summary.traces, sol0, design))?)?;
    }
    write_file(&dir.join("report.svg"), report_svg(summary, design).as_bytes())
}

// ---------------------------------------------------------------------------
// command line

#[derive(Debug, Parser)]
#[command(name = "mssmpc", version, about = "Measured-state stochastic MPC: design, solve, simulate, compare")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the offline design and write the design file.
    Design(CommonArgs),
    /// Solve the optimal-control problem once at --x0.
    Solve(RunArgs),
    /// Monte-Carlo campaign; writes the CSV bundle and report.svg.
    Simulate(RunArgs),
    /// Paired MS vs IS campaign on identical noise streams.
    Compare(RunArgs),
    /// Predicted bounds against observed frequencies, per prediction step.
    Bounds(RunArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Design file written by `design`.
    #[arg(long)]
    pub design: Option<PathBuf>,
    /// Output file (design) or directory (other commands).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ControllerKind {
    Ms,
    Is,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum, default_value_t = ControllerKind::Ms)]
    pub controller: ControllerKind,
    #[arg(long, value_parser = parse_strategy)]
    pub strategy: Option<Strategy>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Initial state, e.g. "-40,40".
    #[arg(long, allow_hyphen_values = true, value_parser = parse_state)]
    pub x0: Option<StateArg>,
    /// Closed-loop steps per episode.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
}

/// A state given on the command line.
#[derive(Debug, Clone, PartialEq)]
pub struct StateArg(pub Vec<f64>);

fn parse_state(s: &str) -> std::result::Result<StateArg, String> {
    parse_x0(s).map(StateArg)
}

fn parse_strategy(s: &str) -> std::result::Result<Strategy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Parses `"a,b,..."` into a vector.
pub fn parse_x0(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| {
            let v: f64 = t.trim().parse().map_err(|_| format!("'{t}' is not a number"))?;
            v.is_finite().then_some(v).ok_or_else(|| format!("'{t}' is not finite"))
        })
        .collect()
}

/// Design and run settings resolved from flags, the config and defaults.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub design: DesignArtifacts,
    pub strategy: Strategy,
    pub x0: Option<DVector<f64>>,
    pub horizon: usize,
    pub episodes: usize,
    pub seed: u64,
}

impl Resolved {
    fn x0(&self) -> Result<&DVector<f64>> {
        self.x0.as_ref().ok_or_else(|| Error::Config("no initial state: pass --x0 or set sim.x0".into()))
    }
}

fn design_from_config(cfg: &RunConfig) -> Result<(DesignArtifacts, ValidationReport)> {
    offline::design(&cfg.design_spec()?)
}

fn resolve(args: &RunArgs) -> Result<Resolved> {
    let cfg = args.common.config.as_deref().map(RunConfig::load).transpose()?;
    let design = match (&args.common.design, &cfg) {
        (Some(path), _) => load_design(path)?,
        (None, Some(cfg)) => {
            let (d, report) = design_from_config(cfg)?;
            if !report.passed() {
                return Err(Error::InvalidDesign(failed_checks(&report)));
            }
            d
        }
        (None, None) => return Err(Error::Config("pass --design or --config".into())),
    };
    let sim = cfg.as_ref().map(|c| c.sim.clone()).unwrap_or_default();
    let strategy = match (args.strategy, &cfg) {
        (Some(s), _) => s,
        (None, Some(c)) => c.strategy()?,
        (None, None) => Strategy::A,
    };
    let x0 = args.x0.clone().map(|a| a.0).or_else(|| sim.x0.first().cloned()).map(DVector::from_vec);
    if let Some(x) = &x0 {
        if x.len() != design.state_dim() {
            return Err(Error::Config(format!("x0 has {} entries, the plant has {} states", x.len(), design.state_dim())));
        }
    }
    let horizon = args.horizon.or(sim.horizon).unwrap_or(design.horizon);
    let episodes = args.episodes.or(sim.episodes).unwrap_or(DEFAULT_EPISODES);
    if horizon == 0 || episodes == 0 {
        return Err(Error::Config("horizon and episodes must be at least 1".into()));
    }
    Ok(Resolved { design, strategy, x0, horizon, episodes, seed: args.seed.or(sim.seed).unwrap_or(0) })
}

fn failed_checks(report: &ValidationReport) -> String {
    report.failures().map(|c| format!("{} (margin {:+.3e})", c.name, c.margin)).collect::<Vec<_>>().join(", ")
}

fn spec_for(kind: ControllerKind, strategy: Strategy) -> ControllerSpec {
    match kind {
        ControllerKind::Ms => ControllerSpec::Ms(MsOptions::with_strategy(strategy)),
        ControllerKind::Is => ControllerSpec::Is(IsOptions { first_input_bound: strategy == Strategy::B, ..IsOptions::default() }),
    }
}

/// IS-SMPC must be feasible at the initial state.
fn check_is_start(design: &DesignArtifacts, spec: ControllerSpec, x0: &DVector<f64>) -> Result<()> {
    if let ControllerSpec::Is(o) = spec {
        let sol = IsController::new(design, o)?.solve(x0)?;
        if sol.status == SolverStatus::Infeasible {
            return Err(Error::InitiallyInfeasible { x0: vec_to_std(x0) });
        }
    }
    Ok(())
}

fn campaign(r: &Resolved, spec: ControllerSpec, threads: Option<usize>) -> Result<McSummary> {
    let x0 = r.x0()?;
    check_is_start(&r.design, spec, x0)?;
    let controller = Controller::new(&r.design, spec)?;
    let options = McOptions { threads, ..McOptions::default() };
    sim::monte_carlo_with(&controller, x0, r.horizon, r.episodes, r.seed, &options)
}

fn report_failures(summary: &McSummary) -> Result<()> {
    if summary.failures.is_empty() {
        return Ok(());
    }
    for f in summary.failures.iter().take(5) {
        eprintln!("episode {} failed: {}", f.episode, f.error);
    }
    Err(summary.failures[0].error.clone())
}

fn cmd_design(args: &CommonArgs) -> Result<()> {
    let path = args.config.as_deref().ok_or_else(|| Error::Config("design needs --config".into()))?;
    let cfg = RunConfig::load(path)?;
    let (d, report) = design_from_config(&cfg)?;
    print!("{report}");
    match d.certificate {
        Some(c) => println!("certificate: mu = {:.6}, beta = {:.6}", c.mu, c.beta),
        None => println!("certificate: none found on the grid"),
    }
    println!(
        "lambda = {:.10}, rho = {:.10}, r_x = {:.10}, r_u = {:.10}, r_xu = {:.10}",
        d.lambda, d.rho, d.r_x, d.r_u, d.r_xu
    );
    if !report.passed() {
        return Err(Error::InvalidDesign(failed_checks(&report)));
    }
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("design.json"));
    save_design(&d, &out)?;
    println!("wrote {}", out.display());
    Ok(())
}

/// Plan in JSON; `z` and `v` are lists of vectors.
#[derive(Debug, Clone, Serialize)]
struct SolutionFile {
    status: String,
    strategy: String,
    gamma_x: f64,
    gamma_u: f64,
    t: f64,
    j_p: f64,
    j_total: f64,
    newton_steps: usize,
    z: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl From<&OcpSolution> for SolutionFile {
    fn from(s: &OcpSolution) -> Self {
        Self {
            status: s.status.to_string(),
            strategy: s.strategy.to_string(),
            gamma_x: s.gamma_x,
            gamma_u: s.gamma_u,
            t: s.t,
            j_p: s.j_p,
            j_total: s.j_total,
            newton_steps: s.newton_steps,
            z: s.z.iter().map(vec_to_std).collect(),
            v: s.v.iter().map(vec_to_std).collect(),
        }
    }
}

fn cmd_solve(args: &RunArgs) -> Result<()> {
    let r = resolve(args)?;
    let x0 = r.x0()?;
    let sol = match spec_for(args.controller, r.strategy) {
        ControllerSpec::Ms(o) => crate::controller::MsController::new(&r.design, o)?.solve(x0)?,
        ControllerSpec::Is(o) => IsController::new(&r.design, o)?.solve(x0)?,
    };
    println!("status      {}", sol.status);
    println!("gamma_x     {:.10}", sol.gamma_x);
    println!("gamma_u     {:.10}", sol.gamma_u);
    println!("u0          {:?}", sol.v[0].as_slice());
    println!("cost        {:.6} (tracking {:.6})", sol.j_total, sol.j_p);
    println!("newton      {}", sol.newton_steps);
    if let Some(out) = &args.common.out {
        let path = if out.extension().is_some() { out.clone() } else { out.join("solution.json") };
        write_file(&path, to_json_17(&SolutionFile::from(&sol))?.as_bytes())?;
        println!("wrote {}", path.display());
    }
    match sol.status {
        SolverStatus::Optimal => Ok(()),
        SolverStatus::Infeasible if args.controller == ControllerKind::Is => {
            Err(Error::InitiallyInfeasible { x0: vec_to_std(x0) })
        }
        s => Err(Error::Solver { status: s.to_string(), detail: format!("x0 = {:?}", x0.as_slice()) }),
    }
}

fn out_dir(args: &CommonArgs) -> PathBuf {
    args.out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn cmd_simulate(args: &RunArgs) -> Result<()> {
    let r = resolve(args)?;
    let summary = campaign(&r, spec_for(args.controller, r.strategy), args.threads)?;
    let dir = out_dir(&args.common);
    write_bundle(&dir, &summary, &r.design)?;
    println!(
        "{}: {} episodes ({} failed), J_MPC mean {:.4} std {:.4}; wrote {}",
        summary.controller,
        summary.episodes,
        summary.failures.len(),
        summary.j_mean,
        summary.j_std,
        dir.display()
    );
    report_failures(&summary)
}

/// Runs both controllers with the same seed, hence the same noise per episode.
pub fn compare(
    design: &DesignArtifacts,
    strategy: Strategy,
    x0: &DVector<f64>,
    horizon: usize,
    episodes: usize,
    seed: u64,
    threads: Option<usize>,
) -> Result<Comparison> {
    let r = Resolved { design: design.clone(), strategy, x0: Some(x0.clone()), horizon, episodes, seed };
    let is = campaign(&r, ControllerSpec::is(), threads)?;
    let ms = campaign(&r, ControllerSpec::ms(strategy), threads)?;
    Ok(Comparison { ms, is })
}

fn cmd_compare(args: &RunArgs) -> Result<()> {
    let r = resolve(args)?;
    let c = compare(&r.design, r.strategy, r.x0()?, r.horizon, r.episodes, r.seed, args.threads)?;
    let dir = out_dir(&args.common);
    write_file(&dir.join("compare.csv"), &compare_csv(&c)?)?;
    println!(
        "x0 = {:?}: mean J_MPC ms {:.4}, is {:.4}, ratio {:.6} over {} paired episodes; wrote {}",
        r.x0()?.as_slice(),
        c.ms.j_mean,
        c.is.j_mean,
        c.mean_ratio(),
        c.pairs().len(),
        dir.join("compare.csv").display()
    );
    report_failures(&c.ms)?;
    report_failures(&c.is)
}

fn cmd_bounds(args: &RunArgs) -> Result<()> {
    let mut r = resolve(args)?;
    r.horizon = r.horizon.max(r.design.horizon);
    let summary = campaign(&r, spec_for(args.controller, r.strategy), args.threads)?;
    let sol0 = summary.first_solution().ok_or_else(|| summary.failures[0].error.clone())?;
    let rows = sim::bound_table(&summary.traces, sol0, &r.design);
    println!("{:>4} {:>10} {:>10} {:>10} {:>10}", "ell", "p_x", "p_u", "f_x", "f_u");
    for row in &rows {
        println!("{:>4} {:>10.4} {:>10.4} {:>10.4} {:>10.4}", row.ell, row.p_x, row.p_u, row.f_x, row.f_u);
    }
    let dir = out_dir(&args.common);
    write_file(&dir.join("bounds.csv"), &bounds_csv(&rows)?)?;
    println!("wrote {}", dir.join("bounds.csv").display());
    report_failures(&summary)
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Design(a) => cmd_design(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Bounds(a) => cmd_bounds(a),
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err.root() {
        Error::Config(_) | Error::Io(_) | Error::Dimension(_) | Error::InvalidArgument(_) => EXIT_CONFIG,
        Error::InitiallyInfeasible { .. } | Error::Solver { .. } => EXIT_INFEASIBLE,
        _ => EXIT_DESIGN,
    }
}

/// Parses `args` (program name first), runs and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
