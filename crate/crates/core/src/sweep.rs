//! (λ, U) phase-diagram sweeps: per-point pipeline, persistence and SVG maps.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::itebd::{find_ground_states, EvolutionConfig};
use crate::parent::hamiltonian_spec;
use crate::spt::{classify_pair, es_doublet_split, extract_indices, IndexReport, PhaseLabel};
use crate::tensor::C64;

/// Environment variable overriding the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "CSPT_OUTPUT_DIR";

/// Outcome of the full pipeline at one `(λ, U)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub lambda: f64,
    pub u: f64,
    pub indices_left: Option<IndexReport>,
    pub indices_right: Option<IndexReport>,
    pub phase_label: String,
    #[serde(with = "nan_as_null::complex")]
    pub energy_per_site: C64,
    #[serde(with = "nan_as_null")]
    pub final_residual_left: f64,
    #[serde(with = "nan_as_null")]
    pub final_residual_right: f64,
    pub steps_used: usize,
    pub converged: bool,
    #[serde(with = "nan_as_null")]
    pub es_doublet_split_left: f64,
    #[serde(with = "nan_as_null")]
    pub es_doublet_split_right: f64,
    /// Failures met along the way, in order.
    pub diagnostics: Vec<String>,
}

/// JSON has no NaN; missing values of failed points are written as `null`.
mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::tensor::C64;

    fn wrap(x: f64) -> Option<f64> {
        (!x.is_nan()).then_some(x)
    }

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        wrap(*x).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }

    pub mod complex {
        use super::*;

        pub fn serialize<S: Serializer>(z: &C64, s: S) -> Result<S::Ok, S::Error> {
            (wrap(z.re), wrap(z.im)).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<C64, D::Error> {
            let (re, im) = <(Option<f64>, Option<f64>)>::deserialize(d)?;
            Ok(C64::new(re.unwrap_or(f64::NAN), im.unwrap_or(f64::NAN)))
        }
    }
}

impl PhasePoint {
    fn failed(lambda: f64, u: f64, label: PhaseLabel, why: String) -> Self {
        PhasePoint {
            lambda,
            u,
            indices_left: None,
            indices_right: None,
            phase_label: label.to_string(),
            energy_per_site: C64::new(f64::NAN, f64::NAN),
            final_residual_left: f64::NAN,
            final_residual_right: f64::NAN,
            steps_used: 0,
            converged: false,
            es_doublet_split_left: f64::NAN,
            es_doublet_split_right: f64::NAN,
            diagnostics: vec![why],
        }
    }

    pub fn final_residual(&self) -> f64 {
        self.final_residual_left.max(self.final_residual_right)
    }
}

/// Runs the evolution and index pipeline at one point. Errors are recorded
/// in the returned point, never propagated.
pub fn run_point(lambda: f64, u: f64, cfg: &EvolutionConfig) -> PhasePoint {
    let spec = match hamiltonian_spec(lambda, u) {
        Ok(s) => s,
        Err(e) => return PhasePoint::failed(lambda, u, PhaseLabel::Unclassified, e.to_string()),
    };
    let run = match find_ground_states(&spec, cfg) {
        Ok(r) => r,
        Err(e) => return PhasePoint::failed(lambda, u, PhaseLabel::Unconverged, e.to_string()),
    };
    let mut diagnostics = Vec::new();
    let mut index = |side: &str, s| match extract_indices(s) {
        Ok(r) => Some(r),
        Err(e) => {
            diagnostics.push(format!("{side}: {e}"));
            None
        }
    };
    let indices_left = index("left", &run.left);
    let indices_right = index("right", &run.right);
    let label = if !run.converged {
        PhaseLabel::Unconverged
    } else {
        match (&indices_left, &indices_right) {
            (Some(l), Some(r)) => classify_pair(l, r),
            _ => PhaseLabel::Unclassified,
        }
    };
    let last = run.residual_history.last();
    PhasePoint {
        lambda,
        u,
        indices_left,
        indices_right,
        phase_label: label.to_string(),
        energy_per_site: run.energy_per_site,
        final_residual_left: last.map_or(f64::NAN, |s| s.e_left),
        final_residual_right: last.map_or(f64::NAN, |s| s.e_right),
        steps_used: run.steps_used,
        converged: run.converged,
        es_doublet_split_left: es_doublet_split(&run.left),
        es_doublet_split_right: es_doublet_split(&run.right),
        diagnostics,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub lambda: Vec<f64>,
    pub u: Vec<f64>,
    /// Lifts the `λ ∈ [0, 1.2]`, `U ∈ [0, 3]` guard.
    pub allow_out_of_range: bool,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            lambda: uniform_grid(0.0, 1.0, 20),
            u: uniform_grid(0.0, 1.0, 10),
            allow_out_of_range: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub emit_svg: bool,
    /// Base name of the CSV/JSON/SVG files.
    pub stem: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("cspt-out"),
            emit_svg: true,
            stem: "phase".into(),
        }
    }
}

/// Sweep configuration, read from TOML with `[grid]`, `[evolution]`,
/// `[output]` sections and a top-level `parallelism` (0 = all cores).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// "desk" or "full"; fills in everything not set explicitly.
    pub preset: Option<String>,
    pub parallelism: usize,
    pub grid: GridConfig,
    pub evolution: EvolutionConfig,
    pub output: OutputConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig::preset("desk").expect("desk preset exists")
    }
}

/// `n + 1` evenly spaced points from `a` to `b`, rounded to 12 decimals.
pub fn uniform_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..=n)
        .map(|i| {
            let x = a + (b - a) * i as f64 / n as f64;
            (x * 1e12).round() / 1e12
        })
        .collect()
}

impl SweepConfig {
    /// `desk`: λ step 0.05 × U step 0.1 on [0, 1]², D = 16.
    /// `full`: λ step 0.01 × U step 0.05, D = 32, 50000 steps.
    pub fn preset(name: &str) -> Result<Self> {
        let (grid, bond_dim) = match name {
            "desk" => (GridConfig::default(), 16),
            "full" => (
                GridConfig {
                    lambda: uniform_grid(0.0, 1.0, 100),
                    u: uniform_grid(0.0, 1.0, 20),
                    allow_out_of_range: false,
                },
                32,
            ),
            other => return Err(Error::unknown("sweep preset", other)),
        };
        Ok(SweepConfig {
            preset: Some(name.into()),
            parallelism: 0,
            grid,
            evolution: EvolutionConfig {
                bond_dim,
                ..EvolutionConfig::default()
            },
            output: OutputConfig::default(),
        })
    }

    /// Parses TOML. When `preset` is given, keys absent from the file take
    /// the preset's values.
    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let preset = match raw.get("preset") {
            Some(toml::Value::String(s)) => s.clone(),
            Some(_) => return Err(Error::Config("preset must be a string".into())),
            None => "desk".into(),
        };
        let mut base = toml::Table::try_from(SweepConfig::preset(&preset)?)
            .map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, raw);
        let cfg: SweepConfig = base
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        SweepConfig::from_toml(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if g.lambda.is_empty() || g.u.is_empty() {
            return Err(Error::Config("lambda and u grids must be nonempty".into()));
        }
        if g.lambda.iter().chain(&g.u).any(|x| !x.is_finite()) {
            return Err(Error::Config("grid values must be finite".into()));
        }
        if !g.allow_out_of_range {
            if let Some(l) = g.lambda.iter().find(|&&l| !(0.0..=1.2).contains(&l)) {
                return Err(Error::Config(format!(
                    "lambda = {l} outside [0, 1.2]; set grid.allow_out_of_range"
                )));
            }
            if let Some(u) = g.u.iter().find(|&&u| !(0.0..=3.0).contains(&u)) {
                return Err(Error::Config(format!(
                    "u = {u} outside [0, 3]; set grid.allow_out_of_range"
                )));
            }
        }
        self.evolution.validate()
    }

    /// Output directory after the environment override.
    pub fn output_dir(&self) -> PathBuf {
        std::env::var_os(OUTPUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| self.output.dir.clone())
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// One row of the results CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub lambda: f64,
    pub u: f64,
    #[serde(rename = "omega_L")]
    pub omega_l: i8,
    #[serde(rename = "omega_R")]
    pub omega_r: i8,
    #[serde(rename = "beta_L")]
    pub beta_l: i8,
    #[serde(rename = "beta_R")]
    pub beta_r: i8,
    #[serde(rename = "gamma_gx_L")]
    pub gamma_gx_l: i8,
    #[serde(rename = "gamma_gx_R")]
    pub gamma_gx_r: i8,
    #[serde(rename = "gamma_gz_L")]
    pub gamma_gz_l: i8,
    #[serde(rename = "gamma_gz_R")]
    pub gamma_gz_r: i8,
    pub energy_re: f64,
    pub energy_im: f64,
    #[serde(rename = "residual_L")]
    pub residual_l: f64,
    #[serde(rename = "residual_R")]
    pub residual_r: f64,
    pub steps: usize,
    pub converged: bool,
    pub label: String,
}

impl From<&PhasePoint> for CsvRow {
    fn from(p: &PhasePoint) -> Self {
        let signs = |r: &Option<IndexReport>| {
            r.as_ref()
                .map(|r| r.signs())
                .map_or((0, 0, 0, 0), |s| (s.omega, s.beta, s.gamma_gx, s.gamma_gz))
        };
        let (ol, bl, xl, zl) = signs(&p.indices_left);
        let (or, br, xr, zr) = signs(&p.indices_right);
        CsvRow {
            lambda: p.lambda,
            u: p.u,
            omega_l: ol,
            omega_r: or,
            beta_l: bl,
            beta_r: br,
            gamma_gx_l: xl,
            gamma_gx_r: xr,
            gamma_gz_l: zl,
            gamma_gz_r: zr,
            energy_re: p.energy_per_site.re,
            energy_im: p.energy_per_site.im,
            residual_l: p.final_residual_left,
            residual_r: p.final_residual_right,
            steps: p.steps_used,
            converged: p.converged,
            label: p.phase_label.clone(),
        }
    }
}

pub fn write_csv<W: Write>(points: &[PhasePoint], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for p in points {
        out.serialize(CsvRow::from(p))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_csv<R: std::io::Read>(r: R) -> Result<Vec<CsvRow>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

pub fn write_json<W: Write>(points: &[PhasePoint], w: W) -> Result<()> {
    serde_json::to_writer_pretty(w, points)?;
    Ok(())
}

pub fn read_json<R: std::io::Read>(r: R) -> Result<Vec<PhasePoint>> {
    Ok(serde_json::from_reader(r)?)
}

/// Files written by a sweep.
#[derive(Clone, Debug)]
pub struct SweepArtifacts {
    pub csv: PathBuf,
    pub json: PathBuf,
    pub phase_svg: Option<PathBuf>,
    pub residual_svg: Option<PathBuf>,
}

/// Computes every grid point (λ fastest), then writes CSV, JSON and
/// optionally the two SVG maps.
pub fn run_sweep(cfg: &SweepConfig) -> Result<(Vec<PhasePoint>, SweepArtifacts)> {
    cfg.validate()?;
    let grid: Vec<(f64, f64)> = cfg
        .grid
        .u
        .iter()
        .flat_map(|&u| cfg.grid.lambda.iter().map(move |&l| (l, u)))
        .collect();
    let work = || -> Vec<PhasePoint> {
        grid.par_iter()
            .map(|&(l, u)| {
                let p = run_point(l, u, &cfg.evolution);
                log::info!("lambda = {l}, U = {u}: {}", p.phase_label);
                p
            })
            .collect()
    };
    let points = if cfg.parallelism == 0 {
        work()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.parallelism)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(work)
    };
    let artifacts = write_artifacts(&points, &cfg.output_dir(), &cfg.output.stem, cfg.output.emit_svg)?;
    Ok((points, artifacts))
}

pub fn write_artifacts(points: &[PhasePoint], dir: &Path, stem: &str, svg: bool) -> Result<SweepArtifacts> {
    fs::create_dir_all(dir)?;
    let csv = dir.join(format!("{stem}.csv"));
    let json = dir.join(format!("{stem}.json"));
    write_csv(points, fs::File::create(&csv)?)?;
    write_json(points, fs::File::create(&json)?)?;
    let (mut phase_svg, mut residual_svg) = (None, None);
    if svg {
        let maps = emit_svg(points)?;
        let p = dir.join(format!("{stem}.svg"));
        let r = dir.join(format!("{stem}-residual.svg"));
        fs::write(&p, maps.phase)?;
        fs::write(&r, maps.residual)?;
        phase_svg = Some(p);
        residual_svg = Some(r);
    }
    Ok(SweepArtifacts {
        csv,
        json,
        phase_svg,
        residual_svg,
    })
}

/// `value / 5 + 0.6`, quantised to 8 bits.
pub fn channel(value: f64) -> u8 {
    ((value / 5.0 + 0.6) * 255.0).round().clamp(0.0, 255.0) as u8
}

/// RGB of a point from `[γ(gz)_L, γ(gz)_R, ω]`, using raw real parts.
pub fn phase_rgb(p: &PhasePoint) -> Option<[u8; 3]> {
    let (l, r) = (p.indices_left.as_ref()?, p.indices_right.as_ref()?);
    // ω is taken from the right state; both sides agree in every phase of the table
    Some([
        channel(l.gamma_gz.raw.re),
        channel(r.gamma_gz.raw.re),
        channel(r.omega.raw.re),
    ])
}

/// Same map for raw channel values given directly as data.
pub fn rgb_from_values(gz_left: f64, gz_right: f64, omega: f64) -> [u8; 3] {
    [channel(gz_left), channel(gz_right), channel(omega)]
}

pub struct SvgMaps {
    pub phase: String,
    pub residual: String,
}

const CELL: usize = 24;
const MARGIN: usize = 56;

struct Layout {
    lambdas: Vec<f64>,
    us: Vec<f64>,
}

fn layout(points: &[PhasePoint]) -> Result<(Layout, Vec<Vec<usize>>)> {
    let mut lambdas: Vec<f64> = points.iter().map(|p| p.lambda).collect();
    let mut us: Vec<f64> = points.iter().map(|p| p.u).collect();
    for v in [&mut lambdas, &mut us] {
        v.sort_by(f64::total_cmp);
        v.dedup();
    }
    if lambdas.len() * us.len() != points.len() {
        return Err(Error::Config(format!(
            "grid is not rectangular: {} points for {} lambdas x {} u values",
            points.len(),
            lambdas.len(),
            us.len()
        )));
    }
    let mut cell = vec![vec![usize::MAX; lambdas.len()]; us.len()];
    for (n, p) in points.iter().enumerate() {
        let i = lambdas.iter().position(|&l| l == p.lambda).unwrap();
        let j = us.iter().position(|&u| u == p.u).unwrap();
        if cell[j][i] != usize::MAX {
            return Err(Error::Config(format!("duplicate grid point ({}, {})", p.lambda, p.u)));
        }
        cell[j][i] = n;
    }
    Ok((Layout { lambdas, us }, cell))
}

fn svg_frame(l: &Layout, title: &str, body: &str) -> String {
    let (w, h) = (l.lambdas.len() * CELL, l.us.len() * CELL);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="10">"#,
        w + 2 * MARGIN,
        h + 2 * MARGIN
    );
    s.push_str(concat!(
        r#"<defs><pattern id="hatch" width="6" height="6" patternUnits="userSpaceOnUse" patternTransform="rotate(45)">"#,
        r#"<line x1="0" y1="0" x2="0" y2="6" stroke="black" stroke-width="1.5"/></pattern></defs>"#,
        "\n"
    ));
    let _ = writeln!(s, r#"<text x="{MARGIN}" y="{}" font-size="12">{title}</text>"#, MARGIN / 2);
    s.push_str(body);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">λ</text>"#,
        MARGIN + w / 2,
        h + MARGIN + 36
    );
    let _ = writeln!(s, r#"<text x="16" y="{}" text-anchor="middle">U</text>"#, MARGIN + h / 2);
    let step = (l.lambdas.len() / 5).max(1);
    for (i, x) in l.lambdas.iter().enumerate().step_by(step) {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{x}</text>"#,
            MARGIN + i * CELL + CELL / 2,
            h + MARGIN + 16
        );
    }
    let step = (l.us.len() / 5).max(1);
    for (j, u) in l.us.iter().enumerate().step_by(step) {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{u}</text>"#,
            MARGIN - 6,
            MARGIN + h - j * CELL - CELL / 2 + 4
        );
    }
    s.push_str("</svg>\n");
    s
}

fn cell_rect(l: &Layout, i: usize, j: usize, fill: &str, hatch: bool) -> String {
    let x = MARGIN + i * CELL;
    let y = MARGIN + (l.us.len() - 1 - j) * CELL;
    let mut s = format!(r#"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{fill}"/>"#);
    if hatch {
        let _ = write!(s, r#"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="url(#hatch)"/>"#);
    }
    s.push('\n');
    s
}

/// Blue-to-yellow ramp over `log10 e` in `[-16, 0]`.
fn residual_color(e: f64) -> String {
    if !e.is_finite() {
        return "#808080".into();
    }
    let t = ((e.max(1e-300).log10() + 16.0) / 16.0).clamp(0.0, 1.0);
    let mix = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(30.0, 250.0), mix(40.0, 220.0), mix(140.0, 40.0))
}

/// Phase map (paper RGB encoding) and residual map; unconverged cells are
/// hatched, cells without indices are grey.
pub fn emit_svg(points: &[PhasePoint]) -> Result<SvgMaps> {
    let (l, cells) = layout(points)?;
    let (mut phase, mut residual) = (String::new(), String::new());
    for (j, row) in cells.iter().enumerate() {
        for (i, &n) in row.iter().enumerate() {
            let p = &points[n];
            let fill = match phase_rgb(p) {
                Some([r, g, b]) => format!("#{r:02x}{g:02x}{b:02x}"),
                None => "#808080".into(),
            };
            phase.push_str(&cell_rect(&l, i, j, &fill, !p.converged));
            residual.push_str(&cell_rect(&l, i, j, &residual_color(p.final_residual()), !p.converged));
        }
    }
    Ok(SvgMaps {
        phase: svg_frame(&l, "[γ(gz)_L, γ(gz)_R, ω]/5 + 0.6", &phase),
        residual: svg_frame(&l, "final residual e (log scale, 1e-16 to 1)", &residual),
    })
}

/// Phase map rebuilt from CSV rows (signs only).
pub fn points_from_csv(rows: &[CsvRow]) -> Vec<PhasePoint> {
    use crate::spt::IndexValue;
    let report = |omega: i8, beta: i8, gx: i8, gz: i8| -> Option<IndexReport> {
        if [omega, beta, gx, gz].contains(&0) {
            return None;
        }
        let v = |s: i8| IndexValue {
            raw: C64::new(s as f64, 0.0),
            scalar_deviation: 0.0,
            distance: 0.0,
            sign: s,
        };
        Some(IndexReport {
            omega: v(omega),
            beta: v(beta),
            gamma_gx: v(gx),
            gamma_gz: v(gz),
            alpha_gx: C64::new(f64::NAN, 0.0),
            alpha_gz: C64::new(f64::NAN, 0.0),
            alpha_t: C64::new(f64::NAN, 0.0),
            dominance_gx: f64::NAN,
            dominance_gz: f64::NAN,
            dominance_t: f64::NAN,
        })
    };
    rows.iter()
        .map(|r| PhasePoint {
            lambda: r.lambda,
            u: r.u,
            indices_left: report(r.omega_l, r.beta_l, r.gamma_gx_l, r.gamma_gz_l),
            indices_right: report(r.omega_r, r.beta_r, r.gamma_gx_r, r.gamma_gz_r),
            phase_label: r.label.clone(),
            energy_per_site: C64::new(r.energy_re, r.energy_im),
            final_residual_left: r.residual_l,
            final_residual_right: r.residual_r,
            steps_used: r.steps,
            converged: r.converged,
            es_doublet_split_left: f64::NAN,
            es_doublet_split_right: f64::NAN,
            diagnostics: Vec::new(),
        })
        .collect()
}
