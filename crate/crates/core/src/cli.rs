//! Batch interface: CSV ingestion, TOML experiment configs, run
//! orchestration and report files.
//!
//! Exit codes: 0 success, 1 input error, 2 numerical failure.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{CoordinateGroup, DiagnosticsReport};
use crate::ergodicity::{check_ge, GEReport, DEFAULT_TOL};
use crate::model::{ModelSpec, PriorSpec};
use crate::samplers::{run_chain, ChainOutput, RunConfig, SamplerError, SamplerKind};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) | CliError::Io { .. } => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

impl From<SamplerError> for CliError {
    fn from(e: SamplerError) -> Self {
        match e {
            SamplerError::InvalidModel(_) | SamplerError::InvalidConfig(_) | SamplerError::State(_) => {
                CliError::Input(e.to_string())
            }
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn input<T: std::fmt::Display>(e: T) -> CliError {
    CliError::Input(e.to_string())
}

// ---------------------------------------------------------------------------
// Configuration

/// Order in which categorical levels are enumerated; the first level is the
/// reference level for dummy coding.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelOrder {
    #[default]
    FirstAppearance,
    Sorted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFile {
    pub path: PathBuf,
    pub response: String,
    /// Fixed-effect columns, in design order. An intercept is always prepended.
    #[serde(default)]
    pub fixed: Vec<String>,
    /// Members of `fixed` to dummy-code.
    #[serde(default)]
    pub categorical: Vec<String>,
    /// Grouping columns; each becomes one random-effect block.
    pub random: Vec<String>,
    #[serde(default)]
    pub level_order: LevelOrder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarOrVec {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl ScalarOrVec {
    fn expand(&self, len: usize, field: &str) -> Result<Vec<f64>, CliError> {
        match self {
            ScalarOrVec::Scalar(v) => Ok(vec![*v; len]),
            ScalarOrVec::Vector(v) if v.len() == len => Ok(v.clone()),
            ScalarOrVec::Vector(v) => Err(CliError::Input(format!(
                "prior.{field} has {} entries, expected {len}",
                v.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    #[serde(default = "zero")]
    pub mu0: ScalarOrVec,
    /// `Q = q_scale * I`; zero gives the flat prior.
    pub q_scale: f64,
    pub a: ScalarOrVec,
    pub b: ScalarOrVec,
}

fn zero() -> ScalarOrVec {
    ScalarOrVec::Scalar(0.0)
}

impl PriorConfig {
    pub fn build(&self, p: usize, r: usize) -> Result<PriorSpec, CliError> {
        if !(self.q_scale >= 0.0 && self.q_scale.is_finite()) {
            return Err(CliError::Input(format!(
                "prior.q_scale must be a finite nonnegative number, got {}",
                self.q_scale
            )));
        }
        Ok(PriorSpec::new(
            DVector::from_vec(self.mu0.expand(p, "mu0")?),
            DMatrix::identity(p, p) * self.q_scale,
            self.a.expand(r, "a")?,
            self.b.expand(r, "b")?,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub iterations: usize,
    #[serde(default)]
    pub burn_in: usize,
    #[serde(default = "one")]
    pub thin: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "both_samplers")]
    pub samplers: Vec<SamplerKind>,
}

fn one() -> usize {
    1
}

fn both_samplers() -> Vec<SamplerKind> {
    vec![SamplerKind::BlockGibbs, SamplerKind::FullGibbs]
}

/// A coordinate group given by selectors: `beta`, `u`, `tau`, or a
/// parameter name such as `beta:(Intercept)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupConfig {
    pub name: String,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSection {
    #[serde(default = "default_max_lag")]
    pub max_lag: usize,
    #[serde(default)]
    pub groups: Option<Vec<GroupConfig>>,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self {
            max_lag: default_max_lag(),
            groups: None,
        }
    }
}

fn default_max_lag() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetFile,
    pub prior: PriorConfig,
    pub run: RunSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// Reads a TOML config. Relative dataset and output paths are resolved
    /// against the config file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.dataset.path.is_relative() {
            cfg.dataset.path = base.join(&cfg.dataset.path);
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn check(&self) -> Result<(), CliError> {
        if self.run.samplers.is_empty() {
            return Err(CliError::Input("run.samplers must select at least one sampler".into()));
        }
        let mut seen = self.run.samplers.clone();
        seen.sort_by_key(|k| k.short_name());
        seen.dedup();
        if seen.len() != self.run.samplers.len() {
            return Err(CliError::Input("run.samplers lists a sampler twice".into()));
        }
        self.run_config(SamplerKind::BlockGibbs).check()?;
        Ok(())
    }

    pub fn run_config(&self, kind: SamplerKind) -> RunConfig {
        let mut cfg = RunConfig::new(kind, self.run.iterations, self.run.burn_in, self.run.seed);
        cfg.thin = self.run.thin;
        cfg.chain = kind.stream_offset();
        cfg
    }
}

// ---------------------------------------------------------------------------
// Ingestion

/// Design matrices and parameter names built from a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub y: DVector<f64>,
    pub blocks: Vec<usize>,
    pub fixed_names: Vec<String>,
    pub random_names: Vec<String>,
    pub block_names: Vec<String>,
}

impl Design {
    pub fn model_spec(&self, prior: &PriorConfig) -> Result<ModelSpec, CliError> {
        let prior = prior.build(self.x.ncols(), self.blocks.len())?;
        ModelSpec::new(
            self.x.clone(),
            self.z.clone(),
            self.y.clone(),
            self.blocks.clone(),
            prior,
        )
        .map_err(input)
    }

    /// Column names of a combined `[beta, u, tau]` draw matrix.
    pub fn parameter_names(&self) -> Vec<String> {
        self.fixed_names
            .iter()
            .map(|n| format!("beta:{n}"))
            .chain(self.random_names.iter().map(|n| format!("u:{n}")))
            .chain(self.block_names.iter().map(|n| format!("tau:{n}")))
            .collect()
    }
}

fn levels(values: &[&str], order: LevelOrder) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for v in values {
        if !out.iter().any(|l| l == v) {
            out.push(v.to_string());
        }
    }
    if order == LevelOrder::Sorted {
        out.sort();
    }
    out
}

/// Reads the dataset and builds `X = [1, fixed...]`, `Z` and `y`.
///
/// Numeric columns pass through, categorical columns with `L` levels become
/// `L - 1` indicators (reference = first level), and each grouping column
/// with `L` levels becomes an `L`-column block. Responses must parse as the
/// numbers 0 or 1.
pub fn ingest(dataset: &DatasetFile) -> Result<Design, CliError> {
    let path = &dataset.path;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
        .clone();
    let mut records = Vec::new();
    for rec in reader.records() {
        records.push(rec.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?);
    }
    if records.is_empty() {
        return Err(CliError::Input(format!("{}: no data rows", path.display())));
    }
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let column = |name: &str| -> Result<Vec<&str>, CliError> {
        let &col = index.get(name).ok_or_else(|| {
            CliError::Input(format!("{}: no column named '{name}'", path.display()))
        })?;
        records
            .iter()
            .enumerate()
            .map(|(row, rec)| match rec.get(col) {
                Some(v) if !v.is_empty() => Ok(v),
                _ => Err(CliError::Input(format!(
                    "{}: missing value at line {}, column '{name}' (index {col})",
                    path.display(),
                    row + 2
                ))),
            })
            .collect()
    };
    let cell_error = |row: usize, name: &str, msg: String| {
        CliError::Input(format!(
            "{}: line {}, column '{name}': {msg}",
            path.display(),
            row + 2
        ))
    };
    let n = records.len();

    let y = column(&dataset.response)?
        .iter()
        .enumerate()
        .map(|(row, v)| match v.parse::<f64>() {
            Ok(x) if x == 0.0 || x == 1.0 => Ok(x),
            _ => Err(cell_error(
                row,
                &dataset.response,
                format!("response '{v}' is not 0 or 1"),
            )),
        })
        .collect::<Result<Vec<f64>, _>>()?;

    for c in &dataset.categorical {
        if !dataset.fixed.contains(c) {
            return Err(CliError::Input(format!(
                "categorical column '{c}' is not listed among the fixed effects"
            )));
        }
    }
    let mut x_cols: Vec<Vec<f64>> = vec![vec![1.0; n]];
    let mut fixed_names = vec!["(Intercept)".to_string()];
    for name in &dataset.fixed {
        let values = column(name)?;
        if dataset.categorical.contains(name) {
            let lv = levels(&values, dataset.level_order);
            if lv.len() < 2 {
                return Err(CliError::Input(format!(
                    "categorical column '{name}' has a single level '{}'",
                    lv[0]
                )));
            }
            for level in &lv[1..] {
                x_cols.push(values.iter().map(|v| f64::from(u8::from(v == level))).collect());
                fixed_names.push(format!("{name}[{level}]"));
            }
        } else {
            let col = values
                .iter()
                .enumerate()
                .map(|(row, v)| match v.parse::<f64>() {
                    Ok(x) if x.is_finite() => Ok(x),
                    _ => Err(cell_error(
                        row,
                        name,
                        format!("'{v}' is not a finite number (list the column under `categorical` to dummy-code it)"),
                    )),
                })
                .collect::<Result<Vec<f64>, _>>()?;
            x_cols.push(col);
            fixed_names.push(name.clone());
        }
    }

    if dataset.random.is_empty() {
        return Err(CliError::Input("at least one random-effect grouping column is required".into()));
    }
    let mut z_cols: Vec<Vec<f64>> = Vec::new();
    let mut random_names = Vec::new();
    let mut blocks = Vec::new();
    for name in &dataset.random {
        let values = column(name)?;
        let lv = levels(&values, dataset.level_order);
        for level in &lv {
            z_cols.push(values.iter().map(|v| f64::from(u8::from(v == level))).collect());
            random_names.push(format!("{name}[{level}]"));
        }
        blocks.push(lv.len());
    }

    let to_matrix = |cols: &[Vec<f64>]| DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
    Ok(Design {
        x: to_matrix(&x_cols),
        z: to_matrix(&z_cols),
        y: DVector::from_vec(y),
        blocks,
        fixed_names,
        random_names,
        block_names: dataset.random.clone(),
    })
}

// ---------------------------------------------------------------------------
// Draws files

/// `[eta, tau]` as one matrix, rows are stored iterations.
pub fn combined_draws(out: &ChainOutput) -> DMatrix<f64> {
    let (rows, k) = out.draws_eta.shape();
    let r = out.draws_tau.ncols();
    DMatrix::from_fn(rows, k + r, |i, j| {
        if j < k {
            out.draws_eta[(i, j)]
        } else {
            out.draws_tau[(i, j - k)]
        }
    })
}

/// CSV with a header of parameter names; values carry 17 significant digits.
pub fn format_draws(names: &[String], draws: &DMatrix<f64>) -> String {
    let mut s = names.join(",");
    s.push('\n');
    for i in 0..draws.nrows() {
        for j in 0..draws.ncols() {
            if j > 0 {
                s.push(',');
            }
            write!(s, "{:.16e}", draws[(i, j)]).unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn read_draws(path: &Path) -> Result<(Vec<String>, DMatrix<f64>), CliError> {
    let ctx = |e: csv::Error| CliError::Input(format!("{}: {e}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(ctx)?;
    let names: Vec<String> = reader.headers().map_err(ctx)?.iter().map(String::from).collect();
    let mut values = Vec::new();
    let mut rows = 0;
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(ctx)?;
        for (col, v) in rec.iter().enumerate() {
            values.push(v.trim().parse::<f64>().map_err(|_| {
                CliError::Input(format!(
                    "{}: line {}, column {}: '{v}' is not a number",
                    path.display(),
                    row + 2,
                    col + 1
                ))
            })?);
        }
        rows += 1;
    }
    Ok((names.clone(), DMatrix::from_row_slice(rows, names.len(), &values)))
}

// ---------------------------------------------------------------------------
// Coordinate groups

fn select(names: &[String], selector: &str) -> Vec<usize> {
    let prefix = match selector {
        "beta" | "u" | "tau" => Some(format!("{selector}:")),
        _ => None,
    };
    names
        .iter()
        .enumerate()
        .filter(|(_, n)| match &prefix {
            Some(p) => n.starts_with(p.as_str()),
            None => n.as_str() == selector,
        })
        .map(|(i, _)| i)
        .collect()
}

/// Resolves group selectors to column indices; default groups are
/// `beta`, `u`, `tau` and `beta_tau`.
pub fn resolve_groups(
    names: &[String],
    groups: Option<&[GroupConfig]>,
) -> Result<Vec<CoordinateGroup>, CliError> {
    let defaults;
    let groups = match groups {
        Some(g) => g,
        None => {
            defaults = [
                ("beta", vec!["beta"]),
                ("u", vec!["u"]),
                ("tau", vec!["tau"]),
                ("beta_tau", vec!["beta", "tau"]),
            ]
            .into_iter()
            .map(|(name, members)| GroupConfig {
                name: name.into(),
                members: members.into_iter().map(String::from).collect(),
            })
            .collect::<Vec<_>>();
            &defaults
        }
    };
    let mut out = Vec::new();
    for g in groups {
        let mut columns = Vec::new();
        for m in &g.members {
            let hit = select(names, m);
            if hit.is_empty() {
                return Err(CliError::Input(format!(
                    "group '{}': selector '{m}' matches no parameter",
                    g.name
                )));
            }
            for c in hit {
                if !columns.contains(&c) {
                    columns.push(c);
                }
            }
        }
        if !columns.is_empty() {
            out.push(CoordinateGroup {
                name: g.name.clone(),
                columns,
            });
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Orchestration

pub struct SamplerResult {
    pub kind: SamplerKind,
    pub output: ChainOutput,
    pub report: DiagnosticsReport,
}

pub struct ExperimentResult {
    pub names: Vec<String>,
    pub ge_report: GEReport,
    pub samplers: Vec<SamplerResult>,
    pub files: Vec<PathBuf>,
}

fn sampler_label(kind: SamplerKind) -> &'static str {
    match kind {
        SamplerKind::BlockGibbs => "BG",
        SamplerKind::FullGibbs => "FG",
    }
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.digits$}"))
}

/// Markdown tables comparing the samplers: ACF per parameter, ESS raw and
/// per second, and mESS / MSJ per coordinate group.
pub fn comparison_table(results: &[SamplerResult], max_lag: usize) -> String {
    let mut s = String::new();
    let Some(first) = results.first() else {
        return s;
    };
    writeln!(s, "## Autocorrelation\n").unwrap();
    let lags: Vec<String> = (1..=max_lag).map(|k| format!("lag {k}")).collect();
    writeln!(s, "| parameter | sampler | {} |", lags.join(" | ")).unwrap();
    writeln!(s, "|---|---|{}", "---|".repeat(max_lag)).unwrap();
    for (j, coord) in first.report.coordinates.iter().enumerate() {
        for res in results {
            let c = &res.report.coordinates[j];
            let vals: Vec<String> = match &c.acf {
                Some(a) => a[1..].iter().map(|v| format!("{v:.3}")).collect(),
                None => vec!["NA".into(); max_lag],
            };
            writeln!(s, "| {} | {} | {} |", coord.name, sampler_label(res.kind), vals.join(" | ")).unwrap();
        }
    }

    writeln!(s, "\n## Effective sample size\n").unwrap();
    writeln!(s, "| parameter | sampler | mean | MCSE | ESS | ESS/s |").unwrap();
    writeln!(s, "|---|---|---|---|---|---|").unwrap();
    for (j, coord) in first.report.coordinates.iter().enumerate() {
        for res in results {
            let c = &res.report.coordinates[j];
            let per_sec = res.report.timing.as_ref().and_then(|t| t.ess_per_second[j]);
            writeln!(
                s,
                "| {} | {} | {:.4} | {} | {} | {} |",
                coord.name,
                sampler_label(res.kind),
                c.mean,
                fmt_opt(c.mcse, 5),
                fmt_opt(c.ess, 0),
                fmt_opt(per_sec, 1)
            )
            .unwrap();
        }
    }

    writeln!(s, "\n## Multivariate ESS and mean squared jump\n").unwrap();
    writeln!(s, "| group | sampler | dim | mESS | mESS/s | MSJ | seconds |").unwrap();
    writeln!(s, "|---|---|---|---|---|---|---|").unwrap();
    for (g, group) in first.report.groups.iter().enumerate() {
        for res in results {
            let gr = &res.report.groups[g];
            let timing = res.report.timing.as_ref();
            writeln!(
                s,
                "| {} | {} | {} | {} | {} | {:.6} | {} |",
                group.name,
                sampler_label(res.kind),
                gr.coordinates.len(),
                fmt_opt(gr.mess, 0),
                fmt_opt(timing.and_then(|t| t.mess_per_second[g]), 1),
                gr.msj,
                fmt_opt(timing.map(|t| t.seconds), 2)
            )
            .unwrap();
        }
    }
    s
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serialization");
    s.push('\n');
    s
}

struct OutputSet {
    written: Vec<PathBuf>,
}

impl OutputSet {
    fn write(&mut self, path: PathBuf, contents: &str) -> Result<(), CliError> {
        fs::write(&path, contents).map_err(io_err(&path))?;
        self.written.push(path);
        Ok(())
    }

    fn remove_all(&self) {
        for p in &self.written {
            let _ = fs::remove_file(p);
        }
    }
}

/// Ingests the data, runs the selected samplers concurrently and writes
/// `draws_<s>.csv`, `diagnostics_<s>.json`, `timing_<s>.json`,
/// `ge_report.json` and `comparison.md` into the output directory.
/// On failure every file written by this call is removed.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult, CliError> {
    config.check()?;
    let design = ingest(&config.dataset)?;
    let spec = design.model_spec(&config.prior)?;
    let names = design.parameter_names();
    let groups = resolve_groups(&names, config.diagnostics.groups.as_deref())?;
    let ge_report = check_ge(&spec, DEFAULT_TOL);

    let outputs: Vec<Result<ChainOutput, SamplerError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = config
            .run
            .samplers
            .iter()
            .map(|&kind| {
                let run_cfg = config.run_config(kind);
                let spec = &spec;
                scope.spawn(move || run_chain(spec, &run_cfg))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sampler thread panicked"))
            .collect()
    });

    let mut samplers = Vec::new();
    for (kind, out) in config.run.samplers.iter().zip(outputs) {
        let output = out?;
        let draws = combined_draws(&output);
        let report = DiagnosticsReport::compute(
            &draws,
            &names,
            &groups,
            config.diagnostics.max_lag,
            Some(output.meta.seconds),
        );
        samplers.push(SamplerResult {
            kind: *kind,
            output,
            report,
        });
    }

    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut files = OutputSet { written: Vec::new() };
    let result = (|| {
        for res in &samplers {
            let tag = res.kind.short_name();
            files.write(
                dir.join(format!("draws_{tag}.csv")),
                &format_draws(&names, &combined_draws(&res.output)),
            )?;
            files.write(
                dir.join(format!("diagnostics_{tag}.json")),
                &to_json(&res.report.without_timing()),
            )?;
            files.write(dir.join(format!("timing_{tag}.json")), &to_json(&res.report.timing))?;
        }
        files.write(dir.join("ge_report.json"), &to_json(&ge_report))?;
        files.write(
            dir.join("comparison.md"),
            &comparison_table(&samplers, config.diagnostics.max_lag),
        )
    })();
    if let Err(e) = result {
        files.remove_all();
        return Err(e);
    }
    Ok(ExperimentResult {
        names,
        ge_report,
        samplers,
        files: files.written,
    })
}

/// GE report for the model described by a config.
pub fn ge_report_for(config: &ExperimentConfig) -> Result<GEReport, CliError> {
    let design = ingest(&config.dataset)?;
    let spec = design.model_spec(&config.prior)?;
    Ok(check_ge(&spec, DEFAULT_TOL))
}

/// Diagnostics for an existing draws file.
pub fn diagnose_file(
    path: &Path,
    max_lag: usize,
    groups: Option<&[GroupConfig]>,
) -> Result<DiagnosticsReport, CliError> {
    let (names, draws) = read_draws(path)?;
    if draws.nrows() <= max_lag {
        return Err(CliError::Input(format!(
            "{}: {} draws is too few for max lag {max_lag}",
            path.display(),
            draws.nrows()
        )));
    }
    let groups = match groups {
        Some(g) => resolve_groups(&names, Some(g))?,
        None => resolve_groups(&names, None).unwrap_or_default(),
    };
    Ok(DiagnosticsReport::compute(&draws, &names, &groups, max_lag, None))
}

// ---------------------------------------------------------------------------
// Command line

#[derive(Debug, Parser)]
#[command(name = "pglmm", version, about = "Pólya-Gamma Gibbs samplers for logistic mixed models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SamplerChoice {
    Bg,
    Fg,
    Both,
}

#[derive(Debug, Args)]
pub struct RunOverrides {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub sampler: Option<SamplerChoice>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub burnin: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub max_lag: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the samplers and write draws, diagnostics and comparison tables.
    Run(RunOverrides),
    /// Check the geometric-ergodicity conditions for a config's model.
    CheckGe {
        #[arg(long)]
        config: PathBuf,
        /// Write the report here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute diagnostics for an existing draws file.
    Diagnose {
        draws: PathBuf,
        #[arg(long, default_value_t = 5)]
        max_lag: usize,
        /// Write the report here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl RunOverrides {
    pub fn apply(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(choice) = self.sampler {
            cfg.run.samplers = match choice {
                SamplerChoice::Bg => vec![SamplerKind::BlockGibbs],
                SamplerChoice::Fg => vec![SamplerKind::FullGibbs],
                SamplerChoice::Both => both_samplers(),
            };
        }
        if let Some(v) = self.iters {
            cfg.run.iterations = v;
        }
        if let Some(v) = self.burnin {
            cfg.run.burn_in = v;
        }
        if let Some(v) = self.thin {
            cfg.run.thin = v;
        }
        if let Some(v) = self.seed {
            cfg.run.seed = v;
        }
        if let Some(v) = &self.out {
            cfg.output_dir = v.clone();
        }
        if let Some(v) = self.max_lag {
            cfg.diagnostics.max_lag = v;
        }
        Ok(cfg)
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => fs::write(p, text).map_err(io_err(p)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(overrides) => {
            let cfg = overrides.apply()?;
            let result = run_experiment(&cfg)?;
            for f in &result.files {
                println!("wrote {}", f.display());
            }
            println!("{}", result.ge_report.conclusion);
            Ok(())
        }
        Command::CheckGe { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = ge_report_for(&cfg)?;
            emit(out.as_deref(), &to_json(&report))
        }
        Command::Diagnose {
            draws,
            max_lag,
            out,
        } => {
            let report = diagnose_file(&draws, max_lag, None)?;
            emit(out.as_deref(), &to_json(&report))
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
