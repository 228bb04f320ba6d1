//! Experiment runner: loads a configuration, runs a single Monte-Carlo batch
//! or one of the sweep presets, and writes CSV tables.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use gra_core::config::parse_config;
use gra_core::engine::{initial_grouping, sweep, EngineError, GroupingStats, SweepVariable};
use gra_core::{monte_carlo, AccessMode, Config, ConfigError, MonteCarloReport};
use thiserror::Error;

/// `git describe` of the source tree at build time, or the crate version.
pub const BUILD_ID: &str = match option_env!("GRA_BUILD_ID") {
    Some(id) => id,
    None => env!("CARGO_PKG_VERSION"),
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    Fig3,
    Fig4,
    Fig6,
}

impl Preset {
    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Fig3 => "fig3",
            Preset::Fig4 => "fig4",
            Preset::Fig6 => "fig6",
        }
    }

    pub fn variable(self) -> SweepVariable {
        match self {
            Preset::Fig3 => SweepVariable::GroupSizeCap,
            Preset::Fig4 => SweepVariable::CsiMae,
            Preset::Fig6 => SweepVariable::DeviceCount,
        }
    }

    pub fn values(self) -> Vec<f64> {
        match self {
            Preset::Fig3 => (2..=50).map(f64::from).collect(),
            Preset::Fig4 => (0..=24).map(|i| i as f64 * 0.5).collect(),
            Preset::Fig6 => vec![1e3, 1e4, 3e4],
        }
    }

    /// Scenario geometry the preset runs under, applied on top of `base`.
    pub fn configure(self, base: &Config) -> Config {
        let mut c = base.clone();
        match self {
            Preset::Fig3 => fig3_point(&mut c, 2),
            Preset::Fig4 => {
                c.scenario.area_side = 500.0;
                c.scenario.device_count = 8000;
                c.clustering.max_group_size = 160;
                c.gdb.enabled = false;
            }
            Preset::Fig6 => {}
        }
        c
    }

    pub fn file_name(self) -> String {
        format!("{}.csv", self.as_str())
    }
}

/// Groups in every fig3 population.
pub const FIG3_GROUPS: u32 = 16;
/// Devices per square meter in every fig3 population.
pub const FIG3_DENSITY: f64 = 2e-4;

/// Sizes the fig3 population so that it splits into exactly
/// `FIG3_GROUPS` full groups of `size` devices at a fixed density.
pub fn fig3_point(config: &mut Config, size: usize) {
    let n = FIG3_GROUPS * size as u32;
    config.scenario.device_count = n;
    config.scenario.area_side = (n as f64 / FIG3_DENSITY).sqrt();
    config.clustering.max_group_size = size;
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fig3" => Ok(Preset::Fig3),
            "fig4" => Ok(Preset::Fig4),
            "fig6" => Ok(Preset::Fig6),
            other => Err(format!("unknown preset `{other}`, expected fig3, fig4 or fig6")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub config_path: Option<PathBuf>,
    pub mode: AccessMode,
    pub runs: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub preset: Option<Preset>,
    /// Also write whitespace-separated `.dat` copies of every table.
    pub gnuplot: bool,
}

impl RunManifest {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        RunManifest { config_path: None, mode: AccessMode::GroupedRa, runs: 10, seed: 1, out: out.into(), preset: None, gnuplot: false }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Config { path: PathBuf, source: ConfigError },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("at least one run is required")]
    NoRuns,
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Io { .. } => "io",
            CliError::Config { .. } => "config",
            CliError::Engine(_) => "engine",
            CliError::Csv { .. } => "csv",
            CliError::NoRuns => "usage",
        }
    }

    /// One-line JSON description for scripts.
    pub fn json_line(&self) -> String {
        let mut v = serde_json::json!({ "error": self.kind(), "message": self.to_string() });
        if let CliError::Config { source, .. } = self {
            v["key"] = source.key().into();
            v["line"] = source.line().into();
        }
        v.to_string()
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

pub fn load_config(path: Option<&Path>) -> Result<Config, CliError> {
    let Some(path) = path else { return Ok(Config::default()) };
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_config(&text).map_err(|source| CliError::Config { path: path.to_path_buf(), source })
}

/// Creates the output directory and checks it accepts files.
pub fn prepare_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let probe = dir.join(".gra-write-check");
    fs::write(&probe, b"").map_err(io_err(&probe))?;
    fs::remove_file(&probe).map_err(io_err(&probe))
}

/// A table of already formatted cells.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&'static str]) -> Self {
        Table { header: header.to_vec(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let i = self.header.iter().position(|h| *h == name)?;
        Some(self.rows.iter().map(|r| r[i].as_str()).collect())
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), CliError> {
        let err = |source| CliError::Csv { path: path.to_path_buf(), source };
        let mut w = csv::Writer::from_path(path).map_err(err)?;
        w.write_record(&self.header).map_err(err)?;
        for row in &self.rows {
            w.write_record(row).map_err(err)?;
        }
        w.flush().map_err(io_err(path))
    }

    pub fn write_gnuplot(&self, path: &Path) -> Result<(), CliError> {
        let mut out = format!("# {}\n", self.header.join(" "));
        for row in &self.rows {
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        fs::File::create(path).and_then(|mut f| f.write_all(out.as_bytes())).map_err(io_err(path))
    }
}

fn num(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else {
        format!("{x}")
    }
}

fn seeds(manifest: &RunManifest) -> impl Iterator<Item = u64> + '_ {
    (0..manifest.runs as u64).map(|i| manifest.seed.wrapping_add(i))
}

/// Initial-grouping statistics averaged over the manifest's seeds.
fn mean_grouping(config: &Config, manifest: &RunManifest) -> Result<GroupingStats, CliError> {
    let mut acc = GroupingStats::default();
    for seed in seeds(manifest) {
        let (_, s) = initial_grouping(config, seed)?;
        acc.groups += s.groups;
        acc.links += s.links;
        acc.members += s.members;
        acc.mean_per += s.mean_per;
        acc.mean_reliability += s.mean_reliability;
        acc.mean_link_per += s.mean_link_per;
        acc.mean_link_reliability += s.mean_link_reliability;
        acc.worst_per += s.worst_per;
    }
    let n = manifest.runs as f64;
    acc.mean_per /= n;
    acc.mean_reliability /= n;
    acc.mean_link_per /= n;
    acc.mean_link_reliability /= n;
    acc.worst_per /= n;
    Ok(acc)
}

pub fn fig3_table(base: &Config, manifest: &RunManifest) -> Result<Table, CliError> {
    let config = Preset::Fig3.configure(base);
    let mut t = Table::new(&["group_size", "mean_per", "mean_reliability", "mean_link_per", "mean_link_reliability", "seed", "build"]);
    for cap in Preset::Fig3.values() {
        let mut c = config.clone();
        fig3_point(&mut c, cap as usize);
        let s = mean_grouping(&c, manifest).map_err(|e| point_err(e, SweepVariable::GroupSizeCap, cap))?;
        t.push(vec![
            num(cap),
            num(s.mean_per),
            num(s.mean_reliability),
            num(s.mean_link_per),
            num(s.mean_link_reliability),
            manifest.seed.to_string(),
            BUILD_ID.to_string(),
        ]);
    }
    Ok(t)
}

pub fn fig4_table(base: &Config, manifest: &RunManifest) -> Result<Table, CliError> {
    let config = Preset::Fig4.configure(base);
    let mut t = Table::new(&["mae", "mean_per", "worst_per", "mean_link_per", "seed", "build"]);
    for mae in Preset::Fig4.values() {
        let mut c = config.clone();
        SweepVariable::CsiMae.apply(&mut c, mae);
        let s = mean_grouping(&c, manifest).map_err(|e| point_err(e, SweepVariable::CsiMae, mae))?;
        t.push(vec![num(mae), num(s.mean_per), num(s.worst_per), num(s.mean_link_per), manifest.seed.to_string(), BUILD_ID.to_string()]);
    }
    Ok(t)
}

fn point_err(e: CliError, variable: SweepVariable, value: f64) -> CliError {
    match e {
        CliError::Engine(source) => CliError::Engine(EngineError::Point { variable, value, source: Box::new(source) }),
        other => other,
    }
}

const DELAY_HEADER: [&str; 10] = [
    "mean_delay",
    "stddev",
    "censored_mean_delay",
    "ull_mean_delay",
    "collision_rate",
    "delivered",
    "pending",
    "runs",
    "seed",
    "build",
];

fn delay_cells(r: &MonteCarloReport, seed: u64) -> Vec<String> {
    let sum = |f: fn(&gra_core::MetricsReport) -> u64| r.runs.iter().map(f).sum::<u64>().to_string();
    let censored = {
        let (s, n) = r.runs.iter().fold((0.0, 0u64), |(s, n), x| {
            (s + x.delays.iter().sum::<f64>() + x.censored.sum, n + x.delays.len() as u64 + x.censored.count)
        });
        if n == 0 { f64::NAN } else { s / n as f64 }
    };
    vec![
        num(r.mean_delay()),
        num(r.delay_std()),
        num(censored),
        num(r.ull_mean_delay()),
        num(r.collision_rate()),
        sum(|x| x.delivered),
        sum(|x| x.pending),
        r.runs.len().to_string(),
        seed.to_string(),
        BUILD_ID.to_string(),
    ]
}

/// Runs both access modes over the preset's device counts.
pub fn fig6_reports(base: &Config, manifest: &RunManifest) -> Result<Vec<(f64, AccessMode, MonteCarloReport)>, CliError> {
    let config = Preset::Fig6.configure(base);
    let values = Preset::Fig6.values();
    let mut out = Vec::new();
    for mode in [AccessMode::GroupedRa, AccessMode::Eab] {
        for (n, r) in sweep(&config, SweepVariable::DeviceCount, &values, mode, manifest.runs, manifest.seed)? {
            out.push((n, mode, r));
        }
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(out)
}

pub fn fig6_table(reports: &[(f64, AccessMode, MonteCarloReport)], seed: u64) -> Table {
    let mut header = vec!["n", "mode"];
    header.extend(DELAY_HEADER);
    let mut t = Table::new(&header);
    for (n, mode, r) in reports {
        let mut row = vec![num(*n), mode.to_string()];
        row.extend(delay_cells(r, seed));
        t.push(row);
    }
    t
}

/// Per-run scalars of a single batch.
pub fn runs_table(report: &MonteCarloReport, mode: AccessMode) -> Table {
    let names: Vec<&'static str> = report.runs.first().map(|r| r.scalars().into_iter().map(|(n, _)| n).collect()).unwrap_or_default();
    let mut header = vec!["seed", "mode"];
    header.extend(names);
    header.push("build");
    let mut t = Table::new(&header);
    for r in &report.runs {
        let mut row = vec![r.seed.to_string(), mode.to_string()];
        row.extend(r.scalars().into_iter().map(|(_, v)| num(v)));
        row.push(BUILD_ID.to_string());
        t.push(row);
    }
    t
}

pub fn summary_table(report: &MonteCarloReport, manifest: &RunManifest) -> Table {
    let mut t = Table::new(&["metric", "mean", "std", "runs", "seed", "build"]);
    for m in &report.summary {
        t.push(vec![
            m.name.to_string(),
            num(m.mean),
            num(m.std),
            report.runs.len().to_string(),
            manifest.seed.to_string(),
            BUILD_ID.to_string(),
        ]);
    }
    t
}

fn write_table(table: &Table, dir: &Path, name: &str, gnuplot: bool, written: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let path = dir.join(format!("{name}.csv"));
    table.write_csv(&path)?;
    written.push(path);
    if gnuplot {
        let path = dir.join(format!("{name}.dat"));
        table.write_gnuplot(&path)?;
        written.push(path);
    }
    Ok(())
}

/// Executes the manifest and returns the files written.
pub fn run_manifest(manifest: &RunManifest) -> Result<Vec<PathBuf>, CliError> {
    if manifest.runs == 0 {
        return Err(CliError::NoRuns);
    }
    let base = load_config(manifest.config_path.as_deref())?;
    prepare_out(&manifest.out)?;
    let mut written = Vec::new();
    let dir = &manifest.out;
    match manifest.preset {
        Some(Preset::Fig3) => write_table(&fig3_table(&base, manifest)?, dir, "fig3", manifest.gnuplot, &mut written)?,
        Some(Preset::Fig4) => write_table(&fig4_table(&base, manifest)?, dir, "fig4", manifest.gnuplot, &mut written)?,
        Some(Preset::Fig6) => {
            let reports = fig6_reports(&base, manifest)?;
            write_table(&fig6_table(&reports, manifest.seed), dir, "fig6", manifest.gnuplot, &mut written)?;
        }
        None => {
            let report = monte_carlo(&base, manifest.mode, manifest.runs, manifest.seed)?;
            write_table(&runs_table(&report, manifest.mode), dir, "runs", manifest.gnuplot, &mut written)?;
            write_table(&summary_table(&report, manifest), dir, "summary", manifest.gnuplot, &mut written)?;
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_names_round_trip() {
        for p in [Preset::Fig3, Preset::Fig4, Preset::Fig6] {
            assert_eq!(p.as_str().parse::<Preset>().unwrap(), p);
        }
        assert!("fig5".parse::<Preset>().is_err());
        assert_eq!(Preset::Fig3.values().len(), 49);
    }

    #[test]
    fn json_error_line_carries_key_and_line() {
        let source = parse_config("[rach]\npreambles = 0\n").unwrap_err();
        let e = CliError::Config { path: "x.toml".into(), source };
        let v: serde_json::Value = serde_json::from_str(&e.json_line()).unwrap();
        assert_eq!(v["error"], "config");
        assert_eq!(v["key"], "rach.preambles");
        assert_eq!(v["line"], 2);
    }

    #[test]
    fn gnuplot_layout() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec!["1".into(), "2.5".into()]);
        let dir = std::env::temp_dir().join(format!("gra-gnuplot-{}", std::process::id()));
        prepare_out(&dir).unwrap();
        let path = dir.join("t.dat");
        t.write_gnuplot(&path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "# a b\n1 2.5\n");
        fs::remove_dir_all(&dir).unwrap();
    }
}
