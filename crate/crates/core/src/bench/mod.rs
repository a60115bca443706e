//! Benchmark and check runners behind the `cmma-bench` binary.

pub mod measure;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::crypto::{CostModel, OpCounter};
use crate::error::{Error, Result};
use crate::hash_tree::{AuthTree, TreeKind};
use crate::message::DistributionKind;
use crate::protocols::baseline::BaselineDesign;
use crate::protocols::complexity::{expected, CostParams, Outcome, Scheme};
use crate::sim::{inject_adversary, run_sim, SchemeKind, SimConfig, SimReport, Strategy};

use measure::{candidate_set, measure_interval, IntervalCost, Point};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    TreeBench,
    ProtocolBench,
    Sim,
    Table1Check,
}

/// Parameter lists; omitted lists take mode-specific defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    #[serde(default, rename = "N", alias = "n")]
    pub n: Option<Vec<usize>>,
    #[serde(default)]
    pub k: Option<Vec<u32>>,
    #[serde(default)]
    pub schemes: Option<Vec<SchemeKind>>,
    #[serde(default)]
    pub tree_kinds: Option<Vec<TreeKind>>,
    #[serde(default)]
    pub distributions: Option<Vec<DistributionKind>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSpec {
    pub mode: Option<Mode>,
    pub grid: Grid,
    pub repetitions: u32,
    pub seed: u64,
    /// Output directory; `--out` takes precedence.
    pub output: Option<PathBuf>,
    /// Adds wall-clock rows, which make output machine dependent.
    pub wall_clock: bool,
    /// Urgent fields for the state-change design; defaults to `k - 1`.
    pub k_u: Option<u32>,
    /// Operation costs used by `table1-check`.
    pub cost_model: CostModel,
    /// Base configuration for `sim`; grid lists override its fields.
    pub sim: SimConfig,
    /// Strategies run against every CMA and CMMA grid point in `sim`.
    pub adversaries: Vec<Strategy>,
    pub adversary_attempts: u64,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            mode: None,
            grid: Grid::default(),
            repetitions: 1,
            seed: 0,
            output: None,
            wall_clock: false,
            k_u: None,
            cost_model: CostModel::default(),
            sim: SimConfig::default(),
            adversaries: Vec::new(),
            adversary_attempts: 1000,
        }
    }
}

const ALL_KINDS: [SchemeKind; 6] = [
    SchemeKind::NoPrecompute,
    SchemeKind::PredictOne,
    SchemeKind::PrecomputeAll,
    SchemeKind::StateChange,
    SchemeKind::Cma,
    SchemeKind::Cmma,
];

impl BenchSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_owned(), source })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::ConfigInvalid("repetitions must be at least 1".into()));
        }
        let g = &self.grid;
        let empty = [
            g.n.as_ref().is_some_and(Vec::is_empty),
            g.k.as_ref().is_some_and(Vec::is_empty),
            g.schemes.as_ref().is_some_and(Vec::is_empty),
            g.tree_kinds.as_ref().is_some_and(Vec::is_empty),
            g.distributions.as_ref().is_some_and(Vec::is_empty),
        ];
        if empty.iter().any(|&e| e) {
            return Err(Error::ConfigInvalid("grid lists must be non-empty when given".into()));
        }
        if g.n.iter().flatten().any(|&n| n == 0) {
            return Err(Error::ConfigInvalid("grid N values must be at least 1".into()));
        }
        Ok(())
    }

    fn ns(&self, default: &[usize]) -> Vec<usize> {
        self.grid.n.clone().unwrap_or_else(|| default.to_vec())
    }

    fn ks(&self, default: &[u32]) -> Vec<u32> {
        self.grid.k.clone().unwrap_or_else(|| default.to_vec())
    }

    fn kinds(&self) -> Vec<TreeKind> {
        self.grid.tree_kinds.clone().unwrap_or_else(|| vec![TreeKind::Mht, TreeKind::Hht])
    }

    fn distributions(&self, default: &[DistributionKind]) -> Vec<DistributionKind> {
        self.grid.distributions.clone().unwrap_or_else(|| default.to_vec())
    }

    /// Concrete schemes: every scheme kind crossed with tree kinds where
    /// they apply.
    fn schemes(&self) -> Vec<Scheme> {
        let kinds = self.kinds();
        let mut out = Vec::new();
        for s in self.grid.schemes.clone().unwrap_or_else(|| ALL_KINDS.to_vec()) {
            if s.uses_tree() {
                out.extend(kinds.iter().map(|&t| s.with_tree(t)));
            } else {
                out.push(s.with_tree(TreeKind::Mht));
            }
        }
        out
    }

    fn k_u(&self, k: u32) -> u32 {
        self.k_u.unwrap_or(k.saturating_sub(1))
    }
}

/// One CSV line; the header is fixed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub scheme: String,
    pub tree_kind: String,
    #[serde(rename = "N")]
    pub n: String,
    pub k: u32,
    pub distribution: String,
    pub metric: String,
    pub mean: f64,
    pub stddev: f64,
    pub units: String,
}

pub const CSV_HEADER: &str = "scheme,tree_kind,N,k,distribution,metric,mean,stddev,units";

fn mean_std(v: &[f64]) -> (f64, f64) {
    let s = crate::sim::Stats::from_values(v.iter().copied());
    (s.mean, s.stddev)
}

struct RowKey<'a> {
    scheme: &'a str,
    tree_kind: Option<TreeKind>,
    n: Option<usize>,
    k: u32,
    distribution: Option<DistributionKind>,
}

impl RowKey<'_> {
    fn row(&self, metric: &str, values: &[f64], units: &str) -> CsvRow {
        let (mean, stddev) = mean_std(values);
        assert!(mean.is_finite() && stddev.is_finite(), "non-finite {metric}");
        CsvRow {
            scheme: self.scheme.to_string(),
            tree_kind: self.tree_kind.map(|t| t.label().to_string()).unwrap_or_default(),
            n: self.n.map(|n| n.to_string()).unwrap_or_default(),
            k: self.k,
            distribution: self.distribution.map(|d| d.label().to_string()).unwrap_or_default(),
            metric: metric.to_string(),
            mean,
            stddev,
            units: units.to_string(),
        }
    }
}

pub fn write_csv(path: &Path, rows: &[CsvRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(CSV_HEADER.split(','))?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|source| Error::Io { path: path.to_owned(), source })?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Build cost, proof depth and verification cost of both tree kinds.
pub fn tree_bench(spec: &BenchSpec) -> Result<Vec<CsvRow>> {
    let mut rows = Vec::new();
    for k in spec.ks(&[1, 2, 3, 4, 5, 6, 7, 8]) {
        for dist in spec.distributions(&DistributionKind::ALL) {
            for kind in spec.kinds() {
                let (mut build, mut exp_verify, mut max_depth, mut micros) = (vec![], vec![], vec![], vec![]);
                for rep in 0..spec.repetitions {
                    let seed = spec.seed.wrapping_add(u64::from(rep));
                    let set = candidate_set(k, dist, seed)?;
                    let mut rng = ChaCha20Rng::seed_from_u64(seed);
                    let mut ctr = OpCounter::new();
                    let start = Instant::now();
                    let tree = AuthTree::build(kind, &set, &mut rng, &mut ctr)?;
                    micros.push(start.elapsed().as_secs_f64() * 1e6);
                    build.push(ctr.hash_ops() as f64);
                    exp_verify.push(tree.expected_depth(set.weights()) + 1.0);
                    max_depth.push(tree.max_depth() as f64);
                }
                let key = RowKey { scheme: "", tree_kind: Some(kind), n: None, k, distribution: Some(dist) };
                rows.push(key.row("build_ops", &build, "hash_ops"));
                rows.push(key.row("expected_verify_ops", &exp_verify, "hash_ops"));
                rows.push(key.row("max_depth", &max_depth, "levels"));
                if spec.wall_clock {
                    rows.push(key.row("build_time", &micros, "us"));
                }
            }
        }
    }
    Ok(rows)
}

/// Per-interval publisher cost and per-message costs of every scheme.
pub fn protocol_bench(spec: &BenchSpec) -> Result<Vec<CsvRow>> {
    let mut rows = Vec::new();
    for scheme in spec.schemes() {
        for k in spec.ks(&[5]) {
            if scheme == Scheme::Baseline(BaselineDesign::StateChange) && spec.k_u(k) >= k {
                continue;
            }
            for dist in spec.distributions(&[DistributionKind::NinetyUniform]) {
                for n in spec.ns(&[1, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100]) {
                    let (mut pre, mut post, mut sub, mut comm, mut micros) = (vec![], vec![], vec![], vec![], vec![]);
                    for rep in 0..spec.repetitions {
                        let seed = spec.seed.wrapping_add(u64::from(rep));
                        let point = Point { scheme, n, k, k_u: spec.k_u(k), distribution: dist };
                        let start = Instant::now();
                        let m = measure_interval(point, seed, CostModel::default())?;
                        micros.push(start.elapsed().as_secs_f64() * 1e6);
                        pre.push(m.per_interval as f64);
                        post.push(m.expected(|c| c.post_message as f64));
                        sub.push(m.expected(|c| c.subscriber[0] as f64));
                        comm.push(m.expected(|c| c.communication as f64));
                    }
                    let key = RowKey { scheme: scheme.name(), tree_kind: scheme.tree_kind(), n: Some(n), k, distribution: Some(dist) };
                    rows.push(key.row("publisher_per_interval_ops", &pre, "hash_ops"));
                    rows.push(key.row("publisher_post_message_ops", &post, "hash_ops"));
                    rows.push(key.row("subscriber_ops_per_message", &sub, "hash_ops"));
                    rows.push(key.row("communication_per_message", &comm, "values"));
                    if spec.wall_clock {
                        rows.push(key.row("interval_time", &micros, "us"));
                    }
                }
            }
        }
    }
    Ok(rows)
}

/// A measured count that differs from its closed form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mismatch {
    pub scheme: String,
    pub n: usize,
    pub k: u32,
    pub metric: String,
    /// Candidate index for per-message metrics.
    pub message: Option<usize>,
    pub expected: u64,
    pub actual: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Table1Report {
    pub points: usize,
    pub checks: usize,
    /// Grid points skipped because the design does not apply (e.g. the
    /// state-change design at `k = 0`).
    pub skipped: Vec<String>,
    pub mismatches: Vec<Mismatch>,
}

impl Table1Report {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

fn compare(report: &mut Table1Report, m: &IntervalCost) {
    let p = m.point;
    let mut check = |metric: &str, message: Option<usize>, expected: u64, actual: u64| {
        report.checks += 1;
        if expected != actual {
            report.mismatches.push(Mismatch { scheme: p.scheme.to_string(), n: p.n, k: p.k, metric: metric.into(), message, expected, actual });
        }
    };
    let base = CostParams { n: p.n as u64, k: p.k, k_u: p.k_u, depth: 0 };
    check("per_interval", None, expected(p.scheme, base, Outcome::Hit).per_interval, m.per_interval);
    for msg in &m.messages {
        let outcome = if msg.hit { Outcome::Hit } else { Outcome::Miss };
        let params = CostParams { depth: msg.depth.unwrap_or(0) as u64, ..base };
        let e = expected(p.scheme, params, outcome);
        check("post_message", Some(msg.index), e.post_message, msg.post_message);
        for &s in &msg.subscriber {
            check("subscriber", Some(msg.index), e.subscriber, s);
        }
        check("communication", Some(msg.index), e.communication, msg.communication);
        if p.scheme.tree_kind() == Some(TreeKind::Mht) {
            check("mht_depth", Some(msg.index), u64::from(p.k), params.depth);
        }
    }
}

/// Measures every scheme on the grid and compares with the closed forms.
pub fn table1_check(spec: &BenchSpec) -> Result<Table1Report> {
    let mut report = Table1Report::default();
    let dist = spec.distributions(&[DistributionKind::HalfUniform])[0];
    for scheme in spec.schemes() {
        for n in spec.ns(&[1, 2, 10, 50]) {
            for k in spec.ks(&[1, 2, 3, 4, 5]) {
                let k_u = spec.k_u(k);
                if scheme == Scheme::Baseline(BaselineDesign::StateChange) && k_u >= k {
                    report.skipped.push(format!("{scheme} N={n} k={k}: needs k_u < k"));
                    continue;
                }
                let m = measure_interval(Point { scheme, n, k, k_u, distribution: dist }, spec.seed, spec.cost_model)?;
                report.points += 1;
                compare(&mut report, &m);
            }
        }
    }
    Ok(report)
}

fn table1_rows(report: &Table1Report) -> Vec<CsvRow> {
    let key = RowKey { scheme: "ALL", tree_kind: None, n: None, k: 0, distribution: None };
    let mut rows = vec![
        key.row("grid_points", &[report.points as f64], "count"),
        key.row("checks", &[report.checks as f64], "count"),
        key.row("mismatches", &[report.mismatches.len() as f64], "count"),
    ];
    for m in &report.mismatches {
        let key = RowKey { scheme: &m.scheme, tree_kind: None, n: Some(m.n), k: m.k, distribution: None };
        rows.push(key.row(&format!("{}_expected", m.metric), &[m.expected as f64], "hash_ops"));
        rows.push(key.row(&format!("{}_actual", m.metric), &[m.actual as f64], "hash_ops"));
    }
    rows
}

/// A grid point of the simulation sweep with all its runs.
#[derive(Clone, Debug, Serialize)]
pub struct SimPoint {
    pub config: SimConfig,
    pub runs: Vec<SimReport>,
    pub adversaries: Vec<SimReport>,
}

impl SimPoint {
    pub fn clean(&self) -> bool {
        self.runs.iter().chain(&self.adversaries).all(SimReport::is_clean)
    }
}

fn sim_configs(spec: &BenchSpec) -> Vec<SimConfig> {
    let base = SimConfig { seed: spec.seed, ..spec.sim.clone() };
    let schemes = spec.grid.schemes.clone().unwrap_or_else(|| vec![base.scheme]);
    let kinds = spec.grid.tree_kinds.clone().unwrap_or_else(|| vec![base.tree_kind]);
    let dists = spec.grid.distributions.clone().unwrap_or_else(|| vec![base.distribution]);
    let ks = spec.grid.k.clone().unwrap_or_else(|| vec![base.k]);
    let ns = spec.grid.n.clone().unwrap_or_else(|| vec![base.n]);
    let mut out = Vec::new();
    for &scheme in &schemes {
        let kinds = if scheme.uses_tree() { kinds.clone() } else { vec![base.tree_kind] };
        for &tree_kind in &kinds {
            for &distribution in &dists {
                for &k in &ks {
                    for &n in &ns {
                        out.push(SimConfig { scheme, tree_kind, distribution, k, n, ..base.clone() });
                    }
                }
            }
        }
    }
    out
}

/// Runs the simulation grid. The first run of each point also returns its
/// trace as JSON lines.
pub fn sim_sweep(spec: &BenchSpec) -> Result<(Vec<SimPoint>, Vec<String>)> {
    let mut points = Vec::new();
    let mut traces = Vec::new();
    for cfg in sim_configs(spec) {
        cfg.validate()?;
        let mut runs = Vec::new();
        for rep in 0..spec.repetitions {
            let c = SimConfig { seed: cfg.seed.wrapping_add(u64::from(rep)), ..cfg.clone() };
            let (report, trace) = run_sim(&c)?;
            if rep == 0 {
                traces.push(trace.to_jsonl());
            }
            runs.push(report);
        }
        let mut adversaries = Vec::new();
        if cfg.scheme.uses_tree() {
            for &s in &spec.adversaries {
                adversaries.push(inject_adversary(&cfg, s, spec.adversary_attempts)?);
            }
        }
        points.push(SimPoint { config: cfg, runs, adversaries });
    }
    Ok((points, traces))
}

fn sim_rows(points: &[SimPoint]) -> Vec<CsvRow> {
    let mut rows = Vec::new();
    for p in points {
        let c = &p.config;
        let scheme = c.scheme();
        let key = RowKey { scheme: scheme.name(), tree_kind: scheme.tree_kind(), n: Some(c.n), k: c.k, distribution: Some(c.distribution) };
        let col = |f: &dyn Fn(&SimReport) -> f64| p.runs.iter().map(f).collect::<Vec<f64>>();
        rows.push(key.row("verify_ops", &col(&|r| r.verify_ops.mean), "hash_ops"));
        rows.push(key.row("subscriber_ops_per_message", &col(&|r| r.subscriber_ops_per_message), "hash_ops"));
        rows.push(key.row("publisher_total_ops", &col(&|r| r.publisher.total_ops as f64), "hash_ops"));
        if c.scheme == SchemeKind::Cmma {
            rows.push(key.row(
                "publisher_amortized_total_ops",
                &col(&|r| r.publisher.amortized_total_ops.unwrap_or(0) as f64),
                "hash_ops",
            ));
        }
        rows.push(key.row("post_message_ops", &col(&|r| r.post_message_ops.mean), "hash_ops"));
        rows.push(key.row("communication_per_message", &col(&|r| r.communication_values.mean), "values"));
        rows.push(key.row("latency", &col(&|r| r.latency_us.mean), "us"));
        rows.push(key.row("hit_rate", &col(&|r| r.hit_rate), "ratio"));
        rows.push(key.row("messages", &col(&|r| r.messages as f64), "count"));
        rows.push(key.row("invariant_violations", &col(&|r| r.invariant_violations.len() as f64), "count"));
        for a in &p.adversaries {
            let rep = a.adversary.as_ref().expect("adversarial run");
            rows.push(key.row(&format!("adversary_{}_attempts", rep.strategy), &[rep.attempts as f64], "count"));
            rows.push(key.row(&format!("adversary_{}_accepted", rep.strategy), &[rep.accepted as f64], "count"));
        }
    }
    rows
}

/// Outcome of a CLI run.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchOutcome {
    pub passed: bool,
    pub files: Vec<PathBuf>,
    pub summary: String,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io { path: path.to_owned(), source })
}

/// Runs `mode` and writes its outputs under `out`.
pub fn run(spec: &BenchSpec, mode: Mode, out: &Path) -> Result<BenchOutcome> {
    spec.validate()?;
    fs::create_dir_all(out).map_err(|source| Error::Io { path: out.to_owned(), source })?;
    let mut files = Vec::new();
    let (passed, summary) = match mode {
        Mode::TreeBench => {
            let rows = tree_bench(spec)?;
            let path = out.join("tree_bench.csv");
            write_csv(&path, &rows)?;
            files.push(path);
            (true, format!("{} rows", rows.len()))
        }
        Mode::ProtocolBench => {
            let rows = protocol_bench(spec)?;
            let path = out.join("protocol_bench.csv");
            write_csv(&path, &rows)?;
            files.push(path);
            (true, format!("{} rows", rows.len()))
        }
        Mode::Table1Check => {
            let report = table1_check(spec)?;
            let json = out.join("table1.json");
            write_text(&json, &serde_json::to_string_pretty(&report)?)?;
            let csv = out.join("table1.csv");
            write_csv(&csv, &table1_rows(&report))?;
            files.extend([json, csv]);
            let mut summary = format!("{} grid points, {} checks, {} mismatches", report.points, report.checks, report.mismatches.len());
            for m in report.mismatches.iter().take(20) {
                summary.push_str(&format!(
                    "\n  {} N={} k={} {}{}: expected {} got {}",
                    m.scheme,
                    m.n,
                    m.k,
                    m.metric,
                    m.message.map(|i| format!("[{i}]")).unwrap_or_default(),
                    m.expected,
                    m.actual
                ));
            }
            (report.passed(), summary)
        }
        Mode::Sim => {
            let (points, traces) = sim_sweep(spec)?;
            let report = out.join("report.json");
            write_text(&report, &serde_json::to_string_pretty(&points)?)?;
            files.push(report);
            for (i, t) in traces.iter().enumerate() {
                let name = if traces.len() == 1 { "trace.jsonl".to_string() } else { format!("trace-{i}.jsonl") };
                let path = out.join(name);
                write_text(&path, t)?;
                files.push(path);
            }
            let csv = out.join("summary.csv");
            write_csv(&csv, &sim_rows(&points))?;
            files.push(csv);
            let bad: Vec<String> = points
                .iter()
                .flat_map(|p| p.runs.iter().chain(&p.adversaries))
                .filter(|r| !r.is_clean())
                .map(|r| {
                    let acc = r.adversary.as_ref().map_or(0, |a| a.accepted);
                    format!("{} {:?}: {} violations, {} forgeries accepted", r.scheme, r.tree_kind, r.invariant_violations.len(), acc)
                })
                .collect();
            let summary = format!("{} grid points, {} unclean runs{}", points.len(), bad.len(), bad.iter().map(|b| format!("\n  {b}")).collect::<String>());
            (bad.is_empty(), summary)
        }
    };
    Ok(BenchOutcome { passed, files, summary })
}
