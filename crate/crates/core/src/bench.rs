//! Seeded experiment driver: single trials, grid sweeps, aggregation and
//! CSV / plot-data output.
//!
//! Every trial derives its randomness from `trial_seed = base_seed + index`
//! alone, with independent ChaCha streams for the signal, the operator, the
//! row selection and the noise. Cells that differ only in solver therefore
//! see identical instances.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bayes::{reconstruct_bayes, BayesConfig};
use crate::bp::{reconstruct_bp, BpConfig};
use crate::error::{CsError, Result};
use crate::metrics::{timed, MetricReport, Section, Stopwatch};
use crate::sensing::{build_circulant, build_dense_random, make_seed, EntryDistribution, RowSelect, SensingOperator};
use crate::signals::{add_awgn, generate_spikes, sigma_for_snr, Amplitude, MeasurementVector, SparseSignal};
use crate::ReconstructionResult;

/// Exact header of the per-trial CSV.
pub const CSV_HEADER: &str = "trial_seed,n,m,k,sigma,matrix,solver,re,mse,cc,support,ts_s,tr_s,tp_s,converged,failed";

const STREAM_SIGNAL: u64 = 0;
const STREAM_OPERATOR: u64 = 1;
const STREAM_ROWS: u64 = 2;
const STREAM_NOISE: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixKind {
    Circulant,
    DenseRandom,
}

impl MatrixKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MatrixKind::Circulant => "circulant",
            MatrixKind::DenseRandom => "dense_random",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "circulant" => Ok(MatrixKind::Circulant),
            "dense_random" => Ok(MatrixKind::DenseRandom),
            other => Err(CsError::InvalidConfig(format!("unknown matrix kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Bayes,
    Bp,
}

impl SolverKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SolverKind::Bayes => "bayes",
            SolverKind::Bp => "bp",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "bayes" => Ok(SolverKind::Bayes),
            "bp" => Ok(SolverKind::Bp),
            other => Err(CsError::InvalidConfig(format!("unknown solver `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RowSelection {
    FirstM,
    #[default]
    Random,
}

/// Measurement noise level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Noise {
    /// Fixed standard deviation.
    Sigma(f64),
    /// Standard deviation chosen per trial for this measurement SNR (dB).
    SnrDb(f64),
}

impl Default for Noise {
    fn default() -> Self {
        Noise::SnrDb(20.0)
    }
}

/// One experiment cell plus the trial count and base seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub noise: Noise,
    pub matrix: MatrixKind,
    pub solver: SolverKind,
    pub trials: usize,
    pub base_seed: u64,
    pub seed_distribution: EntryDistribution,
    pub rows: RowSelection,
    pub amplitude: Amplitude,
    pub bayes: BayesConfig,
    pub bp: BpConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n: 200,
            m: 80,
            k: 15,
            noise: Noise::default(),
            matrix: MatrixKind::Circulant,
            solver: SolverKind::Bayes,
            trials: 100,
            base_seed: 1,
            seed_distribution: EntryDistribution::Gaussian,
            rows: RowSelection::Random,
            amplitude: Amplitude::PmOne,
            bayes: BayesConfig::default(),
            bp: BpConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(CsError::InvalidConfig("n must be >= 1".into()));
        }
        if self.k > self.n {
            return Err(CsError::InvalidConfig(format!("k = {} exceeds n = {}", self.k, self.n)));
        }
        if self.m == 0 || self.m > self.n {
            return Err(CsError::InvalidConfig(format!(
                "m = {} must satisfy 1 <= m <= n = {}",
                self.m, self.n
            )));
        }
        if self.trials == 0 {
            return Err(CsError::InvalidConfig("trials must be >= 1".into()));
        }
        match self.noise {
            Noise::Sigma(s) if !(s >= 0.0 && s.is_finite()) => {
                return Err(CsError::InvalidConfig(format!("sigma must be >= 0, got {s}")))
            }
            Noise::SnrDb(db) if !db.is_finite() => return Err(CsError::InvalidConfig("snr_db must be finite".into())),
            _ => {}
        }
        self.bayes.validate()?;
        self.bp.validate()
    }

    pub fn trial_seed(&self, trial_index: usize) -> u64 {
        self.base_seed.wrapping_add(trial_index as u64)
    }
}

/// Outcome of one trial. Metric fields are `None` on failure rows (and `cc`
/// also when the correlation is undefined).
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial_seed: u64,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    /// Noise standard deviation actually applied.
    pub sigma: f64,
    pub matrix: MatrixKind,
    pub solver: SolverKind,
    pub re: Option<f64>,
    pub mse: Option<f64>,
    pub cc: Option<f64>,
    pub support: Option<usize>,
    pub ts_s: Option<f64>,
    pub tr_s: Option<f64>,
    pub tp_s: Option<f64>,
    pub converged: bool,
    pub failed: bool,
    /// Failure reason; not part of the CSV.
    pub error: Option<String>,
    /// Set when timed sections may have overlapped other trials.
    pub shared_timing: bool,
}

impl TrialRecord {
    fn blank(cfg: &ExperimentConfig, trial_seed: u64) -> Self {
        Self {
            trial_seed,
            n: cfg.n,
            m: cfg.m,
            k: cfg.k,
            sigma: match cfg.noise {
                Noise::Sigma(s) => s,
                Noise::SnrDb(_) => f64::NAN,
            },
            matrix: cfg.matrix,
            solver: cfg.solver,
            re: None,
            mse: None,
            cc: None,
            support: None,
            ts_s: None,
            tr_s: None,
            tp_s: None,
            converged: false,
            failed: true,
            error: None,
            shared_timing: false,
        }
    }

    /// Grouping key for aggregation.
    pub fn cell_key(&self) -> CellKey {
        CellKey {
            n: self.n,
            m: self.m,
            k: self.k,
            matrix: self.matrix,
            solver: self.solver,
        }
    }
}

/// One fully materialized problem instance.
#[derive(Debug, Clone)]
pub struct Instance {
    pub signal: SparseSignal,
    pub operator: SensingOperator,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws the signal and operator of a trial.
pub fn build_instance(cfg: &ExperimentConfig, trial_seed: u64) -> Result<Instance> {
    let signal = generate_spikes(&mut stream_rng(trial_seed, STREAM_SIGNAL), cfg.n, cfg.k, cfg.amplitude)?;
    let mut op_rng = stream_rng(trial_seed, STREAM_OPERATOR);
    let operator = match cfg.matrix {
        MatrixKind::Circulant => {
            let seed = make_seed(&mut op_rng, cfg.n, cfg.seed_distribution)?;
            let mut row_rng = stream_rng(trial_seed, STREAM_ROWS);
            let select = match cfg.rows {
                RowSelection::FirstM => RowSelect::FirstM,
                RowSelection::Random => RowSelect::Random(&mut row_rng),
            };
            build_circulant(seed, cfg.m, select)?
        }
        MatrixKind::DenseRandom => build_dense_random(&mut op_rng, cfg.m, cfg.n, cfg.seed_distribution)?,
    };
    Ok(Instance {
        signal,
        operator: operator.with_rng_seed(trial_seed),
    })
}

/// Noisy measurements of an instance, plus the sampling time.
pub fn sample(cfg: &ExperimentConfig, inst: &Instance, trial_seed: u64) -> Result<(MeasurementVector, f64)> {
    let (clean, t_s) = timed(Section::Sampling, || inst.operator.measure(&inst.signal));
    let clean = clean?;
    let sigma = match cfg.noise {
        Noise::Sigma(s) => s,
        Noise::SnrDb(db) => sigma_for_snr(&clean, db),
    };
    let r = add_awgn(&mut stream_rng(trial_seed, STREAM_NOISE), &clean, sigma)?;
    Ok((r, t_s))
}

pub fn reconstruct(
    cfg: &ExperimentConfig,
    op: &SensingOperator,
    r: &MeasurementVector,
) -> Result<ReconstructionResult> {
    match cfg.solver {
        SolverKind::Bayes => reconstruct_bayes(op, r, &cfg.bayes),
        SolverKind::Bp => reconstruct_bp(op, r, &cfg.bp),
    }
}

/// Runs signal generation, sampling, noise, reconstruction and scoring for
/// trial `trial_index`. Errors become failure rows.
pub fn run_trial(cfg: &ExperimentConfig, trial_index: usize) -> TrialRecord {
    let trial_seed = cfg.trial_seed(trial_index);
    let mut record = TrialRecord::blank(cfg, trial_seed);
    if let Err(e) = run_trial_into(cfg, trial_seed, &mut record) {
        record.failed = true;
        record.error = Some(e.to_string());
    }
    record
}

fn run_trial_into(cfg: &ExperimentConfig, trial_seed: u64, record: &mut TrialRecord) -> Result<()> {
    cfg.validate()?;
    let inst = build_instance(cfg, trial_seed)?;
    let total = Stopwatch::start(Section::Total);
    let (r, t_s) = sample(cfg, &inst, trial_seed)?;
    record.sigma = r.noise_sigma().unwrap_or(0.0);
    record.ts_s = Some(t_s);
    let result = reconstruct(cfg, &inst.operator, &r)?;
    record.tr_s = Some(result.recovery_time);
    record.converged = result.converged;
    record.support = Some(result.support_size);
    let re = crate::metrics::reconstruction_error(&inst.signal, &result.estimate);
    let mse = crate::metrics::mean_square_error(&inst.signal, &result.estimate)?;
    let cc = crate::metrics::correlation(&inst.signal, &result.estimate)?;
    let t_p = total.stop();
    record.tp_s = Some(t_p);
    record.mse = Some(mse);
    record.cc = cc;
    let report = MetricReport {
        re: re?,
        mse,
        cc,
        support_size: result.support_size,
        t_s,
        t_r: result.recovery_time,
        t_p,
    };
    debug_assert!(report.t_p >= report.t_s.max(report.t_r));
    record.re = Some(report.re);
    record.failed = false;
    Ok(())
}

/// Grid axes; an empty axis keeps the base value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    pub n: Vec<usize>,
    pub m: Vec<usize>,
    /// Sets `m = round(fraction * n)` per cell; overrides `m`.
    pub m_fraction: Option<f64>,
    pub k: Vec<usize>,
    pub noise: Vec<Noise>,
    pub matrix: Vec<MatrixKind>,
    pub solver: Vec<SolverKind>,
}

/// A base configuration and the axes to sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub base: ExperimentConfig,
    pub grid: Grid,
}

impl SweepSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CsError::InvalidConfig(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("sweep spec serializes")
    }

    /// Cartesian product of the axes, in `n, m, k, noise, matrix, solver`
    /// nesting order.
    pub fn cells(&self) -> Result<Vec<ExperimentConfig>> {
        fn axis<T: Clone>(values: &[T], base: T) -> Vec<T> {
            if values.is_empty() {
                vec![base]
            } else {
                values.to_vec()
            }
        }
        let g = &self.grid;
        if let Some(f) = g.m_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return Err(CsError::InvalidConfig(format!(
                    "m_fraction must lie in (0, 1], got {f}"
                )));
            }
        }
        let mut cells = Vec::new();
        for n in axis(&g.n, self.base.n) {
            let ms = match g.m_fraction {
                Some(f) => vec![((f * n as f64).round() as usize).max(1)],
                None => axis(&g.m, self.base.m),
            };
            for &m in &ms {
                for k in axis(&g.k, self.base.k) {
                    for noise in axis(&g.noise, self.base.noise) {
                        for matrix in axis(&g.matrix, self.base.matrix) {
                            for solver in axis(&g.solver, self.base.solver) {
                                let cell = ExperimentConfig {
                                    n,
                                    m,
                                    k,
                                    noise,
                                    matrix,
                                    solver,
                                    ..self.base.clone()
                                };
                                cell.validate()?;
                                cells.push(cell);
                            }
                        }
                    }
                }
            }
        }
        if cells.is_empty() {
            return Err(CsError::InvalidConfig("sweep grid is empty".into()));
        }
        Ok(cells)
    }
}

/// Execution options for a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub workers: usize,
    /// Let timed sections overlap other trials.
    pub parallel_timing: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            parallel_timing: false,
        }
    }
}

/// Runs every (cell, trial) pair. Rows come back in cell-major, trial-minor
/// order regardless of the worker count.
pub fn run_sweep(spec: &SweepSpec, opts: RunOptions) -> Result<Vec<TrialRecord>> {
    let cells = spec.cells()?;
    let jobs: Vec<(usize, usize)> = cells
        .iter()
        .enumerate()
        .flat_map(|(c, cfg)| (0..cfg.trials).map(move |t| (c, t)))
        .collect();
    let workers = opts.workers.max(1).min(jobs.len().max(1));
    let shared = workers > 1 && opts.parallel_timing;
    let run = |&(c, t): &(usize, usize)| {
        let mut rec = run_trial(&cells[c], t);
        rec.shared_timing = shared;
        rec
    };
    if workers == 1 {
        return Ok(jobs.iter().map(run).collect());
    }

    // Without --parallel-timing, each trial runs under this lock, so no two
    // timed sections overlap.
    let timing_lock = Mutex::new(());
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<TrialRecord>>> = Mutex::new(vec![None; jobs.len()]);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs.len() {
                    break;
                }
                let rec = if opts.parallel_timing {
                    run(&jobs[i])
                } else {
                    let _guard = timing_lock.lock().unwrap_or_else(|p| p.into_inner());
                    run(&jobs[i])
                };
                slots.lock().unwrap_or_else(|p| p.into_inner())[i] = Some(rec);
            });
        }
    });
    Ok(slots
        .into_inner()
        .unwrap_or_else(|p| p.into_inner())
        .into_iter()
        .map(|r| r.expect("every job produces a record"))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub matrix: MatrixKind,
    pub solver: SolverKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    Re,
    Mse,
    Cc,
    Support,
    Ts,
    Tr,
    Tp,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::Re,
        Metric::Mse,
        Metric::Cc,
        Metric::Support,
        Metric::Ts,
        Metric::Tr,
        Metric::Tp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Re => "re",
            Metric::Mse => "mse",
            Metric::Cc => "cc",
            Metric::Support => "support",
            Metric::Ts => "ts_s",
            Metric::Tr => "tr_s",
            Metric::Tp => "tp_s",
        }
    }

    fn value(self, r: &TrialRecord) -> Option<f64> {
        match self {
            Metric::Re => r.re,
            Metric::Mse => r.mse,
            Metric::Cc => r.cc,
            Metric::Support => r.support.map(|s| s as f64),
            Metric::Ts => r.ts_s,
            Metric::Tr => r.tr_s,
            Metric::Tp => r.tp_s,
        }
    }
}

/// Distribution of one statistic within one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub p05: f64,
    pub p95: f64,
}

impl Stats {
    /// `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.total_cmp(b));
        Some(Self {
            count: v.len(),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            median: percentile(&v, 50.0),
            p05: percentile(&v, 5.0),
            p95: percentile(&v, 95.0),
        })
    }
}

/// Linear-interpolation percentile of sorted data.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub cell: CellKey,
    pub metric: Metric,
    pub trials: usize,
    pub failures: usize,
    pub failure_rate: f64,
    /// `None` when no successful trial has a value.
    pub stats: Option<Stats>,
}

/// Summary rows per (cell, metric), in first-appearance cell order.
pub fn aggregate(table: &[TrialRecord]) -> Result<Vec<SummaryRow>> {
    if table.is_empty() {
        return Err(CsError::InvalidConfig("cannot aggregate an empty table".into()));
    }
    let mut order: Vec<CellKey> = Vec::new();
    let mut groups: BTreeMap<CellKey, Vec<&TrialRecord>> = BTreeMap::new();
    for rec in table {
        let key = rec.cell_key();
        groups
            .entry(key)
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(rec);
    }
    let mut rows = Vec::with_capacity(order.len() * Metric::ALL.len());
    for key in order {
        let recs = &groups[&key];
        let failures = recs.iter().filter(|r| r.failed).count();
        for metric in Metric::ALL {
            let values: Vec<f64> = recs
                .iter()
                .filter(|r| !r.failed)
                .filter_map(|r| metric.value(r))
                .collect();
            rows.push(SummaryRow {
                cell: key,
                metric,
                trials: recs.len(),
                failures,
                failure_rate: failures as f64 / recs.len() as f64,
                stats: Stats::of(&values),
            });
        }
    }
    Ok(rows)
}

/// Looks up the statistics of `metric` for `cell`.
pub fn find_stats(summary: &[SummaryRow], cell: CellKey, metric: Metric) -> Option<Stats> {
    summary
        .iter()
        .find(|r| r.cell == cell && r.metric == metric)
        .and_then(|r| r.stats)
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Whether the timing columns carry measurements or are left empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimingColumns {
    Inline,
    Omitted,
}

/// Renders the per-trial table with the exact [`CSV_HEADER`].
pub fn trials_to_csv(table: &[TrialRecord], timing: TimingColumns) -> String {
    let mut out = String::with_capacity(64 * (table.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in table {
        let t = |v: Option<f64>| match timing {
            TimingColumns::Inline => opt(v),
            TimingColumns::Omitted => String::new(),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.trial_seed,
            r.n,
            r.m,
            r.k,
            r.sigma,
            r.matrix.as_str(),
            r.solver.as_str(),
            opt(r.re),
            opt(r.mse),
            opt(r.cc),
            opt(r.support),
            t(r.ts_s),
            t(r.tr_s),
            t(r.tp_s),
            r.converged,
            r.failed
        );
    }
    out
}

/// Parses a per-trial CSV produced by [`trials_to_csv`].
pub fn trials_from_csv(text: &str) -> Result<Vec<TrialRecord>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| CsError::InvalidConfig(e.to_string()))?;
    let header_line = header.iter().collect::<Vec<_>>().join(",");
    if header_line != CSV_HEADER {
        return Err(CsError::InvalidConfig(format!("unexpected CSV header `{header_line}`")));
    }
    let bad = |what: &str, line: usize| CsError::InvalidConfig(format!("row {line}: bad {what}"));
    let mut table = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| CsError::InvalidConfig(e.to_string()))?;
        let line = i + 2;
        let field = |j: usize| row.get(j).unwrap_or("");
        fn parse<T: std::str::FromStr>(s: &str) -> Option<T> {
            s.parse().ok()
        }
        fn optional<T: std::str::FromStr>(s: &str) -> std::result::Result<Option<T>, ()> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| ())
            }
        }
        table.push(TrialRecord {
            trial_seed: parse(field(0)).ok_or_else(|| bad("trial_seed", line))?,
            n: parse(field(1)).ok_or_else(|| bad("n", line))?,
            m: parse(field(2)).ok_or_else(|| bad("m", line))?,
            k: parse(field(3)).ok_or_else(|| bad("k", line))?,
            sigma: parse(field(4)).ok_or_else(|| bad("sigma", line))?,
            matrix: MatrixKind::parse(field(5))?,
            solver: SolverKind::parse(field(6))?,
            re: optional(field(7)).map_err(|_| bad("re", line))?,
            mse: optional(field(8)).map_err(|_| bad("mse", line))?,
            cc: optional(field(9)).map_err(|_| bad("cc", line))?,
            support: optional(field(10)).map_err(|_| bad("support", line))?,
            ts_s: optional(field(11)).map_err(|_| bad("ts_s", line))?,
            tr_s: optional(field(12)).map_err(|_| bad("tr_s", line))?,
            tp_s: optional(field(13)).map_err(|_| bad("tp_s", line))?,
            converged: parse(field(14)).ok_or_else(|| bad("converged", line))?,
            failed: parse(field(15)).ok_or_else(|| bad("failed", line))?,
            error: None,
            shared_timing: false,
        });
    }
    Ok(table)
}

pub const SUMMARY_HEADER: &str = "n,m,k,matrix,solver,metric,trials,failures,failure_rate,count,mean,median,p05,p95";

pub fn summary_to_csv(summary: &[SummaryRow]) -> String {
    let mut out = String::new();
    out.push_str(SUMMARY_HEADER);
    out.push('\n');
    for row in summary {
        let s = row.stats;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            row.cell.n,
            row.cell.m,
            row.cell.k,
            row.cell.matrix.as_str(),
            row.cell.solver.as_str(),
            row.metric.as_str(),
            row.trials,
            row.failures,
            row.failure_rate,
            s.map(|s| s.count).unwrap_or(0),
            opt(s.map(|s| s.mean)),
            opt(s.map(|s| s.median)),
            opt(s.map(|s| s.p05)),
            opt(s.map(|s| s.p95)),
        );
    }
    out
}

/// One named y-series over a shared x axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Whitespace-separated plot data: a comment header naming the columns, then
/// one line per x value with one column per series (`NaN` for gaps).
pub fn plotdata(title: &str, x_label: &str, series: &[Series]) -> String {
    let mut xs: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    xs.sort_by(|a, b| a.total_cmp(b));
    xs.dedup();
    let mut out = String::new();
    let _ = writeln!(out, "# {title}");
    let _ = write!(out, "# {x_label}");
    for s in series {
        let _ = write!(out, " {}", s.name);
    }
    out.push('\n');
    for x in xs {
        let _ = write!(out, "{x}");
        for s in series {
            let y = s.points.iter().find(|p| p.0 == x).map(|p| p.1).unwrap_or(f64::NAN);
            let _ = write!(out, " {y}");
        }
        out.push('\n');
    }
    out
}

/// Writes `contents` to `path`, creating parent directories.
pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| CsError::io(parent, e))?;
        }
    }
    std::fs::write(path, contents).map_err(|e| CsError::io(path, e))
}

pub mod figures;
