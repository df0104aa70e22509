//! Canned sweeps for the MSE-vs-n, MSE-vs-k and method-comparison figures,
//! each with the trend or ordering it is expected to show.

use std::fmt;

use super::{
    aggregate, find_stats, plotdata, run_sweep, CellKey, ExperimentConfig, Grid, MatrixKind, Metric, Noise, RunOptions,
    Series, SolverKind, SummaryRow, SweepSpec, TrialRecord,
};
use crate::error::{CsError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Figure {
    /// Median MSE against signal length `n` (`k = 15`, `m = n / 4`).
    Fig6,
    /// Median MSE against sparsity `k` (`n = 200`, `m = 50`).
    Fig7,
    /// Bayes vs basis pursuit on `n = 200, k = 15, m = 80`, both matrix kinds.
    Table1,
}

impl Figure {
    pub fn name(self) -> &'static str {
        match self {
            Figure::Fig6 => "fig6",
            Figure::Fig7 => "fig7",
            Figure::Table1 => "table1",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fig6" => Ok(Figure::Fig6),
            "fig7" => Ok(Figure::Fig7),
            "table1" => Ok(Figure::Table1),
            other => Err(CsError::InvalidConfig(format!("unknown figure `{other}`"))),
        }
    }
}

pub const FIG6_N: [usize; 4] = [50, 100, 200, 400];
pub const FIG7_K: [usize; 4] = [5, 10, 20, 40];
const SOLVERS: [SolverKind; 2] = [SolverKind::Bayes, SolverKind::Bp];

pub fn figure_spec(fig: Figure, base_seed: u64, trials: usize) -> SweepSpec {
    let base = ExperimentConfig {
        base_seed,
        trials,
        noise: Noise::SnrDb(20.0),
        ..ExperimentConfig::default()
    };
    match fig {
        Figure::Fig6 => SweepSpec {
            base: ExperimentConfig { k: 15, ..base },
            grid: Grid {
                n: FIG6_N.to_vec(),
                m_fraction: Some(0.25),
                solver: SOLVERS.to_vec(),
                ..Grid::default()
            },
        },
        Figure::Fig7 => SweepSpec {
            base: ExperimentConfig { n: 200, m: 50, ..base },
            grid: Grid {
                k: FIG7_K.to_vec(),
                solver: SOLVERS.to_vec(),
                ..Grid::default()
            },
        },
        Figure::Table1 => SweepSpec {
            base: ExperimentConfig {
                n: 200,
                m: 80,
                k: 15,
                ..base
            },
            grid: Grid {
                matrix: vec![MatrixKind::Circulant, MatrixKind::DenseRandom],
                solver: SOLVERS.to_vec(),
                ..Grid::default()
            },
        },
    }
}

/// One asserted trend or ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {}: {}", self.name, self.detail)
    }
}

#[derive(Debug, Clone)]
pub struct FigureOutcome {
    pub figure: Figure,
    pub table: Vec<TrialRecord>,
    pub summary: Vec<SummaryRow>,
    pub checks: Vec<Check>,
    /// Plot data for the sweeps that have an x axis.
    pub plot: Option<String>,
    /// Informational lines (ratios) that are not asserted.
    pub notes: Vec<String>,
}

impl FigureOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub fn run_figure(fig: Figure, base_seed: u64, trials: usize, opts: RunOptions) -> Result<FigureOutcome> {
    let spec = figure_spec(fig, base_seed, trials);
    let table = run_sweep(&spec, opts)?;
    evaluate(fig, &spec, table)
}

fn stat(summary: &[SummaryRow], cell: CellKey, metric: Metric, pick: fn(&super::Stats) -> f64) -> Result<f64> {
    find_stats(summary, cell, metric).map(|s| pick(&s)).ok_or_else(|| {
        CsError::InvalidConfig(format!(
            "no {} values for n={} m={} k={} {} {}",
            metric.as_str(),
            cell.n,
            cell.m,
            cell.k,
            cell.matrix.as_str(),
            cell.solver.as_str()
        ))
    })
}

fn median(s: &super::Stats) -> f64 {
    s.median
}

fn mean(s: &super::Stats) -> f64 {
    s.mean
}

/// Aggregates `table` and evaluates the figure's assertions.
pub fn evaluate(fig: Figure, spec: &SweepSpec, table: Vec<TrialRecord>) -> Result<FigureOutcome> {
    let summary = aggregate(&table)?;
    let cells = spec.cells()?;
    let key = |c: &ExperimentConfig| CellKey {
        n: c.n,
        m: c.m,
        k: c.k,
        matrix: c.matrix,
        solver: c.solver,
    };
    let mut checks = Vec::new();
    let mut notes = Vec::new();
    let mut plot = None;

    match fig {
        Figure::Fig6 | Figure::Fig7 => {
            let (x_of, x_label, want_decreasing): (fn(&ExperimentConfig) -> usize, &str, bool) = match fig {
                Figure::Fig6 => (|c| c.n, "n", true),
                _ => (|c| c.k, "k", false),
            };
            let mut series = Vec::new();
            let mut medians = Vec::new();
            for solver in SOLVERS {
                let mut pts = Vec::new();
                for c in cells.iter().filter(|c| c.solver == solver) {
                    pts.push((x_of(c), stat(&summary, key(c), Metric::Mse, median)?));
                }
                let monotone = pts.windows(2).all(|w| {
                    if want_decreasing {
                        w[1].1 <= w[0].1
                    } else {
                        w[1].1 >= w[0].1
                    }
                });
                let trend = if want_decreasing {
                    "non-increasing"
                } else {
                    "non-decreasing"
                };
                checks.push(Check {
                    name: format!("{} median MSE {trend} in {x_label} ({})", fig.name(), solver.as_str()),
                    passed: monotone,
                    detail: pts
                        .iter()
                        .map(|(x, y)| format!("{x_label}={x}: {y:.4e}"))
                        .collect::<Vec<_>>()
                        .join(", "),
                });
                series.push(super::Series {
                    name: format!("{}_median_mse", solver.as_str()),
                    points: pts.iter().map(|&(x, y)| (x as f64, y)).collect(),
                });
                medians.push(pts);
            }
            if fig == Figure::Fig6 {
                for (i, &n) in FIG6_N.iter().enumerate().filter(|(_, &n)| n <= 100) {
                    let bayes = medians[0][i].1;
                    let bp = medians[1][i].1;
                    checks.push(Check {
                        name: format!("fig6 median MSE bayes <= bp at n={n}"),
                        passed: bayes <= bp,
                        detail: format!("bayes {bayes:.4e} vs bp {bp:.4e}"),
                    });
                }
            }
            let title = match fig {
                Figure::Fig6 => "median MSE vs n (k=15, m=n/4, SNR 20 dB, circulant)",
                _ => "median MSE vs k (n=200, m=50, SNR 20 dB, circulant)",
            };
            plot = Some(plotdata(title, x_label, &series as &[Series]));
        }
        Figure::Table1 => {
            let base = &spec.base;
            let cell = |matrix, solver| CellKey {
                n: base.n,
                m: base.m,
                k: base.k,
                matrix,
                solver,
            };
            let bayes = cell(MatrixKind::Circulant, SolverKind::Bayes);
            let bp = cell(MatrixKind::Circulant, SolverKind::Bp);
            let re = (
                stat(&summary, bayes, Metric::Re, mean)?,
                stat(&summary, bp, Metric::Re, mean)?,
            );
            checks.push(Check {
                name: "table1 mean Re bayes < bp (circulant)".into(),
                passed: re.0 < re.1,
                detail: format!("{:.3}% vs {:.3}%", 100.0 * re.0, 100.0 * re.1),
            });
            let cc = (
                stat(&summary, bayes, Metric::Cc, mean)?,
                stat(&summary, bp, Metric::Cc, mean)?,
            );
            checks.push(Check {
                name: "table1 mean Cc bayes > bp (circulant)".into(),
                passed: cc.0 > cc.1,
                detail: format!("{:.3}% vs {:.3}%", 100.0 * cc.0, 100.0 * cc.1),
            });
            let tr = (
                stat(&summary, bayes, Metric::Tr, median)?,
                stat(&summary, bp, Metric::Tr, median)?,
            );
            checks.push(Check {
                name: "table1 median t_r bayes < bp (circulant)".into(),
                passed: tr.0 < tr.1,
                detail: format!(
                    "{:.3} ms vs {:.3} ms (bp/bayes = {:.2})",
                    1e3 * tr.0,
                    1e3 * tr.1,
                    tr.1 / tr.0
                ),
            });
            let dense_bayes = cell(MatrixKind::DenseRandom, SolverKind::Bayes);
            let ts_c = stat(&summary, bayes, Metric::Ts, median)?;
            let ts_d = stat(&summary, dense_bayes, Metric::Ts, median)?;
            notes.push(format!(
                "median t_s circulant {:.4} ms, dense random {:.4} ms (dense/circulant = {:.2})",
                1e3 * ts_c,
                1e3 * ts_d,
                ts_d / ts_c
            ));
            let re_d = stat(&summary, dense_bayes, Metric::Re, mean)?;
            notes.push(format!("mean Re bayes with dense random matrix {:.3}%", 100.0 * re_d));
        }
    }

    Ok(FigureOutcome {
        figure: fig,
        table,
        summary,
        checks,
        plot,
        notes,
    })
}
