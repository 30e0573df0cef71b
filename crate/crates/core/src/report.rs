//! Model-versus-simulation validation and field-log analysis reports.

use crate::metrics::{correlate, MetricsError};
use crate::model::{model_sweep_with, FormulaVariant, ModelError};
use crate::sim::{group_by_rho, merge_summaries, simulate_sweep, SimConfig, SimError, SweepAxis, SweepRun};
use crate::trace::QosLogRow;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));
pub const DEFAULT_THRESHOLD: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReportError {
    #[error("load grid is empty")]
    EmptyGrid,
    #[error("log has no rows")]
    EmptyLog,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationSettings {
    pub capacity: f64,
    pub rho_grid: Vec<f64>,
    pub packets: u64,
    pub seeds: usize,
    pub base_seed: u64,
    pub tagged_fraction: f64,
    pub warmup_fraction: f64,
    pub variant: FormulaVariant,
    pub threshold: f64,
}

impl ValidationSettings {
    pub fn new(capacity: f64, rho_grid: Vec<f64>) -> Self {
        let base = SimConfig::new(capacity, 0.5 * capacity);
        Self {
            capacity,
            rho_grid,
            packets: base.horizon_packets,
            seeds: 5,
            base_seed: base.seed,
            tagged_fraction: base.tagged_fraction,
            warmup_fraction: base.warmup_fraction,
            variant: FormulaVariant::default(),
            threshold: DEFAULT_THRESHOLD,
        }
    }

    /// Base simulator configuration; the sweep substitutes `lambda = rho * C`.
    pub fn sim_config(&self) -> SimConfig {
        SimConfig::new(self.capacity, 0.5 * self.capacity)
            .with_packets(self.packets)
            .with_seed(self.base_seed)
            .with_tagged_fraction(self.tagged_fraction)
            .with_warmup(self.warmup_fraction)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub rho: f64,
    pub lambda: f64,
    pub j_model: f64,
    pub j_sim_mean: f64,
    pub j_sim_stderr: Option<f64>,
    /// `|J_model - J_sim| / J_sim`.
    pub relative_error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub settings: ValidationSettings,
    pub rows: Vec<ValidationRow>,
    pub runs: Vec<SweepRun>,
}

/// Evaluates the model and the simulator on every grid load and compares
/// them.
pub fn run_validation(settings: &ValidationSettings) -> Result<ValidationReport, ReportError> {
    if settings.rho_grid.is_empty() {
        return Err(ReportError::EmptyGrid);
    }
    let model = model_sweep_with(settings.capacity, &settings.rho_grid, settings.variant)?;
    let runs = simulate_sweep(
        &settings.sim_config(),
        &settings.rho_grid,
        settings.seeds,
        SweepAxis::ArrivalRate,
    )?;
    let rows = group_by_rho(&runs)
        .into_iter()
        .zip(&model)
        .map(|((_, group), m)| {
            let merged = merge_summaries(&group)?;
            let relative_error = (m.jitter_seconds - merged.mean_jitter).abs() / merged.mean_jitter;
            Ok(ValidationRow {
                rho: m.rho,
                lambda: m.arrival_rate,
                j_model: m.jitter_seconds,
                j_sim_mean: merged.mean_jitter,
                j_sim_stderr: merged.jitter_stderr,
                relative_error,
                pass: relative_error <= settings.threshold,
            })
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    Ok(ValidationReport {
        settings: settings.clone(),
        rows,
        runs,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    fn metadata(&self) -> String {
        let s = &self.settings;
        let mut out = String::new();
        let grid: Vec<String> = s.rho_grid.iter().map(|r| r.to_string()).collect();
        for (k, v) in [
            ("tool", TOOL_VERSION.to_string()),
            ("capacity_pps", s.capacity.to_string()),
            ("rho_grid", grid.join(";")),
            ("formula_variant", s.variant.to_string()),
            ("packets_per_run", s.packets.to_string()),
            ("seeds_per_point", s.seeds.to_string()),
            ("base_seed", s.base_seed.to_string()),
            ("seed_derivation", "splitmix64(base_seed ^ splitmix64(rho_index << 32 | seed_index))".into()),
            ("rng", "ChaCha8".into()),
            ("tagged_fraction", s.tagged_fraction.to_string()),
            ("warmup_fraction", s.warmup_fraction.to_string()),
            ("service", "exponential".into()),
            ("buffer", "unbounded".into()),
            ("threshold", s.threshold.to_string()),
            ("all_pass", self.all_pass().to_string()),
        ] {
            let _ = writeln!(out, "# {k}={v}");
        }
        out
    }

    /// Report CSV: `# key=value` metadata block, then one row per load.
    pub fn to_csv(&self) -> String {
        let mut out = self.metadata();
        out.push_str("rho,lambda_pps,j_model_s,j_sim_mean_s,j_sim_stderr_s,relative_error,pass\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.rho,
                r.lambda,
                r.j_model,
                r.j_sim_mean,
                opt(r.j_sim_stderr),
                r.relative_error,
                r.pass
            );
        }
        out
    }

    /// Per-run CSV listing the derived seed of every simulation.
    pub fn runs_csv(&self) -> String {
        let mut out = self.metadata();
        out.push_str("rho_index,seed_index,rho,seed,empirical_jitter_s,n_jitter_samples,mean_sojourn_s,throughput_pps,loss\n");
        for run in &self.runs {
            let s = &run.summary;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                run.rho_index,
                run.seed_index,
                run.rho,
                s.seed,
                s.empirical_jitter,
                s.n_jitter_samples,
                s.mean_sojourn,
                s.throughput,
                s.loss
            );
        }
        out
    }

    pub fn plot_model(&self) -> String {
        plot_data(self.rows.iter().map(|r| (r.rho, r.j_model)))
    }

    pub fn plot_sim(&self) -> String {
        plot_data(self.rows.iter().map(|r| (r.rho, r.j_sim_mean)))
    }
}

/// Two-column whitespace-separated numeric text.
pub fn plot_data(points: impl IntoIterator<Item = (f64, f64)>) -> String {
    points.into_iter().fold(String::new(), |mut out, (x, y)| {
        let _ = writeln!(out, "{x} {y}");
        out
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnSummary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl ColumnSummary {
    fn of(values: &[f64]) -> Self {
        Self {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

pub const ANALYSIS_COLUMNS: [&str; 3] = ["tput_Bps", "jitter_ms", "loss_fraction"];

/// Pairwise correlations over the three QoS columns. Off-diagonal entries
/// are `None` where a column is constant or too short.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub labels: Vec<String>,
    pub pearson: Vec<Vec<Option<f64>>>,
    pub spearman: Vec<Vec<Option<f64>>>,
    pub notes: Vec<String>,
}

impl CorrelationMatrix {
    fn compute(columns: &[Vec<f64>; 3]) -> Self {
        let mut pearson = vec![vec![None; 3]; 3];
        let mut spearman = vec![vec![None; 3]; 3];
        let mut notes = Vec::new();
        for i in 0..3 {
            pearson[i][i] = Some(1.0);
            spearman[i][i] = Some(1.0);
            for j in (i + 1)..3 {
                match correlate(&columns[i], &columns[j]) {
                    Ok(s) => {
                        pearson[i][j] = Some(s.pearson_r);
                        pearson[j][i] = Some(s.pearson_r);
                        spearman[i][j] = Some(s.spearman_rho);
                        spearman[j][i] = Some(s.spearman_rho);
                    }
                    Err(e) => {
                        let e = match e {
                            MetricsError::ConstantSeries('a') => format!("{} is constant", ANALYSIS_COLUMNS[i]),
                            MetricsError::ConstantSeries(_) => format!("{} is constant", ANALYSIS_COLUMNS[j]),
                            other => other.to_string(),
                        };
                        notes.push(format!(
                            "corr({}, {}) undefined: {e}",
                            ANALYSIS_COLUMNS[i], ANALYSIS_COLUMNS[j]
                        ));
                    }
                }
            }
        }
        Self {
            labels: ANALYSIS_COLUMNS.iter().map(|s| s.to_string()).collect(),
            pearson,
            spearman,
            notes,
        }
    }

    /// Pearson coefficient between two named columns.
    pub fn pearson_between(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.labels.iter().position(|l| l == a)?;
        let j = self.labels.iter().position(|l| l == b)?;
        self.pearson[i][j]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedBin {
    /// Bin centre; bins are 10 km/h wide.
    pub speed_kmh: f64,
    pub n: usize,
    pub tput: ColumnSummary,
    pub jitter: ColumnSummary,
    pub loss: ColumnSummary,
    pub correlation: CorrelationMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub n_rows: usize,
    pub duration_s: i64,
    pub tput: ColumnSummary,
    pub jitter: ColumnSummary,
    pub loss: ColumnSummary,
    pub correlation: CorrelationMatrix,
    pub by_speed: Option<Vec<SpeedBin>>,
}

pub const SPEED_BIN_KMH: f64 = 10.0;

fn columns(rows: &[&QosLogRow]) -> [Vec<f64>; 3] {
    [
        rows.iter().map(|r| r.tput_bps).collect(),
        rows.iter().map(|r| r.jitter_ms).collect(),
        rows.iter().map(|r| r.loss_fraction()).collect(),
    ]
}

pub fn analyze_log(rows: &[QosLogRow], by_speed: bool) -> Result<AnalysisReport, ReportError> {
    let (first, last) = match (rows.first(), rows.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(ReportError::EmptyLog),
    };
    let all: Vec<&QosLogRow> = rows.iter().collect();
    let cols = columns(&all);
    let by_speed = by_speed.then(|| {
        let mut keys: Vec<i64> = rows
            .iter()
            .map(|r| (r.speed_kmh / SPEED_BIN_KMH).round() as i64)
            .collect();
        keys.sort_unstable();
        keys.dedup();
        keys.into_iter()
            .map(|key| {
                let members: Vec<&QosLogRow> = rows
                    .iter()
                    .filter(|r| (r.speed_kmh / SPEED_BIN_KMH).round() as i64 == key)
                    .collect();
                let c = columns(&members);
                SpeedBin {
                    speed_kmh: key as f64 * SPEED_BIN_KMH,
                    n: members.len(),
                    tput: ColumnSummary::of(&c[0]),
                    jitter: ColumnSummary::of(&c[1]),
                    loss: ColumnSummary::of(&c[2]),
                    correlation: CorrelationMatrix::compute(&c),
                }
            })
            .collect()
    });
    Ok(AnalysisReport {
        n_rows: rows.len(),
        duration_s: last.t_unix_s - first.t_unix_s + 1,
        tput: ColumnSummary::of(&cols[0]),
        jitter: ColumnSummary::of(&cols[1]),
        loss: ColumnSummary::of(&cols[2]),
        correlation: CorrelationMatrix::compute(&cols),
        by_speed,
    })
}

fn fmt_corr(v: Option<f64>) -> String {
    v.map(|x| format!("{x:+.3}")).unwrap_or_else(|| "   n/a".to_string())
}

impl AnalysisReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "rows: {}  duration: {} s", self.n_rows, self.duration_s);
        for (name, c) in [("tput_Bps", &self.tput), ("jitter_ms", &self.jitter), ("loss_fraction", &self.loss)] {
            let _ = writeln!(out, "{name:>14}  mean {:>12.4}  min {:>12.4}  max {:>12.4}", c.mean, c.min, c.max);
        }
        let _ = writeln!(out, "pearson correlation:");
        let _ = writeln!(out, "{:>14}  {:>13} {:>13} {:>13}", "", ANALYSIS_COLUMNS[0], ANALYSIS_COLUMNS[1], ANALYSIS_COLUMNS[2]);
        for (i, label) in ANALYSIS_COLUMNS.iter().enumerate() {
            let row = &self.correlation.pearson[i];
            let _ = writeln!(
                out,
                "{label:>14}  {:>13} {:>13} {:>13}",
                fmt_corr(row[0]),
                fmt_corr(row[1]),
                fmt_corr(row[2])
            );
        }
        for note in &self.correlation.notes {
            let _ = writeln!(out, "note: {note}");
        }
        if let Some(bins) = &self.by_speed {
            let _ = writeln!(out, "by speed:");
            let _ = writeln!(
                out,
                "{:>9} {:>6} {:>12} {:>10} {:>8} {:>16} {:>17}",
                "speed", "n", "tput_Bps", "jitter_ms", "loss", "r(tput,jitter)", "r(jitter,loss)"
            );
            for b in bins {
                let _ = writeln!(
                    out,
                    "{:>9} {:>6} {:>12.1} {:>10.4} {:>8.4} {:>16} {:>17}",
                    b.speed_kmh,
                    b.n,
                    b.tput.mean,
                    b.jitter.mean,
                    b.loss.mean,
                    fmt_corr(b.correlation.pearson[0][1]),
                    fmt_corr(b.correlation.pearson[1][2])
                );
            }
        }
        out
    }
}

/// Plot-data series of a log: time (s from the first row) against a column.
pub fn log_plot_data(rows: &[QosLogRow], column: impl Fn(&QosLogRow) -> f64) -> String {
    let t0 = rows.first().map(|r| r.t_unix_s).unwrap_or(0);
    plot_data(rows.iter().map(|r| ((r.t_unix_s - t0) as f64, column(r))))
}
