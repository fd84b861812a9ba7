//! Aggregated reports and their on-disk renderings.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Averaging, EvalOptions, PairCounts, PimpAggregation, QueryRow, PIMP_VERSION};
use crate::error::{Error, Result};
use crate::pipeline::{PipelineConfig, QueryTrace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub label: String,
    /// Queries included in the averages.
    pub queries: usize,
    /// Queries excluded because they could not be scored.
    pub failed: usize,
    /// Included queries whose relevant documents were all missing from the
    /// candidates (scored 0).
    pub no_relevant: usize,
    pub map: f64,
    pub mrr: f64,
    pub p_at_1: f64,
    pub p_imp: f64,
    pub pimp_version: String,
    pub pimp_aggregation: PimpAggregation,
    pub averaging: Averaging,
    pub pairs: PairCounts,
    pub latency_mean: f64,
    pub latency_p50: f64,
    pub latency_p95: f64,
    pub sensory_answered: usize,
    pub parse_failures: usize,
    pub degradations: BTreeMap<String, usize>,
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for x in v {
        s += x;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Nearest-rank percentile of sorted values.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

impl MetricReport {
    pub fn from_rows<'a>(label: &str, rows: impl IntoIterator<Item = &'a QueryRow>, opts: &EvalOptions) -> Self {
        let all: Vec<&QueryRow> = rows.into_iter().collect();
        let failed = all.iter().filter(|r| r.error.is_some()).count();
        let ok: Vec<&QueryRow> = all.into_iter().filter(|r| r.error.is_none()).collect();

        let (map, mrr, p_at_1) = match opts.averaging {
            Averaging::Query => (
                mean(ok.iter().map(|r| r.ap)),
                mean(ok.iter().map(|r| r.rr)),
                mean(ok.iter().map(|r| r.p1)),
            ),
            Averaging::User => {
                let mut users: BTreeMap<&str, Vec<&QueryRow>> = BTreeMap::new();
                for r in &ok {
                    users.entry(r.user_id.as_str()).or_default().push(r);
                }
                let per = |f: fn(&QueryRow) -> f64| mean(users.values().map(|rs| mean(rs.iter().map(|r| f(r)))));
                (per(|r| r.ap), per(|r| r.rr), per(|r| r.p1))
            }
        };

        let mut pairs = PairCounts::default();
        for r in &ok {
            pairs.add(r.pairs);
        }
        let p_imp = match opts.pimp {
            PimpAggregation::Micro => pairs.ratio(),
            PimpAggregation::Macro => mean(ok.iter().filter(|r| r.pairs.total_inverse > 0).map(|r| r.pairs.ratio())),
        };

        let mut lat: Vec<f64> = ok.iter().map(|r| r.latency).collect();
        lat.sort_by(f64::total_cmp);
        let mut degradations = BTreeMap::new();
        for r in &ok {
            for d in &r.degradations {
                *degradations.entry(d.clone()).or_insert(0) += 1;
            }
        }
        Self {
            label: label.to_string(),
            queries: ok.len(),
            failed,
            no_relevant: ok.iter().filter(|r| !r.relevant_in_candidates).count(),
            map,
            mrr,
            p_at_1,
            p_imp,
            pimp_version: PIMP_VERSION.to_string(),
            pimp_aggregation: opts.pimp,
            averaging: opts.averaging,
            pairs,
            latency_mean: mean(lat.iter().copied()),
            latency_p50: percentile(&lat, 50.0),
            latency_p95: percentile(&lat, 95.0),
            sensory_answered: ok.iter().filter(|r| r.answered_by == "sensory").count(),
            parse_failures: ok.iter().filter(|r| r.parse_failure).count(),
            degradations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub sensory: bool,
    pub working: bool,
    pub longterm_explicit: bool,
    pub longterm_implicit: bool,
    pub report: MetricReport,
    /// MAP change relative to the full configuration, in percent.
    pub map_delta_pct: f64,
    /// Mean latency over the full configuration's; absent when the full
    /// configuration's latency is zero.
    pub latency_ratio: Option<f64>,
}

impl AblationRow {
    pub fn new(name: &str, cfg: &PipelineConfig, report: MetricReport, full: &MetricReport) -> Self {
        let map_delta_pct = if full.map > 0.0 {
            (report.map - full.map) / full.map * 100.0
        } else {
            0.0
        };
        let latency_ratio = (full.latency_mean > 0.0).then(|| report.latency_mean / full.latency_mean);
        Self {
            name: name.to_string(),
            sensory: cfg.sensory,
            working: cfg.working,
            longterm_explicit: cfg.longterm_explicit,
            longterm_implicit: cfg.longterm_implicit,
            report,
            map_delta_pct,
            latency_ratio,
        }
    }

    fn is_full(&self) -> bool {
        self.sensory && self.working && self.longterm_explicit && self.longterm_implicit
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub fraction: f64,
    pub kept_interactions: usize,
    pub report: MetricReport,
}

/// `.7043` style: four decimals without the leading zero.
fn short(v: f64) -> String {
    let s = format!("{v:.4}");
    match s.strip_prefix("0.") {
        Some(rest) => format!(".{rest}"),
        None => s,
    }
}

/// One markdown row per report: MAP, MRR, P@1, P-imp.
pub fn metrics_markdown(reports: &[MetricReport]) -> String {
    let mut out = String::from("| Model | Queries | MAP | MRR | P@1 | P-imp |\n|---|---:|---:|---:|---:|---:|\n");
    for r in reports {
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} |\n",
            r.label,
            r.queries,
            short(r.map),
            short(r.mrr),
            short(r.p_at_1),
            short(r.p_imp)
        ));
    }
    out
}

/// Memory-unit ablation table with MAP deltas and latency ratios against the
/// full configuration.
pub fn ablation_markdown(table: &AblationTable) -> String {
    let dot = |on: bool| if on { "●" } else { "○" };
    let mut out = String::from(
        "| Model | Sensory | Working | Long-E | Long-I | MAP | ΔMAP | Latency (s) | Ratio |\n|---|:-:|:-:|:-:|:-:|---:|---:|---:|---:|\n",
    );
    for row in &table.rows {
        let (delta, ratio) = if row.is_full() {
            ("-".to_string(), "-".to_string())
        } else {
            let arrow = if row.map_delta_pct < 0.0 { "↓" } else { "↑" };
            let ratio = row.latency_ratio.map_or("n/a".to_string(), |r| format!("×{r:.2}"));
            (format!("{arrow} {:.2}%", row.map_delta_pct.abs()), ratio)
        };
        out.push_str(&format!(
            "| CoPS ({}) | {} | {} | {} | {} | {} | {} | {:.2} | {} |\n",
            row.name,
            dot(row.sensory),
            dot(row.working),
            dot(row.longterm_explicit),
            dot(row.longterm_implicit),
            short(row.report.map),
            delta,
            row.report.latency_mean,
            ratio
        ));
    }
    out
}

#[derive(Serialize)]
struct CurveRecord {
    fraction: f64,
    map: f64,
    mrr: f64,
    p1: f64,
    pimp: f64,
}

/// `fraction,map,mrr,p1,pimp` with a header row.
pub fn curve_csv(points: &[CurvePoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in points {
        w.serialize(CurveRecord {
            fraction: p.fraction,
            map: p.report.map,
            mrr: p.report.mrr,
            p1: p.report.p_at_1,
            pimp: p.report.p_imp,
        })
        .map_err(|e| Error::Data(format!("cannot write curve row: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Data(format!("cannot finish curve: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Data(e.to_string()))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, &e))?;
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

/// One trace per line.
pub fn write_traces(path: &Path, traces: &[QueryTrace]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for t in traces {
        let line = serde_json::to_string(t).map_err(|e| Error::json(path, &e))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
