use std::fmt::Write;
use std::str::FromStr;

use crate::replay::{CategoryReport, LatencyStats, ReplayReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Table,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(Self::Json),
            "table" | "text-table" => Ok(Self::Table),
            other => Err(format!("unknown format {other:?} (expected json or table)")),
        }
    }
}

pub fn render(reports: &[ReplayReport], format: Format) -> String {
    match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(reports).expect("reports serialize");
            s.push('\n');
            s
        }
        Format::Table => render_table(reports),
    }
}

fn row(out: &mut String, c: &CategoryReport, width: usize) {
    let _ = writeln!(
        out,
        "{:<width$}  {:>7}  {:>9}  {:>13}  {:>8.3}  {:>13.3}  {:>9}",
        c.category, c.queries, c.cache_hits, c.positive_hits, c.hit_rate, c.positive_rate, c.api_calls
    );
}

fn latency_line(out: &mut String, arm: &str, l: &LatencyStats) {
    let _ = writeln!(
        out,
        "latency {arm:<9} mean {:>9.3} ms   p50 {:>9.3} ms   p95 {:>9.3} ms",
        l.mean_ms, l.p50_ms, l.p95_ms
    );
}

fn render_table(reports: &[ReplayReport]) -> String {
    let mut out = String::new();
    for (i, r) in reports.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let width = r
            .categories
            .iter()
            .map(|c| c.category.len())
            .max()
            .unwrap_or(0)
            .max("Category".len());
        let _ = writeln!(out, "threshold {:.2}", r.threshold);
        let _ = writeln!(
            out,
            "{:<width$}  {:>7}  {:>9}  {:>13}  {:>8}  {:>13}  {:>9}",
            "Category", "Queries", "Cache Hit", "Positive Hits", "Hit Rate", "Positive Rate", "API Calls"
        );
        let _ = writeln!(out, "{}", "-".repeat(width + 76));
        for c in &r.categories {
            row(&mut out, c, width);
        }
        let _ = writeln!(out, "{}", "-".repeat(width + 76));
        row(&mut out, &r.totals(), width);
        if let Some(l) = &r.latency {
            latency_line(&mut out, "cached", &l.cached);
            if let Some(u) = &l.uncached {
                latency_line(&mut out, "uncached", u);
            }
        }
    }
    out
}
