//! Text, CSV and SVG renderings of analysis results.

use std::collections::BTreeMap;
use std::fmt::Write;

use responder_core::analysis::{
    one_way_anova, pairwise_welch, welch_t_test, GroupedPercentileTable, ImportanceReport, PairwiseTest, TestResult,
};
use responder_core::sweep::{FilterOutcome, RunRecord};
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

pub fn factor_heading(factor: &str) -> &str {
    match factor {
        "split" => "Validation Method",
        "snps" => "SNPs Included",
        "scaling" => "RNA-seq Scaling Method",
        "descriptor_provider" => "Drug Descriptors",
        "architecture" => "Architecture",
        "strategy" => "Imbalance Strategy",
        "optimizer" => "Optimizer",
        "gene_set" => "Gene Set",
        "group_filter" => "Cell Groups",
        "dropout_rate" => "Dropout",
        "fold" => "Fold",
        other => other,
    }
}

pub fn metric_heading(metric: &str) -> &str {
    match metric {
        "rmse" => "RMSE",
        "r2" => "r2 score",
        "balanced_accuracy" => "Balanced Accuracy",
        "mcc" => "MCC",
        "tpr" => "TPR",
        "fpr" => "FPR",
        other => other,
    }
}

pub fn level_label(factor: &str, level: &str) -> String {
    match (factor, level) {
        ("split", "cell") => "On Cell".into(),
        ("split", "drug") => "On Drug".into(),
        ("split", "lenient") => "Lenient".into(),
        ("snps", "true") => "True".into(),
        ("snps", "false") => "False".into(),
        _ => level.into(),
    }
}

fn align(rows: &[Vec<String>]) -> String {
    let widths: Vec<usize> =
        (0..rows[0].len()).map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for (i, r) in rows.iter().enumerate() {
        let cells: Vec<String> = r.iter().zip(&widths).map(|(c, &w)| format!("{c:<w$}")).collect();
        out.push_str(cells.join(" | ").trim_end());
        out.push('\n');
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
            out.push_str(&rule.join("-+-"));
            out.push('\n');
        }
    }
    out
}

/// Aligned text table: group columns, one column per metric at three
/// decimals, the group size, then the caption.
pub fn render_table(table: &GroupedPercentileTable) -> String {
    let mut rows = Vec::with_capacity(table.rows.len() + 1);
    let mut header: Vec<String> = table.group_by.iter().map(|f| factor_heading(f).to_string()).collect();
    header.extend(table.columns.iter().map(|c| metric_heading(&c.metric).to_string()));
    header.push("n".into());
    rows.push(header);
    for r in &table.rows {
        let mut cells: Vec<String> = table.group_by.iter().zip(&r.key).map(|(f, v)| level_label(f, v)).collect();
        cells.extend(r.values.iter().map(|v| format!("{v:.3}")));
        cells.push(r.n.to_string());
        rows.push(cells);
    }
    let mut out = align(&rows);
    let qs: Vec<String> =
        table.columns.iter().map(|c| format!("{} at q{}", metric_heading(&c.metric), c.q)).collect();
    let _ = writeln!(out, "\n{} ({})", table.caption, qs.join(", "));
    out
}

/// Same table as CSV with raw factor levels and full-precision values.
pub fn table_csv(table: &GroupedPercentileTable) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = table.group_by.clone();
    header.extend(table.columns.iter().map(|c| format!("{}_q{}", c.metric, c.q)));
    header.push("n".into());
    w.write_record(&header).map_err(|e| BenchError::Runtime(e.to_string()))?;
    for r in &table.rows {
        let mut cells = r.key.clone();
        cells.extend(r.values.iter().map(|v| v.to_string()));
        cells.push(r.n.to_string());
        w.write_record(&cells).map_err(|e| BenchError::Runtime(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| BenchError::Runtime(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Test of one factor's effect on a metric, within one stratum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    /// Value of the stratifying factor, e.g. the split.
    pub stratum: String,
    pub factor: String,
    pub metric: String,
    /// (level, group size)
    pub levels: Vec<(String, usize)>,
    pub test: Option<TestResult>,
    pub pairwise: Vec<PairwiseTest>,
    /// Why no test was run.
    pub skipped: Option<String>,
}

/// Compares the levels of `factor` on `metric` separately in each level of
/// `stratify_by`: a Welch t-test for two levels, ANOVA plus pairwise Welch
/// tests for more.
pub fn compare_levels(records: &[RunRecord], stratify_by: &str, factor: &str, metric: &str) -> Vec<Comparison> {
    let mut strata: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for r in records {
        let (Some(s), Some(l), Some(v)) = (r.point.factor(stratify_by), r.point.factor(factor), r.metric(metric)) else {
            continue;
        };
        strata.entry(s).or_default().entry(l).or_default().push(v);
    }
    strata
        .into_iter()
        .map(|(stratum, groups)| {
            let levels = groups.iter().map(|(l, v)| (l.clone(), v.len())).collect();
            let samples: Vec<&[f64]> = groups.values().map(Vec::as_slice).collect();
            let outcome = match samples.len() {
                0 | 1 => Err("fewer than two levels".to_string()),
                2 => welch_t_test(samples[0], samples[1]).map(|t| (t, Vec::new())).map_err(|e| e.to_string()),
                _ => one_way_anova(&samples)
                    .and_then(|t| Ok((t, pairwise_welch(&samples)?)))
                    .map_err(|e| e.to_string()),
            };
            let (test, pairwise, skipped) = match outcome {
                Ok((t, p)) => (Some(t), p, None),
                Err(e) => (None, Vec::new(), Some(e)),
            };
            Comparison { stratum, factor: factor.into(), metric: metric.into(), levels, test, pairwise, skipped }
        })
        .collect()
}

pub fn render_comparisons(stratify_by: &str, comparisons: &[Comparison]) -> String {
    let mut out = String::new();
    for c in comparisons {
        let levels: Vec<String> =
            c.levels.iter().map(|(l, n)| format!("{}={}", level_label(&c.factor, l), n)).collect();
        let _ = write!(
            out,
            "{} | {} by {} ({}): ",
            level_label(stratify_by, &c.stratum),
            metric_heading(&c.metric),
            factor_heading(&c.factor),
            levels.join(", ")
        );
        match (&c.test, &c.skipped) {
            (Some(t), _) => {
                let df = match t.df2 {
                    Some(d2) => format!("{:.1}, {:.1}", t.df, d2),
                    None => format!("{:.1}", t.df),
                };
                let kind = serde_json::to_value(t.kind).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
                let _ = write!(out, "{kind} = {:.4} (df {df}), p = {:.3e}", t.statistic, t.p_value);
                if t.degenerate {
                    out.push_str(" [degenerate]");
                }
                out.push('\n');
                for p in &c.pairwise {
                    let _ = writeln!(
                        out,
                        "    {} vs {}: t = {:.4}, p = {:.3e}, bonferroni p = {:.3e}",
                        level_label(&c.factor, &c.levels[p.a].0),
                        level_label(&c.factor, &c.levels[p.b].0),
                        p.result.statistic,
                        p.result.p_value,
                        p.bonferroni_p
                    );
                }
            }
            (None, reason) => {
                let _ = writeln!(out, "not tested: {}", reason.as_deref().unwrap_or("no data"));
            }
        }
    }
    out
}

pub fn render_importance(metric: &str, report: &ImportanceReport) -> String {
    let mut rows = vec![vec!["Factor".to_string(), "Importance".to_string()]];
    rows.extend(report.importances.iter().map(|(f, s)| vec![factor_heading(f).to_string(), format!("{s:.3}")]));
    let mut out = align(&rows);
    let _ = writeln!(out, "\ntree fit r2 on {} = {:.3}, {} splits", metric_heading(metric), report.fit_r2, report.n_splits);
    if report.constant_target {
        out.push_str("target is constant; no splits\n");
    }
    out
}

pub fn render_filter(outcome: &FilterOutcome) -> String {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &outcome.removed {
        for reason in &r.reasons {
            *counts.entry(reason.as_str()).or_default() += 1;
        }
    }
    let total = outcome.kept.len() + outcome.removed.len();
    let mut out = format!(
        "kept {} of {} runs ({:.1}%)",
        outcome.kept.len(),
        total,
        100.0 * outcome.kept_fraction()
    );
    if let Some(t) = outcome.loss_threshold {
        let _ = write!(out, ", loss threshold {t:.5}");
    }
    out.push('\n');
    for (reason, n) in counts {
        let _ = writeln!(out, "  removed {reason}: {n}");
    }
    out
}

/// Self-contained SVG strip plot of `metric` against the levels of `factor`.
/// Horizontal jitter comes from the record hash so the picture is stable.
pub fn scatter_svg(records: &[RunRecord], factor: &str, metric: &str) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const PAD: f64 = 56.0;
    let points: Vec<(String, f64, &str)> = records
        .iter()
        .filter_map(|r| Some((r.point.factor(factor)?, r.metric(metric)?, r.hash.as_str())))
        .filter(|p| p.1.is_finite())
        .collect();
    let mut levels: Vec<&str> = points.iter().map(|p| p.0.as_str()).collect();
    levels.sort_unstable();
    levels.dedup();
    let (mut lo, mut hi) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo, hi) = (lo - 0.5, hi + 0.5);
    }
    let slot = (W - 2.0 * PAD) / levels.len().max(1) as f64;
    let y_of = |v: f64| H - PAD - (v - lo) / (hi - lo) * (H - 2.0 * PAD);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{PAD}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{}" stroke="black"/>"#,
        H - PAD,
        W - PAD,
        H - PAD,
        H - PAD
    );
    for (v, label) in [(lo, lo), (hi, hi)] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" font-size="11" text-anchor="end">{label:.3}</text>"#,
            PAD - 6.0,
            y_of(v) + 4.0
        );
    }
    for (i, l) in levels.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" font-size="12" text-anchor="middle">{}</text>"#,
            PAD + slot * (i as f64 + 0.5),
            H - PAD + 18.0,
            escape(&level_label(factor, l))
        );
    }
    for (level, v, hash) in &points {
        let i = levels.binary_search(&level.as_str()).expect("level listed");
        let jitter = u64::from_str_radix(&hash[..hash.len().min(8)], 16).unwrap_or(0) as f64 / f64::from(u32::MAX) - 0.5;
        let _ = writeln!(
            s,
            r##"<circle cx="{:.1}" cy="{:.1}" r="3" fill="#1f77b4" fill-opacity="0.6"/>"##,
            PAD + slot * (i as f64 + 0.5 + 0.6 * jitter),
            y_of(*v)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" font-size="14" text-anchor="middle">{} by {}</text>"#,
        W / 2.0,
        escape(metric_heading(metric)),
        escape(factor_heading(factor))
    );
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
