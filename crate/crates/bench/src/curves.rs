//! Batch curve fitting over a dose table.

use std::collections::BTreeMap;

use responder_core::dose_response::{dose_metrics, fit_hill, nci60_thresholds, pgi_curve, DoseResponsePoint};

use crate::error::Result;
use crate::formats::{CurveRow, DoseRow};

/// Fits every (source, cell, drug) group. Groups whose fit fails still get a
/// row, with empty metric fields, so the output has one row per group.
pub fn fit_curves(rows: &[DoseRow]) -> Result<Vec<CurveRow>> {
    let mut groups: BTreeMap<(&str, &str, &str), Vec<DoseResponsePoint>> = BTreeMap::new();
    for r in rows {
        let p = DoseResponsePoint::new(r.dose, r.growth)?;
        groups.entry((&r.source, &r.cell, &r.drug)).or_default().push(p);
    }
    Ok(groups.into_iter().map(|((s, c, d), points)| fit_group(s, c, d, &points)).collect())
}

fn fit_group(source: &str, cell: &str, drug: &str, points: &[DoseResponsePoint]) -> CurveRow {
    let mut row = CurveRow { source: source.into(), cell: cell.into(), drug: drug.into(), ..Default::default() };
    let Ok(fit) = fit_hill(points) else {
        return row;
    };
    row.r2fit = Some(fit.r2fit);
    row.ec50se = fit.ec50_se.is_finite().then_some(fit.ec50_se);
    row.e_inf = Some(fit.params.e_inf);
    row.hs = Some(fit.params.hs);
    row.ec50 = Some(fit.params.ec50);
    let Ok(m) = dose_metrics(&fit, points) else {
        return row;
    };
    row.auc = Some(m.auc);
    row.auc1 = Some(m.auc1);
    row.aac1 = Some(m.aac1);
    row.ic50 = m.ic50;
    row.dss1 = Some(m.dss1);
    let lo = points.iter().map(|p| p.dose).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.dose).fold(f64::NEG_INFINITY, f64::max);
    if let Ok(t) = nci60_thresholds(pgi_curve(fit.params), lo, hi) {
        row.gi50 = t.gi50;
        row.tgi = t.tgi;
        row.lc50 = t.lc50;
    }
    row
}
