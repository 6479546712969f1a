//! CSV and text file formats.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use responder_core::dataset::{DescriptorProvider, DrugDescriptorMatrix, ResponseRecord, SnpCountMatrix};
use responder_core::evaluation::SplitPlan;
use responder_core::expression::{ExpressionMatrix, GeneSet, GeneSetName};
use responder_core::trainer::{EpochLog, TrainLog};
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

pub(crate) fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| BenchError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

pub(crate) fn writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| BenchError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_err(path: &Path, e: csv::Error) -> BenchError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => BenchError::io(path, io),
            other => BenchError::format(path, format!("{other:?}")),
        }
    } else {
        BenchError::format(path, e)
    }
}

fn headers(path: &Path, r: &mut csv::Reader<File>) -> Result<Vec<String>> {
    Ok(r.headers().map_err(|e| csv_err(path, e))?.iter().map(str::to_string).collect())
}

fn expect_leading(path: &Path, headers: &[String], leading: &[&str]) -> Result<()> {
    let ok = headers.len() >= leading.len() && headers.iter().zip(leading).all(|(h, l)| h.eq_ignore_ascii_case(l));
    if ok {
        Ok(())
    } else {
        Err(BenchError::format(path, format!("expected leading columns {leading:?}, found {headers:?}")))
    }
}

fn parse_f64(path: &Path, line: u64, field: &str) -> Result<f64> {
    if field.is_empty() || field.eq_ignore_ascii_case("nan") || field.eq_ignore_ascii_case("na") {
        return Ok(f64::NAN);
    }
    field.parse().map_err(|_| BenchError::format(path, format!("line {line}: {field:?} is not a number")))
}

fn finish(path: &Path, mut w: csv::Writer<File>) -> Result<()> {
    w.flush().map_err(|e| BenchError::io(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = reader(path)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row.map_err(|e| csv_err(path, e))?);
    }
    Ok(out)
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = writer(path)?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    finish(path, w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoseRow {
    #[serde(rename = "SOURCE")]
    pub source: String,
    #[serde(rename = "CELL")]
    pub cell: String,
    #[serde(rename = "DRUG")]
    pub drug: String,
    /// -log10 molar.
    #[serde(rename = "DOSE")]
    pub dose: f64,
    #[serde(rename = "GROWTH")]
    pub growth: f64,
}

pub fn read_dose_csv(path: &Path) -> Result<Vec<DoseRow>> {
    read_rows(path)
}

pub fn write_dose_csv(path: &Path, rows: &[DoseRow]) -> Result<()> {
    write_rows(path, rows)
}

/// One fitted (source, cell, drug) curve. Fields are empty when the fit failed
/// or the quantity is undefined.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CurveRow {
    pub source: String,
    pub cell: String,
    pub drug: String,
    pub auc: Option<f64>,
    pub auc1: Option<f64>,
    pub aac1: Option<f64>,
    pub ic50: Option<f64>,
    pub gi50: Option<f64>,
    pub tgi: Option<f64>,
    pub lc50: Option<f64>,
    pub ec50se: Option<f64>,
    pub r2fit: Option<f64>,
    pub dss1: Option<f64>,
    pub e_inf: Option<f64>,
    pub hs: Option<f64>,
    pub ec50: Option<f64>,
}

pub const METRICS_HEADER: [&str; 16] = [
    "SOURCE", "CELL", "DRUG", "AUC", "AUC1", "AAC1", "IC50", "GI50", "TGI", "LC50", "EC50SE", "R2FIT", "DSS1", "EINF",
    "HS", "EC50",
];

pub fn write_metrics_csv(path: &Path, rows: &[CurveRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(METRICS_HEADER).map_err(|e| csv_err(path, e))?;
    for r in rows {
        let values = [r.auc, r.auc1, r.aac1, r.ic50, r.gi50, r.tgi, r.lc50, r.ec50se, r.r2fit, r.dss1, r.e_inf, r.hs, r.ec50];
        let mut record = vec![r.source.clone(), r.cell.clone(), r.drug.clone()];
        record.extend(values.iter().map(|v| opt(*v)));
        w.write_record(&record).map_err(|e| csv_err(path, e))?;
    }
    finish(path, w)
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<CurveRow>> {
    let mut r = reader(path)?;
    let h = headers(path, &mut r)?;
    if h.len() != METRICS_HEADER.len() {
        return Err(BenchError::format(path, format!("expected columns {METRICS_HEADER:?}")));
    }
    expect_leading(path, &h, &METRICS_HEADER)?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = i as u64 + 2;
        let v = |k: usize| -> Result<Option<f64>> {
            let x = parse_f64(path, line, &rec[k])?;
            Ok((!x.is_nan()).then_some(x))
        };
        out.push(CurveRow {
            source: rec[0].to_string(),
            cell: rec[1].to_string(),
            drug: rec[2].to_string(),
            auc: v(3)?,
            auc1: v(4)?,
            aac1: v(5)?,
            ic50: v(6)?,
            gi50: v(7)?,
            tgi: v(8)?,
            lc50: v(9)?,
            ec50se: v(10)?,
            r2fit: v(11)?,
            dss1: v(12)?,
            e_inf: v(13)?,
            hs: v(14)?,
            ec50: v(15)?,
        });
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct ResponseCsvRow {
    #[serde(rename = "SOURCE")]
    source: String,
    #[serde(rename = "CELL")]
    cell: String,
    #[serde(rename = "DRUG")]
    drug: String,
    #[serde(rename = "AUC")]
    auc: f64,
}

/// Reads SOURCE, CELL, DRUG, AUC. Extra columns (as in a metrics file) are
/// ignored and rows with an empty AUC are skipped.
pub fn read_response_csv(path: &Path) -> Result<Vec<ResponseRecord>> {
    let mut r = reader(path)?;
    let h = headers(path, &mut r)?;
    let col = |name: &str| {
        h.iter().position(|c| c.eq_ignore_ascii_case(name)).ok_or_else(|| BenchError::format(path, format!("missing column {name}")))
    };
    let (s, c, d, a) = (col("SOURCE")?, col("CELL")?, col("DRUG")?, col("AUC")?);
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let auc = parse_f64(path, i as u64 + 2, &rec[a])?;
        if auc.is_nan() {
            continue;
        }
        out.push(ResponseRecord { cell_id: rec[c].to_string(), drug_id: rec[d].to_string(), source: rec[s].to_string(), auc });
    }
    Ok(out)
}

pub fn write_response_csv(path: &Path, records: &[ResponseRecord]) -> Result<()> {
    let rows: Vec<ResponseCsvRow> = records
        .iter()
        .map(|r| ResponseCsvRow { source: r.source.clone(), cell: r.cell_id.clone(), drug: r.drug_id.clone(), auc: r.auc })
        .collect();
    write_rows(path, &rows)
}

/// SAMPLE, SOURCE, then one column per gene.
pub fn read_expression_csv(path: &Path) -> Result<ExpressionMatrix> {
    let mut r = reader(path)?;
    let h = headers(path, &mut r)?;
    expect_leading(path, &h, &["SAMPLE", "SOURCE"])?;
    let genes: Vec<String> = h[2..].to_vec();
    let (mut samples, mut sources, mut values) = (Vec::new(), Vec::new(), Vec::new());
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() != h.len() {
            return Err(BenchError::format(path, format!("line {}: {} fields, expected {}", i + 2, rec.len(), h.len())));
        }
        samples.push(rec[0].to_string());
        sources.push(rec[1].to_string());
        for f in rec.iter().skip(2) {
            values.push(parse_f64(path, i as u64 + 2, f)?);
        }
    }
    Ok(ExpressionMatrix::new(genes, samples, values, sources)?)
}

pub fn write_expression_csv(path: &Path, m: &ExpressionMatrix) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["SAMPLE".to_string(), "SOURCE".to_string()];
    header.extend(m.gene_ids().iter().cloned());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for s in 0..m.n_samples() {
        let mut rec = vec![m.sample_ids()[s].clone(), m.sources()[s].clone()];
        rec.extend(m.row(s).iter().map(f64::to_string));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    finish(path, w)
}

/// SAMPLE, then one integer column per locus.
pub fn read_snp_csv(path: &Path) -> Result<SnpCountMatrix> {
    let mut r = reader(path)?;
    let h = headers(path, &mut r)?;
    expect_leading(path, &h, &["SAMPLE"])?;
    let (mut samples, mut counts) = (Vec::new(), Vec::new());
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        samples.push(rec[0].to_string());
        for f in rec.iter().skip(1) {
            counts.push(
                f.parse::<u32>()
                    .map_err(|_| BenchError::format(path, format!("line {}: SNP count {f:?} is not a non-negative integer", i + 2)))?,
            );
        }
    }
    Ok(SnpCountMatrix::new(samples, h[1..].to_vec(), counts)?)
}

pub fn write_snp_csv(path: &Path, m: &SnpCountMatrix) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["SAMPLE".to_string()];
    header.extend(m.locus_ids().iter().cloned());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (s, id) in m.sample_ids().iter().enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend(m.row(s).iter().map(u32::to_string));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    finish(path, w)
}

/// DRUG, then one column per descriptor; empty cells are missing values.
pub fn read_descriptor_csv(path: &Path, provider: DescriptorProvider) -> Result<DrugDescriptorMatrix> {
    let mut r = reader(path)?;
    let h = headers(path, &mut r)?;
    expect_leading(path, &h, &["DRUG"])?;
    let (mut drugs, mut values) = (Vec::new(), Vec::new());
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        drugs.push(rec[0].to_string());
        for f in rec.iter().skip(1) {
            values.push(parse_f64(path, i as u64 + 2, f)?);
        }
    }
    Ok(DrugDescriptorMatrix::new(drugs, h[1..].to_vec(), values, provider)?)
}

pub fn write_descriptor_csv(path: &Path, m: &DrugDescriptorMatrix) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["DRUG".to_string()];
    header.extend(m.descriptor_ids().iter().cloned());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (d, id) in m.drug_ids().iter().enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend(m.row(d).iter().map(|v| if v.is_nan() { String::new() } else { v.to_string() }));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    finish(path, w)
}

/// One gene id per line; blank lines and `#` comments are ignored.
pub fn read_gene_set(path: &Path, name: GeneSetName) -> Result<GeneSet> {
    let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
    let genes: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).collect();
    if genes.is_empty() {
        return Err(BenchError::format(path, "gene set is empty"));
    }
    Ok(GeneSet::new(name, genes))
}

pub fn write_gene_set(path: &Path, set: &GeneSet) -> Result<()> {
    let mut text = String::new();
    for g in &set.genes {
        text.push_str(g);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| BenchError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRow {
    #[serde(rename = "ROW_ID")]
    pub row_id: usize,
    #[serde(rename = "ENTITY_ID")]
    pub entity_id: String,
    #[serde(rename = "FOLD")]
    pub fold: usize,
}

/// Fold of every dataset row with the id of the entity it was split on.
pub fn fold_rows(plan: &SplitPlan, data: &responder_core::dataset::AssembledDataset) -> Vec<FoldRow> {
    use responder_core::evaluation::SplitMode;
    (0..plan.fold.len())
        .map(|r| {
            let row = &data.rows[r];
            let entity_id = match plan.mode {
                SplitMode::ByCell => data.cell_ids[row.cell].clone(),
                SplitMode::ByDrug => data.drug_ids[row.drug].clone(),
                SplitMode::Lenient => r.to_string(),
            };
            FoldRow { row_id: r, entity_id, fold: plan.fold[r] }
        })
        .collect()
}

pub fn write_folds_csv(path: &Path, rows: &[FoldRow]) -> Result<()> {
    write_rows(path, rows)
}

pub fn read_folds_csv(path: &Path) -> Result<Vec<FoldRow>> {
    read_rows(path)
}

pub fn write_train_log_csv(path: &Path, log: &TrainLog) -> Result<()> {
    write_rows(path, &log.epochs)
}

pub fn read_train_log_csv(path: &Path) -> Result<Vec<EpochLog>> {
    read_rows(path)
}

#[derive(Serialize, Deserialize)]
struct GroupRow {
    #[serde(rename = "CELL")]
    cell: String,
    #[serde(rename = "GROUP")]
    group: String,
}

pub fn read_cell_groups(path: &Path) -> Result<BTreeMap<String, String>> {
    Ok(read_rows::<GroupRow>(path)?.into_iter().map(|r| (r.cell, r.group)).collect())
}

pub fn write_cell_groups(path: &Path, groups: &BTreeMap<String, String>) -> Result<()> {
    let rows: Vec<GroupRow> = groups.iter().map(|(c, g)| GroupRow { cell: c.clone(), group: g.clone() }).collect();
    write_rows(path, &rows)
}
