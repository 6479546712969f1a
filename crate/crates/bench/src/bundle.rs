//! Dataset bundles: a directory of CSV files plus JSON sidecars.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use responder_core::dataset::{
    DescriptorProvider, DrugDescriptorMatrix, GroundTruth, ResponseRecord, SnpCountMatrix, SyntheticSpec, SyntheticStudy,
};
use responder_core::expression::{ExpressionMatrix, GeneSet, GeneSetName};
use responder_core::sweep::SweepInputs;

use crate::error::{BenchError, Result};
use crate::formats::*;

pub const RESPONSE: &str = "response.csv";
pub const EXPRESSION: &str = "expression.csv";
pub const SNPS: &str = "snps.csv";
pub const DESCRIPTORS_A: &str = "descriptors_a.csv";
pub const DESCRIPTORS_B: &str = "descriptors_b.csv";
pub const CELL_GROUPS: &str = "cell_groups.csv";
pub const GENE_SET_DIR: &str = "gene_sets";
pub const GROUND_TRUTH: &str = "ground_truth.json";
pub const SPEC: &str = "spec.json";

#[derive(Debug, Clone)]
pub struct Bundle {
    pub records: Vec<ResponseRecord>,
    pub expression: ExpressionMatrix,
    pub snps: Option<SnpCountMatrix>,
    pub descriptors_a: DrugDescriptorMatrix,
    pub descriptors_b: DrugDescriptorMatrix,
    pub gene_sets: BTreeMap<GeneSetName, GeneSet>,
    pub cell_groups: BTreeMap<String, String>,
    pub ground_truth: Option<GroundTruth>,
}

impl Bundle {
    pub fn from_study(study: &SyntheticStudy) -> Self {
        Self {
            records: study.records.clone(),
            expression: study.expression.clone(),
            snps: Some(study.snps.clone()),
            descriptors_a: study.descriptors_a.clone(),
            descriptors_b: study.descriptors_b.clone(),
            gene_sets: study.gene_sets.iter().map(|g| (g.name, g.clone())).collect(),
            cell_groups: study.ground_truth.cell_groups.clone(),
            ground_truth: Some(study.ground_truth.clone()),
        }
    }

    pub fn inputs(&self) -> SweepInputs<'_> {
        SweepInputs {
            records: &self.records,
            expression: &self.expression,
            snps: self.snps.as_ref(),
            descriptors_a: &self.descriptors_a,
            descriptors_b: &self.descriptors_b,
            gene_sets: &self.gene_sets,
            cell_groups: &self.cell_groups,
        }
    }

    /// Reads a bundle directory. SNPs, cell groups, gene sets and the ground
    /// truth are optional.
    pub fn load(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(BenchError::Validation(format!("{} is not a bundle directory", dir.display())));
        }
        let optional = |name: &str| Some(dir.join(name)).filter(|p| p.exists());
        let mut gene_sets = BTreeMap::new();
        for name in GeneSetName::ALL {
            if let Some(p) = optional(&format!("{GENE_SET_DIR}/{}.txt", name.as_str())) {
                gene_sets.insert(name, read_gene_set(&p, name)?);
            }
        }
        let ground_truth = match optional(GROUND_TRUTH) {
            Some(p) => Some(read_json(&p)?),
            None => None,
        };
        Ok(Self {
            records: read_response_csv(&dir.join(RESPONSE))?,
            expression: read_expression_csv(&dir.join(EXPRESSION))?,
            snps: optional(SNPS).map(|p| read_snp_csv(&p)).transpose()?,
            descriptors_a: read_descriptor_csv(&dir.join(DESCRIPTORS_A), DescriptorProvider::DescriptorA)?,
            descriptors_b: read_descriptor_csv(&dir.join(DESCRIPTORS_B), DescriptorProvider::DescriptorB)?,
            gene_sets,
            cell_groups: optional(CELL_GROUPS).map(|p| read_cell_groups(&p)).transpose()?.unwrap_or_default(),
            ground_truth,
        })
    }

    /// Files of the bundle that exist, in a fixed order.
    pub fn files(dir: &Path) -> Vec<PathBuf> {
        let mut names: Vec<String> =
            [RESPONSE, EXPRESSION, SNPS, DESCRIPTORS_A, DESCRIPTORS_B, CELL_GROUPS, GROUND_TRUTH, SPEC].map(String::from).to_vec();
        names.extend(GeneSetName::ALL.iter().map(|n| format!("{GENE_SET_DIR}/{}.txt", n.as_str())));
        names.into_iter().map(|n| dir.join(n)).filter(|p| p.exists()).collect()
    }
}

pub(crate) fn read_json<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| BenchError::format(path, e))
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| BenchError::Runtime(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| BenchError::io(path, e))
}

/// Writes a synthetic study as a bundle directory (created if missing).
pub fn write_bundle(dir: &Path, spec: &SyntheticSpec, study: &SyntheticStudy) -> Result<()> {
    fs::create_dir_all(dir.join(GENE_SET_DIR)).map_err(|e| BenchError::io(dir, e))?;
    write_response_csv(&dir.join(RESPONSE), &study.records)?;
    write_expression_csv(&dir.join(EXPRESSION), &study.expression)?;
    write_snp_csv(&dir.join(SNPS), &study.snps)?;
    write_descriptor_csv(&dir.join(DESCRIPTORS_A), &study.descriptors_a)?;
    write_descriptor_csv(&dir.join(DESCRIPTORS_B), &study.descriptors_b)?;
    write_cell_groups(&dir.join(CELL_GROUPS), &study.ground_truth.cell_groups)?;
    for g in &study.gene_sets {
        write_gene_set(&dir.join(GENE_SET_DIR).join(format!("{}.txt", g.name.as_str())), g)?;
    }
    write_json(&dir.join(GROUND_TRUTH), &study.ground_truth)?;
    write_json(&dir.join(SPEC), spec)
}
