//! Machine-readable report structures and deterministic number formatting.

use nucleoforge_core::foldstats::FoldReport;
use nucleoforge_core::metrics::{MpqResult, PqResult, R2Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Rounds to 6 significant digits so serialized reports are short and
/// deterministic.
pub fn sig6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.5e}").parse().expect("sig-digit roundtrip")
}

/// Plain decimal rendering for CSV cells (`inf` for infinities).
pub fn csv_num(x: f64) -> String {
    format!("{}", sig6(x))
}

/// One instance's type decision in types.json.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeEntry {
    pub class: u32,
    pub score: f64,
}

/// types.json: image index → instance id → type decision.
pub type TypesFile = BTreeMap<u32, BTreeMap<u32, TypeEntry>>;

#[derive(Debug, Serialize)]
pub struct PerImagePq {
    pub image: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub false_neg: usize,
    pub dq: f64,
    pub sq: f64,
    pub pq: f64,
}

impl PerImagePq {
    pub fn from_result(image: usize, r: &PqResult) -> Self {
        Self {
            image,
            tp: r.true_pos,
            fp: r.false_pos,
            false_neg: r.false_neg,
            dq: sig6(r.dq),
            sq: sig6(r.sq),
            pq: sig6(r.pq),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ClassPqRow {
    pub class: u32,
    pub pq: f64,
    pub dq: f64,
    pub sq: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub false_neg: usize,
    pub present: bool,
}

#[derive(Debug, Serialize)]
pub struct MpqSection {
    pub per_class: Vec<ClassPqRow>,
    pub mean: f64,
}

impl MpqSection {
    pub fn from_result(m: &MpqResult) -> Self {
        Self {
            per_class: m
                .per_class
                .iter()
                .map(|c| ClassPqRow {
                    class: c.class_id,
                    pq: sig6(c.result.pq),
                    dq: sig6(c.result.dq),
                    sq: sig6(c.result.sq),
                    tp: c.result.true_pos,
                    fp: c.result.false_pos,
                    false_neg: c.result.false_neg,
                    present: c.present,
                })
                .collect(),
            mean: sig6(m.mean),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct R2Row {
    pub class: u32,
    pub r2: f64,
}

#[derive(Debug, Serialize)]
pub struct R2Section {
    pub per_class: Vec<R2Row>,
    pub mean: f64,
}

impl R2Section {
    pub fn from_result(r: &R2Result) -> Self {
        Self {
            per_class: r
                .per_class
                .iter()
                .enumerate()
                .map(|(i, &v)| R2Row {
                    class: i as u32 + 1,
                    r2: sig6(v),
                })
                .collect(),
            mean: sig6(r.mean),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct EvaluateReport {
    pub num_images: usize,
    pub num_classes: u32,
    pub per_image: Vec<PerImagePq>,
    /// Mean of the per-image class-agnostic PQ values.
    pub pq_mean: f64,
    pub mpq_plus: MpqSection,
    pub multi_r2: R2Section,
}

/// CSV twin of the JSON report: one row per image, one summary row.
pub fn evaluate_csv(report: &EvaluateReport) -> String {
    let mut out = String::from("image,tp,fp,fn,dq,sq,pq,mpq_plus,multi_r2\n");
    for row in &report.per_image {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},,\n",
            row.image,
            row.tp,
            row.fp,
            row.false_neg,
            csv_num(row.dq),
            csv_num(row.sq),
            csv_num(row.pq),
        ));
    }
    let (tp, fp, false_neg) = report.per_image.iter().fold((0, 0, 0), |acc, r| {
        (acc.0 + r.tp, acc.1 + r.fp, acc.2 + r.false_neg)
    });
    out.push_str(&format!(
        "summary,{},{},{},,,{},{},{}\n",
        tp,
        fp,
        false_neg,
        csv_num(report.pq_mean),
        csv_num(report.mpq_plus.mean),
        csv_num(report.multi_r2.mean),
    ));
    out
}

/// ranking.csv: one row per fold, best stratified first.
pub fn ranking_csv(reports: &[FoldReport]) -> String {
    let num_classes = reports.first().map_or(0, |r| r.classes.len());
    let mut out = String::from("fold_id,score");
    for c in 1..=num_classes {
        out.push_str(&format!(
            ",count_train_{c},count_valid_{c},ratio_train_{c},ratio_valid_{c},sim_{c}"
        ));
    }
    out.push('\n');
    for r in reports {
        out.push_str(&format!("{},{}", r.fold_id, csv_num(r.score)));
        for c in &r.classes {
            out.push_str(&format!(
                ",{},{},{},{},{}",
                c.count_train,
                c.count_valid,
                csv_num(c.ratio_train),
                csv_num(c.ratio_valid),
                csv_num(c.sim),
            ));
        }
        out.push('\n');
    }
    out
}
