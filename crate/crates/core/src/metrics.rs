//! Decompilation metrics: edit distance and edit similarity, the unbiased
//! pass@k estimator, and per-configuration aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::target::{Bitness, OptLevel};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("edit similarity is undefined for an empty ground truth")]
    EmptyGroundTruth,
    #[error("invalid pass@k input n={n} c={c} k={k}: need 0 <= c <= n and 1 <= k <= n")]
    InvalidInput { n: u64, c: u64, k: u64 },
    #[error("record {0} claims re-execution without re-compilation")]
    InconsistentRecord(String),
}

/// Levenshtein distance with unit costs. Keeps one row of the shorter input.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    if short.is_empty() {
        return long.len();
    }
    let mut row: Vec<usize> = (0..=short.len()).collect();
    for (i, x) in long.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, y) in short.iter().enumerate() {
            let subst = diag + usize::from(x != y);
            diag = row[j + 1];
            row[j + 1] = subst.min(row[j] + 1).min(diag + 1);
        }
    }
    row[short.len()]
}

/// Collapses whitespace runs to one space and trims both ends.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Prediction/ground-truth pair over whitespace-normalized characters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimilarityPair {
    pub prediction: Vec<char>,
    pub truth: Vec<char>,
    pub distance: usize,
}

impl SimilarityPair {
    pub fn new(prediction: &str, truth: &str) -> Self {
        let prediction: Vec<char> = normalize_whitespace(prediction).chars().collect();
        let truth: Vec<char> = normalize_whitespace(truth).chars().collect();
        let distance = edit_distance(&prediction, &truth);
        Self { prediction, truth, distance }
    }

    pub fn prediction_len(&self) -> usize {
        self.prediction.len()
    }

    pub fn truth_len(&self) -> usize {
        self.truth.len()
    }

    /// `1 - ED / L_truth`; negative when the prediction is much longer than
    /// the truth.
    pub fn similarity(&self) -> Result<f64, MetricError> {
        if self.truth.is_empty() {
            return Err(MetricError::EmptyGroundTruth);
        }
        Ok(1.0 - self.distance as f64 / self.truth.len() as f64)
    }
}

pub fn edit_similarity(prediction: &str, truth: &str) -> Result<f64, MetricError> {
    SimilarityPair::new(prediction, truth).similarity()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassAtKInput {
    pub n: u64,
    pub c: u64,
    pub k: u64,
}

impl PassAtKInput {
    pub fn new(n: u64, c: u64, k: u64) -> Result<Self, MetricError> {
        let input = Self { n, c, k };
        input.validate()?;
        Ok(input)
    }

    fn validate(&self) -> Result<(), MetricError> {
        let Self { n, c, k } = *self;
        if c > n || k == 0 || k > n {
            return Err(MetricError::InvalidInput { n, c, k });
        }
        Ok(())
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// `C(n-c, k) / C(n, k)` as a reduced fraction, when it fits exactly.
fn miss_ratio(n: u64, c: u64, k: u64) -> Option<(u128, u128)> {
    let (mut num, mut den) = (1u128, 1u128);
    for i in 0..k {
        num = num.checked_mul(u128::from(n - c - i))?;
        den = den.checked_mul(u128::from(n - i))?;
        let g = gcd(num, den);
        num /= g;
        den /= g;
    }
    Some((num, den))
}

/// Unbiased pass@k: `1 - C(n-c, k) / C(n, k)`.
///
/// Small inputs are evaluated as one exact fraction so that, e.g., pass@1 is
/// exactly `c / n`; larger ones fall back to the stable product
/// `1 - prod_{i=n-c+1}^{n} (1 - k/i)`.
pub fn pass_at_k(input: PassAtKInput) -> Result<f64, MetricError> {
    input.validate()?;
    let PassAtKInput { n, c, k } = input;
    if c == 0 {
        return Ok(0.0);
    }
    if n - c < k {
        return Ok(1.0);
    }
    const EXACT: u128 = 1 << 53;
    if let Some((num, den)) = miss_ratio(n, c, k) {
        if den <= EXACT {
            return Ok((den - num) as f64 / den as f64);
        }
    }
    let miss: f64 = ((n - c + 1)..=n).map(|i| 1.0 - k as f64 / i as f64).product();
    Ok(1.0 - miss)
}

/// Who produced the scored candidate.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateProvenance {
    pub model_id: String,
    pub sample_index: u32,
}

/// Scores for one sample. Re-com/Re-exe/ES describe the first candidate;
/// `generated`/`correct` feed pass@k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEvalRecord")]
pub struct EvalRecord {
    pub sample_id: String,
    pub bitness: Bitness,
    pub opt_level: OptLevel,
    pub re_com: bool,
    pub re_exe: bool,
    pub es: f64,
    pub generated: u64,
    pub correct: u64,
    pub provenance: CandidateProvenance,
}

#[derive(Deserialize)]
struct RawEvalRecord {
    sample_id: String,
    bitness: Bitness,
    opt_level: OptLevel,
    re_com: bool,
    re_exe: bool,
    es: f64,
    generated: u64,
    correct: u64,
    #[serde(default)]
    provenance: CandidateProvenance,
}

impl TryFrom<RawEvalRecord> for EvalRecord {
    type Error = MetricError;

    fn try_from(r: RawEvalRecord) -> Result<Self, Self::Error> {
        let mut rec = EvalRecord::new(r.sample_id, r.bitness, r.opt_level, r.re_com, r.re_exe, r.es)?;
        rec.generated = r.generated;
        rec.correct = r.correct;
        rec.provenance = r.provenance;
        PassAtKInput { n: rec.generated.max(1), c: rec.correct, k: 1 }.validate()?;
        Ok(rec)
    }
}

impl EvalRecord {
    pub fn new(
        sample_id: impl Into<String>,
        bitness: Bitness,
        opt_level: OptLevel,
        re_com: bool,
        re_exe: bool,
        es: f64,
    ) -> Result<Self, MetricError> {
        let sample_id = sample_id.into();
        if re_exe && !re_com {
            return Err(MetricError::InconsistentRecord(sample_id));
        }
        Ok(Self {
            sample_id,
            bitness,
            opt_level,
            re_com,
            re_exe,
            es,
            generated: 1,
            correct: u64::from(re_exe),
            provenance: CandidateProvenance::default(),
        })
    }

    pub fn with_pass_counts(mut self, generated: u64, correct: u64) -> Result<Self, MetricError> {
        PassAtKInput { n: generated.max(1), c: correct, k: 1 }.validate()?;
        self.generated = generated;
        self.correct = correct;
        Ok(self)
    }

    fn pass_at(&self, k: u64) -> Option<f64> {
        if self.generated < k {
            return None;
        }
        pass_at_k(PassAtKInput { n: self.generated, c: self.correct, k }).ok()
    }
}

/// One row of the report: a (bitness, optimization level) cell, or the
/// per-bitness average when `opt_level` is `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub bitness: Bitness,
    pub opt_level: Option<OptLevel>,
    pub samples: usize,
    pub re_com_pct: f64,
    pub re_exe_pct: f64,
    pub es_mean: f64,
    pub pass_at_1: Option<f64>,
    pub pass_at_10: Option<f64>,
    pub negative_es: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cells: Vec<ReportCell>,
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Per-cell means plus an unweighted AVG row per bitness over the levels
/// present. Cells with no records are omitted.
pub fn aggregate(records: &[EvalRecord]) -> EvalReport {
    let mut groups: BTreeMap<(Bitness, OptLevel), Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.bitness, r.opt_level)).or_default().push(r);
    }
    let mut cells = Vec::new();
    for bitness in Bitness::ALL {
        let mut level_cells = Vec::new();
        for level in OptLevel::ALL {
            let Some(group) = groups.get(&(bitness, level)) else { continue };
            let pct = |f: fn(&EvalRecord) -> bool| 100.0 * group.iter().filter(|r| f(r)).count() as f64 / group.len() as f64;
            level_cells.push(ReportCell {
                bitness,
                opt_level: Some(level),
                samples: group.len(),
                re_com_pct: pct(|r| r.re_com),
                re_exe_pct: pct(|r| r.re_exe),
                es_mean: mean(group.iter().map(|r| r.es)).expect("nonempty group"),
                pass_at_1: mean(group.iter().filter_map(|r| r.pass_at(1))),
                pass_at_10: mean(group.iter().filter_map(|r| r.pass_at(10))),
                negative_es: group.iter().filter(|r| r.es < 0.0).count(),
            });
        }
        if level_cells.is_empty() {
            continue;
        }
        let avg = ReportCell {
            bitness,
            opt_level: None,
            samples: level_cells.iter().map(|c| c.samples).sum(),
            re_com_pct: mean(level_cells.iter().map(|c| c.re_com_pct)).expect("nonempty"),
            re_exe_pct: mean(level_cells.iter().map(|c| c.re_exe_pct)).expect("nonempty"),
            es_mean: mean(level_cells.iter().map(|c| c.es_mean)).expect("nonempty"),
            pass_at_1: mean(level_cells.iter().filter_map(|c| c.pass_at_1)),
            pass_at_10: mean(level_cells.iter().filter_map(|c| c.pass_at_10)),
            negative_es: level_cells.iter().map(|c| c.negative_es).sum(),
        };
        cells.extend(level_cells);
        cells.push(avg);
    }
    EvalReport { cells }
}

impl EvalReport {
    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cell(&self, bitness: Bitness, opt_level: Option<OptLevel>) -> Option<&ReportCell> {
        self.cells.iter().find(|c| c.bitness == bitness && c.opt_level == opt_level)
    }

    /// Comma-separated with every column padded to a common width.
    pub fn to_aligned_csv(&self) -> String {
        let header = ["bitness", "opt", "samples", "re_com", "re_exe", "es", "pass@1", "pass@10", "neg_es"];
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
        let mut rows: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for c in &self.cells {
            rows.push(vec![
                c.bitness.to_string(),
                c.opt_level.map(|o| o.to_string()).unwrap_or_else(|| "AVG".into()),
                c.samples.to_string(),
                format!("{:.2}", c.re_com_pct),
                format!("{:.2}", c.re_exe_pct),
                format!("{:.4}", c.es_mean),
                opt(c.pass_at_1),
                opt(c.pass_at_10),
                c.negative_es.to_string(),
            ]);
        }
        let widths: Vec<usize> = (0..header.len()).map(|i| rows.iter().map(|r| r[i].len()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for row in rows {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (cell, w))| if i + 1 == widths.len() { cell.clone() } else { format!("{cell:<w$}") })
                .collect();
            out.push_str(line.join(", ").trim_end());
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distance_basics() {
        let c = |s: &str| s.chars().collect::<Vec<_>>();
        assert_eq!(edit_distance(&c("abc"), &c("abc")), 0);
        assert_eq!(edit_distance(&c(""), &c("abc")), 3);
        assert_eq!(edit_distance(&c("kitten"), &c("sitting")), 3);
        assert_eq!(edit_distance(&c("sitting"), &c("kitten")), 3);
    }

    #[test]
    fn similarity_basics() {
        assert_eq!(edit_similarity("int f() { return 0; }", "int f() { return 0; }").unwrap(), 1.0);
        assert!((edit_similarity("kitten", "sitting").unwrap() - 4.0 / 7.0).abs() < 1e-12);
        assert_eq!(edit_similarity("", "abc").unwrap(), 0.0);
        assert_eq!(edit_similarity("abc", "  \n"), Err(MetricError::EmptyGroundTruth));
        assert!(edit_similarity("a much longer prediction", "ab").unwrap() < 0.0);
        assert_eq!(edit_similarity("int  f()\n{\n}", "int f() { }").unwrap(), 1.0);
    }

    #[test]
    fn pass_at_k_known_values() {
        assert_eq!(pass_at_k(PassAtKInput::new(20, 1, 1).unwrap()).unwrap(), 0.05);
        assert_eq!(pass_at_k(PassAtKInput::new(7, 7, 3).unwrap()).unwrap(), 1.0);
        assert_eq!(pass_at_k(PassAtKInput::new(7, 0, 3).unwrap()).unwrap(), 0.0);
        assert!((pass_at_k(PassAtKInput::new(5, 2, 2).unwrap()).unwrap() - 0.7).abs() < 1e-15);
        assert!(PassAtKInput::new(3, 4, 1).is_err());
        assert!(PassAtKInput::new(3, 1, 0).is_err());
        assert!(PassAtKInput::new(3, 1, 4).is_err());
    }

    #[test]
    fn pass_at_k_large_inputs_use_product_form() {
        let v = pass_at_k(PassAtKInput::new(400, 3, 150).unwrap()).unwrap();
        // 1 - (250*249*248)/(400*399*398)
        let expected = 1.0 - (250.0 * 249.0 * 248.0) / (400.0 * 399.0 * 398.0);
        assert!((v - expected).abs() < 1e-12);
    }

    #[test]
    fn record_rejects_exe_without_com() {
        assert!(EvalRecord::new("s", Bitness::B64, OptLevel::O0, false, true, 0.5).is_err());
        let json = r#"{"sample_id":"s","bitness":64,"opt_level":"O0","re_com":false,"re_exe":true,"es":0.1,"generated":1,"correct":1}"#;
        assert!(serde_json::from_str::<EvalRecord>(json).is_err());
    }

    #[test]
    fn aggregate_single_record() {
        let r = EvalRecord::new("s", Bitness::B64, OptLevel::O0, true, false, 0.5).unwrap();
        let report = aggregate(&[r]);
        let cell = report.cell(Bitness::B64, Some(OptLevel::O0)).unwrap();
        assert_eq!((cell.re_com_pct, cell.re_exe_pct, cell.es_mean), (100.0, 0.0, 0.5));
        assert_eq!(cell.pass_at_1, Some(0.0));
        assert_eq!(cell.pass_at_10, None);
        assert!(report.cell(Bitness::B32, Some(OptLevel::O0)).is_none());
        assert!(aggregate(&[]).is_empty());
    }

    #[test]
    fn avg_is_unweighted_over_levels() {
        let mk = |lvl, exe| EvalRecord::new("s", Bitness::B32, lvl, true, exe, 1.0).unwrap();
        let records = vec![mk(OptLevel::O0, true), mk(OptLevel::O1, false), mk(OptLevel::O1, false), mk(OptLevel::O1, true)];
        let report = aggregate(&records);
        let avg = report.cell(Bitness::B32, None).unwrap();
        // (100 + 33.33..) / 2, not 2/4
        assert!((avg.re_exe_pct - (100.0 + 100.0 / 3.0) / 2.0).abs() < 1e-9);
        assert_eq!(avg.samples, 4);
        let csv = report.to_aligned_csv();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.lines().nth(3).unwrap().starts_with("32     , AVG"));
    }
}
