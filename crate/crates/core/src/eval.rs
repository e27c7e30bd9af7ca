//! Retrieval metrics, paired significance testing, and TREC run-file I/O.
//!
//! Metrics are macro-averaged (mean of per-query values, the TREC
//! convention). On single-relevant corpora set recall coincides with hits@k.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Qrels;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("query {0:?} appears in the run but has no relevant docs in qrels")]
    UnjudgedQuery(String),
    #[error("per-query value vectors differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("paired t-test needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed run line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
}

/// Ranked retrieval output: per query an ordered list of (doc_id, score),
/// scores non-increasing, ranks implicitly 1..n.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunFile {
    pub rankings: BTreeMap<String, Vec<(String, f64)>>,
    pub run_tag: String,
}

impl RunFile {
    pub fn new(run_tag: &str) -> Self {
        RunFile { rankings: BTreeMap::new(), run_tag: run_tag.to_string() }
    }

    pub fn push(&mut self, query_id: &str, ranking: Vec<(String, f64)>) {
        debug_assert!(
            ranking.windows(2).all(|w| w[0].1 >= w[1].1),
            "scores must be non-increasing"
        );
        self.rankings.insert(query_id.to_string(), ranking);
    }
}

/// Per-query metric values plus their macro average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub per_query: BTreeMap<String, f64>,
    pub macro_avg: f64,
}

fn macro_avg(per_query: &BTreeMap<String, f64>) -> f64 {
    if per_query.is_empty() {
        return 0.0;
    }
    per_query.values().sum::<f64>() / per_query.len() as f64
}

/// Fraction of a query's relevant documents found in the top k.
pub fn recall_at_k(run: &RunFile, qrels: &Qrels, k: usize) -> Result<MetricValues, EvalError> {
    let mut per_query = BTreeMap::new();
    for (qid, ranking) in &run.rankings {
        let relevant = qrels.relevant_docs(qid);
        if relevant.is_empty() {
            return Err(EvalError::UnjudgedQuery(qid.clone()));
        }
        let hits = ranking
            .iter()
            .take(k)
            .filter(|(doc_id, _)| relevant.contains(&doc_id.as_str()))
            .count();
        per_query.insert(qid.clone(), hits as f64 / relevant.len() as f64);
    }
    let avg = macro_avg(&per_query);
    Ok(MetricValues { per_query, macro_avg: avg })
}

/// Reciprocal rank of the first relevant document if it lands within the top
/// k, else 0.
pub fn mrr_at_k(run: &RunFile, qrels: &Qrels, k: usize) -> Result<MetricValues, EvalError> {
    let mut per_query = BTreeMap::new();
    for (qid, ranking) in &run.rankings {
        let relevant = qrels.relevant_docs(qid);
        if relevant.is_empty() {
            return Err(EvalError::UnjudgedQuery(qid.clone()));
        }
        let rr = ranking
            .iter()
            .take(k)
            .position(|(doc_id, _)| relevant.contains(&doc_id.as_str()))
            .map(|i| 1.0 / (i + 1) as f64)
            .unwrap_or(0.0);
        per_query.insert(qid.clone(), rr);
    }
    let avg = macro_avg(&per_query);
    Ok(MetricValues { per_query, macro_avg: avg })
}

/// Fixed-key-order metric report for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub run_tag: String,
    pub num_queries: usize,
    pub r_at_1: f64,
    pub r_at_5: f64,
    pub r_at_10: f64,
    pub mrr_at_10: f64,
    pub per_query_mrr_at_10: BTreeMap<String, f64>,
}

pub fn metric_report(run: &RunFile, qrels: &Qrels) -> Result<MetricReport, EvalError> {
    let r1 = recall_at_k(run, qrels, 1)?;
    let r5 = recall_at_k(run, qrels, 5)?;
    let r10 = recall_at_k(run, qrels, 10)?;
    let mrr = mrr_at_k(run, qrels, 10)?;
    Ok(MetricReport {
        run_tag: run.run_tag.clone(),
        num_queries: run.rankings.len(),
        r_at_1: r1.macro_avg,
        r_at_5: r5.macro_avg,
        r_at_10: r10.macro_avg,
        mrr_at_10: mrr.macro_avg,
        per_query_mrr_at_10: mrr.per_query,
    })
}

// --- Student-t significance test -------------------------------------------

/// ln Gamma(x) by Lanczos approximation (g = 5, n = 6).
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 6] = [
        76.18009172947146,
        -86.50532032941677,
        24.01409824083091,
        -1.231739572450155,
        0.1208650973866179e-2,
        -0.5395239384953e-5,
    ];
    let mut y = x;
    let tmp = x + 5.5;
    let tmp = tmp - (x + 0.5) * tmp.ln();
    let mut ser = 1.000000000190015;
    for c in COEFFS {
        y += 1.0;
        ser += c / y;
    }
    -tmp + (2.5066282746310005 * ser / x).ln()
}

/// Continued-fraction expansion of the incomplete beta (modified Lentz).
fn betacf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 200;
    const EPS: f64 = 3e-16;
    const FPMIN: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta I_x(a, b).
fn betai(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let bt = (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b)
        + a * x.ln()
        + b * (1.0 - x).ln())
    .exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        bt * betacf(a, b, x) / a
    } else {
        1.0 - bt * betacf(b, a, 1.0 - x) / b
    }
}

/// Two-sided p-value for a t statistic with `df` degrees of freedom.
fn student_t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    betai(df / 2.0, 0.5, df / (df + t * t))
}

/// Paired t-test over per-query metric values (same query order).
///
/// Returns (t, two-sided p). All-zero differences report (0, 1); zero
/// variance with nonzero mean reports (+/-inf, 0).
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<(f64, f64), EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(EvalError::TooFewSamples(a.len()));
    }
    let n = a.len() as f64;
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        if mean == 0.0 {
            return Ok((0.0, 1.0));
        }
        return Ok((if mean > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY }, 0.0));
    }
    let t = mean / (var.sqrt() / n.sqrt());
    Ok((t, student_t_two_sided_p(t, n - 1.0)))
}

// --- TREC run format --------------------------------------------------------

/// `query_id Q0 doc_id rank score run_tag`, scores to 6 decimal places.
pub fn write_run(path: &Path, run: &RunFile) -> Result<(), EvalError> {
    let mut w = BufWriter::new(File::create(path)?);
    for (qid, ranking) in &run.rankings {
        for (i, (doc_id, score)) in ranking.iter().enumerate() {
            writeln!(w, "{} Q0 {} {} {:.6} {}", qid, doc_id, i + 1, score, run.run_tag)?;
        }
    }
    Ok(())
}

pub fn read_run(path: &Path) -> Result<RunFile, EvalError> {
    let reader = BufReader::new(File::open(path)?);
    let mut run = RunFile::new("");
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(EvalError::MalformedLine {
                line: lineno,
                reason: format!("expected 6 fields, got {}", fields.len()),
            });
        }
        let rank: usize = fields[3].parse().map_err(|_| EvalError::MalformedLine {
            line: lineno,
            reason: format!("bad rank {:?}", fields[3]),
        })?;
        let score: f64 = fields[4].parse().map_err(|_| EvalError::MalformedLine {
            line: lineno,
            reason: format!("bad score {:?}", fields[4]),
        })?;
        run.run_tag = fields[5].to_string();
        let ranking = run.rankings.entry(fields[0].to_string()).or_default();
        if rank != ranking.len() + 1 {
            return Err(EvalError::MalformedLine {
                line: lineno,
                reason: format!("rank {} out of order (expected {})", rank, ranking.len() + 1),
            });
        }
        if let Some((_, prev)) = ranking.last() {
            if score > *prev {
                return Err(EvalError::MalformedLine {
                    line: lineno,
                    reason: "scores must be non-increasing".into(),
                });
            }
        }
        ranking.push((fields[2].to_string(), score));
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn qrels_single(pairs: &[(&str, &str)]) -> Qrels {
        let mut q = Qrels::default();
        for (qid, doc) in pairs {
            q.insert(qid, doc, 1);
        }
        q
    }

    fn ranking(docs: &[&str]) -> Vec<(String, f64)> {
        docs.iter().enumerate().map(|(i, d)| (d.to_string(), 100.0 - i as f64)).collect()
    }

    #[test]
    fn recall_single_relevant() {
        let qrels = qrels_single(&[("q1", "rel")]);
        let mut run = RunFile::new("test");
        run.push("q1", ranking(&["a", "b", "c", "d", "e", "f", "rel"]));
        assert_eq!(recall_at_k(&run, &qrels, 5).unwrap().macro_avg, 0.0);
        assert_eq!(recall_at_k(&run, &qrels, 7).unwrap().macro_avg, 1.0);

        let mut top = RunFile::new("test");
        top.push("q1", ranking(&["rel", "a"]));
        assert_eq!(recall_at_k(&top, &qrels, 1).unwrap().macro_avg, 1.0);
        assert_eq!(recall_at_k(&top, &qrels, 10).unwrap().macro_avg, 1.0);
    }

    #[test]
    fn recall_multi_relevant_fraction() {
        let mut qrels = Qrels::default();
        qrels.insert("q1", "r1", 1);
        qrels.insert("q1", "r2", 2);
        let mut run = RunFile::new("test");
        run.push("q1", ranking(&["r1", "a", "b", "c", "d", "e", "f", "g", "h", "i", "r2"]));
        assert_eq!(recall_at_k(&run, &qrels, 10).unwrap().macro_avg, 0.5);
    }

    #[test]
    fn recall_nondecreasing_in_k() {
        let qrels = qrels_single(&[("q1", "rel")]);
        let mut run = RunFile::new("test");
        run.push("q1", ranking(&["a", "rel", "b"]));
        let mut prev = 0.0;
        for k in 1..=5 {
            let r = recall_at_k(&run, &qrels, k).unwrap().macro_avg;
            assert!(r >= prev);
            prev = r;
        }
    }

    // Direct formula evaluation: ranks 1, 2, >10 -> (1 + 0.5 + 0)/3 = 0.5.
    #[test]
    fn mrr_frozen_example() {
        let qrels = qrels_single(&[("q1", "r1"), ("q2", "r2"), ("q3", "r3")]);
        let mut run = RunFile::new("test");
        run.push("q1", ranking(&["r1", "x"]));
        run.push("q2", ranking(&["x", "r2"]));
        run.push("q3", ranking(&["a", "b", "c", "d", "e", "f", "g", "h", "i", "j", "r3"]));
        let mrr = mrr_at_k(&run, &qrels, 10).unwrap();
        assert_abs_diff_eq!(mrr.macro_avg, 0.5, epsilon = 1e-12);
        assert_eq!(mrr.per_query["q1"], 1.0);
        assert_eq!(mrr.per_query["q2"], 0.5);
        assert_eq!(mrr.per_query["q3"], 0.0);
    }

    #[test]
    fn mrr_extremes() {
        let qrels = qrels_single(&[("q1", "r1"), ("q2", "r2")]);
        let mut all_top = RunFile::new("test");
        all_top.push("q1", ranking(&["r1"]));
        all_top.push("q2", ranking(&["r2"]));
        assert_eq!(mrr_at_k(&all_top, &qrels, 10).unwrap().macro_avg, 1.0);

        let mut none = RunFile::new("test");
        none.push("q1", ranking(&["x"]));
        none.push("q2", ranking(&["y"]));
        assert_eq!(mrr_at_k(&none, &qrels, 10).unwrap().macro_avg, 0.0);
    }

    #[test]
    fn mrr_bounded_by_recall_single_relevant() {
        let qrels = qrels_single(&[("q1", "rel")]);
        for pos in 0..12 {
            let mut docs: Vec<String> = (0..12).map(|i| format!("x{i}")).collect();
            docs[pos] = "rel".to_string();
            let refs: Vec<&str> = docs.iter().map(|s| s.as_str()).collect();
            let mut run = RunFile::new("test");
            run.push("q1", ranking(&refs));
            let m = mrr_at_k(&run, &qrels, 10).unwrap().macro_avg;
            let r = recall_at_k(&run, &qrels, 10).unwrap().macro_avg;
            assert!(m <= r + 1e-12, "pos {pos}: mrr {m} > recall {r}");
        }
    }

    #[test]
    fn metrics_invariant_under_relabeling() {
        let qrels = qrels_single(&[("q1", "rel"), ("q2", "other")]);
        let mut run = RunFile::new("test");
        run.push("q1", ranking(&["a", "rel", "b"]));
        run.push("q2", ranking(&["other", "c"]));
        let before = metric_report(&run, &qrels).unwrap();

        // Consistently relabel doc ids in both run and qrels.
        let relabel = |d: &str| format!("doc-{d}");
        let mut run2 = RunFile::new("test");
        for (qid, ranking) in &run.rankings {
            run2.push(qid, ranking.iter().map(|(d, s)| (relabel(d), *s)).collect());
        }
        let mut qrels2 = Qrels::default();
        for (qid, docs) in &qrels.judgments {
            for (d, g) in docs {
                qrels2.insert(qid, &relabel(d), *g);
            }
        }
        let after = metric_report(&run2, &qrels2).unwrap();
        assert_eq!(before.r_at_1, after.r_at_1);
        assert_eq!(before.mrr_at_10, after.mrr_at_10);
    }

    #[test]
    fn unjudged_query_is_error() {
        let qrels = qrels_single(&[("q1", "rel")]);
        let mut run = RunFile::new("test");
        run.push("q9", ranking(&["a"]));
        assert!(matches!(
            mrr_at_k(&run, &qrels, 10),
            Err(EvalError::UnjudgedQuery(q)) if q == "q9"
        ));
    }

    #[test]
    fn t_test_identical_inputs() {
        let a = [0.1, 0.4, 0.9];
        let (t, p) = paired_t_test(&a, &a).unwrap();
        assert_eq!(t, 0.0);
        assert_eq!(p, 1.0);
    }

    #[test]
    fn t_test_zero_variance_nonzero_mean() {
        let a = [2.0, 2.0, 2.0, 2.0];
        let b = [1.0, 1.0, 1.0, 1.0];
        let (t, p) = paired_t_test(&a, &b).unwrap();
        assert!(t.is_infinite() && t > 0.0);
        assert_eq!(p, 0.0);
    }

    // Frozen from an independent statistical oracle (scipy.stats):
    // diffs [1..5] -> t = 4.242640687119285, p = 0.013235599563682695.
    #[test]
    fn t_test_frozen_example() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [0.0; 5];
        let (t, p) = paired_t_test(&a, &b).unwrap();
        assert_abs_diff_eq!(t, 4.242640687119285, epsilon = 1e-12);
        assert_abs_diff_eq!(p, 0.013235599563682695, epsilon = 1e-9);
    }

    // More scipy-frozen (t, df, p) points to pin the incomplete beta.
    #[test]
    fn t_distribution_tail_oracle_points() {
        let cases = [
            (1.0, 1.0, 0.49999999999999956),
            (2.5, 9.0, 0.03386182768298571),
            (0.5, 3.0, 0.651447964848151),
            (12.0, 2.0, 0.00687293367715846),
            (3.0, 29.0, 0.0054991921339034066),
        ];
        for (t, df, expect) in cases {
            assert_abs_diff_eq!(student_t_two_sided_p(t, df), expect, epsilon = 1e-9);
        }
    }

    #[test]
    fn t_test_negation_flips_t_keeps_p() {
        let a = [0.5, 0.6, 0.7, 0.55, 0.65];
        let b = [0.45, 0.62, 0.66, 0.5, 0.6];
        let (t_ab, p_ab) = paired_t_test(&a, &b).unwrap();
        let (t_ba, p_ba) = paired_t_test(&b, &a).unwrap();
        assert_abs_diff_eq!(t_ab, -t_ba, epsilon = 1e-12);
        assert_abs_diff_eq!(p_ab, p_ba, epsilon = 1e-12);
        // scipy.stats.ttest_rel on the same data.
        assert_abs_diff_eq!(t_ab, 2.4930009553630046, epsilon = 1e-9);
        assert_abs_diff_eq!(p_ab, 0.06726807315614983, epsilon = 1e-9);
    }

    #[test]
    fn t_test_errors() {
        assert!(matches!(paired_t_test(&[1.0], &[1.0, 2.0]), Err(EvalError::LengthMismatch(1, 2))));
        assert!(matches!(paired_t_test(&[1.0], &[2.0]), Err(EvalError::TooFewSamples(1))));
    }

    #[test]
    fn run_file_roundtrip() {
        let mut run = RunFile::new("mytag");
        run.push("q1", vec![("d1".into(), 1.25), ("d2".into(), 0.5)]);
        run.push("q2", vec![("d3".into(), -0.125)]);
        let f = tempfile::NamedTempFile::new().unwrap();
        write_run(f.path(), &run).unwrap();
        let back = read_run(f.path()).unwrap();
        assert_eq!(back, run);
        let raw = std::fs::read_to_string(f.path()).unwrap();
        assert!(raw.contains("q1 Q0 d1 1 1.250000 mytag"));
    }

    #[test]
    fn run_file_empty_roundtrip() {
        let run = RunFile::new("tag");
        let f = tempfile::NamedTempFile::new().unwrap();
        write_run(f.path(), &run).unwrap();
        let back = read_run(f.path()).unwrap();
        assert!(back.rankings.is_empty());
    }

    #[test]
    fn run_file_bad_rank_order() {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), "q1 Q0 d1 2 0.5 tag\nq1 Q0 d2 1 0.4 tag\n").unwrap();
        assert!(matches!(read_run(f.path()), Err(EvalError::MalformedLine { line: 1, .. })));

        std::fs::write(f.path(), "q1 Q0 d1 1 0.5 tag\nq1 Q0 d2 2 0.9 tag\n").unwrap();
        assert!(matches!(read_run(f.path()), Err(EvalError::MalformedLine { line: 2, .. })));
    }

    #[test]
    fn metric_report_fixed_key_order() {
        let qrels = qrels_single(&[("q1", "rel")]);
        let mut run = RunFile::new("t");
        run.push("q1", ranking(&["rel"]));
        let report = metric_report(&run, &qrels).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        let r1 = json.find("\"r_at_1\"").unwrap();
        let r5 = json.find("\"r_at_5\"").unwrap();
        let r10 = json.find("\"r_at_10\"").unwrap();
        let mrr = json.find("\"mrr_at_10\"").unwrap();
        assert!(r1 < r5 && r5 < r10 && r10 < mrr);
    }
}
