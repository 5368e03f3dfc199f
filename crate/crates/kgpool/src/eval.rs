//! Metrics and statistics: micro P/R/F1 under the NA rule, precision at
//! K-percent recall, PR curves, McNemar's significance test, and entity
//! degree statistics.
//!
//! The NA convention: gold-NA instances never count as positives; a
//! non-NA prediction on one is a false positive. Ranking confidence is
//! the predicted (non-NA) probability.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::NA_RELATION;
use crate::error::{Error, Result};
use crate::hig::HigTopology;
use crate::pooling::ContextGraph;

/// One scored prediction for ranking-based metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub instance: usize,
    pub gold: String,
    pub predicted: String,
    pub confidence: f64,
}

impl PredictionRecord {
    pub fn is_hit(&self) -> bool {
        self.gold != NA_RELATION && self.predicted == self.gold
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Micro-averaged precision/recall/F1. Degenerate denominators yield 0
/// with a warning rather than NaN.
pub fn micro_prf(preds: &[PredictionRecord]) -> Prf {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for p in preds {
        let gold_positive = p.gold != NA_RELATION;
        let predicted_positive = p.predicted != NA_RELATION;
        match (gold_positive, predicted_positive) {
            (true, true) if p.predicted == p.gold => tp += 1,
            (true, true) => {
                fp += 1;
                fn_ += 1;
            }
            (true, false) => fn_ += 1,
            (false, true) => fp += 1,
            (false, false) => {}
        }
    }
    if tp + fn_ == 0 {
        log::warn!("micro_prf: no non-NA gold instances; metrics are vacuous");
    }
    let precision = if tp + fp == 0 {
        if tp + fn_ != 0 {
            log::warn!("micro_prf: no positive predictions");
        }
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Prf {
        precision,
        recall,
        f1,
    }
}

/// Confidence-descending order; ties break on instance id so ranking is
/// deterministic.
pub fn ranked(preds: &[PredictionRecord]) -> Vec<&PredictionRecord> {
    let mut out: Vec<&PredictionRecord> = preds.iter().collect();
    out.sort_by(|a, b| {
        b.confidence
            .partial_cmp(&a.confidence)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.instance.cmp(&b.instance))
    });
    out
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PrecisionAtK {
    pub precision: f64,
    /// False when the ranked list ran out before reaching the recall
    /// target; the reported precision is then the end-of-list value.
    pub recall_reached: bool,
}

/// Precision at the first ranked position where recall reaches
/// `k_percent`% of all non-NA gold instances.
pub fn precision_at_k_recall(preds: &[PredictionRecord], k_percent: f64) -> Result<PrecisionAtK> {
    if !(k_percent > 0.0 && k_percent <= 100.0) {
        return Err(Error::Eval(format!(
            "k_percent must be in (0, 100], got {k_percent}"
        )));
    }
    let total_gold = preds.iter().filter(|p| p.gold != NA_RELATION).count();
    if total_gold == 0 {
        log::warn!("precision_at_k_recall: no non-NA gold instances");
        return Ok(PrecisionAtK {
            precision: 0.0,
            recall_reached: false,
        });
    }
    let target = k_percent / 100.0 * total_gold as f64;
    let mut tp = 0usize;
    let mut last_precision = 0.0;
    for (rank, p) in ranked(preds).iter().enumerate() {
        if p.is_hit() {
            tp += 1;
        }
        last_precision = tp as f64 / (rank + 1) as f64;
        if tp as f64 >= target {
            return Ok(PrecisionAtK {
                precision: last_precision,
                recall_reached: true,
            });
        }
    }
    log::warn!(
        "precision_at_k_recall: recall {:.1}% never reached; reporting end-of-list precision",
        k_percent
    );
    Ok(PrecisionAtK {
        precision: last_precision,
        recall_reached: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

/// One point per ranked position; recall is monotone non-decreasing.
pub fn pr_curve(preds: &[PredictionRecord]) -> Vec<PrPoint> {
    let total_gold = preds.iter().filter(|p| p.gold != NA_RELATION).count();
    let mut tp = 0usize;
    let mut out = Vec::with_capacity(preds.len());
    for (rank, p) in ranked(preds).iter().enumerate() {
        if p.is_hit() {
            tp += 1;
        }
        let recall = if total_gold == 0 {
            0.0
        } else {
            tp as f64 / total_gold as f64
        };
        out.push(PrPoint {
            recall,
            precision: tp as f64 / (rank + 1) as f64,
        });
    }
    out
}

/// CSV with header `recall,precision`, one row per rank.
pub fn write_pr_curve(path: &Path, points: &[PrPoint]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "recall,precision")?;
    for p in points {
        writeln!(w, "{},{}", p.recall, p.precision)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pr_curve(path: &Path) -> Result<Vec<PrPoint>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if lineno == 0 {
            if line.trim() != "recall,precision" {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: 1,
                    message: format!("unexpected header {line:?}"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let (r, p) = line.split_once(',').ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            message: "expected two columns".to_string(),
        })?;
        let parse = |s: &str| {
            s.trim().parse::<f64>().map_err(|_| Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                message: format!("bad float {s:?}"),
            })
        };
        out.push(PrPoint {
            recall: parse(r)?,
            precision: parse(p)?,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// McNemar's test
// ---------------------------------------------------------------------------

/// Paired-classifier contingency counts: `a` both correct, `b` only the
/// first correct, `c` only the second correct, `d` both wrong.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct McnemarTest {
    pub statistic: f64,
    pub p_value: f64,
    pub log10_p: f64,
    /// p < 0.05
    pub significant: bool,
}

/// Continuity-corrected McNemar statistic `(|b-c|-1)^2 / (b+c)` with a
/// chi-square(1) survival p-value, evaluated in log space so far-tail
/// p-values stay meaningful.
pub fn mcnemar(table: &ContingencyTable) -> Result<McnemarTest> {
    let b = table.b as f64;
    let c = table.c as f64;
    if table.b + table.c == 0 {
        return Err(Error::Eval(
            "mcnemar is undefined when b + c = 0 (no discordant pairs)".to_string(),
        ));
    }
    let statistic = ((b - c).abs() - 1.0).powi(2) / (b + c);
    let ln_p = ln_chi2_survival_1df(statistic);
    let p_value = ln_p.exp();
    Ok(McnemarTest {
        statistic,
        p_value,
        log10_p: ln_p / std::f64::consts::LN_10,
        significant: p_value < 0.05,
    })
}

/// `ln Q(1/2, x/2)` — the log survival function of chi-square with one
/// degree of freedom (equivalently `ln erfc(sqrt(x/2))`).
pub fn ln_chi2_survival_1df(x: f64) -> f64 {
    assert!(
        x >= 0.0 && x.is_finite(),
        "statistic must be finite and >= 0"
    );
    let a = 0.5;
    let ln_gamma_half = 0.5723649429247001; // ln Γ(1/2) = ln √π
    let xg = x / 2.0;
    if xg == 0.0 {
        return 0.0;
    }
    if xg < a + 1.0 {
        // series for the lower incomplete gamma, then Q = 1 - P
        let mut ap = a;
        let mut sum = 1.0 / a;
        let mut del = sum;
        for _ in 0..200 {
            ap += 1.0;
            del *= xg / ap;
            sum += del;
            if del.abs() < sum.abs() * 1e-16 {
                break;
            }
        }
        let p = sum * (-xg + a * xg.ln() - ln_gamma_half).exp();
        (1.0 - p).ln()
    } else {
        // Lentz's continued fraction for the upper incomplete gamma
        let fpmin = 1e-300;
        let mut b = xg + 1.0 - a;
        let mut c = 1.0 / fpmin;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..200 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < fpmin {
                d = fpmin;
            }
            c = b + an / c;
            if c.abs() < fpmin {
                c = fpmin;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        (-xg + a * xg.ln() - ln_gamma_half) + h.ln()
    }
}

// ---------------------------------------------------------------------------
// Degree statistics
// ---------------------------------------------------------------------------

/// Mean entity-node degree before and after pooling, averaged over the
/// two entity nodes of every instance.
pub fn degree_stats<'a>(
    pairs: impl IntoIterator<Item = (&'a HigTopology, &'a ContextGraph)>,
) -> Result<(f64, f64)> {
    let mut hig_sum = 0.0;
    let mut cg_sum = 0.0;
    let mut n = 0usize;
    for (topo, cg) in pairs {
        hig_sum += topo.degree(1) + topo.degree(2);
        let d1: f64 = cg.adjacency.row_slice(1).iter().sum();
        let d2: f64 = cg.adjacency.row_slice(2).iter().sum();
        cg_sum += d1 + d2;
        n += 2;
    }
    if n == 0 {
        return Err(Error::Eval("degree_stats over an empty set".to_string()));
    }
    Ok((hig_sum / n as f64, cg_sum / n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(instance: usize, gold: &str, predicted: &str, confidence: f64) -> PredictionRecord {
        PredictionRecord {
            instance,
            gold: gold.to_string(),
            predicted: predicted.to_string(),
            confidence,
        }
    }

    #[test]
    fn micro_prf_all_correct() {
        let preds = vec![rec(0, "r1", "r1", 0.9), rec(1, "r2", "r2", 0.8)];
        let m = micro_prf(&preds);
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn micro_prf_half_right() {
        let preds = vec![rec(0, "r1", "r1", 0.9), rec(1, "r1", "r2", 0.8)];
        let m = micro_prf(&preds);
        assert_eq!((m.precision, m.recall, m.f1), (0.5, 0.5, 0.5));
    }

    #[test]
    fn micro_prf_na_gold_counts_as_false_positive() {
        let preds = vec![rec(0, "r1", "r1", 0.9), rec(1, "NA", "r1", 0.8)];
        let m = micro_prf(&preds);
        assert_eq!(m.precision, 0.5);
        assert_eq!(m.recall, 1.0);
    }

    #[test]
    fn micro_prf_vacuous_case() {
        let preds = vec![rec(0, "NA", "NA", 0.5)];
        let m = micro_prf(&preds);
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn micro_prf_is_permutation_invariant() {
        let mut preds = vec![
            rec(0, "r1", "r1", 0.9),
            rec(1, "r2", "r1", 0.2),
            rec(2, "NA", "r2", 0.4),
            rec(3, "r1", "r1", 0.7),
        ];
        let base = micro_prf(&preds);
        preds.reverse();
        assert_eq!(micro_prf(&preds), base);
    }

    #[test]
    fn p_at_k_perfect_ranking() {
        let preds: Vec<_> = (0..10)
            .map(|i| rec(i, "r", "r", 1.0 - i as f64 / 100.0))
            .collect();
        let p = precision_at_k_recall(&preds, 30.0).unwrap();
        assert_eq!(p.precision, 1.0);
        assert!(p.recall_reached);
    }

    #[test]
    fn p_at_k_hand_trace() {
        // ranked [TP, FP, TP, TP], 3 gold positives, k=100 -> 3/4
        let preds = vec![
            rec(0, "r", "r", 0.9),
            rec(1, "NA", "r", 0.8),
            rec(2, "r", "r", 0.7),
            rec(3, "r", "r", 0.6),
        ];
        let p = precision_at_k_recall(&preds, 100.0).unwrap();
        assert_eq!(p.precision, 0.75);
        assert!(p.recall_reached);
    }

    #[test]
    fn p_at_100_equals_last_curve_point() {
        let preds = vec![
            rec(0, "r", "r", 0.9),
            rec(1, "r", "x", 0.8),
            rec(2, "r", "r", 0.7),
            rec(3, "NA", "r", 0.6),
            rec(4, "r", "r", 0.5),
        ];
        let p100 = precision_at_k_recall(&preds, 100.0).unwrap();
        let curve = pr_curve(&preds);
        assert_eq!(p100.precision, curve.last().unwrap().precision);
    }

    #[test]
    fn p_at_k_unreachable_recall_is_flagged() {
        let preds = vec![rec(0, "r", "x", 0.9), rec(1, "r", "r", 0.8)];
        let p = precision_at_k_recall(&preds, 100.0).unwrap();
        assert!(!p.recall_reached);
        assert_eq!(p.precision, 0.5);
    }

    #[test]
    fn pr_curve_shapes() {
        let all_correct: Vec<_> = (0..4)
            .map(|i| rec(i, "r", "r", 1.0 - i as f64 / 10.0))
            .collect();
        let curve = pr_curve(&all_correct);
        assert!(curve.iter().all(|p| p.precision == 1.0));
        assert_eq!(curve.last().unwrap().recall, 1.0);

        // first wrong, rest correct on n=5
        let mut preds = vec![rec(0, "r", "x", 0.99)];
        preds.extend((1..5).map(|i| rec(i, "r", "r", 0.9 - i as f64 / 10.0)));
        let curve = pr_curve(&preds);
        assert_eq!(curve[0].precision, 0.0);
        let last = curve.last().unwrap();
        assert_eq!(last.precision, 4.0 / 5.0);
        for w in curve.windows(2) {
            assert!(w[1].recall >= w[0].recall);
        }
    }

    #[test]
    fn pr_curve_csv_round_trips() {
        let preds = vec![
            rec(0, "r", "r", 0.9371234567),
            rec(1, "r", "x", 0.1),
            rec(2, "r", "r", 0.65),
        ];
        let points = pr_curve(&preds);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curve.csv");
        write_pr_curve(&path, &points).unwrap();
        let loaded = read_pr_curve(&path).unwrap();
        assert_eq!(points, loaded);
    }

    #[test]
    fn mcnemar_reference_tables() {
        // statistic to 2 decimals, p to 3 significant log10 figures
        let t1 = mcnemar(&ContingencyTable {
            a: 160916,
            b: 4702,
            c: 3169,
            d: 3613,
        })
        .unwrap();
        assert!(
            (t1.statistic - 298.18).abs() < 0.01,
            "stat {}",
            t1.statistic
        );
        assert!(
            (t1.log10_p - (8.18e-67_f64).log10()).abs() < 0.02,
            "log10 p {}",
            t1.log10_p
        );
        assert!(t1.significant);

        let t2 = mcnemar(&ContingencyTable {
            a: 617266,
            b: 38652,
            c: 29255,
            d: 55593,
        })
        .unwrap();
        assert!(
            (t2.statistic - 1300.08).abs() < 0.01,
            "stat {}",
            t2.statistic
        );
        assert!(
            (t2.log10_p - (1.08e-284_f64).log10()).abs() < 0.02,
            "log10 p {}",
            t2.log10_p
        );
        assert!(t2.significant);
    }

    #[test]
    fn mcnemar_small_tables() {
        // b=c=10: continuity correction gives (0-1)^2/20
        let t = mcnemar(&ContingencyTable {
            a: 0,
            b: 10,
            c: 10,
            d: 0,
        })
        .unwrap();
        assert!((t.statistic - 0.05).abs() < 1e-12);
        assert!(!t.significant);

        // 0 1 1 0: statistic 0.5, p = erfc(0.5) ≈ 0.48
        let t = mcnemar(&ContingencyTable {
            a: 0,
            b: 1,
            c: 1,
            d: 0,
        })
        .unwrap();
        assert!((t.statistic - 0.5).abs() < 1e-12);
        assert!(
            (t.p_value - 0.4795001221869535).abs() < 1e-9,
            "p {}",
            t.p_value
        );
        assert!(!t.significant);

        assert!(mcnemar(&ContingencyTable {
            a: 5,
            b: 0,
            c: 0,
            d: 5
        })
        .is_err());
    }

    #[test]
    fn degree_stats_identity_and_fully_pooled() {
        use crate::hig::{build_topology, EntityAttributes, EntityMention, SentenceInstance};
        use crate::pooling::induced_submatrix;
        use crate::tensor::Tensor;

        let inst = SentenceInstance {
            tokens: ["a", "b", "c"].iter().map(|s| s.to_string()).collect(),
            head: EntityMention {
                kg_id: "Q1".into(),
                span: (0, 1),
            },
            tail: EntityMention {
                kg_id: "Q2".into(),
                span: (2, 3),
            },
            relation: "r".into(),
        };
        let attrs = EntityAttributes {
            kg_id: "Q1".into(),
            label: Some("x".into()),
            description: Some("y z".into()),
            ..Default::default()
        };
        let topo = build_topology(
            &inst,
            Some(&attrs),
            Some(&EntityAttributes {
                kg_id: "Q2".into(),
                ..attrs.clone()
            }),
            &crate::hig::HigConfig::default(),
        );
        let cg_from = |adjacency: Tensor, live: Vec<usize>| ContextGraph {
            sentence: Tensor::zeros(1, 1),
            head: Tensor::zeros(1, 1),
            tail: Tensor::zeros(1, 1),
            readout: Tensor::zeros(1, 1),
            features: Tensor::zeros(live.len(), 1),
            adjacency,
            live,
            outcomes: vec![],
        };

        // pooling disabled: the CG is the HIG
        let identity = cg_from(topo.adjacency.clone(), (0..topo.node_count()).collect());
        let (hig, cg) = degree_stats([(&topo, &identity)]).unwrap();
        assert_eq!(hig, cg);
        assert_eq!(hig, 3.0); // sentence edge + 2 attribute edges per entity

        // every attribute dropped: entity degree falls to the sentence edge
        let pooled = cg_from(
            induced_submatrix(&topo.adjacency, &[0, 1, 2]),
            vec![0, 1, 2],
        );
        let (hig, cg) = degree_stats([(&topo, &pooled)]).unwrap();
        assert_eq!(hig, 3.0);
        assert_eq!(cg, 1.0);
        assert!(cg <= hig);
    }

    #[test]
    fn chi2_survival_matches_erfc_reference_values() {
        // erfc(z) = Q(1/2, z^2); reference values from the complementary
        // error function
        let cases = [
            (0.5_f64, 0.4795001221869535_f64),
            (1.0, 0.15729920705028513),
            (2.0, 0.004677734981063127),
            (3.0, 2.209049699858544e-5),
            (5.0, 1.5374597944280351e-12),
        ];
        for (z, expected) in cases {
            let ln_p = ln_chi2_survival_1df(2.0 * z * z);
            let rel = (ln_p.exp() - expected).abs() / expected;
            assert!(rel < 1e-9, "erfc({z}): rel error {rel}");
        }
    }
}
