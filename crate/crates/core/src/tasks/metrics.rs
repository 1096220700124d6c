use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub task: String,
    pub mode: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: Option<f64>,
    pub examples: usize,
    pub seed: u64,
    pub checkpoint: Option<String>,
    pub per_class: Vec<ClassMetrics>,
}

impl MetricsReport {
    fn empty(examples: usize) -> MetricsReport {
        MetricsReport {
            task: String::new(),
            mode: String::new(),
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
            accuracy: None,
            examples,
            seed: 0,
            checkpoint: None,
            per_class: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "task        {}", self.task)?;
        writeln!(f, "mode        {}", self.mode)?;
        writeln!(f, "seed        {}", self.seed)?;
        writeln!(f, "checkpoint  {}", self.checkpoint.as_deref().unwrap_or("-"))?;
        writeln!(f, "examples    {}", self.examples)?;
        writeln!(f, "precision   {:.4}", self.precision)?;
        writeln!(f, "recall      {:.4}", self.recall)?;
        writeln!(f, "f1          {:.4}", self.f1)?;
        if let Some(a) = self.accuracy {
            writeln!(f, "accuracy    {a:.4}")?;
        }
        if !self.per_class.is_empty() {
            writeln!(f)?;
            writeln!(f, "{:<20} {:>9} {:>9} {:>9} {:>8}", "label", "precision", "recall", "f1", "support")?;
            for c in &self.per_class {
                writeln!(
                    f,
                    "{:<20} {:>9.4} {:>9.4} {:>9.4} {:>8}",
                    c.label, c.precision, c.recall, c.f1, c.support
                )?;
            }
        }
        Ok(())
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1_of(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Default, Clone, Copy)]
struct Counts {
    tp: usize,
    fp: usize,
    fn_: usize,
}

impl Counts {
    fn scores(self) -> (f64, f64, f64) {
        let p = ratio(self.tp, self.tp + self.fp);
        let r = ratio(self.tp, self.tp + self.fn_);
        (p, r, f1_of(p, r))
    }
}

fn per_class(counts: &BTreeMap<String, Counts>) -> Vec<ClassMetrics> {
    counts
        .iter()
        .map(|(label, c)| {
            let (precision, recall, f1) = c.scores();
            ClassMetrics {
                label: label.clone(),
                precision,
                recall,
                f1,
                support: c.tp + c.fn_,
            }
        })
        .collect()
}

/// Micro-averaged single-label metrics; precision, recall and F1 all equal
/// accuracy.
pub fn multiclass_metrics(pred: &[String], truth: &[String]) -> MetricsReport {
    assert_eq!(pred.len(), truth.len(), "prediction and truth lengths differ");
    let mut counts: BTreeMap<String, Counts> = BTreeMap::new();
    let mut total = Counts::default();
    for (p, t) in pred.iter().zip(truth) {
        if p == t {
            counts.entry(t.clone()).or_default().tp += 1;
            total.tp += 1;
        } else {
            counts.entry(p.clone()).or_default().fp += 1;
            counts.entry(t.clone()).or_default().fn_ += 1;
            total.fp += 1;
            total.fn_ += 1;
        }
    }
    let (precision, recall, f1) = total.scores();
    MetricsReport {
        precision,
        recall,
        f1,
        accuracy: Some(ratio(total.tp, truth.len())),
        per_class: per_class(&counts),
        ..MetricsReport::empty(truth.len())
    }
}

/// Positive-class metrics for binary decisions, plus accuracy.
pub fn binary_metrics(pred: &[bool], truth: &[bool]) -> MetricsReport {
    assert_eq!(pred.len(), truth.len(), "prediction and truth lengths differ");
    let mut c = Counts::default();
    let mut neg = Counts::default();
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (true, true) => c.tp += 1,
            (true, false) => {
                c.fp += 1;
                neg.fn_ += 1
            }
            (false, true) => {
                c.fn_ += 1;
                neg.fp += 1
            }
            (false, false) => neg.tp += 1,
        }
    }
    let (precision, recall, f1) = c.scores();
    let counts = BTreeMap::from([("clone".to_string(), c), ("distinct".to_string(), neg)]);
    MetricsReport {
        precision,
        recall,
        f1,
        accuracy: Some(ratio(c.tp + neg.tp, truth.len())),
        per_class: per_class(&counts),
        ..MetricsReport::empty(truth.len())
    }
}

/// Micro-averaged metrics over predicted and true label sets.
pub fn multilabel_metrics(pred: &[Vec<String>], truth: &[Vec<String>]) -> MetricsReport {
    assert_eq!(pred.len(), truth.len(), "prediction and truth lengths differ");
    let mut counts: BTreeMap<String, Counts> = BTreeMap::new();
    let mut total = Counts::default();
    let mut exact = 0;
    for (p, t) in pred.iter().zip(truth) {
        let p: BTreeSet<&String> = p.iter().collect();
        let t: BTreeSet<&String> = t.iter().collect();
        exact += usize::from(p == t);
        for l in p.union(&t) {
            let c = counts.entry((*l).clone()).or_default();
            match (p.contains(l), t.contains(l)) {
                (true, true) => {
                    c.tp += 1;
                    total.tp += 1
                }
                (true, false) => {
                    c.fp += 1;
                    total.fp += 1
                }
                _ => {
                    c.fn_ += 1;
                    total.fn_ += 1
                }
            }
        }
    }
    let (precision, recall, f1) = total.scores();
    MetricsReport {
        precision,
        recall,
        f1,
        accuracy: Some(ratio(exact, truth.len())),
        per_class: per_class(&counts),
        ..MetricsReport::empty(truth.len())
    }
}

/// Set precision, recall and F1 of predicted against true subtokens. An empty
/// prediction scores zero everywhere.
pub fn subtoken_f1<S: AsRef<str>>(pred: &[S], truth: &[S]) -> (f64, f64, f64) {
    let p: BTreeSet<&str> = pred.iter().map(AsRef::as_ref).collect();
    let t: BTreeSet<&str> = truth.iter().map(AsRef::as_ref).collect();
    if p.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let hit = p.intersection(&t).count();
    let precision = ratio(hit, p.len());
    let recall = ratio(hit, t.len());
    (precision, recall, f1_of(precision, recall))
}
