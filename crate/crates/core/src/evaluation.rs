//! Classification metrics, precision-recall curves and experiment reports.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::{class_distribution, ClassDistribution};
use crate::lob::TrendLabel;

/// Counts indexed `[truth][predicted]` in label-index order (D, S, U).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

/// Per-class precision, recall and F1 with the zero-division convention 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    pub predicted: u64,
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl ConfusionMatrix {
    pub fn from_labels(truth: &[TrendLabel], pred: &[TrendLabel]) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::InvalidParameter(format!(
                "{} truth labels vs {} predictions",
                truth.len(),
                pred.len()
            )));
        }
        if truth.is_empty() {
            return Err(Error::Empty("confusion matrix"));
        }
        let mut m = Self::default();
        for (t, p) in truth.iter().zip(pred) {
            m.counts[t.index()][p.index()] += 1;
        }
        Ok(m)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self, c: TrendLabel) -> u64 {
        self.counts[c.index()].iter().sum()
    }

    pub fn predicted(&self, c: TrendLabel) -> u64 {
        self.counts.iter().map(|row| row[c.index()]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        ratio((0..3).map(|i| self.counts[i][i]).sum(), self.total())
    }

    pub fn class_scores(&self, c: TrendLabel) -> ClassScores {
        let tp = self.counts[c.index()][c.index()];
        let support = self.support(c);
        let predicted = self.predicted(c);
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        ClassScores { precision, recall, f1, support, predicted }
    }

    /// Unweighted mean F1 over the classes that occur in the truth or the
    /// predictions.
    pub fn f1_macro(&self) -> f64 {
        let present: Vec<ClassScores> = TrendLabel::ALL
            .iter()
            .map(|&c| self.class_scores(c))
            .filter(|s| s.support + s.predicted > 0)
            .collect();
        present.iter().map(|s| s.f1).sum::<f64>() / present.len() as f64
    }

    /// Support-weighted mean F1.
    pub fn f1_weighted(&self) -> f64 {
        let total = self.total() as f64;
        TrendLabel::ALL
            .iter()
            .map(|&c| {
                let s = self.class_scores(c);
                s.f1 * s.support as f64 / total
            })
            .sum()
    }
}

pub fn f1_macro(truth: &[TrendLabel], pred: &[TrendLabel]) -> Result<f64> {
    Ok(ConfusionMatrix::from_labels(truth, pred)?.f1_macro())
}

pub fn f1_weighted(truth: &[TrendLabel], pred: &[TrendLabel]) -> Result<f64> {
    Ok(ConfusionMatrix::from_labels(truth, pred)?.f1_weighted())
}

/// Macro F1 of always predicting the most frequent class of `reference`.
pub fn majority_baseline_f1(reference: &[TrendLabel], truth: &[TrendLabel]) -> Result<f64> {
    let d = class_distribution(reference)?;
    let majority = TrendLabel::ALL
        .iter()
        .copied()
        .max_by(|a, b| d.fraction(*a).total_cmp(&d.fraction(*b)))
        .unwrap_or(TrendLabel::Stable);
    f1_macro(truth, &vec![majority; truth.len()])
}

/// One-vs-rest precision-recall points, recall ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub positive: TrendLabel,
    /// `(recall, precision)` pairs.
    pub points: Vec<(f64, f64)>,
    /// Truth held a single class, so the curve carries no ranking information.
    pub degenerate: bool,
}

/// Sweeps every distinct score as a threshold (predict positive when
/// `score >= threshold`) from the highest down, then prepends a recall-0
/// point carrying the precision at the highest threshold.
pub fn pr_curve(truth: &[TrendLabel], scores: &[f64], positive: TrendLabel) -> Result<PrCurve> {
    if truth.len() != scores.len() {
        return Err(Error::InvalidParameter(format!(
            "{} truth labels vs {} scores",
            truth.len(),
            scores.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Empty("pr_curve"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidParameter("NaN score".into()));
    }
    let classes: BTreeSet<TrendLabel> = truth.iter().copied().collect();
    let degenerate = classes.len() < 2;
    if degenerate {
        log::warn!("pr curve for {positive}: truth holds a single class");
    }
    let positives = truth.iter().filter(|&&t| t == positive).count() as u64;
    let mut order: Vec<usize> = (0..truth.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if truth[order[i]] == positive {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((ratio(tp, positives), ratio(tp, tp + fp)));
    }
    let top = points[0].1;
    points.insert(0, (0.0, top));
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(PrCurve { positive, points, degenerate })
}

/// Predictions and class probabilities of one model at one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCell {
    pub model: String,
    pub horizon: usize,
    pub theta: f64,
    pub truth: Vec<TrendLabel>,
    pub pred: Vec<TrendLabel>,
    /// Softmax probabilities per sample in label-index order.
    pub scores: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub model: String,
    pub horizon: usize,
    pub samples: usize,
    pub theta: f64,
    pub f1_macro: f64,
    pub f1_weighted: f64,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub truth_distribution: ClassDistribution,
    pub pr_curves: Vec<PrCurve>,
}

impl EvalCell {
    pub fn summarize(&self) -> Result<CellSummary> {
        let name = format!("model {} at h={}", self.model, self.horizon);
        if self.truth.is_empty() {
            return Err(Error::Format(format!("{name}: missing truth labels")));
        }
        if self.pred.len() != self.truth.len() {
            return Err(Error::Format(format!("{name}: missing predictions ({} of {})", self.pred.len(), self.truth.len())));
        }
        if self.scores.len() != self.truth.len() {
            return Err(Error::Format(format!("{name}: missing scores ({} of {})", self.scores.len(), self.truth.len())));
        }
        let confusion = ConfusionMatrix::from_labels(&self.truth, &self.pred)?;
        let pr_curves = TrendLabel::ALL
            .iter()
            .map(|&c| {
                let s: Vec<f64> = self.scores.iter().map(|p| p[c.index()]).collect();
                pr_curve(&self.truth, &s, c)
            })
            .collect::<Result<_>>()?;
        Ok(CellSummary {
            model: self.model.clone(),
            horizon: self.horizon,
            samples: self.truth.len(),
            theta: self.theta,
            f1_macro: confusion.f1_macro(),
            f1_weighted: confusion.f1_weighted(),
            accuracy: confusion.accuracy(),
            confusion,
            truth_distribution: class_distribution(&self.truth)?,
            pr_curves,
        })
    }
}

/// Writes the report files for `cells` into `dir`:
/// `f1_table.csv`, `confusion.csv`, `class_distribution.csv`,
/// `pr_h<h>_<class>.svg` (one polyline per model) and `summary.json`.
pub fn experiment_report(cells: &[EvalCell], dir: &Path) -> Result<Vec<CellSummary>> {
    if cells.is_empty() {
        return Err(Error::Format("experiment report: no evaluation cells".into()));
    }
    let summaries = cells.iter().map(EvalCell::summarize).collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(dir)?;

    let mut w = csv::Writer::from_path(dir.join("f1_table.csv"))?;
    w.write_record(["model", "horizon", "samples", "theta", "f1_macro", "f1_weighted", "accuracy"])?;
    for s in &summaries {
        w.write_record([
            s.model.clone(),
            s.horizon.to_string(),
            s.samples.to_string(),
            s.theta.to_string(),
            format!("{:.6}", s.f1_macro),
            format!("{:.6}", s.f1_weighted),
            format!("{:.6}", s.accuracy),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("confusion.csv"))?;
    w.write_record(["model", "horizon", "truth", "pred_D", "pred_S", "pred_U"])?;
    for s in &summaries {
        for t in TrendLabel::ALL {
            let row = s.confusion.counts[t.index()];
            w.write_record([
                s.model.clone(),
                s.horizon.to_string(),
                t.symbol().to_string(),
                row[0].to_string(),
                row[1].to_string(),
                row[2].to_string(),
            ])?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("class_distribution.csv"))?;
    w.write_record(["model", "horizon", "up", "stable", "down"])?;
    for s in &summaries {
        let d = s.truth_distribution;
        w.write_record([
            s.model.clone(),
            s.horizon.to_string(),
            format!("{:.6}", d.up),
            format!("{:.6}", d.stable),
            format!("{:.6}", d.down),
        ])?;
    }
    w.flush()?;

    let horizons: BTreeSet<usize> = summaries.iter().map(|s| s.horizon).collect();
    for h in horizons {
        for c in TrendLabel::ALL {
            let curves: Vec<(&str, &PrCurve)> = summaries
                .iter()
                .filter(|s| s.horizon == h)
                .map(|s| (s.model.as_str(), &s.pr_curves[c.index()]))
                .collect();
            let title = format!("precision-recall, class {c}, h={h}");
            fs::write(dir.join(format!("pr_h{h}_{}.svg", c.symbol())), pr_svg(&title, &curves))?;
        }
    }
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summaries)?)?;
    Ok(summaries)
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Precision-recall plot with one polyline per named curve.
pub fn pr_svg(title: &str, curves: &[(&str, &PrCurve)]) -> String {
    let (w, h, pad) = (480.0, 360.0, 40.0);
    let x = |r: f64| pad + r * (w - 2.0 * pad);
    let y = |p: f64| h - pad - p * (h - 2.0 * pad);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<path d="M{} {} L{} {} L{} {}" fill="none" stroke="black"/>"#,
        x(0.0),
        y(1.0),
        x(0.0),
        y(0.0),
        x(1.0),
        y(0.0)
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">recall</text>"#, w / 2.0, h - 8.0);
    let _ = writeln!(s, r#"<text x="12" y="{}" font-size="12" transform="rotate(-90 12 {})">precision</text>"#, h / 2.0, h / 2.0);
    for (i, (name, c)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = c.points.iter().map(|&(r, p)| format!("{:.2},{:.2}", x(r), y(p))).collect();
        let _ = writeln!(
            s,
            r#"<polyline data-model="{}" points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            escape(name),
            pts.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="11" fill="{color}">{}</text>"#,
            w - pad - 90.0,
            pad + 14.0 * i as f64,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
