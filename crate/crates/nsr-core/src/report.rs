//! Evaluation metrics, robustness curves, the gradient-alignment
//! diagnostic, and CSV/SVG report emission.

use crate::attacks::{pgd_attack, spsa_attack, AttackConfig, SpsaConfig};
use crate::data::{HeartbeatSet, CLASS_COUNT, CLASS_NAMES};
use crate::error::{NsrError, Result};
use crate::losses::argmax;
use crate::nn::{effective_weight_for_labels, forward, Model};
use crate::rng::RandStream;
use crate::tensor::{dot, norm_l2_sq};
use std::fmt::Write as _;
use std::path::Path;

/// Batch size for evaluation-only forwards; bounds peak memory.
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    /// Macro-averaged precision; classes the model never predicts
    /// contribute a precision of zero.
    pub macro_precision: f64,
    pub confusion: [[usize; CLASS_COUNT]; CLASS_COUNT],
}

pub fn metrics_from_predictions(predicted: &[usize], labels: &[usize]) -> Result<Metrics> {
    if predicted.len() != labels.len() || labels.is_empty() {
        return Err(NsrError::Argument(format!(
            "prediction/label count mismatch or empty: {} vs {}",
            predicted.len(),
            labels.len()
        )));
    }
    let mut confusion = [[0usize; CLASS_COUNT]; CLASS_COUNT];
    let mut correct = 0;
    for (&p, &y) in predicted.iter().zip(labels) {
        if p >= CLASS_COUNT || y >= CLASS_COUNT {
            return Err(NsrError::Argument(format!("class index out of range: pred {p}, label {y}")));
        }
        confusion[y][p] += 1;
        if p == y {
            correct += 1;
        }
    }
    let accuracy = correct as f64 / labels.len() as f64;
    let mut precision_sum = 0.0;
    for c in 0..CLASS_COUNT {
        let predicted_c: usize = (0..CLASS_COUNT).map(|y| confusion[y][c]).sum();
        if predicted_c > 0 {
            precision_sum += confusion[c][c] as f64 / predicted_c as f64;
        }
    }
    Ok(Metrics { accuracy, macro_precision: precision_sum / CLASS_COUNT as f64, confusion })
}

/// Argmax predictions over a set, evaluated in fixed-size chunks.
pub fn predict(model: &Model, set: &HeartbeatSet) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(set.len());
    let mut i = 0;
    while i < set.len() {
        let hi = (i + EVAL_CHUNK).min(set.len());
        let idx: Vec<usize> = (i..hi).collect();
        let chunk = set.subset(&idx, "eval-chunk")?;
        let x = chunk.signals.clone().with_dtype(model.dtype);
        let trace = forward(model, &x)?;
        let logits = trace.logits();
        for n in 0..logits.shape()[0] {
            out.push(argmax(logits.row(n)));
        }
        i = hi;
    }
    Ok(out)
}

pub fn evaluate_clean(model: &Model, set: &HeartbeatSet) -> Result<Metrics> {
    metrics_from_predictions(&predict(model, set)?, &set.labels)
}

#[derive(Debug, Clone)]
pub enum AttackSpec {
    Pgd { steps: usize },
    Spsa { iterations: usize, pairs: usize },
}

impl AttackSpec {
    pub fn name(&self) -> String {
        match self {
            AttackSpec::Pgd { steps } => format!("pgd{steps}"),
            AttackSpec::Spsa { .. } => "spsa".to_string(),
        }
    }
}

/// Accuracy under attack at each budget in `eps`; a budget of 0 is the
/// clean accuracy.
#[derive(Debug, Clone)]
pub struct RobustnessReport {
    pub arch: String,
    pub method: String,
    pub attack: String,
    pub eps: Vec<f64>,
    pub accuracy: Vec<f64>,
}

impl RobustnessReport {
    pub fn file_stem(&self) -> String {
        format!("{}_{}_{}", self.arch, self.method, self.attack)
    }

    pub fn accuracy_at(&self, eps: f64) -> Option<f64> {
        self.eps
            .iter()
            .position(|&e| (e - eps).abs() < 1e-12)
            .map(|i| self.accuracy[i])
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("eps,accuracy\n");
        for (e, a) in self.eps.iter().zip(&self.accuracy) {
            writeln!(s, "{e},{a}").unwrap();
        }
        s
    }
}

fn attacked_predictions(
    model: &Model,
    set: &HeartbeatSet,
    eps: f64,
    spec: &AttackSpec,
    rng: &mut RandStream,
) -> Result<Vec<usize>> {
    if eps == 0.0 {
        return predict(model, set);
    }
    let mut out = Vec::with_capacity(set.len());
    let mut i = 0;
    while i < set.len() {
        let hi = (i + EVAL_CHUNK).min(set.len());
        let idx: Vec<usize> = (i..hi).collect();
        let chunk = set.subset(&idx, "attack-chunk")?;
        let x = chunk.signals.clone().with_dtype(model.dtype);
        let adv = match spec {
            AttackSpec::Pgd { steps } => {
                let cfg = AttackConfig::pgd(eps, *steps);
                pgd_attack(model, &x, &chunk.labels, &cfg, rng)?
            }
            AttackSpec::Spsa { iterations, pairs } => {
                let cfg = SpsaConfig {
                    iterations: *iterations,
                    pairs: *pairs,
                    ..SpsaConfig::paper(eps)
                };
                spsa_attack(model, &x, &chunk.labels, &cfg, rng)?
            }
        };
        let trace = forward(model, &adv)?;
        let logits = trace.logits();
        for n in 0..logits.shape()[0] {
            out.push(argmax(logits.row(n)));
        }
        i = hi;
    }
    Ok(out)
}

pub fn robustness_curve(
    model: &Model,
    set: &HeartbeatSet,
    arch: &str,
    method: &str,
    eps_list: &[f64],
    spec: &AttackSpec,
    seed: u64,
) -> Result<RobustnessReport> {
    for &e in eps_list {
        if !(0.0..=1.0).contains(&e) {
            return Err(NsrError::Argument(format!("attack budget {e} outside [0, 1]")));
        }
    }
    let mut eps = eps_list.to_vec();
    if !eps.contains(&0.0) {
        eps.insert(0, 0.0);
    }
    let mut accuracy = Vec::with_capacity(eps.len());
    for (i, &e) in eps.iter().enumerate() {
        let mut rng = RandStream::new(seed, 0xA7_7AC4).child(i as u64);
        let preds = attacked_predictions(model, set, e, spec, &mut rng)?;
        accuracy.push(metrics_from_predictions(&preds, &set.labels)?.accuracy);
    }
    Ok(RobustnessReport {
        arch: arch.to_string(),
        method: method.to_string(),
        attack: spec.name(),
        eps,
        accuracy,
    })
}

/// Mean cosine between the effective class-`y` weight row and the input,
/// over correctly classified samples.
#[derive(Debug, Clone)]
pub struct AlignmentDiagnostic {
    pub per_class: [f64; CLASS_COUNT],
    pub per_class_count: [usize; CLASS_COUNT],
    pub overall: f64,
    /// Samples skipped because either vector had (near-)zero norm.
    pub skipped: usize,
}

pub fn alignment_diagnostic(model: &Model, set: &HeartbeatSet) -> Result<AlignmentDiagnostic> {
    let mut sums = [0.0; CLASS_COUNT];
    let mut counts = [0usize; CLASS_COUNT];
    let mut skipped = 0;
    let mut i = 0;
    while i < set.len() {
        let hi = (i + EVAL_CHUNK).min(set.len());
        let idx: Vec<usize> = (i..hi).collect();
        let chunk = set.subset(&idx, "align-chunk")?;
        let x = chunk.signals.clone().with_dtype(model.dtype);
        let trace = forward(model, &x)?;
        let logits = trace.logits();
        let wy = effective_weight_for_labels(model, &trace.masks, &chunk.labels)?;
        for n in 0..chunk.len() {
            let y = chunk.labels[n];
            if argmax(logits.row(n)) != y {
                continue;
            }
            let w = wy.row(n);
            let xin = x.row(n);
            let wn = norm_l2_sq(w).sqrt();
            let xn = norm_l2_sq(xin).sqrt();
            if wn < 1e-12 || xn < 1e-12 {
                skipped += 1;
                continue;
            }
            sums[y] += dot(w, xin) / (wn * xn);
            counts[y] += 1;
        }
        i = hi;
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(NsrError::Argument("no correctly classified samples to align".into()));
    }
    let mut per_class = [f64::NAN; CLASS_COUNT];
    for c in 0..CLASS_COUNT {
        if counts[c] > 0 {
            per_class[c] = sums[c] / counts[c] as f64;
        }
    }
    let overall = sums.iter().sum::<f64>() / total as f64;
    Ok(AlignmentDiagnostic { per_class, per_class_count: counts, overall, skipped })
}

pub fn alignment_csv(tag: &str, diag: &AlignmentDiagnostic) -> String {
    let mut s = String::from("method,class,cosine,count\n");
    for c in 0..CLASS_COUNT {
        writeln!(s, "{tag},{},{},{}", CLASS_NAMES[c], diag.per_class[c], diag.per_class_count[c])
            .unwrap();
    }
    writeln!(s, "{tag},overall,{},{}", diag.overall, diag.per_class_count.iter().sum::<usize>())
        .unwrap();
    s
}

/// Side-by-side accuracy table: one row per budget, one column per method.
pub fn comparison_csv(reports: &[&RobustnessReport]) -> Result<String> {
    let first = reports.first().ok_or_else(|| NsrError::Argument("no reports".into()))?;
    for r in reports {
        if r.eps != first.eps {
            return Err(NsrError::Argument(format!(
                "budget grids differ between {} and {}",
                first.file_stem(),
                r.file_stem()
            )));
        }
    }
    let mut s = String::from("eps");
    for r in reports {
        write!(s, ",{}", r.method).unwrap();
    }
    s.push('\n');
    for (i, e) in first.eps.iter().enumerate() {
        write!(s, "{e}").unwrap();
        for r in reports {
            write!(s, ",{}", r.accuracy[i]).unwrap();
        }
        s.push('\n');
    }
    Ok(s)
}

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 420.0;
const MARGIN: f64 = 50.0;
const PALETTE: [&str; 8] =
    ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"];

fn svg_header(title: &str) -> String {
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{SVG_W}\" height=\"{SVG_H}\" viewBox=\"0 0 {SVG_W} {SVG_H}\">\n"
    );
    writeln!(s, "<rect width=\"{SVG_W}\" height=\"{SVG_H}\" fill=\"white\"/>").unwrap();
    writeln!(
        s,
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">{title}</text>",
        SVG_W / 2.0
    )
    .unwrap();
    s
}

/// Accuracy-vs-budget line chart for one or more curves sharing a grid.
pub fn curves_svg(title: &str, reports: &[&RobustnessReport]) -> Result<String> {
    let first = reports.first().ok_or_else(|| NsrError::Argument("no reports".into()))?;
    let xmax = first.eps.iter().cloned().fold(0.0, f64::max).max(1e-9);
    let plot_w = SVG_W - 2.0 * MARGIN;
    let plot_h = SVG_H - 2.0 * MARGIN;
    let px = |e: f64| MARGIN + e / xmax * plot_w;
    let py = |a: f64| SVG_H - MARGIN - a * plot_h;
    let mut s = svg_header(title);
    // axes and gridlines
    writeln!(
        s,
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n<line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>",
        m = MARGIN,
        b = SVG_H - MARGIN,
        r = SVG_W - MARGIN,
        t = MARGIN
    )
    .unwrap();
    for tick in 0..=5 {
        let a = tick as f64 / 5.0;
        writeln!(
            s,
            "<line x1=\"{m}\" y1=\"{y}\" x2=\"{r}\" y2=\"{y}\" stroke=\"#dddddd\"/>\n<text x=\"{tx}\" y=\"{ty}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{a:.1}</text>",
            m = MARGIN,
            r = SVG_W - MARGIN,
            y = py(a),
            tx = MARGIN - 6.0,
            ty = py(a) + 4.0
        )
        .unwrap();
    }
    for &e in &first.eps {
        writeln!(
            s,
            "<text x=\"{x}\" y=\"{y}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{e}</text>",
            x = px(e),
            y = SVG_H - MARGIN + 16.0
        )
        .unwrap();
    }
    for (k, r) in reports.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = r
            .eps
            .iter()
            .zip(&r.accuracy)
            .map(|(&e, &a)| format!("{:.2},{:.2}", px(e), py(a)))
            .collect();
        writeln!(
            s,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
            pts.join(" ")
        )
        .unwrap();
        for (&e, &a) in r.eps.iter().zip(&r.accuracy) {
            writeln!(s, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>", px(e), py(a))
                .unwrap();
        }
        writeln!(
            s,
            "<text x=\"{x}\" y=\"{y}\" font-family=\"sans-serif\" font-size=\"12\" fill=\"{color}\">{}</text>",
            r.method,
            x = SVG_W - MARGIN + 4.0 - 110.0,
            y = MARGIN + 16.0 * (k as f64 + 1.0)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Waveform panel: a clean trace and its perturbed counterpart overlaid.
pub fn waveform_svg(title: &str, clean: &[f64], adv: &[f64]) -> String {
    let n = clean.len().max(1);
    let plot_w = SVG_W - 2.0 * MARGIN;
    let plot_h = SVG_H - 2.0 * MARGIN;
    let px = |i: usize| MARGIN + i as f64 / (n - 1).max(1) as f64 * plot_w;
    let py = |v: f64| SVG_H - MARGIN - v.clamp(0.0, 1.0) * plot_h;
    let mut s = svg_header(title);
    for (trace, color, label, dy) in
        [(clean, PALETTE[0], "clean", 0.0), (adv, PALETTE[1], "perturbed", 16.0)]
    {
        let pts: Vec<String> = trace
            .iter()
            .enumerate()
            .map(|(i, &v)| format!("{:.2},{:.2}", px(i), py(v)))
            .collect();
        writeln!(
            s,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
            pts.join(" ")
        )
        .unwrap();
        writeln!(
            s,
            "<text x=\"{x}\" y=\"{y}\" font-family=\"sans-serif\" font-size=\"12\" fill=\"{color}\">{label}</text>",
            x = SVG_W - MARGIN - 90.0,
            y = MARGIN + 16.0 + dy
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

fn write_file(dir: &Path, name: &str, content: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, content).map_err(|e| NsrError::io(path.display().to_string(), e))
}

/// Write per-curve CSV + SVG files plus a side-by-side comparison table.
pub fn emit_report(dir: impl AsRef<Path>, reports: &[&RobustnessReport]) -> Result<Vec<String>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| NsrError::io(dir.display().to_string(), e))?;
    let mut written = Vec::new();
    for r in reports {
        let stem = r.file_stem();
        write_file(dir, &format!("{stem}.csv"), &r.to_csv())?;
        write_file(
            dir,
            &format!("{stem}.svg"),
            &curves_svg(&format!("{} / {} under {}", r.arch, r.method, r.attack), &[r])?,
        )?;
        written.push(format!("{stem}.csv"));
        written.push(format!("{stem}.svg"));
    }
    if reports.len() > 1 {
        let attack = &reports[0].attack;
        let arch = &reports[0].arch;
        write_file(dir, &format!("{arch}_comparison_{attack}.csv"), &comparison_csv(reports)?)?;
        write_file(
            dir,
            &format!("{arch}_comparison_{attack}.svg"),
            &curves_svg(&format!("{arch} robustness under {attack}"), reports)?,
        )?;
        written.push(format!("{arch}_comparison_{attack}.csv"));
        written.push(format!("{arch}_comparison_{attack}.svg"));
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_hand_check() {
        // 3 of 4 correct; class 1 predicted twice with one hit
        let m = metrics_from_predictions(&[0, 1, 1, 3], &[0, 1, 2, 3]).unwrap();
        assert!((m.accuracy - 0.75).abs() < 1e-12);
        // precisions: class0 1.0, class1 0.5, class2 unpredicted (0), class3 1.0, class4 0
        assert!((m.macro_precision - (1.0 + 0.5 + 1.0) / 5.0).abs() < 1e-12);
        assert_eq!(m.confusion[2][1], 1);
    }

    #[test]
    fn zero_prediction_class_counts_as_zero_precision() {
        let m = metrics_from_predictions(&[0, 0, 0, 0, 0], &[0, 1, 2, 3, 4]).unwrap();
        assert!((m.macro_precision - (1.0 / 5.0) / 5.0).abs() < 1e-12);
    }

    #[test]
    fn comparison_requires_matching_grids() {
        let a = RobustnessReport {
            arch: "mlp".into(),
            method: "ce".into(),
            attack: "pgd20".into(),
            eps: vec![0.0, 0.1],
            accuracy: vec![0.9, 0.2],
        };
        let mut b = a.clone();
        b.method = "loss2".into();
        b.eps = vec![0.0, 0.2];
        assert!(comparison_csv(&[&a, &b]).is_err());
        b.eps = vec![0.0, 0.1];
        let csv = comparison_csv(&[&a, &b]).unwrap();
        assert!(csv.starts_with("eps,ce,loss2\n"), "{csv}");
    }

    #[test]
    fn report_files_use_expected_names() {
        let dir = tempfile::tempdir().unwrap();
        let r = RobustnessReport {
            arch: "mlp".into(),
            method: "loss2".into(),
            attack: "pgd100".into(),
            eps: vec![0.0, 0.1],
            accuracy: vec![0.9, 0.6],
        };
        let written = emit_report(dir.path(), &[&r]).unwrap();
        assert!(written.contains(&"mlp_loss2_pgd100.csv".to_string()));
        assert!(dir.path().join("mlp_loss2_pgd100.svg").exists());
        let svg = std::fs::read_to_string(dir.path().join("mlp_loss2_pgd100.svg")).unwrap();
        assert!(svg.contains("<polyline"));
        assert!(svg.contains("version=\"1.1\""));
    }

    #[test]
    fn curve_inserts_zero_anchor() {
        // purely structural: a model-free check of grid handling is done by
        // robustness_curve on a tiny model in the trainer tests; here assert
        // the CSV round-trips the grid
        let r = RobustnessReport {
            arch: "mlp".into(),
            method: "ce".into(),
            attack: "pgd20".into(),
            eps: vec![0.0, 0.05],
            accuracy: vec![1.0, 0.5],
        };
        assert_eq!(r.accuracy_at(0.05), Some(0.5));
        assert_eq!(r.accuracy_at(0.3), None);
        assert!(r.to_csv().lines().count() == 3);
    }
}
