use std::fmt::Write;

use seqtube::metrics::NOT_DETECTED;
use seqtube::MetricsReport;

/// Classification table in the familiar precision/recall/f1/support layout.
pub fn classification_table(r: &MetricsReport) -> String {
    let width = r
        .per_class
        .iter()
        .map(|c| c.label.len())
        .chain([NOT_DETECTED.len(), "weighted avg".len()])
        .max()
        .unwrap_or(12);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>width$} {:>9} {:>9} {:>9} {:>9}",
        "", "precision", "recall", "f1-score", "support"
    );
    let _ = writeln!(s);
    for c in &r.per_class {
        let _ = writeln!(
            s,
            "{:>width$} {:>9.2} {:>9.2} {:>9.2} {:>9}",
            c.label, c.precision, c.recall, c.f1, c.support
        );
    }
    let nd = r.confusion.n_classes();
    if r.confusion.counts.iter().any(|row| row[nd] > 0) {
        let _ = writeln!(
            s,
            "{:>width$} {:>9.2} {:>9.2} {:>9.2} {:>9}",
            NOT_DETECTED, 0.0, 0.0, 0.0, 0
        );
    }
    let _ = writeln!(s);
    let total = r.weighted_avg.support;
    match r.accuracy {
        Some(a) => {
            let _ = writeln!(s, "{:>width$} {:>9} {:>9} {:>9.2} {:>9}", "accuracy", "", "", a, total);
        }
        None => {
            let _ = writeln!(s, "{:>width$} {:>9} {:>9} {:>9} {:>9}", "accuracy", "", "", "-", total);
        }
    }
    for (name, row) in [("macro avg", &r.macro_avg), ("weighted avg", &r.weighted_avg)] {
        let _ = writeln!(
            s,
            "{:>width$} {:>9.2} {:>9.2} {:>9.2} {:>9}",
            name, row.precision, row.recall, row.f1, total
        );
    }
    s
}

pub fn summary_line(r: &MetricsReport) -> String {
    let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
    format!(
        "threshold {:.2}: P_d {} D_FA {:.6} /m^2 P_c {}",
        r.threshold,
        opt(r.p_d),
        r.d_fa,
        opt(r.p_c)
    )
}
