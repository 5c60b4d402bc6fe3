//! Result rows and their CSV and Markdown renderings.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use tstbench::deformations::DeformKind;
use tstbench::scan::EpsilonBound;
use tstbench::statistics::MetricKind;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCells {
    pub alpha: f64,
    pub eps: f64,
    pub eps_low: f64,
    pub eps_up: f64,
    pub converged: bool,
    pub relaxed: bool,
    pub non_monotone: bool,
}

impl From<&EpsilonBound> for BoundCells {
    fn from(b: &EpsilonBound) -> Self {
        Self {
            alpha: b.alpha,
            eps: b.eps,
            eps_low: b.eps_low,
            eps_up: b.eps_up,
            converged: b.converged,
            relaxed: b.relaxed,
            non_monotone: b.non_monotone,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Done { bounds: Vec<BoundCells> },
    /// LLR on a deformation without a closed-form density.
    NotApplicable,
    Failed { error: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub model: String,
    pub deformation: DeformKind,
    pub metric: MetricKind,
    pub n: usize,
    pub outcome: Outcome,
    pub scan_seconds: Option<f64>,
    pub null_seconds: Option<f64>,
}

impl ResultRow {
    pub fn converged(&self) -> Option<bool> {
        match &self.outcome {
            Outcome::Done { bounds } => Some(bounds.iter().all(|b| b.converged)),
            Outcome::NotApplicable => None,
            Outcome::Failed { .. } => Some(false),
        }
    }

    fn status(&self) -> String {
        match &self.outcome {
            Outcome::Done { bounds } => {
                let mut flags = Vec::new();
                if bounds.iter().any(|b| !b.converged) {
                    flags.push("not_converged");
                }
                if bounds.iter().any(|b| b.relaxed) {
                    flags.push("relaxed");
                }
                if bounds.iter().any(|b| b.non_monotone) {
                    flags.push("non_monotone");
                }
                if flags.is_empty() {
                    "ok".into()
                } else {
                    flags.join(";")
                }
            }
            Outcome::NotApplicable => "not_applicable".into(),
            Outcome::Failed { error } => format!("failed: {error}"),
        }
    }
}

/// `95` for α = 0.05, `99.9` for α = 0.001.
pub fn cl_label(alpha: f64) -> String {
    let cl = ((1.0 - alpha) * 100.0 * 1e6).round() / 1e6;
    format!("{cl}")
}

/// The results table. Holds no timings, so it is a pure function of the
/// configuration.
pub fn results_csv(rows: &[ResultRow], alphas: &[f64]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["model", "deformation", "metric", "n"].map(String::from).to_vec();
    for a in alphas {
        let cl = cl_label(*a);
        header.extend([format!("eps{cl}"), format!("eps{cl}_low"), format!("eps{cl}_up")]);
    }
    header.extend(["converged".to_string(), "status".to_string()]);
    w.write_record(&header).expect("in-memory write");
    for r in rows {
        let mut rec = vec![r.model.clone(), r.deformation.name().into(), r.metric.name().into(), r.n.to_string()];
        for a in alphas {
            let b = match &r.outcome {
                Outcome::Done { bounds } => bounds.iter().find(|b| b.alpha == *a),
                _ => None,
            };
            match b {
                Some(b) => rec.extend([b.eps.to_string(), b.eps_low.to_string(), b.eps_up.to_string()]),
                None => rec.extend(["-".to_string(), "-".to_string(), "-".to_string()]),
            }
        }
        rec.push(r.converged().map_or("-".into(), |c| c.to_string()));
        rec.push(r.status());
        w.write_record(&rec).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn opt_seconds(s: Option<f64>) -> String {
    s.map_or(String::new(), |v| format!("{v:.3}"))
}

pub fn timings_csv(rows: &[ResultRow]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model", "deformation", "metric", "n", "scan_seconds", "null_seconds"])
        .expect("in-memory write");
    for r in rows {
        w.write_record([
            r.model.clone(),
            r.deformation.name().into(),
            r.metric.name().into(),
            r.n.to_string(),
            opt_seconds(r.scan_seconds),
            opt_seconds(r.null_seconds),
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// `x` rounded to `digits` significant digits.
pub fn sig(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i64;
    let decimals = (digits as i64 - 1 - mag).max(0) as usize;
    format!("{x:.decimals$}")
}

fn cell(b: &BoundCells) -> String {
    let mark = if b.converged { "" } else { "*" };
    format!(
        "{}{mark} (−{}, +{})",
        sig(b.eps, 4),
        sig((b.eps - b.eps_low).max(0.0), 2),
        sig((b.eps_up - b.eps).max(0.0), 2)
    )
}

/// One table per (n, deformation), statistics as rows, in the layout of the
/// usual ε-bound tables. Timings are included here but not in the CSV.
pub fn results_markdown(rows: &[ResultRow], alphas: &[f64], title: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {title}\n");
    let mut sizes: Vec<usize> = rows.iter().map(|r| r.n).collect();
    sizes.sort_unstable();
    sizes.dedup();
    for n in sizes {
        let at_n: Vec<&ResultRow> = rows.iter().filter(|r| r.n == n).collect();
        let mut deforms: Vec<DeformKind> = Vec::new();
        for r in &at_n {
            if !deforms.contains(&r.deformation) {
                deforms.push(r.deformation);
            }
        }
        let _ = writeln!(out, "## {}, n = m = {n}\n", at_n[0].model);
        for d in deforms {
            let _ = writeln!(out, "### {}-deformation\n", d.table_label());
            let mut head = "| Statistic |".to_string();
            let mut rule = "|---|".to_string();
            for a in alphas {
                let _ = write!(head, " ε {}% CL |", cl_label(*a));
                rule.push_str("---|");
            }
            head.push_str(" t (s) |");
            rule.push_str("---:|");
            let _ = writeln!(out, "{head}\n{rule}");
            for r in at_n.iter().filter(|r| r.deformation == d) {
                let mut line = format!("| {} |", r.metric);
                for a in alphas {
                    let text = match &r.outcome {
                        Outcome::Done { bounds } => bounds.iter().find(|b| b.alpha == *a).map_or("-".into(), cell),
                        Outcome::NotApplicable => "-".into(),
                        Outcome::Failed { .. } => "error".into(),
                    };
                    let _ = write!(line, " {text} |");
                }
                let t = match r.outcome {
                    Outcome::NotApplicable => "-".into(),
                    _ => r.scan_seconds.map_or("-".into(), |s| format!("{s:.0}")),
                };
                let _ = writeln!(out, "{line} {t} |");
            }
            out.push('\n');
        }
        let _ = writeln!(out, "### Null timing\n\n| Statistic | t null (s) |\n|---|---:|");
        let mut seen = Vec::new();
        for r in &at_n {
            if seen.contains(&r.metric) {
                continue;
            }
            seen.push(r.metric);
            let t = r.null_seconds.map_or("-".into(), |s| format!("{s:.0}"));
            let _ = writeln!(out, "| {} | {t} |", r.metric);
        }
        out.push('\n');
    }
    if rows.iter().any(|r| r.converged() == Some(false)) {
        out.push_str("`*` not converged; `error` rows are listed in results.csv.\n");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bound(alpha: f64, eps: f64) -> BoundCells {
        BoundCells {
            alpha,
            eps,
            eps_low: eps * 0.5,
            eps_up: eps * 1.5,
            converged: true,
            relaxed: false,
            non_monotone: false,
        }
    }

    fn rows() -> Vec<ResultRow> {
        vec![
            ResultRow {
                model: "CG-d5".into(),
                deformation: DeformKind::SigmaOffDiag,
                metric: MetricKind::SW,
                n: 100,
                outcome: Outcome::Done { bounds: vec![bound(0.05, 0.1), bound(0.01, 0.2)] },
                scan_seconds: Some(1.5),
                null_seconds: Some(0.25),
            },
            ResultRow {
                model: "CG-d5".into(),
                deformation: DeformKind::SigmaOffDiag,
                metric: MetricKind::LLR,
                n: 100,
                outcome: Outcome::NotApplicable,
                scan_seconds: None,
                null_seconds: None,
            },
        ]
    }

    #[test]
    fn cl_labels() {
        assert_eq!(cl_label(0.05), "95");
        assert_eq!(cl_label(0.01), "99");
        assert_eq!(cl_label(0.32), "68");
        assert_eq!(cl_label(0.001), "99.9");
    }

    #[test]
    fn csv_layout() {
        let text = String::from_utf8(results_csv(&rows(), &[0.05, 0.01])).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "model,deformation,metric,n,eps95,eps95_low,eps95_up,eps99,eps99_low,eps99_up,converged,status"
        );
        assert_eq!(lines[1], "CG-d5,SigmaOffDiag,SW,100,0.1,0.05,0.15000000000000002,0.2,0.1,0.30000000000000004,true,ok");
        assert_eq!(lines[2], "CG-d5,SigmaOffDiag,LLR,100,-,-,-,-,-,-,-,not_applicable");
        assert!(!text.contains("1.5"));
    }

    #[test]
    fn markdown_marks_llr_as_dash() {
        let md = results_markdown(&rows(), &[0.05, 0.01], "t");
        assert!(md.contains("| LLR | - | - | - |"));
        assert!(md.contains("| SW | 0.1000 (−0.050, +0.050) | 0.2000 (−0.10, +0.10) | 2 |"));
    }

    #[test]
    fn significant_digits() {
        assert_eq!(sig(0.049481, 4), "0.04948");
        assert_eq!(sig(1.00146, 4), "1.001");
        assert_eq!(sig(0.000021, 2), "0.000021");
        assert_eq!(sig(123.4, 2), "123");
    }
}
