//! Text renderings of fits and archives.

use std::fmt::Write as _;

use crate::estimator::{FitResult, ObjectiveKind};
use crate::search::ArchiveMember;
use crate::spec::SearchSpace;

/// Placeholder for unavailable statistics.
pub const MISSING: &str = "\u{2014}";

fn cell(v: Option<f64>, digits: usize) -> String {
    match v {
        Some(v) if v.is_finite() => format!("{v:.digits$}"),
        _ => MISSING.to_string(),
    }
}

fn pad(s: &str, width: usize) -> String {
    let n = s.chars().count();
    if n >= width {
        s.to_string()
    } else {
        format!("{s}{}", " ".repeat(width - n))
    }
}

/// Coefficient table with header lines for log-likelihood and criteria.
pub fn render_fit_table(fit: &FitResult) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Model: {}", fit.spec.dispersion.name());
    let _ = writeln!(out, "Number of observations: {}", fit.n_obs);
    let _ = writeln!(out, "Log-Likelihood: {}", cell(Some(fit.loglik), 3));
    let c = fit.criteria();
    let _ = writeln!(out, "bic: {}", cell(Some(c.bic), 2));
    let _ = writeln!(out, "aic: {}", cell(Some(c.aic), 2));
    let _ = writeln!(out, "Converged: {}", fit.converged);
    if let Some(m) = &fit.message {
        let _ = writeln!(out, "Note: {m}");
    }
    let header = ["Effect", "\u{3c4}", "Coeff", "Std. Err", "z-values", "Prob |z|>Z", ""];
    let mut rows: Vec<[String; 7]> = vec![header.map(String::from)];
    for r in &fit.rows {
        rows.push([
            r.name.clone(),
            r.transformation.map(|t| t.code().to_string()).unwrap_or_default(),
            cell(Some(r.estimate), 4),
            cell(r.std_err, 4),
            cell(r.z, 2),
            cell(r.p, 3),
            r.stars().to_string(),
        ]);
    }
    let widths: Vec<usize> = (0..7)
        .map(|j| rows.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
        .collect();
    let rule = "=".repeat(widths.iter().sum::<usize>() + 2 * 6);
    let _ = writeln!(out, "{rule}");
    for (i, r) in rows.iter().enumerate() {
        let line: Vec<String> = r.iter().zip(&widths).map(|(s, &w)| pad(s, w)).collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
        if i == 0 {
            let _ = writeln!(out, "{}", "-".repeat(rule.len()));
        }
    }
    let _ = writeln!(out, "{rule}");
    let _ = writeln!(out, "Significance: *** 0.001  ** 0.01  * 0.05  . 0.1");
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn num(v: Option<f64>) -> String {
    match v {
        Some(v) if v.is_finite() => format!("{v}"),
        _ => String::new(),
    }
}

/// Archive as CSV: one row per member, ordered by the first objective.
pub fn archive_csv(members: &[ArchiveMember], space: &SearchSpace, first: ObjectiveKind, second: Option<ObjectiveKind>) -> String {
    let names = space.factor_names();
    let mut out = String::new();
    let mut header = vec!["rank".to_string(), "encoding".into(), "model".into(), format!("objective_1_{}", first.name())];
    if let Some(k) = second {
        header.push(format!("objective_2_{}", k.name()));
    }
    header.extend(["loglik", "bic", "aic", "hqic", "caic", "aicc", "mspe"].map(String::from));
    let _ = writeln!(out, "{}", header.join(","));
    for (i, m) in members.iter().enumerate() {
        let encoding = space
            .encode(&m.spec)
            .map(|e| e.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("."))
            .unwrap_or_default();
        let c = m.values.criteria;
        let mut row = vec![
            (i + 1).to_string(),
            encoding,
            csv_field(&m.spec.describe(&names)),
            num(Some(m.point[0])),
        ];
        if second.is_some() {
            row.push(num(Some(m.point[1])));
        }
        row.extend([
            num(Some(m.values.loglik)),
            num(Some(c.bic)),
            num(Some(c.aic)),
            num(Some(c.hqic)),
            num(Some(c.caic)),
            num(c.aicc),
            num(m.values.mspe),
        ]);
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

/// Two-column front data for plotting.
pub fn front_data(members: &[ArchiveMember], first: ObjectiveKind, second: Option<ObjectiveKind>) -> String {
    let mut out = format!("{},{}\n", first.name(), second.map_or("none", |k| k.name()));
    for m in members {
        let _ = writeln!(out, "{},{}", m.point[0], m.point[1]);
    }
    out
}

/// Scatter of all evaluated points (grey) with the front on top (black, joined).
pub fn front_svg(evaluated: &[[f64; 2]], front: &[[f64; 2]], x_label: &str, y_label: &str) -> String {
    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const M: f64 = 60.0;
    let pts: Vec<[f64; 2]> = evaluated
        .iter()
        .chain(front)
        .copied()
        .filter(|p| p[0].is_finite() && p[1].is_finite())
        .collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in &pts {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    if pts.is_empty() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
    let sy = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);
    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<path d="M{M} {M} V{} H{}" fill="none" stroke="black"/>"#,
        H - M,
        W - M
    );
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">{x_label}</text>"#, W / 2.0, H - 15.0);
    let _ = writeln!(
        out,
        r#"<text x="18" y="{}" text-anchor="middle" font-size="14" transform="rotate(-90 18 {})">{y_label}</text>"#,
        H / 2.0,
        H / 2.0
    );
    for (v, x, y, anchor) in [
        (x0, sx(x0), H - M + 18.0, "start"),
        (x1, sx(x1), H - M + 18.0, "end"),
    ] {
        let _ = writeln!(out, r#"<text x="{x:.1}" y="{y:.1}" font-size="11" text-anchor="{anchor}">{v:.4}</text>"#);
    }
    for (v, y) in [(y0, sy(y0)), (y1, sy(y1))] {
        let _ = writeln!(out, r#"<text x="{:.1}" y="{y:.1}" font-size="11" text-anchor="end">{v:.4}</text>"#, M - 4.0);
    }
    for p in evaluated.iter().filter(|p| p[0].is_finite() && p[1].is_finite()) {
        let _ = writeln!(out, r##"<circle cx="{:.1}" cy="{:.1}" r="3" fill="#bbbbbb"/>"##, sx(p[0]), sy(p[1]));
    }
    let mut sorted: Vec<[f64; 2]> = front.to_vec();
    sorted.sort_by(|a, b| a[0].total_cmp(&b[0]));
    if sorted.len() > 1 {
        let d: Vec<String> = sorted.iter().map(|p| format!("{:.1},{:.1}", sx(p[0]), sy(p[1]))).collect();
        let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="black"/>"#, d.join(" "));
    }
    for p in &sorted {
        let _ = writeln!(out, r#"<circle cx="{:.1}" cy="{:.1}" r="4" fill="black"/>"#, sx(p[0]), sy(p[1]));
    }
    out.push_str("</svg>\n");
    out
}
