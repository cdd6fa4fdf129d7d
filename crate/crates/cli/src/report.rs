//! Summary table, per-task accuracy curves and a static plot from a run log.

use std::fmt::Write;

use cl2gen_core::metrics::MetricStat;
use cl2gen_core::trainer::RunLog;

fn cell(m: &MetricStat, digits: usize) -> String {
    format!("{:.*} ± {:.*}", digits, m.mean, digits, m.ci95)
}

/// One row per completed task.
pub fn summary_table(log: &RunLog) -> String {
    let header = ["task", "seen", "accuracy", "fid", "diversity", "multimodality"];
    let rows: Vec<[String; 6]> = log
        .tasks
        .iter()
        .map(|t| {
            let r = &t.report;
            [
                (t.task + 1).to_string(),
                t.seen_classes.len().to_string(),
                cell(&r.accuracy, 3),
                cell(&r.fid, 3),
                cell(&r.diversity, 3),
                cell(&r.multimodality, 3),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for r in &rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c:<w$}", w = w))
            .collect();
        padded.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(&header.map(String::from));
    out += &line(&widths.map(|w| "-".repeat(w)));
    for r in &rows {
        out += &line(r);
    }
    if let Some(t) = log.tasks.last() {
        if t.report.ci_degenerate {
            out += "note: one evaluation repetition, intervals reported as 0\n";
        }
    }
    out
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Rows are tasks, columns are classes.
pub fn accuracy_csv(log: &RunLog) -> String {
    let mut out = String::from("task");
    for name in &log.class_names {
        out.push(',');
        out.push_str(&csv_field(name));
    }
    out.push('\n');
    for (k, row) in log.accuracy_matrix.iter().enumerate() {
        out.push_str(&(k + 1).to_string());
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

/// Accuracy of every class after each task as an SVG line chart.
pub fn accuracy_svg(log: &RunLog) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (60.0, 160.0, 20.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let tasks = log.accuracy_matrix.len().max(1);
    let x = |k: usize| {
        if tasks == 1 {
            left + pw / 2.0
        } else {
            left + pw * k as f64 / (tasks - 1) as f64
        }
    };
    let y = |v: f64| top + ph * (1.0 - v.clamp(0.0, 1.0));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    for i in 0..=4 {
        let v = i as f64 / 4.0;
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{yy}" x2="{x2}" y2="{yy}" stroke="#ddd"/><text x="{tx}" y="{ty}" text-anchor="end">{v:.2}</text>"##,
            yy = y(v),
            x2 = left + pw,
            tx = left - 6.0,
            ty = y(v) + 4.0
        );
    }
    for k in 0..tasks {
        let _ = writeln!(
            s,
            r#"<text x="{xx}" y="{ty}" text-anchor="middle">{n}</text>"#,
            xx = x(k),
            ty = top + ph + 18.0,
            n = k + 1
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{cx}" y="{ty}" text-anchor="middle">after task</text>"#,
        cx = left + pw / 2.0,
        ty = h - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="15" y="{cy}" text-anchor="middle" transform="rotate(-90 15 {cy})">generative accuracy</text>"#,
        cy = top + ph / 2.0
    );
    for (c, name) in log.class_names.iter().enumerate() {
        let colour = PALETTE[c % PALETTE.len()];
        let pts: Vec<String> = log
            .accuracy_matrix
            .iter()
            .enumerate()
            .map(|(k, row)| format!("{:.1},{:.1}", x(k), y(row[c])))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#,
            pts.join(" ")
        );
        for p in &pts {
            let (px, py) = p.split_once(',').expect("formatted pair");
            let _ = writeln!(s, r#"<circle cx="{px}" cy="{py}" r="3" fill="{colour}"/>"#);
        }
        let ly = top + 14.0 * c as f64 + 10.0;
        let lx = left + pw + 15.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{lx2}" y2="{ly}" stroke="{colour}" stroke-width="2"/><text x="{tx}" y="{ty}">{name}</text>"#,
            name = xml_escape(name),
            lx2 = lx + 20.0,
            tx = lx + 26.0,
            ty = ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}
