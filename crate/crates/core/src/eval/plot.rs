//! Static SVG of frame positions and report edges.

use std::fmt::Write;

use super::{EvalRecord, Task};

const SIZE: f64 = 800.0;
const MARGIN: f64 = 40.0;

/// Draws every record's source and target positions as dots and the pair as
/// an edge, green when accepted and red otherwise. Records without world
/// positions are skipped. World `x` points right, `y` up.
pub fn render_svg(records: &[EvalRecord]) -> String {
    let pts: Vec<([f64; 2], [f64; 2], &EvalRecord)> = records
        .iter()
        .filter_map(|r| Some(([r.source_wx?, r.source_wy?], [r.target_wx?, r.target_wy?], r)))
        .collect();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for (s, t, _) in &pts {
        for p in [s, t] {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
    }
    if pts.is_empty() {
        (lo, hi) = ([0.0, 0.0], [1.0, 1.0]);
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-9);
    let scale = (SIZE - 2.0 * MARGIN) / span;
    let map = |p: [f64; 2]| (MARGIN + (p[0] - lo[0]) * scale, SIZE - MARGIN - (p[1] - lo[1]) * scale);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (s, t, r) in &pts {
        let (a, b) = (map(*s), map(*t));
        let color = if r.accepted { "#2a9d3a" } else { "#d43c2c" };
        let _ = writeln!(
            svg,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="1"/>"#,
            a.0, a.1, b.0, b.1
        );
    }
    for (s, t, r) in &pts {
        let src = if r.task == Task::Global { "#1f5fbf" } else { "#555555" };
        for (p, fill) in [(map(*t), "#555555"), (map(*s), src)] {
            let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{fill}"/>"#, p.0, p.1);
        }
    }
    let accepted = records.iter().filter(|r| r.accepted).count();
    let _ = writeln!(
        svg,
        r#"<text x="{MARGIN}" y="24" font-family="sans-serif" font-size="14">{} records, {accepted} accepted</text>"#,
        records.len()
    );
    svg.push_str("</svg>\n");
    svg
}
