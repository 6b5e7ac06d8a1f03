//! Top-down SVG map of a scene graph: one rectangle per object footprint,
//! highlighted objects filled, and an optional location marker.

use std::fmt::Write;

use nalgebra::Vector2;

use crate::scene_model::{footprint, NodeId, SceneGraph};

/// Pixels per meter.
const SCALE: f64 = 100.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// World `+y` points up in the image.
pub fn render_map_svg(graph: &SceneGraph, highlight: &[NodeId], marker: Option<Vector2<f64>>) -> String {
    let b = graph.floor_bounds;
    let w = ((b.max.x - b.min.x) * SCALE).max(1.0);
    let h = ((b.max.y - b.min.y) * SCALE).max(1.0);
    let px = |p: Vector2<f64>| ((p.x - b.min.x) * SCALE, (b.max.y - p.y) * SCALE);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.1} {h:.1}">"#
    );
    let _ = writeln!(svg, r##"<rect x="0" y="0" width="{w:.1}" height="{h:.1}" fill="#f4f4f4" stroke="#999"/>"##);
    for n in graph.nodes.values() {
        let fp = footprint(&n.obb);
        let (x0, y0) = px(Vector2::new(fp.min.x, fp.max.y));
        let (x1, y1) = px(Vector2::new(fp.max.x, fp.min.y));
        let fill = if highlight.contains(&n.id) { "#e8743b" } else { "#8fb3d9" };
        let _ = writeln!(
            svg,
            r##"<rect x="{x0:.1}" y="{y0:.1}" width="{:.1}" height="{:.1}" fill="{fill}" fill-opacity="0.6" stroke="#333"><title>{} #{}</title></rect>"##,
            x1 - x0,
            y1 - y0,
            escape(&n.label),
            n.id
        );
        let (cx, cy) = px(n.obb.center.xy());
        let _ = writeln!(
            svg,
            r#"<text x="{cx:.1}" y="{cy:.1}" font-size="10" text-anchor="middle">{}</text>"#,
            escape(&n.label)
        );
    }
    if let Some(m) = marker {
        let (mx, my) = px(m);
        let _ = writeln!(svg, r##"<circle cx="{mx:.1}" cy="{my:.1}" r="6" fill="#c0392b"/>"##);
    }
    svg.push_str("</svg>\n");
    svg
}
