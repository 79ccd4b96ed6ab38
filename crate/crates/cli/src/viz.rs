//! Static equirectangular SVG of the constellation at one instant.

use std::f64::consts::TAU;
use std::fmt::Write as _;

use orbitmesh::constellation::{snapshot, ConstellationConfig, ConstellationError, NodeId, Position};

const WIDTH: f64 = 1080.0;
const HEIGHT: f64 = 540.0;

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Map an inertial position at time `t` to map coordinates.
fn project(p: &Position, t: f64, config: &ConstellationConfig) -> (f64, f64) {
    let day = TAU / config.constants.earth_rotation_rad_s;
    let earth_turn = TAU * (t.rem_euclid(day) / day);
    let lat = (p.z / p.norm()).clamp(-1.0, 1.0).asin().to_degrees();
    let mut lon = (p.y.atan2(p.x) - earth_turn).to_degrees();
    lon = (lon + 180.0).rem_euclid(360.0) - 180.0;
    ((lon + 180.0) / 360.0 * WIDTH, (90.0 - lat) / 180.0 * HEIGHT)
}

fn line(out: &mut String, class: &str, (x1, y1): (f64, f64), (x2, y2): (f64, f64)) {
    let mut seg = |a: f64, b: f64, c: f64, d: f64| {
        let _ = writeln!(
            out,
            r#"<line class="{class}" x1="{a:.2}" y1="{b:.2}" x2="{c:.2}" y2="{d:.2}"/>"#
        );
    };
    if (x1 - x2).abs() <= WIDTH / 2.0 {
        seg(x1, y1, x2, y2);
    } else {
        // crosses the antimeridian: draw both halves, the viewport clips them
        let shift = if x1 < x2 { -WIDTH } else { WIDTH };
        seg(x1, y1, x2 + shift, y2);
        seg(x1 - shift, y1, x2, y2);
    }
}

pub fn render(config: &ConstellationConfig, t: f64) -> Result<String, ConstellationError> {
    let snap = snapshot(config, t)?;
    let points: Vec<(f64, f64)> = config
        .node_ids()
        .into_iter()
        .map(|id| config.position(id, t).map(|p| project(&p, t, config)))
        .collect::<Result<_, _>>()?;
    let stations = config.ground_stations.len();

    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    out.push_str(
        "<style>.isl{stroke:#4aa3df;stroke-width:0.6}.gsl{stroke:#f5a623;stroke-width:0.8}\
         .sat{fill:#ffffff}.station{fill:#e74c3c}.grid{stroke:#23405f;stroke-width:0.5}\
         text{fill:#e0e0e0;font:10px sans-serif}</style>\n",
    );
    let _ = writeln!(
        out,
        r##"<rect class="frame" x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="#0b1d33" stroke="#8899aa"/>"##
    );
    out.push_str("<g class=\"graticule\">\n");
    for lon in (-150..=150).step_by(30) {
        let x = (f64::from(lon) + 180.0) / 360.0 * WIDTH;
        let _ = writeln!(
            out,
            r#"<line class="grid" x1="{x:.2}" y1="0" x2="{x:.2}" y2="{HEIGHT}"/>"#
        );
    }
    for lat in (-60..=60).step_by(30) {
        let y = (90.0 - f64::from(lat)) / 180.0 * HEIGHT;
        let _ = writeln!(
            out,
            r#"<line class="grid" x1="0" y1="{y:.2}" x2="{WIDTH}" y2="{y:.2}"/>"#
        );
    }
    out.push_str("</g>\n<g class=\"links\">\n");
    for e in snap.edges() {
        let class = if e.u < stations || e.v < stations { "gsl" } else { "isl" };
        line(&mut out, class, points[e.u], points[e.v]);
    }
    out.push_str("</g>\n<g class=\"satellites\">\n");
    for (i, id) in config.node_ids().into_iter().enumerate() {
        if let NodeId::Satellite { .. } = id {
            let (x, y) = points[i];
            let _ = writeln!(
                out,
                r#"<circle class="sat" cx="{x:.2}" cy="{y:.2}" r="2"><title>{id}</title></circle>"#
            );
        }
    }
    out.push_str("</g>\n<g class=\"stations\">\n");
    for (gs, &(x, y)) in config.ground_stations.iter().zip(&points) {
        let name = escape(&gs.name);
        let _ = writeln!(
            out,
            r#"<rect class="station" x="{:.2}" y="{:.2}" width="6" height="6"/><text x="{:.2}" y="{:.2}">{name}</text>"#,
            x - 3.0,
            y - 3.0,
            x + 5.0,
            y - 5.0
        );
    }
    out.push_str("</g>\n</svg>\n");
    Ok(out)
}
