//! Step-curve CSV files and their SVG rendering.

use std::fmt::Write as _;
use std::path::Path;

use survfuse_core::survival::StepCurve;

use crate::cohort_io::FormatError;

/// `time,value` rows at round-trip precision.
pub fn curve_csv(curve: &StepCurve) -> String {
    let mut s = String::from("time,value\n");
    for (t, v) in curve.times.iter().zip(&curve.values) {
        writeln!(s, "{t},{v}").unwrap();
    }
    s
}

pub fn parse_curve_csv(text: &str, path: &Path) -> Result<StepCurve, FormatError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "time,value")) => {}
        _ => return Err(FormatError::parse(path, 1, "expected header time,value")),
    }
    let mut curve = StepCurve {
        times: Vec::new(),
        values: Vec::new(),
    };
    for (i, line) in lines {
        let bad = || FormatError::parse(path, i + 1, format!("expected two numbers, got {line:?}"));
        let (t, v) = line.split_once(',').ok_or_else(bad)?;
        curve.times.push(t.parse().map_err(|_| bad())?);
        curve.values.push(v.parse().map_err(|_| bad())?);
    }
    Ok(curve)
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;

fn color(name: &str) -> &'static str {
    match name {
        "high" => "#c0392b",
        "mid" => "#7f8c8d",
        "low" => "#2471a3",
        _ => "#000000",
    }
}

/// Renders labelled step curves on shared axes. Output depends only on the
/// curve values, so re-rendering parsed CSVs gives identical bytes.
pub fn render_svg(curves: &[(String, StepCurve)]) -> String {
    let t_max = curves
        .iter()
        .flat_map(|(_, c)| c.times.iter().copied())
        .fold(0.0, f64::max)
        .max(1.0);
    let (pw, ph) = (WIDTH - 2.0 * MARGIN, HEIGHT - 2.0 * MARGIN);
    let x = |t: f64| MARGIN + pw * t / t_max;
    let y = |v: f64| MARGIN + ph * (1.0 - v);

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<path d="M{:.2},{:.2}V{:.2}H{:.2}" fill="none" stroke="black"/>"#,
        x(0.0),
        y(1.0),
        y(0.0),
        x(t_max)
    )
    .unwrap();
    for k in 0..=4 {
        let v = k as f64 / 4.0;
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.2}</text>"#,
            MARGIN - 6.0,
            y(v) + 4.0
        )
        .unwrap();
        let t = t_max * v;
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{t:.0}</text>"#,
            x(t),
            HEIGHT - MARGIN + 18.0
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">days</text>"#,
        WIDTH / 2.0,
        HEIGHT - 8.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">survival probability</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    )
    .unwrap();

    for (k, (name, c)) in curves.iter().enumerate() {
        let mut d = String::new();
        for (i, (&t, &v)) in c.times.iter().zip(&c.values).enumerate() {
            if i == 0 {
                write!(d, "M{:.2},{:.2}", x(t), y(v)).unwrap();
            } else {
                write!(d, "H{:.2}V{:.2}", x(t), y(v)).unwrap();
            }
        }
        writeln!(
            s,
            r#"<path d="{d}" fill="none" stroke="{}" stroke-width="2"/>"#,
            color(name)
        )
        .unwrap();
        let ly = MARGIN + 16.0 * k as f64;
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" fill="{}">{name} risk</text>"#,
            WIDTH - MARGIN - 70.0,
            ly + 12.0,
            color(name)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}
