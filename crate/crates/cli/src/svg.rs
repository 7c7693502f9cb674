//! Minimal standalone SVG emitters for the report figures: line/step charts
//! and annotated heatmaps. No external renderer; the files open in any
//! browser.

use std::fmt::Write;

const PALETTE: [&str; 8] = [
    "#4269d0", "#efb118", "#ff725c", "#6cc5b0", "#3ca951", "#ff8ab7", "#a463f2", "#97bbf5",
];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

struct Frame {
    width: f64,
    height: f64,
    ml: f64,
    mr: f64,
    mt: f64,
    mb: f64,
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        let span = (self.x_max - self.x_min).max(1e-12);
        self.ml + (v - self.x_min) / span * (self.width - self.ml - self.mr)
    }

    fn y(&self, v: f64) -> f64 {
        let span = (self.y_max - self.y_min).max(1e-12);
        self.height - self.mb - (v - self.y_min) / span * (self.height - self.mt - self.mb)
    }
}

fn open_svg(out: &mut String, width: f64, height: f64) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = write!(out, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
}

fn axes(out: &mut String, f: &Frame, title: &str, x_label: &str, y_label: &str) {
    let x0 = f.ml;
    let x1 = f.width - f.mr;
    let y0 = f.height - f.mb;
    let y1 = f.mt;
    let _ = write!(
        out,
        r##"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="#333"/><line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="#333"/>"##
    );
    let _ = write!(
        out,
        r#"<text x="{}" y="16" text-anchor="middle" font-size="13" font-weight="bold">{}</text>"#,
        f.width / 2.0,
        title
    );
    let _ = write!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        f.height - 6.0,
        x_label
    );
    let _ = write!(
        out,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        y_label
    );
    // Five ticks per axis.
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let xv = f.x_min + t * (f.x_max - f.x_min);
        let yv = f.y_min + t * (f.y_max - f.y_min);
        let xp = f.x(xv);
        let yp = f.y(yv);
        let _ = write!(
            out,
            r##"<line x1="{xp}" y1="{y0}" x2="{xp}" y2="{}" stroke="#333"/><text x="{xp}" y="{}" text-anchor="middle">{}</text>"##,
            y0 + 4.0,
            y0 + 16.0,
            trim_num(xv)
        );
        let _ = write!(
            out,
            r##"<line x1="{}" y1="{yp}" x2="{x0}" y2="{yp}" stroke="#333"/><text x="{}" y="{}" text-anchor="end">{}</text>"##,
            x0 - 4.0,
            x0 - 6.0,
            yp + 4.0,
            trim_num(yv)
        );
    }
}

fn trim_num(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 && v.abs() < 1e6 {
        format!("{}", v.round() as i64)
    } else {
        format!("{v:.2}")
    }
}

fn legend(out: &mut String, f: &Frame, labels: &[&str]) {
    for (i, label) in labels.iter().enumerate() {
        let x = f.width - f.mr - 130.0;
        let y = f.mt + 14.0 * i as f64 + 8.0;
        let color = PALETTE[i % PALETTE.len()];
        let _ = write!(
            out,
            r#"<rect x="{x}" y="{}" width="10" height="10" fill="{color}"/><text x="{}" y="{}">{}</text>"#,
            y - 9.0,
            x + 14.0,
            y,
            label
        );
    }
}

fn bounds(series: &[Series]) -> (f64, f64, f64, f64) {
    let mut b = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for s in series {
        for &(x, y) in &s.points {
            b.0 = b.0.min(x);
            b.1 = b.1.max(x);
            b.2 = b.2.min(y);
            b.3 = b.3.max(y);
        }
    }
    if !b.0.is_finite() {
        b = (0.0, 1.0, 0.0, 1.0);
    }
    if b.2 == b.3 {
        b.2 -= 0.5;
        b.3 += 0.5;
    }
    b
}

fn chart(series: &[Series], title: &str, x_label: &str, y_label: &str, step: bool) -> String {
    let (x_min, x_max, y_min, y_max) = bounds(series);
    let f = Frame {
        width: 640.0,
        height: 400.0,
        ml: 56.0,
        mr: 18.0,
        mt: 30.0,
        mb: 44.0,
        x_min,
        x_max,
        y_min: y_min.min(0.0_f64.min(y_min)),
        y_max,
    };
    let mut out = String::new();
    open_svg(&mut out, f.width, f.height);
    axes(&mut out, &f, title, x_label, y_label);
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut d = String::new();
        let mut prev: Option<(f64, f64)> = None;
        for &(x, y) in &s.points {
            let (px, py) = (f.x(x), f.y(y));
            match prev {
                None => {
                    let _ = write!(d, "M{px:.1},{py:.1}");
                }
                Some((_, ly)) if step => {
                    let _ = write!(d, "L{px:.1},{:.1}L{px:.1},{py:.1}", f.y(ly));
                }
                Some(_) => {
                    let _ = write!(d, "L{px:.1},{py:.1}");
                }
            }
            prev = Some((x, y));
        }
        let _ = write!(
            out,
            r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="1.8"/>"#
        );
    }
    let labels: Vec<&str> = series.iter().map(|s| s.label.as_str()).collect();
    if labels.len() > 1 {
        legend(&mut out, &f, &labels);
    }
    out.push_str("</svg>");
    out
}

pub fn line_chart(series: &[Series], title: &str, x_label: &str, y_label: &str) -> String {
    chart(series, title, x_label, y_label, false)
}

pub fn step_chart(series: &[Series], title: &str, x_label: &str, y_label: &str) -> String {
    chart(series, title, x_label, y_label, true)
}

/// Scatter plus a fitted line overlay.
pub fn scatter_with_line(
    points: &[(f64, f64)],
    slope: f64,
    intercept: f64,
    title: &str,
    x_label: &str,
    y_label: &str,
) -> String {
    let series = [Series {
        label: "data".into(),
        points: points.to_vec(),
    }];
    let (x_min, x_max, y_min, y_max) = bounds(&series);
    let f = Frame {
        width: 640.0,
        height: 400.0,
        ml: 56.0,
        mr: 18.0,
        mt: 30.0,
        mb: 44.0,
        x_min,
        x_max,
        y_min,
        y_max,
    };
    let mut out = String::new();
    open_svg(&mut out, f.width, f.height);
    axes(&mut out, &f, title, x_label, y_label);
    for &(x, y) in points {
        let _ = write!(
            out,
            r#"<circle cx="{:.1}" cy="{:.1}" r="2.4" fill="{}"/>"#,
            f.x(x),
            f.y(y),
            PALETTE[0]
        );
    }
    let y0 = slope * x_min + intercept;
    let y1 = slope * x_max + intercept;
    let _ = write!(
        out,
        r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{}" stroke-width="1.8" stroke-dasharray="5,3"/>"#,
        f.x(x_min),
        f.y(y0),
        f.x(x_max),
        f.y(y1),
        PALETTE[2]
    );
    let _ = write!(
        out,
        r#"<text x="{}" y="{}" fill="{}">y = {:.2}x {} {:.2}</text>"#,
        f.ml + 10.0,
        f.mt + 16.0,
        PALETTE[2],
        slope,
        if intercept < 0.0 { "-" } else { "+" },
        intercept.abs()
    );
    out.push_str("</svg>");
    out
}

/// Annotated heatmap; values are colored on a symmetric or sequential scale
/// depending on whether negatives appear.
pub fn heatmap(
    values: &[Vec<f64>],
    row_labels: &[String],
    col_labels: &[String],
    title: &str,
    annotate: bool,
) -> String {
    let rows = values.len();
    let cols = values.first().map_or(0, Vec::len);
    let cell_w: f64 = if cols > 24 { 7.0 } else { 46.0 };
    let cell_h: f64 = if rows > 24 { 7.0 } else { 30.0 };
    let ml = 86.0;
    let mt = 40.0;
    let width = ml + cell_w * cols as f64 + 20.0;
    let height = mt + cell_h * rows as f64 + 40.0;

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for row in values {
        for &v in row {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !lo.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    let diverging = lo < 0.0;
    if diverging {
        let m = lo.abs().max(hi.abs()).max(1e-12);
        lo = -m;
        hi = m;
    }
    let span = (hi - lo).max(1e-12);

    let mut out = String::new();
    open_svg(&mut out, width, height);
    let _ = write!(
        out,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="13" font-weight="bold">{}</text>"#,
        width / 2.0,
        title
    );
    for (r, row) in values.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            let t = ((v - lo) / span).clamp(0.0, 1.0);
            let color = if diverging {
                // Blue below zero, white at zero, red above.
                if t < 0.5 {
                    let u = t * 2.0;
                    format!(
                        "rgb({},{},255)",
                        (66.0 + 189.0 * u) as u8,
                        (105.0 + 150.0 * u) as u8
                    )
                } else {
                    let u = (t - 0.5) * 2.0;
                    format!(
                        "rgb(255,{},{})",
                        (255.0 - 141.0 * u) as u8,
                        (255.0 - 163.0 * u) as u8
                    )
                }
            } else {
                let shade = (248.0 - 200.0 * t) as u8;
                format!("rgb({shade},{},248)", (250.0 - 145.0 * t) as u8)
            };
            let x = ml + cell_w * c as f64;
            let y = mt + cell_h * r as f64;
            let _ = write!(
                out,
                r#"<rect x="{x:.1}" y="{y:.1}" width="{cell_w:.1}" height="{cell_h:.1}" fill="{color}"/>"#
            );
            if annotate && cols <= 24 {
                let _ = write!(
                    out,
                    r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="10">{}</text>"#,
                    x + cell_w / 2.0,
                    y + cell_h / 2.0 + 3.5,
                    trim_short(v)
                );
            }
        }
    }
    for (r, label) in row_labels.iter().enumerate() {
        let _ = write!(
            out,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
            ml - 6.0,
            mt + cell_h * r as f64 + cell_h / 2.0 + 3.5,
            label
        );
    }
    let col_step = if cols > 24 { 6 } else { 1 };
    for (c, label) in col_labels.iter().enumerate() {
        if c % col_step != 0 {
            continue;
        }
        let _ = write!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            ml + cell_w * c as f64 + cell_w / 2.0,
            mt + cell_h * rows as f64 + 14.0,
            label
        );
    }
    out.push_str("</svg>");
    out
}

fn trim_short(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else {
        format!("{v:.2}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_are_well_formed_svg() {
        let series = vec![
            Series {
                label: "a".into(),
                points: vec![(0.0, 0.1), (1.0, 0.5), (2.0, 0.4)],
            },
            Series {
                label: "b".into(),
                points: vec![(0.0, 0.2), (1.0, 0.3), (2.0, 0.9)],
            },
        ];
        for svg in [
            line_chart(&series, "t", "x", "y"),
            step_chart(&series, "t", "x", "y"),
            scatter_with_line(&[(1.0, 2.0), (2.0, 4.1)], 2.0, 0.0, "t", "x", "y"),
            heatmap(
                &[vec![0.5, -0.2], vec![0.1, 0.9]],
                &["r0".into(), "r1".into()],
                &["c0".into(), "c1".into()],
                "t",
                true,
            ),
        ] {
            assert!(svg.starts_with("<svg"));
            assert!(svg.ends_with("</svg>"));
            assert_eq!(svg.matches("<svg").count(), 1);
        }
    }

    #[test]
    fn empty_series_do_not_panic() {
        let svg = line_chart(&[], "t", "x", "y");
        assert!(svg.ends_with("</svg>"));
    }
}
