//! Minimal SVG writer for the two figure types the tool emits.

use std::fmt::Write;

pub struct Svg {
    width: f64,
    height: f64,
    body: String,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

impl Svg {
    pub fn new(width: f64, height: f64) -> Self {
        Self { width, height, body: String::new() }
    }

    pub fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, width: f64) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{stroke}" stroke-width="{width:.2}"/>"#
        );
    }

    pub fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str, stroke: &str) {
        let _ = writeln!(
            self.body,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{fill}" stroke="{stroke}"/>"#
        );
    }

    pub fn circle(&mut self, cx: f64, cy: f64, r: f64, fill: &str) {
        let _ = writeln!(self.body, r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="{r:.2}" fill="{fill}" fill-opacity="0.8"/>"#);
    }

    pub fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, s: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" font-family="sans-serif" font-size="{size:.1}" text-anchor="{anchor}">{}</text>"#,
            escape(s)
        );
    }

    pub fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
             <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{body}</svg>\n",
            w = self.width,
            h = self.height,
            body = self.body
        )
    }
}

/// Linear-interpolated quantile of sorted values.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

const PALETTE: [&str; 6] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"];

/// Box plot with every observation overlaid as a point, one group per
/// column. Non-finite values are dropped.
pub fn box_strip_plot(title: &str, y_label: &str, groups: &[(String, Vec<f64>)]) -> String {
    let (w, h) = (120.0 + 110.0 * groups.len().max(1) as f64, 420.0);
    let (left, right, top, bottom) = (70.0, w - 30.0, 40.0, h - 60.0);
    let all: Vec<f64> = groups.iter().flat_map(|(_, v)| v.iter().copied()).filter(|v| v.is_finite()).collect();
    let (mut lo, mut hi) = all.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    lo = ((lo - 0.05) * 10.0).floor() / 10.0;
    hi = ((hi + 0.05) * 10.0).ceil() / 10.0;
    lo = lo.max(0.0);
    hi = hi.min(1.0).max(lo + 0.1);
    let y = |v: f64| bottom - (v - lo) / (hi - lo) * (bottom - top);

    let mut svg = Svg::new(w, h);
    svg.text(w / 2.0, 24.0, 15.0, "middle", title);
    svg.line(left, top, left, bottom, "black", 1.0);
    svg.line(left, bottom, right, bottom, "black", 1.0);
    let ticks = ((hi - lo) * 10.0).round() as usize;
    for t in 0..=ticks {
        let v = lo + t as f64 * 0.1;
        svg.line(left - 4.0, y(v), left, y(v), "black", 1.0);
        svg.line(left, y(v), right, y(v), "#e0e0e0", 0.5);
        svg.text(left - 8.0, y(v) + 4.0, 11.0, "end", &format!("{v:.1}"));
    }
    svg.text(18.0, (top + bottom) / 2.0, 12.0, "middle", y_label);

    let slot = (right - left) / groups.len().max(1) as f64;
    for (g, (name, values)) in groups.iter().enumerate() {
        let cx = left + slot * (g as f64 + 0.5);
        let color = PALETTE[g % PALETTE.len()];
        svg.text(cx, bottom + 20.0, 12.0, "middle", name);
        let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        v.sort_by(f64::total_cmp);
        if v.is_empty() {
            continue;
        }
        let (q1, med, q3) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
        let bw = slot * 0.4;
        svg.line(cx, y(v[0]), cx, y(q1), "black", 1.0);
        svg.line(cx, y(q3), cx, y(v[v.len() - 1]), "black", 1.0);
        svg.rect(cx - bw / 2.0, y(q3), bw, (y(q1) - y(q3)).max(0.5), "none", "black");
        svg.line(cx - bw / 2.0, y(med), cx + bw / 2.0, y(med), "black", 2.0);
        let n = values.len();
        for (i, &val) in values.iter().enumerate().filter(|(_, x)| x.is_finite()) {
            let offset = if n > 1 { (i as f64 / (n - 1) as f64 - 0.5) * bw * 0.8 } else { 0.0 };
            svg.circle(cx + offset, y(val), 4.0, color);
        }
    }
    svg.finish()
}

/// Count matrix drawn as cells shaded by their share of the row.
pub fn confusion_heatmap(title: &str, rows: &[String], cols: &[String], counts: &[Vec<u64>]) -> String {
    let cell = 80.0;
    let (left, top) = (110.0, 70.0);
    let w = left + cell * cols.len() as f64 + 30.0;
    let h = top + cell * rows.len() as f64 + 50.0;
    let mut svg = Svg::new(w, h);
    svg.text(w / 2.0, 24.0, 15.0, "middle", title);
    svg.text(left + cell * cols.len() as f64 / 2.0, h - 12.0, 12.0, "middle", "predicted");
    for (j, c) in cols.iter().enumerate() {
        svg.text(left + cell * (j as f64 + 0.5), top - 10.0, 12.0, "middle", c);
    }
    for (i, r) in rows.iter().enumerate() {
        svg.text(left - 10.0, top + cell * (i as f64 + 0.5) + 4.0, 12.0, "end", r);
        let total: u64 = counts[i].iter().sum();
        for (j, &n) in counts[i].iter().enumerate() {
            let share = if total == 0 { 0.0 } else { n as f64 / total as f64 };
            let shade = (255.0 - share * 200.0).round() as u8;
            let fill = format!("#{shade:02x}{shade:02x}ff");
            svg.rect(left + cell * j as f64, top + cell * i as f64, cell, cell, &fill, "black");
            svg.text(left + cell * (j as f64 + 0.5), top + cell * (i as f64 + 0.5) + 5.0, 14.0, "middle", &n.to_string());
        }
    }
    svg.finish()
}
