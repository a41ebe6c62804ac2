//! Minimal SVG writer for line plots and region drawings.

use std::fmt::Write as _;

/// Axis-aligned data bounds.
#[derive(Debug, Clone, Copy)]
pub struct Bounds {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Bounds {
    pub fn around<'a>(pts: impl IntoIterator<Item = &'a [f64; 2]>) -> Self {
        let mut b = Bounds {
            x0: f64::INFINITY,
            x1: f64::NEG_INFINITY,
            y0: f64::INFINITY,
            y1: f64::NEG_INFINITY,
        };
        for p in pts {
            if p[0].is_finite() && p[1].is_finite() {
                b.x0 = b.x0.min(p[0]);
                b.x1 = b.x1.max(p[0]);
                b.y0 = b.y0.min(p[1]);
                b.y1 = b.y1.max(p[1]);
            }
        }
        if !b.x0.is_finite() {
            return Bounds {
                x0: 0.0,
                x1: 1.0,
                y0: 0.0,
                y1: 1.0,
            };
        }
        let pad = 0.05 * (b.x1 - b.x0).max(b.y1 - b.y0).max(1e-9);
        Bounds {
            x0: b.x0 - pad,
            x1: b.x1 + pad,
            y0: b.y0 - pad,
            y1: b.y1 + pad,
        }
    }
}

pub struct Svg {
    width: f64,
    height: f64,
    margin: f64,
    b: Bounds,
    /// Keep one metre the same length on both axes.
    equal: bool,
    body: String,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

impl Svg {
    pub fn new(b: Bounds, width: f64, height: f64, equal: bool) -> Self {
        Self {
            width,
            height,
            margin: 40.0,
            b,
            equal,
            body: String::new(),
        }
    }

    fn scale(&self) -> (f64, f64) {
        let sx = (self.width - 2.0 * self.margin) / (self.b.x1 - self.b.x0).max(1e-12);
        let sy = (self.height - 2.0 * self.margin) / (self.b.y1 - self.b.y0).max(1e-12);
        if self.equal {
            let s = sx.min(sy);
            (s, s)
        } else {
            (sx, sy)
        }
    }

    pub fn map(&self, p: [f64; 2]) -> [f64; 2] {
        let (sx, sy) = self.scale();
        [
            self.margin + (p[0] - self.b.x0) * sx,
            self.height - self.margin - (p[1] - self.b.y0) * sy,
        ]
    }

    fn points(&self, pts: &[[f64; 2]]) -> String {
        let mut s = String::new();
        for p in pts.iter().filter(|p| p[0].is_finite() && p[1].is_finite()) {
            let q = self.map(*p);
            let _ = write!(s, "{:.2},{:.2} ", q[0], q[1]);
        }
        s.trim_end().to_string()
    }

    pub fn polyline(&mut self, pts: &[[f64; 2]], stroke: &str, width: f64) {
        let pts = self.points(pts);
        let _ = writeln!(
            self.body,
            r#"<polyline points="{pts}" fill="none" stroke="{stroke}" stroke-width="{width}"/>"#
        );
    }

    pub fn polygon(&mut self, pts: &[[f64; 2]], fill: &str, opacity: f64) {
        let pts = self.points(pts);
        let _ = writeln!(
            self.body,
            r#"<polygon points="{pts}" fill="{fill}" fill-opacity="{opacity}" stroke="{fill}" stroke-width="0.5"/>"#
        );
    }

    pub fn circle(&mut self, p: [f64; 2], r: f64, fill: &str) {
        let q = self.map(p);
        let _ = writeln!(self.body, r#"<circle cx="{:.2}" cy="{:.2}" r="{r}" fill="{fill}"/>"#, q[0], q[1]);
    }

    /// Text at pixel coordinates.
    pub fn label(&mut self, x: f64, y: f64, text: &str, size: f64) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.1}" y="{y:.1}" font-family="sans-serif" font-size="{size}">{}</text>"#,
            esc(text)
        );
    }

    /// Frame plus min/max tick labels on both axes.
    pub fn axes(&mut self, xlabel: &str, ylabel: &str) {
        let m = self.margin;
        let (w, h) = (self.width, self.height);
        let _ = writeln!(
            self.body,
            r#"<rect x="{m}" y="{m}" width="{}" height="{}" fill="none" stroke="black" stroke-width="0.5"/>"#,
            w - 2.0 * m,
            h - 2.0 * m
        );
        let b = self.b;
        self.label(m, h - m + 14.0, &format!("{:.3}", b.x0), 10.0);
        self.label(w - m - 30.0, h - m + 14.0, &format!("{:.3}", b.x1), 10.0);
        self.label(4.0, h - m, &format!("{:.3}", b.y0), 10.0);
        self.label(4.0, m + 10.0, &format!("{:.3}", b.y1), 10.0);
        self.label(w / 2.0, h - 8.0, xlabel, 12.0);
        self.label(4.0, m - 10.0, ylabel, 12.0);
    }

    pub fn finish(self) -> String {
        format!(
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_parses_and_maps_y_up() {
        let b = Bounds::around(&[[0.0, 0.0], [10.0, 5.0]]);
        let mut s = Svg::new(b, 400.0, 300.0, true);
        let lo = s.map([0.0, 0.0]);
        let hi = s.map([0.0, 5.0]);
        assert!(hi[1] < lo[1]);
        s.polyline(&[[0.0, 0.0], [10.0, 5.0]], "red", 1.0);
        s.polygon(&[[1.0, 1.0], [2.0, 1.0], [2.0, 2.0]], "blue", 0.3);
        s.circle([3.0, 3.0], 2.0, "black");
        s.axes("x <m>", "y & z");
        let doc = s.finish();
        let parsed = roxmltree::Document::parse(&doc).unwrap();
        assert_eq!(parsed.root_element().tag_name().name(), "svg");
        assert_eq!(parsed.descendants().filter(|n| n.has_tag_name("polyline")).count(), 1);
    }
}
