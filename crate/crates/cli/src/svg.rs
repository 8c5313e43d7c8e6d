//! Planar phase portraits as standalone SVG 1.1 documents.

use std::fmt::Write as _;

const SIZE: f64 = 640.0;
const MARGIN: f64 = 40.0;
const MAX_POINTS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceStyle {
    Nominal,
    Shaped,
}

impl TraceStyle {
    fn color(self) -> &'static str {
        match self {
            TraceStyle::Nominal => "#1f5fbf",
            TraceStyle::Shaped => "#1a8a3a",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub points: Vec<[f64; 2]>,
    pub style: TraceStyle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarkerKind {
    Origin,
    Stable,
    Unstable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Marker {
    pub at: [f64; 2],
    pub kind: MarkerKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Portrait {
    pub title: String,
    pub traces: Vec<Trace>,
    pub obstacle: ([f64; 2], f64),
    /// Semi-axes of one CLF level set centered at the origin.
    pub level_set: Option<[f64; 2]>,
    pub markers: Vec<Marker>,
}

struct Frame {
    min: [f64; 2],
    scale: f64,
}

impl Frame {
    fn fit(portrait: &Portrait) -> Self {
        let (c, r) = portrait.obstacle;
        let mut lo = [c[0] - r, c[1] - r];
        let mut hi = [c[0] + r, c[1] + r];
        let mut include = |p: [f64; 2]| {
            for i in 0..2 {
                if p[i].is_finite() {
                    lo[i] = lo[i].min(p[i]);
                    hi[i] = hi[i].max(p[i]);
                }
            }
        };
        include([0.0, 0.0]);
        portrait.traces.iter().flat_map(|t| &t.points).for_each(|p| include(*p));
        portrait.markers.iter().for_each(|m| include(m.at));
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]) * 1.1;
        let mid = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
        Frame { min: [mid[0] - span / 2.0, mid[1] - span / 2.0], scale: (SIZE - 2.0 * MARGIN) / span }
    }

    fn px(&self, p: [f64; 2]) -> (f64, f64) {
        (MARGIN + (p[0] - self.min[0]) * self.scale, SIZE - MARGIN - (p[1] - self.min[1]) * self.scale)
    }
}

fn num(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

impl Portrait {
    pub fn render(&self) -> String {
        let frame = Frame::fit(self);
        let mut out = String::new();
        let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{s}" height="{s}" viewBox="0 0 {s} {s}">"#,
            s = SIZE
        );
        let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(out, r#"<text x="{}" y="24" font-family="sans-serif" font-size="16">{}</text>"#, num(MARGIN), escape(&self.title));

        let (ox, oy) = frame.px([0.0, 0.0]);
        let _ = writeln!(
            out,
            r##"<g stroke="#bbbbbb" stroke-width="1"><line x1="{}" y1="{}" x2="{}" y2="{}"/><line x1="{}" y1="{}" x2="{}" y2="{}"/></g>"##,
            num(MARGIN), num(oy), num(SIZE - MARGIN), num(oy), num(ox), num(MARGIN), num(ox), num(SIZE - MARGIN)
        );

        if let Some([a, b]) = self.level_set {
            let _ = writeln!(
                out,
                r##"<ellipse cx="{}" cy="{}" rx="{}" ry="{}" fill="none" stroke="#888888" stroke-dasharray="6 4"/>"##,
                num(ox), num(oy), num(a * frame.scale), num(b * frame.scale)
            );
        }

        let (c, r) = self.obstacle;
        let (cx, cy) = frame.px(c);
        let _ = writeln!(
            out,
            r##"<circle cx="{}" cy="{}" r="{}" fill="#f2c4c4" stroke="#b03030" stroke-width="1.5"/>"##,
            num(cx), num(cy), num(r * frame.scale)
        );

        for trace in &self.traces {
            let stride = trace.points.len().div_ceil(MAX_POINTS).max(1);
            let mut pts: Vec<[f64; 2]> = trace.points.iter().step_by(stride).copied().collect();
            if let Some(last) = trace.points.last() {
                if pts.last() != Some(last) {
                    pts.push(*last);
                }
            }
            let coords: Vec<String> = pts
                .iter()
                .filter(|p| p[0].is_finite() && p[1].is_finite())
                .map(|p| {
                    let (x, y) = frame.px(*p);
                    format!("{},{}", num(x), num(y))
                })
                .collect();
            let _ = writeln!(
                out,
                r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
                trace.style.color(),
                coords.join(" ")
            );
            if let Some(start) = pts.first() {
                let (x, y) = frame.px(*start);
                let _ = writeln!(out, r#"<circle cx="{}" cy="{}" r="3" fill="{}"/>"#, num(x), num(y), trace.style.color());
            }
        }

        for m in &self.markers {
            let (x, y) = frame.px(m.at);
            let (fill, r) = match m.kind {
                MarkerKind::Origin => ("#000000", 5.0),
                MarkerKind::Stable => ("#d01010", 6.0),
                MarkerKind::Unstable => ("#ffffff", 5.0),
            };
            let _ = writeln!(
                out,
                r##"<circle cx="{}" cy="{}" r="{}" fill="{}" stroke="#000000" stroke-width="1"/>"##,
                num(x), num(y), num(r), fill
            );
        }
        out.push_str("</svg>\n");
        out
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
