//! Trajectory CSV files: one row per recorded sample, 17 significant digits.

use std::fmt::Write as _;

use cbf_shaping::sim::{Label, Sample, TrajectoryRecord};
use cbf_shaping::Vector;

/// Column layout shared by every row of one file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub n: usize,
    pub m: usize,
    /// Rotation-rate dimension for shaped runs, absent for nominal ones.
    pub omega: Option<usize>,
}

impl Layout {
    pub fn of(sample: &Sample) -> Self {
        Layout { n: sample.x.len(), m: sample.u.len(), omega: sample.omega.as_ref().map(|w| w.len()) }
    }

    pub fn header(&self) -> Vec<String> {
        let mut cols = vec!["t".to_string()];
        cols.extend((1..=self.n).map(|i| format!("x{i}")));
        cols.extend((1..=self.m).map(|i| format!("u{i}")));
        cols.extend(["w", "h", "V", "case"].map(String::from));
        if let Some(k) = self.omega {
            cols.extend(["D", "h_D"].map(String::from));
            cols.extend((1..=k).map(|i| format!("omega{i}")));
        }
        cols
    }

    fn width(&self) -> usize {
        self.n + self.m + 5 + self.omega.map_or(0, |k| k + 2)
    }
}

/// Formats a float so that parsing it back yields the same bits.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn to_csv(record: &TrajectoryRecord) -> String {
    let Some(first) = record.samples.first() else {
        return "t\n".to_string();
    };
    let layout = Layout::of(first);
    let mut out = layout.header().join(",");
    out.push('\n');
    for s in &record.samples {
        let mut fields: Vec<String> = Vec::with_capacity(layout.width());
        fields.push(fmt_float(s.t));
        fields.extend(s.x.iter().chain(s.u.iter()).map(|v| fmt_float(*v)));
        fields.extend([s.w, s.h, s.v].map(fmt_float));
        fields.push(s.label.to_string());
        if layout.omega.is_some() {
            fields.push(fmt_float(s.d.unwrap_or(f64::NAN)));
            fields.push(fmt_float(s.h_d.unwrap_or(f64::NAN)));
            if let Some(w) = &s.omega {
                fields.extend(w.iter().map(|v| fmt_float(*v)));
            }
        }
        let _ = writeln!(out, "{}", fields.join(","));
    }
    out
}

fn dims_from_header(header: &[&str]) -> Result<Layout, String> {
    let count = |prefix: &str| header.iter().filter(|c| c.strip_prefix(prefix).is_some_and(|r| r.parse::<usize>().is_ok())).count();
    let layout = Layout {
        n: count("x"),
        m: count("u"),
        omega: header.contains(&"D").then(|| count("omega")),
    };
    let expected = layout.header();
    if header.iter().copied().ne(expected.iter().map(String::as_str)) {
        return Err(format!("unexpected header `{}`", header.join(",")));
    }
    Ok(layout)
}

/// Parses a file written by [`to_csv`] back into samples (without `Q`).
pub fn parse_csv(text: &str) -> Result<Vec<Sample>, String> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or("empty file")?.split(',').collect();
    if header == ["t"] {
        return Ok(Vec::new());
    }
    let layout = dims_from_header(&header)?;
    let mut samples = Vec::new();
    for (row, line) in lines.enumerate() {
        let line_no = row + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != layout.width() {
            return Err(format!("line {line_no}: expected {} fields, found {}", layout.width(), fields.len()));
        }
        let num = |i: usize| fields[i].parse::<f64>().map_err(|e| format!("line {line_no}, column {}: {e}", header[i]));
        let vec = |start: usize, len: usize| -> Result<Vector, String> {
            (start..start + len).map(num).collect::<Result<Vec<_>, _>>().map(|v| Vector::from_vec(v))
        };
        let (n, m) = (layout.n, layout.m);
        let base = 1 + n + m;
        let label: Label = fields[base + 3].parse().map_err(|e| format!("line {line_no}: {e}"))?;
        let mut sample = Sample {
            t: num(0)?,
            x: vec(1, n)?,
            q: None,
            u: vec(1 + n, m)?,
            omega: None,
            w: num(base)?,
            h: num(base + 1)?,
            v: num(base + 2)?,
            d: None,
            h_d: None,
            label,
        };
        if let Some(k) = layout.omega {
            sample.d = Some(num(base + 4)?);
            sample.h_d = Some(num(base + 5)?);
            sample.omega = Some(vec(base + 6, k)?);
        }
        samples.push(sample);
    }
    Ok(samples)
}
