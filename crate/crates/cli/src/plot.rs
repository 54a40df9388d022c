//! Minimal SVG rendering for training curves, per-level bars and coverage heatmaps.

use std::fmt::Write;

use anyhow::{bail, Context, Result};

pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<String> = match lines.next() {
            Some(h) => h.split(',').map(|s| s.trim().to_string()).collect(),
            None => bail!("empty CSV"),
        };
        let rows = lines
            .enumerate()
            .map(|(i, l)| {
                l.split(',')
                    .map(|c| {
                        c.trim()
                            .parse::<f64>()
                            .with_context(|| format!("row {}: bad number '{c}'", i + 2))
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        if rows.is_empty() {
            bail!("CSV has a header but no data rows");
        }
        if let Some(r) = rows.iter().find(|r| r.len() != header.len()) {
            bail!("row has {} columns, header has {}", r.len(), header.len());
        }
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let i = self
            .header
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("missing column '{name}'"))?;
        Ok(self.rows.iter().map(|r| r[i]).collect())
    }
}

fn finite_range(v: &[f64]) -> (f64, f64) {
    let (lo, hi) = v
        .iter()
        .filter(|x| x.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
            (a.min(x), b.max(x))
        });
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn open(w: f64, h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

/// Stacked line panels of the named columns against `x`.
pub fn curves(t: &Table, x: &str, ys: &[&str]) -> Result<String> {
    let xs = t.column(x)?;
    let (pw, ph, m) = (520.0, 130.0, 45.0);
    let mut s = open(pw + 2.0 * m, ys.len() as f64 * (ph + m) + m);
    let (x0, x1) = finite_range(&xs);
    for (k, name) in ys.iter().enumerate() {
        let v = t.column(name)?;
        let (y0, y1) = finite_range(&v);
        let top = m + k as f64 * (ph + m);
        writeln!(s, "<rect x=\"{m}\" y=\"{top}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"#999\"/>")?;
        writeln!(
            s,
            "<text x=\"{m}\" y=\"{}\">{name} [{y0:.4}, {y1:.4}]</text>",
            top - 6.0
        )?;
        let pts: Vec<String> = xs
            .iter()
            .zip(&v)
            .filter(|(a, b)| a.is_finite() && b.is_finite())
            .map(|(&a, &b)| {
                let px = m + (a - x0) / (x1 - x0) * pw;
                let py = top + ph - (b - y0) / (y1 - y0) * ph;
                format!("{px:.1},{py:.1}")
            })
            .collect();
        writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.2\" points=\"{}\"/>",
            pts.join(" ")
        )?;
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Bars of the mean of `value` grouped by the integer column `group`.
pub fn grouped_bars(t: &Table, group: &str, value: &str) -> Result<String> {
    let g = t.column(group)?;
    let v = t.column(value)?;
    let mut groups: Vec<(i64, f64, usize)> = Vec::new();
    for (&a, &b) in g.iter().zip(&v) {
        let key = a as i64;
        match groups.iter_mut().find(|e| e.0 == key) {
            Some(e) => {
                e.1 += b;
                e.2 += 1;
            }
            None => groups.push((key, b, 1)),
        }
    }
    groups.sort_by_key(|e| e.0);
    let means: Vec<f64> = groups.iter().map(|e| e.1 / e.2 as f64).collect();
    let top = means.iter().cloned().fold(0.0, f64::max).max(1e-9);
    let (bw, ph, m) = (40.0, 220.0, 45.0);
    let w = 2.0 * m + groups.len() as f64 * (bw + 10.0);
    let mut s = open(w, ph + 2.0 * m);
    writeln!(
        s,
        "<text x=\"{m}\" y=\"{}\">mean {value} by {group} (max {top:.4})</text>",
        m - 15.0
    )?;
    for (i, (e, mean)) in groups.iter().zip(&means).enumerate() {
        let h = mean / top * ph;
        let x = m + i as f64 * (bw + 10.0);
        writeln!(
            s,
            "<rect x=\"{x}\" y=\"{}\" width=\"{bw}\" height=\"{h:.1}\" fill=\"#d62728\"/>",
            m + ph - h
        )?;
        writeln!(s, "<text x=\"{x}\" y=\"{}\">{}</text>", m + ph + 14.0, e.0)?;
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Heatmap of a matrix CSV whose first column labels rows and whose header labels columns.
pub fn heatmap(t: &Table) -> Result<String> {
    let cols = t.header.len() - 1;
    if cols == 0 {
        bail!("heatmap needs at least one value column");
    }
    let (c, m) = (28.0, 60.0);
    let mut s = open(2.0 * m + cols as f64 * c, 2.0 * m + t.rows.len() as f64 * c);
    writeln!(s, "<text x=\"{m}\" y=\"20\">{}</text>", t.header[0])?;
    for (j, h) in t.header[1..].iter().enumerate() {
        writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" font-size=\"9\">{h}</text>",
            m + j as f64 * c + 2.0,
            m - 6.0
        )?;
    }
    for (i, r) in t.rows.iter().enumerate() {
        let y = m + i as f64 * c;
        writeln!(
            s,
            "<text x=\"8\" y=\"{}\" font-size=\"9\">{}</text>",
            y + c * 0.6,
            r[0]
        )?;
        for (j, v) in r[1..].iter().enumerate() {
            let g = (255.0 * (1.0 - v.clamp(0.0, 1.0))) as u8;
            writeln!(
                s,
                "<rect x=\"{}\" y=\"{y}\" width=\"{c}\" height=\"{c}\" fill=\"rgb(255,{g},{g})\"><title>{v:.4}</title></rect>",
                m + j as f64 * c
            )?;
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_rejects_empty_and_ragged() {
        assert!(Table::parse("").is_err());
        assert!(Table::parse("a,b\n").is_err());
        assert!(Table::parse("a,b\n1\n").is_err());
        assert!(Table::parse("a,b\n1,x\n").is_err());
        let t = Table::parse("a,b\n1,2\n3,4\n").unwrap();
        assert_eq!(t.column("b").unwrap(), vec![2.0, 4.0]);
    }

    #[test]
    fn renders_all_kinds() {
        let t = Table::parse("iteration,level,loss\n0,1,0.5\n1,1,0.25\n2,2,0.1\n").unwrap();
        let c = curves(&t, "iteration", &["loss"]).unwrap();
        assert!(c.starts_with("<svg") && c.contains("polyline"));
        let b = grouped_bars(&t, "level", "loss").unwrap();
        assert_eq!(b.matches("fill=\"#d62728\"").count(), 2);
        let h = heatmap(&Table::parse("phi\\sigma,0,0.5\n0,1,0.5\n0.5,0.2,0\n").unwrap()).unwrap();
        assert_eq!(h.matches("<title>").count(), 4);
        assert!(curves(&t, "iteration", &["missing"]).is_err());
    }
}
