//! Loss-curve CSV logs and their SVG polyline plots.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Append-only numeric CSV with a fixed header.
pub struct LossLog {
    file: File,
}

impl LossLog {
    /// With `fresh`, truncates and writes the header; otherwise appends.
    pub fn open(path: &Path, header: &[&str], fresh: bool) -> Result<Self> {
        let fresh = fresh || !path.exists();
        let mut file = OpenOptions::new().create(true).write(true).append(!fresh).truncate(fresh).open(path)?;
        if fresh {
            writeln!(file, "{}", header.join(","))?;
        }
        Ok(Self { file })
    }

    pub fn append(&mut self, row: &[f64]) -> Result<()> {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(self.file, "{}", line.join(","))?;
        Ok(())
    }
}

/// Header and rows of a log written by [`LossLog`].
pub fn read_loss_log(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        rows.push(
            rec.iter()
                .map(|v| v.parse().map_err(|_| Error::Data(format!("{}: `{v}` is not a number", path.display()))))
                .collect::<Result<Vec<f64>>>()?,
        );
    }
    Ok((header, rows))
}

/// A self-contained SVG with one polyline per series, each scaled to the
/// shared axis range.
pub fn svg_plot(title: &str, x_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const M: f64 = 56.0;
    const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    let pts = series.iter().flat_map(|(_, s)| s.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
    let sy = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);

    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{title}</text>\n\
         <line x1=\"{M}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{}\" stroke=\"black\"/>\n",
        W / 2.0,
        H - M,
        W - M,
        H - M,
        H - M
    );
    let label = |x: f64, y: f64, anchor: &str, text: String| {
        format!("<text x=\"{x:.1}\" y=\"{y:.1}\" text-anchor=\"{anchor}\" font-family=\"sans-serif\" font-size=\"11\">{text}</text>\n")
    };
    s += &label(M, H - M + 16.0, "middle", format!("{x0}"));
    s += &label(W - M, H - M + 16.0, "middle", format!("{x1}"));
    s += &label(W / 2.0, H - 12.0, "middle", x_label.to_string());
    s += &label(M - 6.0, H - M, "end", format!("{y0:.4}"));
    s += &label(M - 6.0, M + 4.0, "end", format!("{y1:.4}"));
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let coords: Vec<String> = pts
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        s += &format!("<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n", coords.join(" "));
        s += &format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" fill=\"{color}\" font-family=\"sans-serif\" font-size=\"12\">{name}</text>\n",
            W - M - 120.0,
            M + 16.0 * (i as f64 + 1.0)
        );
    }
    s += "</svg>\n";
    s
}

/// Writes `<log>.svg` next to a loss log: column 0 is the x axis, every
/// other column whose name contains `loss` becomes a series.
pub fn write_loss_curve(log: &Path, title: &str) -> Result<()> {
    let (header, rows) = read_loss_log(log)?;
    let series: Vec<(String, Vec<(f64, f64)>)> = header
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, h)| h.contains("loss"))
        .map(|(i, h)| (h.clone(), rows.iter().map(|r| (r[0], r[i])).collect()))
        .collect();
    std::fs::write(log.with_extension("svg"), svg_plot(title, &header[0], &series))?;
    Ok(())
}
