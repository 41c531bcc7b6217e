//! CSV traces, stats/diff tables, and a minimal SVG line plot.
//!
//! Numeric fields are printed with `{:e}`, whose shortest-round-trip
//! rendering parses back to the identical binary64, so repeated runs are
//! byte-identical.

use std::io::Write;

/// Format a value so it round-trips to the same f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:e}")
}

/// Named trace columns over a shared uniform time grid.
pub struct TraceTable {
    pub dt: f64,
    /// Samples per column (steps + 1).
    pub rows: usize,
    pub columns: Vec<(String, Vec<f64>)>,
}

impl TraceTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("# units: time=s, v(...)=V, i(...)=A\n");
        out.push_str("time");
        for (name, _) in &self.columns {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for row in 0..self.rows {
            out.push_str(&fmt_f64(row as f64 * self.dt));
            for (_, data) in &self.columns {
                out.push(',');
                out.push_str(&fmt_f64(data[row]));
            }
            out.push('\n');
        }
        out
    }

    /// Single-plot SVG with one polyline per column.
    pub fn to_svg(&self) -> String {
        const W: f64 = 800.0;
        const H: f64 = 400.0;
        const ML: f64 = 60.0; // left margin
        const MR: f64 = 10.0;
        const MT: f64 = 10.0;
        const MB: f64 = 30.0;
        let palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

        let tmax = (self.rows.saturating_sub(1)) as f64 * self.dt;
        let mut vmin = f64::INFINITY;
        let mut vmax = f64::NEG_INFINITY;
        for (_, data) in &self.columns {
            for &v in &data[..self.rows] {
                vmin = vmin.min(v);
                vmax = vmax.max(v);
            }
        }
        if !vmin.is_finite() || vmin == vmax {
            vmin -= 1.0;
            vmax += 1.0;
        }
        let x_of = |t: f64| ML + (W - ML - MR) * if tmax > 0.0 { t / tmax } else { 0.0 };
        let y_of = |v: f64| H - MB - (H - MT - MB) * (v - vmin) / (vmax - vmin);

        let mut out = String::new();
        out.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {W} {H}\">\n"
        ));
        out.push_str(&format!(
            "<rect x=\"0\" y=\"0\" width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"
        ));
        out.push_str(&format!(
            "<line x1=\"{ML}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
            H - MB,
            W - MR,
            H - MB
        ));
        out.push_str(&format!(
            "<line x1=\"{ML}\" y1=\"{MT}\" x2=\"{ML}\" y2=\"{}\" stroke=\"black\"/>\n",
            H - MB
        ));
        out.push_str(&format!(
            "<text x=\"{ML}\" y=\"{}\" font-size=\"12\">0</text>\n",
            H - MB + 16.0
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"end\">{}</text>\n",
            W - MR,
            H - MB + 16.0,
            fmt_f64(tmax)
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"end\">{}</text>\n",
            ML - 4.0,
            H - MB,
            fmt_f64(vmin)
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"end\">{}</text>\n",
            ML - 4.0,
            MT + 10.0,
            fmt_f64(vmax)
        ));
        for (ci, (name, data)) in self.columns.iter().enumerate() {
            let color = palette[ci % palette.len()];
            let mut points = String::new();
            for (row, &v) in data.iter().enumerate().take(self.rows) {
                if row > 0 {
                    points.push(' ');
                }
                points.push_str(&format!(
                    "{:.2},{:.2}",
                    x_of(row as f64 * self.dt),
                    y_of(v)
                ));
            }
            out.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.2\" points=\"{points}\"/>\n"
            ));
            out.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{color}\">{name}</text>\n",
                ML + 8.0,
                MT + 14.0 * (ci as f64 + 1.0)
            ));
        }
        out.push_str("</svg>\n");
        out
    }
}

/// Write text to `dir/name`, creating the directory first.
pub fn write_output(dir: &std::path::Path, name: &str, text: &str) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut f = std::fs::File::create(dir.join(name))?;
    f.write_all(text.as_bytes())
}
