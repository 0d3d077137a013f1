//! Static SVG curves from the CSVs the other commands write.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};

use turboae::evaluate::moving_average;

pub const TRAINING_WINDOW: usize = 10;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(path: &Path) -> anyhow::Result<Self> {
        let mut reader = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
        let headers = reader
            .headers()
            .with_context(|| format!("{}: malformed header", path.display()))?
            .iter()
            .map(str::to_string)
            .collect::<Vec<_>>();
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.with_context(|| format!("{}: malformed row {}", path.display(), i + 2))?;
            rows.push(rec.iter().map(str::to_string).collect());
        }
        if headers.iter().all(|h| h.is_empty()) || rows.is_empty() {
            bail!("{} has no data rows", path.display());
        }
        Ok(Self { headers, rows })
    }

    fn has(&self, col: &str) -> bool {
        self.headers.iter().any(|h| h == col)
    }

    /// Numeric column; empty cells become NaN and are skipped when drawing.
    fn column(&self, col: &str) -> anyhow::Result<Vec<f64>> {
        let idx = self.headers.iter().position(|h| h == col).ok_or_else(|| anyhow!("no column `{col}`"))?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let cell = r.get(idx).map(String::as_str).unwrap_or("");
                if cell.is_empty() {
                    return Ok(f64::NAN);
                }
                cell.parse().map_err(|_| anyhow!("row {}: `{cell}` in column `{col}` is not a number", i + 2))
            })
            .collect()
    }
}

struct Series {
    label: String,
    x: Vec<f64>,
    y: Vec<f64>,
}

struct Chart {
    title: String,
    x_label: String,
    y_label: String,
    log_y: bool,
    series: Vec<Series>,
}

/// Writes `<stem>.svg` for each CSV into `out_dir` (default: next to the CSV).
pub fn plot(paths: &[PathBuf], out_dir: Option<&Path>) -> anyhow::Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for path in paths {
        let chart = chart_for(path)?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("plot");
        let dir = out_dir.map(Path::to_path_buf).unwrap_or_else(|| path.parent().unwrap_or(Path::new(".")).to_path_buf());
        std::fs::create_dir_all(&dir)?;
        let out = dir.join(format!("{stem}.svg"));
        std::fs::write(&out, render(&chart)?).with_context(|| format!("cannot write {}", out.display()))?;
        written.push(out);
    }
    Ok(written)
}

fn chart_for(path: &Path) -> anyhow::Result<Chart> {
    let t = Table::read(path)?;
    let name = path.display().to_string();
    if t.has("ebno_db") && t.has("ber") && t.has("bler") {
        let x = t.column("ebno_db")?;
        let mut series = vec![
            Series { label: "BER".into(), x: x.clone(), y: t.column("ber")? },
            Series { label: "BLER".into(), x: x.clone(), y: t.column("bler")? },
        ];
        if t.has("uncoded_bpsk_ber") {
            series.push(Series { label: "uncoded BPSK".into(), x: x.clone(), y: t.column("uncoded_bpsk_ber")? });
        }
        if t.has("normal_approx_bler") {
            series.push(Series { label: "normal approx. BLER".into(), x, y: t.column("normal_approx_bler")? });
        }
        return Ok(Chart { title: name, x_label: "Eb/N0 [dB]".into(), y_label: "error rate".into(), log_y: true, series });
    }
    if t.has("epoch") && t.has("eval_ber") {
        let epochs = t.column("epoch")?;
        let ber = t.column("eval_ber")?;
        let smooth = moving_average(&ber, TRAINING_WINDOW)?;
        let series = vec![
            Series { label: "eval BER".into(), x: epochs.clone(), y: ber },
            Series { label: format!("moving average ({TRAINING_WINDOW})"), x: epochs, y: smooth },
        ];
        return Ok(Chart { title: name, x_label: "epoch".into(), y_label: "BER".into(), log_y: true, series });
    }
    if t.has("k") && t.has("snr_at_target_db") {
        let series = vec![Series { label: "SNR at target BER".into(), x: t.column("k")?, y: t.column("snr_at_target_db")? }];
        return Ok(Chart { title: name, x_label: "k".into(), y_label: "Eb/N0 [dB]".into(), log_y: false, series });
    }
    bail!("{name}: unrecognized columns {:?}", t.headers)
}

fn bounds(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    values.filter(|v| v.is_finite()).fold(None, |acc, v| match acc {
        None => Some((v, v)),
        Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
    })
}

fn nice_step(span: f64) -> f64 {
    let raw = span / 6.0;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag)
}

fn render(chart: &Chart) -> anyhow::Result<String> {
    let ty = |v: f64| if chart.log_y { v.log10() } else { v };
    let usable = |v: &f64| v.is_finite() && (!chart.log_y || *v > 0.0);
    let (x0, x1) = bounds(chart.series.iter().flat_map(|s| s.x.iter().copied()))
        .ok_or_else(|| anyhow!("nothing to plot"))?;
    let (y0, y1) = bounds(chart.series.iter().flat_map(|s| s.y.iter().copied().filter(usable).map(ty)))
        .ok_or_else(|| anyhow!("no plottable values (log axis needs positive values)"))?;
    let (x0, x1) = if x1 > x0 { (x0, x1) } else { (x0 - 1.0, x0 + 1.0) };
    let (y0, y1) = if chart.log_y {
        (y0.floor(), if y1.ceil() > y0.floor() { y1.ceil() } else { y0.floor() + 1.0 })
    } else if y1 > y0 {
        let pad = 0.05 * (y1 - y0);
        (y0 - pad, y1 + pad)
    } else {
        (y0 - 1.0, y0 + 1.0)
    };
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#)?;
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#)?;
    writeln!(s, r#"<text x="{}" y="18" text-anchor="middle">{}</text>"#, WIDTH / 2.0, escape(&chart.title))?;
    writeln!(s, r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##)?;

    let step = nice_step(x1 - x0);
    let mut tick = (x0 / step).ceil() * step;
    while tick <= x1 + 1e-9 * step {
        let x = px(tick);
        writeln!(s, r##"<line x1="{x:.1}" y1="{TOP}" x2="{x:.1}" y2="{:.1}" stroke="#ddd"/>"##, TOP + ph)?;
        writeln!(s, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, TOP + ph + 16.0, fmt_tick(tick))?;
        tick += step;
    }
    let y_ticks: Vec<f64> = if chart.log_y {
        (y0 as i32..=y1 as i32).map(f64::from).collect()
    } else {
        let step = nice_step(y1 - y0);
        let first = (y0 / step).ceil() as i64;
        let last = (y1 / step).floor() as i64;
        (first..=last).map(|i| i as f64 * step).collect()
    };
    for t in y_ticks {
        let y = py(t);
        let label = if chart.log_y { format!("1e{}", t as i32) } else { fmt_tick(t) };
        writeln!(s, r##"<line x1="{LEFT}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/>"##, LEFT + pw)?;
        writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{label}</text>"#, LEFT - 6.0, y + 4.0)?;
    }
    writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, HEIGHT - 10.0, escape(&chart.x_label))?;
    writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(&chart.y_label)
    )?;

    for (i, series) in chart.series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let points: Vec<String> = series
            .x
            .iter()
            .zip(&series.y)
            .filter(|(x, y)| x.is_finite() && usable(y))
            .map(|(&x, &y)| format!("{:.1},{:.1}", px(x), py(ty(y))))
            .collect();
        if points.is_empty() {
            continue;
        }
        writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, points.join(" "))?;
        for p in &points {
            let (cx, cy) = p.split_once(',').expect("point has two coordinates");
            writeln!(s, r#"<circle cx="{cx}" cy="{cy}" r="2.5" fill="{color}"/>"#)?;
        }
        let ly = TOP + 16.0 + 16.0 * i as f64;
        let lx = LEFT + pw - 170.0;
        writeln!(s, r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0)?;
        writeln!(s, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, lx + 26.0, ly + 4.0, escape(&series.label))?;
    }
    writeln!(s, "</svg>")?;
    Ok(s)
}

fn fmt_tick(v: f64) -> String {
    let r = (v * 1e6).round() / 1e6;
    if r == r.trunc() {
        format!("{}", r as i64)
    } else {
        format!("{r}")
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn ber_csv_gives_one_svg() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "eval.csv", "ebno_db,bits_sent,bit_errors,ber,blocks_sent,block_errors,bler,seed\n0,100,10,0.1,10,5,0.5,0\n2,100,1,0.01,10,1,0.1,0\n4,100,0,0,10,0,0,0\n");
        let out = plot(&[p], None).unwrap();
        assert_eq!(out.len(), 1);
        let svg = std::fs::read_to_string(&out[0]).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("polyline"));
    }

    #[test]
    fn short_training_curve_still_plots() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "metrics.csv", "epoch,phase,loss,eval_ber,wall_seconds\n1,alternating,0.5,0.2,0\n2,alternating,0.4,0.1,0\n3,alternating,0.3,0.05,0\n");
        assert!(plot(&[p], None).is_ok());
    }

    #[test]
    fn empty_csv_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let empty = write(dir.path(), "empty.csv", "");
        let header_only = write(dir.path(), "header.csv", "epoch,phase,loss,eval_ber,wall_seconds\n");
        assert!(plot(&[empty], None).is_err());
        assert!(plot(&[header_only], None).is_err());
    }

    #[test]
    fn log_ticks_cover_decades() {
        let chart = Chart {
            title: "t".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            log_y: true,
            series: vec![Series { label: "s".into(), x: vec![0.0, 1.0], y: vec![0.3, 2e-3] }],
        };
        let svg = render(&chart).unwrap();
        for label in ["1e-3", "1e-2", "1e-1", "1e0"] {
            assert!(svg.contains(&format!(">{label}<")), "{label}");
        }
    }
}
