//! Pure-text SVG learning curves.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use tar2::training::{MetricsRow, SUCCESS_WINDOW};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 24.0;
const MARGIN_B: f64 = 48.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Raised when a metrics file does not match the expected columns.
#[derive(Debug)]
pub struct SchemaMismatch(pub String);

impl std::fmt::Display for SchemaMismatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for SchemaMismatch {}

pub fn read_returns(path: &Path) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header != MetricsRow::HEADER {
        return Err(SchemaMismatch(format!(
            "{}: columns {:?} do not match {:?}",
            path.display(),
            header,
            MetricsRow::HEADER
        ))
        .into());
    }
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<MetricsRow>().enumerate() {
        let row = row.map_err(|e| SchemaMismatch(format!("{}: row {}: {e}", path.display(), i + 1)))?;
        out.push(row.return_env);
    }
    Ok(out)
}

/// Runs inside `.../<arm>/seed<k>/` are grouped under `<arm>`; anything else
/// is labelled by its parent directory, or its file stem.
pub fn group_label(path: &Path) -> String {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty());
    let name = |p: &Path| p.file_name().map(|s| s.to_string_lossy().into_owned());
    if let Some(dir) = parent {
        let dname = name(dir).unwrap_or_default();
        let seedish = dname.strip_prefix("seed").is_some_and(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()));
        if seedish {
            if let Some(arm) = dir.parent().and_then(name) {
                return arm;
            }
        }
        if !dname.is_empty() && dname != "." && dname != ".." {
            return dname;
        }
    }
    path.file_stem().map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned())
}

pub fn trailing_average(xs: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(xs.len());
    let mut sum = 0.0;
    for i in 0..xs.len() {
        sum += xs[i];
        if i >= window {
            sum -= xs[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

struct Series {
    label: String,
    mean: Vec<f64>,
    std: Option<Vec<f64>>,
}

fn summarise(label: String, runs: &[Vec<f64>]) -> Series {
    let len = runs.iter().map(Vec::len).min().unwrap_or(0);
    let smoothed: Vec<Vec<f64>> = runs.iter().map(|r| trailing_average(&r[..len], SUCCESS_WINDOW)).collect();
    let n = smoothed.len() as f64;
    let mean: Vec<f64> = (0..len).map(|i| smoothed.iter().map(|s| s[i]).sum::<f64>() / n).collect();
    let std = (smoothed.len() > 1).then(|| {
        (0..len)
            .map(|i| (smoothed.iter().map(|s| (s[i] - mean[i]).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
            .collect()
    });
    Series { label, mean, std }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn nice_step(range: f64) -> f64 {
    let raw = range / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let r = raw / mag;
    mag * if r < 1.5 {
        1.0
    } else if r < 3.5 {
        2.0
    } else if r < 7.5 {
        5.0
    } else {
        10.0
    }
}

fn render(series: &[Series]) -> String {
    let len = series.iter().map(|s| s.mean.len()).max().unwrap_or(0).max(2);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in series {
        for (i, m) in s.mean.iter().enumerate() {
            let d = s.std.as_ref().map_or(0.0, |sd| sd[i]);
            lo = lo.min(m - d);
            hi = hi.max(m + d);
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    lo = lo.min(0.0);
    if hi - lo < 1e-9 {
        hi = lo + 1.0;
    }
    let pw = WIDTH - MARGIN_L - MARGIN_R;
    let ph = HEIGHT - MARGIN_T - MARGIN_B;
    let x = |i: usize| MARGIN_L + pw * i as f64 / (len - 1) as f64;
    let y = |v: f64| MARGIN_T + ph * (1.0 - (v - lo) / (hi - lo));

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let ystep = nice_step(hi - lo);
    let mut v = (lo / ystep).ceil() * ystep;
    while v <= hi + 1e-12 {
        let yy = y(v);
        let _ = writeln!(
            svg,
            "<line x1=\"{MARGIN_L:.2}\" y1=\"{yy:.2}\" x2=\"{:.2}\" y2=\"{yy:.2}\" stroke=\"#e0e0e0\"/>\n<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>",
            MARGIN_L + pw,
            MARGIN_L - 6.0,
            yy + 4.0,
            fmt_tick(v)
        );
        v += ystep;
    }
    let xstep = nice_step((len - 1) as f64).max(1.0);
    let mut e = 0.0;
    while e <= (len - 1) as f64 + 1e-9 {
        let xx = x(e as usize);
        let _ = writeln!(
            svg,
            "<text x=\"{xx:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
            MARGIN_T + ph + 18.0,
            e as usize
        );
        e += xstep;
    }
    let _ = writeln!(
        svg,
        "<rect x=\"{MARGIN_L:.2}\" y=\"{MARGIN_T:.2}\" width=\"{pw:.2}\" height=\"{ph:.2}\" fill=\"none\" stroke=\"black\"/>"
    );
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">episode</text>",
        MARGIN_L + pw / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        svg,
        "<text transform=\"translate(16 {:.2}) rotate(-90)\" text-anchor=\"middle\">return (trailing {SUCCESS_WINDOW} mean)</text>",
        MARGIN_T + ph / 2.0
    );
    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        if let Some(sd) = &s.std {
            let mut pts = String::new();
            for i in 0..s.mean.len() {
                let _ = write!(pts, "{:.2},{:.2} ", x(i), y(s.mean[i] + sd[i]));
            }
            for i in (0..s.mean.len()).rev() {
                let _ = write!(pts, "{:.2},{:.2} ", x(i), y(s.mean[i] - sd[i]));
            }
            let _ = writeln!(
                svg,
                "<polygon points=\"{}\" fill=\"{color}\" fill-opacity=\"0.2\" stroke=\"none\"/>",
                pts.trim_end()
            );
        }
        let mut pts = String::new();
        for (i, m) in s.mean.iter().enumerate() {
            let _ = write!(pts, "{:.2},{:.2} ", x(i), y(*m));
        }
        let _ = writeln!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
            pts.trim_end()
        );
        let ly = MARGIN_T + 16.0 + 18.0 * si as f64;
        let lx = MARGIN_L + pw + 12.0;
        let _ = writeln!(
            svg,
            "<line x1=\"{lx:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" stroke=\"{color}\" stroke-width=\"3\"/>\n<text x=\"{:.2}\" y=\"{:.2}\">{}</text>",
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

/// Builds the chart for `paths`; groups come out in label order.
pub fn plot_metrics(paths: &[PathBuf]) -> Result<String> {
    if paths.is_empty() {
        bail!("no metrics files given");
    }
    let mut groups: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for p in paths {
        let returns = read_returns(p)?;
        if returns.is_empty() {
            return Err(SchemaMismatch(format!("{}: no rows", p.display())).into());
        }
        groups.entry(group_label(p)).or_default().push(returns);
    }
    let series: Vec<Series> = groups.into_iter().map(|(label, runs)| summarise(label, &runs)).collect();
    Ok(render(&series))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels() {
        assert_eq!(group_label(Path::new("out/tar2/seed3/metrics.csv")), "tar2");
        assert_eq!(group_label(Path::new("runs/a/metrics.csv")), "a");
        assert_eq!(group_label(Path::new("metrics.csv")), "metrics");
        assert_eq!(group_label(Path::new("x/seedling/m.csv")), "seedling");
    }

    #[test]
    fn trailing_window() {
        let s = trailing_average(&[1.0, 3.0, 5.0, 7.0], 2);
        assert_eq!(s, vec![1.0, 2.0, 4.0, 6.0]);
    }

    #[test]
    fn band_only_with_several_runs() {
        let one = render(&[summarise("a".into(), &[vec![1.0, 2.0, 3.0]])]);
        assert!(!one.contains("<polygon"));
        assert_eq!(one.matches("<polyline").count(), 1);
        let two = render(&[summarise("a".into(), &[vec![1.0, 2.0, 3.0], vec![2.0, 2.0, 2.0]])]);
        assert_eq!(two.matches("<polygon").count(), 1);
        assert!(two.starts_with("<svg"));
    }

    #[test]
    fn ticks() {
        assert_eq!(fmt_tick(2.5), "2.5");
        assert_eq!(fmt_tick(10.0), "10");
        assert_eq!(fmt_tick(-0.0001), "0");
        assert_eq!(nice_step(10.0), 2.0);
    }
}
