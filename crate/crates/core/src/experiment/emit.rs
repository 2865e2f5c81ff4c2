//! CSV and SVG output of a [`CurveSet`].

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{CurveSet, ExperimentError};

pub const RAW_CSV: &str = "raw.csv";
pub const MEAN_CSV: &str = "mean.csv";
pub const PLOT_SVG: &str = "plot.svg";

const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmitPaths {
    pub raw: PathBuf,
    pub mean: PathBuf,
    pub plot: PathBuf,
}

pub fn raw_csv(curves: &CurveSet) -> String {
    let mut s = String::from("run,agent,epoch,return\n");
    for (r, run) in curves.raw.iter().enumerate() {
        for (a, curve) in run.iter().enumerate() {
            for (e, v) in curve.iter().enumerate() {
                let _ = writeln!(s, "{r},{},{e},{v}", curves.agents[a]);
            }
        }
    }
    s
}

pub fn mean_csv(curves: &CurveSet) -> String {
    let mut s = String::from("agent,epoch,mean,smooth\n");
    for (a, name) in curves.agents.iter().enumerate() {
        for (e, (m, sm)) in curves.mean[a].iter().zip(&curves.smooth[a]).enumerate() {
            let _ = writeln!(s, "{name},{e},{m},{sm}");
        }
    }
    s
}

/// Writes `raw.csv`, `mean.csv` and `plot.svg` into `out_dir`, creating it
/// if needed.
pub fn emit(curves: &CurveSet, out_dir: &Path) -> Result<EmitPaths, ExperimentError> {
    fs::create_dir_all(out_dir)
        .map_err(|e| ExperimentError::io(format!("creating {}", out_dir.display()), e))?;
    let paths = EmitPaths {
        raw: out_dir.join(RAW_CSV),
        mean: out_dir.join(MEAN_CSV),
        plot: out_dir.join(PLOT_SVG),
    };
    for (path, body) in [
        (&paths.raw, raw_csv(curves)),
        (&paths.mean, mean_csv(curves)),
        (&paths.plot, plot_svg(curves)),
    ] {
        fs::write(path, body)
            .map_err(|e| ExperimentError::io(format!("writing {}", path.display()), e))?;
    }
    Ok(paths)
}

/// Rebuilds a [`CurveSet`] from a directory written by [`emit`]. Mean and
/// smooth curves are recomputed from `raw.csv`.
pub fn load_curves(dir: &Path) -> Result<CurveSet, ExperimentError> {
    let path = dir.join(RAW_CSV);
    let text = fs::read_to_string(&path)
        .map_err(|e| ExperimentError::io(format!("reading {}", path.display()), e))?;
    let bad = |line: usize, m: &str| {
        ExperimentError::InvalidSpec(format!("{}:{}: {m}", path.display(), line + 1))
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "run,agent,epoch,return")) => {}
        _ => return Err(bad(0, "unexpected header")),
    }
    let mut agents: Vec<String> = Vec::new();
    let mut raw: Vec<Vec<Vec<f64>>> = Vec::new();
    for (i, line) in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad(i, "expected 4 fields"));
        }
        let run: usize = f[0].parse().map_err(|_| bad(i, "bad run"))?;
        let epoch: usize = f[2].parse().map_err(|_| bad(i, "bad epoch"))?;
        let value: f64 = f[3].parse().map_err(|_| bad(i, "bad return"))?;
        let a = match agents.iter().position(|x| x == f[1]) {
            Some(a) => a,
            None => {
                agents.push(f[1].to_string());
                agents.len() - 1
            }
        };
        if run >= raw.len() {
            raw.resize(run + 1, Vec::new());
        }
        let per_run = &mut raw[run];
        if a >= per_run.len() {
            per_run.resize(a + 1, Vec::new());
        }
        if per_run[a].len() != epoch {
            return Err(bad(i, "epochs out of order"));
        }
        per_run[a].push(value);
    }
    CurveSet::from_raw(agents, raw)
}

/// Mean (thin) and smoothed (thick, dashed) curve per agent.
pub fn plot_svg(curves: &CurveSet) -> String {
    const W: f64 = 800.0;
    const H: f64 = 480.0;
    const L: f64 = 60.0;
    const R: f64 = 20.0;
    const T: f64 = 20.0;
    const B: f64 = 50.0;

    let epochs = curves.epochs();
    let ymax = curves
        .mean
        .iter()
        .chain(&curves.smooth)
        .flatten()
        .fold(1.0f64, |m, v| m.max(*v));
    let ymin = curves
        .mean
        .iter()
        .chain(&curves.smooth)
        .flatten()
        .fold(0.0f64, |m, v| m.min(*v));
    let xspan = (epochs.max(2) - 1) as f64;
    let px = |e: usize| L + (W - L - R) * e as f64 / xspan;
    let py = |v: f64| H - B - (H - T - B) * (v - ymin) / (ymax - ymin);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{L} {T} V{} H{}" fill="none" stroke="black"/>"#,
        H - B,
        W - R
    );
    for (e, anchor) in [(0, "start"), (epochs - 1, "end")] {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" text-anchor="{anchor}">{e}</text>"#,
            px(e),
            H - B + 16.0
        );
    }
    for v in [ymin, ymax] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.2}" text-anchor="end">{v:.1}</text>"#,
            L - 6.0,
            py(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">epoch</text>"#,
        (L + W - R) / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">mean return</text>"#,
        (T + H - B) / 2.0,
        (T + H - B) / 2.0
    );

    let polyline = |curve: &[f64]| -> String {
        curve
            .iter()
            .enumerate()
            .map(|(e, v)| format!("{:.2},{:.2}", px(e), py(*v)))
            .collect::<Vec<_>>()
            .join(" ")
    };
    for (a, name) in curves.agents.iter().enumerate() {
        let color = COLORS[a % COLORS.len()];
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1" stroke-opacity="0.6"/>"#,
            polyline(&curves.mean[a])
        );
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2.5" stroke-dasharray="8 4"/>"#,
            polyline(&curves.smooth[a])
        );
        let ly = T + 16.0 * (a as f64 + 1.0);
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2.5"/><text x="{}" y="{}">agent {name} ({} runs)</text>"#,
            L + 12.0,
            L + 36.0,
            L + 42.0,
            ly + 4.0,
            curves.runs()
        );
    }
    s.push_str("</svg>\n");
    s
}
