//! SVG figures rendered from the CSV outputs of earlier runs.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use plotters::prelude::*;

use crate::manifest::Run;

/// CSV files the plotter knows how to render.
pub const KNOWN_CSV: [&str; 5] = ["curve.csv", "eval.csv", "convergence.csv", "openloop_summary.csv", "sweep_summary.csv"];

pub fn default_output_dir(input: &Path) -> PathBuf {
    let base = if input.is_file() || input.extension().is_some() {
        input.parent().map(Path::to_path_buf).unwrap_or_default()
    } else {
        input.to_path_buf()
    };
    base.join("plots")
}

/// A CSV file held as strings with numeric column access.
pub struct Table {
    path: PathBuf,
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Table> {
        let mut r = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
        let headers = r
            .headers()
            .with_context(|| format!("malformed CSV {}", path.display()))?
            .iter()
            .map(String::from)
            .collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|r| r.iter().map(String::from).collect()))
            .collect::<std::result::Result<Vec<Vec<String>>, _>>()
            .with_context(|| format!("malformed CSV {}", path.display()))?;
        Ok(Table {
            path: path.to_path_buf(),
            headers,
            rows,
        })
    }

    fn index(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("{} has no '{name}' column", self.path.display()))
    }

    pub fn text(&self, name: &str) -> Result<Vec<String>> {
        let i = self.index(name)?;
        Ok(self.rows.iter().map(|r| r[i].clone()).collect())
    }

    pub fn numbers(&self, name: &str) -> Result<Vec<f64>> {
        let i = self.index(name)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(k, r)| {
                r[i].parse::<f64>()
                    .with_context(|| format!("{} row {}: '{}' in column '{name}' is not a number", self.path.display(), k + 1, r[i]))
            })
            .collect()
    }
}

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    /// Lower and upper envelope at every point.
    pub band: Option<Vec<(f64, f64)>>,
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 * lo.abs().max(1.0) };
    (lo - pad, hi + pad)
}

/// Line chart with optional shaded bands.
pub fn line_chart(path: &Path, title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<()> {
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let ys = series.iter().flat_map(|s| {
        s.points
            .iter()
            .map(|p| p.1)
            .chain(s.band.iter().flatten().flat_map(|&(l, h)| [l, h]))
    });
    let (x0, x1) = bounds(xs);
    let (y0, y1) = bounds(ys);
    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    let draw = |root: &DrawingArea<SVGBackend, plotters::coord::Shift>| -> std::result::Result<(), Box<dyn std::error::Error>> {
        root.fill(&WHITE)?;
        let mut chart = ChartBuilder::on(root)
            .caption(title, ("sans-serif", 22))
            .margin(15)
            .x_label_area_size(45)
            .y_label_area_size(70)
            .build_cartesian_2d(x0..x1, y0..y1)?;
        chart.configure_mesh().x_desc(x_label).y_desc(y_label).draw()?;
        for (i, s) in series.iter().enumerate() {
            let color = Palette99::pick(i).to_rgba();
            if let Some(band) = &s.band {
                let mut poly: Vec<(f64, f64)> = s.points.iter().zip(band).map(|(p, b)| (p.0, b.0)).collect();
                poly.extend(s.points.iter().zip(band).rev().map(|(p, b)| (p.0, b.1)));
                poly.retain(|p| p.0.is_finite() && p.1.is_finite());
                chart.draw_series(std::iter::once(Polygon::new(poly, color.mix(0.2).filled())))?;
            }
            let pts: Vec<(f64, f64)> = s.points.iter().copied().filter(|p| p.0.is_finite() && p.1.is_finite()).collect();
            chart
                .draw_series(LineSeries::new(pts.clone(), color.stroke_width(2)))?
                .label(s.name.clone())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
            chart.draw_series(pts.into_iter().map(|p| Circle::new(p, 3, color.filled())))?;
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()?;
        root.present()?;
        Ok(())
    };
    draw(&root).map_err(|e| anyhow::anyhow!("cannot render {}: {e}", path.display()))
}

fn zip(xs: &[f64], ys: &[f64]) -> Vec<(f64, f64)> {
    xs.iter().copied().zip(ys.iter().copied()).collect()
}

fn plot_curve(t: &Table, run: &mut Run) -> Result<()> {
    let it = t.numbers("iteration")?;
    let mean = t.numbers("mean_return")?;
    let std = t.numbers("std_return")?;
    let band = mean.iter().zip(&std).map(|(m, s)| (m - s, m + s)).collect();
    let name = "curve_mean_return.svg";
    line_chart(
        &run.path(name),
        "Mean episode return",
        "iteration",
        "return (band: one std)",
        &[Series {
            name: "mean return".into(),
            points: zip(&it, &mean),
            band: Some(band),
        }],
    )?;
    run.record(name);
    for metric in ["std_return", "mean_kl", "kl_coeff"] {
        let name = format!("curve_{metric}.svg");
        line_chart(
            &run.path(&name),
            metric,
            "iteration",
            metric,
            &[Series {
                name: metric.into(),
                points: zip(&it, &t.numbers(metric)?),
                band: None,
            }],
        )?;
        run.record(name);
    }
    Ok(())
}

fn ci_band(lo: &[f64], hi: &[f64]) -> Option<Vec<(f64, f64)>> {
    Some(lo.iter().copied().zip(hi.iter().copied()).collect())
}

fn plot_eval(t: &Table, run: &mut Run) -> Result<()> {
    let n = t.numbers("n_agents")?;
    let name = "eval_mean.svg";
    line_chart(
        &run.path(name),
        "Evaluation return",
        "N",
        "mean return (95% CI)",
        &[Series {
            name: "policy".into(),
            points: zip(&n, &t.numbers("mean")?),
            band: ci_band(&t.numbers("ci_low")?, &t.numbers("ci_high")?),
        }],
    )?;
    run.record(name);
    Ok(())
}

fn plot_convergence(t: &Table, run: &mut Run) -> Result<()> {
    let n = t.numbers("n_agents")?;
    let times = t.numbers("t")?;
    let gap = t.numbers("mean_gap")?;
    let (lo, hi) = (t.numbers("ci_low")?, t.numbers("ci_high")?);
    let mut distinct: Vec<f64> = times.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    for step in distinct {
        let sel: Vec<usize> = (0..n.len()).filter(|&i| times[i] == step).collect();
        let lg = |v: f64| if v > 0.0 { v.log10() } else { f64::NAN };
        let name = format!("convergence_t{step}.svg");
        line_chart(
            &run.path(&name),
            &format!("Reward gap to the reference at t = {step}"),
            "log10 N",
            "log10 mean gap (95% CI)",
            &[Series {
                name: "mean gap".into(),
                points: sel.iter().map(|&i| (lg(n[i]), lg(gap[i]))).collect(),
                band: Some(sel.iter().map(|&i| (lg(lo[i].max(gap[i] * 1e-3)), lg(hi[i]))).collect()),
            }],
        )?;
        run.record(name);
    }
    Ok(())
}

fn plot_openloop(t: &Table, run: &mut Run) -> Result<()> {
    let n = t.numbers("n_agents")?;
    let name = "openloop.svg";
    line_chart(
        &run.path(name),
        "Closed-loop and open-loop return",
        "N",
        "mean return (95% CI)",
        &[
            Series {
                name: "closed loop".into(),
                points: zip(&n, &t.numbers("closed_mean")?),
                band: ci_band(&t.numbers("closed_ci_low")?, &t.numbers("closed_ci_high")?),
            },
            Series {
                name: "open loop".into(),
                points: zip(&n, &t.numbers("open_mean")?),
                band: ci_band(&t.numbers("open_ci_low")?, &t.numbers("open_ci_high")?),
            },
        ],
    )?;
    run.record(name);
    Ok(())
}

fn plot_sweep(t: &Table, run: &mut Run) -> Result<()> {
    let n = t.numbers("n_agents")?;
    let labels = t.text("c_rep")?;
    let metrics = [
        ("return", "mean_return", "return_ci_low", "return_ci_high"),
        ("min_distance", "mean_min_distance", "min_distance_ci_low", "min_distance_ci_high"),
    ];
    let mut sizes = n.clone();
    sizes.sort_by(f64::total_cmp);
    sizes.dedup();
    for size in sizes {
        for (tag, mean, lo, hi) in metrics {
            let (m, l, h) = (t.numbers(mean)?, t.numbers(lo)?, t.numbers(hi)?);
            let mut sweep = Vec::new();
            let mut plain = None;
            for i in (0..n.len()).filter(|&i| n[i] == size) {
                match labels[i].parse::<f64>() {
                    Ok(c) if c > 0.0 => sweep.push((c.log10(), m[i], l[i], h[i])),
                    Ok(_) => {}
                    Err(_) => plain = Some(m[i]),
                }
            }
            let mut series = vec![Series {
                name: "collision avoidance".into(),
                points: sweep.iter().map(|s| (s.0, s.1)).collect(),
                band: Some(sweep.iter().map(|s| (s.2, s.3)).collect()),
            }];
            if let (Some(p), Some(first), Some(last)) = (plain, sweep.first(), sweep.last()) {
                series.push(Series {
                    name: "plain".into(),
                    points: vec![(first.0, p), (last.0, p)],
                    band: None,
                });
            }
            let name = format!("sweep_n{size}_{tag}.svg");
            line_chart(&run.path(&name), &format!("{tag} against c_rep, N = {size}"), "log10 c_rep", tag, &series)?;
            run.record(name);
        }
    }
    Ok(())
}

fn render(csv: &Path, run: &mut Run) -> Result<()> {
    let name = csv.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    let table = Table::read(csv)?;
    match name {
        "curve.csv" => plot_curve(&table, run),
        "eval.csv" => plot_eval(&table, run),
        "convergence.csv" => plot_convergence(&table, run),
        "openloop_summary.csv" => plot_openloop(&table, run),
        "sweep_summary.csv" => plot_sweep(&table, run),
        _ => bail!("do not know how to plot {} (expected one of {})", csv.display(), KNOWN_CSV.join(", ")),
    }
}

/// Renders `input`, either one known CSV file or every known CSV inside a
/// run directory.
pub fn cmd_plot(input: &Path, run: &mut Run) -> Result<()> {
    if input.is_dir() {
        let found: Vec<PathBuf> = KNOWN_CSV.iter().map(|n| input.join(n)).filter(|p| p.is_file()).collect();
        if found.is_empty() {
            bail!("{} contains none of {}", input.display(), KNOWN_CSV.join(", "));
        }
        for csv in found {
            render(&csv, run)?;
        }
        Ok(())
    } else if input.is_file() {
        render(input, run)
    } else {
        bail!("input {} does not exist", input.display())
    }
}
