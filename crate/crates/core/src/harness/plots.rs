//! Mean ± std band plots rendered to SVG. Solid lines are true values or
//! returns, dashed lines are estimates.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use super::mean_std;
use crate::error::{Error, Result};

const PALETTE: [RGBColor; 5] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(148, 103, 189),
    RGBColor(255, 127, 14),
];

struct Panel {
    file_suffix: &'static str,
    title: &'static str,
    x_label: &'static str,
    y_label: &'static str,
    /// `(column, dashed)` pairs drawn for every algorithm.
    series: Vec<(&'static str, bool)>,
}

/// `(x, mean, std)` points per algorithm and column.
type Curves = BTreeMap<(String, &'static str), Vec<(f64, f64, f64)>>;

/// Renders one SVG per panel type for each CSV (inventory iterations or
/// cart-pole checkpoints) into `out_dir`; returns the written paths.
pub fn emit_plots(csv_files: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for path in csv_files {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        let column = |name: &str| headers.iter().position(|h| h == name);
        let (x_col, panels) = if column("k").is_some() {
            ("k", inventory_panels())
        } else if column("env_step").is_some() {
            ("env_step", cartpole_panels())
        } else {
            return Err(Error::Config(format!(
                "{}: missing an iteration column (`k` or `env_step`)",
                path.display()
            )));
        };
        let mut needed = vec!["algo", x_col];
        for panel in &panels {
            needed.extend(panel.series.iter().map(|(c, _)| *c));
        }
        let mut index = BTreeMap::new();
        for name in needed {
            let i = column(name).ok_or_else(|| {
                Error::Config(format!("{}: missing column `{name}`", path.display()))
            })?;
            index.insert(name, i);
        }

        // (algo, column) → x → samples across seeds.
        let mut samples: BTreeMap<(String, &'static str), BTreeMap<u64, Vec<f64>>> =
            BTreeMap::new();
        let mut n_rows = 0usize;
        for record in reader.records() {
            let record = record?;
            n_rows += 1;
            let algo = record[index["algo"]].to_string();
            let x: f64 = parse_cell(&record[index[x_col]], path)?;
            for panel in &panels {
                for &(name, _) in &panel.series {
                    let v = parse_cell(&record[index[name]], path)?;
                    if v.is_finite() {
                        samples
                            .entry((algo.clone(), name))
                            .or_default()
                            .entry(x.to_bits())
                            .or_default()
                            .push(v);
                    }
                }
            }
        }
        if n_rows == 0 {
            return Err(Error::Config(format!("{}: no data rows", path.display())));
        }
        let curves: Curves = samples
            .into_iter()
            .map(|(key, by_x)| {
                let mut points: Vec<(f64, f64, f64)> = by_x
                    .into_iter()
                    .map(|(bits, vs)| {
                        let (m, s) = mean_std(&vs).expect("non-empty");
                        (f64::from_bits(bits), m, s)
                    })
                    .collect();
                points.sort_by(|a, b| a.0.total_cmp(&b.0));
                (key, points)
            })
            .collect();

        std::fs::create_dir_all(out_dir)?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("plot");
        for panel in &panels {
            let target = out_dir.join(format!("{stem}_{}.svg", panel.file_suffix));
            draw_panel(&target, panel, &curves)?;
            written.push(target);
        }
    }
    Ok(written)
}

fn parse_cell(cell: &str, path: &Path) -> Result<f64> {
    cell.parse::<f64>()
        .map_err(|_| Error::Config(format!("{}: non-numeric cell `{cell}`", path.display())))
}

fn inventory_panels() -> Vec<Panel> {
    vec![
        Panel {
            file_suffix: "values",
            title: "Mean value over states",
            x_label: "iteration k",
            y_label: "value",
            series: vec![("mean_true_value", false), ("mean_estimated_value", true)],
        },
        Panel {
            file_suffix: "bellman_residual",
            title: "Bellman residual",
            x_label: "iteration k",
            y_label: "sup-norm residual",
            series: vec![("bellman_residual", false)],
        },
    ]
}

fn cartpole_panels() -> Vec<Panel> {
    vec![
        Panel {
            file_suffix: "returns",
            title: "Undiscounted evaluation return",
            x_label: "environment steps",
            y_label: "return",
            series: vec![("mean_undiscounted_return", false)],
        },
        Panel {
            file_suffix: "lower_bound",
            title: "Discounted return and critic start estimate",
            x_label: "environment steps",
            y_label: "discounted value",
            series: vec![
                ("mean_discounted_return", false),
                ("mean_critic_start_estimate", true),
            ],
        },
    ]
}

fn draw_panel(target: &Path, panel: &Panel, curves: &Curves) -> Result<()> {
    let plot_err =
        |e: &dyn std::fmt::Display| Error::Config(format!("plot {}: {e}", target.display()));
    let mut algos: Vec<&String> = curves.keys().map(|(a, _)| a).collect();
    algos.dedup();
    let selected: Vec<(&String, &'static str, bool, &Vec<(f64, f64, f64)>)> = algos
        .iter()
        .flat_map(|algo| {
            panel.series.iter().filter_map(move |&(column, dashed)| {
                curves
                    .get(&((*algo).clone(), column))
                    .map(|pts| (*algo, column, dashed, pts))
            })
        })
        .collect();
    let points = selected.iter().flat_map(|(_, _, _, pts)| pts.iter());
    let (mut x_lo, mut x_hi, mut y_lo, mut y_hi) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for &(x, m, s) in points {
        x_lo = x_lo.min(x);
        x_hi = x_hi.max(x);
        y_lo = y_lo.min(m - s);
        y_hi = y_hi.max(m + s);
    }
    if !x_lo.is_finite() {
        return Err(Error::Config(format!(
            "plot {}: no finite values",
            target.display()
        )));
    }
    if x_hi <= x_lo {
        x_hi = x_lo + 1.0;
    }
    let pad = ((y_hi - y_lo) * 0.05).max(1e-9);
    let (y_lo, y_hi) = (y_lo - pad, y_hi + pad);

    let root = SVGBackend::new(target, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(panel.title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x_lo..x_hi, y_lo..y_hi)
        .map_err(|e| plot_err(&e))?;
    chart
        .configure_mesh()
        .x_desc(panel.x_label)
        .y_desc(panel.y_label)
        .draw()
        .map_err(|e| plot_err(&e))?;

    for (i, algo) in algos.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        for &(a, column, dashed, pts) in selected.iter().filter(|s| s.0 == *algo) {
            let mut band: Vec<(f64, f64)> = pts.iter().map(|&(x, m, s)| (x, m + s)).collect();
            band.extend(pts.iter().rev().map(|&(x, m, s)| (x, m - s)));
            chart
                .draw_series(std::iter::once(Polygon::new(
                    band,
                    color.mix(0.15).filled(),
                )))
                .map_err(|e| plot_err(&e))?;
            let line = pts.iter().map(|&(x, m, _)| (x, m));
            let label = format!(
                "{a} {}",
                column.trim_start_matches("mean_").replace('_', " ")
            );
            let style = color.stroke_width(2);
            if dashed {
                chart
                    .draw_series(DashedLineSeries::new(line, 6, 4, style))
                    .map_err(|e| plot_err(&e))?
                    .label(label)
                    .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
            } else {
                chart
                    .draw_series(LineSeries::new(line, style))
                    .map_err(|e| plot_err(&e))?
                    .label(label)
                    .legend(move |(x, y)| {
                        PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2))
                    });
            }
        }
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| plot_err(&e))?;
    root.present().map_err(|e| plot_err(&e))?;
    Ok(())
}
