//! results.csv, summary.json and boxplot.svg for one scenario.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;

use super::study::{Record, SimResult};

#[derive(Serialize)]
struct Row<'a> {
    scenario: &'a str,
    replication: usize,
    estimator: &'a str,
    true_variance: f64,
    expectation: f64,
    relative_bias: Option<f64>,
    sd: f64,
    mc_se: Option<f64>,
}

/// Five-number summary plus the mean.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Quantiles {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

impl Quantiles {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let h = p * (v.len() - 1) as f64;
            let lo = h.floor() as usize;
            let hi = h.ceil() as usize;
            v[lo] + (h - lo as f64) * (v[hi] - v[lo])
        };
        Some(Self {
            n: v.len(),
            min: v[0],
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: v[v.len() - 1],
            mean: v.iter().sum::<f64>() / v.len() as f64,
        })
    }
}

#[derive(Serialize)]
struct EstimatorSummary {
    estimator: String,
    relative_bias: Option<Quantiles>,
    sd: Option<Quantiles>,
}

#[derive(Serialize)]
struct Summary<'a> {
    scenario: &'a str,
    spec: &'a super::study::ScenarioSpec,
    replications: usize,
    undefined: usize,
    notes: &'a [String],
    estimators: Vec<EstimatorSummary>,
}

/// Writes the three output files into `dir`, creating it if needed.
pub fn emit_outputs(res: &SimResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut wtr = csv::Writer::from_path(dir.join("results.csv"))?;
    if res.records.is_empty() {
        wtr.write_record([
            "scenario",
            "replication",
            "estimator",
            "true_variance",
            "expectation",
            "relative_bias",
            "sd",
            "mc_se",
        ])?;
    }
    for r in &res.records {
        wtr.serialize(Row {
            scenario: &res.scenario,
            replication: r.replication,
            estimator: &r.estimator,
            true_variance: r.true_variance,
            expectation: r.expectation,
            relative_bias: r.relative_bias,
            sd: r.sd,
            mc_se: r.mc_se,
        })?;
    }
    wtr.flush()?;

    let panels = panels(res);
    let summary = Summary {
        scenario: &res.scenario,
        spec: &res.spec,
        replications: res.spec.n_replications,
        undefined: res.undefined,
        notes: &res.notes,
        estimators: panels
            .iter()
            .map(|(name, rb, sd)| EstimatorSummary {
                estimator: name.clone(),
                relative_bias: Quantiles::of(rb),
                sd: Quantiles::of(sd),
            })
            .collect(),
    };
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    fs::write(dir.join("boxplot.svg"), boxplot_svg(&res.scenario, &panels))?;
    Ok(())
}

type Panel = (String, Vec<f64>, Vec<f64>);

fn panels(res: &SimResult) -> Vec<Panel> {
    res.estimators()
        .into_iter()
        .map(|e| {
            let recs: Vec<&Record> = res.records.iter().filter(|r| r.estimator == e).collect();
            let rb = recs.iter().filter_map(|r| r.relative_bias).collect();
            let sd = recs.iter().map(|r| r.sd).collect();
            (e, rb, sd)
        })
        .collect()
}

const W: f64 = 360.0;
const H: f64 = 300.0;
const PAD: f64 = 50.0;

fn boxplot_svg(title: &str, panels: &[Panel]) -> String {
    let mut s = String::new();
    let width = 2.0 * W + 20.0;
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{}" font-family="sans-serif" font-size="11">"#,
        H + 40.0
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#, width / 2.0, xml(title));
    let rb: Vec<(String, Vec<f64>)> = panels.iter().map(|(n, r, _)| (n.clone(), r.clone())).collect();
    let sd: Vec<(String, Vec<f64>)> = panels.iter().map(|(n, _, d)| (n.clone(), d.clone())).collect();
    panel(&mut s, 0.0, "relative bias", &rb, true);
    panel(&mut s, W + 20.0, "standard deviation", &sd, false);
    s.push_str("</svg>\n");
    s
}

fn panel(s: &mut String, x0: f64, label: &str, data: &[(String, Vec<f64>)], zero_line: bool) {
    let y0 = 30.0;
    let all: Vec<f64> = data.iter().flat_map(|(_, v)| v.iter().copied()).filter(|v| v.is_finite()).collect();
    let (mut lo, mut hi) = all.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    if zero_line {
        lo = lo.min(0.0);
        hi = hi.max(0.0);
    }
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo, hi) = (lo - 0.5, hi + 0.5);
    }
    let plot_h = H - 2.0 * PAD;
    let ys = |v: f64| y0 + PAD + (hi - v) / (hi - lo) * plot_h;
    let _ = writeln!(s, r#"<g transform="translate({x0},0)">"#);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{label}</text>"#, W / 2.0, y0 + 20.0);
    let _ = writeln!(s, r#"<line x1="{PAD}" y1="{}" x2="{PAD}" y2="{}" stroke="black"/>"#, ys(hi), ys(lo));
    for v in [lo, (lo + hi) / 2.0, hi] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
            PAD - 4.0,
            ys(v) + 4.0,
            fmt_tick(v)
        );
    }
    if zero_line {
        let _ = writeln!(
            s,
            r##"<line x1="{PAD}" y1="{0:.1}" x2="{1}" y2="{0:.1}" stroke="#999" stroke-dasharray="4 3"/>"##,
            ys(0.0),
            W - 10.0
        );
    }
    let slot = (W - PAD - 10.0) / data.len().max(1) as f64;
    for (k, (name, v)) in data.iter().enumerate() {
        let cx = PAD + slot * (k as f64 + 0.5);
        let bw = (slot * 0.5).min(40.0);
        if let Some(q) = Quantiles::of(v) {
            let _ = writeln!(
                s,
                r#"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="black"/>"#,
                ys(q.max),
                ys(q.min)
            );
            let _ = writeln!(
                s,
                r##"<rect x="{:.1}" y="{:.1}" width="{bw:.1}" height="{:.1}" fill="#9ecae1" stroke="black"/>"##,
                cx - bw / 2.0,
                ys(q.q3),
                (ys(q.q1) - ys(q.q3)).max(0.5)
            );
            let _ = writeln!(
                s,
                r#"<line x1="{:.1}" y1="{2:.1}" x2="{:.1}" y2="{2:.1}" stroke="black" stroke-width="2"/>"#,
                cx - bw / 2.0,
                cx + bw / 2.0,
                ys(q.median)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            y0 + PAD + plot_h + 16.0,
            xml(name)
        );
    }
    s.push_str("</g>\n");
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-3) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
