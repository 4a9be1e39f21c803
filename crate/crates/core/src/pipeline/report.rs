use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    load_ablation, load_eval, load_ope, load_policy, read_json, write_json, AblationKind, AblationReport, Algo, Layout,
    OpeSummary, RunConfig,
};
use crate::error::{Error, Result};
use crate::eval::{pareto_frontier, per_procedure_report, ProcedureTable, SignificanceReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MainRow {
    pub label: String,
    pub accuracy: f64,
    pub mean_return: f64,
    pub mean_steps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub step_cost: f64,
    pub n_test: usize,
    pub main: Vec<MainRow>,
    /// Labels of the main-table policies on the (steps, accuracy) frontier.
    pub pareto: Vec<String>,
    pub per_procedure: ProcedureTable,
    pub ope: OpeSummary,
    pub significance: Vec<SignificanceReport>,
    pub ablations: Vec<AblationReport>,
}

/// Gather every stage output into one report.
pub fn build_report(cfg: &RunConfig, layout: &Layout) -> Result<Report> {
    let evals = load_eval(layout)?;
    let main: Vec<MainRow> = evals
        .iter()
        .map(|r| MainRow {
            label: r.label.clone(),
            accuracy: r.accuracy,
            mean_return: r.mean_return,
            mean_steps: r.mean_steps,
        })
        .collect();
    let points: Vec<(f64, f64)> = main.iter().map(|r| (r.mean_steps, r.accuracy)).collect();
    Ok(Report {
        step_cost: cfg.env.step_cost,
        n_test: evals.first().map_or(0, |r| r.episodes.len()),
        pareto: pareto_frontier(&points).into_iter().map(|i| main[i].label.clone()).collect(),
        main,
        per_procedure: per_procedure_report(&evals)?,
        ope: load_ope(layout)?,
        significance: read_json(&layout.significance(), "significance")?,
        ablations: AblationKind::ALL
            .into_iter()
            .map(|k| load_ablation(layout, k))
            .collect::<Result<_>>()?,
    })
}

fn table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        padded.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(headers.to_vec());
    out += &line(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().iter().map(String::as_str).collect());
    for row in rows {
        out += &line(row.iter().map(String::as_str).collect());
    }
    out
}

fn pct(x: f64) -> String {
    format!("{:.1}%", 100.0 * x)
}

fn signed(x: f64, digits: usize) -> String {
    format!("{x:+.digits$}")
}

/// Human-readable rendering of the report tables.
pub fn render_text(report: &Report) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "On-policy evaluation ({} test episodes, lambda = {})",
        report.n_test, report.step_cost
    );
    let rows: Vec<Vec<String>> = report
        .main
        .iter()
        .map(|r| vec![r.label.clone(), pct(r.accuracy), signed(r.mean_return, 3), format!("{:.2}", r.mean_steps)])
        .collect();
    out += &table(&["Policy", "Accuracy", "Return", "Steps"], &rows);
    let _ = writeln!(out, "\nPareto frontier: {}", report.pareto.join(", "));

    for ab in &report.ablations {
        let _ = writeln!(out, "\n{} {} ablation", ab.algorithm, ab.kind.name());
        let with_epochs = ab.rows.iter().any(|r| r.epochs.is_some());
        let rows: Vec<Vec<String>> = ab
            .rows
            .iter()
            .map(|r| {
                let mut row = vec![format!("{}", r.value)];
                if with_epochs {
                    row.push(r.epochs.map_or_else(String::new, |e| e.to_string()));
                }
                row.extend([pct(r.accuracy), signed(r.mean_return, 3), format!("{:.2}", r.mean_steps)]);
                row
            })
            .collect();
        let mut headers = vec![ab.kind.name()];
        if with_epochs {
            headers.push("epochs");
        }
        headers.extend(["Accuracy", "Return", "Steps"]);
        out += &table(&headers, &rows);
    }

    let _ = writeln!(
        out,
        "\nOff-policy evaluation (dataset returns in [{:.2}, {:.2}])",
        report.ope.dataset_return_min, report.ope.dataset_return_max
    );
    let rows: Vec<Vec<String>> = report
        .ope
        .reports
        .iter()
        .map(|r| vec![r.label.clone(), signed(r.wis_estimate, 3), signed(r.fqe_mean_q, 2)])
        .collect();
    out += &table(&["Policy", "WIS", "FQE mean Q"], &rows);

    let _ = writeln!(out, "\nPaired t-tests on per-episode correctness");
    let rows: Vec<Vec<String>> = report
        .significance
        .iter()
        .map(|s| {
            vec![
                s.label.clone(),
                format!("{:+.1}pp", s.delta_pp),
                s.p_display(),
                format!("[{:.1}, {:.1}]", s.ci95_pp[0], s.ci95_pp[1]),
            ]
        })
        .collect();
    out += &table(&["Comparison", "Delta acc", "p-value", "95% CI"], &rows);

    let pp = &report.per_procedure;
    let _ = writeln!(out, "\nPer-procedure accuracy");
    let mut headers = vec!["Policy"];
    headers.extend(pp.procedures.iter().map(String::as_str));
    let rows: Vec<Vec<String>> = pp
        .policies
        .iter()
        .zip(&pp.accuracy)
        .map(|(p, accs)| {
            let mut row = vec![p.clone()];
            row.extend(accs.iter().map(|a| format!("{:.0}%", 100.0 * a)));
            row
        })
        .collect();
    out += &table(&headers, &rows);
    let hard = if pp.hard.is_empty() {
        "none".to_string()
    } else {
        pp.hard.join(", ")
    };
    let _ = writeln!(out, "Procedures below 100% for every learned policy: {hard}");
    out
}

fn write_csv(path: &Path, headers: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(headers).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Write `report.json`, `report.txt` and the figure-data CSVs.
pub fn write_report(cfg: &RunConfig, layout: &Layout) -> Result<Report> {
    let report = build_report(cfg, layout)?;
    let dir = layout.report_dir();
    let figures = dir.join("figures");
    std::fs::create_dir_all(&figures).map_err(|e| Error::io(&figures, e))?;
    write_json(&dir.join("report.json"), &report)?;
    let txt = dir.join("report.txt");
    std::fs::write(&txt, render_text(&report)).map_err(|e| Error::io(&txt, e))?;

    write_csv(
        &figures.join("pareto.csv"),
        &["policy", "mean_steps", "accuracy", "on_frontier"],
        report.main.iter().map(|r| {
            vec![
                r.label.clone(),
                r.mean_steps.to_string(),
                r.accuracy.to_string(),
                report.pareto.contains(&r.label).to_string(),
            ]
        }),
    )?;
    let pp = &report.per_procedure;
    write_csv(
        &figures.join("per_procedure.csv"),
        &["policy", "procedure", "accuracy"],
        pp.policies.iter().zip(&pp.accuracy).flat_map(|(p, accs)| {
            pp.procedures
                .iter()
                .zip(accs)
                .map(move |(c, a)| vec![p.clone(), c.clone(), a.to_string()])
        }),
    )?;
    for ab in &report.ablations {
        write_csv(
            &figures.join(format!("ablation_{}.csv", ab.kind.name())),
            &["value", "epochs", "seed", "accuracy", "mean_steps", "mean_return"],
            ab.rows.iter().flat_map(|r| {
                r.runs.iter().map(move |run| {
                    vec![
                        r.value.to_string(),
                        r.epochs.map_or_else(String::new, |e| e.to_string()),
                        run.seed.to_string(),
                        run.accuracy.to_string(),
                        run.mean_steps.to_string(),
                        run.mean_return.to_string(),
                    ]
                })
            }),
        )?;
    }
    let mut curves = Vec::new();
    for algo in Algo::ALL {
        let p = load_policy(layout, algo)?;
        for m in &p.metrics {
            for (k, v) in &m.values {
                curves.push(vec![
                    algo.name().to_string(),
                    m.phase.clone(),
                    m.epoch.to_string(),
                    k.clone(),
                    v.to_string(),
                ]);
            }
        }
    }
    write_csv(
        &figures.join("training_curves.csv"),
        &["policy", "phase", "epoch", "metric", "value"],
        curves,
    )?;
    Ok(report)
}
