//! Charts drawn from the metric files of one experiment directory.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Deserialize;

use crate::environment::{Action, NUM_ACTIONS};
use crate::error::{AifError, Result};
use crate::harness::metrics::{read_metric, Manifest, MetricRow, MANIFEST};
use crate::harness::svg::{heatmaps, line_chart, Panel, Series};
use crate::model::{enumerate_policies, Policy};

pub const CHART_FILES: [&str; 6] = [
    "success_rate.svg",
    "marginal_fe_final.svg",
    "policy_fe_final.svg",
    "efe_step1.svg",
    "q_pi_step1.svg",
    "transitions.svg",
];

/// `size` policy indices: every optimal one plus evenly spaced fillers, sorted.
pub fn default_selection(num_policies: usize, optimal: &[usize], size: usize) -> Vec<usize> {
    let mut chosen: Vec<usize> = optimal.iter().copied().filter(|&k| k < num_policies).collect();
    chosen.sort_unstable();
    chosen.dedup();
    let want = size.min(num_policies);
    let spaced = (0..want).map(|i| i * num_policies / want.max(1));
    for k in spaced.chain(0..num_policies) {
        if chosen.len() >= want {
            break;
        }
        if !chosen.contains(&k) {
            chosen.push(k);
        }
    }
    chosen.sort_unstable();
    chosen
}

fn policy_label(k: usize, p: &Policy) -> String {
    let arrows: String = p
        .actions()
        .iter()
        .map(|&a| Action::from_index(a).map_or("?", Action::arrow))
        .collect();
    format!("π{k} {arrows}")
}

/// Mean over runs, indexed `[episode − 1, policy]`, of the rows at `step`
/// (`None` keeps rows without a step). Rows without a policy land in column 0.
fn mean_grid(rows: &[MetricRow], step: Option<usize>, episodes: usize, policies: usize) -> Array2<f64> {
    let mut sum = Array2::<f64>::zeros((episodes, policies));
    let mut count = Array2::<f64>::zeros((episodes, policies));
    for r in rows.iter().filter(|r| r.step == step) {
        let k = r.policy_index.unwrap_or(0);
        if r.episode == 0 || r.episode > episodes || k >= policies {
            continue;
        }
        sum[[r.episode - 1, k]] += r.value;
        count[[r.episode - 1, k]] += 1.0;
    }
    ndarray::Zip::from(&mut sum)
        .and(&count)
        .for_each(|s, &c| *s = if c > 0.0 { *s / c } else { f64::NAN });
    sum
}

fn policy_series(grid: &Array2<f64>, selection: &[usize], policies: &[Policy]) -> Vec<Series> {
    let mut series: Vec<Series> = selection
        .iter()
        .filter(|&&k| k < grid.ncols())
        .map(|&k| Series {
            label: policy_label(k, &policies[k]),
            values: grid.column(k).to_vec(),
            dashed: false,
        })
        .collect();
    series.push(Series {
        label: "mean over policies".into(),
        values: grid.rows().into_iter().map(|r| r.mean().unwrap_or(f64::NAN)).collect(),
        dashed: true,
    });
    series
}

#[derive(Deserialize)]
struct MatrixRow {
    action: Option<usize>,
    row: usize,
    col: usize,
    value: f64,
}

/// Per-action matrices averaged over every row of the file.
fn read_matrices(path: &Path, size: usize) -> Result<Vec<Array2<f64>>> {
    if !path.is_file() {
        return Err(AifError::MissingMetric(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path).map_err(|source| AifError::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    let mut sum = vec![Array2::<f64>::zeros((size, size)); NUM_ACTIONS];
    let mut count = vec![Array2::<f64>::zeros((size, size)); NUM_ACTIONS];
    for row in r.deserialize::<MatrixRow>() {
        let row = row.map_err(|source| AifError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let a = row.action.unwrap_or(0);
        if a < NUM_ACTIONS && row.row < size && row.col < size {
            sum[a][[row.row, row.col]] += row.value;
            count[a][[row.row, row.col]] += 1.0;
        }
    }
    Ok(sum
        .into_iter()
        .zip(count)
        .map(|(s, c)| ndarray::Zip::from(&s).and(&c).map_collect(|&s, &c| if c > 0.0 { s / c } else { 0.0 }))
        .collect())
}

/// Writes the six charts under `<dir>/charts`. `selection` picks the
/// policies drawn individually; `None` uses [`default_selection`] with 16.
pub fn emit_charts(dir: &Path, selection: Option<&[usize]>) -> Result<Vec<PathBuf>> {
    let manifest = Manifest::read(&dir.join(MANIFEST))?;
    let cfg = &manifest.config;
    let policies = enumerate_policies(NUM_ACTIONS, cfg.horizon(), cfg.num_policies)?;
    let selection = match selection {
        Some(s) => s.to_vec(),
        None => default_selection(cfg.num_policies, &manifest.optimal_policies, 16),
    };
    if let Some(&k) = selection.iter().find(|&&k| k >= cfg.num_policies) {
        return Err(AifError::OutOfRange {
            index: k,
            size: cfg.num_policies,
        });
    }
    let (eps, np, last) = (cfg.num_episodes, cfg.num_policies, cfg.num_steps);
    let who = format!("{} agents, {}, mean of {} runs", cfg.agent_kind, cfg.env_layout, cfg.num_runs);

    let success = mean_grid(&read_metric(dir, "success")?, None, eps, 1);
    let marginal = mean_grid(&read_metric(dir, "marginal_fe")?, Some(last), eps, 1);
    let fe = mean_grid(&read_metric(dir, "policy_fe")?, Some(last), eps, np);
    let efe = mean_grid(&read_metric(dir, "efe")?, Some(1), eps, np);
    let q = mean_grid(&read_metric(dir, "q_pi")?, Some(1), eps, np);
    let size = crate::environment::build_layout(cfg.env_layout).0.num_tiles;
    let learned = read_matrices(&dir.join("model/b_learned.csv"), size)?;
    let truth = read_matrices(&dir.join("model/b_true.csv"), size)?;

    let single = |label: &str, g: &Array2<f64>| {
        vec![Series {
            label: label.into(),
            values: g.column(0).to_vec(),
            dashed: false,
        }]
    };
    let mut panels = Vec::new();
    for (name, set) in [("learned", &learned), ("true", &truth)] {
        for (a, m) in set.iter().enumerate() {
            let arrow = Action::from_index(a).map_or("?", Action::arrow);
            panels.push(Panel {
                title: format!("{name} B {arrow}"),
                cells: m.rows().into_iter().map(|r| r.to_vec()).collect(),
            });
        }
    }
    let charts = [
        line_chart(
            &format!("Goal reached ({who})"),
            "episode",
            "fraction of agents",
            &single("success rate", &success),
            Some((0.0, 1.0)),
        ),
        line_chart(
            &format!("Free energy at step {last} ({who})"),
            "episode",
            "F",
            &single("marginal F", &marginal),
            None,
        ),
        line_chart(
            &format!("Policy-conditioned free energy at step {last} ({who})"),
            "episode",
            "F_π",
            &policy_series(&fe, &selection, &policies),
            None,
        ),
        line_chart(
            &format!("Expected free energy at step 1 ({who})"),
            "episode",
            "G_π",
            &policy_series(&efe, &selection, &policies),
            None,
        ),
        line_chart(
            &format!("Policy probabilities at step 1 ({who})"),
            "episode",
            "Q(π)",
            &policy_series(&q, &selection, &policies),
            None,
        ),
        heatmaps(
            &format!("Transition maps, learned (mean over runs) vs true ({who})"),
            &panels,
            NUM_ACTIONS,
            "next state",
            "columns: current state",
        ),
    ];

    let out_dir = dir.join("charts");
    fs::create_dir_all(&out_dir).map_err(|source| AifError::Io {
        path: out_dir.clone(),
        source,
    })?;
    let mut written = Vec::new();
    for (name, svg) in CHART_FILES.iter().zip(charts) {
        let path = out_dir.join(name);
        fs::write(&path, svg).map_err(|source| AifError::Io {
            path: path.clone(),
            source,
        })?;
        written.push(path);
    }
    Ok(written)
}
