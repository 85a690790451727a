//! Metric tables, model snapshots and the manifest.
//!
//! Every table has the header `run,episode,step,policy_index,value`. Runs
//! and policy indices are 0-based, episodes and steps 1-based; columns that
//! do not apply to a family are left empty.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::{EpisodeTrace, Experiment, StepRecord};
use crate::environment::build_layout;
use crate::error::{AifError, Result};
use crate::harness::config::Config;
use crate::oracles::optimal_policies;

pub const MANIFEST: &str = "manifest.json";

/// Per-step metric families written under `metrics/`.
pub const METRIC_FILES: [&str; 12] = [
    "success",
    "marginal_fe",
    "policy_fe",
    "efe",
    "efe_risk",
    "efe_ambiguity",
    "efe_a_novelty",
    "efe_b_novelty",
    "q_pi",
    "kl_b",
    "observations",
    "actions",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub run: usize,
    pub episode: usize,
    pub step: Option<usize>,
    pub policy_index: Option<usize>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the experiment directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: Config,
    /// Hash convention of `files[].sha256`.
    pub hash: String,
    pub optimal_policies: Vec<usize>,
    pub files: Vec<FileEntry>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| AifError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| AifError::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Git blob object id in the sha256 object format.
pub fn git_blob_sha256(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> AifError + '_ {
    move |source| AifError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn encode<S: Serialize>(path: &Path, rows: impl IntoIterator<Item = S>) -> Result<Vec<u8>> {
    let csv_err = |source| AifError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| AifError::Io {
        path: path.to_path_buf(),
        source: e.into_error(),
    })
}

struct Sink {
    root: PathBuf,
    files: Vec<FileEntry>,
}

impl Sink {
    fn put(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        let mut f = fs::File::create(&path).map_err(io_err(&path))?;
        f.write_all(bytes).map_err(io_err(&path))?;
        self.files.push(FileEntry {
            path: rel.to_string(),
            bytes: bytes.len() as u64,
            sha256: git_blob_sha256(bytes),
        });
        Ok(())
    }
}

fn step_rows<'a>(
    exp: &'a Experiment,
    f: impl Fn(&'a EpisodeTrace, &'a StepRecord) -> Vec<(Option<usize>, f64)> + 'a,
) -> impl Iterator<Item = MetricRow> + 'a {
    let f = std::rc::Rc::new(f);
    exp.runs.iter().flat_map(move |r| {
        let f = f.clone();
        r.episodes.iter().enumerate().flat_map(move |(e, ep)| {
            let f = f.clone();
            ep.steps.iter().enumerate().flat_map(move |(t, s)| {
                f(ep, s).into_iter().map(move |(policy_index, value)| MetricRow {
                    run: r.run,
                    episode: e + 1,
                    step: Some(t + 1),
                    policy_index,
                    value,
                })
            })
        })
    })
}

fn per_policy(values: impl IntoIterator<Item = f64>) -> Vec<(Option<usize>, f64)> {
    values.into_iter().enumerate().map(|(k, v)| (Some(k), v)).collect()
}

fn metric_rows<'a>(exp: &'a Experiment, name: &str) -> Box<dyn Iterator<Item = MetricRow> + 'a> {
    match name {
        "success" => Box::new(exp.runs.iter().flat_map(|r| {
            r.episodes.iter().enumerate().map(move |(e, ep)| MetricRow {
                run: r.run,
                episode: e + 1,
                step: None,
                policy_index: None,
                value: if ep.success { 1.0 } else { 0.0 },
            })
        })),
        "marginal_fe" => Box::new(step_rows(exp, |_, s| vec![(None, s.fe.marginal_fe)])),
        "kl_b" => Box::new(step_rows(exp, |_, s| vec![(None, s.fe.kl_b)])),
        "policy_fe" => Box::new(step_rows(exp, |_, s| per_policy(s.fe.policy_fes.iter().copied()))),
        "q_pi" => Box::new(step_rows(exp, |_, s| per_policy(s.q_pi.iter().copied()))),
        "efe" => Box::new(step_rows(exp, |_, s| per_policy(s.efe.iter().map(|g| g.total)))),
        "efe_risk" => Box::new(step_rows(exp, |_, s| per_policy(s.efe.iter().map(|g| g.risk)))),
        "efe_ambiguity" => Box::new(step_rows(exp, |_, s| per_policy(s.efe.iter().map(|g| g.ambiguity)))),
        "efe_a_novelty" => Box::new(step_rows(exp, |_, s| per_policy(s.efe.iter().map(|g| g.a_novelty)))),
        "efe_b_novelty" => Box::new(step_rows(exp, |_, s| per_policy(s.efe.iter().map(|g| g.b_novelty)))),
        "observations" => Box::new(step_rows(exp, |_, s| vec![(None, s.observation as f64)])),
        "actions" => Box::new(step_rows(exp, |_, s| {
            s.action.map(|a| vec![(None, a as f64)]).unwrap_or_default()
        })),
        other => unreachable!("no metric family {other}"),
    }
}

#[derive(Serialize)]
struct MatrixRow {
    run: Option<usize>,
    action: Option<usize>,
    row: usize,
    col: usize,
    value: f64,
}

fn matrix_rows(run: Option<usize>, action: Option<usize>, m: &ndarray::Array2<f64>) -> Vec<MatrixRow> {
    m.indexed_iter()
        .map(|((row, col), &value)| MatrixRow {
            run,
            action,
            row,
            col,
            value,
        })
        .collect()
}

/// Writes metric tables, model snapshots and the manifest under
/// `config.experiment_dir()`, which is returned.
pub fn write_metrics(exp: &Experiment, config: &Config) -> Result<(PathBuf, Manifest)> {
    let root = config.experiment_dir();
    for sub in ["metrics", "model"] {
        let dir = root.join(sub);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    }
    let mut sink = Sink {
        root: root.clone(),
        files: Vec::new(),
    };
    for name in METRIC_FILES {
        let rel = format!("metrics/{name}.csv");
        let bytes = encode(&root.join(&rel), metric_rows(exp, name))?;
        sink.put(&rel, &bytes)?;
    }

    // model tables: B[next = row, current = col], A[observation = row, state = col]
    let (layout, maps) = build_layout(config.env_layout);
    let learned: Vec<MatrixRow> = exp
        .runs
        .iter()
        .flat_map(|r| {
            r.final_model
                .b
                .iter()
                .enumerate()
                .flat_map(move |(a, b)| matrix_rows(Some(r.run), Some(a), b))
        })
        .collect();
    let truth: Vec<MatrixRow> = maps
        .transitions
        .iter()
        .enumerate()
        .flat_map(|(a, b)| matrix_rows(None, Some(a), b))
        .collect();
    let emission: Vec<MatrixRow> = exp
        .runs
        .iter()
        .flat_map(|r| matrix_rows(Some(r.run), None, &r.final_model.a))
        .collect();
    for (rel, rows) in [
        ("model/b_learned.csv", learned),
        ("model/b_true.csv", truth),
        ("model/a_learned.csv", emission),
    ] {
        let bytes = encode(&root.join(rel), rows)?;
        sink.put(rel, &bytes)?;
    }

    let policies = &exp.runs.first().ok_or(AifError::Config("no runs".into()))?.initial_model.policies;
    let manifest = Manifest {
        config: config.clone(),
        hash: "git blob, sha256 object format".into(),
        optimal_policies: optimal_policies(&layout, policies),
        files: sink.files,
    };
    let path = root.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).map_err(|source| AifError::Json {
        path: path.clone(),
        source,
    })?;
    fs::write(&path, text + "\n").map_err(io_err(&path))?;
    Ok((root, manifest))
}

/// Reads one metric family back.
pub fn read_metric(dir: &Path, name: &str) -> Result<Vec<MetricRow>> {
    let path = dir.join("metrics").join(format!("{name}.csv"));
    if !path.is_file() {
        return Err(AifError::MissingMetric(path));
    }
    let mut r = csv::Reader::from_path(&path).map_err(|source| AifError::Csv {
        path: path.clone(),
        source,
    })?;
    r.deserialize()
        .collect::<std::result::Result<Vec<MetricRow>, _>>()
        .map_err(|source| AifError::Csv { path, source })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_hash_matches_git() {
        // `printf 'hello\n' | git hash-object --object-format=sha256 --stdin`
        assert_eq!(
            git_blob_sha256(b"hello\n"),
            "2cf8d83d9ee29543b34a87727421fdecb7e3f3a183d337639025de576db9ebb4"
        );
    }

    #[test]
    fn row_encoding_leaves_missing_columns_empty() {
        let rows = [MetricRow {
            run: 0,
            episode: 1,
            step: None,
            policy_index: None,
            value: 1.0,
        }];
        let bytes = encode(Path::new("x.csv"), rows).unwrap();
        assert_eq!(String::from_utf8(bytes).unwrap(), "run,episode,step,policy_index,value\n0,1,,,1.0\n");
    }
}
