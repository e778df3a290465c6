//! JSON dataset/model files and the rollout CSV.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, MeanTrajectory, Point, Trajectory};
use crate::clustering::{ClusterModel, ModelMeta};
use crate::error::{CalmError, Result};
use crate::sim::RolloutResult;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DemoFile {
    states: Vec<Point>,
    #[serde(default)]
    label: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetFile {
    name: String,
    dt: f64,
    demos: Vec<DemoFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClusterFile {
    states: Vec<Point>,
    dt: f64,
    speeds: Vec<f64>,
    emission_cov: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    clusters: Vec<ClusterFile>,
    #[serde(default)]
    meta: ModelMeta,
}

fn read_text(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(CalmError::MissingFile(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(|source| CalmError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| CalmError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|source| CalmError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Re-labels a construction error with the JSON path of the offending field.
fn at(prefix: String, err: CalmError) -> CalmError {
    match err {
        CalmError::InvalidArgument { field, reason } => CalmError::schema(format!("{prefix}.{field}"), reason),
        CalmError::DimensionMismatch { field, expected, got } => CalmError::schema(
            format!("{prefix}.{field}"),
            format!("dimension mismatch: expected {expected}, got {got}"),
        ),
        other => other,
    }
}

pub fn dataset_to_json(ds: &Dataset) -> Result<String> {
    let dt = ds.demos[0].dt();
    if let Some(i) = ds.demos.iter().position(|d| d.dt() != dt) {
        return Err(CalmError::schema(
            format!("demos[{i}].dt"),
            "dataset files store one shared dt",
        ));
    }
    let file = DatasetFile {
        name: ds.name.clone(),
        dt,
        demos: ds
            .demos
            .iter()
            .enumerate()
            .map(|(i, d)| DemoFile {
                states: d.states().to_vec(),
                label: ds.ground_truth_labels.as_ref().map(|l| l[i]),
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&file).expect("dataset serialises"))
}

pub fn dataset_from_json(path: &Path, text: &str) -> Result<Dataset> {
    let file: DatasetFile = parse(path, text)?;
    if !(file.dt.is_finite() && file.dt > 0.0) {
        return Err(CalmError::schema(
            "dt",
            format!("must be finite and > 0, got {}", file.dt),
        ));
    }
    if file.demos.is_empty() {
        return Err(CalmError::schema("demos", "no demonstrations"));
    }
    let labelled = file.demos.iter().filter(|d| d.label.is_some()).count();
    if labelled != 0 && labelled != file.demos.len() {
        return Err(CalmError::schema("label", "either every demo has a label or none does"));
    }
    let mut labels = Vec::new();
    let mut demos = Vec::with_capacity(file.demos.len());
    for (i, demo) in file.demos.into_iter().enumerate() {
        labels.extend(demo.label);
        demos.push(Trajectory::new(demo.states, file.dt).map_err(|e| at(format!("demos[{i}]"), e))?);
    }
    let d = demos[0].dim();
    if let Some(i) = demos.iter().position(|t| t.dim() != d) {
        return Err(CalmError::DimensionMismatch {
            field: "demos",
            expected: d,
            got: demos[i].dim(),
        });
    }
    Dataset::new(file.name, demos, (labelled > 0).then_some(labels))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    dataset_from_json(path, &read_text(path)?)
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &dataset_to_json(ds)?)
}

pub fn model_to_json(model: &ClusterModel) -> String {
    let file = ModelFile {
        clusters: model
            .means
            .iter()
            .map(|m| ClusterFile {
                states: m.states().to_vec(),
                dt: m.dt(),
                speeds: m.speeds().to_vec(),
                emission_cov: m.emission_cov().to_vec(),
            })
            .collect(),
        meta: model.meta.clone(),
    };
    serde_json::to_string_pretty(&file).expect("model serialises")
}

pub fn model_from_json(path: &Path, text: &str) -> Result<ClusterModel> {
    let file: ModelFile = parse(path, text)?;
    if file.clusters.is_empty() {
        return Err(CalmError::schema("clusters", "model has no clusters"));
    }
    let mut means = Vec::with_capacity(file.clusters.len());
    for (i, c) in file.clusters.into_iter().enumerate() {
        means.push(
            MeanTrajectory::with_speeds(c.states, c.dt, c.speeds, c.emission_cov)
                .map_err(|e| at(format!("clusters[{i}]"), e))?,
        );
    }
    let d = means[0].dim();
    if let Some(i) = means.iter().position(|m| m.dim() != d) {
        return Err(CalmError::DimensionMismatch {
            field: "clusters",
            expected: d,
            got: means[i].dim(),
        });
    }
    Ok(ClusterModel { means, meta: file.meta })
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ClusterModel> {
    let path = path.as_ref();
    model_from_json(path, &read_text(path)?)
}

pub fn save_model(model: &ClusterModel, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &model_to_json(model))
}

/// Writes `t,x0..x{d-1},cluster,kv,phase`, one row per control tick.
pub fn write_rollout_csv<W: Write>(result: &RolloutResult, mut out: W) -> std::io::Result<()> {
    let states = result.trajectory.states();
    let d = result.trajectory.dim();
    let dt = result.trajectory.dt();
    let mut header = String::from("t");
    for k in 0..d {
        header.push_str(&format!(",x{k}"));
    }
    header.push_str(",cluster,kv,phase");
    writeln!(out, "{header}")?;
    for (k, s) in states.iter().enumerate() {
        let mut row = format!("{}", k as f64 * dt);
        for v in s {
            row.push_str(&format!(",{v}"));
        }
        row.push_str(&format!(
            ",{},{},{}",
            result.active_cluster_trace[k], result.kv_trace[k], result.phase_trace[k]
        ));
        writeln!(out, "{row}")?;
    }
    Ok(())
}
