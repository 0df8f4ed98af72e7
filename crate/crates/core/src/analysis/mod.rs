//! Embedding-geometry analysis: a scalar cross-modal mixing rate over token
//! embedding tables and 2-D projections (PCA, exact t-SNE) for plotting.

mod pca;
mod tsne;

pub use pca::pca_project;
pub use tsne::{tsne_project, TsneConfig};

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::model::JointModel;
use crate::tensor::{Tensor, NORM_FLOOR};
use crate::types::Modality;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("config error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Io(#[from] crate::io::CorpusError),
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

/// Fraction of each token's k nearest neighbors (cosine distance, both
/// vocabularies pooled, self excluded) that belong to the other modality.
/// 0 means fully separated; a fully mixed population approaches the other
/// modality's share of the pool.
pub fn mixing_rate(speech_rows: &Tensor, text_rows: &Tensor, k: usize) -> Result<f64> {
    let [ns, d] = speech_rows.shape() else {
        return Err(AnalysisError::Config("speech rows must be rank 2".into()));
    };
    let [nt, d2] = text_rows.shape() else {
        return Err(AnalysisError::Config("text rows must be rank 2".into()));
    };
    let (ns, nt, d) = (*ns, *nt, *d);
    if d != *d2 {
        return Err(AnalysisError::Config(format!(
            "embedding dims differ: {d} vs {d2}"
        )));
    }
    if ns == 0 || nt == 0 {
        return Err(AnalysisError::Contract(
            "mixing rate needs tokens from both modalities".into(),
        ));
    }
    let total = ns + nt;
    if k < 1 || k >= total {
        return Err(AnalysisError::Config(format!(
            "k={k} out of range for {total} tokens"
        )));
    }

    // unit-normalize all rows once; cosine distance = 1 - dot
    let mut unit = Vec::with_capacity(total * d);
    for source in [speech_rows, text_rows] {
        for row in source.data().chunks_exact(d) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_FLOOR);
            unit.extend(row.iter().map(|v| v / norm));
        }
    }
    let other_fraction = |i: usize| -> f64 {
        let xi = &unit[i * d..(i + 1) * d];
        let mut dists: Vec<(f64, usize)> = Vec::with_capacity(total - 1);
        for j in 0..total {
            if j == i {
                continue;
            }
            let xj = &unit[j * d..(j + 1) * d];
            let dot: f64 = xi.iter().zip(xj).map(|(a, b)| a * b).sum();
            dists.push((1.0 - dot, j));
        }
        dists.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
        let i_is_speech = i < ns;
        let cross = dists
            .iter()
            .take(k)
            .filter(|&&(_, j)| (j < ns) != i_is_speech)
            .count();
        cross as f64 / k as f64
    };
    let sum: f64 = if total * total * d > (1 << 18) {
        (0..total).into_par_iter().map(other_fraction).sum()
    } else {
        (0..total).map(other_fraction).sum()
    };
    Ok(sum / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionMethod {
    Pca,
    Tsne,
}

impl std::str::FromStr for ProjectionMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "pca" => Ok(ProjectionMethod::Pca),
            "tsne" => Ok(ProjectionMethod::Tsne),
            other => Err(format!("unknown projection method {other:?}")),
        }
    }
}

/// Project `n x d` embeddings to 2-D.
pub fn project_2d(
    embeddings: &Tensor,
    method: ProjectionMethod,
    seed: u64,
) -> Result<Vec<[f64; 2]>> {
    let [n, d] = embeddings.shape() else {
        return Err(AnalysisError::Config("embeddings must be rank 2".into()));
    };
    if *n < 3 {
        return Err(AnalysisError::Config(format!(
            "projection needs at least 3 points, got {n}"
        )));
    }
    if *d < 2 {
        return Err(AnalysisError::Config(format!(
            "projection needs dimension >= 2, got {d}"
        )));
    }
    match method {
        ProjectionMethod::Pca => pca_project(embeddings, seed),
        ProjectionMethod::Tsne => tsne_project(embeddings, &TsneConfig::default(), seed),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NormSummary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

fn norm_summary(rows: &Tensor) -> NormSummary {
    let d = rows.last_dim();
    let mut mean = 0.0;
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let n = rows.rows().max(1);
    for row in rows.data().chunks_exact(d.max(1)) {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        mean += norm / n as f64;
        min = min.min(norm);
        max = max.max(norm);
    }
    if rows.rows() == 0 {
        return NormSummary {
            mean: 0.0,
            min: 0.0,
            max: 0.0,
        };
    }
    NormSummary { mean, min, max }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProjectedPoint {
    pub id: usize,
    pub modality: Modality,
    pub x: f64,
    pub y: f64,
}

/// Embedding-overlap report for one checkpoint.
#[derive(Debug, Clone, Serialize)]
pub struct OverlapReport {
    pub step: u64,
    pub mixing_rate: f64,
    pub k: usize,
    pub speech_norms: NormSummary,
    pub text_norms: NormSummary,
    pub points: Vec<ProjectedPoint>,
}

/// Build the overlap report for a model's input token embedding tables
/// (mask rows excluded, one point per real token of both vocabularies).
pub fn overlap_report(
    model: &JointModel,
    step: u64,
    k: usize,
    method: ProjectionMethod,
    seed: u64,
) -> Result<OverlapReport> {
    let speech = model.token_embedding_rows(Modality::Speech);
    let text = model.token_embedding_rows(Modality::Text);
    let rate = mixing_rate(&speech, &text, k)?;
    let d = model.config.dim;
    let ns = speech.rows();
    let nt = text.rows();
    let mut stacked = Vec::with_capacity((ns + nt) * d);
    stacked.extend_from_slice(speech.data());
    stacked.extend_from_slice(text.data());
    let all = Tensor::from_vec(vec![ns + nt, d], stacked)
        .map_err(|e| AnalysisError::Config(format!("bad embedding stack: {e}")))?;
    let coords = project_2d(&all, method, seed)?;
    let points = coords
        .iter()
        .enumerate()
        .map(|(i, &[x, y])| ProjectedPoint {
            id: if i < ns { i } else { i - ns },
            modality: if i < ns {
                Modality::Speech
            } else {
                Modality::Text
            },
            x,
            y,
        })
        .collect();
    Ok(OverlapReport {
        step,
        mixing_rate: rate,
        k,
        speech_norms: norm_summary(&speech),
        text_norms: norm_summary(&text),
        points,
    })
}

pub fn write_report_json(path: &Path, report: &OverlapReport) -> Result<()> {
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(path, json).map_err(crate::io::CorpusError::Io)?;
    Ok(())
}

/// Projection points as "id,modality,x,y" CSV for external plotting.
pub fn write_report_csv(path: &Path, report: &OverlapReport) -> Result<()> {
    let mut out = String::from("id,modality,x,y\n");
    for p in &report.points {
        out.push_str(&format!("{},{},{},{}\n", p.id, p.modality, p.x, p.y));
    }
    std::fs::write(path, out).map_err(crate::io::CorpusError::Io)?;
    Ok(())
}
