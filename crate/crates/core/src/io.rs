//! File formats: model, MRF and custom-initialization JSON documents,
//! report JSON, and the trajectory / belief CSV tables.
//!
//! Matrices are `{"rows": r, "cols": c, "data": [row-major]}`. JSON floats
//! use shortest round-trip formatting; CSV floats carry 17 significant digits.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{ConvergenceReport, RateFit, Verdict};
use crate::bp::{Belief, BpStatus, BpTrajectory};
use crate::graph::TopologyKind;
use crate::model::{
    CentralizedSolution, FactorSpec, LinearGaussianModel, ValidationReport, VariableSpec,
};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed input: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixDoc {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixDoc {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().as_slice().to_vec(),
        }
    }

    pub fn to_matrix(&self, what: &str) -> Result<DMatrix<f64>, IoError> {
        if self.data.len() != self.rows * self.cols {
            return Err(IoError::Malformed(format!(
                "{what}: {}x{} matrix with {} entries",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

/// Conversion provenance recorded in models produced from an MRF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub omega: f64,
    pub columns: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct VariableDoc {
    id: u32,
    dim: usize,
    prior_cov: MatrixDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FactorDoc {
    id: u32,
    scope: Vec<u32>,
    coeff: BTreeMap<u32, MatrixDoc>,
    noise_cov: MatrixDoc,
    obs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
    variables: Vec<VariableDoc>,
    factors: Vec<FactorDoc>,
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.display().to_string(),
        source,
    })
}

pub fn model_from_json(text: &str) -> Result<(LinearGaussianModel, Option<Provenance>), IoError> {
    let doc: ModelDoc = serde_json::from_str(text)?;
    let variables = doc
        .variables
        .iter()
        .map(|v| {
            Ok(VariableSpec {
                id: v.id,
                dim: v.dim,
                prior_cov: v
                    .prior_cov
                    .to_matrix(&format!("prior_cov of variable {}", v.id))?,
            })
        })
        .collect::<Result<Vec<_>, IoError>>()?;
    let factors = doc
        .factors
        .iter()
        .map(|f| {
            let coeff = f
                .coeff
                .iter()
                .map(|(&i, m)| Ok((i, m.to_matrix(&format!("coeff ({}, {i})", f.id))?)))
                .collect::<Result<BTreeMap<_, _>, IoError>>()?;
            Ok(FactorSpec {
                id: f.id,
                scope: f.scope.clone(),
                coeff,
                noise_cov: f
                    .noise_cov
                    .to_matrix(&format!("noise_cov of factor {}", f.id))?,
                obs: DVector::from_vec(f.obs.clone()),
            })
        })
        .collect::<Result<Vec<_>, IoError>>()?;
    Ok((LinearGaussianModel::new(variables, factors), doc.provenance))
}

pub fn read_model(path: &Path) -> Result<(LinearGaussianModel, Option<Provenance>), IoError> {
    model_from_json(&read_text(path)?)
}

pub fn model_to_json(model: &LinearGaussianModel, provenance: Option<&Provenance>) -> String {
    let doc = ModelDoc {
        provenance: provenance.cloned(),
        variables: model
            .variables
            .iter()
            .map(|v| VariableDoc {
                id: v.id,
                dim: v.dim,
                prior_cov: MatrixDoc::from_matrix(&v.prior_cov),
            })
            .collect(),
        factors: model
            .factors
            .iter()
            .map(|f| FactorDoc {
                id: f.id,
                scope: f.scope.clone(),
                coeff: f
                    .coeff
                    .iter()
                    .map(|(&i, m)| (i, MatrixDoc::from_matrix(m)))
                    .collect(),
                noise_cov: MatrixDoc::from_matrix(&f.noise_cov),
                obs: f.obs.iter().copied().collect(),
            })
            .collect(),
    };
    to_json(&doc)
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

/// `J` may be given as a matrix document or as a list of rows.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum MatrixInput {
    Doc(MatrixDoc),
    Rows(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Deserialize)]
struct MrfDoc {
    #[serde(rename = "J")]
    j: MatrixInput,
    h: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
struct MrfOut<'a> {
    #[serde(rename = "J")]
    j: MatrixDoc,
    h: &'a [f64],
}

pub fn mrf_from_json(text: &str) -> Result<(DMatrix<f64>, DVector<f64>), IoError> {
    let doc: MrfDoc = serde_json::from_str(text)?;
    let j = match doc.j {
        MatrixInput::Doc(d) => d.to_matrix("J")?,
        MatrixInput::Rows(rows) => {
            let n = rows.len();
            if rows.iter().any(|r| r.len() != n) {
                return Err(IoError::Malformed("J: rows of unequal length".into()));
            }
            DMatrix::from_fn(n, n, |a, b| rows[a][b])
        }
    };
    Ok((j, DVector::from_vec(doc.h)))
}

pub fn mrf_to_json(j: &DMatrix<f64>, h: &DVector<f64>) -> String {
    to_json(&MrfOut {
        j: MatrixDoc::from_matrix(j),
        h: h.as_slice(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct InitEdgeDoc {
    factor: u32,
    var: u32,
    info: MatrixDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mean: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct InitDoc {
    edges: Vec<InitEdgeDoc>,
}

pub type EdgeMatrices = BTreeMap<(u32, u32), DMatrix<f64>>;
pub type EdgeVectors = BTreeMap<(u32, u32), DVector<f64>>;

/// Per-f2v-edge initial information matrices and optional means.
pub fn custom_init_from_json(text: &str) -> Result<(EdgeMatrices, EdgeVectors), IoError> {
    let doc: InitDoc = serde_json::from_str(text)?;
    let mut infos = BTreeMap::new();
    let mut means = BTreeMap::new();
    for e in doc.edges {
        let key = (e.factor, e.var);
        let m = e
            .info
            .to_matrix(&format!("init f{}->x{}", e.factor, e.var))?;
        if infos.insert(key, m).is_some() {
            return Err(IoError::Malformed(format!(
                "duplicate edge f{}->x{}",
                e.factor, e.var
            )));
        }
        if let Some(v) = e.mean {
            means.insert(key, DVector::from_vec(v));
        }
    }
    Ok((infos, means))
}

pub fn custom_init_to_json(infos: &EdgeMatrices) -> String {
    to_json(&InitDoc {
        edges: infos
            .iter()
            .map(|(&(factor, var), m)| InitEdgeDoc {
                factor,
                var,
                info: MatrixDoc::from_matrix(m),
                mean: None,
            })
            .collect(),
    })
}

#[derive(Debug, Clone, Serialize)]
struct ValidationDoc<'a> {
    valid: bool,
    violations: Vec<String>,
    warnings: &'a [String],
}

pub fn validation_to_json(report: &ValidationReport) -> String {
    to_json(&ValidationDoc {
        valid: report.is_valid(),
        violations: report.violations.iter().map(|v| v.to_string()).collect(),
        warnings: &report.warnings,
    })
}

#[derive(Debug, Clone, Serialize)]
struct AgentDoc {
    id: u32,
    mean: Vec<f64>,
    cov: MatrixDoc,
}

#[derive(Debug, Clone, Serialize)]
struct SolutionDoc {
    agents: Vec<AgentDoc>,
}

pub fn solution_to_json(sol: &CentralizedSolution) -> String {
    to_json(&SolutionDoc {
        agents: sol
            .covariance_blocks()
            .into_iter()
            .map(|(id, cov)| AgentDoc {
                id,
                mean: sol.mean_of(id).expect("variable").iter().copied().collect(),
                cov: MatrixDoc::from_matrix(&cov),
            })
            .collect(),
    })
}

#[derive(Debug, Clone, Serialize)]
struct EdgeBoundsDoc {
    factor: u32,
    var: u32,
    lower: MatrixDoc,
    upper: MatrixDoc,
    j_star: MatrixDoc,
}

#[derive(Debug, Clone, Serialize)]
struct CrossCheckDoc {
    status: BpStatus,
    max_mean_error: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
struct ReportDoc {
    topology: TopologyKind,
    cycle_rank: usize,
    components: usize,
    rho_q: f64,
    verdict: Verdict,
    fixed_point_residual: f64,
    fixed_point_iterations: usize,
    fixed_point_converged: bool,
    fixed_point_tol: f64,
    borderline_band: f64,
    fitted_rate: Option<RateFit>,
    /// `null` where the part metric is infinite.
    part_metrics: Vec<Option<f64>>,
    cross_check: Option<CrossCheckDoc>,
    notes: Vec<String>,
    edges: Vec<EdgeBoundsDoc>,
}

pub fn report_to_json(r: &ConvergenceReport) -> String {
    to_json(&ReportDoc {
        topology: r.topology.kind,
        cycle_rank: r.topology.cycle_rank(),
        components: r.topology.components.len(),
        rho_q: r.rho_q,
        verdict: r.verdict,
        fixed_point_residual: r.fixed_point.residual,
        fixed_point_iterations: r.fixed_point.iterations,
        fixed_point_converged: r.fixed_point.converged,
        fixed_point_tol: r.fixed_point_tol,
        borderline_band: crate::analysis::BORDERLINE_BAND,
        fitted_rate: r.fitted_rate,
        part_metrics: r
            .part_metrics
            .iter()
            .map(|&d| d.is_finite().then_some(d))
            .collect(),
        cross_check: r.cross_check.as_ref().map(|c| CrossCheckDoc {
            status: c.status,
            max_mean_error: c.max_mean_error,
        }),
        notes: r.notes.clone(),
        edges: r
            .bounds
            .edges
            .iter()
            .enumerate()
            .map(|(p, &(factor, var))| EdgeBoundsDoc {
                factor,
                var,
                lower: MatrixDoc::from_matrix(&r.bounds.lower[p]),
                upper: MatrixDoc::from_matrix(&r.bounds.upper[p]),
                j_star: MatrixDoc::from_matrix(&r.fixed_point.j_star[p]),
            })
            .collect(),
    })
}

/// `{:.16e}`: 17 significant digits, round-trips through `f64::from_str`.
pub fn fmt_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub const TRAJECTORY_HEADER: &str = "iter,edge_kind,from,to,dJ_fro,dv_inf,part_metric_to_ref";
pub const BELIEFS_HEADER: &str = "agent,component,mean,variance";

/// One row per recorded edge per iteration; the part-metric column is
/// empty for v2f edges and when no reference was given.
pub fn trajectory_csv(traj: &BpTrajectory) -> String {
    let mut out = String::from(TRAJECTORY_HEADER);
    out.push('\n');
    for rec in &traj.iterations {
        for e in &rec.edges {
            let pm = e.part_metric.map(fmt_float).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                rec.iteration,
                e.kind,
                e.from,
                e.to,
                fmt_float(e.d_info),
                fmt_float(e.d_mean),
                pm
            )
            .expect("write to string");
        }
    }
    out
}

/// Components are numbered from 0 within each agent.
pub fn beliefs_csv(beliefs: &[Belief]) -> String {
    let mut out = String::from(BELIEFS_HEADER);
    out.push('\n');
    for b in beliefs {
        for c in 0..b.mean.len() {
            writeln!(
                out,
                "{},{},{},{}",
                b.var,
                c,
                fmt_float(b.mean[c]),
                fmt_float(b.cov[(c, c)])
            )
            .expect("write to string");
        }
    }
    out
}
