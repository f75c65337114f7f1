//! JSON model files. Matrices are row-major nested arrays; unknown keys are
//! rejected so that a misspelled matrix name cannot be silently ignored.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use pdmp_core::distributions::InterEventDistribution;
use pdmp_core::model::{
    GeneralResetFamily, LinearDynamics, PdmpModel, PoissonResetFamily, ValidationReport, Violation,
};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub type Rows = Vec<Vec<f64>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub dimension: usize,
    pub dynamics: DynamicsFile,
    #[serde(default)]
    pub poisson_resets: Vec<PoissonResetFile>,
    pub general_reset: GeneralResetFile,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsFile {
    pub a_hat: Vec<f64>,
    #[serde(rename = "A")]
    pub a: Rows,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoissonResetFile {
    pub rate: f64,
    #[serde(rename = "J")]
    pub j: Rows,
    #[serde(rename = "R_mean")]
    pub r_mean: Vec<f64>,
    /// Defaults to `R_mean R_mean^T` (a deterministic offset).
    #[serde(rename = "R_second", default, skip_serializing_if = "Option::is_none")]
    pub r_second: Option<Rows>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneralResetFile {
    pub distribution: InterEventDistribution,
    #[serde(rename = "J")]
    pub j: Rows,
    #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<f64>>,
    #[serde(rename = "Q", default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Rows>,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Rows>,
    #[serde(rename = "C", default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Vec<f64>>,
    #[serde(rename = "D", default, skip_serializing_if = "Option::is_none")]
    pub d: Option<Rows>,
}

struct Shapes {
    n: usize,
    report: ValidationReport,
}

impl Shapes {
    fn fail(&mut self, path: &str, message: String) {
        self.report.violations.push(Violation {
            path: path.to_string(),
            message,
        });
    }

    fn vector(&mut self, path: &str, v: &[f64]) -> DVector<f64> {
        if v.len() != self.n {
            self.fail(
                path,
                format!("expected {} entries, got {}", self.n, v.len()),
            );
            return DVector::zeros(self.n);
        }
        DVector::from_column_slice(v)
    }

    fn matrix(&mut self, path: &str, rows: &Rows) -> DMatrix<f64> {
        let n = self.n;
        if rows.len() != n {
            self.fail(path, format!("expected {n} rows, got {}", rows.len()));
            return DMatrix::zeros(n, n);
        }
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
            self.fail(
                path,
                format!("row {i} has {} entries, expected {n}", r.len()),
            );
            return DMatrix::zeros(n, n);
        }
        DMatrix::from_fn(n, n, |i, j| rows[i][j])
    }

    fn opt_vector(&mut self, path: &str, v: &Option<Vec<f64>>) -> DVector<f64> {
        match v {
            Some(v) => self.vector(path, v),
            None => DVector::zeros(self.n),
        }
    }

    fn opt_matrix(&mut self, path: &str, m: &Option<Rows>) -> DMatrix<f64> {
        match m {
            Some(m) => self.matrix(path, m),
            None => DMatrix::zeros(self.n, self.n),
        }
    }
}

fn rows(m: &DMatrix<f64>) -> Rows {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

impl ModelFile {
    pub fn parse(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Reads and parses `path`, returning the file bytes too (for the digest).
    pub fn read(path: &Path) -> Result<(Self, Vec<u8>), CliError> {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
        let text = std::str::from_utf8(&bytes)
            .map_err(|e| CliError::Input(format!("{}: not UTF-8: {e}", path.display())))?;
        let file =
            Self::parse(text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        Ok((file, bytes))
    }

    /// Builds the model, reporting shape errors and every model invariant
    /// violation together.
    pub fn to_model(&self) -> Result<PdmpModel, ValidationReport> {
        let n = self.dimension;
        let mut s = Shapes {
            n,
            report: ValidationReport::default(),
        };
        if n == 0 {
            s.fail("dimension", "must be at least 1".into());
            return Err(s.report);
        }
        let dynamics = LinearDynamics {
            a_hat: s.vector("dynamics.a_hat", &self.dynamics.a_hat),
            a: s.matrix("dynamics.A", &self.dynamics.a),
        };
        let poisson = self
            .poisson_resets
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let at = |f: &str| format!("poisson_resets[{i}].{f}");
                let r_mean = s.vector(&at("R_mean"), &p.r_mean);
                let r_second = match &p.r_second {
                    Some(m) => s.matrix(&at("R_second"), m),
                    None => &r_mean * r_mean.transpose(),
                };
                PoissonResetFamily {
                    rate: p.rate,
                    j: s.matrix(&at("J"), &p.j),
                    r_mean,
                    r_second,
                }
            })
            .collect();
        let g = &self.general_reset;
        let general = GeneralResetFamily {
            dist: g.distribution.clone(),
            j: s.matrix("general_reset.J", &g.j),
            r: s.opt_vector("general_reset.R", &g.r),
            q: s.opt_matrix("general_reset.Q", &g.q),
            b: s.opt_matrix("general_reset.B", &g.b),
            c: s.opt_vector("general_reset.C", &g.c),
            d: s.opt_matrix("general_reset.D", &g.d),
        };
        if !s.report.is_valid() {
            return Err(s.report);
        }
        let model = PdmpModel {
            dynamics,
            poisson,
            general,
        };
        let report = model.validate();
        if report.is_valid() {
            Ok(model)
        } else {
            Err(report)
        }
    }

    /// File form of a model; every optional field is written out.
    pub fn from_model(m: &PdmpModel) -> Self {
        let vec = |v: &DVector<f64>| v.iter().copied().collect::<Vec<_>>();
        ModelFile {
            dimension: m.dim(),
            dynamics: DynamicsFile {
                a_hat: vec(&m.dynamics.a_hat),
                a: rows(&m.dynamics.a),
            },
            poisson_resets: m
                .poisson
                .iter()
                .map(|p| PoissonResetFile {
                    rate: p.rate,
                    j: rows(&p.j),
                    r_mean: vec(&p.r_mean),
                    r_second: Some(rows(&p.r_second)),
                })
                .collect(),
            general_reset: GeneralResetFile {
                distribution: m.general.dist.clone(),
                j: rows(&m.general.j),
                r: Some(vec(&m.general.r)),
                q: Some(rows(&m.general.q)),
                b: Some(rows(&m.general.b)),
                c: Some(vec(&m.general.c)),
                d: Some(rows(&m.general.d)),
            },
        }
    }
}
