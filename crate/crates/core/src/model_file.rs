//! On-disk envelope for any fitted regressor: `{"format", "algorithm", "model"}`.
//! The algorithm tag decides how `model` is read back.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::baselines::{LinRegModel, SvrModel};
use crate::mlp::{Dataset, MlpModel};
use crate::train::Algorithm;
use crate::{DimensionMismatch, Regressor};

pub const FORMAT: &str = "gaitbac-model/1";

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum FittedModel {
    Mlp(MlpModel),
    Linreg(LinRegModel),
    Svr(SvrModel),
}

impl Regressor for FittedModel {
    fn n_inputs(&self) -> usize {
        match self {
            FittedModel::Mlp(m) => m.n_inputs(),
            FittedModel::Linreg(m) => m.n_inputs(),
            FittedModel::Svr(m) => m.n_inputs(),
        }
    }

    fn predict_one(&self, x: &[f64]) -> Result<f64, DimensionMismatch> {
        match self {
            FittedModel::Mlp(m) => m.predict_one(x),
            FittedModel::Linreg(m) => m.predict_one(x),
            FittedModel::Svr(m) => m.predict_one(x),
        }
    }

    fn predict(&self, data: &Dataset) -> Result<Vec<f64>, DimensionMismatch> {
        match self {
            FittedModel::Mlp(m) => m.predict(data),
            FittedModel::Linreg(m) => m.predict(data),
            FittedModel::Svr(m) => m.predict(data),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub algorithm: Algorithm,
    pub model: FittedModel,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Envelope {
    format: String,
    algorithm: Algorithm,
    model: Value,
}

impl ModelFile {
    pub fn new(algorithm: Algorithm, model: FittedModel) -> Self {
        Self { algorithm, model }
    }

    pub fn to_json(&self) -> String {
        let model = match &self.model {
            FittedModel::Mlp(m) => serde_json::to_value(m),
            FittedModel::Linreg(m) => serde_json::to_value(m),
            FittedModel::Svr(m) => serde_json::to_value(m),
        }
        .expect("models serialize");
        let env = Envelope {
            format: FORMAT.into(),
            algorithm: self.algorithm,
            model,
        };
        serde_json::to_string_pretty(&env).expect("envelope serializes") + "\n"
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        let env: Envelope = serde_json::from_str(s)?;
        if env.format != FORMAT {
            return Err(serde::de::Error::custom(format!("unsupported model format {:?}", env.format)));
        }
        let model = match env.algorithm {
            Algorithm::Cg | Algorithm::Lm | Algorithm::Br => FittedModel::Mlp(serde_json::from_value(env.model)?),
            Algorithm::Linreg => FittedModel::Linreg(serde_json::from_value(env.model)?),
            Algorithm::Svr => FittedModel::Svr(serde_json::from_value(env.model)?),
        };
        Ok(Self {
            algorithm: env.algorithm,
            model,
        })
    }

    /// Writes the file, creating missing parent directories.
    pub fn save(&self, path: &Path) -> Result<(), ModelFileError> {
        let io = |source| ModelFileError::Io {
            path: path.display().to_string(),
            source,
        };
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io)?;
        }
        fs::write(path, self.to_json()).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, ModelFileError> {
        let p = path.display().to_string();
        let s = fs::read_to_string(path).map_err(|source| ModelFileError::Io {
            path: p.clone(),
            source,
        })?;
        Self::from_json(&s).map_err(|source| ModelFileError::Json { path: p, source })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{fit_linreg, fit_svr, SvrParams};
    use crate::train::initial_model;

    fn data() -> Dataset {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64 / 10.0, (i as f64).cos()]).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r[0] * 0.3 + r[1] * r[1]).collect();
        Dataset::from_rows(&rows, &ys).unwrap()
    }

    #[test]
    fn round_trips_every_kind() {
        let d = data();
        let models = [
            ModelFile::new(Algorithm::Br, FittedModel::Mlp(initial_model(&d, 3, 1))),
            ModelFile::new(Algorithm::Linreg, FittedModel::Linreg(fit_linreg(&d, 1e-8).unwrap())),
            ModelFile::new(Algorithm::Svr, FittedModel::Svr(fit_svr(&d, &SvrParams::default()).unwrap())),
        ];
        for m in models {
            let back = ModelFile::from_json(&m.to_json()).unwrap();
            assert_eq!(back, m);
            assert_eq!(back.model.predict(&d).unwrap(), m.model.predict(&d).unwrap());
        }
    }

    #[test]
    fn tag_must_match_body() {
        let d = data();
        let json = ModelFile::new(Algorithm::Linreg, FittedModel::Linreg(fit_linreg(&d, 1e-8).unwrap())).to_json();
        assert!(ModelFile::from_json(&json.replace("\"linreg\"", "\"lm\"")).is_err());
        assert!(ModelFile::from_json(&json.replace(FORMAT, "other/9")).is_err());
    }
}
