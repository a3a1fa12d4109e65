//! Run and order manifests: flat JSON files whose fields mirror the
//! command-line flags. Flags override file values.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{default_params, make_model, ModelSpec};
use crate::parareal::PararealConfig;
use crate::schemes::PropagatorSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunManifest {
    pub model: String,
    /// Model constants; missing entries fall back to the model defaults.
    pub params: BTreeMap<String, f64>,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(rename = "dT")]
    pub coarse_step: f64,
    #[serde(rename = "J")]
    pub fine_steps: usize,
    pub coarse: String,
    pub fine: String,
    /// Project after every coarse and fine step.
    pub project_propagators: bool,
    /// Project every corrected state.
    pub project_correction: bool,
    pub paths: usize,
    pub seed: u64,
    /// Iteration cap; defaults to the number of coarse intervals.
    pub kmax: Option<usize>,
    pub stop_tol: f64,
    pub out: PathBuf,
    pub workers: Option<usize>,
    /// Iteration written to invariants.csv; `null` means the final iterate.
    pub series_k: Option<usize>,
    pub x0: Option<Vec<f64>>,
}

impl Default for RunManifest {
    fn default() -> Self {
        Self {
            model: "kubo".into(),
            params: BTreeMap::new(),
            horizon: 10.0,
            coarse_step: 0.1,
            fine_steps: 20,
            coarse: "euler".into(),
            fine: "euler".into(),
            project_propagators: false,
            project_correction: false,
            paths: 100,
            seed: 0,
            kmax: None,
            stop_tol: 1e-12,
            out: PathBuf::from("out"),
            workers: None,
            series_k: Some(2),
            x0: None,
        }
    }
}

pub(crate) fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

pub(crate) fn resolve_model(
    name: &str,
    params: &BTreeMap<String, f64>,
    x0: Option<&[f64]>,
) -> Result<(ModelSpec<f64>, Vec<f64>)> {
    let mut all = default_params(name)?;
    for (k, v) in params {
        if !all.contains_key(k) {
            return Err(Error::InvalidConfig(format!(
                "model `{name}` has no parameter `{k}`"
            )));
        }
        all.insert(k.clone(), *v);
    }
    let model = make_model::<f64>(name, &all)?;
    let x0 = match x0 {
        Some(x) => {
            model.check_dim(x)?;
            x.to_vec()
        }
        None => model.default_x0().to_vec(),
    };
    Ok((model, x0))
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        load_json(path)
    }

    pub fn validate(&self) -> Result<()> {
        if self.paths == 0 {
            return Err(Error::InvalidConfig("paths must be at least 1".into()));
        }
        Ok(())
    }

    pub fn propagator(&self, name: &str) -> Result<PropagatorSpec<f64>> {
        let spec: PropagatorSpec<f64> = name.parse()?;
        let on = spec.projected || self.project_propagators;
        Ok(spec.projected(on))
    }

    /// Resolves the model and parareal configuration.
    pub fn build(&self) -> Result<(ModelSpec<f64>, PararealConfig<f64>)> {
        self.validate()?;
        let (model, x0) = resolve_model(&self.model, &self.params, self.x0.as_deref())?;
        let mut cfg = PararealConfig::new(
            &model,
            self.horizon,
            self.coarse_step,
            self.fine_steps,
            self.propagator(&self.coarse)?,
            self.propagator(&self.fine)?,
        )?
        .with_correction_projection(self.project_correction);
        if let Some(k) = self.kmax {
            cfg.k_max = k;
        }
        cfg.stop_tol = self.stop_tol;
        cfg.x0 = x0;
        cfg.validate(&model)?;
        Ok((model, cfg))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrderManifest {
    pub model: String,
    pub params: BTreeMap<String, f64>,
    pub schemes: Vec<String>,
    /// Steps are `h = T / 2^e` for each exponent `e`.
    pub h_exponents: Vec<u32>,
    /// Reference resolution `T / 2^ref_exponent`.
    pub ref_exponent: u32,
    /// Scheme used for the reference solution.
    pub reference: String,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub paths: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub workers: Option<usize>,
    pub x0: Option<Vec<f64>>,
}

impl Default for OrderManifest {
    fn default() -> Self {
        Self {
            model: "kubo".into(),
            params: BTreeMap::new(),
            schemes: ["euler", "eulerP", "milstein", "milP", "midpoint"]
                .map(String::from)
                .to_vec(),
            h_exponents: vec![4, 5, 6, 7, 8],
            ref_exponent: 14,
            reference: "milstein".into(),
            horizon: 1.0,
            paths: 500,
            seed: 0,
            out: PathBuf::from("out"),
            workers: None,
            x0: None,
        }
    }
}

impl OrderManifest {
    pub fn load(path: &Path) -> Result<Self> {
        load_json(path)
    }

    pub fn validate(&self) -> Result<()> {
        if self.paths == 0 {
            return Err(Error::InvalidConfig("paths must be at least 1".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::InvalidConfig("no schemes given".into()));
        }
        if self.h_exponents.len() < 3 {
            return Err(Error::InvalidConfig(
                "need at least three step sizes".into(),
            ));
        }
        if self.ref_exponent > 30 {
            return Err(Error::InvalidConfig(
                "ref_exponent must be at most 30".into(),
            ));
        }
        if let Some(&e) = self.h_exponents.iter().find(|&&e| e > self.ref_exponent) {
            return Err(Error::InvalidConfig(format!(
                "h exponent {e} is finer than the reference exponent {}",
                self.ref_exponent
            )));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::InvalidConfig("T must be positive".into()));
        }
        Ok(())
    }
}
