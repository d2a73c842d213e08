//! Model checkpoints: a directory holding one DTEN file per parameter and a
//! `model.txt` of `key = value` metadata.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::autodiff::ParameterSet;
use crate::config::KeyValues;
use crate::deq::{SolverConfig, SolverMethod};
use crate::error::{io_err, Error, Result};
use crate::io::{read_dten_array, write_dten};
use crate::network::{NetworkConfig, UpdateNetwork};
use crate::tensor::{DType, Element, Tensor};
use crate::train::{TrainConfig, TrainMode};

const FORMAT: u32 = 1;
pub const METADATA_FILE: &str = "model.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Unroll,
    Deq,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Unroll => "unroll",
            ModelKind::Deq => "deq",
        })
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "unroll" => Ok(ModelKind::Unroll),
            "deq" => Ok(ModelKind::Deq),
            other => Err(format!("unknown model kind {other:?} (unroll|deq)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T: Element> {
    pub kind: ModelKind,
    pub network: UpdateNetwork<T>,
    pub trained_steps: usize,
    pub lambda: f64,
    /// Inference solver settings (equilibrium models).
    pub solver: SolverConfig,
}

impl<T: Element> Checkpoint<T> {
    pub fn from_training(network: UpdateNetwork<T>, cfg: &TrainConfig) -> Self {
        let (kind, solver) = match cfg.mode {
            TrainMode::Unroll(_) => (ModelKind::Unroll, SolverConfig::default()),
            TrainMode::Deq(d) => (ModelKind::Deq, d.solver),
        };
        Checkpoint {
            kind,
            network,
            trained_steps: cfg.mode.trained_steps(),
            lambda: cfg.lambda,
            solver,
        }
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let names: Vec<&str> = self.network.params.names().collect();
        let meta = format!(
            "format = {FORMAT}\nkind = {}\ndtype = {}\nhidden = {}\nalpha = {}\ntrained_steps = {}\nlambda = {}\n\
             solver = {}\nrel_tol = {}\nanderson_memory = {}\nparams = {}\n",
            self.kind,
            T::DTYPE.name(),
            self.network.config.hidden,
            self.network.config.alpha,
            self.trained_steps,
            self.lambda,
            self.solver.method,
            self.solver.rel_tol,
            self.solver.anderson_memory,
            names.join(",")
        );
        for (name, t) in self.network.params.iter() {
            write_dten(dir.join(format!("{name}.dten")), t)?;
        }
        let path = dir.join(METADATA_FILE);
        fs::write(&path, meta).map_err(io_err(&path))
    }

    /// Loads a checkpoint, converting stored parameters to `T`.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let bad = |detail: String| Error::Checkpoint {
            path: dir.to_path_buf(),
            detail,
        };
        let meta_path = dir.join(METADATA_FILE);
        if !meta_path.is_file() {
            return Err(bad(format!("missing {METADATA_FILE}")));
        }
        let kv = KeyValues::read(&meta_path).map_err(|e| bad(e.to_string()))?;
        let field = |e: Error| bad(e.to_string());
        let format: u32 = kv.require("format").map_err(field)?;
        if format != FORMAT {
            return Err(bad(format!("unsupported format {format}")));
        }
        let config = NetworkConfig {
            hidden: kv.require("hidden").map_err(field)?,
            alpha: kv.require("alpha").map_err(field)?,
        };
        let solver = SolverConfig {
            max_steps: kv.require("trained_steps").map_err(field)?,
            rel_tol: kv.require("rel_tol").map_err(field)?,
            method: kv.require::<SolverMethod>("solver").map_err(field)?,
            anderson_memory: kv.require("anderson_memory").map_err(field)?,
        };
        let mut params = ParameterSet::new();
        let list: String = kv.require("params").map_err(field)?;
        for name in list.split(',').filter(|n| !n.is_empty()) {
            let path: PathBuf = dir.join(format!("{name}.dten"));
            let array = read_dten_array(&path).map_err(|e| bad(format!("{name}: {e}")))?;
            let t: Tensor<T> = match array.dtype {
                DType::F32 => array.to_tensor::<f32>()?.cast(),
                DType::F64 => array.to_tensor::<f64>()?.cast(),
                other => return Err(bad(format!("{name}: parameters cannot be {}", other.name()))),
            };
            params.insert(name, t).map_err(|e| bad(e.to_string()))?;
        }
        let network = UpdateNetwork::from_params(config, params).map_err(|e| bad(e.to_string()))?;
        Ok(Checkpoint {
            kind: kv.require("kind").map_err(field)?,
            network,
            trained_steps: solver.max_steps,
            lambda: kv.require("lambda").map_err(field)?,
            solver,
        })
    }
}
