//! Versioned JSON checkpoints: model parameters plus optional training
//! configuration and optimizer state for resuming.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::basis::Basis;
use crate::dataset::write_atomic;
use crate::error::{Error, Result};
use crate::kernel::{KernelModel, ModelSpec};
use crate::nn::BasisNet;
use crate::trainer::{TrainConfig, TrainState};

pub const FORMAT: &str = "stpp-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub spec: ModelSpec,
    pub mu: f64,
    pub alpha: Vec<f64>,
    pub psi: Vec<BasisNet>,
    pub phi: Vec<BasisNet>,
    pub u: Vec<BasisNet>,
    pub v: Vec<BasisNet>,
    pub g: Vec<BasisNet>,
    pub h: Vec<BasisNet>,
    #[serde(default)]
    pub train_config: Option<TrainConfig>,
    #[serde(default)]
    pub state: Option<TrainState>,
}

fn nets(bases: &[Basis]) -> Result<Vec<BasisNet>> {
    bases
        .iter()
        .map(|b| {
            b.as_net()
                .cloned()
                .ok_or_else(|| Error::Config("fixed bases cannot be checkpointed".into()))
        })
        .collect()
}

fn bases(nets: Vec<BasisNet>) -> Result<Vec<Basis>> {
    nets.into_iter()
        .map(|n| {
            n.validate()?;
            Ok(Basis::Net(n))
        })
        .collect()
}

impl Checkpoint {
    pub fn from_model(model: &KernelModel, train_config: Option<&TrainConfig>, state: Option<&TrainState>) -> Result<Self> {
        Ok(Self {
            format: FORMAT.to_string(),
            version: VERSION,
            spec: model.spec.clone(),
            mu: model.mu,
            alpha: model.alpha.clone(),
            psi: nets(&model.psi)?,
            phi: nets(&model.phi)?,
            u: nets(&model.u)?,
            v: nets(&model.v)?,
            g: nets(&model.g)?,
            h: nets(&model.h)?,
            train_config: train_config.cloned(),
            state: state.cloned(),
        })
    }

    pub fn model(&self) -> Result<KernelModel> {
        KernelModel::from_parts(
            self.spec.clone(),
            self.mu,
            self.alpha.clone(),
            bases(self.psi.clone())?,
            bases(self.phi.clone())?,
            bases(self.u.clone())?,
            bases(self.v.clone())?,
            bases(self.g.clone())?,
            bases(self.h.clone())?,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Parse(format!("bad checkpoint: {e}")))?;
        if c.format != FORMAT {
            return Err(Error::Parse(format!("unknown checkpoint format '{}'", c.format)));
        }
        if c.version != VERSION {
            return Err(Error::Parse(format!("unsupported checkpoint version {}", c.version)));
        }
        c.model()?;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
