use serde::{Deserialize, Serialize};

use crate::error::{contract, dimension, Result};
use crate::ndcore::mlp::MlpModel;

/// Parameter-space moving average of a model, used for evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEma {
    shadow: MlpModel,
    decay: f64,
}

impl ParamEma {
    pub const DEFAULT_DECAY: f64 = 0.999;

    pub fn new(model: &MlpModel, decay: f64) -> Result<Self> {
        contract!((0.0..1.0).contains(&decay), "EMA decay {decay} outside [0, 1)");
        let mut shadow = model.clone();
        shadow.zero_grad();
        Ok(Self { shadow, decay })
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    /// `shadow <- decay * shadow + (1 - decay) * theta`.
    pub fn update(&mut self, model: &MlpModel) -> Result<()> {
        let src = model.params();
        let mut dst = self.shadow.params_mut();
        contract!(src.len() == dst.len(), "EMA tracks a different model");
        for (s, d) in src.iter().zip(dst.iter()) {
            dimension!(s.shape() == d.shape(), "EMA shape drift: {:?} vs {:?}", s.shape(), d.shape());
        }
        let m = self.decay;
        for (s, d) in src.into_iter().zip(dst.iter_mut()) {
            for (dv, sv) in d.data_mut().iter_mut().zip(s.data()) {
                *dv = m * *dv + (1.0 - m) * sv;
            }
        }
        Ok(())
    }

    pub fn model(&self) -> &MlpModel {
        &self.shadow
    }

    pub fn ema_model(&self) -> MlpModel {
        self.shadow.clone()
    }
}
