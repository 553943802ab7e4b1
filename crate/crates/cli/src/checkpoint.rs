//! `checkpoint.bin` holds every parameter as little-endian f64, averaged
//! model first, then the raw model, each in weight/bias layer order.
//! `checkpoint.json` describes the layout and carries config and state.

use std::path::Path;

use freematch_core::adaptive_threshold::ThresholdState;
use freematch_core::ndcore::MlpModel;
use freematch_core::trainer::{flatten_params, model_from_flat, Checkpoint, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{runtime, CliError, CliResult};
use crate::output::OutDir;

pub const BIN_NAME: &str = "checkpoint.bin";
pub const MANIFEST_NAME: &str = "checkpoint.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in f64 elements from the start of the binary.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub binary: String,
    pub widths: Vec<usize>,
    pub tensors: Vec<TensorEntry>,
    pub config: TrainConfig,
    pub state: ThresholdState,
    pub final_error: f64,
    pub best_error: f64,
}

fn entries(prefix: &str, model: &MlpModel, offset: &mut usize) -> Vec<TensorEntry> {
    let mut out = Vec::new();
    for (i, layer) in model.layers().iter().enumerate() {
        for (kind, t) in [("weight", &layer.weight), ("bias", &layer.bias)] {
            out.push(TensorEntry {
                name: format!("{prefix}.{i}.{kind}"),
                shape: t.shape().to_vec(),
                offset: *offset,
            });
            *offset += t.len();
        }
    }
    out
}

pub fn write(out: &OutDir, ck: &Checkpoint, final_error: f64, best_error: f64) -> CliResult<()> {
    let mut flat = flatten_params(&ck.ema_model);
    flat.extend(flatten_params(&ck.model));
    let bytes: Vec<u8> = flat.iter().flat_map(|v| v.to_le_bytes()).collect();

    let mut offset = 0;
    let mut tensors = entries("ema_model", &ck.ema_model, &mut offset);
    tensors.extend(entries("model", &ck.model, &mut offset));
    let manifest = Manifest {
        format: "f64-le".into(),
        binary: BIN_NAME.into(),
        widths: ck.model.widths(),
        tensors,
        config: ck.config.clone(),
        state: ck.state.clone(),
        final_error,
        best_error,
    };
    let json = serde_json::to_vec_pretty(&manifest).map_err(runtime)?;
    out.write(BIN_NAME, &bytes)?;
    out.write(MANIFEST_NAME, &json)?;
    Ok(())
}

pub fn read(dir: &Path) -> CliResult<(Manifest, Checkpoint)> {
    let text = std::fs::read_to_string(dir.join(MANIFEST_NAME))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(runtime)?;
    let bytes = std::fs::read(dir.join(&manifest.binary))?;
    if bytes.len() % 8 != 0 {
        return Err(CliError::Runtime("checkpoint binary is not a whole number of f64".into()));
    }
    let flat: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let half = flat.len() / 2;
    let ema_model = model_from_flat(&manifest.widths, &flat[..half]).map_err(runtime)?;
    let model = model_from_flat(&manifest.widths, &flat[half..]).map_err(runtime)?;
    let ck = Checkpoint {
        config: manifest.config.clone(),
        ema_model,
        model,
        state: manifest.state.clone(),
    };
    Ok((manifest, ck))
}
