use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::model::{ActModel, Checkpoint, ModelConfig};
use crate::numerics::{AdamState, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainPhase {
    Tagging,
    Caption,
}

/// Progress of a training run: completed epochs and optimizer moments.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub phase: TrainPhase,
    pub epoch: usize,
    pub adam: AdamState,
}

impl TrainState {
    pub fn new(phase: TrainPhase, model: &ActModel) -> Self {
        TrainState {
            phase,
            epoch: 0,
            adam: AdamState::new(&model.params),
        }
    }

    pub(super) fn expect_phase(&self, phase: TrainPhase) -> Result<()> {
        if self.phase != phase {
            return Err(Error::invalid(format!(
                "training state belongs to the {:?} phase, not {:?}",
                self.phase, phase
            )));
        }
        Ok(())
    }
}

const M_PREFIX: &str = "optimizer.m.";
const V_PREFIX: &str = "optimizer.v.";

#[derive(Serialize, Deserialize)]
struct StateRecord {
    phase: TrainPhase,
    epoch: usize,
    adam_step: u64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

/// Packs weights, optimizer moments and progress into one checkpoint.
/// `run` is stored verbatim so decode-time settings match training.
pub fn training_checkpoint(model: &ActModel, state: &TrainState, run: serde_json::Value) -> Result<Checkpoint> {
    let record = StateRecord {
        phase: state.phase,
        epoch: state.epoch,
        adam_step: state.adam.step,
        beta1: state.adam.beta1,
        beta2: state.adam.beta2,
        epsilon: state.adam.epsilon,
    };
    let config = json!({
        "model": serde_json::to_value(&model.config).map_err(|e| Error::Internal(e.to_string()))?,
        "run": run,
        "state": serde_json::to_value(record).map_err(|e| Error::Internal(e.to_string()))?,
    });
    let mut ck = Checkpoint::from_store(config, &model.params);
    for (id, name, t) in model.params.iter() {
        let i = id.index();
        ck.tensors
            .push((format!("{M_PREFIX}{name}"), Tensor::new(t.shape(), state.adam.m[i].clone())?));
        ck.tensors
            .push((format!("{V_PREFIX}{name}"), Tensor::new(t.shape(), state.adam.v[i].clone())?));
    }
    Ok(ck)
}

fn model_config(ck: &Checkpoint) -> Result<ModelConfig> {
    let v = ck
        .config
        .get("model")
        .ok_or_else(|| Error::validation("checkpoint has no model configuration"))?;
    let cfg: ModelConfig = serde_json::from_value(v.clone())
        .map_err(|e| Error::validation(format!("checkpoint model configuration: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

fn weights(ck: &Checkpoint) -> ParamStore {
    let mut store = ParamStore::new();
    for (name, t) in &ck.tensors {
        if !name.starts_with("optimizer.") {
            store.insert(name.clone(), t.clone());
        }
    }
    store
}

/// Rebuilds the model and, when the checkpoint carries it, the training
/// state. Returns the stored run configuration as well.
pub fn restore_training(ck: &Checkpoint) -> Result<(ActModel, Option<TrainState>, serde_json::Value)> {
    let model = ActModel::from_params(model_config(ck)?, weights(ck))?;
    let run = ck.config.get("run").cloned().unwrap_or(serde_json::Value::Null);
    let Some(rec) = ck.config.get("state") else {
        return Ok((model, None, run));
    };
    let rec: StateRecord = serde_json::from_value(rec.clone())
        .map_err(|e| Error::validation(format!("checkpoint training state: {e}")))?;
    let mut adam = AdamState::with_hyper(&model.params, rec.beta1, rec.beta2, rec.epsilon);
    adam.step = rec.adam_step;
    for (id, name, t) in model.params.iter() {
        for (prefix, slot) in [(M_PREFIX, &mut adam.m), (V_PREFIX, &mut adam.v)] {
            let key = format!("{prefix}{name}");
            let stored = ck
                .get(&key)
                .ok_or_else(|| Error::validation(format!("checkpoint lacks optimizer tensor {key}")))?;
            if stored.shape() != t.shape() {
                return Err(Error::validation(format!(
                    "tensor {key}: expected shape {:?}, found {:?}",
                    t.shape(),
                    stored.shape()
                )));
            }
            slot[id.index()] = stored.data().to_vec();
        }
    }
    let state = TrainState {
        phase: rec.phase,
        epoch: rec.epoch,
        adam,
    };
    Ok((model, Some(state), run))
}

/// Copies every encoder tensor from a (tagging) checkpoint into `model`,
/// leaving the decoder and tagging head as initialised. Returns the number
/// of tensors copied.
pub fn init_encoder_from(model: &mut ActModel, ck: &Checkpoint) -> Result<usize> {
    let names: Vec<String> = model
        .params
        .iter()
        .filter(|(_, n, _)| ActModel::is_encoder_param(n))
        .map(|(_, n, _)| n.to_string())
        .collect();
    for name in &names {
        let t = ck
            .get(name)
            .ok_or_else(|| Error::validation(format!("initial checkpoint lacks tensor {name}")))?;
        model.params.assign(name, t)?;
    }
    Ok(names.len())
}
