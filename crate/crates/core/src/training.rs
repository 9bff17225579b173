//! Joint training of encoders and adapter under the Cox loss.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adapters::{
    AdapterKind, AdapterParams, AttentionAdapterParams, MambaAdapterParams, MlpAdapterParams, Pooling,
    StateReadout,
};
use crate::data::{Cohort, PatientRecord, Split};
use crate::encoders::{EncoderDims, EncoderParams};
use crate::error::{Error, Result};
use crate::evaluation::{concordance_index, MetricReport};
use crate::params::{Bound, ParamStore};
use crate::survival::{
    breslow_baseline, cox_ranking_loss_tape, stratify_tertiles, survival_function, BaselineHazard,
    RiskStratum,
};
use crate::tape::{Axis, Gradients, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub adapter_kind: AdapterKind,
    pub d_joint: usize,
    pub d_hidden: usize,
    pub d_h: usize,
    pub d_y: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub gate_bias: f64,
    pub readout: StateReadout,
    pub pooling: Pooling,
    /// One full-batch step per epoch with risk sets over the whole
    /// training split instead of within mini-batches.
    pub full_risk_set: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            batch_size: 16,
            epochs: 30,
            adapter_kind: AdapterKind::Mamba,
            d_joint: 256,
            d_hidden: 256,
            d_h: 256,
            d_y: 256,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            gate_bias: 0.0,
            readout: StateReadout::PostUpdate,
            pooling: Pooling::Last,
            full_risk_set: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: alloc::string::String| Err(Error::InvalidConfig(m));
        if self.batch_size < 2 {
            return fail(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if [self.d_joint, self.d_hidden, self.d_h, self.d_y].contains(&0) {
            return fail("model widths must be positive".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("Adam betas must lie in [0, 1)".into());
        }
        if !(self.epsilon > 0.0) || !self.gate_bias.is_finite() {
            return fail("epsilon must be positive and gate_bias finite".into());
        }
        Ok(())
    }
}

/// Encoders, adapter and their parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: TrainConfig,
    pub store: ParamStore,
    pub encoder: EncoderParams,
    pub adapter: AdapterParams,
}

impl Model {
    /// Freshly initialized model; deterministic in `config.seed`.
    pub fn new(config: &TrainConfig, d_rad: usize, d_path: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let encoder = EncoderParams::new(
            &mut store,
            &mut rng,
            EncoderDims {
                d_rad,
                d_path,
                d_hidden: config.d_hidden,
                d_joint: config.d_joint,
            },
        );
        let adapter = match config.adapter_kind {
            AdapterKind::Mamba => {
                let mut p = MambaAdapterParams::new(
                    &mut store,
                    &mut rng,
                    config.d_joint,
                    config.d_h,
                    config.d_y,
                    config.gate_bias,
                );
                p.readout = config.readout;
                p.pooling = config.pooling;
                AdapterParams::Mamba(p)
            }
            AdapterKind::Mlp => AdapterParams::Mlp(MlpAdapterParams::new(
                &mut store,
                &mut rng,
                config.d_joint,
                config.d_hidden,
                config.d_y,
            )),
            AdapterKind::Attention => AdapterParams::Attention(AttentionAdapterParams::new(
                &mut store,
                &mut rng,
                config.d_joint,
                config.d_y,
            )),
        };
        Ok(Self {
            config: config.clone(),
            store,
            encoder,
            adapter,
        })
    }

    pub fn d_rad(&self) -> usize {
        self.encoder.dims.d_rad
    }

    pub fn d_path(&self) -> usize {
        self.encoder.dims.d_path
    }

    /// Binds the parameters and records the risk of every record on one
    /// tape, as a `1 x n` row.
    pub fn risks_on_tape(&self, tape: &mut Tape, records: &[&PatientRecord]) -> Result<(Bound, Var)> {
        let bound = self.store.bind(tape);
        let mut risks = Vec::with_capacity(records.len());
        for r in records {
            let tokens = self.encoder.encode_on_tape(tape, &bound, &r.bundle)?;
            risks.push(self.adapter.risk_on_tape(tape, &bound, &self.store, tokens)?);
        }
        let row = tape.concat(&risks, Axis::Cols)?;
        Ok((bound, row))
    }

    pub fn predict(&self, records: &[&PatientRecord]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(records.len());
        for r in records {
            let mut tape = Tape::new();
            let (_, v) = self.risks_on_tape(&mut tape, &[r])?;
            out.push(tape.value(v).data()[0]);
        }
        Ok(out)
    }

    fn check_cohort(&self, cohort: &Cohort) -> Result<()> {
        if let (Some(d_rad), Some(d_path)) = (cohort.d_rad(), cohort.d_path()) {
            for (m, expected, found) in [
                (crate::data::ModalityId::T1, self.d_rad(), d_rad),
                (crate::data::ModalityId::Path, self.d_path(), d_path),
            ] {
                if expected != found {
                    return Err(Error::DimensionMismatch {
                        modality: m,
                        expected,
                        found,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Adam with bias correction and no weight decay.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: i32,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let zeros: Vec<Tensor> = store.params().iter().map(|p| Tensor::zeros(p.value.dims())).collect();
        Self {
            lr,
            beta1,
            beta2,
            epsilon,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    /// Updates every trainable parameter; frozen ones are skipped entirely.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, bound: &Bound) {
        let vars = bound.vars();
        self.step += 1;
        let c1 = 1.0 - libm::pow(self.beta1, self.step as f64);
        let c2 = 1.0 - libm::pow(self.beta2, self.step as f64);
        for (k, p) in store.params_mut().iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let g = grads.get(vars[k]);
            let m = self.first[k].data_mut();
            let v = self.second[k].data_mut();
            for (((theta, &gi), mi), vi) in p.value.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *theta -= self.lr * m_hat / (libm::sqrt(v_hat) + self.epsilon);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-batch Cox loss.
    pub train_loss: f64,
    pub val_c_index: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint {
    pub model: Model,
    pub history: Vec<EpochRecord>,
    /// Breslow baseline fitted on the training split with the final weights.
    pub baseline: Option<BaselineHazard>,
}

/// Splits a shuffled index list into batches. A trailing short batch without
/// events is merged into the one before it.
pub fn make_batches(order: &[usize], batch_size: usize, events: &[bool]) -> Vec<Vec<usize>> {
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(|c| c.to_vec()).collect();
    if batches.len() > 1 {
        let last = batches.last().unwrap();
        if last.len() < batch_size && !last.iter().any(|&i| events[i]) {
            let tail = batches.pop().unwrap();
            batches.last_mut().unwrap().extend(tail);
        }
    }
    batches
}

fn loss_and_grads(model: &Model, records: &[&PatientRecord]) -> Result<(f64, Gradients, Bound)> {
    let mut tape = Tape::new();
    let (bound, risks) = model.risks_on_tape(&mut tape, records)?;
    let times: Vec<f64> = records.iter().map(|r| r.survival_time).collect();
    let events: Vec<bool> = records.iter().map(|r| r.event).collect();
    let loss = cox_ranking_loss_tape(&mut tape, risks, &times, &events)?;
    let value = tape.value(loss).data()[0];
    let grads = tape.backward(loss)?;
    Ok((value, grads, bound))
}

/// Cox loss of the model on `records` (risk sets within `records`).
pub fn batch_loss(model: &Model, records: &[&PatientRecord]) -> Result<f64> {
    let mut tape = Tape::new();
    let (_, risks) = model.risks_on_tape(&mut tape, records)?;
    let times: Vec<f64> = records.iter().map(|r| r.survival_time).collect();
    let events: Vec<bool> = records.iter().map(|r| r.event).collect();
    let loss = cox_ranking_loss_tape(&mut tape, risks, &times, &events)?;
    Ok(tape.value(loss).data()[0])
}

/// One optimizer step on `records`; returns the loss before the update.
pub fn train_step(model: &mut Model, adam: &mut Adam, records: &[&PatientRecord]) -> Result<f64> {
    let (loss, grads, bound) = loss_and_grads(model, records)?;
    adam.step(&mut model.store, &grads, &bound);
    Ok(loss)
}

fn split_records(cohort: &Cohort, which: Split) -> Result<Vec<&PatientRecord>> {
    Ok(cohort
        .indices(which)?
        .into_iter()
        .map(|i| &cohort.records()[i])
        .collect())
}

fn c_index_of(model: &Model, records: &[&PatientRecord]) -> Result<Option<f64>> {
    if records.len() < 2 {
        return Ok(None);
    }
    let risks = model.predict(records)?;
    let times: Vec<f64> = records.iter().map(|r| r.survival_time).collect();
    let events: Vec<bool> = records.iter().map(|r| r.event).collect();
    match concordance_index(&risks, &times, &events) {
        Ok(m) => Ok(Some(m.c_index)),
        Err(Error::NoComparablePairs) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Trains on the cohort's training split and keeps the epoch with the best
/// validation c-index (later epochs win ties).
pub fn train(cohort: &Cohort, config: &TrainConfig) -> Result<ModelCheckpoint> {
    config.validate()?;
    let train_records = split_records(cohort, Split::Train)?;
    let val_records = split_records(cohort, Split::Val)?;
    if !train_records.iter().any(|r| r.event) {
        return Err(Error::NoEvents("training split"));
    }
    let d_rad = cohort.d_rad().ok_or(Error::EmptyInput { op: "train" })?;
    let d_path = cohort.d_path().ok_or(Error::EmptyInput { op: "train" })?;

    let mut model = Model::new(config, d_rad, d_path)?;
    let mut adam = Adam::new(&model.store, config.learning_rate, config.beta1, config.beta2, config.epsilon);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);
    let train_events: Vec<bool> = train_records.iter().map(|r| r.event).collect();

    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, ParamStore)> = None;
    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..train_records.len()).collect();
        order.shuffle(&mut shuffle_rng);
        let batches = if config.full_risk_set {
            alloc::vec![order]
        } else {
            make_batches(&order, config.batch_size, &train_events)
        };
        let mut total = 0.0;
        for (b, batch) in batches.iter().enumerate() {
            let records: Vec<&PatientRecord> = batch.iter().map(|&i| train_records[i]).collect();
            let loss = train_step(&mut model, &mut adam, &records)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            total += loss;
        }
        let val_c_index = c_index_of(&model, &val_records)?;
        history.push(EpochRecord {
            epoch,
            train_loss: total / batches.len() as f64,
            val_c_index,
        });
        if let Some(c) = val_c_index {
            if best.as_ref().is_none_or(|(b, _)| c >= *b) {
                best = Some((c, model.store.clone()));
            }
        }
    }
    if let Some((_, store)) = best {
        model.store = store;
    }

    let baseline = {
        let risks = model.predict(&train_records)?;
        let times: Vec<f64> = train_records.iter().map(|r| r.survival_time).collect();
        Some(breslow_baseline(&risks, &times, &train_events)?)
    };
    Ok(ModelCheckpoint {
        model,
        history,
        baseline,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RiskRow {
    /// Index into the cohort's records.
    pub index: usize,
    pub risk: f64,
    pub stratum: RiskStratum,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: MetricReport,
    pub rows: Vec<RiskRow>,
}

/// Risks, tertile strata and concordance on one split (`None` = all records).
pub fn evaluate(checkpoint: &ModelCheckpoint, cohort: &Cohort, split: Option<Split>) -> Result<Evaluation> {
    let model = &checkpoint.model;
    model.check_cohort(cohort)?;
    let indices: Vec<usize> = match split {
        Some(s) => cohort.indices(s)?,
        None => (0..cohort.len()).collect(),
    };
    let records: Vec<&PatientRecord> = indices.iter().map(|&i| &cohort.records()[i]).collect();
    let risks = model.predict(&records)?;
    let times: Vec<f64> = records.iter().map(|r| r.survival_time).collect();
    let events: Vec<bool> = records.iter().map(|r| r.event).collect();
    let report = concordance_index(&risks, &times, &events)?;
    let strata = stratify_tertiles(&risks)?;
    let rows = indices
        .into_iter()
        .zip(risks)
        .zip(strata)
        .map(|((index, risk), stratum)| RiskRow {
            index,
            risk,
            stratum,
        })
        .collect();
    Ok(Evaluation { report, rows })
}

/// Survival probabilities `S(t | risk)` per record and horizon.
pub fn predict(
    checkpoint: &ModelCheckpoint,
    records: &[&PatientRecord],
    baseline: &BaselineHazard,
    horizons: &[f64],
) -> Result<Vec<Vec<f64>>> {
    if let Some(&h) = horizons.iter().find(|&&h| !(h >= 0.0)) {
        return Err(Error::NegativeHorizon(h));
    }
    let risks = checkpoint.model.predict(records)?;
    Ok(risks
        .iter()
        .map(|&r| horizons.iter().map(|&t| survival_function(baseline, r, t)).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_eventless_tail_is_merged() {
        let events = [true, false, true, false, false];
        let b = make_batches(&[0, 1, 2, 3, 4], 2, &events);
        assert_eq!(b, alloc::vec![alloc::vec![0, 1], alloc::vec![2, 3, 4]]);
        let events = [true, false, true, false, true];
        let b = make_batches(&[0, 1, 2, 3, 4], 2, &events);
        assert_eq!(b.len(), 3);
    }

    #[test]
    fn batch_size_one_rejected() {
        let cfg = TrainConfig {
            batch_size: 1,
            ..TrainConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
    }
}
