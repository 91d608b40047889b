//! Training configuration, loss history and the two training loops.

mod ada;
mod tc;

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adagan::{AdaLossWeights, AttrGeneratorConfig};
use crate::error::{Error, Result};
use crate::geometry::{Attribute, Resolution};
use crate::nn::{Module, ParamSet};
use crate::tcgan::TcLossWeights;
use crate::tensor::{Adam, AdamConfig, Gradients, Graph, Tensor, Var};

pub use ada::{train_adagan, train_adagan_from, AdaModel, AdaReport};
pub use tc::{train_tcgan, train_tcgan_from, visible_l1, TcModel, TcReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub resolution: Resolution,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Texture-completion epochs.
    pub epochs: usize,
    pub phase1_epochs: usize,
    pub phase2_epochs: usize,
    /// Yaw angles in degrees.
    pub pose_set: Vec<f64>,
    pub seed: u64,
    /// Share of identities held out for validation.
    pub validation_fraction: f64,
    pub tc_weights: TcLossWeights,
    pub ada_weights: AdaLossWeights,
    pub tc_width: usize,
    pub critic_width: usize,
    pub attr_generator: AttrGeneratorConfig,
    /// Restricts phase 2 to one attribute; otherwise one is drawn per batch.
    pub target: Option<Attribute>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            resolution: Resolution::new(32).expect("32 is allowed"),
            batch_size: 8,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            epochs: 20,
            phase1_epochs: 10,
            phase2_epochs: 10,
            pose_set: crate::data::default_pose_set(),
            seed: 0,
            validation_fraction: 0.1,
            tc_weights: TcLossWeights::default(),
            ada_weights: AdaLossWeights::default(),
            tc_width: 32,
            critic_width: 32,
            attr_generator: AttrGeneratorConfig::default(),
            target: None,
        }
    }
}

impl TrainConfig {
    /// Reads TOML or JSON, chosen by extension.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let config: TrainConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?,
            Some("json") => serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?,
            _ => return Err(Error::format(path, "config must be .toml or .json")),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return bad("adam betas must lie in [0, 1) and eps must be positive".into());
        }
        if self.pose_set.is_empty() || !crate::data::is_symmetric(&self.pose_set) {
            return bad(format!("pose set must be non-empty and symmetric about 0: {:?}", self.pose_set));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 1)".into());
        }
        if self.tc_width == 0 || self.critic_width == 0 || self.attr_generator.width == 0 {
            return bad("network widths must be positive".into());
        }
        self.tc_weights.validate()?;
        self.ada_weights.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub step: u64,
    pub term: String,
    pub value: f64,
}

/// Scalar training log, one row per (step, term).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossHistory {
    pub rows: Vec<LossRow>,
}

impl LossHistory {
    pub fn push(&mut self, step: u64, term: &str, value: f64) {
        self.rows.push(LossRow {
            step,
            term: term.to_string(),
            value,
        });
    }

    /// Values of one term in logging order.
    pub fn values(&self, term: &str) -> Vec<f64> {
        self.rows.iter().filter(|r| r.term == term).map(|r| r.value).collect()
    }

    pub fn last(&self, term: &str) -> Option<f64> {
        self.rows.iter().rev().find(|r| r.term == term).map(|r| r.value)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let rows = r.deserialize().collect::<std::result::Result<_, _>>()?;
        Ok(LossHistory { rows })
    }
}

/// Shuffled split of `0..n` into (train, validation). At least one
/// identity is held out whenever `fraction > 0` and `n > 1`.
pub fn split_identities(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0F_5B17));
    let mut held = (n as f64 * fraction).round() as usize;
    if fraction > 0.0 && n > 1 {
        held = held.clamp(1, n - 1);
    }
    let val = idx.split_off(n - held);
    (idx, val)
}

/// Independent stream per epoch so that a resumed run draws what an
/// uninterrupted one would.
pub(crate) fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// A network and its optimizer.
#[derive(Clone, Debug)]
pub struct Learner<M> {
    pub net: M,
    pub opt: Adam,
}

impl<M: Module> Learner<M> {
    pub fn new(net: M, config: AdamConfig) -> Self {
        let opt = Adam::new(config, net.params().tensors());
        Learner { net, opt }
    }

    /// Applies one Adam update from the gradients of `bound`.
    pub(crate) fn update(&mut self, grads: &mut Gradients, bound: &[Var]) -> Result<()> {
        let g = param_grads(grads, bound, self.net.params());
        self.opt.step(self.net.params_mut().tensors_mut(), &g)
    }
}

pub(crate) fn param_grads(grads: &mut Gradients, bound: &[Var], params: &ParamSet) -> Vec<Tensor> {
    bound
        .iter()
        .zip(params.tensors())
        .map(|(v, t)| grads.take_or_zeros(*v, t))
        .collect()
}

/// Frozen networks are bound as constants; anything else would let one
/// backward pass update both sides of a game.
pub(crate) fn assert_frozen(g: &Graph, bound: &[Var]) -> Result<()> {
    if bound.iter().any(|v| g.requires_grad(*v)) {
        return Err(Error::Contract("frozen network bound with gradient tracking".into()));
    }
    Ok(())
}

pub(crate) fn assert_no_grads(grads: &Gradients, bound: &[Var]) -> Result<()> {
    if bound.iter().any(|v| grads.get(*v).is_some()) {
        return Err(Error::Contract("gradient reached a frozen network".into()));
    }
    Ok(())
}

/// Logs `term` and rejects non-finite values.
pub(crate) fn record(history: &mut LossHistory, step: u64, term: &str, value: f64) -> Result<f64> {
    if !value.is_finite() {
        return Err(Error::Numerical {
            step: step as usize,
            term: term.to_string(),
        });
    }
    history.push(step, term, value);
    Ok(value)
}

pub(crate) fn batches<T: Clone>(items: &[T], size: usize) -> impl Iterator<Item = Vec<T>> + '_ {
    items.chunks(size).map(<[T]>::to_vec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_toml_and_json() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = TrainConfig::default();
        c.target = Some(Attribute::Sunglasses);
        c.lr = 3e-4;
        let t = dir.path().join("c.toml");
        fs::write(&t, toml::to_string(&c).unwrap()).unwrap();
        assert_eq!(TrainConfig::load(&t).unwrap(), c);
        let j = dir.path().join("c.json");
        fs::write(&j, serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(TrainConfig::load(&j).unwrap(), c);

        let partial = dir.path().join("p.toml");
        fs::write(&partial, "batch_size = 4\n").unwrap();
        let p = TrainConfig::load(&partial).unwrap();
        assert_eq!(p.batch_size, 4);
        assert_eq!(p.epochs, 20);

        fs::write(&partial, "batch_sise = 4\n").unwrap();
        assert!(TrainConfig::load(&partial).is_err());
    }

    #[test]
    fn asymmetric_pose_set_rejected() {
        let c = TrainConfig {
            pose_set: vec![15.0, 30.0],
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn split_is_a_partition() {
        let (t, v) = split_identities(200, 0.1, 4);
        assert_eq!((t.len(), v.len()), (180, 20));
        let mut all: Vec<usize> = t.iter().chain(&v).copied().collect();
        all.sort();
        assert_eq!(all, (0..200).collect::<Vec<_>>());
        assert_eq!(split_identities(200, 0.1, 4), (t, v));
        assert_eq!(split_identities(3, 0.01, 0).1.len(), 1);
    }

    #[test]
    fn history_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut h = LossHistory::default();
        h.push(0, "l_r", 0.25);
        h.push(1, "l_r", 0.1 + 0.2);
        h.push(1, "l_d", 1.386_294_361_119_890_6);
        let p = dir.path().join("h.csv");
        h.write_csv(&p).unwrap();
        assert_eq!(LossHistory::read_csv(&p).unwrap(), h);
        assert!(fs::read_to_string(&p).unwrap().starts_with("step,term,value\n"));
        assert_eq!(h.values("l_r"), vec![0.25, 0.1 + 0.2]);
    }

    #[test]
    fn non_finite_loss_names_step_and_term() {
        let mut h = LossHistory::default();
        match record(&mut h, 7, "l_tv", f64::NAN) {
            Err(Error::Numerical { step, term }) => assert_eq!((step, term.as_str()), (7, "l_tv")),
            other => panic!("{other:?}"),
        }
    }
}
