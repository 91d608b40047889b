use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{assert_frozen, assert_no_grads, batches, epoch_rng, record, split_identities, Learner, LossHistory, TrainConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::Module;
use crate::tcgan::{
    loss_adversarial, loss_discriminator, loss_reconstruction, loss_tc_total, loss_tv, TcComponents, TcDiscriminator,
    TcGenerator,
};
use crate::tensor::{Graph, Tensor};

/// Completion generator and discriminator with their optimizers.
#[derive(Clone, Debug)]
pub struct TcModel {
    pub generator: Learner<TcGenerator>,
    pub discriminator: Learner<TcDiscriminator>,
    pub epochs_done: usize,
    pub steps_done: u64,
}

impl TcModel {
    pub fn new(config: &TrainConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let gen = TcGenerator::with_width(config.tc_width, &mut rng);
        let disc = TcDiscriminator::with_width(config.critic_width, &mut rng);
        TcModel {
            generator: Learner::new(gen, config.adam()),
            discriminator: Learner::new(disc, config.adam()),
            epochs_done: 0,
            steps_done: 0,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.generator.opt.config.lr = lr;
        self.discriminator.opt.config.lr = lr;
    }
}

#[derive(Clone, Debug)]
pub struct TcReport {
    pub history: LossHistory,
    pub initial_val_lr: f64,
    pub final_val_lr: f64,
    /// Mean L1 between completed and input texels that were visible.
    pub visible_l1: f64,
    pub validation_ids: Vec<usize>,
}

/// `(record, pose)` pairs.
type Pick = (usize, usize);

fn gather(data: &Dataset, picks: &[Pick]) -> Result<(Tensor, Tensor, Tensor, Tensor)> {
    let mut t = Vec::with_capacity(picks.len());
    let mut p = Vec::with_capacity(picks.len());
    let mut y = Vec::with_capacity(picks.len());
    let mut v = Vec::with_capacity(picks.len());
    for &(r, k) in picks {
        let rec = &data.records[r];
        let partial = &rec.partials[k].texture;
        t.push(partial.to_tensor());
        v.push(partial.visibility_tensor());
        p.push(rec.position.to_tensor());
        y.push(rec.truth.to_tensor());
    }
    Ok((
        Tensor::cat_batch(&t)?,
        Tensor::cat_batch(&p)?,
        Tensor::cat_batch(&y)?,
        Tensor::cat_batch(&v)?,
    ))
}

/// Mean absolute difference over visible texels; `visibility` is `N×1×R×R`.
pub fn visible_l1(completed: &Tensor, input: &Tensor, visibility: &Tensor) -> Result<f64> {
    let (n, c, h, w) = completed.nchw()?;
    if input.dims() != completed.dims() || visibility.dims() != [n, 1, h, w] {
        return Err(Error::dim("visible_l1", "maps and visibility disagree"));
    }
    let plane = h * w;
    let (mut sum, mut count) = (0.0, 0usize);
    for b in 0..n {
        for i in 0..plane {
            if visibility.data()[b * plane + i] > 0.5 {
                for ch in 0..c {
                    let j = (b * c + ch) * plane + i;
                    sum += (completed.data()[j] - input.data()[j]).abs();
                }
                count += c;
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Held-out reconstruction loss and visible-texel fidelity over every pose
/// of the validation identities.
fn validate(gen: &TcGenerator, data: &Dataset, ids: &[usize], batch: usize) -> Result<(f64, f64)> {
    let picks: Vec<Pick> = ids
        .iter()
        .flat_map(|&r| (0..data.records[r].partials.len()).map(move |k| (r, k)))
        .collect();
    let (mut lr_sum, mut vis_sum, mut vis_w) = (0.0, 0.0, 0.0);
    for chunk in batches(&picks, batch) {
        let (t, p, y, v) = gather(data, &chunk)?;
        let out = gen.complete(&t, &p)?;
        let l = out.zip_map(&y, |a, b| (a - b).abs())?.mean();
        lr_sum += l * chunk.len() as f64;
        let visible = v.sum();
        vis_sum += visible_l1(&out, &t, &v)? * visible;
        vis_w += visible;
    }
    let n = picks.len().max(1) as f64;
    Ok((lr_sum / n, if vis_w > 0.0 { vis_sum / vis_w } else { 0.0 }))
}

pub fn train_tcgan(data: &Dataset, config: &TrainConfig) -> Result<(TcModel, TcReport)> {
    let mut model = TcModel::new(config);
    let report = train_tcgan_from(&mut model, data, config, LossHistory::default())?;
    Ok((model, report))
}

/// Continues training until `config.epochs` epochs are done in total.
pub fn train_tcgan_from(
    model: &mut TcModel,
    data: &Dataset,
    config: &TrainConfig,
    mut history: LossHistory,
) -> Result<TcReport> {
    config.validate()?;
    if data.is_empty() || data.records.iter().any(|r| r.partials.is_empty()) {
        return Err(Error::InvalidInput("dataset has no pose samples".into()));
    }
    if data.resolution != config.resolution {
        return Err(Error::InvalidInput(format!(
            "dataset resolution {} differs from config {}",
            data.resolution.get(),
            config.resolution.get()
        )));
    }
    let (train_ids, val_ids) = split_identities(data.len(), config.validation_fraction, config.seed);
    let val_batch = config.batch_size.max(16);
    let (initial_val_lr, initial_vis) = validate(&model.generator.net, data, &val_ids, val_batch)?;
    if model.epochs_done == 0 {
        record(&mut history, model.steps_done, "val_l_r", initial_val_lr)?;
        record(&mut history, model.steps_done, "val_visible_l1", initial_vis)?;
    }
    let (mut final_lr, mut final_vis) = (initial_val_lr, initial_vis);

    while model.epochs_done < config.epochs {
        let mut rng = epoch_rng(config.seed, model.epochs_done);
        // one random pose per identity per epoch
        let mut picks: Vec<Pick> = train_ids
            .iter()
            .map(|&r| (r, rng.random_range(0..data.records[r].partials.len())))
            .collect();
        picks.shuffle(&mut rng);
        let mut epoch_lr = 0.0;
        for chunk in batches(&picks, config.batch_size) {
            let l_r = tc_step(model, data, &chunk, config, &mut history)?;
            epoch_lr += l_r * chunk.len() as f64;
        }
        model.epochs_done += 1;
        let step = model.steps_done;
        record(&mut history, step, "epoch_l_r", epoch_lr / picks.len().max(1) as f64)?;
        (final_lr, final_vis) = validate(&model.generator.net, data, &val_ids, val_batch)?;
        record(&mut history, step, "val_l_r", final_lr)?;
        record(&mut history, step, "val_visible_l1", final_vis)?;
        info!(
            "tc epoch {}/{}: val L_r {final_lr:.4}, visible L1 {final_vis:.4}",
            model.epochs_done, config.epochs
        );
    }
    Ok(TcReport {
        history,
        initial_val_lr,
        final_val_lr: final_lr,
        visible_l1: final_vis,
        validation_ids: val_ids,
    })
}

/// One generator update followed by one discriminator update on the same
/// batch; returns the batch reconstruction loss.
fn tc_step(
    model: &mut TcModel,
    data: &Dataset,
    picks: &[Pick],
    config: &TrainConfig,
    history: &mut LossHistory,
) -> Result<f64> {
    let step = model.steps_done;
    let (t, p, y, _) = gather(data, picks)?;

    let mut g = Graph::new();
    let gb = model.generator.net.params().bind(&mut g, true);
    let db = model.discriminator.net.params().bind(&mut g, false);
    assert_frozen(&g, &db)?;
    let (tv, pv, yv) = (g.input(t), g.input(p), g.input(y.clone()));
    let fake = model.generator.net.forward(&mut g, &gb, tv, pv)?;
    let l_r = loss_reconstruction(&mut g, fake, yv)?;
    let d_fake = model.discriminator.net.forward(&mut g, &db, fake)?;
    let l_a = loss_adversarial(&mut g, d_fake)?;
    let l_tv = loss_tv(&mut g, fake)?;
    let c = TcComponents {
        reconstruction: l_r,
        adversarial: l_a,
        tv: l_tv,
    };
    let total = loss_tc_total(&mut g, c, &config.tc_weights)?;
    let l_r_value = record(history, step, "l_r", g.value(l_r).item())?;
    record(history, step, "l_a", g.value(l_a).item())?;
    record(history, step, "l_tv", g.value(l_tv).item())?;
    record(history, step, "l_tc", g.value(total).item())?;
    let fake_value = g.value(fake).clone();
    let mut grads = g.backward(total)?;
    assert_no_grads(&grads, &db)?;
    model.generator.update(&mut grads, &gb)?;

    let mut g = Graph::new();
    let db = model.discriminator.net.params().bind(&mut g, true);
    let (real, fake) = (g.input(y), g.input(fake_value));
    let d_real = model.discriminator.net.forward(&mut g, &db, real)?;
    let d_fake = model.discriminator.net.forward(&mut g, &db, fake)?;
    let l_d = loss_discriminator(&mut g, d_real, d_fake)?;
    record(history, step, "l_d", g.value(l_d).item())?;
    let mut grads = g.backward(l_d)?;
    model.discriminator.update(&mut grads, &db)?;

    model.steps_done += 1;
    Ok(l_r_value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_dataset;
    use crate::geometry::Resolution;

    fn tiny() -> (Dataset, TrainConfig) {
        let poses = vec![-30.0, 30.0];
        let data = synth_dataset(6, 3, Resolution::new(32).unwrap(), &poses).unwrap();
        let config = TrainConfig {
            pose_set: poses,
            epochs: 2,
            batch_size: 4,
            tc_width: 4,
            critic_width: 4,
            validation_fraction: 0.2,
            ..TrainConfig::default()
        };
        (data, config)
    }

    #[test]
    fn fixed_seed_gives_identical_history() {
        let (data, config) = tiny();
        let (_, a) = train_tcgan(&data, &config).unwrap();
        let (_, b) = train_tcgan(&data, &config).unwrap();
        assert_eq!(a.history, b.history);
        assert!(!a.history.values("l_d").is_empty());
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let (data, config) = tiny();
        let (full, report) = train_tcgan(&data, &config).unwrap();
        let half = TrainConfig { epochs: 1, ..config.clone() };
        let (mut model, first) = train_tcgan(&data, &half).unwrap();
        let rest = train_tcgan_from(&mut model, &data, &config, first.history).unwrap();
        assert_eq!(rest.history, report.history);
        assert_eq!(model.generator.net.params(), full.generator.net.params());
    }

    #[test]
    fn visible_l1_counts_only_visible_texels() {
        let a = Tensor::new(vec![1, 3, 1, 2], vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
        let b = Tensor::new(vec![1, 3, 1, 2], vec![0.5, 0.0, 0.5, 0.0, 0.5, 0.0]).unwrap();
        let v = Tensor::new(vec![1, 1, 1, 2], vec![1.0, 0.0]).unwrap();
        assert_eq!(visible_l1(&a, &b, &v).unwrap(), 0.5);
    }
}
