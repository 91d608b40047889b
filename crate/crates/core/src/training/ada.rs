use log::info;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{assert_frozen, assert_no_grads, batches, epoch_rng, record, split_identities, Learner, LossHistory, TrainConfig};
use crate::adagan::{
    loss_attr_adv, loss_attr_disc, loss_cycle, loss_identity, loss_masked_recon, loss_phase, loss_quality_adv,
    loss_quality_disc, real_set, AdaComponents, AttrGenerator, AttributeCode, PatchCritic, Phase,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::geometry::{Attribute, AttributeMaskSet};
use crate::nn::Module;
use crate::tensor::{Graph, Tensor};

/// Generator, inverse generator, quality critic and attribute critic.
#[derive(Clone, Debug)]
pub struct AdaModel {
    pub generator: Learner<AttrGenerator>,
    pub inverse: Learner<AttrGenerator>,
    pub quality: Learner<PatchCritic>,
    pub attribute: Learner<PatchCritic>,
    pub phase1_done: usize,
    pub phase2_done: usize,
    pub steps_done: u64,
}

impl AdaModel {
    pub fn new(config: &TrainConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let adam = config.adam();
        AdaModel {
            generator: Learner::new(AttrGenerator::new(config.attr_generator, &mut rng), adam),
            inverse: Learner::new(AttrGenerator::new(config.attr_generator, &mut rng), adam),
            quality: Learner::new(PatchCritic::quality(config.critic_width, &mut rng), adam),
            attribute: Learner::new(PatchCritic::attribute(config.critic_width, &mut rng), adam),
            phase1_done: 0,
            phase2_done: 0,
            steps_done: 0,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        for opt in [
            &mut self.generator.opt,
            &mut self.inverse.opt,
            &mut self.quality.opt,
            &mut self.attribute.opt,
        ] {
            opt.config.lr = lr;
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdaReport {
    pub history: LossHistory,
    /// Held-out mean L1 between phase-one reconstructions and inputs.
    pub val_reconstruction_l1: f64,
    pub validation_ids: Vec<usize>,
}

struct Batch {
    texture: Tensor,
    position: Tensor,
    codes: Vec<AttributeCode>,
}

fn gather(data: &Dataset, ids: &[usize]) -> Result<Batch> {
    let recs: Vec<_> = ids.iter().map(|&i| &data.records[i]).collect();
    Ok(Batch {
        texture: Tensor::cat_batch(&recs.iter().map(|r| r.truth.to_tensor()).collect::<Vec<_>>())?,
        position: Tensor::cat_batch(&recs.iter().map(|r| r.position.to_tensor()).collect::<Vec<_>>())?,
        codes: recs.iter().map(|r| r.code).collect(),
    })
}

fn validate(gen: &AttrGenerator, data: &Dataset, ids: &[usize], batch: usize) -> Result<f64> {
    let mut sum = 0.0;
    for chunk in batches(ids, batch) {
        let b = gather(data, &chunk)?;
        let out = gen.generate(&b.texture, &b.position, &b.codes)?;
        sum += out.zip_map(&b.texture, |a, c| (a - c).abs())?.mean() * chunk.len() as f64;
    }
    Ok(sum / ids.len().max(1) as f64)
}

pub fn train_adagan(data: &Dataset, config: &TrainConfig) -> Result<(AdaModel, AdaReport)> {
    let mut model = AdaModel::new(config);
    let report = train_adagan_from(&mut model, data, config, LossHistory::default())?;
    Ok((model, report))
}

/// Runs the remaining phase-one epochs, then the remaining phase-two epochs.
pub fn train_adagan_from(
    model: &mut AdaModel,
    data: &Dataset,
    config: &TrainConfig,
    mut history: LossHistory,
) -> Result<AdaReport> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput("empty dataset".into()));
    }
    if data.resolution != config.resolution {
        return Err(Error::InvalidInput(format!(
            "dataset resolution {} differs from config {}",
            data.resolution.get(),
            config.resolution.get()
        )));
    }
    let (train_ids, val_ids) = split_identities(data.len(), config.validation_fraction, config.seed);
    let train_codes: Vec<AttributeCode> = train_ids.iter().map(|&i| data.records[i].code).collect();
    let masks = AttributeMaskSet::procedural(config.resolution);
    let full = Tensor::ones(vec![1, 1, config.resolution.get(), config.resolution.get()]);
    let val_batch = config.batch_size.max(16);

    let total = config.phase1_epochs + config.phase2_epochs;
    while model.phase1_done + model.phase2_done < total {
        let phase = if model.phase1_done < config.phase1_epochs {
            Phase::One
        } else {
            Phase::Two
        };
        let epoch = model.phase1_done + model.phase2_done;
        let mut rng = epoch_rng(config.seed, epoch);
        let mut order = train_ids.clone();
        order.shuffle(&mut rng);
        for chunk in batches(&order, config.batch_size) {
            match phase {
                Phase::One => phase_one_step(model, &gather(data, &chunk)?, &full, config, &mut history)?,
                Phase::Two => {
                    let attr = match config.target {
                        Some(a) => a,
                        None => *Attribute::ALL.choose(&mut rng).expect("non-empty"),
                    };
                    // the bit is switched on, so the batch comes from identities lacking it
                    let lacking: Vec<usize> = (0..train_ids.len()).filter(|&i| !train_codes[i].get(attr)).collect();
                    if lacking.is_empty() {
                        continue;
                    }
                    let picks: Vec<usize> = lacking
                        .choose_multiple(&mut rng, chunk.len())
                        .map(|&i| train_ids[i])
                        .collect();
                    let b = gather(data, &picks)?;
                    // critic reals: random training identities carrying the attribute
                    let pool = real_set(&train_codes, attr)?;
                    let reals: Vec<usize> = (0..b.codes.len())
                        .map(|_| train_ids[*pool.choose(&mut rng).expect("non-empty")])
                        .collect();
                    let real = gather(data, &reals)?.texture;
                    let omega = masks.omega_tensor(attr);
                    phase_two_step(model, &b, &real, attr, &omega, config, &mut history)?;
                }
            }
        }
        match phase {
            Phase::One => model.phase1_done += 1,
            Phase::Two => model.phase2_done += 1,
        }
        let val = validate(&model.generator.net, data, &val_ids, val_batch)?;
        record(&mut history, model.steps_done, "val_recon_l1", val)?;
        info!("attr epoch {}/{total} (phase {}): val recon L1 {val:.4}", epoch + 1, phase.number());
    }
    let val = validate(&model.generator.net, data, &val_ids, val_batch)?;
    Ok(AdaReport {
        history,
        val_reconstruction_l1: val,
        validation_ids: val_ids,
    })
}

fn phase_one_step(
    model: &mut AdaModel,
    b: &Batch,
    full: &Tensor,
    config: &TrainConfig,
    history: &mut LossHistory,
) -> Result<()> {
    let step = model.steps_done;
    let mut g = Graph::new();
    let gb = model.generator.net.params().bind(&mut g, true);
    let ib = model.inverse.net.params().bind(&mut g, true);
    let qb = model.quality.net.params().bind(&mut g, false);
    assert_frozen(&g, &qb)?;
    let (t, p) = (g.input(b.texture.clone()), g.input(b.position.clone()));
    let ug = model.generator.net.forward(&mut g, &gb, t, p, &b.codes)?;
    let l_id = loss_identity(&mut g, ug, t)?;
    let q_fake = model.quality.net.forward(&mut g, &qb, ug)?;
    let l_qa = loss_quality_adv(&mut g, q_fake)?;
    let back = model.inverse.net.forward(&mut g, &ib, ug, p, &b.codes)?;
    let l_cc = loss_cycle(&mut g, back, t)?;
    let l_ra = loss_masked_recon(&mut g, ug, t, full)?;
    let c = AdaComponents {
        identity: l_id,
        quality: l_qa,
        cycle: l_cc,
        masked: l_ra,
        attribute: None,
    };
    let total = loss_phase(&mut g, Phase::One, c, &config.ada_weights)?;
    for (name, v) in [("l_id", l_id), ("l_qa", l_qa), ("l_cc", l_cc), ("l_ra", l_ra), ("l_p1", total)] {
        record(history, step, name, g.value(v).item())?;
    }
    let fake = g.value(ug).clone();
    let mut grads = g.backward(total)?;
    assert_no_grads(&grads, &qb)?;
    model.generator.update(&mut grads, &gb)?;
    model.inverse.update(&mut grads, &ib)?;

    quality_step(model, &b.texture, fake, step, history)?;
    model.steps_done += 1;
    Ok(())
}

fn quality_step(model: &mut AdaModel, real: &Tensor, fake: Tensor, step: u64, history: &mut LossHistory) -> Result<()> {
    let mut g = Graph::new();
    let qb = model.quality.net.params().bind(&mut g, true);
    let (r, f) = (g.input(real.clone()), g.input(fake));
    let qr = model.quality.net.forward(&mut g, &qb, r)?;
    let qf = model.quality.net.forward(&mut g, &qb, f)?;
    let l = loss_quality_disc(&mut g, qr, qf)?;
    record(history, step, "l_q", g.value(l).item())?;
    let mut grads = g.backward(l)?;
    model.quality.update(&mut grads, &qb)
}

fn phase_two_step(
    model: &mut AdaModel,
    b: &Batch,
    real: &Tensor,
    attr: Attribute,
    omega: &Tensor,
    config: &TrainConfig,
    history: &mut LossHistory,
) -> Result<()> {
    let step = model.steps_done;
    let target: Vec<AttributeCode> = b.codes.iter().map(|c| c.with(attr, true)).collect();
    let mut g = Graph::new();
    let gb = model.generator.net.params().bind(&mut g, true);
    let ib = model.inverse.net.params().bind(&mut g, true);
    let qb = model.quality.net.params().bind(&mut g, false);
    let ab = model.attribute.net.params().bind(&mut g, false);
    assert_frozen(&g, &qb)?;
    assert_frozen(&g, &ab)?;
    let (t, p) = (g.input(b.texture.clone()), g.input(b.position.clone()));

    let same = model.generator.net.forward(&mut g, &gb, t, p, &b.codes)?;
    let l_id = loss_identity(&mut g, same, t)?;
    let ug = model.generator.net.forward(&mut g, &gb, t, p, &target)?;
    let q_fake = model.quality.net.forward(&mut g, &qb, ug)?;
    let l_qa = loss_quality_adv(&mut g, q_fake)?;
    let back = model.inverse.net.forward(&mut g, &ib, ug, p, &b.codes)?;
    let l_cc = loss_cycle(&mut g, back, t)?;
    let l_ra = loss_masked_recon(&mut g, ug, t, omega)?;
    let a_fake = model.attribute.net.forward(&mut g, &ab, ug)?;
    let l_av = loss_attr_adv(&mut g, a_fake, attr)?;
    let c = AdaComponents {
        identity: l_id,
        quality: l_qa,
        cycle: l_cc,
        masked: l_ra,
        attribute: Some(l_av),
    };
    let total = loss_phase(&mut g, Phase::Two, c, &config.ada_weights)?;
    for (name, v) in [
        ("l_id", l_id),
        ("l_qa", l_qa),
        ("l_cc", l_cc),
        ("l_ra", l_ra),
        ("l_av", l_av),
        ("l_p2", total),
    ] {
        record(history, step, name, g.value(v).item())?;
    }
    let fake = g.value(ug).clone();
    let mut grads = g.backward(total)?;
    assert_no_grads(&grads, &qb)?;
    assert_no_grads(&grads, &ab)?;
    model.generator.update(&mut grads, &gb)?;
    model.inverse.update(&mut grads, &ib)?;

    quality_step(model, &b.texture, fake.clone(), step, history)?;

    let mut g = Graph::new();
    let abt = model.attribute.net.params().bind(&mut g, true);
    let (r, f) = (g.input(real.clone()), g.input(fake));
    let ar = model.attribute.net.forward(&mut g, &abt, r)?;
    let af = model.attribute.net.forward(&mut g, &abt, f)?;
    let l = loss_attr_disc(&mut g, ar, af, attr)?;
    record(history, step, "l_attr", g.value(l).item())?;
    let mut grads = g.backward(l)?;
    model.attribute.update(&mut grads, &abt)?;

    model.steps_done += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adagan::AttrGeneratorConfig;
    use crate::data::synth_dataset;
    use crate::geometry::Resolution;

    fn tiny() -> (Dataset, TrainConfig) {
        let data = synth_dataset(8, 2, Resolution::new(32).unwrap(), &[]).unwrap();
        let config = TrainConfig {
            pose_set: vec![-15.0, 15.0],
            phase1_epochs: 1,
            phase2_epochs: 1,
            batch_size: 4,
            critic_width: 4,
            attr_generator: AttrGeneratorConfig {
                width: 4,
                residual_blocks: 1,
                code_width: 4,
            },
            validation_fraction: 0.25,
            ..TrainConfig::default()
        };
        (data, config)
    }

    #[test]
    fn both_phases_log_their_terms_deterministically() {
        let (data, config) = tiny();
        let (_, a) = train_adagan(&data, &config).unwrap();
        let (_, b) = train_adagan(&data, &config).unwrap();
        assert_eq!(a.history, b.history);
        assert!(!a.history.values("l_p1").is_empty());
        assert!(!a.history.values("l_p2").is_empty());
        assert!(!a.history.values("l_attr").is_empty());
        // the attribute term belongs to phase two only
        let steps = |term: &str| -> Vec<u64> {
            a.history.rows.iter().filter(|r| r.term == term).map(|r| r.step).collect()
        };
        assert_eq!(steps("l_av"), steps("l_p2"));
        assert!(steps("l_p1").iter().all(|s| !steps("l_av").contains(s)));
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let (data, config) = tiny();
        let (full, report) = train_adagan(&data, &config).unwrap();
        let head = TrainConfig {
            phase2_epochs: 0,
            ..config.clone()
        };
        let (mut model, first) = train_adagan(&data, &head).unwrap();
        let rest = train_adagan_from(&mut model, &data, &config, first.history).unwrap();
        assert_eq!(rest.history, report.history);
        assert_eq!(model.generator.net.params(), full.generator.net.params());
    }
}
