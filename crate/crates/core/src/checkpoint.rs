//! Checkpoint directories: `manifest.json`, the loss history, and one UVT1
//! file per parameter and optimizer moment.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Attribute;
use crate::nn::Module;
use crate::tensor::{io, Adam};
use crate::training::{AdaModel, Learner, LossHistory, TcModel, TrainConfig};

const FORMAT: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointKind {
    Completion,
    Attribute,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct NetworkEntry {
    name: String,
    params: Vec<String>,
    adam_step: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    format: u32,
    kind: CheckpointKind,
    attributes: Vec<String>,
    config: TrainConfig,
    epochs_done: usize,
    phase1_done: usize,
    phase2_done: usize,
    steps_done: u64,
    networks: Vec<NetworkEntry>,
}

fn save_learner<M: Module>(dir: &Path, name: &str, l: &Learner<M>) -> Result<NetworkEntry> {
    let sub = dir.join(name);
    fs::create_dir_all(&sub)?;
    let (m, v) = l.opt.moments();
    for (i, t) in l.net.params().tensors().iter().enumerate() {
        io::write(sub.join(format!("p{i:03}.uvt")), t)?;
        io::write(sub.join(format!("m{i:03}.uvt")), &m[i])?;
        io::write(sub.join(format!("v{i:03}.uvt")), &v[i])?;
    }
    Ok(NetworkEntry {
        name: name.to_string(),
        params: l.net.params().names().to_vec(),
        adam_step: l.opt.step_count(),
    })
}

fn load_learner<M: Module>(dir: &Path, entry: &NetworkEntry, l: &mut Learner<M>) -> Result<()> {
    let sub = dir.join(&entry.name);
    let params = l.net.params_mut();
    if params.names() != entry.params.as_slice() {
        return Err(Error::format(
            &sub,
            "parameter names differ from the network built from the stored config",
        ));
    }
    let (mut m, mut v) = (Vec::new(), Vec::new());
    for (i, slot) in params.tensors_mut().iter_mut().enumerate() {
        let t = io::read(sub.join(format!("p{i:03}.uvt")))?;
        if t.dims() != slot.dims() {
            return Err(Error::format(
                sub.join(format!("p{i:03}.uvt")),
                format!("shape {:?}, expected {:?}", t.dims(), slot.dims()),
            ));
        }
        *slot = t;
        m.push(io::read(sub.join(format!("m{i:03}.uvt")))?);
        v.push(io::read(sub.join(format!("v{i:03}.uvt")))?);
    }
    l.opt = Adam::from_state(l.opt.config, entry.adam_step, m, v)?;
    Ok(())
}

fn write_manifest(dir: &Path, manifest: &Manifest, history: &LossHistory) -> Result<()> {
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(manifest)?)?;
    history.write_csv(dir.join("history.csv"))
}

fn read_manifest(dir: &Path, kind: CheckpointKind) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::format(&path, e.to_string()))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    if m.format != FORMAT {
        return Err(Error::format(&path, format!("unsupported checkpoint format {}", m.format)));
    }
    if m.kind != kind {
        return Err(Error::format(&path, format!("expected a {kind:?} checkpoint, found {:?}", m.kind)));
    }
    if m.attributes != Attribute::codes() {
        return Err(Error::format(&path, format!("attribute order {:?} not supported", m.attributes)));
    }
    Ok(m)
}

fn entry<'a>(m: &'a Manifest, name: &str, dir: &Path) -> Result<&'a NetworkEntry> {
    m.networks
        .iter()
        .find(|n| n.name == name)
        .ok_or_else(|| Error::format(dir.join("manifest.json"), format!("missing network `{name}`")))
}

fn read_history(dir: &Path) -> Result<LossHistory> {
    let p = dir.join("history.csv");
    if p.exists() {
        LossHistory::read_csv(p)
    } else {
        Ok(LossHistory::default())
    }
}

pub fn save_tc(dir: impl AsRef<Path>, model: &TcModel, config: &TrainConfig, history: &LossHistory) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let networks = vec![
        save_learner(dir, "generator", &model.generator)?,
        save_learner(dir, "discriminator", &model.discriminator)?,
    ];
    let manifest = Manifest {
        format: FORMAT,
        kind: CheckpointKind::Completion,
        attributes: Attribute::codes(),
        config: config.clone(),
        epochs_done: model.epochs_done,
        phase1_done: 0,
        phase2_done: 0,
        steps_done: model.steps_done,
        networks,
    };
    write_manifest(dir, &manifest, history)
}

/// Model, the config it was trained with, and its loss history.
pub fn load_tc(dir: impl AsRef<Path>) -> Result<(TcModel, TrainConfig, LossHistory)> {
    let dir = dir.as_ref();
    let m = read_manifest(dir, CheckpointKind::Completion)?;
    let mut model = TcModel::new(&m.config);
    load_learner(dir, entry(&m, "generator", dir)?, &mut model.generator)?;
    load_learner(dir, entry(&m, "discriminator", dir)?, &mut model.discriminator)?;
    model.epochs_done = m.epochs_done;
    model.steps_done = m.steps_done;
    Ok((model, m.config, read_history(dir)?))
}

pub fn save_ada(dir: impl AsRef<Path>, model: &AdaModel, config: &TrainConfig, history: &LossHistory) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let networks = vec![
        save_learner(dir, "generator", &model.generator)?,
        save_learner(dir, "inverse", &model.inverse)?,
        save_learner(dir, "quality", &model.quality)?,
        save_learner(dir, "attribute", &model.attribute)?,
    ];
    let manifest = Manifest {
        format: FORMAT,
        kind: CheckpointKind::Attribute,
        attributes: Attribute::codes(),
        config: config.clone(),
        epochs_done: model.phase1_done + model.phase2_done,
        phase1_done: model.phase1_done,
        phase2_done: model.phase2_done,
        steps_done: model.steps_done,
        networks,
    };
    write_manifest(dir, &manifest, history)
}

pub fn load_ada(dir: impl AsRef<Path>) -> Result<(AdaModel, TrainConfig, LossHistory)> {
    let dir = dir.as_ref();
    let m = read_manifest(dir, CheckpointKind::Attribute)?;
    let mut model = AdaModel::new(&m.config);
    load_learner(dir, entry(&m, "generator", dir)?, &mut model.generator)?;
    load_learner(dir, entry(&m, "inverse", dir)?, &mut model.inverse)?;
    load_learner(dir, entry(&m, "quality", dir)?, &mut model.quality)?;
    load_learner(dir, entry(&m, "attribute", dir)?, &mut model.attribute)?;
    model.phase1_done = m.phase1_done;
    model.phase2_done = m.phase2_done;
    model.steps_done = m.steps_done;
    Ok((model, m.config, read_history(dir)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adagan::AttrGeneratorConfig;
    use crate::data::synth_dataset;
    use crate::geometry::Resolution;
    use crate::training::{train_tcgan, train_tcgan_from};

    fn small_config() -> TrainConfig {
        TrainConfig {
            pose_set: vec![-15.0, 15.0],
            epochs: 1,
            batch_size: 3,
            tc_width: 4,
            critic_width: 4,
            attr_generator: AttrGeneratorConfig {
                width: 4,
                residual_blocks: 1,
                code_width: 4,
            },
            validation_fraction: 0.25,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn tc_checkpoint_resumes_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let data = synth_dataset(4, 1, Resolution::new(32).unwrap(), &[-15.0, 15.0]).unwrap();
        let cfg = small_config();
        let (model, report) = train_tcgan(&data, &cfg).unwrap();
        save_tc(dir.path(), &model, &cfg, &report.history).unwrap();
        let (mut loaded, cfg2, hist) = load_tc(dir.path()).unwrap();
        assert_eq!(cfg2, cfg);
        assert_eq!(hist, report.history);
        assert_eq!(loaded.generator.net.params(), model.generator.net.params());
        assert_eq!(loaded.discriminator.opt.moments().0, model.discriminator.opt.moments().0);

        let two = TrainConfig { epochs: 2, ..cfg.clone() };
        let mut original = model;
        let a = train_tcgan_from(&mut original, &data, &two, report.history.clone()).unwrap();
        let b = train_tcgan_from(&mut loaded, &data, &two, hist).unwrap();
        assert_eq!(a.history, b.history);
        assert!(load_ada(dir.path()).is_err());
    }

    #[test]
    fn ada_checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config();
        let mut model = AdaModel::new(&cfg);
        model.phase1_done = 3;
        save_ada(dir.path(), &model, &cfg, &LossHistory::default()).unwrap();
        let (loaded, _, _) = load_ada(dir.path()).unwrap();
        assert_eq!(loaded.phase1_done, 3);
        assert_eq!(loaded.inverse.net.params(), model.inverse.net.params());
        assert_eq!(loaded.attribute.net.params(), model.attribute.net.params());
    }
}
