use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use uvface::adagan::AttributeCode;
use uvface::checkpoint::{load_ada, load_tc, save_ada, save_tc};
use uvface::data::{default_pose_set, image_size, is_symmetric, load_dataset, write_synth_dataset};
use uvface::eval::{
    f1, fid, read_pairs, tar_at_far, verify_similarity, AttributeClassifier, ClassifierConfig, Embedder, FeatureSet,
    RandomConvEmbedder,
};
use uvface::geometry::{
    render_to_image, render_uv_texture, Attribute, PointCloud, Pose, RenderStatus, UVTextureMap,
};
use uvface::gradsuite;
use uvface::image::{save_mask_png, RgbImage};
use uvface::training::{train_adagan_from, train_tcgan_from, AdaModel, LossHistory, TcModel, TrainConfig};
use uvface::Tensor;

use crate::files::{
    create_dir, image_files, read_image, read_position, read_texture, read_uvt, save_preview, write_json, write_uvt,
    yaw_tag,
};
use crate::{
    Cli, Command, CompleteArgs, EvalCommand, GenerateArgs, SynthArgs, TrainAttrArgs, TrainShared, TrainTcArgs,
    UsageError, UvmapArgs,
};

/// Seed used when `--seed` is not given.
const DEFAULT_SEED: u64 = 0;

pub fn run(cli: &Cli) -> Result<()> {
    let seed = cli.seed;
    match &cli.command {
        Command::Uvmap(a) => uvmap(a).context("uvmap"),
        Command::Complete(a) => complete(a).context("complete"),
        Command::Generate(a) => generate(a).context("generate"),
        Command::SynthData(a) => synth_data(a, seed.unwrap_or(DEFAULT_SEED)).context("synth-data"),
        Command::TrainTc(a) => train_tc(a, seed).context("train-tc"),
        Command::TrainAttr(a) => train_attr(a, seed).context("train-attr"),
        Command::Eval(e) => eval(e, seed.unwrap_or(DEFAULT_SEED)),
        Command::Gradcheck => gradcheck(seed.unwrap_or(7)).context("gradcheck"),
    }
}

fn parse_attr(s: &str) -> Result<Attribute> {
    Ok(s.parse::<Attribute>()?)
}

fn parse_code(s: &str) -> Result<AttributeCode> {
    let bits: Vec<f64> = s
        .chars()
        .map(|c| match c {
            '0' => Ok(0.0),
            '1' => Ok(1.0),
            _ => Err(UsageError(format!("attribute code must be five 0/1 digits, got `{s}`"))),
        })
        .collect::<Result<_, _>>()?;
    if bits.len() != Attribute::ALL.len() {
        return Err(UsageError(format!("attribute code must be five 0/1 digits, got `{s}`")).into());
    }
    Ok(AttributeCode::from_slice(&bits)?)
}

fn uvmap(a: &UvmapArgs) -> Result<()> {
    let cloud = PointCloud::load(&a.mesh).with_context(|| format!("reading {}", a.mesh.display()))?;
    let image = RgbImage::load_png(&a.image).with_context(|| format!("reading {}", a.image.display()))?;
    let pose = Pose::from_yaw(a.pose, image.width(), image.height());
    let (texture, status) = render_uv_texture(&image, &cloud, &pose, a.res)?;
    if status == RenderStatus::EmptyVisibleSet {
        log::warn!("no texel of {} is visible at yaw {}", a.mesh.display(), a.pose);
    }
    let position = uvface::geometry::build_position_map(&cloud, a.res);
    create_dir(&a.out)?;
    write_uvt(&a.out.join("texture.uvt"), &texture.to_tensor())?;
    write_uvt(&a.out.join("texture_vis.uvt"), &texture.visibility_tensor())?;
    write_uvt(&a.out.join("position.uvt"), &position.to_tensor())?;
    save_preview(&a.out.join("texture.png"), &texture.to_tensor())?;
    log::info!(
        "{} of {} texels visible; wrote {}",
        texture.visible_count(),
        a.res.area(),
        a.out.display()
    );
    Ok(())
}

fn complete(a: &CompleteArgs) -> Result<()> {
    let texture = read_texture(&a.texture)?;
    let position = read_position(&a.position)?;
    let (model, _, _) = load_tc(&a.ckpt).with_context(|| format!("loading {}", a.ckpt.display()))?;
    let out = model.generator.net.complete(&texture, &position.to_tensor())?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_uvt(&a.out, &out)?;
    save_preview(&a.out.with_extension("png"), &out)?;
    log::info!("wrote {}", a.out.display());
    Ok(())
}

fn generate(a: &GenerateArgs) -> Result<()> {
    let original = parse_code(&a.code)?;
    let attr = a.attr.as_deref().map(parse_attr).transpose()?;
    let texture = read_texture(&a.texture)?;
    let position = read_position(&a.position)?;
    let res = position.resolution();
    if UVTextureMap::from_tensor(&texture)?.resolution() != res {
        bail!(UsageError("texture and position map resolutions differ".into()));
    }
    let target = attr.map_or(original, |t| original.with(t, true));
    let out = match &a.ckpt {
        Some(dir) => {
            let (model, _, _) = load_ada(dir).with_context(|| format!("loading {}", dir.display()))?;
            model.generator.net.generate(&texture, &position.to_tensor(), &[target])?
        }
        None => texture.clone(),
    };
    create_dir(&a.out)?;
    write_uvt(&a.out.join("generated.uvt"), &out)?;
    save_preview(&a.out.join("generated.png"), &out)?;
    let map = UVTextureMap::from_tensor(&out)?;
    let size = a.size.unwrap_or_else(|| image_size(res));
    if size == 0 {
        bail!(UsageError("--size must be positive".into()));
    }
    for &yaw in &a.render_yaw {
        let r = render_to_image(&map, &position, &Pose::from_yaw(yaw, size, size), size, size)?;
        let tag = yaw_tag(yaw);
        r.image.save_png(a.out.join(format!("render_{tag}.png")))?;
        save_mask_png(a.out.join(format!("render_{tag}_mask.png")), size, size, &r.coverage)?;
        log::info!("rendered {tag}: {} pixels covered", r.covered());
    }
    log::info!("target code {:?}; wrote {}", target.to_vec(), a.out.display());
    Ok(())
}

fn synth_data(a: &SynthArgs, seed: u64) -> Result<()> {
    let poses = a.poses.clone().unwrap_or_else(default_pose_set);
    if a.n == 0 {
        bail!(UsageError("--n must be positive".into()));
    }
    if poses.is_empty() || !is_symmetric(&poses) {
        bail!(UsageError(format!("pose set must be symmetric about 0: {poses:?}")));
    }
    write_synth_dataset(&a.out, a.n, seed, a.res, &poses)?;
    log::info!("wrote {} identities to {}", a.n, a.out.display());
    Ok(())
}

/// Resolves the config of a fresh run: the file if given, otherwise the
/// defaults at the dataset's resolution and pose set.
fn fresh_config(shared: &TrainShared, data: &uvface::data::Dataset, seed: Option<u64>) -> Result<TrainConfig> {
    let mut config = match &shared.config {
        Some(p) => TrainConfig::load(p).with_context(|| format!("config {}", p.display()))?,
        None => TrainConfig {
            resolution: data.resolution,
            pose_set: data.pose_set.clone(),
            ..TrainConfig::default()
        },
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    Ok(config)
}

fn apply_overrides(config: &mut TrainConfig, shared: &TrainShared, seed: Option<u64>, resumed: bool) -> Result<()> {
    if let Some(lr) = shared.lr {
        config.lr = lr;
    }
    if resumed && seed.is_some_and(|s| s != config.seed) {
        log::warn!("--seed ignored on resume; the checkpoint's seed {} is kept", config.seed);
    }
    config.validate()?;
    Ok(())
}

fn log_config(config: &TrainConfig) -> Result<()> {
    log::info!("resolved config: {}", serde_json::to_string(config)?);
    Ok(())
}

fn write_summary(dir: &Path, value: &impl Serialize) -> Result<()> {
    write_json(&dir.join("summary.json"), value)
}

fn train_tc(a: &TrainTcArgs, seed: Option<u64>) -> Result<()> {
    let s = &a.shared;
    let data = load_dataset(&s.data).with_context(|| format!("loading {}", s.data.display()))?;
    let (mut model, mut config, history) = match &s.resume {
        Some(dir) => {
            let (m, c, h) = load_tc(dir).with_context(|| format!("loading {}", dir.display()))?;
            (m, c, h)
        }
        None => {
            let c = fresh_config(s, &data, seed)?;
            (TcModel::new(&c), c, LossHistory::default())
        }
    };
    apply_overrides(&mut config, s, seed, s.resume.is_some())?;
    if let Some(e) = s.epochs {
        config.epochs = if s.resume.is_some() { model.epochs_done + e } else { e };
    }
    model.set_lr(config.lr);
    log_config(&config)?;
    let report = train_tcgan_from(&mut model, &data, &config, history)?;
    save_tc(&s.out, &model, &config, &report.history)?;

    #[derive(Serialize)]
    struct Summary {
        epochs: usize,
        initial_val_reconstruction: f64,
        final_val_reconstruction: f64,
        visible_l1: f64,
        validation_ids: Vec<usize>,
    }
    write_summary(
        &s.out,
        &Summary {
            epochs: model.epochs_done,
            initial_val_reconstruction: report.initial_val_lr,
            final_val_reconstruction: report.final_val_lr,
            visible_l1: report.visible_l1,
            validation_ids: report.validation_ids,
        },
    )?;
    log::info!(
        "held-out reconstruction {:.4} -> {:.4}, visible L1 {:.4}",
        report.initial_val_lr,
        report.final_val_lr,
        report.visible_l1
    );
    Ok(())
}

fn train_attr(a: &TrainAttrArgs, seed: Option<u64>) -> Result<()> {
    let s = &a.shared;
    let data = load_dataset(&s.data).with_context(|| format!("loading {}", s.data.display()))?;
    let (mut model, mut config, history) = match &s.resume {
        Some(dir) => load_ada(dir).with_context(|| format!("loading {}", dir.display()))?,
        None => {
            let c = fresh_config(s, &data, seed)?;
            (AdaModel::new(&c), c, LossHistory::default())
        }
    };
    if let Some(t) = a.attr.as_deref() {
        config.target = Some(parse_attr(t)?);
    }
    apply_overrides(&mut config, s, seed, s.resume.is_some())?;
    if a.phase == 2 && model.phase1_done < config.phase1_epochs {
        bail!(UsageError(format!(
            "phase 2 needs a checkpoint with phase 1 complete ({} of {} epochs done); pass --resume",
            model.phase1_done, config.phase1_epochs
        )));
    }
    if a.phase == 1 && model.phase2_done > 0 {
        bail!(UsageError("checkpoint has already started phase 2".into()));
    }
    if let Some(e) = s.epochs {
        match a.phase {
            1 => config.phase1_epochs = model.phase1_done.max(if s.resume.is_some() { model.phase1_done + e } else { e }),
            _ => config.phase2_epochs = model.phase2_done + e,
        }
    }
    model.set_lr(config.lr);
    log_config(&config)?;
    // Phase 1 stops at its own end; the stored config keeps the phase-2 length.
    let mut run = config.clone();
    if a.phase == 1 {
        run.phase2_epochs = 0;
    }
    let report = train_adagan_from(&mut model, &data, &run, history)?;
    save_ada(&s.out, &model, &config, &report.history)?;

    #[derive(Serialize)]
    struct Summary {
        phase: u8,
        phase1_epochs: usize,
        phase2_epochs: usize,
        val_reconstruction_l1: f64,
        validation_ids: Vec<usize>,
    }
    write_summary(
        &s.out,
        &Summary {
            phase: a.phase,
            phase1_epochs: model.phase1_done,
            phase2_epochs: model.phase2_done,
            val_reconstruction_l1: report.val_reconstruction_l1,
            validation_ids: report.validation_ids,
        },
    )?;
    log::info!("held-out reconstruction L1 {:.4}", report.val_reconstruction_l1);
    Ok(())
}

fn eval(e: &EvalCommand, seed: u64) -> Result<()> {
    match e {
        EvalCommand::Fid { a, b, out } => eval_fid(a, b, out.as_deref(), seed).context("eval fid"),
        EvalCommand::F1 {
            data,
            inputs,
            attr,
            labels,
            out,
        } => eval_f1(data, inputs, attr, labels.as_deref(), out.as_deref(), seed).context("eval f1"),
        EvalCommand::Verify {
            pairs,
            far,
            scores,
            out,
        } => eval_verify(pairs, *far, scores.as_deref(), out.as_deref(), seed).context("eval verify"),
    }
}

/// A feature matrix file, or a directory of images to embed.
fn features(path: &Path, embedder: &RandomConvEmbedder) -> Result<FeatureSet> {
    if path.is_dir() {
        let rows = image_files(path)?
            .iter()
            .map(|f| embedder.embed(&read_image(f)?).with_context(|| format!("embedding {}", f.display())))
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureSet::from_rows(&rows, path.display().to_string())?)
    } else {
        Ok(FeatureSet::from_tensor(&read_uvt(path)?, path.display().to_string())?)
    }
}

fn emit(out: Option<&Path>, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    println!("{text}");
    if let Some(p) = out {
        write_json(p, value)?;
    }
    Ok(())
}

fn eval_fid(a: &Path, b: &Path, out: Option<&Path>, seed: u64) -> Result<()> {
    let embedder = RandomConvEmbedder::new(seed);
    let (fa, fb) = (features(a, &embedder)?, features(b, &embedder)?);
    let value = fid(&fa, &fb)?;

    #[derive(Serialize)]
    struct Out {
        fid: f64,
        n_a: usize,
        n_b: usize,
        dim: usize,
    }
    emit(
        out,
        &Out {
            fid: value,
            n_a: fa.n(),
            n_b: fb.n(),
            dim: fa.d(),
        },
    )
}

fn read_labels(path: &Path) -> Result<Vec<(String, bool)>> {
    #[derive(serde::Deserialize)]
    struct Row {
        file: String,
        label: String,
    }
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    reader
        .deserialize::<Row>()
        .map(|r| {
            let r = r.with_context(|| format!("reading {}", path.display()))?;
            let label = match r.label.trim() {
                "1" | "true" => true,
                "0" | "false" => false,
                other => bail!(uvface::Error::format(path, format!("label must be 0/1 or true/false, got `{other}`"))),
            };
            Ok((r.file, label))
        })
        .collect()
}

fn eval_f1(
    data: &Path,
    inputs: &Path,
    attr: &str,
    labels: Option<&Path>,
    out: Option<&Path>,
    seed: u64,
) -> Result<()> {
    let attr = parse_attr(attr)?;
    let dataset = load_dataset(data).with_context(|| format!("loading {}", data.display()))?;
    let truth: Vec<Tensor> = dataset.records.iter().map(|r| r.truth.to_tensor()).collect();
    let codes: Vec<AttributeCode> = dataset.records.iter().map(|r| r.code).collect();
    let config = ClassifierConfig {
        seed,
        ..ClassifierConfig::default()
    };
    let classifier = AttributeClassifier::train(&Tensor::cat_batch(&truth)?, &codes, &config)?;

    let (files, expected): (Vec<PathBuf>, Vec<bool>) = match labels {
        Some(csv) => read_labels(csv)?.into_iter().map(|(f, l)| (inputs.join(f), l)).unzip(),
        None => {
            let f = image_files(inputs)?;
            let n = f.len();
            (f, vec![true; n])
        }
    };
    let mut predicted = Vec::with_capacity(files.len());
    for f in &files {
        let t = read_image(f)?;
        if t.dims() != truth[0].dims() {
            bail!(uvface::Error::format(f, format!("expected dims {:?}, got {:?}", truth[0].dims(), t.dims())));
        }
        predicted.extend(classifier.predict_attr(&t, attr)?);
    }
    let score = f1(&predicted, &expected)?;

    #[derive(Serialize)]
    struct Out {
        attribute: &'static str,
        samples: usize,
        predicted_positive: usize,
        precision: f64,
        recall: f64,
        f1: f64,
    }
    emit(
        out,
        &Out {
            attribute: attr.code(),
            samples: files.len(),
            predicted_positive: predicted.iter().filter(|&&p| p).count(),
            precision: score.precision,
            recall: score.recall,
            f1: score.f1,
        },
    )
}

fn eval_verify(pairs: &Path, far: f64, scores_out: Option<&Path>, out: Option<&Path>, seed: u64) -> Result<()> {
    if !(0.0..=1.0).contains(&far) {
        bail!(UsageError(format!("--far must lie in [0, 1], got {far}")));
    }
    let base = pairs.parent().unwrap_or(Path::new("."));
    let records = read_pairs(pairs)?;
    let embedder = RandomConvEmbedder::new(seed);
    let mut scores = Vec::with_capacity(records.len());
    for p in &records {
        let (a, b) = (base.join(&p.path_a), base.join(&p.path_b));
        let s = verify_similarity(&embedder, &read_image(&a)?, &read_image(&b)?)
            .with_context(|| format!("pair {} / {}", a.display(), b.display()))?;
        scores.push(s);
    }
    let same: Vec<bool> = records.iter().map(|p| p.same_id).collect();
    let result = tar_at_far(&scores, &same, far)?;
    if let Some(path) = scores_out {
        let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
        w.write_record(["path_a", "path_b", "same_id", "score"])?;
        for (p, s) in records.iter().zip(&scores) {
            w.write_record([
                p.path_a.display().to_string(),
                p.path_b.display().to_string(),
                (p.same_id as u8).to_string(),
                format!("{s:.12}"),
            ])?;
        }
        w.flush()?;
    }

    #[derive(Serialize)]
    struct Out {
        pairs: usize,
        target_far: f64,
        threshold: f64,
        tar: f64,
        far: f64,
    }
    emit(
        out,
        &Out {
            pairs: records.len(),
            target_far: far,
            threshold: result.threshold,
            tar: result.tar,
            far: result.far,
        },
    )
}

fn gradcheck(seed: u64) -> Result<()> {
    let report = gradsuite::run(seed)?;
    for c in &report.cases {
        let verdict = if c.max_rel_err < gradsuite::TOLERANCE { "ok" } else { "FAIL" };
        println!(
            "{:<22} {:<8} max_rel_err {:.3e}  skipped {}/{}  {verdict}",
            c.name,
            format!("{:?}", c.kind).to_lowercase(),
            c.max_rel_err,
            c.skipped,
            c.scalars
        );
    }
    println!("worst {:.3e} over {} cases", report.max_rel_err(), report.cases.len());
    log::info!("gradient suite took {:.1} s", report.elapsed.as_secs_f64());
    if !report.passed() {
        return Err(uvface::Error::Numerical {
            step: 0,
            term: format!("gradient check above {:e}", gradsuite::TOLERANCE),
        }
        .into());
    }
    Ok(())
}
