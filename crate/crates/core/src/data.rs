//! Training samples: pose augmentation, the synthetic dataset, and the
//! on-disk dataset layout.
//!
//! A dataset directory holds `dataset.json` plus one `id_NNNN/` directory
//! per identity with `labels.json`, `truth.uvt`, `position.uvt`, one
//! `partial_yaw±DDD.uvt` / `partial_yaw±DDD_vis.uvt` pair per pose, and
//! PNG photographs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adagan::AttributeCode;
use crate::error::{Error, Result};
use crate::geometry::{
    build_position_map, render_to_image, render_uv_texture_from_map, Attribute, PointCloud, Pose, Resolution,
    UVPositionMap, UVTextureMap,
};
use crate::image::RgbImage;
use crate::synth::{synth_heads, Studio, SynthHead};
use crate::tensor::{io, Tensor};

/// `±15°, ±30°, …, ±75°`.
pub fn default_pose_set() -> Vec<f64> {
    (1..=5).flat_map(|k| [-15.0 * k as f64, 15.0 * k as f64]).collect()
}

/// Whether every yaw has its mirror image in the set.
pub fn is_symmetric(poses: &[f64]) -> bool {
    poses.iter().all(|&y| poses.iter().any(|&o| (o + y).abs() < 1e-9))
}

/// Side length of photographs for a UV resolution.
pub fn image_size(resolution: Resolution) -> usize {
    4 * resolution.get()
}

/// From a frontal photograph and its shape, the partial texture seen at
/// every yaw in `pose_set`, each paired with the shape's position map.
///
/// The frontal texture is re-rendered at each yaw and sampled back, so a
/// texel survives exactly when it is visible both frontally and at that yaw.
pub fn augment_poses(
    frontal_cloud: &PointCloud,
    frontal_image: &RgbImage,
    pose_set: &[f64],
    resolution: Resolution,
) -> Result<Vec<(UVTextureMap, UVPositionMap)>> {
    let (w, h) = (frontal_image.width(), frontal_image.height());
    let position = build_position_map(frontal_cloud, resolution);
    let (frontal, _) = render_uv_texture_from_map(frontal_image, &position, &Pose::from_yaw(0.0, w, h))?;
    pose_set
        .iter()
        .map(|&yaw| {
            let pose = Pose::from_yaw(yaw, w, h);
            let img = render_to_image(&frontal, &position, &pose, w, h)?.image;
            let (partial, _) = render_uv_texture_from_map(&img, &position, &pose)?;
            Ok((partial, position.clone()))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseSample {
    pub yaw: f64,
    pub texture: UVTextureMap,
}

/// One identity: its full texture, shape and partial views.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub id: usize,
    pub code: AttributeCode,
    pub truth: UVTextureMap,
    pub position: UVPositionMap,
    pub partials: Vec<PoseSample>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub resolution: Resolution,
    pub pose_set: Vec<f64>,
    pub records: Vec<SampleRecord>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// A synthetic identity's record plus the photographs it was sampled from
/// (frontal first, then one per yaw).
pub fn synth_record(
    head: &SynthHead,
    resolution: Resolution,
    pose_set: &[f64],
) -> Result<(SampleRecord, Vec<(f64, RgbImage)>)> {
    let size = image_size(resolution);
    let studio = Studio::new(head)?;
    let position = build_position_map(&head.mesh(), resolution);
    let truth = head.texture(resolution)?;
    let mut photos = vec![(0.0, studio.photo(&Pose::from_yaw(0.0, size, size), size)?)];
    let mut partials = Vec::with_capacity(pose_set.len());
    for &yaw in pose_set {
        let pose = Pose::from_yaw(yaw, size, size);
        let img = studio.photo(&pose, size)?;
        let (texture, _) = render_uv_texture_from_map(&img, &position, &pose)?;
        partials.push(PoseSample { yaw, texture });
        photos.push((yaw, img));
    }
    let record = SampleRecord {
        id: head.id,
        code: head.code,
        truth,
        position,
        partials,
    };
    Ok((record, photos))
}

/// `n` synthetic identities, deterministic in `seed`.
pub fn synth_dataset(n: usize, seed: u64, resolution: Resolution, pose_set: &[f64]) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidInput("synthetic dataset needs at least one identity".into()));
    }
    let records = synth_heads(n, seed)
        .iter()
        .map(|h| synth_record(h, resolution, pose_set).map(|(r, _)| r))
        .collect::<Result<_>>()?;
    Ok(Dataset {
        resolution,
        pose_set: pose_set.to_vec(),
        records,
    })
}

#[derive(Serialize, Deserialize)]
struct DatasetManifest {
    resolution: Resolution,
    pose_set: Vec<f64>,
    attributes: Vec<String>,
    identities: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Labels {
    id: usize,
    attributes: BTreeMap<String, bool>,
}

fn yaw_tag(yaw: f64) -> String {
    format!("yaw{:+04}", yaw.round() as i64)
}

fn identity_dir(id: usize) -> String {
    format!("id_{id:04}")
}

/// Writes one identity directory; `photos` may be empty.
pub fn write_record(dir: impl AsRef<Path>, record: &SampleRecord, photos: &[(f64, RgbImage)]) -> Result<()> {
    let dir = dir.as_ref().join(identity_dir(record.id));
    fs::create_dir_all(&dir)?;
    let labels = Labels {
        id: record.id,
        attributes: Attribute::ALL
            .iter()
            .map(|&a| (a.code().to_string(), record.code.get(a)))
            .collect(),
    };
    fs::write(dir.join("labels.json"), serde_json::to_string_pretty(&labels)?)?;
    io::write(dir.join("truth.uvt"), &record.truth.to_tensor())?;
    io::write(dir.join("position.uvt"), &record.position.to_tensor())?;
    for p in &record.partials {
        let tag = yaw_tag(p.yaw);
        io::write(dir.join(format!("partial_{tag}.uvt")), &p.texture.to_tensor())?;
        io::write(dir.join(format!("partial_{tag}_vis.uvt")), &p.texture.visibility_tensor())?;
    }
    for (yaw, img) in photos {
        img.save_png(dir.join(format!("photo_{}.png", yaw_tag(*yaw))))?;
    }
    Ok(())
}

fn write_manifest(dir: &Path, resolution: Resolution, pose_set: &[f64], ids: &[usize]) -> Result<()> {
    let manifest = DatasetManifest {
        resolution,
        pose_set: pose_set.to_vec(),
        attributes: Attribute::codes(),
        identities: ids.iter().map(|&i| identity_dir(i)).collect(),
    };
    fs::write(dir.join("dataset.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Writes an in-memory dataset (without photographs).
pub fn save_dataset(dir: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for r in &data.records {
        write_record(dir, r, &[])?;
    }
    let ids: Vec<usize> = data.records.iter().map(|r| r.id).collect();
    write_manifest(dir, data.resolution, &data.pose_set, &ids)
}

/// Generates and writes a synthetic dataset identity by identity, with
/// photographs and the head mesh, without holding it all in memory.
pub fn write_synth_dataset(
    dir: impl AsRef<Path>,
    n: usize,
    seed: u64,
    resolution: Resolution,
    pose_set: &[f64],
) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidInput("synthetic dataset needs at least one identity".into()));
    }
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let heads = synth_heads(n, seed);
    for h in &heads {
        let (record, photos) = synth_record(h, resolution, pose_set)?;
        write_record(dir, &record, &photos)?;
        h.mesh().save_obj(dir.join(identity_dir(h.id)).join("mesh.obj"))?;
    }
    let ids: Vec<usize> = heads.iter().map(|h| h.id).collect();
    write_manifest(dir, resolution, pose_set, &ids)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::format(path, e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

fn texture_with_visibility(rgb: &Tensor, vis: &Tensor, origin: &Path) -> Result<UVTextureMap> {
    let map = UVTextureMap::from_tensor(rgb).map_err(|e| Error::format(origin, e.to_string()))?;
    let r = map.resolution().get();
    if vis.dims() != [1, 1, r, r] {
        return Err(Error::format(origin, format!("visibility has dims {:?}", vis.dims())));
    }
    let flags = vis.data().iter().map(|&v| v > 0.5).collect();
    UVTextureMap::new(map.resolution(), map.grid().to_vec(), flags)
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let manifest: DatasetManifest = read_json(&dir.join("dataset.json"))?;
    if manifest.attributes != Attribute::codes() {
        return Err(Error::format(
            dir.join("dataset.json"),
            format!("attribute order {:?} differs from {:?}", manifest.attributes, Attribute::codes()),
        ));
    }
    let mut records = Vec::with_capacity(manifest.identities.len());
    for name in &manifest.identities {
        let sub = dir.join(name);
        let labels: Labels = read_json(&sub.join("labels.json"))?;
        let mut code = AttributeCode::default();
        for (k, v) in &labels.attributes {
            code = code.with(k.parse()?, *v);
        }
        let truth_path = sub.join("truth.uvt");
        let truth_t = io::read(&truth_path)?;
        let truth = UVTextureMap::from_tensor(&truth_t).map_err(|e| Error::format(&truth_path, e.to_string()))?;
        let pos_path = sub.join("position.uvt");
        let position =
            UVPositionMap::from_tensor(&io::read(&pos_path)?).map_err(|e| Error::format(&pos_path, e.to_string()))?;
        // texels outside the face hold zeros in both maps
        let truth = UVTextureMap::new(truth.resolution(), truth.grid().to_vec(), position.valid().to_vec())?;
        if truth.resolution() != manifest.resolution || position.resolution() != manifest.resolution {
            return Err(Error::format(&sub, "map resolution differs from dataset.json"));
        }
        let mut partials = Vec::with_capacity(manifest.pose_set.len());
        for &yaw in &manifest.pose_set {
            let tag = yaw_tag(yaw);
            let p = sub.join(format!("partial_{tag}.uvt"));
            let v = sub.join(format!("partial_{tag}_vis.uvt"));
            let texture = texture_with_visibility(&io::read(&p)?, &io::read(&v)?, &p)?;
            partials.push(PoseSample { yaw, texture });
        }
        records.push(SampleRecord {
            id: labels.id,
            code,
            truth,
            position,
            partials,
        });
    }
    Ok(Dataset {
        resolution: manifest.resolution,
        pose_set: manifest.pose_set,
        records,
    })
}
