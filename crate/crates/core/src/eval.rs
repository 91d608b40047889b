//! Evaluation metrics: Fréchet distance between feature populations, F1,
//! cosine verification and TAR at a fixed FAR, plus the built-in feature
//! extractors.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adagan::{AttributeCode, PatchCritic};
use crate::error::{Error, Result};
use crate::geometry::Attribute;
use crate::nn::{Module, LOG_FLOOR};
use crate::tensor::{io, Adam, AdamConfig, Graph, Tensor};

/// Eigenvalues of the covariance product below this are an error; smaller
/// negative round-off is clamped to zero.
pub const PSD_TOLERANCE: f64 = 1e-8;

/// Diagonal loading applied to covariances estimated from `n ≤ d` samples.
pub const SHRINKAGE: f64 = 1e-6;

/// `n × d` feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub features: DMatrix<f64>,
    pub source: String,
}

impl FeatureSet {
    pub fn from_rows(rows: &[Vec<f64>], source: impl Into<String>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || d == 0 || rows.iter().any(|r| r.len() != d) {
            return Err(Error::dim("feature_set", "rows must be non-empty and of equal length"));
        }
        Ok(FeatureSet {
            features: DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]),
            source: source.into(),
        })
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    /// Sample mean and unbiased covariance.
    pub fn moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.n();
        let mean = self.features.row_mean().transpose();
        let centered = DMatrix::from_fn(n, self.d(), |i, j| self.features[(i, j)] - mean[j]);
        let denom = (n.max(2) - 1) as f64;
        let mut cov = centered.transpose() * &centered / denom;
        if n <= self.d() {
            cov += DMatrix::identity(self.d(), self.d()) * SHRINKAGE;
        }
        (mean, cov)
    }

    pub fn to_tensor(&self) -> Tensor {
        let data = (0..self.n())
            .flat_map(|i| (0..self.d()).map(move |j| (i, j)))
            .map(|(i, j)| self.features[(i, j)])
            .collect();
        Tensor::new(vec![self.n(), self.d()], data).expect("consistent dims")
    }

    pub fn from_tensor(t: &Tensor, source: impl Into<String>) -> Result<Self> {
        if t.ndim() != 2 || t.is_empty() {
            return Err(Error::dim("feature_set", format!("expected n×d, got {:?}", t.dims())));
        }
        let (n, d) = (t.dims()[0], t.dims()[1]);
        Ok(FeatureSet {
            features: DMatrix::from_row_slice(n, d, t.data()),
            source: source.into(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        io::write(path, &self.to_tensor())
    }

    /// The file path becomes the source tag.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_tensor(&io::read(path)?, path.display().to_string())
    }
}

/// Square root of a symmetric PSD matrix.
fn sym_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let e = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let mut roots = e.eigenvalues.clone();
    for l in roots.iter_mut() {
        if *l < -PSD_TOLERANCE {
            return Err(Error::Degenerate(format!("matrix is not PSD: eigenvalue {l:e}")));
        }
        *l = l.max(0.0).sqrt();
    }
    Ok(&e.eigenvectors * DMatrix::from_diagonal(&roots) * e.eigenvectors.transpose())
}

/// `‖μ_a − μ_b‖² + Tr(Σ_a + Σ_b − 2(Σ_a Σ_b)^{1/2})` from moments.
///
/// `Tr (Σ_a Σ_b)^{1/2}` is taken as `Tr (Σ_a^{1/2} Σ_b Σ_a^{1/2})^{1/2}`; the
/// two matrices are similar, and the second is symmetric.
pub fn fid_from_moments(
    mu_a: &DVector<f64>,
    cov_a: &DMatrix<f64>,
    mu_b: &DVector<f64>,
    cov_b: &DMatrix<f64>,
) -> Result<f64> {
    let d = mu_a.len();
    if mu_b.len() != d || cov_a.shape() != (d, d) || cov_b.shape() != (d, d) {
        return Err(Error::dim("fid", format!("feature dimensions {} and {} differ", d, mu_b.len())));
    }
    let ra = sym_sqrt(cov_a)?;
    let inner = &ra * cov_b * &ra;
    let e = SymmetricEigen::new((&inner + inner.transpose()) * 0.5);
    let mut cross = 0.0;
    for &l in e.eigenvalues.iter() {
        if l < -PSD_TOLERANCE {
            return Err(Error::Degenerate(format!("covariance product has eigenvalue {l:e}")));
        }
        cross += l.max(0.0).sqrt();
    }
    let diff = mu_a - mu_b;
    Ok(diff.dot(&diff) + cov_a.trace() + cov_b.trace() - 2.0 * cross)
}

pub fn fid(a: &FeatureSet, b: &FeatureSet) -> Result<f64> {
    if a.d() != b.d() {
        return Err(Error::dim("fid", format!("feature dimensions {} and {} differ", a.d(), b.d())));
    }
    let (ma, ca) = a.moments();
    let (mb, cb) = b.moments();
    fid_from_moments(&ma, &ca, &mb, &cb)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct F1Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision is 0 when nothing is predicted positive, recall is 0 when
/// nothing is labeled positive, and F1 is 0 when both are.
pub fn f1(predictions: &[bool], labels: &[bool]) -> Result<F1Score> {
    if predictions.len() != labels.len() {
        return Err(Error::dim(
            "f1",
            format!("{} predictions for {} labels", predictions.len(), labels.len()),
        ));
    }
    let tp = predictions.iter().zip(labels).filter(|(p, l)| **p && **l).count() as f64;
    let pp = predictions.iter().filter(|p| **p).count() as f64;
    let lp = labels.iter().filter(|l| **l).count() as f64;
    let precision = if pp > 0.0 { tp / pp } else { 0.0 };
    let recall = if lp > 0.0 { tp / lp } else { 0.0 };
    Ok(F1Score {
        precision,
        recall,
        f1: harmonic(precision, recall),
    })
}

pub fn harmonic(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Image (`1×3×H×W` in `[0, 1]`) to feature vector.
pub trait Embedder {
    fn embed(&self, image: &Tensor) -> Result<Vec<f64>>;
}

/// Image to one probability per attribute, in [`Attribute::ALL`] order.
pub trait Classifier {
    fn predict(&self, image: &Tensor) -> Result<[f64; 5]>;
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim("cosine", format!("lengths {} and {}", a.len(), b.len())));
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("zero-norm embedding".into()));
    }
    let c = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
    Ok(c.clamp(-1.0, 1.0))
}

pub fn verify_similarity(embedder: &dyn Embedder, a: &Tensor, b: &Tensor) -> Result<f64> {
    cosine(&embedder.embed(a)?, &embedder.embed(b)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TarAtFar {
    /// Pairs scoring at or above this are accepted.
    pub threshold: f64,
    pub tar: f64,
    pub far: f64,
}

/// The lowest acceptance threshold whose false-accept rate does not exceed
/// `target_far`, and the true-accept rate it achieves.
pub fn tar_at_far(scores: &[f64], same: &[bool], target_far: f64) -> Result<TarAtFar> {
    if scores.len() != same.len() {
        return Err(Error::dim("tar_at_far", "scores and labels differ in length"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidInput("non-finite similarity score".into()));
    }
    let mut impostor: Vec<f64> = scores.iter().zip(same).filter(|(_, s)| !**s).map(|(x, _)| *x).collect();
    let genuine: Vec<f64> = scores.iter().zip(same).filter(|(_, s)| **s).map(|(x, _)| *x).collect();
    if impostor.is_empty() || genuine.is_empty() {
        return Err(Error::InvalidInput("need both genuine and impostor pairs".into()));
    }
    impostor.sort_by(|a, b| b.total_cmp(a));
    let allowed = (target_far * impostor.len() as f64 + 1e-9).floor() as usize;
    let threshold = if allowed >= impostor.len() {
        scores.iter().copied().fold(f64::INFINITY, f64::min)
    } else {
        impostor[allowed].next_up()
    };
    let rate = |v: &[f64]| v.iter().filter(|&&s| s >= threshold).count() as f64 / v.len() as f64;
    Ok(TarAtFar {
        threshold,
        tar: rate(&genuine),
        far: rate(&impostor),
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub path_a: PathBuf,
    pub path_b: PathBuf,
    pub same_id: bool,
}

/// CSV with header `path_a,path_b,same_id`; `same_id` is `0/1` or
/// `true/false`.
pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<PairRecord>> {
    #[derive(Deserialize)]
    struct Raw {
        path_a: PathBuf,
        path_b: PathBuf,
        same_id: String,
    }
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize::<Raw>()
        .map(|row| {
            let row = row?;
            let same_id = match row.same_id.trim() {
                "1" | "true" => true,
                "0" | "false" => false,
                other => return Err(Error::format(path, format!("same_id must be 0/1, got `{other}`"))),
            };
            Ok(PairRecord {
                path_a: row.path_a,
                path_b: row.path_b,
                same_id,
            })
        })
        .collect()
}

/// Three seeded random 3×3 stride-2 convolutions with ReLU, then global
/// average pooling: a fixed 64-dimensional descriptor. Its distances are
/// only comparable with themselves.
#[derive(Clone, Debug)]
pub struct RandomConvEmbedder {
    weights: Vec<Tensor>,
}

impl RandomConvEmbedder {
    pub const DIM: usize = 64;

    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = [(3, 16), (16, 32), (32, Self::DIM)]
            .iter()
            .map(|&(cin, cout)| Tensor::randn(vec![cout, cin, 3, 3], (2.0 / (9 * cin) as f64).sqrt(), &mut rng))
            .collect();
        RandomConvEmbedder { weights }
    }
}

impl Embedder for RandomConvEmbedder {
    fn embed(&self, image: &Tensor) -> Result<Vec<f64>> {
        let (n, c, _, _) = image.nchw()?;
        if n != 1 || c != 3 {
            return Err(Error::dim("embed", format!("expected 1×3×H×W, got {:?}", image.dims())));
        }
        let mut g = Graph::new();
        let mut h = g.input(image.clone());
        for w in &self.weights {
            let w = g.input(w.clone());
            h = g.conv2d(h, w, 2, 1)?;
            h = g.relu(h)?;
        }
        let pooled = g.spatial_mean(h)?;
        Ok(g.value(pooled).data().to_vec())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub width: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            width: 8,
            epochs: 10,
            batch_size: 16,
            lr: 1e-3,
            seed: 0,
        }
    }
}

/// Multi-label attribute classifier on UV textures, trained with per-label
/// binary cross-entropy.
#[derive(Clone, Debug)]
pub struct AttributeClassifier {
    net: PatchCritic,
}

impl AttributeClassifier {
    /// `textures` is `N×3×R×R`.
    pub fn train(textures: &Tensor, codes: &[AttributeCode], config: &ClassifierConfig) -> Result<Self> {
        let (n, _, _, _) = textures.nchw()?;
        if codes.len() != n || n == 0 {
            return Err(Error::dim("classifier", format!("{} codes for {n} textures", codes.len())));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut net = PatchCritic::attribute(config.width, &mut rng);
        let adam = AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        };
        let mut opt = Adam::new(adam, net.params().tensors());
        let mut order: Vec<usize> = (0..n).collect();
        for _ in 0..config.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(config.batch_size.max(1)) {
                let x = Tensor::cat_batch(&chunk.iter().map(|&i| textures.batch_item(i)).collect::<Vec<_>>())?;
                let y = Tensor::new(
                    vec![chunk.len(), 5],
                    chunk.iter().flat_map(|&i| codes[i].to_vec()).collect(),
                )?;
                let mut g = Graph::new();
                let bound = net.params().bind(&mut g, true);
                let xv = g.input(x);
                let p = net.forward(&mut g, &bound, xv)?;
                let loss = multilabel_bce(&mut g, p, y)?;
                if !g.value(loss).is_finite() {
                    return Err(Error::NonFinite { op: "classifier" });
                }
                let mut grads = g.backward(loss)?;
                let gs: Vec<Tensor> = bound
                    .iter()
                    .zip(net.params().tensors())
                    .map(|(v, t)| grads.take_or_zeros(*v, t))
                    .collect();
                opt.step(net.params_mut().tensors_mut(), &gs)?;
            }
        }
        Ok(AttributeClassifier { net })
    }

    /// Probabilities for every texture in an `N×3×R×R` batch.
    pub fn predict_batch(&self, textures: &Tensor) -> Result<Vec<[f64; 5]>> {
        let mut g = Graph::new();
        let bound = self.net.params().bind(&mut g, false);
        let x = g.input(textures.clone());
        let p = self.net.forward(&mut g, &bound, x)?;
        Ok(g.value(p)
            .data()
            .chunks_exact(5)
            .map(|c| [c[0], c[1], c[2], c[3], c[4]])
            .collect())
    }

    pub fn predict_attr(&self, textures: &Tensor, attr: Attribute) -> Result<Vec<bool>> {
        Ok(self.predict_batch(textures)?.iter().map(|p| p[attr.index()] > 0.5).collect())
    }
}

impl Classifier for AttributeClassifier {
    fn predict(&self, image: &Tensor) -> Result<[f64; 5]> {
        Ok(self.predict_batch(image)?[0])
    }
}

/// `−mean(y log p + (1 − y) log(1 − p))`.
fn multilabel_bce(g: &mut Graph, p: crate::tensor::Var, y: Tensor) -> Result<crate::tensor::Var> {
    let y = g.input(y);
    let not_y = g.one_minus(y)?;
    let lp = g.log_clamped(p, LOG_FLOOR)?;
    let q = g.one_minus(p)?;
    let lq = g.log_clamped(q, LOG_FLOOR)?;
    let a = g.mul(y, lp)?;
    let b = g.mul(not_y, lq)?;
    let s = g.add(a, b)?;
    let m = g.mean(s)?;
    g.scale(m, -1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn f1_cases() {
        let s = f1(&[true, false, true], &[true, false, true]).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        let s = f1(&[false, false, false], &[true, false, true]).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
        assert!((harmonic(0.8, 0.6) - 0.96 / 1.4).abs() < 1e-15);
        assert!(f1(&[true], &[]).is_err());
    }

    #[test]
    fn f1_ignores_sample_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pairs: Vec<(bool, bool)> = (0..50).map(|_| (rng.random(), rng.random())).collect();
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut rng);
        let score = |v: &[(bool, bool)]| {
            let (p, l): (Vec<bool>, Vec<bool>) = v.iter().copied().unzip();
            f1(&p, &l).unwrap()
        };
        assert_eq!(score(&pairs), score(&shuffled));
    }

    #[test]
    fn cosine_cases() {
        let e = RandomConvEmbedder::new(3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = Tensor::uniform(vec![1, 3, 16, 16], 0.0, 1.0, &mut rng);
        assert!((verify_similarity(&e, &img, &img).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(e.embed(&img).unwrap().len(), 64);
        assert!((cosine(&[1.0, -2.0], &[-1.0, 2.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!(cosine(&[0.0, 0.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn pairs_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pairs.csv");
        std::fs::write(&p, "path_a,path_b,same_id\na.png,b.png,1\nc.png,d.png,false\n").unwrap();
        let pairs = read_pairs(&p).unwrap();
        assert_eq!(pairs.len(), 2);
        assert!(pairs[0].same_id && !pairs[1].same_id);
        std::fs::write(&p, "path_a,path_b,same_id\na.png,b.png,maybe\n").unwrap();
        assert!(read_pairs(&p).is_err());
    }

    #[test]
    fn feature_set_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let f = FeatureSet::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.5], vec![0.0, -1.0]], "x").unwrap();
        let p = dir.path().join("f.uvt");
        f.save(&p).unwrap();
        assert_eq!(FeatureSet::load(&p).unwrap().features, f.features);
    }

    #[test]
    fn classifier_learns_a_separable_label() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 32;
        let codes: Vec<AttributeCode> = (0..n).map(|i| AttributeCode::default().with(Attribute::Bangs, i % 2 == 0)).collect();
        let mut imgs = Vec::new();
        for c in &codes {
            let level = if c.get(Attribute::Bangs) { 0.9 } else { 0.1 };
            imgs.push(Tensor::uniform(vec![1, 3, 16, 16], level - 0.1, level + 0.1, &mut rng));
        }
        let x = Tensor::cat_batch(&imgs).unwrap();
        let clf = AttributeClassifier::train(&x, &codes, &ClassifierConfig::default()).unwrap();
        let pred = clf.predict_attr(&x, Attribute::Bangs).unwrap();
        let truth: Vec<bool> = codes.iter().map(|c| c.get(Attribute::Bangs)).collect();
        assert_eq!(pred, truth);
    }
}
