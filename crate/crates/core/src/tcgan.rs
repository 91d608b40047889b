//! Texture completion: an hourglass generator over `(U_t, flipped U_t, U_p)`,
//! a patch discriminator, and the completion losses.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, Act, Block, ConvLayer, Module, ParamSet};
use crate::tensor::{Graph, Tensor, Var};

const LEAK: f64 = 0.02;

/// Encoder-decoder with additive skips. Input `N×9×R×R`, output
/// `N×3×R×R` in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct TcGenerator {
    params: ParamSet,
    enc: [Block; 3],
    dec: [Block; 2],
    out: ConvLayer,
}

impl TcGenerator {
    pub const IN_CHANNELS: usize = 9;

    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::with_width(32, rng)
    }

    /// `width` channels at full resolution, doubling at each of the two
    /// downsampling levels.
    pub fn with_width<R: Rng + ?Sized>(width: usize, rng: &mut R) -> Self {
        let (c1, c2, c3) = (width, 2 * width, 4 * width);
        let mut p = ParamSet::new();
        let block = |layer, norm| Block { layer, norm, act: Act::Relu };
        let enc = [
            block(ConvLayer::conv(&mut p, "enc1", (Self::IN_CHANNELS, c1), 3, 1, 1, rng), false),
            block(ConvLayer::conv(&mut p, "enc2", (c1, c2), 4, 2, 1, rng), true),
            block(ConvLayer::conv(&mut p, "enc3", (c2, c3), 4, 2, 1, rng), true),
        ];
        let dec = [
            block(ConvLayer::deconv(&mut p, "dec2", (c3, c2), 4, 2, 1, rng), true),
            block(ConvLayer::deconv(&mut p, "dec1", (c2, c1), 4, 2, 1, rng), true),
        ];
        let out = ConvLayer::conv(&mut p, "out", (c1, 3), 3, 1, 1, rng);
        TcGenerator { params: p, enc, dec, out }
    }

    /// Stacks `U_t`, `flip(U_t)` and `U_p` along channels.
    pub fn assemble_input(g: &mut Graph, texture: Var, position: Var) -> Result<Var> {
        let (t, p) = (g.value(texture).dims().to_vec(), g.value(position).dims().to_vec());
        if t.len() != 4 || t != p || t[1] != 3 {
            return Err(Error::dim("tc_forward", format!("texture {t:?} and position {p:?} must both be Nx3xRxR")));
        }
        let flipped = g.flip_w(texture)?;
        g.concat(&[texture, flipped, position], 1)
    }

    /// Completed texture from bound parameters.
    pub fn forward(&self, g: &mut Graph, bound: &[Var], texture: Var, position: Var) -> Result<Var> {
        self.forward_with_skips(g, bound, texture, position, true)
    }

    /// As [`forward`](Self::forward), with the skip links optionally cut.
    pub fn forward_with_skips(
        &self,
        g: &mut Graph,
        bound: &[Var],
        texture: Var,
        position: Var,
        skips: bool,
    ) -> Result<Var> {
        let x = Self::assemble_input(g, texture, position)?;
        let e1 = self.enc[0].forward(g, bound, x)?;
        let e2 = self.enc[1].forward(g, bound, e1)?;
        let e3 = self.enc[2].forward(g, bound, e2)?;
        let mut d = self.dec[0].forward(g, bound, e3)?;
        if skips {
            d = g.add(d, e2)?;
        }
        d = self.dec[1].forward(g, bound, d)?;
        if skips {
            d = g.add(d, e1)?;
        }
        let y = self.out.forward(g, bound, d)?;
        let y = g.tanh(y)?;
        nn::to_unit_range(g, y)
    }

    /// Forward pass on plain tensors with frozen parameters.
    pub fn complete(&self, texture: &Tensor, position: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, false);
        let (t, p) = (g.input(texture.clone()), g.input(position.clone()));
        let y = self.forward(&mut g, &bound, t, p)?;
        Ok(g.value(y).clone())
    }
}

impl Module for TcGenerator {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }
}

/// Strided convolution stack ending in one logit per patch; the patch
/// logits are averaged and squashed to one probability per sample.
#[derive(Clone, Debug)]
pub struct TcDiscriminator {
    params: ParamSet,
    blocks: Vec<Block>,
    head: ConvLayer,
}

impl TcDiscriminator {
    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::with_width(32, rng)
    }

    pub fn with_width<R: Rng + ?Sized>(width: usize, rng: &mut R) -> Self {
        let mut p = ParamSet::new();
        let (blocks, head) = patch_stack(&mut p, 3, width, 1, rng);
        TcDiscriminator { params: p, blocks, head }
    }

    /// `N×1` probabilities.
    pub fn forward(&self, g: &mut Graph, bound: &[Var], x: Var) -> Result<Var> {
        patch_forward(&self.blocks, &self.head, g, bound, x)
    }
}

impl Module for TcDiscriminator {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }
}

/// Three stride-2 blocks (`c → 2c → 4c`) and a 3×3 head with `outputs`
/// channels. Shared by every discriminator in the crate.
pub(crate) fn patch_stack<R: Rng + ?Sized>(
    p: &mut ParamSet,
    in_channels: usize,
    width: usize,
    outputs: usize,
    rng: &mut R,
) -> (Vec<Block>, ConvLayer) {
    let chans = [in_channels, width, 2 * width, 4 * width];
    let blocks = (0..3)
        .map(|i| Block {
            layer: ConvLayer::conv(p, &format!("down{}", i + 1), (chans[i], chans[i + 1]), 4, 2, 1, rng),
            norm: i > 0,
            act: Act::Leaky(LEAK),
        })
        .collect();
    let head = ConvLayer::conv(p, "head", (chans[3], outputs), 3, 1, 1, rng);
    (blocks, head)
}

pub(crate) fn patch_forward(blocks: &[Block], head: &ConvLayer, g: &mut Graph, bound: &[Var], x: Var) -> Result<Var> {
    let mut h = x;
    for b in blocks {
        h = b.forward(g, bound, h)?;
    }
    let logits = head.forward(g, bound, h)?;
    let pooled = g.spatial_mean(logits)?;
    g.sigmoid(pooled)
}

/// `mean |Û_t − U_t*|`.
pub fn loss_reconstruction(g: &mut Graph, completed: Var, truth: Var) -> Result<Var> {
    g.l1_mean(completed, truth)
}

/// `−E log D(real) − E log(1 − D(fake))` from discriminator outputs.
pub fn loss_discriminator(g: &mut Graph, d_real: Var, d_fake: Var) -> Result<Var> {
    nn::disc_bce(g, d_real, d_fake)
}

/// `−E log D(fake)`.
pub fn loss_adversarial(g: &mut Graph, d_fake: Var) -> Result<Var> {
    nn::adv_bce(g, d_fake)
}

/// Forward-difference total variation normalized by the entry count.
pub fn loss_tv(g: &mut Graph, completed: Var) -> Result<Var> {
    g.total_variation(completed)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TcLossWeights {
    pub lambda_r: f64,
    pub lambda_a: f64,
    pub lambda_tv: f64,
}

impl Default for TcLossWeights {
    fn default() -> Self {
        TcLossWeights {
            lambda_r: 1.0,
            lambda_a: 0.1,
            lambda_tv: 0.05,
        }
    }
}

impl TcLossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.lambda_r, self.lambda_a, self.lambda_tv].iter().all(|w| *w >= 0.0 && w.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("loss weights must be non-negative: {self:?}")))
        }
    }

    /// `λ_r·L_r + λ_a·L_a + λ_tv·L_tv` on plain numbers.
    pub fn total(&self, c: TcComponents<f64>) -> f64 {
        self.lambda_r * c.reconstruction + self.lambda_a * c.adversarial + self.lambda_tv * c.tv
    }
}

/// The three generator-side terms of one forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TcComponents<T> {
    pub reconstruction: T,
    pub adversarial: T,
    pub tv: T,
}

/// Weighted generator objective on the tape.
pub fn loss_tc_total(g: &mut Graph, c: TcComponents<Var>, w: &TcLossWeights) -> Result<Var> {
    nn::weighted_sum(
        g,
        &[
            (w.lambda_r, c.reconstruction),
            (w.lambda_a, c.adversarial),
            (w.lambda_tv, c.tv),
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generator_shapes_and_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gen = TcGenerator::with_width(8, &mut rng);
        for r in [32, 64] {
            let t = Tensor::uniform([2, 3, r, r], 0.0, 1.0, &mut rng);
            let p = Tensor::uniform([2, 3, r, r], -1.0, 1.0, &mut rng);
            let y = gen.complete(&t, &p).unwrap();
            assert_eq!(y.dims(), &[2, 3, r, r]);
            assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn skips_are_live() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gen = TcGenerator::with_width(8, &mut rng);
        let t = Tensor::uniform([1, 3, 32, 32], 0.0, 1.0, &mut rng);
        let p = Tensor::uniform([1, 3, 32, 32], -1.0, 1.0, &mut rng);
        let run = |skips| {
            let mut g = Graph::new();
            let b = gen.params().bind(&mut g, false);
            let (tv, pv) = (g.input(t.clone()), g.input(p.clone()));
            let y = gen.forward_with_skips(&mut g, &b, tv, pv, skips).unwrap();
            g.value(y).clone()
        };
        let diff = run(true).zip_map(&run(false), |a, b| (a - b).abs()).unwrap().max_abs();
        assert!(diff > 1e-6, "{diff}");
    }

    #[test]
    fn rejects_mismatched_maps() {
        let mut g = Graph::new();
        let t = g.input(Tensor::zeros([1, 3, 32, 32]));
        let p = g.input(Tensor::zeros([1, 3, 64, 64]));
        assert!(TcGenerator::assemble_input(&mut g, t, p).is_err());
    }

    #[test]
    fn discriminator_outputs_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = TcDiscriminator::with_width(8, &mut rng);
        let mut g = Graph::new();
        let b = d.params().bind(&mut g, false);
        let x = g.input(Tensor::uniform([3, 3, 32, 32], 0.0, 1.0, &mut rng));
        let y = d.forward(&mut g, &b, x).unwrap();
        assert_eq!(g.value(y).dims(), &[3, 1]);
        assert!(g.value(y).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn loss_values() {
        let mut g = Graph::new();
        let a = g.input(Tensor::full([1, 3, 4, 4], 0.5));
        let z = g.input(Tensor::zeros([1, 3, 4, 4]));
        let r = loss_reconstruction(&mut g, a, z).unwrap();
        assert!((g.value(r).item() - 0.5).abs() < 1e-15);
        let same = loss_reconstruction(&mut g, a, a).unwrap();
        assert_eq!(g.value(same).item(), 0.0);
        let tv = loss_tv(&mut g, a).unwrap();
        assert_eq!(g.value(tv).item(), 0.0);
        let w = TcLossWeights::default();
        let unit = TcComponents { reconstruction: 1.0, adversarial: 1.0, tv: 1.0 };
        assert!((w.total(unit) - 1.15).abs() < 1e-12);
    }

    #[test]
    fn adversarial_is_decreasing() {
        let mut prev = f64::INFINITY;
        for i in 1..=20 {
            let mut g = Graph::new();
            let f = g.input(Tensor::full([2, 1], i as f64 / 20.0));
            let l = loss_adversarial(&mut g, f).unwrap();
            let v = g.value(l).item();
            assert!(v < prev);
            prev = v;
        }
        assert!(prev.abs() < 1e-12);
    }
}
