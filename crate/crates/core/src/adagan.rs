//! Attribute generation in UV space: a code-conditioned generator and its
//! inverse, quality and attribute discriminators, and the two-phase losses.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Attribute;
use crate::nn::{self, Act, Block, ConvLayer, Module, ParamSet, NORM_EPS};
use crate::tcgan::{patch_forward, patch_stack};
use crate::tensor::{Graph, Tensor, Var};

/// Binary attribute vector in [`Attribute::ALL`] order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AttributeCode(pub [bool; 5]);

impl AttributeCode {
    pub fn from_slice(bits: &[f64]) -> Result<Self> {
        if bits.len() != 5 {
            return Err(Error::InvalidInput(format!("attribute code needs 5 entries, got {}", bits.len())));
        }
        let mut out = [false; 5];
        for (o, &b) in out.iter_mut().zip(bits) {
            *o = if b == 1.0 {
                true
            } else if b == 0.0 {
                false
            } else {
                return Err(Error::InvalidInput(format!("attribute code entries must be 0 or 1, got {b}")));
            };
        }
        Ok(AttributeCode(out))
    }

    pub fn get(&self, a: Attribute) -> bool {
        self.0[a.index()]
    }

    pub fn with(mut self, a: Attribute, on: bool) -> Self {
        self.0[a.index()] = on;
        self
    }

    pub fn flipped(self, a: Attribute) -> Self {
        self.with(a, !self.get(a))
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    /// Number of positions where the two codes differ.
    pub fn distance(&self, other: &Self) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }
}

/// `N×5×s×s` field with each sample's code broadcast over space.
pub fn broadcast_codes(codes: &[AttributeCode], side: usize) -> Tensor {
    let plane = side * side;
    let mut data = Vec::with_capacity(codes.len() * 5 * plane);
    for c in codes {
        for v in c.to_vec() {
            data.extend(std::iter::repeat_n(v, plane));
        }
    }
    Tensor::new(vec![codes.len(), 5, side, side], data).expect("consistent dims")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttrGeneratorConfig {
    /// Channels after the first encoder block; doubled twice.
    pub width: usize,
    pub residual_blocks: usize,
    /// Channels of the first code convolution.
    pub code_width: usize,
}

impl Default for AttrGeneratorConfig {
    fn default() -> Self {
        AttrGeneratorConfig {
            width: 16,
            residual_blocks: 3,
            code_width: 32,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Residual {
    a: ConvLayer,
    b: ConvLayer,
}

/// Encoder → code fusion at quarter resolution → residual blocks →
/// decoder. Input `(texture, position)` as `N×3×R×R` each plus one code per
/// sample; output `N×3×R×R` in `[0, 1]`. The inverse generator uses the
/// same architecture.
#[derive(Clone, Debug)]
pub struct AttrGenerator {
    config: AttrGeneratorConfig,
    params: ParamSet,
    enc: [Block; 3],
    code: [Block; 2],
    fuse: Block,
    res: Vec<Residual>,
    dec: [Block; 2],
    out: ConvLayer,
}

impl AttrGenerator {
    pub fn new<R: Rng + ?Sized>(config: AttrGeneratorConfig, rng: &mut R) -> Self {
        let w = config.width;
        let (c1, c2, c3) = (w, 2 * w, 4 * w);
        let mut p = ParamSet::new();
        let relu = |layer, norm| Block { layer, norm, act: Act::Relu };
        let enc = [
            relu(ConvLayer::conv(&mut p, "enc1", (6, c1), 3, 1, 1, rng), true),
            relu(ConvLayer::conv(&mut p, "enc2", (c1, c2), 4, 2, 1, rng), true),
            relu(ConvLayer::conv(&mut p, "enc3", (c2, c3), 4, 2, 1, rng), true),
        ];
        // a spatially constant code would be erased by instance norm
        let code = [
            relu(ConvLayer::conv(&mut p, "code1", (5, config.code_width), 3, 1, 1, rng), false),
            relu(ConvLayer::conv(&mut p, "code2", (config.code_width, c3), 3, 1, 1, rng), false),
        ];
        for b in &code {
            b.layer.he_init(&mut p);
        }
        let fuse = relu(ConvLayer::conv(&mut p, "fuse", (2 * c3 + 5, c3), 1, 1, 0, rng), false);
        let res = (0..config.residual_blocks)
            .map(|i| Residual {
                a: ConvLayer::conv(&mut p, &format!("res{i}.a"), (c3, c3), 3, 1, 1, rng),
                b: ConvLayer::conv(&mut p, &format!("res{i}.b"), (c3, c3), 3, 1, 1, rng),
            })
            .collect();
        let dec = [
            relu(ConvLayer::deconv(&mut p, "dec2", (c3, c2), 4, 2, 1, rng), false),
            relu(ConvLayer::deconv(&mut p, "dec1", (c2, c1), 4, 2, 1, rng), false),
        ];
        let out = ConvLayer::conv(&mut p, "out", (c1, 3), 3, 1, 1, rng);
        AttrGenerator {
            config,
            params: p,
            enc,
            code,
            fuse,
            res,
            dec,
            out,
        }
    }

    pub fn config(&self) -> AttrGeneratorConfig {
        self.config
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        bound: &[Var],
        texture: Var,
        position: Var,
        codes: &[AttributeCode],
    ) -> Result<Var> {
        let (t, p) = (g.value(texture).dims().to_vec(), g.value(position).dims().to_vec());
        if t.len() != 4 || t != p || t[1] != 3 {
            return Err(Error::dim("attr_forward", format!("texture {t:?} and position {p:?} must both be Nx3xRxR")));
        }
        if codes.len() != t[0] {
            return Err(Error::dim("attr_forward", format!("{} codes for a batch of {}", codes.len(), t[0])));
        }
        if t[2] % 4 != 0 || t[2] != t[3] {
            return Err(Error::dim("attr_forward", format!("resolution {}x{} not divisible by 4", t[2], t[3])));
        }
        let x = g.concat(&[texture, position], 1)?;
        let mut h = x;
        for b in &self.enc {
            h = b.forward(g, bound, h)?;
        }
        let raw = g.input(broadcast_codes(codes, t[2] / 4));
        let mut c = raw;
        for b in &self.code {
            c = b.forward(g, bound, c)?;
        }
        // the raw bits ride along: the code branch starts out near zero
        let joined = g.concat(&[h, c, raw], 1)?;
        h = self.fuse.forward(g, bound, joined)?;
        for r in &self.res {
            let y = r.a.forward(g, bound, h)?;
            let y = g.instance_norm(y, NORM_EPS)?;
            let y = g.relu(y)?;
            let y = r.b.forward(g, bound, y)?;
            let y = g.instance_norm(y, NORM_EPS)?;
            h = g.add(h, y)?;
        }
        for b in &self.dec {
            h = b.forward(g, bound, h)?;
        }
        let y = self.out.forward(g, bound, h)?;
        let y = g.tanh(y)?;
        nn::to_unit_range(g, y)
    }

    /// Forward pass on plain tensors with frozen parameters.
    pub fn generate(&self, texture: &Tensor, position: &Tensor, codes: &[AttributeCode]) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, false);
        let (t, p) = (g.input(texture.clone()), g.input(position.clone()));
        let y = self.forward(&mut g, &bound, t, p, codes)?;
        Ok(g.value(y).clone())
    }
}

impl Module for AttrGenerator {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }
}

/// Patch discriminator with `outputs` probability channels: one for the
/// quality critic, five (one per attribute) for the attribute critic.
#[derive(Clone, Debug)]
pub struct PatchCritic {
    params: ParamSet,
    blocks: Vec<Block>,
    head: ConvLayer,
    outputs: usize,
}

impl PatchCritic {
    pub fn quality<R: Rng + ?Sized>(width: usize, rng: &mut R) -> Self {
        Self::new(width, 1, rng)
    }

    pub fn attribute<R: Rng + ?Sized>(width: usize, rng: &mut R) -> Self {
        Self::new(width, 5, rng)
    }

    fn new<R: Rng + ?Sized>(width: usize, outputs: usize, rng: &mut R) -> Self {
        let mut p = ParamSet::new();
        let (blocks, head) = patch_stack(&mut p, 3, width, outputs, rng);
        PatchCritic {
            params: p,
            blocks,
            head,
            outputs,
        }
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    /// `N×outputs` probabilities.
    pub fn forward(&self, g: &mut Graph, bound: &[Var], x: Var) -> Result<Var> {
        patch_forward(&self.blocks, &self.head, g, bound, x)
    }
}

impl Module for PatchCritic {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaLossWeights {
    pub eta_id: f64,
    pub eta_qa: f64,
    pub eta_cc: f64,
    pub eta_ra: f64,
    pub eta_av: f64,
}

impl Default for AdaLossWeights {
    fn default() -> Self {
        AdaLossWeights {
            eta_id: 5.0,
            eta_qa: 1.0,
            eta_cc: 10.0,
            eta_ra: 5.0,
            eta_av: 1.0,
        }
    }
}

impl AdaLossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.eta_id, self.eta_qa, self.eta_cc, self.eta_ra, self.eta_av];
        if all.iter().all(|w| *w >= 0.0 && w.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("loss weights must be non-negative: {self:?}")))
        }
    }
}

/// Generator-side terms; `attribute` is absent in phase one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdaComponents<T> {
    pub identity: T,
    pub quality: T,
    pub cycle: T,
    pub masked: T,
    pub attribute: Option<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    /// Reconstruction under the original code.
    One,
    /// One-bit perturbed generation with the attribute critic active.
    Two,
}

impl Phase {
    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Phase::One),
            2 => Ok(Phase::Two),
            _ => Err(Error::InvalidInput(format!("phase must be 1 or 2, got {n}"))),
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Phase::One => 1,
            Phase::Two => 2,
        }
    }
}

fn check_phase_terms(phase: Phase, attribute: Option<f64>) -> Result<()> {
    match (phase, attribute) {
        (Phase::One, Some(v)) if v != 0.0 => Err(Error::Contract(format!(
            "phase 1 excludes the attribute-adversarial term, got {v}"
        ))),
        (Phase::Two, None) => Err(Error::Contract("phase 2 needs the attribute-adversarial term".into())),
        _ => Ok(()),
    }
}

/// Phase objective on plain numbers.
pub fn loss_phase_value(phase: Phase, c: AdaComponents<f64>, w: &AdaLossWeights) -> Result<f64> {
    check_phase_terms(phase, c.attribute)?;
    let base = w.eta_id * c.identity + w.eta_qa * c.quality + w.eta_cc * c.cycle + w.eta_ra * c.masked;
    Ok(match phase {
        Phase::One => base,
        Phase::Two => base + w.eta_av * c.attribute.unwrap_or(0.0),
    })
}

/// Phase objective on the tape.
pub fn loss_phase(g: &mut Graph, phase: Phase, c: AdaComponents<Var>, w: &AdaLossWeights) -> Result<Var> {
    check_phase_terms(phase, c.attribute.map(|v| g.value(v).item()))?;
    let mut terms = vec![
        (w.eta_id, c.identity),
        (w.eta_qa, c.quality),
        (w.eta_cc, c.cycle),
        (w.eta_ra, c.masked),
    ];
    if let (Phase::Two, Some(a)) = (phase, c.attribute) {
        terms.push((w.eta_av, a));
    }
    nn::weighted_sum(g, &terms)
}

/// `mean |G(Û_t, U_p, p*) − U_t*|`.
pub fn loss_identity(g: &mut Graph, generated: Var, truth: Var) -> Result<Var> {
    g.l1_mean(generated, truth)
}

pub fn loss_quality_disc(g: &mut Graph, q_real: Var, q_fake: Var) -> Result<Var> {
    nn::disc_bce(g, q_real, q_fake)
}

pub fn loss_quality_adv(g: &mut Graph, q_fake: Var) -> Result<Var> {
    nn::adv_bce(g, q_fake)
}

/// `mean |G⁻¹(G(Û_t)) − Û_t|`.
pub fn loss_cycle(g: &mut Graph, reconstructed: Var, input: Var) -> Result<Var> {
    g.l1_mean(reconstructed, input)
}

/// `mean |(U_g − Û_t) ⊙ Ω|` over all entries. `omega` is `1×1×R×R` or
/// already matches the maps.
pub fn loss_masked_recon(g: &mut Graph, generated: Var, input: Var, omega: &Tensor) -> Result<Var> {
    let dims = g.value(generated).dims().to_vec();
    let (n, c, h, w) = g.value(generated).nchw()?;
    let m = if omega.dims() == dims.as_slice() {
        omega.clone()
    } else {
        let (mn, mc, mh, mw) = omega.nchw()?;
        if mn != 1 || mc != 1 || mh != h || mw != w {
            return Err(Error::dim(
                "loss_masked_recon",
                format!("mask {:?} does not match maps {dims:?}", omega.dims()),
            ));
        }
        let data = (0..n * c).flat_map(|_| omega.data().iter().copied()).collect();
        Tensor::new(dims, data)?
    };
    let m = g.input(m);
    let a = g.mul(generated, m)?;
    let b = g.mul(input, m)?;
    g.l1_mean(a, b)
}

/// Attribute critic objective on channel `attr`: real maps all carry the
/// attribute, fakes were generated with it switched on.
pub fn loss_attr_disc(g: &mut Graph, a_real: Var, a_fake: Var, attr: Attribute) -> Result<Var> {
    let r = g.select(a_real, 1, attr.index())?;
    let f = g.select(a_fake, 1, attr.index())?;
    nn::disc_bce(g, r, f)
}

pub fn loss_attr_adv(g: &mut Graph, a_fake: Var, attr: Attribute) -> Result<Var> {
    let f = g.select(a_fake, 1, attr.index())?;
    nn::adv_bce(g, f)
}

/// Indices of the samples whose code carries `attr`; an empty set is an error.
pub fn real_set(codes: &[AttributeCode], attr: Attribute) -> Result<Vec<usize>> {
    let idx: Vec<usize> = (0..codes.len()).filter(|&i| codes[i].get(attr)).collect();
    if idx.is_empty() {
        return Err(Error::Contract(format!("empty real set for attribute {attr}")));
    }
    Ok(idx)
}
