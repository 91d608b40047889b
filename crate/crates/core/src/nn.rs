//! Named parameter storage and the convolution layers the networks are
//! assembled from.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Standard deviation of the `N(0, σ²)` convolution weight initializer.
pub const INIT_STD: f64 = 0.02;

/// Epsilon used by every instance normalization layer.
pub const NORM_EPS: f64 = 1e-5;

/// Ordered, named parameter tensors of one network.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Replaces every tensor with one of the same name and shape from `other`.
    pub fn load_from(&mut self, other: &ParamSet) -> Result<()> {
        for (name, slot) in self.names.iter().zip(self.tensors.iter_mut()) {
            let src = other
                .get(name)
                .ok_or_else(|| Error::InvalidInput(format!("checkpoint lacks parameter `{name}`")))?;
            if src.dims() != slot.dims() {
                return Err(Error::InvalidInput(format!(
                    "parameter `{name}` has shape {:?} in checkpoint, expected {:?}",
                    src.dims(),
                    slot.dims()
                )));
            }
            *slot = src.clone();
        }
        Ok(())
    }

    /// Places every tensor on `g`, as gradient-tracked leaves when
    /// `trainable`, as constants otherwise.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| if trainable { g.param(t.clone()) } else { g.input(t.clone()) })
            .collect()
    }
}

/// A network owning a [`ParamSet`].
pub trait Module {
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvKind {
    Conv,
    Deconv,
}

/// Convolution or transposed convolution with bias. Holds indices into the
/// owning [`ParamSet`].
#[derive(Clone, Copy, Debug)]
pub struct ConvLayer {
    kind: ConvKind,
    weight: usize,
    bias: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        kind: ConvKind,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let dims = match kind {
            ConvKind::Conv => [out_channels, in_channels, kernel, kernel],
            ConvKind::Deconv => [in_channels, out_channels, kernel, kernel],
        };
        let weight = params.push(format!("{name}.weight"), Tensor::randn(dims, INIT_STD, rng));
        let bias = params.push(format!("{name}.bias"), Tensor::zeros([out_channels]));
        ConvLayer {
            kind,
            weight,
            bias,
            stride,
            padding,
        }
    }

    pub fn conv<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        (cin, cout): (usize, usize),
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        Self::new(params, name, ConvKind::Conv, cin, cout, kernel, stride, padding, rng)
    }

    pub fn deconv<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        (cin, cout): (usize, usize),
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        Self::new(params, name, ConvKind::Deconv, cin, cout, kernel, stride, padding, rng)
    }

    /// Re-scales the initial weights to unit ReLU gain (`σ = √(2/fan_in)`),
    /// for layers that are not followed by normalization.
    pub fn he_init(&self, params: &mut ParamSet) {
        let w = &mut params.tensors_mut()[self.weight];
        let d = w.dims().to_vec();
        let fan_in = match self.kind {
            ConvKind::Conv => d[1] * d[2] * d[3],
            ConvKind::Deconv => d[0] * d[2] * d[3] / (self.stride * self.stride),
        };
        let factor = (2.0 / fan_in as f64).sqrt() / INIT_STD;
        w.data_mut().iter_mut().for_each(|v| *v *= factor);
    }

    pub fn forward(&self, g: &mut Graph, bound: &[Var], x: Var) -> Result<Var> {
        let y = match self.kind {
            ConvKind::Conv => g.conv2d(x, bound[self.weight], self.stride, self.padding)?,
            ConvKind::Deconv => g.deconv2d(x, bound[self.weight], self.stride, self.padding)?,
        };
        g.add_bias(y, bound[self.bias])
    }
}

/// Activation following a layer.
#[derive(Clone, Copy, Debug)]
pub enum Act {
    None,
    Relu,
    Leaky(f64),
    Tanh,
}

impl Act {
    pub fn apply(self, g: &mut Graph, x: Var) -> Result<Var> {
        match self {
            Act::None => Ok(x),
            Act::Relu => g.relu(x),
            Act::Leaky(s) => g.leaky_relu(x, s),
            Act::Tanh => g.tanh(x),
        }
    }
}

/// Layer → optional instance norm → activation.
#[derive(Clone, Copy, Debug)]
pub struct Block {
    pub layer: ConvLayer,
    pub norm: bool,
    pub act: Act,
}

impl Block {
    pub fn forward(&self, g: &mut Graph, bound: &[Var], x: Var) -> Result<Var> {
        let mut y = self.layer.forward(g, bound, x)?;
        if self.norm {
            y = g.instance_norm(y, NORM_EPS)?;
        }
        self.act.apply(g, y)
    }
}

/// Floor applied inside every adversarial logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

/// Discriminator objective on probabilities:
/// `−mean log(real) − mean log(1 − fake)`.
pub fn disc_bce(g: &mut Graph, real: Var, fake: Var) -> Result<Var> {
    let lr = g.log_clamped(real, LOG_FLOOR)?;
    let lr = g.mean(lr)?;
    let inv = g.one_minus(fake)?;
    let lf = g.log_clamped(inv, LOG_FLOOR)?;
    let lf = g.mean(lf)?;
    let s = g.add(lr, lf)?;
    g.scale(s, -1.0)
}

/// Generator objective on probabilities: `−mean log(fake)`.
pub fn adv_bce(g: &mut Graph, fake: Var) -> Result<Var> {
    let l = g.log_clamped(fake, LOG_FLOOR)?;
    let l = g.mean(l)?;
    g.scale(l, -1.0)
}

/// Weighted sum `Σ wᵢ·xᵢ` of scalar nodes.
pub fn weighted_sum(g: &mut Graph, terms: &[(f64, Var)]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for &(w, x) in terms {
        let t = g.scale(x, w)?;
        acc = Some(match acc {
            Some(a) => g.add(a, t)?,
            None => t,
        });
    }
    acc.ok_or_else(|| Error::InvalidInput("weighted_sum of no terms".into()))
}

/// Maps `tanh` output in `[-1, 1]` onto `[0, 1]`.
pub fn to_unit_range(g: &mut Graph, x: Var) -> Result<Var> {
    let shifted = g.add_scalar(x, 1.0)?;
    g.scale(shifted, 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bce_closed_forms() {
        let mut g = Graph::new();
        let half = g.param(Tensor::full([4, 1], 0.5));
        let d = disc_bce(&mut g, half, half).unwrap();
        let a = adv_bce(&mut g, half).unwrap();
        assert!((g.value(d).item() - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!((g.value(a).item() - 2f64.ln()).abs() < 1e-12);
        let one = g.input(Tensor::ones([3, 1]));
        let zero = g.input(Tensor::zeros([3, 1]));
        let perfect = disc_bce(&mut g, one, zero).unwrap();
        assert!(g.value(perfect).item().abs() < 1e-12);
        let floor = adv_bce(&mut g, zero).unwrap();
        assert!((g.value(floor).item() + LOG_FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn init_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ParamSet::new();
        ConvLayer::conv(&mut p, "c", (16, 32), 3, 1, 1, &mut rng);
        let w = p.get("c.weight").unwrap();
        assert_eq!(w.dims(), &[32, 16, 3, 3]);
        let std = (w.data().iter().map(|v| v * v).sum::<f64>() / w.len() as f64).sqrt();
        assert!((std - INIT_STD).abs() < 0.002, "{std}");
        assert!(p.get("c.bias").unwrap().data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn load_from_checks_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut a = ParamSet::new();
        ConvLayer::conv(&mut a, "c", (2, 3), 3, 1, 1, &mut rng);
        let mut b = ParamSet::new();
        ConvLayer::conv(&mut b, "c", (2, 4), 3, 1, 1, &mut rng);
        assert!(a.clone().load_from(&b).is_err());
        let mut c = ParamSet::new();
        ConvLayer::conv(&mut c, "c", (2, 3), 3, 1, 1, &mut rng);
        c.load_from(&a).unwrap();
        assert_eq!(c, a);
    }
}
