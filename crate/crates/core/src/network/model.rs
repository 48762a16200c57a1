use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::lowrank::{flops_conv, CostReport};
use crate::network::Layer;
use crate::scalar::Scalar;
use crate::tensor::FilterBank;

/// Characters of the classifier: 26 letters, then 10 digits.
pub const CHARACTER_CLASSES: usize = 36;
/// Character classes plus the background class.
pub const TEST_MODEL_CLASSES: usize = 37;
/// Index of the background (no-text) class.
pub const BACKGROUND_CLASS: usize = 36;

/// An ordered stack of layers with a declared input shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T = f32> {
    input_shape: (usize, usize, usize),
    layers: Vec<Layer<T>>,
    background: Option<usize>,
}

/// Per-layer shape and cost summary.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSummary {
    pub index: usize,
    pub name: String,
    pub kind: &'static str,
    pub input: (usize, usize, usize),
    pub output: (usize, usize, usize),
    pub params: usize,
    /// Exact MACs of this layer as evaluated; zero for non-convolutional layers.
    pub macs: u64,
    /// MACs of the direct convolution this layer computes.
    pub direct_macs: u64,
}

impl<T: Scalar> Network<T> {
    pub fn new(
        input_shape: (usize, usize, usize),
        layers: Vec<Layer<T>>,
        background: Option<usize>,
    ) -> Result<Self> {
        let net = Self { input_shape, layers, background };
        let out = net.shapes()?;
        if let (Some(bg), Some(&(c, _, _))) = (background, out.last()) {
            if bg >= c {
                return Err(Error::IndexOutOfRange { index: bg, len: c });
            }
        }
        Ok(net)
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.input_shape
    }
    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }
    pub fn layer(&self, i: usize) -> Result<&Layer<T>> {
        self.layers.get(i).ok_or(Error::IndexOutOfRange { index: i, len: self.layers.len() })
    }
    pub(crate) fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }
    /// Parameter slices of layer `i`; shapes cannot change through them.
    pub fn params_mut(&mut self, i: usize) -> Result<Vec<&mut [T]>> {
        let len = self.layers.len();
        Ok(self.layers.get_mut(i).ok_or(Error::IndexOutOfRange { index: i, len })?.params_mut())
    }
    pub fn len(&self) -> usize {
        self.layers.len()
    }
    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
    pub fn background(&self) -> Option<usize> {
        self.background
    }

    /// Output shape of every layer; validates the whole chain.
    pub fn shapes(&self) -> Result<Vec<(usize, usize, usize)>> {
        let mut shape = self.input_shape;
        let mut out = Vec::with_capacity(self.layers.len());
        for (index, layer) in self.layers.iter().enumerate() {
            shape = layer.output_shape(shape).map_err(|e| match e {
                Error::ShapeMismatch(detail) => Error::LayerShapeMismatch { index, detail },
                other => other,
            })?;
            out.push(shape);
        }
        Ok(out)
    }

    /// Input shape of layer `i`.
    pub fn layer_input_shape(&self, i: usize) -> Result<(usize, usize, usize)> {
        if i >= self.layers.len() {
            return Err(Error::IndexOutOfRange { index: i, len: self.layers.len() });
        }
        Ok(if i == 0 { self.input_shape } else { self.shapes()?[i - 1] })
    }

    pub fn classes(&self) -> usize {
        self.shapes().ok().and_then(|s| s.last().map(|s| s.0)).unwrap_or(self.input_shape.0)
    }

    /// Spatial extent seen by one output pixel.
    pub fn receptive_field(&self) -> (usize, usize) {
        self.layers.iter().filter_map(|l| l.kernel()).fold((1, 1), |(h, w), (kh, kw)| {
            (h + kh - 1, w + kw - 1)
        })
    }

    /// Name of layer `i`: conv-like layers are `conv1`, `conv2`, ... in order,
    /// other layers `<kind><index>`.
    pub fn layer_name(&self, i: usize) -> String {
        match self.layers.get(i) {
            Some(l) if l.is_conv_like() => {
                let k = self.layers[..=i].iter().filter(|l| l.is_conv_like()).count();
                format!("conv{k}")
            }
            Some(l) => format!("{}{}", l.kind(), i),
            None => format!("layer{i}"),
        }
    }

    /// Index of a named layer (`conv2`) or a plain numeric index.
    pub fn layer_index(&self, name: &str) -> Result<usize> {
        let lname = name.to_ascii_lowercase();
        if let Ok(i) = lname.parse::<usize>() {
            return if i < self.layers.len() {
                Ok(i)
            } else {
                Err(Error::IndexOutOfRange { index: i, len: self.layers.len() })
            };
        }
        (0..self.layers.len())
            .find(|&i| self.layer_name(i) == lname)
            .ok_or_else(|| Error::InvalidArgument(format!("no layer named {name}")))
    }

    /// Replaces layer `i`, requiring the same input and output shapes.
    pub fn replace_layer(&mut self, i: usize, layer: Layer<T>) -> Result<Layer<T>> {
        let input = self.layer_input_shape(i)?;
        let want = self.layers[i].output_shape(input)?;
        let got = layer.output_shape(input)?;
        if want != got {
            return Err(Error::LayerShapeMismatch {
                index: i,
                detail: format!("replacement produces {got:?}, expected {want:?}"),
            });
        }
        Ok(std::mem::replace(&mut self.layers[i], layer))
    }

    /// Sets the rate of every dropout layer.
    pub fn set_dropout(&mut self, rate: f64) {
        for l in &mut self.layers {
            if let Layer::Dropout { rate: r } = l {
                *r = rate;
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    pub fn summary(&self) -> Result<Vec<LayerSummary>> {
        let shapes = self.shapes()?;
        let mut input = self.input_shape;
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let output = shapes[i];
            let (c, h, w) = input;
            let cost: Option<CostReport> = match layer {
                Layer::Conv(b) => {
                    let m = flops_conv(b.filters(), c, b.kh(), b.kw(), output.1, output.2);
                    Some(CostReport {
                        direct_macs: m,
                        macs: m,
                        asymptotic_macs: m,
                        parts: vec![("direct", m)],
                        measured_speedup: None,
                    })
                }
                Layer::Scheme1(l) => Some(l.cost(h, w)),
                Layer::Scheme2(l) => Some(l.cost(h, w)),
                _ => None,
            };
            out.push(LayerSummary {
                index: i,
                name: self.layer_name(i),
                kind: layer.kind(),
                input,
                output,
                params: layer.param_count(),
                macs: cost.as_ref().map_or(0, |c| c.macs),
                direct_macs: cost.as_ref().map_or(0, |c| c.direct_macs),
            });
            input = output;
        }
        Ok(out)
    }

    /// Total MACs as evaluated, and of the all-direct network.
    pub fn total_macs(&self) -> Result<(u64, u64)> {
        let s = self.summary()?;
        Ok((s.iter().map(|l| l.macs).sum(), s.iter().map(|l| l.direct_macs).sum()))
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            input_shape: self.input_shape,
            layers: self.layers.iter().map(|l| l.cast()).collect(),
            background: self.background,
        }
    }
}

/// Gaussian-initialized bank with standard deviation `1/sqrt(fan_in)`.
pub fn random_bank<T: Scalar>(
    rng: &mut ChaCha8Rng,
    filters: usize,
    channels: usize,
    kh: usize,
    kw: usize,
) -> FilterBank<T> {
    let std = (1.0 / (channels * kh * kw) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("valid std");
    FilterBank::from_fn(filters, channels, kh, kw, |_, _, _, _| T::of(normal.sample(rng)))
}

/// The four-layer maxout character classifier:
///
/// | layer | kernel | in | filters | maxout | out |
/// |-------|--------|----|---------|--------|-----|
/// | conv1 | 9x9    | 1  | 96      | 2      | 48  |
/// | conv2 | 9x9    | 48 | 128     | 2      | 64  |
/// | conv3 | 8x8    | 64 | 512     | 4      | 128 |
/// | conv4 | 1x1    | 128| 148     | 4      | 37  |
///
/// followed by a softmax. Dropout precedes every convolution except the first.
pub fn test_model<T: Scalar>(seed: u64, dropout: f64) -> Network<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec: [(usize, usize, usize, usize); 4] =
        [(9, 1, 96, 2), (9, 48, 128, 2), (8, 64, 512, 4), (1, 128, 148, 4)];
    let mut layers = Vec::new();
    for (i, &(d, c, n, g)) in spec.iter().enumerate() {
        if i > 0 {
            layers.push(Layer::Dropout { rate: dropout });
        }
        layers.push(Layer::Conv(random_bank(&mut rng, n, c, d, d)));
        layers.push(Layer::Maxout { group: g });
    }
    layers.push(Layer::Softmax);
    Network::new((1, 24, 24), layers, Some(BACKGROUND_CLASS)).expect("test model shapes are consistent")
}
