use crate::error::{Error, Result};
use crate::network::forward::{run_layers, Mode};
use crate::network::Network;
use crate::par::{self, Execution};
use crate::scalar::Scalar;
use crate::tensor::{Batch, FeatureMap};

/// Per-location maximum class probability over a whole image.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMap<T = f32> {
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> ResponseMap<T> {
    pub fn get(&self, u: usize, v: usize) -> T {
        self.data[u * self.width + v]
    }
}

/// Largest output tile evaluated at once; bounds the column-matrix memory.
const TILE: usize = 32;

/// Evaluates every layer convolutionally over a full image, returning the
/// network output at each valid location: `[classes, H - rf + 1, W - rf + 1]`.
///
/// Large images are cut into overlapping tiles whose outputs are disjoint, so
/// the result equals a single convolutional pass.
pub fn dense_class_maps<T: Scalar>(net: &Network<T>, image: &FeatureMap<T>, exec: Execution) -> Result<FeatureMap<T>> {
    let (c, h, w) = image.shape();
    let (rh, rw) = net.receptive_field();
    let (ic, ih, iw) = net.input_shape();
    if c != ic {
        return Err(Error::LayerShapeMismatch {
            index: 0,
            detail: format!("image has {c} channels, network expects {ic}"),
        });
    }
    if ih != rh || iw != rw {
        return Err(Error::InvalidArgument(format!(
            "network input {ih}x{iw} differs from its receptive field {rh}x{rw}"
        )));
    }
    if h < rh || w < rw {
        return Err(Error::ImageTooSmall { h, w, field: rh.max(rw) });
    }
    let (oh, ow) = (h + 1 - rh, w + 1 - rw);
    let mut tiles = Vec::new();
    for top in (0..oh).step_by(TILE) {
        for left in (0..ow).step_by(TILE) {
            tiles.push((top, left, TILE.min(oh - top), TILE.min(ow - left)));
        }
    }
    let outs = par::map(exec, &tiles, |&(top, left, th, tw)| -> Result<Batch<T>> {
        let crop = image.crop(top, left, th + rh - 1, tw + rw - 1)?;
        let mut t = run_layers(net, Batch::from_map(&crop), 0, net.len(), Mode::Eval, false)?;
        Ok(t.activations.pop().expect("output"))
    });
    let classes = net.classes();
    let mut data = vec![T::zero(); classes * oh * ow];
    for (&(top, left, th, tw), out) in tiles.iter().zip(outs) {
        let out = out?;
        for k in 0..classes {
            let src = out.image(k, 0);
            for u in 0..th {
                let d = k * oh * ow + (top + u) * ow + left;
                data[d..d + tw].copy_from_slice(&src[u * tw..(u + 1) * tw]);
            }
        }
    }
    FeatureMap::new(classes, oh, ow, data)
}

/// Maximum over non-background classes of the dense network output.
pub fn dense_apply<T: Scalar>(net: &Network<T>, image: &FeatureMap<T>, exec: Execution) -> Result<ResponseMap<T>> {
    let maps = dense_class_maps(net, image, exec)?;
    let (k, h, w) = maps.shape();
    let mut data = vec![T::neg_infinity(); h * w];
    for class in (0..k).filter(|&c| Some(c) != net.background()) {
        for (d, &v) in data.iter_mut().zip(maps.channel(class)) {
            if v > *d {
                *d = v;
            }
        }
    }
    Ok(ResponseMap { height: h, width: w, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{forward, test_model, BACKGROUND_CLASS};

    fn image(h: usize, w: usize, seed: usize) -> FeatureMap<f32> {
        FeatureMap::from_fn(1, h, w, |_, u, v| ((u * 31 + v * 17 + seed * 7) % 23) as f32 / 11.5 - 1.0)
    }

    fn char_max(p: &[f32]) -> f32 {
        p.iter().enumerate().filter(|&(i, _)| i != BACKGROUND_CLASS).map(|(_, &v)| v).fold(f32::MIN, f32::max)
    }

    #[test]
    fn single_window_matches_forward() {
        let net = test_model::<f32>(4, 0.5);
        let x = image(24, 24, 1);
        let r = dense_apply(&net, &x, Execution::Sequential).unwrap();
        assert_eq!((r.height, r.width), (1, 1));
        let p = forward(&net, &x).unwrap().probabilities;
        assert!((r.data[0] - char_max(&p)).abs() < 1e-6);
    }

    #[test]
    fn output_shape_and_too_small() {
        let net = test_model::<f32>(4, 0.5);
        let r = dense_apply(&net, &image(32, 32, 2), Execution::Sequential).unwrap();
        assert_eq!((r.height, r.width), (9, 9));
        assert!(matches!(
            dense_apply(&net, &image(23, 40, 2), Execution::Sequential),
            Err(Error::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn equals_sliding_crops_across_tiles() {
        let net = test_model::<f32>(6, 0.5);
        let x = image(30, 60, 3);
        let seq = dense_apply(&net, &x, Execution::Sequential).unwrap();
        let par = dense_apply(&net, &x, Execution::Parallel).unwrap();
        assert_eq!(seq, par);
        assert_eq!((seq.height, seq.width), (7, 37));
        for u in 0..seq.height {
            for v in 0..seq.width {
                let p = forward(&net, &x.crop(u, v, 24, 24).unwrap()).unwrap().probabilities;
                assert!((seq.get(u, v) - char_max(&p)).abs() < 1e-5, "({u},{v})");
            }
        }
    }
}
