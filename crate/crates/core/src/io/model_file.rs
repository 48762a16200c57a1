use std::path::Path;

use crate::error::{Error, Result};
use crate::io::atomic_write;
use crate::io::bytes::{volume, Reader, Writer};
use crate::lowrank::{Scheme1Layer, Scheme2Layer, SublayerOrder};
use crate::network::{Layer, Network};
use crate::tensor::{BasisBank, CoeffTensor, FilterBank};

const MAGIC: &[u8; 4] = b"LRCN";
pub const FORMAT_VERSION: u32 = 1;
const NO_BACKGROUND: u32 = u32::MAX;

const TAG_CONV: u8 = 1;
const TAG_MAXOUT: u8 = 2;
const TAG_SOFTMAX: u8 = 3;
const TAG_SCHEME1: u8 = 4;
const TAG_SCHEME2: u8 = 5;
const TAG_DROPOUT: u8 = 6;

fn put_bank(w: &mut Writer, b: &FilterBank<f32>) {
    for d in [b.filters(), b.channels(), b.kh(), b.kw()] {
        w.usize(d);
    }
    w.f32s(b.weights());
    w.f32s(b.bias());
}

fn get_bank(r: &mut Reader<'_>) -> Result<FilterBank<f32>> {
    let (n, c, kh, kw) = (r.usize()?, r.usize()?, r.usize()?, r.usize()?);
    let weights = r.f32s(volume(&[n, c, kh, kw])?)?;
    let bias = r.f32s(n)?;
    FilterBank::new(n, c, kh, kw, weights, bias).map_err(inconsistent)
}

fn inconsistent(e: Error) -> Error {
    match e {
        Error::TruncatedPayload => e,
        other => Error::ShapeInconsistent(other.to_string()),
    }
}

/// Encodes an `f32` network. Output is deterministic.
///
/// Layout (little-endian): magic, version, input `c h w`, background class
/// (`u32::MAX` for none), layer count, then one record per layer: a kind tag
/// byte, `u32` shape fields and `f32` parameters.
pub fn serialize(net: &Network<f32>) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(MAGIC);
    w.u32(FORMAT_VERSION);
    let (c, h, ww) = net.input_shape();
    for d in [c, h, ww] {
        w.usize(d);
    }
    w.u32(net.background().map_or(NO_BACKGROUND, |b| b as u32));
    w.usize(net.len());
    for layer in net.layers() {
        match layer {
            Layer::Conv(b) => {
                w.u8(TAG_CONV);
                put_bank(&mut w, b);
            }
            Layer::Maxout { group } => {
                w.u8(TAG_MAXOUT);
                w.usize(*group);
            }
            Layer::Softmax => w.u8(TAG_SOFTMAX),
            Layer::Dropout { rate } => {
                w.u8(TAG_DROPOUT);
                w.u64(rate.to_bits());
            }
            Layer::Scheme1(l) => {
                w.u8(TAG_SCHEME1);
                let a = l.coeffs();
                for d in [a.filters(), a.channels(), a.basis(), l.kernel_size(), l.bases().len()] {
                    w.usize(d);
                }
                for b in l.bases() {
                    w.f32s(b.vertical());
                    w.f32s(b.horizontal());
                }
                w.f32s(a.data());
                w.f32s(l.bias());
            }
            Layer::Scheme2(l) => {
                w.u8(TAG_SCHEME2);
                w.u32(match l.order() {
                    SublayerOrder::VerticalFirst => 0,
                    SublayerOrder::HorizontalFirst => 1,
                });
                put_bank(&mut w, l.first());
                put_bank(&mut w, l.second());
            }
        }
    }
    w.buf
}

/// Decodes a file produced by [`serialize`]. Nothing is returned unless the
/// whole file parses and the network validates.
pub fn deserialize(bytes: &[u8]) -> Result<Network<f32>> {
    let mut r = Reader::new(bytes);
    if bytes.len() < 4 || r.take(4)? != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let shape = (r.usize()?, r.usize()?, r.usize()?);
    let background = match r.u32()? {
        NO_BACKGROUND => None,
        b => Some(b as usize),
    };
    let count = r.usize()?;
    let mut layers = Vec::with_capacity(count.min(r.remaining()));
    for _ in 0..count {
        let layer = match r.u8()? {
            TAG_CONV => Layer::Conv(get_bank(&mut r)?),
            TAG_MAXOUT => Layer::Maxout { group: r.usize()? },
            TAG_SOFTMAX => Layer::Softmax,
            TAG_DROPOUT => Layer::Dropout { rate: f64::from_bits(r.u64()?) },
            TAG_SCHEME1 => {
                let (n, c, m, d, nb) = (r.usize()?, r.usize()?, r.usize()?, r.usize()?, r.usize()?);
                if nb != 1 && nb != c {
                    return Err(Error::ShapeInconsistent(format!("{nb} bases for {c} channels")));
                }
                let len = volume(&[m, d])?;
                let mut bases = Vec::with_capacity(nb);
                for _ in 0..nb {
                    let v = r.f32s(len)?;
                    let h = r.f32s(len)?;
                    bases.push(BasisBank::new(d, v, h).map_err(inconsistent)?);
                }
                let coeffs = CoeffTensor::new(n, c, m, r.f32s(volume(&[n, c, m])?)?).map_err(inconsistent)?;
                let bias = r.f32s(n)?;
                Layer::Scheme1(Scheme1Layer::new(bases, coeffs, bias).map_err(inconsistent)?)
            }
            TAG_SCHEME2 => {
                let order = match r.u32()? {
                    0 => SublayerOrder::VerticalFirst,
                    1 => SublayerOrder::HorizontalFirst,
                    o => return Err(Error::ShapeInconsistent(format!("unknown sublayer order {o}"))),
                };
                let first = get_bank(&mut r)?;
                let second = get_bank(&mut r)?;
                if first.bias().iter().any(|&b| b != 0.0) {
                    return Err(Error::ShapeInconsistent("first sublayer carries a bias".into()));
                }
                Layer::Scheme2(Scheme2Layer::new(first, second, order).map_err(inconsistent)?)
            }
            tag => return Err(Error::UnknownLayerKind(tag)),
        };
        layers.push(layer);
    }
    if r.remaining() != 0 {
        return Err(Error::ShapeInconsistent(format!("{} trailing bytes", r.remaining())));
    }
    Network::new(shape, layers, background).map_err(inconsistent)
}

pub fn save_model(path: &Path, net: &Network<f32>) -> Result<()> {
    atomic_write(path, &serialize(net))
}

pub fn load_model(path: &Path) -> Result<Network<f32>> {
    deserialize(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lowrank::scheme2_init_svd_ordered;
    use crate::network::test_model;
    use crate::optim::{scheme1_filter_recon, Scheme1ReconConfig};

    #[test]
    fn empty_network_is_header_only() {
        let net = Network::<f32>::new((1, 4, 4), vec![], None).unwrap();
        let bytes = serialize(&net);
        assert_eq!(bytes.len(), 4 + 4 + 12 + 4 + 4);
        assert_eq!(deserialize(&bytes).unwrap(), net);
    }

    #[test]
    fn test_model_round_trips_bit_exactly() {
        let net = test_model::<f32>(3, 0.5);
        let bytes = serialize(&net);
        let back = deserialize(&bytes).unwrap();
        assert_eq!(serialize(&back), bytes);
        for (a, b) in net.layers().iter().zip(back.layers()) {
            for (pa, pb) in a.params().iter().zip(b.params()) {
                assert!(pa.iter().zip(pb).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
        }
        assert_eq!(back.background(), net.background());
    }

    #[test]
    fn approximation_layers_round_trip() {
        let mut net = test_model::<f32>(5, 0.5);
        let conv2 = net.layers()[3].effective_filters().unwrap();
        let s2 = scheme2_init_svd_ordered(&conv2, 7, SublayerOrder::HorizontalFirst).unwrap().layer;
        net.replace_layer(3, Layer::Scheme2(s2)).unwrap();
        let conv3 = net.layers()[6].effective_filters().unwrap();
        let cfg = Scheme1ReconConfig { per_channel: true, max_iters: 2, ..Default::default() };
        let s1 = scheme1_filter_recon(&conv3, 3, &cfg).unwrap().layer;
        net.replace_layer(6, Layer::Scheme1(s1)).unwrap();
        let bytes = serialize(&net);
        assert_eq!(serialize(&deserialize(&bytes).unwrap()), bytes);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let net = test_model::<f32>(1, 0.5);
        let mut bytes = serialize(&net);
        assert_eq!(deserialize(&bytes[..bytes.len() - 1]), Err(Error::TruncatedPayload));
        assert_eq!(deserialize(&[]), Err(Error::BadMagic));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(deserialize(&extra), Err(Error::ShapeInconsistent(_))));
        bytes[4] = 2;
        assert_eq!(deserialize(&bytes), Err(Error::UnsupportedVersion(2)));
        bytes[4] = 1;
        // first layer tag sits right after the 28-byte header
        bytes[28] = 9;
        assert_eq!(deserialize(&bytes), Err(Error::UnknownLayerKind(9)));
        bytes[28] = 1;
        bytes[0] = b'X';
        assert_eq!(deserialize(&bytes), Err(Error::BadMagic));
    }

    #[test]
    fn inconsistent_shapes_are_rejected() {
        let net = Network::<f32>::new((2, 5, 5), vec![Layer::Maxout { group: 2 }], None).unwrap();
        let mut bytes = serialize(&net);
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&3u32.to_le_bytes());
        assert!(matches!(deserialize(&bytes), Err(Error::ShapeInconsistent(_))));
    }

    #[test]
    fn huge_header_does_not_allocate() {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u32(FORMAT_VERSION);
        for d in [1, 4, 4, NO_BACKGROUND as usize, 1] {
            w.usize(d);
        }
        w.u8(TAG_CONV);
        for d in [u32::MAX as usize; 4] {
            w.usize(d);
        }
        assert!(deserialize(&w.buf).is_err());
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.lrcn");
        let net = test_model::<f32>(2, 0.3);
        save_model(&p, &net).unwrap();
        assert_eq!(load_model(&p).unwrap(), net);
    }
}
