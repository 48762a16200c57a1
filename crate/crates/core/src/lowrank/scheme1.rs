use crate::error::{shape_err, Result};
use crate::scalar::{gemm, Scalar};
use crate::tensor::separable::{
    horizontal_pass_backward, per_channel_forward, vertical_pass_backward,
};
use crate::tensor::{BasisBank, Batch, CoeffTensor, FeatureMap, FilterBank};

/// Per-channel separable basis followed by a pointwise recombination.
///
/// `bases` holds a single basis shared by all input channels (the default)
/// or one basis per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Scheme1Layer<T = f32> {
    bases: Vec<BasisBank<T>>,
    coeffs: CoeffTensor<T>,
    bias: Vec<T>,
}

pub(crate) struct Scheme1Cache<T> {
    maps: Batch<T>,
    vertical: Vec<T>,
}

/// Parameter gradients of a Scheme-1 layer, laid out like its parameters.
pub(crate) struct Scheme1Grads<T> {
    pub vertical: Vec<Vec<T>>,
    pub horizontal: Vec<Vec<T>>,
    pub coeffs: Vec<T>,
    pub bias: Vec<T>,
    pub input: Option<Batch<T>>,
}

impl<T: Scalar> Scheme1Layer<T> {
    pub fn new(bases: Vec<BasisBank<T>>, coeffs: CoeffTensor<T>, bias: Vec<T>) -> Result<Self> {
        let first = bases.first().ok_or_else(|| shape_err("scheme-1 layer needs a basis"))?;
        let c = coeffs.channels();
        if bases.len() != 1 && bases.len() != c {
            return Err(shape_err(format!("expected 1 or {c} bases, got {}", bases.len())));
        }
        if bases.iter().any(|b| b.len() != first.len() || b.d() != first.d()) {
            return Err(shape_err("bases differ in size"));
        }
        if coeffs.basis() != first.len() {
            return Err(shape_err(format!(
                "coefficients index {} basis filters, basis has {}",
                coeffs.basis(),
                first.len()
            )));
        }
        if bias.len() != coeffs.filters() {
            return Err(shape_err("bias length differs from filter count"));
        }
        Ok(Self { bases, coeffs, bias })
    }

    pub fn filters(&self) -> usize {
        self.coeffs.filters()
    }
    pub fn channels(&self) -> usize {
        self.coeffs.channels()
    }
    pub fn basis_size(&self) -> usize {
        self.coeffs.basis()
    }
    pub fn kernel_size(&self) -> usize {
        self.bases[0].d()
    }
    pub fn is_shared(&self) -> bool {
        self.bases.len() == 1
    }
    pub fn bases(&self) -> &[BasisBank<T>] {
        &self.bases
    }
    pub fn basis_for(&self, c: usize) -> &BasisBank<T> {
        if self.is_shared() {
            &self.bases[0]
        } else {
            &self.bases[c]
        }
    }
    pub fn coeffs(&self) -> &CoeffTensor<T> {
        &self.coeffs
    }
    pub fn bias(&self) -> &[T] {
        &self.bias
    }
    pub fn param_count(&self) -> usize {
        self.bases.len() * 2 * self.basis_size() * self.kernel_size()
            + self.coeffs.data().len()
            + self.bias.len()
    }

    /// Mutable parameter slices in a fixed order: per basis (vertical,
    /// horizontal), then coefficients, then bias.
    pub(crate) fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for b in self.bases.iter_mut() {
            let (v, h) = b.split_mut();
            out.push(v);
            out.push(h);
        }
        out.push(self.coeffs.data_mut());
        out.push(&mut self.bias);
        out
    }

    pub(crate) fn params(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for b in &self.bases {
            out.push(b.vertical());
            out.push(b.horizontal());
        }
        out.push(self.coeffs.data());
        out.push(&self.bias);
        out
    }

    pub fn forward(&self, z: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        let (y, _) = self.forward_batch(&Batch::from_map(z), false)?;
        Ok(FeatureMap::from_raw(y.channels, y.height, y.width, y.data))
    }

    pub(crate) fn forward_batch(
        &self,
        x: &Batch<T>,
        keep: bool,
    ) -> Result<(Batch<T>, Option<Scheme1Cache<T>>)> {
        if x.channels != self.channels() {
            return Err(shape_err(format!(
                "input has {} channels, scheme-1 layer expects {}",
                x.channels,
                self.channels()
            )));
        }
        let pc = per_channel_forward(x, &self.bases, keep)?;
        let maps = pc.maps;
        let n = self.filters();
        let cols = maps.channel_len();
        let cm = maps.channels;
        let mut out = Batch::zeros(n, maps.batch, maps.height, maps.width);
        gemm(false, false, n, cols, cm, T::one(), self.coeffs.data(), &maps.data, T::zero(), &mut out.data);
        for (ni, &b) in self.bias.iter().enumerate() {
            for y in &mut out.data[ni * cols..(ni + 1) * cols] {
                *y += b;
            }
        }
        let cache = if keep {
            Some(Scheme1Cache { maps, vertical: pc.vertical.expect("kept") })
        } else {
            None
        };
        Ok((out, cache))
    }

    pub(crate) fn backward_batch(
        &self,
        x: &Batch<T>,
        cache: &Scheme1Cache<T>,
        dy: &Batch<T>,
        need_input: bool,
    ) -> Scheme1Grads<T> {
        let (c, b, h, w) = x.dims();
        let (m, d, n) = (self.basis_size(), self.kernel_size(), self.filters());
        let (oh, ow) = (h + 1 - d, w + 1 - d);
        let cols = dy.channel_len();
        let cm = c * m;
        let mut coeffs = vec![T::zero(); n * cm];
        gemm(false, true, n, cm, cols, T::one(), &dy.data, &cache.maps.data, T::zero(), &mut coeffs);
        let bias = (0..n).map(|ni| dy.data[ni * cols..(ni + 1) * cols].iter().copied().sum()).collect();
        let mut dmaps = vec![T::zero(); cm * cols];
        gemm(true, false, cm, cols, n, T::one(), self.coeffs.data(), &dy.data, T::zero(), &mut dmaps);

        let nb = self.bases.len();
        let mut dv = vec![vec![T::zero(); m * d]; nb];
        let mut dh = vec![vec![T::zero(); m * d]; nb];
        let mut dx = need_input.then(|| Batch::zeros(c, b, h, w));
        let mut dt = vec![T::zero(); oh * w];
        for ci in 0..c {
            let bi_idx = if nb == 1 { 0 } else { ci };
            let basis = &self.bases[bi_idx];
            for mi in 0..m {
                let ch = ci * m + mi;
                for bi in 0..b {
                    let t = &cache.vertical[(ch * b + bi) * oh * w..(ch * b + bi + 1) * oh * w];
                    let g = &dmaps[(ch * b + bi) * oh * ow..(ch * b + bi + 1) * oh * ow];
                    dt.fill(T::zero());
                    horizontal_pass_backward(
                        t,
                        oh,
                        w,
                        basis.h(mi),
                        g,
                        &mut dh[bi_idx][mi * d..(mi + 1) * d],
                        Some(&mut dt),
                    );
                    vertical_pass_backward(
                        x.image(ci, bi),
                        h,
                        w,
                        basis.v(mi),
                        &dt,
                        &mut dv[bi_idx][mi * d..(mi + 1) * d],
                        dx.as_mut().map(|dx| dx.image_mut(ci, bi)),
                    );
                }
            }
        }
        Scheme1Grads { vertical: dv, horizontal: dh, coeffs, bias, input: dx }
    }

    /// Dense equivalent bank: `W~_n^c = sum_m a[n][c][m] s_m`.
    pub fn effective_filters(&self) -> FilterBank<T> {
        let (n, c, m, d) = (self.filters(), self.channels(), self.basis_size(), self.kernel_size());
        let mut weights = vec![T::zero(); n * c * d * d];
        for ci in 0..c {
            let basis = self.basis_for(ci);
            let dense: Vec<Vec<T>> = (0..m).map(|mi| basis.dense(mi)).collect();
            for ni in 0..n {
                let dst = &mut weights[(ni * c + ci) * d * d..(ni * c + ci + 1) * d * d];
                for (mi, s) in dense.iter().enumerate() {
                    crate::scalar::axpy(self.coeffs.get(ni, ci, mi), s, dst);
                }
            }
        }
        FilterBank::new(n, c, d, d, weights, self.bias.clone()).expect("consistent shapes")
    }

    pub fn cast<U: Scalar>(&self) -> Scheme1Layer<U> {
        Scheme1Layer {
            bases: self.bases.iter().map(|b| b.cast()).collect(),
            coeffs: self.coeffs.cast(),
            bias: self.bias.iter().map(|&x| U::of(x.to_f64())).collect(),
        }
    }
}

/// Scheme-1 forward pass: per-channel separable filtering then recombination.
pub fn scheme1_forward<T: Scalar>(layer: &Scheme1Layer<T>, z: &FeatureMap<T>) -> Result<FeatureMap<T>> {
    layer.forward(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::conv2d_valid;

    #[test]
    fn impulse_basis_is_pointwise_conv() {
        let basis = BasisBank::new(1, vec![1.0f64], vec![1.0]).unwrap();
        let w = [0.5, -1.0, 2.0, 0.25, 1.5, -0.5];
        let coeffs = CoeffTensor::new(2, 3, 1, w.to_vec()).unwrap();
        let layer = Scheme1Layer::new(vec![basis], coeffs, vec![0.1, 0.2]).unwrap();
        let bank = FilterBank::new(2, 3, 1, 1, w.to_vec(), vec![0.1, 0.2]).unwrap();
        let x = FeatureMap::from_fn(3, 4, 4, |c, u, v| (c as f64 - u as f64 * 0.3 + v as f64).sin());
        let a = layer.forward(&x).unwrap();
        let b = conv2d_valid(&x, &bank).unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_coefficients_give_bias_maps() {
        let basis = BasisBank::new(3, vec![1.0f64; 6], vec![1.0; 6]).unwrap();
        let layer =
            Scheme1Layer::new(vec![basis], CoeffTensor::zeros(2, 1, 2), vec![3.0, -1.0]).unwrap();
        let y = layer.forward(&FeatureMap::from_fn(1, 5, 5, |_, u, v| (u + v) as f64)).unwrap();
        assert_eq!(y.shape(), (2, 3, 3));
        assert!(y.channel(0).iter().all(|&v| v == 3.0));
        assert!(y.channel(1).iter().all(|&v| v == -1.0));
    }

    #[test]
    fn rejects_inconsistent_parts() {
        let basis = BasisBank::new(3, vec![1.0f64; 6], vec![1.0; 6]).unwrap();
        assert!(Scheme1Layer::new(vec![basis.clone()], CoeffTensor::zeros(2, 1, 3), vec![0.0; 2]).is_err());
        assert!(Scheme1Layer::new(vec![basis.clone(); 2], CoeffTensor::zeros(2, 3, 2), vec![0.0; 2]).is_err());
        assert!(Scheme1Layer::new(vec![basis], CoeffTensor::zeros(2, 1, 2), vec![0.0; 3]).is_err());
    }
}
