use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

/// A `C x H x W` activation volume stored channel-major, then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T = f32> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(shape_err(format!(
                "feature map dims must be >= 1, got {channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(shape_err(format!(
                "feature map {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("feature map contains non-finite values".into()));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        assert!(channels > 0 && height > 0 && width > 0, "feature map dims must be >= 1");
        Self { channels, height, width, data: vec![T::zero(); channels * height * width] }
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut m = Self::zeros(channels, height, width);
        for c in 0..channels {
            for u in 0..height {
                for v in 0..width {
                    m.data[(c * height + u) * width + v] = f(c, u, v);
                }
            }
        }
        m
    }

    /// Builds a map from raw parts without validating finiteness. Shapes are
    /// still checked in debug builds.
    pub(crate) fn from_raw(channels: usize, height: usize, width: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), channels * height * width);
        Self { channels, height, width, data }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }
    pub fn data(&self) -> &[T] {
        &self.data
    }
    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, u: usize, v: usize) -> T {
        self.data[(c * self.height + u) * self.width + v]
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let p = self.height * self.width;
        &self.data[c * p..(c + 1) * p]
    }

    /// Copies out a spatial window `[top..top+h, left..left+w]` of every channel.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Self> {
        if top + h > self.height || left + w > self.width || h == 0 || w == 0 {
            return Err(shape_err(format!(
                "crop {h}x{w} at ({top},{left}) outside {}x{}",
                self.height, self.width
            )));
        }
        Ok(Self::from_fn(self.channels, h, w, |c, u, v| self.get(c, top + u, left + v)))
    }

    pub fn cast<U: Scalar>(&self) -> FeatureMap<U> {
        FeatureMap {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&x| U::of(x.to_f64())).collect(),
        }
    }

    pub fn sq_norm(&self) -> f64 {
        crate::scalar::sq_norm(&self.data)
    }
}

/// A batch of equally shaped feature maps, stored `[C][B][H][W]`.
///
/// With `B = 1` the layout coincides with [`FeatureMap`]. Keeping the batch
/// index inside each channel lets a whole batch go through one GEMM per
/// convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T = f32> {
    pub channels: usize,
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Batch<T> {
    pub fn zeros(channels: usize, batch: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            batch,
            height,
            width,
            data: vec![T::zero(); channels * batch * height * width],
        }
    }

    pub fn from_maps(maps: &[FeatureMap<T>]) -> Result<Self> {
        let first = maps.first().ok_or(Error::EmptyDataset)?;
        let (c, h, w) = first.shape();
        let b = maps.len();
        let p = h * w;
        let mut data = vec![T::zero(); c * b * p];
        for (bi, m) in maps.iter().enumerate() {
            if m.shape() != (c, h, w) {
                return Err(shape_err(format!(
                    "batch element {bi} has shape {:?}, expected {:?}",
                    m.shape(),
                    (c, h, w)
                )));
            }
            for ci in 0..c {
                data[(ci * b + bi) * p..(ci * b + bi + 1) * p].copy_from_slice(m.channel(ci));
            }
        }
        Ok(Self { channels: c, batch: b, height: h, width: w, data })
    }

    pub fn from_map(map: &FeatureMap<T>) -> Self {
        let (c, h, w) = map.shape();
        Self { channels: c, batch: 1, height: h, width: w, data: map.data().to_vec() }
    }

    pub fn sample(&self, bi: usize) -> FeatureMap<T> {
        let p = self.plane();
        let mut data = Vec::with_capacity(self.channels * p);
        for c in 0..self.channels {
            data.extend_from_slice(self.image(c, bi));
        }
        FeatureMap::from_raw(self.channels, self.height, self.width, data)
    }

    /// New batch holding the given samples, in order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let p = self.plane();
        let b = indices.len();
        let mut data = Vec::with_capacity(self.channels * b * p);
        for c in 0..self.channels {
            for &bi in indices {
                data.extend_from_slice(self.image(c, bi));
            }
        }
        Self { channels: self.channels, batch: b, height: self.height, width: self.width, data }
    }

    /// Gathers samples from a slice of maps by index.
    pub fn gather(maps: &[FeatureMap<T>], indices: &[usize]) -> Result<Self> {
        let picked: Vec<FeatureMap<T>> = indices.iter().map(|&i| maps[i].clone()).collect();
        Self::from_maps(&picked)
    }

    pub fn to_maps(&self) -> Vec<FeatureMap<T>> {
        (0..self.batch).map(|b| self.sample(b)).collect()
    }

    #[inline]
    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    /// Length of one channel across the whole batch.
    #[inline]
    pub fn channel_len(&self) -> usize {
        self.batch * self.plane()
    }

    #[inline]
    pub fn image(&self, c: usize, b: usize) -> &[T] {
        let p = self.plane();
        let o = (c * self.batch + b) * p;
        &self.data[o..o + p]
    }

    #[inline]
    pub fn image_mut(&mut self, c: usize, b: usize) -> &mut [T] {
        let p = self.plane();
        let o = (c * self.batch + b) * p;
        &mut self.data[o..o + p]
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.channels, self.batch, self.height, self.width)
    }

    /// Shape of one sample.
    pub fn sample_shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }
}
