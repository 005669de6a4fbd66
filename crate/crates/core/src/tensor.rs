//! Minimal C×H×W tensor type backing the network runtime.
//!
//! Everything is `f64` and single-threaded, so repeated evaluation of the same
//! graph is bit-identical. Only the operations the backbone and the losses
//! need are provided; gradients are handled by the layer implementations in
//! `net::layers`, not by a general autograd tape.

use crate::imaging::Image;

/// Dense C×H×W tensor, row-major within each channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_data(
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Option<Self> {
        if data.len() != channels * height * width {
            return None;
        }
        Some(Self {
            channels,
            height,
            width,
            data,
        })
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.idx(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let i = self.idx(c, y, x);
        self.data[i] = v;
    }

    /// Contiguous slice of one channel plane.
    pub fn channel(&self, c: usize) -> &[f64] {
        let hw = self.height * self.width;
        &self.data[c * hw..(c + 1) * hw]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let hw = self.height * self.width;
        &mut self.data[c * hw..(c + 1) * hw]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for v in &mut self.data {
            *v *= k;
        }
    }

    /// Concatenates tensors along the channel axis. All spatial dims must match.
    pub fn concat_channels(parts: &[&Tensor]) -> Tensor {
        let (h, w) = (parts[0].height, parts[0].width);
        let channels = parts.iter().map(|p| p.channels).sum();
        let mut data = Vec::with_capacity(channels * h * w);
        for p in parts {
            debug_assert_eq!((p.height, p.width), (h, w));
            data.extend_from_slice(&p.data);
        }
        Tensor {
            channels,
            height: h,
            width: w,
            data,
        }
    }

    /// Splits the tensor into channel ranges `[0, at)` and `[at, channels)`.
    pub fn split_channels(&self, at: usize) -> (Tensor, Tensor) {
        let hw = self.height * self.width;
        let (a, b) = self.data.split_at(at * hw);
        (
            Tensor {
                channels: at,
                height: self.height,
                width: self.width,
                data: a.to_vec(),
            },
            Tensor {
                channels: self.channels - at,
                height: self.height,
                width: self.width,
                data: b.to_vec(),
            },
        )
    }

    /// Planar copy of an interleaved RGB image into a 3×H×W tensor.
    pub fn from_image(img: &Image) -> Tensor {
        let (h, w) = (img.height(), img.width());
        let mut t = Tensor::zeros(3, h, w);
        let src = img.data();
        for y in 0..h {
            for x in 0..w {
                let i = (y * w + x) * 3;
                t.set(0, y, x, src[i]);
                t.set(1, y, x, src[i + 1]);
                t.set(2, y, x, src[i + 2]);
            }
        }
        t
    }

    /// Inverse of [`Tensor::from_image`]; panics unless the tensor has 3 channels.
    pub fn to_image(&self) -> Image {
        assert_eq!(self.channels, 3, "image tensors have 3 channels");
        let (h, w) = (self.height, self.width);
        let mut data = vec![0.0; h * w * 3];
        for y in 0..h {
            for x in 0..w {
                let i = (y * w + x) * 3;
                data[i] = self.get(0, y, x);
                data[i + 1] = self.get(1, y, x);
                data[i + 2] = self.get(2, y, x);
            }
        }
        Image::from_data(h, w, data).expect("shape is consistent")
    }
}
