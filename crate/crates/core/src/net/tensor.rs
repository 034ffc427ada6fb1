use super::real::Real;

/// Channel-planar activation map (`C x H x W`).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Tensor {
            channels,
            height,
            width,
            data: vec![T::zero(); channels * height * width],
        }
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn same_dims(&self, other: &Tensor<T>) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    /// Stacks `self` then `other` along the channel axis.
    pub fn concat(&self, other: &Tensor<T>) -> Tensor<T> {
        assert_eq!((self.height, self.width), (other.height, other.width));
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Tensor {
            channels: self.channels + other.channels,
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// Splits a channel-stacked tensor after `first` channels.
    pub fn split(self, first: usize) -> (Tensor<T>, Tensor<T>) {
        let cut = first * self.plane();
        let mut data = self.data;
        let tail = data.split_off(cut);
        (
            Tensor {
                channels: first,
                height: self.height,
                width: self.width,
                data,
            },
            Tensor {
                channels: self.channels - first,
                height: self.height,
                width: self.width,
                data: tail,
            },
        )
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        assert!(self.same_dims(other));
        self.data.iter_mut().zip(&other.data).for_each(|(a, &b)| *a += b);
    }
}
