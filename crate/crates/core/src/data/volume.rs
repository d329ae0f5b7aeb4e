use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// A 3D grid stored row-major with the last axis fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume<T> {
    dims: [usize; 3],
    data: Vec<T>,
}

pub type LabelVolume = Volume<u8>;

impl<T: Clone> Volume<T> {
    pub fn new(dims: [usize; 3], data: Vec<T>) -> Result<Self> {
        let n = dims.iter().product::<usize>();
        if n != data.len() {
            return Err(Error::DataLength {
                shape: dims.to_vec(),
                len: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn filled(dims: [usize; 3], value: T) -> Self {
        Self {
            dims,
            data: vec![value; dims.iter().product()],
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.dims[1] + y) * self.dims[2] + z
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> &T {
        &self.data[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, value: T) {
        let i = self.index(x, y, z);
        self.data[i] = value;
    }

    pub fn map<U: Clone>(&self, f: impl Fn(&T) -> U) -> Volume<U> {
        Volume {
            dims: self.dims,
            data: self.data.iter().map(f).collect(),
        }
    }

    /// The sub-volume starting at `offset` with extents `size`. Positions
    /// outside `self` take `fill`.
    pub fn crop(&self, offset: [isize; 3], size: [usize; 3], fill: T) -> Self {
        let mut out = Vec::with_capacity(size.iter().product());
        for x in 0..size[0] {
            for y in 0..size[1] {
                for z in 0..size[2] {
                    let p = [x as isize + offset[0], y as isize + offset[1], z as isize + offset[2]];
                    let inside = (0..3).all(|a| p[a] >= 0 && (p[a] as usize) < self.dims[a]);
                    out.push(if inside {
                        self.get(p[0] as usize, p[1] as usize, p[2] as usize).clone()
                    } else {
                        fill.clone()
                    });
                }
            }
        }
        Self { dims: size, data: out }
    }

    /// Mirror along `axis` (0 = x, 1 = y, 2 = z).
    pub fn flip(&self, axis: usize) -> Self {
        let [dx, dy, dz] = self.dims;
        let mut out = Vec::with_capacity(self.data.len());
        for x in 0..dx {
            for y in 0..dy {
                for z in 0..dz {
                    let mut p = [x, y, z];
                    p[axis] = self.dims[axis] - 1 - p[axis];
                    out.push(self.get(p[0], p[1], p[2]).clone());
                }
            }
        }
        Self { dims: self.dims, data: out }
    }
}
