use std::ops::{Index, IndexMut};

/// Row-major K x L table indexed by (UAV, O-RU).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkTable<T> {
    uavs: usize,
    orus: usize,
    data: Vec<T>,
}

impl<T> LinkTable<T> {
    pub fn from_fn(uavs: usize, orus: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(uavs * orus);
        for k in 0..uavs {
            for l in 0..orus {
                data.push(f(k, l));
            }
        }
        Self { uavs, orus, data }
    }

    pub fn try_from_fn<E>(
        uavs: usize,
        orus: usize,
        mut f: impl FnMut(usize, usize) -> Result<T, E>,
    ) -> Result<Self, E> {
        let mut data = Vec::with_capacity(uavs * orus);
        for k in 0..uavs {
            for l in 0..orus {
                data.push(f(k, l)?);
            }
        }
        Ok(Self { uavs, orus, data })
    }

    pub fn uavs(&self) -> usize {
        self.uavs
    }

    pub fn orus(&self) -> usize {
        self.orus
    }

    pub fn row(&self, k: usize) -> &[T] {
        &self.data[k * self.orus..(k + 1) * self.orus]
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.data.iter()
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> LinkTable<U> {
        LinkTable {
            uavs: self.uavs,
            orus: self.orus,
            data: self.data.iter().map(&mut f).collect(),
        }
    }
}

impl<T> Index<(usize, usize)> for LinkTable<T> {
    type Output = T;

    fn index(&self, (k, l): (usize, usize)) -> &T {
        debug_assert!(k < self.uavs && l < self.orus);
        &self.data[k * self.orus + l]
    }
}

impl<T> IndexMut<(usize, usize)> for LinkTable<T> {
    fn index_mut(&mut self, (k, l): (usize, usize)) -> &mut T {
        debug_assert!(k < self.uavs && l < self.orus);
        &mut self.data[k * self.orus + l]
    }
}
