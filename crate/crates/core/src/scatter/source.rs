//! Observation sources: plain columns, all pairwise differences, or cyclic
//! lag differences. Reductions run block by block and are merged in block
//! order, so results do not depend on the number of worker threads.

use rayon::prelude::*;

pub(crate) trait Observations: Sync {
    fn dim(&self) -> usize;
    fn count(&self) -> usize;
    fn blocks(&self) -> usize;
    fn for_each_in_block<F: FnMut(&[f64])>(&self, block: usize, f: F);

    /// Fold every observation into an accumulator, one accumulator per block,
    /// merged sequentially in block order.
    fn reduce<A, I, V, M>(&self, init: I, visit: V, merge: M) -> A
    where
        A: Send,
        I: Fn() -> A + Sync,
        V: Fn(&mut A, &[f64]) + Sync,
        M: Fn(&mut A, A),
    {
        let blocks = self.blocks();
        let run = |b: usize| {
            let mut acc = init();
            self.for_each_in_block(b, |x| visit(&mut acc, x));
            acc
        };
        if blocks == 1 {
            return run(0);
        }
        let parts: Vec<A> = (0..blocks).into_par_iter().map(run).collect();
        let mut iter = parts.into_iter();
        let mut total = iter.next().unwrap_or_else(&init);
        for part in iter {
            merge(&mut total, part);
        }
        total
    }
}

const COLUMN_BLOCK: usize = 2048;

/// Columns of a column-major p × n buffer.
pub(crate) struct Columns<'a> {
    data: &'a [f64],
    dim: usize,
    count: usize,
}

impl<'a> Columns<'a> {
    pub fn new(data: &'a [f64], dim: usize) -> Self {
        debug_assert_eq!(data.len() % dim, 0);
        Self { data, dim, count: data.len() / dim }
    }
}

impl Observations for Columns<'_> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn count(&self) -> usize {
        self.count
    }
    fn blocks(&self) -> usize {
        self.count.div_ceil(COLUMN_BLOCK).max(1)
    }
    fn for_each_in_block<F: FnMut(&[f64])>(&self, block: usize, mut f: F) {
        let start = block * COLUMN_BLOCK;
        let end = (start + COLUMN_BLOCK).min(self.count);
        for j in start..end {
            f(&self.data[j * self.dim..(j + 1) * self.dim]);
        }
    }
}

/// All differences xᵢ − xⱼ with i < j, generated on the fly.
pub(crate) struct AllPairs<'a> {
    data: &'a [f64],
    dim: usize,
    n: usize,
}

impl<'a> AllPairs<'a> {
    pub fn new(data: &'a [f64], dim: usize) -> Self {
        Self { data, dim, n: data.len() / dim }
    }
}

impl Observations for AllPairs<'_> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn count(&self) -> usize {
        self.n * (self.n - 1) / 2
    }
    fn blocks(&self) -> usize {
        self.n - 1
    }
    fn for_each_in_block<F: FnMut(&[f64])>(&self, i: usize, mut f: F) {
        let p = self.dim;
        let xi = &self.data[i * p..(i + 1) * p];
        let mut buf = vec![0.0; p];
        for j in i + 1..self.n {
            let xj = &self.data[j * p..(j + 1) * p];
            for ((b, a), c) in buf.iter_mut().zip(xi).zip(xj) {
                *b = a - c;
            }
            f(&buf);
        }
    }
}

const LAG_BLOCK: usize = 256;

/// Differences x_{π(i)} − x_{π(i+l mod n)} for lags l = 1..=max_lag, where π
/// is a fixed permutation of the columns. Every observation takes part in
/// exactly 2·max_lag differences.
pub(crate) struct CyclicPairs<'a> {
    data: &'a [f64],
    dim: usize,
    order: Vec<usize>,
    max_lag: usize,
}

impl<'a> CyclicPairs<'a> {
    pub fn new(data: &'a [f64], dim: usize, order: Vec<usize>, max_lag: usize) -> Self {
        Self { data, dim, order, max_lag }
    }
}

impl Observations for CyclicPairs<'_> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn count(&self) -> usize {
        self.order.len() * self.max_lag
    }
    fn blocks(&self) -> usize {
        self.order.len().div_ceil(LAG_BLOCK).max(1)
    }
    fn for_each_in_block<F: FnMut(&[f64])>(&self, block: usize, mut f: F) {
        let p = self.dim;
        let n = self.order.len();
        let start = block * LAG_BLOCK;
        let end = (start + LAG_BLOCK).min(n);
        let mut buf = vec![0.0; p];
        for i in start..end {
            let a = self.order[i];
            let xa = &self.data[a * p..(a + 1) * p];
            for lag in 1..=self.max_lag {
                let b = self.order[(i + lag) % n];
                let xb = &self.data[b * p..(b + 1) * p];
                for ((d, u), v) in buf.iter_mut().zip(xa).zip(xb) {
                    *d = u - v;
                }
                f(&buf);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn collect<S: Observations>(s: &S) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for b in 0..s.blocks() {
            s.for_each_in_block(b, |x| out.push(x.to_vec()));
        }
        out
    }

    #[test]
    fn all_pairs_enumerates_each_pair_once() {
        let data: Vec<f64> = (0..10).map(|v| v as f64).collect(); // 5 columns, p = 2
        let pairs = AllPairs::new(&data, 2);
        let got = collect(&pairs);
        assert_eq!(got.len(), pairs.count());
        assert_eq!(got.len(), 10);
        assert_eq!(got[0], vec![-2.0, -2.0]);
    }

    #[test]
    fn cyclic_pairs_count_and_participation() {
        let n = 7;
        let data: Vec<f64> = (0..n).map(|v| (v * v) as f64).collect();
        let pairs = CyclicPairs::new(&data, 1, (0..n).collect(), 2);
        assert_eq!(collect(&pairs).len(), 14);
    }
}
