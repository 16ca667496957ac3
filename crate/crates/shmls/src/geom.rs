//! Integer box geometry shared by the stencil passes and the simulator.
//!
//! Grids live on half-open axis-aligned boxes `[lo, hi)` of rank 1..=3.
//! Points are addressed in row-major order with the last axis contiguous.

/// Half-open integer box `[lo, hi)` per axis.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IBox {
    pub lo: Vec<i64>,
    pub hi: Vec<i64>,
}

impl IBox {
    pub fn new(lo: Vec<i64>, hi: Vec<i64>) -> Self {
        assert_eq!(lo.len(), hi.len());
        IBox { lo, hi }
    }

    /// Box `[0, n)` per axis.
    pub fn from_extents(extents: &[i64]) -> Self {
        IBox {
            lo: vec![0; extents.len()],
            hi: extents.to_vec(),
        }
    }

    pub fn rank(&self) -> usize {
        self.lo.len()
    }

    pub fn extents(&self) -> Vec<i64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| (h - l).max(0))
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.lo.iter().zip(&self.hi).any(|(l, h)| l >= h)
    }

    /// Number of points, zero when empty.
    pub fn len(&self) -> usize {
        if self.is_empty() {
            0
        } else {
            self.extents().iter().product::<i64>() as usize
        }
    }

    pub fn contains(&self, p: &[i64]) -> bool {
        p.len() == self.rank()
            && p.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(x, (l, h))| l <= x && x < h)
    }

    /// Shrink by one on every axis from both sides: the set of points whose
    /// full radius-1 neighbourhood lies inside this box.
    pub fn shrink1(&self) -> IBox {
        IBox {
            lo: self.lo.iter().map(|l| l + 1).collect(),
            hi: self.hi.iter().map(|h| h - 1).collect(),
        }
    }

    pub fn intersect(&self, other: &IBox) -> IBox {
        assert_eq!(self.rank(), other.rank());
        IBox {
            lo: self
                .lo
                .iter()
                .zip(&other.lo)
                .map(|(a, b)| *a.max(b))
                .collect(),
            hi: self
                .hi
                .iter()
                .zip(&other.hi)
                .map(|(a, b)| *a.min(b))
                .collect(),
        }
    }

    /// Row-major strides over the box extents (last axis has stride 1).
    pub fn strides(&self) -> Vec<i64> {
        let ext = self.extents();
        let mut strides = vec![1i64; ext.len()];
        for d in (0..ext.len().saturating_sub(1)).rev() {
            strides[d] = strides[d + 1] * ext[d + 1];
        }
        strides
    }

    /// Row-major linear index of a point inside the box.
    pub fn linear(&self, p: &[i64]) -> usize {
        debug_assert!(self.contains(p));
        let strides = self.strides();
        p.iter()
            .zip(self.lo.iter().zip(&strides))
            .map(|(x, (l, s))| (x - l) * s)
            .sum::<i64>() as usize
    }

    /// Inverse of `linear`.
    pub fn delinearize(&self, mut idx: usize) -> Vec<i64> {
        let strides = self.strides();
        let mut p = vec![0i64; self.rank()];
        for d in 0..self.rank() {
            p[d] = self.lo[d] + (idx / strides[d] as usize) as i64;
            idx %= strides[d] as usize;
        }
        p
    }

    /// Row-major iteration over all points.
    pub fn points(&self) -> BoxPoints {
        BoxPoints {
            bx: self.clone(),
            next: if self.is_empty() {
                None
            } else {
                Some(self.lo.clone())
            },
        }
    }
}

pub struct BoxPoints {
    bx: IBox,
    next: Option<Vec<i64>>,
}

impl Iterator for BoxPoints {
    type Item = Vec<i64>;

    fn next(&mut self) -> Option<Vec<i64>> {
        let cur = self.next.take()?;
        let mut nxt = cur.clone();
        for d in (0..self.bx.rank()).rev() {
            nxt[d] += 1;
            if nxt[d] < self.bx.hi[d] {
                self.next = Some(nxt);
                return Some(cur);
            }
            nxt[d] = self.bx.lo[d];
        }
        Some(cur)
    }
}

/// Linear index of a radius-1 offset within the streamed window:
/// `sum_d (o_d + 1) * 3^(rank-1-d)`. Bijective from `{-1,0,1}^rank`
/// onto `[0, 3^rank)`.
pub fn window_index(offset: &[i64]) -> usize {
    let rank = offset.len();
    let mut idx = 0usize;
    for (d, o) in offset.iter().enumerate() {
        debug_assert!((-1..=1).contains(o));
        idx += ((o + 1) as usize) * 3usize.pow((rank - 1 - d) as u32);
    }
    idx
}

/// Inverse of `window_index`.
pub fn window_offset(rank: usize, mut idx: usize) -> Vec<i64> {
    let mut off = vec![0i64; rank];
    for d in 0..rank {
        let w = 3usize.pow((rank - 1 - d) as u32);
        off[d] = (idx / w) as i64 - 1;
        idx %= w;
    }
    off
}

/// Number of window taps for a rank: 3, 9 or 27.
pub fn window_size(rank: usize) -> usize {
    3usize.pow(rank as u32)
}

/// Minimal shift-register length covering all radius-1 taps of a grid with
/// the given row-major extents: `2 * sum(strides) + 1`.
pub fn shift_register_len(extents: &[i64]) -> usize {
    let bx = IBox::from_extents(extents);
    let span: i64 = bx.strides().iter().sum();
    (2 * span + 1) as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_index_examples() {
        assert_eq!(window_index(&[-1]), 0);
        assert_eq!(window_index(&[0]), 1);
        assert_eq!(window_index(&[1]), 2);
        // <-1,0,1> in 3D: 0*9 + 1*3 + 2 = 5
        assert_eq!(window_index(&[-1, 0, 1]), 5);
        // all-zero offset maps to the window centre
        for rank in 1..=3usize {
            let zero = vec![0i64; rank];
            assert_eq!(window_index(&zero), (window_size(rank) - 1) / 2);
        }
    }

    #[test]
    fn window_index_bijective() {
        for rank in 1..=3usize {
            let mut seen = vec![false; window_size(rank)];
            let mut offsets = vec![vec![]];
            for _ in 0..rank {
                offsets = offsets
                    .into_iter()
                    .flat_map(|p: Vec<i64>| {
                        (-1..=1).map(move |o| {
                            let mut q = p.clone();
                            q.push(o);
                            q
                        })
                    })
                    .collect();
            }
            for off in &offsets {
                let idx = window_index(off);
                assert!(!seen[idx], "collision at {:?}", off);
                seen[idx] = true;
                assert_eq!(&window_offset(rank, idx), off);
            }
            assert!(seen.iter().all(|s| *s));
        }
    }

    #[test]
    fn shift_register_len_matches_span() {
        assert_eq!(shift_register_len(&[128]), 3);
        assert_eq!(shift_register_len(&[8, 8]), 2 * (8 + 1) + 1);
        // 2*ny*nz + 2*nz + 3 for rank 3
        assert_eq!(shift_register_len(&[4, 5, 6]), 2 * 5 * 6 + 2 * 6 + 3);
    }

    #[test]
    fn shift_register_covers_all_taps() {
        // Tap-coverage proof: for every offset, the register slot
        // sum((o_d+1)*stride_d) lies within [0, len).
        for extents in [vec![5i64], vec![4, 6], vec![3, 4, 5]] {
            let len = shift_register_len(&extents);
            let bx = IBox::from_extents(&extents);
            let strides = bx.strides();
            let rank = extents.len();
            for idx in 0..window_size(rank) {
                let off = window_offset(rank, idx);
                let slot: i64 = off
                    .iter()
                    .zip(&strides)
                    .map(|(o, s)| (o + 1) * s)
                    .sum();
                assert!(slot >= 0 && (slot as usize) < len);
            }
        }
    }

    #[test]
    fn box_iteration_row_major() {
        let bx = IBox::new(vec![1, 0], vec![3, 2]);
        let pts: Vec<_> = bx.points().collect();
        assert_eq!(
            pts,
            vec![vec![1, 0], vec![1, 1], vec![2, 0], vec![2, 1]]
        );
        for (i, p) in pts.iter().enumerate() {
            assert_eq!(bx.linear(p), i);
            assert_eq!(bx.delinearize(i), *p);
        }
    }

    #[test]
    fn shrink_and_intersect() {
        let bx = IBox::from_extents(&[4, 4, 4]);
        assert_eq!(bx.shrink1().len(), 8);
        let a = IBox::new(vec![1], vec![127]);
        let b = IBox::new(vec![0], vec![100]);
        assert_eq!(a.intersect(&b), IBox::new(vec![1], vec![100]));
        assert!(IBox::new(vec![3], vec![3]).is_empty());
    }
}
