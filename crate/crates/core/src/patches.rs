//! 7×3 xt-patches and nearest-neighbor search over them.
//!
//! A patch at `(x, row, t)` covers columns `x..x + 7` and frames `t..t + 3` of
//! the row-`row` xt-slice. Patches are enumerated row-major over
//! `(row, t, x)`; that order is the patch index used for tie-breaking.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::VideoClip;

pub const PATCH_W: usize = 7;
pub const PATCH_T: usize = 3;
pub const PATCH_LEN: usize = PATCH_W * PATCH_T;

/// Location of a patch's top-left sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PatchCoord {
    pub x: usize,
    pub row: usize,
    pub t: usize,
}

impl PatchCoord {
    /// True when the two patches share at least one pixel.
    pub fn overlaps(&self, other: &PatchCoord) -> bool {
        self.row == other.row && self.x.abs_diff(other.x) < PATCH_W && self.t.abs_diff(other.t) < PATCH_T
    }
}

/// Every stride-1 xt-patch of a single-channel clip, flattened t-major.
#[derive(Clone, Debug)]
pub struct PatchSet {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    values: Vec<f32>,
}

impl PatchSet {
    /// Extracts patches from the luma of `clip`.
    pub fn from_clip(clip: &VideoClip) -> Result<Self> {
        let (w, h, k) = (clip.width(), clip.height(), clip.len());
        if k < PATCH_T || w < PATCH_W {
            return Err(Error::TooSmall(format!(
                "{w}x{h}x{k} clip has no {PATCH_W}x{PATCH_T} xt-patches"
            )));
        }
        let luma: Vec<Vec<f32>> = clip.frames.iter().map(|f| f.luma().into_vec()).collect();
        Ok(Self::from_luma(&luma, w, h))
    }

    /// Extracts patches from per-frame row-major luma planes.
    pub fn from_luma(luma: &[Vec<f32>], width: usize, height: usize) -> Self {
        let frames = luma.len();
        let per_row = (width - PATCH_W + 1) * (frames - PATCH_T + 1);
        let mut values = Vec::with_capacity(per_row * height * PATCH_LEN);
        for row in 0..height {
            for t in 0..=frames - PATCH_T {
                for x in 0..=width - PATCH_W {
                    for dt in 0..PATCH_T {
                        let start = row * width + x;
                        values.extend_from_slice(&luma[t + dt][start..start + PATCH_W]);
                    }
                }
            }
        }
        Self {
            width,
            height,
            frames,
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len() / PATCH_LEN
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn patch(&self, index: usize) -> &[f32] {
        &self.values[index * PATCH_LEN..(index + 1) * PATCH_LEN]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    fn xs(&self) -> usize {
        self.width - PATCH_W + 1
    }

    fn ts(&self) -> usize {
        self.frames - PATCH_T + 1
    }

    pub fn coord(&self, index: usize) -> PatchCoord {
        let xs = self.xs();
        let per_row = xs * self.ts();
        PatchCoord {
            row: index / per_row,
            t: (index % per_row) / xs,
            x: index % xs,
        }
    }

    pub fn index_of(&self, c: PatchCoord) -> usize {
        (c.row * self.ts() + c.t) * self.xs() + c.x
    }
}

/// Squared Euclidean distance, accumulated in `f64` in sample order.
#[inline]
pub fn distance2(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist2: f64,
}

impl Neighbor {
    /// Strict improvement, with lower patch index winning ties.
    #[inline]
    fn beats(&self, other: &Option<Neighbor>) -> bool {
        match other {
            None => true,
            Some(o) => self.dist2 < o.dist2 || (self.dist2 == o.dist2 && self.index < o.index),
        }
    }
}

/// Search accuracy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum NnMode {
    #[default]
    Exact,
    /// Returned distances are within `(1 + eps)` of the true NN distance.
    Approximate { eps: f64 },
}

/// Linear scan; the reference every tree query must agree with in exact mode.
pub fn brute_force_nearest(set: &PatchSet, query: &[f32], exclude: impl Fn(usize) -> bool) -> Option<Neighbor> {
    let mut best: Option<Neighbor> = None;
    for i in 0..set.len() {
        if exclude(i) {
            continue;
        }
        let n = Neighbor {
            index: i,
            dist2: distance2(query, set.patch(i)),
        };
        if n.beats(&best) {
            best = Some(n);
        }
    }
    best
}

const LEAF_SIZE: usize = 12;

#[derive(Debug)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        dim: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// A searchable pool of xt-patches.
///
/// The kd-tree partitions PCA-rotated coordinates (rotations preserve
/// distances, and splitting along principal axes prunes far better on patch
/// data); candidate distances are always computed on the original samples so
/// exact-mode answers match [`brute_force_nearest`] bit for bit.
#[derive(Debug)]
pub struct PatchIndex {
    set: PatchSet,
    mode: NnMode,
    mean: [f64; PATCH_LEN],
    /// Row `d` is principal axis `d`, in decreasing variance order.
    axes: Vec<[f64; PATCH_LEN]>,
    /// Rotated coordinates in tree order.
    rotated: Vec<f64>,
    /// Original samples in tree order.
    ordered: Vec<f32>,
    /// Patch index of each tree slot.
    ids: Vec<usize>,
    nodes: Vec<Node>,
}

/// Absolute slack on pruning bounds, covering rounding in the rotation.
const BOUND_SLACK: f64 = 1e-9;

impl PatchIndex {
    pub fn build(set: PatchSet, mode: NnMode) -> Self {
        let m = set.len();
        let mut mean = [0.0f64; PATCH_LEN];
        for i in 0..m {
            for (a, &v) in mean.iter_mut().zip(set.patch(i)) {
                *a += v as f64;
            }
        }
        mean.iter_mut().for_each(|a| *a /= m.max(1) as f64);
        let mut cov = DMatrix::<f64>::zeros(PATCH_LEN, PATCH_LEN);
        for i in 0..m {
            let p = set.patch(i);
            let centered: Vec<f64> = p.iter().zip(&mean).map(|(&v, mu)| v as f64 - mu).collect();
            for a in 0..PATCH_LEN {
                for b in a..PATCH_LEN {
                    cov[(a, b)] += centered[a] * centered[b];
                }
            }
        }
        for a in 0..PATCH_LEN {
            for b in 0..a {
                cov[(a, b)] = cov[(b, a)];
            }
        }
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..PATCH_LEN).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let axes: Vec<[f64; PATCH_LEN]> = order
            .iter()
            .map(|&d| {
                let mut axis = [0.0; PATCH_LEN];
                for (k, a) in axis.iter_mut().enumerate() {
                    *a = eig.eigenvectors[(k, d)];
                }
                axis
            })
            .collect();

        let mut index = Self {
            set,
            mode,
            mean,
            axes,
            rotated: Vec::new(),
            ordered: Vec::new(),
            ids: (0..m).collect(),
            nodes: Vec::new(),
        };
        let mut rotated = vec![0.0f64; m * PATCH_LEN];
        for i in 0..m {
            let r = index.rotate(index.set.patch(i));
            rotated[i * PATCH_LEN..(i + 1) * PATCH_LEN].copy_from_slice(&r);
        }
        let mut ids: Vec<usize> = (0..m).collect();
        if m > 0 {
            index.build_node(&rotated, &mut ids, 0, m);
        }
        index.rotated = ids
            .iter()
            .flat_map(|&i| rotated[i * PATCH_LEN..(i + 1) * PATCH_LEN].to_vec())
            .collect();
        index.ordered = ids.iter().flat_map(|&i| index.set.patch(i).to_vec()).collect();
        index.ids = ids;
        index
    }

    fn rotate(&self, p: &[f32]) -> [f64; PATCH_LEN] {
        let centered: [f64; PATCH_LEN] = std::array::from_fn(|k| p[k] as f64 - self.mean[k]);
        std::array::from_fn(|d| self.axes[d].iter().zip(&centered).map(|(a, c)| a * c).sum())
    }

    fn build_node(&mut self, rot: &[f64], ids: &mut [usize], start: usize, end: usize) -> usize {
        let slot = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return slot;
        }
        // Widest dimension of this cell.
        let mut dim = 0;
        let mut widest = -1.0;
        for d in 0..PATCH_LEN {
            let (lo, hi) = ids[start..end].iter().fold((f64::MAX, f64::MIN), |(lo, hi), &i| {
                let v = rot[i * PATCH_LEN + d];
                (lo.min(v), hi.max(v))
            });
            if hi - lo > widest {
                widest = hi - lo;
                dim = d;
            }
        }
        if widest <= 0.0 {
            self.nodes.push(Node::Leaf { start, end });
            return slot;
        }
        let mid = start + (end - start) / 2;
        let key = |i: &usize| rot[i * PATCH_LEN + dim];
        ids[start..end].select_nth_unstable_by(mid - start, |a, b| key(a).total_cmp(&key(b)));
        let value = key(&ids[mid]);
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build_node(rot, ids, start, mid);
        let right = self.build_node(rot, ids, mid, end);
        self.nodes[slot] = Node::Split {
            dim,
            value,
            left,
            right,
        };
        slot
    }

    pub fn patches(&self) -> &PatchSet {
        &self.set
    }

    pub fn len(&self) -> usize {
        self.set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.set.is_empty()
    }

    pub fn mode(&self) -> NnMode {
        self.mode
    }

    /// Nearest patch to `query` (21 samples).
    pub fn nearest(&self, query: &[f32]) -> Neighbor {
        self.nearest_filtered(query, |_| false).expect("index is never empty")
    }

    /// Nearest patch whose index is not rejected by `exclude`.
    pub fn nearest_filtered(&self, query: &[f32], exclude: impl Fn(usize) -> bool) -> Option<Neighbor> {
        if self.nodes.is_empty() {
            return None;
        }
        let rq = self.rotate(query);
        let factor = match self.mode {
            NnMode::Exact => 1.0,
            NnMode::Approximate { eps } => (1.0 + eps) * (1.0 + eps),
        };
        let mut search = Search {
            index: self,
            query,
            rq,
            offsets: [0.0; PATCH_LEN],
            factor,
            best: None,
            exclude: &exclude,
        };
        search.visit(0, 0.0);
        search.best
    }
}

struct Search<'a, F: Fn(usize) -> bool> {
    index: &'a PatchIndex,
    query: &'a [f32],
    rq: [f64; PATCH_LEN],
    offsets: [f64; PATCH_LEN],
    factor: f64,
    best: Option<Neighbor>,
    exclude: &'a F,
}

impl<F: Fn(usize) -> bool> Search<'_, F> {
    #[inline]
    fn pruned(&self, bound: f64) -> bool {
        match &self.best {
            None => false,
            Some(b) => bound * self.factor > b.dist2 + BOUND_SLACK * (1.0 + b.dist2),
        }
    }

    fn visit(&mut self, node: usize, bound: f64) {
        match self.index.nodes[node] {
            Node::Leaf { start, end } => {
                for slot in start..end {
                    let id = self.index.ids[slot];
                    if (self.exclude)(id) {
                        continue;
                    }
                    let p = &self.index.ordered[slot * PATCH_LEN..(slot + 1) * PATCH_LEN];
                    let n = Neighbor {
                        index: id,
                        dist2: distance2(self.query, p),
                    };
                    if n.beats(&self.best) {
                        self.best = Some(n);
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = self.rq[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.visit(near, bound);
                let old = self.offsets[dim];
                let far_bound = bound - old * old + diff * diff;
                if !self.pruned(far_bound) {
                    self.offsets[dim] = diff;
                    self.visit(far, far_bound);
                    self.offsets[dim] = old;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;
    use crate::volume::Shutter;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_clip(w: usize, h: usize, k: usize, seed: u64) -> VideoClip {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = (0..k)
            .map(|_| Image::from_fn(w, h, 1, |_, _, _| (rng.gen_range(0..8) as f32) / 7.0))
            .collect();
        VideoClip::new(frames, Shutter::Rolling).unwrap()
    }

    #[test]
    fn counts_and_coordinates() {
        let clip = random_clip(7, 5, 3, 1);
        let set = PatchSet::from_clip(&clip).unwrap();
        assert_eq!(set.len(), 5);
        let clip = random_clip(12, 4, 6, 2);
        let set = PatchSet::from_clip(&clip).unwrap();
        assert_eq!(set.len(), 4 * (12 - 6) * (6 - 2));
        for i in [0, 7, 23, set.len() - 1] {
            let c = set.coord(i);
            assert_eq!(set.index_of(c), i);
            let f = &clip.frames;
            assert_eq!(set.patch(i)[0], f[c.t].get(c.x, c.row, 0));
            assert_eq!(set.patch(i)[PATCH_LEN - 1], f[c.t + 2].get(c.x + 6, c.row, 0));
        }
    }

    #[test]
    fn too_small_clips_are_rejected() {
        assert!(PatchSet::from_clip(&random_clip(6, 4, 3, 0)).is_err());
        assert!(PatchSet::from_clip(&random_clip(8, 4, 2, 0)).is_err());
    }

    #[test]
    fn overlap_relation() {
        let a = PatchCoord { x: 10, row: 2, t: 4 };
        assert!(a.overlaps(&PatchCoord { x: 16, row: 2, t: 6 }));
        assert!(!a.overlaps(&PatchCoord { x: 17, row: 2, t: 4 }));
        assert!(!a.overlaps(&PatchCoord { x: 10, row: 2, t: 7 }));
        assert!(!a.overlaps(&PatchCoord { x: 10, row: 3, t: 4 }));
    }

    #[test]
    fn exact_tree_matches_brute_force() {
        let set = PatchSet::from_clip(&random_clip(20, 8, 6, 7)).unwrap();
        let queries = PatchSet::from_clip(&random_clip(20, 4, 5, 8)).unwrap();
        let index = PatchIndex::build(set.clone(), NnMode::Exact);
        for q in 0..queries.len() {
            let qp = queries.patch(q);
            let want = brute_force_nearest(&set, qp, |_| false).unwrap();
            assert_eq!(index.nearest(qp), want);
        }
        // Present patches are found at distance zero, lowest index first.
        for i in (0..set.len()).step_by(37) {
            let got = index.nearest(set.patch(i));
            assert_eq!(got.dist2, 0.0);
            assert!(got.index <= i);
            assert_eq!(set.patch(got.index), set.patch(i));
        }
    }

    #[test]
    fn filtered_search_matches_brute_force() {
        let set = PatchSet::from_clip(&random_clip(16, 6, 6, 3)).unwrap();
        let index = PatchIndex::build(set.clone(), NnMode::Exact);
        for i in (0..set.len()).step_by(11) {
            let me = set.coord(i);
            let ex = |j: usize| set.coord(j).overlaps(&me);
            let want = brute_force_nearest(&set, set.patch(i), ex);
            let got = index.nearest_filtered(set.patch(i), ex);
            assert_eq!(got, want);
            assert!(!set.coord(got.unwrap().index).overlaps(&me));
        }
    }

    #[test]
    fn approximate_search_respects_bound() {
        let set = PatchSet::from_clip(&random_clip(24, 8, 6, 4)).unwrap();
        let queries = PatchSet::from_clip(&random_clip(24, 3, 4, 5)).unwrap();
        let eps = 0.05;
        let index = PatchIndex::build(set.clone(), NnMode::Approximate { eps });
        for q in 0..queries.len() {
            let qp = queries.patch(q);
            let exact = brute_force_nearest(&set, qp, |_| false).unwrap();
            let got = index.nearest(qp);
            assert!(got.dist2.sqrt() <= (1.0 + eps) * exact.dist2.sqrt() + 1e-9);
        }
    }
}
