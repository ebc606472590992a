//! Exact maximum-weight bipartite matching.
//!
//! Two routes:
//!
//! * [`max_weight_matching`] handles arbitrary edge weights with successive
//!   shortest augmenting paths over reduced costs (Hungarian potentials).
//! * [`GroupMatcher`] covers the vertex-weighted case, where an edge's
//!   weight depends only on its left endpoint and left vertices come in
//!   groups sharing one adjacency row (packets of one queue). Matchable
//!   left sets form a transversal matroid, so inserting left vertices in
//!   decreasing weight order and keeping each one an augmenting path can
//!   reach yields a maximum-weight matching for every weight function
//!   consistent with that order.

use alloc::vec;
use alloc::vec::Vec;

/// Left-by-right weight table; `None` marks a missing edge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightedBipartiteGraph {
    left: usize,
    right: usize,
    weights: Vec<Option<i128>>,
}

impl WeightedBipartiteGraph {
    pub fn new(left: usize, right: usize) -> Self {
        WeightedBipartiteGraph { left, right, weights: vec![None; left * right] }
    }

    pub fn from_rows(rows: &[&[Option<i128>]]) -> Self {
        let right = rows.first().map_or(0, |r| r.len());
        let mut g = Self::new(rows.len(), right);
        for (l, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), right);
            for (r, w) in row.iter().enumerate() {
                g.weights[l * right + r] = *w;
            }
        }
        g
    }

    pub fn left(&self) -> usize {
        self.left
    }

    pub fn right(&self) -> usize {
        self.right
    }

    pub fn set(&mut self, l: usize, r: usize, w: Option<i128>) {
        self.weights[l * self.right + r] = w;
    }

    #[inline]
    pub fn weight(&self, l: usize, r: usize) -> Option<i128> {
        self.weights[l * self.right + r]
    }

    /// Total weight of a set of pairs; `None` if a pair is not an edge.
    pub fn total(&self, pairs: &[(usize, usize)]) -> Option<i128> {
        pairs.iter().map(|&(l, r)| self.weight(l, r)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Matching {
    /// `(left, right)` pairs sorted by left index.
    pub pairs: Vec<(usize, usize)>,
    pub total: i128,
}

/// Maximum-weight matching (not necessarily perfect). Edges with
/// non-positive weight are never needed and may be left unmatched.
///
/// Every left vertex gets a private zero-cost "unmatched" column so the
/// problem becomes a rectangular assignment, solved row by row with
/// Dijkstra over reduced costs. `O(L^2 (L + R))`.
pub fn max_weight_matching(g: &WeightedBipartiteGraph) -> Matching {
    let rows = g.left;
    let cols = g.right + rows;
    if rows == 0 {
        return Matching::default();
    }
    let inf = i128::MAX / 4;
    let cost = |i: usize, j: usize| -> Option<i128> {
        if j < g.right {
            g.weight(i, j).map(|w| -w)
        } else if j - g.right == i {
            Some(0)
        } else {
            None
        }
    };
    // 1-based arrays; column 0 is the virtual source.
    let mut u = vec![0i128; rows + 1];
    let mut v = vec![0i128; cols + 1];
    let mut owner = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for i in 1..=rows {
        owner[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                if let Some(c) = cost(i0 - 1, j - 1) {
                    let cur = c - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            debug_assert!(j1 != 0, "the private column keeps every row feasible");
            for j in 0..=cols {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else if minv[j] < inf {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=g.right)
        .filter(|&j| owner[j] != 0)
        .map(|j| (owner[j] - 1, j - 1))
        .filter(|&(l, r)| g.weight(l, r).is_some_and(|w| w > 0))
        .collect();
    pairs.sort_unstable();
    let total = g.total(&pairs).expect("matched pairs are edges");
    Matching { pairs, total }
}

const FREE: u32 = u32::MAX;

/// Incremental matcher for groups of identical left vertices.
///
/// `owner[s]` is the group currently holding right vertex `s`; a group may
/// hold several. [`GroupMatcher::try_insert`] adds one more left vertex of
/// a group if some augmenting path reaches a free right vertex.
#[derive(Debug, Clone, Default)]
pub struct GroupMatcher {
    right: usize,
    words: usize,
    owner: Vec<u32>,
    held: Vec<u32>,
    visited_right: Vec<u64>,
    seen_group: Vec<u32>,
    stamp: u32,
    via: Vec<u32>,
    parent: Vec<u32>,
    queue: Vec<u32>,
    matched: usize,
}

impl GroupMatcher {
    pub fn new(groups: usize, right: usize) -> Self {
        let mut m = GroupMatcher::default();
        m.reset(groups, right);
        m
    }

    pub fn reset(&mut self, groups: usize, right: usize) {
        self.right = right;
        self.words = right.div_ceil(64);
        self.owner.clear();
        self.owner.resize(right, FREE);
        self.held.clear();
        self.held.resize(groups, 0);
        self.seen_group.clear();
        self.seen_group.resize(groups, 0);
        self.stamp = 0;
        self.via.clear();
        self.via.resize(groups, FREE);
        self.parent.clear();
        self.parent.resize(right, FREE);
        self.visited_right.clear();
        self.visited_right.resize(self.words, 0);
        self.matched = 0;
    }

    pub fn matched(&self) -> usize {
        self.matched
    }

    pub fn held(&self, group: usize) -> u32 {
        self.held[group]
    }

    /// Group holding right vertex `s`, if any.
    pub fn owner(&self, s: usize) -> Option<usize> {
        match self.owner[s] {
            FREE => None,
            g => Some(g as usize),
        }
    }

    /// Try to match one more left vertex of `group`. `adj(g)` returns the
    /// right-vertex bitset of group `g`. Counts scanned words into `ops`.
    pub fn try_insert<'a>(&mut self, group: usize, adj: impl Fn(usize) -> &'a [u64], ops: &mut u64) -> bool {
        if self.matched == self.right {
            return false;
        }
        self.stamp = self.stamp.wrapping_add(1);
        if self.stamp == 0 {
            self.seen_group.iter_mut().for_each(|s| *s = 0);
            self.stamp = 1;
        }
        self.visited_right.iter_mut().for_each(|w| *w = 0);
        self.queue.clear();
        self.queue.push(group as u32);
        self.seen_group[group] = self.stamp;
        self.via[group] = FREE;
        let mut head = 0;
        while head < self.queue.len() {
            let h = self.queue[head] as usize;
            head += 1;
            let row = adj(h);
            for (w, &word) in row.iter().enumerate().take(self.words) {
                *ops += 1;
                let mut bits = word & !self.visited_right[w];
                self.visited_right[w] |= bits;
                while bits != 0 {
                    let s = w * 64 + bits.trailing_zeros() as usize;
                    bits &= bits - 1;
                    self.parent[s] = h as u32;
                    match self.owner[s] {
                        FREE => {
                            self.augment(s);
                            self.held[group] += 1;
                            self.matched += 1;
                            return true;
                        }
                        g2 => {
                            let g2 = g2 as usize;
                            if self.seen_group[g2] != self.stamp {
                                self.seen_group[g2] = self.stamp;
                                self.via[g2] = s as u32;
                                self.queue.push(g2 as u32);
                            }
                        }
                    }
                }
            }
        }
        false
    }

    fn augment(&mut self, mut s: usize) {
        loop {
            let g = self.parent[s] as usize;
            let prev = self.via[g];
            self.owner[s] = g as u32;
            if prev == FREE {
                break;
            }
            s = prev as usize;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(x: i128) -> Option<i128> {
        Some(x)
    }

    #[test]
    fn empty_graph() {
        let m = max_weight_matching(&WeightedBipartiteGraph::new(0, 3));
        assert!(m.pairs.is_empty());
        let m = max_weight_matching(&WeightedBipartiteGraph::new(3, 0));
        assert!(m.pairs.is_empty());
    }

    #[test]
    fn complete_two_by_two() {
        let g = WeightedBipartiteGraph::from_rows(&[&[w(5), w(5)], &[w(3), w(3)]]);
        let m = max_weight_matching(&g);
        assert_eq!(m.total, 8);
        assert_eq!(m.pairs.len(), 2);
    }

    #[test]
    fn star_takes_heaviest() {
        let g = WeightedBipartiteGraph::from_rows(&[&[w(7)], &[w(5)], &[w(2)]]);
        let m = max_weight_matching(&g);
        assert_eq!(m.pairs, alloc::vec![(0, 0)]);
        assert_eq!(m.total, 7);
    }

    #[test]
    fn prefers_weight_over_cardinality() {
        // one heavy edge beats two light ones sharing its endpoints
        let g = WeightedBipartiteGraph::from_rows(&[&[w(10), w(1)], &[w(1), None]]);
        assert_eq!(max_weight_matching(&g).total, 10);
    }

    #[test]
    fn group_matcher_reroutes() {
        // group 0 reaches servers {0, 1}; group 1 reaches {0}
        let rows = [[0b11u64], [0b01u64]];
        let mut m = GroupMatcher::new(2, 2);
        let mut ops = 0;
        assert!(m.try_insert(0, |g| &rows[g][..], &mut ops));
        assert!(m.try_insert(1, |g| &rows[g][..], &mut ops));
        assert_eq!(m.owner(0), Some(1));
        assert_eq!(m.owner(1), Some(0));
        assert!(!m.try_insert(0, |g| &rows[g][..], &mut ops));
        assert_eq!(m.matched(), 2);
    }

    #[test]
    fn group_matcher_chain_augmentation() {
        // g0:{0}, g1:{0,1}, g2:{1,2}; insert g1, g2 first then g0
        let rows = [[0b001u64], [0b011u64], [0b110u64]];
        let mut m = GroupMatcher::new(3, 3);
        let mut ops = 0;
        assert!(m.try_insert(1, |g| &rows[g][..], &mut ops));
        assert!(m.try_insert(2, |g| &rows[g][..], &mut ops));
        assert!(m.try_insert(0, |g| &rows[g][..], &mut ops));
        assert_eq!((m.held(0), m.held(1), m.held(2)), (1, 1, 1));
        assert_eq!(m.owner(0), Some(0));
    }
}
