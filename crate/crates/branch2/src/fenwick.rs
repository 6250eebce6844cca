//! Binary-indexed prefix-sum tree over per-cell composite rates.
//! Supports O(log n) update, append and rate-proportional selection.
//! Float drift from incremental updates is washed out by periodic
//! rebuilds in the simulation loop.

#[derive(Debug, Clone)]
pub struct FenwickTree {
    tree: Vec<f64>,
    raw: Vec<f64>,
}

impl FenwickTree {
    pub fn from_rates(rates: &[f64]) -> Self {
        let mut t = Self {
            tree: Vec::with_capacity(rates.len()),
            raw: Vec::with_capacity(rates.len()),
        };
        for &r in rates {
            t.push(r);
        }
        t
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.raw[i]
    }

    /// Append a new leaf with value `v`.
    pub fn push(&mut self, v: f64) {
        self.raw.push(v);
        let j = self.raw.len(); // 1-based index of the new node
        let mut node = v;
        // fold in the sibling subtrees covered by node j
        let lo = j - (j & j.wrapping_neg());
        let mut k = j - 1;
        while k > lo {
            node += self.tree[k - 1];
            k -= k & k.wrapping_neg();
        }
        self.tree.push(node);
    }

    /// Set leaf `i` to `v`.
    pub fn set(&mut self, i: usize, v: f64) {
        let delta = v - self.raw[i];
        self.raw[i] = v;
        let mut j = i + 1;
        while j <= self.tree.len() {
            self.tree[j - 1] += delta;
            j += j & j.wrapping_neg();
        }
    }

    pub fn total(&self) -> f64 {
        let mut j = self.raw.len();
        let mut s = 0.0;
        while j > 0 {
            s += self.tree[j - 1];
            j -= j & j.wrapping_neg();
        }
        s
    }

    /// Smallest index i whose prefix sum exceeds `target`. `target` must
    /// lie in [0, total); with float drift the last leaf is the fallback.
    pub fn select(&self, mut target: f64) -> usize {
        let n = self.raw.len();
        debug_assert!(n > 0);
        let mut pos = 0usize; // 1-based prefix position
        let mut step = n.next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next - 1] <= target {
                target -= self.tree[next - 1];
                pos = next;
            }
            step >>= 1;
        }
        pos.min(n - 1)
    }

    /// Recompute all internal nodes from the raw rates.
    pub fn rebuild(&mut self) {
        let raw = std::mem::take(&mut self.raw);
        self.tree.clear();
        for &r in &raw {
            self.raw.push(r);
            let j = self.raw.len();
            let mut node = r;
            let lo = j - (j & j.wrapping_neg());
            let mut k = j - 1;
            while k > lo {
                node += self.tree[k - 1];
                k -= k & k.wrapping_neg();
            }
            self.tree.push(node);
        }
    }
}
