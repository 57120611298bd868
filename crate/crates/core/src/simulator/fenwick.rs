//! Growable Fenwick tree over nonnegative weights.

#[derive(Debug, Clone, Default)]
pub struct Fenwick {
    // 1-based; tree[0] unused
    tree: Vec<f64>,
    values: Vec<f64>,
}

#[inline]
fn lsb(i: usize) -> usize {
    i & i.wrapping_neg()
}

impl Fenwick {
    pub fn new() -> Self {
        Self { tree: vec![0.0], values: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Sum of the first `i` entries.
    pub fn prefix(&self, mut i: usize) -> f64 {
        let mut s = 0.0;
        while i > 0 {
            s += self.tree[i];
            i -= lsb(i);
        }
        s
    }

    pub fn total(&self) -> f64 {
        self.prefix(self.len())
    }

    pub fn push(&mut self, v: f64) {
        let i = self.len() + 1;
        let node = v + self.prefix(i - 1) - self.prefix(i - lsb(i));
        self.tree.push(node);
        self.values.push(v);
    }

    pub fn add(&mut self, i: usize, dv: f64) {
        self.values[i] += dv;
        let mut k = i + 1;
        while k < self.tree.len() {
            self.tree[k] += dv;
            k += lsb(k);
        }
    }

    /// Index `i` with `prefix(i) <= x < prefix(i+1)`. Entries of zero weight
    /// are never returned. `None` only if every weight is zero.
    pub fn find(&self, mut x: f64) -> Option<usize> {
        let n = self.len();
        if n == 0 {
            return None;
        }
        let mut pos = 0;
        let mut step = 1usize << (usize::BITS - 1 - n.leading_zeros());
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= x {
                pos = next;
                x -= self.tree[next];
            }
            step >>= 1;
        }
        if pos < n && self.values[pos] > 0.0 {
            return Some(pos);
        }
        // rounding pushed x past the total: fall back to the last positive entry
        self.values.iter().rposition(|&v| v > 0.0)
    }
}
