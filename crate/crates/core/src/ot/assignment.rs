//! Dense linear assignment by shortest augmenting paths (Jonker–Volgenant).
//!
//! Column reduction, reduction transfer and two rounds of augmenting row
//! reduction build a partial assignment with feasible column prices; each
//! remaining free row is then matched by a Dijkstra search over reduced costs.

/// Row-by-column cost oracle for a square problem.
pub trait SquareCost {
    fn size(&self) -> usize;
    fn cost(&self, i: usize, j: usize) -> f64;
}

impl SquareCost for ndarray::ArrayView2<'_, f64> {
    fn size(&self) -> usize {
        self.nrows()
    }

    #[inline]
    fn cost(&self, i: usize, j: usize) -> f64 {
        self[[i, j]]
    }
}

/// Cost evaluated on demand from a closure; avoids materializing `n²` entries.
pub struct LazyCost<F> {
    pub n: usize,
    pub f: F,
}

impl<F: Fn(usize, usize) -> f64> SquareCost for LazyCost<F> {
    fn size(&self) -> usize {
        self.n
    }

    #[inline]
    fn cost(&self, i: usize, j: usize) -> f64 {
        (self.f)(i, j)
    }
}

const NONE: usize = usize::MAX;

/// Minimum-cost perfect matching; returns `row -> column`.
pub fn solve_assignment<C: SquareCost>(c: &C) -> Vec<usize> {
    let n = c.size();
    if n == 0 {
        return Vec::new();
    }
    let mut rowsol = vec![NONE; n];
    let mut colsol = vec![NONE; n];
    let mut v = vec![0.0f64; n];
    let mut matches = vec![0u32; n];

    // Column reduction, scanning columns in reverse.
    for j in (0..n).rev() {
        let (mut min, mut imin) = (c.cost(0, j), 0);
        for i in 1..n {
            let h = c.cost(i, j);
            if h < min {
                min = h;
                imin = i;
            }
        }
        v[j] = min;
        matches[imin] += 1;
        if matches[imin] == 1 {
            rowsol[imin] = j;
            colsol[j] = imin;
        } else {
            colsol[j] = NONE;
        }
    }

    // Reduction transfer from rows assigned exactly once.
    let mut free: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        match matches[i] {
            0 => free.push(i),
            1 => {
                let j1 = rowsol[i];
                let mut min = f64::INFINITY;
                for j in 0..n {
                    if j != j1 {
                        min = min.min(c.cost(i, j) - v[j]);
                    }
                }
                if min.is_finite() {
                    v[j1] -= min;
                }
            }
            _ => {}
        }
    }

    // Augmenting row reduction, twice. The step budget guards against the
    // float tie cycles this phase is known for; leftovers go to Dijkstra.
    let mut budget = 50 * n + 100;
    for _ in 0..2 {
        let prev = std::mem::take(&mut free);
        let mut stack = prev;
        stack.reverse();
        while let Some(i) = stack.pop() {
            if budget == 0 {
                free.push(i);
                continue;
            }
            budget -= 1;
            let mut umin = c.cost(i, 0) - v[0];
            let mut j1 = 0;
            let mut usubmin = f64::INFINITY;
            let mut j2 = NONE;
            for j in 1..n {
                let h = c.cost(i, j) - v[j];
                if h < usubmin {
                    if h >= umin {
                        usubmin = h;
                        j2 = j;
                    } else {
                        usubmin = umin;
                        umin = h;
                        j2 = j1;
                        j1 = j;
                    }
                }
            }
            let mut i0 = colsol[j1];
            let strict = umin < usubmin;
            if strict {
                v[j1] -= usubmin - umin;
            } else if i0 != NONE && j2 != NONE {
                j1 = j2;
                i0 = colsol[j2];
            }
            if i0 != NONE {
                rowsol[i0] = NONE;
            }
            rowsol[i] = j1;
            colsol[j1] = i;
            if i0 != NONE {
                if strict {
                    stack.push(i0);
                } else {
                    free.push(i0);
                }
            }
        }
    }

    // Shortest augmenting path for each remaining free row.
    let mut d = vec![0.0f64; n];
    let mut pred = vec![0usize; n];
    let mut collist: Vec<usize> = (0..n).collect();
    for &freerow in &free {
        for j in 0..n {
            d[j] = c.cost(freerow, j) - v[j];
            pred[j] = freerow;
            collist[j] = j;
        }
        let (mut low, mut up) = (0usize, 0usize);
        let mut last = 0usize;
        let mut min = 0.0f64;
        let mut endofpath = NONE;
        loop {
            if up == low {
                last = low;
                min = d[collist[up]];
                up += 1;
                // `up` grows while scanning; the range keeps its start value.
                #[allow(clippy::mut_range_bound)]
                for k in up..n {
                    let j = collist[k];
                    let h = d[j];
                    if h <= min {
                        if h < min {
                            up = low;
                            min = h;
                        }
                        collist[k] = collist[up];
                        collist[up] = j;
                        up += 1;
                    }
                }
                for &j in &collist[low..up] {
                    if colsol[j] == NONE {
                        endofpath = j;
                        break;
                    }
                }
                if endofpath != NONE {
                    break;
                }
            }
            let j1 = collist[low];
            low += 1;
            let i = colsol[j1];
            let h = c.cost(i, j1) - v[j1] - min;
            let mut k = up;
            while k < n {
                let j = collist[k];
                let v2 = c.cost(i, j) - v[j] - h;
                if v2 < d[j] {
                    pred[j] = i;
                    d[j] = v2;
                    if v2 == min {
                        if colsol[j] == NONE {
                            endofpath = j;
                            break;
                        }
                        collist[k] = collist[up];
                        collist[up] = j;
                        up += 1;
                    }
                }
                k += 1;
            }
            if endofpath != NONE {
                break;
            }
        }
        // Columns scanned before the final minimum get their prices raised.
        for &j1 in &collist[..last] {
            v[j1] += d[j1] - min;
        }
        loop {
            let i = pred[endofpath];
            colsol[endofpath] = i;
            std::mem::swap(&mut endofpath, &mut rowsol[i]);
            if i == freerow {
                break;
            }
        }
    }
    rowsol
}
