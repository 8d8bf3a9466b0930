//! Primal network simplex for the transportation problem with general weights.
//!
//! Supplies sit on row nodes, demands on column nodes, and an extra root node
//! carries one artificial arc per node at a prohibitive cost. The spanning
//! tree starts as the star of artificial arcs and pivots on transport arcs
//! chosen by block search. Leaving arcs follow the strongly-feasible rule
//! (first minimum on the source side, last minimum on the target side), which
//! rules out cycling on degenerate pivots.

use ndarray::ArrayView2;

use crate::error::{invalid, Result};

const NONE: usize = usize::MAX;

pub struct SimplexSolution {
    /// Nonzero plan entries `(row, column, mass)`.
    pub flows: Vec<(usize, usize, f64)>,
    pub iterations: usize,
}

struct Tree {
    parent: Vec<usize>,
    pred_arc: Vec<usize>,
    /// `true` if the arc to the parent points child -> parent.
    pred_up: Vec<bool>,
    depth: Vec<usize>,
    children: Vec<Vec<usize>>,
    pot: Vec<f64>,
}

impl Tree {
    fn unlink(&mut self, parent: usize, child: usize) {
        let kids = &mut self.children[parent];
        let pos = kids.iter().position(|&c| c == child).expect("tree link");
        kids.swap_remove(pos);
    }
}

/// Solves `min <C, P>` subject to `P 1 = a`, `P^T 1 = b`, `P >= 0`.
///
/// `a` and `b` must be nonnegative with equal totals; rows or columns of zero
/// weight are dropped before the solve.
pub fn network_simplex(cost: ArrayView2<'_, f64>, a: &[f64], b: &[f64]) -> Result<SimplexSolution> {
    let rows: Vec<usize> = (0..a.len()).filter(|&i| a[i] > 0.0).collect();
    let cols: Vec<usize> = (0..b.len()).filter(|&j| b[j] > 0.0).collect();
    if rows.is_empty() || cols.is_empty() {
        return invalid("transport problem with an empty marginal");
    }
    let m = rows.len();
    let n = cols.len();
    let supply: Vec<f64> = rows.iter().map(|&i| a[i]).collect();
    let mut demand: Vec<f64> = cols.iter().map(|&j| b[j]).collect();
    // Balance exactly so the artificial arcs can drain to zero.
    let (sa, sb): (f64, f64) = (supply.iter().sum(), demand.iter().sum());
    for d in &mut demand {
        *d *= sa / sb;
    }

    let c = |i: usize, j: usize| cost[[rows[i], cols[j]]];
    let mut cmax = 0.0f64;
    for i in 0..m {
        for j in 0..n {
            let v = c(i, j);
            if !v.is_finite() {
                return invalid("non-finite transport cost");
            }
            cmax = cmax.max(v.abs());
        }
    }
    let big = (cmax + 1.0) * (m + n) as f64;
    let tol = 1e-12 * (cmax + 1.0) * ((m + n) as f64).sqrt();

    let n_transport = m * n;
    let root = m + n;
    let n_nodes = m + n + 1;
    let n_arcs = n_transport + m + n;
    let source = |e: usize| -> usize {
        if e < n_transport {
            e / n
        } else if e < n_transport + m {
            e - n_transport
        } else {
            root
        }
    };
    let target = |e: usize| -> usize {
        if e < n_transport {
            m + e % n
        } else if e < n_transport + m {
            root
        } else {
            m + (e - n_transport - m)
        }
    };
    let arc_cost = |e: usize| -> f64 {
        if e < n_transport {
            c(e / n, e % n)
        } else {
            big
        }
    };

    let mut flow = vec![0.0f64; n_arcs];
    let mut tree = Tree {
        parent: vec![NONE; n_nodes],
        pred_arc: vec![NONE; n_nodes],
        pred_up: vec![false; n_nodes],
        depth: vec![1; n_nodes],
        children: vec![Vec::new(); n_nodes],
        pot: vec![0.0; n_nodes],
    };
    tree.depth[root] = 0;
    // Potentials satisfy c_e + pot[s] - pot[t] = 0 on tree arcs.
    for i in 0..m {
        let e = n_transport + i;
        flow[e] = supply[i];
        tree.parent[i] = root;
        tree.pred_arc[i] = e;
        tree.pred_up[i] = true;
        tree.pot[i] = -big;
        tree.children[root].push(i);
    }
    for j in 0..n {
        let e = n_transport + m + j;
        flow[e] = demand[j];
        tree.parent[m + j] = root;
        tree.pred_arc[m + j] = e;
        tree.pred_up[m + j] = false;
        tree.pot[m + j] = big;
        tree.children[root].push(m + j);
    }

    let block = ((n_transport as f64).sqrt().ceil() as usize).max(10).min(n_transport);
    let mut next = 0usize;
    let mut iterations = 0usize;
    let max_iter = 1000 * (n_transport + 10);
    let mut path_v: Vec<usize> = Vec::new();
    let mut path_u: Vec<usize> = Vec::new();
    let mut stack: Vec<usize> = Vec::new();

    loop {
        // Block search for the most negative reduced cost.
        let mut best = NONE;
        let mut best_rc = -tol;
        let mut scanned = 0usize;
        let mut in_block = 0usize;
        while scanned < n_transport {
            let e = next;
            next += 1;
            if next == n_transport {
                next = 0;
            }
            scanned += 1;
            in_block += 1;
            let rc = arc_cost(e) + tree.pot[source(e)] - tree.pot[target(e)];
            if rc < best_rc {
                best_rc = rc;
                best = e;
            }
            if in_block >= block {
                if best != NONE {
                    break;
                }
                in_block = 0;
            }
        }
        if best == NONE {
            break;
        }
        iterations += 1;
        if iterations > max_iter {
            return invalid("network simplex exceeded its pivot budget");
        }

        let e_in = best;
        let (u, v) = (source(e_in), target(e_in));

        // Paths from both endpoints up to the join node.
        path_u.clear();
        path_v.clear();
        let (mut x, mut y) = (u, v);
        while tree.depth[x] > tree.depth[y] {
            path_u.push(x);
            x = tree.parent[x];
        }
        while tree.depth[y] > tree.depth[x] {
            path_v.push(y);
            y = tree.parent[y];
        }
        while x != y {
            path_u.push(x);
            x = tree.parent[x];
            path_v.push(y);
            y = tree.parent[y];
        }

        // Pushing flow along u -> v travels down the u side and up the v side.
        let mut delta = f64::INFINITY;
        let mut leave = NONE;
        let mut leave_on_u = false;
        for &w in &path_u {
            if tree.pred_up[w] {
                let d = flow[tree.pred_arc[w]];
                if d < delta {
                    delta = d;
                    leave = w;
                    leave_on_u = true;
                }
            }
        }
        for &w in &path_v {
            if !tree.pred_up[w] {
                let d = flow[tree.pred_arc[w]];
                if d <= delta {
                    delta = d;
                    leave = w;
                    leave_on_u = false;
                }
            }
        }
        if leave == NONE {
            return invalid("unbounded transport problem");
        }

        if delta > 0.0 {
            flow[e_in] += delta;
            for &w in &path_u {
                let e = tree.pred_arc[w];
                if tree.pred_up[w] {
                    flow[e] -= delta;
                } else {
                    flow[e] += delta;
                }
            }
            for &w in &path_v {
                let e = tree.pred_arc[w];
                if tree.pred_up[w] {
                    flow[e] += delta;
                } else {
                    flow[e] -= delta;
                }
            }
        }
        flow[tree.pred_arc[leave]] = 0.0;

        // Detach the subtree under `leave` and rehang it from the entering arc.
        let (u_in, v_in) = if leave_on_u { (u, v) } else { (v, u) };
        let mut chain = vec![u_in];
        while *chain.last().unwrap() != leave {
            let w = *chain.last().unwrap();
            chain.push(tree.parent[w]);
        }
        let old_parent = tree.parent[leave];
        tree.unlink(old_parent, leave);
        for l in (1..chain.len()).rev() {
            let (w, below) = (chain[l], chain[l - 1]);
            tree.unlink(w, below);
            tree.parent[w] = below;
            tree.pred_arc[w] = tree.pred_arc[below];
            tree.pred_up[w] = !tree.pred_up[below];
            tree.children[below].push(w);
        }
        tree.parent[u_in] = v_in;
        tree.pred_arc[u_in] = e_in;
        tree.pred_up[u_in] = leave_on_u;
        tree.children[v_in].push(u_in);

        let shift = if leave_on_u { -best_rc } else { best_rc };
        stack.clear();
        stack.push(u_in);
        while let Some(w) = stack.pop() {
            tree.depth[w] = tree.depth[tree.parent[w]] + 1;
            tree.pot[w] += shift;
            stack.extend_from_slice(&tree.children[w]);
        }
    }

    let residual: f64 = flow[n_transport..].iter().sum();
    if residual > 1e-9 * sa.max(1.0) {
        return invalid(format!("transport problem infeasible (residual {residual:e})"));
    }
    let mut flows = Vec::new();
    for e in 0..n_transport {
        if flow[e] > 0.0 {
            flows.push((rows[e / n], cols[e % n], flow[e]));
        }
    }
    Ok(SimplexSolution { flows, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};

    fn objective(c: &Array2<f64>, s: &SimplexSolution) -> f64 {
        s.flows.iter().map(|&(i, j, f)| f * c[[i, j]]).sum()
    }

    fn marginals(s: &SimplexSolution, m: usize, n: usize) -> (Vec<f64>, Vec<f64>) {
        let mut r = vec![0.0; m];
        let mut c = vec![0.0; n];
        for &(i, j, f) in &s.flows {
            r[i] += f;
            c[j] += f;
        }
        (r, c)
    }

    #[test]
    fn small_weighted_instance() {
        // Optimum 10.4 obtained from an independent dense LP solve.
        let c = array![[4.0, 8.0, 8.0], [16.0, 24.0, 16.0], [8.0, 16.0, 24.0]];
        let a = [0.3, 0.3, 0.4];
        let b = [0.4, 0.3, 0.3];
        let s = network_simplex(c.view(), &a, &b).unwrap();
        let (r, col) = marginals(&s, 3, 3);
        for i in 0..3 {
            assert!((r[i] - a[i]).abs() < 1e-12);
            assert!((col[i] - b[i]).abs() < 1e-12);
        }
        assert!((objective(&c, &s) - 10.4).abs() < 1e-9, "{}", objective(&c, &s));
    }

    #[test]
    fn zero_weights_are_skipped() {
        let c = array![[1.0, 0.0], [0.0, 1.0]];
        let s = network_simplex(c.view(), &[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(s.flows, vec![(0, 1, 1.0)]);
    }

    #[test]
    fn degenerate_uniform_instances_terminate() {
        // Uniform square problems are maximally degenerate.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for n in [1usize, 2, 5, 17, 40] {
            let c = Array2::from_shape_fn((n, n), |_| rng.random_range(0..3) as f64);
            let w = vec![1.0 / n as f64; n];
            let s = network_simplex(c.view(), &w, &w).unwrap();
            let sol = crate::ot::assignment::solve_assignment(&c.view());
            let lap: f64 = sol.iter().enumerate().map(|(i, &j)| c[[i, j]]).sum::<f64>() / n as f64;
            assert!((objective(&c, &s) - lap).abs() < 1e-12);
        }
    }
}
