//! Exact discrete optimal transport by the primal network simplex method on
//! the transportation graph (sources -> sinks, uncapacitated).
//!
//! Costs are never stored: arc `(i, j)` is evaluated on demand, so a
//! 2000 x 2000 instance needs memory linear in the number of nodes. The
//! spanning tree starts from big-M artificial arcs through a root node (or
//! from the identity pairing when both sides carry the same weights) and is
//! kept strongly feasible with Cunningham's leaving-arc rule, which rules
//! out cycling on the heavily degenerate assignment-like instances produced
//! by equal-weight particle ensembles.

use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
struct TreeArc {
    /// `true` when the arc is oriented node -> parent.
    up: bool,
    cost: f64,
    flow: f64,
    artificial: bool,
}

struct Tree {
    parent: Vec<usize>,
    arc: Vec<TreeArc>,
    depth: Vec<usize>,
    pi: Vec<f64>,
    children: Vec<Vec<usize>>,
}

impl Tree {
    fn remove_child(&mut self, p: usize, c: usize) {
        let kids = &mut self.children[p];
        let pos = kids
            .iter()
            .position(|&x| x == c)
            .expect("tree child list out of sync");
        kids.swap_remove(pos);
    }

    /// Recompute depth and potentials below (and including) `q`.
    fn refresh_subtree(&mut self, q: usize, stack: &mut Vec<usize>) {
        stack.clear();
        stack.push(q);
        while let Some(w) = stack.pop() {
            let p = self.parent[w];
            let a = self.arc[w];
            self.depth[w] = self.depth[p] + 1;
            // reduced cost c + pi_tail - pi_head = 0 on tree arcs
            self.pi[w] = if a.up {
                self.pi[p] - a.cost
            } else {
                self.pi[p] + a.cost
            };
            stack.extend_from_slice(&self.children[w]);
        }
    }
}

/// Minimum of `sum f_ij c(i, j)` over couplings of `supply` and `demand`.
///
/// Both weight vectors must be nonnegative with equal totals (up to rounding);
/// entries equal to zero are allowed.
pub fn transport_cost<C>(supply: &[f64], demand: &[f64], cost: C) -> Result<f64>
where
    C: Fn(usize, usize) -> f64,
{
    // drop empty nodes; they never carry flow
    let src: Vec<usize> = (0..supply.len()).filter(|&i| supply[i] > 0.0).collect();
    let dst: Vec<usize> = (0..demand.len()).filter(|&j| demand[j] > 0.0).collect();
    if src.is_empty() || dst.is_empty() {
        return Err(Error::invalid("transport between empty measures"));
    }
    let a: Vec<f64> = src.iter().map(|&i| supply[i]).collect();
    let mut b: Vec<f64> = dst.iter().map(|&j| demand[j]).collect();
    let (total_a, total_b) = (a.iter().sum::<f64>(), b.iter().sum::<f64>());
    if (total_a - total_b).abs() > 1e-9 * total_a.max(total_b) {
        return Err(Error::invalid(format!(
            "unbalanced transport problem ({total_a} vs {total_b})"
        )));
    }
    // absorb rounding so the problem is exactly balanced
    let last = b.len() - 1;
    b[last] += total_a - total_b;
    if b[last] < 0.0 {
        b[last] = 0.0;
    }
    let c = |i: usize, j: usize| cost(src[i], dst[j]);
    let (n, m) = (a.len(), b.len());

    let mut cmax: f64 = 0.0;
    for i in 0..n {
        for j in 0..m {
            let cij = c(i, j);
            if !cij.is_finite() || cij < 0.0 {
                return Err(Error::invalid(format!("invalid transport cost {cij}")));
            }
            cmax = cmax.max(cij);
        }
    }
    let big_m = (n + m) as f64 * cmax.max(1.0) + 1.0;

    let root = n + m;
    let nodes = n + m + 1;
    let mut tree = Tree {
        parent: vec![root; nodes],
        arc: vec![
            TreeArc {
                up: false,
                cost: 0.0,
                flow: 0.0,
                artificial: true
            };
            nodes
        ],
        depth: vec![1; nodes],
        pi: vec![0.0; nodes],
        children: vec![Vec::new(); nodes],
    };
    tree.depth[root] = 0;
    if a == b {
        // Start from the identity pairing hung below zero-flow artificial
        // arcs to the sinks; zero-flow arcs point away from the root, so the
        // tree is strongly feasible.
        tree.children[root] = (n..n + m).collect();
        for j in 0..m {
            tree.arc[n + j] = TreeArc {
                up: false,
                cost: big_m,
                flow: 0.0,
                artificial: true,
            };
            tree.pi[n + j] = big_m;
        }
        for i in 0..n {
            let cost = c(i, i);
            tree.parent[i] = n + i;
            tree.children[n + i].push(i);
            tree.depth[i] = 2;
            tree.arc[i] = TreeArc {
                up: true,
                cost,
                flow: a[i],
                artificial: false,
            };
            tree.pi[i] = big_m - cost;
        }
    } else {
        tree.children[root] = (0..n + m).collect();
        for i in 0..n {
            tree.arc[i] = TreeArc {
                up: true,
                cost: big_m,
                flow: a[i],
                artificial: true,
            };
            tree.pi[i] = -big_m;
        }
        for j in 0..m {
            tree.arc[n + j] = TreeArc {
                up: false,
                cost: big_m,
                flow: b[j],
                artificial: true,
            };
            tree.pi[n + j] = big_m;
        }
    }

    let arcs = n * m;
    let block = ((arcs as f64).sqrt().ceil() as usize).max(10).min(arcs);
    let tol = 1e-13 * big_m;
    let mut cursor = 0usize;
    let mut stack = Vec::new();
    let max_pivots = 50 * arcs + 10_000;

    for _ in 0..max_pivots {
        // block-search pricing
        let mut best = (-tol, usize::MAX);
        let mut scanned = 0;
        let mut in_block = 0;
        while scanned < arcs {
            let e = cursor;
            cursor += 1;
            if cursor == arcs {
                cursor = 0;
            }
            scanned += 1;
            in_block += 1;
            let (i, j) = (e / m, e % m);
            let rc = c(i, j) + tree.pi[i] - tree.pi[n + j];
            if rc < best.0 {
                best = (rc, e);
            }
            if in_block == block {
                if best.1 != usize::MAX {
                    break;
                }
                in_block = 0;
            }
        }
        if best.1 == usize::MAX {
            return finish(&tree, n + m);
        }
        let (k, l) = (best.1 / m, n + best.1 % m);
        let enter_cost = c(k, l - n);
        pivot(&mut tree, k, l, enter_cost, &mut stack)?;
    }
    Err(Error::Numerical {
        msg: "network simplex exceeded its pivot budget".into(),
        best: f64::NAN,
    })
}

fn finish(tree: &Tree, nodes: usize) -> Result<f64> {
    let mut total = 0.0;
    let mut artificial = 0.0;
    for w in 0..nodes {
        let a = tree.arc[w];
        if a.artificial {
            artificial += a.flow;
        } else {
            total += a.flow * a.cost;
        }
    }
    if artificial > 1e-9 {
        return Err(Error::Numerical {
            msg: format!("transport problem infeasible (artificial flow {artificial})"),
            best: total,
        });
    }
    Ok(total)
}

/// Is the tree arc above `w` backward for a cycle that crosses it upwards
/// (`upward == true`, the `l` side) or downwards (the `k` side)?
#[inline]
fn is_backward(a: &TreeArc, upward: bool) -> bool {
    a.up != upward
}

fn pivot(tree: &mut Tree, k: usize, l: usize, enter_cost: f64, stack: &mut Vec<usize>) -> Result<()> {
    // apex of the cycle k -> l -> ... -> apex -> ... -> k
    let (mut u, mut w) = (k, l);
    while u != w {
        if tree.depth[u] >= tree.depth[w] {
            u = tree.parent[u];
        } else {
            w = tree.parent[w];
        }
    }
    let apex = u;

    // Cunningham: the last blocking arc in cycle order starting at the apex.
    // The k side is traversed downwards (apex -> k), so walking up from k the
    // first minimum wins; the l side comes later and wins ties.
    let mut delta = f64::INFINITY;
    let mut leave: Option<(usize, bool)> = None; // (node below the arc, on l side)
    let mut w = k;
    while w != apex {
        let a = &tree.arc[w];
        if is_backward(a, false) && a.flow < delta {
            delta = a.flow;
            leave = Some((w, false));
        }
        w = tree.parent[w];
    }
    let mut w = l;
    while w != apex {
        let a = &tree.arc[w];
        if is_backward(a, true) && a.flow <= delta {
            delta = a.flow;
            leave = Some((w, true));
        }
        w = tree.parent[w];
    }
    let (p, on_l_side) = leave.ok_or_else(|| Error::Numerical {
        msg: "unbounded transport cycle".into(),
        best: f64::NAN,
    })?;

    // push delta around the cycle
    if delta > 0.0 {
        for (start, upward) in [(k, false), (l, true)] {
            let mut w = start;
            while w != apex {
                let a = &mut tree.arc[w];
                if is_backward(a, upward) {
                    a.flow -= delta;
                } else {
                    a.flow += delta;
                }
                w = tree.parent[w];
            }
        }
    }

    // re-hang the detached subtree from the entering arc
    let (q, new_parent, q_up) = if on_l_side { (l, k, false) } else { (k, l, true) };
    let old_parent_of_p = tree.parent[p];
    tree.remove_child(old_parent_of_p, p);

    let mut prev = new_parent;
    let mut prev_arc = TreeArc {
        up: q_up,
        cost: enter_cost,
        flow: delta,
        artificial: false,
    };
    let mut w = q;
    loop {
        let next = tree.parent[w];
        let old_arc = tree.arc[w];
        if w != p {
            tree.remove_child(next, w);
        }
        tree.parent[w] = prev;
        tree.arc[w] = prev_arc;
        tree.children[prev].push(w);
        if w == p {
            break;
        }
        prev_arc = TreeArc {
            up: !old_arc.up,
            ..old_arc
        };
        prev = w;
        w = next;
    }
    tree.refresh_subtree(q, stack);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_lp() {
        // mass 1/2,1/2 at {0,1} vs 1/4,3/4 at {0,1}
        let xs = [0.0f64, 1.0];
        let c = transport_cost(&[0.5, 0.5], &[0.25, 0.75], |i, j| (xs[i] - xs[j]).abs()).unwrap();
        assert!((c - 0.25).abs() < 1e-14);
    }

    #[test]
    fn assignment_picks_the_cheaper_permutation() {
        let cost = [[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]];
        let w = [1.0 / 3.0; 3];
        let c = transport_cost(&w, &w, |i, j| cost[i][j]).unwrap();
        // optimum 1 + 2 + 2 = 5 (rows 0->1, 1->0, 2->2)
        assert!((c - 5.0 / 3.0).abs() < 1e-13);
    }

    #[test]
    fn zero_weights_are_ignored() {
        let c = transport_cost(&[0.0, 1.0], &[1.0, 0.0], |i, j| (i + 2 * j) as f64).unwrap();
        assert!((c - 1.0).abs() < 1e-15);
    }

    #[test]
    fn unbalanced_is_rejected() {
        assert!(transport_cost(&[1.0], &[0.5], |_, _| 0.0).is_err());
    }
}
