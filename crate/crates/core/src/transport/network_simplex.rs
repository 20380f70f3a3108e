//! Primal network simplex for the dense bipartite transportation problem.
//!
//! The spanning-tree basis is rooted at an artificial node joined to every
//! real node by an artificial arc (big-M start). Entering arcs are chosen by
//! block search over a cyclic scan of the real arcs, keeping the first arc
//! with the most negative reduced cost in a block; the leaving arc follows
//! the strongly-feasible-tree rule, which rules out cycling under
//! degeneracy. After every pivot the tree order, potentials and flows are
//! recomputed from the basis, so no rounding drift accumulates.

use std::collections::VecDeque;

use super::CostMatrix;
use crate::error::{Error, Result};

const LOWER: u8 = 1;
const TREE: u8 = 0;

pub(crate) struct SimplexOutput {
    /// Dense flows, row-major.
    pub flow: Vec<f64>,
    /// Node potentials `π` for the `m + n` real nodes.
    pub pi: Vec<f64>,
    pub pivots: usize,
}

pub(crate) fn solve(cost: &CostMatrix, a: &[f64], b: &[f64]) -> Result<SimplexOutput> {
    let mut s = Simplex::new(cost, a, b);
    s.run()?;
    Ok(s.output())
}

struct Simplex<'a> {
    m: usize,
    n: usize,
    cost: &'a CostMatrix,
    root: usize,
    art_cost: f64,
    eps: f64,
    supply: Vec<f64>,
    /// whether the artificial arc of node u runs u → root
    art_up: Vec<bool>,
    state: Vec<u8>,
    adj: Vec<Vec<usize>>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    pred_up: Vec<bool>,
    depth: Vec<usize>,
    pi: Vec<f64>,
    /// flow on the arc `pred[u]`
    flow: Vec<f64>,
    order: Vec<usize>,
    next_arc: usize,
    block: usize,
    pivots: usize,
}

impl<'a> Simplex<'a> {
    fn new(cost: &'a CostMatrix, a: &[f64], b: &[f64]) -> Self {
        let (m, n) = (a.len(), b.len());
        let nodes = m + n;
        let root = nodes;
        let max_c = cost.data().iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let art_cost = (max_c + 1.0) * nodes as f64;
        let mut supply: Vec<f64> = a.iter().copied().chain(b.iter().map(|v| -v)).collect();
        let total: f64 = supply.iter().sum();
        supply.push(-total);
        let art_up: Vec<bool> = supply[..nodes].iter().map(|&s| s > 0.0).collect();
        let arcs = m * n;
        let mut adj = vec![Vec::new(); nodes + 1];
        for u in 0..nodes {
            let arc = arcs + u;
            adj[u].push(arc);
            adj[root].push(arc);
        }
        let mut s = Simplex {
            m,
            n,
            cost,
            root,
            art_cost,
            eps: 1e-12 * (1.0 + max_c),
            supply,
            art_up,
            state: vec![LOWER; arcs],
            adj,
            parent: vec![usize::MAX; nodes + 1],
            pred: vec![usize::MAX; nodes + 1],
            pred_up: vec![false; nodes + 1],
            depth: vec![0; nodes + 1],
            pi: vec![0.0; nodes + 1],
            flow: vec![0.0; nodes + 1],
            order: Vec::with_capacity(nodes + 1),
            next_arc: 0,
            block: ((arcs as f64).sqrt().ceil() as usize).max(10).min(arcs.max(1)),
            pivots: 0,
        };
        s.rebuild();
        s
    }

    fn ends(&self, arc: usize) -> (usize, usize) {
        let real = self.m * self.n;
        if arc < real {
            (arc / self.n, self.m + arc % self.n)
        } else {
            let u = arc - real;
            if self.art_up[u] {
                (u, self.root)
            } else {
                (self.root, u)
            }
        }
    }

    fn arc_cost(&self, arc: usize) -> f64 {
        let real = self.m * self.n;
        if arc < real {
            self.cost.data()[arc]
        } else if self.art_up[arc - real] {
            0.0
        } else {
            self.art_cost
        }
    }

    /// Recompute parent pointers, depths, potentials and flows from the
    /// current set of tree arcs.
    fn rebuild(&mut self) {
        let root = self.root;
        self.order.clear();
        self.parent[root] = usize::MAX;
        self.depth[root] = 0;
        self.pi[root] = 0.0;
        let mut queue = VecDeque::with_capacity(root + 1);
        queue.push_back(root);
        while let Some(u) = queue.pop_front() {
            self.order.push(u);
            for k in 0..self.adj[u].len() {
                let arc = self.adj[u][k];
                if arc == self.pred[u] && u != root {
                    continue;
                }
                let (src, tgt) = self.ends(arc);
                let v = if src == u { tgt } else { src };
                let c = self.arc_cost(arc);
                self.parent[v] = u;
                self.pred[v] = arc;
                self.pred_up[v] = src == v;
                self.depth[v] = self.depth[u] + 1;
                self.pi[v] = if src == v { self.pi[u] - c } else { self.pi[u] + c };
                queue.push_back(v);
            }
        }
        debug_assert_eq!(self.order.len(), root + 1);
        let mut sub = self.supply.clone();
        for &u in self.order.iter().rev() {
            if u == root {
                continue;
            }
            let f = sub[u];
            self.flow[u] = if self.pred_up[u] { f } else { -f };
            sub[self.parent[u]] += f;
        }
    }

    fn reduced_cost(&self, arc: usize) -> f64 {
        let (i, j) = (arc / self.n, self.m + arc % self.n);
        self.cost.data()[arc] + self.pi[i] - self.pi[j]
    }

    fn find_entering(&mut self) -> Option<usize> {
        let arcs = self.m * self.n;
        let mut best = None;
        let mut min = -self.eps;
        let mut count = self.block;
        for k in 0..arcs {
            let e = (self.next_arc + k) % arcs;
            if self.state[e] == LOWER {
                let rc = self.reduced_cost(e);
                if rc < min {
                    min = rc;
                    best = Some(e);
                }
            }
            count -= 1;
            if count == 0 {
                if best.is_some() {
                    self.next_arc = (e + 1) % arcs;
                    return best;
                }
                count = self.block;
            }
        }
        best
    }

    fn pivot(&mut self, entering: usize) {
        let (first, second) = self.ends(entering);
        let (mut u, mut v) = (first, second);
        while u != v {
            if self.depth[u] >= self.depth[v] {
                u = self.parent[u];
            } else {
                v = self.parent[v];
            }
        }
        let join = u;
        let mut delta = f64::INFINITY;
        let mut out = usize::MAX;
        let mut w = first;
        while w != join {
            if self.pred_up[w] {
                let d = self.flow[w].max(0.0);
                if d < delta {
                    delta = d;
                    out = w;
                }
            }
            w = self.parent[w];
        }
        w = second;
        while w != join {
            if !self.pred_up[w] {
                let d = self.flow[w].max(0.0);
                if d <= delta {
                    delta = d;
                    out = w;
                }
            }
            w = self.parent[w];
        }
        debug_assert!(out != usize::MAX, "unbounded cycle in a bounded problem");
        let leaving = self.pred[out];
        let (ls, lt) = self.ends(leaving);
        remove_arc(&mut self.adj[ls], leaving);
        remove_arc(&mut self.adj[lt], leaving);
        if leaving < self.m * self.n {
            self.state[leaving] = LOWER;
        }
        self.adj[first].push(entering);
        self.adj[second].push(entering);
        self.state[entering] = TREE;
        // pred of every node is reassigned by the rebuild
        for p in self.pred.iter_mut() {
            *p = usize::MAX;
        }
        self.rebuild();
        self.pivots += 1;
    }

    fn run(&mut self) -> Result<()> {
        let limit = 50 * (self.m * self.n) + 100_000;
        while let Some(e) = self.find_entering() {
            if self.pivots >= limit {
                let worst = (0..self.m * self.n)
                    .filter(|&a| self.state[a] == LOWER)
                    .map(|a| self.reduced_cost(a))
                    .fold(0.0f64, f64::min);
                return Err(Error::NonConvergence { iterations: self.pivots, error: -worst });
            }
            self.pivot(e);
        }
        let real = self.m * self.n;
        let residual = (0..self.root)
            .filter(|&u| self.pred[u] >= real)
            .map(|u| self.flow[u].abs())
            .fold(0.0f64, f64::max);
        if residual > 1e-9 {
            return Err(Error::InfeasibleMarginals {
                source_mass: self.supply[..self.m].iter().sum(),
                target_mass: -self.supply[self.m..self.root].iter().sum::<f64>(),
            });
        }
        Ok(())
    }

    fn output(&self) -> SimplexOutput {
        let real = self.m * self.n;
        let mut flow = vec![0.0; real];
        for u in 0..self.root {
            let arc = self.pred[u];
            if arc < real {
                flow[arc] = self.flow[u].max(0.0);
            }
        }
        SimplexOutput { flow, pi: self.pi[..self.root].to_vec(), pivots: self.pivots }
    }
}

fn remove_arc(list: &mut Vec<usize>, arc: usize) {
    if let Some(pos) = list.iter().position(|&a| a == arc) {
        list.swap_remove(pos);
    }
}
