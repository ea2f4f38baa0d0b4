//! Pattern graphs and non-induced copy counting.
//!
//! A non-induced copy of a pattern `G₀` is an injective map of its vertices
//! into the host graph that sends every pattern edge to a host edge, taken up
//! to automorphisms of `G₀`. Counting is done by enumerating injective
//! homomorphisms along a spanning order of the (connected) pattern and
//! dividing by the automorphism count.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::error::{domain, Result};

/// Largest pattern accepted by the counting routines.
pub const MAX_PATTERN_VERTICES: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternGraph {
    n_vertices: usize,
    edges: Vec<(usize, usize)>,
}

impl PatternGraph {
    pub fn new(n_vertices: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n_vertices == 0 {
            return domain("pattern needs at least one vertex");
        }
        if n_vertices > MAX_PATTERN_VERTICES {
            return domain(format!(
                "pattern has {n_vertices} vertices, at most {MAX_PATTERN_VERTICES} supported"
            ));
        }
        let mut set = BTreeSet::new();
        for &(a, b) in edges {
            if a == b {
                return domain(format!("self-loop at vertex {a}"));
            }
            if a >= n_vertices || b >= n_vertices {
                return domain(format!("edge ({a}, {b}) out of range"));
            }
            set.insert((a.min(b), a.max(b)));
        }
        Ok(Self {
            n_vertices,
            edges: set.into_iter().collect(),
        })
    }

    pub fn edge() -> Self {
        Self::new(2, &[(0, 1)]).unwrap()
    }

    pub fn triangle() -> Self {
        Self::new(3, &[(0, 1), (1, 2), (0, 2)]).unwrap()
    }

    pub fn path3() -> Self {
        Self::new(3, &[(0, 1), (1, 2)]).unwrap()
    }

    /// `edge`, `triangle`, `path3`, `path4`, `star3`, `square` or `k4`.
    pub fn by_name(name: &str) -> Result<Self> {
        Ok(match name {
            "edge" => Self::edge(),
            "triangle" => Self::triangle(),
            "path3" => Self::path3(),
            "path4" => Self::new(4, &[(0, 1), (1, 2), (2, 3)])?,
            "star3" => Self::new(4, &[(0, 1), (0, 2), (0, 3)])?,
            "square" => Self::new(4, &[(0, 1), (1, 2), (2, 3), (0, 3)])?,
            "k4" => Self::new(4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])?,
            other => return domain(format!("unknown pattern `{other}`")),
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.binary_search(&(a.min(b), a.max(b))).is_ok()
    }

    pub fn neighbors(&self, v: usize) -> Vec<usize> {
        (0..self.n_vertices).filter(|&u| self.has_edge(u, v)).collect()
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n_vertices];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for u in self.neighbors(v) {
                if !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Number of vertex permutations preserving the edge set.
    pub fn automorphisms(&self) -> u64 {
        let mut perm: Vec<usize> = (0..self.n_vertices).collect();
        let mut count = 0;
        permute(&mut perm, 0, &mut |p| {
            if self.edges.iter().all(|&(a, b)| self.has_edge(p[a], p[b])) {
                count += 1;
            }
        });
        count
    }

    /// Requires a connected pattern with at least one edge.
    pub(crate) fn validate_connected(&self) -> Result<()> {
        if self.edges.is_empty() || self.n_vertices < 2 {
            return domain("pattern needs q >= 2 vertices and at least one edge");
        }
        if !self.is_connected() {
            return domain("pattern must be connected");
        }
        Ok(())
    }
}

fn permute(p: &mut Vec<usize>, i: usize, visit: &mut impl FnMut(&[usize])) {
    if i == p.len() {
        visit(p);
        return;
    }
    for j in i..p.len() {
        p.swap(i, j);
        permute(p, i + 1, visit);
        p.swap(i, j);
    }
}

/// Undirected host graph with sorted adjacency lists.
#[derive(Debug, Clone, Default)]
pub struct HostGraph {
    adj: Vec<Vec<u32>>,
}

impl HostGraph {
    pub fn with_vertices(n: usize) -> Self {
        Self {
            adj: vec![Vec::new(); n],
        }
    }

    pub fn add_vertex(&mut self) -> usize {
        self.adj.push(Vec::new());
        self.adj.len() - 1
    }

    /// Adds `a`–`b`; callers must not add an edge twice.
    pub fn add_edge(&mut self, a: usize, b: usize) {
        debug_assert!(a != b);
        self.adj[a].push(b as u32);
        self.adj[b].push(a as u32);
    }

    /// Sorts adjacency lists; required before counting.
    pub fn finish(&mut self) {
        for l in &mut self.adj {
            l.sort_unstable();
        }
    }

    pub fn n_vertices(&self) -> usize {
        self.adj.len()
    }

    pub fn n_edges(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn neighbors(&self, v: usize) -> &[u32] {
        &self.adj[v]
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adj[a].binary_search(&(b as u32)).is_ok()
    }
}

/// Spanning order of a connected pattern rooted at `root`: each later vertex
/// has a parent earlier in the order plus the list of other earlier neighbors.
struct Plan {
    order: Vec<usize>,
    parent: Vec<usize>,
    back: Vec<Vec<usize>>,
}

impl Plan {
    fn new(pattern: &PatternGraph, root: usize) -> Self {
        let q = pattern.n_vertices();
        let mut pos = vec![usize::MAX; q];
        let mut order = vec![root];
        pos[root] = 0;
        let mut head = 0;
        while head < order.len() {
            let v = order[head];
            head += 1;
            for u in pattern.neighbors(v) {
                if pos[u] == usize::MAX {
                    pos[u] = order.len();
                    order.push(u);
                }
            }
        }
        let mut parent = vec![0; order.len()];
        let mut back = vec![Vec::new(); order.len()];
        for (i, &v) in order.iter().enumerate().skip(1) {
            let earlier: Vec<usize> = pattern
                .neighbors(v)
                .into_iter()
                .map(|u| pos[u])
                .filter(|&p| p < i)
                .collect();
            parent[i] = earlier[0];
            back[i] = earlier[1..].to_vec();
        }
        Self { order, parent, back }
    }
}

/// Counter of non-induced copies of a fixed connected pattern.
pub struct CopyCounter {
    pattern: PatternGraph,
    plans: Vec<Plan>,
    automorphisms: u64,
}

impl CopyCounter {
    pub fn new(pattern: &PatternGraph) -> Result<Self> {
        pattern.validate_connected()?;
        Ok(Self {
            pattern: pattern.clone(),
            plans: (0..pattern.n_vertices()).map(|r| Plan::new(pattern, r)).collect(),
            automorphisms: pattern.automorphisms(),
        })
    }

    pub fn pattern(&self) -> &PatternGraph {
        &self.pattern
    }

    /// All copies in `g`, ignoring vertices flagged in `excluded`.
    pub fn count(&self, g: &HostGraph, excluded: &[usize]) -> u64 {
        let plan = &self.plans[0];
        let mut homs = 0;
        let mut image = Vec::with_capacity(self.pattern.n_vertices());
        for v in 0..g.n_vertices() {
            if excluded.contains(&v) {
                continue;
            }
            image.clear();
            image.push(v);
            homs += extend(g, plan, &mut image, excluded, &[]);
        }
        homs / self.automorphisms
    }

    /// Copies whose vertex set contains every vertex of `required`
    /// (non-empty, distinct), ignoring vertices in `excluded`.
    pub fn count_containing(&self, g: &HostGraph, required: &[usize], excluded: &[usize]) -> u64 {
        debug_assert!(!required.is_empty());
        if required.len() > self.pattern.n_vertices() {
            return 0;
        }
        let first = required[0];
        let rest = &required[1..];
        let mut homs = 0;
        let mut image = Vec::with_capacity(self.pattern.n_vertices());
        // A hom containing `first` maps exactly one pattern vertex onto it.
        for plan in &self.plans {
            image.clear();
            image.push(first);
            homs += extend(g, plan, &mut image, excluded, rest);
        }
        homs / self.automorphisms
    }
}

fn extend(g: &HostGraph, plan: &Plan, image: &mut Vec<usize>, excluded: &[usize], required: &[usize]) -> u64 {
    let i = image.len();
    if i == plan.order.len() {
        return u64::from(required.iter().all(|r| image.contains(r)));
    }
    let anchor = image[plan.parent[i]];
    let mut total = 0;
    for &c in g.neighbors(anchor) {
        let c = c as usize;
        if image.contains(&c) || excluded.contains(&c) {
            continue;
        }
        if !plan.back[i].iter().all(|&b| g.has_edge(image[b], c)) {
            continue;
        }
        image.push(c);
        total += extend(g, plan, image, excluded, required);
        image.pop();
    }
    total
}
