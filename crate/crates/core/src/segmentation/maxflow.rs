//! s-t max-flow / min-cut with Dinic's blocking-flow algorithm.

use std::collections::VecDeque;

use crate::error::{Error, Result};

const EPS: f64 = 1e-12;

#[derive(Clone, Debug)]
struct Edge {
    to: usize,
    cap: f64,
}

/// Capacitated directed graph over `n` inner nodes plus a source and a sink.
#[derive(Clone, Debug)]
pub struct FlowGraph {
    n: usize,
    edges: Vec<Edge>,
    adj: Vec<Vec<usize>>,
    source_side: Vec<bool>,
}

impl FlowGraph {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            edges: Vec::new(),
            adj: vec![Vec::new(); n + 2],
            source_side: Vec::new(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn source(&self) -> usize {
        self.n
    }

    pub fn sink(&self) -> usize {
        self.n + 1
    }

    /// Edge pair `u -> v` with capacity `cap` and `v -> u` with `rev_cap`.
    /// Node ids `n` and `n + 1` address the source and the sink.
    pub fn add_edge(&mut self, u: usize, v: usize, cap: f64, rev_cap: f64) -> Result<()> {
        if !(cap >= 0.0 && rev_cap >= 0.0) || !cap.is_finite() || !rev_cap.is_finite() {
            return Err(Error::Input(format!("invalid capacity {cap}/{rev_cap} on edge {u}->{v}")));
        }
        if u >= self.n + 2 || v >= self.n + 2 {
            return Err(Error::Input(format!("edge {u}->{v} outside graph")));
        }
        self.adj[u].push(self.edges.len());
        self.edges.push(Edge { to: v, cap });
        self.adj[v].push(self.edges.len());
        self.edges.push(Edge { to: u, cap: rev_cap });
        Ok(())
    }

    /// Terminal links: `source -> u` and `u -> sink`.
    pub fn add_tweights(&mut self, u: usize, cap_source: f64, cap_sink: f64) -> Result<()> {
        let (s, t) = (self.source(), self.sink());
        if cap_source != 0.0 {
            self.add_edge(s, u, cap_source, 0.0)?;
        }
        if cap_sink != 0.0 {
            self.add_edge(u, t, cap_sink, 0.0)?;
        }
        Ok(())
    }

    /// Runs to completion and returns the flow value; afterwards
    /// [`FlowGraph::in_source_side`] reports the minimum cut.
    pub fn max_flow(&mut self) -> f64 {
        let (s, t) = (self.source(), self.sink());
        let nn = self.n + 2;
        let mut total = 0.0;
        let mut level = vec![usize::MAX; nn];
        let mut it = vec![0usize; nn];
        loop {
            self.bfs(s, &mut level);
            if level[t] == usize::MAX {
                break;
            }
            it.iter_mut().for_each(|v| *v = 0);
            loop {
                let f = self.dfs(s, t, f64::INFINITY, &level, &mut it);
                if f <= EPS {
                    break;
                }
                total += f;
            }
        }
        self.bfs(s, &mut level);
        self.source_side = (0..self.n).map(|u| level[u] != usize::MAX).collect();
        total
    }

    fn bfs(&self, s: usize, level: &mut [usize]) {
        level.iter_mut().for_each(|l| *l = usize::MAX);
        level[s] = 0;
        let mut q = VecDeque::from([s]);
        while let Some(u) = q.pop_front() {
            for &e in &self.adj[u] {
                let Edge { to, cap } = self.edges[e];
                if cap > EPS && level[to] == usize::MAX {
                    level[to] = level[u] + 1;
                    q.push_back(to);
                }
            }
        }
    }

    fn dfs(&mut self, u: usize, t: usize, pushed: f64, level: &[usize], it: &mut [usize]) -> f64 {
        if u == t {
            return pushed;
        }
        while it[u] < self.adj[u].len() {
            let e = self.adj[u][it[u]];
            let Edge { to, cap } = self.edges[e];
            if cap > EPS && level[to] == level[u] + 1 {
                let f = self.dfs(to, t, pushed.min(cap), level, it);
                if f > EPS {
                    self.edges[e].cap -= f;
                    self.edges[e ^ 1].cap += f;
                    return f;
                }
            }
            it[u] += 1;
        }
        0.0
    }

    /// Whether inner node `u` ends on the source side of the minimum cut.
    /// Only meaningful after [`FlowGraph::max_flow`].
    pub fn in_source_side(&self, u: usize) -> bool {
        self.source_side.get(u).copied().unwrap_or(false)
    }
}
