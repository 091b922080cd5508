//! Dinic's algorithm on an adjacency-list residual graph.

use std::collections::VecDeque;

#[derive(Debug, Clone)]
struct Edge {
    to: usize,
    cap: i64,
    rev: usize,
}

#[derive(Debug, Clone)]
pub struct Dinic {
    graph: Vec<Vec<Edge>>,
    /// `(node, slot)` of each forward edge, plus its original capacity.
    edges: Vec<(usize, usize, i64)>,
    level: Vec<i32>,
    iter: Vec<usize>,
}

impl Dinic {
    pub fn new(nodes: usize) -> Self {
        Self {
            graph: vec![Vec::new(); nodes],
            edges: Vec::new(),
            level: vec![0; nodes],
            iter: vec![0; nodes],
        }
    }

    /// Returns the edge handle.
    pub fn add_edge(&mut self, from: usize, to: usize, cap: i64) -> usize {
        let a = self.graph[from].len();
        let b = self.graph[to].len() + usize::from(from == to);
        self.graph[from].push(Edge { to, cap, rev: b });
        self.graph[to].push(Edge {
            to: from,
            cap: 0,
            rev: a,
        });
        self.edges.push((from, a, cap));
        self.edges.len() - 1
    }

    /// Flow currently carried by edge `e`.
    pub fn flow(&self, e: usize) -> i64 {
        let (node, slot, cap) = self.edges[e];
        cap - self.graph[node][slot].cap
    }

    fn bfs(&mut self, s: usize) {
        self.level.iter_mut().for_each(|l| *l = -1);
        self.level[s] = 0;
        let mut q = VecDeque::from([s]);
        while let Some(v) = q.pop_front() {
            for e in &self.graph[v] {
                if e.cap > 0 && self.level[e.to] < 0 {
                    self.level[e.to] = self.level[v] + 1;
                    q.push_back(e.to);
                }
            }
        }
    }

    fn dfs(&mut self, v: usize, t: usize, f: i64) -> i64 {
        if v == t {
            return f;
        }
        while self.iter[v] < self.graph[v].len() {
            let i = self.iter[v];
            let Edge { to, cap, rev } = self.graph[v][i];
            if cap > 0 && self.level[v] < self.level[to] {
                let d = self.dfs(to, t, f.min(cap));
                if d > 0 {
                    self.graph[v][i].cap -= d;
                    self.graph[to][rev].cap += d;
                    return d;
                }
            }
            self.iter[v] += 1;
        }
        0
    }

    pub fn max_flow(&mut self, s: usize, t: usize) -> i64 {
        let mut total = 0;
        loop {
            self.bfs(s);
            if self.level[t] < 0 {
                return total;
            }
            self.iter.iter_mut().for_each(|i| *i = 0);
            loop {
                let f = self.dfs(s, t, i64::MAX);
                if f == 0 {
                    break;
                }
                total += f;
            }
        }
    }

    /// Nodes reachable from `s` in the residual graph (source side of a min cut).
    pub fn reachable(&self, s: usize) -> Vec<bool> {
        let mut seen = vec![false; self.graph.len()];
        seen[s] = true;
        let mut stack = vec![s];
        while let Some(v) = stack.pop() {
            for e in &self.graph[v] {
                if e.cap > 0 && !seen[e.to] {
                    seen[e.to] = true;
                    stack.push(e.to);
                }
            }
        }
        seen
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_network() {
        let mut d = Dinic::new(6);
        d.add_edge(0, 1, 10);
        d.add_edge(0, 2, 10);
        d.add_edge(1, 3, 4);
        d.add_edge(1, 4, 8);
        d.add_edge(2, 4, 9);
        d.add_edge(3, 5, 10);
        d.add_edge(4, 3, 6);
        d.add_edge(4, 5, 10);
        assert_eq!(d.max_flow(0, 5), 19);
    }

    #[test]
    fn disconnected() {
        let mut d = Dinic::new(4);
        d.add_edge(0, 1, 10);
        d.add_edge(2, 3, 5);
        assert_eq!(d.max_flow(0, 3), 0);
        assert!(!d.reachable(0)[3]);
    }

    #[test]
    fn edge_flows_conserve() {
        let mut d = Dinic::new(4);
        let a = d.add_edge(0, 1, 3);
        let b = d.add_edge(0, 2, 2);
        let c = d.add_edge(1, 3, 2);
        let e = d.add_edge(2, 3, 3);
        let f = d.add_edge(1, 2, 1);
        assert_eq!(d.max_flow(0, 3), 5);
        assert_eq!(d.flow(a) + d.flow(b), 5);
        assert_eq!(d.flow(a), d.flow(c) + d.flow(f));
        assert_eq!(d.flow(b) + d.flow(f), d.flow(e));
    }
}
