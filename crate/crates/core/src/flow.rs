//! Successive-shortest-path min-cost flow for the small transportation
//! problems solved by valley filling. Costs are real; capacities are integral,
//! so the optimal flow is integral.

#[derive(Clone, Debug)]
struct Edge {
    to: usize,
    cap: i64,
    cost: f64,
}

#[derive(Clone, Debug, Default)]
pub struct MinCostFlow {
    adj: Vec<Vec<usize>>,
    // edge 2e is forward, 2e+1 its residual twin
    edges: Vec<Edge>,
}

/// Handle to a forward arc, for reading its flow after solving.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ArcId(usize);

impl MinCostFlow {
    pub fn new(nodes: usize) -> Self {
        MinCostFlow { adj: vec![Vec::new(); nodes], edges: Vec::new() }
    }

    pub fn add_arc(&mut self, from: usize, to: usize, cap: i64, cost: f64) -> ArcId {
        let id = self.edges.len();
        self.edges.push(Edge { to, cap, cost });
        self.edges.push(Edge { to: from, cap: 0, cost: -cost });
        self.adj[from].push(id);
        self.adj[to].push(id + 1);
        ArcId(id)
    }

    pub fn flow(&self, arc: ArcId) -> i64 {
        self.edges[arc.0 + 1].cap
    }

    /// Pushes up to `limit` units from `source` to `sink` at minimum cost.
    /// Returns the amount sent and its total cost.
    pub fn solve(&mut self, source: usize, sink: usize, limit: i64) -> (i64, f64) {
        let n = self.adj.len();
        let mut sent = 0;
        let mut total = 0.0;
        let mut dist = vec![f64::INFINITY; n];
        let mut prev = vec![usize::MAX; n];
        let mut in_queue = vec![false; n];
        let mut queue = std::collections::VecDeque::with_capacity(n);
        while sent < limit {
            dist.iter_mut().for_each(|d| *d = f64::INFINITY);
            prev.iter_mut().for_each(|p| *p = usize::MAX);
            dist[source] = 0.0;
            queue.push_back(source);
            in_queue[source] = true;
            while let Some(u) = queue.pop_front() {
                in_queue[u] = false;
                for &e in &self.adj[u] {
                    let edge = &self.edges[e];
                    if edge.cap > 0 {
                        let nd = dist[u] + edge.cost;
                        if nd < dist[edge.to] - 1e-12 {
                            dist[edge.to] = nd;
                            prev[edge.to] = e;
                            if !in_queue[edge.to] {
                                in_queue[edge.to] = true;
                                queue.push_back(edge.to);
                            }
                        }
                    }
                }
            }
            if !dist[sink].is_finite() {
                break;
            }
            let mut push = limit - sent;
            let mut v = sink;
            while v != source {
                let e = prev[v];
                push = push.min(self.edges[e].cap);
                v = self.edges[e ^ 1].to;
            }
            let mut v = sink;
            while v != source {
                let e = prev[v];
                self.edges[e].cap -= push;
                self.edges[e ^ 1].cap += push;
                v = self.edges[e ^ 1].to;
            }
            sent += push;
            total += push as f64 * dist[sink];
        }
        (sent, total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn picks_cheaper_route() {
        // 0 -> 1 -> 3 costs 5, 0 -> 2 -> 3 costs 1 (cap 1)
        let mut g = MinCostFlow::new(4);
        let a = g.add_arc(0, 1, 2, 2.0);
        g.add_arc(1, 3, 2, 3.0);
        let b = g.add_arc(0, 2, 1, 0.5);
        g.add_arc(2, 3, 1, 0.5);
        let (sent, cost) = g.solve(0, 3, 2);
        assert_eq!(sent, 2);
        assert!((cost - 6.0).abs() < 1e-12);
        assert_eq!(g.flow(a), 1);
        assert_eq!(g.flow(b), 1);
    }

    #[test]
    fn reroutes_through_residual_arcs() {
        // classic case where the second path must cancel flow of the first
        let mut g = MinCostFlow::new(4);
        g.add_arc(0, 1, 1, 1.0);
        g.add_arc(0, 2, 1, 2.0);
        g.add_arc(1, 2, 1, -5.0);
        g.add_arc(1, 3, 1, 2.0);
        g.add_arc(2, 3, 1, 1.0);
        let (sent, cost) = g.solve(0, 3, 2);
        assert_eq!(sent, 2);
        // optimal: 0-1-3 (3) + 0-2-3 (3) = 6 vs 0-1-2-3 (-3) + nothing else possible -> max flow first
        assert!((cost - 6.0).abs() < 1e-12);
    }
}
