//! Exact discrete optimal transport by successive shortest augmenting
//! paths on the bipartite transportation graph.
//!
//! Kept deliberately independent of the simplex solver in [`super::lp`]:
//! the Kantorovich-dual program cross-checks against this primal route.

use crate::error::{Error, Result};

/// Minimum transport cost between (supplies, demands) under the given cost
/// matrix. Supplies and demands must balance.
pub fn min_cost_transport(
    supplies: &[f64],
    demands: &[f64],
    cost: &[Vec<f64>],
) -> Result<f64> {
    let m = supplies.len();
    let n = demands.len();
    let total_s: f64 = supplies.iter().sum();
    let total_d: f64 = demands.iter().sum();
    if (total_s - total_d).abs() > 1e-9 {
        return Err(Error::WeightSum(total_s - total_d));
    }

    // nodes: 0 = source, 1..=m suppliers, m+1..=m+n consumers, m+n+1 = sink
    let nodes = m + n + 2;
    let source = 0usize;
    let sink = m + n + 1;
    let mut graph: Vec<Vec<usize>> = vec![Vec::new(); nodes];
    let mut to: Vec<usize> = Vec::new();
    let mut cap: Vec<f64> = Vec::new();
    let mut cst: Vec<f64> = Vec::new();

    let add_edge = |graph: &mut Vec<Vec<usize>>,
                        to: &mut Vec<usize>,
                        cap: &mut Vec<f64>,
                        cst: &mut Vec<f64>,
                        u: usize,
                        v: usize,
                        capacity: f64,
                        cost: f64| {
        graph[u].push(to.len());
        to.push(v);
        cap.push(capacity);
        cst.push(cost);
        graph[v].push(to.len());
        to.push(u);
        cap.push(0.0);
        cst.push(-cost);
    };

    for (i, &s) in supplies.iter().enumerate() {
        add_edge(&mut graph, &mut to, &mut cap, &mut cst, source, 1 + i, s, 0.0);
    }
    for (j, &d) in demands.iter().enumerate() {
        add_edge(&mut graph, &mut to, &mut cap, &mut cst, m + 1 + j, sink, d, 0.0);
    }
    for i in 0..m {
        for j in 0..n {
            add_edge(
                &mut graph,
                &mut to,
                &mut cap,
                &mut cst,
                1 + i,
                m + 1 + j,
                f64::INFINITY,
                cost[i][j],
            );
        }
    }

    let mut total_cost = 0.0;
    let mut remaining = total_s;
    while remaining > 1e-12 {
        // Bellman-Ford shortest path in the residual graph
        let mut dist = vec![f64::INFINITY; nodes];
        let mut pre: Vec<Option<usize>> = vec![None; nodes];
        dist[source] = 0.0;
        for _ in 0..nodes {
            let mut improved = false;
            for u in 0..nodes {
                if dist[u].is_infinite() {
                    continue;
                }
                for &e in &graph[u] {
                    if cap[e] > 1e-12 && dist[u] + cst[e] < dist[to[e]] - 1e-15 {
                        dist[to[e]] = dist[u] + cst[e];
                        pre[to[e]] = Some(e);
                        improved = true;
                    }
                }
            }
            if !improved {
                break;
            }
        }
        if dist[sink].is_infinite() {
            return Err(Error::Config("transport network disconnected".into()));
        }
        // bottleneck along the path
        let mut push = remaining;
        let mut v = sink;
        while let Some(e) = pre[v] {
            push = push.min(cap[e]);
            v = to[e ^ 1];
        }
        let mut v = sink;
        while let Some(e) = pre[v] {
            cap[e] -= push;
            cap[e ^ 1] += push;
            total_cost += push * cst[e];
            v = to[e ^ 1];
        }
        remaining -= push;
    }
    Ok(total_cost)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pair_costs_its_distance() {
        let c = min_cost_transport(&[1.0], &[1.0], &[vec![3.5]]).unwrap();
        assert!((c - 3.5).abs() < 1e-12);
    }

    #[test]
    fn split_mass_prefers_cheap_routes() {
        // two suppliers 0.5/0.5, one consumer 1.0, costs 1 and 3 -> 0.5+1.5
        let c = min_cost_transport(&[0.5, 0.5], &[1.0], &[vec![1.0], vec![3.0]]).unwrap();
        assert!((c - 2.0).abs() < 1e-12);
    }

    #[test]
    fn imbalance_is_rejected() {
        assert!(min_cost_transport(&[1.0], &[0.5], &[vec![1.0]]).is_err());
    }
}
