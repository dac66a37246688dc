//! Backtracking search for combinatorial isomorphisms between cell
//! complexes, used to match gluing boundaries.

use super::Mesh;
use crate::scalar::Scalar;
use std::collections::{BTreeSet, HashSet};

fn adjacency<S: Scalar>(m: &Mesh<S>) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); m.num_vertices];
    for [t, h] in &m.edges {
        adj[*t].push(*h);
        adj[*h].push(*t);
    }
    for l in &mut adj {
        l.sort_unstable();
        l.dedup();
    }
    adj
}

/// Per-vertex invariant: degree plus incident cell counts by (dim, size).
fn vertex_profile<S: Scalar>(m: &Mesh<S>, adj: &[Vec<usize>]) -> Vec<Vec<(usize, usize)>> {
    let mut prof: Vec<Vec<(usize, usize)>> = adj
        .iter()
        .map(|l| vec![(1usize, l.len())])
        .collect();
    for dim in 2..=3 {
        for id in 0..m.cell_count(dim) {
            let vs = m.cell_vertices(dim, id);
            let size = vs.len();
            for v in vs {
                prof[v].push((dim * 16, size));
            }
        }
    }
    for p in &mut prof {
        p.sort_unstable();
    }
    prof
}

struct Search<'a> {
    order: Vec<usize>,
    adj_a: Vec<Vec<usize>>,
    adj_b: Vec<Vec<usize>>,
    prof_a: Vec<Vec<(usize, usize)>>,
    prof_b: Vec<Vec<(usize, usize)>>,
    edge_set_b: HashSet<(usize, usize)>,
    /// Plaquette / 3-cell vertex sets of b.
    cell_sets_b: [HashSet<BTreeSet<usize>>; 2],
    /// For each a-vertex, incident plaquette / 3-cell vertex sets.
    cells_at_a: [Vec<Vec<&'a BTreeSet<usize>>>; 2],
}

/// Finds a vertex bijection a -> b mapping cells to cells, or None.
pub fn find_isomorphism<S: Scalar>(a: &Mesh<S>, b: &Mesh<S>) -> Option<Vec<usize>> {
    if a.dim != b.dim
        || a.num_vertices != b.num_vertices
        || a.edges.len() != b.edges.len()
        || a.plaquettes.len() != b.plaquettes.len()
        || a.cells3.len() != b.cells3.len()
        || a.cells4.len() != b.cells4.len()
    {
        return None;
    }
    let n = a.num_vertices;
    if n == 0 {
        return Some(Vec::new());
    }
    let adj_a = adjacency(a);
    let adj_b = adjacency(b);
    let prof_a = vertex_profile(a, &adj_a);
    let prof_b = vertex_profile(b, &adj_b);
    {
        let mut sa = prof_a.clone();
        let mut sb = prof_b.clone();
        sa.sort();
        sb.sort();
        if sa != sb {
            return None;
        }
    }
    let edge_set_b: HashSet<(usize, usize)> = b
        .edges
        .iter()
        .map(|[t, h]| (*t.min(h), *t.max(h)))
        .collect();

    let cell_sets_a: [Vec<BTreeSet<usize>>; 2] = [
        (0..a.cell_count(2)).map(|id| a.cell_vertices(2, id)).collect(),
        (0..a.cell_count(3)).map(|id| a.cell_vertices(3, id)).collect(),
    ];
    let cell_sets_b: [HashSet<BTreeSet<usize>>; 2] = [
        (0..b.cell_count(2)).map(|id| b.cell_vertices(2, id)).collect(),
        (0..b.cell_count(3)).map(|id| b.cell_vertices(3, id)).collect(),
    ];
    let mut cells_at_a: [Vec<Vec<&BTreeSet<usize>>>; 2] =
        [vec![Vec::new(); n], vec![Vec::new(); n]];
    for k in 0..2 {
        for set in &cell_sets_a[k] {
            for &v in set {
                cells_at_a[k][v].push(set);
            }
        }
    }

    // BFS vertex order over components of a.
    let mut order: Vec<usize> = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    for root in 0..n {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        let mut queue = std::collections::VecDeque::from([root]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &w in &adj_a[v] {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
    }

    let search = Search {
        order,
        adj_a,
        adj_b,
        prof_a,
        prof_b,
        edge_set_b,
        cell_sets_b,
        cells_at_a,
    };
    let mut map = vec![usize::MAX; n];
    let mut used = vec![false; n];
    if !extend(&search, 0, &mut map, &mut used) {
        return None;
    }

    // Full verification (the search already enforced these constraints, so
    // this is a cheap safety net).
    for [t, h] in &a.edges {
        let key = (map[*t].min(map[*h]), map[*t].max(map[*h]));
        if !search.edge_set_b.contains(&key) {
            return None;
        }
    }
    for dim in 2..=3 {
        for id in 0..a.cell_count(dim) {
            let mapped: BTreeSet<usize> =
                a.cell_vertices(dim, id).into_iter().map(|v| map[v]).collect();
            if !search.cell_sets_b[dim - 2].contains(&mapped) {
                return None;
            }
        }
    }
    Some(map)
}

fn extend(s: &Search, pos: usize, map: &mut Vec<usize>, used: &mut Vec<bool>) -> bool {
    if pos == s.order.len() {
        return true;
    }
    let v = s.order[pos];
    // Candidate images: neighbors of an already-mapped neighbor when one
    // exists, otherwise any unused vertex of matching profile.
    let mapped_neighbor = s.adj_a[v].iter().find(|&&w| map[w] != usize::MAX);
    let candidates: Vec<usize> = match mapped_neighbor {
        Some(&w) => s.adj_b[map[w]].clone(),
        None => (0..s.adj_b.len()).collect(),
    };
    'cand: for c in candidates {
        if used[c] || s.prof_b[c] != s.prof_a[v] {
            continue;
        }
        for &w in &s.adj_a[v] {
            if map[w] != usize::MAX {
                let key = (c.min(map[w]), c.max(map[w]));
                if !s.edge_set_b.contains(&key) {
                    continue 'cand;
                }
            }
        }
        map[v] = c;
        // Any fully mapped plaquette / 3-cell through v must land on a cell.
        for k in 0..2 {
            for set in &s.cells_at_a[k][v] {
                let mapped: Option<BTreeSet<usize>> = set
                    .iter()
                    .map(|&w| (map[w] != usize::MAX).then_some(map[w]))
                    .collect();
                if let Some(mapped) = mapped {
                    if !s.cell_sets_b[k].contains(&mapped) {
                        map[v] = usize::MAX;
                        continue 'cand;
                    }
                }
            }
        }
        used[c] = true;
        if extend(s, pos + 1, map, used) {
            return true;
        }
        map[v] = usize::MAX;
        used[c] = false;
    }
    false
}
