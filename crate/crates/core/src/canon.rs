//! Exact canonical labeling for small vertex- and edge-labeled graphs.
//!
//! Colors are refined by neighborhood signatures until stable; remaining
//! ties are broken by individualizing each vertex of the smallest
//! non-trivial cell in turn and keeping the lexicographically smallest
//! resulting code. Nothing here depends on hashing, addresses, or input
//! order, so codes are reproducible across runs and platforms.

/// Undirected graph with byte-string vertex labels and integer edge labels.
#[derive(Debug, Clone, Default)]
pub struct LabeledGraph {
    labels: Vec<Vec<u8>>,
    adjacency: Vec<Vec<(usize, u32)>>,
    edges: Vec<(usize, usize, u32)>,
}

impl LabeledGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_vertex(&mut self, label: Vec<u8>) -> usize {
        self.labels.push(label);
        self.adjacency.push(Vec::new());
        self.labels.len() - 1
    }

    pub fn add_edge(&mut self, a: usize, b: usize, label: u32) {
        self.adjacency[a].push((b, label));
        self.adjacency[b].push((a, label));
        self.edges.push((a, b, label));
    }

    pub fn vertex_count(&self) -> usize {
        self.labels.len()
    }
}

/// Result of canonicalization.
#[derive(Debug, Clone)]
pub struct Canonical {
    /// `order[k]` is the vertex placed at canonical position `k`.
    pub order: Vec<usize>,
    /// `position[v]` is the canonical position of vertex `v`.
    pub position: Vec<usize>,
    pub code: Vec<u8>,
}

/// Colors use cell-start encoding: a vertex's color is the number of
/// vertices in strictly smaller cells.
type Coloring = Vec<usize>;

pub fn canonicalize(g: &LabeledGraph) -> Canonical {
    let n = g.vertex_count();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| g.labels[a].cmp(&g.labels[b]));
    let mut colors = vec![0; n];
    for k in 1..n {
        colors[idx[k]] = if g.labels[idx[k]] == g.labels[idx[k - 1]] {
            colors[idx[k - 1]]
        } else {
            k
        };
    }
    let mut best: Option<(Vec<u8>, Coloring)> = None;
    search(g, colors, &mut best);
    let (code, colors) = best.unwrap_or_else(|| (encode(g, &[]), Vec::new()));
    let mut order = vec![0; n];
    for (v, &c) in colors.iter().enumerate() {
        order[c] = v;
    }
    Canonical {
        order,
        position: colors,
        code,
    }
}

fn search(g: &LabeledGraph, colors: Coloring, best: &mut Option<(Vec<u8>, Coloring)>) {
    let colors = refine(g, colors);
    let n = colors.len();
    let mut sizes = vec![0usize; n];
    for &c in &colors {
        sizes[c] += 1;
    }
    // smallest non-singleton cell, lowest color on ties
    let target = (0..n)
        .filter(|&c| sizes[c] > 1)
        .min_by_key(|&c| (sizes[c], c));
    let Some(cell) = target else {
        let code = encode(g, &colors);
        if best.as_ref().is_none_or(|(b, _)| code < *b) {
            *best = Some((code, colors));
        }
        return;
    };
    for v in 0..n {
        if colors[v] != cell {
            continue;
        }
        let mut next = colors.clone();
        for (u, c) in next.iter_mut().enumerate() {
            if *c == cell && u != v {
                *c = cell + 1;
            }
        }
        search(g, next, best);
    }
}

fn refine(g: &LabeledGraph, mut colors: Coloring) -> Coloring {
    let n = colors.len();
    let mut cells = distinct(&colors);
    loop {
        let sigs: Vec<(usize, Vec<(u32, usize)>)> = (0..n)
            .map(|v| {
                let mut s: Vec<(u32, usize)> = g.adjacency[v]
                    .iter()
                    .map(|&(u, l)| (l, colors[u]))
                    .collect();
                s.sort_unstable();
                (colors[v], s)
            })
            .collect();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| sigs[a].cmp(&sigs[b]));
        let mut next = vec![0; n];
        for k in 1..n {
            next[idx[k]] = if sigs[idx[k]] == sigs[idx[k - 1]] {
                next[idx[k - 1]]
            } else {
                k
            };
        }
        colors = next;
        let refined = distinct(&colors);
        if refined == cells {
            return colors;
        }
        cells = refined;
    }
}

fn distinct(colors: &[usize]) -> usize {
    let mut seen = vec![false; colors.len()];
    colors
        .iter()
        .filter(|&&c| !std::mem::replace(&mut seen[c], true))
        .count()
}

/// Serializes labels in canonical order followed by the sorted edge list.
fn encode(g: &LabeledGraph, position: &[usize]) -> Vec<u8> {
    let n = g.vertex_count();
    let mut order = vec![0; n];
    for (v, &p) in position.iter().enumerate() {
        order[p] = v;
    }
    let mut out = Vec::new();
    out.extend_from_slice(&(n as u32).to_be_bytes());
    for &v in &order {
        out.extend_from_slice(&(g.labels[v].len() as u32).to_be_bytes());
        out.extend_from_slice(&g.labels[v]);
    }
    let mut edges: Vec<(u32, u32, u32)> = g
        .edges
        .iter()
        .map(|&(a, b, l)| {
            let (pa, pb) = (position[a] as u32, position[b] as u32);
            (pa.min(pb), pa.max(pb), l)
        })
        .collect();
    edges.sort_unstable();
    out.extend_from_slice(&(edges.len() as u32).to_be_bytes());
    for (a, b, l) in edges {
        out.extend_from_slice(&a.to_be_bytes());
        out.extend_from_slice(&b.to_be_bytes());
        out.extend_from_slice(&l.to_be_bytes());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cycle(n: usize, start: usize) -> LabeledGraph {
        let mut g = LabeledGraph::new();
        for _ in 0..n {
            g.add_vertex(vec![b'C']);
        }
        for i in 0..n {
            let a = (i + start) % n;
            g.add_edge(a, (a + 1) % n, 0);
        }
        g
    }

    #[test]
    fn rotated_cycles_share_a_code() {
        assert_eq!(
            canonicalize(&cycle(6, 0)).code,
            canonicalize(&cycle(6, 2)).code
        );
    }

    #[test]
    fn cycle_differs_from_path() {
        let mut path = LabeledGraph::new();
        for _ in 0..3 {
            path.add_vertex(vec![b'C']);
        }
        path.add_edge(0, 1, 0);
        path.add_edge(1, 2, 0);
        assert_ne!(canonicalize(&path).code, canonicalize(&cycle(3, 0)).code);
    }

    #[test]
    fn regular_graphs_are_separated_by_search() {
        // two disjoint triangles vs. a hexagon: refinement alone cannot tell
        // them apart, the individualization step must
        let mut tri = LabeledGraph::new();
        for _ in 0..6 {
            tri.add_vertex(vec![b'C']);
        }
        for (a, b) in [(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3)] {
            tri.add_edge(a, b, 0);
        }
        assert_ne!(canonicalize(&tri).code, canonicalize(&cycle(6, 0)).code);
    }

    #[test]
    fn positions_invert_order() {
        let c = canonicalize(&cycle(5, 1));
        for (k, &v) in c.order.iter().enumerate() {
            assert_eq!(c.position[v], k);
        }
    }
}
