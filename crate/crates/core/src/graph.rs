//! Factor graph construction, canonical edge ordering and topology
//! classification.
//!
//! Priors live on variable nodes; every factor of the model is a factor
//! node connected to exactly the variables in its scope. Cycles are counted
//! on this bipartite graph.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::model::{LinearGaussianModel, ModelError};

/// Topology classes ordered from most to least benign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Forest,
    SingleLoopPlusForest,
    MultiLoop,
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TopologyKind::Forest => "forest",
            TopologyKind::SingleLoopPlusForest => "single_loop_plus_forest",
            TopologyKind::MultiLoop => "multi_loop",
        })
    }
}

impl std::str::FromStr for TopologyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "forest" => Ok(TopologyKind::Forest),
            "single_loop_plus_forest" | "single-loop" | "single_loop" => {
                Ok(TopologyKind::SingleLoopPlusForest)
            }
            "multi_loop" | "multi-loop" => Ok(TopologyKind::MultiLoop),
            other => Err(format!("unknown topology '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentTopology {
    pub variables: Vec<u32>,
    pub factors: Vec<u32>,
    /// Number of independent cycles, `E − V + 1`.
    pub cycle_rank: usize,
    pub kind: TopologyKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyClass {
    /// Worst class over all components.
    pub kind: TopologyKind,
    pub components: Vec<ComponentTopology>,
    /// `(factor, variable)` edges on the loop, present iff the whole graph
    /// has exactly one independent cycle.
    pub loop_members: Option<Vec<(u32, u32)>>,
}

impl TopologyClass {
    pub fn cycle_rank(&self) -> usize {
        self.components.iter().map(|c| c.cycle_rank).sum()
    }
}

/// Bipartite variable/factor graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactorGraph {
    var_dims: BTreeMap<u32, usize>,
    /// `B(j)`: factor neighbours of each variable, ascending.
    var_neighbors: BTreeMap<u32, Vec<u32>>,
    /// `B(f_n)`: variable neighbours of each factor, ascending.
    factor_neighbors: BTreeMap<u32, Vec<u32>>,
}

impl FactorGraph {
    pub fn variables(&self) -> impl Iterator<Item = u32> + '_ {
        self.var_dims.keys().copied()
    }

    pub fn factors(&self) -> impl Iterator<Item = u32> + '_ {
        self.factor_neighbors.keys().copied()
    }

    pub fn num_variables(&self) -> usize {
        self.var_dims.len()
    }

    pub fn num_factors(&self) -> usize {
        self.factor_neighbors.len()
    }

    pub fn dim(&self, var: u32) -> usize {
        self.var_dims[&var]
    }

    pub fn var_dims(&self) -> &BTreeMap<u32, usize> {
        &self.var_dims
    }

    /// `B(j)`.
    pub fn var_neighbors(&self, var: u32) -> &[u32] {
        &self.var_neighbors[&var]
    }

    /// `B(f_n)`.
    pub fn factor_neighbors(&self, factor: u32) -> &[u32] {
        &self.factor_neighbors[&factor]
    }

    pub fn num_edges(&self) -> usize {
        self.factor_neighbors.values().map(Vec::len).sum()
    }

    fn node_list(&self) -> (Vec<Node>, HashMap<Node, usize>) {
        let nodes: Vec<Node> = self
            .variables()
            .map(Node::Var)
            .chain(self.factors().map(Node::Factor))
            .collect();
        let pos = nodes.iter().enumerate().map(|(i, n)| (*n, i)).collect();
        (nodes, pos)
    }

    fn adjacency(&self) -> (Vec<Node>, Vec<Vec<usize>>) {
        let (nodes, pos) = self.node_list();
        let mut adj = vec![Vec::new(); nodes.len()];
        for (&f, vars) in &self.factor_neighbors {
            let fp = pos[&Node::Factor(f)];
            for &v in vars {
                let vp = pos[&Node::Var(v)];
                adj[fp].push(vp);
                adj[vp].push(fp);
            }
        }
        (nodes, adj)
    }

    /// Longest shortest path (in bipartite hops) over all components.
    pub fn diameter(&self) -> usize {
        let (_, adj) = self.adjacency();
        let mut best = 0;
        for s in 0..adj.len() {
            let mut dist = vec![usize::MAX; adj.len()];
            dist[s] = 0;
            let mut q = VecDeque::from([s]);
            while let Some(u) = q.pop_front() {
                for &w in &adj[u] {
                    if dist[w] == usize::MAX {
                        dist[w] = dist[u] + 1;
                        best = best.max(dist[w]);
                        q.push_back(w);
                    }
                }
            }
        }
        best
    }

    /// Graphviz DOT text: circles for variables, boxes for factors.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("graph factor_graph {\n");
        for v in self.variables() {
            let _ = writeln!(out, "  x{v} [shape=circle, label=\"x{v}\"];");
        }
        for f in self.factors() {
            let _ = writeln!(out, "  f{f} [shape=square, label=\"f{f}\"];");
        }
        for (f, vars) in &self.factor_neighbors {
            for v in vars {
                let _ = writeln!(out, "  f{f} -- x{v};");
            }
        }
        out.push_str("}\n");
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Node {
    Var(u32),
    Factor(u32),
}

/// One factor node per model factor; priors stay on the variable nodes.
pub fn build_factor_graph(model: &LinearGaussianModel) -> Result<FactorGraph, ModelError> {
    model.ensure_valid()?;
    let var_dims: BTreeMap<u32, usize> = model.variables.iter().map(|v| (v.id, v.dim)).collect();
    let mut var_neighbors: BTreeMap<u32, Vec<u32>> =
        var_dims.keys().map(|&v| (v, Vec::new())).collect();
    let mut factor_neighbors = BTreeMap::new();
    for f in &model.factors {
        let mut scope = f.scope.clone();
        scope.sort_unstable();
        for &v in &scope {
            var_neighbors.get_mut(&v).expect("validated").push(f.id);
        }
        factor_neighbors.insert(f.id, scope);
    }
    for list in var_neighbors.values_mut() {
        list.sort_unstable();
    }
    Ok(FactorGraph {
        var_dims,
        var_neighbors,
        factor_neighbors,
    })
}

/// Counts independent cycles per connected component (`E − V + 1`).
pub fn classify_topology(graph: &FactorGraph) -> TopologyClass {
    let (nodes, adj) = graph.adjacency();
    let mut comp = vec![usize::MAX; nodes.len()];
    let mut components = Vec::new();
    for s in 0..nodes.len() {
        if comp[s] != usize::MAX {
            continue;
        }
        let id = components.len();
        let mut members = vec![s];
        comp[s] = id;
        let mut q = VecDeque::from([s]);
        while let Some(u) = q.pop_front() {
            for &w in &adj[u] {
                if comp[w] == usize::MAX {
                    comp[w] = id;
                    members.push(w);
                    q.push_back(w);
                }
            }
        }
        let degree_sum: usize = members.iter().map(|&m| adj[m].len()).sum();
        let edges = degree_sum / 2;
        let cycle_rank = edges + 1 - members.len();
        let kind = match cycle_rank {
            0 => TopologyKind::Forest,
            1 => TopologyKind::SingleLoopPlusForest,
            _ => TopologyKind::MultiLoop,
        };
        let mut variables = Vec::new();
        let mut factors = Vec::new();
        for &m in &members {
            match nodes[m] {
                Node::Var(v) => variables.push(v),
                Node::Factor(f) => factors.push(f),
            }
        }
        variables.sort_unstable();
        factors.sort_unstable();
        components.push(ComponentTopology {
            variables,
            factors,
            cycle_rank,
            kind,
        });
    }
    let kind = components
        .iter()
        .map(|c| c.kind)
        .max()
        .unwrap_or(TopologyKind::Forest);
    let total: usize = components.iter().map(|c| c.cycle_rank).sum();
    let loop_members = (total == 1).then(|| loop_edges(&nodes, &adj));
    TopologyClass {
        kind,
        components,
        loop_members,
    }
}

/// Strips degree-one nodes until only the cycle remains.
fn loop_edges(nodes: &[Node], adj: &[Vec<usize>]) -> Vec<(u32, u32)> {
    let mut degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut removed = vec![false; adj.len()];
    let mut q: VecDeque<usize> = (0..adj.len()).filter(|&i| degree[i] <= 1).collect();
    while let Some(u) = q.pop_front() {
        if removed[u] {
            continue;
        }
        removed[u] = true;
        for &w in &adj[u] {
            if !removed[w] {
                degree[w] -= 1;
                if degree[w] == 1 {
                    q.push_back(w);
                }
            }
        }
    }
    let mut edges = Vec::new();
    for (u, ns) in adj.iter().enumerate() {
        if removed[u] {
            continue;
        }
        if let Node::Factor(f) = nodes[u] {
            for &w in ns {
                if let (false, Node::Var(v)) = (removed[w], nodes[w]) {
                    edges.push((f, v));
                }
            }
        }
    }
    edges.sort_unstable();
    edges
}

/// Canonical directed-edge order shared by every stacked object.
///
/// `f2v` edges `(n, i)` ascend on `n` then `i`; `v2f` edges `(j, n)` ascend
/// on `j` then `n`. Offsets are into vectors stacked by target-variable
/// dimension. The `*_inputs` lists give, per edge, the positions of the
/// opposite-direction messages its update consumes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeIndex {
    pub f2v: Vec<(u32, u32)>,
    pub v2f: Vec<(u32, u32)>,
    pub f2v_offsets: Vec<usize>,
    pub v2f_offsets: Vec<usize>,
    pub f2v_dims: Vec<usize>,
    pub v2f_dims: Vec<usize>,
    /// For f2v `(n, i)`: positions of v2f `(j, n)`, `j ∈ B(f_n) ∖ i`.
    pub f2v_inputs: Vec<Vec<usize>>,
    /// For v2f `(j, n)`: positions of f2v `(k, j)`, `f_k ∈ B(j) ∖ f_n`.
    pub v2f_inputs: Vec<Vec<usize>>,
    f2v_pos: HashMap<(u32, u32), usize>,
    v2f_pos: HashMap<(u32, u32), usize>,
}

impl EdgeIndex {
    pub fn f2v_position(&self, factor: u32, var: u32) -> Option<usize> {
        self.f2v_pos.get(&(factor, var)).copied()
    }

    pub fn v2f_position(&self, var: u32, factor: u32) -> Option<usize> {
        self.v2f_pos.get(&(var, factor)).copied()
    }

    pub fn f2v_total_dim(&self) -> usize {
        self.f2v_dims.iter().sum()
    }

    pub fn v2f_total_dim(&self) -> usize {
        self.v2f_dims.iter().sum()
    }
}

pub fn canonical_edge_order(graph: &FactorGraph) -> EdgeIndex {
    let mut f2v = Vec::with_capacity(graph.num_edges());
    for n in graph.factors() {
        for &i in graph.factor_neighbors(n) {
            f2v.push((n, i));
        }
    }
    let mut v2f = Vec::with_capacity(graph.num_edges());
    for j in graph.variables() {
        for &n in graph.var_neighbors(j) {
            v2f.push((j, n));
        }
    }
    let f2v_pos: HashMap<(u32, u32), usize> =
        f2v.iter().enumerate().map(|(p, &e)| (e, p)).collect();
    let v2f_pos: HashMap<(u32, u32), usize> =
        v2f.iter().enumerate().map(|(p, &e)| (e, p)).collect();
    let f2v_dims: Vec<usize> = f2v.iter().map(|&(_, i)| graph.dim(i)).collect();
    let v2f_dims: Vec<usize> = v2f.iter().map(|&(j, _)| graph.dim(j)).collect();
    let prefix = |dims: &[usize]| {
        dims.iter()
            .scan(0usize, |acc, d| {
                let off = *acc;
                *acc += d;
                Some(off)
            })
            .collect::<Vec<_>>()
    };
    let f2v_inputs = f2v
        .iter()
        .map(|&(n, i)| {
            graph
                .factor_neighbors(n)
                .iter()
                .filter(|&&j| j != i)
                .map(|&j| v2f_pos[&(j, n)])
                .collect()
        })
        .collect();
    let v2f_inputs = v2f
        .iter()
        .map(|&(j, n)| {
            graph
                .var_neighbors(j)
                .iter()
                .filter(|&&k| k != n)
                .map(|&k| f2v_pos[&(k, j)])
                .collect()
        })
        .collect();
    EdgeIndex {
        f2v_offsets: prefix(&f2v_dims),
        v2f_offsets: prefix(&v2f_dims),
        f2v,
        v2f,
        f2v_dims,
        v2f_dims,
        f2v_inputs,
        v2f_inputs,
        f2v_pos,
        v2f_pos,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FactorSpec, VariableSpec};
    use nalgebra::{DMatrix, DVector};

    /// Scalar model with the given factor scopes over variables `1..=m`.
    pub(crate) fn scoped_model(m: u32, scopes: &[(u32, &[u32])]) -> LinearGaussianModel {
        let variables = (1..=m)
            .map(|id| VariableSpec {
                id,
                dim: 1,
                prior_cov: DMatrix::identity(1, 1),
            })
            .collect();
        let factors = scopes
            .iter()
            .map(|&(id, scope)| FactorSpec {
                id,
                scope: scope.to_vec(),
                coeff: scope
                    .iter()
                    .map(|&v| (v, DMatrix::identity(1, 1)))
                    .collect(),
                noise_cov: DMatrix::identity(1, 1),
                obs: DVector::zeros(1),
            })
            .collect();
        LinearGaussianModel::new(variables, factors)
    }

    fn fig1() -> LinearGaussianModel {
        scoped_model(
            4,
            &[
                (1, &[1, 2]),
                (2, &[1, 2, 3, 4]),
                (3, &[2, 3, 4]),
                (4, &[2, 3, 4]),
            ],
        )
    }

    #[test]
    fn fig1_factor_graph_and_order() {
        let g = build_factor_graph(&fig1()).unwrap();
        assert_eq!(g.factor_neighbors(2), &[1, 2, 3, 4]);
        assert_eq!(g.var_neighbors(1), &[1, 2]);
        let idx = canonical_edge_order(&g);
        // ascending on n then on i
        let expected = vec![
            (1, 1),
            (1, 2),
            (2, 1),
            (2, 2),
            (2, 3),
            (2, 4),
            (3, 2),
            (3, 3),
            (3, 4),
            (4, 2),
            (4, 3),
            (4, 4),
        ];
        assert_eq!(idx.f2v, expected);
        assert_eq!(idx.f2v_offsets, (0..12).collect::<Vec<_>>());
        assert_eq!(classify_topology(&g).kind, TopologyKind::MultiLoop);
    }

    #[test]
    fn single_agent_graph() {
        let g = build_factor_graph(&scoped_model(1, &[(1, &[1])])).unwrap();
        assert_eq!(g.factor_neighbors(1), &[1]);
        assert_eq!(g.var_neighbors(1), &[1]);
        let idx = canonical_edge_order(&g);
        assert_eq!(idx.f2v, vec![(1, 1)]);
        assert_eq!(idx.f2v_inputs, vec![Vec::<usize>::new()]);
        assert_eq!(classify_topology(&g).kind, TopologyKind::Forest);
    }

    #[test]
    fn two_agent_network_is_a_single_loop() {
        let g = build_factor_graph(&scoped_model(2, &[(1, &[1, 2]), (2, &[1, 2])])).unwrap();
        assert_eq!(g.var_neighbors(1).len(), 2);
        assert_eq!(g.var_neighbors(2).len(), 2);
        let t = classify_topology(&g);
        assert_eq!(t.kind, TopologyKind::SingleLoopPlusForest);
        assert_eq!(
            t.loop_members.unwrap(),
            vec![(1, 1), (1, 2), (2, 1), (2, 2)]
        );
    }

    #[test]
    fn disconnected_components_report_worst_class() {
        let g = build_factor_graph(&scoped_model(
            5,
            &[(1, &[1, 2]), (2, &[1, 2]), (3, &[3]), (4, &[4, 5])],
        ))
        .unwrap();
        let t = classify_topology(&g);
        assert_eq!(t.components.len(), 3);
        assert_eq!(t.kind, TopologyKind::SingleLoopPlusForest);
        assert!(t.loop_members.is_some());
    }

    #[test]
    fn edge_index_inputs_and_lookup() {
        let g = build_factor_graph(&fig1()).unwrap();
        let idx = canonical_edge_order(&g);
        for (p, &(n, i)) in idx.f2v.iter().enumerate() {
            assert_eq!(idx.f2v_position(n, i), Some(p));
            assert_eq!(idx.f2v_inputs[p].len(), g.factor_neighbors(n).len() - 1);
        }
        for (p, &(j, n)) in idx.v2f.iter().enumerate() {
            assert_eq!(idx.v2f_position(j, n), Some(p));
        }
    }

    #[test]
    fn dot_export_shapes() {
        let g = build_factor_graph(&fig1()).unwrap();
        let dot = g.to_dot();
        assert!(dot.contains("x1 [shape=circle"));
        assert!(dot.contains("f2 [shape=square"));
        assert!(dot.contains("f2 -- x4;"));
    }

    #[test]
    fn diameter_of_chain() {
        // x1 - f1 - x2 - f2 - x3
        let g = build_factor_graph(&scoped_model(3, &[(1, &[1, 2]), (2, &[2, 3])])).unwrap();
        assert_eq!(g.diameter(), 4);
    }
}
