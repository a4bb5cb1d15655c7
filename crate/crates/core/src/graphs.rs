//! Relation graphs, random connection graphs built directly or by
//! exploration, cluster partitions and connection events.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dominating::{reserved_id, sample_dominating, PairMarkOracle};
use crate::error::{Error, Result};
use crate::geometry::{spatial_diameter, CubeOrdering, GridIndex, MarkedPoint, OrderScheme, PointId, Window};
use crate::model::{InteractionModel, ReferenceMeasure};
use crate::prf::{replication_seed, stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphOrigin {
    Direct,
    Exploration,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RcmGraph {
    pub vertices: Vec<MarkedPoint>,
    /// Vertex index pairs with `a < b`, sorted.
    pub edges: Vec<(usize, usize)>,
    pub origin: GraphOrigin,
}

impl RcmGraph {
    fn new(vertices: Vec<MarkedPoint>, mut edges: Vec<(usize, usize)>, origin: GraphOrigin) -> Self {
        for e in edges.iter_mut() {
            if e.0 > e.1 {
                *e = (e.1, e.0);
            }
        }
        edges.sort_unstable();
        edges.dedup();
        RcmGraph { vertices, edges, origin }
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn index_of(&self, id: PointId) -> Option<usize> {
        self.vertices.iter().position(|p| p.id == id)
    }

    pub fn has_edge(&self, a: PointId, b: PointId) -> bool {
        match (self.index_of(a), self.index_of(b)) {
            (Some(i), Some(j)) => self.edges.binary_search(&(i.min(j), i.max(j))).is_ok(),
            _ => false,
        }
    }

    /// Edges as id pairs, each pair ordered by id.
    pub fn id_edges(&self) -> BTreeSet<(PointId, PointId)> {
        self.edges
            .iter()
            .map(|&(a, b)| {
                let (x, y) = (self.vertices[a].id, self.vertices[b].id);
                (x.min(y), x.max(y))
            })
            .collect()
    }

    pub fn clusters(&self) -> ClusterPartition {
        ClusterPartition::from_edges(self.vertices.len(), &self.edges)
    }
}

/// Connected components, computed with a union-find structure.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterPartition {
    label: Vec<usize>,
}

impl ClusterPartition {
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut parent: Vec<usize> = (0..n).collect();
        let mut size = vec![1usize; n];
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for &(a, b) in edges {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                let (big, small) = if size[ra] >= size[rb] { (ra, rb) } else { (rb, ra) };
                parent[small] = big;
                size[big] += size[small];
            }
        }
        let label = (0..n).map(|i| find(&mut parent, i)).collect();
        ClusterPartition { label }
    }

    pub fn len(&self) -> usize {
        self.label.len()
    }

    pub fn is_empty(&self) -> bool {
        self.label.is_empty()
    }

    /// Representative of the cluster holding vertex `i`.
    pub fn cluster_of(&self, i: usize) -> usize {
        self.label[i]
    }

    pub fn same_cluster(&self, i: usize, j: usize) -> bool {
        self.label[i] == self.label[j]
    }

    /// Clusters as sorted vertex lists, ordered by their smallest vertex.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut by_root: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for (i, &r) in self.label.iter().enumerate() {
            by_root.entry(r).or_default().push(i);
        }
        let mut out: Vec<Vec<usize>> = by_root.into_values().collect();
        out.sort_by_key(|c| c[0]);
        out
    }

    pub fn largest(&self) -> usize {
        self.components().iter().map(|c| c.len()).max().unwrap_or(0)
    }
}

fn grid_side(model: &InteractionModel) -> f64 {
    let r = model.interaction_range();
    if r > 0.0 && r.is_finite() {
        r
    } else {
        1.0
    }
}

/// Graph of the local relation `~` on a point set.
pub fn build_relation_graph(model: &InteractionModel, points: &[MarkedPoint]) -> Result<RcmGraph> {
    let range = model.interaction_range();
    let dim = points.first().map(|p| p.dim()).unwrap_or(1);
    let index = GridIndex::build(dim, points.iter().map(|p| p.position.as_slice()), grid_side(model));
    let mut edges = Vec::new();
    for (i, x) in points.iter().enumerate() {
        let mut err = None;
        index.candidates(&x.position, range, |j| {
            if j > i && err.is_none() {
                match model.relation_holds(x.view(), points[j].view()) {
                    Ok(true) => edges.push((i, j)),
                    Ok(false) => {}
                    Err(e) => err = Some(e),
                }
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
    }
    Ok(RcmGraph::new(points.to_vec(), edges, GraphOrigin::Direct))
}

/// The random connection graph `Gamma(phi, psi)`: an edge joins `x` in `phi`
/// to an earlier `y` (every point of `psi` comes first) when
/// `r_{x,y} <= pi(x, y)`. Vertices are `phi` followed by `psi`.
pub fn realize_rcm(
    model: &InteractionModel,
    phi: &[MarkedPoint],
    psi: &[MarkedPoint],
    oracle: &PairMarkOracle,
    ordering: &CubeOrdering,
) -> Result<RcmGraph> {
    if !model.is_pairwise() {
        return Err(Error::Unsupported("random connection graphs need a pair potential".into()));
    }
    let n = phi.len();
    let mut vertices: Vec<MarkedPoint> = phi.to_vec();
    vertices.extend_from_slice(psi);
    let mut edges = Vec::new();
    if model.is_trivial() || vertices.is_empty() {
        return Ok(RcmGraph::new(vertices, edges, GraphOrigin::Direct));
    }
    let order = ordering.sort_indices(phi);
    let mut rank = vec![0usize; n];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    let range = model.interaction_range();
    let index = GridIndex::build(vertices[0].dim(), vertices.iter().map(|p| p.position.as_slice()), grid_side(model));
    for (i, x) in phi.iter().enumerate() {
        index.candidates(&x.position, range, |j| {
            let earlier = j >= n || rank[j] < rank[i];
            if earlier {
                let y = &vertices[j];
                let pi = model.pi(x.view(), y.view());
                if pi > 0.0 && oracle.mark(x.id, y.id) <= pi {
                    edges.push((i, j));
                }
            }
        });
    }
    Ok(RcmGraph::new(vertices, edges, GraphOrigin::Direct))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepCase {
    /// Unexplored points were reached from the previous layer.
    Success,
    /// Nothing was reached; a new cluster starts at the smallest unexplored point.
    Failure,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplorationStep {
    pub k: usize,
    pub nu: Vec<PointId>,
    pub explored: Vec<PointId>,
    /// Reference point `x_k`: the start of the current cluster.
    pub reference: Option<PointId>,
    pub case: StepCase,
    /// Ordered pairs `(x, y)` whose mark `r_{x,y}` produced an edge.
    pub consumed: Vec<(PointId, PointId)>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExplorationTrace {
    pub steps: Vec<ExplorationStep>,
}

/// A frontier point: either a point of `phi` or one of the initial set `nu`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Node {
    Phi(usize),
    Nu(usize),
}

pub(crate) enum Step {
    Layer { frontier: Vec<Node>, layer: Vec<usize> },
    Start { frontier: Vec<Node>, x: usize },
    Done,
}

/// Layer-by-layer exploration of the random connection graph from `nu`.
/// Each pair mark is read at most once: when the later point of the pair
/// is first examined against the earlier one.
pub(crate) struct Explorer<'a> {
    model: &'a InteractionModel,
    oracle: &'a PairMarkOracle,
    pub(crate) phi: &'a [MarkedPoint],
    nu: &'a [MarkedPoint],
    psi: &'a [MarkedPoint],
    psi_rest: Vec<usize>,
    pub(crate) rank: Vec<usize>,
    order: Vec<usize>,
    pub(crate) explored: Vec<bool>,
    cursor: usize,
    index: GridIndex,
    frontier: Vec<Node>,
    first: bool,
    pub(crate) edges: Vec<(usize, usize)>,
    pub(crate) trace: ExplorationTrace,
    reference: Option<PointId>,
}

impl<'a> Explorer<'a> {
    pub(crate) fn new(
        model: &'a InteractionModel,
        oracle: &'a PairMarkOracle,
        phi: &'a [MarkedPoint],
        nu: &'a [MarkedPoint],
        psi: &'a [MarkedPoint],
        ordering: &CubeOrdering,
    ) -> Result<Self> {
        if !model.is_pairwise() {
            return Err(Error::Unsupported("exploration needs a pair potential".into()));
        }
        let order = ordering.sort_indices(phi);
        let mut rank = vec![0usize; phi.len()];
        for (r, &i) in order.iter().enumerate() {
            rank[i] = r;
        }
        let nu_ids: BTreeSet<PointId> = nu.iter().map(|p| p.id).collect();
        let psi_rest = (0..psi.len()).filter(|&i| !nu_ids.contains(&psi[i].id)).collect();
        let dim = phi.first().or(nu.first()).or(psi.first()).map_or(1, |p| p.dim());
        let index = GridIndex::build(dim, phi.iter().map(|p| p.position.as_slice()), grid_side(model));
        Ok(Explorer {
            model,
            oracle,
            phi,
            nu,
            psi,
            psi_rest,
            rank,
            order,
            explored: vec![false; phi.len()],
            cursor: 0,
            index,
            frontier: (0..nu.len()).map(Node::Nu).collect(),
            first: true,
            edges: Vec::new(),
            trace: ExplorationTrace::default(),
            reference: None,
        })
    }

    pub(crate) fn node(&self, n: Node) -> &'a MarkedPoint {
        match n {
            Node::Phi(i) => &self.phi[i],
            Node::Nu(i) => &self.nu[i],
        }
    }

    pub(crate) fn psi_rest(&self) -> impl Iterator<Item = &'a MarkedPoint> + '_ {
        self.psi_rest.iter().map(|&i| &self.psi[i])
    }

    fn edge_to(&self, x: usize, y: &MarkedPoint) -> bool {
        let pi = self.model.pi(self.phi[x].view(), y.view());
        pi > 0.0 && self.oracle.mark(self.phi[x].id, y.id) <= pi
    }

    fn psi_vertex(&self, i: usize) -> usize {
        self.phi.len() + i
    }

    pub(crate) fn next_step(&mut self) -> Step {
        let frontier = std::mem::take(&mut self.frontier);
        let k = self.trace.steps.len() + 1;
        let range = self.model.interaction_range();
        let mut layer: Vec<usize> = Vec::new();
        let mut consumed = Vec::new();
        let mut new_edges = Vec::new();
        if range > 0.0 {
            let mut seen = BTreeSet::new();
            for &node in &frontier {
                let y = self.node(node);
                let mut hits = Vec::new();
                self.index.candidates(&y.position, range, |j| {
                    if !self.explored[j] && self.edge_to(j, y) {
                        hits.push(j);
                    }
                });
                for j in hits {
                    seen.insert(j);
                    if let Node::Phi(yi) = node {
                        new_edges.push((j, yi));
                        consumed.push((self.phi[j].id, y.id));
                    }
                }
            }
            layer = seen.into_iter().collect();
            layer.sort_by_key(|&j| self.rank[j]);
        }

        if !layer.is_empty() {
            // boundary edges: all of psi on the first step, psi minus nu later
            let boundary: Vec<usize> =
                if self.first { (0..self.psi.len()).collect() } else { self.psi_rest.clone() };
            for (a, &x) in layer.iter().enumerate() {
                for &b in &boundary {
                    if self.edge_to(x, &self.psi[b]) {
                        new_edges.push((x, self.psi_vertex(b)));
                        consumed.push((self.phi[x].id, self.psi[b].id));
                    }
                }
                for &y in &layer[..a] {
                    if self.edge_to(x, &self.phi[y]) {
                        new_edges.push((x, y));
                        consumed.push((self.phi[x].id, self.phi[y].id));
                    }
                }
            }
            for &x in &layer {
                self.explored[x] = true;
            }
            self.edges.extend(new_edges);
            self.trace.steps.push(ExplorationStep {
                k,
                nu: frontier.iter().map(|&n| self.node(n).id).collect(),
                explored: layer.iter().map(|&x| self.phi[x].id).collect(),
                reference: self.reference,
                case: StepCase::Success,
                consumed,
            });
            self.first = false;
            self.frontier = layer.iter().map(|&x| Node::Phi(x)).collect();
            return Step::Layer { frontier, layer };
        }

        while self.cursor < self.order.len() && self.explored[self.order[self.cursor]] {
            self.cursor += 1;
        }
        if self.cursor == self.order.len() {
            self.frontier = frontier;
            return Step::Done;
        }
        let x = self.order[self.cursor];
        self.explored[x] = true;
        self.reference = Some(self.phi[x].id);
        let mut consumed = Vec::new();
        for b in self.psi_rest.clone() {
            if self.edge_to(x, &self.psi[b]) {
                self.edges.push((x, self.psi_vertex(b)));
                consumed.push((self.phi[x].id, self.psi[b].id));
            }
        }
        self.trace.steps.push(ExplorationStep {
            k,
            nu: frontier.iter().map(|&n| self.node(n).id).collect(),
            explored: vec![self.phi[x].id],
            reference: self.reference,
            case: StepCase::Failure,
            consumed,
        });
        self.first = false;
        self.frontier = vec![Node::Phi(x)];
        Step::Start { frontier, x }
    }

    pub(crate) fn into_graph(self) -> (RcmGraph, ExplorationTrace) {
        let mut vertices = self.phi.to_vec();
        vertices.extend_from_slice(self.psi);
        (RcmGraph::new(vertices, self.edges, GraphOrigin::Exploration), self.trace)
    }
}

/// Explore the random connection graph on `phi` with boundary `psi`,
/// starting from `nu`. Clusters reached from `nu` come first; the rest are
/// explored one by one from their smallest point. The resulting graph has
/// the law of `realize_rcm(phi, psi)`.
pub fn explore_rcm(
    model: &InteractionModel,
    phi: &[MarkedPoint],
    nu: &[MarkedPoint],
    psi: &[MarkedPoint],
    oracle: &PairMarkOracle,
    ordering: &CubeOrdering,
) -> Result<(RcmGraph, ExplorationTrace)> {
    let mut ex = Explorer::new(model, oracle, phi, nu, psi, ordering)?;
    while !matches!(ex.next_step(), Step::Done) {}
    Ok(ex.into_graph())
}

/// Whether some vertex inside `a` shares a cluster with a vertex of `b`.
pub fn connection_event(graph: &RcmGraph, a: &Window, b: &BTreeSet<PointId>) -> bool {
    let clusters = graph.clusters();
    let targets: BTreeSet<usize> =
        (0..graph.vertices.len()).filter(|&i| b.contains(&graph.vertices[i].id)).map(|i| clusters.cluster_of(i)).collect();
    (0..graph.vertices.len())
        .any(|i| a.contains(&graph.vertices[i].position) && targets.contains(&clusters.cluster_of(i)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    Relation,
    Rcm,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub r: f64,
    pub p_hat: f64,
    pub stderr: f64,
    pub reps: usize,
}

const TAG_PLANTED: u64 = 0x91a7;

/// Diameter of the cluster of a point planted at the window center.
pub fn planted_cluster_diameter(
    model: &InteractionModel,
    kind: GraphKind,
    window: &Window,
    reference: &ReferenceMeasure,
    seed: u64,
    cell_side: f64,
) -> Result<f64> {
    let config = sample_dominating(window, reference, seed, cell_side)?;
    let mut rng = stream(&[seed, TAG_PLANTED]);
    let planted = MarkedPoint::new(window.center.clone(), reference.mark_law.sample(&mut rng), reserved_id(seed, TAG_PLANTED));
    let graph = match kind {
        GraphKind::Rcm => {
            let ordering = CubeOrdering::new(&config.window, cell_side, OrderScheme::Raster)?;
            realize_rcm(model, config.points(), std::slice::from_ref(&planted), &config.oracle(), &ordering)?
        }
        GraphKind::Relation => {
            let mut pts = config.points().to_vec();
            pts.push(planted.clone());
            build_relation_graph(model, &pts)?
        }
    };
    let root = graph.index_of(planted.id).expect("planted vertex");
    let clusters = graph.clusters();
    let members: Vec<&[f64]> = (0..graph.vertices.len())
        .filter(|&i| clusters.same_cluster(i, root))
        .map(|i| graph.vertices[i].position.as_slice())
        .collect();
    spatial_diameter(&members)
}

/// Exceedance probabilities `P(diam C(o) > r)` of the planted cluster.
#[allow(clippy::too_many_arguments)]
pub fn diameter_tail(
    model: &InteractionModel,
    kind: GraphKind,
    window: &Window,
    reference: &ReferenceMeasure,
    r_grid: &[f64],
    reps: usize,
    seed: u64,
    cell_side: f64,
) -> Result<Vec<TailRow>> {
    if reps == 0 || r_grid.is_empty() {
        return Err(Error::InsufficientData("empty radius grid or zero replications".into()));
    }
    let half = window.sides.iter().cloned().fold(f64::INFINITY, f64::min) / 2.0;
    let r_max = r_grid.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if r_max >= half {
        return Err(Error::Boundary(format!("largest radius {r_max} reaches half the window side {half}")));
    }
    let diam: Vec<f64> = (0..reps as u64)
        .into_par_iter()
        .map(|r| planted_cluster_diameter(model, kind, window, reference, replication_seed(seed, r), cell_side))
        .collect::<Result<_>>()?;
    Ok(r_grid
        .iter()
        .map(|&r| {
            let p = diam.iter().filter(|&&d| d > r).count() as f64 / reps as f64;
            TailRow { r, p_hat: p, stderr: (p * (1.0 - p) / reps as f64).sqrt(), reps }
        })
        .collect())
}

/// Whether a point of `phi` inside `probe` is connected to `nu` in the
/// graph of `phi + nu`: the relation graph, or the random connection graph
/// with `nu` as boundary.
pub fn probe_connection(
    model: &InteractionModel,
    kind: GraphKind,
    phi: &[MarkedPoint],
    nu: &[MarkedPoint],
    probe: &Window,
    oracle: &PairMarkOracle,
    ordering: &CubeOrdering,
) -> Result<bool> {
    let graph = match kind {
        GraphKind::Rcm => realize_rcm(model, phi, nu, oracle, ordering)?,
        GraphKind::Relation => {
            let mut pts = phi.to_vec();
            pts.extend_from_slice(nu);
            build_relation_graph(model, &pts)?
        }
    };
    let nu_ids: BTreeSet<PointId> = nu.iter().map(|p| p.id).collect();
    let phi_ids: BTreeSet<PointId> = phi.iter().map(|p| p.id).collect();
    let clusters = graph.clusters();
    let targets: BTreeSet<usize> =
        (0..graph.vertices.len()).filter(|&i| nu_ids.contains(&graph.vertices[i].id)).map(|i| clusters.cluster_of(i)).collect();
    Ok((0..graph.vertices.len()).any(|i| {
        let v = &graph.vertices[i];
        phi_ids.contains(&v.id) && probe.contains(&v.position) && targets.contains(&clusters.cluster_of(i))
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConnectionEstimate {
    pub p_hat: f64,
    pub stderr: f64,
    pub reps: usize,
}

/// Probability that the dominating points in `probe` connect to those of
/// `outer \ inner`, the graph restricted to points of `outer`.
#[allow(clippy::too_many_arguments)]
pub fn nested_connection_probability(
    model: &InteractionModel,
    kind: GraphKind,
    inner: &Window,
    outer: &Window,
    probe: &Window,
    reference: &ReferenceMeasure,
    reps: usize,
    seed: u64,
    cell_side: f64,
) -> Result<ConnectionEstimate> {
    if reps == 0 {
        return Err(Error::InsufficientData("zero replications".into()));
    }
    let hits: Vec<bool> = (0..reps as u64)
        .into_par_iter()
        .map(|r| -> Result<bool> {
            let config = sample_dominating(outer, reference, replication_seed(seed, r), cell_side)?;
            let inner_cfg = config.restrict(inner)?;
            let ordering = CubeOrdering::new(&config.window, cell_side, OrderScheme::OutsideIn)?;
            let shell: Vec<MarkedPoint> =
                config.points().iter().filter(|p| !inner_cfg.window.contains(&p.position)).cloned().collect();
            probe_connection(model, kind, inner_cfg.points(), &shell, probe, &config.oracle(), &ordering)
        })
        .collect::<Result<_>>()?;
    let p = hits.iter().filter(|&&h| h).count() as f64 / reps as f64;
    Ok(ConnectionEstimate { p_hat: p, stderr: (p * (1.0 - p) / reps as f64).sqrt(), reps })
}
