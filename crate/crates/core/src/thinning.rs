//! Thinning maps from the dominating process to the Gibbs process: the
//! standard embedding, cluster-based thinning for local relations, the
//! random-connection embedding and its cluster-based version.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dominating::{sample_dominating, DominatingConfiguration, PairMarkOracle};
use crate::error::{Error, Result};
use crate::geometry::{distance2, CubeOrdering, GridIndex, MarkedPoint, OrderScheme, PointId, PointPattern, PointRef, Window};
use crate::graphs::{build_relation_graph, Explorer, Step};
use crate::model::{InteractionModel, LocalRule, ReferenceMeasure};
use crate::partition::{estimator_seed, LocalBoundary, LocalRatio, RatioEstimator};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Standard,
    Cluster,
    Rcm,
    RcmCluster,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub id: PointId,
    /// Retention probability; `None` when the decision was settled by the
    /// upper bound alone.
    pub retention: Option<f64>,
    /// Upper bound on the retention probability known before estimation.
    pub bound: f64,
    pub u: f64,
    pub kept: bool,
    pub step: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThinningResult {
    pub kept: PointPattern,
    pub decisions: Vec<Decision>,
    /// Smallest point of every cluster reached from the coupling set.
    pub touched_clusters: Vec<PointId>,
    /// All points of those clusters.
    pub touched_points: BTreeSet<PointId>,
}

impl ThinningResult {
    pub fn kept_ids(&self) -> BTreeSet<PointId> {
        self.kept.points.iter().map(|p| p.id).collect()
    }
}

/// Two thinnings of the same dominating configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingPair {
    pub first: ThinningResult,
    pub second: ThinningResult,
}

impl CouplingPair {
    pub fn symmetric_difference(&self) -> BTreeSet<PointId> {
        let a = self.first.kept_ids();
        let b = self.second.kept_ids();
        a.symmetric_difference(&b).copied().collect()
    }

    /// Whether every disagreement lies in a touched cluster of both runs.
    pub fn disagreement_is_contained(&self) -> bool {
        self.symmetric_difference()
            .iter()
            .all(|id| self.first.touched_points.contains(id) && self.second.touched_points.contains(id))
    }
}

/// Inputs shared by every thinning map.
#[derive(Clone, Copy)]
pub struct ThinningSetup<'a> {
    pub model: &'a InteractionModel,
    pub window: &'a Window,
    pub psi: &'a [MarkedPoint],
    pub config: &'a DominatingConfiguration,
    pub estimator: &'a RatioEstimator,
    pub ordering: &'a CubeOrdering,
}

impl<'a> ThinningSetup<'a> {
    fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.estimator.validate()?;
        if self.window.dim() != self.config.window.dim() {
            return Err(Error::Dimension { expected: self.config.window.dim(), found: self.window.dim() });
        }
        if !self.ordering.window().contains_window(self.window) {
            return Err(Error::Domain("ordering window does not cover the thinning window".into()));
        }
        for p in self.psi {
            if p.dim() != self.window.dim() {
                return Err(Error::Dimension { expected: self.window.dim(), found: p.dim() });
            }
        }
        if let InteractionModel::LocalRelation { rule: LocalRule::GermGrain, .. } = self.model {
            if self.config.points().iter().chain(self.psi).any(|p| p.mark.is_none()) {
                return Err(Error::Mark("germ-grain thinning needs radius marks on every point".into()));
            }
        }
        Ok(())
    }

    /// Dominating points inside the window with their retention marks.
    fn points(&self) -> (Vec<MarkedPoint>, Vec<f64>) {
        let mut pts = Vec::new();
        let mut us = Vec::new();
        for (p, &u) in self.config.points().iter().zip(&self.config.u_marks) {
            if self.window.contains(&p.position) {
                pts.push(p.clone());
                us.push(u);
            }
        }
        (pts, us)
    }

    fn seed_for(&self, id: PointId) -> u64 {
        estimator_seed(self.config.seed, id, 0)
    }

    fn oracle(&self) -> PairMarkOracle {
        self.config.oracle()
    }
}

fn ids_of(points: &[&MarkedPoint]) -> Vec<PointId> {
    points.iter().map(|p| p.id).collect()
}

fn views_of<'a>(points: &[&'a MarkedPoint]) -> Vec<PointRef<'a>> {
    points.iter().map(|p| p.view()).collect()
}

/// Standard retention `kappa(x, bd) * Z(bd + x) / Z(bd)` over `domain`.
fn decide_gibbs(
    s: &ThinningSetup,
    x: &MarkedPoint,
    u: f64,
    bd: &[&MarkedPoint],
    domain: &dyn Fn(PointRef) -> bool,
    step: usize,
) -> Result<Decision> {
    let kappa = s.model.papangelou(x.view(), &views_of(bd));
    if kappa == 0.0 || u > kappa {
        return Ok(Decision { id: x.id, retention: None, bound: kappa, u, kept: false, step });
    }
    let problem = LocalRatio { model: s.model, reference: &s.config.reference, region: s.window, domain, target: x.view() };
    let ratio = problem.estimate(LocalBoundary::uniform(views_of(bd)), (&ids_of(bd), &[]), s.estimator, s.seed_for(x.id))?;
    let p = (kappa * ratio.value).clamp(0.0, 1.0);
    Ok(Decision { id: x.id, retention: Some(p), bound: kappa, u, kept: u <= p, step })
}

fn sorted_indices(s: &ThinningSetup, pts: &[MarkedPoint]) -> (Vec<usize>, Vec<usize>) {
    let order = s.ordering.sort_indices(pts);
    let mut rank = vec![0usize; pts.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    (order, rank)
}

fn finish(kept: Vec<MarkedPoint>, dim: usize, decisions: Vec<Decision>) -> ThinningResult {
    ThinningResult {
        kept: PointPattern { dim, points: kept },
        decisions,
        touched_clusters: Vec::new(),
        touched_points: BTreeSet::new(),
    }
}

/// Visit the points in the cube-wise order and keep `x` when
/// `u_x <= kappa(x, psi + kept) Z(psi + kept + x) / Z(psi + kept)`, the
/// partition functions taken over the part of the window after `x`.
pub fn standard_embedding(s: &ThinningSetup) -> Result<ThinningResult> {
    s.validate()?;
    let (pts, us) = s.points();
    let (order, _) = sorted_indices(s, &pts);
    let mut kept: Vec<MarkedPoint> = Vec::new();
    let mut decisions = Vec::with_capacity(pts.len());
    for (step, &i) in order.iter().enumerate() {
        let x = &pts[i];
        let bd: Vec<&MarkedPoint> = s.psi.iter().chain(kept.iter()).collect();
        let domain = |y: PointRef| s.ordering.cmp_positions(y.pos, &x.position).is_gt();
        let d = decide_gibbs(s, x, us[i], &bd, &domain, step + 1)?;
        if d.kept {
            kept.push(x.clone());
        }
        decisions.push(d);
    }
    Ok(finish(kept, s.window.dim(), decisions))
}

/// Points within `reach` of `x`, or all of them when `reach` is infinite.
fn near<'a>(points: &[&'a MarkedPoint], x: &[f64], reach: f64) -> Vec<&'a MarkedPoint> {
    if !reach.is_finite() {
        return points.to_vec();
    }
    points.iter().copied().filter(|p| distance2(&p.position, x) <= reach * reach).collect()
}

fn decision_reach(s: &ThinningSetup, x: &[f64]) -> f64 {
    let range = s.model.interaction_range();
    match s.estimator.local_radius {
        Some(l) => l + range,
        None => s.window.max_distance_from(x) + range,
    }
}

fn touched_representatives(
    pts: &[MarkedPoint],
    rank: &[usize],
    touched: &BTreeSet<PointId>,
    edges_of: impl Fn() -> Result<Vec<(usize, usize)>>,
) -> Result<Vec<PointId>> {
    if touched.is_empty() {
        return Ok(Vec::new());
    }
    let partition = crate::graphs::ClusterPartition::from_edges(pts.len(), &edges_of()?);
    let mut reps = BTreeSet::new();
    for comp in partition.components() {
        if comp.iter().any(|&i| touched.contains(&pts[i].id)) {
            let first = comp.iter().copied().min_by_key(|&i| rank[i]).expect("non-empty cluster");
            reps.insert((rank[first], pts[first].id));
        }
    }
    Ok(reps.into_iter().map(|r| r.1).collect())
}

/// Cluster-based thinning for a local relation. Clusters of the relation
/// graph that neighbour `b` are thinned first, layer by layer; the remaining
/// clusters follow in the order of their smallest point. Changing the
/// boundary inside `b` only changes the thinning of the first group.
pub fn cluster_coupled_thinning(s: &ThinningSetup, b: &[MarkedPoint]) -> Result<ThinningResult> {
    s.validate()?;
    if matches!(s.model, InteractionModel::SoftPair { .. }) {
        return Err(Error::Unsupported("cluster thinning needs a finite-range relation".into()));
    }
    let model = s.model;
    let rel = |a: PointRef, c: PointRef| model.relation_holds(a, c).unwrap_or(true);
    let range = model.interaction_range();
    let (pts, us) = s.points();
    let (order, rank) = sorted_indices(s, &pts);
    let side = if range > 0.0 { range } else { 1.0 };
    let index = GridIndex::build(s.window.dim(), pts.iter().map(|p| p.position.as_slice()), side);

    let mut explored = vec![false; pts.len()];
    let mut closed: Vec<&MarkedPoint> = Vec::new();
    let mut frontier: Vec<&MarkedPoint> = b.iter().collect();
    let mut prefix: Option<usize> = None;
    let mut kept: Vec<MarkedPoint> = Vec::new();
    let mut decisions = Vec::with_capacity(pts.len());
    let mut touched = BTreeSet::new();
    let mut in_b_phase = true;
    let mut cursor = 0usize;
    let mut step = 0usize;

    loop {
        step += 1;
        if !frontier.is_empty() {
            let mut layer = BTreeSet::new();
            if range > 0.0 {
                for f in &frontier {
                    index.candidates(&f.position, range, |j| {
                        if !explored[j] && rel(f.view(), pts[j].view()) {
                            layer.insert(j);
                        }
                    });
                }
            }
            let mut layer: Vec<usize> = layer.into_iter().collect();
            layer.sort_by_key(|&j| rank[j]);
            for &j in &layer {
                explored[j] = true;
            }
            for &j in &layer {
                let x = &pts[j];
                let reach = decision_reach(s, &x.position);
                let near_closed = near(&closed, &x.position, reach);
                let near_frontier = near(&frontier, &x.position, reach);
                let start = prefix.map(|p| &pts[p]);
                let domain = |y: PointRef| {
                    if near_closed.iter().any(|c| rel(y, c.view())) {
                        return false;
                    }
                    if let Some(p) = start {
                        if !s.ordering.cmp_positions(y.pos, &p.position).is_gt() {
                            return false;
                        }
                    }
                    !near_frontier.iter().any(|f| rel(y, f.view()))
                        || s.ordering.cmp_positions(y.pos, &x.position).is_gt()
                };
                let bd: Vec<&MarkedPoint> = s.psi.iter().chain(kept.iter()).collect();
                let d = decide_gibbs(s, x, us[j], &bd, &domain, step)?;
                if d.kept {
                    kept.push(x.clone());
                }
                decisions.push(d);
                if in_b_phase {
                    touched.insert(x.id);
                }
            }
            closed.append(&mut frontier);
            frontier = layer.iter().map(|&j| &pts[j]).collect();
            continue;
        }
        in_b_phase = false;
        while cursor < order.len() && explored[order[cursor]] {
            cursor += 1;
        }
        if cursor == order.len() {
            break;
        }
        let i = order[cursor];
        explored[i] = true;
        let x = &pts[i];
        let reach = decision_reach(s, &x.position);
        let near_closed = near(&closed, &x.position, reach);
        let domain = |y: PointRef| {
            !near_closed.iter().any(|c| rel(y, c.view())) && s.ordering.cmp_positions(y.pos, &x.position).is_gt()
        };
        let bd: Vec<&MarkedPoint> = s.psi.iter().chain(kept.iter()).collect();
        let d = decide_gibbs(s, x, us[i], &bd, &domain, step)?;
        if d.kept {
            kept.push(x.clone());
        }
        decisions.push(d);
        prefix = Some(i);
        frontier = vec![x];
    }

    let reps = touched_representatives(&pts, &rank, &touched, || Ok(build_relation_graph(model, &pts)?.edges))?;
    let mut out = finish(kept, s.window.dim(), decisions);
    out.touched_clusters = reps;
    out.touched_points = touched;
    Ok(out)
}

fn has_edge(model: &InteractionModel, oracle: &PairMarkOracle, x: &MarkedPoint, bd: &[&MarkedPoint]) -> bool {
    bd.iter().any(|b| {
        let pi = model.pi(x.view(), b.view());
        pi > 0.0 && oracle.mark(x.id, b.id) <= pi
    })
}

fn require_pairwise(model: &InteractionModel) -> Result<()> {
    if model.is_pairwise() {
        Ok(())
    } else {
        Err(Error::Unsupported("random connection thinning needs a pair potential".into()))
    }
}

/// Random connection embedding: points joined to the boundary or to an
/// earlier kept point are removed outright; otherwise `x` is kept when
/// `u_x <= Z(bd + x) / Z(bd)` with `bd = psi + kept`.
pub fn rcm_embedding(s: &ThinningSetup) -> Result<ThinningResult> {
    s.validate()?;
    require_pairwise(s.model)?;
    let oracle = s.oracle();
    let (pts, us) = s.points();
    let (order, _) = sorted_indices(s, &pts);
    let mut kept: Vec<MarkedPoint> = Vec::new();
    let mut decisions = Vec::with_capacity(pts.len());
    for (step, &i) in order.iter().enumerate() {
        let x = &pts[i];
        let bd: Vec<&MarkedPoint> = s.psi.iter().chain(kept.iter()).collect();
        let d = if has_edge(s.model, &oracle, x, &bd) {
            Decision { id: x.id, retention: Some(0.0), bound: 0.0, u: us[i], kept: false, step: step + 1 }
        } else {
            let domain = |y: PointRef| s.ordering.cmp_positions(y.pos, &x.position).is_gt();
            let problem =
                LocalRatio { model: s.model, reference: &s.config.reference, region: s.window, domain: &domain, target: x.view() };
            let ratio =
                problem.estimate(LocalBoundary::uniform(views_of(&bd)), (&ids_of(&bd), &[]), s.estimator, s.seed_for(x.id))?;
            Decision { id: x.id, retention: Some(ratio.value), bound: 1.0, u: us[i], kept: us[i] <= ratio.value, step: step + 1 }
        };
        if d.kept {
            kept.push(x.clone());
        }
        decisions.push(d);
    }
    Ok(finish(kept, s.window.dim(), decisions))
}

/// Cluster-based thinning of the random connection model started from
/// `nu`. The graph is explored layer by layer from `nu`; after each layer
/// the unexplored points form a Poisson process whose intensity is thinned
/// by every explored point, which enters the remaining partition functions
/// as a soft boundary. Boundary points in `nu` only reach the clusters
/// connected to `nu`.
pub fn rcm_cluster_coupled(s: &ThinningSetup, nu: &[MarkedPoint]) -> Result<ThinningResult> {
    s.validate()?;
    require_pairwise(s.model)?;
    let oracle = s.oracle();
    let (pts, us) = s.points();
    let us_by_id: std::collections::HashMap<PointId, f64> = pts.iter().map(|p| p.id).zip(us.iter().copied()).collect();
    let mut ex = Explorer::new(s.model, &oracle, &pts, nu, s.psi, s.ordering)?;

    // points whose influence enters as reduced intensity of the unexplored region
    let mut soft: Vec<&MarkedPoint> = Vec::new();
    let mut xi_prev: Vec<MarkedPoint> = Vec::new();
    let mut start: Option<usize> = None;
    let mut first = true;
    let mut kept: Vec<MarkedPoint> = Vec::new();
    let mut decisions = Vec::with_capacity(pts.len());
    let mut touched = BTreeSet::new();
    let mut in_nu_phase = true;
    let psi_rest: Vec<&MarkedPoint> = ex.psi_rest().collect();
    let mut step = 0usize;

    loop {
        step += 1;
        match ex.next_step() {
            Step::Done => break,
            Step::Layer { frontier, layer } => {
                let frontier_pts: Vec<&MarkedPoint> = frontier.iter().map(|&n| ex.node(n)).collect();
                let base: Vec<&MarkedPoint> =
                    if first { s.psi.iter().collect() } else { psi_rest.iter().copied().chain(xi_prev.iter()).collect() };
                let mut layer_kept: Vec<MarkedPoint> = Vec::new();
                for &j in &layer {
                    let x = &pts[j];
                    let u = us_by_id[&x.id];
                    let bd: Vec<&MarkedPoint> = base.iter().copied().chain(layer_kept.iter()).collect();
                    let d = if has_edge(s.model, &oracle, x, &bd) {
                        Decision { id: x.id, retention: Some(0.0), bound: 0.0, u, kept: false, step }
                    } else {
                        let bd_ids: BTreeSet<PointId> = bd.iter().map(|p| p.id).collect();
                        let common: Vec<&MarkedPoint> = soft.iter().copied().chain(bd.iter().copied()).collect();
                        let before: Vec<&MarkedPoint> =
                            frontier_pts.iter().copied().filter(|p| !bd_ids.contains(&p.id)).collect();
                        let p = soft_ratio(s, x, start.map(|i| &pts[i]), &common, &before)?;
                        Decision { id: x.id, retention: Some(p), bound: 1.0, u, kept: u <= p, step }
                    };
                    if d.kept {
                        layer_kept.push(x.clone());
                    }
                    decisions.push(d);
                    if in_nu_phase {
                        touched.insert(x.id);
                    }
                }
                kept.extend(layer_kept.iter().cloned());
                xi_prev = layer_kept;
                soft.extend(frontier_pts);
            }
            Step::Start { frontier, x: i } => {
                in_nu_phase = false;
                soft.extend(frontier.iter().map(|&n| ex.node(n)));
                let x = &pts[i];
                let u = us_by_id[&x.id];
                let d = if has_edge(s.model, &oracle, x, &psi_rest) {
                    Decision { id: x.id, retention: Some(0.0), bound: 0.0, u, kept: false, step }
                } else {
                    let common: Vec<&MarkedPoint> = soft.iter().copied().chain(psi_rest.iter().copied()).collect();
                    let p = soft_ratio(s, x, Some(x), &common, &[])?;
                    Decision { id: x.id, retention: Some(p), bound: 1.0, u, kept: u <= p, step }
                };
                xi_prev.clear();
                if d.kept {
                    kept.push(x.clone());
                    xi_prev.push(x.clone());
                }
                decisions.push(d);
                start = Some(i);
            }
        }
        first = false;
    }

    let (_, rank) = sorted_indices(s, &pts);
    let n = pts.len();
    let edges: Vec<(usize, usize)> = ex.edges.iter().copied().filter(|&(a, b)| a < n && b < n).collect();
    let reps = touched_representatives(&pts, &rank, &touched, || Ok(edges.clone()))?;
    let mut out = finish(kept, s.window.dim(), decisions);
    out.touched_clusters = reps;
    out.touched_points = touched;
    Ok(out)
}

/// Ratio over the window part after `start` (all of it when `None`), with
/// `common` acting on every sampled point and `before` only on sampled
/// points ordered before `x`.
fn soft_ratio(
    s: &ThinningSetup,
    x: &MarkedPoint,
    start: Option<&MarkedPoint>,
    common: &[&MarkedPoint],
    before: &[&MarkedPoint],
) -> Result<f64> {
    let reach = decision_reach(s, &x.position);
    let common = near(common, &x.position, reach);
    let before = near(before, &x.position, reach);
    let domain = |y: PointRef| match start {
        Some(p) => s.ordering.cmp_positions(y.pos, &p.position).is_gt(),
        None => true,
    };
    let problem = LocalRatio { model: s.model, reference: &s.config.reference, region: s.window, domain: &domain, target: x.view() };
    let boundary = LocalBoundary { common: views_of(&common), before: views_of(&before), ordering: Some(s.ordering) };
    let est = problem.estimate(boundary, (&ids_of(&common), &ids_of(&before)), s.estimator, s.seed_for(x.id))?;
    Ok(est.value)
}

/// Run one of the four thinning maps with an empty coupling set.
pub fn run_algorithm(s: &ThinningSetup, algorithm: Algorithm) -> Result<ThinningResult> {
    match algorithm {
        Algorithm::Standard => standard_embedding(s),
        Algorithm::Cluster => cluster_coupled_thinning(s, &[]),
        Algorithm::Rcm => rcm_embedding(s),
        Algorithm::RcmCluster => rcm_cluster_coupled(s, &[]),
    }
}

/// Thin the same configuration under two boundary conditions that differ
/// inside `coupling`.
pub fn coupled_pair(
    s: &ThinningSetup,
    psi_second: &[MarkedPoint],
    coupling: &[MarkedPoint],
    algorithm: Algorithm,
) -> Result<CouplingPair> {
    let second = ThinningSetup { psi: psi_second, ..*s };
    let run = |setup: &ThinningSetup| match algorithm {
        Algorithm::Cluster => cluster_coupled_thinning(setup, coupling),
        Algorithm::RcmCluster => rcm_cluster_coupled(setup, coupling),
        other => Err(Error::Unsupported(format!("{other:?} has no coupling set"))),
    };
    Ok(CouplingPair { first: run(s)?, second: run(&second)? })
}

/// Points of `a` and `b` with differing ids, the union being the coupling
/// set of two boundary conditions.
pub fn boundary_difference(a: &[MarkedPoint], b: &[MarkedPoint]) -> Vec<MarkedPoint> {
    let ia: BTreeSet<PointId> = a.iter().map(|p| p.id).collect();
    let ib: BTreeSet<PointId> = b.iter().map(|p| p.id).collect();
    a.iter().filter(|p| !ib.contains(&p.id)).chain(b.iter().filter(|p| !ia.contains(&p.id))).cloned().collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct NestedOutcome {
    pub inner: ThinningResult,
    pub outer: ThinningResult,
    /// The two thinnings agree on the probe window.
    pub agreement: bool,
    /// No probe point is connected to the dominating points of `outer \ inner`.
    pub no_connection: bool,
}

/// Thin on `inner`, started from the dominating points of `outer \ inner`,
/// and on `outer` from nothing, both driven by one draw on `outer`. Uses
/// the outside-in order so that every cluster inside `inner` is explored
/// after everything outside it.
#[allow(clippy::too_many_arguments)]
pub fn nested_window_sample(
    model: &InteractionModel,
    algorithm: Algorithm,
    inner: &Window,
    outer: &Window,
    probe: &Window,
    psi: &[MarkedPoint],
    reference: &ReferenceMeasure,
    estimator: &RatioEstimator,
    seed: u64,
    cell_side: f64,
) -> Result<NestedOutcome> {
    if !outer.contains_window(inner) {
        return Err(Error::Domain("inner window is not inside the outer window".into()));
    }
    if !inner.contains_window(probe) {
        return Err(Error::Domain("probe window is not inside the inner window".into()));
    }
    let config_outer = sample_dominating(outer, reference, seed, cell_side)?;
    let config_inner = config_outer.restrict(inner)?;
    let ordering = CubeOrdering::new(&config_outer.window, cell_side, OrderScheme::OutsideIn)?;
    let shell: Vec<MarkedPoint> =
        config_outer.points().iter().filter(|p| !config_inner.window.contains(&p.position)).cloned().collect();
    let inner_setup = ThinningSetup {
        model,
        window: &config_inner.window,
        psi,
        config: &config_inner,
        estimator,
        ordering: &ordering,
    };
    let outer_setup = ThinningSetup { window: &config_outer.window, config: &config_outer, ..inner_setup };
    let (inner_res, outer_res) = match algorithm {
        Algorithm::Cluster => {
            (cluster_coupled_thinning(&inner_setup, &shell)?, cluster_coupled_thinning(&outer_setup, &[])?)
        }
        Algorithm::RcmCluster => (rcm_cluster_coupled(&inner_setup, &shell)?, rcm_cluster_coupled(&outer_setup, &[])?),
        other => return Err(Error::Unsupported(format!("{other:?} cannot be started from a set"))),
    };
    let in_probe = |r: &ThinningResult| -> BTreeSet<PointId> {
        r.kept.points.iter().filter(|p| probe.contains(&p.position)).map(|p| p.id).collect()
    };
    let agreement = in_probe(&inner_res) == in_probe(&outer_res);
    let no_connection = !config_inner
        .points()
        .iter()
        .any(|p| probe.contains(&p.position) && inner_res.touched_points.contains(&p.id));
    Ok(NestedOutcome { inner: inner_res, outer: outer_res, agreement, no_connection })
}

/// A ready-made setup on a fresh dominating draw, for tests and experiments.
pub struct Prepared {
    pub config: DominatingConfiguration,
    pub ordering: CubeOrdering,
}

impl Prepared {
    pub fn new(window: &Window, reference: &ReferenceMeasure, seed: u64, cell_side: f64, scheme: OrderScheme) -> Result<Self> {
        let config = sample_dominating(window, reference, seed, cell_side)?;
        let ordering = CubeOrdering::new(&config.window, cell_side, scheme)?;
        Ok(Prepared { config, ordering })
    }

    pub fn setup<'a>(
        &'a self,
        model: &'a InteractionModel,
        psi: &'a [MarkedPoint],
        estimator: &'a RatioEstimator,
    ) -> ThinningSetup<'a> {
        ThinningSetup { model, window: &self.config.window, psi, config: &self.config, estimator, ordering: &self.ordering }
    }
}

/// Everything needed to draw one Gibbs pattern on a window.
#[derive(Clone, Debug, PartialEq)]
pub struct Simulator {
    pub model: InteractionModel,
    pub reference: ReferenceMeasure,
    pub algorithm: Algorithm,
    pub estimator: RatioEstimator,
    pub cell_side: f64,
    pub scheme: OrderScheme,
    pub psi: Vec<MarkedPoint>,
}

impl Simulator {
    pub fn new(model: InteractionModel, reference: ReferenceMeasure, algorithm: Algorithm, estimator: RatioEstimator) -> Self {
        Simulator { model, reference, algorithm, estimator, cell_side: 0.5, scheme: OrderScheme::Raster, psi: Vec::new() }
    }

    pub fn run(&self, window: &Window, seed: u64) -> Result<ThinningResult> {
        let prepared = Prepared::new(window, &self.reference, seed, self.cell_side, self.scheme)?;
        let mut setup = prepared.setup(&self.model, &self.psi, &self.estimator);
        setup.window = window;
        run_algorithm(&setup, self.algorithm)
    }
}
