//! Stabilizing score functions and score sums over a window.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{distance, GridIndex, MarkedPoint, PointId, PointPattern, Window};

/// Radius for the isolated-point score.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RadiusSpec {
    Fixed { u: f64 },
    /// Void probability of the dominating process equal to `beta2 / lambda(Q)`.
    Calibrated { beta2: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScoreKind {
    Isolated { radius: RadiusSpec },
    KnnLength { k: usize },
    GilbertEdges,
    /// Every point scores one.
    Count,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreSpec {
    pub kind: ScoreKind,
    pub window: Window,
}

impl ScoreSpec {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ScoreKind::KnnLength { k } if k == 0 => Err(Error::Invalid("k must be at least 1".into())),
            ScoreKind::Isolated { radius: RadiusSpec::Fixed { u } } if !(u >= 0.0 && u.is_finite()) => {
                Err(Error::Invalid(format!("isolation radius {u} must be finite and non-negative")))
            }
            ScoreKind::Isolated { radius: RadiusSpec::Calibrated { beta2 } } if !(beta2 > 0.0 && beta2.is_finite()) => {
                Err(Error::Invalid(format!("beta2 = {beta2} must be positive")))
            }
            _ => Ok(()),
        }
    }

    /// Replace a calibrated isolation radius by its value for intensity `alpha`.
    pub fn resolve(&self, alpha: f64) -> ScoreSpec {
        let kind = match self.kind {
            ScoreKind::Isolated { radius: RadiusSpec::Calibrated { beta2 } } => ScoreKind::Isolated {
                radius: RadiusSpec::Fixed { u: calibrate_isolation_radius(alpha, &self.window, beta2) },
            },
            k => k,
        };
        ScoreSpec { kind, window: self.window.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreMeasure {
    pub scores: Vec<(PointId, f64)>,
    pub total: f64,
}

/// Volume of the unit ball in dimension `d`.
pub fn unit_ball_volume(d: usize) -> f64 {
    let d = d as f64;
    std::f64::consts::PI.powf(d / 2.0) / statrs::function::gamma::gamma(d / 2.0 + 1.0)
}

/// Solve `exp(-alpha kappa_d u^d) = beta2 / (alpha |Q|)` for `u`; zero when
/// the right side is at least one.
pub fn calibrate_isolation_radius(alpha: f64, window: &Window, beta2: f64) -> f64 {
    let mass = alpha * window.volume();
    if mass <= beta2 || alpha <= 0.0 {
        return 0.0;
    }
    let d = window.dim();
    ((mass / beta2).ln() / (alpha * unit_ball_volume(d))).powf(1.0 / d as f64)
}

fn index_of(pattern: &PointPattern, x: &MarkedPoint) -> Result<usize> {
    pattern.position_of(x.id).ok_or(Error::Membership)
}

/// One if no other point lies within `u` of `x`.
pub fn isolated_score(pattern: &PointPattern, x: &MarkedPoint, u: f64) -> Result<f64> {
    index_of(pattern, x)?;
    let hit = pattern.points.iter().any(|y| y.id != x.id && distance(&y.position, &x.position) <= u);
    Ok(if hit { 0.0 } else { 1.0 })
}

/// Number of neighbours in the Gilbert graph with a strictly smaller mark.
pub fn gilbert_score(pattern: &PointPattern, x: &MarkedPoint) -> Result<f64> {
    index_of(pattern, x)?;
    let mx = x.mark.ok_or_else(|| Error::Mark("gilbert score needs radius marks".into()))?;
    let mut n = 0usize;
    for y in &pattern.points {
        if y.id == x.id {
            continue;
        }
        let my = y.mark.ok_or_else(|| Error::Mark("gilbert score needs radius marks".into()))?;
        if my < mx && distance(&x.position, &y.position) <= mx + my {
            n += 1;
        }
    }
    Ok(n as f64)
}

/// Half the total length of the edges at `x` in the symmetric kNN graph.
pub fn knn_score(pattern: &PointPattern, x: &MarkedPoint, k: usize) -> Result<f64> {
    let i = index_of(pattern, x)?;
    let lists = KnnLists::build(pattern, k)?;
    Ok(lists.score(pattern, i))
}

fn by_distance_then_id(a: &(f64, PointId, usize), b: &(f64, PointId, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// The k nearest neighbours of every point, ties broken by id.
struct KnnLists {
    lists: Vec<Vec<(f64, usize)>>,
}

impl KnnLists {
    fn build(pattern: &PointPattern, k: usize) -> Result<Self> {
        let n = pattern.len();
        if k == 0 {
            return Err(Error::Invalid("k must be at least 1".into()));
        }
        if n < k + 1 {
            return Err(Error::InsufficientPoints { needed: k + 1, found: n });
        }
        let dim = pattern.dim;
        let (lo, hi) = bounding_box(pattern);
        let vol: f64 = lo.iter().zip(&hi).map(|(a, b)| (b - a).max(1e-9)).product();
        let spacing = (vol * (k as f64 + 1.0) / n as f64).powf(1.0 / dim as f64).max(1e-9);
        let extent = lo.iter().zip(&hi).map(|(a, b)| b - a).fold(0.0f64, f64::max);
        let index = GridIndex::build(dim, pattern.points.iter().map(|p| p.position.as_slice()), spacing);
        let mut lists = Vec::with_capacity(n);
        for (i, x) in pattern.points.iter().enumerate() {
            let mut r = spacing;
            loop {
                let mut cand = Vec::new();
                index.candidates(&x.position, r, |j| {
                    if j != i {
                        let d = distance(&x.position, &pattern.points[j].position);
                        if d <= r {
                            cand.push((d, pattern.points[j].id, j));
                        }
                    }
                });
                // a full search once the ball covers the bounding box
                if cand.len() >= k || r > extent * 2.0 + spacing {
                    cand.sort_by(by_distance_then_id);
                    cand.truncate(k);
                    lists.push(cand.into_iter().map(|(d, _, j)| (d, j)).collect());
                    break;
                }
                r *= 2.0;
            }
        }
        Ok(KnnLists { lists })
    }

    fn lists_contain(&self, i: usize, j: usize) -> bool {
        self.lists[i].iter().any(|&(_, m)| m == j)
    }

    fn score(&self, pattern: &PointPattern, i: usize) -> f64 {
        let mut s = 0.0;
        for (j, y) in pattern.points.iter().enumerate() {
            if j != i && (self.lists_contain(i, j) || self.lists_contain(j, i)) {
                s += 0.5 * distance(&pattern.points[i].position, &y.position);
            }
        }
        s
    }

    /// Scores of all points; each edge is found from the list that holds it.
    fn all_scores(&self, pattern: &PointPattern) -> Vec<f64> {
        let n = pattern.len();
        let mut edges = std::collections::BTreeSet::new();
        for i in 0..n {
            for &(_, j) in &self.lists[i] {
                edges.insert((i.min(j), i.max(j)));
            }
        }
        let mut s = vec![0.0; n];
        for (a, b) in edges {
            let d = distance(&pattern.points[a].position, &pattern.points[b].position);
            s[a] += 0.5 * d;
            s[b] += 0.5 * d;
        }
        s
    }
}

fn bounding_box(pattern: &PointPattern) -> (Vec<f64>, Vec<f64>) {
    let d = pattern.dim;
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for p in &pattern.points {
        for i in 0..d {
            lo[i] = lo[i].min(p.position[i]);
            hi[i] = hi[i].max(p.position[i]);
        }
    }
    (lo, hi)
}

fn fixed_radius(kind: &ScoreKind) -> Result<f64> {
    match kind {
        ScoreKind::Isolated { radius: RadiusSpec::Fixed { u } } => Ok(*u),
        ScoreKind::Isolated { .. } => Err(Error::Invalid("calibrated radius must be resolved first".into())),
        _ => unreachable!("only called for isolated scores"),
    }
}

/// Scores of every pattern point, evaluated on the full pattern.
pub fn all_scores(pattern: &PointPattern, kind: &ScoreKind) -> Result<Vec<f64>> {
    let n = pattern.len();
    match kind {
        ScoreKind::Count => Ok(vec![1.0; n]),
        ScoreKind::Isolated { .. } => {
            let u = fixed_radius(kind)?;
            let index = GridIndex::for_pattern(pattern, u.max(1e-6));
            Ok((0..n)
                .map(|i| {
                    let x = &pattern.points[i].position;
                    let mut hit = false;
                    index.candidates(x, u, |j| {
                        hit |= j != i && distance(x, &pattern.points[j].position) <= u;
                    });
                    if hit {
                        0.0
                    } else {
                        1.0
                    }
                })
                .collect())
        }
        ScoreKind::KnnLength { k } => {
            if n == 0 {
                return Ok(Vec::new());
            }
            Ok(KnnLists::build(pattern, *k)?.all_scores(pattern))
        }
        ScoreKind::GilbertEdges => {
            let marks: Vec<f64> = pattern
                .points
                .iter()
                .map(|p| p.mark.ok_or_else(|| Error::Mark("gilbert score needs radius marks".into())))
                .collect::<Result<_>>()?;
            let max_mark = marks.iter().copied().fold(0.0, f64::max);
            let index = GridIndex::for_pattern(pattern, (2.0 * max_mark).max(1e-6));
            Ok((0..n)
                .map(|i| {
                    let x = &pattern.points[i].position;
                    let mut c = 0usize;
                    index.candidates(x, marks[i] + max_mark, |j| {
                        if j != i && marks[j] < marks[i] && distance(x, &pattern.points[j].position) <= marks[i] + marks[j] {
                            c += 1;
                        }
                    });
                    c as f64
                })
                .collect())
        }
    }
}

/// Sum of the scores of the points inside the spec window, each evaluated
/// on the whole pattern.
pub fn score_sum(pattern: &PointPattern, spec: &ScoreSpec) -> Result<ScoreMeasure> {
    spec.validate()?;
    if pattern.dim != spec.window.dim() {
        return Err(Error::Dimension { expected: spec.window.dim(), found: pattern.dim });
    }
    let inside: Vec<usize> = (0..pattern.len()).filter(|&i| spec.window.contains(&pattern.points[i].position)).collect();
    if inside.is_empty() {
        return Ok(ScoreMeasure { scores: Vec::new(), total: 0.0 });
    }
    let all = all_scores(pattern, &spec.kind)?;
    let scores: Vec<(PointId, f64)> = inside.iter().map(|&i| (pattern.points[i].id, all[i])).collect();
    let total = scores.iter().map(|s| s.1).sum();
    Ok(ScoreMeasure { scores, total })
}

/// A radius `r` with `g(x, pattern) = g(x, pattern ∩ B_r(x))`.
///
/// For kNN lengths in one and two dimensions the plane around `x` is split
/// into sectors of opening at most 60 degrees; with `R_s` the distance to
/// the k-th nearest point in sector `s`, `2 max_s R_s` is certified. When a
/// sector holds fewer than k points the radius covers the whole pattern.
pub fn stabilization_radius(spec: &ScoreSpec, pattern: &PointPattern, x: &MarkedPoint) -> Result<f64> {
    spec.validate()?;
    let i = index_of(pattern, x)?;
    match spec.kind {
        ScoreKind::Count => Ok(0.0),
        ScoreKind::Isolated { .. } => fixed_radius(&spec.kind),
        ScoreKind::GilbertEdges => {
            Ok(2.0 * x.mark.ok_or_else(|| Error::Mark("gilbert score needs radius marks".into()))?)
        }
        ScoreKind::KnnLength { k } => knn_sector_radius(pattern, i, k),
    }
}

fn sector_of(dim: usize, v: &[f64]) -> usize {
    if dim == 1 {
        return usize::from(v[0] >= 0.0);
    }
    let a = v[1].atan2(v[0]).rem_euclid(std::f64::consts::TAU);
    ((a / (std::f64::consts::PI / 3.0)) as usize).min(5)
}

fn knn_sector_radius(pattern: &PointPattern, i: usize, k: usize) -> Result<f64> {
    let dim = pattern.dim;
    if dim > 2 {
        return Err(Error::Unsupported(format!("kNN stabilization radius in dimension {dim}")));
    }
    if pattern.len() < k + 1 {
        return Err(Error::InsufficientPoints { needed: k + 1, found: pattern.len() });
    }
    let x = &pattern.points[i].position;
    let sectors = if dim == 1 { 2 } else { 6 };
    let mut dists: Vec<Vec<f64>> = vec![Vec::new(); sectors];
    let mut farthest = 0.0f64;
    for (j, y) in pattern.points.iter().enumerate() {
        if j == i {
            continue;
        }
        let v: Vec<f64> = y.position.iter().zip(x).map(|(a, b)| a - b).collect();
        let d = distance(&y.position, x);
        farthest = farthest.max(d);
        dists[sector_of(dim, &v)].push(d);
    }
    let mut r = 0.0f64;
    for s in &mut dists {
        if s.len() < k {
            return Ok(farthest);
        }
        s.sort_by(f64::total_cmp);
        r = r.max(s[k - 1]);
    }
    Ok((2.0 * r).min(farthest))
}
