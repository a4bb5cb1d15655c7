//! Partition functions `Z_Q(psi) = E[kappa~(P_Q, psi)]` and their ratios.
//!
//! Ratios are estimated with common random numbers: numerator and
//! denominator are averaged over the same Poisson draws. The exact mode sums
//! the Poisson expansion term by term, each term integrated by Monte Carlo
//! over uniform points.

use rand::Rng;
use rand_distr::{Distribution, Poisson as PoissonSampler};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Discrete, DiscreteCDF, Poisson};

use crate::error::{Error, Result};
use crate::geometry::{distance2, CubeOrdering, PointId, PointRef, Window};
use crate::model::{InteractionModel, ReferenceMeasure};
use crate::prf::{hash_words, split_u128, stream};

const TAG_ESTIMATOR: u64 = 0xe57;
const TAG_SAMPLES: u64 = 0x5a3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorMode {
    CommonRandomNumbersMc,
    ExactExpansion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioEstimator {
    pub mode: EstimatorMode,
    pub mc_samples: usize,
    pub n_max: usize,
    pub integral_samples: usize,
    /// Largest Poisson tail mass accepted beyond `n_max`.
    pub tail_tolerance: f64,
    /// When set, partition functions are taken over the part of the
    /// remaining domain within this distance of the decided point.
    pub local_radius: Option<f64>,
}

impl Default for RatioEstimator {
    fn default() -> Self {
        RatioEstimator {
            mode: EstimatorMode::CommonRandomNumbersMc,
            mc_samples: 1000,
            n_max: 30,
            integral_samples: 10_000,
            tail_tolerance: 1e-9,
            local_radius: None,
        }
    }
}

impl RatioEstimator {
    pub fn mc(mc_samples: usize) -> Self {
        RatioEstimator { mc_samples, ..Default::default() }
    }

    pub fn with_local_radius(mut self, radius: f64) -> Self {
        self.local_radius = Some(radius);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.mc_samples < 100 {
            return Err(Error::Invalid(format!("mc_samples must be at least 100, got {}", self.mc_samples)));
        }
        if self.mode == EstimatorMode::ExactExpansion && self.integral_samples == 0 {
            return Err(Error::Invalid("integral_samples must be positive".into()));
        }
        if !(self.tail_tolerance > 0.0 && self.tail_tolerance < 1.0) {
            return Err(Error::Invalid("tail_tolerance must lie in (0,1)".into()));
        }
        if let Some(l) = self.local_radius {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::Invalid("local_radius must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionEstimate {
    pub value: f64,
    pub stderr: f64,
    pub samples: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioEstimate {
    /// Estimate used downstream (clamped to [0,1] for pairwise families).
    pub value: f64,
    /// Unclamped ratio of means.
    pub raw: f64,
    pub stderr: f64,
    pub samples: usize,
}

/// Seed of one estimator call, keyed by a base seed, a point id and a
/// decision counter, so repeated runs reproduce each decision exactly.
pub fn estimator_seed(base: u64, id: PointId, counter: u64) -> u64 {
    let [hi, lo] = split_u128(id.0);
    hash_words(&[base, TAG_ESTIMATOR, hi, lo, counter])
}

/// Borrowed view of one Poisson draw.
pub(crate) struct Sample<'a> {
    dim: usize,
    pos: &'a [f64],
    marks: &'a [Option<f64>],
}

impl<'a> Sample<'a> {
    pub(crate) fn len(&self) -> usize {
        self.marks.len()
    }

    pub(crate) fn get(&self, i: usize) -> PointRef<'a> {
        PointRef { pos: &self.pos[i * self.dim..(i + 1) * self.dim], mark: self.marks[i] }
    }

    fn refs(&self) -> Vec<PointRef<'a>> {
        (0..self.len()).map(|i| self.get(i)).collect()
    }
}

#[derive(Clone, Debug, Default)]
struct Sums {
    n: usize,
    sw: f64,
    sh: f64,
    sww: f64,
    shh: f64,
    swh: f64,
}

impl Sums {
    fn add(&mut self, w: f64, h: f64) {
        self.n += 1;
        self.sw += w;
        self.sh += h;
        self.sww += w * w;
        self.shh += h * h;
        self.swh += w * h;
    }

    fn mean_w(&self) -> f64 {
        self.sw / self.n as f64
    }

    fn mean_h(&self) -> f64 {
        self.sh / self.n as f64
    }

    fn var_w(&self) -> f64 {
        let m = self.mean_w();
        (self.sww / self.n as f64 - m * m).max(0.0)
    }

    /// Variance of `h - r w` per draw.
    fn var_linear(&self, r: f64) -> f64 {
        let n = self.n as f64;
        let m = self.mean_h() - r * self.mean_w();
        ((self.shh - 2.0 * r * self.swh + r * r * self.sww) / n - m * m).max(0.0)
    }
}

/// Uniform positions in `bbox`, marks from the reference law, kept when
/// `domain` accepts them.
struct Drawer<'a> {
    reference: &'a ReferenceMeasure,
    bbox: &'a Window,
    domain: &'a dyn Fn(PointRef) -> bool,
    pos: Vec<f64>,
    marks: Vec<Option<f64>>,
    tmp: Vec<f64>,
}

impl<'a> Drawer<'a> {
    fn new(reference: &'a ReferenceMeasure, bbox: &'a Window, domain: &'a dyn Fn(PointRef) -> bool) -> Self {
        Drawer { reference, bbox, domain, pos: Vec::new(), marks: Vec::new(), tmp: vec![0.0; bbox.dim()] }
    }

    fn draw<R: Rng>(&mut self, rng: &mut R, n: usize) {
        self.pos.clear();
        self.marks.clear();
        let d = self.bbox.dim();
        for _ in 0..n {
            for i in 0..d {
                self.tmp[i] = self.bbox.lo(i) + self.bbox.sides[i] * rng.random::<f64>();
            }
            let mark = self.reference.mark_law.sample(rng);
            if (self.domain)(PointRef { pos: &self.tmp, mark }) {
                self.pos.extend_from_slice(&self.tmp);
                self.marks.push(mark);
            }
        }
    }

    fn sample(&self) -> Sample<'_> {
        Sample { dim: self.bbox.dim(), pos: &self.pos, marks: &self.marks }
    }
}

/// Weighted averages of `(w, h)` over the reference Poisson process on the
/// domain. Returns `(mean w, stderr of mean w, mean h, ratio, ratio stderr,
/// samples)`.
struct Averages {
    mean_w: f64,
    se_w: f64,
    mean_h: f64,
    ratio: f64,
    se_ratio: f64,
    samples: usize,
}

fn averages(
    reference: &ReferenceMeasure,
    bbox: &Window,
    domain: &dyn Fn(PointRef) -> bool,
    est: &RatioEstimator,
    seed: u64,
    eval: &mut dyn FnMut(&Sample) -> (f64, f64),
) -> Result<Averages> {
    let mut rng = stream(&[seed, TAG_SAMPLES]);
    let mut drawer = Drawer::new(reference, bbox, domain);
    let mass = reference.mass(bbox);
    match est.mode {
        EstimatorMode::CommonRandomNumbersMc => {
            let counts = PoissonSampler::new(mass).map_err(|e| Error::Invalid(e.to_string()))?;
            let mut sums = Sums::default();
            for _ in 0..est.mc_samples {
                let n = counts.sample(&mut rng) as usize;
                drawer.draw(&mut rng, n);
                let (w, h) = eval(&drawer.sample());
                sums.add(w, h);
            }
            let (mw, mh) = (sums.mean_w(), sums.mean_h());
            let ratio = ratio_of(mh, mw)?;
            let nf = sums.n as f64;
            let se_ratio = if mw > 0.0 { (sums.var_linear(ratio) / nf).sqrt() / mw } else { 0.0 };
            Ok(Averages {
                mean_w: mw,
                se_w: (sums.var_w() / nf).sqrt(),
                mean_h: mh,
                ratio,
                se_ratio,
                samples: sums.n,
            })
        }
        EstimatorMode::ExactExpansion => {
            let law = Poisson::new(mass).map_err(|e| Error::Invalid(e.to_string()))?;
            let tail = 1.0 - law.cdf(est.n_max as u64);
            if tail >= est.tail_tolerance {
                return Err(Error::Truncation { n_max: est.n_max, tail, tolerance: est.tail_tolerance });
            }
            let mut terms = Vec::with_capacity(est.n_max + 1);
            for n in 0..=est.n_max {
                let c = law.pmf(n as u64);
                let mut sums = Sums::default();
                for _ in 0..est.integral_samples {
                    drawer.draw(&mut rng, n);
                    let (w, h) = eval(&drawer.sample());
                    sums.add(w, h);
                }
                terms.push((c, sums));
            }
            let mw: f64 = terms.iter().map(|(c, s)| c * s.mean_w()).sum();
            let mh: f64 = terms.iter().map(|(c, s)| c * s.mean_h()).sum();
            let ratio = ratio_of(mh, mw)?;
            let m = est.integral_samples as f64;
            let var_w: f64 = terms.iter().map(|(c, s)| c * c * s.var_w() / m).sum();
            let var_r: f64 = terms.iter().map(|(c, s)| c * c * s.var_linear(ratio) / m).sum();
            Ok(Averages {
                mean_w: mw,
                se_w: var_w.sqrt(),
                mean_h: mh,
                ratio,
                se_ratio: if mw > 0.0 { var_r.sqrt() / mw } else { 0.0 },
                samples: est.integral_samples * (est.n_max + 1),
            })
        }
    }
}

fn ratio_of(num: f64, den: f64) -> Result<f64> {
    if den > 0.0 {
        Ok(num / den)
    } else if num > 0.0 {
        Err(Error::Inconsistency)
    } else {
        Ok(0.0)
    }
}

/// `prod_{i<j} e^{-v(x_i,x_j)} prod_{i, y in psi} e^{-v(x_i,y)}`.
pub fn noedge_weight(model: &InteractionModel, phi: &[PointRef], psi: &[PointRef]) -> Result<f64> {
    if !model.is_pairwise() {
        return Err(Error::Unsupported("no-edge weight needs a pair potential".into()));
    }
    let mut w = 1.0;
    for (i, x) in phi.iter().enumerate() {
        for y in phi[..i].iter().chain(psi) {
            w *= model.pair_factor(*x, *y);
        }
        if w == 0.0 {
            return Ok(0.0);
        }
    }
    Ok(w)
}

/// `Z_Q(psi)` over the window.
pub fn estimate_partition(
    model: &InteractionModel,
    reference: &ReferenceMeasure,
    window: &Window,
    psi: &[PointRef],
    est: &RatioEstimator,
    seed: u64,
) -> Result<PartitionEstimate> {
    est.validate()?;
    let domain = |_: PointRef| true;
    let mut eval = |s: &Sample| {
        let w = model.sequential_weight(&s.refs(), psi);
        (w, 0.0)
    };
    let a = averages(reference, window, &domain, est, seed, &mut eval)?;
    Ok(PartitionEstimate { value: a.mean_w, stderr: a.se_w, samples: a.samples })
}

/// Boundary seen by the sampled points of one decision. `common` acts on
/// every sampled point; `before` acts only on points ordered before the
/// decided point under `ordering`.
pub(crate) struct LocalBoundary<'a> {
    pub common: Vec<PointRef<'a>>,
    pub before: Vec<PointRef<'a>>,
    pub ordering: Option<&'a CubeOrdering>,
}

impl<'a> LocalBoundary<'a> {
    pub(crate) fn uniform(common: Vec<PointRef<'a>>) -> Self {
        LocalBoundary { common, before: Vec::new(), ordering: None }
    }
}

/// A ratio `Z_U(phi + x) / Z_U(phi)` over the remaining domain `U` of one
/// decision. `region` bounds `U` and `domain` tests membership.
pub(crate) struct LocalRatio<'a> {
    pub model: &'a InteractionModel,
    pub reference: &'a ReferenceMeasure,
    pub region: &'a Window,
    pub domain: &'a dyn Fn(PointRef) -> bool,
    pub target: PointRef<'a>,
}

impl<'a> LocalRatio<'a> {
    pub(crate) fn estimate(
        &self,
        boundary: LocalBoundary<'a>,
        boundary_ids: (&[PointId], &[PointId]),
        est: &RatioEstimator,
        seed: u64,
    ) -> Result<RatioEstimate> {
        if self.model.is_trivial() {
            return Ok(RatioEstimate { value: 1.0, raw: 1.0, stderr: 0.0, samples: 0 });
        }
        let x = self.target;
        let range = self.model.interaction_range();
        let (bbox, reach) = match est.local_radius {
            Some(l) => {
                let cube = Window::new(x.pos.to_vec(), vec![2.0 * l; x.pos.len()])?;
                // Draws come from the whole cube so that they do not depend on
                // the window, only on `x`.
                if self.region.intersect(&cube).is_none() {
                    return Ok(RatioEstimate { value: 1.0, raw: 1.0, stderr: 0.0, samples: 0 });
                }
                (cube, Some(l))
            }
            None => (self.region.clone(), None),
        };
        let relevant = |z: &PointRef| match reach {
            Some(l) => distance2(z.pos, x.pos) <= (l + range) * (l + range),
            None => bbox.distance_to(z.pos) <= range,
        };
        let canonical = |pts: Vec<PointRef<'a>>, ids: &[PointId]| {
            let mut tagged: Vec<(PointId, PointRef<'a>)> =
                ids.iter().copied().zip(pts).filter(|(_, z)| relevant(z)).collect();
            tagged.sort_by_key(|t| t.0);
            tagged.into_iter().map(|t| t.1).collect::<Vec<_>>()
        };
        let common = canonical(boundary.common, boundary_ids.0);
        let before = canonical(boundary.before, boundary_ids.1);
        let ordering = boundary.ordering;

        let domain = |y: PointRef| match reach {
            Some(l) => distance2(y.pos, x.pos) <= l * l && self.region.contains(y.pos) && (self.domain)(y),
            None => (self.domain)(y),
        };
        let model = self.model;
        let a = if model.is_pairwise() {
            let mut eval = |s: &Sample| {
                let mut w = 1.0;
                let mut t = 1.0;
                for i in 0..s.len() {
                    let y = s.get(i);
                    for z in &common {
                        w *= model.pair_factor(y, *z);
                    }
                    if !before.is_empty() {
                        if let Some(ord) = ordering {
                            if ord.cmp_positions(y.pos, x.pos).is_lt() {
                                for z in &before {
                                    w *= model.pair_factor(y, *z);
                                }
                            }
                        }
                    }
                    for j in 0..i {
                        w *= model.pair_factor(y, s.get(j));
                    }
                    if w == 0.0 {
                        return (0.0, 0.0);
                    }
                    t *= model.pair_factor(x, y);
                }
                (w, w * t)
            };
            averages(self.reference, &bbox, &domain, est, seed, &mut eval)?
        } else {
            if !before.is_empty() {
                return Err(Error::Unsupported("split boundaries need a pair potential".into()));
            }
            let mut with_x = common.clone();
            with_x.push(x);
            let mut eval = |s: &Sample| {
                let refs = s.refs();
                let w = model.sequential_weight(&refs, &common);
                let h = model.sequential_weight(&refs, &with_x);
                (w, h)
            };
            averages(self.reference, &bbox, &domain, est, seed, &mut eval)?
        };
        let _ = a.mean_h;
        let value = if model.is_pairwise() { a.ratio.clamp(0.0, 1.0) } else { a.ratio.max(0.0) };
        Ok(RatioEstimate { value, raw: a.ratio, stderr: a.se_ratio, samples: a.samples })
    }
}

/// `Z_{Q(x,inf)}(psi + x) / Z_{Q(x,inf)}(psi)` where `Q(x,inf)` holds the
/// window points after `x` in `ordering`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_ratio(
    model: &InteractionModel,
    reference: &ReferenceMeasure,
    window: &Window,
    ordering: &CubeOrdering,
    psi: &[crate::geometry::MarkedPoint],
    x: &crate::geometry::MarkedPoint,
    est: &RatioEstimator,
    seed: u64,
) -> Result<RatioEstimate> {
    est.validate()?;
    let domain = |y: PointRef| window.contains(y.pos) && ordering.cmp_positions(y.pos, &x.position).is_gt();
    let problem = LocalRatio { model, reference, region: window, domain: &domain, target: x.view() };
    let ids: Vec<PointId> = psi.iter().map(|p| p.id).collect();
    let boundary = LocalBoundary::uniform(psi.iter().map(|p| p.view()).collect());
    problem.estimate(boundary, (&ids, &[]), est, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{MarkedPoint, OrderScheme};

    fn pr(pos: &[f64]) -> PointRef<'_> {
        PointRef { pos, mark: None }
    }

    #[test]
    fn noedge_weight_of_three_strauss_points() {
        // two of the three pairs lie within R
        let m = InteractionModel::strauss(0.5, 0.3).unwrap();
        let phi = [pr(&[0.0, 0.0]), pr(&[0.2, 0.0]), pr(&[0.4, 0.0])];
        assert_eq!(noedge_weight(&m, &phi, &[]).unwrap(), 0.25);
        let psi = [pr(&[0.0, 0.25])];
        assert_eq!(noedge_weight(&m, &phi, &psi).unwrap(), 0.125);
        let hs = InteractionModel::hard_sphere(0.1).unwrap();
        assert_eq!(noedge_weight(&hs, &[pr(&[0.0]), pr(&[0.05])], &[]).unwrap(), 0.0);
    }

    #[test]
    fn poisson_partition_is_one() {
        let r = ReferenceMeasure::unmarked(3.0).unwrap();
        let w = Window::cube(1.0, 2);
        let z = estimate_partition(&InteractionModel::Poisson, &r, &w, &[], &RatioEstimator::mc(200), 1).unwrap();
        assert_eq!(z.value, 1.0);
        let exact = RatioEstimator {
            mode: EstimatorMode::ExactExpansion,
            n_max: 25,
            integral_samples: 10,
            ..Default::default()
        };
        let z = estimate_partition(&InteractionModel::Poisson, &r, &w, &[], &exact, 1).unwrap();
        assert!((z.value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn expansion_rejects_short_truncation() {
        let r = ReferenceMeasure::unmarked(5.0).unwrap();
        let est = RatioEstimator { mode: EstimatorMode::ExactExpansion, n_max: 5, ..Default::default() };
        let res = estimate_partition(&InteractionModel::Poisson, &r, &Window::cube(1.0, 2), &[], &est, 1);
        assert!(matches!(res, Err(Error::Truncation { .. })));
    }

    #[test]
    fn too_few_samples_is_invalid() {
        assert!(RatioEstimator::mc(50).validate().is_err());
    }

    #[test]
    fn zero_over_zero_is_zero() {
        assert_eq!(ratio_of(0.0, 0.0).unwrap(), 0.0);
        assert_eq!(ratio_of(0.1, 0.0), Err(Error::Inconsistency));
    }

    #[test]
    fn mc_and_expansion_agree_on_a_small_window() {
        let m = InteractionModel::strauss(0.5, 0.3).unwrap();
        let r = ReferenceMeasure::unmarked(2.0).unwrap();
        let w = Window::cube(1.0, 2);
        let mc = estimate_partition(&m, &r, &w, &[], &RatioEstimator::mc(40_000), 3).unwrap();
        let exact = RatioEstimator {
            mode: EstimatorMode::ExactExpansion,
            n_max: 18,
            integral_samples: 20_000,
            ..Default::default()
        };
        let ex = estimate_partition(&m, &r, &w, &[], &exact, 4).unwrap();
        let z = (mc.value - ex.value) / (mc.stderr.powi(2) + ex.stderr.powi(2)).sqrt();
        assert!(z.abs() < 4.0, "mc {mc:?} exact {ex:?}");
    }

    #[test]
    fn ratio_modes_agree() {
        let m = InteractionModel::strauss(0.4, 0.3).unwrap();
        let r = ReferenceMeasure::unmarked(3.0).unwrap();
        let w = Window::cube(1.0, 2);
        let ord = CubeOrdering::new(&w, 0.5, OrderScheme::Raster).unwrap();
        let x = MarkedPoint::new(vec![-0.3, -0.1], None, PointId(1));
        let psi = vec![MarkedPoint::new(vec![-0.6, 0.0], None, PointId::reserved(2))];
        let mc = estimate_ratio(&m, &r, &w, &ord, &psi, &x, &RatioEstimator::mc(40_000), 5).unwrap();
        let exact = RatioEstimator {
            mode: EstimatorMode::ExactExpansion,
            n_max: 20,
            integral_samples: 20_000,
            ..Default::default()
        };
        let ex = estimate_ratio(&m, &r, &w, &ord, &psi, &x, &exact, 6).unwrap();
        let z = (mc.raw - ex.raw) / (mc.stderr.powi(2) + ex.stderr.powi(2)).sqrt();
        assert!(z.abs() < 4.0, "mc {mc:?} exact {ex:?}");
        assert!(mc.value > 0.0 && mc.value < 1.0);
    }

    #[test]
    fn empty_remaining_domain_gives_one() {
        let m = InteractionModel::strauss(0.5, 0.3).unwrap();
        let r = ReferenceMeasure::unmarked(3.0).unwrap();
        let w = Window::cube(1.0, 2);
        let ord = CubeOrdering::new(&w, 0.5, OrderScheme::Raster).unwrap();
        // the last point of the window in raster order
        let x = MarkedPoint::new(vec![0.5, 0.5], None, PointId(1));
        let est = estimate_ratio(&m, &r, &w, &ord, &[], &x, &RatioEstimator::mc(100), 1).unwrap();
        assert_eq!(est.value, 1.0);
    }

    #[test]
    fn estimator_seeds_depend_on_all_keys() {
        let a = estimator_seed(1, PointId(2), 0);
        assert_ne!(a, estimator_seed(1, PointId(2), 1));
        assert_ne!(a, estimator_seed(1, PointId(3), 0));
        assert_ne!(a, estimator_seed(2, PointId(2), 0));
    }
}
