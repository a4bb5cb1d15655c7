//! The dominating marked Poisson process, its uniform marks and the pair
//! marks of the random connection model.

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::geometry::{MarkedPoint, PointId, PointPattern, Window};
use crate::model::ReferenceMeasure;
use crate::prf::{hash_words, split_u128, stream, unit_open};

const TAG_CELL: u64 = 0xce11;
const TAG_ID: u64 = 0x1d;
const TAG_PAIR: u64 = 0x9a19;
const TAG_RESERVED: u64 = 0xb0b0;

const ALIGN_EPS: f64 = 1e-9;

/// One draw of the dominating process on a cell-aligned window: points,
/// their uniform retention marks and the seed that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct DominatingConfiguration {
    pub window: Window,
    pub cell_side: f64,
    pub seed: u64,
    pub reference: ReferenceMeasure,
    pub pattern: PointPattern,
    pub u_marks: Vec<f64>,
    cells: Vec<Vec<i64>>,
}

fn cell_range(lo: f64, hi: f64, side: f64) -> (i64, i64) {
    let snap = |v: f64, up: bool| {
        let q = v / side;
        let r = q.round();
        if (q - r).abs() < ALIGN_EPS {
            r as i64
        } else if up {
            q.ceil() as i64
        } else {
            q.floor() as i64
        }
    };
    (snap(lo, false), snap(hi, true))
}

fn aligned_window(ranges: &[(i64, i64)], side: f64) -> Window {
    let lo: Vec<f64> = ranges.iter().map(|r| r.0 as f64 * side).collect();
    let hi: Vec<f64> = ranges.iter().map(|r| r.1 as f64 * side).collect();
    Window::from_bounds(&lo, &hi).expect("non-empty aligned window")
}

fn cell_ranges(window: &Window, side: f64) -> Vec<(i64, i64)> {
    (0..window.dim())
        .map(|i| {
            let (a, b) = cell_range(window.lo(i), window.hi(i), side);
            (a, b.max(a + 1))
        })
        .collect()
}

fn point_id(seed: u64, cell: &[i64], draw: u64) -> PointId {
    let mut words = vec![seed, TAG_ID];
    words.extend(cell.iter().map(|&k| k as u64));
    words.push(draw);
    let hi = hash_words(&words);
    words.push(0x5eed);
    let lo = hash_words(&words);
    PointId::regular(((hi as u128) << 64) | lo as u128)
}

/// Sample the dominating process on `window`, snapped outward to the grid of
/// cubes of side `cell_side` anchored at the origin. Each cell draws from its
/// own stream keyed by `(seed, cell)`, so overlapping windows agree on shared
/// cells.
pub fn sample_dominating(
    window: &Window,
    reference: &ReferenceMeasure,
    seed: u64,
    cell_side: f64,
) -> Result<DominatingConfiguration> {
    if !(cell_side.is_finite() && cell_side > 0.0) {
        return Err(Error::Invalid("cell side must be positive".into()));
    }
    let dim = window.dim();
    let ranges = cell_ranges(window, cell_side);
    let mean = reference.alpha * cell_side.powi(dim as i32);
    let count_law = Poisson::new(mean).map_err(|e| Error::Invalid(e.to_string()))?;

    let mut points = Vec::new();
    let mut u_marks = Vec::new();
    let mut cells = Vec::new();
    let mut k: Vec<i64> = ranges.iter().map(|r| r.0).collect();
    loop {
        let mut words = vec![seed, TAG_CELL];
        words.extend(k.iter().map(|&c| c as u64));
        let mut rng = stream(&words);
        let n = count_law.sample(&mut rng) as u64;
        for j in 0..n {
            let position: Vec<f64> = k.iter().map(|&c| (c as f64 + rng.random::<f64>()) * cell_side).collect();
            let mark = reference.mark_law.sample(&mut rng);
            let u = rng.random::<f64>();
            points.push(MarkedPoint::new(position, mark, point_id(seed, &k, j)));
            u_marks.push(u);
            cells.push(k.clone());
        }
        let mut axis = dim;
        loop {
            if axis == 0 {
                return Ok(DominatingConfiguration {
                    window: aligned_window(&ranges, cell_side),
                    cell_side,
                    seed,
                    reference: reference.clone(),
                    pattern: PointPattern { dim, points },
                    u_marks,
                    cells,
                });
            }
            axis -= 1;
            if k[axis] + 1 < ranges[axis].1 {
                k[axis] += 1;
                break;
            }
            k[axis] = ranges[axis].0;
        }
    }
}

impl DominatingConfiguration {
    /// Assemble a configuration from explicit points, mostly for tests and
    /// replay. Cells are recomputed from the positions.
    pub fn from_parts(
        window: Window,
        cell_side: f64,
        seed: u64,
        reference: ReferenceMeasure,
        pattern: PointPattern,
        u_marks: Vec<f64>,
    ) -> Result<Self> {
        if u_marks.len() != pattern.len() {
            return Err(Error::Dimension { expected: pattern.len(), found: u_marks.len() });
        }
        if u_marks.iter().any(|u| !(0.0..=1.0).contains(u)) {
            return Err(Error::Invalid("retention marks must lie in [0,1]".into()));
        }
        for p in &pattern.points {
            if !window.contains(&p.position) {
                return Err(Error::Domain(format!("{:?} is outside the window", p.position)));
            }
        }
        let cells = pattern
            .points
            .iter()
            .map(|p| p.position.iter().map(|x| (x / cell_side).floor() as i64).collect())
            .collect();
        Ok(DominatingConfiguration { window, cell_side, seed, reference, pattern, u_marks, cells })
    }

    pub fn len(&self) -> usize {
        self.pattern.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pattern.is_empty()
    }

    pub fn points(&self) -> &[MarkedPoint] {
        &self.pattern.points
    }

    pub fn oracle(&self) -> PairMarkOracle {
        PairMarkOracle { seed: self.seed }
    }

    /// Restriction to a cell-aligned sub-window. Equal, field by field, to
    /// sampling the sub-window directly with the same seed.
    pub fn restrict(&self, sub: &Window) -> Result<DominatingConfiguration> {
        if sub.dim() != self.window.dim() {
            return Err(Error::Dimension { expected: self.window.dim(), found: sub.dim() });
        }
        let mut ranges = Vec::with_capacity(sub.dim());
        for i in 0..sub.dim() {
            let a = sub.lo(i) / self.cell_side;
            let b = sub.hi(i) / self.cell_side;
            if (a - a.round()).abs() > ALIGN_EPS || (b - b.round()).abs() > ALIGN_EPS {
                return Err(Error::Alignment(format!("axis {i}: [{}, {}]", sub.lo(i), sub.hi(i))));
            }
            ranges.push((a.round() as i64, b.round() as i64));
        }
        let own = cell_ranges(&self.window, self.cell_side);
        if ranges.iter().zip(&own).any(|(r, o)| r.0 < o.0 || r.1 > o.1) {
            return Err(Error::Alignment("sub-window is not contained in the sampled window".into()));
        }
        let inside = |c: &Vec<i64>| c.iter().zip(&ranges).all(|(k, r)| *k >= r.0 && *k < r.1);
        let mut points = Vec::new();
        let mut u_marks = Vec::new();
        let mut cells = Vec::new();
        for (i, c) in self.cells.iter().enumerate() {
            if inside(c) {
                points.push(self.pattern.points[i].clone());
                u_marks.push(self.u_marks[i]);
                cells.push(c.clone());
            }
        }
        Ok(DominatingConfiguration {
            window: aligned_window(&ranges, self.cell_side),
            cell_side: self.cell_side,
            seed: self.seed,
            reference: self.reference.clone(),
            pattern: PointPattern { dim: self.pattern.dim, points },
            u_marks,
            cells,
        })
    }
}

/// Uniform pair marks `r_{x,y}` keyed by `(seed, id_x, id_y)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairMarkOracle {
    pub seed: u64,
}

impl PairMarkOracle {
    pub fn new(seed: u64) -> Self {
        PairMarkOracle { seed }
    }

    pub fn pair_mark(&self, a: PointId, b: PointId) -> Result<f64> {
        if a == b {
            return Err(Error::SelfPair);
        }
        Ok(self.mark(a, b))
    }

    /// The mark `r_{a,b}`, a value in the open unit interval.
    #[inline]
    pub(crate) fn mark(&self, a: PointId, b: PointId) -> f64 {
        let [a1, a0] = split_u128(a.0);
        let [b1, b0] = split_u128(b.0);
        unit_open(hash_words(&[self.seed, TAG_PAIR, a1, a0, b1, b0]))
    }
}

/// Ids in the reserved namespace, for boundary and planted points.
pub fn reserved_id(seed: u64, label: u64) -> PointId {
    let hi = hash_words(&[seed, TAG_RESERVED, label]);
    let lo = hash_words(&[seed, TAG_RESERVED, label, 1]);
    PointId::reserved(((hi as u128) << 64) | lo as u128)
}

/// Boundary points from positions and optional marks.
pub fn boundary_points(seed: u64, positions: &[Vec<f64>], marks: &[Option<f64>]) -> Vec<MarkedPoint> {
    positions
        .iter()
        .enumerate()
        .map(|(i, p)| MarkedPoint::new(p.clone(), marks.get(i).copied().flatten(), reserved_id(seed, i as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn unit_ref(alpha: f64) -> ReferenceMeasure {
        ReferenceMeasure::unmarked(alpha).unwrap()
    }

    #[test]
    fn window_is_snapped_outward() {
        let w = Window::new(vec![0.1, 0.0], vec![1.0, 1.0]).unwrap();
        let c = sample_dominating(&w, &unit_ref(5.0), 1, 0.5).unwrap();
        assert_eq!(c.window.lo(0), -0.5);
        assert_eq!(c.window.hi(0), 1.0);
        assert_eq!(c.window.lo(1), -0.5);
        assert_eq!(c.window.hi(1), 0.5);
        assert!(c.points().iter().all(|p| c.window.contains(&p.position)));
    }

    #[test]
    fn same_seed_same_sample() {
        let w = Window::cube(2.0, 2);
        let a = sample_dominating(&w, &unit_ref(10.0), 7, 0.5).unwrap();
        let b = sample_dominating(&w, &unit_ref(10.0), 7, 0.5).unwrap();
        assert_eq!(a, b);
        let c = sample_dominating(&w, &unit_ref(10.0), 8, 0.5).unwrap();
        assert_ne!(a.pattern, c.pattern);
    }

    #[test]
    fn ids_are_unique_and_regular() {
        let c = sample_dominating(&Window::cube(6.0, 2), &unit_ref(5.0), 3, 0.5).unwrap();
        let mut ids: Vec<_> = c.points().iter().map(|p| p.id).collect();
        assert!(ids.iter().all(|id| !id.is_reserved()));
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), c.len());
        assert!(reserved_id(3, 0).is_reserved());
    }

    #[test]
    fn misaligned_restriction_fails() {
        let c = sample_dominating(&Window::cube(4.0, 2), &unit_ref(2.0), 1, 0.5).unwrap();
        let bad = Window::new(vec![0.1, 0.0], vec![1.0, 1.0]).unwrap();
        assert!(matches!(c.restrict(&bad), Err(Error::Alignment(_))));
        let outside = Window::cube(6.0, 2);
        assert!(matches!(c.restrict(&outside), Err(Error::Alignment(_))));
    }

    #[test]
    fn self_pair_is_an_error() {
        let o = PairMarkOracle::new(1);
        assert_eq!(o.pair_mark(PointId(5), PointId(5)), Err(Error::SelfPair));
        let r = o.pair_mark(PointId(5), PointId(6)).unwrap();
        assert!(r > 0.0 && r < 1.0);
    }

    #[test]
    fn marked_reference_attaches_marks() {
        let law = crate::model::MarkLaw::Uniform { max: 0.2 };
        let r = ReferenceMeasure::new(20.0, law).unwrap();
        let c = sample_dominating(&Window::cube(1.0, 2), &r, 4, 0.5).unwrap();
        assert!(c.points().iter().all(|p| matches!(p.mark, Some(m) if (0.0..0.2).contains(&m))));
    }

    #[test]
    fn pair_marks_are_uniform() {
        let o = PairMarkOracle::new(2024);
        let n = 100_000usize;
        let mut v: Vec<f64> = (0..n).map(|i| o.mark(PointId(i as u128), PointId(i as u128 + 1))).collect();
        v.sort_by(f64::total_cmp);
        let d = v
            .iter()
            .enumerate()
            .map(|(i, &x)| ((i + 1) as f64 / n as f64 - x).max(x - i as f64 / n as f64))
            .fold(0.0, f64::max);
        // critical value of the Kolmogorov distribution at level 0.001
        assert!(d * (n as f64).sqrt() < 1.95, "ks statistic {d}");
    }

    #[test]
    fn reversed_pair_marks_are_uncorrelated() {
        let o = PairMarkOracle::new(99);
        let n = 100_000usize;
        let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            let a = PointId((i as u128) << 3 | 1);
            let b = PointId(((i as u128) << 7) ^ 0xfeed);
            let x = o.mark(a, b);
            let y = o.mark(b, a);
            sx += x;
            sy += y;
            sxx += x * x;
            syy += y * y;
            sxy += x * y;
        }
        let nf = n as f64;
        let cov = sxy / nf - sx * sy / nf / nf;
        let corr = cov / ((sxx / nf - (sx / nf).powi(2)) * (syy / nf - (sy / nf).powi(2))).sqrt();
        assert!(corr.abs() <= 0.01, "corr {corr}");
    }

    #[test]
    fn cell_counts_pass_chi_square() {
        let c = sample_dominating(&Window::cube(2.0, 2), &unit_ref(2000.0), 11, 0.5).unwrap();
        let mut counts = [0f64; 16];
        for p in c.points() {
            let i = ((p.position[0] + 1.0) / 0.5).floor().clamp(0.0, 3.0) as usize;
            let j = ((p.position[1] + 1.0) / 0.5).floor().clamp(0.0, 3.0) as usize;
            counts[i * 4 + j] += 1.0;
        }
        let e = c.len() as f64 / 16.0;
        let chi2: f64 = counts.iter().map(|o| (o - e).powi(2) / e).sum();
        let p = 1.0 - ChiSquared::new(15.0).unwrap().cdf(chi2);
        assert!(p > 0.001, "chi2 {chi2}, p {p}");
    }

    #[test]
    fn counts_have_poisson_mean() {
        let w = Window::cube(1.0, 2);
        let reps = 400;
        let total: usize = (0..reps).map(|s| sample_dominating(&w, &unit_ref(30.0), s, 0.5).unwrap().len()).sum();
        let mean = total as f64 / reps as f64;
        // standard error of the mean is sqrt(30 / 400)
        assert!((mean - 30.0).abs() < 4.0 * (30.0f64 / 400.0).sqrt(), "mean {mean}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn restriction_equals_direct_sampling(
            seed in any::<u64>(),
            a in -4i64..0, b in 1i64..5, c in -4i64..0, d in 1i64..5,
        ) {
            let big = Window::cube(5.0, 2);
            let r = unit_ref(4.0);
            let full = sample_dominating(&big, &r, seed, 0.5).unwrap();
            let sub = Window::from_bounds(&[a as f64 * 0.5, c as f64 * 0.5], &[b as f64 * 0.5, d as f64 * 0.5]).unwrap();
            let direct = sample_dominating(&sub, &r, seed, 0.5).unwrap();
            prop_assert_eq!(full.restrict(&sub).unwrap(), direct);
        }
    }
}
