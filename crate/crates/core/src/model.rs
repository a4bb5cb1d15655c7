//! Reference measures and interaction families.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{distance, distance2, MarkedPoint, PointRef, Window};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MarkLaw {
    None,
    Uniform { max: f64 },
    Exponential { rate: f64 },
}

impl MarkLaw {
    pub fn validate(&self) -> Result<()> {
        match *self {
            MarkLaw::None => Ok(()),
            MarkLaw::Uniform { max } if max > 0.0 && max.is_finite() => Ok(()),
            MarkLaw::Exponential { rate } if rate > 0.0 && rate.is_finite() => Ok(()),
            _ => Err(Error::Invalid(format!("bad mark law {self:?}"))),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<f64> {
        match *self {
            MarkLaw::None => None,
            MarkLaw::Uniform { max } => Some(max * rng.random::<f64>()),
            MarkLaw::Exponential { rate } => Some(Exp::new(rate).expect("validated rate").sample(rng)),
        }
    }

    pub fn is_marked(&self) -> bool {
        !matches!(self, MarkLaw::None)
    }
}

/// Homogeneous reference intensity with an optional mark law. The activity
/// of every interaction family is folded into `alpha`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceMeasure {
    pub alpha: f64,
    pub mark_law: MarkLaw,
}

impl ReferenceMeasure {
    pub fn new(alpha: f64, mark_law: MarkLaw) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Invalid(format!("intensity must be positive, got {alpha}")));
        }
        mark_law.validate()?;
        Ok(ReferenceMeasure { alpha, mark_law })
    }

    pub fn unmarked(alpha: f64) -> Result<Self> {
        ReferenceMeasure::new(alpha, MarkLaw::None)
    }

    /// Mass `lambda(W)` of a window.
    pub fn mass(&self, window: &Window) -> f64 {
        self.alpha * window.volume()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LocalRule {
    /// Saturated pair counting at distance `range / 2`: each point pays
    /// `gamma` for each of its first `saturation` close neighbours.
    Saturation { gamma: f64, saturation: u32 },
    /// Radius marks; overlapping discs are forbidden.
    GermGrain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum InteractionModel {
    Poisson,
    Strauss { gamma: f64, radius: f64 },
    HardSphere { radius: f64 },
    /// `v = beta * exp(-d / scale)` for `d <= cutoff`, zero beyond.
    SoftPair { beta: f64, scale: f64, cutoff: f64 },
    LocalRelation { range: f64, rule: LocalRule },
}

/// Cutoff, in units of the scale, below which the soft kernel is kept.
pub const SOFT_CUTOFF_SCALES: f64 = 40.0;

impl InteractionModel {
    pub fn strauss(gamma: f64, radius: f64) -> Result<Self> {
        let m = InteractionModel::Strauss { gamma, radius };
        m.validate()?;
        Ok(m)
    }

    pub fn hard_sphere(radius: f64) -> Result<Self> {
        let m = InteractionModel::HardSphere { radius };
        m.validate()?;
        Ok(m)
    }

    pub fn soft_pair(beta: f64, scale: f64) -> Result<Self> {
        let m = InteractionModel::SoftPair { beta, scale, cutoff: SOFT_CUTOFF_SCALES * scale };
        m.validate()?;
        Ok(m)
    }

    pub fn saturation(gamma: f64, saturation: u32, range: f64) -> Result<Self> {
        let m = InteractionModel::LocalRelation { range, rule: LocalRule::Saturation { gamma, saturation } };
        m.validate()?;
        Ok(m)
    }

    pub fn germ_grain(range: f64) -> Result<Self> {
        let m = InteractionModel::LocalRelation { range, rule: LocalRule::GermGrain };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Invalid(format!("{name} must be positive, got {v}")))
            }
        };
        match *self {
            InteractionModel::Poisson => Ok(()),
            InteractionModel::Strauss { gamma, radius } => {
                if !(0.0..1.0).contains(&gamma) {
                    return Err(Error::Invalid(format!("gamma must lie in [0,1), got {gamma}")));
                }
                positive("R", radius)
            }
            InteractionModel::HardSphere { radius } => positive("R", radius),
            InteractionModel::SoftPair { beta, scale, cutoff } => {
                positive("beta", beta)?;
                positive("scale", scale)?;
                positive("cutoff", cutoff)
            }
            InteractionModel::LocalRelation { range, ref rule } => {
                positive("r0", range)?;
                if let LocalRule::Saturation { gamma, saturation } = *rule {
                    if !(0.0..=1.0).contains(&gamma) {
                        return Err(Error::Invalid(format!("saturation gamma must lie in [0,1], got {gamma}")));
                    }
                    if saturation == 0 {
                        return Err(Error::Invalid("saturation must be at least 1".into()));
                    }
                }
                Ok(())
            }
        }
    }

    /// True when the conditional intensity factorises over pairs.
    pub fn is_pairwise(&self) -> bool {
        !matches!(self, InteractionModel::LocalRelation { .. })
    }

    /// True when the interaction vanishes identically.
    pub fn is_trivial(&self) -> bool {
        matches!(self, InteractionModel::Poisson)
    }

    /// Distance beyond which points never interact.
    pub fn interaction_range(&self) -> f64 {
        match *self {
            InteractionModel::Poisson => 0.0,
            InteractionModel::Strauss { radius, .. } | InteractionModel::HardSphere { radius } => radius,
            InteractionModel::SoftPair { cutoff, .. } => cutoff,
            InteractionModel::LocalRelation { range, .. } => range,
        }
    }

    /// Pair potential `v(x, y)`.
    pub fn potential_value(&self, x: PointRef, y: PointRef) -> Result<f64> {
        let d = distance(x.pos, y.pos);
        match *self {
            InteractionModel::Poisson => Ok(0.0),
            InteractionModel::Strauss { gamma, radius } => Ok(if d <= radius { -gamma.ln() } else { 0.0 }),
            InteractionModel::HardSphere { radius } => Ok(if d <= radius { f64::INFINITY } else { 0.0 }),
            InteractionModel::SoftPair { beta, scale, cutoff } => {
                Ok(if d <= cutoff { beta * (-d / scale).exp() } else { 0.0 })
            }
            InteractionModel::LocalRelation { .. } => {
                Err(Error::Unsupported("local relation models have no pair potential".into()))
            }
        }
    }

    /// Connection probability `1 - exp(-v(x, y))`.
    pub fn connection_prob(&self, x: PointRef, y: PointRef) -> Result<f64> {
        let v = self.potential_value(x, y)?;
        Ok(-(-v).exp_m1())
    }

    /// `exp(-v(x, y))` for pairwise families. Exact 1.0 beyond the range.
    #[inline]
    pub(crate) fn pair_factor(&self, x: PointRef, y: PointRef) -> f64 {
        match *self {
            InteractionModel::Poisson => 1.0,
            InteractionModel::Strauss { gamma, radius } => {
                if distance2(x.pos, y.pos) <= radius * radius {
                    gamma
                } else {
                    1.0
                }
            }
            InteractionModel::HardSphere { radius } => {
                if distance2(x.pos, y.pos) <= radius * radius {
                    0.0
                } else {
                    1.0
                }
            }
            InteractionModel::SoftPair { beta, scale, cutoff } => {
                let d2 = distance2(x.pos, y.pos);
                if d2 <= cutoff * cutoff {
                    (-beta * (-d2.sqrt() / scale).exp()).exp()
                } else {
                    1.0
                }
            }
            InteractionModel::LocalRelation { rule: LocalRule::GermGrain, .. } => {
                if germ_overlap(x, y) {
                    0.0
                } else {
                    1.0
                }
            }
            InteractionModel::LocalRelation { .. } => unreachable!("pair factor of a non-pairwise rule"),
        }
    }

    /// Connection probability without the error path, for pairwise families.
    #[inline]
    pub(crate) fn pi(&self, x: PointRef, y: PointRef) -> f64 {
        match *self {
            InteractionModel::Poisson => 0.0,
            InteractionModel::Strauss { gamma, radius } => {
                if distance2(x.pos, y.pos) <= radius * radius {
                    1.0 - gamma
                } else {
                    0.0
                }
            }
            InteractionModel::HardSphere { radius } => {
                if distance2(x.pos, y.pos) <= radius * radius {
                    1.0
                } else {
                    0.0
                }
            }
            InteractionModel::SoftPair { beta, scale, cutoff } => {
                let d2 = distance2(x.pos, y.pos);
                if d2 <= cutoff * cutoff {
                    -(-beta * (-d2.sqrt() / scale).exp()).exp_m1()
                } else {
                    0.0
                }
            }
            _ => unreachable!("connection probability of a local relation model"),
        }
    }

    /// Papangelou conditional intensity `kappa(x, phi)`, relative to the
    /// reference intensity.
    pub fn papangelou(&self, x: PointRef, phi: &[PointRef]) -> f64 {
        match self {
            InteractionModel::LocalRelation { range, rule: LocalRule::Saturation { gamma, saturation } } => {
                saturation_kappa(x, phi, 0.5 * range, *gamma, *saturation)
            }
            _ => {
                let mut k = 1.0;
                for y in phi {
                    k *= self.pair_factor(x, *y);
                    if k == 0.0 {
                        break;
                    }
                }
                k
            }
        }
    }

    /// `rho_nu(x) = prod_{y in nu} (1 - pi(x, y))`.
    pub fn thinned_intensity(&self, x: PointRef, nu: &[PointRef]) -> Result<f64> {
        if !self.is_pairwise() {
            return Err(Error::Unsupported("thinned intensity needs a pair potential".into()));
        }
        Ok(nu.iter().map(|y| self.pair_factor(x, *y)).product())
    }

    /// Local relation `x ~ y` of the finite-range families.
    pub fn relation_holds(&self, x: PointRef, y: PointRef) -> Result<bool> {
        let d2 = distance2(x.pos, y.pos);
        match *self {
            InteractionModel::Poisson => Ok(false),
            InteractionModel::Strauss { radius, .. } | InteractionModel::HardSphere { radius } => {
                Ok(d2 <= radius * radius)
            }
            InteractionModel::SoftPair { .. } => {
                Err(Error::Unsupported("soft pair interactions have unbounded range".into()))
            }
            InteractionModel::LocalRelation { range, rule: LocalRule::Saturation { .. } } => Ok(d2 <= range * range),
            InteractionModel::LocalRelation { range, rule: LocalRule::GermGrain } => {
                let (mx, my) = radius_marks(x, y)?;
                if mx + my > range {
                    return Err(Error::Mark(format!("radius marks {mx} + {my} exceed r0 = {range}")));
                }
                Ok(d2 <= (mx + my) * (mx + my))
            }
        }
    }

    /// Unnormalised density ratio `kappa~(phi, psi)`: points of `phi` added
    /// one at a time on top of `psi`.
    pub fn sequential_weight(&self, phi: &[PointRef], psi: &[PointRef]) -> f64 {
        let mut acc: Vec<PointRef> = psi.to_vec();
        let mut w = 1.0;
        for x in phi {
            w *= self.papangelou(*x, &acc);
            if w == 0.0 {
                return 0.0;
            }
            acc.push(*x);
        }
        w
    }
}

fn radius_marks(x: PointRef, y: PointRef) -> Result<(f64, f64)> {
    match (x.mark, y.mark) {
        (Some(a), Some(b)) if a >= 0.0 && b >= 0.0 => Ok((a, b)),
        _ => Err(Error::Mark("germ-grain relation needs non-negative radius marks".into())),
    }
}

fn germ_overlap(x: PointRef, y: PointRef) -> bool {
    let (a, b) = (x.mark.unwrap_or(0.0), y.mark.unwrap_or(0.0));
    distance2(x.pos, y.pos) <= (a + b) * (a + b)
}

fn saturation_kappa(x: PointRef, phi: &[PointRef], r: f64, gamma: f64, s: u32) -> f64 {
    let r2 = r * r;
    let s = s as usize;
    let close: Vec<usize> = (0..phi.len()).filter(|&i| distance2(x.pos, phi[i].pos) <= r2).collect();
    let mut exponent = close.len().min(s);
    for &i in &close {
        let t = (0..phi.len()).filter(|&j| j != i && distance2(phi[i].pos, phi[j].pos) <= r2).count();
        exponent += (t + 1).min(s) - t.min(s);
    }
    gamma.powi(exponent as i32)
}

/// Views of a slice of points.
pub fn views(points: &[MarkedPoint]) -> Vec<PointRef<'_>> {
    points.iter().map(|p| p.view()).collect()
}
