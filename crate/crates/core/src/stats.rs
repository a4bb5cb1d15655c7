//! Empirical checks: GNZ balance, Kolmogorov distance, dispersion, tail
//! fits, two-sample summaries and the CLT and Poisson approximation runs.

use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::geometry::{distance, MarkedPoint, PointId, PointPattern, PointRef, Window};
use crate::prf::{hash_words, stream};
use crate::scores::{calibrate_isolation_radius, score_sum, RadiusSpec, ScoreKind, ScoreSpec};
use crate::thinning::Simulator;

const TAG_GNZ: u64 = 0x676e_7a;
const TAG_BOOT: u64 = 0x626f_6f74;
const TAG_CLT: u64 = 0x636c_74;
const TAG_PA: u64 = 0x7061;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub rep: usize,
    pub seed: u64,
    pub statistic: String,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplicationTable {
    pub rows: Vec<ReplicationRow>,
}

impl ReplicationTable {
    pub fn push(&mut self, rep: usize, seed: u64, statistic: &str, value: f64) {
        self.rows.push(ReplicationRow { rep, seed, statistic: statistic.to_string(), value });
    }

    /// Sort rows by replication, then statistic name.
    pub fn sort(&mut self) {
        self.rows.sort_by(|a, b| a.rep.cmp(&b.rep).then_with(|| a.statistic.cmp(&b.statistic)));
    }

    pub fn values(&self, statistic: &str) -> Vec<f64> {
        self.rows.iter().filter(|r| r.statistic == statistic).map(|r| r.value).collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "rep,seed,statistic,value")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{}", r.rep, r.seed, r.statistic, r.value)?;
        }
        Ok(())
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; zero for fewer than two values.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

fn standard_error(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}

/// `(mean_a - mean_b) / sqrt(var_a / n_a + var_b / n_b)`.
pub fn two_sample_z(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InsufficientData("two-sample z needs two values per sample".into()));
    }
    let diff = mean(a) - mean(b);
    let se = (variance(a) / a.len() as f64 + variance(b) / b.len() as f64).sqrt();
    if se == 0.0 {
        return Ok(if diff == 0.0 { 0.0 } else { diff.signum() * f64::INFINITY });
    }
    Ok(diff / se)
}

/// Pearson correlation; zero when either sample is constant.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// `sup_u |F_n(u) - Phi(u)|` for the empirical distribution of `sample`.
pub fn kolmogorov_distance(sample: &[f64]) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::EmptyInput("sample"));
    }
    let normal = Normal::standard();
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut d = 0.0f64;
    let mut i = 0;
    while i < s.len() {
        let mut j = i;
        while j + 1 < s.len() && s[j + 1] == s[i] {
            j += 1;
        }
        let phi = normal.cdf(s[i]);
        d = d.max((phi - i as f64 / n).abs()).max(((j + 1) as f64 / n - phi).abs());
        i = j + 1;
    }
    Ok(d.min(1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DispersionIndex {
    pub index: f64,
    /// 95% percentile bootstrap interval.
    pub ci: (f64, f64),
}

impl DispersionIndex {
    pub fn ci_contains(&self, v: f64) -> bool {
        self.ci.0 <= v && v <= self.ci.1
    }
}

fn index_of_dispersion(xs: &[f64]) -> Option<f64> {
    let m = mean(xs);
    (m > 0.0).then(|| variance(xs) / m)
}

/// Variance over mean with a bootstrap interval from 1000 resamples.
pub fn dispersion_index(counts: &[u64]) -> Result<DispersionIndex> {
    if counts.len() < 30 {
        return Err(Error::InsufficientData(format!("dispersion index needs 30 counts, got {}", counts.len())));
    }
    let xs: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let index = index_of_dispersion(&xs).ok_or_else(|| Error::Degenerate("counts have zero mean".into()))?;
    let mut rng = stream(&[TAG_BOOT, counts.len() as u64]);
    let mut boot = Vec::with_capacity(1000);
    let mut buf = vec![0.0; xs.len()];
    for _ in 0..1000 {
        for b in buf.iter_mut() {
            *b = *xs.choose(&mut rng).expect("non-empty");
        }
        boot.push(index_of_dispersion(&buf).unwrap_or(0.0));
    }
    boot.sort_by(f64::total_cmp);
    Ok(DispersionIndex { index, ci: (boot[24], boot[974]) })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub rate: f64,
    pub intercept: f64,
    pub r_range: (f64, f64),
    /// Root mean square residual of the fit on the log scale.
    pub rms: f64,
}

/// Least-squares line through `(r, log p)` over the positive `p`.
pub fn tail_slope(tail: &[(f64, f64)]) -> Result<TailFit> {
    let pts: Vec<(f64, f64)> = tail.iter().filter(|t| t.1 > 0.0).map(|&(r, p)| (r, p.ln())).collect();
    if pts.len() < 4 {
        return Err(Error::InsufficientData(format!("tail fit needs 4 positive estimates, got {}", pts.len())));
    }
    let n = pts.len() as f64;
    let mr = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mr) * (p.0 - mr)).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("tail grid has a single radius".into()));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mr) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mr;
    let rms = (pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum::<f64>() / n).sqrt();
    let lo = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    Ok(TailFit { rate: -slope, intercept, r_range: (lo, hi), rms })
}

/// Test functions `f(x, phi)` for the GNZ balance check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    Constant,
    /// No point of `phi` within `r`.
    Void { r: f64 },
    /// Number of points of `phi` within `r`.
    NeighborCount { r: f64 },
    /// Some point of `phi` within `r`.
    HasNeighbor { r: f64 },
}

impl TestFunction {
    pub fn eval(&self, x: &[f64], phi: &[&MarkedPoint]) -> f64 {
        let within = |r: f64| phi.iter().filter(|p| distance(&p.position, x) <= r).count();
        match *self {
            TestFunction::Constant => 1.0,
            TestFunction::Void { r } => f64::from(within(r) == 0),
            TestFunction::NeighborCount { r } => within(r) as f64,
            TestFunction::HasNeighbor { r } => f64::from(within(r) > 0),
        }
    }

    pub fn label(&self) -> String {
        match self {
            TestFunction::Constant => "constant".into(),
            TestFunction::Void { r } => format!("void_{r}"),
            TestFunction::NeighborCount { r } => format!("neighbors_{r}"),
            TestFunction::HasNeighbor { r } => format!("has_neighbor_{r}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GnzResidual {
    pub test: TestFunction,
    pub lhs: f64,
    pub lhs_se: f64,
    pub rhs: f64,
    pub rhs_se: f64,
    pub z: f64,
}

/// Draws for one GNZ check: left side from `reps` patterns, right side from
/// `reps` further independent patterns with `points_per_draw` uniform
/// locations each.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GnzPlan {
    pub reps: usize,
    pub points_per_draw: usize,
    pub seed: u64,
}

/// Both sides of `E sum_x f(x, X - x) = int E f(x, X + x) kappa(x, X) lambda(dx)`
/// for every function in `battery`, from shared simulations.
pub fn gnz_residuals(
    sim: &Simulator,
    window: &Window,
    battery: &[TestFunction],
    plan: GnzPlan,
) -> Result<Vec<GnzResidual>> {
    if plan.reps < 2 || plan.points_per_draw == 0 {
        return Err(Error::Invalid("GNZ check needs at least two replications".into()));
    }
    let mass = sim.reference.mass(window);
    let dim = window.dim();
    let draws: Vec<(Vec<f64>, Vec<f64>)> = (0..plan.reps)
        .into_par_iter()
        .map(|r| -> Result<(Vec<f64>, Vec<f64>)> {
            let left = sim.run(window, hash_words(&[plan.seed, TAG_GNZ, 0, r as u64]))?;
            let pts: Vec<&MarkedPoint> = left.kept.points.iter().collect();
            let mut lhs = vec![0.0; battery.len()];
            for (i, x) in pts.iter().enumerate() {
                let rest: Vec<&MarkedPoint> =
                    pts.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, p)| *p).collect();
                for (t, f) in battery.iter().enumerate() {
                    lhs[t] += f.eval(&x.position, &rest);
                }
            }
            let right = sim.run(window, hash_words(&[plan.seed, TAG_GNZ, 1, r as u64]))?;
            let pts: Vec<&MarkedPoint> = right.kept.points.iter().collect();
            let bd: Vec<PointRef> = pts.iter().map(|p| p.view()).chain(sim.psi.iter().map(|p| p.view())).collect();
            let mut rng = stream(&[plan.seed, TAG_GNZ, 2, r as u64]);
            let mut rhs = vec![0.0; battery.len()];
            for _ in 0..plan.points_per_draw {
                let pos: Vec<f64> = (0..dim).map(|i| rng.random_range(window.lo(i)..window.hi(i))).collect();
                let mark = sim.reference.mark_law.sample(&mut rng);
                let kappa = sim.model.papangelou(PointRef { pos: &pos, mark }, &bd);
                for (t, f) in battery.iter().enumerate() {
                    rhs[t] += f.eval(&pos, &pts) * kappa * mass / plan.points_per_draw as f64;
                }
            }
            Ok((lhs, rhs))
        })
        .collect::<Result<_>>()?;
    Ok(battery
        .iter()
        .enumerate()
        .map(|(t, &test)| {
            let l: Vec<f64> = draws.iter().map(|d| d.0[t]).collect();
            let r: Vec<f64> = draws.iter().map(|d| d.1[t]).collect();
            let (lhs, lhs_se, rhs, rhs_se) = (mean(&l), standard_error(&l), mean(&r), standard_error(&r));
            let se = (lhs_se * lhs_se + rhs_se * rhs_se).sqrt();
            let z = if se > 0.0 { (lhs - rhs) / se } else if lhs == rhs { 0.0 } else { f64::INFINITY };
            GnzResidual { test, lhs, lhs_se, rhs, rhs_se, z }
        })
        .collect())
}

/// GNZ check for a single test function.
pub fn gnz_residual(sim: &Simulator, window: &Window, test: TestFunction, plan: GnzPlan) -> Result<GnzResidual> {
    Ok(gnz_residuals(sim, window, &[test], plan)?.remove(0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltRow {
    pub side: f64,
    pub lambda: f64,
    pub mean: f64,
    pub variance: f64,
    /// Variance over `lambda(Q)`.
    pub var_ratio: f64,
    pub d_k: f64,
    /// Largest certified stabilization radius among scored points.
    pub max_stab_radius: f64,
    pub reps: usize,
}

/// Parameters of a CLT run over square windows of the given sides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltPlan {
    pub sides: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
    /// Simulation happens on the window enlarged by this much.
    pub buffer: f64,
}

/// Score totals of `reps` patterns per window size, standardized by their
/// own mean and standard deviation.
pub fn clt_experiment(sim: &Simulator, kind: ScoreKind, dim: usize, plan: &CltPlan) -> Result<(Vec<CltRow>, ReplicationTable)> {
    if plan.sides.len() < 2 {
        return Err(Error::Invalid("CLT experiment needs at least two window sizes".into()));
    }
    if plan.reps < 200 {
        return Err(Error::Invalid(format!("CLT experiment needs 200 replications, got {}", plan.reps)));
    }
    let mut rows = Vec::new();
    let mut table = ReplicationTable::default();
    for (si, &side) in plan.sides.iter().enumerate() {
        let window = Window::cube(side, dim);
        let spec = ScoreSpec { kind, window: window.clone() }.resolve(sim.reference.alpha);
        let sim_window = window.expand(plan.buffer);
        let seeds: Vec<u64> = (0..plan.reps).map(|r| hash_words(&[plan.seed, TAG_CLT, si as u64, r as u64])).collect();
        let out: Vec<(f64, f64)> = seeds
            .par_iter()
            .map(|&s| -> Result<(f64, f64)> {
                let res = sim.run(&sim_window, s)?;
                let m = score_sum(&res.kept, &spec)?;
                let stab = max_stab_radius(&spec, &res.kept)?;
                Ok((m.total, stab))
            })
            .collect::<Result<_>>()?;
        let totals: Vec<f64> = out.iter().map(|o| o.0).collect();
        for (r, (&s, t)) in seeds.iter().zip(&totals).enumerate() {
            table.push(r, s, &format!("total_side_{side}"), *t);
        }
        let m = mean(&totals);
        let v = variance(&totals);
        if v <= 0.0 {
            return Err(Error::Degenerate(format!("score totals have zero variance at side {side}")));
        }
        let sd = v.sqrt();
        let z: Vec<f64> = totals.iter().map(|t| (t - m) / sd).collect();
        let lambda = sim.reference.mass(&window);
        rows.push(CltRow {
            side,
            lambda,
            mean: m,
            variance: v,
            var_ratio: v / lambda,
            d_k: kolmogorov_distance(&z)?,
            max_stab_radius: out.iter().map(|o| o.1).fold(0.0, f64::max),
            reps: plan.reps,
        });
    }
    Ok((rows, table))
}

fn max_stab_radius(spec: &ScoreSpec, pattern: &PointPattern) -> Result<f64> {
    if let ScoreKind::KnnLength { k } = spec.kind {
        if pattern.len() <= k {
            return Ok(0.0);
        }
    }
    let mut r = 0.0f64;
    for p in pattern.points.iter().filter(|p| spec.window.contains(&p.position)) {
        r = r.max(crate::scores::stabilization_radius(spec, pattern, p)?);
    }
    Ok(r)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoissonReport {
    pub u: f64,
    pub total_dispersion: DispersionIndex,
    pub cell_dispersion: Vec<DispersionIndex>,
    pub max_cell_correlation: f64,
    pub mean_total: f64,
    pub mean_total_se: f64,
    /// GNZ estimate of the mean number of isolated points.
    pub lambda_gnz: f64,
    pub lambda_gnz_se: f64,
    pub z: f64,
    pub reps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoissonPlan {
    pub window: Window,
    pub cells: usize,
    pub reps: usize,
    pub seed: u64,
    pub buffer: f64,
    /// Uniform locations per pattern in the GNZ estimate of the mean.
    pub points_per_draw: usize,
}

/// The isolation radius `radius` resolves to on `window`.
pub fn isolation_radius(radius: RadiusSpec, alpha: f64, window: &Window) -> f64 {
    match radius {
        RadiusSpec::Fixed { u } => u,
        RadiusSpec::Calibrated { beta2 } => calibrate_isolation_radius(alpha, window, beta2),
    }
}

fn cells_per_axis(cells: usize, dim: usize) -> Result<usize> {
    let m = (cells as f64).powf(1.0 / dim as f64).round() as usize;
    if m == 0 || m.pow(dim as u32) != cells {
        return Err(Error::Invalid(format!("{cells} cells do not form a grid in dimension {dim}")));
    }
    Ok(m)
}

fn cell_index(window: &Window, m: usize, x: &[f64]) -> usize {
    let mut idx = 0;
    for (i, &c) in x.iter().enumerate() {
        let t = ((c - window.lo(i)) / (window.hi(i) - window.lo(i)) * m as f64).floor() as isize;
        idx = idx * m + t.clamp(0, m as isize - 1) as usize;
    }
    idx
}

/// Thin each pattern to its isolated points and compare the counts with a
/// Poisson law whose mean comes from the GNZ identity.
pub fn poisson_approx_experiment(sim: &Simulator, radius: RadiusSpec, plan: &PoissonPlan) -> Result<(PoissonReport, ReplicationTable)> {
    let window = &plan.window;
    let dim = window.dim();
    let m = cells_per_axis(plan.cells, dim)?;
    let u = isolation_radius(radius, sim.reference.alpha, window);
    let sim_window = window.expand(plan.buffer.max(u));
    let mass = sim.reference.mass(window);
    let seeds: Vec<u64> = (0..plan.reps).map(|r| hash_words(&[plan.seed, TAG_PA, r as u64])).collect();
    let out: Vec<(Vec<u64>, f64)> = seeds
        .par_iter()
        .enumerate()
        .map(|(r, &s)| -> Result<(Vec<u64>, f64)> {
            let res = sim.run(&sim_window, s)?;
            let spec = ScoreSpec { kind: ScoreKind::Isolated { radius: RadiusSpec::Fixed { u } }, window: window.clone() };
            let scores = score_sum(&res.kept, &spec)?;
            let mut counts = vec![0u64; plan.cells];
            let pos: std::collections::HashMap<PointId, &MarkedPoint> =
                res.kept.points.iter().map(|p| (p.id, p)).collect();
            for (id, g) in &scores.scores {
                if *g > 0.0 {
                    counts[cell_index(window, m, &pos[id].position)] += 1;
                }
            }
            // GNZ side from an independent pattern
            let other = sim.run(&sim_window, hash_words(&[plan.seed, TAG_PA, 1, r as u64]))?;
            let bd: Vec<PointRef> =
                other.kept.points.iter().map(|p| p.view()).chain(sim.psi.iter().map(|p| p.view())).collect();
            let mut rng = stream(&[plan.seed, TAG_PA, 2, r as u64]);
            let mut acc = 0.0;
            for _ in 0..plan.points_per_draw.max(1) {
                let x: Vec<f64> = (0..dim).map(|i| rng.random_range(window.lo(i)..window.hi(i))).collect();
                let mark = sim.reference.mark_law.sample(&mut rng);
                let isolated = !other.kept.points.iter().any(|p| distance(&p.position, &x) <= u);
                if isolated {
                    acc += sim.model.papangelou(PointRef { pos: &x, mark }, &bd);
                }
            }
            Ok((counts, acc * mass / plan.points_per_draw.max(1) as f64))
        })
        .collect::<Result<_>>()?;
    let mut table = ReplicationTable::default();
    let totals: Vec<u64> = out.iter().map(|o| o.0.iter().sum()).collect();
    for (r, (&s, o)) in seeds.iter().zip(&out).enumerate() {
        table.push(r, s, "isolated_total", totals[r] as f64);
        table.push(r, s, "gnz_draw", o.1);
        for (c, &n) in o.0.iter().enumerate() {
            table.push(r, s, &format!("cell_{c}"), n as f64);
        }
    }
    let totals_f: Vec<f64> = totals.iter().map(|&t| t as f64).collect();
    let gnz: Vec<f64> = out.iter().map(|o| o.1).collect();
    let cell_counts: Vec<Vec<f64>> =
        (0..plan.cells).map(|c| out.iter().map(|o| o.0[c] as f64).collect()).collect();
    let mut max_corr = 0.0f64;
    for a in 0..plan.cells {
        for b in a + 1..plan.cells {
            max_corr = max_corr.max(correlation(&cell_counts[a], &cell_counts[b]).abs());
        }
    }
    let cell_dispersion = (0..plan.cells)
        .map(|c| dispersion_index(&out.iter().map(|o| o.0[c]).collect::<Vec<_>>()))
        .collect::<Result<_>>()?;
    let (mean_total, mean_total_se) = (mean(&totals_f), standard_error(&totals_f));
    let (lambda_gnz, lambda_gnz_se) = (mean(&gnz), standard_error(&gnz));
    let se = (mean_total_se.powi(2) + lambda_gnz_se.powi(2)).sqrt();
    let report = PoissonReport {
        u,
        total_dispersion: dispersion_index(&totals)?,
        cell_dispersion,
        max_cell_correlation: max_corr,
        mean_total,
        mean_total_se,
        lambda_gnz,
        lambda_gnz_se,
        z: if se > 0.0 { (mean_total - lambda_gnz) / se } else { 0.0 },
        reps: plan.reps,
    };
    Ok((report, table))
}
