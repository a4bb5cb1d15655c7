//! Points, windows, the uniform grid index and the cube-wise total order.

use std::cmp::Ordering;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 128-bit point identifier. Ids with the top bit set belong to the reserved
/// namespace used for boundary and planted points. Serialized as 32 hex
/// digits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct PointId(pub u128);

impl From<PointId> for String {
    fn from(id: PointId) -> String {
        id.to_string()
    }
}

impl TryFrom<String> for PointId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        PointId::parse_hex(&s)
    }
}

impl PointId {
    pub const RESERVED_BIT: u128 = 1 << 127;

    pub fn reserved(raw: u128) -> Self {
        PointId(raw | Self::RESERVED_BIT)
    }

    pub fn regular(raw: u128) -> Self {
        PointId(raw & !Self::RESERVED_BIT)
    }

    pub fn is_reserved(self) -> bool {
        self.0 & Self::RESERVED_BIT != 0
    }

    pub fn parse_hex(s: &str) -> Result<Self> {
        let t = s.trim();
        if t.len() != 32 {
            return Err(Error::Parse(format!("id `{t}` is not 32 hex digits")));
        }
        u128::from_str_radix(t, 16)
            .map(PointId)
            .map_err(|e| Error::Parse(format!("id `{t}`: {e}")))
    }
}

impl fmt::Display for PointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:032x}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarkedPoint {
    pub position: Vec<f64>,
    pub mark: Option<f64>,
    pub id: PointId,
}

/// Borrowed view of a point, enough to evaluate interactions.
#[derive(Clone, Copy, Debug)]
pub struct PointRef<'a> {
    pub pos: &'a [f64],
    pub mark: Option<f64>,
}

impl MarkedPoint {
    pub fn new(position: Vec<f64>, mark: Option<f64>, id: PointId) -> Self {
        MarkedPoint { position, mark, id }
    }

    pub fn dim(&self) -> usize {
        self.position.len()
    }

    pub fn view(&self) -> PointRef<'_> {
        PointRef { pos: &self.position, mark: self.mark }
    }

    pub fn distance(&self, other: &MarkedPoint) -> f64 {
        distance(&self.position, &other.position)
    }
}

pub fn distance2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    distance2(a, b).sqrt()
}

/// Axis-aligned box given by its center and side lengths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub center: Vec<f64>,
    pub sides: Vec<f64>,
}

impl Window {
    pub fn new(center: Vec<f64>, sides: Vec<f64>) -> Result<Self> {
        if center.len() != sides.len() {
            return Err(Error::Dimension { expected: center.len(), found: sides.len() });
        }
        if center.is_empty() {
            return Err(Error::EmptyInput("window of dimension zero"));
        }
        if sides.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Invalid("window sides must be positive and finite".into()));
        }
        Ok(Window { center, sides })
    }

    /// The cube `[-n/2, n/2]^d`.
    pub fn cube(n: f64, dim: usize) -> Self {
        Window { center: vec![0.0; dim], sides: vec![n; dim] }
    }

    pub fn from_bounds(lo: &[f64], hi: &[f64]) -> Result<Self> {
        let center = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let sides = lo.iter().zip(hi).map(|(a, b)| b - a).collect();
        Window::new(center, sides)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn lo(&self, i: usize) -> f64 {
        self.center[i] - 0.5 * self.sides[i]
    }

    pub fn hi(&self, i: usize) -> f64 {
        self.center[i] + 0.5 * self.sides[i]
    }

    pub fn volume(&self) -> f64 {
        self.sides.iter().product()
    }

    pub fn contains(&self, pos: &[f64]) -> bool {
        pos.len() == self.dim() && (0..self.dim()).all(|i| pos[i] >= self.lo(i) && pos[i] <= self.hi(i))
    }

    pub fn contains_window(&self, other: &Window) -> bool {
        const EPS: f64 = 1e-12;
        other.dim() == self.dim()
            && (0..self.dim()).all(|i| other.lo(i) >= self.lo(i) - EPS && other.hi(i) <= self.hi(i) + EPS)
    }

    pub fn intersect(&self, other: &Window) -> Option<Window> {
        let mut lo = Vec::with_capacity(self.dim());
        let mut hi = Vec::with_capacity(self.dim());
        for i in 0..self.dim() {
            let a = self.lo(i).max(other.lo(i));
            let b = self.hi(i).min(other.hi(i));
            if b <= a {
                return None;
            }
            lo.push(a);
            hi.push(b);
        }
        Window::from_bounds(&lo, &hi).ok()
    }

    /// The window grown by `buffer` on every side.
    pub fn expand(&self, buffer: f64) -> Window {
        Window {
            center: self.center.clone(),
            sides: self.sides.iter().map(|s| s + 2.0 * buffer).collect(),
        }
    }

    /// Euclidean distance from `pos` to the box (zero inside).
    pub fn distance_to(&self, pos: &[f64]) -> f64 {
        let mut d2 = 0.0;
        for (i, &x) in pos.iter().enumerate() {
            let e = (self.lo(i) - x).max(x - self.hi(i)).max(0.0);
            d2 += e * e;
        }
        d2.sqrt()
    }

    /// Largest distance from `pos` to a point of the box.
    pub fn max_distance_from(&self, pos: &[f64]) -> f64 {
        let mut d2 = 0.0;
        for (i, &x) in pos.iter().enumerate() {
            let e = (x - self.lo(i)).abs().max((self.hi(i) - x).abs());
            d2 += e * e;
        }
        d2.sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointPattern {
    pub dim: usize,
    pub points: Vec<MarkedPoint>,
}

impl PointPattern {
    pub fn new(dim: usize, points: Vec<MarkedPoint>) -> Result<Self> {
        for p in &points {
            if p.dim() != dim {
                return Err(Error::Dimension { expected: dim, found: p.dim() });
            }
        }
        Ok(PointPattern { dim, points })
    }

    pub fn empty(dim: usize) -> Self {
        PointPattern { dim, points: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, MarkedPoint> {
        self.points.iter()
    }

    pub fn position_of(&self, id: PointId) -> Option<usize> {
        self.points.iter().position(|p| p.id == id)
    }

    pub fn restrict(&self, window: &Window) -> PointPattern {
        PointPattern {
            dim: self.dim,
            points: self.points.iter().filter(|p| window.contains(&p.position)).cloned().collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut header: Vec<String> = (1..=self.dim).map(|i| format!("x{i}")).collect();
        header.push("mark".into());
        header.push("id".into());
        writeln!(w, "{}", header.join(","))?;
        for p in &self.points {
            let mut row: Vec<String> = p.position.iter().map(|x| x.to_string()).collect();
            row.push(p.mark.map(|m| m.to_string()).unwrap_or_default());
            row.push(p.id.to_string());
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or(Error::EmptyInput("csv without header"))?
            .map_err(|e| Error::Parse(e.to_string()))?;
        let cols: Vec<&str> = header.trim_end().split(',').collect();
        if cols.len() < 3 || cols[cols.len() - 2] != "mark" || cols[cols.len() - 1] != "id" {
            return Err(Error::Parse(format!("unexpected header `{header}`")));
        }
        let dim = cols.len() - 2;
        let mut points = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::Parse(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim_end().split(',').collect();
            if fields.len() != dim + 2 {
                return Err(Error::Dimension { expected: dim + 2, found: fields.len() });
            }
            let parse = |s: &str| -> Result<f64> {
                s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("line {}: {e}", n + 2)))
            };
            let position = fields[..dim].iter().map(|s| parse(s)).collect::<Result<Vec<_>>>()?;
            let mark = match fields[dim].trim() {
                "" => None,
                s => Some(parse(s)?),
            };
            points.push(MarkedPoint::new(position, mark, PointId::parse_hex(fields[dim + 1])?));
        }
        PointPattern::new(dim, points)
    }
}

/// Uniform grid over the bounding box of a set of positions.
#[derive(Clone, Debug)]
pub struct GridIndex {
    dim: usize,
    side: f64,
    lo: Vec<f64>,
    counts: Vec<usize>,
    cells: Vec<Vec<u32>>,
}

const MAX_GRID_CELLS: usize = 1 << 22;

impl GridIndex {
    pub fn build<'a, I>(dim: usize, positions: I, side: f64) -> Self
    where
        I: IntoIterator<Item = &'a [f64]> + Clone,
    {
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        let mut n = 0usize;
        for p in positions.clone() {
            n += 1;
            for i in 0..dim {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        if n == 0 {
            return GridIndex { dim, side: 1.0, lo: vec![0.0; dim], counts: vec![1; dim], cells: vec![Vec::new()] };
        }
        let mut side = if side.is_finite() && side > 0.0 { side } else { 1.0 };
        let mut counts: Vec<usize>;
        loop {
            counts = (0..dim).map(|i| ((hi[i] - lo[i]) / side).floor() as usize + 1).collect();
            if counts.iter().product::<usize>() <= MAX_GRID_CELLS {
                break;
            }
            side *= 2.0;
        }
        let mut index = GridIndex { dim, side, lo, counts, cells: Vec::new() };
        index.cells = vec![Vec::new(); index.counts.iter().product()];
        for (k, p) in positions.into_iter().enumerate() {
            let c = index.cell_of(p);
            index.cells[c].push(k as u32);
        }
        index
    }

    pub fn for_pattern(pattern: &PointPattern, side: f64) -> Self {
        GridIndex::build(pattern.dim, pattern.points.iter().map(|p| p.position.as_slice()), side)
    }

    fn axis_cell(&self, i: usize, x: f64) -> isize {
        ((x - self.lo[i]) / self.side).floor() as isize
    }

    fn cell_of(&self, p: &[f64]) -> usize {
        let mut c = 0usize;
        for i in 0..self.dim {
            let k = self.axis_cell(i, p[i]).clamp(0, self.counts[i] as isize - 1) as usize;
            c = c * self.counts[i] + k;
        }
        c
    }

    /// Calls `f` with every indexed item whose cell meets the box around the ball.
    /// Callers filter by exact distance.
    pub fn candidates<F: FnMut(usize)>(&self, center: &[f64], radius: f64, mut f: F) {
        let mut lo_k = vec![0usize; self.dim];
        let mut hi_k = vec![0usize; self.dim];
        for i in 0..self.dim {
            let a = self.axis_cell(i, center[i] - radius);
            let b = self.axis_cell(i, center[i] + radius);
            if b < 0 || a >= self.counts[i] as isize {
                return;
            }
            lo_k[i] = a.max(0) as usize;
            hi_k[i] = b.min(self.counts[i] as isize - 1) as usize;
        }
        let mut k = lo_k.clone();
        loop {
            let mut c = 0usize;
            for i in 0..self.dim {
                c = c * self.counts[i] + k[i];
            }
            for &item in &self.cells[c] {
                f(item as usize);
            }
            let mut axis = self.dim;
            loop {
                if axis == 0 {
                    return;
                }
                axis -= 1;
                if k[axis] < hi_k[axis] {
                    k[axis] += 1;
                    break;
                }
                k[axis] = lo_k[axis];
            }
        }
    }
}

/// Indices of pattern points within `radius` of `center`, excluding the
/// center itself (matched by id). Sorted ascending.
pub fn ball_neighbors(
    pattern: &PointPattern,
    index: &GridIndex,
    center: &MarkedPoint,
    radius: f64,
) -> Result<Vec<usize>> {
    if center.dim() != pattern.dim {
        return Err(Error::Dimension { expected: pattern.dim, found: center.dim() });
    }
    let r2 = radius * radius;
    let mut out = Vec::new();
    index.candidates(&center.position, radius, |k| {
        let p = &pattern.points[k];
        if p.id != center.id && distance2(&p.position, &center.position) <= r2 {
            out.push(k);
        }
    });
    out.sort_unstable();
    Ok(out)
}

/// Largest pairwise distance within a point set.
pub fn spatial_diameter(points: &[&[f64]]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::EmptyInput("diameter of an empty set"));
    }
    let mut best = 0.0f64;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            best = best.max(distance2(points[i], points[j]));
        }
    }
    Ok(best.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderScheme {
    /// Cells in raster order, axis 0 slowest.
    Raster,
    /// Cells sorted by their Chebyshev shell around the window center,
    /// outermost shell first, raster order within a shell. Gives
    /// `iota(W_m \ W_n) < iota(W_n)` for concentric cubes aligned to the grid.
    OutsideIn,
}

/// Key of the cube-wise total order: cell rank, then coordinates
/// lexicographically, then id.
#[derive(Clone, Debug, PartialEq)]
pub struct OrderKey {
    pub cell: i64,
    pub coords: Vec<f64>,
    pub id: PointId,
}

impl Eq for OrderKey {}

impl PartialOrd for OrderKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrderKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cell
            .cmp(&other.cell)
            .then_with(|| cmp_coords(&self.coords, &other.coords))
            .then_with(|| self.id.cmp(&other.id))
    }
}

fn cmp_coords(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

/// Total order on the points of a window, built from a partition of the
/// window into cubes of side `cell_side`.
#[derive(Clone, Debug)]
pub struct CubeOrdering {
    window: Window,
    cell_side: f64,
    scheme: OrderScheme,
    counts: Vec<i64>,
    total: i64,
}

impl CubeOrdering {
    pub fn new(window: &Window, cell_side: f64, scheme: OrderScheme) -> Result<Self> {
        if !(cell_side.is_finite() && cell_side > 0.0) {
            return Err(Error::Invalid("cell side must be positive".into()));
        }
        let counts: Vec<i64> = window.sides.iter().map(|s| ((s / cell_side) - 1e-9).ceil().max(1.0) as i64).collect();
        let total = counts.iter().product();
        Ok(CubeOrdering { window: window.clone(), cell_side, scheme, counts, total })
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn scheme(&self) -> OrderScheme {
        self.scheme
    }

    /// Rank of the cell holding `pos`. Positions outside the window are
    /// clamped onto the boundary cells.
    pub fn cell_rank(&self, pos: &[f64]) -> i64 {
        let d = self.window.dim();
        let mut raster = 0i64;
        let mut shell = 0.0f64;
        for i in 0..d {
            let lo = self.window.lo(i);
            let k = (((pos[i] - lo) / self.cell_side).floor() as i64).clamp(0, self.counts[i] - 1);
            raster = raster * self.counts[i] + k;
            if self.scheme == OrderScheme::OutsideIn {
                let a = lo + k as f64 * self.cell_side - self.window.center[i];
                let b = a + self.cell_side;
                shell = shell.max(a.abs()).max(b.abs());
            }
        }
        match self.scheme {
            OrderScheme::Raster => raster,
            OrderScheme::OutsideIn => {
                let s = ((shell / self.cell_side) - 1e-9).ceil() as i64;
                -s * self.total + raster
            }
        }
    }

    /// Compare two positions; ids break exact ties elsewhere.
    pub fn cmp_positions(&self, a: &[f64], b: &[f64]) -> Ordering {
        self.cell_rank(a).cmp(&self.cell_rank(b)).then_with(|| cmp_coords(a, b))
    }

    pub fn key(&self, point: &MarkedPoint) -> Result<OrderKey> {
        if point.dim() != self.window.dim() {
            return Err(Error::Dimension { expected: self.window.dim(), found: point.dim() });
        }
        if !self.window.contains(&point.position) {
            return Err(Error::Domain(format!("{:?} is outside the ordering window", point.position)));
        }
        Ok(OrderKey { cell: self.cell_rank(&point.position), coords: point.position.clone(), id: point.id })
    }

    /// Key for any position, clamping outside points onto boundary cells.
    pub fn key_unchecked(&self, point: &MarkedPoint) -> OrderKey {
        OrderKey { cell: self.cell_rank(&point.position), coords: point.position.clone(), id: point.id }
    }

    /// Indices of `points` sorted increasingly.
    pub fn sort_indices(&self, points: &[MarkedPoint]) -> Vec<usize> {
        let keys: Vec<OrderKey> = points.iter().map(|p| self.key_unchecked(p)).collect();
        let mut idx: Vec<usize> = (0..points.len()).collect();
        idx.sort_by(|&a, &b| keys[a].cmp(&keys[b]));
        idx
    }
}

/// Raster cube-wise ordering key of a point in `window`.
pub fn cube_ordering_key(point: &MarkedPoint, window: &Window, cell_side: f64) -> Result<OrderKey> {
    CubeOrdering::new(window, cell_side, OrderScheme::Raster)?.key(point)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pt(x: f64, y: f64, id: u128) -> MarkedPoint {
        MarkedPoint::new(vec![x, y], None, PointId(id))
    }

    #[test]
    fn neighbors_of_a_small_cloud() {
        let pattern = PointPattern::new(2, vec![pt(0.0, 0.0, 1), pt(0.3, 0.0, 2), pt(1.0, 1.0, 3)]).unwrap();
        let index = GridIndex::for_pattern(&pattern, 0.5);
        let n = ball_neighbors(&pattern, &index, &pattern.points[0], 0.5).unwrap();
        assert_eq!(n, vec![1]);
    }

    #[test]
    fn neighbor_radius_is_closed() {
        let pattern = PointPattern::new(2, vec![pt(0.0, 0.0, 1), pt(0.5, 0.0, 2)]).unwrap();
        let index = GridIndex::for_pattern(&pattern, 0.5);
        assert_eq!(ball_neighbors(&pattern, &index, &pattern.points[0], 0.5).unwrap(), vec![1]);
    }

    #[test]
    fn neighbor_query_checks_dimension() {
        let pattern = PointPattern::new(2, vec![pt(0.0, 0.0, 1)]).unwrap();
        let index = GridIndex::for_pattern(&pattern, 0.5);
        let c = MarkedPoint::new(vec![0.0, 0.0, 0.0], None, PointId(9));
        assert!(matches!(ball_neighbors(&pattern, &index, &c, 1.0), Err(Error::Dimension { .. })));
    }

    #[test]
    fn ordering_key_rejects_outside_points() {
        let w = Window::cube(1.0, 2);
        assert!(matches!(cube_ordering_key(&pt(0.7, 0.0, 1), &w, 0.5), Err(Error::Domain(_))));
        assert!(cube_ordering_key(&pt(0.2, -0.4, 1), &w, 0.5).is_ok());
    }

    #[test]
    fn raster_cells_come_before_coordinates() {
        let w = Window::cube(2.0, 2);
        let a = cube_ordering_key(&pt(-0.9, 0.9, 1), &w, 1.0).unwrap();
        let b = cube_ordering_key(&pt(-0.1, -0.9, 2), &w, 1.0).unwrap();
        // both in the first column of cells; a sits in the upper one
        assert!(b < a);
    }

    #[test]
    fn outside_in_puts_outer_shells_first() {
        let outer = Window::cube(8.0, 2);
        let ord = CubeOrdering::new(&outer, 0.5, OrderScheme::OutsideIn).unwrap();
        let inner_pt = pt(0.1, 0.1, 1);
        let outer_pt = pt(3.9, -3.9, 2);
        let mid_pt = pt(-1.2, 0.3, 3);
        let k = |p: &MarkedPoint| ord.key(p).unwrap();
        assert!(k(&outer_pt) < k(&mid_pt));
        assert!(k(&mid_pt) < k(&inner_pt));
    }

    #[test]
    fn diameter_of_empty_set_fails() {
        assert!(matches!(spatial_diameter(&[]), Err(Error::EmptyInput(_))));
        assert_eq!(spatial_diameter(&[&[1.0, 2.0]]).unwrap(), 0.0);
        assert_eq!(spatial_diameter(&[&[0.0, 0.0], &[3.0, 4.0], &[1.0, 1.0]]).unwrap(), 5.0);
    }

    #[test]
    fn csv_round_trip() {
        let pattern = PointPattern::new(
            2,
            vec![
                MarkedPoint::new(vec![0.25, -1.5], Some(0.125), PointId(0xabc)),
                MarkedPoint::new(vec![1e-3, 2.0], None, PointId::reserved(7)),
            ],
        )
        .unwrap();
        let mut buf = Vec::new();
        pattern.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x1,x2,mark,id\n"));
        assert!(!text.contains('\r'));
        let back = PointPattern::read_csv(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back, pattern);
    }

    proptest! {
        #[test]
        fn grid_matches_brute_force(
            pts in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 1..60),
            r in 0.01f64..1.5,
            side in 0.05f64..1.0,
            c in 0usize..60,
        ) {
            let points: Vec<MarkedPoint> =
                pts.iter().enumerate().map(|(i, &(x, y))| pt(x, y, i as u128)).collect();
            let pattern = PointPattern::new(2, points).unwrap();
            let center = pattern.points[c % pattern.len()].clone();
            let index = GridIndex::for_pattern(&pattern, side);
            let got = ball_neighbors(&pattern, &index, &center, r).unwrap();
            let want: Vec<usize> = (0..pattern.len())
                .filter(|&k| pattern.points[k].id != center.id && pattern.points[k].distance(&center) <= r)
                .collect();
            prop_assert_eq!(got, want);
        }

        #[test]
        fn ordering_is_a_strict_total_order(
            pts in prop::collection::vec((-0.5f64..0.5, -0.5f64..0.5), 2..40),
            outside_in in any::<bool>(),
        ) {
            let w = Window::cube(1.0, 2);
            let scheme = if outside_in { OrderScheme::OutsideIn } else { OrderScheme::Raster };
            let ord = CubeOrdering::new(&w, 0.25, scheme).unwrap();
            let keys: Vec<OrderKey> = pts
                .iter()
                .enumerate()
                .map(|(i, &(x, y))| ord.key(&pt(x, y, i as u128)).unwrap())
                .collect();
            for a in &keys {
                prop_assert_eq!(a.cmp(a), Ordering::Equal);
                for b in &keys {
                    if a.id != b.id {
                        prop_assert_ne!(a.cmp(b), Ordering::Equal);
                        prop_assert_eq!(a.cmp(b), b.cmp(a).reverse());
                    }
                    for c in &keys {
                        if a < b && b < c {
                            prop_assert!(a < c);
                        }
                    }
                }
            }
        }

        #[test]
        fn ordering_respects_cells(
            a in (-0.5f64..0.5, -0.5f64..0.5),
            b in (-0.5f64..0.5, -0.5f64..0.5),
        ) {
            let w = Window::cube(1.0, 2);
            let ord = CubeOrdering::new(&w, 0.25, OrderScheme::Raster).unwrap();
            let ka = ord.key(&pt(a.0, a.1, 1)).unwrap();
            let kb = ord.key(&pt(b.0, b.1, 2)).unwrap();
            if ka.cell < kb.cell {
                prop_assert!(ka < kb);
            }
        }
    }
}
