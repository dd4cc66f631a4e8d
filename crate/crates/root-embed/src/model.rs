//! Probability measures, their potential functions, the critical constant
//! `C*`, the attainment set `𝒜`, and the diffusion coefficient.
//!
//! Measures are finite mixtures of point masses and uniform intervals.
//! That class is closed under everything this crate needs and keeps the
//! potential `U_m(x) = -∫ |y-x| m(dy)` exactly piecewise quadratic: atoms
//! contribute kinks, uniform components contribute constant curvature
//! `U'' = -2·density`, and outside the support hull `U_m(x) = -|x - mean|`
//! exactly. Consequently the difference `d = U_μ - U_ν` is piecewise
//! quadratic with knots at the union of component breakpoints, constant
//! beyond the hull (`±(m_μ - m_ν)`), and both
//! `C* = sup d` and the set `𝒜 = closure{d = C*}` admit exact
//! segment-by-segment computation — no sampling grid is involved.
//!
//! `C*` is the smallest constant for which the shifted potential
//! `U_μ - C` fits below `U_ν`; it is `0` exactly when the measures are in
//! convex order (the uniformly integrable case), and is always at least
//! `|m_μ - m_ν|` because `d` equals `±(m_μ - m_ν)` in the tails.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Weights must sum to one within this tolerance; inherited by every
/// consumer of measure data.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("volatility violates ellipticity: {0}")]
    ViolatesEllipticity(String),
    #[error("volatility violates the Lipschitz bound: {0}")]
    ViolatesLipschitz(String),
}

/// One mixture component of a [`ProbabilityMeasure`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Component {
    Atom { x: f64, w: f64 },
    Uniform { a: f64, b: f64, w: f64 },
}

/// Finite mixture of atoms and uniform intervals on ℝ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityMeasure {
    components: Vec<Component>,
}

impl ProbabilityMeasure {
    pub fn new(components: Vec<Component>) -> Result<Self, ModelError> {
        if components.is_empty() {
            return Err(ModelError::InvalidMeasure("no components".into()));
        }
        let mut total = 0.0;
        for (i, c) in components.iter().enumerate() {
            match *c {
                Component::Atom { x, w } => {
                    if !x.is_finite() {
                        return Err(ModelError::InvalidMeasure(format!(
                            "component {i}: atom location must be finite"
                        )));
                    }
                    if !(w > 0.0) || !w.is_finite() {
                        return Err(ModelError::InvalidMeasure(format!(
                            "component {i}: weight must be positive and finite"
                        )));
                    }
                    total += w;
                }
                Component::Uniform { a, b, w } => {
                    if !a.is_finite() || !b.is_finite() || !(a < b) {
                        return Err(ModelError::InvalidMeasure(format!(
                            "component {i}: uniform needs finite a < b"
                        )));
                    }
                    if !(w > 0.0) || !w.is_finite() {
                        return Err(ModelError::InvalidMeasure(format!(
                            "component {i}: weight must be positive and finite"
                        )));
                    }
                    total += w;
                }
            }
        }
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(ModelError::InvalidMeasure(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(Self { components })
    }

    /// The point mass δ_x.
    pub fn atom(x: f64) -> Self {
        Self::new(vec![Component::Atom { x, w: 1.0 }]).expect("unit atom is valid")
    }

    /// Mixture of point masses; weights must sum to one.
    pub fn atoms(list: &[(f64, f64)]) -> Result<Self, ModelError> {
        Self::new(
            list.iter()
                .map(|&(x, w)| Component::Atom { x, w })
                .collect(),
        )
    }

    /// The uniform law on `[a, b]`.
    pub fn uniform(a: f64, b: f64) -> Result<Self, ModelError> {
        Self::new(vec![Component::Uniform { a, b, w: 1.0 }])
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn mean(&self) -> f64 {
        self.components
            .iter()
            .map(|c| match *c {
                Component::Atom { x, w } => w * x,
                Component::Uniform { a, b, w } => w * 0.5 * (a + b),
            })
            .sum()
    }

    /// `∫ (y - c)² dμ(y)`; about the mean this is the variance, which
    /// equals the expected exit time of a unit diffusion started there.
    pub fn second_moment_about(&self, c: f64) -> f64 {
        self.components
            .iter()
            .map(|comp| match *comp {
                Component::Atom { x, w } => w * (x - c) * (x - c),
                Component::Uniform { a, b, w } => {
                    let (p, q) = (a - c, b - c);
                    w * (q * q * q - p * p * p) / (3.0 * (b - a))
                }
            })
            .sum()
    }

    /// Right-continuous cdf `P(X ≤ x)`.
    pub fn cdf(&self, x: f64) -> f64 {
        self.components
            .iter()
            .map(|c| match *c {
                Component::Atom { x: a, w } => {
                    if x >= a {
                        w
                    } else {
                        0.0
                    }
                }
                Component::Uniform { a, b, w } => w * ((x - a) / (b - a)).clamp(0.0, 1.0),
            })
            .sum()
    }

    /// Left limit `P(X < x)`.
    pub fn cdf_left(&self, x: f64) -> f64 {
        self.components
            .iter()
            .map(|c| match *c {
                Component::Atom { x: a, w } => {
                    if x > a {
                        w
                    } else {
                        0.0
                    }
                }
                Component::Uniform { a, b, w } => w * ((x - a) / (b - a)).clamp(0.0, 1.0),
            })
            .sum()
    }

    /// `U_m(x) = -∫ |y - x| m(dy)`, exact closed form per component.
    pub fn potential_at(&self, x: f64) -> f64 {
        let mut s = 0.0;
        for c in &self.components {
            match *c {
                Component::Atom { x: a, w } => s += w * (x - a).abs(),
                Component::Uniform { a, b, w } => {
                    // E|Y - x| for Y ~ U[a,b]: mid-distance outside,
                    // ((x-a)² + (b-x)²)/(2(b-a)) inside.
                    let v = if x <= a {
                        0.5 * (a + b) - x
                    } else if x >= b {
                        x - 0.5 * (a + b)
                    } else {
                        ((x - a).powi(2) + (b - x).powi(2)) / (2.0 * (b - a))
                    };
                    s += w * v;
                }
            }
        }
        -s
    }

    /// Sorted, deduplicated locations where the structure of the law
    /// changes: atom positions and uniform endpoints.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut pts: Vec<f64> = Vec::new();
        for c in &self.components {
            match *c {
                Component::Atom { x, .. } => pts.push(x),
                Component::Uniform { a, b, .. } => {
                    pts.push(a);
                    pts.push(b);
                }
            }
        }
        pts.sort_by(|p, q| p.partial_cmp(q).unwrap());
        pts.dedup();
        pts
    }

    /// Smallest and largest points of the support.
    pub fn support(&self) -> (f64, f64) {
        let bp = self.breakpoints();
        (bp[0], bp[bp.len() - 1])
    }

    /// Lebesgue density on the open interval between two adjacent
    /// breakpoints (constant there).
    fn density_between(&self, lo: f64, hi: f64) -> f64 {
        let mid = 0.5 * (lo + hi);
        self.components
            .iter()
            .map(|c| match *c {
                Component::Atom { .. } => 0.0,
                Component::Uniform { a, b, w } => {
                    if a < mid && mid < b {
                        w / (b - a)
                    } else {
                        0.0
                    }
                }
            })
            .sum()
    }

    /// One draw with law `self`. A single uniform variate selects the
    /// component and is rescaled to position within it, so exactly one
    /// stream value is consumed per sample.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for c in &self.components {
            let w = match *c {
                Component::Atom { w, .. } | Component::Uniform { w, .. } => w,
            };
            if u < acc + w || std::ptr::eq(c, self.components.last().unwrap()) {
                return match *c {
                    Component::Atom { x, .. } => x,
                    Component::Uniform { a, b, .. } => {
                        let frac = ((u - acc) / w).clamp(0.0, 1.0);
                        a + frac * (b - a)
                    }
                };
            }
            acc += w;
        }
        unreachable!("weights sum to one");
    }
}

/// Exact evaluator for a measure's potential: piecewise quadratic between
/// breakpoints (slope `1 - 2F`, curvature `-2·density`), linear with
/// slopes `±1` outside, i.e. `U(x) = -|x - mean|` beyond the hull.
#[derive(Clone, Debug)]
pub struct PotentialFn {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
    /// Right slope `1 - 2F(b_i)` at each breakpoint.
    right_slopes: Vec<f64>,
    /// Constant density on each open segment `(b_i, b_{i+1})`.
    densities: Vec<f64>,
    mean: f64,
}

impl PotentialFn {
    pub fn from_measure(m: &ProbabilityMeasure) -> Self {
        let breakpoints = m.breakpoints();
        let values: Vec<f64> = breakpoints.iter().map(|&x| m.potential_at(x)).collect();
        let right_slopes: Vec<f64> = breakpoints.iter().map(|&x| 1.0 - 2.0 * m.cdf(x)).collect();
        let densities: Vec<f64> = breakpoints
            .windows(2)
            .map(|w| m.density_between(w[0], w[1]))
            .collect();
        Self {
            breakpoints,
            values,
            right_slopes,
            densities,
            mean: m.mean(),
        }
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.breakpoints.len();
        if x <= self.breakpoints[0] {
            // Slope +1 tail: U = x - mean.
            return x - self.mean;
        }
        if x >= self.breakpoints[n - 1] {
            return self.mean - x;
        }
        // Segment containing x: partition_point gives the first
        // breakpoint > x.
        let j = self.breakpoints.partition_point(|&b| b <= x) - 1;
        let s = x - self.breakpoints[j];
        self.values[j] + self.right_slopes[j] * s - self.densities[j] * s * s
    }
}

/// The closure of `{x : (U_μ - U_ν)(x) ≥ C* - tol}`, with flags for the
/// two infinite tails (where the difference is exactly `±(m_μ - m_ν)`).
#[derive(Clone, Debug, Serialize)]
pub struct AdmissibleSet {
    /// Maximal disjoint closed intervals, ascending. The first may start
    /// at `-∞` and the last end at `+∞`, mirroring the flags.
    pub intervals: Vec<(f64, f64)>,
    pub contains_minus_inf: bool,
    pub contains_plus_inf: bool,
    /// `inf 𝒜` and `sup 𝒜` as extended reals.
    pub a_minus: f64,
    pub a_plus: f64,
}

impl AdmissibleSet {
    /// Finite interval endpoints — the natural probe points for
    /// minimality diagnostics.
    pub fn finite_boundary_points(&self) -> Vec<f64> {
        let mut pts = Vec::new();
        for &(lo, hi) in &self.intervals {
            if lo.is_finite() {
                pts.push(lo);
            }
            if hi.is_finite() {
                pts.push(hi);
            }
        }
        pts.dedup();
        pts
    }

    pub fn contains(&self, x: f64, slack: f64) -> bool {
        self.intervals
            .iter()
            .any(|&(lo, hi)| x >= lo - slack && x <= hi + slack)
    }
}

/// Knots of the piecewise-quadratic difference `d = U_μ - U_ν`: union of
/// both measures' breakpoints.
fn union_knots(nu: &ProbabilityMeasure, mu: &ProbabilityMeasure) -> Vec<f64> {
    let mut k = nu.breakpoints();
    k.extend(mu.breakpoints());
    k.sort_by(|p, q| p.partial_cmp(q).unwrap());
    k.dedup();
    k
}

/// Quadratic coefficients of `d(l + s) = d0 + b·s + q·s²` on the open
/// segment to the right of knot `l` (valid up to the next knot).
fn segment_coeffs(
    nu: &ProbabilityMeasure,
    mu: &ProbabilityMeasure,
    l: f64,
    r: f64,
) -> (f64, f64, f64) {
    let d0 = mu.potential_at(l) - nu.potential_at(l);
    // d' = U_μ' - U_ν' = (1 - 2F_μ) - (1 - 2F_ν) = 2(F_ν - F_μ).
    let b = 2.0 * (nu.cdf(l) - mu.cdf(l));
    // d'' = 2(f_ν - f_μ) on the open segment.
    let q = nu.density_between(l, r) - mu.density_between(l, r);
    (d0, b, q)
}

/// `C* = sup_x (U_μ - U_ν)(x)`, exact: the sup of a piecewise quadratic
/// is attained at a knot, at an interior critical point of some segment,
/// or in a tail (where `d ≡ ±(m_μ - m_ν)`).
pub fn c_star(nu: &ProbabilityMeasure, mu: &ProbabilityMeasure) -> f64 {
    let knots = union_knots(nu, mu);
    let dm = mu.mean() - nu.mean();
    let mut best = dm.max(-dm); // both tail values; equals |m_μ - m_ν|
    for &k in &knots {
        best = best.max(mu.potential_at(k) - nu.potential_at(k));
    }
    for w in knots.windows(2) {
        let (l, r) = (w[0], w[1]);
        let (d0, b, q) = segment_coeffs(nu, mu, l, r);
        if q != 0.0 {
            let s_crit = -b / (2.0 * q);
            if s_crit > 0.0 && s_crit < r - l {
                best = best.max(d0 + b * s_crit + q * s_crit * s_crit);
            }
        }
    }
    best
}

/// Sub-intervals of `[0, len]` where `d0 + b·s + q·s² ≥ 0`.
fn quadratic_nonneg(d0: f64, b: f64, q: f64, len: f64) -> Vec<(f64, f64)> {
    let g = |s: f64| d0 + b * s + q * s * s;
    // Collect the real roots inside (0, len), then test sign on each
    // resulting sub-segment at its midpoint.
    let mut cuts = vec![0.0, len];
    if q.abs() > 0.0 {
        let disc = b * b - 4.0 * q * d0;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            for r in [(-b - sq) / (2.0 * q), (-b + sq) / (2.0 * q)] {
                if r > 0.0 && r < len {
                    cuts.push(r);
                }
            }
        }
    } else if b.abs() > 0.0 {
        let r = -d0 / b;
        if r > 0.0 && r < len {
            cuts.push(r);
        }
    }
    cuts.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let mut out = Vec::new();
    for w in cuts.windows(2) {
        if g(0.5 * (w[0] + w[1])) >= 0.0 {
            out.push((w[0], w[1]));
        }
    }
    out
}

/// Default relative attainment tolerance for [`a_set`]: well above the
/// roundoff of the piecewise-quadratic potential difference, far below
/// any structural gap between distinct attainment levels.
pub const A_SET_TOL: f64 = 1e-9;

/// The attainment set `𝒜` of `C*`, computed as the closure of
/// `{d ≥ c_star - tol}`. `tol` is interpreted relative to the scale of
/// `C*` (`tol·(1 + |C*|)` absolute); attainment of a supremum is not
/// float-exact, hence the explicit tolerance.
pub fn a_set(
    nu: &ProbabilityMeasure,
    mu: &ProbabilityMeasure,
    c_star_value: f64,
    tol: f64,
) -> AdmissibleSet {
    let theta = c_star_value - tol * (1.0 + c_star_value.abs());
    let knots = union_knots(nu, mu);
    let dm = mu.mean() - nu.mean();
    let mut raw: Vec<(f64, f64)> = Vec::new();

    let contains_minus_inf = -dm >= theta;
    let contains_plus_inf = dm >= theta;
    if contains_minus_inf {
        raw.push((f64::NEG_INFINITY, knots[0]));
    }
    for w in knots.windows(2) {
        let (l, r) = (w[0], w[1]);
        let (d0, b, q) = segment_coeffs(nu, mu, l, r);
        for (s0, s1) in quadratic_nonneg(d0 - theta, b, q, r - l) {
            raw.push((l + s0, l + s1));
        }
    }
    // Isolated attainment exactly at a knot (e.g. the peak of a tent
    // function) may be missed by open-segment sign tests; add knots as
    // degenerate intervals.
    for &k in &knots {
        if mu.potential_at(k) - nu.potential_at(k) >= theta {
            raw.push((k, k));
        }
    }
    if contains_plus_inf {
        raw.push((knots[knots.len() - 1], f64::INFINITY));
    }

    raw.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
    let mut intervals: Vec<(f64, f64)> = Vec::new();
    let glue = 1e-12 * (1.0 + knots.last().unwrap().abs().max(knots[0].abs()));
    for (lo, hi) in raw {
        match intervals.last_mut() {
            Some(last) if lo <= last.1 + glue => last.1 = last.1.max(hi),
            _ => intervals.push((lo, hi)),
        }
    }
    let a_minus = intervals.first().map_or(f64::INFINITY, |i| i.0);
    let a_plus = intervals.last().map_or(f64::NEG_INFINITY, |i| i.1);
    AdmissibleSet {
        intervals,
        contains_minus_inf,
        contains_plus_inf,
        a_minus,
        a_plus,
    }
}

/// Volatility coefficient of `dX = σ(X) dW`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SigmaKind {
    Constant(f64),
    /// Piecewise-linear interpolation through `(x, σ(x))` nodes with
    /// strictly increasing `x`; constant extrapolation beyond the ends.
    Table { xs: Vec<f64>, sigmas: Vec<f64> },
}

/// The coefficient together with its declared ellipticity/Lipschitz
/// constant `K`: validity means `1/K < σ < K` everywhere and
/// `|σ(x) - σ(y)| ≤ K|x - y|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSpec {
    pub kind: SigmaKind,
    pub k: f64,
}

/// Outcome of [`validate_sigma`]: which nodes break which bound.
#[derive(Clone, Debug, Default, Serialize)]
pub struct SigmaValidation {
    /// Indices (into the table; 0 for a constant) where `σ ∉ (1/K, K)`.
    pub ellipticity_violations: Vec<(usize, f64)>,
    /// Adjacent node pairs `(i, slope)` with `|slope| > K`.
    pub lipschitz_violations: Vec<(usize, f64)>,
}

impl SigmaValidation {
    pub fn passed(&self) -> bool {
        self.ellipticity_violations.is_empty() && self.lipschitz_violations.is_empty()
    }
}

impl DiffusionSpec {
    pub fn constant(v: f64) -> Self {
        // K chosen to certify v with slack; callers with stricter
        // declared constants construct the struct directly.
        let k = (2.0 * v).max(2.0 / v).max(2.0);
        Self {
            kind: SigmaKind::Constant(v),
            k,
        }
    }

    pub fn sigma_at(&self, x: f64) -> f64 {
        match &self.kind {
            SigmaKind::Constant(v) => *v,
            SigmaKind::Table { xs, sigmas } => {
                if x <= xs[0] {
                    return sigmas[0];
                }
                if x >= xs[xs.len() - 1] {
                    return sigmas[sigmas.len() - 1];
                }
                let j = xs.partition_point(|&t| t <= x) - 1;
                let frac = (x - xs[j]) / (xs[j + 1] - xs[j]);
                sigmas[j] + frac * (sigmas[j + 1] - sigmas[j])
            }
        }
    }

    /// Supremum of σ over ℝ (attained at a node under linear
    /// interpolation with constant extrapolation).
    pub fn max_sigma(&self) -> f64 {
        match &self.kind {
            SigmaKind::Constant(v) => *v,
            SigmaKind::Table { sigmas, .. } => sigmas.iter().cloned().fold(f64::MIN, f64::max),
        }
    }

    pub fn min_sigma(&self) -> f64 {
        match &self.kind {
            SigmaKind::Constant(v) => *v,
            SigmaKind::Table { sigmas, .. } => sigmas.iter().cloned().fold(f64::MAX, f64::min),
        }
    }
}

/// Check the declared bounds: strict ellipticity `1/K < σ < K` at every
/// node (and hence, by interpolation/extrapolation, everywhere) and the
/// discrete Lipschitz bound on adjacent-node slopes (which dominates the
/// ratio for all pairs, since any chord slope of a piecewise-linear
/// function is a convex combination of adjacent slopes).
pub fn validate_sigma(spec: &DiffusionSpec) -> Result<SigmaValidation, ModelError> {
    if !(spec.k > 0.0) || !spec.k.is_finite() {
        return Err(ModelError::ViolatesEllipticity(format!(
            "bound constant K = {} must be positive and finite",
            spec.k
        )));
    }
    let mut report = SigmaValidation::default();
    match &spec.kind {
        SigmaKind::Constant(v) => {
            if !(*v > 1.0 / spec.k && *v < spec.k) {
                report.ellipticity_violations.push((0, *v));
            }
        }
        SigmaKind::Table { xs, sigmas } => {
            if xs.len() != sigmas.len() || xs.is_empty() {
                return Err(ModelError::ViolatesEllipticity(
                    "volatility table must pair each x with a σ value".into(),
                ));
            }
            if xs.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(ModelError::ViolatesEllipticity(
                    "volatility table nodes must be strictly increasing".into(),
                ));
            }
            for (i, &s) in sigmas.iter().enumerate() {
                if !(s > 1.0 / spec.k && s < spec.k) {
                    report.ellipticity_violations.push((i, s));
                }
            }
            for i in 0..xs.len() - 1 {
                let slope = (sigmas[i + 1] - sigmas[i]) / (xs[i + 1] - xs[i]);
                if slope.abs() > spec.k {
                    report.lipschitz_violations.push((i, slope));
                }
            }
        }
    }
    if !report.ellipticity_violations.is_empty() {
        let (i, v) = report.ellipticity_violations[0];
        return Err(ModelError::ViolatesEllipticity(format!(
            "σ = {v} at node {i} is outside (1/K, K) = ({}, {}); {} node(s) violate",
            1.0 / spec.k,
            spec.k,
            report.ellipticity_violations.len(),
        )));
    }
    if !report.lipschitz_violations.is_empty() {
        let (i, s) = report.lipschitz_violations[0];
        return Err(ModelError::ViolatesLipschitz(format!(
            "slope {s} between nodes {i} and {} exceeds K = {}; {} pair(s) violate",
            i + 1,
            spec.k,
            report.lipschitz_violations.len(),
        )));
    }
    Ok(report)
}

/// `sample_measure` as a free function mirroring the operation contract;
/// delegates to [`ProbabilityMeasure::sample`].
pub fn sample_measure<R: Rng + ?Sized>(m: &ProbabilityMeasure, rng: &mut R) -> f64 {
    m.sample(rng)
}
