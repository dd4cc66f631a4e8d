//! Projected explicit finite differences for the obstacle problem
//!
//! ```text
//! min{ ∂_t u - σ(x)²/2 ∂²_x u,  u - (U_μ - C) } = 0,   u(·,0) = U_ν,
//! ```
//!
//! whose solution is the stopped potential `u(x,t) = -E|x - X_{t∧τ}|` of
//! the barrier stopping time being constructed. The scheme is the
//! obvious monotone one: heat step, then project onto `{u ≥ ū}`:
//!
//! ```text
//! v_i   = u_i^n + λ_i (u_{i+1}^n - 2u_i^n + u_{i-1}^n),   λ_i = σ_i² dt / (2 dx²),
//! u_i^{n+1} = min(u_i^n, max(v_i, ū_i)),
//! ```
//!
//! with boundary nodes frozen at their initial values (the domain is
//! wide enough that the boundary sits in the linear tails where `u`
//! never moves). In exact arithmetic the outer `min` never binds: the
//! heat step of a concave profile lies below it (Jensen), projection
//! preserves `≥ ū`, and induction gives `ū ≤ u^{n+1} ≤ u^n ≤ u₀`. The
//! clamp exists so those orderings hold *bit for bit* in floating point;
//! downstream consumers (barrier extraction, gap monotonicity reports)
//! rely on them exactly.
//!
//! `λ_i ≤ CFL_SAFETY/2 < 1/2` keeps the update a strict convex
//! combination (monotone scheme). Running strictly inside the CFL bound
//! also keeps this route genuinely different from the lattice
//! backward-induction oracle, which *is* the CFL-equality scheme: the two
//! discretizations agreeing is then a real cross-check.

use serde::Serialize;
use thiserror::Error;

use crate::model::{validate_sigma, DiffusionSpec, ModelError, ProbabilityMeasure};

/// Fraction of the explicit-stability bound `dt ≤ dx²/σ_max²` actually
/// used. Strictly below 1 for robustness at the largest-σ node and to
/// decouple the scheme from the lattice oracle.
pub const CFL_SAFETY: f64 = 0.9;

/// Tail margin in units of `σ_max·√t_max`. Six standard deviations keeps
/// the frozen Dirichlet boundary error below ~1e-9, far under every
/// tolerance used against this surface.
pub const MARGIN_FACTOR: f64 = 6.0;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("domain too narrow: {0}")]
    DomainTooNarrow(String),
    #[error("obstacle above initial data: {0}")]
    ObstacleAboveInitial(String),
    #[error("time out of range: {0}")]
    TimeOutOfRange(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Uniform grid on `[x_min, x_max] × [0, nt·dt]` with `nx` space nodes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpaceTimeGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub nx: usize,
    pub dx: f64,
    pub dt: f64,
    pub nt: usize,
}

impl SpaceTimeGrid {
    /// Grid over an explicitly chosen window. The time step is the
    /// largest `t_max/nt ≤ CFL_SAFETY·dx²/σ_max²`, so `nt·dt = t_max`
    /// exactly.
    pub fn from_window(
        x_min: f64,
        x_max: f64,
        nx: usize,
        t_max: f64,
        sigma_max: f64,
    ) -> Result<Self, SolverError> {
        if nx < 8 {
            return Err(SolverError::DomainTooNarrow(format!(
                "need at least 8 space nodes, got {nx}"
            )));
        }
        if !(x_min < x_max) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(SolverError::DomainTooNarrow(format!(
                "invalid window [{x_min}, {x_max}]"
            )));
        }
        if !(t_max > 0.0) || !t_max.is_finite() {
            return Err(SolverError::DomainTooNarrow(format!(
                "horizon must be positive and finite, got {t_max}"
            )));
        }
        let dx = (x_max - x_min) / (nx - 1) as f64;
        let dt_cap = CFL_SAFETY * dx * dx / (sigma_max * sigma_max);
        let nt = (t_max / dt_cap).ceil().max(1.0) as usize;
        let dt = t_max / nt as f64;
        Ok(Self {
            x_min,
            x_max,
            nx,
            dx,
            dt,
            nt,
        })
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx
    }

    pub fn t(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    pub fn t_max(&self) -> f64 {
        self.nt as f64 * self.dt
    }

    /// Index of the node nearest to `x`, clamped into range.
    pub fn node_of(&self, x: f64) -> usize {
        let raw = (x - self.x_min) / self.dx;
        raw.round().clamp(0.0, (self.nx - 1) as f64) as usize
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.nx).map(|i| self.x(i)).collect()
    }
}

/// Build a grid adapted to the problem: the window covers every
/// breakpoint of `ν` and `μ` with margin `MARGIN_FACTOR·σ_max·√t_max`
/// on both sides, and breakpoints are placed exactly on nodes whenever
/// their mutual gaps are commensurable (`dx` is snapped down to an
/// integer division of the smallest gap if every other gap is an
/// integer multiple of it). Aligned atoms keep node-snapped stopping
/// exactly on the target atoms, which the distribution diagnostics
/// rely on; when the gaps are incommensurable only the leftmost
/// breakpoint is aligned. `nx` acts as a lower bound on resolution —
/// snapping may add nodes, never remove them.
pub fn build_grid(
    nu: &ProbabilityMeasure,
    mu: &ProbabilityMeasure,
    sigma: &DiffusionSpec,
    t_max: f64,
    nx: usize,
) -> Result<SpaceTimeGrid, SolverError> {
    validate_sigma(sigma)?;
    if nx < 8 {
        return Err(SolverError::DomainTooNarrow(format!(
            "need at least 8 space nodes, got {nx}"
        )));
    }
    if !(t_max > 0.0) || !t_max.is_finite() {
        return Err(SolverError::DomainTooNarrow(format!(
            "horizon must be positive and finite, got {t_max}"
        )));
    }
    let mut bp = nu.breakpoints();
    bp.extend(mu.breakpoints());
    bp.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let (lo, hi) = (bp[0], bp[bp.len() - 1]);
    let sig_max = sigma.max_sigma();
    let margin = MARGIN_FACTOR * sig_max * t_max.sqrt();
    let target = ((hi - lo) + 2.0 * margin) / (nx - 3) as f64;
    let gaps: Vec<f64> = bp
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|&g| g > 1e-12 * (1.0 + hi.abs().max(lo.abs())))
        .collect();
    let mut dx = target;
    if let Some(&gmin) = gaps
        .iter()
        .min_by(|p, q| p.partial_cmp(q).unwrap())
    {
        let cand = gmin / (gmin / target).ceil().max(1.0);
        let all_fit = gaps.iter().all(|&g| {
            let r = g / cand;
            (r - r.round()).abs() <= 1e-9 * r.round().max(1.0)
        });
        if all_fit {
            dx = cand;
        }
    }
    let k_left = (margin / dx).ceil();
    let x_min = lo - k_left * dx;
    let n_cover = ((hi + margin - x_min) / dx).ceil() as usize + 1;
    let nx = n_cover.max(nx);
    let x_max = x_min + (nx - 1) as f64 * dx;
    debug_assert!(x_min <= lo - margin && x_max >= hi + margin);
    let dt_cap = CFL_SAFETY * dx * dx / (sig_max * sig_max);
    let nt = (t_max / dt_cap).ceil().max(1.0) as usize;
    let dt = t_max / nt as f64;
    Ok(SpaceTimeGrid {
        x_min,
        x_max,
        nx,
        dx,
        dt,
        nt,
    })
}

/// Full space-time solution of the obstacle problem, together with the
/// data that produced it.
#[derive(Clone, Debug)]
pub struct PotentialSurface {
    pub grid: SpaceTimeGrid,
    /// `u(x_i, t_n)` flattened time-major: index `n·nx + i`.
    u: Vec<f64>,
    pub obstacle: Vec<f64>,
    pub initial: Vec<f64>,
    pub c: f64,
}

impl PotentialSurface {
    pub fn value(&self, i: usize, n: usize) -> f64 {
        self.u[n * self.grid.nx + i]
    }

    /// The slice `u(·, t_n)`.
    pub fn row(&self, n: usize) -> &[f64] {
        &self.u[n * self.grid.nx..(n + 1) * self.grid.nx]
    }

    /// Absolute tolerance deciding numerical contact with the obstacle
    /// at node `i`: a handful of ulps of the obstacle scale plus a tiny
    /// absolute floor. Tight enough that genuinely separated profiles
    /// never read as contact, loose enough to absorb roundoff in the
    /// update chain.
    pub fn contact_tolerance(&self, i: usize) -> f64 {
        10.0 * f64::EPSILON * (1.0 + self.obstacle[i].abs()) + 1e-10
    }
}

/// March the projected scheme across the whole grid.
pub fn solve_vi(
    nu: &ProbabilityMeasure,
    mu: &ProbabilityMeasure,
    c: f64,
    sigma: &DiffusionSpec,
    grid: &SpaceTimeGrid,
) -> Result<PotentialSurface, SolverError> {
    validate_sigma(sigma)?;
    let critical = crate::model::c_star(nu, mu);
    if c < critical - 1e-9 * (1.0 + critical.abs()) {
        return Err(SolverError::ObstacleAboveInitial(format!(
            "shift C = {c} is below the critical constant C* = {critical}"
        )));
    }
    let nx = grid.nx;
    let initial: Vec<f64> = (0..nx).map(|i| nu.potential_at(grid.x(i))).collect();
    let obstacle: Vec<f64> = (0..nx).map(|i| mu.potential_at(grid.x(i)) - c).collect();
    for i in 0..nx {
        // Nodewise guard as well: with C ≥ C* this can only fire from
        // pathological explicit windows, but it is the property the
        // marching step actually needs.
        if obstacle[i] > initial[i] + 1e-9 * (1.0 + initial[i].abs()) {
            return Err(SolverError::ObstacleAboveInitial(format!(
                "obstacle exceeds initial data at node {i} (x = {})",
                grid.x(i)
            )));
        }
    }
    let lambda: Vec<f64> = (0..nx)
        .map(|i| {
            let s = sigma.sigma_at(grid.x(i));
            s * s * grid.dt / (2.0 * grid.dx * grid.dx)
        })
        .collect();
    debug_assert!(lambda.iter().all(|&l| l <= 0.5 * CFL_SAFETY + 1e-12));

    let mut u = vec![0.0f64; nx * (grid.nt + 1)];
    u[..nx].copy_from_slice(&initial);
    for n in 0..grid.nt {
        let (done, rest) = u.split_at_mut((n + 1) * nx);
        let prev = &done[n * nx..];
        let next = &mut rest[..nx];
        next[0] = prev[0];
        next[nx - 1] = prev[nx - 1];
        for i in 1..nx - 1 {
            let v = prev[i] + lambda[i] * (prev[i + 1] - 2.0 * prev[i] + prev[i - 1]);
            // The obstacle floor enforced by `max` can lift the heat
            // step above the previous value by roundoff only; the `min`
            // clamp makes time-monotonicity exact in floating point.
            let clipped = if v > obstacle[i] { v } else { obstacle[i] };
            next[i] = if clipped < prev[i] { clipped } else { prev[i] };
        }
    }
    Ok(PotentialSurface {
        grid: grid.clone(),
        u,
        obstacle,
        initial,
        c,
    })
}

/// Bilinear interpolation on the stored surface. `x` outside the window
/// clamps to the boundary columns (the tails are linear and frozen, so
/// this is the right continuation); `t` outside `[0, t_max]` is an
/// error.
pub fn surface_query(s: &PotentialSurface, x: f64, t: f64) -> Result<f64, SolverError> {
    let g = &s.grid;
    let t_end = g.t_max();
    if !(t >= -1e-12) || t > t_end * (1.0 + 1e-12) + 1e-12 {
        return Err(SolverError::TimeOutOfRange(format!(
            "t = {t} outside [0, {t_end}]"
        )));
    }
    let xq = x.clamp(g.x_min, g.x_max);
    let fi = ((xq - g.x_min) / g.dx).clamp(0.0, (g.nx - 1) as f64);
    let i0 = (fi.floor() as usize).min(g.nx - 2);
    let fx = fi - i0 as f64;
    let fn_ = (t / g.dt).clamp(0.0, g.nt as f64);
    let n0 = (fn_.floor() as usize).min(g.nt.saturating_sub(1));
    let ft = fn_ - n0 as f64;
    // `a + f·(b - a)` returns `a` exactly at f = 0: queries at grid
    // nodes reproduce stored values bit for bit.
    let at = |i: usize, n: usize| s.value(i, n);
    let lo = at(i0, n0) + fx * (at(i0 + 1, n0) - at(i0, n0));
    let hi = at(i0, n0 + 1) + fx * (at(i0 + 1, n0 + 1) - at(i0, n0 + 1));
    Ok(lo + ft * (hi - lo))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles;

    /// First-order accuracy of the projected scheme at dx = 0.05 on the
    /// benchmark problems; comfortably inside this at the resolutions
    /// used below.
    const TOL_FD: f64 = 2.5e-2;

    fn brownian() -> DiffusionSpec {
        DiffusionSpec::constant(1.0)
    }

    fn two_atoms(x1: f64, x2: f64) -> ProbabilityMeasure {
        ProbabilityMeasure::atoms(&[(x1, 0.5), (x2, 0.5)]).unwrap()
    }

    #[test]
    fn auto_grid_covers_breakpoints_with_margin() {
        let nu = ProbabilityMeasure::atom(0.0);
        let mu = ProbabilityMeasure::atom(1.0);
        let g = build_grid(&nu, &mu, &brownian(), 2.0, 801).unwrap();
        let margin = MARGIN_FACTOR * 2.0f64.sqrt();
        assert!(g.x_min <= -margin && g.x_max >= 1.0 + margin);
        // CFL respected and the horizon hit exactly.
        assert!(g.dt <= g.dx * g.dx);
        assert!((g.nt as f64 * g.dt - 2.0).abs() < 1e-12);
        // Leftmost breakpoint on a node.
        let i0 = g.node_of(0.0);
        assert!((g.x(i0)).abs() < 1e-9 * g.dx);
        // Too few nodes is rejected.
        assert!(matches!(
            build_grid(&nu, &mu, &brownian(), 2.0, 2),
            Err(SolverError::DomainTooNarrow(_))
        ));
    }

    #[test]
    fn matches_one_sided_hitting_closed_form() {
        let nu = ProbabilityMeasure::atom(0.0);
        let mu = ProbabilityMeasure::atom(1.0);
        let g = SpaceTimeGrid::from_window(-6.5, 7.5, 281, 1.0, 1.0).unwrap();
        assert!((g.dx - 0.05).abs() < 1e-12);
        let s = solve_vi(&nu, &mu, 1.0, &brownian(), &g).unwrap();
        let mut worst = 0.0f64;
        for n in [g.nt / 4, g.nt / 2, g.nt] {
            let t = g.t(n);
            for i in 0..g.nx {
                let x = g.x(i);
                if x.abs() <= 2.0 {
                    worst = worst.max((s.value(i, n) - oracles::example1_u(x, t, 1.0)).abs());
                }
            }
        }
        assert!(worst < TOL_FD, "max deviation {worst}");
    }

    #[test]
    fn matches_two_point_collapse_closed_form() {
        let nu = two_atoms(-1.0, 1.0);
        let mu = ProbabilityMeasure::atom(0.0);
        let g = SpaceTimeGrid::from_window(-7.5, 7.5, 301, 1.0, 1.0).unwrap();
        let s = solve_vi(&nu, &mu, 1.0, &brownian(), &g).unwrap();
        let mut worst = 0.0f64;
        for i in 0..g.nx {
            let x = g.x(i);
            if x.abs() <= 2.0 {
                worst = worst.max((s.value(i, g.nt) - oracles::example2_u(x, 1.0, 1.0)).abs());
            }
        }
        assert!(worst < TOL_FD, "max deviation {worst}");
    }

    #[test]
    fn discrete_orderings_hold_bitwise() {
        // Non-constant volatility, non-UI data: the stress case for the
        // exact orderings.
        let nu = ProbabilityMeasure::atom(0.0);
        let mu = two_atoms(-1.0, 3.0);
        let sigma = DiffusionSpec {
            kind: crate::model::SigmaKind::Table {
                xs: vec![-2.0, 0.0, 2.0],
                sigmas: vec![0.8, 1.3, 0.9],
            },
            k: 2.0,
        };
        let g = build_grid(&nu, &mu, &sigma, 1.0, 151).unwrap();
        let s = solve_vi(&nu, &mu, 1.0, &sigma, &g).unwrap();
        for n in 0..=g.nt {
            for i in 0..g.nx {
                let v = s.value(i, n);
                assert!(v >= s.obstacle[i], "obstacle at ({i},{n})");
                assert!(v <= s.initial[i], "initial cap at ({i},{n})");
                if n > 0 {
                    assert!(v <= s.value(i, n - 1), "time monotone at ({i},{n})");
                }
            }
        }
        // Contact persists: once the gap is inside tolerance it stays
        // there (a corollary of exact monotonicity worth pinning).
        for i in 0..g.nx {
            let mut contacted = false;
            for n in 0..=g.nt {
                let gap = s.value(i, n) - s.obstacle[i];
                if contacted {
                    assert!(gap <= s.contact_tolerance(i));
                }
                if gap <= s.contact_tolerance(i) {
                    contacted = true;
                }
            }
        }
    }

    #[test]
    fn profiles_stay_concave_to_discretization_accuracy() {
        let nu = ProbabilityMeasure::atom(0.0);
        let mu = two_atoms(-1.0, 1.0);
        let g = build_grid(&nu, &mu, &brownian(), 1.0, 201).unwrap();
        let s = solve_vi(&nu, &mu, 0.0, &brownian(), &g).unwrap();
        for n in 0..=g.nt {
            let row = s.row(n);
            for i in 1..g.nx - 1 {
                let second = row[i + 1] - 2.0 * row[i] + row[i - 1];
                assert!(
                    second <= 5.0 * g.dx,
                    "second difference {second} at ({i},{n})"
                );
            }
        }
    }

    #[test]
    fn error_contracts_under_refinement() {
        let nu = ProbabilityMeasure::atom(0.0);
        let mu = ProbabilityMeasure::atom(1.0);
        let mut errs = Vec::new();
        for nx in [71usize, 141, 281] {
            let g = SpaceTimeGrid::from_window(-6.5, 7.5, nx, 1.0, 1.0).unwrap();
            let s = solve_vi(&nu, &mu, 1.0, &brownian(), &g).unwrap();
            let mut worst = 0.0f64;
            for i in 0..g.nx {
                let x = g.x(i);
                if x.abs() <= 2.0 {
                    worst = worst.max((s.value(i, g.nt) - oracles::example1_u(x, 1.0, 1.0)).abs());
                }
            }
            errs.push(worst);
        }
        assert!(
            errs[1] <= 0.75 * errs[0] && errs[2] <= 0.75 * errs[1],
            "errors {errs:?} do not contract"
        );
    }

    #[test]
    fn subcritical_shift_is_rejected() {
        let nu = ProbabilityMeasure::atom(0.0);
        let mu = ProbabilityMeasure::atom(1.0);
        let g = build_grid(&nu, &mu, &brownian(), 1.0, 101).unwrap();
        assert!(matches!(
            solve_vi(&nu, &mu, 0.5, &brownian(), &g),
            Err(SolverError::ObstacleAboveInitial(_))
        ));
        assert!(solve_vi(&nu, &mu, 1.0, &brownian(), &g).is_ok());
    }

    #[test]
    fn query_interpolates_and_guards_time() {
        let nu = ProbabilityMeasure::atom(0.0);
        let mu = two_atoms(-1.0, 1.0);
        let g = build_grid(&nu, &mu, &brownian(), 1.0, 101).unwrap();
        let s = solve_vi(&nu, &mu, 0.0, &brownian(), &g).unwrap();
        // Node queries reproduce stored values exactly.
        let (i, n) = (g.nx / 2, g.nt / 2);
        assert_eq!(surface_query(&s, g.x(i), g.t(n)).unwrap(), s.value(i, n));
        // Between nodes the result is the bilinear blend.
        let xq = 0.5 * (g.x(i) + g.x(i + 1));
        let manual = 0.5 * (s.value(i, n) + s.value(i + 1, n));
        assert!((surface_query(&s, xq, g.t(n)).unwrap() - manual).abs() < 1e-14);
        // Far outside the window the query clamps to the frozen tails.
        assert_eq!(
            surface_query(&s, -1e4, 0.5).unwrap(),
            surface_query(&s, g.x_min, 0.5).unwrap()
        );
        // Time beyond the stored horizon is an error.
        assert!(matches!(
            surface_query(&s, 0.0, g.t_max() + 0.1),
            Err(SolverError::TimeOutOfRange(_))
        ));
    }

    #[test]
    fn agrees_with_lattice_backward_induction() {
        // Shared window and spacing; the lattice runs at CFL equality,
        // the solver strictly inside it, so the time discretizations
        // genuinely differ.
        let nu = ProbabilityMeasure::atom(0.0);
        let mu = two_atoms(-1.0, 1.0);
        let g = SpaceTimeGrid::from_window(-5.0, 5.0, 101, 1.0, 1.0).unwrap();
        let s = solve_vi(&nu, &mu, 0.0, &brownian(), &g).unwrap();
        let xs = g.xs();
        let u0: Vec<f64> = xs.iter().map(|&x| nu.potential_at(x)).collect();
        let ob: Vec<f64> = xs.iter().map(|&x| mu.potential_at(x)).collect();
        let sig = vec![1.0; g.nx];
        let tree = oracles::dp_value_on_lattice(&xs, &u0, &ob, &sig, 1.0).unwrap();
        let mut worst = 0.0f64;
        for i in 0..g.nx {
            worst = worst.max((s.value(i, g.nt) - tree[i]).abs());
        }
        assert!(worst < 5e-2, "solver vs lattice: {worst}");
    }
}
