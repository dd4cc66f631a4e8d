//! Euler–Maruyama simulation of `dX = σ(X) dW` stopped at a barrier.
//!
//! The stopping rule mirrors the barrier's discretization exactly: at
//! each step time `t_k` (including `t_0 = 0`, so an `R ≡ 0` barrier
//! stops immediately and embeds `ν` itself) the path stops if
//! `t_k ≥ R(nearest node of X_k)`, and the recorded stopped position is
//! that *node*, not the raw Euler state. Stopping is a node-resolution
//! event — the spatial overshoot past the geometric boundary is at most
//! `dx/2` plus one Gaussian step — and snapping the stopped value keeps
//! atomic targets atomic in the empirical law instead of smearing them
//! over a `dx/2 + O(√dt)` shell. Every node-resolution comparison made
//! downstream (KS distance against atomic targets, local time at a
//! barrier node) depends on this convention.
//!
//! Reproducibility: one ChaCha12 stream per path, derived from the
//! master seed with the path index as the stream number, so the ensemble
//! is a pure function of `(config, barrier)` — independent of thread
//! count and of which paths run in which order. Cross-path aggregation
//! happens sequentially over the index-ordered results with compensated
//! sums, so reported statistics are bit-stable too.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::barrier::Barrier;
use crate::model::{DiffusionSpec, ProbabilityMeasure};
use crate::stats;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("all paths were censored at the horizon: {0}")]
    AllPathsCensored(String),
    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(String),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
}

/// Levels at which pathwise occupation time
/// `(2ε)⁻¹ ∫ σ(X_s)² 1{|X_s - level| ≤ ε} ds` is accumulated, giving the
/// secondary (occupation-density) local-time estimator.
#[derive(Clone, Debug, Serialize)]
pub struct OccupationProbes {
    pub levels: Vec<f64>,
    /// Window half-width ε; sensible default `3·σ_max·√dt_sim` (a few
    /// Euler steps wide).
    pub half_width: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SimConfig {
    pub n_paths: usize,
    pub dt_sim: f64,
    /// Horizon; paths still running here are censored.
    pub t_cap: f64,
    pub master_seed: u64,
    /// Times at which `X_{t∧τ}` snapshots are kept; snapped to the step
    /// lattice.
    pub checkpoint_times: Vec<f64>,
    pub occupation: Option<OccupationProbes>,
}

impl SimConfig {
    pub fn new(n_paths: usize, dt_sim: f64, t_cap: f64, master_seed: u64) -> Self {
        Self {
            n_paths,
            dt_sim,
            t_cap,
            master_seed,
            checkpoint_times: Vec::new(),
            occupation: None,
        }
    }

    pub fn with_checkpoints(mut self, times: &[f64]) -> Self {
        self.checkpoint_times = times.to_vec();
        self
    }

    pub fn with_occupation(mut self, levels: &[f64], half_width: f64) -> Self {
        self.occupation = Some(OccupationProbes {
            levels: levels.to_vec(),
            half_width,
        });
        self
    }

    fn validate(&self) -> Result<(usize, Vec<usize>), SimError> {
        if self.n_paths == 0 {
            return Err(SimError::InvalidConfig("need at least one path".into()));
        }
        if !(self.dt_sim > 0.0) || !self.dt_sim.is_finite() {
            return Err(SimError::InvalidConfig(format!(
                "step size must be positive, got {}",
                self.dt_sim
            )));
        }
        if !(self.t_cap > 0.0) || !self.t_cap.is_finite() {
            return Err(SimError::InvalidConfig(format!(
                "horizon must be positive, got {}",
                self.t_cap
            )));
        }
        let cap_steps = (self.t_cap / self.dt_sim).round().max(1.0) as usize;
        let mut cp_steps = Vec::with_capacity(self.checkpoint_times.len());
        let mut prev = -1i64;
        for &t in &self.checkpoint_times {
            if !(t >= 0.0) || t > self.t_cap * (1.0 + 1e-9) {
                return Err(SimError::InvalidConfig(format!(
                    "checkpoint {t} outside [0, t_cap]"
                )));
            }
            let k = (t / self.dt_sim).round() as i64;
            if k <= prev {
                return Err(SimError::InvalidConfig(
                    "checkpoints must be strictly increasing on the step lattice".into(),
                ));
            }
            prev = k;
            cp_steps.push((k as usize).min(cap_steps));
        }
        Ok((cap_steps, cp_steps))
    }
}

/// Per-(level, checkpoint) occupation values for every path, flattened
/// level-major: `values[l * n_cp + c][path]`.
#[derive(Clone, Debug)]
pub struct OccupationData {
    pub levels: Vec<f64>,
    pub half_width: f64,
    pub values: Vec<Vec<f64>>,
}

/// The simulated ensemble: stopped state per path plus snapshots.
#[derive(Clone, Debug)]
pub struct HittingEnsemble {
    /// `min(τ, t_cap)` per path.
    pub tau: Vec<f64>,
    /// Stopped position (node-snapped) per path; raw final state for
    /// censored paths.
    pub x_tau: Vec<f64>,
    pub censored: Vec<bool>,
    /// Running minimum/maximum of the Euler skeleton up to `τ ∧ t_cap`.
    pub min_pre: Vec<f64>,
    pub max_pre: Vec<f64>,
    /// Snapped checkpoint times actually used.
    pub checkpoint_times: Vec<f64>,
    /// `values[c][path] = X_{t_c ∧ τ}`.
    pub checkpoints: Vec<Vec<f64>>,
    pub occupation: Option<OccupationData>,
    pub dt_sim: f64,
    pub t_cap: f64,
    pub master_seed: u64,
}

impl HittingEnsemble {
    pub fn n_paths(&self) -> usize {
        self.tau.len()
    }

    pub fn censored_fraction(&self) -> f64 {
        self.censored.iter().filter(|&&c| c).count() as f64 / self.censored.len() as f64
    }

    /// Index of the checkpoint at time `t` (within lattice rounding).
    pub fn checkpoint_index(&self, t: f64) -> Result<usize, SimError> {
        self.checkpoint_times
            .iter()
            .position(|&c| (c - t).abs() <= 0.5 * self.dt_sim + 1e-12)
            .ok_or_else(|| {
                SimError::MissingCheckpoint(format!(
                    "no snapshot at t = {t}; available: {:?}",
                    self.checkpoint_times
                ))
            })
    }
}

/// Decision returned by a [`StopRule`] at each step time.
#[derive(Clone, Copy, Debug)]
pub enum RuleAction {
    Continue,
    /// Move the state (e.g. snap onto a level just crossed) and keep
    /// going — used by composite rules at phase transitions.
    Relocate(f64),
    /// Stop the path here, recording the given position.
    Stop(f64),
}

/// A stopping rule driven along the Euler skeleton. `check` is called
/// at every step time (including `t = 0`) with the current raw state,
/// *before* the next increment is drawn; it may carry per-path state.
/// Rules must not consume randomness — the per-path RNG stream feeds
/// the increments only, which is what makes ensembles reproducible.
pub trait StopRule {
    fn check(&mut self, t: f64, x: f64) -> RuleAction;
}

/// The plain barrier rule: stop at `t ≥ R(nearest node)`, at the node.
struct BarrierRule<'a>(&'a Barrier);

impl StopRule for BarrierRule<'_> {
    fn check(&mut self, t: f64, x: f64) -> RuleAction {
        let (r, node_x) = self.0.node_query(x);
        if t >= r {
            RuleAction::Stop(node_x)
        } else {
            RuleAction::Continue
        }
    }
}

struct NoStop;

impl StopRule for NoStop {
    fn check(&mut self, _t: f64, _x: f64) -> RuleAction {
        RuleAction::Continue
    }
}

struct PathOut {
    tau: f64,
    x_tau: f64,
    censored: bool,
    min_pre: f64,
    max_pre: f64,
    cp_values: Vec<f64>,
    occ: Vec<f64>,
}

/// One path of the stopped diffusion.
#[allow(clippy::too_many_arguments)]
fn run_path(
    path_index: u64,
    nu: &ProbabilityMeasure,
    sigma: &DiffusionSpec,
    rule: &mut dyn StopRule,
    cfg: &SimConfig,
    cap_steps: usize,
    cp_steps: &[usize],
    occ_probes: Option<&OccupationProbes>,
) -> PathOut {
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.master_seed);
    rng.set_stream(path_index + 1);
    let sqrt_dt = cfg.dt_sim.sqrt();

    let mut x = nu.sample(&mut rng);
    let (mut min_pre, mut max_pre) = (x, x);
    let n_occ = occ_probes.map_or(0, |p| p.levels.len());
    let mut occ_acc = vec![0.0f64; n_occ];
    let mut occ = vec![0.0f64; n_occ * cp_steps.len()];
    let mut cp_values = vec![0.0f64; cp_steps.len()];
    let mut next_cp = 0usize;

    let mut k = 0usize;
    let (tau, x_tau, censored) = loop {
        let t_k = k as f64 * cfg.dt_sim;
        let mut stopped = false;
        match rule.check(t_k, x) {
            RuleAction::Continue => {}
            RuleAction::Relocate(p) => {
                x = p;
                if x < min_pre {
                    min_pre = x;
                }
                if x > max_pre {
                    max_pre = x;
                }
            }
            RuleAction::Stop(p) => {
                stopped = true;
                x = p;
                if x < min_pre {
                    min_pre = x;
                }
                if x > max_pre {
                    max_pre = x;
                }
            }
        }
        while next_cp < cp_steps.len() && cp_steps[next_cp] <= k {
            cp_values[next_cp] = x;
            for l in 0..n_occ {
                occ[l * cp_steps.len() + next_cp] = occ_acc[l];
            }
            next_cp += 1;
        }
        if stopped {
            break (t_k, x, false);
        }
        if k >= cap_steps {
            break (t_k, x, true);
        }
        if let Some(p) = occ_probes {
            let s = sigma.sigma_at(x);
            for (l, &lvl) in p.levels.iter().enumerate() {
                if (x - lvl).abs() <= p.half_width {
                    occ_acc[l] += s * s * cfg.dt_sim;
                }
            }
        }
        let z: f64 = StandardNormal.sample(&mut rng);
        x += sigma.sigma_at(x) * sqrt_dt * z;
        if x < min_pre {
            min_pre = x;
        }
        if x > max_pre {
            max_pre = x;
        }
        k += 1;
    };
    // Snapshots after the stop hold the stopped value; occupation no
    // longer accrues.
    while next_cp < cp_steps.len() {
        cp_values[next_cp] = x_tau;
        for l in 0..n_occ {
            occ[l * cp_steps.len() + next_cp] = occ_acc[l];
        }
        next_cp += 1;
    }
    PathOut {
        tau,
        x_tau,
        censored,
        min_pre,
        max_pre,
        cp_values,
        occ,
    }
}

fn assemble(
    outs: Vec<PathOut>,
    cfg: &SimConfig,
    cap_steps: usize,
    cp_steps: &[usize],
) -> HittingEnsemble {
    let n = outs.len();
    let n_cp = cp_steps.len();
    let mut e = HittingEnsemble {
        tau: Vec::with_capacity(n),
        x_tau: Vec::with_capacity(n),
        censored: Vec::with_capacity(n),
        min_pre: Vec::with_capacity(n),
        max_pre: Vec::with_capacity(n),
        checkpoint_times: cp_steps
            .iter()
            .map(|&k| k as f64 * cfg.dt_sim)
            .collect(),
        checkpoints: vec![Vec::with_capacity(n); n_cp],
        occupation: cfg.occupation.as_ref().map(|p| OccupationData {
            levels: p.levels.clone(),
            half_width: p.half_width,
            values: vec![Vec::with_capacity(n); p.levels.len() * n_cp],
        }),
        dt_sim: cfg.dt_sim,
        t_cap: cap_steps as f64 * cfg.dt_sim,
        master_seed: cfg.master_seed,
    };
    for o in outs {
        e.tau.push(o.tau);
        e.x_tau.push(o.x_tau);
        e.censored.push(o.censored);
        e.min_pre.push(o.min_pre);
        e.max_pre.push(o.max_pre);
        for (c, &v) in o.cp_values.iter().enumerate() {
            e.checkpoints[c].push(v);
        }
        if let Some(data) = e.occupation.as_mut() {
            for (j, &v) in o.occ.iter().enumerate() {
                data.values[j].push(v);
            }
        }
    }
    e
}

/// Simulate `ν`-started paths under a caller-supplied stopping rule,
/// with the same per-path RNG streams, checkpointing, extrema tracking,
/// and censoring as [`simulate_hitting`]. `make_rule` builds a fresh
/// rule (with whatever per-path state it needs) for each path index.
/// No error is raised when every path censors — composite callers
/// decide whether that is fatal.
pub fn simulate_rule<R, F>(
    nu: &ProbabilityMeasure,
    sigma: &DiffusionSpec,
    cfg: &SimConfig,
    make_rule: F,
) -> Result<HittingEnsemble, SimError>
where
    R: StopRule,
    F: Fn(u64) -> R + Sync,
{
    let (cap_steps, cp_steps) = cfg.validate()?;
    let outs: Vec<PathOut> = (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut rule = make_rule(p);
            run_path(
                p,
                nu,
                sigma,
                &mut rule,
                cfg,
                cap_steps,
                &cp_steps,
                cfg.occupation.as_ref(),
            )
        })
        .collect();
    Ok(assemble(outs, cfg, cap_steps, &cp_steps))
}

/// Simulate `ν`-started paths stopped at the barrier.
pub fn simulate_hitting(
    nu: &ProbabilityMeasure,
    sigma: &DiffusionSpec,
    b: &Barrier,
    cfg: &SimConfig,
) -> Result<HittingEnsemble, SimError> {
    if b.is_trivial() {
        return Err(SimError::AllPathsCensored(
            "the barrier has no finite contact time anywhere".into(),
        ));
    }
    let e = simulate_rule(nu, sigma, cfg, |_| BarrierRule(b))?;
    if e.censored.iter().all(|&c| c) {
        return Err(SimError::AllPathsCensored(format!(
            "none of {} paths reached the barrier by t = {}",
            cfg.n_paths, e.t_cap
        )));
    }
    Ok(e)
}

/// Simulate the diffusion with no stopping at all (used for
/// supermartingale diagnostics). Every path is marked censored.
pub fn simulate_free(
    nu: &ProbabilityMeasure,
    sigma: &DiffusionSpec,
    cfg: &SimConfig,
) -> Result<HittingEnsemble, SimError> {
    simulate_rule(nu, sigma, cfg, |_| NoStop)
}

/// Monte-Carlo estimate of the stopped potential
/// `û(x,t) = -mean |x - X_{t∧τ}|` on a product lattice of query points
/// and checkpoint times.
#[derive(Clone, Debug, Serialize)]
pub struct McSurface {
    pub x_list: Vec<f64>,
    pub t_list: Vec<f64>,
    /// `values[t_index][x_index]`, likewise `ses`.
    pub values: Vec<Vec<f64>>,
    pub ses: Vec<Vec<f64>>,
    pub n_paths: usize,
}

pub fn stopped_potential_mc(
    e: &HittingEnsemble,
    x_list: &[f64],
    t_list: &[f64],
) -> Result<McSurface, SimError> {
    let mut values = Vec::with_capacity(t_list.len());
    let mut ses = Vec::with_capacity(t_list.len());
    let mut scratch = vec![0.0f64; e.n_paths()];
    for &t in t_list {
        let c = e.checkpoint_index(t)?;
        let snap = &e.checkpoints[c];
        let mut row_v = Vec::with_capacity(x_list.len());
        let mut row_s = Vec::with_capacity(x_list.len());
        for &x in x_list {
            for (dst, &s) in scratch.iter_mut().zip(snap.iter()) {
                *dst = (x - s).abs();
            }
            let (m, se) = stats::mean_and_se(&scratch);
            row_v.push(-m);
            row_s.push(se);
        }
        values.push(row_v);
        ses.push(row_s);
    }
    Ok(McSurface {
        x_list: x_list.to_vec(),
        t_list: t_list.to_vec(),
        values,
        ses,
        n_paths: e.n_paths(),
    })
}

/// Local-time estimate at one level.
#[derive(Clone, Debug, Serialize)]
pub struct LocalTimeEstimate {
    pub x: f64,
    /// Primary estimator `U_ν(x) + mean |x - X_{t∧τ}|` (the stopped
    /// potential identity `E[L^x_{t∧τ}] = U_ν(x) - u(x,t)`).
    pub value: f64,
    pub se: f64,
    /// Occupation-density cross-check, when the simulation accumulated
    /// a window at this level.
    pub occupation: Option<(f64, f64)>,
}

pub fn local_time_profile(
    e: &HittingEnsemble,
    nu: &ProbabilityMeasure,
    x_list: &[f64],
    t: f64,
) -> Result<Vec<LocalTimeEstimate>, SimError> {
    let c = e.checkpoint_index(t)?;
    let snap = &e.checkpoints[c];
    let n_cp = e.checkpoint_times.len();
    let mut out = Vec::with_capacity(x_list.len());
    let mut scratch = vec![0.0f64; e.n_paths()];
    for &x in x_list {
        for (dst, &s) in scratch.iter_mut().zip(snap.iter()) {
            *dst = (x - s).abs();
        }
        let (m, se) = stats::mean_and_se(&scratch);
        let occupation = e.occupation.as_ref().and_then(|data| {
            data.levels
                .iter()
                .position(|&l| (l - x).abs() <= 1e-9 * (1.0 + x.abs()))
                .map(|l| {
                    let vals = &data.values[l * n_cp + c];
                    let (om, ose) = stats::mean_and_se(vals);
                    (om / (2.0 * data.half_width), ose / (2.0 * data.half_width))
                })
        });
        out.push(LocalTimeEstimate {
            x,
            value: nu.potential_at(x) + m,
            se,
            occupation,
        });
    }
    Ok(out)
}

/// `Ê[τ ∧ t]` with standard errors for each requested `t ≤ t_cap`.
pub fn principal_expectation(
    e: &HittingEnsemble,
    t_list: &[f64],
) -> Result<Vec<(f64, f64, f64)>, SimError> {
    let mut out = Vec::with_capacity(t_list.len());
    let mut scratch = vec![0.0f64; e.n_paths()];
    for &t in t_list {
        if t > e.t_cap * (1.0 + 1e-9) {
            return Err(SimError::InvalidConfig(format!(
                "t = {t} beyond the simulated horizon {}",
                e.t_cap
            )));
        }
        for (dst, &tau) in scratch.iter_mut().zip(e.tau.iter()) {
            *dst = tau.min(t);
        }
        let (m, se) = stats::mean_and_se(&scratch);
        out.push((t, m, se));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::extract_barrier;
    use crate::model::{DiffusionSpec, ProbabilityMeasure};
    use crate::solver::{solve_vi, SpaceTimeGrid};

    fn brownian() -> DiffusionSpec {
        DiffusionSpec::constant(1.0)
    }

    fn two_atoms(x1: f64, x2: f64) -> ProbabilityMeasure {
        ProbabilityMeasure::atoms(&[(x1, 0.5), (x2, 0.5)]).unwrap()
    }

    /// Symmetric exit barrier for the centred two-point target: nodes at
    /// ±1 exactly (dx divides 1), giving node-sharp stopping.
    fn exit_barrier() -> crate::barrier::Barrier {
        let nu = ProbabilityMeasure::atom(0.0);
        let mu = two_atoms(-1.0, 1.0);
        let g = SpaceTimeGrid::from_window(-8.0, 8.0, 513, 1.0, 1.0).unwrap();
        let s = solve_vi(&nu, &mu, 0.0, &brownian(), &g).unwrap();
        extract_barrier(&s)
    }

    #[test]
    fn immediate_barrier_returns_the_initial_law() {
        let b = crate::barrier::Barrier {
            x_nodes: (0..11).map(|i| -1.0 + 0.2 * i as f64).collect(),
            r: vec![0.0; 11],
            dt: 0.1,
            has_contact: true,
        };
        let nu = two_atoms(-1.0, 1.0);
        let cfg = SimConfig::new(500, 1e-3, 1.0, 42).with_checkpoints(&[0.5]);
        let e = simulate_hitting(&nu, &brownian(), &b, &cfg).unwrap();
        assert!(e.tau.iter().all(|&t| t == 0.0));
        assert!(e.x_tau.iter().all(|&x| x == -1.0 || x == 1.0));
        assert!(e.checkpoints[0].iter().zip(&e.x_tau).all(|(a, b)| a == b));
        assert_eq!(e.censored_fraction(), 0.0);
    }

    #[test]
    fn exit_times_and_positions_match_theory() {
        let b = exit_barrier();
        let nu = ProbabilityMeasure::atom(0.0);
        let cfg = SimConfig::new(20_000, 2.5e-4, 6.0, 7).with_checkpoints(&[1.0, 6.0]);
        let e = simulate_hitting(&nu, &brownian(), &b, &cfg).unwrap();
        // Exit of (-1,1) from 0: E[τ] = 1. The Euler skeleton stops at
        // the first step whose nearest node lies on the ray, i.e. at
        // |x| ≥ 1 - dx/2, partially offset by the half-step overshoot;
        // both effects are ~1e-2 here.
        let mean_tau = e.tau.iter().sum::<f64>() / e.tau.len() as f64;
        assert!((mean_tau - 1.0).abs() < 0.05, "mean exit time {mean_tau}");
        // Stopped values are ray nodes at or just beyond ±1. Snapping
        // pins the bulk exactly to ±1; a crossing step can overshoot
        // past the next node's midpoint with probability
        // ~P(half-normal > dx/σ√dt ≈ 2σ), so a few percent land one or
        // two nodes out.
        let dx = b.dx();
        for (&x, &c) in e.x_tau.iter().zip(&e.censored) {
            if !c {
                assert!(
                    x.abs() >= 1.0 - 1e-12 && x.abs() < 1.0 + 4.0 * dx,
                    "stopped at {x}"
                );
            }
        }
        let exact: usize = e.x_tau.iter().filter(|&&x| x.abs() == 1.0).count();
        assert!(
            exact as f64 > 0.9 * e.tau.len() as f64,
            "only {exact} of {} landed on the boundary nodes",
            e.tau.len()
        );
        let frac_up = e.x_tau.iter().filter(|&&x| x > 0.0).count() as f64 / e.tau.len() as f64;
        assert!((frac_up - 0.5).abs() < 3.0 * (0.25f64 / 20_000.0).sqrt() + 1e-3);
        assert!(e.censored_fraction() < 0.01);
        // No path range escapes the exit interval by more than a step
        // overshoot.
        let slack = b.dx() + 4.0 * 2.5e-4f64.sqrt();
        assert!(e.max_pre.iter().all(|&m| m < 1.0 + slack));
        assert!(e.min_pre.iter().all(|&m| m > -1.0 - slack));
    }

    #[test]
    fn ensembles_are_reproducible_across_thread_counts() {
        let b = exit_barrier();
        let nu = ProbabilityMeasure::atom(0.0);
        let cfg = SimConfig::new(2_000, 1e-3, 4.0, 99).with_checkpoints(&[0.5, 2.0]);
        let pool1 = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let pool4 = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap();
        let e1 = pool1.install(|| simulate_hitting(&nu, &brownian(), &b, &cfg).unwrap());
        let e4 = pool4.install(|| simulate_hitting(&nu, &brownian(), &b, &cfg).unwrap());
        assert_eq!(e1.tau, e4.tau);
        assert_eq!(e1.x_tau, e4.x_tau);
        assert_eq!(e1.checkpoints, e4.checkpoints);
        // Different seed genuinely changes the draw.
        let cfg2 = SimConfig::new(2_000, 1e-3, 4.0, 100).with_checkpoints(&[0.5, 2.0]);
        let e2 = simulate_hitting(&nu, &brownian(), &b, &cfg2).unwrap();
        assert_ne!(e1.tau, e2.tau);
    }

    #[test]
    fn stopped_potential_estimates_match_the_surface() {
        let nu = ProbabilityMeasure::atom(0.0);
        let mu = two_atoms(-1.0, 1.0);
        let g = SpaceTimeGrid::from_window(-8.0, 8.0, 513, 1.0, 1.0).unwrap();
        let s = solve_vi(&nu, &mu, 0.0, &brownian(), &g).unwrap();
        let b = extract_barrier(&s);
        let cfg = SimConfig::new(20_000, 2.5e-4, 1.0, 3).with_checkpoints(&[0.5, 1.0]);
        let e = simulate_hitting(&nu, &brownian(), &b, &cfg).unwrap();
        let xq = [-1.5, -0.5, 0.0, 0.75, 1.5];
        let mc = stopped_potential_mc(&e, &xq, &[0.5, 1.0]).unwrap();
        for (ti, &t) in mc.t_list.iter().enumerate() {
            for (xi, &x) in mc.x_list.iter().enumerate() {
                let pde = crate::solver::surface_query(&s, x, t).unwrap();
                let gap = (mc.values[ti][xi] - pde).abs();
                let allow = 3.0 * mc.ses[ti][xi] + 5.0 * g.dx;
                assert!(gap < allow, "x={x} t={t}: mc={} pde={pde}", mc.values[ti][xi]);
            }
        }
        // Missing checkpoint is an error, not a silent nearest match.
        assert!(matches!(
            stopped_potential_mc(&e, &xq, &[0.33]),
            Err(SimError::MissingCheckpoint(_))
        ));
    }

    #[test]
    fn local_time_estimators_agree_at_the_exit_problem() {
        // E[L^0_τ] = 1 for exit of (-1,1) from 0; the two estimators
        // (stopped potential identity vs occupation density) must agree
        // within Monte Carlo noise plus the ε-window bias ~ ε/2.
        let b = exit_barrier();
        let nu = ProbabilityMeasure::atom(0.0);
        let dt: f64 = 2.5e-4;
        let eps = 3.0 * dt.sqrt();
        let cfg = SimConfig::new(20_000, dt, 6.0, 11)
            .with_checkpoints(&[3.0, 6.0])
            .with_occupation(&[0.0, 0.5], eps);
        let e = simulate_hitting(&nu, &brownian(), &b, &cfg).unwrap();
        let prof = local_time_profile(&e, &nu, &[0.0, 0.5], 6.0).unwrap();
        for (lt, expect) in prof.iter().zip([1.0, 0.5]) {
            assert!(
                (lt.value - expect).abs() < 3.0 * lt.se + 0.03,
                "primary at {}: {} vs {expect}",
                lt.x,
                lt.value
            );
            let (ov, ose) = lt.occupation.expect("occupation window requested");
            assert!(
                (ov - lt.value).abs() < 3.0 * (ose + lt.se) + eps,
                "occupation {ov} vs primary {} at {}",
                lt.value,
                lt.x
            );
        }
    }

    #[test]
    fn principal_expectation_caps_and_reports() {
        let b = exit_barrier();
        let nu = ProbabilityMeasure::atom(0.0);
        let cfg = SimConfig::new(10_000, 5e-4, 4.0, 23).with_checkpoints(&[4.0]);
        let e = simulate_hitting(&nu, &brownian(), &b, &cfg).unwrap();
        let pe = principal_expectation(&e, &[0.25, 1.0, 4.0]).unwrap();
        // E[τ ∧ t] for the unit exit time: strictly increasing in t,
        // approaching 1.
        assert!(pe[0].1 < pe[1].1 && pe[1].1 < pe[2].1);
        assert!((pe[2].1 - 1.0).abs() < 0.05);
        // t = 0.25 caps almost nothing from below: E[τ∧0.25] ≤ 0.25.
        assert!(pe[0].1 <= 0.25 + 1e-12);
        assert!(principal_expectation(&e, &[5.0]).is_err());
    }

    #[test]
    fn trivial_barrier_and_unreachable_barrier_are_errors() {
        let nu = ProbabilityMeasure::atom(0.0);
        let all_inf = crate::barrier::Barrier {
            x_nodes: vec![-1.0, 0.0, 1.0],
            r: vec![f64::INFINITY; 3],
            dt: 0.1,
            has_contact: false,
        };
        let cfg = SimConfig::new(100, 1e-3, 1.0, 1);
        assert!(matches!(
            simulate_hitting(&nu, &brownian(), &all_inf, &cfg),
            Err(SimError::AllPathsCensored(_))
        ));
        // A contact point that no path can reach within the horizon
        // censors everything: same error after the fact. (The rightmost
        // node is ~10 standard deviations away at t_cap = 0.01.)
        let mut r = vec![f64::INFINITY; 21];
        r[20] = 0.0;
        let far = crate::barrier::Barrier {
            x_nodes: (0..21).map(|i| -1.0 + 0.1 * i as f64).collect(),
            r,
            dt: 0.1,
            has_contact: true,
        };
        let short = SimConfig::new(100, 1e-4, 0.01, 1);
        assert!(matches!(
            simulate_hitting(&nu, &brownian(), &far, &short),
            Err(SimError::AllPathsCensored(_))
        ));
    }

    #[test]
    fn free_simulation_has_martingale_checkpoints() {
        let nu = ProbabilityMeasure::atom(0.0);
        let cfg = SimConfig::new(20_000, 1e-3, 1.0, 5).with_checkpoints(&[0.5, 1.0]);
        let e = simulate_free(&nu, &brownian(), &cfg).unwrap();
        assert!(e.censored.iter().all(|&c| c));
        // Mean stays at the start, variance grows like t.
        for (ci, &t) in e.checkpoint_times.iter().enumerate() {
            let vals = &e.checkpoints[ci];
            let (m, se) = crate::stats::mean_and_se(vals);
            assert!(m.abs() < 3.0 * se, "drift at t={t}");
            let var = vals.iter().map(|v| v * v).sum::<f64>() / vals.len() as f64;
            assert!((var - t).abs() < 0.05, "variance {var} at t={t}");
        }
    }
}
