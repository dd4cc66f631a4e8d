//! First-contact barriers extracted from a solved potential surface.
//!
//! The contact set of the obstacle problem is the complement of the
//! continuation region `D = {u > ū}`. Because the surface is
//! nonincreasing in time (bitwise, by construction), the contact set is
//! closed under increasing `t` at fixed `x`, so it is the region above
//! the graph of a single function
//!
//! ```text
//! R(x) = inf{ t : u(x,t) = ū(x) } ∈ [0, ∞],
//! ```
//!
//! discretized as the first grid time at which the gap falls inside the
//! contact tolerance. That single-function form is exactly the
//! regularity needed for the stopping rule `τ = inf{t > 0 : t ≥ R(X_t)}`
//! to be well defined; no further regularization is applied. `R` may be
//! `+∞` on nodes that never touch within the stored horizon (the sign of
//! either a genuinely infinite contact time or a horizon chosen too
//! short — the caller decides which).

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::solver::PotentialSurface;

#[derive(Debug, Error)]
pub enum BarrierError {
    #[error("barrier file I/O failed: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("barrier file malformed: {0}")]
    ParseFailure(String),
}

/// The function `R` sampled on the solver's space nodes, with `+∞`
/// encoded as `f64::INFINITY`. Finite entries are exact multiples of the
/// originating grid's `dt`.
#[derive(Clone, Debug, PartialEq)]
pub struct Barrier {
    pub x_nodes: Vec<f64>,
    pub r: Vec<f64>,
    /// Time resolution of the finite entries (0 when reconstructed from
    /// a file that did not record it).
    pub dt: f64,
    /// Whether any node has a finite contact time. A barrier that is
    /// `+∞` everywhere embeds nothing within the horizon; extraction
    /// flags it rather than failing, since a longer solve may fix it.
    pub has_contact: bool,
}

impl Barrier {
    /// Contact time at the node nearest `x` (clamping beyond the ends —
    /// consistent with the frozen linear tails of the surface).
    pub fn hit_time(&self, x: f64) -> f64 {
        self.node_query(x).0
    }

    /// `(R, node position)` at the node nearest `x` — the pair every
    /// stopping rule consults, returned together so the stopped state
    /// snaps to the same node whose clock fired.
    pub fn node_query(&self, x: f64) -> (f64, f64) {
        let n = self.x_nodes.len();
        let dx = self.x_nodes[1] - self.x_nodes[0];
        let raw = (x - self.x_nodes[0]) / dx;
        let i = raw.round().clamp(0.0, (n - 1) as f64) as usize;
        (self.r[i], self.x_nodes[i])
    }

    pub fn dx(&self) -> f64 {
        self.x_nodes[1] - self.x_nodes[0]
    }

    /// True when every node is `+∞` — the trivial-barrier warning state.
    pub fn is_trivial(&self) -> bool {
        !self.has_contact
    }
}

/// Read the first-contact times off the surface: for each node the
/// smallest grid time whose gap to the obstacle is inside the contact
/// tolerance. Monotonicity of the gap makes this a binary search.
pub fn extract_barrier(s: &PotentialSurface) -> Barrier {
    let g = &s.grid;
    let mut r = Vec::with_capacity(g.nx);
    let mut has_contact = false;
    for i in 0..g.nx {
        let tol = s.contact_tolerance(i);
        let ob = s.obstacle[i];
        // Gap is bitwise nonincreasing in n, so the contact predicate is
        // monotone: partition on "still above tolerance".
        let (mut lo, mut hi) = (0usize, g.nt + 1);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if s.value(i, mid) - ob > tol {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        if lo <= g.nt {
            r.push(lo as f64 * g.dt);
            has_contact = true;
        } else {
            r.push(f64::INFINITY);
        }
    }
    Barrier {
        x_nodes: (0..g.nx).map(|i| g.x(i)).collect(),
        r,
        dt: g.dt,
        has_contact,
    }
}

/// Serialize as CSV `x,r` rows, one per node, with `inf` for `+∞`. The
/// shortest-round-trip float formatting makes write → read → write
/// byte-stable and the parsed values bit-identical.
pub fn write_barrier_csv(b: &Barrier, path: &Path) -> Result<(), BarrierError> {
    let mut out = String::with_capacity(b.x_nodes.len() * 24 + 32);
    out.push_str(&format!("# dt = {}\n", b.dt));
    out.push_str("x,r\n");
    for (x, r) in b.x_nodes.iter().zip(&b.r) {
        out.push_str(&format!("{x},{r}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Parse a barrier CSV. Rejects malformed rows, non-increasing or
/// non-uniform nodes, and negative or NaN contact times.
pub fn read_barrier_csv(path: &Path) -> Result<Barrier, BarrierError> {
    let text = fs::read_to_string(path)?;
    let mut dt = 0.0f64;
    let mut x_nodes = Vec::new();
    let mut r = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line == "x,r" {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(v) = rest.trim().strip_prefix("dt =") {
                dt = v.trim().parse().map_err(|_| {
                    BarrierError::ParseFailure(format!("line {}: bad dt", lineno + 1))
                })?;
            }
            continue;
        }
        let mut parts = line.split(',');
        let (xs, rs) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => {
                return Err(BarrierError::ParseFailure(format!(
                    "line {}: expected two comma-separated fields",
                    lineno + 1
                )))
            }
        };
        let x: f64 = xs.trim().parse().map_err(|_| {
            BarrierError::ParseFailure(format!("line {}: bad node position", lineno + 1))
        })?;
        let rv: f64 = rs.trim().parse().map_err(|_| {
            BarrierError::ParseFailure(format!("line {}: bad contact time", lineno + 1))
        })?;
        if rv.is_nan() || rv < 0.0 {
            return Err(BarrierError::ParseFailure(format!(
                "line {}: contact time must be nonnegative, got {rv}",
                lineno + 1
            )));
        }
        x_nodes.push(x);
        r.push(rv);
    }
    if x_nodes.len() < 2 {
        return Err(BarrierError::ParseFailure(
            "need at least two nodes".into(),
        ));
    }
    let dx = x_nodes[1] - x_nodes[0];
    if !(dx > 0.0) {
        return Err(BarrierError::ParseFailure(
            "nodes must be strictly increasing".into(),
        ));
    }
    for w in x_nodes.windows(2) {
        if ((w[1] - w[0]) - dx).abs() > 1e-9 * dx {
            return Err(BarrierError::ParseFailure(
                "nodes must be uniformly spaced".into(),
            ));
        }
    }
    let has_contact = r.iter().any(|v| v.is_finite());
    Ok(Barrier {
        x_nodes,
        r,
        dt,
        has_contact,
    })
}

/// Round-trip entry point matching the operation contract: write `b` to
/// `path` and read it back, returning the reconstruction.
pub fn barrier_io(b: &Barrier, path: &Path) -> Result<Barrier, BarrierError> {
    write_barrier_csv(b, path)?;
    read_barrier_csv(path)
}
