//! Sectioned key=value run configuration.
//!
//! The format is deliberately plain text (diff-friendly, no parser
//! dependency):
//!
//! ```text
//! # comments run to end of line
//! [nu]
//! atom 0 1            # point mass: location weight
//! [mu]
//! atom -1 0.5
//! uniform 1 3 0.5     # uniform component: a b weight
//! [sigma]
//! constant 1          # or: node x sigma  (one per line) and  k = <Lipschitz bound>
//! [problem]
//! c = c_star          # or an explicit number ≥ C*
//! [grid]
//! nx = 401
//! t_max = 4
//! x_min = -8          # optional; give both or neither
//! x_max = 8
//! [sim]
//! n_paths = 20000
//! dt_sim = 2.5e-4
//! t_cap = 8
//! seed = 20260814
//! checkpoints = 2, 4, 6, 8
//! [tol]
//! ks = 0.02
//! w1 = 0.02
//! censor = 0.01
//! [optimality]
//! cap = 1.0           # payoff F(s) = s ∧ cap
//! t_list = 0.25, 0.5, 1, 2
//! alt_paths = 20000   # benchmark-sampler overrides
//! alt_dt_sim = 2.5e-4
//! alt_t_cap = 8
//! alt_censor = 0.5
//! [out]
//! dir = out
//! ```
//!
//! Only `[nu]`, `[mu]` and `[sigma]` are required; everything else has
//! the defaults shown by [`RunConfig`]'s field docs. Loading resolves
//! the shift policy: `c = c_star` computes the critical constant, an
//! explicit value below it is rejected (the obstacle would cut through
//! the initial potential and the evolution contract breaks).

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::diagnostics::VerifyTolerances;
use crate::model::{
    c_star, validate_sigma, Component, DiffusionSpec, ProbabilityMeasure, SigmaKind,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    ParseError { line: usize, msg: String },
    #[error("missing required field: {0}")]
    MissingField(String),
    #[error("invalid shift constant: {0}")]
    InvalidConstant(String),
}

fn perr<T>(line: usize, msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::ParseError {
        line,
        msg: msg.into(),
    })
}

/// How the obstacle shift was requested.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CPolicy {
    CStar,
    Explicit(f64),
}

#[derive(Clone, Debug)]
pub struct GridConfig {
    /// Minimum node count (defaults to 401; the builder may add nodes
    /// to align measure breakpoints).
    pub nx: usize,
    /// Solve horizon (defaults to 4).
    pub t_max: f64,
    /// Explicit spatial window; when absent the grid is derived from
    /// the measures' supports with diffusive margins.
    pub window: Option<(f64, f64)>,
}

#[derive(Clone, Debug)]
pub struct SimSection {
    /// Defaults to 20 000.
    pub n_paths: usize,
    /// Defaults to 2.5e-4.
    pub dt_sim: f64,
    /// Defaults to `2·t_max`.
    pub t_cap: f64,
    /// Defaults to 20260814; overridable by `ROOT_EMBED_SEED` and
    /// `--seed` (command line wins).
    pub seed: u64,
    /// Defaults to `{t_max/2, t_max, (t_max+t_cap)/2, t_cap}`; the
    /// final two drive the minimality freeze gate, ones within the
    /// solve horizon drive the martingale drift check.
    pub checkpoints: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct OptSection {
    /// Cap of the principal-expectation payoff `F(s) = s ∧ cap`;
    /// defaults to `min(1, t_max)`.
    pub cap: f64,
    /// Comparison times; defaults to `{0.25, 0.5, 1, 2, 4} ∩ [0, t_cap]`.
    pub t_list: Vec<f64>,
    pub alt_paths: usize,
    pub alt_dt_sim: f64,
    pub alt_t_cap: f64,
    /// Censoring allowance when verifying the benchmark sampler; its
    /// first phase has an infinite-mean hitting time, so substantial
    /// censoring is expected. Defaults to 0.5.
    pub alt_censor: f64,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub nu: ProbabilityMeasure,
    pub mu: ProbabilityMeasure,
    pub sigma: DiffusionSpec,
    pub c_policy: CPolicy,
    /// Resolved shift (equals `c_star` under the default policy).
    pub c: f64,
    pub c_star: f64,
    pub grid: GridConfig,
    pub sim: SimSection,
    pub tol: VerifyTolerances,
    pub opt: OptSection,
    pub out_dir: PathBuf,
    /// Hex SHA-256 of the raw config bytes (empty when built from a
    /// string without a file).
    pub config_sha256: String,
}

/// One logical config line: content with comments stripped, 1-based
/// line number preserved for error messages.
struct Line {
    no: usize,
    text: String,
}

fn tokenize(text: &str) -> Vec<Line> {
    text.lines()
        .enumerate()
        .filter_map(|(i, raw)| {
            let body = raw.split('#').next().unwrap_or("").trim();
            (!body.is_empty()).then(|| Line {
                no: i + 1,
                text: body.to_string(),
            })
        })
        .collect()
}

fn parse_f64(line: usize, s: &str, what: &str) -> Result<f64, ConfigError> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| ConfigError::ParseError {
            line,
            msg: format!("{what}: expected a number, got `{s}`"),
        })
}

fn parse_list(line: usize, s: &str, what: &str) -> Result<Vec<f64>, ConfigError> {
    s.split(',')
        .map(|tok| parse_f64(line, tok, what))
        .collect()
}

/// Split `key = value`; `None` for bare word lines.
fn key_value(l: &Line) -> Option<(&str, &str)> {
    l.text
        .split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
}

fn parse_measure(lines: &[Line], section: &str) -> Result<ProbabilityMeasure, ConfigError> {
    let mut components = Vec::new();
    let mut last_line = 0;
    for l in lines {
        last_line = l.no;
        let toks: Vec<&str> = l.text.split_whitespace().collect();
        match toks.as_slice() {
            ["atom", x, w] => components.push(Component::Atom {
                x: parse_f64(l.no, x, "atom location")?,
                w: parse_f64(l.no, w, "atom weight")?,
            }),
            ["uniform", a, b, w] => components.push(Component::Uniform {
                a: parse_f64(l.no, a, "uniform left end")?,
                b: parse_f64(l.no, b, "uniform right end")?,
                w: parse_f64(l.no, w, "uniform weight")?,
            }),
            _ => {
                return perr(
                    l.no,
                    format!("[{section}] lines are `atom x w` or `uniform a b w`"),
                )
            }
        }
    }
    ProbabilityMeasure::new(components).map_err(|e| ConfigError::ParseError {
        line: last_line,
        msg: format!("[{section}]: {e}"),
    })
}

fn parse_sigma(lines: &[Line]) -> Result<DiffusionSpec, ConfigError> {
    let mut constant: Option<f64> = None;
    let mut xs = Vec::new();
    let mut sigmas = Vec::new();
    let mut k: Option<f64> = None;
    let mut last_line = 0;
    for l in lines {
        last_line = l.no;
        if let Some((key, v)) = key_value(l) {
            match key {
                "k" => k = Some(parse_f64(l.no, v, "Lipschitz bound k")?),
                other => return perr(l.no, format!("unknown [sigma] key `{other}`")),
            }
            continue;
        }
        let toks: Vec<&str> = l.text.split_whitespace().collect();
        match toks.as_slice() {
            ["constant", v] => constant = Some(parse_f64(l.no, v, "constant volatility")?),
            ["node", x, s] => {
                xs.push(parse_f64(l.no, x, "node location")?);
                sigmas.push(parse_f64(l.no, s, "node volatility")?);
            }
            _ => {
                return perr(
                    l.no,
                    "[sigma] lines are `constant v`, `node x v`, or `k = v`",
                )
            }
        }
    }
    let spec = match (constant, xs.is_empty()) {
        (Some(v), true) => {
            if !(v > 0.0 && v.is_finite()) {
                return perr(last_line, format!("volatility must be positive, got {v}"));
            }
            let mut s = DiffusionSpec::constant(v);
            if let Some(kk) = k {
                s.k = kk;
            }
            s
        }
        (None, false) => {
            if xs.len() < 2 {
                return perr(last_line, "a volatility table needs at least two nodes");
            }
            if !xs.windows(2).all(|w| w[0] < w[1]) {
                return perr(last_line, "volatility nodes must be strictly increasing");
            }
            let max_slope = xs
                .windows(2)
                .zip(sigmas.windows(2))
                .map(|(xw, sw)| ((sw[1] - sw[0]) / (xw[1] - xw[0])).abs())
                .fold(0.0f64, f64::max);
            let s_max = sigmas.iter().cloned().fold(f64::MIN, f64::max);
            let s_min = sigmas.iter().cloned().fold(f64::MAX, f64::min);
            if !(s_min > 0.0) {
                return perr(last_line, "volatility table must be strictly positive");
            }
            let k = k.unwrap_or_else(|| {
                (2.0 * s_max).max(2.0 / s_min).max(2.0 * max_slope).max(2.0)
            });
            DiffusionSpec {
                kind: SigmaKind::Table { xs, sigmas },
                k,
            }
        }
        (Some(_), false) => {
            return perr(last_line, "[sigma] mixes `constant` with `node` lines")
        }
        (None, true) => return perr(last_line, "[sigma] has no `constant` or `node` lines"),
    };
    let validation = validate_sigma(&spec).map_err(|e| ConfigError::ParseError {
        line: last_line,
        msg: format!("[sigma]: {e}"),
    })?;
    if !validation.passed() {
        return perr(
            last_line,
            format!(
                "[sigma] violates its declared bounds: {} ellipticity, {} Lipschitz violations",
                validation.ellipticity_violations.len(),
                validation.lipschitz_violations.len()
            ),
        );
    }
    Ok(spec)
}

const SECTIONS: &[&str] = &[
    "nu",
    "mu",
    "sigma",
    "problem",
    "grid",
    "sim",
    "tol",
    "optimality",
    "out",
];

/// Parse a config from text. The SHA-256 echo is computed by
/// [`load_config`]; here it is left empty.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let lines = tokenize(text);
    let mut sections: Vec<(String, Vec<Line>)> = Vec::new();
    for l in lines {
        if let Some(name) = l.text.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            let name = name.trim().to_lowercase();
            if !SECTIONS.contains(&name.as_str()) {
                return perr(l.no, format!("unknown section [{name}]"));
            }
            if sections.iter().any(|(n, _)| *n == name) {
                return perr(l.no, format!("duplicate section [{name}]"));
            }
            sections.push((name, Vec::new()));
        } else {
            match sections.last_mut() {
                Some((_, body)) => body.push(l),
                None => return perr(l.no, "content before the first [section] header"),
            }
        }
    }
    let body = |name: &str| -> Option<&[Line]> {
        sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, b)| b.as_slice())
    };

    let nu = parse_measure(
        body("nu").ok_or_else(|| ConfigError::MissingField("[nu]".into()))?,
        "nu",
    )?;
    let mu = parse_measure(
        body("mu").ok_or_else(|| ConfigError::MissingField("[mu]".into()))?,
        "mu",
    )?;
    let sigma = parse_sigma(
        body("sigma").ok_or_else(|| ConfigError::MissingField("[sigma]".into()))?,
    )?;

    // Keyed sections all share the same shape; collect into small maps.
    let keyed = |name: &str| -> Result<Vec<(usize, String, String)>, ConfigError> {
        let mut out = Vec::new();
        for l in body(name).unwrap_or(&[]) {
            match key_value(l) {
                Some((k, v)) => out.push((l.no, k.to_string(), v.to_string())),
                None => return perr(l.no, format!("[{name}] lines must be `key = value`")),
            }
        }
        Ok(out)
    };
    let lookup = |entries: &[(usize, String, String)],
                  key: &str|
     -> Option<(usize, String)> {
        entries
            .iter()
            .find(|(_, k, _)| k == key)
            .map(|(no, _, v)| (*no, v.clone()))
    };
    let reject_unknown = |name: &str,
                          entries: &[(usize, String, String)],
                          known: &[&str]|
     -> Result<(), ConfigError> {
        for (no, k, _) in entries {
            if !known.contains(&k.as_str()) {
                return perr(*no, format!("unknown [{name}] key `{k}`"));
            }
        }
        Ok(())
    };

    let problem = keyed("problem")?;
    reject_unknown("problem", &problem, &["c"])?;
    let grid_kv = keyed("grid")?;
    reject_unknown("grid", &grid_kv, &["nx", "t_max", "x_min", "x_max"])?;
    let sim_kv = keyed("sim")?;
    reject_unknown(
        "sim",
        &sim_kv,
        &["n_paths", "dt_sim", "t_cap", "seed", "checkpoints"],
    )?;
    let tol_kv = keyed("tol")?;
    reject_unknown("tol", &tol_kv, &["ks", "w1", "censor"])?;
    let opt_kv = keyed("optimality")?;
    reject_unknown(
        "optimality",
        &opt_kv,
        &[
            "cap",
            "t_list",
            "alt_paths",
            "alt_dt_sim",
            "alt_t_cap",
            "alt_censor",
        ],
    )?;
    let out_kv = keyed("out")?;
    reject_unknown("out", &out_kv, &["dir"])?;

    // Grid.
    let nx = match lookup(&grid_kv, "nx") {
        Some((no, v)) => {
            let n = v.parse::<usize>().map_err(|_| ConfigError::ParseError {
                line: no,
                msg: format!("nx: expected an integer, got `{v}`"),
            })?;
            if n < 8 {
                return perr(no, format!("nx = {n} is below the minimum of 8"));
            }
            n
        }
        None => 401,
    };
    let t_max = match lookup(&grid_kv, "t_max") {
        Some((no, v)) => {
            let t = parse_f64(no, &v, "t_max")?;
            if !(t > 0.0 && t.is_finite()) {
                return perr(no, format!("t_max must be positive, got {t}"));
            }
            t
        }
        None => 4.0,
    };
    let window = match (lookup(&grid_kv, "x_min"), lookup(&grid_kv, "x_max")) {
        (Some((no_a, a)), Some((no_b, b))) => {
            let lo = parse_f64(no_a, &a, "x_min")?;
            let hi = parse_f64(no_b, &b, "x_max")?;
            if !(lo < hi) {
                return perr(no_b, format!("window [{lo}, {hi}] is empty"));
            }
            Some((lo, hi))
        }
        (None, None) => None,
        (Some((no, _)), None) | (None, Some((no, _))) => {
            return perr(no, "give both x_min and x_max or neither")
        }
    };

    // Simulation.
    let n_paths = match lookup(&sim_kv, "n_paths") {
        Some((no, v)) => v.parse::<usize>().map_err(|_| ConfigError::ParseError {
            line: no,
            msg: format!("n_paths: expected an integer, got `{v}`"),
        })?,
        None => 20_000,
    };
    let dt_sim = match lookup(&sim_kv, "dt_sim") {
        Some((no, v)) => parse_f64(no, &v, "dt_sim")?,
        None => 2.5e-4,
    };
    let t_cap = match lookup(&sim_kv, "t_cap") {
        Some((no, v)) => parse_f64(no, &v, "t_cap")?,
        None => 2.0 * t_max,
    };
    let seed = match lookup(&sim_kv, "seed") {
        Some((no, v)) => v.parse::<u64>().map_err(|_| ConfigError::ParseError {
            line: no,
            msg: format!("seed: expected an unsigned integer, got `{v}`"),
        })?,
        None => 20_260_814,
    };
    let checkpoints = match lookup(&sim_kv, "checkpoints") {
        Some((no, v)) => {
            let list = parse_list(no, &v, "checkpoints")?;
            if !list.windows(2).all(|w| w[0] < w[1]) {
                return perr(no, "checkpoints must be strictly increasing");
            }
            if list.iter().any(|&t| !(t > 0.0) || t > t_cap * (1.0 + 1e-9)) {
                return perr(no, "checkpoints must lie in (0, t_cap]");
            }
            list
        }
        None => {
            let mut cps = vec![0.5 * t_max, t_max, 0.5 * (t_max + t_cap), t_cap];
            cps.retain(|&t| t <= t_cap * (1.0 + 1e-9));
            cps.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
            cps
        }
    };
    if !(dt_sim > 0.0 && dt_sim.is_finite()) || !(t_cap > dt_sim) {
        return Err(ConfigError::ParseError {
            line: 0,
            msg: format!("[sim] needs 0 < dt_sim < t_cap (got {dt_sim}, {t_cap})"),
        });
    }

    // Tolerances (all must be positive).
    let defaults = VerifyTolerances::default();
    let tol_of = |key: &str, dflt: f64| -> Result<f64, ConfigError> {
        match lookup(&tol_kv, key) {
            Some((no, v)) => {
                let x = parse_f64(no, &v, key)?;
                if !(x > 0.0 && x.is_finite()) {
                    return perr(no, format!("{key} tolerance must be positive, got {x}"));
                }
                Ok(x)
            }
            None => Ok(dflt),
        }
    };
    let tol = VerifyTolerances {
        ks: tol_of("ks", defaults.ks)?,
        w1: tol_of("w1", defaults.w1)?,
        censor: tol_of("censor", defaults.censor)?,
    };

    // Optimality knobs.
    let cap = match lookup(&opt_kv, "cap") {
        Some((no, v)) => {
            let c = parse_f64(no, &v, "cap")?;
            if !(c > 0.0 && c <= t_max * (1.0 + 1e-9)) {
                return perr(
                    no,
                    format!("cap must lie in (0, t_max = {t_max}], got {c}"),
                );
            }
            c
        }
        None => 1.0f64.min(t_max),
    };
    let alt_t_cap = match lookup(&opt_kv, "alt_t_cap") {
        Some((no, v)) => parse_f64(no, &v, "alt_t_cap")?,
        None => t_cap,
    };
    let t_list = match lookup(&opt_kv, "t_list") {
        Some((no, v)) => {
            let list = parse_list(no, &v, "t_list")?;
            if list.is_empty() || !list.windows(2).all(|w| w[0] < w[1]) {
                return perr(no, "t_list must be nonempty and strictly increasing");
            }
            let limit = t_cap.min(alt_t_cap);
            if list.iter().any(|&t| !(t > 0.0) || t > limit * (1.0 + 1e-9)) {
                return perr(no, format!("t_list entries must lie in (0, {limit}]"));
            }
            list
        }
        None => {
            let limit = t_cap.min(alt_t_cap);
            let mut list: Vec<f64> = [0.25, 0.5, 1.0, 2.0, 4.0]
                .into_iter()
                .filter(|&t| t <= limit * (1.0 + 1e-9))
                .collect();
            if list.is_empty() {
                list.push(limit);
            }
            list
        }
    };
    let opt = OptSection {
        cap,
        t_list,
        alt_paths: match lookup(&opt_kv, "alt_paths") {
            Some((no, v)) => v.parse::<usize>().map_err(|_| ConfigError::ParseError {
                line: no,
                msg: format!("alt_paths: expected an integer, got `{v}`"),
            })?,
            None => n_paths,
        },
        alt_dt_sim: match lookup(&opt_kv, "alt_dt_sim") {
            Some((no, v)) => parse_f64(no, &v, "alt_dt_sim")?,
            None => dt_sim,
        },
        alt_t_cap,
        alt_censor: match lookup(&opt_kv, "alt_censor") {
            Some((no, v)) => parse_f64(no, &v, "alt_censor")?,
            None => 0.5,
        },
    };

    let out_dir = match lookup(&out_kv, "dir") {
        Some((_, v)) => PathBuf::from(v),
        None => PathBuf::from("out"),
    };

    // Resolve the shift constant.
    let cs = c_star(&nu, &mu);
    let (c_policy, c) = match lookup(&problem, "c") {
        None => (CPolicy::CStar, cs),
        Some((_, v)) if v == "c_star" => (CPolicy::CStar, cs),
        Some((no, v)) => {
            let c = parse_f64(no, &v, "c")?;
            if c < cs - 1e-12 * (1.0 + cs.abs()) {
                return Err(ConfigError::InvalidConstant(format!(
                    "c = {c} is below the critical constant C* = {cs}; the obstacle \
                     would cut through the initial potential"
                )));
            }
            (CPolicy::Explicit(c), c)
        }
    };

    Ok(RunConfig {
        nu,
        mu,
        sigma,
        c_policy,
        c,
        c_star: cs,
        grid: GridConfig { nx, t_max, window },
        sim: SimSection {
            n_paths,
            dt_sim,
            t_cap,
            seed,
            checkpoints,
        },
        tol,
        opt,
        out_dir,
        config_sha256: String::new(),
    })
}

/// Read, hash, and parse a config file.
pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let bytes = std::fs::read(path)?;
    let text = String::from_utf8_lossy(&bytes);
    let mut cfg = parse_config(&text)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    cfg.config_sha256 = format!("{:x}", hasher.finalize());
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    const MINIMAL: &str = "[nu]\natom 0 1\n[mu]\natom 1 1\n[sigma]\nconstant 1\n";

    #[test]
    fn minimal_config_fills_defaults_and_resolves_the_constant() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.c_policy, CPolicy::CStar);
        assert_eq!(cfg.c, 1.0);
        assert_eq!(cfg.c_star, 1.0);
        assert_eq!(cfg.grid.nx, 401);
        assert_eq!(cfg.grid.t_max, 4.0);
        assert_eq!(cfg.sim.t_cap, 8.0);
        assert_eq!(cfg.sim.checkpoints, vec![2.0, 4.0, 6.0, 8.0]);
        assert_eq!(cfg.opt.cap, 1.0);
        assert_eq!(cfg.opt.t_list, vec![0.25, 0.5, 1.0, 2.0, 4.0]);
        assert_eq!(cfg.out_dir, PathBuf::from("out"));
    }

    #[test]
    fn explicit_constant_below_critical_is_rejected() {
        let text = format!("{MINIMAL}[problem]\nc = 0.5\n");
        assert!(matches!(
            parse_config(&text),
            Err(ConfigError::InvalidConstant(_))
        ));
        let ok = format!("{MINIMAL}[problem]\nc = 1.5\n");
        let cfg = parse_config(&ok).unwrap();
        assert_eq!(cfg.c, 1.5);
        assert_eq!(cfg.c_policy, CPolicy::Explicit(1.5));
    }

    #[test]
    fn missing_sections_are_missing_fields() {
        let no_sigma = "[nu]\natom 0 1\n[mu]\natom 1 1\n";
        assert!(matches!(
            parse_config(no_sigma),
            Err(ConfigError::MissingField(f)) if f == "[sigma]"
        ));
        assert!(matches!(
            parse_config("[mu]\natom 0 1\n[sigma]\nconstant 1\n"),
            Err(ConfigError::MissingField(f)) if f == "[nu]"
        ));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let bad = "[nu]\natom 0 1\nbogus line here\n[mu]\natom 1 1\n[sigma]\nconstant 1\n";
        match parse_config(bad) {
            Err(ConfigError::ParseError { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected a parse error, got {other:?}"),
        }
        match parse_config(&format!("{MINIMAL}[grid]\nnx = few\n")) {
            Err(ConfigError::ParseError { line, .. }) => assert_eq!(line, 8),
            other => panic!("expected a parse error, got {other:?}"),
        }
        assert!(matches!(
            parse_config("[nope]\n"),
            Err(ConfigError::ParseError { line: 1, .. })
        ));
        assert!(matches!(
            parse_config(&format!("{MINIMAL}[nu]\natom 2 1\n")),
            Err(ConfigError::ParseError { .. })
        ));
    }

    #[test]
    fn full_config_round_trips_every_section() {
        let text = "\
[nu]
atom -1 0.5
atom 1 0.5
[mu]
atom 0 0.5
uniform -2 2 0.5
[sigma]
node -5 1.0
node 5 2.0
k = 10
[problem]
c = c_star
[grid]
nx = 201
t_max = 2
x_min = -6
x_max = 6
[sim]
n_paths = 500
dt_sim = 1e-3
t_cap = 3
seed = 7
checkpoints = 1, 3
[tol]
ks = 0.05
w1 = 0.04
censor = 0.3
[optimality]
cap = 0.5
t_list = 0.5, 1
alt_paths = 250
alt_censor = 0.6
[out]
dir = scratch/results
";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.grid.window, Some((-6.0, 6.0)));
        assert_eq!(cfg.sim.n_paths, 500);
        assert_eq!(cfg.sim.seed, 7);
        assert_eq!(cfg.sim.checkpoints, vec![1.0, 3.0]);
        assert_eq!(cfg.tol.censor, 0.3);
        assert_eq!(cfg.opt.cap, 0.5);
        assert_eq!(cfg.opt.t_list, vec![0.5, 1.0]);
        assert_eq!(cfg.opt.alt_paths, 250);
        assert_eq!(cfg.opt.alt_dt_sim, 1e-3);
        assert_eq!(cfg.out_dir, PathBuf::from("scratch/results"));
        assert_eq!(cfg.sigma.k, 10.0);
        assert!((cfg.sigma.sigma_at(0.0) - 1.5).abs() < 1e-12);
        // The mixed target's critical constant is finite and the
        // resolved c matches it under the c_star policy.
        assert_eq!(cfg.c, cfg.c_star);
    }

    #[test]
    fn loading_a_file_hashes_its_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(MINIMAL.as_bytes()).unwrap();
        drop(f);
        let cfg = load_config(&path).unwrap();
        assert_eq!(cfg.config_sha256.len(), 64);
        let mut g = std::fs::File::create(&path).unwrap();
        g.write_all(format!("{MINIMAL}\n# trailing comment\n").as_bytes())
            .unwrap();
        drop(g);
        let cfg2 = load_config(&path).unwrap();
        assert_ne!(cfg.config_sha256, cfg2.config_sha256);
        assert!(matches!(
            load_config(&dir.path().join("absent.cfg")),
            Err(ConfigError::Io(_))
        ));
    }
}
