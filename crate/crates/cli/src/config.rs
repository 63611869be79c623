//! Sectioned `key = value` experiment configuration.
//!
//! ```text
//! # comment
//! [model]
//! kind = Ib
//! b = 1
//! ```
//!
//! Every key has a documented default except the model parameters that only
//! make sense for some kinds. Parsing collects all violations before failing.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use krflow::fibration::ModelName;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    SolveBase,
    RunFlow,
    K3Family,
    DensityFit,
    WpCheck,
    SchwarzCheck,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::SolveBase,
        ExperimentKind::RunFlow,
        ExperimentKind::K3Family,
        ExperimentKind::DensityFit,
        ExperimentKind::WpCheck,
        ExperimentKind::SchwarzCheck,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::SolveBase => "solve-base",
            ExperimentKind::RunFlow => "run-flow",
            ExperimentKind::K3Family => "k3-family",
            ExperimentKind::DensityFit => "density-fit",
            ExperimentKind::WpCheck => "wp-check",
            ExperimentKind::SchwarzCheck => "schwarz-check",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown experiment {s:?}"))
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Base model: the synthetic torus reference model, a flat torus, or a
/// catalog model on an annulus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelChoice {
    Reference,
    Flat,
    Catalog(ModelName),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelChoice,
    pub m: Option<u32>,
    pub b: Option<u32>,
    pub h: u32,
    pub tau0: (f64, f64),
    pub coefficient: (f64, f64),
    pub area: f64,
    pub chi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    /// Torus base resolution, or the number of radial rows on an annulus.
    pub base: usize,
    pub theta: usize,
    pub fiber: usize,
    pub rho_min: f64,
    pub rho_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DensityKind {
    Reference,
    Constant,
    Model,
    Consistent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub gmres_tol: f64,
    /// Continuity-path legs; 0 solves directly.
    pub path_steps: usize,
    pub density: DensityKind,
    pub density_value: f64,
    /// 0 or −1.
    pub lambda: i32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedKind {
    Zero,
    Random,
    Fiber,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    pub t_max: f64,
    pub dt: f64,
    pub monitor_every: f64,
    pub snapshot_every: Option<f64>,
    pub seed: SeedKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FamilyConfig {
    pub t_min: f64,
    pub legs: usize,
    pub base_amp: f64,
    pub fiber_amp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub p: Vec<f64>,
    pub resolutions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub model: ModelConfig,
    pub grid: GridConfig,
    pub solver: SolverConfig,
    pub flow: FlowConfig,
    pub family: FamilyConfig,
    pub fit: FitConfig,
    /// Effective value of every key, used for hashing.
    values: BTreeMap<&'static str, String>,
}

/// One problem found while parsing.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub line: Option<usize>,
    pub key: Option<String>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(l) = self.line {
            write!(f, "line {l}: ")?;
        }
        if let Some(k) = &self.key {
            write!(f, "{k}: ")?;
        }
        f.write_str(&self.message)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{} configuration error(s):\n{}", .0.len(), .0.iter().map(|v| format!("  {v}")).collect::<Vec<_>>().join("\n"))]
pub struct ConfigError(pub Vec<Violation>);

impl ConfigError {
    pub fn mentions(&self, needle: &str) -> bool {
        self.0.iter().any(|v| v.to_string().contains(needle))
    }
}

#[derive(Debug, Clone, Copy)]
enum Type {
    Int { min: i64, max: i64 },
    Float { min: f64, max: f64, open_min: bool },
    Choice(&'static [&'static str]),
    Pair,
    FloatList { min: f64 },
    IntList { min: i64 },
    Text,
}

struct KeySpec {
    key: &'static str,
    ty: Type,
    default: Option<&'static str>,
}

const fn spec(key: &'static str, ty: Type, default: Option<&'static str>) -> KeySpec {
    KeySpec { key, ty, default }
}

const POS: f64 = 0.0;
const EXPERIMENTS: &[&str] = &[
    "solve-base",
    "run-flow",
    "k3-family",
    "density-fit",
    "wp-check",
    "schwarz-check",
];
const MODELS: &[&str] = &[
    "reference",
    "flat",
    "mI0",
    "Ib",
    "mIb",
    "IbStar",
    "I0*",
    "II",
    "III",
    "IV",
    "IV*",
    "III*",
    "II*",
    "constant",
    "identity",
];

const KEYS: &[KeySpec] = &[
    spec("experiment.kind", Type::Choice(EXPERIMENTS), None),
    spec(
        "experiment.seed",
        Type::Int {
            min: 0,
            max: i64::MAX,
        },
        Some("0"),
    ),
    spec("experiment.output", Type::Text, None),
    spec("model.kind", Type::Choice(MODELS), Some("reference")),
    spec("model.m", Type::Int { min: 1, max: 12 }, None),
    spec("model.b", Type::Int { min: 1, max: 12 }, None),
    spec("model.h", Type::Int { min: 1, max: 8 }, Some("1")),
    spec("model.tau0", Type::Pair, Some("0 1")),
    spec("model.coefficient", Type::Pair, Some("0.1 0")),
    spec(
        "model.area",
        Type::Float {
            min: POS,
            max: f64::INFINITY,
            open_min: true,
        },
        Some("1"),
    ),
    spec(
        "model.chi",
        Type::Float {
            min: POS,
            max: f64::INFINITY,
            open_min: true,
        },
        Some("1"),
    ),
    spec("grid.base", Type::Int { min: 8, max: 4096 }, Some("32")),
    spec("grid.theta", Type::Int { min: 8, max: 4096 }, Some("32")),
    spec("grid.fiber", Type::Int { min: 8, max: 256 }, Some("16")),
    spec(
        "grid.rho_min",
        Type::Float {
            min: -40.0,
            max: 0.0,
            open_min: false,
        },
        Some("-8"),
    ),
    spec(
        "grid.rho_max",
        Type::Float {
            min: -40.0,
            max: 0.0,
            open_min: false,
        },
        Some("-0.5"),
    ),
    spec(
        "solver.tol",
        Type::Float {
            min: POS,
            max: 1.0,
            open_min: true,
        },
        Some("1e-11"),
    ),
    spec(
        "solver.max_iter",
        Type::Int { min: 1, max: 1000 },
        Some("40"),
    ),
    spec(
        "solver.gmres_tol",
        Type::Float {
            min: POS,
            max: 1.0,
            open_min: true,
        },
        Some("1e-12"),
    ),
    spec(
        "solver.path_steps",
        Type::Int { min: 0, max: 1000 },
        Some("0"),
    ),
    spec(
        "solver.density",
        Type::Choice(&["reference", "constant", "model", "consistent"]),
        Some("reference"),
    ),
    spec(
        "solver.density_value",
        Type::Float {
            min: POS,
            max: f64::INFINITY,
            open_min: true,
        },
        Some("1"),
    ),
    spec("solver.lambda", Type::Int { min: -1, max: 0 }, Some("-1")),
    spec(
        "flow.t_max",
        Type::Float {
            min: POS,
            max: 100.0,
            open_min: true,
        },
        Some("12"),
    ),
    spec(
        "flow.dt",
        Type::Float {
            min: POS,
            max: 10.0,
            open_min: true,
        },
        Some("0.1"),
    ),
    spec(
        "flow.monitor_every",
        Type::Float {
            min: POS,
            max: 100.0,
            open_min: true,
        },
        Some("0.5"),
    ),
    spec(
        "flow.snapshot_every",
        Type::Float {
            min: POS,
            max: 100.0,
            open_min: true,
        },
        None,
    ),
    spec(
        "flow.seed",
        Type::Choice(&["zero", "random", "fiber"]),
        Some("zero"),
    ),
    spec(
        "family.t_min",
        Type::Float {
            min: POS,
            max: 1.0,
            open_min: true,
        },
        Some("1e-3"),
    ),
    spec("family.legs", Type::Int { min: 1, max: 200 }, Some("12")),
    spec(
        "family.base_amp",
        Type::Float {
            min: -0.9,
            max: 0.9,
            open_min: false,
        },
        Some("0.2"),
    ),
    spec(
        "family.fiber_amp",
        Type::Float {
            min: -0.9,
            max: 0.9,
            open_min: false,
        },
        Some("0.2"),
    ),
    spec("fit.p", Type::FloatList { min: 1.0 }, Some("1.5 3")),
    spec(
        "fit.resolutions",
        Type::IntList { min: 8 },
        Some("64 128 256 512"),
    ),
];

/// Documented keys with their defaults (`None` when the key has no default).
pub fn documented_keys() -> Vec<(&'static str, Option<&'static str>)> {
    KEYS.iter().map(|k| (k.key, k.default)).collect()
}

fn nearest_key(key: &str) -> &'static str {
    KEYS.iter()
        .map(|k| (strsim::levenshtein(key, k.key), k.key))
        .min()
        .map(|(_, k)| k)
        .expect("key table is non-empty")
}

fn check_value(ty: Type, raw: &str) -> Result<(), String> {
    let float = |s: &str| {
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| format!("{s:?} is not a finite number"))
    };
    match ty {
        Type::Int { min, max } => {
            let v: i64 = raw
                .parse()
                .map_err(|_| format!("{raw:?} is not an integer"))?;
            if v < min || v > max {
                return Err(format!("{v} outside [{min}, {max}]"));
            }
        }
        Type::Float { min, max, open_min } => {
            let v = float(raw)?;
            if v > max || v < min || (open_min && v == min) {
                let lb = if open_min { "(" } else { "[" };
                return Err(format!("{v} outside {lb}{min}, {max}]"));
            }
        }
        Type::Choice(opts) => {
            if !opts.contains(&raw) {
                let near = opts
                    .iter()
                    .min_by_key(|o| strsim::levenshtein(raw, o))
                    .expect("non-empty choices");
                return Err(format!(
                    "{raw:?} is not one of {opts:?} (did you mean {near:?}?)"
                ));
            }
        }
        Type::Pair => {
            let parts: Vec<&str> = raw.split_whitespace().collect();
            if parts.len() != 2 {
                return Err(format!("expected two numbers \"re im\", got {raw:?}"));
            }
            for p in parts {
                float(p)?;
            }
        }
        Type::FloatList { min } => {
            if raw.split_whitespace().next().is_none() {
                return Err("empty list".into());
            }
            for p in raw.split_whitespace() {
                let v = float(p)?;
                if v < min {
                    return Err(format!("list entry {v} below {min}"));
                }
            }
        }
        Type::IntList { min } => {
            if raw.split_whitespace().next().is_none() {
                return Err("empty list".into());
            }
            for p in raw.split_whitespace() {
                let v: i64 = p
                    .parse()
                    .map_err(|_| format!("list entry {p:?} is not an integer"))?;
                if v < min {
                    return Err(format!("list entry {v} below {min}"));
                }
            }
        }
        Type::Text => {}
    }
    Ok(())
}

/// Parse and validate; overrides are applied by [`ExperimentConfig::with_overrides`].
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut errs = Vec::new();
    let mut seen: BTreeMap<String, (usize, String)> = BTreeMap::new();
    let mut section: Option<String> = None;
    for (n, line) in text.lines().enumerate() {
        let lineno = n + 1;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            match rest.strip_suffix(']') {
                Some(name) if !name.trim().is_empty() => section = Some(name.trim().to_string()),
                _ => errs.push(Violation {
                    line: Some(lineno),
                    key: None,
                    message: format!("malformed section header {line:?}"),
                }),
            }
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            errs.push(Violation {
                line: Some(lineno),
                key: None,
                message: format!("expected `key = value`, got {line:?}"),
            });
            continue;
        };
        let k = k.trim();
        let full = match (&section, k.contains('.')) {
            (_, true) => k.to_string(),
            (Some(s), false) => format!("{s}.{k}"),
            (None, false) => {
                errs.push(Violation {
                    line: Some(lineno),
                    key: Some(k.into()),
                    message: "key outside of any section".into(),
                });
                continue;
            }
        };
        if let Some((first, _)) = seen.get(&full) {
            errs.push(Violation {
                line: Some(lineno),
                key: Some(full.clone()),
                message: format!(
                    "duplicate key (first set on line {first}, again on line {lineno})"
                ),
            });
            continue;
        }
        seen.insert(full, (lineno, v.trim().to_string()));
    }
    let mut values: BTreeMap<&'static str, String> = BTreeMap::new();
    let mut failed: Vec<String> = Vec::new();
    for (key, (line, raw)) in &seen {
        match KEYS.iter().find(|s| s.key == key) {
            None => errs.push(Violation {
                line: Some(*line),
                key: Some(key.clone()),
                message: format!("unknown key (nearest valid key: {})", nearest_key(key)),
            }),
            Some(s) => match check_value(s.ty, raw) {
                Ok(()) => {
                    values.insert(s.key, raw.clone());
                }
                Err(m) => {
                    failed.push(key.clone());
                    errs.push(Violation {
                        line: Some(*line),
                        key: Some(key.clone()),
                        message: m,
                    })
                }
            },
        }
    }
    for s in KEYS {
        if let (false, Some(d)) = (values.contains_key(s.key), s.default) {
            values.insert(s.key, d.to_string());
        }
    }
    // cross-key checks run on the valid subset, with defaults standing in
    // for rejected values; complaints about rejected keys are dropped
    match build(values) {
        Ok(cfg) if errs.is_empty() => Ok(cfg),
        Ok(_) => Err(ConfigError(errs)),
        Err(ConfigError(more)) => {
            errs.extend(
                more.into_iter()
                    .filter(|v| v.key.as_ref().map_or(true, |k| !failed.contains(k))),
            );
            Err(ConfigError(errs))
        }
    }
}

fn build(values: BTreeMap<&'static str, String>) -> Result<ExperimentConfig, ConfigError> {
    let mut errs = Vec::new();
    let get = |k: &str| values.get(k).map(String::as_str);
    let int = |k: &str| get(k).map(|v| v.parse::<i64>().expect("validated"));
    let float = |k: &str| get(k).map(|v| v.parse::<f64>().expect("validated"));
    let pair = |k: &str| {
        let v: Vec<f64> = get(k)
            .expect("defaulted")
            .split_whitespace()
            .map(|p| p.parse().expect("validated"))
            .collect();
        (v[0], v[1])
    };
    let missing = |k: &str, why: String| Violation {
        line: None,
        key: Some(k.into()),
        message: why,
    };

    let kind = get("experiment.kind")
        .map(|k| k.parse::<ExperimentKind>().expect("validated"))
        .unwrap_or(ExperimentKind::SolveBase);
    let model_kind = match get("model.kind").expect("defaulted") {
        "reference" => ModelChoice::Reference,
        "flat" => ModelChoice::Flat,
        other => ModelChoice::Catalog(other.parse().expect("validated catalog name")),
    };
    let m = int("model.m").map(|v| v as u32);
    let b = int("model.b").map(|v| v as u32);
    if let ModelChoice::Catalog(name) = model_kind {
        let needs_b = matches!(name, ModelName::Ib | ModelName::MIb | ModelName::IbStar);
        let needs_m = matches!(name, ModelName::MI0 | ModelName::MIb);
        let label = get("model.kind").expect("defaulted");
        if needs_b && b.is_none() {
            errs.push(missing(
                "model.b",
                format!("required for model.kind = {label}"),
            ));
        }
        if needs_m && m.is_none() {
            errs.push(missing(
                "model.m",
                format!("required for model.kind = {label}"),
            ));
        }
    }
    let tau0 = pair("model.tau0");
    if !(tau0.1 > 0.0) {
        errs.push(missing(
            "model.tau0",
            format!("Im τ₀ must be positive, got {}", tau0.1),
        ));
    }
    let grid = GridConfig {
        base: int("grid.base").expect("defaulted") as usize,
        theta: int("grid.theta").expect("defaulted") as usize,
        fiber: int("grid.fiber").expect("defaulted") as usize,
        rho_min: float("grid.rho_min").expect("defaulted"),
        rho_max: float("grid.rho_max").expect("defaulted"),
    };
    for (k, n) in [
        ("grid.base", grid.base),
        ("grid.theta", grid.theta),
        ("grid.fiber", grid.fiber),
    ] {
        if n % 2 != 0 {
            errs.push(missing(k, format!("resolution {n} must be even")));
        }
    }
    if !(grid.rho_min < grid.rho_max) {
        errs.push(missing(
            "grid.rho_min",
            format!("must be below grid.rho_max = {}", grid.rho_max),
        ));
    }
    let fit = FitConfig {
        p: get("fit.p")
            .expect("defaulted")
            .split_whitespace()
            .map(|v| v.parse().expect("validated"))
            .collect(),
        resolutions: get("fit.resolutions")
            .expect("defaulted")
            .split_whitespace()
            .map(|v| v.parse().expect("validated"))
            .collect(),
    };
    if fit.resolutions.iter().any(|n| n % 2 != 0) {
        errs.push(missing(
            "fit.resolutions",
            "resolutions must be even".into(),
        ));
    }
    if fit.resolutions.len() < 2 {
        errs.push(missing(
            "fit.resolutions",
            "need at least two resolutions".into(),
        ));
    }
    let density = match get("solver.density").expect("defaulted") {
        "reference" => DensityKind::Reference,
        "constant" => DensityKind::Constant,
        "model" => DensityKind::Model,
        _ => DensityKind::Consistent,
    };
    let flow = FlowConfig {
        t_max: float("flow.t_max").expect("defaulted"),
        dt: float("flow.dt").expect("defaulted"),
        monitor_every: float("flow.monitor_every").expect("defaulted"),
        snapshot_every: float("flow.snapshot_every"),
        seed: match get("flow.seed").expect("defaulted") {
            "zero" => SeedKind::Zero,
            "random" => SeedKind::Random,
            _ => SeedKind::Fiber,
        },
    };
    if flow.monitor_every > flow.t_max {
        errs.push(missing(
            "flow.monitor_every",
            format!("exceeds flow.t_max = {}", flow.t_max),
        ));
    }
    if !errs.is_empty() {
        return Err(ConfigError(errs));
    }
    Ok(ExperimentConfig {
        kind,
        seed: int("experiment.seed").expect("defaulted") as u64,
        output: get("experiment.output").map(PathBuf::from),
        model: ModelConfig {
            kind: model_kind,
            m,
            b,
            h: int("model.h").expect("defaulted") as u32,
            tau0,
            coefficient: pair("model.coefficient"),
            area: float("model.area").expect("defaulted"),
            chi: float("model.chi").expect("defaulted"),
        },
        grid,
        solver: SolverConfig {
            tol: float("solver.tol").expect("defaulted"),
            max_iter: int("solver.max_iter").expect("defaulted") as usize,
            gmres_tol: float("solver.gmres_tol").expect("defaulted"),
            path_steps: int("solver.path_steps").expect("defaulted") as usize,
            density,
            density_value: float("solver.density_value").expect("defaulted"),
            lambda: int("solver.lambda").expect("defaulted") as i32,
        },
        flow,
        family: FamilyConfig {
            t_min: float("family.t_min").expect("defaulted"),
            legs: int("family.legs").expect("defaulted") as usize,
            base_amp: float("family.base_amp").expect("defaulted"),
            fiber_amp: float("family.fiber_amp").expect("defaulted"),
        },
        fit,
        values,
    })
}

/// Command-line overrides, applied on top of the parsed file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub kind: Option<ExperimentKind>,
    pub grid: Option<usize>,
    pub seed: Option<u64>,
    pub snapshot_every: Option<f64>,
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Defaults for `kind`.
    pub fn defaults(kind: ExperimentKind) -> Self {
        parse_config(&format!("[experiment]\nkind = {kind}\n")).expect("defaults are valid")
    }

    /// Re-validate with the overrides folded into the key set, so that the
    /// hash covers them. A subcommand that disagrees with `experiment.kind`
    /// is an error.
    pub fn with_overrides(&self, o: &Overrides) -> Result<Self, ConfigError> {
        let mut values = self.values.clone();
        let mut errs = Vec::new();
        if let Some(k) = o.kind {
            match values.get("experiment.kind") {
                Some(v) if v != k.name() => errs.push(Violation {
                    line: None,
                    key: Some("experiment.kind".into()),
                    message: format!("config says {v} but the subcommand is {k}"),
                }),
                _ => {
                    values.insert("experiment.kind", k.name().to_string());
                }
            }
        }
        let mut set = |key: &'static str, raw: String| match check_value(
            KEYS.iter().find(|s| s.key == key).expect("known key").ty,
            &raw,
        ) {
            Ok(()) => {
                values.insert(key, raw);
            }
            Err(m) => errs.push(Violation {
                line: None,
                key: Some(key.into()),
                message: format!("override: {m}"),
            }),
        };
        if let Some(n) = o.grid {
            set("grid.base", n.to_string());
        }
        if let Some(s) = o.seed {
            set("experiment.seed", s.to_string());
        }
        if let Some(t) = o.snapshot_every {
            set("flow.snapshot_every", format!("{t:?}"));
        }
        if let Some(p) = &o.output {
            set("experiment.output", p.display().to_string());
        }
        if !errs.is_empty() {
            return Err(ConfigError(errs));
        }
        build(values)
    }

    /// Canonical `key = value` listing of every effective value except the
    /// output location.
    pub fn canonical(&self) -> String {
        self.values
            .iter()
            .filter(|(k, _)| **k != "experiment.output")
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// SHA-256 of [`Self::canonical`], hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}
