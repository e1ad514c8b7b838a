//! Flat `key = value` run configuration with command-line overrides.

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;

use serde::Serialize;

/// Where a value came from; diagnostics name it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Default,
    Line(usize),
    Flag,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Default => write!(f, "default"),
            Origin::Line(l) => write!(f, "line {l}"),
            Origin::Flag => write!(f, "command line"),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("missing subcommand")]
    MissingSubcommand,
    #[error("{origin}: unknown subcommand `{name}`")]
    UnknownSubcommand { name: String, origin: Origin },
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("{origin}: unknown key `{key}`")]
    UnknownKey { key: String, origin: Origin },
    #[error("line {line}: key `{key}` is set twice")]
    Duplicate { key: String, line: usize },
    #[error("{origin}: invalid value for `{key}`: {message}")]
    InvalidValue { key: String, origin: Origin, message: String },
    #[error("{origin}: `{key}` out of range: {message}")]
    OutOfRange { key: String, origin: Origin, message: String },
}

pub type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    GeometryCheck,
    Extend,
    PacketsDecompose,
    PacketsCensus,
    TableBuild,
    TableCensus,
    CounterexampleRun,
    RecursionIterate,
    TrendRun,
    Threshold,
}

impl Subcommand {
    pub const ALL: [Subcommand; 10] = [
        Subcommand::GeometryCheck,
        Subcommand::Extend,
        Subcommand::PacketsDecompose,
        Subcommand::PacketsCensus,
        Subcommand::TableBuild,
        Subcommand::TableCensus,
        Subcommand::CounterexampleRun,
        Subcommand::RecursionIterate,
        Subcommand::TrendRun,
        Subcommand::Threshold,
    ];

    /// Words as typed on the command line.
    pub fn words(self) -> &'static str {
        match self {
            Subcommand::GeometryCheck => "geometry check",
            Subcommand::Extend => "extend",
            Subcommand::PacketsDecompose => "packets decompose",
            Subcommand::PacketsCensus => "packets census",
            Subcommand::TableBuild => "table build",
            Subcommand::TableCensus => "table census",
            Subcommand::CounterexampleRun => "counterexample run",
            Subcommand::RecursionIterate => "recursion iterate",
            Subcommand::TrendRun => "trend run",
            Subcommand::Threshold => "threshold",
        }
    }

    /// File stem of the emitted artifacts.
    pub fn stem(self) -> String {
        self.words().replace(' ', "-")
    }

    fn parse(text: &str) -> Option<Self> {
        let norm = text.split_whitespace().collect::<Vec<_>>().join(" ");
        Self::ALL.into_iter().find(|s| s.words() == norm || s.stem() == norm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Surface {
    DoubleCone,
    DegenerateCone,
    Cylinder,
    SphereCap,
    Flat,
}

impl Surface {
    fn parse(text: &str) -> Option<Self> {
        Some(match text {
            "double-cone" => Surface::DoubleCone,
            "degenerate-cone" => Surface::DegenerateCone,
            "cylinder" => Surface::Cylinder,
            "sphere-cap" => Surface::SphereCap,
            "flat" => Surface::Flat,
            _ => return None,
        })
    }
}

/// A validated run description. Every field has a default except the subcommand.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub subcommand: Subcommand,
    pub surface: Surface,
    pub n: usize,
    pub k: usize,
    pub half_width: f64,
    pub epsilons: Vec<f64>,
    pub scales: Vec<f64>,
    pub exponents: Vec<f64>,
    /// Packet and table constant.
    pub c: f64,
    /// Box constant of the squashed-cap region.
    pub c_small: f64,
    /// Loss exponent of the recursion.
    pub loss_exponent: f64,
    pub c0: f64,
    pub loss_epsilon: f64,
    pub periods: usize,
    pub depth: u32,
    /// Frequency nodes per axis.
    pub resolution: usize,
    /// Space-time samples per axis.
    pub sample_resolution: usize,
    /// Random points for geometric estimates.
    pub samples: usize,
    pub seed: u64,
    pub input: Option<PathBuf>,
    pub max_tubes: Option<usize>,
    /// Output directory; not part of the echoed configuration or its hash.
    #[serde(skip)]
    pub output: Option<PathBuf>,
}

pub const KEYS: [&str; 22] = [
    "subcommand",
    "surface",
    "n",
    "k",
    "half_width",
    "epsilons",
    "scales",
    "exponents",
    "c",
    "c_small",
    "loss_exponent",
    "c0",
    "loss_epsilon",
    "periods",
    "depth",
    "resolution",
    "sample_resolution",
    "samples",
    "seed",
    "input",
    "max_tubes",
    "output",
];

/// Parses configuration text alone.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_config_with_overrides(text, &[])
}

/// Parses configuration text, then applies `(key, value)` overrides, which win.
pub fn parse_config_with_overrides(text: &str, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut entries: HashMap<String, (String, Origin)> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let Some((key, value)) = body.split_once('=') else {
            return Err(ConfigError::Syntax { line, text: body.to_string() });
        };
        let key = key.trim().to_string();
        if !KEYS.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey { key, origin: Origin::Line(line) });
        }
        if entries.contains_key(&key) {
            return Err(ConfigError::Duplicate { key, line });
        }
        entries.insert(key, (value.trim().to_string(), Origin::Line(line)));
    }
    for (key, value) in overrides {
        if !KEYS.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey { key: key.clone(), origin: Origin::Flag });
        }
        entries.insert(key.clone(), (value.trim().to_string(), Origin::Flag));
    }
    build(&entries)
}

struct Reader<'a> {
    entries: &'a HashMap<String, (String, Origin)>,
}

impl Reader<'_> {
    fn origin(&self, key: &str) -> Origin {
        self.entries.get(key).map_or(Origin::Default, |(_, o)| *o)
    }

    fn raw(&self, key: &str) -> Option<&(String, Origin)> {
        self.entries.get(key)
    }

    fn invalid(key: &str, origin: Origin, message: impl Into<String>) -> ConfigError {
        ConfigError::InvalidValue {
            key: key.to_string(),
            origin,
            message: message.into(),
        }
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        match self.raw(key) {
            None => Ok(default),
            Some((v, o)) => v.parse().map_err(|e: T::Err| Self::invalid(key, *o, e.to_string())),
        }
    }

    fn float(&self, key: &str, default: f64) -> Result<f64> {
        match self.raw(key) {
            None => Ok(default),
            Some((v, o)) => number(v).ok_or_else(|| Self::invalid(key, *o, format!("`{v}` is not a number"))),
        }
    }

    fn list(&self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.raw(key) {
            None => Ok(default.to_vec()),
            Some((v, o)) => v
                .split(',')
                .map(|item| number(item.trim()).ok_or_else(|| Self::invalid(key, *o, format!("`{}` is not a number", item.trim()))))
                .collect(),
        }
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(|(v, _)| PathBuf::from(v))
    }
}

/// Decimal or `a/b` rational literal.
fn number(text: &str) -> Option<f64> {
    match text.split_once('/') {
        Some((a, b)) => Some(a.trim().parse::<f64>().ok()? / b.trim().parse::<f64>().ok()?),
        None => text.parse().ok(),
    }
    .filter(|v: &f64| v.is_finite())
}

fn build(entries: &HashMap<String, (String, Origin)>) -> Result<RunConfig> {
    let r = Reader { entries };
    let (name, origin) = r.raw("subcommand").ok_or(ConfigError::MissingSubcommand)?;
    let subcommand = Subcommand::parse(name).ok_or_else(|| ConfigError::UnknownSubcommand {
        name: name.clone(),
        origin: *origin,
    })?;
    let surface = match r.raw("surface") {
        None => Surface::DoubleCone,
        Some((v, o)) => Surface::parse(v).ok_or_else(|| {
            Reader::invalid("surface", *o, "expected double-cone, degenerate-cone, cylinder, sphere-cap or flat")
        })?,
    };
    let max_tubes = match r.raw("max_tubes") {
        None => None,
        Some(_) => Some(r.parse("max_tubes", 0usize)?),
    };
    let cfg = RunConfig {
        subcommand,
        surface,
        n: r.parse("n", 3)?,
        k: r.parse("k", 3)?,
        half_width: r.float("half_width", 0.2)?,
        epsilons: r.list("epsilons", &[0.25, 0.125, 0.0625])?,
        scales: r.list("scales", &[16.0, 32.0, 64.0])?,
        exponents: r.list("exponents", &[0.8, 14.0 / 15.0, 1.2])?,
        c: r.float("c", 0.25)?,
        c_small: r.float("c_small", 0.1)?,
        loss_exponent: r.float("loss_exponent", 10.0)?,
        c0: r.float("c0", 4.0)?,
        loss_epsilon: r.float("loss_epsilon", 0.01)?,
        periods: r.parse("periods", 2)?,
        depth: r.parse("depth", 1)?,
        resolution: r.parse("resolution", 4)?,
        sample_resolution: r.parse("sample_resolution", 6)?,
        samples: r.parse("samples", 200)?,
        seed: r.parse("seed", 1)?,
        input: r.path("input"),
        max_tubes,
        output: r.path("output"),
    };
    validate(&cfg, &r)?;
    Ok(cfg)
}

fn validate(cfg: &RunConfig, r: &Reader<'_>) -> Result<()> {
    let fail = |key: &str, message: String| {
        Err(ConfigError::OutOfRange {
            key: key.to_string(),
            origin: r.origin(key),
            message,
        })
    };
    if cfg.n < 2 {
        return fail("n", format!("n = {} must be at least 2", cfg.n));
    }
    if cfg.k == 0 || cfg.k > cfg.n + 1 {
        return fail("k", format!("k = {} must satisfy 1 <= k <= n + 1 = {}", cfg.k, cfg.n + 1));
    }
    if !(cfg.half_width > 0.0 && cfg.half_width < 1.0) {
        return fail("half_width", format!("{} must lie in (0, 1)", cfg.half_width));
    }
    if cfg.epsilons.is_empty() || cfg.epsilons.iter().any(|e| !(*e > 0.0 && *e <= 0.25)) {
        return fail("epsilons", "every value must lie in (0, 1/4]".into());
    }
    if cfg.scales.is_empty() || cfg.scales.iter().any(|s| !(*s > 0.0)) {
        return fail("scales", "every value must be positive".into());
    }
    if cfg.exponents.is_empty() || cfg.exponents.iter().any(|p| !(*p > 0.0)) {
        return fail("exponents", "every value must be positive".into());
    }
    if !(cfg.c > 0.0 && cfg.c <= 1.0) {
        return fail("c", format!("{} must lie in (0, 1]", cfg.c));
    }
    if !(cfg.c_small > 0.0 && cfg.c_small <= 0.5) {
        return fail("c_small", format!("{} must lie in (0, 1/2]", cfg.c_small));
    }
    for (key, v) in [("loss_exponent", cfg.loss_exponent), ("c0", cfg.c0), ("loss_epsilon", cfg.loss_epsilon)] {
        if !(v > 0.0) {
            return fail(key, format!("{v} must be positive"));
        }
    }
    if cfg.periods < 2 {
        return fail("periods", format!("{} must be at least 2", cfg.periods));
    }
    if cfg.resolution < 2 {
        return fail("resolution", format!("{} must be at least 2", cfg.resolution));
    }
    if cfg.sample_resolution == 0 || cfg.samples == 0 {
        let key = if cfg.samples == 0 { "samples" } else { "sample_resolution" };
        return fail(key, "must be positive".into());
    }
    Ok(())
}
