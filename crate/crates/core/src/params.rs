//! Model parameter vector, validation and the plain-text key-value format.
//!
//! Units: concentrations in mmol m⁻³ (phosphorus units, iron coupled through
//! `r_fe`), time in days, depth in metres.
//!
//! The iron-cycle constants (`beta`, `r_fe`, `tau`, `k0`, `phi`) and the
//! particle-profile shape (`c_p0`, `c_p_exponent`) are modeler-supplied
//! placeholders. Only `k_lig = e^11` and `l_t = 1` follow the original
//! model's published choice.

use std::fmt::{self, Write as _};

use thiserror::Error;

/// The seven N-DOP parameters plus the iron-cycle constants.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet {
    /// DOP remineralization rate (1/day).
    pub lambda: f64,
    /// Maximum uptake (mmol m⁻³ day⁻¹).
    pub alpha: f64,
    /// Phosphate half saturation (mmol m⁻³).
    pub k_p: f64,
    /// Iron half saturation (iron units).
    pub k_f: f64,
    /// Light half saturation (W m⁻²).
    pub k_i: f64,
    /// Seawater attenuation (1/m).
    pub k_w: f64,
    /// Export power-law exponent.
    pub b: f64,
    /// Fraction of uptake routed to DOP.
    pub nu: f64,
    /// Iron solubility.
    pub beta: f64,
    /// Fe:P conversion ratio.
    pub r_fe: f64,
    pub tau: f64,
    /// Initial scavenging rate (1/day).
    pub k0: f64,
    pub phi: f64,
    /// Ligand equilibrium constant.
    pub k_lig: f64,
    /// Total ligand.
    pub l_t: f64,
    /// Lower threshold of the particle profile.
    pub c_p_floor: f64,
    /// Particle concentration at the base of the euphotic zone.
    pub c_p0: f64,
    /// Decay exponent of the particle profile below the euphotic zone.
    pub c_p_exponent: f64,
}

impl Default for ParameterSet {
    fn default() -> Self {
        Self {
            lambda: 0.02,
            alpha: 0.05,
            k_p: 0.5,
            k_f: 0.1,
            k_i: 30.0,
            k_w: 0.02,
            b: 0.858,
            nu: 0.67,
            beta: 0.01,
            r_fe: 0.5,
            tau: 1.0,
            k0: 0.2,
            phi: 0.58,
            k_lig: 11f64.exp(),
            l_t: 1.0,
            c_p_floor: 0.05,
            c_p0: 1.0,
            c_p_exponent: 0.858,
        }
    }
}

/// One of the seven N-DOP parameters that identification can vary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NdopParam {
    Lambda,
    Alpha,
    KP,
    KI,
    KW,
    B,
    Nu,
}

impl NdopParam {
    pub const ALL: [NdopParam; 7] = [
        NdopParam::Lambda,
        NdopParam::Alpha,
        NdopParam::KP,
        NdopParam::KI,
        NdopParam::KW,
        NdopParam::B,
        NdopParam::Nu,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NdopParam::Lambda => "lambda",
            NdopParam::Alpha => "alpha",
            NdopParam::KP => "k_p",
            NdopParam::KI => "k_i",
            NdopParam::KW => "k_w",
            NdopParam::B => "b",
            NdopParam::Nu => "nu",
        }
    }

    pub fn get(self, p: &ParameterSet) -> f64 {
        match self {
            NdopParam::Lambda => p.lambda,
            NdopParam::Alpha => p.alpha,
            NdopParam::KP => p.k_p,
            NdopParam::KI => p.k_i,
            NdopParam::KW => p.k_w,
            NdopParam::B => p.b,
            NdopParam::Nu => p.nu,
        }
    }

    pub fn set(self, p: &mut ParameterSet, value: f64) {
        match self {
            NdopParam::Lambda => p.lambda = value,
            NdopParam::Alpha => p.alpha = value,
            NdopParam::KP => p.k_p = value,
            NdopParam::KI => p.k_i = value,
            NdopParam::KW => p.k_w = value,
            NdopParam::B => p.b = value,
            NdopParam::Nu => p.nu = value,
        }
    }
}

/// Which parameters an identification run optimizes.
#[derive(Clone, Debug, PartialEq)]
pub enum IdentificationSubset {
    /// All seven N-DOP parameters.
    Full7,
    /// `lambda, alpha, k_p, b, nu` with the light parameters pinned.
    Reduced5 { k_i: f64, k_w: f64 },
}

impl IdentificationSubset {
    /// Reduced set with the light parameters taken from `p`.
    pub fn reduced_from(p: &ParameterSet) -> Self {
        IdentificationSubset::Reduced5 {
            k_i: p.k_i,
            k_w: p.k_w,
        }
    }

    pub fn free_parameters(&self) -> Vec<NdopParam> {
        match self {
            IdentificationSubset::Full7 => NdopParam::ALL.to_vec(),
            IdentificationSubset::Reduced5 { .. } => vec![
                NdopParam::Lambda,
                NdopParam::Alpha,
                NdopParam::KP,
                NdopParam::B,
                NdopParam::Nu,
            ],
        }
    }

    /// Copy of `p` with the fixed values of this subset applied.
    pub fn apply_fixed(&self, p: &ParameterSet) -> ParameterSet {
        let mut out = p.clone();
        if let IdentificationSubset::Reduced5 { k_i, k_w } = *self {
            out.k_i = k_i;
            out.k_w = k_w;
        }
        out
    }

    pub fn label(&self) -> &'static str {
        match self {
            IdentificationSubset::Full7 => "full7",
            IdentificationSubset::Reduced5 { .. } => "reduced5",
        }
    }
}

/// A broken invariant of [`ParameterSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Legal but identifiability-degenerate settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Degeneracy {
    /// `alpha = 0` makes `k_p`, `k_i`, `k_w` arbitrary.
    ZeroAlpha,
    /// `nu = 1` switches export off, so `b` is arbitrary.
    NoExport,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Validation {
    pub violations: Vec<Violation>,
    pub degeneracies: Vec<Degeneracy>,
}

impl Validation {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check every invariant; never fails, returns the full list.
pub fn validate(p: &ParameterSet) -> Validation {
    let mut v = Validation::default();
    let mut bad = |field: &'static str, ok: bool, message: &str| {
        if !ok {
            v.violations.push(Violation {
                field,
                message: message.to_string(),
            });
        }
    };
    let all = [
        ("lambda", p.lambda),
        ("alpha", p.alpha),
        ("k_p", p.k_p),
        ("k_f", p.k_f),
        ("k_i", p.k_i),
        ("k_w", p.k_w),
        ("b", p.b),
        ("nu", p.nu),
        ("beta", p.beta),
        ("r_fe", p.r_fe),
        ("tau", p.tau),
        ("k0", p.k0),
        ("phi", p.phi),
        ("k_lig", p.k_lig),
        ("l_t", p.l_t),
        ("c_p_floor", p.c_p_floor),
        ("c_p0", p.c_p0),
        ("c_p_exponent", p.c_p_exponent),
    ];
    for (field, value) in all {
        bad(field, value.is_finite(), "must be finite");
    }
    bad(
        "lambda",
        p.lambda > 0.0 && p.lambda < 1.0,
        "must lie in (0, 1)",
    );
    // alpha = 0 is flagged as degenerate below, not rejected
    bad("alpha", p.alpha >= 0.0, "must be positive");
    bad("k_p", p.k_p > 0.0, "must be positive");
    bad("k_f", p.k_f > 0.0, "must be positive");
    bad("k_i", p.k_i > 0.0, "must be positive");
    bad("k_w", p.k_w > 0.0, "must be positive");
    bad("b", p.b >= 0.0, "must be nonnegative");
    bad("nu", p.nu > 0.0 && p.nu <= 1.0, "nu out of (0,1]");
    bad("k_lig", p.k_lig > 0.0, "must be positive");
    bad("l_t", p.l_t > 0.0, "must be positive");
    bad("c_p_floor", p.c_p_floor > 0.0, "must be positive");
    bad("beta", p.beta >= 0.0, "must be nonnegative");
    bad("r_fe", p.r_fe >= 0.0, "must be nonnegative");
    bad("tau", p.tau >= 0.0, "must be nonnegative");
    bad("k0", p.k0 >= 0.0, "must be nonnegative");
    bad("c_p0", p.c_p0 >= 0.0, "must be nonnegative");
    bad("c_p_exponent", p.c_p_exponent >= 0.0, "must be nonnegative");
    if p.k_lig > 0.0 {
        bad(
            "l_t",
            p.l_t - 1.0 / p.k_lig >= 0.0,
            "l_t - 1/k_lig must be nonnegative",
        );
    }
    if p.alpha == 0.0 {
        v.degeneracies.push(Degeneracy::ZeroAlpha);
    }
    if p.nu == 1.0 {
        v.degeneracies.push(Degeneracy::NoExport);
    }
    v
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { key: String, line: usize },
    #[error("line {line}: cannot parse value of `{key}`: `{value}`")]
    BadNumber {
        key: String,
        value: String,
        line: usize,
    },
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { text: String, line: usize },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { key: String, line: usize },
    #[error("line {line}: {message}")]
    Invalid {
        key: String,
        message: String,
        line: usize,
    },
    #[error("line {line}: unknown section `[{section}]`")]
    UnknownSection { section: String, line: usize },
}

/// Field names in canonical order.
pub const FIELD_NAMES: [&str; 18] = [
    "lambda",
    "alpha",
    "k_p",
    "k_f",
    "k_i",
    "k_w",
    "b",
    "nu",
    "beta",
    "r_fe",
    "tau",
    "k0",
    "phi",
    "k_lig",
    "l_t",
    "c_p_floor",
    "c_p0",
    "c_p_exponent",
];

fn field_mut<'a>(p: &'a mut ParameterSet, key: &str) -> Option<&'a mut f64> {
    Some(match key {
        "lambda" => &mut p.lambda,
        "alpha" => &mut p.alpha,
        "k_p" => &mut p.k_p,
        "k_f" => &mut p.k_f,
        "k_i" => &mut p.k_i,
        "k_w" => &mut p.k_w,
        "b" => &mut p.b,
        "nu" => &mut p.nu,
        "beta" => &mut p.beta,
        "r_fe" => &mut p.r_fe,
        "tau" => &mut p.tau,
        "k0" => &mut p.k0,
        "phi" => &mut p.phi,
        "k_lig" => &mut p.k_lig,
        "l_t" => &mut p.l_t,
        "c_p_floor" => &mut p.c_p_floor,
        "c_p0" => &mut p.c_p0,
        "c_p_exponent" => &mut p.c_p_exponent,
        _ => return None,
    })
}

fn field(p: &ParameterSet, key: &str) -> f64 {
    let mut q = p.clone();
    *field_mut(&mut q, key).expect("canonical field")
}

/// A `key = value` entry with its 1-based source line.
#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

/// Split a key-value document into entries. Blank lines and `#`/`;`
/// comments are skipped. `line_offset` is added to reported line numbers.
pub fn parse_entries(text: &str, line_offset: usize) -> Result<Vec<Entry>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1 + line_offset;
        let body = strip_comment(raw).trim();
        if body.is_empty() {
            continue;
        }
        let Some((k, v)) = body.split_once('=') else {
            return Err(ConfigError::Syntax {
                text: body.to_string(),
                line,
            });
        };
        let key = k.trim();
        if key.is_empty() {
            return Err(ConfigError::Syntax {
                text: body.to_string(),
                line,
            });
        }
        out.push(Entry {
            key: key.to_string(),
            value: v.trim().to_string(),
            line,
        });
    }
    Ok(out)
}

pub(crate) fn strip_comment(s: &str) -> &str {
    match s.find(['#', ';']) {
        Some(i) => &s[..i],
        None => s,
    }
}

/// Apply entries on top of `base`, then validate.
pub fn apply_entries(base: ParameterSet, entries: &[Entry]) -> Result<ParameterSet, ConfigError> {
    let mut p = base;
    let mut lines = std::collections::HashMap::new();
    for e in entries {
        if let Some(prev) = lines.insert(e.key.clone(), e.line) {
            let _ = prev;
            return Err(ConfigError::Duplicate {
                key: e.key.clone(),
                line: e.line,
            });
        }
        let Some(slot) = field_mut(&mut p, &e.key) else {
            return Err(ConfigError::UnknownKey {
                key: e.key.clone(),
                line: e.line,
            });
        };
        *slot = e.value.parse::<f64>().map_err(|_| ConfigError::BadNumber {
            key: e.key.clone(),
            value: e.value.clone(),
            line: e.line,
        })?;
    }
    let v = validate(&p);
    if let Some(first) = v.violations.first() {
        let line = lines.get(first.field).copied().unwrap_or(0);
        return Err(ConfigError::Invalid {
            key: first.field.to_string(),
            message: first.to_string(),
            line,
        });
    }
    Ok(p)
}

/// Parse a plain key-value parameter document; missing keys keep defaults.
pub fn parse_config(text: &str) -> Result<ParameterSet, ConfigError> {
    apply_entries(ParameterSet::default(), &parse_entries(text, 0)?)
}

/// Format with 17 significant digits, the precision used for every
/// emitted number.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Canonical serialized form: one `key = value` line per field.
pub fn serialize(p: &ParameterSet) -> String {
    let mut s = String::new();
    for key in FIELD_NAMES {
        let _ = writeln!(s, "{key} = {}", fmt_f64(field(p, key)));
    }
    s
}
