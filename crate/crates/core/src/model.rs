//! Reaction-network data model and the line-oriented `.crn` text format.
//!
//! ```text
//! species A B C
//! fast: A <-> B ; 1.0 1.0
//! slow: B <-> C ; 2 1      # comment
//! slow: 0 <-> 2A ; 0.5 0.1
//! ```

use std::collections::HashSet;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("model: line {line}: syntax error: {message}")]
    Syntax { line: usize, message: String },
    #[error("model: line {line}: unknown species `{name}`")]
    UnknownSpecies { line: usize, name: String },
    #[error("model: line {line}: negative rate {value}")]
    NegativeRate { line: usize, value: f64 },
    #[error("model: line {line}: weak reversibility violated (k+ = {k_plus}, k- = {k_minus})")]
    WeakReversibility {
        line: usize,
        k_plus: f64,
        k_minus: f64,
    },
    #[error("model: reaction index {index} out of range ({count} reactions)")]
    ReactionIndex { index: usize, count: usize },
    #[error("model: invalid network: {0}")]
    Invalid(String),
}

/// Time scale of a reaction. Fast rates are divided by ε at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Timescale {
    Slow,
    Fast,
}

impl fmt::Display for Timescale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Timescale::Slow => f.write_str("slow"),
            Timescale::Fast => f.write_str("fast"),
        }
    }
}

/// One reversible reaction `Σ γ⁺_i X_i <-> Σ γ⁻_i X_i` with rates `k⁺`, `k⁻`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reaction {
    #[serde(rename = "gp")]
    pub gamma_plus: Vec<u32>,
    #[serde(rename = "gm")]
    pub gamma_minus: Vec<u32>,
    #[serde(rename = "kp")]
    pub k_plus: f64,
    #[serde(rename = "km")]
    pub k_minus: f64,
    #[serde(rename = "scale")]
    pub timescale: Timescale,
}

impl Reaction {
    /// Net change `γ⁻ − γ⁺`.
    pub fn reaction_vector(&self) -> Vec<i64> {
        self.gamma_minus
            .iter()
            .zip(&self.gamma_plus)
            .map(|(&m, &p)| m as i64 - p as i64)
            .collect()
    }

    /// The same reaction read right-to-left.
    pub fn reversed(&self) -> Reaction {
        Reaction {
            gamma_plus: self.gamma_minus.clone(),
            gamma_minus: self.gamma_plus.clone(),
            k_plus: self.k_minus,
            k_minus: self.k_plus,
            timescale: self.timescale,
        }
    }

    pub fn is_fast(&self) -> bool {
        self.timescale == Timescale::Fast
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkRepr", into = "NetworkRepr")]
pub struct Network {
    species: Vec<String>,
    reactions: Vec<Reaction>,
    epsilon: f64,
}

#[derive(Serialize, Deserialize)]
struct NetworkRepr {
    species: Vec<String>,
    reactions: Vec<Reaction>,
    #[serde(default = "default_epsilon")]
    epsilon: f64,
}

fn default_epsilon() -> f64 {
    1.0
}

impl TryFrom<NetworkRepr> for Network {
    type Error = ModelError;

    fn try_from(repr: NetworkRepr) -> Result<Self, Self::Error> {
        Network::with_epsilon(repr.species, repr.reactions, repr.epsilon)
    }
}

impl From<Network> for NetworkRepr {
    fn from(net: Network) -> Self {
        NetworkRepr {
            species: net.species,
            reactions: net.reactions,
            epsilon: net.epsilon,
        }
    }
}

impl Network {
    /// Builds a network, rejecting anything [`validate`] reports as an error.
    pub fn new(species: Vec<String>, reactions: Vec<Reaction>) -> Result<Self, ModelError> {
        Self::with_epsilon(species, reactions, 1.0)
    }

    pub fn with_epsilon(
        species: Vec<String>,
        reactions: Vec<Reaction>,
        epsilon: f64,
    ) -> Result<Self, ModelError> {
        let net = Network {
            species,
            reactions,
            epsilon,
        };
        let errors: Vec<_> = validate(&net)
            .into_iter()
            .filter(|v| v.severity == Severity::Error)
            .map(|v| v.message)
            .collect();
        if errors.is_empty() {
            Ok(net)
        } else {
            Err(ModelError::Invalid(errors.join("; ")))
        }
    }

    pub fn species(&self) -> &[String] {
        &self.species
    }

    pub fn reactions(&self) -> &[Reaction] {
        &self.reactions
    }

    pub fn reaction(&self, r: usize) -> Result<&Reaction, ModelError> {
        self.reactions.get(r).ok_or(ModelError::ReactionIndex {
            index: r,
            count: self.reactions.len(),
        })
    }

    /// Default ε carried by the file; evaluations always take ε explicitly.
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn species_count(&self) -> usize {
        self.species.len()
    }

    pub fn reaction_count(&self) -> usize {
        self.reactions.len()
    }

    pub fn species_index(&self, name: &str) -> Option<usize> {
        self.species.iter().position(|s| s == name)
    }

    pub fn fast_reactions(&self) -> Vec<usize> {
        self.indices_with(Timescale::Fast)
    }

    pub fn slow_reactions(&self) -> Vec<usize> {
        self.indices_with(Timescale::Slow)
    }

    fn indices_with(&self, scale: Timescale) -> Vec<usize> {
        self.reactions
            .iter()
            .enumerate()
            .filter(|(_, r)| r.timescale == scale)
            .map(|(i, _)| i)
            .collect()
    }

    /// `γ_r = γ⁻_r − γ⁺_r`.
    pub fn reaction_vector(&self, r: usize) -> Result<Vec<i64>, ModelError> {
        Ok(self.reaction(r)?.reaction_vector())
    }

    /// Rate multiplier of reaction `r` at scale parameter `eps`.
    pub fn rate_scale(&self, r: usize, eps: f64) -> f64 {
        match self.reactions[r].timescale {
            Timescale::Slow => 1.0,
            Timescale::Fast => 1.0 / eps,
        }
    }

    /// Serializes back into the text format accepted by [`parse_network`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "species {}", self.species.join(" "));
        for r in &self.reactions {
            let _ = writeln!(
                out,
                "{}: {} <-> {} ; {:?} {:?}",
                r.timescale,
                self.side_text(&r.gamma_plus),
                self.side_text(&r.gamma_minus),
                r.k_plus,
                r.k_minus
            );
        }
        out
    }

    fn side_text(&self, coeffs: &[u32]) -> String {
        let terms: Vec<String> = coeffs
            .iter()
            .zip(&self.species)
            .filter(|(&c, _)| c > 0)
            .map(|(&c, s)| if c == 1 { s.clone() } else { format!("{c}{s}") })
            .collect();
        if terms.is_empty() {
            "0".to_string()
        } else {
            terms.join(" + ")
        }
    }
}

/// `(index, γ_r)` for reactions with timescale `scale`.
pub fn reaction_vectors_of(net: &Network, scale: Timescale) -> Vec<(usize, Vec<i64>)> {
    net.reactions
        .iter()
        .enumerate()
        .filter(|(_, r)| r.timescale == scale)
        .map(|(i, r)| (i, r.reaction_vector()))
        .collect()
}

pub fn reaction_vector(net: &Network, r: usize) -> Result<Vec<i64>, ModelError> {
    net.reaction_vector(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub severity: Severity,
    pub message: String,
}

impl Violation {
    fn error(message: impl Into<String>) -> Self {
        Violation {
            severity: Severity::Error,
            message: message.into(),
        }
    }

    fn warning(message: impl Into<String>) -> Self {
        Violation {
            severity: Severity::Warning,
            message: message.into(),
        }
    }
}

/// Lists invariant violations; an empty list means the network is valid for
/// every analysis. Warnings flag networks unusable for fast-slow analyses.
pub fn validate(net: &Network) -> Vec<Violation> {
    let mut report = Vec::new();
    let n = net.species.len();
    if n == 0 {
        report.push(Violation::error("no species declared"));
    }
    let mut seen = HashSet::new();
    for name in &net.species {
        if !is_species_name(name) {
            report.push(Violation::error(format!("invalid species name `{name}`")));
        }
        if !seen.insert(name.as_str()) {
            report.push(Violation::error(format!("duplicate species name `{name}`")));
        }
    }
    if !(net.epsilon.is_finite() && net.epsilon > 0.0) {
        report.push(Violation::error(format!(
            "epsilon must be positive, got {}",
            net.epsilon
        )));
    }
    for (i, r) in net.reactions.iter().enumerate() {
        if r.gamma_plus.len() != n || r.gamma_minus.len() != n {
            report.push(Violation::error(format!(
                "reaction {i}: stoichiometry length differs from species count {n}"
            )));
            continue;
        }
        if r.gamma_plus.iter().chain(&r.gamma_minus).all(|&c| c == 0) {
            report.push(Violation::error(format!("reaction {i}: both sides empty")));
        }
        if r.gamma_plus == r.gamma_minus {
            report.push(Violation::warning(format!(
                "reaction {i}: zero reaction vector"
            )));
        }
        for (label, k) in [("k+", r.k_plus), ("k-", r.k_minus)] {
            if !k.is_finite() || k < 0.0 {
                report.push(Violation::error(format!(
                    "reaction {i}: {label} must be finite and nonnegative, got {k}"
                )));
            }
        }
        if (r.k_plus == 0.0) != (r.k_minus == 0.0) {
            report.push(Violation::error(format!(
                "reaction {i}: weak reversibility violated (k+ = {}, k- = {})",
                r.k_plus, r.k_minus
            )));
        }
    }
    if net.reactions.iter().all(|r| r.is_fast()) {
        report.push(Violation::warning("no slow reactions"));
    }
    if !net.reactions.iter().any(|r| r.is_fast()) {
        report.push(Violation::warning("no fast reactions"));
    }
    report
}

fn is_species_name(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_alphanumeric() || c == '_' || c == '\'')
}

/// Parses the `.crn` text format. Reactions keep file order.
pub fn parse_network(text: &str) -> Result<Network, ModelError> {
    let mut species: Option<Vec<String>> = None;
    let mut reactions = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let syntax = |message: &str| ModelError::Syntax {
            line,
            message: message.to_string(),
        };

        let Some(names) = &species else {
            let mut words = content.split_whitespace();
            if words.next() != Some("species") {
                return Err(syntax("first statement must be `species <name> ...`"));
            }
            let names: Vec<String> = words.map(str::to_string).collect();
            if names.is_empty() {
                return Err(syntax("species list is empty"));
            }
            let mut seen = HashSet::new();
            for name in &names {
                if !is_species_name(name) {
                    return Err(syntax(&format!("invalid species name `{name}`")));
                }
                if !seen.insert(name.as_str()) {
                    return Err(syntax(&format!("duplicate species `{name}`")));
                }
            }
            species = Some(names);
            continue;
        };

        let (tag, rest) = content
            .split_once(':')
            .ok_or_else(|| syntax("expected `fast:` or `slow:`"))?;
        let timescale = match tag.trim() {
            "fast" => Timescale::Fast,
            "slow" => Timescale::Slow,
            other => return Err(syntax(&format!("unknown tag `{other}`"))),
        };
        let (scheme, rates) = rest
            .split_once(';')
            .ok_or_else(|| syntax("expected `; <k_plus> <k_minus>`"))?;
        let (lhs, rhs) = scheme
            .split_once("<->")
            .ok_or_else(|| syntax("expected `<->`"))?;
        let gamma_plus = parse_side(lhs, names, line)?;
        let gamma_minus = parse_side(rhs, names, line)?;
        if gamma_plus.iter().chain(&gamma_minus).all(|&c| c == 0) {
            return Err(syntax("both sides are empty"));
        }

        let ks: Vec<&str> = rates.split_whitespace().collect();
        if ks.len() != 2 {
            return Err(syntax("expected exactly two rates"));
        }
        let mut parsed = [0.0; 2];
        for (slot, k) in parsed.iter_mut().zip(&ks) {
            let value: f64 = k
                .parse()
                .map_err(|_| syntax(&format!("invalid rate `{k}`")))?;
            if !value.is_finite() {
                return Err(syntax(&format!("non-finite rate `{k}`")));
            }
            if value < 0.0 {
                return Err(ModelError::NegativeRate { line, value });
            }
            *slot = value;
        }
        let [k_plus, k_minus] = parsed;
        if (k_plus == 0.0) != (k_minus == 0.0) {
            return Err(ModelError::WeakReversibility {
                line,
                k_plus,
                k_minus,
            });
        }
        reactions.push(Reaction {
            gamma_plus,
            gamma_minus,
            k_plus,
            k_minus,
            timescale,
        });
    }

    let species = species.ok_or(ModelError::Syntax {
        line: 1,
        message: "missing `species` line".to_string(),
    })?;
    Network::new(species, reactions)
}

fn parse_side(side: &str, species: &[String], line: usize) -> Result<Vec<u32>, ModelError> {
    let mut coeffs = vec![0u32; species.len()];
    let side = side.trim();
    if side == "0" {
        return Ok(coeffs);
    }
    for term in side.split('+') {
        let term = term.trim();
        if term.is_empty() {
            return Err(ModelError::Syntax {
                line,
                message: "empty term".to_string(),
            });
        }
        let digits = term.chars().take_while(|c| c.is_ascii_digit()).count();
        let (num, name) = term.split_at(digits);
        let name = name.trim();
        let coeff: u32 = if num.is_empty() {
            1
        } else {
            num.parse().map_err(|_| ModelError::Syntax {
                line,
                message: format!("invalid coefficient in `{term}`"),
            })?
        };
        if coeff == 0 || name.is_empty() {
            return Err(ModelError::Syntax {
                line,
                message: format!("invalid term `{term}`"),
            });
        }
        let idx =
            species
                .iter()
                .position(|s| s == name)
                .ok_or_else(|| ModelError::UnknownSpecies {
                    line,
                    name: name.to_string(),
                })?;
        coeffs[idx] += coeff;
    }
    Ok(coeffs)
}
