// SPDX-License-Identifier: Apache-2.0

//! Hyperparameter domains and the transforms between native values and the
//! unit hypercube every optimizer and the importance analysis work in.
//!
//! Continuous and integer dimensions map linearly (or logarithmically, for
//! `scale: log`) onto `[0, 1]`. Categorical dimensions map label `j` of `k`
//! to the bin midpoint `(j + 0.5) / k`, so decoding an encoded label is the
//! identity and no label sits on a bin boundary.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::ops::Deref;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpaceError {
    #[error("value {value} is outside [{low}, {high}] for `{name}`")]
    OutOfBounds {
        name: String,
        value: f64,
        low: f64,
        high: f64,
    },
    #[error("`{label}` is not a choice of `{name}`")]
    UnknownChoice { name: String, label: String },
    #[error("`{name}` expects a {expected} value")]
    TypeMismatch { name: String, expected: &'static str },
    #[error("invalid bounds for `{name}`: {reason}")]
    InvalidBounds { name: String, reason: String },
    #[error("invalid choices for `{name}`: {reason}")]
    InvalidChoices { name: String, reason: String },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("duplicate parameter name `{0}`")]
    DuplicateName(String),
    #[error("search space has no parameters")]
    EmptySpace,
    #[error("parameter `{0}` is missing from the assignment")]
    MissingParam(String),
    #[error("parameter `{name}` cannot be merged: {reason}")]
    Incompatible { name: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Continuous,
    Integer,
    Categorical,
}

/// A native hyperparameter value: a number, or a categorical label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Num(f64),
    Label(String),
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Num(v) => Some(*v),
            ParamValue::Label(_) => None,
        }
    }

    pub fn as_label(&self) -> Option<&str> {
        match self {
            ParamValue::Num(_) => None,
            ParamValue::Label(s) => Some(s),
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Num(v) => write!(f, "{v}"),
            ParamValue::Label(s) => f.write_str(s),
        }
    }
}

impl From<f64> for ParamValue {
    fn from(v: f64) -> Self {
        ParamValue::Num(v)
    }
}

impl From<&str> for ParamValue {
    fn from(s: &str) -> Self {
        ParamValue::Label(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    Continuous { low: f64, high: f64, scale: Scale },
    Integer { low: f64, high: f64, scale: Scale },
    Categorical { choices: Vec<String> },
}

/// One named dimension of a search space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamSpecRepr", into = "ParamSpecRepr")]
pub struct ParamSpec {
    name: String,
    domain: Domain,
}

fn check_bounds(name: &str, low: f64, high: f64, scale: Scale) -> Result<(), SpaceError> {
    let invalid = |reason: &str| SpaceError::InvalidBounds {
        name: name.to_string(),
        reason: reason.to_string(),
    };
    if !low.is_finite() || !high.is_finite() {
        return Err(invalid("bounds must be finite"));
    }
    if low >= high {
        return Err(invalid("low must be strictly below high"));
    }
    if scale == Scale::Log && low <= 0.0 {
        return Err(invalid("log scale requires low > 0"));
    }
    Ok(())
}

impl ParamSpec {
    pub fn continuous(name: &str, low: f64, high: f64, scale: Scale) -> Result<Self, SpaceError> {
        check_bounds(name, low, high, scale)?;
        Ok(ParamSpec {
            name: name.to_string(),
            domain: Domain::Continuous { low, high, scale },
        })
    }

    pub fn integer(name: &str, low: f64, high: f64, scale: Scale) -> Result<Self, SpaceError> {
        check_bounds(name, low, high, scale)?;
        if libm::floor(low) != low || libm::floor(high) != high {
            return Err(SpaceError::InvalidBounds {
                name: name.to_string(),
                reason: "integer bounds must be whole numbers".to_string(),
            });
        }
        Ok(ParamSpec {
            name: name.to_string(),
            domain: Domain::Integer { low, high, scale },
        })
    }

    pub fn categorical<S: AsRef<str>>(name: &str, choices: &[S]) -> Result<Self, SpaceError> {
        let choices: Vec<String> = choices.iter().map(|c| c.as_ref().to_string()).collect();
        if choices.len() < 2 {
            return Err(SpaceError::InvalidChoices {
                name: name.to_string(),
                reason: "at least two choices are required".to_string(),
            });
        }
        let distinct: BTreeSet<&str> = choices.iter().map(String::as_str).collect();
        if distinct.len() != choices.len() {
            return Err(SpaceError::InvalidChoices {
                name: name.to_string(),
                reason: "choices must be distinct".to_string(),
            });
        }
        Ok(ParamSpec {
            name: name.to_string(),
            domain: Domain::Categorical { choices },
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn kind(&self) -> Kind {
        match self.domain {
            Domain::Continuous { .. } => Kind::Continuous,
            Domain::Integer { .. } => Kind::Integer,
            Domain::Categorical { .. } => Kind::Categorical,
        }
    }

    /// `(low, high, scale)` for numeric dimensions.
    pub fn bounds(&self) -> Option<(f64, f64, Scale)> {
        match self.domain {
            Domain::Continuous { low, high, scale } | Domain::Integer { low, high, scale } => {
                Some((low, high, scale))
            }
            Domain::Categorical { .. } => None,
        }
    }

    pub fn scale(&self) -> Option<Scale> {
        self.bounds().map(|(_, _, s)| s)
    }

    pub fn choices(&self) -> Option<&[String]> {
        match &self.domain {
            Domain::Categorical { choices } => Some(choices),
            _ => None,
        }
    }

    pub fn is_log(&self) -> bool {
        self.scale() == Some(Scale::Log)
    }

    /// Checks that `value` lies inside this dimension's bounds or choices.
    pub fn check(&self, value: &ParamValue) -> Result<(), SpaceError> {
        self.encode(value).map(|_| ())
    }

    /// Maps a native value into `[0, 1]`.
    pub fn encode(&self, value: &ParamValue) -> Result<f64, SpaceError> {
        match &self.domain {
            Domain::Continuous { low, high, scale } | Domain::Integer { low, high, scale } => {
                let v = value.as_f64().ok_or_else(|| SpaceError::TypeMismatch {
                    name: self.name.clone(),
                    expected: "numeric",
                })?;
                if !(v >= *low && v <= *high) {
                    return Err(SpaceError::OutOfBounds {
                        name: self.name.clone(),
                        value: v,
                        low: *low,
                        high: *high,
                    });
                }
                let u = match scale {
                    Scale::Linear => (v - low) / (high - low),
                    Scale::Log => {
                        (libm::log(v) - libm::log(*low)) / (libm::log(*high) - libm::log(*low))
                    }
                };
                Ok(u.clamp(0.0, 1.0))
            }
            Domain::Categorical { choices } => {
                let label = value.as_label().ok_or_else(|| SpaceError::TypeMismatch {
                    name: self.name.clone(),
                    expected: "categorical",
                })?;
                let index = choices.iter().position(|c| c == label).ok_or_else(|| {
                    SpaceError::UnknownChoice {
                        name: self.name.clone(),
                        label: label.to_string(),
                    }
                })?;
                Ok((index as f64 + 0.5) / choices.len() as f64)
            }
        }
    }

    /// Maps a unit coordinate back to a native value. Coordinates outside
    /// `[0, 1]` are clamped; integers round to the nearest whole number.
    pub fn decode(&self, u: f64) -> ParamValue {
        let u = if u.is_nan() { 0.0 } else { u.clamp(0.0, 1.0) };
        match &self.domain {
            Domain::Continuous { low, high, scale } => {
                ParamValue::Num(native_from_unit(*low, *high, *scale, u))
            }
            Domain::Integer { low, high, scale } => {
                let v = libm::round(native_from_unit(*low, *high, *scale, u));
                ParamValue::Num(v.clamp(*low, *high))
            }
            Domain::Categorical { choices } => {
                ParamValue::Label(choices[self.category_index(u)].clone())
            }
        }
    }

    /// Bin index of a unit coordinate for a categorical dimension.
    pub fn category_index(&self, u: f64) -> usize {
        let k = self.choices().map_or(1, <[String]>::len);
        let index = libm::floor(u.clamp(0.0, 1.0) * k as f64) as usize;
        index.min(k - 1)
    }

    /// Number of categories, or `None` for numeric dimensions.
    pub fn cardinality(&self) -> Option<usize> {
        self.choices().map(<[String]>::len)
    }

    fn with_bounds(&self, low: f64, high: f64) -> Result<ParamSpec, SpaceError> {
        match self.domain {
            Domain::Continuous { scale, .. } => ParamSpec::continuous(&self.name, low, high, scale),
            Domain::Integer { scale, .. } => ParamSpec::integer(&self.name, low, high, scale),
            Domain::Categorical { .. } => Err(SpaceError::InvalidBounds {
                name: self.name.clone(),
                reason: "categorical parameters have no numeric bounds".to_string(),
            }),
        }
    }
}

fn native_from_unit(low: f64, high: f64, scale: Scale, u: f64) -> f64 {
    let v = match scale {
        Scale::Linear => low + u * (high - low),
        Scale::Log => {
            let (a, b) = (libm::log(low), libm::log(high));
            libm::exp(a + u * (b - a))
        }
    };
    v.clamp(low, high)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParamSpecRepr {
    name: String,
    kind: Kind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    low: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    high: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scale: Option<Scale>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    choices: Option<Vec<String>>,
}

impl TryFrom<ParamSpecRepr> for ParamSpec {
    type Error = SpaceError;

    fn try_from(r: ParamSpecRepr) -> Result<Self, Self::Error> {
        let missing = |field: &str| SpaceError::InvalidBounds {
            name: r.name.clone(),
            reason: format!("`{field}` is required"),
        };
        match r.kind {
            Kind::Continuous | Kind::Integer => {
                let low = r.low.ok_or_else(|| missing("low"))?;
                let high = r.high.ok_or_else(|| missing("high"))?;
                let scale = r.scale.unwrap_or_default();
                if r.kind == Kind::Continuous {
                    ParamSpec::continuous(&r.name, low, high, scale)
                } else {
                    ParamSpec::integer(&r.name, low, high, scale)
                }
            }
            Kind::Categorical => {
                let choices = r.choices.clone().ok_or_else(|| SpaceError::InvalidChoices {
                    name: r.name.clone(),
                    reason: "`choices` is required".to_string(),
                })?;
                ParamSpec::categorical(&r.name, &choices)
            }
        }
    }
}

impl From<ParamSpec> for ParamSpecRepr {
    fn from(p: ParamSpec) -> Self {
        let kind = p.kind();
        match p.domain {
            Domain::Continuous { low, high, scale } | Domain::Integer { low, high, scale } => {
                ParamSpecRepr {
                    name: p.name,
                    kind,
                    low: Some(low),
                    high: Some(high),
                    scale: Some(scale),
                    choices: None,
                }
            }
            Domain::Categorical { choices } => ParamSpecRepr {
                name: p.name,
                kind,
                low: None,
                high: None,
                scale: None,
                choices: Some(choices),
            },
        }
    }
}

/// An ordered, non-empty list of uniquely named dimensions. The order is the
/// axis order used by every downstream view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SearchSpaceRepr", into = "SearchSpaceRepr")]
pub struct SearchSpace {
    params: Vec<ParamSpec>,
}

#[derive(Serialize, Deserialize)]
struct SearchSpaceRepr {
    params: Vec<ParamSpec>,
}

impl TryFrom<SearchSpaceRepr> for SearchSpace {
    type Error = SpaceError;
    fn try_from(r: SearchSpaceRepr) -> Result<Self, SpaceError> {
        SearchSpace::new(r.params)
    }
}

impl From<SearchSpace> for SearchSpaceRepr {
    fn from(s: SearchSpace) -> Self {
        SearchSpaceRepr { params: s.params }
    }
}

impl SearchSpace {
    pub fn new(params: Vec<ParamSpec>) -> Result<Self, SpaceError> {
        if params.is_empty() {
            return Err(SpaceError::EmptySpace);
        }
        let mut seen = BTreeSet::new();
        for p in &params {
            if !seen.insert(p.name.as_str()) {
                return Err(SpaceError::DuplicateName(p.name.clone()));
            }
        }
        Ok(SearchSpace { params })
    }

    pub fn params(&self) -> &[ParamSpec] {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    /// Validates an assignment: exactly this space's params, all in bounds.
    pub fn validate(&self, assignment: &ParamAssignment) -> Result<(), SpaceError> {
        for p in &self.params {
            let v = assignment
                .get(&p.name)
                .ok_or_else(|| SpaceError::MissingParam(p.name.clone()))?;
            p.check(v)?;
        }
        if let Some(extra) = assignment.keys().find(|k| self.get(k).is_none()) {
            return Err(SpaceError::UnknownParam(extra.clone()));
        }
        Ok(())
    }

    /// Encodes an assignment into a point of the unit cube, in axis order.
    pub fn encode(&self, assignment: &ParamAssignment) -> Result<Vec<f64>, SpaceError> {
        self.params
            .iter()
            .map(|p| {
                let v = assignment
                    .get(&p.name)
                    .ok_or_else(|| SpaceError::MissingParam(p.name.clone()))?;
                p.encode(v)
            })
            .collect()
    }

    pub fn decode(&self, point: &[f64]) -> ParamAssignment {
        debug_assert_eq!(point.len(), self.params.len());
        self.params
            .iter()
            .zip(point)
            .map(|(p, &u)| (p.name.clone(), p.decode(u)))
            .collect()
    }

    /// Draws every dimension independently and uniformly in encoded space.
    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamAssignment {
        let point: Vec<f64> = self.params.iter().map(|_| rng.random::<f64>()).collect();
        self.decode(&point)
    }

    pub fn sample(&self, seed: u64) -> ParamAssignment {
        self.sample_with(&mut rng::seeded(seed))
    }

    /// Applies refinement edits, returning a new space plus the constants
    /// fixed by `drop_and_fix` edits. `self` is left untouched.
    pub fn refine(&self, edits: &[Edit]) -> Result<Refined, SpaceError> {
        let mut params = self.params.clone();
        let mut fixed = BTreeMap::new();
        for edit in edits {
            let name = edit.name();
            let index = params
                .iter()
                .position(|p| p.name == name)
                .ok_or_else(|| SpaceError::UnknownParam(name.to_string()))?;
            match edit {
                Edit::Narrow { low, high, .. } => {
                    let current = &params[index];
                    let next = current.with_bounds(*low, *high)?;
                    let (old_low, old_high, _) = current.bounds().expect("numeric");
                    if *low < old_low || *high > old_high {
                        return Err(SpaceError::InvalidBounds {
                            name: name.to_string(),
                            reason: format!(
                                "narrowed range [{low}, {high}] leaves [{old_low}, {old_high}]"
                            ),
                        });
                    }
                    params[index] = next;
                }
                Edit::Widen { low, high, .. } => {
                    let current = &params[index];
                    let next = current.with_bounds(*low, *high)?;
                    let (old_low, old_high, _) = current.bounds().expect("numeric");
                    if *low > old_low || *high < old_high {
                        return Err(SpaceError::InvalidBounds {
                            name: name.to_string(),
                            reason: format!(
                                "widened range [{low}, {high}] does not contain [{old_low}, {old_high}]"
                            ),
                        });
                    }
                    params[index] = next;
                }
                Edit::DropAndFix { value, .. } => {
                    params[index].check(value)?;
                    params.remove(index);
                    fixed.insert(name.to_string(), value.clone());
                }
            }
        }
        Ok(Refined {
            space: SearchSpace::new(params)?,
            fixed,
        })
    }

    /// Bounding space of several spaces: numeric bounds take the min of lows
    /// and the max of highs, categorical choices are unioned in first-seen
    /// order, and axis order follows first appearance.
    pub fn merge<'a, I>(spaces: I) -> Result<SearchSpace, SpaceError>
    where
        I: IntoIterator<Item = &'a SearchSpace>,
    {
        let mut merged: Vec<ParamSpec> = Vec::new();
        for space in spaces {
            for p in &space.params {
                let Some(existing) = merged.iter_mut().find(|m| m.name == p.name) else {
                    merged.push(p.clone());
                    continue;
                };
                let incompatible = |reason: &str| SpaceError::Incompatible {
                    name: p.name.clone(),
                    reason: reason.to_string(),
                };
                match (&mut existing.domain, &p.domain) {
                    (
                        Domain::Continuous { low, high, scale },
                        Domain::Continuous { low: l, high: h, scale: s },
                    )
                    | (
                        Domain::Integer { low, high, scale },
                        Domain::Integer { low: l, high: h, scale: s },
                    ) => {
                        if scale != s {
                            return Err(incompatible("scales differ"));
                        }
                        *low = low.min(*l);
                        *high = high.max(*h);
                    }
                    (Domain::Categorical { choices }, Domain::Categorical { choices: other }) => {
                        for c in other {
                            if !choices.contains(c) {
                                choices.push(c.clone());
                            }
                        }
                    }
                    _ => return Err(incompatible("kinds differ")),
                }
            }
        }
        SearchSpace::new(merged)
    }
}

/// Outcome of [`SearchSpace::refine`].
#[derive(Debug, Clone, PartialEq)]
pub struct Refined {
    pub space: SearchSpace,
    pub fixed: BTreeMap<String, ParamValue>,
}

/// A single search-space refinement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Edit {
    Narrow { name: String, low: f64, high: f64 },
    Widen { name: String, low: f64, high: f64 },
    DropAndFix { name: String, value: ParamValue },
}

impl Edit {
    pub fn name(&self) -> &str {
        match self {
            Edit::Narrow { name, .. } | Edit::Widen { name, .. } | Edit::DropAndFix { name, .. } => {
                name
            }
        }
    }
}

/// Param name to native value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamAssignment(BTreeMap<String, ParamValue>);

impl ParamAssignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: impl Into<ParamValue>) {
        self.0.insert(name.into(), value.into());
    }

    pub fn num(&self, name: &str) -> Option<f64> {
        self.0.get(name).and_then(ParamValue::as_f64)
    }

    pub fn into_inner(self) -> BTreeMap<String, ParamValue> {
        self.0
    }
}

impl Deref for ParamAssignment {
    type Target = BTreeMap<String, ParamValue>;
    fn deref(&self) -> &Self::Target {
        &self.0
    }
}

impl FromIterator<(String, ParamValue)> for ParamAssignment {
    fn from_iter<T: IntoIterator<Item = (String, ParamValue)>>(iter: T) -> Self {
        ParamAssignment(iter.into_iter().collect())
    }
}

impl From<BTreeMap<String, ParamValue>> for ParamAssignment {
    fn from(map: BTreeMap<String, ParamValue>) -> Self {
        ParamAssignment(map)
    }
}
