use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::GradeError;

pub const DEFAULT_FUZZY_THRESHOLD: f64 = 0.8;
pub const DEFAULT_EPSILON: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScoringFunction {
    Fuzzy,
    Exact,
    MustInclude,
    MustExclude,
    Json,
    Numerical,
}

impl ScoringFunction {
    pub const ALL: [ScoringFunction; 6] = [
        Self::Fuzzy,
        Self::Exact,
        Self::MustInclude,
        Self::MustExclude,
        Self::Json,
        Self::Numerical,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Fuzzy => "fuzzy_match",
            Self::Exact => "exact_match",
            Self::MustInclude => "must_include",
            Self::MustExclude => "must_exclude",
            Self::Json => "json_match",
            Self::Numerical => "numerical_match",
        }
    }
}

impl fmt::Display for ScoringFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScoringFunction {
    type Err = GradeError;

    /// Accepts `fuzzy`, `fuzzy_match`, `fuzzy-match`, ... in any case.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        let key = key.strip_suffix("_match").unwrap_or(&key);
        Ok(match key {
            "fuzzy" => Self::Fuzzy,
            "exact" => Self::Exact,
            "must_include" => Self::MustInclude,
            "must_exclude" => Self::MustExclude,
            "json" => Self::Json,
            "numerical" | "numeric" => Self::Numerical,
            _ => return Err(GradeError::UnknownFunction(s.to_string())),
        })
    }
}

/// One scoring function with its gold answer and parameters.
///
/// Wire form: `{"function": "...", "gold": ..., "params": {...}}`, where
/// params are `threshold` (fuzzy), `epsilon` (numerical, json) and
/// `substrings` (must_include / must_exclude; the gold may carry the list
/// instead). Params may also appear at the top level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub enum ScoringSpec {
    Exact { gold: String },
    Fuzzy { gold: String, threshold: f64 },
    MustInclude { required: Vec<String> },
    MustExclude { banned: Vec<String> },
    Json { gold: Map<String, Value>, epsilon: f64 },
    Numerical { gold: f64, epsilon: f64 },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct RawParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    substrings: Option<Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawSpec {
    function: String,
    #[serde(default)]
    gold: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    params: Option<RawParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    substrings: Option<Vec<String>>,
}

impl TryFrom<RawSpec> for ScoringSpec {
    type Error = GradeError;

    fn try_from(raw: RawSpec) -> Result<Self, GradeError> {
        let function: ScoringFunction = raw.function.parse()?;
        let nested = raw.params.unwrap_or_default();
        let threshold = raw.threshold.or(nested.threshold);
        let epsilon = raw.epsilon.or(nested.epsilon);
        let substrings = raw.substrings.or(nested.substrings);

        let spec = match function {
            ScoringFunction::Exact => Self::Exact { gold: gold_text(&raw.gold)? },
            ScoringFunction::Fuzzy => Self::Fuzzy {
                gold: gold_text(&raw.gold)?,
                threshold: threshold.unwrap_or(DEFAULT_FUZZY_THRESHOLD),
            },
            ScoringFunction::MustInclude => Self::MustInclude {
                required: substring_list(substrings, &raw.gold)?,
            },
            ScoringFunction::MustExclude => Self::MustExclude {
                banned: substring_list(substrings, &raw.gold)?,
            },
            ScoringFunction::Json => {
                let gold = match raw.gold {
                    Value::Object(map) => map,
                    // gold given as an encoded JSON string
                    Value::String(s) => match serde_json::from_str::<Value>(&s) {
                        Ok(Value::Object(map)) => map,
                        _ => return Err(GradeError::InvalidSpec("json gold must be an object".into())),
                    },
                    _ => return Err(GradeError::InvalidSpec("json gold must be an object".into())),
                };
                Self::Json {
                    gold,
                    epsilon: epsilon.unwrap_or(DEFAULT_EPSILON),
                }
            }
            ScoringFunction::Numerical => {
                let gold = match &raw.gold {
                    Value::Number(n) => n.as_f64(),
                    Value::String(s) => s.trim().replace(',', "").parse::<f64>().ok(),
                    _ => None,
                }
                .filter(|g| g.is_finite())
                .ok_or_else(|| GradeError::InvalidSpec("numerical gold must be a finite number".into()))?;
                Self::Numerical {
                    gold,
                    epsilon: epsilon.unwrap_or(DEFAULT_EPSILON),
                }
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<ScoringSpec> for RawSpec {
    fn from(spec: ScoringSpec) -> Self {
        let function = spec.function().name().to_string();
        let mut params = RawParams::default();
        let gold = match spec {
            ScoringSpec::Exact { gold } => Value::String(gold),
            ScoringSpec::Fuzzy { gold, threshold } => {
                params.threshold = Some(threshold);
                Value::String(gold)
            }
            ScoringSpec::MustInclude { required: list } | ScoringSpec::MustExclude { banned: list } => {
                Value::Array(list.into_iter().map(Value::String).collect())
            }
            ScoringSpec::Json { gold, epsilon } => {
                params.epsilon = Some(epsilon);
                Value::Object(gold)
            }
            ScoringSpec::Numerical { gold, epsilon } => {
                params.epsilon = Some(epsilon);
                serde_json::Number::from_f64(gold).map(Value::Number).unwrap_or(Value::Null)
            }
        };
        let has_params = params.threshold.is_some() || params.epsilon.is_some();
        RawSpec {
            function,
            gold,
            params: has_params.then_some(params),
            threshold: None,
            epsilon: None,
            substrings: None,
        }
    }
}

fn gold_text(gold: &Value) -> Result<String, GradeError> {
    match gold {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        _ => Err(GradeError::InvalidSpec("gold must be a string".into())),
    }
}

fn substring_list(params: Option<Vec<String>>, gold: &Value) -> Result<Vec<String>, GradeError> {
    if let Some(list) = params {
        return Ok(list);
    }
    match gold {
        Value::Array(items) => items
            .iter()
            .map(|v| match v {
                Value::String(s) => Ok(s.clone()),
                _ => Err(GradeError::InvalidSpec("substring list must contain strings".into())),
            })
            .collect(),
        Value::String(s) => Ok(vec![s.clone()]),
        Value::Null => Ok(Vec::new()),
        _ => Err(GradeError::InvalidSpec("substring list must be an array of strings".into())),
    }
}

impl ScoringSpec {
    pub fn function(&self) -> ScoringFunction {
        match self {
            Self::Exact { .. } => ScoringFunction::Exact,
            Self::Fuzzy { .. } => ScoringFunction::Fuzzy,
            Self::MustInclude { .. } => ScoringFunction::MustInclude,
            Self::MustExclude { .. } => ScoringFunction::MustExclude,
            Self::Json { .. } => ScoringFunction::Json,
            Self::Numerical { .. } => ScoringFunction::Numerical,
        }
    }

    pub fn validate(&self) -> Result<(), GradeError> {
        match self {
            Self::Fuzzy { threshold, .. } if !(*threshold > 0.0 && *threshold <= 1.0) => Err(GradeError::InvalidSpec(
                format!("fuzzy threshold must be in (0, 1], got {threshold}"),
            )),
            Self::Json { epsilon, .. } | Self::Numerical { epsilon, .. } if !(epsilon.is_finite() && *epsilon >= 0.0) => {
                Err(GradeError::InvalidSpec(format!("epsilon must be >= 0, got {epsilon}")))
            }
            _ => Ok(()),
        }
    }

    /// Parses the wire form, keeping the typed error.
    pub fn from_json(value: &Value) -> Result<Self, GradeError> {
        let raw: RawSpec =
            serde_json::from_value(value.clone()).map_err(|e| GradeError::InvalidSpec(e.to_string()))?;
        Self::try_from(raw)
    }
}
