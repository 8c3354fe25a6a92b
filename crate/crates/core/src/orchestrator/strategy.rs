use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricDirection {
    Maximize,
    Minimize,
}

impl MetricDirection {
    /// Whether `candidate` strictly beats `incumbent`.
    pub fn improves(self, candidate: f64, incumbent: f64) -> bool {
        match self {
            Self::Maximize => candidate > incumbent,
            Self::Minimize => candidate < incumbent,
        }
    }
}

/// Metric-name fragments that mean lower is better.
const MINIMIZE_METRICS: &[&str] = &[
    "rmse", "rmsle", "mse", "mae", "mape", "smape", "medae", "mcrmse", "wmae", "logloss", "log_loss", "log loss",
    "cross-entropy", "crossentropy", "error", "loss", "deviance", "distance",
];

/// Metric names that imply a regression target.
const REGRESSION_METRICS: &[&str] = &["rmse", "rmsle", "mse", "mae", "mape", "smape", "medae", "mcrmse", "wmae", "r2", "r^2"];

/// Infers the direction from a metric name: error- and loss-like names
/// minimize, everything else maximizes.
pub fn infer_direction(metric: &str) -> MetricDirection {
    let m = metric.to_lowercase();
    if MINIMIZE_METRICS.iter().any(|k| m.contains(k)) {
        MetricDirection::Minimize
    } else {
        MetricDirection::Maximize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Classification,
    Regression,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompetitionMetadata {
    pub competition_id: String,
    pub task_type: String,
    pub metric: String,
    /// Explicit direction; inferred from `metric` when absent.
    pub direction: Option<MetricDirection>,
    pub data_format: String,
    pub target_column: Option<String>,
    pub time_column: Option<String>,
    pub constraints: Vec<String>,
}

impl CompetitionMetadata {
    pub fn direction(&self) -> MetricDirection {
        self.direction.unwrap_or_else(|| infer_direction(&self.metric))
    }

    /// Regression when the task says so (or forecasts), or when the metric
    /// is a regression metric; classification otherwise.
    pub fn problem_kind(&self) -> ProblemKind {
        let task = Words::new(&self.task_type);
        if task.any(&["regression", "forecast", "forecasting"]) {
            return ProblemKind::Regression;
        }
        if task.any(&["classification", "classify"]) {
            return ProblemKind::Classification;
        }
        let metric = Words::new(&self.metric);
        if metric.any(REGRESSION_METRICS) {
            ProblemKind::Regression
        } else {
            ProblemKind::Classification
        }
    }

    /// Heuristic metadata from a free-text competition description.
    pub fn from_description(competition_id: &str, description: &str) -> Self {
        let words = Words::new(description);
        let metric = [
            "rmsle", "rmse", "mae", "mse", "auc", "logloss", "log_loss", "accuracy", "f1", "map@5", "qwk", "r2",
        ]
        .into_iter()
        .find(|m| words.any(&[m]))
        .unwrap_or("")
        .to_string();
        Self {
            competition_id: competition_id.to_string(),
            task_type: description.lines().find(|l| !l.trim().is_empty()).unwrap_or("").trim().to_string(),
            metric,
            data_format: if words.any(&["csv"]) { "csv".into() } else { String::new() },
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    Tabular,
    Nlp,
    Vision,
    Timeseries,
    General,
    AutogluonFallback,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 6] = [
        Self::Tabular,
        Self::Nlp,
        Self::Vision,
        Self::Timeseries,
        Self::General,
        Self::AutogluonFallback,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Tabular => "tabular",
            Self::Nlp => "nlp",
            Self::Vision => "vision",
            Self::Timeseries => "timeseries",
            Self::General => "general",
            Self::AutogluonFallback => "autogluon-fallback",
        }
    }

    /// The prompt template shipped for this strategy.
    pub fn template(self) -> &'static str {
        match self {
            Self::Tabular => include_str!("../../templates/tabular.md"),
            Self::Nlp => include_str!("../../templates/nlp.md"),
            Self::Vision => include_str!("../../templates/vision.md"),
            Self::Timeseries => include_str!("../../templates/timeseries.md"),
            Self::General => include_str!("../../templates/general.md"),
            Self::AutogluonFallback => include_str!("../../templates/autogluon.md"),
        }
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Lowercased word sequence with phrase lookup on word boundaries.
struct Words(String);

impl Words {
    fn new(text: &str) -> Self {
        let words: Vec<String> = text
            .to_lowercase()
            .split(|c: char| !(c.is_alphanumeric() || matches!(c, '@' | '^' | '_')))
            .filter(|w| !w.is_empty())
            .map(str::to_string)
            .collect();
        Self(format!(" {} ", words.join(" ")))
    }

    fn any(&self, phrases: &[&str]) -> bool {
        phrases.iter().any(|p| self.0.contains(&format!(" {p} ")))
    }
}

const VISION: &[&str] = &[
    "image", "images", "vision", "photo", "photos", "picture", "pictures", "segmentation", "object detection", "png",
    "jpg", "jpeg", "dicom", "tif", "tiff", "x ray", "mri", "ct scan",
];
const TIMESERIES: &[&str] = &["forecast", "forecasting", "time series", "timeseries", "temporal", "sales prediction"];
const NLP: &[&str] = &[
    "text", "texts", "nlp", "language", "sentiment", "ner", "named entity", "token classification", "translation",
    "question answering", "tweets", "tweet", "essays", "essay", "sentence", "sentences", "toxic", "toxicity",
];
const TABULAR_TASK: &[&str] = &["classification", "regression", "tabular", "binary", "multiclass"];
const TABULAR_FORMAT: &[&str] = &["csv", "tabular", "parquet", "table", "tables"];

/// Rule table, first match wins:
///
/// | order | rule                                                       | kind               |
/// |-------|------------------------------------------------------------|--------------------|
/// | 1     | task or format mentions images / vision                    | vision             |
/// | 2     | task mentions forecasting / time series                    | timeseries         |
/// | 3     | task or format mentions text / language                    | nlp                |
/// | 4     | task says classification / regression / tabular           | tabular            |
/// | 5     | format is tabular but the task is unrecognised             | autogluon-fallback |
/// | 6     | anything else                                              | general            |
pub fn classify_strategy(meta: &CompetitionMetadata) -> StrategyKind {
    let task = Words::new(&meta.task_type);
    let format = Words::new(&meta.data_format);
    if task.any(VISION) || format.any(VISION) {
        StrategyKind::Vision
    } else if task.any(TIMESERIES) {
        StrategyKind::Timeseries
    } else if task.any(NLP) || format.any(NLP) {
        StrategyKind::Nlp
    } else if task.any(TABULAR_TASK) {
        StrategyKind::Tabular
    } else if format.any(TABULAR_FORMAT) {
        StrategyKind::AutogluonFallback
    } else {
        StrategyKind::General
    }
}
