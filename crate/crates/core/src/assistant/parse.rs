//! Keyword grammar for operator questions.

use serde::{Deserialize, Serialize};
use strsim::normalized_levenshtein;

use crate::types::{MachineId, MachineRegistry, Metric};

/// Largest normalized edit distance accepted for a machine name.
pub const MAX_NAME_DISTANCE: f64 = 0.3;
/// Stricter bound for single-word aliases ("ageing" for Aging Chamber).
const MAX_ALIAS_DISTANCE: f64 = 0.2;
pub const DEFAULT_ANOMALY_WINDOW_S: u64 = 3600;
pub const DEFAULT_FORECAST_HORIZON: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntentKind {
    FailureRiskRanking,
    PowerQuery,
    AnomalyWindowQuery,
    MetricQuery,
    EnergyForecastQuery,
    MaintenanceScheduleQuery,
    Unknown,
}

/// Why an utterance ended up as [`IntentKind::Unknown`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rejection {
    Empty,
    NoMatch,
    MultiPart,
    MissingMachine,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slots {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub machine: Option<MachineId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<Metric>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_seconds: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Intent {
    pub kind: IntentKind,
    pub slots: Slots,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejection: Option<Rejection>,
}

impl Intent {
    fn unknown(rejection: Rejection) -> Self {
        Self {
            kind: IntentKind::Unknown,
            slots: Slots::default(),
            rejection: Some(rejection),
        }
    }
}

const RISK_WORDS: &[&str] = &[
    "fail",
    "failure",
    "failures",
    "failing",
    "break",
    "breakdown",
    "breakdowns",
    "risk",
    "risky",
];
const SCHEDULE_WORDS: &[&str] = &[
    "maintenance",
    "schedule",
    "scheduled",
    "insight",
    "insights",
    "task",
    "tasks",
    "repair",
    "repairs",
];
const ANOMALY_WORDS: &[&str] = &[
    "anomaly",
    "anomalies",
    "anomalous",
    "strange",
    "unusual",
    "abnormal",
    "odd",
    "weird",
    "alert",
    "alerts",
    "spike",
    "spikes",
];
const FORECAST_WORDS: &[&str] = &[
    "forecast",
    "forecasts",
    "predict",
    "predicted",
    "prediction",
    "projection",
    "future",
    "upcoming",
];

/// Multi-word phrases first so "power load" wins over "load".
const METRIC_PHRASES: &[(&str, Metric)] = &[
    ("power load", Metric::PowerLoad),
    ("machine load", Metric::MachineLoad),
    ("agv load", Metric::AgvLoad),
    ("grid usage", Metric::GridUsage),
    ("battery capacity", Metric::BatteryCapacity),
    ("mixing speed", Metric::MixingSpeed),
    ("coating thickness", Metric::CoatingThickness),
    ("vibration level", Metric::VibrationLevel),
    ("temperature", Metric::Temperature),
    ("temp", Metric::Temperature),
    ("pressure", Metric::Pressure),
    ("vibration", Metric::VibrationLevel),
    ("vibrations", Metric::VibrationLevel),
    ("thickness", Metric::CoatingThickness),
    ("power", Metric::PowerLoad),
    ("consumption", Metric::PowerLoad),
    ("energy", Metric::PowerLoad),
    ("grid", Metric::GridUsage),
    ("battery", Metric::BatteryCapacity),
    ("mixing", Metric::MixingSpeed),
    ("utilization", Metric::MachineLoad),
    ("load", Metric::MachineLoad),
];

fn aliases(machine: MachineId) -> &'static [&'static str] {
    match machine {
        MachineId::CoatingMachine => &["coater"],
        MachineId::ElectrolyteFillingMachine => &["electrolyte", "filling"],
        MachineId::FormationEquipment => &["formation"],
        MachineId::AgingChamber => &["aging"],
        MachineId::SealingMachine => &["sealing", "sealer"],
        MachineId::Agv => &["agv", "agvs", "vehicle"],
    }
}

fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

fn has_word(words: &[String], list: &[&str]) -> bool {
    words.iter().any(|w| list.contains(&w.as_str()))
}

fn has_phrase(words: &[String], phrase: &str) -> bool {
    let parts: Vec<&str> = phrase.split(' ').collect();
    words
        .windows(parts.len())
        .any(|w| w.iter().zip(&parts).all(|(a, b)| a == b))
}

pub fn find_metric(words: &[String]) -> Option<Metric> {
    METRIC_PHRASES
        .iter()
        .find(|(phrase, _)| has_phrase(words, phrase))
        .map(|(_, m)| *m)
}

/// Best fuzzy match of a registered machine inside `words`.
///
/// Full names are compared against word n-grams of the same length; a
/// single-word alias must also share its first letter. Full-name hits beat
/// alias hits, then smaller distance, then earlier position.
pub fn find_machine(words: &[String], registry: &MachineRegistry) -> Option<MachineId> {
    let mut best: Option<(u8, f64, usize, MachineId)> = None;
    let mut consider = |candidate: (u8, f64, usize, MachineId)| {
        let better = best.is_none_or(|b| (candidate.0, candidate.1, candidate.2) < (b.0, b.1, b.2));
        if better {
            best = Some(candidate);
        }
    };
    for &machine in registry.machines() {
        let name = machine.name().to_lowercase();
        let n = name.split(' ').count();
        for (pos, gram) in words.windows(n).enumerate() {
            let distance = 1.0 - normalized_levenshtein(&gram.join(" "), &name);
            if distance <= MAX_NAME_DISTANCE {
                consider((0, distance, pos, machine));
            }
        }
        for alias in aliases(machine) {
            for (pos, word) in words.iter().enumerate() {
                let distance = 1.0 - normalized_levenshtein(word, alias);
                if distance <= MAX_ALIAS_DISTANCE && word.chars().next() == alias.chars().next() {
                    consider((1, distance, pos, machine));
                }
            }
        }
    }
    best.map(|b| b.3)
}

fn unit_seconds(word: &str) -> Option<u64> {
    match word {
        "second" | "seconds" | "sec" | "secs" => Some(1),
        "minute" | "minutes" | "min" | "mins" => Some(60),
        "hour" | "hours" | "hr" | "hrs" => Some(3600),
        "day" | "days" => Some(86_400),
        "week" | "weeks" => Some(604_800),
        _ => None,
    }
}

fn number(word: &str) -> Option<u64> {
    match word {
        "a" | "an" | "one" => Some(1),
        "two" => Some(2),
        "three" => Some(3),
        "six" => Some(6),
        "twelve" => Some(12),
        "24" => Some(24),
        _ => word.parse().ok(),
    }
}

/// "last hour", "past 30 minutes", "last 2 days", "today".
pub fn find_window_seconds(words: &[String]) -> Option<u64> {
    if has_word(words, &["today"]) {
        return Some(86_400);
    }
    for (i, w) in words.iter().enumerate() {
        if !matches!(w.as_str(), "last" | "past" | "previous") {
            continue;
        }
        let next = words.get(i + 1).map(String::as_str);
        let after = words.get(i + 2).map(String::as_str);
        if let Some(unit) = next.and_then(unit_seconds) {
            return Some(unit);
        }
        if let (Some(n), Some(unit)) = (next.and_then(number), after.and_then(unit_seconds)) {
            return Some(n * unit);
        }
    }
    None
}

/// "next 12 hours", "next 6 steps".
fn find_horizon(words: &[String]) -> Option<usize> {
    for (i, w) in words.iter().enumerate() {
        if matches!(w.as_str(), "next" | "coming") {
            let n = words.get(i + 1).and_then(|w| number(w));
            let unit = words.get(i + 2).map(String::as_str);
            if let (Some(n), Some("hours" | "hour" | "steps" | "step" | "ticks")) = (n, unit) {
                return Some(n as usize);
            }
        }
    }
    None
}

/// Kind a clause asks for, without slot checks. Priority resolves clauses
/// that mention several topics ("predicted failures" is a risk question).
fn clause_kind(words: &[String]) -> Option<IntentKind> {
    let metric = find_metric(words);
    if has_word(words, RISK_WORDS) {
        Some(IntentKind::FailureRiskRanking)
    } else if has_word(words, SCHEDULE_WORDS) {
        Some(IntentKind::MaintenanceScheduleQuery)
    } else if has_word(words, ANOMALY_WORDS) {
        Some(IntentKind::AnomalyWindowQuery)
    } else if has_word(words, FORECAST_WORDS) || (find_horizon(words).is_some() && metric == Some(Metric::PowerLoad)) {
        Some(IntentKind::EnergyForecastQuery)
    } else if metric == Some(Metric::PowerLoad) {
        Some(IntentKind::PowerQuery)
    } else if metric.is_some() {
        Some(IntentKind::MetricQuery)
    } else {
        None
    }
}

fn clauses(text: &str) -> Vec<Vec<String>> {
    let lowered = text.to_lowercase();
    let mut out = Vec::new();
    for sentence in lowered.split(['?', ';', '!']) {
        let mut current = Vec::new();
        for word in tokenize(sentence) {
            if matches!(word.as_str(), "and" | "also" | "plus" | "then") {
                out.push(std::mem::take(&mut current));
            } else {
                current.push(word);
            }
        }
        out.push(current);
    }
    out.retain(|c| !c.is_empty());
    out
}

pub fn parse_intent(utterance: &str) -> Intent {
    parse_intent_with(utterance, &MachineRegistry::default())
}

/// Never fails: anything unrecognised becomes [`IntentKind::Unknown`] with
/// the reason attached.
pub fn parse_intent_with(utterance: &str, registry: &MachineRegistry) -> Intent {
    let words = tokenize(utterance);
    if words.is_empty() {
        return Intent::unknown(Rejection::Empty);
    }
    let kinds: Vec<IntentKind> = clauses(utterance).iter().filter_map(|c| clause_kind(c)).collect();
    let Some(&kind) = kinds.first() else {
        return Intent::unknown(Rejection::NoMatch);
    };
    if kinds.len() > 1 {
        return Intent::unknown(Rejection::MultiPart);
    }

    let machine = find_machine(&words, registry);
    let mut slots = Slots::default();
    match kind {
        IntentKind::FailureRiskRanking | IntentKind::MaintenanceScheduleQuery => {
            slots.machine = machine;
        }
        IntentKind::AnomalyWindowQuery => {
            slots.machine = machine;
            slots.window_seconds = Some(find_window_seconds(&words).unwrap_or(DEFAULT_ANOMALY_WINDOW_S));
        }
        IntentKind::EnergyForecastQuery => {
            slots.machine = machine;
            slots.horizon = Some(find_horizon(&words).unwrap_or(DEFAULT_FORECAST_HORIZON));
        }
        IntentKind::PowerQuery | IntentKind::MetricQuery => {
            let Some(machine) = machine else {
                return Intent::unknown(Rejection::MissingMachine);
            };
            slots.machine = Some(machine);
            slots.metric = find_metric(&words);
        }
        IntentKind::Unknown => unreachable!("clause_kind never yields Unknown"),
    }
    Intent {
        kind,
        slots,
        rejection: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn machine_fuzzy_match() {
        assert_eq!(
            find_machine(&words("the ageing chamber"), &MachineRegistry::default()),
            Some(MachineId::AgingChamber)
        );
        assert_eq!(
            find_machine(&words("sealing machine"), &MachineRegistry::default()),
            Some(MachineId::SealingMachine)
        );
        assert_eq!(
            find_machine(&words("more information please"), &MachineRegistry::default()),
            None
        );
        assert_eq!(
            find_machine(&words("the agv"), &MachineRegistry::default()),
            Some(MachineId::Agv)
        );
    }

    #[test]
    fn full_name_beats_alias() {
        // "coating" in the metric phrase must not outrank the full name.
        let w = words("coating thickness of the sealing machine");
        assert_eq!(
            find_machine(&w, &MachineRegistry::default()),
            Some(MachineId::SealingMachine)
        );
    }

    #[test]
    fn registry_limits_matches() {
        let registry = MachineRegistry::new([MachineId::Agv]);
        assert_eq!(find_machine(&words("sealing machine"), &registry), None);
    }

    #[test]
    fn windows() {
        assert_eq!(find_window_seconds(&words("in the last hour")), Some(3600));
        assert_eq!(find_window_seconds(&words("past 30 minutes")), Some(1800));
        assert_eq!(find_window_seconds(&words("last 2 days")), Some(172_800));
        assert_eq!(find_window_seconds(&words("recently")), None);
    }

    #[test]
    fn horizon_phrase() {
        let i = parse_intent("Forecast energy for the next 12 hours");
        assert_eq!(i.kind, IntentKind::EnergyForecastQuery);
        assert_eq!(i.slots.horizon, Some(12));
    }

    #[test]
    fn multi_part_rejected() {
        let i = parse_intent("Which machines will fail and what is the temperature of the aging chamber?");
        assert_eq!(i.rejection, Some(Rejection::MultiPart));
    }

    #[test]
    fn missing_machine() {
        let i = parse_intent("What is the current power load?");
        assert_eq!(
            (i.kind, i.rejection),
            (IntentKind::Unknown, Some(Rejection::MissingMachine))
        );
    }

    #[test]
    fn gibberish_and_empty() {
        assert_eq!(parse_intent("hello there").rejection, Some(Rejection::NoMatch));
        assert_eq!(parse_intent("  ?! ").rejection, Some(Rejection::Empty));
    }

    #[test]
    fn schedule_query() {
        let i = parse_intent("What maintenance is scheduled?");
        assert_eq!(i.kind, IntentKind::MaintenanceScheduleQuery);
    }
}
