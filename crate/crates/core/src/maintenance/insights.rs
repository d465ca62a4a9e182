use std::fmt;
use std::path::Path;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use super::MachineRisk;
use crate::error::{Error, Result};
use crate::types::{MachineId, Metric};

pub const CATALOG_VERSION: u32 = 1;
pub const FALLBACK_TASK: &str = "Inspect Machine";
pub const HIGH_RISK: f64 = 0.7;
pub const MEDIUM_RISK: f64 = 0.4;

const DEFAULT_CATALOG_TOML: &str = include_str!("../../config/maintenance_catalog.toml");
const DATE_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Priority {
    High,
    Medium,
    Low,
}

impl Priority {
    /// Band for a risk; `None` below the medium band.
    pub fn for_risk(risk: f64) -> Option<Priority> {
        if risk >= HIGH_RISK {
            Some(Priority::High)
        } else if risk >= MEDIUM_RISK {
            Some(Priority::Medium)
        } else {
            None
        }
    }

    pub fn lead_days(self) -> i64 {
        match self {
            Priority::High => 1,
            Priority::Medium => 2,
            Priority::Low => 3,
        }
    }
}

impl fmt::Display for Priority {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Priority::High => "High",
            Priority::Medium => "Medium",
            Priority::Low => "Low",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasonRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub machine: Option<MachineId>,
    pub metric: Metric,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasonEntry {
    pub name: String,
    pub task: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Catalog {
    pub version: u32,
    #[serde(default, rename = "rule")]
    pub rules: Vec<ReasonRule>,
    #[serde(default, rename = "reason")]
    pub reasons: Vec<ReasonEntry>,
}

impl Catalog {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let catalog: Catalog = toml::from_str(text).map_err(Error::from_toml)?;
        if catalog.version != CATALOG_VERSION {
            return Err(Error::Version {
                found: catalog.version,
                expected: CATALOG_VERSION,
            });
        }
        Ok(catalog)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Reason for a machine whose risk is driven by `metric`. A rule naming
    /// the machine wins over a generic one.
    pub fn reason_for(&self, machine: MachineId, metric: Metric) -> Option<&str> {
        self.rules
            .iter()
            .find(|r| r.machine == Some(machine) && r.metric == metric)
            .or_else(|| self.rules.iter().find(|r| r.machine.is_none() && r.metric == metric))
            .map(|r| r.reason.as_str())
    }

    pub fn task_for(&self, reason: &str) -> Option<&str> {
        self.reasons.iter().find(|r| r.name == reason).map(|r| r.task.as_str())
    }
}

pub fn default_catalog() -> Catalog {
    Catalog::from_toml_str(DEFAULT_CATALOG_TOML).expect("bundled catalog is valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaintenanceInsight {
    pub task: String,
    pub priority: Priority,
    pub reason: String,
    pub machine: MachineId,
    pub scheduled_date: DateTime<Utc>,
    pub risk: f64,
}

/// One insight per machine at medium risk or above, plus low-priority rows
/// for the rest when `include_low` is set. Sorted by risk descending.
pub fn generate_insights(
    risks: &[MachineRisk],
    catalog: &Catalog,
    now: DateTime<Utc>,
    include_low: bool,
) -> Vec<MaintenanceInsight> {
    let mut out = Vec::new();
    for r in risks {
        let priority = match Priority::for_risk(r.risk) {
            Some(p) => p,
            None if include_low => Priority::Low,
            None => continue,
        };
        let (reason, task) = match catalog.reason_for(r.machine, r.top_metric) {
            Some(reason) => match catalog.task_for(reason) {
                Some(task) => (reason.to_string(), task.to_string()),
                None => {
                    tracing::warn!(reason, "reason has no catalog task, using fallback");
                    (reason.to_string(), FALLBACK_TASK.to_string())
                }
            },
            None => {
                tracing::warn!(machine = %r.machine, metric = %r.top_metric, "no catalog reason, using fallback");
                (format!("{} Deviation", r.top_metric), FALLBACK_TASK.to_string())
            }
        };
        out.push(MaintenanceInsight {
            task,
            priority,
            reason,
            machine: r.machine,
            scheduled_date: now + Duration::days(priority.lead_days()),
            risk: r.risk,
        });
    }
    out.sort_by(|a, b| b.risk.total_cmp(&a.risk).then(a.machine.cmp(&b.machine)));
    out
}

/// Plain-text table: Task, Priority, Reason, MachineID, Scheduled Date.
pub fn render_table(insights: &[MaintenanceInsight]) -> String {
    let header = ["Task", "Priority", "Reason", "MachineID", "Scheduled Date"].map(String::from);
    let rows: Vec<[String; 5]> = insights
        .iter()
        .map(|i| {
            [
                i.task.clone(),
                i.priority.to_string(),
                i.reason.clone(),
                i.machine.to_string(),
                i.scheduled_date.format(DATE_FORMAT).to_string(),
            ]
        })
        .collect();
    let mut widths = header.clone().map(|h| h.len());
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    for row in std::iter::once(&header).chain(&rows) {
        let line: Vec<String> = row.iter().zip(widths).map(|(cell, w)| format!("{cell:<w$}")).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}
