//! Task descriptions, TSV task tables, and evaluation reports.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::model::TaskMeta;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Classification(usize),
    Regression,
}

impl TaskKind {
    pub fn n_outputs(self) -> usize {
        match self {
            TaskKind::Classification(k) => k,
            TaskKind::Regression => 1,
        }
    }
}

macro_rules! name_enum {
    ($ty:ident { $($var:ident => $name:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq)]
        pub enum $ty { $($var),+ }

        impl $ty {
            pub fn name(self) -> &'static str {
                match self { $($ty::$var => $name),+ }
            }
        }

        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.to_ascii_lowercase().as_str() {
                    $($name => Ok($ty::$var),)+
                    _ => Err(Error::Parse(format!(concat!("unknown ", stringify!($ty), " `{}`"), s))),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
    };
}

name_enum!(Metric { Acc => "acc", F1 => "f1", Mcc => "mcc", Spearman => "spearman" });
name_enum!(RenderMode { Rgb => "rgb", Grayscale => "grayscale", Binary => "binary" });
name_enum!(InputModality { Pixel => "pixel", Text => "text", Dual => "dual" });

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub name: String,
    pub kind: TaskKind,
    pub pair_input: bool,
    pub metric: Metric,
    pub render_mode: RenderMode,
    pub modality: InputModality,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match (self.metric, self.kind) {
            (Metric::Spearman, TaskKind::Regression) => true,
            (Metric::Spearman, _) | (_, TaskKind::Regression) => false,
            (Metric::Acc, TaskKind::Classification(k)) => k >= 2,
            (Metric::F1 | Metric::Mcc, TaskKind::Classification(k)) => k == 2,
        };
        if !ok {
            return Err(Error::InvalidConfig(format!("metric {} does not fit task kind {:?}", self.metric, self.kind)));
        }
        Ok(())
    }

    pub fn to_meta(&self, labels: &[String], patch_budget: usize) -> TaskMeta {
        TaskMeta {
            name: self.name.clone(),
            n_outputs: self.kind.n_outputs(),
            labels: labels.to_vec(),
            modality: self.modality.name().into(),
            render_mode: self.render_mode.name().into(),
            metric: self.metric.name().into(),
            pair_input: self.pair_input,
            patch_budget,
        }
    }

    pub fn from_meta(meta: &TaskMeta) -> Result<Self> {
        let metric: Metric = meta.metric.parse()?;
        let kind = if metric == Metric::Spearman {
            TaskKind::Regression
        } else {
            TaskKind::Classification(meta.n_outputs)
        };
        Ok(Self {
            name: meta.name.clone(),
            kind,
            pair_input: meta.pair_input,
            metric,
            render_mode: meta.render_mode.parse()?,
            modality: meta.modality.parse()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskRow {
    pub text_a: String,
    pub text_b: Option<String>,
    pub label: String,
}

/// Parsed task split: header row naming `text_a`, optional `text_b`, and
/// `label` columns in any order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TaskTable {
    pub rows: Vec<TaskRow>,
    pub has_pair: bool,
}

impl TaskTable {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines.next().ok_or_else(|| Error::Parse("task table has no header".into()))?.split('\t').collect();
        let col = |name: &str| header.iter().position(|h| h.trim() == name);
        let a = col("text_a").ok_or_else(|| Error::Parse("missing text_a column".into()))?;
        let l = col("label").ok_or_else(|| Error::Parse("missing label column".into()))?;
        let b = col("text_b");
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let f: Vec<&str> = line.split('\t').collect();
            let get = |c: usize| {
                f.get(c).map(|s| s.to_string()).ok_or_else(|| Error::Parse(format!("row {} has {} fields", i + 2, f.len())))
            };
            rows.push(TaskRow { text_a: get(a)?, text_b: b.map(get).transpose()?, label: get(l)?.trim().to_string() });
        }
        Ok(Self { rows, has_pair: b.is_some() })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Sorted distinct label names.
    pub fn label_names(&self) -> Vec<String> {
        self.rows.iter().map(|r| r.label.clone()).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn class_labels(&self, names: &[String]) -> Result<Vec<usize>> {
        self.rows
            .iter()
            .map(|r| names.iter().position(|n| *n == r.label).ok_or_else(|| Error::Parse(format!("unknown label `{}`", r.label))))
            .collect()
    }

    pub fn real_labels(&self) -> Result<Vec<f64>> {
        self.rows
            .iter()
            .map(|r| r.label.parse::<f64>().map_err(|_| Error::Parse(format!("label `{}` is not a number", r.label))))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub task: String,
    pub metric: Metric,
    pub value: f64,
    pub degenerate: bool,
    pub n_samples: usize,
    /// `[label][pred]` counts for classification tasks.
    pub confusion: Option<Vec<Vec<usize>>>,
    pub step: usize,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "task = {}", self.task)?;
        writeln!(f, "samples = {}", self.n_samples)?;
        writeln!(f, "step = {}", self.step)?;
        writeln!(f, "{} = {:.6}", self.metric, self.value)?;
        if self.degenerate {
            writeln!(f, "degenerate = true")?;
        }
        if let Some(m) = &self.confusion {
            for (l, row) in m.iter().enumerate() {
                let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
                writeln!(f, "confusion[{l}] = {}", cells.join(" "))?;
            }
        }
        write!(f, "METRIC {} {:.6}", self.metric, self.value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_table() {
        let t = TaskTable::parse("label\ttext_a\nyes\tgood day\nno\tbad day\n").unwrap();
        assert_eq!(t.rows.len(), 2);
        assert!(!t.has_pair);
        assert_eq!(t.label_names(), vec!["no".to_string(), "yes".to_string()]);
        assert_eq!(t.class_labels(&t.label_names()).unwrap(), vec![1, 0]);
        assert!(TaskTable::parse("text\tlabel\n").is_err());
    }

    #[test]
    fn metric_kind_compatibility() {
        let mut spec = TaskSpec {
            name: "t".into(),
            kind: TaskKind::Regression,
            pair_input: false,
            metric: Metric::Spearman,
            render_mode: RenderMode::Rgb,
            modality: InputModality::Pixel,
        };
        assert!(spec.validate().is_ok());
        spec.metric = Metric::Acc;
        assert!(spec.validate().is_err());
        spec.kind = TaskKind::Classification(3);
        assert!(spec.validate().is_ok());
        spec.metric = Metric::Mcc;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn report_has_machine_line() {
        let r = EvalReport {
            task: "t".into(),
            metric: Metric::Acc,
            value: 0.5,
            degenerate: false,
            n_samples: 2,
            confusion: Some(vec![vec![1, 0], vec![1, 0]]),
            step: 0,
        };
        assert!(r.to_string().ends_with("METRIC acc 0.500000"));
    }
}
