use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::TaskKind;

/// Outcome of evaluating one dataset. `score` is `None` when the task failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetResult {
    pub dataset: String,
    pub kind: TaskKind,
    pub metric: String,
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Category averages in the fixed column order of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    #[serde(rename = "Retrieval")]
    pub retrieval: Option<f64>,
    #[serde(rename = "STS")]
    pub sts: Option<f64>,
    #[serde(rename = "PairCLF")]
    pub pair_clf: Option<f64>,
    #[serde(rename = "CLF")]
    pub clf: Option<f64>,
    #[serde(rename = "Re-rank")]
    pub rerank: Option<f64>,
    #[serde(rename = "Cluster")]
    pub cluster: Option<f64>,
    #[serde(rename = "Average")]
    pub average: Option<f64>,
}

impl CategoryRow {
    pub const COLUMNS: [&'static str; 7] = [
        "Retrieval",
        "STS",
        "PairCLF",
        "CLF",
        "Re-rank",
        "Cluster",
        "Average",
    ];

    pub fn values(&self) -> [Option<f64>; 7] {
        [
            self.retrieval,
            self.sts,
            self.pair_clf,
            self.clf,
            self.rerank,
            self.cluster,
            self.average,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub per_dataset: Vec<DatasetResult>,
    pub category_averages: CategoryRow,
    pub overall_average: Option<f64>,
    pub failed: usize,
}

impl EvaluationReport {
    /// Aggregates per-dataset results. Failed datasets are listed but excluded
    /// from every average.
    pub fn from_results(per_dataset: Vec<DatasetResult>) -> Self {
        let mut by_kind: BTreeMap<TaskKind, Vec<f64>> = BTreeMap::new();
        let mut all = Vec::new();
        for r in &per_dataset {
            if let Some(s) = r.score {
                by_kind.entry(r.kind).or_default().push(s);
                all.push(s);
            }
        }
        let avg = |k: TaskKind| by_kind.get(&k).map(|v| mean(v));
        let overall_average = (!all.is_empty()).then(|| mean(&all));
        let failed = per_dataset.iter().filter(|r| r.score.is_none()).count();
        EvaluationReport {
            category_averages: CategoryRow {
                retrieval: avg(TaskKind::Retrieval),
                sts: avg(TaskKind::Sts),
                pair_clf: avg(TaskKind::PairClassification),
                clf: avg(TaskKind::Classification),
                rerank: avg(TaskKind::Reranking),
                cluster: avg(TaskKind::Clustering),
                average: overall_average,
            },
            overall_average,
            failed,
            per_dataset,
        }
    }

    pub fn category_average(&self, kind: TaskKind) -> Option<f64> {
        let row = &self.category_averages;
        match kind {
            TaskKind::Retrieval => row.retrieval,
            TaskKind::Sts => row.sts,
            TaskKind::PairClassification => row.pair_clf,
            TaskKind::Classification => row.clf,
            TaskKind::Reranking => row.rerank,
            TaskKind::Clustering => row.cluster,
        }
    }

    /// Plain-text leaderboard row: one header line, one value line (percentages).
    pub fn table(&self) -> String {
        let header = CategoryRow::COLUMNS
            .iter()
            .map(|c| format!("{c:>9}"))
            .collect::<Vec<_>>()
            .join(" ");
        let values = self
            .category_averages
            .values()
            .iter()
            .map(|v| match v {
                Some(x) => format!("{:>9.2}", x * 100.0),
                None => format!("{:>9}", "-"),
            })
            .collect::<Vec<_>>()
            .join(" ");
        format!("{header}\n{values}\n")
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn res(name: &str, kind: TaskKind, score: Option<f64>) -> DatasetResult {
        DatasetResult {
            dataset: name.into(),
            kind,
            metric: kind.main_metric().into(),
            score,
            error: score.is_none().then(|| "boom".to_string()),
        }
    }

    #[test]
    fn two_datasets_one_category() {
        let r = EvaluationReport::from_results(vec![
            res("a", TaskKind::Sts, Some(0.6)),
            res("b", TaskKind::Sts, Some(0.8)),
        ]);
        assert!((r.category_averages.sts.unwrap() - 0.7).abs() < 1e-12);
        assert!((r.overall_average.unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(r.category_averages.retrieval, None);
    }

    #[test]
    fn failures_are_excluded_from_averages() {
        let r = EvaluationReport::from_results(vec![
            res("a", TaskKind::Retrieval, Some(0.5)),
            res("b", TaskKind::Retrieval, None),
        ]);
        assert_eq!(r.failed, 1);
        assert_eq!(r.overall_average, Some(0.5));
    }

    #[test]
    fn json_columns_are_in_table_order() {
        let r = EvaluationReport::from_results(vec![res("a", TaskKind::Clustering, Some(1.0))]);
        let json = serde_json::to_string(&r.category_averages).unwrap();
        let mut last = 0;
        for col in CategoryRow::COLUMNS {
            let pos = json.find(&format!("\"{col}\"")).unwrap();
            assert!(pos >= last);
            last = pos;
        }
    }
}
