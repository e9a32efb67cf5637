use serde::{Deserialize, Serialize};

use super::ForestModel;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::matrix::DesignMatrix;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceEntry {
    pub feature: String,
    /// Mean increase in out-of-bag misclassification rate when the feature
    /// is permuted, over trees with out-of-bag rows.
    pub importance: f64,
    /// Standard error of that mean across trees.
    pub std_error: f64,
    /// 1 is most important.
    pub rank: usize,
}

/// Entries in feature order; `rank` gives the descending ordering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRanking {
    pub entries: Vec<ImportanceEntry>,
    pub trees_used: usize,
    pub rows_skipped: usize,
}

impl ImportanceRanking {
    /// Entries sorted by rank.
    pub fn ranked(&self) -> Vec<&ImportanceEntry> {
        let mut v: Vec<&ImportanceEntry> = self.entries.iter().collect();
        v.sort_by_key(|e| e.rank);
        v
    }

    pub fn get(&self, feature: &str) -> Option<&ImportanceEntry> {
        self.entries.iter().find(|e| e.feature == feature)
    }
}

fn error_rate(model_tree: &crate::tree::DecisionTree, rows: &[Vec<f64>], y: &[f64]) -> f64 {
    let wrong = rows
        .iter()
        .zip(y)
        .filter(|(r, &t)| (model_tree.predict(r) >= 0.5) != (t == 1.0))
        .count();
    wrong as f64 / rows.len() as f64
}

/// Permutation importance computed tree by tree on each tree's out-of-bag
/// rows: the error after shuffling one feature's OOB values, minus the
/// tree's baseline OOB error. One permutation per (tree, feature), drawn
/// from the stream `(seed, tree, feature)`.
pub fn oob_importance(
    model: &ForestModel,
    x: &DesignMatrix,
    y: &[f64],
    feature_names: &[String],
    seed: u64,
    exec: Exec,
) -> Result<ImportanceRanking> {
    let n = model.n_train;
    if x.n_rows() != n || y.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: x.n_rows(),
        });
    }
    let d = x.n_cols();
    if feature_names.len() != d {
        return Err(Error::LengthMismatch {
            expected: d,
            actual: feature_names.len(),
        });
    }

    let per_tree: Vec<Option<(Vec<f64>, Vec<usize>)>> = exec.map(model.trees.len(), |t| {
        let oob = model.out_of_bag(t);
        if oob.is_empty() {
            return None;
        }
        let tree = &model.trees[t];
        let rows: Vec<Vec<f64>> = oob.iter().map(|&i| x.row(i).to_vec()).collect();
        let labels: Vec<f64> = oob.iter().map(|&i| y[i]).collect();
        let baseline = error_rate(tree, &rows, &labels);
        let deltas = (0..d)
            .map(|j| {
                let perm = rng::permutation(oob.len(), &mut rng::stream(seed, &[t as u64, j as u64]));
                let permuted: Vec<Vec<f64>> = rows
                    .iter()
                    .enumerate()
                    .map(|(k, r)| {
                        let mut r = r.clone();
                        r[j] = rows[perm[k]][j];
                        r
                    })
                    .collect();
                error_rate(tree, &permuted, &labels) - baseline
            })
            .collect();
        Some((deltas, oob))
    });

    let mut covered = vec![false; n];
    let deltas: Vec<Vec<f64>> = per_tree
        .into_iter()
        .flatten()
        .map(|(delta, oob)| {
            for i in oob {
                covered[i] = true;
            }
            delta
        })
        .collect();
    if deltas.is_empty() {
        return Err(Error::InsufficientData(
            "no tree has out-of-bag rows; increase n_tree or enable bootstrap".into(),
        ));
    }
    let rows_skipped = covered.iter().filter(|c| !**c).count();
    if rows_skipped > 0 {
        log::warn!("{rows_skipped} training rows are never out-of-bag and were skipped");
    }

    let m = deltas.len() as f64;
    let mut entries: Vec<ImportanceEntry> = (0..d)
        .map(|j| {
            let mean = deltas.iter().map(|v| v[j]).sum::<f64>() / m;
            let var = if deltas.len() > 1 {
                deltas.iter().map(|v| (v[j] - mean).powi(2)).sum::<f64>() / (m - 1.0)
            } else {
                0.0
            };
            ImportanceEntry {
                feature: feature_names[j].clone(),
                importance: mean,
                std_error: (var / m).sqrt(),
                rank: 0,
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        entries[b]
            .importance
            .total_cmp(&entries[a].importance)
            .then(a.cmp(&b))
    });
    for (r, &j) in order.iter().enumerate() {
        entries[j].rank = r + 1;
    }
    Ok(ImportanceRanking {
        entries,
        trees_used: deltas.len(),
        rows_skipped,
    })
}

/// CSV in rank order: `feature,importance,std_error,rank`.
pub fn importance_csv(ranking: &ImportanceRanking) -> String {
    let mut out = String::from("feature,importance,std_error,rank\n");
    for e in ranking.ranked() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            e.feature, e.importance, e.std_error, e.rank
        ));
    }
    out
}
